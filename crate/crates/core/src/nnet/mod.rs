//! Minimal deterministic network engine with hand-written backpropagation.
//!
//! All arithmetic is `f64`. Parameters live in a single global index space:
//! layers in order, each contributing its weight tensor (row-major) followed
//! by its bias. Conv weights are stored `(n_out, n_inp, k, k)` so that the
//! weights feeding one output channel form a contiguous slab.

mod kernels;
pub mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use kernels::ConvGeom;

pub use optim::SgdMomentum;

/// Architecture of one layer, without its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        n_inp: usize,
        n_out: usize,
    },
    Conv2d {
        n_inp: usize,
        n_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool2d {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, Self::Dense { .. } | Self::Conv2d { .. })
    }

    /// `(weight shape, bias length)` for parametrized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            Self::Dense { n_inp, n_out } => Some((vec![n_out, n_inp], n_out)),
            Self::Conv2d { n_inp, n_out, kernel, .. } => {
                Some((vec![n_out, n_inp, kernel, kernel], n_out))
            }
            _ => None,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Self::Dense { n_inp, n_out } => {
                if input != [n_inp] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{n_inp}], got {input:?}"
                    )));
                }
                Ok(vec![n_out])
            }
            Self::Conv2d { n_inp, n_out, kernel, stride, padding } => {
                let [c, h, w] = *input else {
                    return Err(Error::Shape(format!("conv2d expects [C,H,W], got {input:?}")));
                };
                if c != n_inp || kernel == 0 || stride == 0 {
                    return Err(Error::Shape(format!(
                        "conv2d expects {n_inp} channels with positive kernel/stride, got {input:?}"
                    )));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Shape(format!("kernel {kernel} larger than padded {input:?}")));
                }
                Ok(vec![
                    n_out,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            Self::Relu => Ok(input.to_vec()),
            Self::Maxpool2d { size } => {
                let [c, h, w] = *input else {
                    return Err(Error::Shape(format!("maxpool2d expects [C,H,W], got {input:?}")));
                };
                if size == 0 || h < size || w < size {
                    return Err(Error::Shape(format!("pool size {size} does not fit {input:?}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamRole {
    Weight,
    Bias,
}

/// A contiguous range of the global parameter index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub layer: usize,
    pub role: ParamRole,
    pub start: usize,
    pub len: usize,
}

impl ParamSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Loss value and `dL/dw_j` for every global index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grads: Vec<f64>,
    /// Samples whose top-scoring class (lowest index on ties) is the label.
    pub correct: usize,
}

enum Cache {
    Input(Vec<f64>),
    Argmax(Vec<usize>),
    None,
}

/// Sequential network ending in a softmax-cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    slots: Vec<ParamSlot>,
    param_count: usize,
}

impl Network {
    /// Builds a network with Kaiming-uniform weights (bound `sqrt(6 / fan_in)`)
    /// and biases uniform in `±1 / sqrt(fan_in)`.
    pub fn init(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = seed::rng_for(seed, "init");
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (weight, bias) = match spec.param_shapes() {
                    Some((wshape, blen)) => {
                        let fan_in: usize = wshape[1..].iter().product();
                        let wb = (6.0 / fan_in as f64).sqrt();
                        let bb = 1.0 / (fan_in as f64).sqrt();
                        let wlen = wshape.iter().product();
                        let w = (0..wlen).map(|_| rng.random_range(-wb..wb)).collect();
                        let b = (0..blen).map(|_| rng.random_range(-bb..bb)).collect();
                        (
                            Some(Tensor::from_parts_unchecked(wshape, w)),
                            Some(Tensor::from_parts_unchecked(vec![blen], b)),
                        )
                    }
                    None => (None, None),
                };
                Layer { spec, weight, bias }
            })
            .collect();
        Self::from_layers(input_shape, layers)
    }

    /// Builds a network from an architecture and a flat parameter vector.
    pub fn with_params(input_shape: Vec<usize>, specs: Vec<LayerSpec>, flat: &[f64]) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (weight, bias) = match spec.param_shapes() {
                    Some((wshape, blen)) => (
                        Some(Tensor::zeros(wshape)?),
                        Some(Tensor::zeros(vec![blen])?),
                    ),
                    None => (None, None),
                };
                Ok(Layer { spec, weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::from_layers(input_shape, layers)?;
        net.set_params(flat)?;
        Ok(net)
    }

    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut slots = Vec::new();
        let mut current = input_shape.clone();
        let mut offset = 0;
        for (idx, layer) in layers.iter().enumerate() {
            current = layer.spec.output_shape(&current)?;
            shapes.push(current.clone());
            match (layer.spec.param_shapes(), &layer.weight, &layer.bias) {
                (Some((wshape, blen)), Some(w), Some(b)) => {
                    if w.shape() != wshape.as_slice() || b.shape() != [blen] {
                        return Err(Error::Shape(format!(
                            "layer {idx}: parameters {:?}/{:?} do not match {wshape:?}/[{blen}]",
                            w.shape(),
                            b.shape()
                        )));
                    }
                    slots.push(ParamSlot { layer: idx, role: ParamRole::Weight, start: offset, len: w.len() });
                    offset += w.len();
                    slots.push(ParamSlot { layer: idx, role: ParamRole::Bias, start: offset, len: blen });
                    offset += blen;
                }
                (None, None, None) => {}
                _ => return Err(Error::Shape(format!("layer {idx}: parameters inconsistent with kind"))),
            }
        }
        if current.len() != 1 {
            return Err(Error::Shape(format!("network must end in class scores, got {current:?}")));
        }
        Ok(Self { input_shape, layers, shapes, slots, param_count: offset })
    }

    /// `conv(3→c1,3×3)-relu-pool-conv(c1→c2,3×3)-relu-pool-flatten-dense` on
    /// `channels × side × side` inputs, same-padded convolutions and 2×2 pools.
    pub fn convnet_s(channels: usize, side: usize, c1: usize, c2: usize, classes: usize, seed: u64) -> Result<Self> {
        let flat = c2 * (side / 4) * (side / 4);
        Self::init(
            vec![channels, side, side],
            vec![
                LayerSpec::Conv2d { n_inp: channels, n_out: c1, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Maxpool2d { size: 2 },
                LayerSpec::Conv2d { n_inp: c1, n_out: c2, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Maxpool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { n_inp: flat, n_out: classes },
            ],
            seed,
        )
    }

    /// Dense/ReLU stack: `inputs → hidden... → classes`.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut specs = Vec::new();
        let mut prev = inputs;
        for &h in hidden {
            specs.push(LayerSpec::Dense { n_inp: prev, n_out: h });
            specs.push(LayerSpec::Relu);
            prev = h;
        }
        specs.push(LayerSpec::Dense { n_inp: prev, n_out: classes });
        Self::init(vec![inputs], specs, seed)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.input_shape == other.input_shape
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.spec == b.spec)
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map_or(0, |s| s[0])
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, layer: usize, role: ParamRole) -> Option<ParamSlot> {
        self.slots.iter().copied().find(|s| s.layer == layer && s.role == role)
    }

    /// Index of the last parametrized layer (the classifier head).
    pub fn head_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.spec.has_params())
    }

    pub fn get_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count);
        for layer in &self.layers {
            if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
                flat.extend_from_slice(w.data());
                flat.extend_from_slice(b.data());
            }
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count {
            return Err(Error::Length { expected: self.param_count, got: flat.len() });
        }
        if let Some(pos) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {pos}")));
        }
        self.write_params(|dst| dst.copy_from_slice(flat));
        Ok(())
    }

    /// Visits every parameter mutably in global-index order.
    pub(crate) fn write_params(&mut self, mut f: impl FnMut(&mut [f64])) {
        let mut buf = Vec::with_capacity(self.param_count);
        for layer in &self.layers {
            if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
                buf.extend_from_slice(w.data());
                buf.extend_from_slice(b.data());
            }
        }
        f(&mut buf);
        let mut off = 0;
        for layer in &mut self.layers {
            if let (Some(w), Some(b)) = (&mut layer.weight, &mut layer.bias) {
                let n = w.len();
                w.data_mut().copy_from_slice(&buf[off..off + n]);
                off += n;
                let n = b.len();
                b.data_mut().copy_from_slice(&buf[off..off + n]);
                off += n;
            }
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.row_shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "batch rows have shape {:?}, network expects {:?}",
                batch.row_shape(),
                self.input_shape
            )));
        }
        Ok(batch.rows())
    }

    fn run_forward(&self, batch: &Tensor, keep: bool) -> Result<(Vec<f64>, Vec<Cache>)> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut in_shape = self.input_shape.as_slice();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (y, cache) = match layer.spec {
                LayerSpec::Dense { n_inp, n_out } => {
                    let w = layer.weight.as_ref().expect("dense weight").data();
                    let b = layer.bias.as_ref().expect("dense bias").data();
                    let y = kernels::dense_forward(&x, n, w, b, n_inp, n_out);
                    (y, Cache::Input(x))
                }
                LayerSpec::Conv2d { .. } => {
                    let geom = self.conv_geom(idx, in_shape);
                    let w = layer.weight.as_ref().expect("conv weight").data();
                    let b = layer.bias.as_ref().expect("conv bias").data();
                    let y = kernels::conv_forward(&x, n, &geom, w, b);
                    (y, Cache::Input(x))
                }
                LayerSpec::Relu => (kernels::relu_forward(&x), Cache::Input(x)),
                LayerSpec::Maxpool2d { size } => {
                    let (y, arg) =
                        kernels::maxpool_forward(&x, n, in_shape[0], in_shape[1], in_shape[2], size);
                    (y, Cache::Argmax(arg))
                }
                LayerSpec::Flatten => (x, Cache::None),
            };
            if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {idx} at entry {pos}")));
            }
            if keep {
                caches.push(cache);
            }
            x = y;
            in_shape = &self.shapes[idx];
        }
        Ok((x, caches))
    }

    fn conv_geom(&self, idx: usize, in_shape: &[usize]) -> ConvGeom {
        let LayerSpec::Conv2d { n_inp, n_out, kernel, stride, padding } = self.layers[idx].spec else {
            unreachable!("conv_geom on non-conv layer");
        };
        let out = &self.shapes[idx];
        ConvGeom {
            n_inp,
            n_out,
            kernel,
            stride,
            padding,
            in_h: in_shape[1],
            in_w: in_shape[2],
            out_h: out[1],
            out_w: out[2],
        }
    }

    /// Class scores (logits), shape `(batch, classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let n = batch.rows();
        let (y, _) = self.run_forward(batch, false)?;
        Tensor::new(vec![n, self.num_classes()], y)
    }

    /// Mean softmax cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<GradientBundle> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(Error::Length { expected: n, got: labels.len() });
        }
        let classes = self.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (logits, caches) = self.run_forward(batch, true)?;

        let mut loss = 0.0;
        let mut correct = 0;
        let mut g = vec![0.0; n * classes];
        for (b, &label) in labels.iter().enumerate() {
            let row = &logits[b * classes..(b + 1) * classes];
            correct += usize::from(argmax(row) == label);
            let (lse, probs) = log_softmax_parts(row);
            loss += lse - row[label];
            for (c, p) in probs.into_iter().enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                g[b * classes + c] = (p - onehot) / n as f64;
            }
        }
        loss /= n as f64;

        let grads = self.backward(n, caches, g)?;
        Ok(GradientBundle { loss, grads, correct })
    }

    fn backward(&self, n: usize, caches: Vec<Cache>, mut g: Vec<f64>) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.param_count];
        for (idx, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let in_shape: &[usize] = if idx == 0 { &self.input_shape } else { &self.shapes[idx - 1] };
            let need_gx = idx > 0;
            g = match (&layer.spec, cache) {
                (LayerSpec::Dense { n_inp, n_out }, Cache::Input(x)) => {
                    let (gw, gb) = self.param_grads(&mut grads, idx);
                    let w = layer.weight.as_ref().expect("dense weight").data();
                    kernels::dense_backward(&x, &g, n, w, *n_inp, *n_out, gw, gb, need_gx)
                }
                (LayerSpec::Conv2d { .. }, Cache::Input(x)) => {
                    let geom = self.conv_geom(idx, in_shape);
                    let (gw, gb) = self.param_grads(&mut grads, idx);
                    let w = layer.weight.as_ref().expect("conv weight").data();
                    kernels::conv_backward(&x, &g, n, &geom, w, gw, gb, need_gx)
                }
                (LayerSpec::Relu, Cache::Input(x)) => kernels::relu_backward(&x, &g),
                (LayerSpec::Maxpool2d { .. }, Cache::Argmax(arg)) => {
                    kernels::maxpool_backward(&g, &arg, n * in_shape.iter().product::<usize>())
                }
                (LayerSpec::Flatten, _) => g,
                _ => unreachable!("cache kind always matches layer kind"),
            };
        }
        if let Some(pos) = grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {pos}")));
        }
        Ok(grads)
    }

    fn param_grads<'a>(&self, grads: &'a mut [f64], layer: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let ws = self.slot(layer, ParamRole::Weight).expect("weight slot");
        let bs = self.slot(layer, ParamRole::Bias).expect("bias slot");
        debug_assert_eq!(ws.start + ws.len, bs.start);
        let (head, tail) = grads[ws.start..bs.start + bs.len].split_at_mut(ws.len);
        (head, tail)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// `(logsumexp(row), softmax(row))` with max-subtraction.
pub fn log_softmax_parts(row: &[f64]) -> (f64, Vec<f64>) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = m + sum.ln();
    (lse, exps.into_iter().map(|e| e / sum).collect())
}

/// Mean cross-entropy of a logit matrix; used for the translation-invariance property.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let n = logits.rows();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            let row = logits.row(b);
            log_softmax_parts(row).0 - row[y]
        })
        .sum();
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense() -> Network {
        Network::with_params(
            vec![2],
            vec![LayerSpec::Dense { n_inp: 2, n_out: 2 }],
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let net = identity_dense();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_conv_weights_give_bias_planes() {
        let specs = vec![
            LayerSpec::Conv2d { n_inp: 1, n_out: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Flatten,
        ];
        let mut flat = vec![0.0; 18];
        flat.extend([0.5, -2.0]);
        let net = Network::with_params(vec![1, 3, 3], specs, &flat).unwrap();
        let x = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let net = Network::with_params(vec![1], vec![LayerSpec::Dense { n_inp: 1, n_out: 2 }], &[0.0; 4]).unwrap();
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let gb = net.loss_and_grad(&x, &[0]).unwrap();
        assert!((gb.loss - std::f64::consts::LN_2).abs() < 1e-15);
        // d/dlogits = (0.5 - 1, 0.5); weight grads scale by the input 3.
        assert_eq!(gb.grads, vec![-1.5, 1.5, -0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = identity_dense();
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            net.loss_and_grad(&x, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        let mut net = net;
        assert!(matches!(net.set_params(&[0.0; 5]), Err(Error::Length { expected: 6, got: 5 })));
    }

    #[test]
    fn convnet_s_filters_are_contiguous_slabs() {
        let net = Network::convnet_s(3, 8, 4, 8, 3, 1).unwrap();
        let w0 = net.slot(0, ParamRole::Weight).unwrap();
        assert_eq!((w0.start, w0.len), (0, 4 * 27));
        let w3 = net.slot(3, ParamRole::Weight).unwrap();
        assert_eq!(w3.len, 8 * 4 * 9);
        // filter f of layer 3 occupies [start + f*36, start + (f+1)*36)
        let b0 = net.slot(0, ParamRole::Bias).unwrap();
        assert_eq!(w3.start, b0.start + b0.len);
        assert_eq!(net.num_classes(), 3);
        assert_eq!(net.head_layer(), Some(7));
    }

    #[test]
    fn layer_composition_is_checked() {
        let bad = Network::init(
            vec![4],
            vec![LayerSpec::Dense { n_inp: 4, n_out: 3 }, LayerSpec::Dense { n_inp: 2, n_out: 2 }],
            0,
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
    }
}
