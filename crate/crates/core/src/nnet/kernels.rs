//! Batched forward/backward kernels over flat row-major buffers.
//!
//! Every loop visits samples in ascending order so reductions are
//! reproducible bit-for-bit.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n_inp: usize,
    pub n_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn in_len(&self) -> usize {
        self.n_inp * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.n_out * self.out_h * self.out_w
    }
}

pub(crate) fn dense_forward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    bias: &[f64],
    n_inp: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * n_out];
    for b in 0..batch {
        let xb = &x[b * n_inp..(b + 1) * n_inp];
        for o in 0..n_out {
            let row = &w[o * n_inp..(o + 1) * n_inp];
            let mut acc = bias[o];
            for (wi, xi) in row.iter().zip(xb) {
                acc += wi * xi;
            }
            y[b * n_out + o] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    gy: &[f64],
    batch: usize,
    w: &[f64],
    n_inp: usize,
    n_out: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    need_gx: bool,
) -> Vec<f64> {
    let mut gx = if need_gx { vec![0.0; batch * n_inp] } else { Vec::new() };
    for b in 0..batch {
        let xb = &x[b * n_inp..(b + 1) * n_inp];
        for o in 0..n_out {
            let g = gy[b * n_out + o];
            gb[o] += g;
            let grow = &mut gw[o * n_inp..(o + 1) * n_inp];
            for (gwi, xi) in grow.iter_mut().zip(xb) {
                *gwi += g * xi;
            }
            if need_gx {
                let row = &w[o * n_inp..(o + 1) * n_inp];
                let gxb = &mut gx[b * n_inp..(b + 1) * n_inp];
                for (gxi, wi) in gxb.iter_mut().zip(row) {
                    *gxi += g * wi;
                }
            }
        }
    }
    gx
}

pub(crate) fn conv_forward(
    x: &[f64],
    batch: usize,
    geom: &ConvGeom,
    w: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let &ConvGeom { n_inp, n_out, kernel: k, stride, padding, in_h, in_w, out_h, out_w } = geom;
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let mut y = vec![0.0; batch * out_len];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut y[b * out_len..(b + 1) * out_len];
        for o in 0..n_out {
            let plane = &mut yb[o * out_h * out_w..(o + 1) * out_h * out_w];
            plane.fill(bias[o]);
            for i in 0..n_inp {
                let xin = &xb[i * in_h * in_w..(i + 1) * in_h * in_w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * n_inp + i) * k + ky) * k + kx];
                        for oy in 0..out_h {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let xrow = &xin[iy as usize * in_w..(iy as usize + 1) * in_w];
                            let prow = &mut plane[oy * out_w..(oy + 1) * out_w];
                            for (ox, p) in prow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix >= 0 && ix < in_w as isize {
                                    *p += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    gy: &[f64],
    batch: usize,
    geom: &ConvGeom,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_gx: bool,
) -> Vec<f64> {
    let &ConvGeom { n_inp, n_out, kernel: k, stride, padding, in_h, in_w, out_h, out_w } = geom;
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let mut gx = if need_gx { vec![0.0; batch * in_len] } else { Vec::new() };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gyb = &gy[b * out_len..(b + 1) * out_len];
        for o in 0..n_out {
            let gplane = &gyb[o * out_h * out_w..(o + 1) * out_h * out_w];
            gb[o] += gplane.iter().sum::<f64>();
            for i in 0..n_inp {
                let xin = &xb[i * in_h * in_w..(i + 1) * in_h * in_w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * n_inp + i) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in 0..out_h {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for ox in 0..out_w {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let g = gplane[oy * out_w + ox];
                                acc += g * xin[iy * in_w + ix as usize];
                                if need_gx {
                                    gx[b * in_len + (i * in_h + iy) * in_w + ix as usize] += g * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Subgradient 0 at the kink.
pub(crate) fn relu_backward(x: &[f64], gy: &[f64]) -> Vec<f64> {
    x.iter().zip(gy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect()
}

/// Non-overlapping max pooling; ties resolve to the first element in scan order.
pub(crate) fn maxpool_forward(
    x: &[f64],
    batch: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (out_h, out_w) = (in_h / size, in_w / size);
    let in_len = channels * in_h * in_w;
    let mut y = Vec::with_capacity(batch * channels * out_h * out_w);
    let mut arg = Vec::with_capacity(y.capacity());
    for b in 0..batch {
        for c in 0..channels {
            let base = b * in_len + c * in_h * in_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = base + oy * size * in_w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * in_w + ox * size + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward(gy: &[f64], argmax: &[usize], in_total: usize) -> Vec<f64> {
    let mut gx = vec![0.0; in_total];
    for (&g, &idx) in gy.iter().zip(argmax) {
        gx[idx] += g;
    }
    gx
}
