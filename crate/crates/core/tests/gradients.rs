use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spr_core::groups::{build_filter_partition, PartitionPolicy};
use spr_core::nnet::Network;
use spr_core::spr::{aggregate_penalty, evaluate, Regime, SprParams};
use spr_core::Tensor;

const H: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Cross-entropy plus penalty against central differences on every
/// parameter, with bounds chosen so entities land in several regimes.
fn check_network(net: Network, input_shape: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partition = build_filter_partition(&net, PartitionPolicy::FiltersAndDenseRows).unwrap();
    let bounds: BTreeMap<usize, f64> =
        partition.layers().into_iter().map(|l| (l, rng.random_range(0.3..2.0))).collect();
    partition.set_layer_bounds(&bounds).unwrap();
    let n = 4;
    let len: usize = input_shape.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(input_shape);
    let batch = Tensor::new(shape, (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % net.num_classes()).collect();
    let p = SprParams::new(0.5, 0.3).unwrap();

    let params = net.get_params();
    let mut regimes = std::collections::BTreeSet::new();
    for e in partition.entities() {
        let w = partition.gather(e.id, &params);
        regimes.insert(format!("{:?}", evaluate(&w, p.alpha, e.m).unwrap().regime));
    }
    let grads = net.loss_and_grad(&batch, &labels).unwrap().grads;
    let pen = aggregate_penalty(&params, &partition, &p).unwrap().grad;
    let mut probe = net.clone();
    let mut f = |q: &[f64]| {
        probe.set_params(q).unwrap();
        probe.loss_and_grad(&batch, &labels).unwrap().loss + aggregate_penalty(q, &partition, &p).unwrap().value
    };
    for j in 0..params.len() {
        let mut at = |d: f64| {
            let mut q = params.clone();
            q[j] += d;
            f(&q)
        };
        // fourth-order stencil: the two-point one loses ~1e-10 to rounding
        let fd = (8.0 * (at(H) - at(-H)) - (at(2.0 * H) - at(-2.0 * H))) / (12.0 * H);
        let err = rel_err(grads[j] + pen[j], fd);
        assert!(err <= 1e-5, "parameter {j}: analytic {} vs fd {fd} ({err:e})", grads[j] + pen[j]);
    }
    assert!(regimes.len() >= 2, "only {regimes:?} exercised");
}

#[test]
fn mlp_objective_gradient() {
    check_network(Network::mlp(5, &[6, 4], 3, 11).unwrap(), &[5], 1);
}

#[test]
fn convnet_objective_gradient() {
    check_network(Network::convnet_s(2, 6, 3, 4, 3, 12).unwrap(), &[2, 6, 6], 2);
}

#[test]
fn zero_entity_contributes_no_gradient() {
    let g = evaluate(&[0.0; 5], 0.4, 1.0).unwrap();
    assert_eq!(g.regime, Regime::Zero);
    assert!(g.grad.iter().all(|&v| v == 0.0));
}
