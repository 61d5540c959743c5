use proptest::prelude::*;
use spr_core::checkpoint::Checkpoint;
use spr_core::dataio::{decode_sprd, encode_sprd, parse_idx_images, parse_idx_labels, Dataset, Split};
use spr_core::groups::{
    apply_mask, build_filter_partition, decide_pruning, report, PartitionPolicy, ReportMetrics, Verdict,
};
use spr_core::nnet::Network;
use spr_core::pipeline::topk_hits;
use spr_core::spr::{evaluate, spr_value, ytilde};
use spr_core::Tensor;

fn entity() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
    (prop::collection::vec(-3.0f64..3.0, 1..9), 0.0f64..=1.0, 0.05f64..10.0)
}

/// Network whose weights are a mix of exact zeros, tiny and ordinary values.
fn sparse_net() -> impl Strategy<Value = Network> {
    (1usize..4, 1usize..5, 1usize..6, any::<u64>()).prop_flat_map(|(c, c1, c2, seed)| {
        let net = Network::convnet_s(c, 6, c1, c2, 3, seed).unwrap();
        let n = net.param_count();
        prop::collection::vec(prop_oneof![Just(0.0), -1e-5f64..1e-5, -1.0f64..1.0], n).prop_map(move |p| {
            let mut net = net.clone();
            net.set_params(&p).unwrap();
            net
        })
    })
}

proptest! {
    #[test]
    fn penalty_is_the_inner_minimum((w, alpha, m) in entity(), t in 0.0f64..=1.0) {
        let z = spr_value(&w, alpha, m).unwrap();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        let linf = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(z >= 0.0);
        prop_assert_eq!(z == 0.0, linf == 0.0);
        let lo = linf / m;
        if lo <= 1.0 && linf > 0.0 {
            let y = lo + t * (1.0 - lo);
            prop_assert!(z <= alpha * sq / y + (1.0 - alpha) * y + 1e-12 * (1.0 + z));
        }
        let (yt, _) = ytilde(&w, alpha, m).unwrap();
        prop_assert!((0.0..=1.0).contains(&yt));
    }

    #[test]
    fn penalty_ignores_order_and_signs((w, alpha, m) in entity(), flips in prop::collection::vec(any::<bool>(), 8)) {
        let mut v: Vec<f64> = w.iter().zip(&flips).map(|(x, &f)| if f { -x } else { *x }).collect();
        v.reverse();
        let (a, b) = (spr_value(&w, alpha, m).unwrap(), spr_value(&v, alpha, m).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn penalty_is_nonincreasing_in_the_bound((w, alpha, m) in entity(), grow in 1.0f64..5.0) {
        let linf = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assume!(linf <= m);
        let tight = spr_value(&w, alpha, m).unwrap();
        let loose = spr_value(&w, alpha, m * grow).unwrap();
        prop_assert!(loose <= tight + 1e-12 * (1.0 + tight));
    }

    #[test]
    fn penalty_is_continuous((w, alpha, m) in entity(), j in 0usize..8, dir in prop_oneof![Just(-1.0), Just(1.0)]) {
        let j = j % w.len();
        let z = spr_value(&w, alpha, m).unwrap();
        let mut v = w.clone();
        v[j] += dir * 1e-9;
        let dz = (spr_value(&v, alpha, m).unwrap() - z).abs();
        // local Lipschitz bound: slopes are at most of order αM + 1/M + ‖w‖
        let slope = 2.0 * alpha * m * 3.0 * 8.0 + 1.0 / m + 2.0 * 3.0 * 8.0;
        prop_assert!(dz <= slope * 1e-9 + 1e-15, "jump {} at {:?}", dz, evaluate(&w, alpha, m).unwrap().regime);
    }

    #[test]
    fn filter_partition_is_disjoint_and_skips_biases_and_head(net in sparse_net()) {
        let p = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let mut seen = vec![false; net.param_count()];
        for e in p.entities() {
            prop_assert_eq!(e.u, e.weight_indices.len());
            for &j in &e.weight_indices {
                prop_assert!(!seen[j]);
                seen[j] = true;
            }
        }
        prop_assert_eq!(seen.iter().filter(|&&s| s).count(), p.total_u());
        let head = net.head_layer().unwrap();
        prop_assert!(p.entities().iter().all(|e| e.layer != head));
    }

    #[test]
    fn pruning_grows_with_tolerance(net in sparse_net(), tol in 1e-7f64..1e-3, frac in 0.5f64..1.0) {
        let p = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let small = decide_pruning(&net, &p, tol, frac).unwrap();
        let large = decide_pruning(&net, &p, tol * 10.0, frac).unwrap();
        for (a, b) in small.entity_pruned.iter().zip(&large.entity_pruned) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn mask_application_is_idempotent_and_report_consistent(net in sparse_net(), frac in 0.5f64..1.0) {
        let p = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let mask = decide_pruning(&net, &p, 1e-4, frac).unwrap();
        let before = net.get_params();
        let mut once = net.clone();
        apply_mask(&mut once, &mask).unwrap();
        let mut twice = once.clone();
        apply_mask(&mut twice, &mask).unwrap();
        prop_assert_eq!(once.get_params(), twice.get_params());
        for (j, &f) in mask.frozen.iter().enumerate() {
            prop_assert_eq!(once.get_params()[j], if f { 0.0 } else { before[j] });
        }
        let r = report(&before, &p, &mask, 1e-4, ReportMetrics::default()).unwrap();
        let pruned: usize = r.rows.iter().filter(|x| x.verdict == Verdict::Pruned).map(|x| x.u).sum();
        prop_assert_eq!(r.pruned_params, pruned);
        prop_assert_eq!(r.pruned_entities, mask.pruned_count());
        prop_assert_eq!(r.percentage, 100.0 * pruned as f64 / r.total_prunable_params as f64);
        let layers = r.per_layer();
        prop_assert_eq!(layers.iter().map(|l| l.pruned_params).sum::<usize>(), r.pruned_params);
        prop_assert_eq!(layers.iter().map(|l| l.params).sum::<usize>(), r.total_prunable_params);
    }

    #[test]
    fn topk_matches_a_sorting_recount(
        scores in prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 60),
        labels in prop::collection::vec(0usize..4, 15),
        k in 1usize..=4,
    ) {
        let logits = Tensor::new(vec![15, 4], scores.clone()).unwrap();
        let mut hits = 0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &scores[i * 4..i * 4 + 4];
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            hits += usize::from(order[..k].contains(&y));
        }
        prop_assert_eq!(topk_hits(&logits, &labels, k), hits);
        prop_assert_eq!(topk_hits(&logits, &labels, 4), 15);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
        let _ = decode_sprd(&bytes);
        let _ = Checkpoint::from_bytes(&bytes);
    }

    #[test]
    fn sprd_round_trips(
        n in 1usize..6,
        width in 1usize..5,
        classes in 1usize..4,
        values in prop::collection::vec(-1e3f64..1e3, 30),
        seed in any::<u64>(),
    ) {
        let inputs = Tensor::new(vec![n, width], values[..n * width].to_vec()).unwrap();
        let labels = (0..n).map(|i| (seed as usize + i) % classes).collect();
        let ds = Dataset::new(inputs, labels, classes, Split::Test).unwrap();
        let back = decode_sprd(&encode_sprd(&ds)).unwrap();
        prop_assert_eq!(back.inputs, ds.inputs);
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.split, Split::Test);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..400) {
        let net = Network::mlp(3, &[4], 2, 1).unwrap();
        let bytes = Checkpoint::from_network(&net, "t").to_bytes().unwrap();
        let cut = cut % bytes.len();
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}
