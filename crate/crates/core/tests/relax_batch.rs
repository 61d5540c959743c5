use spr_core::relax::{run_batch, BatchSummary, GeneratorConfig, LossKind, SolverOptions, ORDER_TOL};

fn check(loss: LossKind, count: usize, min_tighter: f64) {
    let cfg = GeneratorConfig { loss, ..GeneratorConfig::default() };
    let rows = run_batch(77, count, &cfg, &SolverOptions::default(), 2).unwrap();
    let s = BatchSummary::of(&rows);
    assert_eq!(s.sandwich_ok, count, "{loss:?}: {s:?}");
    assert!(s.tighter_fraction() >= min_tighter, "{loss:?}: {s:?}");
    assert!(s.max_projection_gap <= 1e-6, "{loss:?}: {s:?}");
    for r in &rows {
        let v = &r.result;
        assert!(v.v_bigm <= v.v_pr + ORDER_TOL && v.v_pr <= v.v_int + ORDER_TOL);
        assert!(v.y_gap <= 1e-4, "seed {}: joint y off the closed form by {}", r.seed, v.y_gap);
        assert!(v.diagnostics.is_empty(), "seed {}: {:?}", r.seed, v.diagnostics);
    }
}

#[test]
fn least_squares_batch_is_ordered_and_mostly_strict() {
    check(LossKind::LeastSquares, 40, 0.9);
}

#[test]
fn logistic_batch_is_ordered_and_mostly_strict() {
    check(LossKind::Logistic, 20, 0.9);
}
