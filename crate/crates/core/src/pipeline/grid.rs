use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, PipelineConfig};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::nnet::Network;
use crate::spr::SprParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub accuracy_phase1: f64,
    pub accuracy_pruned: f64,
    pub accuracy_final: f64,
    pub pruned_entities: usize,
    pub pruned_params: usize,
    pub total_prunable_params: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub outcome: std::result::Result<CellSummary, String>,
}

impl GridCell {
    pub fn fraction(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|s| s.pruned_params as f64 / s.total_prunable_params as f64)
    }
}

/// Runs the full pipeline for every `(λ, α)` pair on up to `threads` workers,
/// all from the same seed. Failed cells are kept with their error. Rows are
/// sorted by pruned percentage, highest first; ties keep grid order.
pub fn grid_search(
    base: &PipelineConfig,
    lambdas: &[f64],
    alphas: &[f64],
    reference: &Network,
    data: &Dataset,
    test: &Dataset,
    threads: usize,
) -> Result<Vec<GridCell>> {
    if lambdas.is_empty() || alphas.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one lambda and one alpha".into()));
    }
    let pairs: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| alphas.iter().map(move |&a| (l, a))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridCell>>> = Mutex::new(vec![None; pairs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, pairs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(lambda, alpha)) = pairs.get(k) else { break };
                let outcome = SprParams::new(lambda, alpha)
                    .and_then(|spr| run_pipeline(&base.with_spr(spr), reference, data, test))
                    .map(|o| CellSummary {
                        accuracy_phase1: o.accuracy_phase1,
                        accuracy_pruned: o.accuracy_pruned,
                        accuracy_final: o.accuracy_final,
                        pruned_entities: o.report.pruned_entities,
                        pruned_params: o.report.pruned_params,
                        total_prunable_params: o.report.total_prunable_params,
                        percentage: o.report.percentage,
                    })
                    .map_err(|e| {
                        log::warn!("grid cell lambda={lambda} alpha={alpha} failed: {e}");
                        e.to_string()
                    });
                let cell = GridCell { lr: base.phase1.lr0, lambda, alpha, outcome };
                results.lock().expect("grid results lock")[k] = Some(cell);
            });
        }
    });
    let mut cells: Vec<GridCell> = results
        .into_inner()
        .expect("grid results lock")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    cells.sort_by(|a, b| {
        let key = |c: &GridCell| c.outcome.as_ref().map_or(f64::NEG_INFINITY, |s| s.percentage);
        key(b).total_cmp(&key(a))
    });
    Ok(cells)
}

/// Whether the pruned fraction never decreases as λ grows at fixed `alpha`.
/// Failed cells break the trend.
pub fn nondecreasing_in_lambda(cells: &[GridCell], alpha: f64) -> bool {
    let mut row: Vec<&GridCell> = cells.iter().filter(|c| c.alpha == alpha).collect();
    row.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let fractions: Option<Vec<f64>> = row.iter().map(|c| c.fraction()).collect();
    fractions.is_some_and(|f| f.windows(2).all(|w| w[0] <= w[1]))
}

pub const GRID_CSV_HEADER: &str =
    "lr,lambda,alpha,accuracy,pruned_params,percentage,accuracy_after_prune,accuracy_phase1,status";

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(GRID_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let _ = match &c.outcome {
            Ok(s) => writeln!(
                out,
                "{},{},{},{:.2},{},{:.2},{:.2},{:.2},ok",
                c.lr, c.lambda, c.alpha, s.accuracy_final, s.pruned_params, s.percentage, s.accuracy_pruned, s.accuracy_phase1
            ),
            Err(e) => writeln!(out, "{},{},{},,,,,,\"failed: {}\"", c.lr, c.lambda, c.alpha, e.replace('"', "'")),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(lambda: f64, alpha: f64, pruned: Option<usize>) -> GridCell {
        GridCell {
            lr: 0.05,
            lambda,
            alpha,
            outcome: pruned.map_or(Err("boom".into()), |p| {
                Ok(CellSummary {
                    accuracy_phase1: 90.0,
                    accuracy_pruned: 80.0,
                    accuracy_final: 85.0,
                    pruned_entities: p,
                    pruned_params: p,
                    total_prunable_params: 10,
                    percentage: 10.0 * p as f64,
                })
            }),
        }
    }

    #[test]
    fn trend_and_csv() {
        let cells = vec![cell(0.1, 0.3, Some(1)), cell(2.0, 0.3, Some(5)), cell(0.5, 0.3, Some(5)), cell(0.5, 0.7, None)];
        assert!(nondecreasing_in_lambda(&cells, 0.3));
        assert!(!nondecreasing_in_lambda(&cells, 0.7));
        let down = vec![cell(0.1, 0.3, Some(4)), cell(0.5, 0.3, Some(2))];
        assert!(!nondecreasing_in_lambda(&down, 0.3));
        let csv = grid_csv(&cells);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("0.05,0.1,0.3,85.00,1,10.00"));
        assert!(csv.contains("failed: boom"));
    }
}
