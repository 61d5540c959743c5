//! Brute-force laboratory for the integer model and its continuous
//! relaxations on tiny group-sparse regression instances.

mod instance;
mod loss;
mod solvers;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use instance::{generate, GeneratorConfig, LossKind, MipInstance, MAX_GROUPS, MAX_WEIGHTS};
pub use loss::DataLoss;
pub use solvers::{
    bigm_objective, integer_objective, joint_objective, pr_objective, prox_linf_box, prox_spr, solve_bigm_relaxation,
    solve_integer, solve_joint, solve_pr_relaxation, Solution, SolverOptions,
};

use crate::error::Result;
use crate::seed;

/// Slack allowed on the ordering `v_bigm ≤ v_pr ≤ v_int`.
pub const ORDER_TOL: f64 = 1e-6;
/// Margin by which the perspective bound must beat big-M to count as tighter.
pub const TIGHTER_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationResult {
    pub v_int: f64,
    pub y_int: Vec<bool>,
    pub w_int: Vec<f64>,
    pub v_bigm: f64,
    pub w_bigm: Vec<f64>,
    pub y_bigm: Vec<f64>,
    /// Perspective relaxation through the projected penalty.
    pub v_pr: f64,
    pub w_pr: Vec<f64>,
    pub y_pr: Vec<f64>,
    /// Perspective relaxation minimized jointly over `(w, y)`.
    pub v_pr_joint: f64,
    pub w_pr_joint: Vec<f64>,
    pub y_pr_joint: Vec<f64>,
    /// Largest `|y − ỹ(w)|` at the joint optimum.
    pub y_gap: f64,
    pub gap_bigm: f64,
    pub gap_pr: f64,
    pub pr_tighter: bool,
    pub sandwich_ok: bool,
    /// Non-convergence notes; empty when every solver converged.
    pub diagnostics: Vec<String>,
}

impl RelaxationResult {
    /// `|v_pr − v_pr_joint|`.
    pub fn projection_gap(&self) -> f64 {
        (self.v_pr - self.v_pr_joint).abs()
    }
}

/// Runs the integer solver and both relaxations and checks the sandwich.
pub fn verify_ordering(inst: &MipInstance, opts: &SolverOptions) -> Result<RelaxationResult> {
    let int = solve_integer(inst, opts)?;
    let bigm = solve_bigm_relaxation(inst, opts)?;
    let pr = solve_pr_relaxation(inst, opts)?;
    let joint = solve_joint(inst, true)?;

    let mut diagnostics = Vec::new();
    for (name, sol) in [("integer", &int), ("big-m", &bigm), ("perspective", &pr), ("joint", &joint)] {
        if !sol.converged {
            diagnostics.push(format!("{name}: not converged after {} iterations", sol.iterations));
        }
    }
    let y_gap = inst
        .groups
        .iter()
        .zip(&joint.y)
        .map(|(g, &y)| {
            let wg: Vec<f64> = g.iter().map(|&j| joint.w[j]).collect();
            crate::spr::ytilde(&wg, inst.alpha, inst.big_m).map(|(yt, _)| (y - yt).abs())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let sandwich_ok = bigm.value <= pr.value + ORDER_TOL && pr.value <= int.value + ORDER_TOL;
    if !sandwich_ok {
        diagnostics.push(format!(
            "ordering violated: v_bigm={:.9} v_pr={:.9} v_int={:.9}",
            bigm.value, pr.value, int.value
        ));
    }
    Ok(RelaxationResult {
        v_int: int.value,
        y_int: int.y.iter().map(|&v| v == 1.0).collect(),
        w_int: int.w,
        v_bigm: bigm.value,
        w_bigm: bigm.w,
        y_bigm: bigm.y,
        v_pr: pr.value,
        w_pr: pr.w,
        y_pr: pr.y,
        v_pr_joint: joint.value,
        w_pr_joint: joint.w,
        y_pr_joint: joint.y,
        y_gap,
        gap_bigm: int.value - bigm.value,
        gap_pr: int.value - pr.value,
        pr_tighter: pr.value - bigm.value > TIGHTER_MARGIN,
        sandwich_ok,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub seed: u64,
    pub groups: usize,
    pub weights: usize,
    pub result: RelaxationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub instances: usize,
    pub sandwich_ok: usize,
    pub pr_tighter: usize,
    pub max_projection_gap: f64,
}

impl BatchSummary {
    pub fn of(rows: &[BatchRow]) -> Self {
        Self {
            instances: rows.len(),
            sandwich_ok: rows.iter().filter(|r| r.result.sandwich_ok).count(),
            pr_tighter: rows.iter().filter(|r| r.result.pr_tighter).count(),
            max_projection_gap: rows.iter().map(|r| r.result.projection_gap()).fold(0.0, f64::max),
        }
    }

    pub fn tighter_fraction(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.pr_tighter as f64 / self.instances as f64
        }
    }
}

/// Seed of the `index`-th instance of a batch.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    seed::derive_indexed(seed, "relax-instance", &[index as u64])
}

fn run_one(inst: &MipInstance, s: u64, opts: &SolverOptions) -> Result<BatchRow> {
    let result = verify_ordering(inst, &SolverOptions { seed: s, ..*opts })?;
    Ok(BatchRow { seed: s, groups: inst.groups.len(), weights: inst.cols(), result })
}

/// Generates and verifies `count` instances on up to `threads` workers.
/// Rows come back in instance order regardless of scheduling.
pub fn run_batch(
    seed: u64,
    count: usize,
    cfg: &GeneratorConfig,
    opts: &SolverOptions,
    threads: usize,
) -> Result<Vec<BatchRow>> {
    let threads = threads.clamp(1, count.max(1));
    let mut slots: Vec<Option<Result<BatchRow>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = slots.chunks_mut(count.div_ceil(threads).max(1)).enumerate().collect();
        let size = count.div_ceil(threads).max(1);
        for (c, chunk) in chunks {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let s = instance_seed(seed, c * size + k);
                    *slot = Some(generate(s, cfg).and_then(|inst| run_one(&inst, s, opts)));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Verifies a single explicit instance as a one-row batch.
pub fn run_instance(inst: &MipInstance, seed: u64, opts: &SolverOptions) -> Result<BatchRow> {
    run_one(inst, seed, opts)
}

pub const CSV_HEADER: &str = "seed,N,n,v_bigm,v_pr,v_int,gap_bigm,gap_pr,pr_tighter";

pub fn batch_csv(rows: &[BatchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.result;
        let _ = writeln!(
            out,
            "{},{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{}",
            row.seed, row.groups, row.weights, r.v_bigm, r.v_pr, r.v_int, r.gap_bigm, r.gap_pr, r.pr_tighter
        );
    }
    out
}
