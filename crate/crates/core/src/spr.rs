//! Structured perspective penalty.
//!
//! For an entity with weights `w`, bound `M` and mixing weight `α`, the
//! penalty is the value of the inner minimization
//!
//! ```text
//! z(w) = min { α‖w‖₂²/y + (1−α)·y  :  ‖w‖∞/M ≤ y ≤ 1 }
//! ```
//!
//! whose minimizer `ỹ(w)` is the stationary point `sqrt(α/(1−α))·‖w‖₂`
//! clamped to `[‖w‖∞/M, 1]`. Each clamp gives its own closed form, so no
//! branch ever divides by `ỹ`. When `‖w‖∞ > M` the interval is empty and `ỹ`
//! is pinned at 1, which keeps `ỹ ∈ [0, 1]` and `z` continuous.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::EntityPartition;
use crate::nnet::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl SprParams {
    /// `λ ≥ 0` (zero switches the penalty off) and `α ∈ [0, 1]`.
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        let p = Self { lambda, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in [0, 1]")));
    }
    Ok(())
}

fn check_inputs(w: &[f64], alpha: f64, m: f64) -> Result<()> {
    check_alpha(alpha)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("bound M = {m} must be positive")));
    }
    if let Some(pos) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("entity weight {pos}")));
    }
    Ok(())
}

/// Which branch of the clamped inner minimization is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Zero,
    Interior,
    LowerClamp,
    UpperClamp,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Interior => "interior",
            Self::LowerClamp => "lower-clamp",
            Self::UpperClamp => "upper-clamp",
        }
    }
}

/// Norm summary of one entity; `z` depends on `w` only through these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub sum_sq: f64,
    pub l2: f64,
    pub linf: f64,
    /// Lowest index attaining `linf`.
    pub argmax: usize,
    /// `Σ (w_j / linf)²`, in `[1, len]` for nonzero `w`.
    pub scaled_sq: f64,
}

impl Norms {
    pub fn of(w: &[f64]) -> Self {
        let mut linf = 0.0f64;
        let mut argmax = 0;
        let mut sum_sq = 0.0;
        for (j, &v) in w.iter().enumerate() {
            sum_sq += v * v;
            if v.abs() > linf {
                linf = v.abs();
                argmax = j;
            }
        }
        let scaled_sq = if linf > 0.0 { w.iter().map(|v| (v / linf) * (v / linf)).sum() } else { 0.0 };
        Self { sum_sq, l2: linf * scaled_sq.sqrt(), linf, argmax, scaled_sq }
    }
}

fn classify(n: &Norms, alpha: f64, m: f64) -> (f64, Regime) {
    if n.linf == 0.0 {
        return (0.0, Regime::Zero);
    }
    let lower = n.linf / m;
    if lower >= 1.0 || alpha >= 1.0 {
        return (1.0, Regime::UpperClamp);
    }
    if alpha <= 0.0 {
        return (lower, Regime::LowerClamp);
    }
    let root = (alpha / (1.0 - alpha)).sqrt() * n.l2;
    if root >= 1.0 {
        (1.0, Regime::UpperClamp)
    } else if root <= lower {
        (lower, Regime::LowerClamp)
    } else {
        (root, Regime::Interior)
    }
}

fn value_in(n: &Norms, regime: Regime, alpha: f64, m: f64) -> f64 {
    match regime {
        Regime::Zero => 0.0,
        Regime::Interior => 2.0 * (alpha * (1.0 - alpha)).sqrt() * n.l2,
        Regime::UpperClamp => alpha * n.sum_sq + (1.0 - alpha),
        // α‖w‖²/(‖w‖∞/M) + (1−α)‖w‖∞/M with ‖w‖²/‖w‖∞ = ‖w‖∞·Σ(w/‖w‖∞)²
        Regime::LowerClamp => alpha * m * n.linf * n.scaled_sq + (1.0 - alpha) * n.linf / m,
    }
}

fn grad_in(w: &[f64], n: &Norms, regime: Regime, alpha: f64, m: f64) -> Vec<f64> {
    match regime {
        Regime::Zero => vec![0.0; w.len()],
        Regime::Interior => {
            let c = 2.0 * (alpha * (1.0 - alpha)).sqrt() / n.l2;
            w.iter().map(|v| c * v).collect()
        }
        Regime::UpperClamp => w.iter().map(|v| 2.0 * alpha * v).collect(),
        Regime::LowerClamp => {
            let mut g: Vec<f64> = w.iter().map(|v| 2.0 * alpha * m * v / n.linf).collect();
            let s = w[n.argmax].signum();
            g[n.argmax] = alpha * m * s * (2.0 - n.scaled_sq) + (1.0 - alpha) * s / m;
            g
        }
    }
}

/// Closed-form optimal relaxed indicator and the active regime.
pub fn ytilde(w: &[f64], alpha: f64, m: f64) -> Result<(f64, Regime)> {
    check_inputs(w, alpha, m)?;
    Ok(classify(&Norms::of(w), alpha, m))
}

pub fn spr_value(w: &[f64], alpha: f64, m: f64) -> Result<f64> {
    check_inputs(w, alpha, m)?;
    let n = Norms::of(w);
    let (_, regime) = classify(&n, alpha, m);
    Ok(value_in(&n, regime, alpha, m))
}

/// Regime-wise gradient of [`spr_value`]; the zero vector at `w = 0` and the
/// lowest-index maximizer at `‖w‖∞` ties.
pub fn spr_grad(w: &[f64], alpha: f64, m: f64) -> Result<Vec<f64>> {
    Ok(evaluate(w, alpha, m)?.grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub ytilde: f64,
    pub regime: Regime,
}

pub fn evaluate(w: &[f64], alpha: f64, m: f64) -> Result<PenaltyEval> {
    check_inputs(w, alpha, m)?;
    let n = Norms::of(w);
    let (ytilde, regime) = classify(&n, alpha, m);
    Ok(PenaltyEval {
        value: value_in(&n, regime, alpha, m),
        grad: grad_in(w, &n, regime, alpha, m),
        ytilde,
        regime,
    })
}

/// Three-case closed form with the `α` factor absent from the quadratic
/// terms of the last two cases and a `(1+α)` factor in the first. It is not
/// the minimum of the inner problem; kept only for side-by-side diagnostics.
pub fn literal_value(w: &[f64], alpha: f64, m: f64) -> Result<f64> {
    check_inputs(w, alpha, m)?;
    let n = Norms::of(w);
    if n.linf == 0.0 {
        return Ok(0.0);
    }
    let lower = n.linf / m;
    let root = if alpha >= 1.0 { f64::INFINITY } else { (alpha / (1.0 - alpha)).sqrt() * n.l2 };
    Ok(if alpha > 0.0 && lower <= root && root <= 1.0 {
        ((1.0 - alpha) / alpha).sqrt() * (1.0 + alpha) * n.l2
    } else if root <= lower && lower <= 1.0 {
        m * n.linf * n.scaled_sq + (1.0 - alpha) * lower
    } else {
        n.sum_sq + (1.0 - alpha)
    })
}

/// Penalty over a whole parameter vector together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePenalty {
    /// `prunable + other`.
    pub value: f64,
    /// `λ Σ_i (u_i/U) z_i`.
    pub prunable: f64,
    /// `λα Σ w²` over parameters outside every entity.
    pub other: f64,
    pub grad: Vec<f64>,
}

/// `λ Σ_i (u_i/U) z_i(w^i)` plus `λα‖w‖²` on the non-prunable parameters.
pub fn aggregate_penalty(params: &[f64], partition: &EntityPartition, p: &SprParams) -> Result<AggregatePenalty> {
    p.validate()?;
    partition.check_params(params)?;
    let total_u = partition.total_u() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut prunable = 0.0;
    for e in partition.entities() {
        let w: Vec<f64> = e.weight_indices.iter().map(|&j| params[j]).collect();
        let eval = evaluate(&w, p.alpha, e.m)?;
        let scale = p.lambda * e.u as f64 / total_u;
        prunable += scale * eval.value;
        for (&j, g) in e.weight_indices.iter().zip(eval.grad) {
            grad[j] = scale * g;
        }
    }
    let mut other = 0.0;
    for (j, owned) in partition.prunable_mask().into_iter().enumerate() {
        if !owned {
            other += params[j] * params[j];
            grad[j] = 2.0 * p.lambda * p.alpha * params[j];
        }
    }
    other *= p.lambda * p.alpha;
    Ok(AggregatePenalty { value: prunable + other, prunable, other, grad })
}

pub fn aggregate_penalty_net(net: &Network, partition: &EntityPartition, p: &SprParams) -> Result<AggregatePenalty> {
    aggregate_penalty(&net.get_params(), partition, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    L2,
    L1,
    GroupLasso,
}

/// `l2`: `λΣw²`; `l1`: `λΣ|w|`; `group-lasso`: `λ Σ_i sqrt(u_i)‖w^i‖₂`.
/// The first two cover every parameter, the last only the entities.
/// Subgradients are 0 at kinks.
pub fn baseline_penalty(
    kind: BaselineKind,
    params: &[f64],
    partition: &EntityPartition,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    partition.check_params(params)?;
    let mut grad = vec![0.0; params.len()];
    let value = match kind {
        BaselineKind::L2 => {
            for (g, w) in grad.iter_mut().zip(params) {
                *g = 2.0 * lambda * w;
            }
            lambda * params.iter().map(|w| w * w).sum::<f64>()
        }
        BaselineKind::L1 => {
            for (g, w) in grad.iter_mut().zip(params) {
                *g = if *w == 0.0 { 0.0 } else { lambda * w.signum() };
            }
            lambda * params.iter().map(|w| w.abs()).sum::<f64>()
        }
        BaselineKind::GroupLasso => {
            let mut total = 0.0;
            for e in partition.entities() {
                let norm = Norms::of(&partition.gather(e.id, params)).l2;
                let c = (e.u as f64).sqrt();
                total += c * norm;
                if norm > 0.0 {
                    for &j in &e.weight_indices {
                        grad[j] = lambda * c * params[j] / norm;
                    }
                }
            }
            lambda * total
        }
    };
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDiagnostic {
    pub entity_id: usize,
    pub layer: usize,
    pub ytilde: f64,
    pub regime: Regime,
    pub z: f64,
    pub z_literal: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn entity_diagnostics(params: &[f64], partition: &EntityPartition, alpha: f64) -> Result<Vec<EntityDiagnostic>> {
    partition.check_params(params)?;
    partition
        .entities()
        .iter()
        .map(|e| {
            let w = partition.gather(e.id, params);
            let eval = evaluate(&w, alpha, e.m)?;
            let n = Norms::of(&w);
            Ok(EntityDiagnostic {
                entity_id: e.id,
                layer: e.layer,
                ytilde: eval.ytilde,
                regime: eval.regime,
                z: eval.value,
                z_literal: literal_value(&w, alpha, e.m)?,
                l2: n.l2,
                linf: n.linf,
            })
        })
        .collect()
}

pub fn diagnostics_csv(rows: &[EntityDiagnostic]) -> String {
    let mut out = String::from("entity_id,layer,ytilde,regime,z,z_literal,l2,linf\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{},{:e},{:e},{:e},{:e}",
            r.entity_id,
            r.layer,
            r.ytilde,
            r.regime.as_str(),
            r.z,
            r.z_literal,
            r.l2,
            r.linf
        );
    }
    out
}
