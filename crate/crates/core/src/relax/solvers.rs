//! Exact and relaxed solvers for [`MipInstance`]s.
//!
//! - integer optimum: enumerate every indicator pattern and solve the
//!   remaining smooth problem (normal equations / damped Newton, with a
//!   box-constrained fallback);
//! - big-M and perspective relaxations in projected form (the indicators
//!   eliminated in closed form): accelerated proximal gradient with exact
//!   group proximal maps;
//! - relaxations in joint `(w, y)` form: log-barrier Newton method, an
//!   independent route that never uses the closed-form projection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::instance::{LossKind, MipInstance, MAX_GROUPS};
use super::loss::DataLoss;
use crate::error::{Error, Result};
use crate::seed;
use crate::spr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Starting points for the projected-form solvers (the first is `w = 0`).
    pub starts: usize,
    pub max_iter: usize,
    /// Step-length tolerance of the proximal iterations.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { starts: 3, max_iter: 50_000, tol: 1e-13, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub value: f64,
    pub w: Vec<f64>,
    /// Indicator values: binary for the integer problem, relaxed otherwise.
    pub y: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// objectives

fn sum_sq(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum()
}

fn group_linf(inst: &MipInstance, w: &[f64], g: usize) -> f64 {
    inst.groups[g].iter().fold(0.0f64, |m, &j| m.max(w[j].abs()))
}

/// `L(w) + λ[α‖w‖² + (1−α)Σ y_i]`.
pub fn integer_objective(inst: &MipInstance, loss: &DataLoss, w: &[f64], y: &[bool]) -> f64 {
    let on = y.iter().filter(|&&v| v).count() as f64;
    loss.value(w) + inst.lambda * (inst.alpha * sum_sq(w) + (1.0 - inst.alpha) * on)
}

/// Big-M relaxation with `y_i = min(1, ‖w^i‖∞/M)` substituted.
pub fn bigm_objective(inst: &MipInstance, loss: &DataLoss, w: &[f64]) -> f64 {
    let ysum: f64 = (0..inst.groups.len()).map(|g| (group_linf(inst, w, g) / inst.big_m).min(1.0)).sum();
    loss.value(w) + inst.lambda * (inst.alpha * sum_sq(w) + (1.0 - inst.alpha) * ysum)
}

/// Perspective relaxation with `y` eliminated: `L(w) + λ Σ_i z(w^i)`.
pub fn pr_objective(inst: &MipInstance, loss: &DataLoss, w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for g in &inst.groups {
        let wg: Vec<f64> = g.iter().map(|&j| w[j]).collect();
        total += spr::spr_value(&wg, inst.alpha, inst.big_m)?;
    }
    Ok(loss.value(w) + inst.lambda * total)
}

/// Joint objective with explicit relaxed indicators; `+∞` outside the
/// feasible set `|w_j| ≤ M·y_i`, `0 ≤ y_i ≤ 1`.
pub fn joint_objective(inst: &MipInstance, loss: &DataLoss, w: &[f64], y: &[f64], perspective: bool) -> f64 {
    let owner = inst.group_of();
    let mut quad = 0.0;
    for (j, &wj) in w.iter().enumerate() {
        let yi = y[owner[j]];
        if wj.abs() > inst.big_m * yi {
            return f64::INFINITY;
        }
        quad += match (perspective, wj == 0.0) {
            (_, true) => 0.0,
            (true, false) => wj * wj / yi,
            (false, false) => wj * wj,
        };
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return f64::INFINITY;
    }
    loss.value(w) + inst.lambda * (inst.alpha * quad + (1.0 - inst.alpha) * y.iter().sum::<f64>())
}

// ---------------------------------------------------------------------------
// proximal maps

/// `argmin_x ½‖x − v‖² + c‖x‖∞` subject to `|x_j| ≤ cap`.
pub fn prox_linf_box(v: &[f64], c: f64, cap: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= c {
        return vec![0.0; v.len()];
    }
    // threshold θ with Σ(|v_j| − θ)_+ = c
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut theta = 0.0;
    let mut acc = 0.0;
    for (k, &mk) in mags.iter().enumerate() {
        acc += mk;
        let t = (acc - c) / (k + 1) as f64;
        let next = mags.get(k + 1).copied().unwrap_or(0.0);
        if t >= next {
            theta = t;
            break;
        }
    }
    let s = theta.min(cap);
    v.iter().map(|x| x.clamp(-s, s)).collect()
}

/// `argmin_x ½‖x − v‖² + t·z(x; α, M)`, computed through the joint form
/// `min_y min_x ½‖x − v‖² + t[α‖x‖²/y + (1−α)y]` with `|x_j| ≤ My`. For
/// fixed `y` the inner minimizer is `clip(v·y/(y + 2tα), My)`; the outer
/// function of `y` is convex and its derivative is bisected.
pub fn prox_spr(v: &[f64], t: f64, alpha: f64, m: f64) -> Vec<f64> {
    if v.iter().all(|&x| x == 0.0) {
        return vec![0.0; v.len()];
    }
    let c = 2.0 * t * alpha;
    let slope = |y: f64| -> f64 {
        let mut d = t * (1.0 - alpha);
        for &vj in v {
            if vj.abs() <= m * (y + c) {
                if alpha > 0.0 {
                    let r = vj / (y + c);
                    d -= t * alpha * r * r;
                }
            } else {
                d += m * (m * y - vj.abs()) + t * alpha * m * m;
            }
        }
        d
    };
    let x_at = |y: f64| -> Vec<f64> {
        v.iter()
            .map(|&vj| {
                if y + c == 0.0 {
                    return 0.0;
                }
                (vj * y / (y + c)).clamp(-m * y, m * y)
            })
            .collect()
    };
    if slope(1.0) <= 0.0 {
        return x_at(1.0);
    }
    if slope(0.0) >= 0.0 {
        return vec![0.0; v.len()];
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x_at(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// accelerated proximal gradient

struct Composite<'a> {
    lipschitz: f64,
    smooth: &'a dyn Fn(&[f64]) -> (f64, Vec<f64>),
    /// `prox(v, step)`
    prox: &'a dyn Fn(&[f64], f64) -> Vec<f64>,
    objective: &'a dyn Fn(&[f64]) -> f64,
}

struct ProxOutcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// FISTA with function-value restarts, so objective values never increase.
fn fista(problem: &Composite<'_>, x0: &[f64], max_iter: usize, tol: f64) -> ProxOutcome {
    let step = 1.0 / problem.lipschitz.max(1e-12);
    let mut x = (problem.prox)(x0, 0.0);
    let mut fx = (problem.objective)(&x);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for it in 1..=max_iter {
        let (_, g) = (problem.smooth)(&z);
        let v: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let x_new = (problem.prox)(&v, step);
        let moved = x_new.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let f_new = (problem.objective)(&x_new);
        let scale = 1.0 + x_new.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if f_new > fx {
            // restart from the best point; a plain step that fails to descend
            // means the iterate is stationary up to rounding
            if z == x {
                return ProxOutcome { x, value: fx, iterations: it, converged: moved <= 1e-7 * scale };
            }
            z.clone_from(&x);
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        z = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = x_new;
        fx = f_new;
        t = t_new;
        if moved <= tol * scale {
            return ProxOutcome { x, value: fx, iterations: it, converged: true };
        }
    }
    ProxOutcome { x, value: fx, iterations: max_iter, converged: false }
}

fn starts(inst: &MipInstance, opts: &SolverOptions, purpose: &str) -> Vec<Vec<f64>> {
    let n = inst.cols();
    let mut out = vec![vec![0.0; n]];
    for s in 1..opts.starts.max(1) {
        let mut rng = seed::rng_indexed(opts.seed, purpose, &[s as u64]);
        out.push((0..n).map(|_| rng.random_range(-inst.big_m..=inst.big_m)).collect());
    }
    out
}

fn best_of(runs: impl Iterator<Item = ProxOutcome>) -> ProxOutcome {
    runs.reduce(|best, r| if r.value < best.value { r } else { best })
        .expect("at least one start")
}

fn apply_group_prox(inst: &MipInstance, v: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for g in &inst.groups {
        let vg: Vec<f64> = g.iter().map(|&j| v[j]).collect();
        for (&j, x) in g.iter().zip(f(&vg)) {
            out[j] = x;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// integer optimum

fn check_enumerable(inst: &MipInstance) -> Result<()> {
    inst.validate()?;
    if inst.groups.len() > MAX_GROUPS {
        return Err(Error::InvalidArgument(format!(
            "{} groups exceed the enumeration limit {MAX_GROUPS}",
            inst.groups.len()
        )));
    }
    Ok(())
}

/// Smooth part on a fixed support: `L(w) + λα‖w‖²`, `|w_j| ≤ M`.
fn solve_support(inst: &MipInstance, loss: &DataLoss, support: &[usize], opts: &SolverOptions) -> (Vec<f64>, bool) {
    let n = inst.cols();
    if support.is_empty() {
        return (vec![0.0; n], true);
    }
    let ridge = inst.lambda * inst.alpha;
    let sub = DMatrix::from_fn(inst.rows(), support.len(), |r, c| loss.design()[(r, support[c])]);
    let embed = |ws: &[f64]| {
        let mut w = vec![0.0; n];
        for (&j, &v) in support.iter().zip(ws) {
            w[j] = v;
        }
        w
    };

    let unconstrained = match loss.kind() {
        LossKind::LeastSquares => {
            let mut lhs = sub.tr_mul(&sub);
            let mut shift = ridge;
            if shift == 0.0 {
                shift = 1e-12;
                log::warn!("unregularized least squares; adding ridge {shift:e}");
            }
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += shift;
            }
            let rhs = sub.tr_mul(loss.targets());
            lhs.cholesky().map(|ch| ch.solve(&rhs).as_slice().to_vec())
        }
        LossKind::Logistic => newton_logistic(&sub, loss.targets(), ridge),
    };
    if let Some(ws) = unconstrained {
        if ws.iter().all(|v| v.abs() <= inst.big_m) {
            return (embed(&ws), true);
        }
    }

    let mut on = vec![false; n];
    for &j in support {
        on[j] = true;
    }
    let big_m = inst.big_m;
    let smooth = |w: &[f64]| {
        let (f, mut g) = loss.value_grad(w);
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj += 2.0 * ridge * wj;
        }
        (f + ridge * sum_sq(w), g)
    };
    let prox = |v: &[f64], _: f64| -> Vec<f64> {
        v.iter().zip(&on).map(|(x, &o)| if o { x.clamp(-big_m, big_m) } else { 0.0 }).collect()
    };
    let objective = |w: &[f64]| smooth(w).0;
    let problem = Composite { lipschitz: loss.lipschitz() + 2.0 * ridge, smooth: &smooth, prox: &prox, objective: &objective };
    let out = fista(&problem, &vec![0.0; n], opts.max_iter, opts.tol);
    (out.x, out.converged)
}

fn newton_logistic(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<Vec<f64>> {
    let n = a.ncols();
    let mut w = DVector::zeros(n);
    let value = |w: &DVector<f64>| -> f64 {
        let z = a * w;
        z.iter().zip(b.iter()).map(|(z, y)| log1p_exp_neg(y * z)).sum::<f64>() + ridge * w.norm_squared()
    };
    for _ in 0..100 {
        let z = a * &w;
        let mut coef = DVector::zeros(z.len());
        let mut d = DVector::zeros(z.len());
        for k in 0..z.len() {
            let s = 1.0 / (1.0 + (b[k] * z[k]).exp());
            coef[k] = -b[k] * s;
            d[k] = s * (1.0 - s);
        }
        let grad = a.tr_mul(&coef) + &w * (2.0 * ridge);
        if grad.norm() < 1e-10 {
            return Some(w.as_slice().to_vec());
        }
        let mut h = a.tr_mul(&DMatrix::from_fn(a.nrows(), n, |r, c| a[(r, c)] * d[r]));
        for i in 0..n {
            h[(i, i)] += 2.0 * ridge + 1e-14;
        }
        let step = h.cholesky()?.solve(&grad);
        let f0 = value(&w);
        let mut s = 1.0;
        loop {
            let cand = &w - &step * s;
            if value(&cand) <= f0 - 1e-4 * s * grad.dot(&step) || s < 1e-12 {
                w = cand;
                break;
            }
            s *= 0.5;
        }
    }
    None
}

fn log1p_exp_neg(x: f64) -> f64 {
    // log(1 + exp(−x))
    if x < 0.0 {
        -x + x.exp().ln_1p()
    } else {
        (-x).exp().ln_1p()
    }
}

/// Exact optimum by enumerating all `2^N` indicator patterns.
pub fn solve_integer(inst: &MipInstance, opts: &SolverOptions) -> Result<Solution> {
    check_enumerable(inst)?;
    let loss = DataLoss::new(inst);
    let groups = inst.groups.len();
    let mut best: Option<Solution> = None;
    for pattern in 0u32..(1 << groups) {
        let y: Vec<bool> = (0..groups).map(|i| pattern & (1 << i) != 0).collect();
        let support: Vec<usize> =
            inst.groups.iter().zip(&y).filter(|(_, &on)| on).flat_map(|(g, _)| g.iter().copied()).collect();
        let (w, converged) = solve_support(inst, &loss, &support, opts);
        let value = integer_objective(inst, &loss, &w, &y);
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(Solution {
                value,
                w,
                y: y.iter().map(|&v| f64::from(u8::from(v))).collect(),
                converged,
                iterations: pattern as usize + 1,
            });
        }
    }
    let best = best.expect("at least one pattern");
    if !best.value.is_finite() {
        return Err(Error::Solver("integer optimum is not finite".into()));
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// projected-form relaxations

/// Continuous big-M relaxation, minimized over `w` with
/// `y_i = ‖w^i‖∞/M` substituted.
pub fn solve_bigm_relaxation(inst: &MipInstance, opts: &SolverOptions) -> Result<Solution> {
    inst.validate()?;
    let loss = DataLoss::new(inst);
    let ridge = inst.lambda * inst.alpha;
    let linf_coef = inst.lambda * (1.0 - inst.alpha) / inst.big_m;
    let smooth = |w: &[f64]| {
        let (f, mut g) = loss.value_grad(w);
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj += 2.0 * ridge * wj;
        }
        (f + ridge * sum_sq(w), g)
    };
    let prox = |v: &[f64], step: f64| apply_group_prox(inst, v, |vg| prox_linf_box(vg, step * linf_coef, inst.big_m));
    let objective = |w: &[f64]| bigm_objective(inst, &loss, w);
    let problem = Composite { lipschitz: loss.lipschitz() + 2.0 * ridge, smooth: &smooth, prox: &prox, objective: &objective };
    let out = best_of(starts(inst, opts, "bigm-start").iter().map(|x0| fista(&problem, x0, opts.max_iter, opts.tol)));
    let y = (0..inst.groups.len()).map(|g| (group_linf(inst, &out.x, g) / inst.big_m).min(1.0)).collect();
    Ok(Solution { value: out.value, w: out.x, y, converged: out.converged, iterations: out.iterations })
}

/// Perspective relaxation in projected form, `min L(w) + λ Σ z(w^i)`,
/// unweighted across groups. `y` holds the implied `ỹ` per group.
pub fn solve_pr_relaxation(inst: &MipInstance, opts: &SolverOptions) -> Result<Solution> {
    inst.validate()?;
    let loss = DataLoss::new(inst);
    let smooth = |w: &[f64]| loss.value_grad(w);
    let prox = |v: &[f64], step: f64| {
        apply_group_prox(inst, v, |vg| prox_spr(vg, step * inst.lambda, inst.alpha, inst.big_m))
    };
    let objective = |w: &[f64]| pr_objective(inst, &loss, w).unwrap_or(f64::INFINITY);
    let problem = Composite { lipschitz: loss.lipschitz(), smooth: &smooth, prox: &prox, objective: &objective };
    let out = best_of(starts(inst, opts, "pr-start").iter().map(|x0| fista(&problem, x0, opts.max_iter, opts.tol)));
    let y = inst
        .groups
        .iter()
        .map(|g| {
            let wg: Vec<f64> = g.iter().map(|&j| out.x[j]).collect();
            spr::ytilde(&wg, inst.alpha, inst.big_m).map(|(y, _)| y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Solution { value: out.value, w: out.x, y, converged: out.converged, iterations: out.iterations })
}

// ---------------------------------------------------------------------------
// joint (w, y) form

/// Minimizes the relaxation jointly over `(w, y)` by a primal log-barrier
/// Newton method on the constraints `M·y_i ± w_j > 0`, `1 − y_i > 0`.
/// With `perspective` the quadratic term is `Σ w_j²/y_i`, otherwise `Σ w_j²`.
pub fn solve_joint(inst: &MipInstance, perspective: bool) -> Result<Solution> {
    inst.validate()?;
    let loss = DataLoss::new(inst);
    let (n, groups) = (inst.cols(), inst.groups.len());
    let owner = inst.group_of();
    let dim = n + groups;
    let big_m = inst.big_m;
    let (lam_a, lam_b) = (inst.lambda * inst.alpha, inst.lambda * (1.0 - inst.alpha));
    let constraints = (2 * n + groups) as f64;

    let feasible = |x: &[f64]| -> bool {
        (0..n).all(|j| {
            let y = x[n + owner[j]];
            big_m * y - x[j] > 0.0 && big_m * y + x[j] > 0.0
        }) && (0..groups).all(|i| x[n + i] < 1.0)
    };
    let objective = |x: &[f64]| -> f64 {
        let (w, y) = x.split_at(n);
        let quad: f64 = (0..n)
            .map(|j| if perspective { w[j] * w[j] / y[owner[j]] } else { w[j] * w[j] })
            .sum();
        loss.value(w) + lam_a * quad + lam_b * y.iter().sum::<f64>()
    };
    let barrier_value = |x: &[f64], t: f64| -> f64 {
        let mut phi = t * objective(x);
        for j in 0..n {
            let y = x[n + owner[j]];
            phi -= (big_m * y - x[j]).ln() + (big_m * y + x[j]).ln();
        }
        for i in 0..groups {
            phi -= (1.0 - x[n + i]).ln();
        }
        phi
    };

    let mut x = vec![0.0; dim];
    for v in &mut x[n..] {
        *v = 0.5;
    }
    let mut t = 1.0;
    let mut newton_steps = 0;
    let mut converged = true;
    while constraints / t > 1e-11 {
        for _ in 0..200 {
            newton_steps += 1;
            let (w, y) = x.split_at(n);
            let (_, lg) = loss.value_grad(w);
            let lh = loss.hessian(w);
            let mut g = DVector::zeros(dim);
            let mut h = DMatrix::zeros(dim, dim);
            for r in 0..n {
                g[r] = t * lg[r];
                for c in 0..n {
                    h[(r, c)] = t * lh[(r, c)];
                }
            }
            for j in 0..n {
                let gi = n + owner[j];
                let yv = y[owner[j]];
                if perspective {
                    g[j] += t * lam_a * 2.0 * w[j] / yv;
                    g[gi] -= t * lam_a * w[j] * w[j] / (yv * yv);
                    h[(j, j)] += t * lam_a * 2.0 / yv;
                    h[(j, gi)] -= t * lam_a * 2.0 * w[j] / (yv * yv);
                    h[(gi, j)] -= t * lam_a * 2.0 * w[j] / (yv * yv);
                    h[(gi, gi)] += t * lam_a * 2.0 * w[j] * w[j] / (yv * yv * yv);
                } else {
                    g[j] += t * lam_a * 2.0 * w[j];
                    h[(j, j)] += t * lam_a * 2.0;
                }
                // M y − w > 0 and M y + w > 0
                for sign in [-1.0, 1.0] {
                    let c = big_m * yv + sign * w[j];
                    let (aw, ay) = (sign, big_m);
                    g[j] -= aw / c;
                    g[gi] -= ay / c;
                    let c2 = c * c;
                    h[(j, j)] += aw * aw / c2;
                    h[(j, gi)] += aw * ay / c2;
                    h[(gi, j)] += aw * ay / c2;
                    h[(gi, gi)] += ay * ay / c2;
                }
            }
            for i in 0..groups {
                let gi = n + i;
                g[gi] += t * lam_b;
                let c = 1.0 - y[i];
                g[gi] += 1.0 / c;
                h[(gi, gi)] += 1.0 / (c * c);
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    let mut hr = h;
                    let shift = 1e-12 * (1.0 + hr.diagonal().amax());
                    for d in 0..dim {
                        hr[(d, d)] += shift;
                    }
                    hr.cholesky()
                        .ok_or_else(|| Error::Solver("barrier Hessian is not positive definite".into()))?
                        .solve(&g)
                }
            };
            let decrement = g.dot(&step);
            if decrement / 2.0 <= 1e-14 {
                break;
            }
            let phi0 = barrier_value(&x, t);
            let mut s = 1.0;
            let mut accepted = false;
            while s > 1e-16 {
                let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi - s * di).collect();
                if feasible(&cand) && barrier_value(&cand, t) <= phi0 - 0.25 * s * decrement {
                    x = cand;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        t *= 10.0;
        if newton_steps > 20_000 {
            converged = false;
            break;
        }
    }
    let (w, y) = x.split_at(n);
    let value = objective(&x);
    if !value.is_finite() {
        return Err(Error::Solver("joint relaxation diverged".into()));
    }
    Ok(Solution { value, w: w.to_vec(), y: y.to_vec(), converged, iterations: newton_steps })
}
