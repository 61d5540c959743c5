use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Largest number of groups the enumeration solver accepts (`2^12` patterns).
pub const MAX_GROUPS: usize = 12;
pub const MAX_WEIGHTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `‖Aw − b‖²`.
    #[default]
    LeastSquares,
    /// `Σ_k log(1 + exp(−b_k·a_k·w))` with `b_k ∈ {−1, +1}`.
    Logistic,
}

/// Group-sparse regression problem with one indicator per group and a
/// single magnitude bound `big_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MipInstance {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub loss: LossKind,
    pub groups: Vec<Vec<usize>>,
    pub lambda: f64,
    pub alpha: f64,
    pub big_m: f64,
}

impl MipInstance {
    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("instance: {msg}")));
        let (m, n) = (self.rows(), self.cols());
        if m == 0 || n == 0 {
            return bad("empty design matrix".into());
        }
        if n > MAX_WEIGHTS {
            return bad(format!("{n} weights exceed the limit of {MAX_WEIGHTS}"));
        }
        if self.a.iter().any(|row| row.len() != n) {
            return bad("ragged design matrix".into());
        }
        if self.b.len() != m {
            return bad(format!("{} targets for {m} rows", self.b.len()));
        }
        if self.a.iter().flatten().chain(&self.b).any(|v| !v.is_finite()) {
            return bad("non-finite data".into());
        }
        if self.loss == LossKind::Logistic && self.b.iter().any(|&v| v != 1.0 && v != -1.0) {
            return bad("logistic targets must be ±1".into());
        }
        if self.groups.is_empty() || self.groups.len() > MAX_GROUPS {
            return bad(format!("{} groups, need 1..={MAX_GROUPS}", self.groups.len()));
        }
        let mut seen = vec![false; n];
        for g in &self.groups {
            if g.is_empty() {
                return bad("empty group".into());
            }
            for &j in g {
                if j >= n || seen[j] {
                    return bad(format!("index {j} out of range or repeated"));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("groups do not cover every weight".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {}", self.alpha));
        }
        if !(self.big_m > 0.0 && self.big_m.is_finite()) {
            return bad(format!("big_m {}", self.big_m));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Group index of every weight.
    pub fn group_of(&self) -> Vec<usize> {
        let mut owner = vec![0; self.cols()];
        for (i, g) in self.groups.iter().enumerate() {
            for &j in g {
                owner[j] = i;
            }
        }
        owner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub m: usize,
    pub max_n: usize,
    pub max_groups: usize,
    pub loss: LossKind,
    pub noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { m: 20, max_n: 12, max_groups: 6, loss: LossKind::LeastSquares, noise: 0.5 }
    }
}

/// Gaussian design (columns scaled by `1/sqrt(m)`), planted group-sparse
/// truth, hyperparameters drawn so that the indicators matter.
pub fn generate(instance_seed: u64, cfg: &GeneratorConfig) -> Result<MipInstance> {
    if cfg.m == 0 || cfg.max_groups < 2 || cfg.max_groups > MAX_GROUPS || cfg.max_n < cfg.max_groups {
        return Err(Error::InvalidArgument(format!("generator config {cfg:?}")));
    }
    let mut rng = seed::rng_for(instance_seed, "relax-generate");
    let groups_n = rng.random_range(2..=cfg.max_groups);
    let max_size = (cfg.max_n / groups_n).clamp(1, 3);
    let mut groups = Vec::with_capacity(groups_n);
    let mut n = 0;
    for _ in 0..groups_n {
        let size = rng.random_range(1..=max_size);
        groups.push((n..n + size).collect::<Vec<_>>());
        n += size;
    }

    let scale = 1.0 / (cfg.m as f64).sqrt();
    let a: Vec<Vec<f64>> = (0..cfg.m)
        .map(|_| (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let mut truth = vec![0.0; n];
    let forced = rng.random_range(0..groups_n);
    for (i, g) in groups.iter().enumerate() {
        if i == forced || rng.random_bool(0.5) {
            for &j in g {
                let mag: f64 = rng.random_range(0.5..2.0);
                truth[j] = if rng.random_bool(0.5) { mag } else { -mag };
            }
        }
    }
    let b: Vec<f64> = a
        .iter()
        .map(|row| {
            let clean: f64 = row.iter().zip(&truth).map(|(x, w)| x * w).sum();
            let noisy = clean + cfg.noise * scale * rng.sample::<f64, _>(StandardNormal);
            match cfg.loss {
                LossKind::LeastSquares => noisy,
                LossKind::Logistic => {
                    if noisy >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }
        })
        .collect();
    let max_truth = truth.iter().fold(0.0f64, |acc, w| acc.max(w.abs()));
    let inst = MipInstance {
        a,
        b,
        loss: cfg.loss,
        groups,
        lambda: rng.random_range(0.1..1.0),
        alpha: rng.random_range(0.1..0.9),
        big_m: 1.5 * max_truth + 0.5,
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_respects_limits_and_is_deterministic() {
        let cfg = GeneratorConfig::default();
        for s in 0..50 {
            let inst = generate(s, &cfg).unwrap();
            assert!(inst.cols() <= 12 && inst.groups.len() <= 6 && inst.rows() == 20);
            assert_eq!(inst, generate(s, &cfg).unwrap());
        }
        let lcfg = GeneratorConfig { loss: LossKind::Logistic, ..cfg };
        let inst = generate(3, &lcfg).unwrap();
        assert!(inst.b.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let inst = generate(11, &GeneratorConfig::default()).unwrap();
        let back = MipInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
        let bad = r#"{"a": [[1.0]], "b": [1.0], "groups": [[0], [0]], "lambda": 1, "alpha": 0.5, "big_m": 2}"#;
        assert!(MipInstance::from_json(bad).is_err());
        let unknown = r#"{"a": [[1.0]], "b": [1.0], "groups": [[0]], "lambda": 1, "alpha": 0.5, "big_m": 2, "x": 1}"#;
        assert!(MipInstance::from_json(unknown).is_err());
    }
}
