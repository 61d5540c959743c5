//! Two-phase procedure: train with the penalty, prune, fine-tune the
//! survivors; plus grid search and epoch-time benchmarking.

mod grid;
mod train;

use serde::{Deserialize, Serialize};

pub use grid::{grid_csv, grid_search, nondecreasing_in_lambda, CellSummary, GridCell, GRID_CSV_HEADER};
pub use train::{
    bench, evaluate, evaluate_topk, prune_step, run_pipeline, topk_hits, train, train_phase1, train_phase2,
    train_reference, BenchResult, PipelineOutcome, PruneOutcome,
};

use crate::dataio::AugmentPolicy;
use crate::error::{Error, Result};
use crate::groups::{PartitionPolicy, PruneRule};
use crate::nnet::Network;
use crate::spr::SprParams;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Spr,
    Finetune,
}

impl Phase {
    /// Baseline and penalized runs share random streams, so a zero-strength
    /// penalty reproduces the baseline exactly.
    fn stream(self) -> u64 {
        match self {
            Self::Baseline | Self::Spr => 0,
            Self::Finetune => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regularizer {
    None,
    Spr { lambda: f64, alpha: f64 },
    L2 { lambda: f64 },
    L1 { lambda: f64 },
    GroupLasso { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub seed: u64,
    pub regularizer: Regularizer,
    pub augment: AugmentPolicy,
    pub pad: usize,
}

impl TrainConfig {
    /// Desk-scale penalized phase: 60 epochs, milestones 24/40/46/50.
    pub fn phase1(spr: SprParams, seed: u64) -> Self {
        Self {
            phase: Phase::Spr,
            epochs: 60,
            batch_size: 64,
            lr0: 0.05,
            lr_milestones: vec![24, 40, 46, 50],
            lr_factor: 0.1,
            momentum: 0.9,
            seed,
            regularizer: Regularizer::Spr { lambda: spr.lambda, alpha: spr.alpha },
            augment: AugmentPolicy::CropFlip,
            pad: crate::dataio::DEFAULT_PAD,
        }
    }

    /// Same schedule without any penalty.
    pub fn baseline(seed: u64) -> Self {
        Self { phase: Phase::Baseline, regularizer: Regularizer::None, ..Self::phase1(SprParams { lambda: 0.0, alpha: 0.0 }, seed) }
    }

    /// Fine-tuning: 30 epochs restarting at `lr0 / 10`, milestones 8/15/23,
    /// with the `λα‖w‖²` term only.
    pub fn finetune_from(phase1: &Self) -> Self {
        let l2 = match phase1.regularizer {
            Regularizer::Spr { lambda, alpha } => lambda * alpha,
            _ => 0.0,
        };
        Self {
            phase: Phase::Finetune,
            epochs: 30,
            lr0: phase1.lr0 / 10.0,
            lr_milestones: vec![8, 15, 23],
            regularizer: Regularizer::L2 { lambda: l2 },
            ..phase1.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} must lie in (0, 1)", self.lr_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.lr_milestones));
        }
        let lambda = match self.regularizer {
            Regularizer::None => 0.0,
            Regularizer::Spr { lambda, alpha } => {
                SprParams::new(lambda, alpha)?;
                lambda
            }
            Regularizer::L2 { lambda } | Regularizer::L1 { lambda } | Regularizer::GroupLasso { lambda } => lambda,
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return bad(format!("regularization strength {lambda} must be >= 0"));
        }
        let ok = match self.phase {
            Phase::Spr => matches!(self.regularizer, Regularizer::Spr { .. }),
            Phase::Finetune => matches!(self.regularizer, Regularizer::L2 { .. } | Regularizer::None),
            Phase::Baseline => !matches!(self.regularizer, Regularizer::Spr { .. }),
        };
        if !ok {
            return bad(format!("regularizer {:?} does not belong to phase {:?}", self.regularizer, self.phase));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr0 * self.lr_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    ConvnetS { c1: usize, c2: usize },
    Mlp { hidden: [usize; 2] },
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::ConvnetS { c1: 8, c2: 16 }
    }
}

impl ModelConfig {
    /// Builds the network for samples of shape `sample_shape`.
    pub fn build(&self, sample_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
        match (*self, sample_shape) {
            (Self::ConvnetS { c1, c2 }, &[c, h, w]) if h == w => Network::convnet_s(c, h, c1, c2, classes, seed),
            (Self::ConvnetS { .. }, other) => {
                Err(Error::Shape(format!("ConvNet-S needs square C×H×W samples, got {other:?}")))
            }
            (Self::Mlp { hidden }, shape) => {
                let hidden: Vec<usize> = hidden.into_iter().filter(|&h| h > 0).collect();
                Network::mlp(shape.iter().product(), &hidden, classes, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub partition: PartitionPolicy,
    pub phase1: TrainConfig,
    pub finetune: TrainConfig,
    pub prune_rule: PruneRule,
    /// Downgrade "every entity pruned" from an error to a warning.
    pub allow_degenerate: bool,
    /// Fine-tuning ℓ2 coefficient; `None` means `λα`.
    pub finetune_l2: Option<f64>,
}

impl PipelineConfig {
    pub fn new(spr: SprParams, seed: u64) -> Self {
        let phase1 = TrainConfig::phase1(spr, seed);
        Self {
            model: ModelConfig::default(),
            partition: PartitionPolicy::default(),
            finetune: TrainConfig::finetune_from(&phase1),
            phase1,
            prune_rule: PruneRule::default(),
            allow_degenerate: false,
            finetune_l2: None,
        }
    }

    pub fn spr(&self) -> Result<SprParams> {
        match self.phase1.regularizer {
            Regularizer::Spr { lambda, alpha } => SprParams::new(lambda, alpha),
            other => Err(Error::InvalidArgument(format!("phase 1 needs an spr regularizer, got {other:?}"))),
        }
    }

    /// The same configuration with another `(λ, α)`; the fine-tuning ℓ2
    /// follows unless `finetune_l2` pins it.
    pub fn with_spr(&self, spr: SprParams) -> Self {
        let mut out = self.clone();
        out.phase1.regularizer = Regularizer::Spr { lambda: spr.lambda, alpha: spr.alpha };
        out.finetune.regularizer = Regularizer::L2 { lambda: self.finetune_l2.unwrap_or(spr.lambda * spr.alpha) };
        out
    }

    /// Unpenalized run that supplies the per-layer bounds and the reference
    /// accuracy.
    pub fn reference_config(&self) -> TrainConfig {
        TrainConfig { phase: Phase::Baseline, regularizer: Regularizer::None, ..self.phase1.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.phase1.validate()?;
        self.finetune.validate()?;
        self.prune_rule.validate()?;
        if self.phase1.phase != Phase::Spr || self.finetune.phase != Phase::Finetune {
            return Err(Error::InvalidArgument("pipeline phases must be spr then finetune".into()));
        }
        self.spr()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy over the epoch's (augmented) minibatches, in percent.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Regularizer value at the end of the epoch.
    pub penalty: f64,
    /// Seconds spent in the optimization steps.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub phase: Phase,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub report: Option<crate::groups::PruneReport>,
    pub checkpoints: Vec<String>,
}

impl RunRecord {
    /// Numeric content with wall-times blanked, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.epochs {
            e.wall_time = 0.0;
        }
        out
    }

    pub fn mean_epoch_time(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.wall_time).sum::<f64>() / self.epochs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let cfg = TrainConfig::phase1(SprParams::new(1.0, 0.5).unwrap(), 0);
        assert_eq!(cfg.lr_at(0), 0.05);
        assert_eq!(cfg.lr_at(23), 0.05);
        assert!((cfg.lr_at(24) - 0.005).abs() < 1e-15);
        assert!((cfg.lr_at(59) - 0.05 * 1e-4).abs() < 1e-15);
        let ft = TrainConfig::finetune_from(&cfg);
        assert_eq!((ft.epochs, ft.lr0, ft.regularizer), (30, 0.005, Regularizer::L2 { lambda: 0.5 }));
        ft.validate().unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn validation() {
        let base = TrainConfig::phase1(SprParams::new(1.0, 0.5).unwrap(), 0);
        let cases = [
            TrainConfig { lr_milestones: vec![5, 5], ..base.clone() },
            TrainConfig { lr_factor: 1.0, ..base.clone() },
            TrainConfig { momentum: 1.0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { regularizer: Regularizer::None, ..base.clone() },
            TrainConfig { phase: Phase::Finetune, ..base.clone() },
            TrainConfig { regularizer: Regularizer::Spr { lambda: 1.0, alpha: 1.5 }, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn models_build() {
        let net = ModelConfig::default().build(&[3, 8, 8], 4, 0).unwrap();
        assert_eq!(net.num_classes(), 4);
        assert!(ModelConfig::default().build(&[2], 4, 0).is_err());
        let mlp = ModelConfig::Mlp { hidden: [16, 0] }.build(&[2], 3, 0).unwrap();
        assert_eq!(mlp.param_count(), 2 * 16 + 16 + 16 * 3 + 3);
    }
}
