//! Run configuration: a TOML file with optional sections, every key
//! defaulted, unknown keys rejected, and `SPR_`-prefixed environment
//! overrides (`SPR_SEED=7`, `SPR_SPR__LAMBDA=0.5`, `SPR_DATA__KIND=blobs`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spr_core::dataio::{AugmentPolicy, SyntheticKind};
use spr_core::groups::{PartitionPolicy, PruneRule};
use spr_core::pipeline::{ModelConfig, Phase, PipelineConfig, Regularizer, TrainConfig};
use spr_core::relax::{GeneratorConfig, LossKind, SolverOptions};
use spr_core::spr::SprParams;

use crate::CliError;

pub const ENV_PREFIX: &str = "SPR_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Phase1,
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Blobs,
    Moons,
    Rings,
    #[default]
    TinyImages,
    Idx,
    Sprd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Seed of the synthetic generator, independent of the training seed.
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub noise: f64,
    pub normalize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::TinyImages,
            seed: 1,
            n_train: 1000,
            n_test: 400,
            classes: 4,
            noise: 0.2,
            normalize: true,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_file: None,
            test_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    ConvnetS,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub c1: usize,
    pub c2: usize,
    /// Hidden widths of the MLP (one or two layers).
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelKind::ConvnetS, c1: 8, c2: 16, hidden: vec![32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub augment: AugmentPolicy,
    pub pad: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::phase1(SprParams { lambda: 0.0, alpha: 0.0 }, 0);
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_milestones: t.lr_milestones,
            lr_factor: t.lr_factor,
            momentum: t.momentum,
            augment: t.augment,
            pad: t.pad,
        }
    }
}

/// Fine-tuning ℓ2 coefficient: the product `λ·α` of the run, or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum L2Setting {
    #[default]
    #[serde(with = "lambda_alpha")]
    LambdaAlpha,
    Fixed(f64),
}

mod lambda_alpha {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("lambda-alpha")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        match String::deserialize(d)?.as_str() {
            "lambda-alpha" => Ok(()),
            other => Err(D::Error::custom(format!("expected \"lambda-alpha\" or a number, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    /// Defaults to `train.lr0 / 10`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr0: Option<f64>,
    pub lr_milestones: Vec<usize>,
    pub l2: L2Setting,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { epochs: 30, lr0: None, lr_milestones: vec![8, 15, 23], l2: L2Setting::LambdaAlpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprSection {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for SprSection {
    fn default() -> Self {
        Self { lambda: 1.0, alpha: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    #[default]
    FractionBelow,
    MaxAbsBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub rule: RuleKind,
    pub weight_tol: f64,
    pub entity_frac: f64,
    pub allow_degenerate: bool,
    pub partition: PartitionPolicy,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            rule: RuleKind::FractionBelow,
            weight_tol: spr_core::groups::DEFAULT_WEIGHT_TOL,
            entity_frac: spr_core::groups::DEFAULT_ENTITY_FRAC,
            allow_degenerate: false,
            partition: PartitionPolicy::Filters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { lambdas: vec![0.1, 0.5, 2.0], alphas: vec![0.1, 0.3, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub epochs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { epochs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxSection {
    pub instances: usize,
    pub m: usize,
    pub max_n: usize,
    pub max_groups: usize,
    pub loss: LossKind,
    pub noise: f64,
    pub starts: usize,
    /// Verify this single instance file instead of a generated batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
}

impl Default for RelaxSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            instances: 200,
            m: g.m,
            max_n: g.max_n,
            max_groups: g.max_groups,
            loss: g.loss,
            noise: g.noise,
            starts: SolverOptions::default().starts,
            instance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub mode: Mode,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub spr: SprSection,
    pub prune: PruneSection,
    pub grid: GridSection,
    pub bench: BenchSection,
    pub relax: RelaxSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 1,
            output_dir: PathBuf::from("out"),
            mode: Mode::Full,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            spr: SprSection::default(),
            prune: PruneSection::default(),
            grid: GridSection::default(),
            bench: BenchSection::default(),
            relax: RelaxSection::default(),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// Applies `SPR_KEY` / `SPR_SECTION__KEY` overrides to a parsed table.
pub fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), CliError> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let value = env_value(&raw);
        match path.split_once("__") {
            None => {
                table.insert(path, value);
            }
            Some((section, field)) => {
                let entry = table
                    .entry(section.to_owned())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let toml::Value::Table(t) = entry else {
                    return Err(CliError::Config(format!("{key}: `{section}` is not a section")));
                };
                t.insert(field.to_owned(), value);
            }
        }
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    pub fn from_toml_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        apply_env(&mut table, env)?;
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolved()
    }

    /// Reads the file and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_with_env(&text, std::env::vars()).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills derived defaults and checks cross-field constraints.
    pub fn resolved(mut self) -> Result<Self, CliError> {
        self.finetune.lr0.get_or_insert(self.train.lr0 / 10.0);
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.model.kind == ModelKind::Mlp && !(1..=2).contains(&self.model.hidden.len()) {
            return Err(CliError::Config("model.hidden needs one or two widths".into()));
        }
        self.pipeline()?.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn spr_params(&self) -> Result<SprParams, CliError> {
        SprParams::new(self.spr.lambda, self.spr.alpha).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model(&self) -> ModelConfig {
        match self.model.kind {
            ModelKind::ConvnetS => ModelConfig::ConvnetS { c1: self.model.c1, c2: self.model.c2 },
            ModelKind::Mlp => {
                let mut hidden = [0; 2];
                for (h, &v) in hidden.iter_mut().zip(&self.model.hidden) {
                    *h = v;
                }
                ModelConfig::Mlp { hidden }
            }
        }
    }

    pub fn prune_rule(&self) -> PruneRule {
        match self.prune.rule {
            RuleKind::FractionBelow => {
                PruneRule::FractionBelow { weight_tol: self.prune.weight_tol, entity_frac: self.prune.entity_frac }
            }
            RuleKind::MaxAbsBelow => PruneRule::MaxAbsBelow { tol: self.prune.weight_tol },
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let spr = self.spr_params()?;
        let t = &self.train;
        let phase1 = TrainConfig {
            phase: Phase::Spr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_milestones: t.lr_milestones.clone(),
            lr_factor: t.lr_factor,
            momentum: t.momentum,
            seed: self.seed,
            regularizer: Regularizer::Spr { lambda: spr.lambda, alpha: spr.alpha },
            augment: t.augment,
            pad: t.pad,
        };
        let finetune_l2 = match self.finetune.l2 {
            L2Setting::LambdaAlpha => None,
            L2Setting::Fixed(v) => Some(v),
        };
        let finetune = TrainConfig {
            phase: Phase::Finetune,
            epochs: self.finetune.epochs,
            lr0: self.finetune.lr0.unwrap_or(t.lr0 / 10.0),
            lr_milestones: self.finetune.lr_milestones.clone(),
            regularizer: Regularizer::L2 { lambda: finetune_l2.unwrap_or(spr.lambda * spr.alpha) },
            ..phase1.clone()
        };
        Ok(PipelineConfig {
            model: self.model(),
            partition: self.prune.partition,
            phase1,
            finetune,
            prune_rule: self.prune_rule(),
            allow_degenerate: self.prune.allow_degenerate,
            finetune_l2,
        })
    }

    pub fn synthetic_kind(&self) -> Option<SyntheticKind> {
        match self.data.kind {
            DataKind::Blobs => Some(SyntheticKind::Blobs),
            DataKind::Moons => Some(SyntheticKind::Moons),
            DataKind::Rings => Some(SyntheticKind::Rings),
            DataKind::TinyImages => Some(SyntheticKind::TinyImages),
            DataKind::Idx | DataKind::Sprd => None,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            m: self.relax.m,
            max_n: self.relax.max_n,
            max_groups: self.relax.max_groups,
            loss: self.relax.loss,
            noise: self.relax.noise,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { starts: self.relax.starts, seed: self.seed, ..SolverOptions::default() }
    }
}
