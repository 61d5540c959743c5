use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spr_core::checkpoint::{write_atomic, Checkpoint};
use spr_core::dataio::{apply_stats, gen_synthetic_split, load_idx, normalize, read_sprd, Dataset, Split};
use spr_core::groups::{
    build_filter_partition, decide_pruning_with, estimate_layer_bounds, EntityPartition, PruneReport, Verdict,
};
use spr_core::nnet::{LayerSpec, Network};
use spr_core::pipeline::{
    bench, evaluate, grid_csv, grid_search, prune_step, train, train_phase1, train_phase2, BenchResult, GridCell,
    RunRecord,
};
use spr_core::relax::{batch_csv, run_batch, run_instance, BatchRow, BatchSummary, MipInstance};
use spr_core::spr::entity_diagnostics;

use crate::config::{Config, DataKind, Mode};
use crate::CliError;

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

fn out_path(cfg: &Config, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(spr_core::Error::from)?;
    write_text(path, &text)
}

/// Writes the fully resolved configuration next to the run's outputs.
fn write_resolved(cfg: &Config) -> Result<(), CliError> {
    write_text(&out_path(cfg, "config.resolved.toml"), &cfg.to_toml()?)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("data.{key} is required for this data.kind")))
}

/// Loads or generates the train/test split; test data is normalized with the
/// training statistics.
pub fn load_data(cfg: &Config) -> Result<(Dataset, Dataset), CliError> {
    let d = &cfg.data;
    let (train, test) = match (cfg.synthetic_kind(), d.kind) {
        (Some(kind), _) => gen_synthetic_split(kind, d.n_train, d.n_test, d.classes, d.noise, d.seed)?,
        (None, DataKind::Idx) => (
            load_idx(required(&d.train_images, "train_images")?, required(&d.train_labels, "train_labels")?, Split::Train)?,
            load_idx(required(&d.test_images, "test_images")?, required(&d.test_labels, "test_labels")?, Split::Test)?,
        ),
        (None, _) => (read_sprd(required(&d.train_file, "train_file")?)?, read_sprd(required(&d.test_file, "test_file")?)?),
    };
    if train.sample_shape() != test.sample_shape() {
        return Err(CliError::Config(format!(
            "train samples {:?} and test samples {:?} differ in shape",
            train.sample_shape(),
            test.sample_shape()
        )));
    }
    if !d.normalize {
        return Ok((train, test));
    }
    let (train, stats) = normalize(&train)?;
    let test = apply_stats(&test, &stats)?;
    Ok((train, test))
}

/// Saves the network as `diverged.sprc` when `result` is a divergence.
fn guard<T>(cfg: &Config, net: &Network, result: spr_core::Result<T>) -> Result<T, CliError> {
    if let Err(spr_core::Error::Divergence { .. }) = &result {
        let path = out_path(cfg, "diverged.sprc");
        Checkpoint::from_network(net, "diverged").save(&path)?;
        log::error!("training diverged; last finite parameters in {}", path.display());
    }
    Ok(result?)
}

fn save(cfg: &Config, ckpt: Checkpoint, name: &str, record: &mut RunRecord) -> Result<(), CliError> {
    let path = out_path(cfg, name);
    ckpt.save(&path)?;
    record.checkpoints.push(path.display().to_string());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutput {
    pub schema_version: u32,
    pub mode: Mode,
    pub baseline: RunRecord,
    pub accuracy_baseline: f64,
    pub phase1: Option<RunRecord>,
    pub accuracy_phase1: Option<f64>,
    pub report: Option<PruneReport>,
    pub finetune: Option<RunRecord>,
    pub accuracy_final: Option<f64>,
}

impl TrainOutput {
    pub fn summary(&self) -> String {
        let mut s = format!("baseline {:.2}%", self.accuracy_baseline);
        if let Some(a) = self.accuracy_phase1 {
            let _ = write!(s, ", phase 1 {a:.2}%");
        }
        if let Some(r) = &self.report {
            let _ = write!(s, ", pruned {}", r.summary());
        }
        if let Some(a) = self.accuracy_final {
            let _ = write!(s, ", final {a:.2}%");
        }
        s
    }
}

/// Trains the unpenalized reference and, depending on `mode`, the penalized
/// phase, pruning and fine-tuning. Writes `train.json`, the prune report and
/// one checkpoint per stage to `output_dir`.
pub fn cmd_train(cfg: &Config) -> Result<TrainOutput, CliError> {
    write_resolved(cfg)?;
    let pcfg = cfg.pipeline()?;
    let (data, test) = load_data(cfg)?;

    let mut reference = pcfg.model.build(data.sample_shape(), data.classes, pcfg.phase1.seed)?;
    let run = train(&mut reference, None, None, &data, Some(&test), &pcfg.reference_config());
    let mut baseline = guard(cfg, &reference, run)?;
    save(cfg, Checkpoint::from_network(&reference, "baseline"), "baseline.sprc", &mut baseline)?;
    let mut out = TrainOutput {
        schema_version: OUTPUT_SCHEMA_VERSION,
        mode: cfg.mode,
        accuracy_baseline: evaluate(&reference, &test)?,
        baseline,
        phase1: None,
        accuracy_phase1: None,
        report: None,
        finetune: None,
        accuracy_final: None,
    };

    if cfg.mode != Mode::Baseline {
        let spr = pcfg.spr()?;
        let mut net = pcfg.model.build(data.sample_shape(), data.classes, pcfg.phase1.seed)?;
        let mut partition = build_filter_partition(&net, pcfg.partition)?;
        partition.set_layer_bounds(&estimate_layer_bounds(&reference, &net, &partition)?)?;
        let run = train_phase1(&mut net, &partition, &data, Some(&test), &pcfg.phase1);
        let mut phase1 = guard(cfg, &net, run)?;
        let ckpt = Checkpoint::from_network(&net, "phase1").with_partition(partition.clone()).with_spr(spr);
        save(cfg, ckpt, "phase1.sprc", &mut phase1)?;
        out.accuracy_phase1 = Some(evaluate(&net, &test)?);
        out.phase1 = Some(phase1);

        if cfg.mode == Mode::Full {
            let pruned = prune_step(&mut net, &partition, pcfg.prune_rule, pcfg.allow_degenerate, Some(&test))?;
            write_text(&out_path(cfg, "report.csv"), &pruned.report.to_csv())?;
            write_text(&out_path(cfg, "report.json"), &pruned.report.to_json()?)?;
            let run = train_phase2(&mut net, &partition, &pruned.mask, &data, Some(&test), &pcfg.finetune);
            let mut finetune = guard(cfg, &net, run)?;
            finetune.report = Some(pruned.report.clone());
            let ckpt = Checkpoint::from_network(&net, "finetune")
                .with_partition(partition)
                .with_mask(pruned.mask)
                .with_spr(spr);
            save(cfg, ckpt, "final.sprc", &mut finetune)?;
            out.accuracy_final = Some(evaluate(&net, &test)?);
            out.report = Some(pruned.report);
            out.finetune = Some(finetune);
        }
    }
    write_json(&out_path(cfg, "train.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxOutput {
    pub schema_version: u32,
    pub summary: BatchSummary,
    pub rows: Vec<BatchRow>,
}

/// Verifies the relaxation ordering on a generated batch, or on the single
/// instance named by `relax.instance`. Writes `relax.csv` and `relax.json`
/// before reporting any violation.
pub fn cmd_relax(cfg: &Config) -> Result<RelaxOutput, CliError> {
    write_resolved(cfg)?;
    let opts = cfg.solver_options();
    let rows = match &cfg.relax.instance {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read instance {}: {e}", path.display())))?;
            vec![run_instance(&MipInstance::from_json(&text)?, cfg.seed, &opts)?]
        }
        None if cfg.relax.instances == 0 => return Err(CliError::Config("relax.instances is 0".into())),
        None => run_batch(cfg.seed, cfg.relax.instances, &cfg.generator(), &opts, cfg.threads)?,
    };
    for row in &rows {
        for d in &row.result.diagnostics {
            log::warn!("instance {}: {d}", row.seed);
        }
    }
    let out = RelaxOutput { schema_version: OUTPUT_SCHEMA_VERSION, summary: BatchSummary::of(&rows), rows };
    write_text(&out_path(cfg, "relax.csv"), &batch_csv(&out.rows))?;
    write_json(&out_path(cfg, "relax.json"), &out)?;
    let violations = out.summary.instances - out.summary.sandwich_ok;
    if violations > 0 {
        return Err(CliError::Ordering(violations));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOutput {
    pub schema_version: u32,
    pub accuracy_baseline: f64,
    pub cells: Vec<GridCell>,
}

/// Trains one reference, then the full pipeline for every `(λ, α)` of the
/// grid. Fails only if every cell fails.
pub fn cmd_grid(cfg: &Config) -> Result<GridOutput, CliError> {
    write_resolved(cfg)?;
    let pcfg = cfg.pipeline()?;
    let (data, test) = load_data(cfg)?;
    let mut reference = pcfg.model.build(data.sample_shape(), data.classes, pcfg.phase1.seed)?;
    let run = train(&mut reference, None, None, &data, Some(&test), &pcfg.reference_config());
    guard(cfg, &reference, run)?;
    Checkpoint::from_network(&reference, "baseline").save(&out_path(cfg, "baseline.sprc"))?;
    let cells = grid_search(&pcfg, &cfg.grid.lambdas, &cfg.grid.alphas, &reference, &data, &test, cfg.threads)?;
    let out = GridOutput {
        schema_version: OUTPUT_SCHEMA_VERSION,
        accuracy_baseline: evaluate(&reference, &test)?,
        cells,
    };
    write_text(&out_path(cfg, "grid.csv"), &grid_csv(&out.cells))?;
    write_json(&out_path(cfg, "grid.json"), &out)?;
    if out.cells.iter().all(|c| c.outcome.is_err()) {
        return Err(CliError::GridFailed);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutput {
    pub schema_version: u32,
    #[serde(flatten)]
    pub result: BenchResult,
}

/// Times penalized against plain epochs on the configured data and model.
pub fn cmd_bench(cfg: &Config) -> Result<BenchOutput, CliError> {
    write_resolved(cfg)?;
    let pcfg = cfg.pipeline()?;
    let (data, _) = load_data(cfg)?;
    let result = bench(pcfg.model, pcfg.partition, &pcfg.phase1, &data, cfg.bench.epochs)?;
    let out = BenchOutput { schema_version: OUTPUT_SCHEMA_VERSION, result };
    write_json(&out_path(cfg, "bench.json"), &out)?;
    Ok(out)
}

fn layer_name(spec: &LayerSpec) -> &'static str {
    match spec {
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::Conv2d { .. } => "conv2d",
        LayerSpec::Relu => "relu",
        LayerSpec::Maxpool2d { .. } => "maxpool2d",
        LayerSpec::Flatten => "flatten",
    }
}

/// Per-layer statistics of a checkpoint followed by per-entity penalty
/// diagnostics, both as CSV. Without a stored partition the default filter
/// partition is used with unit bounds; without a stored mask verdicts come
/// from the default pruning rule.
pub fn cmd_inspect(path: &Path, alpha: Option<f64>) -> Result<String, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let net = ckpt.network()?;
    let params = &ckpt.params;
    let partition: EntityPartition = match &ckpt.header.partition {
        Some(p) => p.clone(),
        None => build_filter_partition(&net, Default::default())?,
    };
    let alpha = alpha.or(ckpt.header.spr.map(|s| s.alpha)).unwrap_or(crate::config::SprSection::default().alpha);
    if !(0.0..1.0).contains(&alpha) {
        return Err(CliError::Config(format!("alpha {alpha} outside [0, 1)")));
    }
    let mask = match &ckpt.header.mask {
        Some(m) => m.clone(),
        None => decide_pruning_with(&net, &partition, Default::default())?,
    };

    let mut out = String::from("layer,kind,params,zeros,entities,pruned_entities\n");
    let (mut total_params, mut total_zeros, mut total_entities, mut total_pruned) = (0, 0, 0, 0);
    for (idx, layer) in net.layers().iter().enumerate() {
        let range: Vec<usize> = net.slots().iter().filter(|s| s.layer == idx).flat_map(|s| s.range()).collect();
        let zeros = range.iter().filter(|&&j| params[j] == 0.0).count();
        let entities: Vec<usize> = partition.entities().iter().filter(|e| e.layer == idx).map(|e| e.id).collect();
        let pruned = entities.iter().filter(|&&e| mask.entity_pruned[e]).count();
        let _ = writeln!(out, "{idx},{},{},{zeros},{},{pruned}", layer_name(&layer.spec), range.len(), entities.len());
        total_params += range.len();
        total_zeros += zeros;
        total_entities += entities.len();
        total_pruned += pruned;
    }
    let _ = writeln!(out, "total,,{total_params},{total_zeros},{total_entities},{total_pruned}");
    out.push('\n');

    out.push_str("entity_id,layer,u,m,l2,linf,ytilde,regime,z,z_literal,verdict\n");
    for (d, e) in entity_diagnostics(params, &partition, alpha)?.iter().zip(partition.entities()) {
        let verdict = if mask.entity_pruned[e.id] { Verdict::Pruned } else { Verdict::Kept };
        let _ = writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{},{:e},{:e},{}",
            d.entity_id,
            d.layer,
            e.u,
            e.m,
            d.l2,
            d.linf,
            d.ytilde,
            d.regime.as_str(),
            d.z,
            d.z_literal,
            verdict.as_str()
        );
    }
    Ok(out)
}
