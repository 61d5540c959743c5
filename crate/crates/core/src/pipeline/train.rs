use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, Phase, PipelineConfig, Regularizer, RunRecord, TrainConfig, RECORD_SCHEMA_VERSION};
use crate::dataio::{augment, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::groups::{
    apply_mask, build_filter_partition, decide_pruning_with, estimate_layer_bounds, report, EntityPartition,
    PartitionPolicy, PruneMask, PruneReport, PruneRule, ReportMetrics,
};
use crate::nnet::{optim::SgdMomentum, Network};
use crate::seed;
use crate::spr::{aggregate_penalty, baseline_penalty, BaselineKind, SprParams};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 512;

/// Regularizer value and gradient; `None` when it contributes nothing.
fn penalty(reg: Regularizer, params: &[f64], partition: Option<&EntityPartition>) -> Result<Option<(f64, Vec<f64>)>> {
    let need = || partition.ok_or_else(|| Error::InvalidArgument(format!("{reg:?} needs an entity partition")));
    Ok(match reg {
        Regularizer::None => None,
        Regularizer::Spr { lambda, .. }
        | Regularizer::L2 { lambda }
        | Regularizer::L1 { lambda }
        | Regularizer::GroupLasso { lambda }
            if lambda == 0.0 =>
        {
            None
        }
        Regularizer::Spr { lambda, alpha } => {
            let agg = aggregate_penalty(params, need()?, &SprParams::new(lambda, alpha)?)?;
            Some((agg.value, agg.grad))
        }
        Regularizer::L2 { lambda } => {
            let value = lambda * params.iter().map(|w| w * w).sum::<f64>();
            Some((value, params.iter().map(|w| 2.0 * lambda * w).collect()))
        }
        Regularizer::L1 { lambda } => Some(baseline_penalty(BaselineKind::L1, params, need()?, lambda)?),
        Regularizer::GroupLasso { lambda } => {
            Some(baseline_penalty(BaselineKind::GroupLasso, params, need()?, lambda)?)
        }
    })
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(reason) => Error::Divergence { epoch, reason },
        other => other,
    }
}

/// One training run in progress; lets the benchmark interleave two runs.
struct Session<'a> {
    net: &'a mut Network,
    opt: SgdMomentum,
    partition: Option<&'a EntityPartition>,
    frozen: Option<&'a [bool]>,
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    augment_seed: u64,
}

impl<'a> Session<'a> {
    fn new(
        net: &'a mut Network,
        partition: Option<&'a EntityPartition>,
        frozen: Option<&'a [bool]>,
        data: &'a Dataset,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if let Some(f) = frozen {
            if f.len() != net.param_count() {
                return Err(Error::Length { expected: net.param_count(), got: f.len() });
            }
        }
        let augment_seed = seed::derive_indexed(cfg.seed, "augment", &[cfg.phase.stream()]);
        Ok(Self { opt: SgdMomentum::new(net.param_count(), cfg.momentum)?, net, partition, frozen, data, cfg, augment_seed })
    }

    fn epoch(&mut self, epoch: usize, test: Option<&Dataset>) -> Result<EpochRecord> {
        let cfg = self.cfg;
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut seed::rng_indexed(cfg.seed, "shuffle", &[cfg.phase.stream(), epoch as u64]));
        let images = self.data.inputs.shape().len() == 4 && cfg.augment != AugmentPolicy::None;

        let start = Instant::now();
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = self.data.inputs.select_rows(rows)?;
            if images {
                x = augment(&x, cfg.augment, cfg.pad, self.augment_seed, epoch, b)?;
            }
            let labels: Vec<usize> = rows.iter().map(|&r| self.data.labels[r]).collect();
            let mut bundle = self.net.loss_and_grad(&x, &labels).map_err(diverged(epoch))?;
            if !bundle.loss.is_finite() {
                return Err(Error::Divergence { epoch, reason: format!("loss {} at batch {b}", bundle.loss) });
            }
            if let Some((_, g)) = penalty(cfg.regularizer, &self.net.get_params(), self.partition)? {
                for (a, p) in bundle.grads.iter_mut().zip(g) {
                    *a += p;
                }
            }
            self.opt.step(self.net, &bundle.grads, lr, self.frozen).map_err(diverged(epoch))?;
            loss_sum += bundle.loss * rows.len() as f64;
            correct += bundle.correct;
        }
        let wall_time = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

        let pen = penalty(cfg.regularizer, &self.net.get_params(), self.partition)?.map_or(0.0, |(v, _)| v);
        let n = self.data.len() as f64;
        Ok(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_accuracy: 100.0 * correct as f64 / n,
            test_accuracy: test.map(|t| evaluate(self.net, t)).transpose()?,
            penalty: pen,
            wall_time,
        })
    }
}

/// Minibatch SGD with momentum on cross-entropy plus the configured
/// regularizer. Parameters flagged in `frozen` never move. On divergence the
/// network keeps the last finite parameters and the error carries the epoch.
pub fn train(
    net: &mut Network,
    partition: Option<&EntityPartition>,
    frozen: Option<&[bool]>,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    let mut session = Session::new(net, partition, frozen, data, cfg)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let rec = session.epoch(e, test)?;
        log::debug!(
            "{:?} epoch {e}: loss {:.4} train {:.2}% penalty {:.4e}",
            cfg.phase,
            rec.train_loss,
            rec.train_accuracy,
            rec.penalty
        );
        epochs.push(rec);
    }
    Ok(RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        phase: cfg.phase,
        config: cfg.clone(),
        epochs,
        report: None,
        checkpoints: Vec::new(),
    })
}

/// Penalized training phase.
pub fn train_phase1(
    net: &mut Network,
    partition: &EntityPartition,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    if cfg.phase != Phase::Spr {
        return Err(Error::InvalidArgument(format!("phase 1 expects an spr config, got {:?}", cfg.phase)));
    }
    train(net, Some(partition), None, data, test, cfg)
}

/// Fine-tunes the survivors of `mask`; pruned parameters must already be
/// zero and stay exactly zero.
pub fn train_phase2(
    net: &mut Network,
    partition: &EntityPartition,
    mask: &PruneMask,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    if cfg.phase != Phase::Finetune {
        return Err(Error::InvalidArgument(format!("phase 2 expects a finetune config, got {:?}", cfg.phase)));
    }
    mask.check(partition)?;
    let params = net.get_params();
    if let Some(j) = (0..params.len()).find(|&j| mask.frozen[j] && params[j] != 0.0) {
        return Err(Error::InvalidArgument(format!("pruned parameter {j} is not zero; apply the mask first")));
    }
    train(net, Some(partition), Some(&mask.frozen), data, test, cfg)
}

/// Number of rows whose label ranks among the top `k` scores; ties go to
/// the lower class index.
pub fn topk_hits(logits: &Tensor, labels: &[usize], k: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let ahead = row.iter().enumerate().filter(|&(c, &v)| v > row[y] || (v == row[y] && c < y)).count();
            ahead < k
        })
        .count()
}

/// Top-`k` accuracy in percent.
pub fn evaluate_topk(net: &Network, data: &Dataset, k: usize) -> Result<f64> {
    if data.is_empty() || k == 0 {
        return Err(Error::InvalidArgument("evaluation needs samples and k >= 1".into()));
    }
    let mut hits = 0;
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = net.forward(&data.inputs.select_rows(chunk)?)?;
        let labels: Vec<usize> = chunk.iter().map(|&r| data.labels[r]).collect();
        hits += topk_hits(&logits, &labels, k);
    }
    Ok(100.0 * hits as f64 / data.len() as f64)
}

/// Top-1 accuracy in percent.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    evaluate_topk(net, data, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub mask: PruneMask,
    pub report: PruneReport,
}

/// Decides, reports and applies the pruning mask. Accuracies before and
/// after are measured on `test` when given.
pub fn prune_step(
    net: &mut Network,
    partition: &EntityPartition,
    rule: PruneRule,
    allow_degenerate: bool,
    test: Option<&Dataset>,
) -> Result<PruneOutcome> {
    let mask = decide_pruning_with(net, partition, rule)?;
    if mask.pruned_count() == partition.len() {
        if !allow_degenerate {
            return Err(Error::DegeneratePruning);
        }
        log::warn!("every prunable entity was pruned");
    }
    let before = net.get_params();
    let accuracy_before = test.map(|t| evaluate(net, t)).transpose()?;
    apply_mask(net, &mask)?;
    let accuracy_after = test.map(|t| evaluate(net, t)).transpose()?;
    let report = report(&before, partition, &mask, rule.weight_tol(), ReportMetrics { accuracy_before, accuracy_after })?;
    Ok(PruneOutcome { mask, report })
}

/// Trains the unpenalized reference from the pipeline's initialization.
pub fn train_reference(cfg: &PipelineConfig, data: &Dataset, test: Option<&Dataset>) -> Result<(Network, RunRecord)> {
    let mut net = cfg.model.build(data.sample_shape(), data.classes, cfg.phase1.seed)?;
    let record = train(&mut net, None, None, data, test, &cfg.reference_config())?;
    Ok((net, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub phase1: RunRecord,
    pub finetune: RunRecord,
    pub report: PruneReport,
    pub accuracy_phase1: f64,
    pub accuracy_pruned: f64,
    pub accuracy_final: f64,
    pub network: Network,
    pub partition: EntityPartition,
    pub mask: PruneMask,
}

/// Full procedure from the shared initialization: bounds from `reference`,
/// penalized training, pruning, fine-tuning.
pub fn run_pipeline(cfg: &PipelineConfig, reference: &Network, data: &Dataset, test: &Dataset) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let mut net = cfg.model.build(data.sample_shape(), data.classes, cfg.phase1.seed)?;
    let mut partition = build_filter_partition(&net, cfg.partition)?;
    let bounds = estimate_layer_bounds(reference, &net, &partition)?;
    partition.set_layer_bounds(&bounds)?;

    let phase1 = train_phase1(&mut net, &partition, data, Some(test), &cfg.phase1)?;
    let pruned = prune_step(&mut net, &partition, cfg.prune_rule, cfg.allow_degenerate, Some(test))?;
    let mut finetune = train_phase2(&mut net, &partition, &pruned.mask, data, Some(test), &cfg.finetune)?;
    let accuracy_final = evaluate(&net, test)?;
    finetune.report = Some(pruned.report.clone());
    Ok(PipelineOutcome {
        phase1,
        finetune,
        accuracy_phase1: pruned.report.accuracy_before.unwrap_or(f64::NAN),
        accuracy_pruned: pruned.report.accuracy_after.unwrap_or(f64::NAN),
        accuracy_final,
        report: pruned.report,
        network: net,
        partition,
        mask: pruned.mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub epochs: usize,
    pub plain_times: Vec<f64>,
    pub spr_times: Vec<f64>,
    pub plain_mean: f64,
    pub spr_mean: f64,
    /// `spr_mean / plain_mean`.
    pub ratio: f64,
    pub plain_losses: Vec<f64>,
    pub spr_losses: Vec<f64>,
}

/// Times `epochs` epochs with and without the penalty from the same
/// initialization, alternating between the two runs epoch by epoch.
pub fn bench(
    model: super::ModelConfig,
    policy: PartitionPolicy,
    cfg: &TrainConfig,
    data: &Dataset,
    epochs: usize,
) -> Result<BenchResult> {
    let spr_cfg = TrainConfig { phase: Phase::Spr, ..cfg.clone() };
    let plain_cfg = TrainConfig { phase: Phase::Baseline, regularizer: Regularizer::None, ..cfg.clone() };
    if epochs == 0 {
        return Err(Error::InvalidArgument("bench needs at least one epoch".into()));
    }
    let mut plain_net = model.build(data.sample_shape(), data.classes, cfg.seed)?;
    let mut spr_net = plain_net.clone();
    let mut partition = build_filter_partition(&spr_net, policy)?;
    let bounds = estimate_layer_bounds(&spr_net, &spr_net, &partition)?;
    partition.set_layer_bounds(&bounds)?;

    let mut plain = Session::new(&mut plain_net, None, None, data, &plain_cfg)?;
    let mut spr = Session::new(&mut spr_net, Some(&partition), None, data, &spr_cfg)?;
    let (mut plain_times, mut spr_times, mut plain_losses, mut spr_losses) = (vec![], vec![], vec![], vec![]);
    for e in 0..epochs {
        let p = plain.epoch(e, None)?;
        let s = spr.epoch(e, None)?;
        plain_times.push(p.wall_time);
        spr_times.push(s.wall_time);
        plain_losses.push(p.train_loss);
        spr_losses.push(s.train_loss);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (plain_mean, spr_mean) = (mean(&plain_times), mean(&spr_times));
    Ok(BenchResult {
        epochs,
        ratio: spr_mean / plain_mean,
        plain_mean,
        spr_mean,
        plain_times,
        spr_times,
        plain_losses,
        spr_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic_split, SyntheticKind};
    use crate::groups::PartitionPolicy;
    use crate::pipeline::ModelConfig;

    fn quick(spr: SprParams, epochs: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(spr, 7);
        cfg.model = ModelConfig::Mlp { hidden: [12, 0] };
        cfg.partition = PartitionPolicy::FiltersAndDenseRows;
        cfg.phase1.epochs = epochs;
        cfg.phase1.batch_size = 16;
        cfg.phase1.lr_milestones = vec![];
        cfg.finetune.epochs = epochs;
        cfg.finetune.batch_size = 16;
        cfg.finetune.lr_milestones = vec![];
        cfg
    }

    fn blobs() -> (Dataset, Dataset) {
        gen_synthetic_split(SyntheticKind::Blobs, 60, 30, 3, 0.3, 1).unwrap()
    }

    #[test]
    fn topk_ties_and_recount() {
        let logits = Tensor::new(vec![3, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 5.0, 1.0, 3.0]).unwrap();
        // row 0 ties 0/1: class 0 wins; row 1 ties 1/2: class 1 wins
        assert_eq!(topk_hits(&logits, &[0, 1, 0], 1), 3);
        assert_eq!(topk_hits(&logits, &[1, 2, 1], 1), 0);
        assert_eq!(topk_hits(&logits, &[1, 2, 1], 2), 2);
        assert_eq!(topk_hits(&logits, &[2, 0, 1], 3), 3);
    }

    #[test]
    fn zero_lambda_matches_baseline_bit_for_bit() {
        let (train_set, test) = blobs();
        let cfg = quick(SprParams::new(0.0, 0.5).unwrap(), 3);
        let (reference, ref_rec) = train_reference(&cfg, &train_set, Some(&test)).unwrap();
        let mut net = cfg.model.build(train_set.sample_shape(), 3, 7).unwrap();
        let part = build_filter_partition(&net, cfg.partition).unwrap();
        let rec = train_phase1(&mut net, &part, &train_set, Some(&test), &cfg.phase1).unwrap();
        assert_eq!(net.get_params(), reference.get_params());
        let strip = |r: &RunRecord| r.epochs.iter().map(|e| (e.train_loss, e.test_accuracy)).collect::<Vec<_>>();
        assert_eq!(strip(&rec), strip(&ref_rec));
    }

    #[test]
    fn pipeline_is_reproducible_and_keeps_pruned_weights_at_zero() {
        let (train_set, test) = blobs();
        let cfg = quick(SprParams::new(2.0, 0.3).unwrap(), 4);
        let (reference, _) = train_reference(&cfg, &train_set, Some(&test)).unwrap();
        let a = run_pipeline(&cfg, &reference, &train_set, &test).unwrap();
        let b = run_pipeline(&cfg, &reference, &train_set, &test).unwrap();
        assert_eq!(a.phase1.without_timings(), b.phase1.without_timings());
        assert_eq!(a.network, b.network);
        let params = a.network.get_params();
        assert!(a.mask.frozen.iter().zip(&params).all(|(&f, &w)| !f || w == 0.0));
        assert_eq!(a.report.pruned_entities, a.mask.pruned_count());
        // fine-tune penalty is the plain l2 value
        let l2: f64 = 2.0 * 0.3 * params.iter().map(|w| w * w).sum::<f64>();
        assert!((a.finetune.epochs.last().unwrap().penalty - l2).abs() < 1e-12);
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let (train_set, _) = blobs();
        let cfg = quick(SprParams::new(1.0, 0.5).unwrap(), 0);
        let mut net = cfg.model.build(train_set.sample_shape(), 3, 7).unwrap();
        let part = build_filter_partition(&net, cfg.partition).unwrap();
        let mask = PruneMask::empty(&part);
        let before = net.clone();
        let rec = train_phase2(&mut net, &part, &mask, &train_set, None, &cfg.finetune).unwrap();
        assert!(rec.epochs.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn unmasked_weights_are_rejected_in_phase2() {
        let (train_set, _) = blobs();
        let cfg = quick(SprParams::new(1.0, 0.5).unwrap(), 1);
        let mut net = cfg.model.build(train_set.sample_shape(), 3, 7).unwrap();
        let part = build_filter_partition(&net, cfg.partition).unwrap();
        let mask = PruneMask::from_verdicts(&part, vec![true; part.len()]);
        assert!(train_phase2(&mut net, &part, &mask, &train_set, None, &cfg.finetune).is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (train_set, _) = blobs();
        let mut cfg = quick(SprParams::new(0.0, 0.5).unwrap(), 3).reference_config();
        cfg.lr0 = 1e300;
        let mut net = ModelConfig::Mlp { hidden: [12, 0] }.build(&[2], 3, 0).unwrap();
        let err = train(&mut net, None, None, &train_set, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, .. }), "{err}");
        assert!(net.get_params().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn zero_filter_is_the_only_pruned_entity() {
        let (train_set, test) = blobs();
        let mut net = ModelConfig::Mlp { hidden: [4, 0] }.build(&[2], 3, 0).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::FiltersAndDenseRows).unwrap();
        let mut params = net.get_params();
        for &j in &part.entities()[2].weight_indices {
            params[j] = 0.0;
        }
        net.set_params(&params).unwrap();
        let out = prune_step(&mut net, &part, PruneRule::default(), false, Some(&test)).unwrap();
        assert_eq!(out.mask.entity_pruned, vec![false, false, true, false]);
        assert_eq!(out.report.pruned_params, 2);
        let _ = train_set;
    }

    #[test]
    fn bench_with_zero_lambda_has_identical_losses() {
        let (train_set, _) = blobs();
        let mut cfg = quick(SprParams::new(0.0, 0.5).unwrap(), 2).phase1;
        cfg.batch_size = 8;
        assert!(bench(ModelConfig::Mlp { hidden: [8, 0] }, PartitionPolicy::Filters, &cfg, &train_set, 2).is_err());
        let r = bench(ModelConfig::Mlp { hidden: [8, 0] }, PartitionPolicy::FiltersAndDenseRows, &cfg, &train_set, 2).unwrap();
        assert_eq!(r.plain_losses, r.spr_losses);
        let img = crate::dataio::gen_synthetic(SyntheticKind::TinyImages, 24, 3, 0.2, 0).unwrap();
        let r = bench(ModelConfig::ConvnetS { c1: 2, c2: 4 }, PartitionPolicy::Filters, &cfg, &img, 2).unwrap();
        assert_eq!(r.plain_losses, r.spr_losses);
        assert!(r.ratio > 0.0);
    }
}
