//! Prunable entities: the partition of the parameter vector, per-layer
//! bounds, pruning verdicts and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{LayerSpec, Network, ParamRole};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default magnitude under which a single weight counts as pruned.
pub const DEFAULT_WEIGHT_TOL: f64 = 1e-4;
/// Default share of pruned weights above which a whole entity is pruned.
pub const DEFAULT_ENTITY_FRAC: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub layer: usize,
    pub weight_indices: Vec<usize>,
    /// Bias entry zeroed together with the entity when it is pruned.
    pub bias_index: Option<usize>,
    pub u: usize,
    /// Upper bound on the magnitude of the entity's weights.
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition")]
pub struct EntityPartition {
    entities: Vec<Entity>,
    param_count: usize,
}

#[derive(Deserialize)]
struct RawPartition {
    entities: Vec<Entity>,
    param_count: usize,
}

impl TryFrom<RawPartition> for EntityPartition {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        Self::new(raw.entities, raw.param_count)
    }
}

impl EntityPartition {
    /// Validates disjointness, index ranges, `u = |indices|` and `M > 0`.
    pub fn new(entities: Vec<Entity>, param_count: usize) -> Result<Self> {
        if entities.is_empty() {
            return Err(Error::Partition("no prunable entities".into()));
        }
        let mut owner = vec![false; param_count];
        for (pos, e) in entities.iter().enumerate() {
            if e.id != pos {
                return Err(Error::Partition(format!("entity at position {pos} has id {}", e.id)));
            }
            if e.weight_indices.is_empty() || e.u != e.weight_indices.len() {
                return Err(Error::Partition(format!(
                    "entity {pos}: u = {} but {} indices",
                    e.u,
                    e.weight_indices.len()
                )));
            }
            if !(e.m > 0.0 && e.m.is_finite()) {
                return Err(Error::Partition(format!("entity {pos}: bound {} is not positive", e.m)));
            }
            for &j in &e.weight_indices {
                match owner.get_mut(j) {
                    None => {
                        return Err(Error::Partition(format!(
                            "entity {pos}: index {j} outside {param_count} parameters"
                        )))
                    }
                    Some(true) => {
                        return Err(Error::Partition(format!("index {j} belongs to two entities")))
                    }
                    Some(slot) => *slot = true,
                }
            }
            if let Some(b) = e.bias_index {
                if b >= param_count {
                    return Err(Error::Partition(format!("entity {pos}: bias index {b} out of range")));
                }
            }
        }
        Ok(Self { entities, param_count })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// `Σ u_i` over all entities.
    pub fn total_u(&self) -> usize {
        self.entities.iter().map(|e| e.u).sum()
    }

    /// `true` at every global index owned by some entity.
    pub fn prunable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.param_count];
        for e in &self.entities {
            for &j in &e.weight_indices {
                mask[j] = true;
            }
        }
        mask
    }

    pub fn layers(&self) -> Vec<usize> {
        let mut layers: Vec<usize> = self.entities.iter().map(|e| e.layer).collect();
        layers.dedup();
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    pub fn gather(&self, entity: usize, params: &[f64]) -> Vec<f64> {
        self.entities[entity].weight_indices.iter().map(|&j| params[j]).collect()
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Partition(format!(
                "partition covers {} parameters, vector has {}",
                self.param_count,
                params.len()
            )));
        }
        Ok(())
    }

    /// Copies each layer's bound onto every entity of that layer.
    pub fn set_layer_bounds(&mut self, bounds: &BTreeMap<usize, f64>) -> Result<()> {
        for e in &self.entities {
            match bounds.get(&e.layer) {
                Some(&m) if m > 0.0 && m.is_finite() => {}
                Some(&m) => return Err(Error::Partition(format!("layer {}: bound {m} is not positive", e.layer))),
                None => return Err(Error::Partition(format!("no bound for layer {}", e.layer))),
            }
        }
        for e in &mut self.entities {
            e.m = bounds[&e.layer];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionPolicy {
    /// One entity per conv output channel.
    #[default]
    Filters,
    /// Filters, plus one entity per output row of every hidden dense layer.
    FiltersAndDenseRows,
}

/// One entity per conv output filter (`n_inp·k·k` contiguous weights).
/// Biases and the classifier head are never prunable.
pub fn build_filter_partition(net: &Network, policy: PartitionPolicy) -> Result<EntityPartition> {
    let head = net.head_layer();
    let mut entities = Vec::new();
    for (idx, layer) in net.layers().iter().enumerate() {
        let rows = match layer.spec {
            LayerSpec::Conv2d { n_out, .. } => n_out,
            LayerSpec::Dense { n_out, .. }
                if policy == PartitionPolicy::FiltersAndDenseRows && Some(idx) != head =>
            {
                n_out
            }
            _ => continue,
        };
        let ws = net.slot(idx, ParamRole::Weight).expect("parametrized layer has weights");
        let bs = net.slot(idx, ParamRole::Bias).expect("parametrized layer has bias");
        let per = ws.len / rows;
        for r in 0..rows {
            let start = ws.start + r * per;
            entities.push(Entity {
                id: entities.len(),
                layer: idx,
                weight_indices: (start..start + per).collect(),
                bias_index: Some(bs.start + r),
                u: per,
                m: 1.0,
            });
        }
    }
    if entities.is_empty() {
        return Err(Error::Partition("network has no prunable layers".into()));
    }
    EntityPartition::new(entities, net.param_count())
}

/// Per-layer bound `M = max |w|` over the layer's prunable weights in a
/// reference network of identical architecture.
pub fn estimate_layer_bounds(
    reference: &Network,
    target: &Network,
    partition: &EntityPartition,
) -> Result<BTreeMap<usize, f64>> {
    if !reference.same_architecture(target) {
        return Err(Error::Shape("reference and target architectures differ".into()));
    }
    partition.check_params(&vec![0.0; reference.param_count()])?;
    let params = reference.get_params();
    let mut bounds = BTreeMap::new();
    for e in partition.entities() {
        let m = e.weight_indices.iter().fold(0.0f64, |acc, &j| acc.max(params[j].abs()));
        let slot = bounds.entry(e.layer).or_insert(0.0f64);
        *slot = slot.max(m);
    }
    if let Some((&layer, _)) = bounds.iter().find(|(_, &m)| m == 0.0) {
        return Err(Error::DegenerateReference(layer));
    }
    Ok(bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum PruneRule {
    /// Entity pruned iff more than `entity_frac` of its weights satisfy `|w| < weight_tol`.
    FractionBelow { weight_tol: f64, entity_frac: f64 },
    /// Entity pruned iff `max |w| < tol`.
    MaxAbsBelow { tol: f64 },
}

impl Default for PruneRule {
    fn default() -> Self {
        Self::FractionBelow { weight_tol: DEFAULT_WEIGHT_TOL, entity_frac: DEFAULT_ENTITY_FRAC }
    }
}

impl PruneRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::FractionBelow { weight_tol, entity_frac } => {
                if !(weight_tol > 0.0) || !(entity_frac > 0.0 && entity_frac <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "need weight_tol > 0 and entity_frac in (0, 1], got {weight_tol}, {entity_frac}"
                    )));
                }
            }
            Self::MaxAbsBelow { tol } => {
                if !(tol > 0.0) {
                    return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Threshold used for the per-weight "below" statistic in reports.
    pub fn weight_tol(&self) -> f64 {
        match *self {
            Self::FractionBelow { weight_tol, .. } => weight_tol,
            Self::MaxAbsBelow { tol } => tol,
        }
    }

    fn prunes(&self, weights: impl Iterator<Item = f64> + Clone) -> bool {
        match *self {
            Self::FractionBelow { weight_tol, entity_frac } => {
                let (below, total) = weights.fold((0usize, 0usize), |(b, t), w| {
                    (b + usize::from(w.abs() < weight_tol), t + 1)
                });
                below as f64 / total as f64 > entity_frac
            }
            Self::MaxAbsBelow { tol } => weights.fold(0.0f64, |m, w| m.max(w.abs())) < tol,
        }
    }
}

/// Per-entity verdicts plus the per-parameter flags they freeze at zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub entity_pruned: Vec<bool>,
    pub frozen: Vec<bool>,
}

impl PruneMask {
    pub fn empty(partition: &EntityPartition) -> Self {
        Self::from_verdicts(partition, vec![false; partition.len()])
    }

    pub fn full(partition: &EntityPartition) -> Self {
        Self::from_verdicts(partition, vec![true; partition.len()])
    }

    pub fn from_verdicts(partition: &EntityPartition, entity_pruned: Vec<bool>) -> Self {
        let mut frozen = vec![false; partition.param_count()];
        for (e, &pruned) in partition.entities().iter().zip(&entity_pruned) {
            if pruned {
                for &j in &e.weight_indices {
                    frozen[j] = true;
                }
                if let Some(b) = e.bias_index {
                    frozen[b] = true;
                }
            }
        }
        Self { entity_pruned, frozen }
    }

    pub fn pruned_count(&self) -> usize {
        self.entity_pruned.iter().filter(|&&p| p).count()
    }

    pub fn check(&self, partition: &EntityPartition) -> Result<()> {
        if self.entity_pruned.len() != partition.len() || self.frozen.len() != partition.param_count() {
            return Err(Error::Partition(format!(
                "mask sized {}/{} for partition {}/{}",
                self.entity_pruned.len(),
                self.frozen.len(),
                partition.len(),
                partition.param_count()
            )));
        }
        Ok(())
    }
}

/// Literal rule: a weight is below iff `|w| < weight_tol`; an entity is
/// pruned iff its below-fraction is strictly greater than `entity_frac`.
pub fn decide_pruning(
    net: &Network,
    partition: &EntityPartition,
    weight_tol: f64,
    entity_frac: f64,
) -> Result<PruneMask> {
    decide_pruning_with(net, partition, PruneRule::FractionBelow { weight_tol, entity_frac })
}

pub fn decide_pruning_with(net: &Network, partition: &EntityPartition, rule: PruneRule) -> Result<PruneMask> {
    rule.validate()?;
    let params = net.get_params();
    partition.check_params(&params)?;
    let verdicts = partition
        .entities()
        .iter()
        .map(|e| rule.prunes(e.weight_indices.iter().map(|&j| params[j])))
        .collect();
    Ok(PruneMask::from_verdicts(partition, verdicts))
}

/// Zeroes every frozen parameter. Idempotent.
pub fn apply_mask(net: &mut Network, mask: &PruneMask) -> Result<()> {
    if mask.frozen.len() != net.param_count() {
        return Err(Error::Length { expected: net.param_count(), got: mask.frozen.len() });
    }
    net.write_params(|p| {
        for (w, &f) in p.iter_mut().zip(&mask.frozen) {
            if f {
                *w = 0.0;
            }
        }
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Kept,
    Pruned,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kept => "kept",
            Self::Pruned => "pruned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRow {
    pub entity_id: usize,
    pub layer: usize,
    pub u: usize,
    pub max_abs: f64,
    pub frac_below: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub accuracy_before: Option<f64>,
    pub accuracy_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub entities: usize,
    pub pruned_entities: usize,
    pub params: usize,
    pub pruned_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub schema_version: u32,
    pub weight_tol: f64,
    pub rows: Vec<EntityRow>,
    pub pruned_entities: usize,
    pub total_entities: usize,
    pub pruned_params: usize,
    pub total_prunable_params: usize,
    /// Exact `100 · pruned_params / total_prunable_params`.
    pub percentage: f64,
    pub accuracy_before: Option<f64>,
    pub accuracy_after: Option<f64>,
}

/// Builds the report from the weights in `params` (normally the network
/// just before the mask is applied).
pub fn report(
    params: &[f64],
    partition: &EntityPartition,
    mask: &PruneMask,
    weight_tol: f64,
    metrics: ReportMetrics,
) -> Result<PruneReport> {
    partition.check_params(params)?;
    mask.check(partition)?;
    let rows: Vec<EntityRow> = partition
        .entities()
        .iter()
        .zip(&mask.entity_pruned)
        .map(|(e, &pruned)| {
            let (max_abs, below) = e.weight_indices.iter().fold((0.0f64, 0usize), |(m, b), &j| {
                (m.max(params[j].abs()), b + usize::from(params[j].abs() < weight_tol))
            });
            EntityRow {
                entity_id: e.id,
                layer: e.layer,
                u: e.u,
                max_abs,
                frac_below: below as f64 / e.u as f64,
                verdict: if pruned { Verdict::Pruned } else { Verdict::Kept },
            }
        })
        .collect();
    let pruned_params = rows.iter().filter(|r| r.verdict == Verdict::Pruned).map(|r| r.u).sum();
    let total = partition.total_u();
    Ok(PruneReport {
        schema_version: REPORT_SCHEMA_VERSION,
        weight_tol,
        pruned_entities: mask.pruned_count(),
        total_entities: rows.len(),
        rows,
        pruned_params,
        total_prunable_params: total,
        percentage: 100.0 * pruned_params as f64 / total as f64,
        accuracy_before: metrics.accuracy_before,
        accuracy_after: metrics.accuracy_after,
    })
}

impl PruneReport {
    /// Percentage rounded to two decimals, e.g. `"20.00"`.
    pub fn display_percentage(&self) -> String {
        format!("{:.2}", self.percentage)
    }

    /// Summary in the `pruned (pct%)` form, e.g. `81 (20.00)`.
    pub fn summary(&self) -> String {
        format!("{} ({})", self.pruned_params, self.display_percentage())
    }

    pub fn fraction(&self) -> f64 {
        self.pruned_params as f64 / self.total_prunable_params as f64
    }

    pub fn per_layer(&self) -> Vec<LayerSummary> {
        let mut map: BTreeMap<usize, LayerSummary> = BTreeMap::new();
        for r in &self.rows {
            let s = map.entry(r.layer).or_insert(LayerSummary {
                layer: r.layer,
                entities: 0,
                pruned_entities: 0,
                params: 0,
                pruned_params: 0,
            });
            s.entities += 1;
            s.params += r.u;
            if r.verdict == Verdict::Pruned {
                s.pruned_entities += 1;
                s.pruned_params += r.u;
            }
        }
        map.into_values().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("entity_id,layer,u,max_abs,frac_below,verdict\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{},{}",
                r.entity_id,
                r.layer,
                r.u,
                r.max_abs,
                r.frac_below,
                r.verdict.as_str()
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_entity_net(weights: &[f64]) -> (Network, EntityPartition) {
        let n = weights.len();
        let specs = vec![
            LayerSpec::Dense { n_inp: n, n_out: 1 },
            LayerSpec::Dense { n_inp: 1, n_out: 1 },
        ];
        let mut flat = weights.to_vec();
        flat.extend([0.0, 1.0, 0.0]);
        let net = Network::with_params(vec![n], specs, &flat).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::FiltersAndDenseRows).unwrap();
        (net, part)
    }

    #[test]
    fn convnet_s_partition_counts() {
        let net = Network::convnet_s(3, 8, 4, 8, 3, 0).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        assert_eq!(part.len(), 12);
        assert!(part.entities()[..4].iter().all(|e| e.u == 27));
        assert!(part.entities()[4..].iter().all(|e| e.u == 36));
        assert_eq!(part.total_u(), 4 * 27 + 8 * 36);
        // conv weights are exactly the prunable set
        let prunable = part.prunable_mask();
        for s in net.slots() {
            let conv = matches!(net.layers()[s.layer].spec, LayerSpec::Conv2d { .. });
            let expect = conv && s.role == ParamRole::Weight;
            assert!(s.range().all(|j| prunable[j] == expect));
        }
    }

    #[test]
    fn dense_only_net_has_no_filters() {
        let net = Network::mlp(4, &[], 2, 0).unwrap();
        assert!(matches!(
            build_filter_partition(&net, PartitionPolicy::Filters),
            Err(Error::Partition(_))
        ));
        // the head is never prunable even when dense rows are requested
        assert!(build_filter_partition(&net, PartitionPolicy::FiltersAndDenseRows).is_err());
        let net = Network::mlp(4, &[3], 2, 0).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::FiltersAndDenseRows).unwrap();
        assert_eq!(part.len(), 3);
    }

    #[test]
    fn partition_validation() {
        let e = |id, idx: Vec<usize>| Entity { id, layer: 0, u: idx.len(), weight_indices: idx, bias_index: None, m: 1.0 };
        assert!(EntityPartition::new(vec![e(0, vec![0, 1]), e(1, vec![1, 2])], 3).is_err());
        assert!(EntityPartition::new(vec![e(0, vec![0, 5])], 3).is_err());
        let mut bad = e(0, vec![0]);
        bad.m = 0.0;
        assert!(EntityPartition::new(vec![bad], 3).is_err());
        assert!(EntityPartition::new(vec![e(0, vec![0]), e(1, vec![2])], 3).is_ok());
    }

    #[test]
    fn layer_bounds_are_max_abs() {
        let (reference, part) = single_entity_net(&[0.2, -0.37, 0.1]);
        let bounds = estimate_layer_bounds(&reference, &reference, &part).unwrap();
        assert_eq!(bounds[&0], 0.37);

        let (zero, part0) = single_entity_net(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            estimate_layer_bounds(&zero, &zero, &part0),
            Err(Error::DegenerateReference(0))
        ));
        let other = Network::mlp(3, &[2], 1, 0).unwrap();
        assert!(estimate_layer_bounds(&other, &reference, &part).is_err());
    }

    #[test]
    fn distinct_layers_get_distinct_bounds() {
        let mut net = Network::convnet_s(3, 8, 2, 2, 2, 0).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let mut p = net.get_params();
        for &j in &part.entities()[0].weight_indices {
            p[j] = 0.0;
        }
        p[part.entities()[0].weight_indices[3]] = -0.5;
        for e in &part.entities()[1..] {
            for &j in &e.weight_indices {
                p[j] = p[j].clamp(-0.25, 0.25);
            }
        }
        p[part.entities()[3].weight_indices[0]] = 0.25;
        net.set_params(&p).unwrap();
        let bounds = estimate_layer_bounds(&net, &net, &part).unwrap();
        assert_eq!(bounds.len(), 2);
        assert_eq!(bounds[&0], 0.5);
        assert_eq!(bounds[&3], 0.25);
        let mut part = part;
        part.set_layer_bounds(&bounds).unwrap();
        assert!(part.entities().iter().all(|e| e.m == bounds[&e.layer]));
    }

    #[test]
    fn strict_threshold_boundaries() {
        // 100/100 below -> pruned
        let (net, part) = single_entity_net(&[1e-5; 100]);
        assert!(decide_pruning(&net, &part, 1e-4, 0.99).unwrap().entity_pruned[0]);
        // 99/100 below -> fraction 0.99, not strictly greater -> kept
        let mut w = vec![1e-5; 100];
        w[17] = 0.5;
        let (net, part) = single_entity_net(&w);
        assert!(!decide_pruning(&net, &part, 1e-4, 0.99).unwrap().entity_pruned[0]);
        // a weight exactly at the tolerance is not below it
        let (net, part) = single_entity_net(&[1e-4]);
        assert!(!decide_pruning(&net, &part, 1e-4, 0.5).unwrap().entity_pruned[0]);
        assert!(decide_pruning(&net, &part, 0.0, 0.5).is_err());
    }

    #[test]
    fn max_abs_rule() {
        let (net, part) = single_entity_net(&[5e-5, -9e-5]);
        let rule = PruneRule::MaxAbsBelow { tol: 1e-4 };
        assert!(decide_pruning_with(&net, &part, rule).unwrap().entity_pruned[0]);
        let (net, part) = single_entity_net(&[5e-5, -1e-4]);
        assert!(!decide_pruning_with(&net, &part, rule).unwrap().entity_pruned[0]);
    }

    #[test]
    fn mask_application() {
        let mut net = Network::convnet_s(3, 8, 2, 3, 2, 4).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let before = net.clone();
        apply_mask(&mut net, &PruneMask::empty(&part)).unwrap();
        assert_eq!(net, before);

        let full = PruneMask::full(&part);
        apply_mask(&mut net, &full).unwrap();
        let once = net.clone();
        apply_mask(&mut net, &full).unwrap();
        assert_eq!(net, once);

        // all conv weights and biases zero: every image maps to the head bias
        let x = Tensor::new(vec![2, 3, 8, 8], (0..384).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        let head_bias = net.layers()[7].bias.as_ref().unwrap().data().to_vec();
        assert_eq!(y.row(0), head_bias.as_slice());
        assert_eq!(y.row(1), head_bias.as_slice());
    }

    #[test]
    fn report_totals() {
        // 3 entities of 27 and 9 of 36: 405 prunable parameters
        let mut entities = Vec::new();
        let mut next = 0;
        for id in 0..12 {
            let u = if id < 3 { 27 } else { 36 };
            entities.push(Entity { id, layer: usize::from(id >= 3), weight_indices: (next..next + u).collect(), bias_index: None, u, m: 1.0 });
            next += u;
        }
        let part = EntityPartition::new(entities, next + 5).unwrap();
        let params: Vec<f64> = (0..part.param_count()).map(|j| (j as f64 * 0.1).sin()).collect();
        let mut verdicts = vec![false; 12];
        verdicts[..3].fill(true);
        let mask = PruneMask::from_verdicts(&part, verdicts);
        let rep = report(&params, &part, &mask, 1e-4, ReportMetrics::default()).unwrap();
        assert_eq!(rep.pruned_params, 81);
        assert_eq!(rep.total_prunable_params, 405);
        assert_eq!(rep.pruned_entities, 3);
        assert_eq!(rep.display_percentage(), "20.00");
        assert_eq!(rep.summary(), "81 (20.00)");
        let layers = rep.per_layer();
        assert_eq!(layers.len(), 2);
        assert_eq!(layers.iter().map(|l| l.pruned_params).sum::<usize>(), rep.pruned_params);
        assert_eq!(rep.to_csv().lines().count(), 13);

        let none = report(&params, &part, &PruneMask::empty(&part), 1e-4, ReportMetrics::default()).unwrap();
        assert_eq!(none.summary(), "0 (0.00)");
        assert_eq!(none.percentage, 0.0);
    }
}
