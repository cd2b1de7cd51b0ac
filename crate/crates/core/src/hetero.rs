//! Heterogeneous pipeline partitioning and the pipeline timing model.
//!
//! A partition assigns contiguous runs of pipeline stages to GPU types:
//! type `i` hosts `m_i` stages of `n_i` layers each, with `sum m_i = P`,
//! `sum m_i * n_i = N`, and `m_i <= l_i / (D*T)` from per-type
//! availability. Canonicalizing stage labelings into per-type counts
//! collapses the `O(M^P)` labelings into `O(P^(M-1))` segment partitions
//! since stage time depends only on (type, layers).
//!
//! Timing for one direction of a `P`-stage pipeline over `K` microbatches
//! with per-stage times `s_i = t_i + h_i`:
//!
//! ```text
//!     sum_i s_i + (K - 1) * max_i s_i
//! ```
//!
//! The event-driven schedule in [`simulate_pipeline_schedule`] evaluates
//! the same quantity from the dependency recurrence and serves as an
//! independent cross-check.

use serde::{Deserialize, Serialize};

use crate::catalog::{GpuCatalog, TrainConfig};
use crate::costsim::{price_strategy, CostBreakdown, EfficiencyModel};
use crate::error::{Error, Result};
use crate::memest::{check_strategy, MemCoeffs};
use crate::modes::GpuConfig;
use crate::pareto::{gpu_bill, money_cost};
use crate::strategy::Strategy;

/// Contiguous assignment of pipeline stages to GPU types. Only used
/// types appear; segments are listed in a fixed type order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub struct HeteroPartition {
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub struct Segment {
    pub gpu_type: String,
    /// Pipeline stages hosted on this type.
    pub stages: u64,
    /// Model layers per stage in this segment.
    pub layers_per_stage: u64,
}

impl HeteroPartition {
    pub fn total_stages(&self) -> u64 {
        self.segments.iter().map(|s| s.stages).sum()
    }

    pub fn total_layers(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| s.stages * s.layers_per_stage)
            .sum()
    }

    /// (gpu_type, layers_per_stage) for every stage in pipeline order.
    pub fn stage_assignments(&self) -> Vec<(&str, u64)> {
        let mut out = Vec::with_capacity(self.total_stages() as usize);
        for seg in &self.segments {
            for _ in 0..seg.stages {
                out.push((seg.gpu_type.as_str(), seg.layers_per_stage));
            }
        }
        out
    }
}

/// How layers are distributed within a partition. Only uniform per-type
/// layer counts are supported: each stage of a segment holds the same
/// number of layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    #[default]
    UniformPerType,
}

/// Collapse a per-stage type labeling into per-type counts in a fixed
/// type order. Labelings with equal multisets map to the same result.
pub fn canonicalize_partition<'a>(
    labeling: &[&'a str],
    type_order: &[&'a str],
) -> Vec<(&'a str, u64)> {
    type_order
        .iter()
        .map(|ty| {
            let count = labeling.iter().filter(|l| *l == ty).count() as u64;
            (*ty, count)
        })
        .collect()
}

/// Availability cap for one GPU type during partition enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeLimit {
    pub gpu_type: String,
    /// Maximum number of GPUs of this type (`l_i`).
    pub max_gpus: u64,
}

/// All partitions of `pipeline_stages` stages and `num_layers` layers
/// over the given types, under `m_i <= l_i / (dp * tp)`. Deterministic
/// order: stage splits lexicographic in type order, then layer counts
/// lexicographic. Infeasible inputs yield an empty list.
pub fn enumerate_partitions(
    pipeline_stages: u64,
    num_layers: u64,
    limits: &[TypeLimit],
    dp: u64,
    tp: u64,
    _mode: LayerMode,
) -> Result<Vec<HeteroPartition>> {
    if pipeline_stages < 1 {
        return Err(Error::validation("pipeline_stages", "must be at least 1"));
    }
    if num_layers < pipeline_stages {
        return Ok(Vec::new()); // each stage needs at least one layer
    }
    if dp < 1 || tp < 1 {
        return Err(Error::validation("dp*tp", "must be at least 1"));
    }
    let gpus_per_stage = dp * tp;
    let stage_caps: Vec<u64> = limits
        .iter()
        .map(|l| l.max_gpus / gpus_per_stage)
        .collect();

    let mut out = Vec::new();
    let mut stage_split = vec![0u64; limits.len()];
    enumerate_stage_splits(
        &stage_caps,
        pipeline_stages,
        0,
        &mut stage_split,
        &mut |split| {
            let used: Vec<usize> = (0..limits.len()).filter(|&i| split[i] > 0).collect();
            let mut layer_counts = vec![0u64; used.len()];
            enumerate_layer_counts(split, &used, num_layers, 0, &mut layer_counts, &mut |layers| {
                let segments = used
                    .iter()
                    .zip(layers.iter())
                    .map(|(&i, &n)| Segment {
                        gpu_type: limits[i].gpu_type.clone(),
                        stages: split[i],
                        layers_per_stage: n,
                    })
                    .collect();
                out.push(HeteroPartition { segments });
            });
        },
    );
    Ok(out)
}

/// Recursively assign stage counts `m_i` with `sum = remaining`,
/// respecting per-type caps.
fn enumerate_stage_splits(
    caps: &[u64],
    remaining: u64,
    idx: usize,
    split: &mut Vec<u64>,
    emit: &mut impl FnMut(&[u64]),
) {
    if idx == caps.len() {
        if remaining == 0 {
            emit(split);
        }
        return;
    }
    let cap = caps[idx].min(remaining);
    for m in 0..=cap {
        split[idx] = m;
        enumerate_stage_splits(caps, remaining - m, idx + 1, split, emit);
    }
    split[idx] = 0;
}

/// Recursively assign layers-per-stage `n_i >= 1` for the used types so
/// that `sum m_i * n_i = num_layers`.
fn enumerate_layer_counts(
    split: &[u64],
    used: &[usize],
    remaining_layers: u64,
    pos: usize,
    layers: &mut Vec<u64>,
    emit: &mut impl FnMut(&[u64]),
) {
    if pos == used.len() {
        if remaining_layers == 0 {
            emit(layers);
        }
        return;
    }
    let stages = split[used[pos]];
    // reserve at least one layer per stage for the remaining segments
    let reserved: u64 = used[pos + 1..].iter().map(|&i| split[i]).sum();
    if remaining_layers < stages + reserved {
        return;
    }
    let max_n = (remaining_layers - reserved) / stages;
    for n in 1..=max_n {
        layers[pos] = n;
        enumerate_layer_counts(
            split,
            used,
            remaining_layers - stages * n,
            pos + 1,
            layers,
            emit,
        );
    }
    layers[pos] = 1;
}

/// Per-stage times for one direction (forward or backward) of the
/// pipeline: compute time `t_i` and outgoing peer-to-peer time `h_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTimes {
    pub compute: Vec<f64>,
    pub p2p: Vec<f64>,
}

impl StageTimes {
    pub fn new(compute: Vec<f64>, p2p: Vec<f64>) -> Self {
        assert_eq!(compute.len(), p2p.len());
        StageTimes { compute, p2p }
    }

    pub fn len(&self) -> usize {
        self.compute.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compute.is_empty()
    }

    fn stage_total(&self, i: usize) -> f64 {
        self.compute[i] + self.p2p[i]
    }
}

/// Closed-form pipeline latency for one direction:
/// `sum_i (t_i + h_i) + (K - 1) * max_i (t_i + h_i)`.
pub fn hetero_pipeline_time(stages: &StageTimes, microbatches: u64) -> f64 {
    assert!(microbatches >= 1, "need at least one microbatch");
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..stages.len() {
        let s = stages.stage_total(i);
        sum += s;
        max = max.max(s);
    }
    sum + (microbatches - 1) as f64 * max
}

/// Event-driven evaluation of the same schedule: microbatch `j` cannot
/// enter stage `i` before it left stage `i-1` and before the stage
/// finished microbatch `j-1`:
/// `F(i,j) = max(F(i-1,j), F(i,j-1)) + (t_i + h_i)`, returning `F(P,K)`.
pub fn simulate_pipeline_schedule(stages: &StageTimes, microbatches: u64) -> f64 {
    assert!(microbatches >= 1, "need at least one microbatch");
    let p = stages.len();
    if p == 0 {
        return 0.0;
    }
    // finish[i] holds F(i, j) for the current microbatch j
    let mut finish = vec![0.0f64; p];
    for _ in 0..microbatches {
        let mut prev_stage_finish = 0.0f64;
        for (i, slot) in finish.iter_mut().enumerate() {
            let start = prev_stage_finish.max(*slot);
            *slot = start + stages.stage_total(i);
            prev_stage_finish = *slot;
        }
    }
    finish[p - 1]
}

/// One feasible partition of a parameter family, priced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatedPartition {
    pub strategy: Strategy,
    pub cost: CostBreakdown,
    /// Money for a single iteration; used for ranking ties (any workload
    /// horizon scales it uniformly).
    pub money_per_iteration: f64,
}

/// Outcome of exploring every partition of one parameter family.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HeteroEvaluation {
    /// Feasible partitions sorted by throughput descending, money
    /// ascending, id ascending.
    pub ranked: Vec<EvaluatedPartition>,
    pub partitions_enumerated: u64,
    pub partitions_oom: u64,
}

/// Evaluate every pipeline partition of a parameter family bound to a
/// bounded (multi-type) GPU configuration: enumerate the feasible
/// (stage, layer) splits, drop those that exceed any segment's device
/// memory, price the rest, and rank them.
pub fn best_hetero_strategy(
    family: &Strategy,
    catalog: &GpuCatalog,
    eff: &EfficiencyModel,
    coeffs: &MemCoeffs,
    train: &TrainConfig,
) -> Result<HeteroEvaluation> {
    let GpuConfig::Bounded { limits, .. } = &family.gpu_config else {
        return Err(Error::InvalidRequest(
            "heterogeneous evaluation needs a bounded GPU configuration".into(),
        ));
    };
    let type_limits: Vec<TypeLimit> = limits
        .iter()
        .map(|(ty, max)| TypeLimit {
            gpu_type: ty.clone(),
            max_gpus: *max,
        })
        .collect();
    let partitions = enumerate_partitions(
        family.params.pp,
        family.arch.num_layers,
        &type_limits,
        family.params.dp,
        family.params.tp,
        LayerMode::UniformPerType,
    )?;

    let mut evaluation = HeteroEvaluation {
        partitions_enumerated: partitions.len() as u64,
        ..HeteroEvaluation::default()
    };
    for partition in partitions {
        let candidate = family.with_partition(partition);
        if check_strategy(&candidate, catalog, coeffs, train)?.is_some() {
            evaluation.partitions_oom += 1;
            continue;
        }
        let cost = price_strategy(&candidate, catalog, eff, train)?;
        let bill = gpu_bill(&candidate, catalog)?;
        let bill_lines: Vec<(u64, f64)> = bill.iter().map(|(_, n, f)| (*n, *f)).collect();
        let money_per_iteration = money_cost(cost.t_total, &bill_lines)?;
        evaluation.ranked.push(EvaluatedPartition {
            strategy: candidate,
            cost,
            money_per_iteration,
        });
    }
    evaluation.ranked.sort_by(|a, b| {
        b.cost
            .throughput_tokens_per_s
            .partial_cmp(&a.cost.throughput_tokens_per_s)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.money_per_iteration
                    .partial_cmp(&b.money_per_iteration)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.strategy.id.cmp(&b.strategy.id))
    });
    Ok(evaluation)
}
