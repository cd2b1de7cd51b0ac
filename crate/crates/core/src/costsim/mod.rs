//! Operator-level analytical time model.
//!
//! Every operator is priced as `theta / (phi * eta)`: theoretical work
//! over peak rate times a learned efficiency factor. Stage times combine
//! operator times with the overlap flags; iteration time feeds the stage
//! times through the pipeline latency formula from the partitioning
//! module.

pub mod efficiency;
pub mod ops;

pub use efficiency::{
    calibrate_efficiency, EffOp, EffQuery, EfficiencyModel, LookupEntry, Tree, TreeNode, MIN_ETA,
};
pub use ops::{
    build_stage_ops, CommDesc, CommKind, OpDesc, OpKind, Phase, StageRole, BWD_FWD_RATIO,
};

use serde::Serialize;

use crate::catalog::{GpuCatalog, GpuSpec, LinkScope, TrainConfig};
use crate::error::{Error, Result};
use crate::hetero::{hetero_pipeline_time, StageTimes};
use crate::strategy::{stage_layout, Strategy};

/// Time for one compute operator: `theta / (phi * eta)`.
pub fn op_compute_time(op: &OpDesc, gpu: &GpuSpec, eff: &EfficiencyModel) -> f64 {
    let eta = eff.predict(&EffQuery {
        op: EffOp::Compute(op.kind),
        theta: op.theta_flops,
        gpu: &gpu.name,
        scope: None,
    });
    op.theta_flops / (gpu.peak_flops * eta)
}

/// Time for one communication operator over a link of `link_bw` bytes/s.
/// The payload is scaled by the ring-algorithm factor of the collective.
pub fn op_comm_time(c: &CommDesc, link_bw: f64, gpu_name: &str, eff: &EfficiencyModel) -> f64 {
    let eta = eff.predict(&EffQuery {
        op: EffOp::Comm(c.kind),
        theta: c.theta_bytes,
        gpu: gpu_name,
        scope: Some(c.scope),
    });
    let effective_bytes = c.theta_bytes * c.kind.ring_factor(c.group_size);
    effective_bytes / (link_bw * eta)
}

/// Link bandwidths seen by one stage. The point-to-point overrides let
/// the heterogeneous path slow down transfers that cross GPU types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLinks {
    pub intra_bw: f64,
    pub inter_bw: f64,
    pub p2p_fwd_bw: Option<f64>,
    pub p2p_bwd_bw: Option<f64>,
}

impl StageLinks {
    pub fn from_gpu(gpu: &GpuSpec) -> Self {
        StageLinks {
            intra_bw: gpu.intra_node_bw,
            inter_bw: gpu.inter_node_bw,
            p2p_fwd_bw: None,
            p2p_bwd_bw: None,
        }
    }

    fn scope_bw(&self, scope: LinkScope) -> f64 {
        match scope {
            LinkScope::IntraNode => self.intra_bw,
            LinkScope::InterNode => self.inter_bw,
        }
    }

    fn p2p_bw(&self, phase: Phase, scope: LinkScope) -> f64 {
        let over = match phase {
            Phase::Fwd => self.p2p_fwd_bw,
            Phase::Bwd => self.p2p_bwd_bw,
            _ => None,
        };
        over.unwrap_or_else(|| self.scope_bw(scope))
    }
}

/// Per-stage, per-microbatch times. `t_*` is compute plus any unhidden
/// tensor-parallel collective time; `h_*` is the unhidden point-to-point
/// transfer; `t_dp_comm` is the unhidden gradient reduction, charged once
/// per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageCost {
    pub t_fwd: f64,
    pub t_bwd: f64,
    pub h_fwd: f64,
    pub h_bwd: f64,
    pub t_dp_comm: f64,
}

impl StageCost {
    pub fn per_microbatch_total(&self) -> f64 {
        self.t_fwd + self.t_bwd + self.h_fwd + self.h_bwd
    }
}

/// Overlap knobs taken from the strategy when summing a stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapFlags {
    pub p2p: bool,
    pub tp_comm: bool,
    pub grad_reduce: bool,
    pub param_gather: bool,
    pub distributed_optimizer: bool,
}

impl OverlapFlags {
    pub fn of(s: &Strategy) -> Self {
        OverlapFlags {
            p2p: s.params.overlap_p2p,
            tp_comm: s.params.tp_comm_overlap,
            grad_reduce: s.params.overlap_grad_reduce,
            param_gather: s.params.overlap_param_gather,
            distributed_optimizer: s.params.distributed_optimizer,
        }
    }
}

fn hide(comm: f64, window: f64, enabled: bool) -> f64 {
    if enabled {
        (comm - window).max(0.0)
    } else {
        comm
    }
}

/// Sum operator times into a stage cost, applying the overlap flags:
/// tensor-parallel collectives and point-to-point transfers hide under
/// the same phase's compute, the gradient reduction under the backward
/// pass (its parameter-gather half under the forward pass when the
/// optimizer is distributed). Hidden time never goes below zero.
pub fn stage_time(
    ops: &[OpDesc],
    comms: &[CommDesc],
    gpu: &GpuSpec,
    links: &StageLinks,
    eff: &EfficiencyModel,
    overlap: OverlapFlags,
) -> StageCost {
    let mut compute_fwd = 0.0;
    let mut compute_bwd = 0.0;
    for op in ops {
        let t = op_compute_time(op, gpu, eff);
        match op.phase {
            Phase::Fwd => compute_fwd += t,
            Phase::Bwd | Phase::Recompute => compute_bwd += t,
            Phase::PerIteration => {}
        }
    }

    let mut tp_fwd = 0.0;
    let mut tp_bwd = 0.0;
    let mut p2p_fwd = 0.0;
    let mut p2p_bwd = 0.0;
    let mut dp_comm = 0.0;
    for c in comms {
        match (c.kind, c.phase) {
            (k, Phase::Fwd) if k.is_tp_collective() => {
                tp_fwd += op_comm_time(c, links.scope_bw(c.scope), &gpu.name, eff);
            }
            (k, Phase::Bwd) if k.is_tp_collective() => {
                tp_bwd += op_comm_time(c, links.scope_bw(c.scope), &gpu.name, eff);
            }
            (CommKind::P2pActivation, phase) => {
                let t = op_comm_time(c, links.p2p_bw(phase, c.scope), &gpu.name, eff);
                match phase {
                    Phase::Fwd => p2p_fwd += t,
                    _ => p2p_bwd += t,
                }
            }
            (k, _) if k.is_dp() => {
                dp_comm += op_comm_time(c, links.scope_bw(c.scope), &gpu.name, eff);
            }
            _ => {}
        }
    }

    let t_fwd = compute_fwd + hide(tp_fwd, compute_fwd, overlap.tp_comm);
    let t_bwd = compute_bwd + hide(tp_bwd, compute_bwd, overlap.tp_comm);
    let h_fwd = hide(p2p_fwd, t_fwd, overlap.p2p);
    let h_bwd = hide(p2p_bwd, t_bwd, overlap.p2p);

    let t_dp_comm = if overlap.distributed_optimizer {
        // reduce-scatter half hides under backward, gather half under
        // forward
        let half = dp_comm / 2.0;
        hide(half, t_bwd, overlap.grad_reduce) + hide(half, t_fwd, overlap.param_gather)
    } else {
        hide(dp_comm, t_bwd, overlap.grad_reduce)
    };

    StageCost {
        t_fwd,
        t_bwd,
        h_fwd,
        h_bwd,
        t_dp_comm,
    }
}

/// Iteration time split into its components. `t_total` is exactly the sum
/// of the three parts; throughput times `t_total` recovers the iteration's
/// token count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub t_comp: f64,
    pub t_comm: f64,
    pub t_bubble: f64,
    pub t_total: f64,
    pub throughput_tokens_per_s: f64,
    pub throughput_samples_per_s: f64,
}

impl CostBreakdown {
    fn from_parts(t_comp: f64, t_comm: f64, t_bubble: f64, train: &TrainConfig) -> Self {
        let t_total = t_comp + t_comm + t_bubble;
        CostBreakdown {
            t_comp,
            t_comm,
            t_bubble,
            t_total,
            throughput_tokens_per_s: train.tokens_per_iteration() as f64 / t_total,
            throughput_samples_per_s: train.global_batch as f64 / t_total,
        }
    }
}

/// Iteration time when every pipeline stage is identical: steady-state
/// work for `K` microbatches plus the classic fill/drain bubble
/// `(pp - 1) / K` of the pipelined time.
pub fn iteration_time_homogeneous(
    s: &Strategy,
    stage: &StageCost,
    microbatches: u64,
    train: &TrainConfig,
) -> Result<CostBreakdown> {
    if s.partition.is_some() {
        return Err(Error::InvalidRequest(
            "strategy carries a heterogeneous partition; cost it through the partition-aware path"
                .into(),
        ));
    }
    let k = microbatches as f64;
    let t_comp = k * (stage.t_fwd + stage.t_bwd);
    let t_comm = k * (stage.h_fwd + stage.h_bwd) + stage.t_dp_comm;
    let t_bubble = (s.params.pp - 1) as f64 * stage.per_microbatch_total();
    Ok(CostBreakdown::from_parts(t_comp, t_comm, t_bubble, train))
}

/// Iteration time from per-stage costs, valid for unequal stages. Forward
/// and backward each pass through the pipeline latency formula; the
/// decomposition charges the steady state to the bottleneck stage of each
/// direction and the remaining fill/drain time to the bubble. Gradient
/// reductions of different stages run concurrently, so the slowest one is
/// charged.
pub fn iteration_time_from_stages(
    stages: &[StageCost],
    microbatches: u64,
    train: &TrainConfig,
) -> CostBreakdown {
    assert!(!stages.is_empty());
    let fwd = StageTimes::new(
        stages.iter().map(|s| s.t_fwd).collect(),
        stages.iter().map(|s| s.h_fwd).collect(),
    );
    let bwd = StageTimes::new(
        stages.iter().map(|s| s.t_bwd).collect(),
        stages.iter().map(|s| s.h_bwd).collect(),
    );
    let argmax = |times: &StageTimes| -> usize {
        let mut best = 0;
        let mut best_val = f64::MIN;
        for i in 0..times.len() {
            let v = times.compute[i] + times.p2p[i];
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        best
    };
    let fi = argmax(&fwd);
    let bi = argmax(&bwd);
    let k = microbatches as f64;
    let dp_max = stages
        .iter()
        .map(|s| s.t_dp_comm)
        .fold(0.0f64, |a, b| a.max(b));

    let t_comp = k * (stages[fi].t_fwd + stages[bi].t_bwd);
    let t_comm = k * (stages[fi].h_fwd + stages[bi].h_bwd) + dp_max;
    // fill/drain: total single-microbatch traversal minus the bottleneck
    // slot already counted in the steady state
    let sum_f: f64 = (0..stages.len()).map(|i| fwd.compute[i] + fwd.p2p[i]).sum();
    let sum_b: f64 = (0..stages.len()).map(|i| bwd.compute[i] + bwd.p2p[i]).sum();
    let t_bubble = (sum_f - (stages[fi].t_fwd + stages[fi].h_fwd))
        + (sum_b - (stages[bi].t_bwd + stages[bi].h_bwd));

    // consistency: t_comp + t_comm + t_bubble equals the pipeline formula
    // applied per direction plus the gradient reduction
    debug_assert!({
        let direct = hetero_pipeline_time(&fwd, microbatches)
            + hetero_pipeline_time(&bwd, microbatches)
            + dp_max;
        let total = t_comp + t_comm + t_bubble;
        (direct - total).abs() <= 1e-9 * direct.abs().max(1.0)
    });
    CostBreakdown::from_parts(t_comp, t_comm, t_bubble, train)
}

/// Per-stage stage costs for a strategy, honouring the heterogeneous
/// partition when present (including slower links across type
/// boundaries).
pub fn stage_costs(
    s: &Strategy,
    catalog: &GpuCatalog,
    eff: &EfficiencyModel,
    train: &TrainConfig,
) -> Result<Vec<StageCost>> {
    let layout = stage_layout(s)?;
    let total_stages = layout.len() as u64;
    let overlap = OverlapFlags::of(s);
    let mut costs = Vec::with_capacity(layout.len());
    for (i, (gpu_type, layers)) in layout.iter().enumerate() {
        let gpu = catalog.get(gpu_type)?;
        let mut links = StageLinks::from_gpu(gpu);
        // transfers that cross a type boundary run at the slower
        // endpoint's inter-node bandwidth
        if i + 1 < layout.len() && layout[i + 1].0 != *gpu_type {
            let next = catalog.get(&layout[i + 1].0)?;
            links.p2p_fwd_bw = Some(gpu.inter_node_bw.min(next.inter_node_bw));
        }
        if i > 0 && layout[i - 1].0 != *gpu_type {
            let prev = catalog.get(&layout[i - 1].0)?;
            links.p2p_bwd_bw = Some(gpu.inter_node_bw.min(prev.inter_node_bw));
        }
        let role = StageRole::of(i as u64, total_stages);
        let (ops, comms) = build_stage_ops(s, *layers, role, gpu, train)?;
        costs.push(stage_time(&ops, &comms, gpu, &links, eff, overlap));
    }
    Ok(costs)
}

/// Full iteration cost of one strategy.
pub fn price_strategy(
    s: &Strategy,
    catalog: &GpuCatalog,
    eff: &EfficiencyModel,
    train: &TrainConfig,
) -> Result<CostBreakdown> {
    let stages = stage_costs(s, catalog, eff, train)?;
    let microbatches = s.microbatch_count(train);
    Ok(iteration_time_from_stages(&stages, microbatches, train))
}
