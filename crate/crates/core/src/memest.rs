//! Per-GPU memory estimation for each pipeline stage, and the capacity
//! filter built on it.
//!
//! Static memory is parameters, gradients, and optimizer state at
//! configurable bytes-per-parameter, sharded across the tensor-parallel
//! group (even split). Activation memory uses a per-layer empirical
//! formula per microbatch:
//!
//! ```text
//!     s * b * h * bytes * (A + Q * a * s / h) / t
//! ```
//!
//! where `A` covers the matmul inputs and norms, `Q` the attention map.
//! `Q` drops to zero under flash attention or selective recomputation.
//! Without sequence parallelism the `A_np` slice of `A` (dropout masks,
//! norm inputs) is replicated across the tensor group instead of sharded;
//! with it the whole term divides by `t`. Full recomputation stores only
//! the layer input, `s * b * h * bytes * R`.
//!
//! The number of in-flight microbatches per stage follows the one-forward
//! one-backward schedule: `min(pp - stage_index, K)`.

use serde::{Deserialize, Serialize};

use crate::catalog::{
    embedding_params, output_head_params, params_per_layer, GpuCatalog, TrainConfig,
};
use crate::error::{Error, Result};
use crate::strategy::{stage_layout, RecomputeGranularity, Strategy};

/// Coefficients of the memory model. All are overridable from a JSON
/// coefficient file; missing keys keep these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemCoeffs {
    /// Per-token-per-hidden activation bytes factor (half precision
    /// accounting: 34).
    pub act_base: f64,
    /// Attention-map coefficient multiplying `a * s / h` (5).
    pub act_attn: f64,
    /// Stored-input coefficient under full recomputation (2).
    pub act_input_only: f64,
    /// Slice of `act_base` that stays replicated across the tensor group
    /// unless sequence parallelism shards it too (10).
    pub act_nonparallel: f64,
    /// Weight bytes per parameter (2: half precision).
    pub weight_bytes_per_param: f64,
    /// Gradient bytes per parameter (4: fp32 main grads).
    pub grad_bytes_per_param: f64,
    /// Optimizer-state bytes per parameter (12: fp32 master weights plus
    /// two moments).
    pub optim_bytes_per_param: f64,
    /// Fixed framework overhead per GPU: context, workspace, fragmentation.
    pub overhead_bytes: f64,
}

impl Default for MemCoeffs {
    fn default() -> Self {
        MemCoeffs {
            act_base: 34.0,
            act_attn: 5.0,
            act_input_only: 2.0,
            act_nonparallel: 10.0,
            weight_bytes_per_param: 2.0,
            grad_bytes_per_param: 4.0,
            optim_bytes_per_param: 12.0,
            overhead_bytes: 1024.0 * 1024.0 * 1024.0,
        }
    }
}

impl MemCoeffs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("act_base", self.act_base),
            ("act_attn", self.act_attn),
            ("act_input_only", self.act_input_only),
            ("act_nonparallel", self.act_nonparallel),
            ("weight_bytes_per_param", self.weight_bytes_per_param),
            ("grad_bytes_per_param", self.grad_bytes_per_param),
            ("optim_bytes_per_param", self.optim_bytes_per_param),
            ("overhead_bytes", self.overhead_bytes),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::validation(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.act_nonparallel > self.act_base {
            return Err(Error::validation(
                "act_nonparallel",
                "cannot exceed act_base",
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let coeffs: MemCoeffs =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Memory of one pipeline stage, split by component. `total_bytes` is the
/// exact sum of the parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMemory {
    pub stage_index: u64,
    pub params_bytes: f64,
    pub grads_bytes: f64,
    pub optim_bytes: f64,
    pub activation_bytes: f64,
    pub overhead_bytes: f64,
    pub total_bytes: f64,
}

/// Stored-activation bytes for one layer and one microbatch, before any
/// full-recompute replacement.
#[allow(clippy::too_many_arguments)]
fn stored_layer_activation(
    hidden: u64,
    heads: u64,
    train: &TrainConfig,
    micro_batch: u64,
    tp: u64,
    sequence_parallel: bool,
    attn_map_stored: bool,
    coeffs: &MemCoeffs,
) -> f64 {
    let s = train.seq_len as f64;
    let b = micro_batch as f64;
    let h = hidden as f64;
    let a = heads as f64;
    let t = tp as f64;
    let bytes = train.bytes_per_element as f64;
    let attn = if attn_map_stored { coeffs.act_attn } else { 0.0 };
    let sharded = coeffs.act_base - coeffs.act_nonparallel + attn * a * s / h;
    let replicated_share = if sequence_parallel {
        coeffs.act_nonparallel / t
    } else {
        coeffs.act_nonparallel
    };
    s * b * h * bytes * (sharded / t + replicated_share)
}

/// Input-only bytes for a fully recomputed layer.
fn recompute_input_activation(
    hidden: u64,
    train: &TrainConfig,
    micro_batch: u64,
    tp: u64,
    sequence_parallel: bool,
    coeffs: &MemCoeffs,
) -> f64 {
    let s = train.seq_len as f64;
    let b = micro_batch as f64;
    let h = hidden as f64;
    let bytes = train.bytes_per_element as f64;
    let shard = if sequence_parallel { tp as f64 } else { 1.0 };
    s * b * h * bytes * coeffs.act_input_only / shard
}

/// Activation bytes for one layer and one microbatch of a strategy.
pub fn layer_activation_bytes(s: &Strategy, train: &TrainConfig, coeffs: &MemCoeffs) -> f64 {
    let p = &s.params;
    match p.recompute_granularity {
        RecomputeGranularity::Full => recompute_input_activation(
            s.arch.hidden_size,
            train,
            p.micro_batch,
            p.tp,
            p.sequence_parallel,
            coeffs,
        ),
        granularity => {
            let attn_map_stored = !p.use_flash_attn
                && !matches!(
                    granularity,
                    RecomputeGranularity::Selective | RecomputeGranularity::Hybrid
                );
            stored_layer_activation(
                s.arch.hidden_size,
                s.arch.num_heads,
                train,
                p.micro_batch,
                p.tp,
                p.sequence_parallel,
                attn_map_stored,
                coeffs,
            )
        }
    }
}

/// Memory of stage `stage_index` of a strategy.
pub fn stage_memory(
    s: &Strategy,
    stage_index: u64,
    coeffs: &MemCoeffs,
    train: &TrainConfig,
) -> Result<StageMemory> {
    let layout = stage_layout(s)?;
    stage_memory_with_layout(s, &layout, stage_index, coeffs, train)
}

pub(crate) fn stage_memory_with_layout(
    s: &Strategy,
    layout: &[(String, u64)],
    stage_index: u64,
    coeffs: &MemCoeffs,
    train: &TrainConfig,
) -> Result<StageMemory> {
    let p = &s.params;
    let pp = layout.len() as u64;
    if stage_index >= pp {
        return Err(Error::validation(
            "stage_index",
            format!("stage {stage_index} out of range for {pp} stages"),
        ));
    }
    let layers = layout[stage_index as usize].1;

    let mut stage_params = layers as f64 * params_per_layer(&s.arch) as f64;
    if stage_index == 0 {
        stage_params += embedding_params(&s.arch) as f64;
    }
    if stage_index == pp - 1 {
        stage_params += output_head_params(&s.arch) as f64;
    }
    let sharded_params = stage_params / p.tp as f64;

    let optim_per_param = if p.offload_optimizer {
        0.0 // held host-side
    } else if p.distributed_optimizer {
        coeffs.optim_bytes_per_param / p.dp as f64
    } else {
        coeffs.optim_bytes_per_param
    };
    let params_bytes = sharded_params * coeffs.weight_bytes_per_param;
    let grads_bytes = sharded_params * coeffs.grad_bytes_per_param;
    let optim_bytes = sharded_params * optim_per_param;

    let microbatches = s.microbatch_count(train);
    let in_flight = (pp - stage_index).min(microbatches) as f64;
    let full_layers = s.params.full_recompute_layers(layers);
    let stored_layers = layers - full_layers;
    let attn_map_stored = !p.use_flash_attn
        && matches!(p.recompute_granularity, RecomputeGranularity::None);
    let stored = stored_layer_activation(
        s.arch.hidden_size,
        s.arch.num_heads,
        train,
        p.micro_batch,
        p.tp,
        p.sequence_parallel,
        attn_map_stored,
        coeffs,
    );
    let input_only = recompute_input_activation(
        s.arch.hidden_size,
        train,
        p.micro_batch,
        p.tp,
        p.sequence_parallel,
        coeffs,
    );
    let activation_bytes =
        (stored_layers as f64 * stored + full_layers as f64 * input_only) * in_flight;

    let overhead_bytes = coeffs.overhead_bytes;
    let total_bytes = params_bytes + grads_bytes + optim_bytes + activation_bytes + overhead_bytes;
    Ok(StageMemory {
        stage_index,
        params_bytes,
        grads_bytes,
        optim_bytes,
        activation_bytes,
        overhead_bytes,
        total_bytes,
    })
}

/// Why a strategy was rejected by the memory filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemDrop {
    pub stage_index: u64,
    pub required_bytes: f64,
    pub capacity_bytes: f64,
}

impl MemDrop {
    pub fn over_bytes(&self) -> f64 {
        self.required_bytes - self.capacity_bytes
    }
}

/// Check every stage of a strategy against the capacity of the GPU that
/// hosts it. Returns the first overflowing stage, if any.
pub fn check_strategy(
    s: &Strategy,
    catalog: &GpuCatalog,
    coeffs: &MemCoeffs,
    train: &TrainConfig,
) -> Result<Option<MemDrop>> {
    let layout = stage_layout(s)?;
    for stage_index in 0..layout.len() as u64 {
        let mem = stage_memory_with_layout(s, &layout, stage_index, coeffs, train)?;
        let capacity = catalog.get(&layout[stage_index as usize].0)?.mem_bytes;
        if mem.total_bytes > capacity {
            return Ok(Some(MemDrop {
                stage_index,
                required_bytes: mem.total_bytes,
                capacity_bytes: capacity,
            }));
        }
    }
    Ok(None)
}

/// Drop reasons collected by [`filter_by_memory`].
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct MemFilterStats {
    pub dropped: u64,
    /// (strategy id, stage, bytes over capacity) per dropped strategy.
    pub reasons: Vec<(String, u64, f64)>,
}

/// Keep strategies whose every stage fits its host GPU.
pub fn filter_by_memory<I>(
    strategies: I,
    catalog: &GpuCatalog,
    coeffs: &MemCoeffs,
    train: &TrainConfig,
) -> Result<(Vec<Strategy>, MemFilterStats)>
where
    I: IntoIterator<Item = Strategy>,
{
    let mut kept = Vec::new();
    let mut stats = MemFilterStats::default();
    for s in strategies {
        match check_strategy(&s, catalog, coeffs, train)? {
            None => kept.push(s),
            Some(drop) => {
                stats.dropped += 1;
                stats
                    .reasons
                    .push((s.id.to_string(), drop.stage_index, drop.over_bytes()));
            }
        }
    }
    Ok((kept, stats))
}
