//! The parallel-parameter search space and candidate-strategy enumeration.
//!
//! A strategy binds one GPU configuration to one point of the parameter
//! space for a fixed model. Enumeration walks the Cartesian product of
//! the per-parameter candidate lists in a fixed field order, derives the
//! data-parallel degree, and silently skips combinations that are not
//! structurally well-formed (downstream formulas would be undefined for
//! them, unlike user rules which encode preference or legality).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{GpuCatalog, ModelArch, TrainConfig};
use crate::error::{Error, Result};
use crate::hetero::HeteroPartition;
use crate::modes::GpuConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum RecomputeGranularity {
    None,
    Selective,
    Full,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum RecomputeMethod {
    None,
    Block,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub struct MoeParams {
    pub num_experts: u64,
    pub ep_size: u64,
    pub topk: u64,
}

/// One point in the parallel-parameter search space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelParams {
    /// Pipeline-model-parallel size.
    pub pp: u64,
    /// Tensor-model-parallel size.
    pub tp: u64,
    /// Data-parallel size, always derived as `num_gpus / (pp * tp)`.
    pub dp: u64,
    /// Samples per microbatch.
    pub micro_batch: u64,
    /// Layers per virtual pipeline stage, when interleaving is on.
    pub vpp_layers: Option<u64>,
    pub sequence_parallel: bool,
    pub distributed_optimizer: bool,
    pub recompute_granularity: RecomputeGranularity,
    pub recompute_method: RecomputeMethod,
    pub recompute_num_layers: u64,
    pub offload_optimizer: bool,
    pub overlap_p2p: bool,
    pub tp_comm_overlap: bool,
    pub overlap_grad_reduce: bool,
    pub overlap_param_gather: bool,
    pub use_flash_attn: bool,
    pub moe: Option<MoeParams>,
}

impl ParallelParams {
    /// Microbatches per iteration: `global_batch / (dp * micro_batch)`.
    pub fn microbatch_count(&self, train: &TrainConfig) -> u64 {
        train.global_batch / (self.dp * self.micro_batch)
    }

    /// Layers of a stage that are checkpointed input-only and fully
    /// re-run in the backward pass. Block recomputation caps the depth at
    /// `recompute_num_layers`; uniform (or unset) recomputes the whole
    /// stage; hybrid re-runs a block fully and the rest selectively.
    pub fn full_recompute_layers(&self, layers_on_stage: u64) -> u64 {
        match self.recompute_granularity {
            RecomputeGranularity::Full => match self.recompute_method {
                RecomputeMethod::Block => self.recompute_num_layers.min(layers_on_stage),
                RecomputeMethod::Uniform | RecomputeMethod::None => layers_on_stage,
            },
            RecomputeGranularity::Hybrid => self.recompute_num_layers.min(layers_on_stage),
            _ => 0,
        }
    }
}

/// (gpu type hosting the stage, layers on the stage) in pipeline order.
/// Homogeneous stages get the ceil split: the first `N mod pp` stages
/// hold one layer more. Heterogeneous strategies read their partition.
pub fn stage_layout(s: &Strategy) -> Result<Vec<(String, u64)>> {
    if let Some(partition) = &s.partition {
        return Ok(partition
            .stage_assignments()
            .into_iter()
            .map(|(ty, n)| (ty.to_string(), n))
            .collect());
    }
    let ty = s.gpu_config.sole_type().ok_or_else(|| {
        Error::InvalidRequest(
            "a multi-type configuration needs a pipeline partition before costing".into(),
        )
    })?;
    let pp = s.params.pp;
    let n = s.arch.num_layers;
    let base = n / pp;
    let extra = n % pp;
    Ok((0..pp)
        .map(|i| (ty.to_string(), base + u64::from(i < extra)))
        .collect())
}

/// Data-parallel degree for a GPU count and (pp, tp) pair.
pub fn derive_dp(num_gpus: u64, pp: u64, tp: u64) -> Result<u64> {
    let denom = pp
        .checked_mul(tp)
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::validation("pp*tp", "pp and tp must be positive"))?;
    if !num_gpus.is_multiple_of(denom) {
        return Err(Error::validation(
            "dp",
            format!("{num_gpus} GPUs not divisible by pp*tp = {denom}"),
        ));
    }
    Ok(num_gpus / denom)
}

/// Finite candidate lists for every searchable parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpace {
    pub pp: Vec<u64>,
    pub tp: Vec<u64>,
    pub micro_batch: Vec<u64>,
    pub vpp_layers: Vec<Option<u64>>,
    pub sequence_parallel: Vec<bool>,
    pub distributed_optimizer: Vec<bool>,
    pub recompute_granularity: Vec<RecomputeGranularity>,
    pub recompute_method: Vec<RecomputeMethod>,
    pub recompute_num_layers: Vec<u64>,
    pub offload_optimizer: Vec<bool>,
    pub overlap_p2p: Vec<bool>,
    pub tp_comm_overlap: Vec<bool>,
    pub overlap_grad_reduce: Vec<bool>,
    pub overlap_param_gather: Vec<bool>,
    pub use_flash_attn: Vec<bool>,
    pub moe: Vec<Option<MoeParams>>,
}

fn pow2_up_to(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut v = 1u64;
    while v <= max {
        out.push(v);
        match v.checked_mul(2) {
            Some(next) => v = next,
            None => break,
        }
    }
    out
}

impl ParamSpace {
    /// Defaults for a model on a GPU configuration: pipeline and tensor
    /// degrees over powers of two (tensor parallelism capped at one node),
    /// modest microbatch sizes, and all strategy toggles that the cost
    /// model distinguishes. MoE stays disabled by default.
    pub fn default_for(
        arch: &ModelArch,
        train: &TrainConfig,
        config: &GpuConfig,
        catalog: &GpuCatalog,
    ) -> Result<Self> {
        let num_gpus = config.total();
        let gpus_per_node = match config {
            GpuConfig::Fixed { entries, .. } => entries
                .iter()
                .map(|(ty, _)| catalog.get(ty).map(|g| g.gpus_per_node))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .min()
                .unwrap_or(1),
            GpuConfig::Bounded { limits, .. } => limits
                .iter()
                .map(|(ty, _)| catalog.get(ty).map(|g| g.gpus_per_node))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .min()
                .unwrap_or(1),
        };
        let rnl: Vec<u64> = [1u64, 2, 4]
            .into_iter()
            .filter(|v| *v <= arch.num_layers)
            .collect();
        Ok(ParamSpace {
            pp: pow2_up_to(arch.num_layers.min(num_gpus)),
            tp: pow2_up_to(arch.num_heads.min(gpus_per_node).min(num_gpus)),
            micro_batch: pow2_up_to(train.global_batch.min(8)),
            vpp_layers: vec![None],
            sequence_parallel: vec![false, true],
            distributed_optimizer: vec![false, true],
            recompute_granularity: vec![
                RecomputeGranularity::None,
                RecomputeGranularity::Selective,
                RecomputeGranularity::Full,
            ],
            recompute_method: vec![
                RecomputeMethod::None,
                RecomputeMethod::Block,
                RecomputeMethod::Uniform,
            ],
            recompute_num_layers: rnl,
            offload_optimizer: vec![false, true],
            overlap_p2p: vec![true],
            tp_comm_overlap: vec![true],
            overlap_grad_reduce: vec![true],
            overlap_param_gather: vec![true],
            use_flash_attn: vec![true],
            moe: vec![None],
        })
    }

    /// Override candidate lists from a JSON map. Values are either an
    /// explicit list or a `{"min","max","scale"}` range object; keys accept
    /// both the short field names and the long framework flag names.
    pub fn apply_json(&mut self, text: &str, origin: &str) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        for (key, value) in map {
            match key.as_str() {
                "pp" | "pipeline_model_parallel_size" => {
                    self.pp = counts_from(&key, &value)?;
                }
                "tp" | "tensor_model_parallel_size" => {
                    self.tp = counts_from(&key, &value)?;
                }
                "micro_batch" | "micro_batch_size" => {
                    self.micro_batch = counts_from(&key, &value)?;
                }
                "vpp_layers" | "num_layers_per_virtual_pipeline_stage" => {
                    self.vpp_layers = optional_counts_from(&key, &value)?;
                }
                "sequence_parallel" => self.sequence_parallel = bools_from(&key, &value)?,
                "distributed_optimizer" | "use_distributed_optimizer" => {
                    self.distributed_optimizer = bools_from(&key, &value)?;
                }
                "recompute_granularity" => {
                    self.recompute_granularity = list_from(&key, &value)?;
                }
                "recompute_method" => self.recompute_method = list_from(&key, &value)?,
                "recompute_num_layers" => {
                    self.recompute_num_layers = counts_from(&key, &value)?;
                }
                "offload_optimizer" => self.offload_optimizer = bools_from(&key, &value)?,
                "overlap_p2p" | "overlap_p2p_communication" => {
                    self.overlap_p2p = bools_from(&key, &value)?;
                }
                "tp_comm_overlap" => self.tp_comm_overlap = bools_from(&key, &value)?,
                "overlap_grad_reduce" => self.overlap_grad_reduce = bools_from(&key, &value)?,
                "overlap_param_gather" => self.overlap_param_gather = bools_from(&key, &value)?,
                "use_flash_attn" => self.use_flash_attn = bools_from(&key, &value)?,
                "moe" => self.moe = list_from(&key, &value)?,
                other => {
                    return Err(Error::validation(
                        other.to_string(),
                        "unknown parameter in space file",
                    ))
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        macro_rules! non_empty {
            ($field:ident) => {
                if self.$field.is_empty() {
                    return Err(Error::validation(
                        stringify!($field),
                        "candidate list must not be empty",
                    ));
                }
            };
        }
        non_empty!(pp);
        non_empty!(tp);
        non_empty!(micro_batch);
        non_empty!(vpp_layers);
        non_empty!(sequence_parallel);
        non_empty!(distributed_optimizer);
        non_empty!(recompute_granularity);
        non_empty!(recompute_method);
        non_empty!(recompute_num_layers);
        non_empty!(offload_optimizer);
        non_empty!(overlap_p2p);
        non_empty!(tp_comm_overlap);
        non_empty!(overlap_grad_reduce);
        non_empty!(overlap_param_gather);
        non_empty!(use_flash_attn);
        non_empty!(moe);
        for (name, list) in [
            ("pp", &self.pp),
            ("tp", &self.tp),
            ("micro_batch", &self.micro_batch),
            ("recompute_num_layers", &self.recompute_num_layers),
        ] {
            if list.iter().any(|v| *v < 1) {
                return Err(Error::validation(name, "values must be at least 1"));
            }
        }
        Ok(())
    }

    /// Candidate-list lengths in enumeration order.
    fn lens(&self) -> [usize; 16] {
        [
            self.pp.len(),
            self.tp.len(),
            self.micro_batch.len(),
            self.vpp_layers.len(),
            self.sequence_parallel.len(),
            self.distributed_optimizer.len(),
            self.recompute_granularity.len(),
            self.recompute_method.len(),
            self.recompute_num_layers.len(),
            self.offload_optimizer.len(),
            self.overlap_p2p.len(),
            self.tp_comm_overlap.len(),
            self.overlap_grad_reduce.len(),
            self.overlap_param_gather.len(),
            self.use_flash_attn.len(),
            self.moe.len(),
        ]
    }

    fn point(&self, idx: &[usize; 16]) -> ParallelParams {
        ParallelParams {
            pp: self.pp[idx[0]],
            tp: self.tp[idx[1]],
            dp: 0, // derived per configuration
            micro_batch: self.micro_batch[idx[2]],
            vpp_layers: self.vpp_layers[idx[3]],
            sequence_parallel: self.sequence_parallel[idx[4]],
            distributed_optimizer: self.distributed_optimizer[idx[5]],
            recompute_granularity: self.recompute_granularity[idx[6]],
            recompute_method: self.recompute_method[idx[7]],
            recompute_num_layers: self.recompute_num_layers[idx[8]],
            offload_optimizer: self.offload_optimizer[idx[9]],
            overlap_p2p: self.overlap_p2p[idx[10]],
            tp_comm_overlap: self.tp_comm_overlap[idx[11]],
            overlap_grad_reduce: self.overlap_grad_reduce[idx[12]],
            overlap_param_gather: self.overlap_param_gather[idx[13]],
            use_flash_attn: self.use_flash_attn[idx[14]],
            moe: self.moe[idx[15]],
        }
    }
}

fn counts_from(key: &str, value: &serde_json::Value) -> Result<Vec<u64>> {
    if let Some(obj) = value.as_object() {
        let get = |k: &str| -> Result<u64> {
            obj.get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::validation(key.to_string(), format!("range needs integer `{k}`")))
        };
        let min = get("min")?;
        let max = get("max")?;
        if min < 1 || max < min {
            return Err(Error::validation(key.to_string(), "range needs 1 <= min <= max"));
        }
        let scale = obj.get("scale").and_then(|v| v.as_str()).unwrap_or("pow2");
        let values = match scale {
            "pow2" => pow2_up_to(max).into_iter().filter(|v| *v >= min).collect(),
            "linear" => (min..=max).collect(),
            other => {
                return Err(Error::validation(
                    key.to_string(),
                    format!("unknown scale `{other}` (expected pow2 or linear)"),
                ))
            }
        };
        return Ok(values);
    }
    list_from(key, value)
}

fn optional_counts_from(key: &str, value: &serde_json::Value) -> Result<Vec<Option<u64>>> {
    list_from(key, value)
}

fn bools_from(key: &str, value: &serde_json::Value) -> Result<Vec<bool>> {
    list_from(key, value)
}

fn list_from<T: serde::de::DeserializeOwned>(key: &str, value: &serde_json::Value) -> Result<Vec<T>> {
    serde_json::from_value(value.clone())
        .map_err(|e| Error::validation(key.to_string(), format!("bad candidate list: {e}")))
}

/// A fully bound candidate: GPU configuration + parameter point + model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    pub id: StrategyId,
    pub gpu_config: GpuConfig,
    pub params: ParallelParams,
    pub arch: ModelArch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<HeteroPartition>,
}

/// Stable 64-bit content hash of a strategy, rendered as hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrategyId(pub u64);

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for StrategyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Strategy {
    pub fn new(
        gpu_config: GpuConfig,
        params: ParallelParams,
        arch: ModelArch,
        partition: Option<HeteroPartition>,
    ) -> Self {
        let id = Self::compute_id(&gpu_config, &params, partition.as_ref(), &arch);
        Strategy {
            id,
            gpu_config,
            params,
            arch,
            partition,
        }
    }

    /// Rebind with a pipeline partition; the id changes with the contents.
    pub fn with_partition(&self, partition: HeteroPartition) -> Self {
        Strategy::new(
            self.gpu_config.clone(),
            self.params.clone(),
            self.arch.clone(),
            Some(partition),
        )
    }

    fn compute_id(
        gpu_config: &GpuConfig,
        params: &ParallelParams,
        partition: Option<&HeteroPartition>,
        arch: &ModelArch,
    ) -> StrategyId {
        #[derive(Serialize)]
        struct Content<'a> {
            gpu_config: &'a GpuConfig,
            params: &'a ParallelParams,
            partition: Option<&'a HeteroPartition>,
            arch: &'a ModelArch,
        }
        let bytes = serde_json::to_vec(&Content {
            gpu_config,
            params,
            partition,
            arch,
        })
        .expect("strategy serialization cannot fail");
        let digest = Sha256::digest(&bytes);
        let mut first8 = [0u8; 8];
        first8.copy_from_slice(&digest[..8]);
        StrategyId(u64::from_be_bytes(first8))
    }

    pub fn num_gpus(&self) -> u64 {
        self.gpu_config.total()
    }

    pub fn microbatch_count(&self, train: &TrainConfig) -> u64 {
        self.params.microbatch_count(train)
    }
}

/// Is this parameter point well-formed for the given configuration?
///
/// Violations here make downstream formulas undefined, so such points are
/// skipped at generation rather than expressed as user rules.
pub fn structurally_valid(
    params: &ParallelParams,
    num_gpus: u64,
    arch: &ModelArch,
    train: &TrainConfig,
) -> bool {
    let Ok(dp) = derive_dp(num_gpus, params.pp, params.tp) else {
        return false;
    };
    if dp < 1 {
        return false;
    }
    if params.pp > arch.num_layers {
        return false;
    }
    if !arch.num_heads.is_multiple_of(params.tp) || !arch.hidden_size.is_multiple_of(params.tp) {
        return false;
    }
    if !train.global_batch.is_multiple_of(dp) {
        return false;
    }
    let per_replica = train.global_batch / dp;
    if !per_replica.is_multiple_of(params.micro_batch) {
        return false;
    }
    if let Some(v) = params.vpp_layers {
        if v < 1
            || !arch.num_layers.is_multiple_of(params.pp)
            || !(arch.num_layers / params.pp).is_multiple_of(v)
        {
            return false;
        }
    }
    if let Some(moe) = &params.moe {
        if moe.num_experts < 1
            || moe.ep_size < 1
            || dp % moe.ep_size != 0
            || moe.num_experts % moe.ep_size != 0
            || moe.topk < 1
            || moe.topk > moe.num_experts
        {
            return false;
        }
    }
    true
}

/// Deterministic stream of well-formed strategies over
/// `configs x parameter space`.
pub struct StrategyEnumerator<'a> {
    configs: &'a [GpuConfig],
    space: &'a ParamSpace,
    arch: &'a ModelArch,
    train: &'a TrainConfig,
    lens: [usize; 16],
    cfg_idx: usize,
    odometer: [usize; 16],
    exhausted: bool,
}

impl<'a> StrategyEnumerator<'a> {
    pub fn new(
        configs: &'a [GpuConfig],
        space: &'a ParamSpace,
        arch: &'a ModelArch,
        train: &'a TrainConfig,
    ) -> Self {
        let lens = space.lens();
        StrategyEnumerator {
            configs,
            space,
            arch,
            train,
            lens,
            cfg_idx: 0,
            odometer: [0; 16],
            exhausted: configs.is_empty() || lens.contains(&0),
        }
    }

    /// Advance the odometer (last field fastest); move to the next
    /// configuration when the parameter product wraps around.
    fn advance(&mut self) {
        for i in (0..16).rev() {
            self.odometer[i] += 1;
            if self.odometer[i] < self.lens[i] {
                return;
            }
            self.odometer[i] = 0;
        }
        self.cfg_idx += 1;
        if self.cfg_idx >= self.configs.len() {
            self.exhausted = true;
        }
    }
}

impl Iterator for StrategyEnumerator<'_> {
    type Item = Strategy;

    fn next(&mut self) -> Option<Strategy> {
        while !self.exhausted {
            let config = &self.configs[self.cfg_idx];
            let mut params = self.space.point(&self.odometer);
            self.advance();
            if structurally_valid(&params, config.total(), self.arch, self.train) {
                params.dp = config.total() / (params.pp * params.tp);
                return Some(Strategy::new(
                    config.clone(),
                    params,
                    self.arch.clone(),
                    None,
                ));
            }
        }
        None
    }
}

pub fn enumerate_strategies<'a>(
    configs: &'a [GpuConfig],
    space: &'a ParamSpace,
    arch: &'a ModelArch,
    train: &'a TrainConfig,
) -> StrategyEnumerator<'a> {
    StrategyEnumerator::new(configs, space, arch, train)
}

/// Size of the raw product `prod |candidates| x |configs|`, counted before
/// structural skipping.
pub fn search_space_size(configs: &[GpuConfig], space: &ParamSpace) -> u128 {
    let per_config: u128 = space.lens().iter().map(|&l| l as u128).product();
    per_config * configs.len() as u128
}
