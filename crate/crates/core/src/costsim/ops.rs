//! Operator lists for one pipeline stage.
//!
//! Per layer and per microbatch the forward pass contributes six matmuls
//! (QKV projection, attention scores, attention context, output
//! projection, MLP up, MLP down), all sharded by the tensor-parallel
//! degree. The first stage adds the embedding lookup, the last the
//! vocabulary logits. Backward work is the forward FLOPs times a fixed
//! ratio of 2; recomputation re-runs forward work according to the
//! recompute settings.
//!
//! Communication: two tensor-parallel collectives per layer per direction
//! (allreduce, or allgather + reduce-scatter pairs under sequence
//! parallelism), the inter-stage activation transfer, and one
//! data-parallel gradient reduction per iteration over the stage's
//! parameter shard.

use serde::{Deserialize, Serialize};

use crate::catalog::{
    embedding_params, output_head_params, params_per_layer, GpuSpec, LinkScope, TrainConfig,
};
use crate::error::{Error, Result};
use crate::strategy::{RecomputeGranularity, Strategy};

/// Backward FLOPs per forward FLOP.
pub const BWD_FWD_RATIO: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MatmulQkv = 0,
    MatmulAttnScore = 1,
    MatmulAttnCtx = 2,
    MatmulProj = 3,
    MatmulMlpUp = 4,
    MatmulMlpDown = 5,
    Embed = 6,
    Logits = 7,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatmulQkv => "matmul_qkv",
            OpKind::MatmulAttnScore => "matmul_attn_score",
            OpKind::MatmulAttnCtx => "matmul_attn_ctx",
            OpKind::MatmulProj => "matmul_proj",
            OpKind::MatmulMlpUp => "matmul_mlp_up",
            OpKind::MatmulMlpDown => "matmul_mlp_down",
            OpKind::Embed => "embed",
            OpKind::Logits => "logits",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "matmul_qkv" => OpKind::MatmulQkv,
            "matmul_attn_score" => OpKind::MatmulAttnScore,
            "matmul_attn_ctx" => OpKind::MatmulAttnCtx,
            "matmul_proj" => OpKind::MatmulProj,
            "matmul_mlp_up" => OpKind::MatmulMlpUp,
            "matmul_mlp_down" => OpKind::MatmulMlpDown,
            "embed" => OpKind::Embed,
            "logits" => OpKind::Logits,
            _ => return None,
        })
    }

    pub fn is_matmul(self) -> bool {
        !matches!(self, OpKind::Embed | OpKind::Logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommKind {
    TpAllreduce = 0,
    TpAllgather = 1,
    TpReducescatter = 2,
    P2pActivation = 3,
    DpAllreduce = 4,
    DpReducescatterGather = 5,
}

impl CommKind {
    pub fn name(self) -> &'static str {
        match self {
            CommKind::TpAllreduce => "tp_allreduce",
            CommKind::TpAllgather => "tp_allgather",
            CommKind::TpReducescatter => "tp_reducescatter",
            CommKind::P2pActivation => "p2p_activation",
            CommKind::DpAllreduce => "dp_allreduce",
            CommKind::DpReducescatterGather => "dp_reducescatter_gather",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "tp_allreduce" => CommKind::TpAllreduce,
            "tp_allgather" => CommKind::TpAllgather,
            "tp_reducescatter" => CommKind::TpReducescatter,
            "p2p_activation" => CommKind::P2pActivation,
            "dp_allreduce" => CommKind::DpAllreduce,
            "dp_reducescatter_gather" => CommKind::DpReducescatterGather,
        _ => return None,
        })
    }

    pub fn is_tp_collective(self) -> bool {
        matches!(
            self,
            CommKind::TpAllreduce | CommKind::TpAllgather | CommKind::TpReducescatter
        )
    }

    pub fn is_dp(self) -> bool {
        matches!(self, CommKind::DpAllreduce | CommKind::DpReducescatterGather)
    }

    /// Payload multiplier of the ring algorithm for a group of `g` ranks.
    /// Allreduce moves `2 (g-1)/g` of the payload, allgather and
    /// reduce-scatter `(g-1)/g`, point-to-point the payload itself. The
    /// combined reduce-scatter + gather used by the distributed optimizer
    /// costs the same as an allreduce.
    pub fn ring_factor(self, group_size: u64) -> f64 {
        let g = group_size as f64;
        match self {
            CommKind::TpAllreduce | CommKind::DpAllreduce | CommKind::DpReducescatterGather => {
                2.0 * (g - 1.0) / g
            }
            CommKind::TpAllgather | CommKind::TpReducescatter => (g - 1.0) / g,
            CommKind::P2pActivation => 1.0,
        }
    }
}

/// When during an iteration an operator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fwd,
    Bwd,
    /// Forward work re-executed inside the backward pass.
    Recompute,
    /// Once per iteration rather than per microbatch (gradient reduction).
    PerIteration,
}

/// One compute operator with its theoretical FLOPs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpDesc {
    pub kind: OpKind,
    pub theta_flops: f64,
    pub phase: Phase,
}

/// One communication operator with its raw payload bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommDesc {
    pub kind: CommKind,
    pub theta_bytes: f64,
    pub scope: LinkScope,
    pub group_size: u64,
    pub phase: Phase,
}

/// Position of a stage in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageRole {
    pub first: bool,
    pub last: bool,
}

impl StageRole {
    pub fn of(stage_index: u64, total_stages: u64) -> Self {
        StageRole {
            first: stage_index == 0,
            last: stage_index + 1 == total_stages,
        }
    }
}

/// Forward FLOPs of the six per-layer matmuls for one microbatch,
/// sharded by tensor parallelism, in kind order.
fn layer_matmul_thetas(s: &Strategy, train: &TrainConfig) -> [(OpKind, f64); 6] {
    let seq = train.seq_len as f64;
    let b = s.params.micro_batch as f64;
    let h = s.arch.hidden_size as f64;
    let ffn = s.arch.intermediate_size as f64;
    let t = s.params.tp as f64;
    [
        (OpKind::MatmulQkv, 6.0 * seq * b * h * h / t),
        (OpKind::MatmulAttnScore, 2.0 * seq * seq * b * h / t),
        (OpKind::MatmulAttnCtx, 2.0 * seq * seq * b * h / t),
        (OpKind::MatmulProj, 2.0 * seq * b * h * h / t),
        (OpKind::MatmulMlpUp, 2.0 * seq * b * h * ffn / t),
        (OpKind::MatmulMlpDown, 2.0 * seq * b * h * ffn / t),
    ]
}

/// Build the per-microbatch operator lists for one pipeline stage.
/// MoE-enabled strategies are rejected: the simulator does not model
/// expert dispatch.
pub fn build_stage_ops(
    s: &Strategy,
    layers_on_stage: u64,
    role: StageRole,
    gpu: &GpuSpec,
    train: &TrainConfig,
) -> Result<(Vec<OpDesc>, Vec<CommDesc>)> {
    if s.params.moe.is_some() {
        return Err(Error::Unsupported {
            id: s.id.to_string(),
            reason: "mixture-of-experts strategies are not supported by the cost simulator".into(),
        });
    }
    let p = &s.params;
    let seq = train.seq_len as f64;
    let b = p.micro_batch as f64;
    let h = s.arch.hidden_size as f64;
    let vocab = s.arch.vocab_size as f64;
    let t = p.tp as f64;
    let elem_bytes = train.bytes_per_element as f64;

    let mut ops = Vec::new();
    let mut comms = Vec::new();

    let matmuls = layer_matmul_thetas(s, train);
    for _ in 0..layers_on_stage {
        for (kind, theta) in matmuls {
            ops.push(OpDesc {
                kind,
                theta_flops: theta,
                phase: Phase::Fwd,
            });
            ops.push(OpDesc {
                kind,
                theta_flops: theta * BWD_FWD_RATIO,
                phase: Phase::Bwd,
            });
        }
    }
    if role.first {
        let theta = 2.0 * seq * b * h / t;
        ops.push(OpDesc {
            kind: OpKind::Embed,
            theta_flops: theta,
            phase: Phase::Fwd,
        });
        ops.push(OpDesc {
            kind: OpKind::Embed,
            theta_flops: theta * BWD_FWD_RATIO,
            phase: Phase::Bwd,
        });
    }
    if role.last {
        let theta = 2.0 * seq * b * h * vocab / t;
        ops.push(OpDesc {
            kind: OpKind::Logits,
            theta_flops: theta,
            phase: Phase::Fwd,
        });
        ops.push(OpDesc {
            kind: OpKind::Logits,
            theta_flops: theta * BWD_FWD_RATIO,
            phase: Phase::Bwd,
        });
    }

    // recomputation: full re-runs the whole layer, selective only the
    // attention map matmuls, hybrid mixes both
    let full_layers = s.params.full_recompute_layers(layers_on_stage);
    let selective_layers = match p.recompute_granularity {
        RecomputeGranularity::Selective => layers_on_stage,
        RecomputeGranularity::Hybrid => layers_on_stage - full_layers,
        _ => 0,
    };
    for _ in 0..full_layers {
        for (kind, theta) in matmuls {
            ops.push(OpDesc {
                kind,
                theta_flops: theta,
                phase: Phase::Recompute,
            });
        }
    }
    for _ in 0..selective_layers {
        for (kind, theta) in matmuls {
            if matches!(kind, OpKind::MatmulAttnScore | OpKind::MatmulAttnCtx) {
                ops.push(OpDesc {
                    kind,
                    theta_flops: theta,
                    phase: Phase::Recompute,
                });
            }
        }
    }

    // tensor-parallel collectives: two per layer per direction
    if p.tp >= 2 {
        let payload = seq * b * h * elem_bytes;
        let scope = if p.tp <= gpu.gpus_per_node {
            LinkScope::IntraNode
        } else {
            LinkScope::InterNode
        };
        for phase in [Phase::Fwd, Phase::Bwd] {
            for _ in 0..2 * layers_on_stage {
                if p.sequence_parallel {
                    for kind in [CommKind::TpAllgather, CommKind::TpReducescatter] {
                        comms.push(CommDesc {
                            kind,
                            theta_bytes: payload,
                            scope,
                            group_size: p.tp,
                            phase,
                        });
                    }
                } else {
                    comms.push(CommDesc {
                        kind: CommKind::TpAllreduce,
                        theta_bytes: payload,
                        scope,
                        group_size: p.tp,
                        phase,
                    });
                }
            }
        }
    }

    // activation transfer to the neighbouring stage
    if p.pp >= 2 {
        let shard = if p.sequence_parallel { t } else { 1.0 };
        let payload = seq * b * h * elem_bytes / shard;
        let scope = if 2 * p.tp * p.dp <= gpu.gpus_per_node {
            LinkScope::IntraNode
        } else {
            LinkScope::InterNode
        };
        if !role.last {
            comms.push(CommDesc {
                kind: CommKind::P2pActivation,
                theta_bytes: payload,
                scope,
                group_size: 1,
                phase: Phase::Fwd,
            });
        }
        if !role.first {
            comms.push(CommDesc {
                kind: CommKind::P2pActivation,
                theta_bytes: payload,
                scope,
                group_size: 1,
                phase: Phase::Bwd,
            });
        }
    }

    // gradient reduction over the stage's parameter shard, once per
    // iteration
    if p.dp >= 2 {
        let mut stage_params = layers_on_stage as f64 * params_per_layer(&s.arch) as f64;
        if role.first {
            stage_params += embedding_params(&s.arch) as f64;
        }
        if role.last {
            stage_params += output_head_params(&s.arch) as f64;
        }
        let payload = stage_params / t * elem_bytes;
        let scope = if p.tp * p.dp <= gpu.gpus_per_node {
            LinkScope::IntraNode
        } else {
            LinkScope::InterNode
        };
        let kind = if p.distributed_optimizer {
            CommKind::DpReducescatterGather
        } else {
            CommKind::DpAllreduce
        };
        comms.push(CommDesc {
            kind,
            theta_bytes: payload,
            scope,
            group_size: p.dp,
            phase: Phase::PerIteration,
        });
    }

    Ok((ops, comms))
}
