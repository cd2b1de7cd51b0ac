//! Rule evaluation against a bound strategy.

use crate::catalog::TrainConfig;
use crate::strategy::{RecomputeGranularity, RecomputeMethod, Strategy};

use super::ast::{BinOp, RuleExpr, Value};

/// Evaluation failure, independent of which rule it happened in.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalError(pub String);

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait VarEnv {
    fn lookup(&self, name: &str) -> Option<Value>;
}

impl<F: Fn(&str) -> Option<Value>> VarEnv for F {
    fn lookup(&self, name: &str) -> Option<Value> {
        self(name)
    }
}

/// Variable bindings for one strategy: every parallel parameter under both
/// its short and its framework flag name, plus the `num_gpus` and
/// `num_layers` built-ins. Flags bind as booleans; absent optionals bind
/// as `None`.
pub struct StrategyEnv<'a> {
    strategy: &'a Strategy,
    #[allow(dead_code)]
    train: &'a TrainConfig,
}

impl<'a> StrategyEnv<'a> {
    pub fn new(strategy: &'a Strategy, train: &'a TrainConfig) -> Self {
        StrategyEnv { strategy, train }
    }
}

fn int(v: u64) -> Option<Value> {
    i64::try_from(v).ok().map(Value::Int)
}

impl VarEnv for StrategyEnv<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        let p = &self.strategy.params;
        match name {
            "pp" | "pipeline_model_parallel_size" => int(p.pp),
            "tp" | "tensor_model_parallel_size" => int(p.tp),
            "dp" | "data_model_parallel_size" => int(p.dp),
            "micro_batch" | "micro_batch_size" => int(p.micro_batch),
            "vpp_layers" | "num_layers_per_virtual_pipeline_stage" => match p.vpp_layers {
                Some(v) => int(v),
                None => Some(Value::None),
            },
            "sequence_parallel" => Some(Value::Bool(p.sequence_parallel)),
            "distributed_optimizer" | "use_distributed_optimizer" => {
                Some(Value::Bool(p.distributed_optimizer))
            }
            "recompute_granularity" => Some(match p.recompute_granularity {
                RecomputeGranularity::None => Value::None,
                RecomputeGranularity::Selective => Value::Sym("selective".into()),
                RecomputeGranularity::Full => Value::Sym("full".into()),
                RecomputeGranularity::Hybrid => Value::Sym("hybrid".into()),
            }),
            "recompute_method" => Some(match p.recompute_method {
                RecomputeMethod::None => Value::None,
                RecomputeMethod::Block => Value::Sym("block".into()),
                RecomputeMethod::Uniform => Value::Sym("uniform".into()),
            }),
            "recompute_num_layers" => int(p.recompute_num_layers),
            "offload_optimizer" => Some(Value::Bool(p.offload_optimizer)),
            "overlap_p2p" | "overlap_p2p_communication" => Some(Value::Bool(p.overlap_p2p)),
            "tp_comm_overlap" => Some(Value::Bool(p.tp_comm_overlap)),
            "overlap_grad_reduce" => Some(Value::Bool(p.overlap_grad_reduce)),
            "overlap_param_gather" => Some(Value::Bool(p.overlap_param_gather)),
            "use_flash_attn" => Some(Value::Bool(p.use_flash_attn)),
            "num_experts" => match &p.moe {
                Some(m) => int(m.num_experts),
                None => Some(Value::None),
            },
            "ep_size" | "expert_model_parallel_size" => match &p.moe {
                Some(m) => int(m.ep_size),
                None => Some(Value::None),
            },
            "moe_router_topk" => match &p.moe {
                Some(m) => int(m.topk),
                None => Some(Value::None),
            },
            "num_gpus" => int(self.strategy.num_gpus()),
            "num_layers" => int(self.strategy.arch.num_layers),
            _ => None,
        }
    }
}

fn type_mismatch(op: BinOp, lhs: &Value, rhs: &Value) -> EvalError {
    EvalError(format!(
        "`{}` cannot compare {} with {}",
        op.token(),
        lhs.type_name(),
        rhs.type_name()
    ))
}

fn as_int(v: &Value, op: BinOp) -> Result<i64, EvalError> {
    match v {
        Value::Int(i) => Ok(*i),
        other => Err(EvalError(format!(
            "`{}` needs integer operands, got {}",
            op.token(),
            other.type_name()
        ))),
    }
}

fn as_bool(v: &Value, op: BinOp) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(*b),
        other => Err(EvalError(format!(
            "`{}` needs boolean operands, got {}",
            op.token(),
            other.type_name()
        ))),
    }
}

/// Evaluate an expression to a value. Logical operators short-circuit
/// left to right; arithmetic is checked integer math.
pub fn eval_expr(expr: &RuleExpr, env: &dyn VarEnv) -> Result<Value, EvalError> {
    match expr {
        RuleExpr::Int(v) => Ok(Value::Int(*v)),
        RuleExpr::Bool(v) => Ok(Value::Bool(*v)),
        RuleExpr::Sym(name) => Ok(Value::Sym(name.clone())),
        RuleExpr::None => Ok(Value::None),
        RuleExpr::Var(name) => env
            .lookup(name)
            .ok_or_else(|| EvalError(format!("unbound variable `${name}`"))),
        RuleExpr::Binary { op, lhs, rhs } => match op {
            BinOp::And => {
                if !as_bool(&eval_expr(lhs, env)?, *op)? {
                    return Ok(Value::Bool(false));
                }
                Ok(Value::Bool(as_bool(&eval_expr(rhs, env)?, *op)?))
            }
            BinOp::Or => {
                if as_bool(&eval_expr(lhs, env)?, *op)? {
                    return Ok(Value::Bool(true));
                }
                Ok(Value::Bool(as_bool(&eval_expr(rhs, env)?, *op)?))
            }
            BinOp::Eq | BinOp::Ne => {
                let l = eval_expr(lhs, env)?;
                let r = eval_expr(rhs, env)?;
                let equal = match (&l, &r) {
                    (Value::None, Value::None) => true,
                    (Value::None, _) | (_, Value::None) => false,
                    (Value::Int(a), Value::Int(b)) => a == b,
                    (Value::Bool(a), Value::Bool(b)) => a == b,
                    (Value::Sym(a), Value::Sym(b)) => a == b,
                    _ => return Err(type_mismatch(*op, &l, &r)),
                };
                Ok(Value::Bool(if *op == BinOp::Eq { equal } else { !equal }))
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let l = as_int(&eval_expr(lhs, env)?, *op)?;
                let r = as_int(&eval_expr(rhs, env)?, *op)?;
                let result = match op {
                    BinOp::Lt => l < r,
                    BinOp::Le => l <= r,
                    BinOp::Gt => l > r,
                    BinOp::Ge => l >= r,
                    _ => unreachable!(),
                };
                Ok(Value::Bool(result))
            }
            BinOp::Mul | BinOp::Mod | BinOp::Add | BinOp::Sub => {
                let l = as_int(&eval_expr(lhs, env)?, *op)?;
                let r = as_int(&eval_expr(rhs, env)?, *op)?;
                let result = match op {
                    BinOp::Mul => l.checked_mul(r),
                    BinOp::Add => l.checked_add(r),
                    BinOp::Sub => l.checked_sub(r),
                    BinOp::Mod => {
                        if r == 0 {
                            None
                        } else {
                            l.checked_rem(r)
                        }
                    }
                    _ => unreachable!(),
                };
                result.map(Value::Int).ok_or_else(|| {
                    EvalError(format!(
                        "arithmetic `{} {} {}` overflowed or divided by zero",
                        l,
                        op.token(),
                        r
                    ))
                })
            }
        },
    }
}

/// Evaluate an expression that must produce a boolean.
pub fn eval_bool(expr: &RuleExpr, env: &dyn VarEnv) -> Result<bool, EvalError> {
    match eval_expr(expr, env)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError(format!(
            "rule must evaluate to a boolean, got {}",
            other.type_name()
        ))),
    }
}
