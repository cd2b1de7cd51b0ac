//! End-to-end search: pool expansion, enumeration, rule and memory
//! filters, cost simulation, and throughput/money ranking.
//!
//! Strategy evaluation fans out over a bounded worker pool. All shared
//! inputs are immutable and results are collected in enumeration order,
//! so reports are identical regardless of the worker count.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{GpuCatalog, ModelArch, TrainConfig};
use crate::costsim::{price_strategy, CostBreakdown, EfficiencyModel};
use crate::error::{Error, Result};
use crate::hetero::best_hetero_strategy;
use crate::memest::{check_strategy, MemCoeffs};
use crate::modes::{generate_gpu_configs, GpuConfig, SearchRequest};
use crate::pareto::{
    gpu_bill, money_cost, pareto_pool, select_best_within_budget, sort_strategies, Dominance,
    ParetoPoint,
};
use crate::report::{
    RankedStrategy, RequestEcho, SearchCounts, SearchReport, Timings, REPORT_SCHEMA_VERSION,
};
use crate::rulelang::{RuleFilterStats, RuleSet};
use crate::strategy::{enumerate_strategies, search_space_size, ParamSpace, Strategy};

/// Everything a search needs, already loaded and validated.
#[derive(Debug, Clone)]
pub struct SearchInputs {
    pub request: SearchRequest,
    pub catalog: GpuCatalog,
    pub arch: ModelArch,
    pub train: TrainConfig,
    /// Parameter space; defaults are derived per configuration when absent.
    pub space: Option<ParamSpace>,
    pub rules: RuleSet,
    pub coeffs: MemCoeffs,
    pub eff: EfficiencyModel,
    /// Token horizon the money figures are computed for.
    pub total_tokens: f64,
    pub top_k: usize,
    pub strict_dominance: bool,
    pub workers: usize,
}

impl SearchInputs {
    fn dominance(&self) -> Dominance {
        if self.strict_dominance {
            Dominance::Strict
        } else {
            Dominance::Weak
        }
    }
}

/// A survivor with everything the report needs.
#[derive(Debug, Clone, Serialize)]
struct Survivor {
    strategy: Strategy,
    cost: CostBreakdown,
    partitions_enumerated: u64,
    partitions_oom: u64,
}

enum Outcome {
    RuleDropped(String),
    MemoryDropped,
    InfeasiblePartition,
    Unsupported,
    Priced(Box<Survivor>),
    /// Heterogeneous family whose every partition exceeded memory.
    AllPartitionsOom { enumerated: u64 },
}

fn evaluate_one(s: Strategy, inputs: &SearchInputs) -> Result<Outcome> {
    if let Some(rule) = inputs.rules.first_match(&s, &inputs.train)? {
        return Ok(Outcome::RuleDropped(rule.to_string()));
    }
    if s.params.moe.is_some() {
        return Ok(Outcome::Unsupported);
    }
    let id = s.id;
    match &s.gpu_config {
        GpuConfig::Bounded { .. } => {
            let eval = best_hetero_strategy(
                &s,
                &inputs.catalog,
                &inputs.eff,
                &inputs.coeffs,
                &inputs.train,
            )
            .map_err(|e| e.in_module("hetero", id.to_string()))?;
            if eval.partitions_enumerated == 0 {
                return Ok(Outcome::InfeasiblePartition);
            }
            match eval.ranked.into_iter().next() {
                None => Ok(Outcome::AllPartitionsOom {
                    enumerated: eval.partitions_enumerated,
                }),
                Some(best) => Ok(Outcome::Priced(Box::new(Survivor {
                    strategy: best.strategy,
                    cost: best.cost,
                    partitions_enumerated: eval.partitions_enumerated,
                    partitions_oom: eval.partitions_oom,
                }))),
            }
        }
        GpuConfig::Fixed { .. } => {
            if check_strategy(&s, &inputs.catalog, &inputs.coeffs, &inputs.train)
                .map_err(|e| e.in_module("memest", id.to_string()))?
                .is_some()
            {
                return Ok(Outcome::MemoryDropped);
            }
            let cost = price_strategy(&s, &inputs.catalog, &inputs.eff, &inputs.train)
                .map_err(|e| e.in_module("costsim", id.to_string()))?;
            Ok(Outcome::Priced(Box::new(Survivor {
                strategy: s,
                cost,
                partitions_enumerated: 0,
                partitions_oom: 0,
            })))
        }
    }
}

/// Run the full pipeline and assemble the report.
pub fn run_search(inputs: &SearchInputs) -> Result<SearchReport> {
    let t_start = Instant::now();
    inputs.train.validate()?;
    let configs = generate_gpu_configs(&inputs.request, &inputs.catalog)?;

    // enumeration: per configuration so that default spaces can adapt to
    // the cluster size
    let mut candidates: Vec<Strategy> = Vec::new();
    let mut space_size: u128 = 0;
    for config in &configs {
        let space = match &inputs.space {
            Some(space) => space.clone(),
            None => ParamSpace::default_for(&inputs.arch, &inputs.train, config, &inputs.catalog)?,
        };
        space.validate()?;
        let slice = std::slice::from_ref(config);
        space_size += search_space_size(slice, &space);
        candidates.extend(enumerate_strategies(slice, &space, &inputs.arch, &inputs.train));
    }
    let search_seconds = t_start.elapsed().as_secs_f64();

    // evaluation fan-out; collect preserves enumeration order
    let t_sim = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inputs.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidRequest(format!("cannot build worker pool: {e}")))?;
    let generated = candidates.len() as u64;
    let outcomes: Vec<Outcome> = pool.install(|| {
        candidates
            .into_par_iter()
            .map(|s| evaluate_one(s, inputs))
            .collect::<Result<Vec<Outcome>>>()
    })?;
    let simulation_seconds = t_sim.elapsed().as_secs_f64();

    let mut counts = SearchCounts {
        space_size,
        configurations: configs.len() as u64,
        generated,
        ..SearchCounts::default()
    };
    let mut rule_stats = RuleFilterStats::for_rules(&inputs.rules);
    let mut survivors: Vec<Survivor> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::RuleDropped(rule) => rule_stats.record(&rule),
            Outcome::MemoryDropped => counts.memory_dropped += 1,
            Outcome::InfeasiblePartition => counts.infeasible_partition += 1,
            Outcome::Unsupported => counts.unsupported += 1,
            Outcome::AllPartitionsOom { enumerated } => {
                counts.memory_dropped += 1;
                counts.partitions_enumerated += enumerated;
                counts.partitions_oom += enumerated;
            }
            Outcome::Priced(survivor) => {
                counts.partitions_enumerated += survivor.partitions_enumerated;
                counts.partitions_oom += survivor.partitions_oom;
                survivors.push(*survivor);
            }
        }
    }
    counts.rule_drops = rule_stats.drops;
    counts.simulated = survivors.len() as u64;
    debug_assert!(counts.is_conserved());

    // money over the configured token horizon
    let tokens_per_iteration = inputs.train.tokens_per_iteration() as f64;
    let iterations = inputs.total_tokens / tokens_per_iteration;
    let mut points = Vec::with_capacity(survivors.len());
    for survivor in &survivors {
        let bill = gpu_bill(&survivor.strategy, &inputs.catalog)?;
        let bill_lines: Vec<(u64, f64)> = bill.iter().map(|(_, n, f)| (*n, *f)).collect();
        let total_seconds = survivor.cost.t_total * iterations;
        let money = money_cost(total_seconds, &bill_lines)?;
        points.push(ParetoPoint {
            strategy_id: survivor.strategy.id,
            throughput: survivor.cost.throughput_tokens_per_s,
            money,
            total_seconds,
            gpu_bill: bill,
        });
    }

    let frontier = pareto_pool(&points, inputs.dominance());
    let budget = inputs.request.max_money;
    let selected = select_best_within_budget(&frontier, budget);

    // rank all survivors, keep the top k for the report
    let mut ranked_points = points.clone();
    sort_strategies(&mut ranked_points);
    let mut strategies = Vec::new();
    for (rank, point) in ranked_points.iter().take(inputs.top_k).enumerate() {
        let survivor = survivors
            .iter()
            .find(|s| s.strategy.id == point.strategy_id)
            .expect("ranked point has a survivor");
        strategies.push(RankedStrategy {
            rank: rank as u64 + 1,
            id: survivor.strategy.id.to_string(),
            gpu_config: survivor.strategy.gpu_config.clone(),
            params: survivor.strategy.params.clone(),
            partition: survivor.strategy.partition.clone(),
            microbatches: survivor.strategy.microbatch_count(&inputs.train),
            cost: survivor.cost,
            point: point.clone(),
        });
    }

    Ok(SearchReport {
        schema: REPORT_SCHEMA_VERSION,
        request: RequestEcho {
            request: inputs.request.clone(),
            model_family: inputs.arch.family.clone(),
            train: inputs.train.clone(),
            total_tokens: inputs.total_tokens,
            top_k: inputs.top_k,
            strict_dominance: inputs.strict_dominance,
        },
        counts,
        strategies,
        frontier,
        selected,
        timings: Timings {
            search_seconds,
            simulation_seconds,
            e2e_seconds: t_start.elapsed().as_secs_f64(),
        },
    })
}
