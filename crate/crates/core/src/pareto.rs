//! Money pricing, the throughput/cost optimal pool, sorting, and budget
//! selection.

use serde::Serialize;

use crate::catalog::GpuCatalog;
use crate::error::{Error, Result};
use crate::modes::GpuConfig;
use crate::strategy::{Strategy, StrategyId};

/// One strategy projected onto the (throughput, money) plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub strategy_id: StrategyId,
    /// Tokens per second.
    pub throughput: f64,
    /// Currency for the configured workload horizon.
    pub money: f64,
    /// Seconds the workload takes under this strategy.
    pub total_seconds: f64,
    /// (gpu type, count, fee per GPU-second) making up the bill.
    pub gpu_bill: Vec<(String, u64, f64)>,
}

/// Money for running `total_seconds` on a bill of (count, fee/s) lines:
/// `sum T * N * F`.
pub fn money_cost(total_seconds: f64, bill: &[(u64, f64)]) -> Result<f64> {
    if total_seconds < 0.0 || total_seconds.is_nan() {
        return Err(Error::validation(
            "total_seconds",
            format!("must be non-negative, got {total_seconds}"),
        ));
    }
    let mut total = 0.0;
    for (count, fee) in bill {
        if *fee < 0.0 || fee.is_nan() {
            return Err(Error::validation(
                "fee",
                format!("must be non-negative, got {fee}"),
            ));
        }
        total += total_seconds * *count as f64 * fee;
    }
    Ok(total)
}

/// The (gpu type, count, fee per GPU-second) lines a strategy is billed
/// for. Heterogeneous strategies bill each segment's type separately:
/// type `i` holds `m_i * dp * tp` GPUs.
pub fn gpu_bill(s: &Strategy, catalog: &GpuCatalog) -> Result<Vec<(String, u64, f64)>> {
    if let Some(partition) = &s.partition {
        let per_stage = s.params.dp * s.params.tp;
        return partition
            .segments
            .iter()
            .map(|seg| {
                let fee = catalog.get(&seg.gpu_type)?.price_per_second;
                Ok((seg.gpu_type.clone(), seg.stages * per_stage, fee))
            })
            .collect();
    }
    match &s.gpu_config {
        GpuConfig::Fixed { entries, .. } => entries
            .iter()
            .map(|(ty, count)| {
                let fee = catalog.get(ty)?.price_per_second;
                Ok((ty.clone(), *count, fee))
            })
            .collect(),
        GpuConfig::Bounded { .. } => Err(Error::InvalidRequest(
            "cannot bill a bounded configuration before partitioning".into(),
        )),
    }
}

/// Dominance rule for the optimal pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dominance {
    /// Drop a point if another is at least as good on both axes and
    /// strictly better on one; equal (throughput, money) duplicates keep
    /// the lowest strategy id.
    #[default]
    Weak,
    /// Drop a point only if another is strictly better on both axes.
    Strict,
}

fn dominates(a: &ParetoPoint, b: &ParetoPoint, rule: Dominance) -> bool {
    match rule {
        Dominance::Strict => a.throughput > b.throughput && a.money < b.money,
        Dominance::Weak => {
            (a.throughput >= b.throughput && a.money < b.money)
                || (a.throughput > b.throughput && a.money <= b.money)
        }
    }
}

/// The optimal pool: points not dominated by any other point, sorted by
/// throughput descending (ties by money, then id). Under weak dominance,
/// exact (throughput, money) duplicates are deduplicated keeping the
/// lowest strategy id.
pub fn pareto_pool(points: &[ParetoPoint], rule: Dominance) -> Vec<ParetoPoint> {
    let mut kept: Vec<ParetoPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| dominates(q, p, rule)) {
            continue;
        }
        if rule == Dominance::Weak {
            if let Some(dup) = kept
                .iter_mut()
                .find(|q| q.throughput == p.throughput && q.money == p.money)
            {
                if p.strategy_id < dup.strategy_id {
                    *dup = p.clone();
                }
                continue;
            }
        }
        kept.push(p.clone());
    }
    sort_strategies(&mut kept);
    kept
}

/// Total order: throughput descending, then money ascending, then
/// strategy id ascending.
pub fn sort_strategies(points: &mut [ParetoPoint]) {
    points.sort_by(|a, b| {
        b.throughput
            .partial_cmp(&a.throughput)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.money
                    .partial_cmp(&b.money)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.strategy_id.cmp(&b.strategy_id))
    });
}

/// Highest-throughput point whose money fits the budget; without a budget
/// the global throughput argmax. `None` when everything exceeds the
/// budget.
pub fn select_best_within_budget(
    frontier: &[ParetoPoint],
    budget: Option<f64>,
) -> Option<ParetoPoint> {
    let mut sorted: Vec<ParetoPoint> = frontier.to_vec();
    sort_strategies(&mut sorted);
    match budget {
        None => sorted.first().cloned(),
        Some(limit) => sorted.into_iter().find(|p| p.money <= limit),
    }
}
