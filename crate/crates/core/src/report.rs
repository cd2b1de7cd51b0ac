//! Search report assembly and emission.
//!
//! JSON output is key-sorted and byte-deterministic for identical inputs;
//! wall-clock timings are included only on request so that reports stay
//! reproducible. The text format is a human-readable ranked table.

use std::io::Write;

use serde::Serialize;

use crate::catalog::TrainConfig;
use crate::costsim::CostBreakdown;
use crate::error::{Error, Result};
use crate::hetero::HeteroPartition;
use crate::modes::{GpuConfig, SearchRequest};
use crate::pareto::ParetoPoint;
use crate::strategy::ParallelParams;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Echo of what was searched, for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestEcho {
    pub request: SearchRequest,
    pub model_family: String,
    pub train: TrainConfig,
    pub total_tokens: f64,
    pub top_k: usize,
    pub strict_dominance: bool,
}

/// Where every generated strategy went. `generated` always equals
/// survivors plus the sum of all drop counters.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SearchCounts {
    /// Raw parameter-product size before structural skipping.
    pub space_size: u128,
    pub configurations: u64,
    /// Structurally valid strategies that entered the filters.
    pub generated: u64,
    /// Per-rule drop counts, in rule order.
    pub rule_drops: Vec<(String, u64)>,
    pub memory_dropped: u64,
    /// Heterogeneous families whose constraint system has no solution.
    pub infeasible_partition: u64,
    /// Rejected by the simulator (mixture-of-experts strategies).
    pub unsupported: u64,
    /// Survivors that were priced.
    pub simulated: u64,
    /// Partition-level details for heterogeneous searches.
    pub partitions_enumerated: u64,
    pub partitions_oom: u64,
}

impl SearchCounts {
    pub fn total_rule_drops(&self) -> u64 {
        self.rule_drops.iter().map(|(_, n)| n).sum()
    }

    /// The conservation identity every report must satisfy.
    pub fn is_conserved(&self) -> bool {
        self.generated
            == self.simulated
                + self.total_rule_drops()
                + self.memory_dropped
                + self.infeasible_partition
                + self.unsupported
    }
}

/// One ranked survivor with its full configuration and pricing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedStrategy {
    pub rank: u64,
    pub id: String,
    pub gpu_config: GpuConfig,
    pub params: ParallelParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<HeteroPartition>,
    pub microbatches: u64,
    pub cost: CostBreakdown,
    pub point: ParetoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Timings {
    pub search_seconds: f64,
    pub simulation_seconds: f64,
    pub e2e_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub schema: u32,
    pub request: RequestEcho,
    pub counts: SearchCounts,
    /// Top-k survivors, best first.
    pub strategies: Vec<RankedStrategy>,
    /// The throughput/money optimal pool over all survivors.
    pub frontier: Vec<ParetoPoint>,
    /// Highest-throughput strategy within the money budget, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<ParetoPoint>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::InvalidRequest(format!(
                "unknown format `{other}` (expected json or text)"
            ))),
        }
    }
}

/// Render the report as key-sorted JSON. Identical reports render to
/// identical bytes; timings are omitted unless requested since they vary
/// across runs.
pub fn report_json(report: &SearchReport, include_timings: bool) -> Result<String> {
    let mut value = serde_json::to_value(report)
        .map_err(|e| Error::parse("report", e.to_string()))?;
    if !include_timings {
        if let Some(map) = value.as_object_mut() {
            map.remove("timings");
        }
    }
    // serde_json maps iterate in key order, so this is byte-deterministic
    serde_json::to_string_pretty(&value).map_err(|e| Error::parse("report", e.to_string()))
}

/// Render the report as a human-readable ranked table.
pub fn report_text(report: &SearchReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let c = &report.counts;
    let _ = writeln!(out, "mode: {}", report.request.request.mode);
    let _ = writeln!(
        out,
        "space: {} raw points over {} configuration(s); {} generated",
        c.space_size, c.configurations, c.generated
    );
    let _ = writeln!(
        out,
        "drops: rules {} | memory {} | infeasible {} | unsupported {}  ->  simulated {}",
        c.total_rule_drops(),
        c.memory_dropped,
        c.infeasible_partition,
        c.unsupported,
        c.simulated
    );
    for (name, n) in &c.rule_drops {
        let _ = writeln!(out, "  {name}: {n}");
    }
    let _ = writeln!(
        out,
        "timings: search {:.3}s | simulation {:.3}s | end-to-end {:.3}s",
        report.timings.search_seconds,
        report.timings.simulation_seconds,
        report.timings.e2e_seconds
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>4}  {:16}  {:>5} {:>4} {:>4} {:>4} {:>3}  {:>14}  {:>12}  {:>12}",
        "rank", "id", "gpus", "pp", "tp", "dp", "mb", "tokens/s", "iter s", "money"
    );
    for s in &report.strategies {
        let _ = writeln!(
            out,
            "{:>4}  {:16}  {:>5} {:>4} {:>4} {:>4} {:>3}  {:>14.1}  {:>12.6}  {:>12.2}",
            s.rank,
            s.id,
            s.gpu_config.total(),
            s.params.pp,
            s.params.tp,
            s.params.dp,
            s.params.micro_batch,
            s.cost.throughput_tokens_per_s,
            s.cost.t_total,
            s.point.money
        );
        if let Some(partition) = &s.partition {
            let segs: Vec<String> = partition
                .segments
                .iter()
                .map(|seg| format!("{}x{} stages ({} layers each)", seg.gpu_type, seg.stages, seg.layers_per_stage))
                .collect();
            let _ = writeln!(out, "      partition: {}", segs.join(" | "));
        }
    }
    if let Some(selected) = &report.selected {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "selected within budget: {} at {:.1} tokens/s for {:.2}",
            selected.strategy_id, selected.throughput, selected.money
        );
    }
    out
}

/// Write the report to a file or stdout.
pub fn emit_report(
    report: &SearchReport,
    path: Option<&std::path::Path>,
    format: ReportFormat,
    include_timings: bool,
) -> Result<()> {
    let rendered = match format {
        ReportFormat::Json => report_json(report, include_timings)?,
        ReportFormat::Text => report_text(report),
    };
    match path {
        Some(path) => std::fs::write(path, rendered.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(rendered.as_bytes())
                .and_then(|_| lock.write_all(b"\n"))
                .map_err(|e| Error::io("stdout", e))
        }
    }
}
