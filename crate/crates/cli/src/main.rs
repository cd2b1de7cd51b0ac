//! Command-line front end for the parallel-strategy search engine.
//!
//! Exit codes: 0 on success, 2 when the search produced no surviving
//! strategy, 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use parasearch_core::catalog::{load_catalog, load_model_arch, TrainConfig};
use parasearch_core::costsim::{calibrate_efficiency, EfficiencyModel};
use parasearch_core::error::{Error, Result};
use parasearch_core::memest::MemCoeffs;
use parasearch_core::modes::{LadderScale, SearchMode, SearchRequest};
use parasearch_core::report::{emit_report, ReportFormat};
use parasearch_core::rulelang::{parse_rules, RuleSet};
use parasearch_core::search::{run_search, SearchInputs};
use parasearch_core::strategy::ParamSpace;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Homogeneous,
    Heterogeneous,
    Cost,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LadderArg {
    Pow2,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Text,
}

/// Search for throughput- and money-optimal hybrid-parallel training
/// strategies with an analytical cost simulator.
#[derive(Debug, Parser)]
#[command(name = "parasearch", version)]
struct Args {
    /// Search mode.
    #[arg(long, value_enum)]
    mode: ModeArg,

    /// Model architecture JSON file.
    #[arg(long)]
    model: PathBuf,

    /// GPU catalog JSON file.
    #[arg(long)]
    catalog: PathBuf,

    /// Parameter-space overrides JSON file (defaults are derived from the
    /// model and cluster when omitted).
    #[arg(long)]
    space: Option<PathBuf>,

    /// Rules file; omit to run without rule filtering.
    #[arg(long)]
    rules: Option<PathBuf>,

    /// Memory-model coefficient JSON file.
    #[arg(long)]
    mem_coeffs: Option<PathBuf>,

    /// Efficiency model JSON file (constant, lookup, or tree ensemble).
    #[arg(long, conflicts_with = "profile")]
    eff_model: Option<PathBuf>,

    /// Profiling-sample CSV; calibrates a lookup efficiency model.
    #[arg(long)]
    profile: Option<PathBuf>,

    /// Samples per optimizer step across the cluster.
    #[arg(long)]
    global_batch: u64,

    /// Tokens per sample.
    #[arg(long)]
    seq_len: u64,

    /// Bytes per element at the training precision.
    #[arg(long, default_value_t = 2)]
    bytes_per_element: u64,

    /// GPU type (homogeneous and cost modes).
    #[arg(long)]
    gpu_type: Option<String>,

    /// Total GPU count (homogeneous and heterogeneous modes).
    #[arg(long)]
    gpu_count: Option<u64>,

    /// Per-type cap for heterogeneous mode, repeatable: TYPE=N.
    #[arg(long = "type-limit", value_parser = parse_type_limit)]
    type_limit: Vec<(String, u64)>,

    /// Largest cluster size for cost mode.
    #[arg(long)]
    max_gpus: Option<u64>,

    /// Money budget for the workload (any mode).
    #[arg(long)]
    max_money: Option<f64>,

    /// Token horizon the money figures are computed for.
    #[arg(long, default_value_t = 1e9)]
    total_tokens: f64,

    /// Strategies to include in the report.
    #[arg(long, default_value_t = 10)]
    top_k: usize,

    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,

    /// Worker threads; defaults to PARASEARCH_WORKERS or the machine's
    /// parallelism.
    #[arg(long)]
    workers: Option<usize>,

    /// Keep only strictly dominated strategies out of the optimal pool.
    #[arg(long, default_value_t = false)]
    strict_dominance: bool,

    /// Cluster-size ladder spacing for cost mode.
    #[arg(long, value_enum, default_value = "pow2")]
    ladder: LadderArg,

    /// Include wall-clock timings in JSON output (breaks byte-for-byte
    /// reproducibility across runs).
    #[arg(long, default_value_t = false)]
    emit_timings: bool,
}

fn parse_type_limit(s: &str) -> std::result::Result<(String, u64), String> {
    let (ty, count) = s
        .split_once('=')
        .ok_or_else(|| format!("expected TYPE=N, got `{s}`"))?;
    let count: u64 = count
        .parse()
        .map_err(|e| format!("bad count in `{s}`: {e}"))?;
    Ok((ty.to_string(), count))
}

fn default_workers() -> usize {
    if let Ok(value) = std::env::var("PARASEARCH_WORKERS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn build_request(args: &Args) -> Result<SearchRequest> {
    let mode = match args.mode {
        ModeArg::Homogeneous => SearchMode::Homogeneous,
        ModeArg::Heterogeneous => SearchMode::Heterogeneous,
        ModeArg::Cost => SearchMode::Cost,
    };
    let ladder = match args.ladder {
        LadderArg::Pow2 => LadderScale::Pow2,
        LadderArg::Linear => LadderScale::Linear,
    };
    Ok(SearchRequest {
        mode,
        gpu_type: args.gpu_type.clone(),
        gpu_count: args.gpu_count,
        type_limits: args.type_limit.clone(),
        max_gpus: args.max_gpus,
        max_money: args.max_money,
        ladder,
    })
}

fn run(args: &Args) -> Result<bool> {
    let catalog = load_catalog(&args.catalog)?;
    let arch = load_model_arch(&args.model)?;
    let mut train = TrainConfig::new(args.global_batch, args.seq_len);
    train.bytes_per_element = args.bytes_per_element;
    train.validate()?;

    let space = match &args.space {
        None => None,
        Some(path) => {
            // overrides are applied onto per-configuration defaults inside
            // the search; here we only read and syntax-check the file
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            Some(text)
        }
    };
    let rules = match &args.rules {
        None => RuleSet::empty(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            parse_rules(&text)?
        }
    };
    let coeffs = match &args.mem_coeffs {
        None => MemCoeffs::default(),
        Some(path) => MemCoeffs::load(path)?,
    };
    let eff = if let Some(path) = &args.profile {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        calibrate_efficiency(file, &catalog)?
    } else if let Some(path) = &args.eff_model {
        EfficiencyModel::load(path)?
    } else {
        EfficiencyModel::default()
    };

    let request = build_request(args)?;
    let inputs = SearchInputs {
        request,
        catalog,
        arch,
        train,
        space: None,
        rules,
        coeffs,
        eff,
        total_tokens: args.total_tokens,
        top_k: args.top_k,
        strict_dominance: args.strict_dominance,
        workers: args.workers.unwrap_or_else(default_workers),
    };
    // resolve space overrides against the first configuration's defaults
    let inputs = match space {
        None => inputs,
        Some(text) => resolve_space(inputs, &text)?,
    };

    let report = run_search(&inputs)?;
    let format = match args.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Text => ReportFormat::Text,
    };
    emit_report(&report, args.out.as_deref(), format, args.emit_timings)?;
    Ok(!report.strategies.is_empty())
}

/// Apply a space-override file. Overrides are resolved against the
/// defaults of the request's first configuration so that every
/// configuration searches the same explicit lists.
fn resolve_space(mut inputs: SearchInputs, overrides: &str) -> Result<SearchInputs> {
    let configs =
        parasearch_core::modes::generate_gpu_configs(&inputs.request, &inputs.catalog)?;
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidRequest("request expands to no configurations".into()))?;
    let mut space = ParamSpace::default_for(&inputs.arch, &inputs.train, first, &inputs.catalog)?;
    space.apply_json(overrides, "space file")?;
    inputs.space = Some(space);
    Ok(inputs)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = std::error::Error::source(cause);
            }
            ExitCode::from(1)
        }
    }
}
