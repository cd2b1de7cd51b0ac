//! Pluggable efficiency predictor for the `theta / (phi * eta)` time
//! model.
//!
//! Three variants: a constant, a lookup table keyed by (operator, size
//! bucket, GPU type, link scope), and a gradient-boosted tree ensemble
//! loaded from a portable JSON file. The lookup table can be calibrated
//! directly from profiling samples: per bucket, eta is the median of
//! `theta / (phi * measured)` over the samples, clamped into `(0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{GpuCatalog, LinkScope};
use crate::error::{Error, Result};

use super::ops::{CommKind, OpKind};

/// Smallest efficiency a model may predict; keeps times finite.
pub const MIN_ETA: f64 = 1e-6;

fn clamp_eta(eta: f64) -> f64 {
    if !eta.is_finite() {
        return 1.0;
    }
    eta.clamp(MIN_ETA, 1.0)
}

/// Operator identity as seen by the efficiency model: either a compute
/// kind or a communication kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum EffOp {
    Compute(OpKind),
    Comm(CommKind),
}

impl EffOp {
    /// Stable numeric code, used as a tree feature.
    pub fn code(self) -> u32 {
        match self {
            EffOp::Compute(k) => k as u32,
            EffOp::Comm(k) => 8 + k as u32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffOp::Compute(k) => k.name(),
            EffOp::Comm(k) => k.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        OpKind::from_name(name)
            .map(EffOp::Compute)
            .or_else(|| CommKind::from_name(name).map(EffOp::Comm))
    }
}

/// Feature tuple a prediction is made from.
#[derive(Debug, Clone, Copy)]
pub struct EffQuery<'a> {
    pub op: EffOp,
    /// FLOPs for compute, bytes for communication.
    pub theta: f64,
    pub gpu: &'a str,
    /// Link scope for communication; `None` for compute.
    pub scope: Option<LinkScope>,
}

impl EffQuery<'_> {
    fn bucket(&self) -> i64 {
        size_bucket(self.theta)
    }

    /// Numeric feature vector for the tree ensemble:
    /// `[op code, log2(theta), scope code]` with scope 0 = intra-node,
    /// 1 = inter-node, 2 = not applicable.
    fn features(&self) -> [f64; 3] {
        let scope_code = match self.scope {
            Some(LinkScope::IntraNode) => 0.0,
            Some(LinkScope::InterNode) => 1.0,
            None => 2.0,
        };
        [self.op.code() as f64, self.theta.max(1.0).log2(), scope_code]
    }
}

fn size_bucket(theta: f64) -> i64 {
    theta.max(1.0).log2().floor() as i64
}

fn scope_key(scope: Option<LinkScope>) -> &'static str {
    match scope {
        Some(LinkScope::IntraNode) => "intra_node",
        Some(LinkScope::InterNode) => "inter_node",
        None => "none",
    }
}

/// One calibrated lookup entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub op: String,
    pub bucket: i64,
    pub gpu: String,
    pub scope: String,
    pub eta: f64,
}

/// One node of a serialized regression tree: an internal split or a leaf.
/// Children are indices into the node list and must come after their
/// parent, which keeps the tree acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn validate(&self, index: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::validation(
                format!("trees[{index}]"),
                "tree has no nodes",
            ));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= 3 {
                    return Err(Error::validation(
                        format!("trees[{index}].nodes[{i}].feature"),
                        format!("feature index {feature} out of range (3 features)"),
                    ));
                }
                for child in [left, right] {
                    if *child <= i || *child >= self.nodes.len() {
                        return Err(Error::validation(
                            format!("trees[{index}].nodes[{i}]"),
                            format!(
                                "child index {child} must point past the parent and stay in range"
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn predict(&self, features: &[f64; 3]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if features[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Predictor of the efficiency factor eta in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EfficiencyModel {
    Constant {
        eta: f64,
    },
    Lookup {
        default_eta: f64,
        entries: Vec<LookupEntry>,
    },
    Ensemble {
        base: f64,
        trees: Vec<Tree>,
    },
}

impl Default for EfficiencyModel {
    fn default() -> Self {
        EfficiencyModel::Constant { eta: 0.5 }
    }
}

impl EfficiencyModel {
    pub fn constant(eta: f64) -> Self {
        EfficiencyModel::Constant { eta: clamp_eta(eta) }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let model: EfficiencyModel =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EfficiencyModel::Constant { eta } => {
                if !(*eta > 0.0 && *eta <= 1.0) {
                    return Err(Error::validation("eta", "must be in (0, 1]"));
                }
            }
            EfficiencyModel::Lookup { entries, .. } => {
                for (i, entry) in entries.iter().enumerate() {
                    if EffOp::from_name(&entry.op).is_none() {
                        return Err(Error::validation(
                            format!("entries[{i}].op"),
                            format!("unknown operator `{}`", entry.op),
                        ));
                    }
                }
            }
            EfficiencyModel::Ensemble { trees, .. } => {
                for (i, tree) in trees.iter().enumerate() {
                    tree.validate(i)?;
                }
            }
        }
        Ok(())
    }

    /// Predict eta for an operator. Lookup misses fall back to the
    /// model's default, never an error; every output is clamped into
    /// `(0, 1]`.
    pub fn predict(&self, query: &EffQuery) -> f64 {
        match self {
            EfficiencyModel::Constant { eta } => clamp_eta(*eta),
            EfficiencyModel::Lookup {
                default_eta,
                entries,
            } => {
                let bucket = query.bucket();
                let scope = scope_key(query.scope);
                let hit = entries.iter().find(|e| {
                    e.op == query.op.name()
                        && e.bucket == bucket
                        && e.gpu == query.gpu
                        && e.scope == scope
                });
                clamp_eta(hit.map(|e| e.eta).unwrap_or(*default_eta))
            }
            EfficiencyModel::Ensemble { base, trees } => {
                let features = query.features();
                let sum: f64 = trees.iter().map(|t| t.predict(&features)).sum();
                clamp_eta(base + sum)
            }
        }
    }
}

/// One profiling record: an operator shape, where it ran, and how long it
/// took. For matmul-like kinds `theta = 2*m*n*k`; for communication kinds
/// `k_or_bytes` is the payload and `m`, `n` are ignored.
#[derive(Debug, Clone, Deserialize)]
pub struct ProfileRecord {
    pub kind: String,
    pub m: u64,
    pub n: u64,
    pub k_or_bytes: u64,
    pub gpu: String,
    pub scope: String,
    pub measured_seconds: f64,
}

/// Build a lookup model from profiling samples (CSV with header
/// `kind,m,n,k_or_bytes,gpu,scope,measured_seconds`).
///
/// Per (kind, size bucket, gpu, scope) bucket:
/// `eta = median(theta / (phi * measured))`, clamped into `(0, 1]`.
/// The fallback eta is the median over all samples.
pub fn calibrate_efficiency<R: std::io::Read>(
    reader: R,
    catalog: &GpuCatalog,
) -> Result<EfficiencyModel> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut buckets: BTreeMap<(String, i64, String, String), Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for (i, row) in csv_reader.deserialize::<ProfileRecord>().enumerate() {
        let record_no = i + 1;
        let rec = row.map_err(|e| {
            Error::parse("profiling samples", format!("record {record_no}: {e}"))
        })?;
        if rec.measured_seconds <= 0.0 || rec.measured_seconds.is_nan() {
            return Err(Error::validation(
                "measured_seconds",
                format!(
                    "record {record_no}: must be positive, got {}",
                    rec.measured_seconds
                ),
            ));
        }
        let op = EffOp::from_name(&rec.kind).ok_or_else(|| {
            Error::validation(
                "kind",
                format!("record {record_no}: unknown operator `{}`", rec.kind),
            )
        })?;
        let gpu = catalog.get(&rec.gpu)?;
        let (theta, phi, scope) = match op {
            EffOp::Compute(_) => (
                2.0 * rec.m as f64 * rec.n as f64 * rec.k_or_bytes as f64,
                gpu.peak_flops,
                "none".to_string(),
            ),
            EffOp::Comm(_) => {
                let scope = match rec.scope.as_str() {
                    "intra_node" => LinkScope::IntraNode,
                    "inter_node" => LinkScope::InterNode,
                    other => {
                        return Err(Error::validation(
                            "scope",
                            format!("record {record_no}: unknown scope `{other}`"),
                        ))
                    }
                };
                (
                    rec.k_or_bytes as f64,
                    gpu.bandwidth(scope),
                    rec.scope.clone(),
                )
            }
        };
        if theta <= 0.0 {
            return Err(Error::validation(
                "k_or_bytes",
                format!("record {record_no}: operator size must be positive"),
            ));
        }
        let eta = clamp_eta(theta / (phi * rec.measured_seconds));
        buckets
            .entry((op.name().to_string(), size_bucket(theta), rec.gpu, scope))
            .or_default()
            .push(eta);
        all.push(eta);
    }
    let entries = buckets
        .into_iter()
        .map(|((op, bucket, gpu, scope), etas)| LookupEntry {
            op,
            bucket,
            gpu,
            scope,
            eta: median(etas),
        })
        .collect();
    let default_eta = if all.is_empty() { 1.0 } else { median(all) };
    Ok(EfficiencyModel::Lookup {
        default_eta,
        entries,
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("etas are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
