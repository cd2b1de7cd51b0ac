//! GPU hardware catalogs and transformer model architectures.
//!
//! Catalogs describe what each GPU type can do (peak FLOP/s, memory,
//! link bandwidths, price); model files describe the transformer shape.
//! Both are loaded from JSON and validated eagerly so that every
//! downstream module can assume the invariants hold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Capability and price record for one GPU type.
///
/// `peak_flops` is the dense throughput at whatever precision the user
/// trains in; the catalog does not fix the precision, it only has to be
/// consistent with the profiling data used to calibrate efficiency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuSpec {
    pub name: String,
    /// Peak compute rate in FLOP/s.
    pub peak_flops: f64,
    /// Device memory capacity in bytes.
    pub mem_bytes: f64,
    /// Per-GPU link bandwidth inside a node, bytes/s.
    pub intra_node_bw: f64,
    /// Per-GPU link bandwidth across nodes, bytes/s.
    pub inter_node_bw: f64,
    pub gpus_per_node: u64,
    /// Rental fee in currency units per GPU-second.
    pub price_per_second: f64,
    /// Largest number of this type the user can get; unbounded if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_available: Option<u64>,
}

impl GpuSpec {
    /// Link bandwidth for a communication scope.
    pub fn bandwidth(&self, scope: LinkScope) -> f64 {
        match scope {
            LinkScope::IntraNode => self.intra_node_bw,
            LinkScope::InterNode => self.inter_node_bw,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_flops", self.peak_flops),
            ("mem_bytes", self.mem_bytes),
            ("intra_node_bw", self.intra_node_bw),
            ("inter_node_bw", self.inter_node_bw),
        ];
        for (field, value) in positive {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::validation(
                    format!("{}.{}", self.name, field),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if self.gpus_per_node < 1 {
            return Err(Error::validation(
                format!("{}.gpus_per_node", self.name),
                "must be at least 1",
            ));
        }
        if self.price_per_second < 0.0 || !self.price_per_second.is_finite() {
            return Err(Error::validation(
                format!("{}.price_per_second", self.name),
                format!("must be non-negative, got {}", self.price_per_second),
            ));
        }
        Ok(())
    }
}

/// Whether a communication group stays inside one node or crosses nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LinkScope {
    IntraNode,
    InterNode,
}

/// Validated set of GPU types, keyed by unique name.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuCatalog {
    gpus: Vec<GpuSpec>,
    by_name: BTreeMap<String, usize>,
}

impl GpuCatalog {
    pub fn new(gpus: Vec<GpuSpec>) -> Result<Self> {
        let mut by_name = BTreeMap::new();
        for (i, gpu) in gpus.iter().enumerate() {
            gpu.validate()?;
            if by_name.insert(gpu.name.clone(), i).is_some() {
                return Err(Error::validation(
                    "name",
                    format!("duplicate GPU type `{}` in catalog", gpu.name),
                ));
            }
        }
        Ok(GpuCatalog { gpus, by_name })
    }

    pub fn get(&self, name: &str) -> Result<&GpuSpec> {
        self.by_name
            .get(name)
            .map(|&i| &self.gpus[i])
            .ok_or_else(|| Error::UnknownGpuType(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn gpus(&self) -> &[GpuSpec] {
        &self.gpus
    }

    pub fn len(&self) -> usize {
        self.gpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpus.is_empty()
    }
}

impl Serialize for GpuCatalog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct File<'a> {
            gpus: &'a [GpuSpec],
        }
        File { gpus: &self.gpus }.serialize(serializer)
    }
}

/// Raw on-disk GPU entry. Prices may be quoted per hour or per second;
/// per-hour values are converted once at load time.
#[derive(Debug, Deserialize)]
struct GpuSpecFile {
    name: String,
    peak_flops: f64,
    mem_bytes: f64,
    intra_node_bw: f64,
    inter_node_bw: f64,
    gpus_per_node: u64,
    #[serde(default)]
    price_per_hour: Option<f64>,
    #[serde(default)]
    price_per_second: Option<f64>,
    #[serde(default)]
    max_available: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    gpus: Vec<GpuSpecFile>,
}

impl GpuSpecFile {
    fn into_spec(self) -> Result<GpuSpec> {
        let price_per_second = match (self.price_per_second, self.price_per_hour) {
            (Some(s), None) => s,
            (None, Some(h)) => h / SECONDS_PER_HOUR,
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    format!("{}.price_per_second", self.name),
                    "give either price_per_hour or price_per_second, not both",
                ))
            }
            (None, None) => {
                return Err(Error::validation(
                    format!("{}.price_per_second", self.name),
                    "missing price (price_per_hour or price_per_second)",
                ))
            }
        };
        Ok(GpuSpec {
            name: self.name,
            peak_flops: self.peak_flops,
            mem_bytes: self.mem_bytes,
            intra_node_bw: self.intra_node_bw,
            inter_node_bw: self.inter_node_bw,
            gpus_per_node: self.gpus_per_node,
            price_per_second,
            max_available: self.max_available,
        })
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<GpuCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_catalog(&text, &path.display().to_string())
}

pub fn parse_catalog(text: &str, origin: &str) -> Result<GpuCatalog> {
    let file: CatalogFile =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    let gpus = file
        .gpus
        .into_iter()
        .map(|g| g.into_spec())
        .collect::<Result<Vec<_>>>()?;
    GpuCatalog::new(gpus)
}

/// Decoder-only transformer shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub family: String,
    pub num_layers: u64,
    pub hidden_size: u64,
    pub num_heads: u64,
    pub intermediate_size: u64,
    pub vocab_size: u64,
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::validation(
                "hidden_size",
                format!(
                    "hidden_size {} is not divisible by num_heads {}",
                    self.hidden_size, self.num_heads
                ),
            ));
        }
        Ok(())
    }
}

pub fn load_model_arch(path: impl AsRef<Path>) -> Result<ModelArch> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_model_arch(&text, &path.display().to_string())
}

pub fn parse_model_arch(text: &str, origin: &str) -> Result<ModelArch> {
    let arch: ModelArch =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    arch.validate()?;
    Ok(arch)
}

/// Per-run training settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Samples per optimizer step across the whole cluster.
    pub global_batch: u64,
    /// Tokens per sample.
    pub seq_len: u64,
    /// Bytes per tensor element at the training precision.
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: u64,
}

fn default_bytes_per_element() -> u64 {
    2
}

impl TrainConfig {
    pub fn new(global_batch: u64, seq_len: u64) -> Self {
        TrainConfig {
            global_batch,
            seq_len,
            bytes_per_element: default_bytes_per_element(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_batch < 1 {
            return Err(Error::validation("global_batch", "must be at least 1"));
        }
        if self.seq_len == 0 {
            return Err(Error::validation("seq_len", "must be positive"));
        }
        if self.bytes_per_element == 0 {
            return Err(Error::validation("bytes_per_element", "must be positive"));
        }
        Ok(())
    }

    /// Tokens consumed by one optimizer step.
    pub fn tokens_per_iteration(&self) -> u64 {
        self.global_batch * self.seq_len
    }
}

/// Parameters held by one transformer layer: QKV and output projections
/// (4 h^2), gated MLP with up/gate/down matrices (3 h ffn), and the two
/// layer norms (2 h).
pub fn params_per_layer(arch: &ModelArch) -> u64 {
    let h = arch.hidden_size;
    4 * h * h + 3 * h * arch.intermediate_size + 2 * h
}

/// Parameters of the input embedding table.
pub fn embedding_params(arch: &ModelArch) -> u64 {
    arch.vocab_size * arch.hidden_size
}

/// Parameters of the output head: an untied vocabulary projection plus
/// the final norm.
pub fn output_head_params(arch: &ModelArch) -> u64 {
    arch.vocab_size * arch.hidden_size + arch.hidden_size
}

/// Total parameter count of the model:
/// `N * (4 h^2 + 3 h ffn + 2 h) + 2 vocab h + h`.
///
/// The memory estimator and the cost simulator both derive their static
/// sizes from the same per-layer/embedding split, so the accounting stays
/// consistent end to end.
pub fn param_count(arch: &ModelArch) -> u64 {
    arch.num_layers * params_per_layer(arch)
        + embedding_params(arch)
        + output_head_params(arch)
}
