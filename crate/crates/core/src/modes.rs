//! Expansion of a search request into the set of GPU configurations to
//! explore.
//!
//! Three modes: `homogeneous` fixes one type and count; `heterogeneous`
//! fixes a total count with per-type upper bounds and leaves the split to
//! the pipeline partitioner; `cost` sweeps a ladder of cluster sizes of
//! one type up to a maximum.

use serde::{Deserialize, Serialize};

use crate::catalog::GpuCatalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Homogeneous,
    Heterogeneous,
    Cost,
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SearchMode::Homogeneous => "homogeneous",
            SearchMode::Heterogeneous => "heterogeneous",
            SearchMode::Cost => "cost",
        };
        f.write_str(s)
    }
}

/// Spacing of the cost-mode cluster-size ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LadderScale {
    /// 2, 4, 8, 16, ... (doubling)
    #[default]
    Pow2,
    /// 2, 4, 6, 8, ... (step of two)
    Linear,
}

/// What the user asked to search over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub mode: SearchMode,
    /// GPU type for homogeneous and cost modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_type: Option<String>,
    /// Total cluster size for homogeneous and heterogeneous modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_count: Option<u64>,
    /// Per-type availability caps for heterogeneous mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub type_limits: Vec<(String, u64)>,
    /// Largest cluster size for cost mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gpus: Option<u64>,
    /// Money budget for cost mode (currency for the whole workload).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_money: Option<f64>,
    #[serde(default)]
    pub ladder: LadderScale,
}

impl SearchRequest {
    pub fn homogeneous(gpu_type: impl Into<String>, gpu_count: u64) -> Self {
        SearchRequest {
            mode: SearchMode::Homogeneous,
            gpu_type: Some(gpu_type.into()),
            gpu_count: Some(gpu_count),
            type_limits: Vec::new(),
            max_gpus: None,
            max_money: None,
            ladder: LadderScale::default(),
        }
    }

    pub fn heterogeneous(gpu_count: u64, type_limits: Vec<(String, u64)>) -> Self {
        SearchRequest {
            mode: SearchMode::Heterogeneous,
            gpu_type: None,
            gpu_count: Some(gpu_count),
            type_limits,
            max_gpus: None,
            max_money: None,
            ladder: LadderScale::default(),
        }
    }

    pub fn cost(gpu_type: impl Into<String>, max_gpus: u64, max_money: Option<f64>) -> Self {
        SearchRequest {
            mode: SearchMode::Cost,
            gpu_type: Some(gpu_type.into()),
            gpu_count: None,
            type_limits: Vec::new(),
            max_gpus: Some(max_gpus),
            max_money,
            ladder: LadderScale::default(),
        }
    }

    pub fn validate(&self, catalog: &GpuCatalog) -> Result<()> {
        match self.mode {
            SearchMode::Homogeneous => {
                let ty = self
                    .gpu_type
                    .as_deref()
                    .ok_or_else(|| Error::InvalidRequest("homogeneous mode needs --gpu-type".into()))?;
                catalog.get(ty)?;
                let n = self
                    .gpu_count
                    .ok_or_else(|| Error::InvalidRequest("homogeneous mode needs --gpu-count".into()))?;
                if n < 1 {
                    return Err(Error::InvalidRequest("gpu_count must be at least 1".into()));
                }
            }
            SearchMode::Heterogeneous => {
                let n = self
                    .gpu_count
                    .ok_or_else(|| Error::InvalidRequest("heterogeneous mode needs --gpu-count".into()))?;
                if n < 1 {
                    return Err(Error::InvalidRequest("gpu_count must be at least 1".into()));
                }
                if self.type_limits.is_empty() {
                    return Err(Error::InvalidRequest(
                        "heterogeneous mode needs at least one --type-limit TYPE=N".into(),
                    ));
                }
                for (ty, _) in &self.type_limits {
                    catalog.get(ty)?;
                }
            }
            SearchMode::Cost => {
                let ty = self
                    .gpu_type
                    .as_deref()
                    .ok_or_else(|| Error::InvalidRequest("cost mode needs --gpu-type".into()))?;
                catalog.get(ty)?;
                let max = self
                    .max_gpus
                    .ok_or_else(|| Error::InvalidRequest("cost mode needs --max-gpus".into()))?;
                if max < 1 {
                    return Err(Error::InvalidRequest("max_gpus must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// One GPU configuration a strategy can bind to.
///
/// `Fixed` carries a resolved (type, count) assignment. `Bounded` carries
/// a total with per-type caps; the actual split is chosen later by the
/// heterogeneous pipeline partitioner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GpuConfig {
    Fixed {
        entries: Vec<(String, u64)>,
        total: u64,
    },
    Bounded {
        total: u64,
        limits: Vec<(String, u64)>,
    },
}

impl GpuConfig {
    pub fn fixed(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.iter().any(|(_, n)| *n < 1) {
            return Err(Error::InvalidRequest("GPU counts must be at least 1".into()));
        }
        let total = entries.iter().map(|(_, n)| n).sum();
        Ok(GpuConfig::Fixed { entries, total })
    }

    pub fn single(gpu_type: impl Into<String>, count: u64) -> Result<Self> {
        GpuConfig::fixed(vec![(gpu_type.into(), count)])
    }

    pub fn total(&self) -> u64 {
        match self {
            GpuConfig::Fixed { total, .. } => *total,
            GpuConfig::Bounded { total, .. } => *total,
        }
    }

    /// The single GPU type of a resolved single-type configuration.
    pub fn sole_type(&self) -> Option<&str> {
        match self {
            GpuConfig::Fixed { entries, .. } if entries.len() == 1 => {
                Some(entries[0].0.as_str())
            }
            _ => None,
        }
    }
}

/// Expand a validated request into the configurations to search.
pub fn generate_gpu_configs(req: &SearchRequest, catalog: &GpuCatalog) -> Result<Vec<GpuConfig>> {
    req.validate(catalog)?;
    match req.mode {
        SearchMode::Homogeneous => {
            let ty = req.gpu_type.clone().unwrap();
            Ok(vec![GpuConfig::single(ty, req.gpu_count.unwrap())?])
        }
        SearchMode::Heterogeneous => Ok(vec![GpuConfig::Bounded {
            total: req.gpu_count.unwrap(),
            limits: req.type_limits.clone(),
        }]),
        SearchMode::Cost => {
            let ty = req.gpu_type.clone().unwrap();
            let max = req.max_gpus.unwrap();
            let mut sizes = Vec::new();
            match req.ladder {
                LadderScale::Pow2 => {
                    let mut n = 2u64;
                    while n <= max {
                        sizes.push(n);
                        match n.checked_mul(2) {
                            Some(next) => n = next,
                            None => break,
                        }
                    }
                }
                LadderScale::Linear => {
                    let mut n = 2u64;
                    while n <= max {
                        sizes.push(n);
                        n += 2;
                    }
                }
            }
            if sizes.last() != Some(&max) {
                sizes.push(max);
            }
            sizes
                .into_iter()
                .map(|n| GpuConfig::single(ty.clone(), n))
                .collect()
        }
    }
}
