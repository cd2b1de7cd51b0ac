//! Desk-scale fixtures: model shapes, a GPU catalog, default rules,
//! memory coefficients, and profiling samples used by tests and the
//! acceptance suite.
//!
//! Layout: `fixtures/<name>/{model,catalog,space,coeffs}.json, rules.txt,
//! profile.csv` at the repository root. Catalog numbers are
//! representative public figures and are inputs, not claims; see
//! `fixtures/README.md` for the sources.

use std::path::{Path, PathBuf};

use crate::catalog::{load_catalog, load_model_arch, GpuCatalog, ModelArch, TrainConfig};
use crate::costsim::{calibrate_efficiency, EfficiencyModel};
use crate::error::{Error, Result};
use crate::memest::MemCoeffs;
use crate::modes::GpuConfig;
use crate::rulelang::{parse_rules, RuleSet};
use crate::strategy::ParamSpace;

/// Root of the fixture tree: `PARASEARCH_FIXTURES` when set, otherwise
/// the `fixtures/` directory of this repository.
pub fn fixtures_root() -> PathBuf {
    if let Ok(dir) = std::env::var("PARASEARCH_FIXTURES") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures")
}

/// Names of the shipped fixtures, sorted.
pub fn list_fixtures() -> Vec<String> {
    let mut names = Vec::new();
    if let Ok(entries) = std::fs::read_dir(fixtures_root()) {
        for entry in entries.flatten() {
            if entry.path().is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    names.push(name.to_string());
                }
            }
        }
    }
    names.sort();
    names
}

/// One loaded fixture. Every file has passed its owning module's
/// validation.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub dir: PathBuf,
    pub arch: ModelArch,
    pub catalog: GpuCatalog,
    pub rules: RuleSet,
    pub coeffs: MemCoeffs,
    space_overrides: String,
    profile_csv: String,
}

impl Fixture {
    /// The fixture's parameter space: the derived defaults for `config`
    /// with the fixture's overrides applied.
    pub fn space(&self, train: &TrainConfig, config: &GpuConfig) -> Result<ParamSpace> {
        let mut space = ParamSpace::default_for(&self.arch, train, config, &self.catalog)?;
        space.apply_json(&self.space_overrides, "space.json")?;
        Ok(space)
    }

    /// Lookup efficiency model calibrated from the fixture's profiling
    /// samples.
    pub fn efficiency(&self) -> Result<EfficiencyModel> {
        calibrate_efficiency(self.profile_csv.as_bytes(), &self.catalog)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a fixture by name; unknown names report what is available.
pub fn load_fixture(name: &str) -> Result<Fixture> {
    let dir = fixtures_root().join(name);
    if !dir.is_dir() {
        return Err(Error::InvalidRequest(format!(
            "unknown fixture `{name}`; available: {}",
            list_fixtures().join(", ")
        )));
    }
    let arch = load_model_arch(dir.join("model.json"))?;
    let catalog = load_catalog(dir.join("catalog.json"))?;
    let rules = parse_rules(&read(&dir.join("rules.txt"))?)?;
    let coeffs_text = read(&dir.join("coeffs.json"))?;
    let coeffs = MemCoeffs::from_json(&coeffs_text, "coeffs.json")?;
    let space_overrides = read(&dir.join("space.json"))?;
    let profile_csv = read(&dir.join("profile.csv"))?;
    let fixture = Fixture {
        name: name.to_string(),
        dir,
        arch,
        catalog,
        rules,
        coeffs,
        space_overrides,
        profile_csv,
    };
    // the space and profile must pass their owning modules too
    let first_gpu = fixture
        .catalog
        .gpus()
        .first()
        .ok_or_else(|| Error::validation("gpus", "fixture catalog is empty"))?;
    let probe = GpuConfig::single(first_gpu.name.clone(), 64)?;
    fixture.space(&TrainConfig::new(512, 4096), &probe)?;
    fixture.efficiency()?;
    Ok(fixture)
}
