//! Seeded studies, run configuration and output plumbing.
//!
//! Every random draw in a study is keyed by [`derive_seed`], so a row can be
//! regenerated from `(base seed, study kind, N, trial)` alone.

mod convergence;
pub mod desk;
mod manifest;
mod uniqueness;
pub mod validation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use convergence::{
    run_convergence_study, summarize_convergence, write_convergence_csv, write_convergence_summary_csv,
    ConvergenceRow, ConvergenceStudy, ConvergenceSummary, NSummary,
};
pub use manifest::{Manifest, CSV_SCHEMA_VERSION};
pub use uniqueness::{run_uniqueness_study, write_uniqueness_csv, UniquenessRow, UniquenessStudy};
pub use validation::{run_validation_suite, write_validation_csv, CheckResult, ValidationReport};

use crate::error::{Error, Result};
use crate::hjb::HjbConfig;
use crate::model::{ModelConfig, ModelSpec};
use crate::ode::{Rk4, TimeConfig, TimeGrid};
use crate::pmp::{SolverConfig, SolverSection};
use crate::population::{PopulationConfig, PopulationSpec};

/// Study identifiers; the discriminant enters the seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence = 1,
    Uniqueness = 2,
    Validation = 3,
    Stability = 4,
    Train = 5,
}

impl StudyKind {
    pub fn code(self) -> u64 {
        self as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Convergence => "convergence",
            StudyKind::Uniqueness => "uniqueness",
            StudyKind::Validation => "validation",
            StudyKind::Stability => "stability",
            StudyKind::Train => "train",
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one study row:
/// `s = mix(mix(mix(mix(base) ^ kind) ^ n) ^ trial)` with `mix` =
/// [`splitmix64`].
pub fn derive_seed(base: u64, kind: StudyKind, n: u64, trial: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ kind.code());
    h = splitmix64(h ^ n);
    splitmix64(h ^ trial)
}

/// Median of a nonempty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two
/// distinct abscissae.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default = "defaults::n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::base_seed")]
    pub base_seed: u64,
    #[serde(default = "defaults::t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "defaults::inits")]
    pub inits: usize,
    /// Initial controls are uniform in `[-init_range, init_range]`.
    #[serde(default = "defaults::init_range")]
    pub init_range: f64,
    /// Stability probe radius and pair count.
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::pairs")]
    pub pairs: usize,
    /// Per-check tolerance overrides for the validation suite.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Test hook: `"gradient_sign_flip"` corrupts the adjoint gradient
    /// inside the validation suite.
    #[serde(default)]
    pub fault: Option<String>,
}

mod defaults {
    pub fn n_list() -> Vec<usize> {
        vec![16, 32, 64, 128, 256, 512, 1024]
    }
    pub fn trials() -> usize {
        20
    }
    pub fn base_seed() -> u64 {
        20_170_321
    }
    pub fn t_list() -> Vec<f64> {
        vec![0.1, 5.0]
    }
    pub fn inits() -> usize {
        10
    }
    pub fn init_range() -> f64 {
        2.0
    }
    pub fn rho() -> f64 {
        0.1
    }
    pub fn pairs() -> usize {
        20
    }
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            kind: None,
            n_list: defaults::n_list(),
            trials: defaults::trials(),
            base_seed: defaults::base_seed(),
            t_list: defaults::t_list(),
            inits: defaults::inits(),
            init_range: defaults::init_range(),
            rho: defaults::rho(),
            pairs: defaults::pairs(),
            tolerances: BTreeMap::new(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
}

/// Whole run configuration, read from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub population: Option<PopulationConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub output: OutputSection,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing [{section}] section"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<ModelSpec> {
        self.model.as_ref().ok_or_else(|| missing("model"))?.build()
    }

    pub fn time(&self) -> Result<(TimeGrid, Rk4)> {
        let t = self.time.as_ref().ok_or_else(|| missing("time"))?;
        Ok((t.grid()?, t.rk4()?))
    }

    pub fn population(&self) -> Result<PopulationSpec> {
        self.population.as_ref().ok_or_else(|| missing("population"))?.build()
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        self.solver.build()
    }
}
