use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::devkernel::KernelConfig;
use crate::error::{Error, Result};
use crate::mitigation::{TransformConfig, DEFAULT_INVERSE_FLOOR_FRACTION, DEFAULT_REWEIGHT_FLOOR};
use crate::prediction::{PredictionSetup, DEFAULT_DATASET_SIZE, DEFAULT_SAMPLES_PER_ROW, DEFAULT_SIGMAS};
use crate::recovery::{RecoveryRule, DEFAULT_RESOLUTION};
use crate::systems::{FamilyConfig, QuantityPrior};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "PHYSDRIFT_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "physdrift-out";

/// Prior as written in a config. Missing bounds come from the family's
/// quantity range; `density` holds relative weights and sets the bin count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub bins: Option<usize>,
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    pub reweight_floor: f64,
    pub inverse_floor_fraction: f64,
    pub transform: TransformConfig,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            reweight_floor: DEFAULT_REWEIGHT_FLOOR,
            inverse_floor_fraction: DEFAULT_INVERSE_FLOOR_FRACTION,
            transform: TransformConfig::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: FamilyConfig,
    #[serde(default)]
    prior: PriorSpec,
    #[serde(default)]
    kernel: KernelConfig,
    #[serde(default)]
    rule: RecoveryRule,
    #[serde(default = "default_dataset_size")]
    dataset_size: usize,
    #[serde(default = "default_samples_per_row")]
    samples_per_row: usize,
    #[serde(default = "default_grid_resolution")]
    grid_resolution: usize,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_sigmas")]
    sigmas: Vec<f64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    mitigation: MitigationConfig,
}

fn default_dataset_size() -> usize {
    DEFAULT_DATASET_SIZE
}
fn default_samples_per_row() -> usize {
    DEFAULT_SAMPLES_PER_ROW
}
fn default_grid_resolution() -> usize {
    DEFAULT_RESOLUTION
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub family: FamilyConfig,
    pub prior: QuantityPrior,
    pub kernel: KernelConfig,
    pub rule: RecoveryRule,
    pub dataset_size: usize,
    pub samples_per_row: usize,
    pub grid_resolution: usize,
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    pub mitigation: MitigationConfig,
}

/// Parse and validate a JSON config. An empty document is read as `{}`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            Error::ConfigParse(inner.to_string())
        } else {
            Error::ConfigParse(format!("at `{path}`: {inner}"))
        }
    })?;
    raw.validate()
}

impl RawConfig {
    fn validate(self) -> Result<RunConfig> {
        self.family.validate()?;
        self.kernel.validate()?;
        let prior = build_prior(&self.family, &self.prior)?;
        for (name, v) in [
            ("dataset_size", self.dataset_size),
            ("samples_per_row", self.samples_per_row),
            ("grid_resolution", self.grid_resolution),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.sigmas.is_empty() {
            return Err(Error::config("sigmas", "must list at least one scale"));
        }
        for (i, s) in self.sigmas.iter().enumerate() {
            if !(s.is_finite() && *s >= 0.0) {
                return Err(Error::config(format!("sigmas[{i}]"), format!("must be finite and non-negative, got {s}")));
            }
        }
        let m = &self.mitigation;
        if !(m.reweight_floor > 0.0 && m.reweight_floor.is_finite()) {
            return Err(Error::config("mitigation.reweight_floor", "must be positive"));
        }
        if !(m.inverse_floor_fraction > 0.0 && m.inverse_floor_fraction.is_finite()) {
            return Err(Error::config("mitigation.inverse_floor_fraction", "must be positive"));
        }
        let t = &m.transform;
        for (name, v) in [
            ("support_size", t.support_size),
            ("k_dec", t.k_dec),
            ("perturbations_per_code", t.perturbations_per_code),
            ("swap.restarts", t.swap.restarts),
        ] {
            if v == 0 {
                return Err(Error::config(format!("mitigation.transform.{name}"), "must be at least 1"));
            }
        }
        if let Some(s) = t.code_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config("mitigation.transform.code_sigma", "must be finite and non-negative"));
            }
        }
        Ok(RunConfig {
            family: self.family,
            prior,
            kernel: self.kernel,
            rule: self.rule,
            dataset_size: self.dataset_size,
            samples_per_row: self.samples_per_row,
            grid_resolution: self.grid_resolution,
            seeds: self.seeds,
            sigmas: self.sigmas,
            output_dir: self.output_dir,
            mitigation: self.mitigation,
        })
    }
}

fn build_prior(family: &FamilyConfig, spec: &PriorSpec) -> Result<QuantityPrior> {
    let (lo, hi) = family.kind.quantity_range();
    let lower = spec.lower.unwrap_or(lo);
    let upper = spec.upper.unwrap_or(hi);
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(Error::config("prior", format!("bounds must satisfy lower < upper, got [{lower}, {upper}]")));
    }
    if lower < lo || upper > hi {
        return Err(Error::config(
            "prior",
            format!("bounds [{lower}, {upper}] exceed the family range [{lo}, {hi}]"),
        ));
    }
    match &spec.density {
        Some(w) => {
            if let Some(b) = spec.bins {
                if b != w.len() {
                    return Err(Error::config(
                        "prior.bins",
                        format!("is {b} but density has {} entries", w.len()),
                    ));
                }
            }
            if w.len() < 2 {
                return Err(Error::config("prior.density", "needs at least 2 bins"));
            }
            if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(format!("prior.density[{i}]"), "must be finite and non-negative"));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::config("prior.density", "must have positive total mass"));
            }
            QuantityPrior::new(lower, upper, w.iter().map(|v| v / total).collect())
                .map_err(|e| Error::config("prior.density", e.to_string()))
        }
        None => {
            let bins = spec.bins.unwrap_or_else(|| family.kind.default_bins());
            if bins < 2 {
                return Err(Error::config("prior.bins", "must be at least 2"));
            }
            QuantityPrior::uniform(lower, upper, bins).map_err(|e| Error::config("prior", e.to_string()))
        }
    }
}

impl RunConfig {
    /// Prediction setup for one seed.
    pub fn setup(&self, seed: u64) -> PredictionSetup {
        PredictionSetup {
            family: self.family.clone(),
            prior: self.prior.clone(),
            kernel: self.kernel.clone(),
            rule: self.rule,
            dataset_size: self.dataset_size,
            samples_per_row: self.samples_per_row,
            grid_resolution: self.grid_resolution,
            seed,
        }
    }

    /// `override_dir`, else the config's directory, else `$PHYSDRIFT_OUT`,
    /// else `physdrift-out`.
    pub fn resolve_output_dir(&self, override_dir: Option<PathBuf>) -> PathBuf {
        override_dir
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}
