use rand::Rng;
use serde::{Deserialize, Serialize};

use super::family::{sample_conditional, FamilyConfig};
use super::prior::{quantile_transport, QuantityPrior};
use crate::error::{Error, Result};
use crate::rng;

/// A fixed-horizon sequence of `horizon × dim` states, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<f64>,
    horizon: usize,
    dim: usize,
    quantity_true: Option<f64>,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, horizon: usize, dim: usize) -> Self {
        assert_eq!(values.len(), horizon * dim, "trajectory buffer has wrong length");
        Self {
            values,
            horizon,
            dim,
            quantity_true: None,
        }
    }

    pub fn with_quantity(mut self, r: f64) -> Self {
        self.quantity_true = Some(r);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quantity_true(&self) -> Option<f64> {
        self.quantity_true
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-coordinate affine map from `[lo, hi]` to `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    ranges: Vec<[f64; 2]>,
}

impl Normalization {
    pub fn new(ranges: Vec<[f64; 2]>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Empty("normalization needs at least one coordinate".into()));
        }
        for (i, [lo, hi]) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!("coordinate {i} range [{lo}, {hi}] is empty")));
            }
        }
        Ok(Self { ranges })
    }

    /// Ranges spanning the observed data, widened when a coordinate is constant.
    pub fn from_data(trajectories: &[Trajectory], dim: usize) -> Result<Self> {
        let mut ranges = vec![[f64::INFINITY, f64::NEG_INFINITY]; dim];
        for t in trajectories {
            for chunk in t.values.chunks_exact(dim) {
                for (r, &v) in ranges.iter_mut().zip(chunk) {
                    r[0] = r[0].min(v);
                    r[1] = r[1].max(v);
                }
            }
        }
        for r in &mut ranges {
            if !(r[0] < r[1]) {
                let c = if r[0].is_finite() { r[0] } else { 0.0 };
                *r = [c - 1.0, c + 1.0];
            }
        }
        Self::new(ranges)
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[[f64; 2]] {
        &self.ranges
    }

    pub fn normalize_values(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let [lo, hi] = self.ranges[i % d];
                2.0 * (v - lo) / (hi - lo) - 1.0
            })
            .collect()
    }

    pub fn denormalize_values(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let [lo, hi] = self.ranges[i % d];
                lo + 0.5 * (v + 1.0) * (hi - lo)
            })
            .collect()
    }

    pub fn normalize(&self, x: &Trajectory) -> Trajectory {
        Trajectory {
            values: self.normalize_values(&x.values),
            ..x.clone()
        }
    }

    pub fn denormalize(&self, x: &Trajectory) -> Trajectory {
        Trajectory {
            values: self.denormalize_values(&x.values),
            ..x.clone()
        }
    }

    /// Scale factor from a physical coordinate to its normalized value.
    pub fn scale(&self, coord: usize) -> f64 {
        let [lo, hi] = self.ranges[coord];
        2.0 / (hi - lo)
    }
}

/// Default normalization for a family: its fixed coordinate range if it has
/// one, otherwise the data range.
pub fn family_normalization(config: &FamilyConfig, trajectories: &[Trajectory]) -> Result<Normalization> {
    match config.kind.coordinate_range() {
        Some((lo, hi)) => Normalization::new(vec![[lo, hi]; config.dim()]),
        None => Normalization::from_data(trajectories, config.dim()),
    }
}

/// Trajectories sharing one family and horizon, plus the prior they encode.
#[derive(Debug, Clone)]
pub struct Dataset {
    family: FamilyConfig,
    prior: QuantityPrior,
    trajectories: Vec<Trajectory>,
    normalization: Normalization,
    seed: Option<u64>,
}

impl Dataset {
    pub fn from_trajectories(
        family: FamilyConfig,
        prior: QuantityPrior,
        trajectories: Vec<Trajectory>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let normalization = family_normalization(&family, &trajectories)?;
        Self::with_normalization(family, prior, trajectories, normalization, seed)
    }

    pub fn with_normalization(
        family: FamilyConfig,
        prior: QuantityPrior,
        trajectories: Vec<Trajectory>,
        normalization: Normalization,
        seed: Option<u64>,
    ) -> Result<Self> {
        let dim = normalization.dim();
        for (i, t) in trajectories.iter().enumerate() {
            if t.horizon != family.horizon || t.dim != dim {
                return Err(Error::Shape(format!(
                    "trajectory {i} is {}×{}, dataset expects {}×{}",
                    t.horizon, t.dim, family.horizon, dim
                )));
            }
        }
        Ok(Self {
            family,
            prior,
            trajectories,
            normalization,
            seed,
        })
    }

    pub fn family(&self) -> &FamilyConfig {
        &self.family
    }

    pub fn prior(&self) -> &QuantityPrior {
        &self.prior
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.family.horizon
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    /// All trajectories in normalized coordinates.
    pub fn normalized(&self) -> Vec<Trajectory> {
        self.trajectories.iter().map(|t| self.normalization.normalize(t)).collect()
    }
}

/// Draw `n` trajectories: `u_i` from the stream keyed by `(seed, i)`, then
/// `r_i = T(u_i)` and `x_i ~ p(x | r_i)`.
pub fn sample_dataset(config: &FamilyConfig, prior: &QuantityPrior, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("dataset size must be at least 1".into()));
    }
    config.validate()?;
    let trajectories = (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, "dataset", i as u64);
            let u: f64 = r.random();
            let q = quantile_transport(prior, u)?;
            sample_conditional(config, q, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_trajectories(config.clone(), prior.clone(), trajectories, Some(seed))
}
