//! Binned quantity priors and their quantile transport map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::BinnedMarginal;

/// Intended marginal over the physical quantity, stored as a piecewise-constant
/// density over `bins` equal-width bins on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityPrior {
    lower: f64,
    upper: f64,
    /// Per-bin probability mass; sums to one.
    density: Vec<f64>,
}

impl QuantityPrior {
    pub fn uniform(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("prior needs at least 2 bins".into()));
        }
        Self::new(lower, upper, vec![1.0 / bins as f64; bins])
    }

    pub fn new(lower: f64, upper: f64, density: Vec<f64>) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Domain(format!(
                "prior bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if density.len() < 2 {
            return Err(Error::Domain(format!(
                "prior needs at least 2 bins, got {}",
                density.len()
            )));
        }
        if density.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::Domain("prior density must be finite and non-negative".into()));
        }
        let total: f64 = density.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("prior density sums to {total}, expected 1")));
        }
        Ok(Self { lower, upper, density })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        uniform_edges(self.lower, self.upper, self.bins())
    }

    /// Bin containing `r`, clamping values outside the range to the edge bins.
    pub fn bin_of(&self, r: f64) -> usize {
        let b = ((r - self.lower) / self.bin_width()).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins() - 1)
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lower && r <= self.upper
    }

    /// The prior's own mass vector as a marginal on its bins.
    pub fn as_marginal(&self) -> BinnedMarginal {
        BinnedMarginal::from_parts(self.edges(), self.density.clone())
    }

    /// Relative prior weight at `r` (the bin's mass).
    pub fn weight_at(&self, r: f64) -> f64 {
        if self.contains(r) {
            self.density[self.bin_of(r)]
        } else {
            0.0
        }
    }
}

fn uniform_edges(lower: f64, upper: f64, bins: usize) -> Vec<f64> {
    let width = (upper - lower) / bins as f64;
    (0..=bins)
        .map(|i| if i == bins { upper } else { lower + width * i as f64 })
        .collect()
}

/// Quantile map `T(u) = F^{-1}(u)` of the binned prior. Within a bin the CDF is
/// linear, so the inverse is exact.
pub fn quantile_transport(prior: &QuantityPrior, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u = {u} outside [0, 1]")));
    }
    if u == 0.0 {
        return Ok(prior.lower);
    }
    if u == 1.0 {
        return Ok(prior.upper);
    }
    let width = prior.bin_width();
    let mut cumulative = 0.0;
    for (b, &mass) in prior.density.iter().enumerate() {
        if mass > 0.0 && u <= cumulative + mass {
            let frac = ((u - cumulative) / mass).clamp(0.0, 1.0);
            let r = prior.lower + width * (b as f64 + frac);
            return Ok(r.min(prior.upper));
        }
        cumulative += mass;
    }
    // Accumulated rounding left u just above the last cumulative value.
    Ok(prior.upper)
}
