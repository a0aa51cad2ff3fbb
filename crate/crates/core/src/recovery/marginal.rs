use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability mass over `B` contiguous quantity bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMarginal {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

impl BinnedMarginal {
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        if mass.len() + 1 != edges.len() {
            return Err(Error::Shape(format!(
                "{} bins need {} edges, got {}",
                mass.len(),
                mass.len() + 1,
                edges.len()
            )));
        }
        if mass.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::Domain("marginal mass must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("marginal mass sums to {total}, expected 1")));
        }
        Ok(Self { edges, mass })
    }

    /// Normalize non-negative weights into a marginal.
    pub fn from_weights(edges: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain("cannot normalize weights with zero or non-finite total".into()));
        }
        Self::new(edges, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(edges: Vec<f64>) -> Result<Self> {
        let b = edges.len().saturating_sub(1);
        Self::new(edges, vec![1.0 / b as f64; b])
    }

    pub(crate) fn from_parts(edges: Vec<f64>, mass: Vec<f64>) -> Self {
        Self { edges, mass }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mass divided by bin width.
    pub fn density(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .zip(&self.mass)
            .map(|(w, m)| m / (w[1] - w[0]))
            .collect()
    }

    pub fn same_bins(&self, other: &BinnedMarginal) -> bool {
        self.edges == other.edges
    }

    pub fn ensure_same_bins(&self, other: &BinnedMarginal) -> Result<()> {
        if self.same_bins(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleBins(format!(
                "{} bins on [{}, {}] vs {} bins on [{}, {}]",
                self.bins(),
                self.edges[0],
                self.edges[self.bins()],
                other.bins(),
                other.edges[0],
                other.edges[other.bins()]
            )))
        }
    }

    /// Bin holding `r` and whether `r` had to be clamped into an edge bin.
    pub fn locate(&self, r: f64) -> (usize, bool) {
        locate(&self.edges, r)
    }
}

pub(crate) fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Shape("a marginal needs at least one bin".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("bin edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Bin index of `r` among `edges`; values outside clamp to the edge bins.
/// The last bin is closed on the right.
pub(crate) fn locate(edges: &[f64], r: f64) -> (usize, bool) {
    let b = edges.len() - 1;
    if r.is_nan() {
        return (0, true);
    }
    if r < edges[0] {
        return (0, true);
    }
    if r > edges[b] {
        return (b - 1, true);
    }
    // First edge strictly greater than r, minus one.
    let idx = edges.partition_point(|&e| e <= r);
    (idx.saturating_sub(1).min(b - 1), false)
}
