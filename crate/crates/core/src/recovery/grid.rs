//! Grid posterior recovery with an adaptive bandwidth.
//!
//! For an observed trajectory `x` and references `g(r_j)`, the squared error
//! `e_j = ‖x − g(r_j)‖² / H` is turned into weights
//! `exp(−e_j / 2σ²(x)) π(r_j)` with `σ²(x) = max(min_j e_j, σ²_min)`.
//! Errors are computed in normalized coordinates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::marginal::locate;
use crate::error::{Error, Result};
use crate::systems::{family_normalization, rollout, FamilyConfig, Normalization, QuantityPrior, Trajectory};

pub const DEFAULT_RESOLUTION: usize = 1 << 14;
pub const DEFAULT_SIGMA_MIN_SQ: f64 = 1e-6;

/// References whose error exceeds `min_e + 2·PRUNE_EXPONENT·σ²` carry relative
/// weight below `exp(−PRUNE_EXPONENT)` and are skipped.
const PRUNE_EXPONENT: f64 = 50.0;
const PRUNE_CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub struct ReferenceGrid {
    quantities: Arc<[f64]>,
    /// `J × (H·d)` normalized reference values.
    references: Vec<f64>,
    horizon: usize,
    dim: usize,
    sigma_min_sq: f64,
    normalization: Normalization,
}

impl ReferenceGrid {
    pub fn quantities(&self) -> &[f64] {
        &self.quantities
    }

    pub fn len(&self) -> usize {
        self.quantities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantities.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_min_sq(&self) -> f64 {
        self.sigma_min_sq
    }

    pub fn with_sigma_min_sq(mut self, sigma_min_sq: f64) -> Self {
        self.sigma_min_sq = sigma_min_sq;
        self
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Normalized reference `j`.
    pub fn reference(&self, j: usize) -> &[f64] {
        let l = self.horizon * self.dim;
        &self.references[j * l..(j + 1) * l]
    }

    /// Precompute the prior weights and output bins for repeated recoveries.
    pub fn prepare(&self, prior: &QuantityPrior) -> PreparedPrior {
        let edges = prior.edges();
        let weights = self.quantities.iter().map(|&r| prior.weight_at(r)).collect();
        let bins = self.quantities.iter().map(|&r| locate(&edges, r).0).collect();
        PreparedPrior { weights, bins, edges }
    }

    /// Squared errors in normalized units, with provably negligible references
    /// set to `+∞`, for several trajectories in one pass over the grid.
    /// Returns the exact minimum error of each.
    fn errors(&self, xs: &[&[f64]], outs: &mut [Vec<f64>]) -> Vec<f64> {
        let l = self.horizon * self.dim;
        let inv_h = 1.0 / self.horizon as f64;
        let j_total = self.len();
        let floor = self.sigma_min_sq;
        let threshold = |m: f64| (m + 2.0 * PRUNE_EXPONENT * m.max(floor)) * self.horizon as f64;

        let stride = (j_total / 256).max(1);
        let mut best: Vec<f64> = xs
            .iter()
            .map(|x| {
                (0..j_total)
                    .step_by(stride)
                    .map(|j| full_sq_dist(x, &self.references[j * l..(j + 1) * l]) * inv_h)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut limit: Vec<f64> = best.iter().map(|&b| threshold(b)).collect();
        for j in 0..j_total {
            let reference = &self.references[j * l..(j + 1) * l];
            for (k, x) in xs.iter().enumerate() {
                outs[k][j] = match pruned_sq_dist(x, reference, limit[k]) {
                    Some(acc) => {
                        let e = acc * inv_h;
                        if e < best[k] {
                            best[k] = e;
                            limit[k] = threshold(e);
                        }
                        e
                    }
                    None => f64::INFINITY,
                };
            }
        }
        best
    }

    fn check_len(&self, x_norm: &[f64]) -> Result<()> {
        if x_norm.len() != self.horizon * self.dim {
            return Err(Error::Shape(format!(
                "trajectory has {} values, grid expects {}×{}",
                x_norm.len(),
                self.horizon,
                self.dim
            )));
        }
        Ok(())
    }

    /// Unnormalized-free posterior weights for a normalized trajectory.
    pub(crate) fn posterior_weights(&self, x_norm: &[f64], prepared: &PreparedPrior) -> Result<Vec<f64>> {
        self.check_len(x_norm)?;
        let mut errors = vec![vec![0.0; self.len()]];
        let min_e = self.errors(&[x_norm], &mut errors)[0];
        let bandwidth_sq = min_e.max(self.sigma_min_sq);
        posterior_weights_shifted(&errors[0], min_e, bandwidth_sq, &prepared.weights)
    }

    /// Add one unit of recovered mass for a normalized trajectory into `row`
    /// (binned on the prepared prior's edges).
    pub(crate) fn accumulate(&self, x_norm: &[f64], prepared: &PreparedPrior, rule: RecoveryRule, row: &mut [f64]) -> Result<()> {
        self.accumulate_many(&[x_norm], prepared, rule, row)
    }

    /// As [`accumulate`](Self::accumulate) for several trajectories, added in
    /// order. Sharing one pass over the references keeps them in cache.
    pub(crate) fn accumulate_many(
        &self,
        xs: &[&[f64]],
        prepared: &PreparedPrior,
        rule: RecoveryRule,
        row: &mut [f64],
    ) -> Result<()> {
        for x in xs {
            self.check_len(x)?;
        }
        let mut errors = vec![vec![0.0; self.len()]; xs.len()];
        let mins = self.errors(xs, &mut errors);
        for (e, min_e) in errors.iter().zip(mins) {
            let w = posterior_weights_shifted(e, min_e, min_e.max(self.sigma_min_sq), &prepared.weights)?;
            self.add_mass(w, prepared, rule, row);
        }
        Ok(())
    }

    fn add_mass(&self, w: Vec<f64>, prepared: &PreparedPrior, rule: RecoveryRule, row: &mut [f64]) {
        match rule {
            RecoveryRule::Posterior => {
                for (j, wj) in w.into_iter().enumerate() {
                    if wj > 0.0 {
                        row[prepared.bins[j]] += wj;
                    }
                }
            }
            RecoveryRule::Mode => row[prepared.bins[argmax_low(&w)]] += 1.0,
            RecoveryRule::Mean => {
                let r: f64 = self.quantities.iter().zip(&w).map(|(r, w)| r * w).sum();
                row[locate(&prepared.edges, r).0] += 1.0;
            }
        }
    }
}

/// How a recovered posterior contributes to a marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryRule {
    /// The full binned posterior.
    #[default]
    Posterior,
    /// A unit mass at the posterior mode.
    Mode,
    /// A unit mass at the posterior mean.
    Mean,
}

/// First index of the maximum.
fn argmax_low(w: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in w.iter().enumerate() {
        if v > w[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct PreparedPrior {
    weights: Vec<f64>,
    bins: Vec<usize>,
    edges: Vec<f64>,
}

impl PreparedPrior {
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
}

#[inline]
fn full_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Squared distance, or `None` once a partial sum exceeds `limit`.
#[inline]
fn pruned_sq_dist(a: &[f64], b: &[f64], limit: f64) -> Option<f64> {
    let mut total = 0.0;
    for (x, y) in a.chunks(PRUNE_CHUNK).zip(b.chunks(PRUNE_CHUNK)) {
        total += full_sq_dist(x, y);
        if total > limit {
            return None;
        }
    }
    Some(total)
}

/// Normalized weights `∝ exp(−e_j / 2σ²) π_j` for a fixed bandwidth.
///
/// Invariant under adding a constant to every error.
pub fn posterior_weights_from_errors(errors: &[f64], bandwidth_sq: f64, prior_weights: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != prior_weights.len() {
        return Err(Error::Shape("errors and prior weights differ in length".into()));
    }
    if !(bandwidth_sq > 0.0) {
        return Err(Error::Domain("bandwidth must be positive".into()));
    }
    let min_e = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    posterior_weights_shifted(errors, min_e, bandwidth_sq, prior_weights)
}

fn posterior_weights_shifted(errors: &[f64], shift: f64, bandwidth_sq: f64, prior_weights: &[f64]) -> Result<Vec<f64>> {
    let inv = 1.0 / (2.0 * bandwidth_sq);
    let mut w: Vec<f64> = errors
        .iter()
        .zip(prior_weights)
        .map(|(&e, &p)| if e.is_finite() && p > 0.0 { (-(e - shift) * inv).exp() * p } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegeneratePosterior);
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// `J` uniformly spaced quantities over the prior's range with their
/// references rolled out by the family rule.
pub fn build_reference_grid(config: &FamilyConfig, prior: &QuantityPrior, resolution: usize) -> Result<ReferenceGrid> {
    if resolution < 2 {
        return Err(Error::Domain(format!("grid resolution must be at least 2, got {resolution}")));
    }
    config.validate()?;
    let (lo, hi) = (prior.lower(), prior.upper());
    let step = (hi - lo) / (resolution - 1) as f64;
    let quantities: Vec<f64> = (0..resolution)
        .map(|j| if j == resolution - 1 { hi } else { lo + step * j as f64 })
        .collect();
    let normalization = family_normalization(config, &[])?;
    let l = config.horizon * config.dim();
    let mut references = Vec::with_capacity(resolution * l);
    for &r in &quantities {
        let x = rollout(config, r)?;
        references.extend(normalization.normalize_values(x.values()));
    }
    Ok(ReferenceGrid {
        quantities: quantities.into(),
        references,
        horizon: config.horizon,
        dim: config.dim(),
        sigma_min_sq: DEFAULT_SIGMA_MIN_SQ,
        normalization,
    })
}

/// Posterior over grid quantities for one trajectory.
#[derive(Debug, Clone)]
pub struct Posterior {
    quantities: Arc<[f64]>,
    weights: Vec<f64>,
}

impl Posterior {
    pub fn new(quantities: Arc<[f64]>, weights: Vec<f64>) -> Result<Self> {
        if quantities.len() != weights.len() {
            return Err(Error::Shape("posterior weights do not match grid".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("posterior weights must be non-negative and sum to 1".into()));
        }
        Ok(Self { quantities, weights })
    }

    pub fn quantities(&self) -> &[f64] {
        &self.quantities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Posterior mass binned onto `edges`; grid points outside are clamped.
    pub fn binned(&self, edges: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; edges.len() - 1];
        for (&r, &w) in self.quantities.iter().zip(&self.weights) {
            out[locate(edges, r).0] += w;
        }
        out
    }
}

/// Posterior for a trajectory in physical units.
pub fn recover_posterior(grid: &ReferenceGrid, x: &Trajectory, prior: &QuantityPrior) -> Result<Posterior> {
    if x.horizon() != grid.horizon || x.dim() != grid.dim {
        return Err(Error::Shape(format!(
            "trajectory is {}×{}, grid expects {}×{}",
            x.horizon(),
            x.dim(),
            grid.horizon,
            grid.dim
        )));
    }
    let xn = grid.normalization.normalize_values(x.values());
    let weights = grid.posterior_weights(&xn, &grid.prepare(prior))?;
    Ok(Posterior {
        quantities: grid.quantities.clone(),
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    Mode,
    Mean,
}

/// Point summary of a posterior. Mode ties resolve to the lowest quantity.
pub fn summarize(posterior: &Posterior, rule: Summary) -> f64 {
    match rule {
        Summary::Mode => posterior.quantities[argmax_low(&posterior.weights)],
        Summary::Mean => posterior.quantities.iter().zip(&posterior.weights).map(|(r, w)| r * w).sum(),
    }
}
