use serde::Serialize;

use crate::error::{Error, Result};
use crate::recovery::BinnedMarginal;
use crate::systems::QuantityPrior;

pub const DEFAULT_REWEIGHT_FLOOR: f64 = 1e-6;
pub const DEFAULT_INVERSE_FLOOR_FRACTION: f64 = 0.10;

/// Per-trajectory sampling weights that undo a measured marginal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReweightPlan {
    /// Normalized weights, one per trajectory.
    pub weights: Vec<f64>,
    /// `π_b / max(π̂_b, floor)` before normalization.
    pub unnormalized: Vec<f64>,
    pub bin_of: Vec<usize>,
    pub floor: f64,
    /// Recovered values outside the prior range, clamped into the edge bins.
    pub clamped: usize,
}

impl ReweightPlan {
    /// `traj_id,weight` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("traj_id,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            out.push_str(&format!("{i},{w:?}\n"));
        }
        out
    }
}

pub fn compute_reweight(recovered: &[f64], prior: &QuantityPrior, model: &BinnedMarginal) -> Result<ReweightPlan> {
    compute_reweight_with_floor(recovered, prior, model, DEFAULT_REWEIGHT_FLOOR)
}

/// `w_i ∝ π_{b(r_i)} / max(π̂_{b(r_i)}, floor)`.
pub fn compute_reweight_with_floor(
    recovered: &[f64],
    prior: &QuantityPrior,
    model: &BinnedMarginal,
    floor: f64,
) -> Result<ReweightPlan> {
    if recovered.is_empty() {
        return Err(Error::Empty("no recovered quantities to reweight".into()));
    }
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("reweight floor must be positive, got {floor}")));
    }
    prior.as_marginal().ensure_same_bins(model)?;
    if let Some(i) = recovered.iter().position(|r| !r.is_finite()) {
        return Err(Error::Domain(format!("recovered quantity {i} is not finite")));
    }
    let clamped = recovered.iter().filter(|&&r| !prior.contains(r)).count();
    let bin_of: Vec<usize> = recovered.iter().map(|&r| prior.bin_of(r)).collect();
    let unnormalized: Vec<f64> = bin_of
        .iter()
        .map(|&b| prior.density()[b] / model.mass()[b].max(floor))
        .collect();
    let total: f64 = unnormalized.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("every trajectory falls in a bin with zero prior mass".into()));
    }
    Ok(ReweightPlan {
        weights: unnormalized.iter().map(|w| w / total).collect(),
        unnormalized,
        bin_of,
        floor,
        clamped,
    })
}

/// `π̃_b ∝ 1 / max(π̂_b, floor_fraction / B)`, the prior to draw conditioning
/// values from (uniformly within the chosen bin).
pub fn inverse_prior(model: &BinnedMarginal, floor_fraction: f64) -> Result<BinnedMarginal> {
    if !(floor_fraction > 0.0 && floor_fraction.is_finite()) {
        return Err(Error::Domain(format!("floor fraction must be positive, got {floor_fraction}")));
    }
    let b = model.bins() as f64;
    let w = model.mass().iter().map(|&m| 1.0 / m.max(floor_fraction / b)).collect();
    BinnedMarginal::from_weights(model.edges().to_vec(), w)
}
