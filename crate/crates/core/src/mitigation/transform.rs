use serde::{Deserialize, Serialize};

use super::code::{decoder_matrix, latin_hypercube, DEFAULT_K_DEC, DEFAULT_PERTURBATIONS_PER_CODE};
use super::pairing::{init_pairing, swap_optimize, Pairing, PairingProblem, SwapOptions};
use crate::devkernel::KernelConfig;
use crate::error::{Error, Result};
use crate::recovery::BinnedMarginal;
use crate::rng;

/// Settings for the code-space pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Trajectories (and codes) in the support.
    pub support_size: usize,
    /// Scale of the code-space kernel; `None` uses the trajectory kernel's σ.
    pub code_sigma: Option<f64>,
    pub k_dec: usize,
    pub perturbations_per_code: usize,
    pub swap: SwapOptions,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            support_size: 512,
            code_sigma: None,
            k_dec: DEFAULT_K_DEC,
            perturbations_per_code: DEFAULT_PERTURBATIONS_PER_CODE,
            swap: SwapOptions::default(),
        }
    }
}

/// Result of pairing a trajectory support with a Latin-hypercube code support.
#[derive(Debug, Clone, Serialize)]
pub struct TransformPlan {
    pub support_size: usize,
    pub code_dim: usize,
    pub code_sigma: f64,
    pub k_dec: usize,
    pub tau: f64,
    pub seed: u64,
    /// Quantity bin of each trajectory (argmax of its posterior).
    pub bin_of: Vec<usize>,
    pub initial: Pairing,
    pub optimized: Pairing,
    pub initial_mean_tv: f64,
    pub optimized_mean_tv: f64,
}

/// Argmax bin of each posterior, lowest bin on ties.
pub fn posterior_bins(posteriors: &[BinnedMarginal]) -> Vec<usize> {
    posteriors
        .iter()
        .map(|m| {
            let mut best = 0;
            for (b, &v) in m.mass().iter().enumerate() {
                if v > m.mass()[best] {
                    best = b;
                }
            }
            best
        })
        .collect()
}

/// Draw codes of dimension `code_dim`, build the decoder matrix, and
/// optimize a bin-preserving pairing of `posteriors` against `prior`.
pub fn transform_plan(
    posteriors: &[BinnedMarginal],
    prior: &BinnedMarginal,
    code_dim: usize,
    kernel: &KernelConfig,
    config: &TransformConfig,
    seed: u64,
) -> Result<TransformPlan> {
    let n = posteriors.len();
    if n == 0 {
        return Err(Error::Empty("transform needs at least one trajectory".into()));
    }
    let code_sigma = config.code_sigma.unwrap_or(kernel.sigma);
    let code_kernel = KernelConfig {
        sigma: code_sigma,
        location_sigma: None,
        coordinate_bounds: None,
        ..kernel.clone()
    };
    let codes = latin_hypercube(n, code_dim, rng::derive_seed(seed, "codes", 0))?;
    let m = decoder_matrix(
        &codes,
        &code_kernel,
        config.k_dec,
        config.perturbations_per_code,
        rng::derive_seed(seed, "decoder", 0),
    )?;
    let bin_of = posterior_bins(posteriors);
    let problem = PairingProblem::new(&m, posteriors, prior, bin_of.clone())?;
    let initial = init_pairing(&problem, &mut rng::stream(seed, "pairing-init", 0))?;
    let optimized = swap_optimize(
        &problem,
        initial.clone(),
        &config.swap,
        &mut rng::stream(seed, "pairing-swap", 0),
    )?;
    Ok(TransformPlan {
        support_size: n,
        code_dim,
        code_sigma,
        k_dec: config.k_dec,
        tau: m.tau(),
        seed,
        initial_mean_tv: problem.mean_tv(&initial.assignment)?,
        optimized_mean_tv: problem.mean_tv(&optimized.assignment)?,
        bin_of,
        initial,
        optimized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        let e = vec![0.0, 1.0, 2.0, 3.0];
        let nu = vec![
            BinnedMarginal::new(e.clone(), vec![0.2, 0.4, 0.4]).unwrap(),
            BinnedMarginal::new(e.clone(), vec![0.0, 0.0, 1.0]).unwrap(),
        ];
        assert_eq!(posterior_bins(&nu), vec![1, 2]);
    }

    #[test]
    fn small_plan_is_consistent() {
        let e = vec![0.0, 1.0, 2.0];
        let nu: Vec<BinnedMarginal> = (0..12)
            .map(|i| {
                let a = if i % 3 == 0 { 0.9 } else { 0.2 };
                BinnedMarginal::new(e.clone(), vec![a, 1.0 - a]).unwrap()
            })
            .collect();
        let prior = BinnedMarginal::uniform(e).unwrap();
        let cfg = TransformConfig {
            k_dec: 3,
            perturbations_per_code: 4,
            ..TransformConfig::default()
        };
        let plan = transform_plan(&nu, &prior, 6, &KernelConfig::with_sigma(0.05), &cfg, 3).unwrap();
        assert_eq!(plan.support_size, 12);
        assert!(plan.optimized.objective <= plan.initial.objective);
        let mut a = plan.optimized.assignment.clone();
        a.sort();
        assert_eq!(a, (0..12).collect::<Vec<_>>());
        let again = transform_plan(&nu, &prior, 6, &KernelConfig::with_sigma(0.05), &cfg, 3).unwrap();
        assert_eq!(again.optimized.assignment, plan.optimized.assignment);
    }
}
