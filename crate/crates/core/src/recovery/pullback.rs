use super::grid::Posterior;
use super::marginal::{locate, BinnedMarginal};
use crate::error::{Error, Result};
use crate::systems::QuantityPrior;

/// Output of the measurement rule for one trajectory.
#[derive(Debug, Clone)]
pub enum Recovery {
    Posterior(Posterior),
    Scalar(f64),
}

#[derive(Debug, Clone)]
pub struct Pullback {
    pub marginal: BinnedMarginal,
    /// Scalar recoveries outside the prior range that were clamped into edge bins.
    pub out_of_range: usize,
}

/// Induced marginal `E_x[Rec(r | x)]` on the prior's bins.
pub fn pullback_marginal(sources: &[Recovery], prior: &QuantityPrior) -> Result<Pullback> {
    if sources.is_empty() {
        return Err(Error::Empty("pullback needs at least one recovery".into()));
    }
    let edges = prior.edges();
    let mut mass = vec![0.0; prior.bins()];
    let mut out_of_range = 0;
    for source in sources {
        match source {
            Recovery::Posterior(p) => {
                for (acc, m) in mass.iter_mut().zip(p.binned(&edges)) {
                    *acc += m;
                }
            }
            Recovery::Scalar(r) => {
                let (b, clamped) = locate(&edges, *r);
                out_of_range += usize::from(clamped);
                mass[b] += 1.0;
            }
        }
    }
    let n = sources.len() as f64;
    let mass: Vec<f64> = mass.into_iter().map(|m| m / n).collect();
    let total: f64 = mass.iter().sum();
    let mass = mass.into_iter().map(|m| m / total).collect();
    Ok(Pullback {
        marginal: BinnedMarginal::new(edges, mass)?,
        out_of_range,
    })
}
