//! The shared measurement rule `Rec(r | x)` and pullback of trajectory
//! distributions to binned quantity marginals.

mod grid;
mod marginal;
mod measures;
mod pullback;

pub use grid::{
    build_reference_grid, posterior_weights_from_errors, recover_posterior, summarize, Posterior, PreparedPrior,
    RecoveryRule, ReferenceGrid, Summary, DEFAULT_RESOLUTION, DEFAULT_SIGMA_MIN_SQ,
};
pub use marginal::BinnedMarginal;
pub(crate) use marginal::locate;
pub(crate) use measures::median;
pub use measures::{pendulum_energy_series, recover_path_length, recover_pendulum_energy};
pub use pullback::{pullback_marginal, Pullback, Recovery};
