//! Trajectory generation for the synthetic and pendulum families, prior
//! absorption, and Lyapunov sensitivity.

mod dataset;
mod family;
mod lyapunov;
mod pendulum;
mod prior;

pub use dataset::{family_normalization, sample_dataset, Dataset, Normalization, Trajectory};
pub use family::{rollout, sample_conditional, FamilyConfig, FamilyKind, PendulumParams};
pub use lyapunov::{lyapunov_closed_form, lyapunov_finite};
pub use pendulum::{
    curate_pendulum_dataset, pendulum_rollout, state_at_energy, CurationOptions, PendulumRun, PendulumState,
};
pub use prior::{quantile_transport, QuantityPrior};
