//! Quantity-transport kernel, predicted marginal, drift metrics, σ sweeps
//! and seed statistics.

mod metrics;
mod report;
mod transport;

pub use metrics::{paired_t_test, signed_drift, tv_distance, TTest};
pub use report::{
    build_dataset, build_recoverer, drift_report, kde_curve, marginals_csv, plot_data_csv, sigma_sweep, sweep_table, DriftReport, PredictionContext,
    PredictionSetup, DEFAULT_DATASET_SIZE, DEFAULT_SAMPLES_PER_ROW, DEFAULT_SIGMAS,
};
pub use transport::{estimate_transport_kernel, predict_marginal, Recoverer, TransportKernel};
