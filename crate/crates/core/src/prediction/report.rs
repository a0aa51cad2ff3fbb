use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::metrics::{signed_drift, tv_distance};
use super::transport::{estimate_transport_kernel, predict_marginal, Recoverer, TransportKernel};
use crate::devkernel::{build_piece_index, DeviationKernel, KernelConfig, PieceIndex};
use crate::error::Result;
use crate::recovery::{build_reference_grid, BinnedMarginal, RecoveryRule, DEFAULT_RESOLUTION};
use crate::rng::derive_seed;
use crate::systems::{
    curate_pendulum_dataset, sample_dataset, CurationOptions, Dataset, FamilyConfig, FamilyKind, QuantityPrior,
};

/// The σ column of the default sweep.
pub const DEFAULT_SIGMAS: [f64; 11] = [0.0, 0.0005, 0.002, 0.0045, 0.008, 0.0125, 0.018, 0.0245, 0.032, 0.0405, 0.05];
pub const DEFAULT_DATASET_SIZE: usize = 25_000;
pub const DEFAULT_SAMPLES_PER_ROW: usize = 2000;

/// Everything a drift prediction depends on.
#[derive(Debug, Clone)]
pub struct PredictionSetup {
    pub family: FamilyConfig,
    pub prior: QuantityPrior,
    pub kernel: KernelConfig,
    pub rule: RecoveryRule,
    pub dataset_size: usize,
    pub samples_per_row: usize,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl PredictionSetup {
    pub fn new(family: FamilyConfig, prior: QuantityPrior) -> Self {
        Self {
            family,
            prior,
            kernel: KernelConfig::default(),
            rule: RecoveryRule::Posterior,
            dataset_size: DEFAULT_DATASET_SIZE,
            samples_per_row: DEFAULT_SAMPLES_PER_ROW,
            grid_resolution: DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

/// Drift of the predicted marginal relative to the data and the prior.
///
/// `data_marginal` is the pullback of the unperturbed family trajectories
/// along the same source draws as the prediction (the `σ = 0` kernel), so
/// `signed_drift` and `tv_pred_data` isolate the kernel's effect.
/// `sampled_data_marginal` is the pullback of the sampled dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub family: FamilyConfig,
    pub kernel: KernelConfig,
    pub rule: RecoveryRule,
    pub sigma: f64,
    pub seed: u64,
    pub dataset_size: usize,
    pub samples_per_row: usize,
    pub grid_resolution: usize,
    pub dense_cutoff: usize,
    pub prior: BinnedMarginal,
    pub data_marginal: BinnedMarginal,
    pub sampled_data_marginal: BinnedMarginal,
    pub predicted_marginal: BinnedMarginal,
    pub signed_drift: Vec<f64>,
    pub tv_data_prior: f64,
    pub tv_sampled_data_prior: f64,
    pub tv_pred_prior: f64,
    pub tv_pred_data: f64,
    pub out_of_range_count: usize,
}

/// The dataset a setup describes: sampled from the prior for the 1-D
/// families, curated by energy bin for the pendulum.
pub fn build_dataset(setup: &PredictionSetup) -> Result<Dataset> {
    let data_seed = derive_seed(setup.seed, "dataset", 0);
    match setup.family.kind {
        FamilyKind::Pendulum => curate_pendulum_dataset(
            &setup.family,
            &setup.prior,
            setup.dataset_size,
            data_seed,
            CurationOptions::default(),
        ),
        _ => sample_dataset(&setup.family, &setup.prior, setup.dataset_size, data_seed),
    }
}

/// The measurement rule for a setup. The pendulum rule works in the
/// dataset's coordinates.
pub fn build_recoverer(setup: &PredictionSetup, dataset: &Dataset) -> Result<Recoverer> {
    Ok(match setup.family.kind {
        FamilyKind::Pendulum => Recoverer::pendulum(setup.family.clone(), dataset.normalization().clone(), &setup.prior),
        _ => {
            let grid = build_reference_grid(&setup.family, &setup.prior, setup.grid_resolution)?;
            Recoverer::grid(Arc::new(grid), &setup.prior, setup.rule)
        }
    })
}

/// Shared state for one or more predictions under a setup: the dataset,
/// piece index, recovery rule, and the `σ = 0` reference kernel.
pub struct PredictionContext {
    setup: PredictionSetup,
    dataset: Dataset,
    index: Arc<PieceIndex>,
    recoverer: Recoverer,
    sampled: (BinnedMarginal, usize),
    reference: Option<TransportKernel>,
}

impl PredictionContext {
    pub fn build(setup: PredictionSetup) -> Result<Self> {
        setup.family.validate()?;
        setup.kernel.validate()?;
        let dataset = build_dataset(&setup)?;
        let recoverer = build_recoverer(&setup, &dataset)?;
        let index = Arc::new(build_piece_index(&dataset)?);
        let sampled = recoverer.pullback(dataset.trajectories())?;
        Ok(Self {
            setup,
            dataset,
            index,
            recoverer,
            sampled,
            reference: None,
        })
    }

    pub fn setup(&self) -> &PredictionSetup {
        &self.setup
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn recoverer(&self) -> &Recoverer {
        &self.recoverer
    }

    pub fn sampled_data_marginal(&self) -> &BinnedMarginal {
        &self.sampled.0
    }

    fn transport_seed(&self) -> u64 {
        derive_seed(self.setup.seed, "transport", 0)
    }

    /// The kernel at scale `sigma`, with bounded families clipped to their
    /// normalized range unless bounds are configured.
    pub fn kernel(&self, sigma: f64) -> Result<DeviationKernel> {
        let mut config = KernelConfig {
            sigma,
            ..self.setup.kernel.clone()
        };
        if config.coordinate_bounds.is_none() && self.setup.family.kind.coordinate_range().is_some() {
            config.coordinate_bounds = Some(vec![[-1.0, 1.0]]);
        }
        DeviationKernel::new(self.index.clone(), config)
    }

    pub fn transport(&self, sigma: f64) -> Result<TransportKernel> {
        let kernel = self.kernel(sigma)?;
        estimate_transport_kernel(
            &self.setup.family,
            &self.recoverer,
            &kernel,
            self.setup.samples_per_row,
            self.transport_seed(),
        )
    }

    /// The `σ = 0` transport kernel, computed once.
    pub fn reference_transport(&mut self) -> Result<&TransportKernel> {
        if self.reference.is_none() {
            self.reference = Some(self.transport(0.0)?);
        }
        Ok(self.reference.as_ref().expect("just set"))
    }

    pub fn report(&mut self, sigma: f64) -> Result<DriftReport> {
        let kernel = self.kernel(sigma)?;
        self.reference_transport()?;
        let reference = self.reference.as_ref().expect("computed above");
        let identity = (0..self.index.horizon()).all(|u| kernel.sigma_at(u) == 0.0);
        let transport = if identity {
            reference.clone()
        } else {
            estimate_transport_kernel(
                &self.setup.family,
                &self.recoverer,
                &kernel,
                self.setup.samples_per_row,
                self.transport_seed(),
            )?
        };
        let prior_marginal = self.setup.prior.as_marginal();
        let predicted = predict_marginal(&transport, &self.setup.prior)?;
        let data = predict_marginal(reference, &self.setup.prior)?;
        let reference_clamped = reference.out_of_range();
        let (sampled, sampled_clamped) = self.sampled.clone();
        let setup = &self.setup;
        Ok(DriftReport {
            family: setup.family.clone(),
            kernel: kernel.config().clone(),
            rule: setup.rule,
            sigma,
            seed: setup.seed,
            dataset_size: setup.dataset_size,
            samples_per_row: setup.samples_per_row,
            grid_resolution: setup.grid_resolution,
            dense_cutoff: kernel.dense_cutoff(),
            signed_drift: signed_drift(&predicted, &data)?,
            tv_data_prior: tv_distance(&data, &prior_marginal)?,
            tv_sampled_data_prior: tv_distance(&sampled, &prior_marginal)?,
            tv_pred_prior: tv_distance(&predicted, &prior_marginal)?,
            tv_pred_data: tv_distance(&predicted, &data)?,
            out_of_range_count: transport.out_of_range() + reference_clamped + sampled_clamped,
            prior: prior_marginal,
            data_marginal: data,
            sampled_data_marginal: sampled,
            predicted_marginal: predicted,
        })
    }
}

/// Drift report at the setup's kernel scale.
pub fn drift_report(setup: &PredictionSetup) -> Result<DriftReport> {
    let sigma = setup.kernel.sigma;
    PredictionContext::build(setup.clone())?.report(sigma)
}

/// One report per scale, sharing the dataset, grid, source draws and the
/// `σ = 0` reference.
pub fn sigma_sweep(setup: &PredictionSetup, sigmas: &[f64]) -> Result<Vec<DriftReport>> {
    if sigmas.is_empty() {
        return Err(crate::Error::Empty("sigma sweep needs at least one scale".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(crate::Error::config("sigmas", format!("scales must be finite and non-negative, got {s}")));
    }
    let mut ctx = PredictionContext::build(setup.clone())?;
    sigmas.iter().map(|&s| ctx.report(s)).collect()
}

/// Summary table with one row per report (scale, seed).
pub fn sweep_table(reports: &[DriftReport]) -> String {
    let mut out = String::from("sigma,seed,tv_data_prior,tv_sampled_data_prior,tv_pred_prior,tv_pred_data\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sigma, r.seed, r.tv_data_prior, r.tv_sampled_data_prior, r.tv_pred_prior, r.tv_pred_data
        );
    }
    out
}

/// Gaussian KDE of a binned marginal (bin centers weighted by mass) with a
/// Silverman bandwidth. For plotting only.
pub fn kde_curve(marginal: &BinnedMarginal, points: &[f64]) -> Vec<f64> {
    let centers = marginal.centers();
    let w = marginal.mass();
    let mean: f64 = centers.iter().zip(w).map(|(c, w)| c * w).sum();
    let var: f64 = centers.iter().zip(w).map(|(c, w)| w * (c - mean) * (c - mean)).sum();
    let n_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let iqr = weighted_quantile(&centers, w, 0.75) - weighted_quantile(&centers, w, 0.25);
    let spread = match (var.sqrt(), iqr / 1.34) {
        (s, i) if i > 0.0 => s.min(i),
        (s, _) => s,
    };
    let edges = marginal.edges();
    let width = (edges[edges.len() - 1] - edges[0]) / marginal.bins() as f64;
    let h = (0.9 * spread * n_eff.powf(-0.2)).max(width * 1e-3);
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    points
        .iter()
        .map(|&x| {
            centers
                .iter()
                .zip(w)
                .map(|(c, w)| w * (-0.5 * ((x - c) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut acc = 0.0;
    for (v, w) in values.iter().zip(weights) {
        acc += w;
        if acc >= q {
            return *v;
        }
    }
    values[values.len() - 1]
}

/// Plot-ready CSV: KDE curves of each marginal on `points` evenly spaced values.
pub fn plot_data_csv(report: &DriftReport, points: usize) -> String {
    let edges = report.prior.edges();
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let n = points.max(2);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let curves = [
        kde_curve(&report.prior, &xs),
        kde_curve(&report.data_marginal, &xs),
        kde_curve(&report.sampled_data_marginal, &xs),
        kde_curve(&report.predicted_marginal, &xs),
    ];
    let mut out = String::from("r,prior,data,sampled_data,predicted\n");
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(out, "{x},{},{},{},{}", curves[0][i], curves[1][i], curves[2][i], curves[3][i]);
    }
    out
}

/// Binned CSV of every marginal and the signed drift.
pub fn marginals_csv(report: &DriftReport) -> String {
    let e = report.prior.edges();
    let mut out = String::from("bin_lo,bin_hi,prior,data,sampled_data,predicted,signed_drift\n");
    for b in 0..report.prior.bins() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e[b],
            e[b + 1],
            report.prior.mass()[b],
            report.data_marginal.mass()[b],
            report.sampled_data_marginal.mass()[b],
            report.predicted_marginal.mass()[b],
            report.signed_drift[b]
        );
    }
    out
}
