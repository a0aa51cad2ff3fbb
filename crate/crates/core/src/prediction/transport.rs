use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::devkernel::DeviationKernel;
use crate::error::{Error, Result};
use crate::recovery::{locate, recover_pendulum_energy, BinnedMarginal, PreparedPrior, RecoveryRule, ReferenceGrid};
use crate::rng;
use crate::systems::{sample_conditional, FamilyConfig, Normalization, QuantityPrior, Trajectory};

const PULLBACK_CHUNK: usize = 256;
/// Trajectories recovered per pass over the reference grid.
const BATCH: usize = 8;

/// The measurement rule applied inside the transport kernel.
#[derive(Debug, Clone)]
pub enum Recoverer {
    /// Grid posterior for the synthetic families.
    Grid {
        grid: Arc<ReferenceGrid>,
        prepared: PreparedPrior,
        rule: RecoveryRule,
    },
    /// Median central-difference energy for the pendulum.
    PendulumEnergy {
        config: FamilyConfig,
        normalization: Normalization,
        edges: Vec<f64>,
    },
}

impl Recoverer {
    pub fn grid(grid: Arc<ReferenceGrid>, prior: &QuantityPrior, rule: RecoveryRule) -> Self {
        let prepared = grid.prepare(prior);
        Recoverer::Grid { grid, prepared, rule }
    }

    pub fn pendulum(config: FamilyConfig, normalization: Normalization, prior: &QuantityPrior) -> Self {
        Recoverer::PendulumEnergy {
            config,
            normalization,
            edges: prior.edges(),
        }
    }

    /// Coordinates the recoverer expects trajectories to be normalized with.
    pub fn normalization(&self) -> &Normalization {
        match self {
            Recoverer::Grid { grid, .. } => grid.normalization(),
            Recoverer::PendulumEnergy { normalization, .. } => normalization,
        }
    }

    pub fn edges(&self) -> &[f64] {
        match self {
            Recoverer::Grid { prepared, .. } => prepared.edges(),
            Recoverer::PendulumEnergy { edges, .. } => edges,
        }
    }

    /// Add one unit of recovered mass for a normalized trajectory to `row`.
    /// Returns whether a scalar recovery fell outside the bins and was clamped.
    pub fn accumulate(&self, x_norm: &Trajectory, row: &mut [f64]) -> Result<bool> {
        match self {
            Recoverer::Grid { grid, prepared, rule } => {
                grid.accumulate(x_norm.values(), prepared, *rule, row)?;
                Ok(false)
            }
            Recoverer::PendulumEnergy {
                config,
                normalization,
                edges,
            } => {
                let x = normalization.denormalize(x_norm);
                let e = recover_pendulum_energy(&x, config)?;
                let (b, clamped) = locate(edges, e);
                row[b] += 1.0;
                Ok(clamped)
            }
        }
    }

    /// [`accumulate`](Self::accumulate) for several trajectories, added in
    /// order; returns how many were clamped.
    pub fn accumulate_many(&self, xs_norm: &[Trajectory], row: &mut [f64]) -> Result<usize> {
        match self {
            Recoverer::Grid { grid, prepared, rule } => {
                let xs: Vec<&[f64]> = xs_norm.iter().map(Trajectory::values).collect();
                grid.accumulate_many(&xs, prepared, *rule, row)?;
                Ok(0)
            }
            Recoverer::PendulumEnergy { .. } => {
                let mut c = 0;
                for x in xs_norm {
                    c += usize::from(self.accumulate(x, row)?);
                }
                Ok(c)
            }
        }
    }

    /// Recovered marginal of a set of trajectories in physical units.
    pub fn pullback(&self, trajectories: &[Trajectory]) -> Result<(BinnedMarginal, usize)> {
        if trajectories.is_empty() {
            return Err(Error::Empty("pullback needs at least one trajectory".into()));
        }
        let b = self.edges().len() - 1;
        let norm = self.normalization();
        // Fixed chunks summed in order keep the result independent of scheduling.
        let parts: Vec<(Vec<f64>, usize)> = trajectories
            .par_chunks(PULLBACK_CHUNK)
            .enumerate()
            .map(|(k, chunk)| {
                let mut row = vec![0.0; b];
                let mut c = 0;
                for (m, batch) in chunk.chunks(BATCH).enumerate() {
                    let xs: Vec<Trajectory> = batch.iter().map(|x| norm.normalize(x)).collect();
                    match self.accumulate_many(&xs, &mut row) {
                        Ok(hits) => c += hits,
                        Err(_) => {
                            // Re-run one by one to report the offending trajectory.
                            let mut scratch = vec![0.0; b];
                            for (i, x) in xs.iter().enumerate() {
                                self.accumulate(x, &mut scratch).map_err(|e| Error::Row {
                                    row: k * PULLBACK_CHUNK + m * BATCH + i,
                                    source: Box::new(e),
                                })?;
                            }
                        }
                    }
                }
                Ok((row, c))
            })
            .collect::<Result<_>>()?;
        let mut mass = vec![0.0; b];
        let mut clamped = 0;
        for (row, c) in parts {
            mass.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            clamped += c;
        }
        Ok((BinnedMarginal::from_weights(self.edges().to_vec(), mass)?, clamped))
    }
}

/// Binned row-stochastic `K_dev(r' | r)`.
#[derive(Debug, Clone)]
pub struct TransportKernel {
    edges: Vec<f64>,
    /// `B × B`, row `b` is the source bin.
    matrix: Vec<f64>,
    samples_per_row: usize,
    sigma: f64,
    out_of_range: usize,
}

impl TransportKernel {
    /// Build from an explicit matrix; rows are checked for stochasticity.
    pub fn from_matrix(edges: Vec<f64>, matrix: Vec<f64>, samples_per_row: usize, sigma: f64) -> Result<Self> {
        let b = edges.len().saturating_sub(1);
        if b == 0 || matrix.len() != b * b {
            return Err(Error::Shape(format!("matrix has {} entries for {b} bins", matrix.len())));
        }
        for (i, row) in matrix.chunks_exact(b).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self {
            edges,
            matrix,
            samples_per_row,
            sigma,
            out_of_range: 0,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let n = self.bins();
        &self.matrix[b * n..(b + 1) * n]
    }

    pub fn samples_per_row(&self) -> usize {
        self.samples_per_row
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Scalar recoveries clamped into edge bins during estimation.
    pub fn out_of_range(&self) -> usize {
        self.out_of_range
    }
}

/// Monte-Carlo estimate of `K_dev`: for each source bin, `samples_per_row`
/// draws of `r` uniform in the bin, `x ~ p(x | r)`, `δ` from the kernel, and
/// the recovery of `x + δ`. Sample `(b, s)` uses the stream keyed by
/// `(seed, b, s)`, so rows are reproducible in any order.
pub fn estimate_transport_kernel(
    family: &FamilyConfig,
    recoverer: &Recoverer,
    kernel: &DeviationKernel,
    samples_per_row: usize,
    seed: u64,
) -> Result<TransportKernel> {
    if samples_per_row == 0 {
        return Err(Error::Domain("samples_per_row must be at least 1".into()));
    }
    let edges = recoverer.edges().to_vec();
    let b = edges.len() - 1;
    let rows: Vec<(Vec<f64>, usize)> = (0..b)
        .into_par_iter()
        .map(|row| {
            transport_row(family, recoverer, kernel, &edges, row, samples_per_row, seed)
                .map_err(|e| Error::Row { row, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut matrix = Vec::with_capacity(b * b);
    let mut out_of_range = 0;
    for (row, c) in rows {
        let total: f64 = row.iter().sum();
        matrix.extend(row.into_iter().map(|v| v / total));
        out_of_range += c;
    }
    Ok(TransportKernel {
        edges,
        matrix,
        samples_per_row,
        sigma: kernel.config().sigma,
        out_of_range,
    })
}

fn transport_row(
    family: &FamilyConfig,
    recoverer: &Recoverer,
    kernel: &DeviationKernel,
    edges: &[f64],
    row: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let mut acc = vec![0.0; edges.len() - 1];
    let mut clamped = 0;
    let norm = recoverer.normalization();
    let (lo, hi) = (edges[row], edges[row + 1]);
    let mut batch = Vec::with_capacity(BATCH);
    for s in 0..samples {
        let mut r = rng::stream2(seed, "transport", row as u64, s as u64);
        let q = (lo + r.random::<f64>() * (hi - lo)).min(hi);
        let x = norm.normalize(&sample_conditional(family, q, &mut r)?);
        batch.push(kernel.perturb_trajectory(&x, &mut r)?);
        if batch.len() == BATCH || s + 1 == samples {
            clamped += recoverer.accumulate_many(&batch, &mut acc)?;
            batch.clear();
        }
    }
    Ok((acc, clamped))
}

/// `π̄_dev(r') = Σ_b K(r' | b) π_b`.
pub fn predict_marginal(transport: &TransportKernel, prior: &QuantityPrior) -> Result<BinnedMarginal> {
    let b = transport.bins();
    let edges = prior.edges();
    let same = edges.len() == transport.edges.len()
        && edges
            .iter()
            .zip(&transport.edges)
            .all(|(a, c)| (a - c).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same {
        return Err(Error::IncompatibleBins(format!(
            "prior has {} bins on [{}, {}], kernel has {b} bins on [{}, {}]",
            prior.bins(),
            prior.lower(),
            prior.upper(),
            transport.edges[0],
            transport.edges[b]
        )));
    }
    let mut out = vec![0.0; b];
    for (src, &w) in prior.density().iter().enumerate() {
        for (o, k) in out.iter_mut().zip(transport.row(src)) {
            *o += w * k;
        }
    }
    BinnedMarginal::from_weights(transport.edges.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(b: usize) -> TransportKernel {
        let mut m = vec![0.0; b * b];
        for i in 0..b {
            m[i * b + i] = 1.0;
        }
        TransportKernel::from_matrix((0..=b).map(|i| i as f64).collect(), m, 1, 0.0).unwrap()
    }

    #[test]
    fn identity_returns_prior() {
        let prior = QuantityPrior::new(0.0, 3.0, vec![0.2, 0.5, 0.3]).unwrap();
        let p = predict_marginal(&identity(3), &prior).unwrap();
        for (a, b) in p.mass().iter().zip(prior.density()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_rows_give_that_row() {
        let v = [0.1, 0.6, 0.3];
        let m: Vec<f64> = (0..3).flat_map(|_| v).collect();
        let k = TransportKernel::from_matrix(vec![0.0, 1.0, 2.0, 3.0], m, 1, 0.0).unwrap();
        let prior = QuantityPrior::new(0.0, 3.0, vec![0.7, 0.2, 0.1]).unwrap();
        let p = predict_marginal(&k, &prior).unwrap();
        for (a, b) in p.mass().iter().zip(v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn doubly_stochastic_keeps_uniform() {
        let m = vec![0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5];
        let k = TransportKernel::from_matrix(vec![0.0, 1.0, 2.0, 3.0], m, 1, 0.0).unwrap();
        let p = predict_marginal(&k, &QuantityPrior::uniform(0.0, 3.0, 3).unwrap()).unwrap();
        assert!(p.mass().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn mismatched_bins_rejected() {
        let prior = QuantityPrior::uniform(0.0, 2.0, 3).unwrap();
        assert!(matches!(predict_marginal(&identity(3), &prior), Err(Error::IncompatibleBins(_))));
        assert!(TransportKernel::from_matrix(vec![0.0, 1.0, 2.0], vec![0.5, 0.4, 0.0, 1.0], 1, 0.0).is_err());
    }

    #[test]
    fn scalar_recoveries_clamp_to_edge_bins() {
        let e = [0.0, 1.0, 2.0];
        assert_eq!(locate(&e, -0.1), (0, true));
        assert_eq!(locate(&e, 2.0), (1, false));
        assert_eq!(locate(&e, 1.0), (1, false));
        assert_eq!(locate(&e, 2.5), (1, true));
    }
}
