use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::devkernel::{DeviationKernel, KernelConfig, PieceIndex};
use crate::error::{Error, Result};
use crate::recovery::{median, BinnedMarginal};
use crate::rng;
use crate::systems::Trajectory;

pub const DEFAULT_K_DEC: usize = 8;
pub const DEFAULT_PERTURBATIONS_PER_CODE: usize = 64;

/// Unlabeled Latin-hypercube code points in `[0, 1]^D`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeSupport {
    /// `N × D`, point-major.
    codes: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl CodeSupport {
    pub fn from_codes(codes: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || codes.is_empty() || codes.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form {dim}-dimensional codes", codes.len())));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("codes must be finite".into()));
        }
        Ok(Self { codes, dim, seed })
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn code(&self, j: usize) -> &[f64] {
        &self.codes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    /// The `k` nearest codes to `y` as `(index, squared distance)`, ascending,
    /// ties to the lower index.
    pub fn nearest(&self, y: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = (0..self.len()).map(|j| (j, sq_dist(self.code(j), y))).collect();
        let k = k.min(d.len());
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    }
}

/// One point per `1/n` stratum in every coordinate, strata permuted
/// independently per coordinate, uniform jitter inside each stratum.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Result<CodeSupport> {
    if n == 0 || dim == 0 {
        return Err(Error::Domain(format!("latin hypercube needs n, D >= 1, got n={n}, D={dim}")));
    }
    let mut codes = vec![0.0; n * dim];
    for c in 0..dim {
        let mut r = rng::stream(seed, "latin_hypercube", c as u64);
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut r);
        for (j, s) in strata.into_iter().enumerate() {
            let v = (s as f64 + r.random::<f64>()) / n as f64;
            // Keep the point inside its own stratum after rounding.
            codes[j * dim + c] = v.min((s as f64 + 1.0) / n as f64 * (1.0 - f64::EPSILON));
        }
    }
    CodeSupport::from_codes(codes, dim, seed)
}

/// Expected decoder weights `M_{jℓ}` from source code `j` to code cell `ℓ`.
#[derive(Debug, Clone, Serialize)]
pub struct DecoderMatrix {
    /// Sparse rows, `(ℓ, M_{jℓ})` by ascending `ℓ`.
    rows: Vec<Vec<(usize, f64)>>,
    k_dec: usize,
    tau: f64,
}

impl DecoderMatrix {
    /// Build from explicit sparse rows; each must be a probability vector.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, k_dec: usize, tau: f64) -> Result<Self> {
        let n = rows.len();
        for (j, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().map(|e| e.1).sum();
            if row.iter().any(|&(l, w)| l >= n || !(w >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("decoder row {j} is not a probability vector")));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Domain(format!("decoder row {j} columns must be strictly ascending")));
            }
        }
        Ok(Self { rows, k_dec, tau })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, j: usize) -> &[(usize, f64)] {
        &self.rows[j]
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        let row = &self.rows[j];
        row.binary_search_by_key(&l, |e| e.0).map_or(0.0, |k| row[k].1)
    }

    pub fn k_dec(&self) -> usize {
        self.k_dec
    }

    /// Decoder bandwidth `τ`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut m = vec![0.0; n * n];
        for (j, row) in self.rows.iter().enumerate() {
            for &(l, w) in row {
                m[j * n + l] = w;
            }
        }
        m
    }
}

/// Decoder weights `α_ℓ ∝ exp(−(‖ỹ − y_ℓ‖² − ‖ỹ − y_{ℓ1}‖²) / 2τ)` over
/// neighbors sorted by distance. With `τ = 0` the weight is shared by the
/// neighbors tied with the nearest.
pub fn decoder_weights(neighbors: &[(usize, f64)], tau: f64) -> Vec<(usize, f64)> {
    let d1 = neighbors[0].1;
    let raw: Vec<f64> = neighbors
        .iter()
        .map(|&(_, d)| {
            if tau > 0.0 {
                (-(d - d1) / (2.0 * tau)).exp()
            } else if d == d1 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    neighbors.iter().zip(raw).map(|(&(l, _), w)| (l, w / total)).collect()
}

/// Perturb every code with a local kernel of the deviation-kernel form (code
/// coordinates play the role of sequence locations, bounds `[0, 1]`), decode
/// each perturbed code to its `k_dec` nearest codes, and average the decoder
/// weights into row `j`.
pub fn decoder_matrix(
    support: &CodeSupport,
    kernel: &KernelConfig,
    k_dec: usize,
    perturbations_per_code: usize,
    seed: u64,
) -> Result<DecoderMatrix> {
    if k_dec == 0 {
        return Err(Error::config("mitigation.k_dec", "must be at least 1"));
    }
    if perturbations_per_code == 0 {
        return Err(Error::config("mitigation.perturbations_per_code", "must be at least 1"));
    }
    let n = support.len();
    let d = support.dim();
    let pieces: Vec<Trajectory> = (0..n).map(|j| Trajectory::new(support.code(j).to_vec(), d, 1)).collect();
    let index = Arc::new(PieceIndex::from_normalized(&pieces)?);
    let mut config = kernel.clone();
    if config.coordinate_bounds.is_none() {
        config.coordinate_bounds = Some(vec![[0.0, 1.0]]);
    }
    let dev = DeviationKernel::new(index, config)?;

    let neighbors: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..perturbations_per_code)
                .map(|p| {
                    let mut r = rng::stream2(seed, "decoder", j as u64, p as u64);
                    let y = dev.perturb_trajectory(&pieces[j], &mut r)?;
                    Ok(support.nearest(y.values(), k_dec))
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let farthest: Vec<f64> = neighbors.iter().flatten().map(|nb| nb[nb.len() - 1].1).collect();
    let tau = median(farthest);

    let rows = neighbors
        .into_par_iter()
        .map(|draws| {
            let mut acc = vec![0.0; n];
            let mut touched = Vec::new();
            for nb in &draws {
                for (l, w) in decoder_weights(nb, tau) {
                    if w == 0.0 {
                        continue;
                    }
                    if acc[l] == 0.0 {
                        touched.push(l);
                    }
                    acc[l] += w;
                }
            }
            touched.sort_unstable();
            let inv = 1.0 / draws.len() as f64;
            touched
                .into_iter()
                .map(|l| (l, acc[l] * inv))
                .collect()
        })
        .collect();
    Ok(DecoderMatrix { rows, k_dec, tau })
}

/// The `α`-weighted average of the posteriors paired with the `k_dec`
/// nearest codes.
pub fn decode_posterior(
    code: &[f64],
    support: &CodeSupport,
    assignment: &[usize],
    posteriors: &[BinnedMarginal],
    k_dec: usize,
    tau: f64,
) -> Result<BinnedMarginal> {
    let weights = decode_checked(code, support, assignment, k_dec, tau)?;
    let first = posteriors
        .first()
        .ok_or_else(|| Error::Empty("no posteriors to decode".into()))?;
    let mut mass = vec![0.0; first.bins()];
    for (l, w) in weights {
        let nu = &posteriors[assignment[l]];
        first.ensure_same_bins(nu)?;
        mass.iter_mut().zip(nu.mass()).for_each(|(m, v)| *m += w * v);
    }
    BinnedMarginal::from_weights(first.edges().to_vec(), mass)
}

/// One support trajectory index sampled by the decoder weights.
pub fn decode_sample<R: Rng + ?Sized>(
    code: &[f64],
    support: &CodeSupport,
    assignment: &[usize],
    k_dec: usize,
    tau: f64,
    rng: &mut R,
) -> Result<usize> {
    let weights = decode_checked(code, support, assignment, k_dec, tau)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(l, w) in &weights {
        acc += w;
        if u < acc {
            return Ok(assignment[l]);
        }
    }
    Ok(assignment[weights[weights.len() - 1].0])
}

fn decode_checked(
    code: &[f64],
    support: &CodeSupport,
    assignment: &[usize],
    k_dec: usize,
    tau: f64,
) -> Result<Vec<(usize, f64)>> {
    if code.len() != support.dim() {
        return Err(Error::Shape(format!("code has {} coordinates, support has {}", code.len(), support.dim())));
    }
    if assignment.len() != support.len() {
        return Err(Error::Shape("assignment does not cover the support".into()));
    }
    if k_dec == 0 {
        return Err(Error::Domain("k_dec must be at least 1".into()));
    }
    Ok(decoder_weights(&support.nearest(code, k_dec), tau))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
