use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::index::{dense_cutoff, nearest_in, sq_dist, CountsCache, PieceIndex};
use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// Support radii in units of `σ_u`: the core and the full Gaussian neighborhood.
const ALPHA_CORE: f64 = 1.0;
const ALPHA_FULL: f64 = 3.0;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Deviation kernel settings. `sigma` and the bounds are in normalized
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub sigma: f64,
    /// Consecutive timesteps continued from one drawn source trajectory.
    pub run_length: usize,
    /// Dense-neighborhood cutoff; `None` derives it from the data.
    pub dense_cutoff: Option<usize>,
    /// Supports with fewer pieces than this fall back to the nearest piece.
    pub k_dec_floor: usize,
    /// Per-coordinate `[lo, hi]` clip range (one entry broadcasts).
    pub coordinate_bounds: Option<Vec<[f64; 2]>>,
    pub preserve_endpoints: bool,
    /// Start the run tiling at a random offset instead of `t = 0`.
    pub random_run_phase: bool,
    /// Draws in the pre-pass that estimates the empirical variance `v_u`.
    pub prepass_draws: usize,
    /// Per-location scales overriding `sigma`.
    pub location_sigma: Option<Vec<f64>>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            run_length: 3,
            dense_cutoff: None,
            k_dec_floor: 1,
            coordinate_bounds: None,
            preserve_endpoints: false,
            random_run_phase: false,
            prepass_draws: 256,
            location_sigma: None,
        }
    }
}

impl KernelConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("kernel.{field}"), msg));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", format!("must be finite and non-negative, got {}", self.sigma));
        }
        if self.run_length == 0 {
            return bad("run_length", "must be at least 1".into());
        }
        if self.dense_cutoff == Some(0) {
            return bad("dense_cutoff", "must be at least 1".into());
        }
        if self.k_dec_floor == 0 {
            return bad("k_dec_floor", "must be at least 1".into());
        }
        if self.prepass_draws == 0 {
            return bad("prepass_draws", "must be at least 1".into());
        }
        if let Some(bounds) = &self.coordinate_bounds {
            if bounds.is_empty() {
                return bad("coordinate_bounds", "must not be empty".into());
            }
            for (c, [lo, hi]) in bounds.iter().enumerate() {
                if !(lo < hi) {
                    return bad(&format!("coordinate_bounds[{c}]"), format!("needs lo < hi, got [{lo}, {hi}]"));
                }
            }
        }
        if let Some(s) = &self.location_sigma {
            if let Some(v) = s.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return bad("location_sigma", format!("scales must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// How the replacement at one location was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `σ_u = 0`: the state is kept.
    Identity,
    /// Dense 1-D support: truncated Gaussian offset snapped to a piece.
    Dense,
    /// Categorical draw over the one-scale support.
    Sparse,
    /// Categorical draw over the typical number of nearest pieces (d > 1).
    Nearest,
    /// Support under-resolved: the nearest observed piece.
    Fallback,
}

/// Candidate pieces for one location with their Gaussian weights.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub dim: usize,
    /// Distinct candidate points, flattened.
    pub points: Vec<f64>,
    /// How many data pieces share each point.
    pub multiplicity: Vec<usize>,
    /// `ω_u(z | x)`, up to a common factor.
    pub weights: Vec<f64>,
    pub branch: Branch,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.multiplicity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicity.is_empty()
    }

    /// Categorical draw probabilities over `points`.
    pub fn probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.multiplicity)
            .map(|(w, &m)| w * m as f64)
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

/// Instrumentation of one perturbation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// The replacement uniform in effect at each location.
    pub decisions: Vec<f64>,
    /// Number of replacement decisions drawn.
    pub decision_draws: usize,
    /// Branch of the run's anchor draw, per location.
    pub branches: Vec<Option<Branch>>,
    /// Data trajectory supplying `Z_u`, per location.
    pub sources: Vec<Option<usize>>,
    /// Pre-pass estimate of `Var(Z_u − x_u)`, `H × d`.
    pub empirical_variance: Vec<f64>,
}

/// How to realize a draw at one location.
enum LocalDraw {
    Identity,
    /// Distinct values `[lo, hi)` of the location, center and scale.
    Snap { lo: usize, hi: usize, center: f64, sigma: f64 },
    /// Points (flattened) with cumulative unnormalized probabilities. `keys`
    /// are distinct-value positions (1-D) or trajectory ids (d > 1).
    Table {
        points: Vec<f64>,
        cum: Vec<f64>,
        keys: Vec<usize>,
        branch: Branch,
    },
}

/// The local-recombination deviation kernel over a fixed piece index.
#[derive(Debug, Clone)]
pub struct DeviationKernel {
    index: Arc<PieceIndex>,
    config: KernelConfig,
    sigma_u: Vec<f64>,
    bounds: Option<Vec<[f64; 2]>>,
    cutoff: usize,
    typical: usize,
    counts: Option<CountsCache>,
    /// Stratified standardized quantiles of the `±3` truncated normal.
    strata_full: Vec<f64>,
    /// Stratified uniforms `(k + ½)/P`.
    strata_uniform: Vec<f64>,
}

impl DeviationKernel {
    pub fn new(index: Arc<PieceIndex>, config: KernelConfig) -> Result<Self> {
        config.validate()?;
        let h = index.horizon();
        let sigma_u = match &config.location_sigma {
            Some(s) if s.len() != h => {
                return Err(Error::config(
                    "kernel.location_sigma",
                    format!("has {} entries, horizon is {h}", s.len()),
                ))
            }
            Some(s) => s.clone(),
            None => vec![config.sigma; h],
        };
        let bounds = match &config.coordinate_bounds {
            None => None,
            Some(b) if b.len() == 1 => Some(vec![b[0]; index.dim()]),
            Some(b) if b.len() == index.dim() => Some(b.clone()),
            Some(b) => {
                return Err(Error::config(
                    "kernel.coordinate_bounds",
                    format!("has {} entries for {} coordinates", b.len(), index.dim()),
                ))
            }
        };
        let active = sigma_u.iter().any(|&s| s > 0.0);
        let counts = if active { Some(index.calibrate(&sigma_u)?) } else { None };
        let cutoff = match (config.dense_cutoff, &counts) {
            (Some(c), _) => c,
            (None, Some(cache)) => dense_cutoff(cache),
            (None, None) => 1,
        };
        let typical = counts.as_ref().map_or(1, CountsCache::typical_count);
        let p = config.prepass_draws;
        let strata_uniform: Vec<f64> = (0..p).map(|k| (k as f64 + 0.5) / p as f64).collect();
        let strata_full = strata_uniform.iter().map(|&u| truncated_quantile(u, ALPHA_FULL)).collect();
        Ok(Self {
            index,
            config,
            sigma_u,
            bounds,
            cutoff,
            typical,
            counts,
            strata_full,
            strata_uniform,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn index(&self) -> &PieceIndex {
        &self.index
    }

    /// The cutoff in effect for calling a neighborhood dense.
    pub fn dense_cutoff(&self) -> usize {
        self.cutoff
    }

    /// Nearest-piece count used for d > 1.
    pub fn typical_count(&self) -> usize {
        self.typical
    }

    pub fn counts(&self) -> Option<&CountsCache> {
        self.counts.as_ref()
    }

    pub fn sigma_at(&self, u: usize) -> f64 {
        self.sigma_u[u]
    }

    /// Candidate pieces and weights around `x_u` (normalized values of the
    /// whole trajectory, time-major).
    pub fn local_neighborhood(&self, x: &[f64], u: usize) -> Neighborhood {
        let d = self.index.dim();
        let xu = &x[u * d..(u + 1) * d];
        match self.local_draw(u, xu) {
            LocalDraw::Identity => Neighborhood {
                dim: d,
                points: xu.to_vec(),
                multiplicity: vec![1],
                weights: vec![1.0],
                branch: Branch::Identity,
            },
            LocalDraw::Snap { lo, hi, center, sigma } => {
                let values = &self.index.values(u)[lo..hi];
                let cum = &self.index.cum(u)[lo..=hi];
                Neighborhood {
                    dim: 1,
                    points: values.to_vec(),
                    multiplicity: cum.windows(2).map(|w| w[1] - w[0]).collect(),
                    weights: values.iter().map(|&v| gauss(v - center, sigma)).collect(),
                    branch: Branch::Dense,
                }
            }
            LocalDraw::Table { points, cum, branch, .. } => {
                let s = self.sigma_u[u];
                let k = cum.len();
                let (multiplicity, weights) = if d == 1 && branch != Branch::Fallback {
                    let (lo, hi) = self.index.window(u, xu[0], ALPHA_CORE * s);
                    let c = &self.index.cum(u)[lo..=hi];
                    let m: Vec<usize> = c.windows(2).map(|w| w[1] - w[0]).collect();
                    let w = points.iter().map(|&v| gauss(v - xu[0], s)).collect();
                    (m, w)
                } else {
                    let w = points.chunks_exact(d).map(|p| gauss(sq_dist(p, xu).sqrt(), s)).collect();
                    (vec![1; k], w)
                };
                Neighborhood {
                    dim: d,
                    points,
                    multiplicity,
                    weights,
                    branch,
                }
            }
        }
    }

    fn local_draw(&self, u: usize, xu: &[f64]) -> LocalDraw {
        let s = self.sigma_u[u];
        if s == 0.0 {
            return LocalDraw::Identity;
        }
        let idx = &*self.index;
        let floor = self.config.k_dec_floor;
        if idx.dim() == 1 {
            let c = xu[0];
            let dense = idx.count_within(u, xu, ALPHA_CORE * s) >= self.cutoff;
            let alpha = if dense { ALPHA_FULL } else { ALPHA_CORE };
            let (lo, hi) = idx.window(u, c, alpha * s);
            let cum = idx.cum(u);
            if cum[hi] - cum[lo] < floor {
                let v = idx.nearest_value(u, c);
                return LocalDraw::Table {
                    points: vec![v],
                    cum: vec![1.0],
                    keys: vec![idx.value_position(u, v)],
                    branch: Branch::Fallback,
                };
            }
            if dense {
                return LocalDraw::Snap { lo, hi, center: c, sigma: s };
            }
            let values = &idx.values(u)[lo..hi];
            let mut acc = 0.0;
            let cum_w = values
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    acc += (cum[lo + k + 1] - cum[lo + k]) as f64 * gauss(v - c, s);
                    acc
                })
                .collect();
            LocalDraw::Table {
                points: values.to_vec(),
                cum: cum_w,
                keys: (lo..hi).collect(),
                branch: Branch::Sparse,
            }
        } else {
            let k = self.typical.min(idx.len());
            if k < floor {
                let i = idx.nearest_piece(u, xu);
                return LocalDraw::Table {
                    points: idx.piece(u, i).to_vec(),
                    cum: vec![1.0],
                    keys: vec![i],
                    branch: Branch::Fallback,
                };
            }
            let mut order: Vec<(f64, usize)> = (0..idx.len()).map(|i| (sq_dist(idx.piece(u, i), xu), i)).collect();
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                order.truncate(k);
            }
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let d_min = order[0].0;
            let mut points = Vec::with_capacity(k * idx.dim());
            let mut acc = 0.0;
            let cum = order
                .iter()
                .map(|&(d2, i)| {
                    points.extend_from_slice(idx.piece(u, i));
                    acc += (-(d2 - d_min) / (2.0 * s * s)).exp();
                    acc
                })
                .collect();
            LocalDraw::Table {
                points,
                cum,
                keys: order.iter().map(|&(_, i)| i).collect(),
                branch: Branch::Nearest,
            }
        }
    }

    /// Key of the piece drawn with replacement uniform `w` (and its truncated
    /// normal quantile `q`, for the dense path).
    fn draw_key(&self, u: usize, draw: &LocalDraw, w: f64, q: f64) -> Option<usize> {
        match draw {
            LocalDraw::Identity => None,
            LocalDraw::Snap { lo, hi, center, sigma } => {
                let v = nearest_in(&self.index.values(u)[*lo..*hi], center + sigma * q);
                Some(self.index.value_position(u, v))
            }
            LocalDraw::Table { cum, keys, .. } => {
                let total = *cum.last().expect("non-empty table");
                let k = cum.partition_point(|&c| c <= w * total).min(cum.len() - 1);
                Some(keys[k])
            }
        }
    }

    /// Source trajectory for a drawn key; `v ∈ [0, 1)` picks among data
    /// trajectories sharing a 1-D value.
    fn pick_source(&self, u: usize, key: usize, v: f64) -> usize {
        if self.index.dim() == 1 {
            let ids = self.index.sources(u, key);
            ids[((v * ids.len() as f64) as usize).min(ids.len() - 1)] as usize
        } else {
            key
        }
    }

    /// Stratified pre-pass over the anchor draw: keys in ascending stratum order.
    fn prepass_keys(&self, u: usize, draw: &LocalDraw) -> Vec<usize> {
        match draw {
            LocalDraw::Identity => Vec::new(),
            LocalDraw::Snap { lo, hi, center, sigma } => {
                let values = &self.index.values(u)[*lo..*hi];
                let mut j = 0;
                self.strata_full
                    .iter()
                    .map(|&q| {
                        let t = center + sigma * q;
                        while j + 1 < values.len() && values[j + 1] - t < t - values[j] {
                            j += 1;
                        }
                        lo + j
                    })
                    .collect()
            }
            LocalDraw::Table { cum, keys, .. } => {
                let total = *cum.last().expect("non-empty table");
                let mut k = 0;
                self.strata_uniform
                    .iter()
                    .map(|&w| {
                        while k + 1 < cum.len() && cum[k] <= w * total {
                            k += 1;
                        }
                        keys[k]
                    })
                    .collect()
            }
        }
    }

    /// Per-coordinate variance of `Z_u − x_u` over the run `[a, b)` anchored
    /// at `a`, from the stratified pre-pass. Writes `(b − a) × d` values.
    fn prepass_variance(&self, a: usize, b: usize, draw: &LocalDraw, x: &[f64], var: &mut [f64]) {
        let d = self.index.dim();
        var.iter_mut().for_each(|v| *v = 0.0);
        let keys = self.prepass_keys(a, draw);
        if keys.is_empty() {
            return;
        }
        let p = keys.len() as f64;
        let mut sum = vec![0.0; var.len()];
        let mut sum_sq = vec![0.0; var.len()];
        for (k, &key) in keys.iter().enumerate() {
            // Low-discrepancy pick among trajectories sharing the drawn value.
            let v = ((k as f64 + 0.5) * GOLDEN).fract();
            let src = self.pick_source(a, key, v);
            for u in a..b {
                let z = self.index.source_state(src, u);
                for c in 0..d {
                    let dev = z[c] - x[u * d + c];
                    let o = (u - a) * d + c;
                    sum[o] += dev;
                    sum_sq[o] += dev * dev;
                }
            }
        }
        for o in 0..var.len() {
            let mean = sum[o] / p;
            var[o] = (sum_sq[o] / p - mean * mean).max(0.0);
        }
    }

    /// Draw `x + δ` for a normalized trajectory.
    pub fn perturb_trajectory<R: Rng + ?Sized>(&self, x: &Trajectory, rng: &mut R) -> Result<Trajectory> {
        self.perturb(x, rng, None)
    }

    /// As [`perturb_trajectory`](Self::perturb_trajectory), recording each decision.
    pub fn perturb_traced<R: Rng + ?Sized>(&self, x: &Trajectory, rng: &mut R) -> Result<(Trajectory, Trace)> {
        let mut trace = Trace::default();
        let y = self.perturb(x, rng, Some(&mut trace))?;
        Ok((y, trace))
    }

    fn perturb<R: Rng + ?Sized>(&self, x: &Trajectory, rng: &mut R, mut trace: Option<&mut Trace>) -> Result<Trajectory> {
        let (h, d) = (self.index.horizon(), self.index.dim());
        if x.horizon() != h || x.dim() != d {
            return Err(Error::Shape(format!(
                "trajectory is {}×{}, kernel expects {h}×{d}",
                x.horizon(),
                x.dim()
            )));
        }
        if self.sigma_u.iter().all(|&s| s == 0.0) {
            if let Some(t) = trace.as_deref_mut() {
                t.branches = vec![Some(Branch::Identity); h];
                t.sources = vec![None; h];
                t.empirical_variance = vec![0.0; h * d];
            }
            return Ok(x.clone());
        }
        let src = x.values();
        let mut out = src.to_vec();
        let l = self.config.run_length;
        let offset = if self.config.random_run_phase { rng.random_range(0..l) } else { 0 };
        let mut var = vec![0.0; l * d];
        let mut a = 0;
        while a < h {
            let b = (((a + offset) / l + 1) * l - offset).min(h);
            let w = rng.random::<f64>();
            let pick = rng.random::<f64>();
            if let Some(t) = trace.as_deref_mut() {
                t.decision_draws += 1;
            }
            // The run is anchored at its first location with a positive scale.
            let anchor = (a..b).find(|&u| self.sigma_u[u] > 0.0);
            let (branch, source) = match anchor {
                None => {
                    var.iter_mut().for_each(|v| *v = 0.0);
                    (Branch::Identity, None)
                }
                Some(u0) => {
                    let draw = self.local_draw(u0, &src[u0 * d..(u0 + 1) * d]);
                    let q = match draw {
                        LocalDraw::Snap { .. } => truncated_quantile(w, ALPHA_FULL),
                        _ => f64::NAN,
                    };
                    let key = self.draw_key(u0, &draw, w, q).expect("positive scale draws a piece");
                    let branch = match &draw {
                        LocalDraw::Identity => Branch::Identity,
                        LocalDraw::Snap { .. } => Branch::Dense,
                        LocalDraw::Table { branch, .. } => *branch,
                    };
                    self.prepass_variance(u0, b, &draw, src, &mut var[..(b - u0) * d]);
                    (branch, Some((u0, self.pick_source(u0, key, pick))))
                }
            };
            for u in a..b {
                let s = self.sigma_u[u];
                let slot = &mut out[u * d..(u + 1) * d];
                let mut used = None;
                let v_u: &[f64] = match source {
                    Some((u0, i)) if u >= u0 && s > 0.0 => {
                        slot.copy_from_slice(self.index.source_state(i, u));
                        used = Some(i);
                        &var[(u - u0) * d..(u - u0 + 1) * d]
                    }
                    _ => &[],
                };
                if s > 0.0 {
                    for c in 0..d {
                        let eps: f64 = rng.sample(StandardNormal);
                        let v = v_u.get(c).copied().unwrap_or(0.0);
                        slot[c] += (s * s - v).max(0.0).sqrt() * eps;
                    }
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.decisions.push(w);
                    t.branches.push(Some(if used.is_some() { branch } else { Branch::Identity }));
                    t.sources.push(used);
                    if v_u.is_empty() {
                        t.empirical_variance.extend(std::iter::repeat_n(0.0, d));
                    } else {
                        t.empirical_variance.extend_from_slice(v_u);
                    }
                }
            }
            a = b;
        }
        self.project(src, &mut out);
        let mut y = Trajectory::new(out, h, d);
        if let Some(r) = x.quantity_true() {
            y = y.with_quantity(r);
        }
        Ok(y)
    }

    /// `Π_A`: clip to the bounds, then restore endpoints if requested.
    fn project(&self, src: &[f64], out: &mut [f64]) {
        let d = self.index.dim();
        if let Some(bounds) = &self.bounds {
            for state in out.chunks_exact_mut(d) {
                for (v, [lo, hi]) in state.iter_mut().zip(bounds) {
                    *v = v.clamp(*lo, *hi);
                }
            }
        }
        if self.config.preserve_endpoints {
            let n = out.len();
            out[..d].copy_from_slice(&src[..d]);
            out[n - d..].copy_from_slice(&src[n - d..]);
        }
    }
}

#[inline]
fn gauss(dist: f64, sigma: f64) -> f64 {
    (-(dist * dist) / (2.0 * sigma * sigma)).exp()
}

/// Standardized quantile of the normal truncated to `[−α, α]`.
fn truncated_quantile(w: f64, alpha: f64) -> f64 {
    let n = Normal::standard();
    let (a, b) = (n.cdf(-alpha), n.cdf(alpha));
    n.inverse_cdf(a + w * (b - a)).clamp(-alpha, alpha)
}
