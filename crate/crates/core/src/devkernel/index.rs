use crate::error::{Error, Result};
use crate::recovery::median;
use crate::systems::{Dataset, Trajectory};

/// Data pieces grouped by sequence location, in normalized coordinates.
///
/// One-dimensional locations keep their multiset as sorted distinct values
/// with prefix counts, so radius queries are two binary searches.
/// Higher-dimensional locations keep the raw `N × d` block.
#[derive(Debug, Clone)]
pub struct PieceIndex {
    horizon: usize,
    dim: usize,
    n: usize,
    locations: Vec<Location>,
    /// Source trajectories, `N × H × d`, so a drawn piece can be continued.
    raw: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Location {
    /// Distinct sorted values (1-D) or all pieces flattened (d > 1).
    values: Vec<f64>,
    /// `cum[k]` pieces have value strictly below `values[k]` (1-D only).
    cum: Vec<usize>,
    /// Source trajectory of each piece in sorted order (1-D only).
    ids: Vec<u32>,
}

/// Per-location one-scale neighbor counts for every data piece.
#[derive(Debug, Clone)]
pub struct CountsCache {
    sigma: Vec<f64>,
    /// `H × N`, location-major.
    counts: Vec<u32>,
    median: f64,
    mean: f64,
}

impl CountsCache {
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Counts at location `u`, one per data piece.
    pub fn location(&self, u: usize) -> &[u32] {
        let n = self.counts.len() / self.sigma.len();
        &self.counts[u * n..(u + 1) * n]
    }

    /// Median one-scale count over all pieces of this system.
    pub fn median(&self) -> f64 {
        self.median
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Typical neighborhood size used by the nearest-piece draw in d > 1.
    pub fn typical_count(&self) -> usize {
        (self.mean.ceil() as usize).max(1)
    }
}

/// Index the normalized trajectories of a dataset.
pub fn build_piece_index(dataset: &Dataset) -> Result<PieceIndex> {
    PieceIndex::from_normalized(&dataset.normalized())
}

impl PieceIndex {
    pub fn from_normalized(trajectories: &[Trajectory]) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Empty("piece index needs at least one trajectory".into()))?;
        let (horizon, dim, n) = (first.horizon(), first.dim(), trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            if t.horizon() != horizon || t.dim() != dim {
                return Err(Error::Shape(format!("trajectory {i} does not match {horizon}×{dim}")));
            }
            if !t.is_finite() {
                return Err(Error::Domain(format!("trajectory {i} has non-finite pieces")));
            }
        }
        let locations = (0..horizon)
            .map(|u| {
                if dim == 1 {
                    let mut all: Vec<(f64, u32)> =
                        trajectories.iter().enumerate().map(|(i, t)| (t.state(u)[0], i as u32)).collect();
                    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let mut values = Vec::new();
                    let mut cum = Vec::new();
                    for (i, &(v, _)) in all.iter().enumerate() {
                        if values.last() != Some(&v) {
                            values.push(v);
                            cum.push(i);
                        }
                    }
                    cum.push(n);
                    let ids = all.into_iter().map(|(_, i)| i).collect();
                    Location { values, cum, ids }
                } else {
                    let values = trajectories.iter().flat_map(|t| t.state(u).iter().copied()).collect();
                    Location {
                        values,
                        cum: Vec::new(),
                        ids: Vec::new(),
                    }
                }
            })
            .collect();
        Ok(Self {
            horizon,
            dim,
            n,
            locations,
            raw: trajectories.iter().flat_map(|t| t.values().iter().copied()).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of pieces at every location.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Distinct sorted values and their multiplicities at a 1-D location.
    pub fn distinct(&self, u: usize) -> (&[f64], Vec<usize>) {
        let loc = &self.locations[u];
        assert_eq!(self.dim, 1, "distinct values exist only for 1-D pieces");
        (&loc.values, loc.cum.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// All pieces at location `u`, flattened; ascending for 1-D.
    pub fn pieces(&self, u: usize) -> Vec<f64> {
        let loc = &self.locations[u];
        if self.dim == 1 {
            loc.values
                .iter()
                .zip(loc.cum.windows(2))
                .flat_map(|(&v, w)| std::iter::repeat_n(v, w[1] - w[0]))
                .collect()
        } else {
            loc.values.clone()
        }
    }

    /// Number of pieces within `radius` of `center` at location `u`.
    pub fn count_within(&self, u: usize, center: &[f64], radius: f64) -> usize {
        if self.dim == 1 {
            let (lo, hi) = self.window(u, center[0], radius);
            let cum = &self.locations[u].cum;
            cum[hi] - cum[lo]
        } else {
            let r2 = radius * radius;
            self.locations[u]
                .values
                .chunks_exact(self.dim)
                .filter(|p| sq_dist(p, center) <= r2)
                .count()
        }
    }

    /// Pieces within `radius` of `center` at location `u`, flattened.
    pub fn within(&self, u: usize, center: &[f64], radius: f64) -> Vec<f64> {
        if self.dim == 1 {
            let (lo, hi) = self.window(u, center[0], radius);
            let loc = &self.locations[u];
            (lo..hi)
                .flat_map(|k| std::iter::repeat_n(loc.values[k], loc.cum[k + 1] - loc.cum[k]))
                .collect()
        } else {
            let r2 = radius * radius;
            self.locations[u]
                .values
                .chunks_exact(self.dim)
                .filter(|p| sq_dist(p, center) <= r2)
                .flatten()
                .copied()
                .collect()
        }
    }

    /// Index range of distinct 1-D values in `[c − radius, c + radius]`.
    pub(crate) fn window(&self, u: usize, c: f64, radius: f64) -> (usize, usize) {
        let values = &self.locations[u].values;
        if radius.is_infinite() {
            return (0, values.len());
        }
        let lo = values.partition_point(|&v| v < c - radius);
        let hi = values.partition_point(|&v| v <= c + radius);
        (lo, hi.max(lo))
    }

    pub(crate) fn values(&self, u: usize) -> &[f64] {
        &self.locations[u].values
    }

    pub(crate) fn cum(&self, u: usize) -> &[usize] {
        &self.locations[u].cum
    }

    /// Distinct 1-D value nearest to `c`; ties go to the lower value.
    pub(crate) fn nearest_value(&self, u: usize, c: f64) -> f64 {
        let values = &self.locations[u].values;
        nearest_in(values, c)
    }

    /// Index of the piece nearest to `center` (d > 1); ties go to the lower index.
    pub(crate) fn nearest_piece(&self, u: usize, center: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.locations[u].values.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(p, center);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Source trajectories of the pieces sharing distinct value `k` (1-D).
    pub(crate) fn sources(&self, u: usize, k: usize) -> &[u32] {
        let loc = &self.locations[u];
        &loc.ids[loc.cum[k]..loc.cum[k + 1]]
    }

    /// Position of `v` among the distinct values at `u` (1-D, `v` present).
    pub(crate) fn value_position(&self, u: usize, v: f64) -> usize {
        self.locations[u].values.partition_point(|&w| w < v)
    }

    /// State of source trajectory `i` at location `u`.
    pub(crate) fn source_state(&self, i: usize, u: usize) -> &[f64] {
        let o = (i * self.horizon + u) * self.dim;
        &self.raw[o..o + self.dim]
    }

    pub(crate) fn piece(&self, u: usize, i: usize) -> &[f64] {
        &self.locations[u].values[i * self.dim..(i + 1) * self.dim]
    }

    /// One-scale (radius `σ_u`) neighbor counts around every data piece.
    pub fn calibrate(&self, sigma: &[f64]) -> Result<CountsCache> {
        if sigma.len() != self.horizon {
            return Err(Error::Shape(format!(
                "{} location scales for horizon {}",
                sigma.len(),
                self.horizon
            )));
        }
        let mut counts = Vec::with_capacity(self.horizon * self.n);
        for (u, &s) in sigma.iter().enumerate() {
            let loc = &self.locations[u];
            if self.dim == 1 {
                let (values, cum) = (&loc.values, &loc.cum);
                let (mut lo, mut hi) = (0usize, 0usize);
                for (k, &v) in values.iter().enumerate() {
                    while values[lo] < v - s {
                        lo += 1;
                    }
                    hi = hi.max(k);
                    while hi < values.len() && values[hi] <= v + s {
                        hi += 1;
                    }
                    let c = (cum[hi] - cum[lo]) as u32;
                    counts.extend(std::iter::repeat_n(c, cum[k + 1] - cum[k]));
                }
            } else {
                let s2 = s * s;
                let pieces: Vec<&[f64]> = loc.values.chunks_exact(self.dim).collect();
                for p in &pieces {
                    let c = pieces.iter().filter(|q| sq_dist(p, q) <= s2).count();
                    counts.push(c as u32);
                }
            }
        }
        let as_f64: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
        let mean = as_f64.iter().sum::<f64>() / as_f64.len() as f64;
        let median = median(as_f64);
        Ok(CountsCache {
            sigma: sigma.to_vec(),
            counts,
            median,
            mean,
        })
    }
}

/// Largest power of two not exceeding the system's median one-scale count.
pub fn dense_cutoff(cache: &CountsCache) -> usize {
    floor_pow2(cache.median())
}

/// Shared cutoff from several systems' median counts: the largest power of
/// two not exceeding the median of the medians.
pub fn dense_cutoff_across(medians: &[f64]) -> Result<usize> {
    if medians.is_empty() {
        return Err(Error::Empty("no per-system medians".into()));
    }
    Ok(floor_pow2(median(medians.to_vec())))
}

fn floor_pow2(x: f64) -> usize {
    if x < 2.0 {
        return 1;
    }
    let mut p = 1usize;
    while ((p * 2) as f64) <= x {
        p *= 2;
    }
    p
}

pub(crate) fn nearest_in(values: &[f64], c: f64) -> f64 {
    let k = values.partition_point(|&v| v < c);
    match (k.checked_sub(1).map(|i| values[i]), values.get(k).copied()) {
        (Some(a), Some(b)) => {
            if c - a <= b - c {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => c,
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
