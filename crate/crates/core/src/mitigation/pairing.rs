use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::code::DecoderMatrix;
use crate::error::{Error, Result};
use crate::recovery::BinnedMarginal;

/// Assignment of trajectories to code cells: cell `ℓ` holds trajectory `a[ℓ]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairing {
    pub assignment: Vec<usize>,
    /// `(1/N) Σ_j ‖p_j − π‖²`.
    pub objective: f64,
    /// Objective after initialization and after every accepted swap.
    pub trace: Vec<f64>,
}

/// Swap-search settings; `None` scales with `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapOptions {
    /// Proposal budget per run (default `200·N`).
    pub max_iters: Option<usize>,
    /// Stop a run after this many consecutive rejections (default `20·N`).
    pub patience: Option<usize>,
    /// Independent runs; runs after the first start from fresh random pairings.
    pub restarts: usize,
}

impl Default for SwapOptions {
    fn default() -> Self {
        Self {
            max_iters: None,
            patience: None,
            restarts: 1,
        }
    }
}

/// Decoder matrix, per-trajectory posteriors, target prior and the quantity
/// bin of every trajectory.
#[derive(Debug, Clone)]
pub struct PairingProblem<'a> {
    m: &'a DecoderMatrix,
    /// `N × B`.
    nu: Vec<f64>,
    prior: Vec<f64>,
    bin_of: Vec<usize>,
    bins: usize,
    /// Column view of `M`: `(j, M_{jℓ})` for each `ℓ`.
    columns: Vec<Vec<(usize, f64)>>,
    edges: Vec<f64>,
}

impl<'a> PairingProblem<'a> {
    pub fn new(
        m: &'a DecoderMatrix,
        posteriors: &[BinnedMarginal],
        prior: &BinnedMarginal,
        bin_of: Vec<usize>,
    ) -> Result<Self> {
        let n = m.len();
        if n == 0 {
            return Err(Error::Empty("empty code support".into()));
        }
        if posteriors.len() != n || bin_of.len() != n {
            return Err(Error::Shape(format!(
                "{n} code cells, {} posteriors, {} bin labels",
                posteriors.len(),
                bin_of.len()
            )));
        }
        let bins = prior.bins();
        let mut nu = Vec::with_capacity(n * bins);
        for p in posteriors {
            prior.ensure_same_bins(p)?;
            nu.extend_from_slice(p.mass());
        }
        let mut columns = vec![Vec::new(); n];
        for j in 0..n {
            for &(l, w) in m.row(j) {
                columns[l].push((j, w));
            }
        }
        Ok(Self {
            m,
            nu,
            prior: prior.mass().to_vec(),
            bin_of,
            bins,
            columns,
            edges: prior.edges().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.bin_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_of.is_empty()
    }

    pub fn bin_of(&self) -> &[usize] {
        &self.bin_of
    }

    fn nu(&self, i: usize) -> &[f64] {
        &self.nu[i * self.bins..(i + 1) * self.bins]
    }

    /// `p_j` for every source code, `N × B`.
    fn mixtures(&self, assignment: &[usize]) -> Vec<f64> {
        let b = self.bins;
        let mut p = vec![0.0; self.len() * b];
        for (j, pj) in p.chunks_exact_mut(b).enumerate() {
            for &(l, w) in self.m.row(j) {
                pj.iter_mut().zip(self.nu(assignment[l])).for_each(|(x, v)| *x += w * v);
            }
        }
        p
    }

    fn row_objective(&self, pj: &[f64]) -> f64 {
        pj.iter().zip(&self.prior).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Full recomputation of the pairing objective.
    pub fn objective(&self, assignment: &[usize]) -> Result<f64> {
        self.check_assignment(assignment)?;
        let p = self.mixtures(assignment);
        Ok(p.chunks_exact(self.bins).map(|pj| self.row_objective(pj)).sum::<f64>() / self.len() as f64)
    }

    fn check_assignment(&self, assignment: &[usize]) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        if assignment.len() != n {
            return Err(Error::Shape(format!("assignment has {} cells for {n}", assignment.len())));
        }
        for &i in assignment {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Domain("assignment is not a permutation".into()));
            }
        }
        Ok(())
    }

    /// Objective change from swapping the trajectories of cells `l1` and `l2`,
    /// touching only rows with support on either cell.
    fn swap_delta(&self, p: &[f64], assignment: &[usize], l1: usize, l2: usize, scratch: &mut Vec<(usize, f64)>) -> f64 {
        let b = self.bins;
        let (t1, t2) = (assignment[l1], assignment[l2]);
        merge_columns(&self.columns[l1], &self.columns[l2], scratch);
        let (nu1, nu2) = (self.nu(t1), self.nu(t2));
        let mut dnorm = 0.0;
        for k in 0..b {
            let d = nu2[k] - nu1[k];
            dnorm += d * d;
        }
        let mut delta = 0.0;
        for &(j, c) in scratch.iter() {
            let pj = &p[j * b..(j + 1) * b];
            let mut dot = 0.0;
            for k in 0..b {
                dot += (pj[k] - self.prior[k]) * (nu2[k] - nu1[k]);
            }
            delta += 2.0 * c * dot + c * c * dnorm;
        }
        delta / self.len() as f64
    }

    fn apply_swap(&self, p: &mut [f64], assignment: &mut [usize], l1: usize, l2: usize, scratch: &mut Vec<(usize, f64)>) {
        let b = self.bins;
        let (t1, t2) = (assignment[l1], assignment[l2]);
        merge_columns(&self.columns[l1], &self.columns[l2], scratch);
        for &(j, c) in scratch.iter() {
            for k in 0..b {
                p[j * b + k] += c * (self.nu[t2 * b + k] - self.nu[t1 * b + k]);
            }
        }
        assignment.swap(l1, l2);
    }

    /// Whether any cross-bin swap could change the objective.
    fn has_effective_swaps(&self) -> bool {
        let first = self.bin_of[0];
        let Some(other) = self.bin_of.iter().position(|&b| b != first) else {
            return false;
        };
        let distinct = (1..self.len()).any(|i| self.nu(i) != self.nu(0));
        other > 0 && distinct
    }

    /// `p_j` as marginals.
    pub fn local_mixtures(&self, assignment: &[usize]) -> Result<Vec<BinnedMarginal>> {
        self.check_assignment(assignment)?;
        self.mixtures(assignment)
            .chunks_exact(self.bins)
            .map(|pj| BinnedMarginal::from_weights(self.edges.clone(), pj.to_vec()))
            .collect()
    }

    /// Mean `TV(p_j, π)`, reported as a diagnostic.
    pub fn mean_tv(&self, assignment: &[usize]) -> Result<f64> {
        self.check_assignment(assignment)?;
        let p = self.mixtures(assignment);
        let total: f64 = p
            .chunks_exact(self.bins)
            .map(|pj| 0.5 * pj.iter().zip(&self.prior).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .sum();
        Ok(total / self.len() as f64)
    }
}

/// `(j, M_{j l1} − M_{j l2})` over the union of two sparse columns.
fn merge_columns(c1: &[(usize, f64)], c2: &[(usize, f64)], out: &mut Vec<(usize, f64)>) {
    out.clear();
    let (mut a, mut b) = (0, 0);
    while a < c1.len() || b < c2.len() {
        let ja = c1.get(a).map_or(usize::MAX, |e| e.0);
        let jb = c2.get(b).map_or(usize::MAX, |e| e.0);
        if ja == jb {
            out.push((ja, c1[a].1 - c2[b].1));
            a += 1;
            b += 1;
        } else if ja < jb {
            out.push((ja, c1[a].1));
            a += 1;
        } else {
            out.push((jb, -c2[b].1));
            b += 1;
        }
    }
}

/// Decoder weights as `p_j = Σ_ℓ M_{jℓ} ν_{a(ℓ)}` for a given pairing.
pub fn local_mixtures(
    m: &DecoderMatrix,
    assignment: &[usize],
    posteriors: &[BinnedMarginal],
) -> Result<Vec<BinnedMarginal>> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::Empty("no posteriors".into()))?;
    let problem = PairingProblem::new(m, posteriors, first, vec![0; posteriors.len()])?;
    problem.local_mixtures(assignment)
}

/// A uniformly random bijection of trajectories to cells. Every trajectory is
/// used exactly once, so per-bin counts equal the data's.
pub fn init_pairing<R: Rng + ?Sized>(problem: &PairingProblem, rng: &mut R) -> Result<Pairing> {
    let mut assignment: Vec<usize> = (0..problem.len()).collect();
    assignment.shuffle(rng);
    let objective = problem.objective(&assignment)?;
    Ok(Pairing {
        assignment,
        objective,
        trace: vec![objective],
    })
}

/// Random cross-bin swaps accepted only on strict decrease. Returns the best
/// run; its trace is non-increasing.
pub fn swap_optimize<R: Rng + ?Sized>(
    problem: &PairingProblem,
    start: Pairing,
    options: &SwapOptions,
    rng: &mut R,
) -> Result<Pairing> {
    problem.check_assignment(&start.assignment)?;
    let n = problem.len();
    let max_iters = options.max_iters.unwrap_or(200 * n);
    let patience = options.patience.unwrap_or(20 * n).max(1);
    let mut best: Option<Pairing> = None;
    for run in 0..options.restarts.max(1) {
        let init = if run == 0 {
            Pairing {
                objective: problem.objective(&start.assignment)?,
                trace: Vec::new(),
                assignment: start.assignment.clone(),
            }
        } else {
            init_pairing(problem, rng)?
        };
        let result = swap_run(problem, init, max_iters, patience, rng);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one run"))
}

fn swap_run<R: Rng + ?Sized>(
    problem: &PairingProblem,
    init: Pairing,
    max_iters: usize,
    patience: usize,
    rng: &mut R,
) -> Pairing {
    let n = problem.len();
    let mut assignment = init.assignment;
    let mut objective = init.objective;
    let mut trace = vec![objective];
    if !problem.has_effective_swaps() {
        return Pairing {
            assignment,
            objective,
            trace,
        };
    }
    let mut p = problem.mixtures(&assignment);
    let mut scratch = Vec::new();
    let mut rejections = 0;
    for _ in 0..max_iters {
        let (l1, l2) = loop {
            let l1 = rng.random_range(0..n);
            let l2 = rng.random_range(0..n);
            if problem.bin_of[assignment[l1]] != problem.bin_of[assignment[l2]] {
                break (l1, l2);
            }
        };
        let delta = problem.swap_delta(&p, &assignment, l1, l2, &mut scratch);
        if delta < 0.0 {
            problem.apply_swap(&mut p, &mut assignment, l1, l2, &mut scratch);
            objective += delta;
            trace.push(objective);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= patience {
                break;
            }
        }
    }
    // Report the exact objective of the final assignment.
    let exact = p.chunks_exact(problem.bins).map(|pj| problem.row_objective(pj)).sum::<f64>() / n as f64;
    objective = objective.min(exact);
    if let Some(last) = trace.last_mut() {
        *last = last.min(objective);
    }
    Pairing {
        assignment,
        objective,
        trace,
    }
}
