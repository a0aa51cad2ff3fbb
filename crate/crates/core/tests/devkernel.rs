use std::sync::Arc;

use physdrift::devkernel::*;
use physdrift::rng;
use physdrift::systems::Trajectory;
use proptest::prelude::*;
use rayon::prelude::*;

fn index(trajectories: &[Trajectory]) -> Arc<PieceIndex> {
    Arc::new(PieceIndex::from_normalized(trajectories).unwrap())
}

fn constant_pieces(values: &[f64], h: usize) -> Vec<Trajectory> {
    values.iter().map(|&v| Trajectory::new(vec![v; h], h, 1)).collect()
}

#[test]
fn sparse_draws_follow_gaussian_weights() {
    let pieces = [-0.03, -0.01, 0.0, 0.02, 0.045];
    let (x0, sigma) = (0.004, 0.05);
    let cfg = KernelConfig {
        dense_cutoff: Some(usize::MAX),
        ..KernelConfig::with_sigma(sigma)
    };
    let k = DeviationKernel::new(index(&constant_pieces(&pieces, 1)), cfg).unwrap();
    let nb = k.local_neighborhood(&[x0], 0);
    assert_eq!(nb.branch, Branch::Sparse);
    assert_eq!(nb.points, pieces.to_vec());

    // Exact weights, computed independently of the kernel.
    let w: Vec<f64> = pieces
        .iter()
        .map(|z| (-(z - x0) * (z - x0) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / total).collect();
    for (a, b) in nb.probabilities().iter().zip(&p) {
        assert!((a - b).abs() < 1e-12);
    }

    let n = 100_000;
    let mut counts = [0usize; 5];
    let x = Trajectory::new(vec![x0], 1, 1);
    for s in 0..n {
        let (_, trace) = k.perturb_traced(&x, &mut rng::stream(11, "chi2", s)).unwrap();
        counts[trace.sources[0].unwrap()] += 1;
    }
    let mut chi2 = 0.0;
    for (c, pk) in counts.iter().zip(&p) {
        let expected = n as f64 * pk;
        let sd = (n as f64 * pk * (1.0 - pk)).sqrt();
        assert!((*c as f64 - expected).abs() <= 3.0 * sd, "count {c} vs {expected} ± {sd}");
        chi2 += (*c as f64 - expected).powi(2) / expected;
    }
    // 0.999 quantile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 18.467, "chi2 = {chi2}");
}

/// Variance of `y_u − x_u` over draws, per location.
fn deviation_variance(k: &DeviationKernel, x: &Trajectory, draws: u64, tag: &str) -> Vec<f64> {
    let h = x.horizon();
    let mut sum = vec![0.0; h];
    let mut sq = vec![0.0; h];
    for s in 0..draws {
        let y = k.perturb_trajectory(x, &mut rng::stream(5, tag, s)).unwrap();
        for u in 0..h {
            let d = y.values()[u] - x.values()[u];
            sum[u] += d;
            sq[u] += d * d;
        }
    }
    let n = draws as f64;
    (0..h).map(|u| sq[u] / n - (sum[u] / n).powi(2)).collect()
}

#[test]
fn smooth_unbounded_pieces_give_sigma_squared() {
    // Parallel lines: every fragment deviation is constant along its run.
    let h = 7;
    let pieces: Vec<Trajectory> = (0..4001)
        .map(|i| {
            let c = -1.0 + i as f64 / 2000.0;
            Trajectory::new((0..h).map(|t| c + 0.01 * t as f64).collect(), h, 1)
        })
        .collect();
    let sigma = 0.02;
    let k = DeviationKernel::new(index(&pieces), KernelConfig::with_sigma(sigma)).unwrap();
    let x = Trajectory::new((0..h).map(|t| 0.1 + 0.01 * t as f64).collect(), h, 1);
    let draws = 20_000;
    let var = deviation_variance(&k, &x, draws, "smooth");
    // Standard error of a variance estimate is about σ²·√(2/n).
    let tol = 4.0 * sigma * sigma * (2.0 / draws as f64).sqrt();
    for v in var {
        assert!((v - sigma * sigma).abs() < tol, "variance {v} vs {}", sigma * sigma);
    }
}

#[test]
fn rough_pieces_are_bracketed() {
    let h = 6;
    let mut r = rng::stream(3, "rough", 0);
    let pieces: Vec<Trajectory> = (0..300)
        .map(|_| {
            use rand::Rng;
            Trajectory::new((0..h).map(|_| r.random_range(-1.0..1.0)).collect(), h, 1)
        })
        .collect();
    let sigma = 0.05;
    let k = DeviationKernel::new(index(&pieces), KernelConfig::with_sigma(sigma)).unwrap();
    let x = Trajectory::new(vec![0.1, -0.3, 0.5, 0.0, 0.2, -0.6], h, 1);
    let draws = 20_000;
    let var = deviation_variance(&k, &x, draws, "rough");
    let mut v_mean = vec![0.0; h];
    for s in 0..2000 {
        let (_, trace) = k.perturb_traced(&x, &mut rng::stream(6, "rough-v", s)).unwrap();
        for u in 0..h {
            v_mean[u] += trace.empirical_variance[u] / 2000.0;
        }
    }
    for u in 0..h {
        let slack = 4.0 * (2.0 / draws as f64).sqrt();
        assert!(var[u] >= sigma * sigma * (1.0 - slack), "u={u}: {} below σ²", var[u]);
        assert!(
            var[u] <= (sigma * sigma + v_mean[u]) * (1.0 + slack),
            "u={u}: {} above σ² + v = {}",
            var[u],
            sigma * sigma + v_mean[u]
        );
    }
}

#[test]
fn perturbations_do_not_depend_on_thread_count() {
    let h = 12;
    let pieces: Vec<Trajectory> = (0..500)
        .map(|i| Trajectory::new((0..h).map(|t| ((i * 7 + t * 3) as f64 * 0.013).sin()).collect(), h, 1))
        .collect();
    let k = DeviationKernel::new(index(&pieces), KernelConfig::with_sigma(0.03)).unwrap();
    let xs: Vec<Trajectory> = pieces.iter().step_by(5).cloned().collect();
    let run = |threads: usize| -> Vec<Vec<u64>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            xs.par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let y = k.perturb_trajectory(x, &mut rng::stream(42, "threads", i as u64)).unwrap();
                    y.values().iter().map(|v| v.to_bits()).collect()
                })
                .collect()
        })
    };
    assert_eq!(run(1), run(4));
}

fn piece_set() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (2usize..10).prop_flat_map(|h| (Just(h), prop::collection::vec(prop::collection::vec(-1.0f64..1.0, h), 1..40)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sigma_zero_returns_input((h, rows) in piece_set(), seed in any::<u64>(), run_length in 1usize..5) {
        let pieces: Vec<Trajectory> = rows.iter().map(|v| Trajectory::new(v.clone(), h, 1)).collect();
        let cfg = KernelConfig { run_length, ..KernelConfig::default() };
        let k = DeviationKernel::new(index(&pieces), cfg).unwrap();
        let x = &pieces[seed as usize % pieces.len()];
        let shifted = Trajectory::new(x.values().iter().map(|v| v * 0.5 + 0.1).collect(), h, 1);
        for x in [x, &shifted] {
            let y = k.perturb_trajectory(x, &mut rng::stream(seed, "id", 0)).unwrap();
            prop_assert_eq!(y.values(), x.values());
        }
    }

    #[test]
    fn outputs_respect_bounds_and_endpoints(
        (h, rows) in piece_set(),
        sigma in 0.001f64..3.0,
        seed in any::<u64>(),
    ) {
        let pieces: Vec<Trajectory> = rows.iter().map(|v| Trajectory::new(v.clone(), h, 1)).collect();
        let cfg = KernelConfig {
            coordinate_bounds: Some(vec![[-1.0, 1.0]]),
            preserve_endpoints: true,
            ..KernelConfig::with_sigma(sigma)
        };
        let k = DeviationKernel::new(index(&pieces), cfg).unwrap();
        let x = &pieces[seed as usize % pieces.len()];
        let y = k.perturb_trajectory(x, &mut rng::stream(seed, "bounds", 0)).unwrap();
        prop_assert!(y.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(y.values()[0].to_bits(), x.values()[0].to_bits());
        prop_assert_eq!(y.values()[h - 1].to_bits(), x.values()[h - 1].to_bits());
    }

    #[test]
    fn one_decision_per_run(
        (h, rows) in piece_set(),
        run_length in 1usize..6,
        seed in any::<u64>(),
    ) {
        let pieces: Vec<Trajectory> = rows.iter().map(|v| Trajectory::new(v.clone(), h, 1)).collect();
        let cfg = KernelConfig { run_length, ..KernelConfig::with_sigma(0.1) };
        let k = DeviationKernel::new(index(&pieces), cfg).unwrap();
        let (_, trace) = k.perturb_traced(&pieces[0], &mut rng::stream(seed, "runs", 0)).unwrap();
        prop_assert_eq!(trace.decision_draws, h.div_ceil(run_length));
        prop_assert_eq!(trace.decisions.len(), h);
        for (run, srcs) in trace.decisions.chunks(run_length).zip(trace.sources.chunks(run_length)) {
            prop_assert!(run.iter().all(|&w| w == run[0]));
            prop_assert!(srcs.iter().all(|&s| s == srcs[0] && s.is_some()));
        }
    }

    #[test]
    fn same_stream_same_perturbation((h, rows) in piece_set(), seed in any::<u64>()) {
        let pieces: Vec<Trajectory> = rows.iter().map(|v| Trajectory::new(v.clone(), h, 1)).collect();
        let k = DeviationKernel::new(index(&pieces), KernelConfig::with_sigma(0.05)).unwrap();
        let a = k.perturb_trajectory(&pieces[0], &mut rng::stream(seed, "det", 0)).unwrap();
        let b = k.perturb_trajectory(&pieces[0], &mut rng::stream(seed, "det", 0)).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}
