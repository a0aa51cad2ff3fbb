use physdrift::prediction::*;
use physdrift::recovery::RecoveryRule;
use physdrift::rng;
use physdrift::systems::{sample_conditional, FamilyConfig, FamilyKind, QuantityPrior, Trajectory};
use proptest::prelude::*;
use rand::Rng;

fn tent_context(bins: usize) -> PredictionContext {
    let prior = QuantityPrior::uniform(0.0, 2.0, bins).unwrap();
    let setup = PredictionSetup {
        dataset_size: 1500,
        samples_per_row: 100,
        grid_resolution: 256,
        seed: 4,
        ..PredictionSetup::new(FamilyConfig::new(FamilyKind::Tent), prior)
    };
    PredictionContext::build(setup).unwrap()
}

/// Two-pass row oracle: perturb every sample first, then recover them one
/// at a time. Returns the normalized row and the per-sample recovered means.
fn two_pass_row(ctx: &PredictionContext, sigma: f64, row: usize, n: usize, seed: u64, same_streams: bool) -> (Vec<f64>, Vec<f64>) {
    let kernel = ctx.kernel(sigma).unwrap();
    let rec = ctx.recoverer();
    let edges = rec.edges().to_vec();
    let family = &ctx.setup().family;
    let norm = rec.normalization();
    let (lo, hi) = (edges[row], edges[row + 1]);
    let perturbed: Vec<Trajectory> = (0..n)
        .map(|s| {
            let mut r = if same_streams {
                rng::stream2(seed, "transport", row as u64, s as u64)
            } else {
                rng::stream2(seed, "two-pass-oracle", row as u64, s as u64)
            };
            let q = (lo + r.random::<f64>() * (hi - lo)).min(hi);
            let x = norm.normalize(&sample_conditional(family, q, &mut r).unwrap());
            kernel.perturb_trajectory(&x, &mut r).unwrap()
        })
        .collect();
    let b = edges.len() - 1;
    let centers: Vec<f64> = (0..b).map(|k| 0.5 * (edges[k] + edges[k + 1])).collect();
    let mut acc = vec![0.0; b];
    let mut means = Vec::with_capacity(n);
    for y in &perturbed {
        let mut one = vec![0.0; b];
        rec.accumulate(y, &mut one).unwrap();
        means.push(one.iter().zip(&centers).map(|(w, c)| w * c).sum::<f64>());
        rec.accumulate(y, &mut acc).unwrap();
    }
    let total: f64 = acc.iter().sum();
    (acc.into_iter().map(|v| v / total).collect(), means)
}

fn row_mean(row: &[f64], edges: &[f64]) -> f64 {
    row.iter().enumerate().map(|(k, w)| w * 0.5 * (edges[k] + edges[k + 1])).sum()
}

#[test]
fn rows_are_probability_vectors() {
    let ctx = tent_context(16);
    for sigma in [0.0, 0.0125, 0.05] {
        let t = ctx.transport(sigma).unwrap();
        for b in 0..t.bins() {
            let row = t.row(b);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn streaming_matches_two_pass_on_shared_streams() {
    let ctx = tent_context(16);
    let seed = 77;
    let sigma = 0.0125;
    let kernel = ctx.kernel(sigma).unwrap();
    let t = estimate_transport_kernel(&ctx.setup().family, ctx.recoverer(), &kernel, 100, seed).unwrap();
    for row in [0, 7, 12, 15] {
        let (oracle, _) = two_pass_row(&ctx, sigma, row, 100, seed, true);
        for (a, b) in t.row(row).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "row {row}: {a} vs {b}");
        }
    }
}

#[test]
fn streaming_matches_independent_two_pass_within_two_standard_errors() {
    let ctx = tent_context(16);
    let sigma = 0.0125;
    let n = 400;
    let kernel = ctx.kernel(sigma).unwrap();
    let t = estimate_transport_kernel(&ctx.setup().family, ctx.recoverer(), &kernel, n, 5).unwrap();
    let edges = t.edges().to_vec();
    for row in [2, 9, 14] {
        let (oracle, means) = two_pass_row(&ctx, sigma, row, n, 6, false);
        let m = means.iter().sum::<f64>() / n as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Both estimates carry the same per-sample variance.
        let se = (2.0 * var / n as f64).sqrt();
        let diff = row_mean(t.row(row), &edges) - row_mean(&oracle, &edges);
        assert!(diff.abs() <= 2.0 * se, "row {row}: difference {diff}, se {se}");
    }
}

#[test]
fn monte_carlo_error_scales_as_inverse_square_root() {
    let ctx = tent_context(16);
    let sigma = 0.0125;
    let kernel = ctx.kernel(sigma).unwrap();
    let family = &ctx.setup().family;
    let reference = estimate_transport_kernel(family, ctx.recoverer(), &kernel, 3200, 1000).unwrap();
    let ns = [25usize, 100, 400];
    let mut points = Vec::new();
    for &n in &ns {
        let mut sq = 0.0;
        let reps = 4;
        for s in 0..reps {
            let t = estimate_transport_kernel(family, ctx.recoverer(), &kernel, n, s).unwrap();
            sq += t
                .matrix()
                .iter()
                .zip(reference.matrix())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        points.push(((n as f64).ln(), (sq / reps as f64).sqrt().ln()));
    }
    let slope = least_squares_slope(&points);
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn zero_sigma_prediction_is_the_data_pullback() {
    let mut ctx = tent_context(16);
    let seed = 31;
    let kernel = ctx.kernel(0.0).unwrap();
    let t = estimate_transport_kernel(&ctx.setup().family, ctx.recoverer(), &kernel, 50, seed).unwrap();
    for row in [0, 5, 15] {
        let (oracle, _) = two_pass_row(&ctx, 0.0, row, 50, seed, true);
        assert_eq!(t.row(row), &oracle[..]);
    }
    let report = ctx.report(0.0).unwrap();
    assert_eq!(report.tv_pred_data, 0.0);
    assert!(report.signed_drift.iter().all(|&v| v == 0.0));
}

#[test]
fn sweep_reports_are_consistent() {
    let prior = QuantityPrior::uniform(0.0, 2.0, 8).unwrap();
    let setup = PredictionSetup {
        dataset_size: 500,
        samples_per_row: 30,
        grid_resolution: 128,
        rule: RecoveryRule::Mode,
        ..PredictionSetup::new(FamilyConfig::new(FamilyKind::Tent), prior)
    };
    let sigmas = [0.0, 0.01, 0.04];
    let reports = sigma_sweep(&setup, &sigmas).unwrap();
    assert_eq!(reports.len(), 3);
    for (r, s) in reports.iter().zip(sigmas) {
        assert_eq!(r.sigma, s);
        assert!(r.signed_drift.iter().sum::<f64>().abs() < 1e-9);
        for tv in [r.tv_data_prior, r.tv_sampled_data_prior, r.tv_pred_prior, r.tv_pred_data] {
            assert!((0.0..=1.0).contains(&tv));
        }
        assert_eq!(r.tv_data_prior, reports[0].tv_data_prior);
    }
    assert_eq!(reports[0].tv_pred_data, 0.0);
    let table = sweep_table(&reports);
    assert_eq!(table.lines().count(), 4);
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn stochastic_rows(b: usize, raw: &[f64]) -> Vec<f64> {
    raw.chunks(b)
        .flat_map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(move |v| v / s).collect::<Vec<_>>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equal_rows_give_that_row(
        row in prop::collection::vec(0.01f64..1.0, 6),
        density in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let prior = QuantityPrior::new(0.0, 3.0, normalized(density)).unwrap();
        let v = stochastic_rows(6, &row);
        let m: Vec<f64> = (0..6).flat_map(|_| v.clone()).collect();
        let t = TransportKernel::from_matrix(prior.edges(), m, 1, 0.0).unwrap();
        let out = predict_marginal(&t, &prior).unwrap();
        for (a, b) in out.mass().iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn doubly_stochastic_keeps_uniform(
        weights in prop::collection::vec(0.0f64..1.0, 3),
        shifts in prop::collection::vec(0usize..5, 3),
    ) {
        // Mixtures of cyclic shifts are doubly stochastic.
        let b = 5;
        let total: f64 = weights.iter().sum::<f64>() + 1e-3;
        let mut m = vec![0.0; b * b];
        for i in 0..b {
            m[i * b + i] += 1e-3 / total;
            for (w, s) in weights.iter().zip(&shifts) {
                m[i * b + (i + s) % b] += w / total;
            }
        }
        let prior = QuantityPrior::uniform(0.0, 1.0, b).unwrap();
        let t = TransportKernel::from_matrix(prior.edges(), m, 1, 0.0).unwrap();
        let out = predict_marginal(&t, &prior).unwrap();
        for v in out.mass() {
            prop_assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn predicted_marginal_is_a_distribution(
        raw in prop::collection::vec(0.0f64..1.0, 16),
        density in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let raw: Vec<f64> = raw.iter().map(|v| v + 1e-6).collect();
        let prior = QuantityPrior::new(0.0, 4.0, normalized(density)).unwrap();
        let t = TransportKernel::from_matrix(prior.edges(), stochastic_rows(4, &raw), 1, 0.0).unwrap();
        let out = predict_marginal(&t, &prior).unwrap();
        prop_assert!(out.mass().iter().all(|&v| v >= 0.0));
        prop_assert!((out.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
