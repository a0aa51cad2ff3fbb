use physdrift::prediction::{paired_t_test, signed_drift, tv_distance};
use physdrift::recovery::BinnedMarginal;
use proptest::prelude::*;

fn marginal(weights: &[f64]) -> BinnedMarginal {
    let edges = (0..=weights.len()).map(|i| i as f64 * 0.25).collect();
    BinnedMarginal::from_weights(edges, weights.to_vec()).unwrap()
}

/// Upper tail of Student's t with two degrees of freedom.
fn t2_upper_tail(t: f64) -> f64 {
    0.5 * (1.0 - t / (2.0 + t * t).sqrt())
}

#[test]
fn t_test_matches_two_degree_closed_form() {
    let r = paired_t_test(&[0.01, 0.02, 0.03]).unwrap();
    // mean 0.02, sd 0.01, n 3.
    let t = 0.02 / (0.01 / 3f64.sqrt());
    assert_eq!(r.df, 2);
    assert!(!r.degenerate);
    assert!((r.t - t).abs() < 1e-10);
    assert!((r.t - 3.4641).abs() < 1e-4);
    assert!((r.p - t2_upper_tail(t)).abs() < 1e-10);
    assert!((r.p - 0.0371).abs() < 1e-4);
}

#[test]
fn t_test_zero_spread() {
    let r = paired_t_test(&[-1.0, -1.0, -1.0]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.p, 1.0);
    let r = paired_t_test(&[0.0, 0.0]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.p, 1.0);
    let r = paired_t_test(&[0.2, 0.2, 0.2, 0.2]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.p, 0.0);
    assert!(paired_t_test(&[]).is_err());
    assert!(paired_t_test(&[f64::NAN, 1.0]).is_err());
}

proptest! {
    #[test]
    fn three_sample_t_test_follows_closed_form(d in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mean = d.iter().sum::<f64>() / 3.0;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        prop_assume!(sd > 1e-6);
        let t = mean / (sd / 3f64.sqrt());
        let r = paired_t_test(&d).unwrap();
        prop_assert!((r.t - t).abs() <= 1e-9 * (1.0 + t.abs()));
        prop_assert!((r.p - t2_upper_tail(t)).abs() < 1e-10);
    }

    #[test]
    fn tv_is_a_metric(
        w in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..12),
    ) {
        let lift = |v: Vec<f64>| v.into_iter().map(|x| x + 1e-9).collect::<Vec<_>>();
        let p = marginal(&lift(w.iter().map(|t| t.0).collect()));
        let q = marginal(&lift(w.iter().map(|t| t.1).collect()));
        let r = marginal(&lift(w.iter().map(|t| t.2).collect()));
        let pq = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert_eq!(pq, tv_distance(&q, &p).unwrap());
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let pr = tv_distance(&p, &r).unwrap();
        let rq = tv_distance(&r, &q).unwrap();
        prop_assert!(pq <= pr + rq + 1e-12);
        if pq == 0.0 {
            prop_assert_eq!(p.mass(), q.mass());
        }
    }

    #[test]
    fn signed_drift_sums_to_zero(
        w in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..64),
    ) {
        let p = marginal(&w.iter().map(|t| t.0 + 1e-9).collect::<Vec<_>>());
        let q = marginal(&w.iter().map(|t| t.1 + 1e-9).collect::<Vec<_>>());
        let d = signed_drift(&p, &q).unwrap();
        prop_assert!(d.iter().sum::<f64>().abs() < 1e-9);
        let tv = 0.5 * d.iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!((tv - tv_distance(&p, &q).unwrap()).abs() < 1e-12);
    }
}
