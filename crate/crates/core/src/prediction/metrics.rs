use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::recovery::BinnedMarginal;

/// `½ Σ |p_b − q_b|` over shared bins.
pub fn tv_distance(p: &BinnedMarginal, q: &BinnedMarginal) -> Result<f64> {
    p.ensure_same_bins(q)?;
    Ok(tv_mass(p.mass(), q.mass()))
}

pub(crate) fn tv_mass(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * s).min(1.0)
}

/// Per-bin `a_b − b_b`; positive where `a` over-represents.
pub fn signed_drift(a: &BinnedMarginal, b: &BinnedMarginal) -> Result<Vec<f64>> {
    a.ensure_same_bins(b)?;
    Ok(a.mass().iter().zip(b.mass()).map(|(x, y)| x - y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// One-sided upper-tail `Pr(T_{n−1} ≥ t)`.
    pub p: f64,
    pub df: usize,
    /// Zero spread: `p` is set to 0 or 1 by the sign of the mean.
    pub degenerate: bool,
}

/// One-sided paired t-test of `mean(d) > 0`.
pub fn paired_t_test(d: &[f64]) -> Result<TTest> {
    let n = d.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("paired differences must be finite".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    if sd == 0.0 {
        let (t, p) = if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 1.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(TTest {
        t,
        p: dist.sf(t),
        df,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(mass: &[f64]) -> BinnedMarginal {
        let edges = (0..=mass.len()).map(|i| i as f64).collect();
        BinnedMarginal::new(edges, mass.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&m(&[0.3, 0.7]), &m(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(tv_distance(&m(&[1.0, 0.0]), &m(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(tv_distance(&m(&[0.5, 0.5]), &m(&[1.0, 0.0])).unwrap(), 0.5);
        let other = BinnedMarginal::new(vec![0.0, 1.5, 2.0], vec![0.5, 0.5]).unwrap();
        assert!(matches!(tv_distance(&m(&[0.5, 0.5]), &other), Err(Error::IncompatibleBins(_))));
    }

    #[test]
    fn signed_drift_examples() {
        let d = signed_drift(&m(&[0.6, 0.4]), &m(&[0.5, 0.5])).unwrap();
        assert!((d[0] - 0.1).abs() < 1e-15 && (d[1] + 0.1).abs() < 1e-15);
        assert_eq!(signed_drift(&m(&[0.2, 0.8]), &m(&[0.2, 0.8])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let r = paired_t_test(&[-1.0, -1.0, -1.0]).unwrap();
        assert!(r.degenerate && r.p == 1.0);
        let r = paired_t_test(&[0.5, 0.5]).unwrap();
        assert!(r.degenerate && r.p == 0.0);
        assert!(paired_t_test(&[1.0]).is_err());
    }

    #[test]
    fn t_test_negation_complements() {
        let d = [0.3, -0.1, 0.7, 0.2, 0.05];
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (a, b) = (paired_t_test(&d).unwrap(), paired_t_test(&neg).unwrap());
        assert!((a.p + b.p - 1.0).abs() < 1e-12);
    }
}
