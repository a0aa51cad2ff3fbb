//! Finite-horizon Lyapunov exponents of the 1-D families, evaluated along the
//! un-snapped orbit.

use super::family::{map_step, FamilyConfig, FamilyKind};
use crate::error::{Error, Result};

/// `λ_H = (1/(H−1)) Σ_{t=0}^{H−2} log |f'_r(x_t)|`.
///
/// Fails with [`Error::NonDifferentiableOrbit`] when a slope along the orbit is
/// zero (logistic map at `x = ½`, or the tent map with `r = 0`).
pub fn lyapunov_finite(config: &FamilyConfig, r: f64, x0: f64) -> Result<f64> {
    let h = config.horizon;
    if h < 2 {
        return Err(Error::TooShort { needed: 2, got: h });
    }
    let (lower, upper) = config.kind.quantity_range();
    if !(r >= lower && r <= upper) {
        return Err(Error::QuantityOutOfRange { value: r, lower, upper });
    }
    match config.kind {
        // Identity tangent dynamics.
        FamilyKind::Sinusoid => Ok(0.0),
        FamilyKind::Pendulum => Err(Error::Domain(
            "finite Lyapunov exponents are only defined for the 1-D families".into(),
        )),
        kind @ (FamilyKind::Tent | FamilyKind::Logistic) => {
            if !(0.0..=1.0).contains(&x0) {
                return Err(Error::Domain(format!("x0 = {x0} outside [0, 1]")));
            }
            let mut x = x0;
            let mut sum = 0.0;
            for step in 0..h - 1 {
                let slope = match kind {
                    // Both one-sided slopes at the fold have magnitude r.
                    FamilyKind::Tent => r,
                    _ => (r * (1.0 - 2.0 * x)).abs(),
                };
                if slope == 0.0 {
                    return Err(Error::NonDifferentiableOrbit { step, state: x });
                }
                sum += slope.ln();
                x = map_step(kind, r, x);
            }
            Ok(sum / (h - 1) as f64)
        }
    }
}

/// Closed-form exponent where one exists: `log r` for the tent map, zero for
/// the sinusoid, `log|2 − r|` for the logistic map in its fixed-point regime.
pub fn lyapunov_closed_form(kind: FamilyKind, r: f64) -> Option<f64> {
    match kind {
        FamilyKind::Sinusoid => Some(0.0),
        FamilyKind::Tent if r > 0.0 => Some(r.ln()),
        FamilyKind::Logistic if r > 1.0 && r < 3.0 && r != 2.0 => Some((2.0 - r).abs().ln()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(kind: FamilyKind, h: usize) -> FamilyConfig {
        FamilyConfig::new(kind).with_horizon(h)
    }

    #[test]
    fn tent_at_two_is_log_two() {
        let l = lyapunov_finite(&cfg(FamilyKind::Tent, 64), 2.0, 0.3).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn sinusoid_is_zero() {
        for r in [32.0, 50.5, 128.0] {
            assert_eq!(lyapunov_finite(&cfg(FamilyKind::Sinusoid, 64), r, 0.25).unwrap(), 0.0);
        }
    }

    #[test]
    fn logistic_stable_regime() {
        let l = lyapunov_finite(&cfg(FamilyKind::Logistic, 10_000), 2.5, 0.3).unwrap();
        assert!((l - 0.5f64.ln()).abs() < 1e-3, "{l}");
    }

    #[test]
    fn tent_fold_uses_slope_magnitude() {
        // In floating point the r = 2 orbit of 0.3 lands on 1/2 at step 53.
        let l = lyapunov_finite(&cfg(FamilyKind::Tent, 64), 2.0, 0.3).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let l = lyapunov_finite(&cfg(FamilyKind::Tent, 10), 1.5, 0.5).unwrap();
        assert!((l - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tent_zero_slope_is_rejected() {
        let err = lyapunov_finite(&cfg(FamilyKind::Tent, 10), 0.0, 0.3).unwrap_err();
        assert!(matches!(err, Error::NonDifferentiableOrbit { step: 0, .. }));
    }

    #[test]
    fn logistic_zero_derivative_is_rejected() {
        // r = 2 from x0 = 0.5 sits on the superstable point.
        let err = lyapunov_finite(&cfg(FamilyKind::Logistic, 10), 2.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::NonDifferentiableOrbit { .. }));
    }

    #[test]
    fn pendulum_unsupported() {
        assert!(lyapunov_finite(&cfg(FamilyKind::Pendulum, 10), 10.0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn tent_equals_log_r(r in 0.01f64..2.0, x0 in 0.0f64..1.0, h in 2usize..300) {
            let l = lyapunov_finite(&cfg(FamilyKind::Tent, h), r, x0).unwrap();
            prop_assert!((l - r.ln()).abs() < 1e-9);
        }
    }
}
