//! Trajectory families: sinusoid, tent map, logistic map, double pendulum.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pendulum;
use super::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Sinusoid,
    Tent,
    Logistic,
    Pendulum,
}

impl FamilyKind {
    /// Range of the generating quantity: period, map parameter, or energy.
    pub fn quantity_range(self) -> (f64, f64) {
        match self {
            FamilyKind::Sinusoid => (32.0, 128.0),
            FamilyKind::Tent => (0.0, 2.0),
            FamilyKind::Logistic => (0.0, 4.0),
            FamilyKind::Pendulum => (5.0, 40.0),
        }
    }

    pub fn default_bins(self) -> usize {
        match self {
            FamilyKind::Pendulum => 40,
            _ => 64,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            FamilyKind::Pendulum => 2,
            _ => 1,
        }
    }

    /// Fixed physical coordinate range, if the family has one.
    pub fn coordinate_range(self) -> Option<(f64, f64)> {
        match self {
            FamilyKind::Pendulum => None,
            _ => Some((0.0, 1.0)),
        }
    }

    pub fn is_iterated_map(self) -> bool {
        matches!(self, FamilyKind::Tent | FamilyKind::Logistic)
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Sinusoid => "sinusoid",
            FamilyKind::Tent => "tent",
            FamilyKind::Logistic => "logistic",
            FamilyKind::Pendulum => "pendulum",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(FamilyKind::Sinusoid),
            "tent" => Ok(FamilyKind::Tent),
            "logistic" => Ok(FamilyKind::Logistic),
            "pendulum" => Ok(FamilyKind::Pendulum),
            other => Err(Error::Domain(format!("unknown family `{other}`"))),
        }
    }
}

/// Physical parameters of the planar double pendulum (kg, m, m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::x0")]
    pub x0: f64,
    /// Sinusoid phase offset in radians.
    #[serde(default = "defaults::phase")]
    pub phase: f64,
    #[serde(default = "defaults::state_bins")]
    pub state_bins: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default)]
    pub pendulum: PendulumParams,
}

mod defaults {
    pub fn horizon() -> usize {
        64
    }
    pub fn x0() -> f64 {
        0.25
    }
    pub fn phase() -> f64 {
        -std::f64::consts::PI / 6.0
    }
    pub fn state_bins() -> usize {
        1024
    }
    pub fn dt() -> f64 {
        0.01
    }
}

impl FamilyConfig {
    pub fn new(kind: FamilyKind) -> Self {
        Self {
            kind,
            horizon: defaults::horizon(),
            x0: defaults::x0(),
            phase: defaults::phase(),
            state_bins: defaults::state_bins(),
            dt: defaults::dt(),
            pendulum: PendulumParams::default(),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("family.horizon", "must be at least 2"));
        }
        if self.state_bins < 2 {
            return Err(Error::config("family.state_bins", "must be at least 2"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("family.dt", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(Error::config("family.x0", "must lie in [0, 1]"));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("family.phase", "must be finite"));
        }
        let p = &self.pendulum;
        for (name, v) in [("m1", p.m1), ("m2", p.m2), ("l1", p.l1), ("l2", p.l2), ("g", p.g)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("family.pendulum.{name}"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.kind.state_dim()
    }

    /// Snap a state to the nearest of `state_bins` levels spanning [0, 1].
    pub fn snap(&self, x: f64) -> f64 {
        let levels = (self.state_bins - 1) as f64;
        ((x * levels).round() / levels).clamp(0.0, 1.0)
    }

    fn check_range(&self, r: f64) -> Result<()> {
        let (lower, upper) = self.kind.quantity_range();
        if !(r >= lower && r <= upper) {
            return Err(Error::QuantityOutOfRange { value: r, lower, upper });
        }
        Ok(())
    }
}

/// Deterministic rollout `g(r)` of a 1-D family.
///
/// Iterated maps snap every new state to the discretized levels, so the same
/// recurrence produces data, references, and prediction sources.
pub fn rollout(config: &FamilyConfig, r: f64) -> Result<Trajectory> {
    if config.kind == FamilyKind::Pendulum {
        return Err(Error::Domain(
            "pendulum trajectories are not a deterministic function of energy; use sample_conditional".into(),
        ));
    }
    config.check_range(r)?;
    if !(0.0..=1.0).contains(&config.x0) {
        return Err(Error::Domain(format!("x0 = {} outside [0, 1]", config.x0)));
    }
    let h = config.horizon;
    let mut values = Vec::with_capacity(h);
    match config.kind {
        FamilyKind::Sinusoid => {
            for t in 0..h {
                let x = 0.5 * ((2.0 * PI * t as f64 / r + config.phase).sin() + 1.0);
                values.push(x.clamp(0.0, 1.0));
            }
        }
        FamilyKind::Tent | FamilyKind::Logistic => {
            let mut x = config.x0;
            values.push(x);
            for _ in 1..h {
                x = config.snap(map_step(config.kind, r, x));
                values.push(x);
            }
        }
        FamilyKind::Pendulum => unreachable!(),
    }
    debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    Ok(Trajectory::new(values, h, 1).with_quantity(r))
}

pub(crate) fn map_step(kind: FamilyKind, r: f64, x: f64) -> f64 {
    match kind {
        FamilyKind::Tent => r * x.min(1.0 - x),
        FamilyKind::Logistic => r * x * (1.0 - x),
        _ => unreachable!("not an iterated map"),
    }
}

/// Draw `x ~ p(x | r)`. Deterministic for the 1-D families; for the pendulum
/// the initial condition is random with exact energy `r`.
pub fn sample_conditional<R: Rng + ?Sized>(config: &FamilyConfig, r: f64, rng: &mut R) -> Result<Trajectory> {
    match config.kind {
        FamilyKind::Pendulum => {
            config.check_range(r)?;
            let state = pendulum::state_at_energy(&config.pendulum, r, rng)?;
            let run = pendulum::pendulum_rollout(config, state)?;
            Ok(run.trajectory.with_quantity(r))
        }
        _ => rollout(config, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_starts_at_quarter() {
        let cfg = FamilyConfig::new(FamilyKind::Sinusoid);
        let x = rollout(&cfg, 64.0).unwrap();
        assert!((x.values()[0] - 0.25).abs() < 1e-15);
        assert_eq!(x.horizon(), 64);
    }

    #[test]
    fn tent_unsnapped_exact_arithmetic() {
        let mut x = 0.25;
        let mut seq = vec![x];
        for _ in 0..4 {
            x = map_step(FamilyKind::Tent, 2.0, x);
            seq.push(x);
        }
        assert_eq!(seq, vec![0.25, 0.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn tent_snapped_rollout_tracks_levels() {
        let cfg = FamilyConfig::new(FamilyKind::Tent).with_horizon(5);
        let x = rollout(&cfg, 2.0).unwrap();
        let v = x.values();
        assert_eq!(v[0], 0.25);
        assert_eq!(v[1], 512.0 / 1023.0);
        assert_eq!(v[2], 1022.0 / 1023.0);
        assert_eq!(v[3], 2.0 / 1023.0);
        for &s in v {
            let k = s * 1023.0;
            assert!(s == 0.25 || (k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn logistic_fixed_point_at_r4() {
        let cfg = FamilyConfig::new(FamilyKind::Logistic).with_horizon(10);
        let x = rollout(&cfg, 4.0).unwrap();
        let snapped = cfg.snap(0.75);
        assert_eq!(x.values()[1], snapped);
        assert!((snapped - 0.75).abs() <= 0.5 / 1023.0);
        // Without snapping the orbit is exactly the fixed point.
        assert_eq!(map_step(FamilyKind::Logistic, 4.0, 0.25), 0.75);
        assert_eq!(map_step(FamilyKind::Logistic, 4.0, 0.75), 0.75);
    }

    #[test]
    fn out_of_range_quantity_rejected() {
        let cfg = FamilyConfig::new(FamilyKind::Tent);
        assert!(matches!(rollout(&cfg, 2.5), Err(Error::QuantityOutOfRange { .. })));
        let cfg = FamilyConfig::new(FamilyKind::Sinusoid);
        assert!(rollout(&cfg, 10.0).is_err());
    }

    #[test]
    fn states_stay_in_unit_interval() {
        for kind in [FamilyKind::Tent, FamilyKind::Logistic, FamilyKind::Sinusoid] {
            let cfg = FamilyConfig::new(kind).with_horizon(200);
            let (lo, hi) = kind.quantity_range();
            for i in 0..=200 {
                let r = lo + (hi - lo) * i as f64 / 200.0;
                let x = rollout(&cfg, r).unwrap();
                assert!(x.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn snapping_is_idempotent() {
        let cfg = FamilyConfig::new(FamilyKind::Tent);
        for i in 0..100 {
            let x = i as f64 / 99.0;
            let s = cfg.snap(x);
            assert_eq!(cfg.snap(s), s);
        }
        assert_eq!(cfg.snap(0.0), 0.0);
        assert_eq!(cfg.snap(1.0), 1.0);
    }
}
