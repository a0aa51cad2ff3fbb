//! Planar double pendulum: equations of motion, fixed-step RK4, energy,
//! and energy-stratified dataset curation.
//!
//! State layout is `[θ₁, θ₂, ω₁, ω₂]`, angles measured from the downward
//! vertical.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::family::{FamilyConfig, FamilyKind, PendulumParams};
use super::{Dataset, QuantityPrior, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

pub type PendulumState = [f64; 4];

impl PendulumParams {
    /// Mass matrix `M(q)` as `[m11, m12, m22]`.
    pub fn mass_matrix(&self, theta1: f64, theta2: f64) -> [f64; 3] {
        let c = (theta1 - theta2).cos();
        [
            (self.m1 + self.m2) * self.l1 * self.l1,
            self.m2 * self.l1 * self.l2 * c,
            self.m2 * self.l2 * self.l2,
        ]
    }

    /// Potential energy shifted so the downward equilibrium is zero.
    pub fn shifted_potential(&self, theta1: f64, theta2: f64) -> f64 {
        let a = (self.m1 + self.m2) * self.g * self.l1;
        let b = self.m2 * self.g * self.l2;
        a * (1.0 - theta1.cos()) + b * (1.0 - theta2.cos())
    }

    pub fn kinetic(&self, theta1: f64, theta2: f64, omega1: f64, omega2: f64) -> f64 {
        let [m11, m12, m22] = self.mass_matrix(theta1, theta2);
        0.5 * (m11 * omega1 * omega1 + 2.0 * m12 * omega1 * omega2 + m22 * omega2 * omega2)
    }

    /// Mechanical energy `½ q̇ᵀM(q)q̇ + V(q) − V_min`.
    pub fn energy(&self, s: &PendulumState) -> f64 {
        self.kinetic(s[0], s[1], s[2], s[3]) + self.shifted_potential(s[0], s[1])
    }

    fn derivative(&self, s: &PendulumState) -> PendulumState {
        let [th1, th2, w1, w2] = *s;
        let (m1, m2, l1, l2, g) = (self.m1, self.m2, self.l1, self.l2, self.g);
        let delta = th1 - th2;
        let den = 2.0 * m1 + m2 - m2 * (2.0 * delta).cos();
        let a1 = (-g * (2.0 * m1 + m2) * th1.sin()
            - m2 * g * (th1 - 2.0 * th2).sin()
            - 2.0 * delta.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * delta.cos()))
            / (l1 * den);
        let a2 = 2.0
            * delta.sin()
            * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * th1.cos() + w2 * w2 * l2 * m2 * delta.cos())
            / (l2 * den);
        [w1, w2, a1, a2]
    }

    pub fn rk4_step(&self, s: &PendulumState, dt: f64) -> PendulumState {
        let k1 = self.derivative(s);
        let k2 = self.derivative(&axpy(s, &k1, 0.5 * dt));
        let k3 = self.derivative(&axpy(s, &k2, 0.5 * dt));
        let k4 = self.derivative(&axpy(s, &k3, dt));
        let mut out = *s;
        for i in 0..4 {
            out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

fn axpy(s: &PendulumState, k: &PendulumState, h: f64) -> PendulumState {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

#[derive(Debug, Clone)]
pub struct PendulumRun {
    /// Angle-only trajectory, `H × 2`.
    pub trajectory: Trajectory,
    /// Exact energy of the initial state.
    pub energy: f64,
    /// Full integrator states, one per timestep.
    pub states: Vec<PendulumState>,
}

/// Integrate `H − 1` RK4 steps of size `dt` from `initial`.
pub fn pendulum_rollout(config: &FamilyConfig, initial: PendulumState) -> Result<PendulumRun> {
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial pendulum state must be finite".into()));
    }
    let params = &config.pendulum;
    let h = config.horizon;
    let mut states = Vec::with_capacity(h);
    let mut s = initial;
    states.push(s);
    for step in 1..h {
        s = params.rk4_step(&s, config.dt);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { step });
        }
        states.push(s);
    }
    let mut values = Vec::with_capacity(2 * h);
    for st in &states {
        values.push(st[0]);
        values.push(st[1]);
    }
    let energy = params.energy(&initial);
    Ok(PendulumRun {
        trajectory: Trajectory::new(values, h, 2).with_quantity(energy),
        energy,
        states,
    })
}

const MAX_STATE_ATTEMPTS: u64 = 1_000_000;

/// Random initial condition with exact energy `energy`: angles uniform on the
/// circle (rejected while the potential alone exceeds the target), velocity
/// direction isotropic, speed solved from the kinetic term.
pub fn state_at_energy<R: Rng + ?Sized>(params: &PendulumParams, energy: f64, rng: &mut R) -> Result<PendulumState> {
    for _ in 0..MAX_STATE_ATTEMPTS {
        let th1 = rng.random_range(-PI..PI);
        let th2 = rng.random_range(-PI..PI);
        let v = params.shifted_potential(th1, th2);
        if v > energy {
            continue;
        }
        let phi = rng.random_range(0.0..2.0 * PI);
        let (d1, d2) = (phi.cos(), phi.sin());
        let quad = 2.0 * params.kinetic(th1, th2, d1, d2);
        let speed = (2.0 * (energy - v) / quad).sqrt();
        return Ok([th1, th2, speed * d1, speed * d2]);
    }
    Err(Error::Domain(format!("energy {energy} is not reachable by this pendulum")))
}

/// Sampling distribution for curation proposals.
#[derive(Debug, Clone, Copy)]
pub struct CurationOptions {
    /// Standard deviation of each isotropic Gaussian velocity component (rad/s).
    pub velocity_scale: f64,
    /// Consecutive rejected proposals tolerated before giving up on a bin.
    pub attempt_budget: u64,
}

impl Default for CurationOptions {
    fn default() -> Self {
        Self {
            velocity_scale: 3.0,
            attempt_budget: 1_000_000,
        }
    }
}

/// Rejection-sample `n` rollouts whose exact energies fill the prior's bins
/// with equal counts (±1).
pub fn curate_pendulum_dataset(
    config: &FamilyConfig,
    prior: &QuantityPrior,
    n: usize,
    seed: u64,
    options: CurationOptions,
) -> Result<Dataset> {
    if config.kind != FamilyKind::Pendulum {
        return Err(Error::Domain("curation requires the pendulum family".into()));
    }
    if n == 0 {
        return Err(Error::Empty("curation needs n ≥ 1".into()));
    }
    config.validate()?;
    let bins = prior.bins();
    let quota: Vec<usize> = (0..bins).map(|b| n / bins + usize::from(b < n % bins)).collect();
    let mut filled = vec![0usize; bins];
    let mut remaining = n;
    let mut slots: Vec<Vec<Trajectory>> = vec![Vec::new(); bins];
    let params = &config.pendulum;
    let mut attempt: u64 = 0;
    let mut since_accept: u64 = 0;

    while remaining > 0 {
        if since_accept >= options.attempt_budget {
            let bin = (0..bins).find(|&b| filled[b] < quota[b]).unwrap_or(0);
            let edges = prior.edges();
            return Err(Error::CurationFailure {
                bin,
                lo: edges[bin],
                hi: edges[bin + 1],
                attempts: since_accept,
            });
        }
        let mut r = rng::stream(seed, "pendulum-curation", attempt);
        attempt += 1;
        since_accept += 1;
        let th1 = r.random_range(-PI..PI);
        let th2 = r.random_range(-PI..PI);
        let w1: f64 = options.velocity_scale * r.sample::<f64, _>(StandardNormal);
        let w2: f64 = options.velocity_scale * r.sample::<f64, _>(StandardNormal);
        let state = [th1, th2, w1, w2];
        let e = params.energy(&state);
        if !prior.contains(e) {
            continue;
        }
        let b = prior.bin_of(e);
        if filled[b] >= quota[b] {
            continue;
        }
        let run = match pendulum_rollout(config, state) {
            Ok(run) => run,
            Err(Error::IntegrationBlowup { .. }) => continue,
            Err(e) => return Err(e),
        };
        slots[b].push(run.trajectory);
        filled[b] += 1;
        remaining -= 1;
        since_accept = 0;
    }
    // Interleave bins so prefixes of the dataset stay roughly stratified.
    let mut trajectories = Vec::with_capacity(n);
    let max_quota = quota.iter().copied().max().unwrap_or(0);
    for k in 0..max_quota {
        for slot in &slots {
            if let Some(t) = slot.get(k) {
                trajectories.push(t.clone());
            }
        }
    }
    Dataset::from_trajectories(config.clone(), prior.clone(), trajectories, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: usize) -> FamilyConfig {
        FamilyConfig::new(FamilyKind::Pendulum).with_horizon(h)
    }

    #[test]
    fn rest_at_bottom_is_static_with_zero_energy() {
        let run = pendulum_rollout(&cfg(32), [0.0; 4]).unwrap();
        assert_eq!(run.energy, 0.0);
        assert!(run.trajectory.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_is_linear_in_mass() {
        let s = [0.7, -1.2, 1.5, -0.3];
        let p = PendulumParams::default();
        let heavy = PendulumParams { m1: 2.0 * p.m1, m2: 2.0 * p.m2, ..p };
        assert!((heavy.energy(&s) - 2.0 * p.energy(&s)).abs() < 1e-12);
    }

    #[test]
    fn rk4_conserves_energy_over_256_steps() {
        let config = cfg(256);
        let p = config.pendulum;
        let mut rng = rng::stream(3, "test", 0);
        for target in [5.0, 15.0, 25.0, 40.0] {
            for _ in 0..5 {
                let s0 = state_at_energy(&p, target, &mut rng).unwrap();
                let run = pendulum_rollout(&config, s0).unwrap();
                let e0 = p.energy(&run.states[0]);
                let e1 = p.energy(run.states.last().unwrap());
                assert!((e0 - target).abs() < 1e-9);
                assert!(((e1 - e0) / e0).abs() < 5e-3, "drift {e0} -> {e1}");
            }
        }
    }

    #[test]
    fn state_at_energy_hits_target() {
        let p = PendulumParams::default();
        let mut rng = rng::stream(1, "t", 0);
        for e in [5.0, 12.5, 39.0] {
            let s = state_at_energy(&p, e, &mut rng).unwrap();
            assert!((p.energy(&s) - e).abs() < 1e-9);
        }
    }

    #[test]
    fn curation_one_per_bin() {
        let config = cfg(16);
        let prior = QuantityPrior::uniform(5.0, 40.0, 40).unwrap();
        let ds = curate_pendulum_dataset(&config, &prior, 40, 11, CurationOptions::default()).unwrap();
        let mut counts = vec![0; 40];
        for t in ds.trajectories() {
            let e = t.quantity_true().unwrap();
            assert!((5.0..=40.0).contains(&e));
            counts[prior.bin_of(e)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn curation_reports_unreachable_bin() {
        let config = cfg(8);
        // Negligible velocity spread caps energy at the potential maximum (58.86 J).
        let opts = CurationOptions {
            velocity_scale: 1e-9,
            attempt_budget: 50,
        };
        let prior_hi = QuantityPrior::uniform(60.0, 80.0, 2).unwrap();
        let err = curate_pendulum_dataset(&config, &prior_hi, 2, 0, opts).unwrap_err();
        assert!(matches!(err, Error::CurationFailure { bin: 0, .. }), "{err}");
    }
}
