//! Scalar measurement rules: pendulum energy and path length.

use crate::error::{Error, Result};
use crate::systems::{FamilyConfig, Trajectory};

/// Energy of a two-angle trajectory: central-difference velocities at each
/// interior step, per-step mechanical energy, median over time.
pub fn recover_pendulum_energy(x: &Trajectory, config: &FamilyConfig) -> Result<f64> {
    let energies = pendulum_energy_series(x, config)?;
    Ok(median(energies))
}

/// Per-step energies `E_t` for interior `t = 1..H−1`.
pub fn pendulum_energy_series(x: &Trajectory, config: &FamilyConfig) -> Result<Vec<f64>> {
    let h = x.horizon();
    if h < 3 {
        return Err(Error::TooShort { needed: 3, got: h });
    }
    if x.dim() != 2 {
        return Err(Error::Shape(format!("pendulum trajectories have 2 coordinates, got {}", x.dim())));
    }
    let p = &config.pendulum;
    let inv = 1.0 / (2.0 * config.dt);
    Ok((1..h - 1)
        .map(|t| {
            let (prev, cur, next) = (x.state(t - 1), x.state(t), x.state(t + 1));
            let w1 = (next[0] - prev[0]) * inv;
            let w2 = (next[1] - prev[1]) * inv;
            p.kinetic(cur[0], cur[1], w1, w2) + p.shifted_potential(cur[0], cur[1])
        })
        .collect())
}

pub(crate) fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Total path length `Σ ‖q_{t+1} − q_t‖₂`.
pub fn recover_path_length(x: &Trajectory) -> Result<f64> {
    if x.horizon() < 2 {
        return Err(Error::TooShort { needed: 2, got: x.horizon() });
    }
    Ok((0..x.horizon() - 1)
        .map(|t| {
            x.state(t)
                .iter()
                .zip(x.state(t + 1))
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}
