//! Linear-beta diffusion schedule and the forward (noising) process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Map2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_max: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// Build a linear beta schedule with `t_max` steps from `beta_1` to `beta_t`.
pub fn make_schedule(t_max: usize, beta_1: f64, beta_t: f64) -> Result<DiffusionSchedule> {
    if t_max < 2 {
        return Err(Error::InvalidConfig("schedule needs t_max >= 2".into()));
    }
    if !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < beta_1 < beta_T < 1, got ({beta_1}, {beta_t})"
        )));
    }
    let betas: Vec<f64> = (0..t_max)
        .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (t_max - 1) as f64)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_max);
    let mut acc = 1.0;
    for &a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(DiffusionSchedule { t_max, betas, alphas, alpha_bars })
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(
    x0: &Map2,
    t: usize,
    eps: &Map2,
    schedule: &DiffusionSchedule,
) -> Result<Map2> {
    if t >= schedule.t_max {
        return Err(Error::OutOfRange(format!(
            "timestep {t} outside 0..{}",
            schedule.t_max
        )));
    }
    if !x0.same_dims(eps) {
        return Err(Error::DimensionMismatch {
            expected: format!("[{}, {}]", x0.nx(), x0.ny()),
            got: format!("[{}, {}]", eps.nx(), eps.ny()),
        });
    }
    let ab = schedule.alpha_bars[t];
    let (cs, cn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| cs * x + cn * e)
        .collect();
    Map2::from_vec(x0.nx(), x0.ny(), data)
}
