//! Map-quality metrics: MAE, MSE, and PSNR.

use crate::error::{Error, Result};
use crate::grid::Map2;

fn check_dims(truth: &Map2, est: &Map2) -> Result<()> {
    if !truth.same_dims(est) {
        return Err(Error::DimensionMismatch {
            expected: format!("[{}, {}]", truth.nx(), truth.ny()),
            got: format!("[{}, {}]", est.nx(), est.ny()),
        });
    }
    Ok(())
}

/// Mean absolute difference between the two maps.
pub fn mae(truth: &Map2, est: &Map2) -> Result<f64> {
    check_dims(truth, est)?;
    let mut acc = 0.0f64;
    for (a, b) in truth.data().iter().zip(est.data()) {
        acc += (*a as f64 - *b as f64).abs();
    }
    Ok(acc / truth.data().len() as f64)
}

/// Mean squared difference between the two maps.
pub fn mse(truth: &Map2, est: &Map2) -> Result<f64> {
    check_dims(truth, est)?;
    let mut acc = 0.0f64;
    for (a, b) in truth.data().iter().zip(est.data()) {
        let d = *a as f64 - *b as f64;
        acc += d * d;
    }
    Ok(acc / truth.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB, with the peak taken from the
/// ground-truth map. Returns `+inf` when the maps agree exactly.
pub fn psnr(truth: &Map2, est: &Map2) -> Result<f64> {
    let m = mse(truth, est)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    let max_i = truth.max_value() as f64;
    Ok(20.0 * (max_i / m.sqrt()).log10())
}
