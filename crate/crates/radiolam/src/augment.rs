//! Projection of multi-altitude samples onto the target plane.
//!
//! Combines a free-space power-law model (with transmitters localized by RBF
//! peak finding and power constants fitted by Levenberg-Marquardt) and an
//! antenna-height correction transfer, blended by an altitude-dependent
//! weight. Low-value samples and low-value predictions are filtered out.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BuildingMask, GridSpec, NormBounds, SampleSet, Scene, TerrainMap, Transmitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Altitude scale U of the blend weight, meters.
    pub u_scale: f64,
    /// Filter threshold for raw samples and projected predictions.
    pub theta: f64,
    /// Path loss exponent used by the free-space model.
    pub path_loss_n: f64,
    /// Cap on the number of localized transmitters.
    pub max_transmitters: usize,
    pub lm_max_iters: usize,
    pub lm_tol: f64,
    pub hata_enabled: bool,
    pub free_space_enabled: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            u_scale: 20.0,
            theta: 0.05,
            path_loss_n: 2.0,
            max_transmitters: 5,
            lm_max_iters: 100,
            lm_tol: 1e-10,
            hata_enabled: true,
            free_space_enabled: true,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.u_scale <= 0.0 {
            return Err(Error::InvalidConfig("u_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig("theta must lie in [0, 1)".into()));
        }
        if self.path_loss_n <= 0.0 {
            return Err(Error::InvalidConfig("path_loss_n must be positive".into()));
        }
        if !self.hata_enabled && !self.free_space_enabled {
            return Err(Error::InvalidConfig(
                "at least one of the propagation models must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Environment context handed to the augmentation block. Transmitters are
/// deliberately absent: estimators see only what the problem provides.
#[derive(Clone, Copy)]
pub struct SceneContext<'a> {
    pub buildings: &'a BuildingMask,
    pub terrain: &'a TerrainMap,
    pub grid: &'a GridSpec,
    pub freq_mhz: f64,
    pub bounds: NormBounds,
}

impl Scene {
    /// The estimator-visible view of this scene.
    pub fn context(&self) -> SceneContext<'_> {
        SceneContext {
            buildings: &self.buildings,
            terrain: &self.terrain,
            grid: &self.grid,
            freq_mhz: self.freq_mhz,
            bounds: self.bounds,
        }
    }
}

/// One sample's projection onto the target plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSample {
    pub source_index: usize,
    pub x: usize,
    pub y: usize,
    /// Predicted RSS at `(x, y, h_t)`; for pass-through entries this is the
    /// raw sample value.
    pub rss_hat: f32,
    pub dropped: bool,
    /// True when the sample was already at the target height.
    pub pass_through: bool,
}

/// Projections of a whole sample set onto one target plane, one entry per
/// input sample (dropped entries are retained and flagged).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSet {
    pub target_h: usize,
    pub entries: Vec<ProjectedSample>,
}

impl ProjectedSet {
    /// Write entries as CSV `source_index,x,y,rss_hat,dropped`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("source_index,x,y,rss_hat,dropped\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.source_index, e.x, e.y, e.rss_hat, e.dropped
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Projections with only the coplanar samples kept; everything else is
    /// flagged as not projected. Used by the no-augmentation ablation.
    pub fn pass_through_only(samples: &SampleSet, target_h: usize) -> Self {
        let entries = samples
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let keep = s.h == target_h;
                ProjectedSample {
                    source_index: i,
                    x: s.x,
                    y: s.y,
                    rss_hat: s.rss,
                    dropped: !keep,
                    pass_through: keep,
                }
            })
            .collect();
        ProjectedSet { target_h, entries }
    }
}

/// The altitude blend weight `2^(-h/U)`.
pub fn blend_weight(h_m: f64, u_scale: f64) -> f64 {
    (-h_m / u_scale).exp2()
}

/// Mobile-antenna height correction in dB (medium/small city variant).
pub fn hata_correction(h_m: f64, freq_mhz: f64) -> Result<f64> {
    if h_m <= 0.0 || freq_mhz <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "hata correction needs positive height and frequency, got h={h_m} f={freq_mhz}"
        )));
    }
    let lf = freq_mhz.log10();
    Ok((1.1 * lf - 0.7) * h_m - (1.56 * lf - 0.8))
}

/// Transfer a sample's RSS to another altitude at the same horizontal
/// position via the height-correction difference, in normalized units.
pub fn hata_project(
    rss: f64,
    target_h_m: f64,
    source_h_m: f64,
    freq_mhz: f64,
    bounds: &NormBounds,
) -> Result<f64> {
    Ok(hata_project_raw(rss, target_h_m, source_h_m, freq_mhz, bounds)?.clamp(0.0, 1.0))
}

/// As `hata_project` but without the final clamp, so callers can tell a
/// genuine prediction from one pushed onto a clamp rail.
fn hata_project_raw(
    rss: f64,
    target_h_m: f64,
    source_h_m: f64,
    freq_mhz: f64,
    bounds: &NormBounds,
) -> Result<f64> {
    let db = bounds.denormalize(rss);
    let shifted = db + hata_correction(source_h_m, freq_mhz)? - hata_correction(target_h_m, freq_mhz)?;
    Ok((shifted - bounds.lo_dbm) / (bounds.hi_dbm - bounds.lo_dbm))
}

/// Superposed power-law field of all transmitters at one point (cell units),
/// clamped to the unit interval. Distance floors at one cell.
pub fn free_space_predict(point: [f64; 3], txs: &[Transmitter], n: f64) -> f64 {
    free_space_raw(point, txs, n).clamp(0.0, 1.0)
}

fn free_space_raw(point: [f64; 3], txs: &[Transmitter], n: f64) -> f64 {
    txs.iter()
        .map(|tx| tx.gain_const * tx_distance(point, tx).powf(-n))
        .sum()
}

#[inline]
fn tx_distance(point: [f64; 3], tx: &Transmitter) -> f64 {
    ((point[0] - tx.pos[0]).powi(2)
        + (point[1] - tx.pos[1]).powi(2)
        + (point[2] - tx.pos[2]).powi(2))
    .sqrt()
    .max(1.0)
}

/// Localize transmitters by interpolating the samples onto a coarse 3D
/// lattice and reporting interpolation peaks, strongest first.
pub fn estimate_transmitters(
    samples: &SampleSet,
    grid: &GridSpec,
    params: &AugmentParams,
) -> Result<Vec<Transmitter>> {
    params.validate()?;
    if samples.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: samples.len() });
    }
    let coords: Vec<[f64; 3]> = samples
        .samples
        .iter()
        .map(|s| [s.x as f64, s.y as f64, grid.height_cells(s.h)])
        .collect();
    let values: Vec<f64> = samples.samples.iter().map(|s| s.rss as f64).collect();

    let z_top = grid.height_cells(grid.h_dim - 1);
    let diag =
        ((grid.x_dim as f64).powi(2) + (grid.y_dim as f64).powi(2) + z_top.powi(2)).sqrt();
    let inv_two_sigma_sq = 1.0 / (2.0 * (diag / 4.0).powi(2));

    // Ridge-stabilized Gaussian RBF weights.
    let k = coords.len();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let d2 = sq_dist(&coords[i], &coords[j]);
            a[(i, j)] = (-d2 * inv_two_sigma_sq).exp();
        }
        a[(i, i)] += 1e-8;
    }
    let w = a
        .lu()
        .solve(&DVector::from_vec(values))
        .ok_or(Error::SingularSystem)?;

    // Lattice capped at 16 nodes per axis; the vertical axis uses the grid's
    // height planes directly.
    let nxl = grid.x_dim.min(16);
    let nyl = grid.y_dim.min(16);
    let zs: Vec<f64> = (0..grid.h_dim.min(16)).map(|h| grid.height_cells(h)).collect();
    let axis = |n: usize, dim: usize| -> Vec<f64> {
        (0..n)
            .map(|i| if n == 1 { 0.0 } else { i as f64 * (dim - 1) as f64 / (n - 1) as f64 })
            .collect()
    };
    let xs = axis(nxl, grid.x_dim);
    let ys = axis(nyl, grid.y_dim);

    let field_at = |p: &[f64; 3]| -> f64 {
        coords
            .iter()
            .zip(w.iter())
            .map(|(c, wi)| wi * (-sq_dist(c, p) * inv_two_sigma_sq).exp())
            .sum()
    };
    let mut field = vec![0.0f64; nxl * nyl * zs.len()];
    for (ix, &px) in xs.iter().enumerate() {
        for (iy, &py) in ys.iter().enumerate() {
            for (iz, &pz) in zs.iter().enumerate() {
                field[(ix * nyl + iy) * zs.len() + iz] = field_at(&[px, py, pz]);
            }
        }
    }

    // 75th percentile (nearest-rank) floor for peaks.
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p75 = sorted[((sorted.len() as f64 * 0.75).ceil() as usize).saturating_sub(1)];

    let mut peaks: Vec<([f64; 3], f64)> = Vec::new();
    for ix in 0..nxl {
        for iy in 0..nyl {
            for iz in 0..zs.len() {
                let v = field[(ix * nyl + iy) * zs.len() + iz];
                if v <= p75 {
                    continue;
                }
                let mut is_peak = true;
                'neigh: for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let (jx, jy, jz) =
                                (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                            if jx < 0
                                || jy < 0
                                || jz < 0
                                || jx >= nxl as i64
                                || jy >= nyl as i64
                                || jz >= zs.len() as i64
                            {
                                continue;
                            }
                            if field[((jx as usize) * nyl + jy as usize) * zs.len() + jz as usize]
                                > v
                            {
                                is_peak = false;
                                break 'neigh;
                            }
                        }
                    }
                }
                if is_peak {
                    peaks.push(([xs[ix], ys[iy], zs[iz]], v));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    peaks.dedup_by(|a, b| sq_dist(&a.0, &b.0) < 1e-12);
    peaks.truncate(params.max_transmitters);
    if peaks.is_empty() {
        // Degenerate fields (e.g. constant samples) still yield the argmax.
        let best = field
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, &v)| {
                let iz = i % zs.len();
                let iy = (i / zs.len()) % nyl;
                let ix = i / (zs.len() * nyl);
                ([xs[ix], ys[iy], zs[iz]], v)
            })
            .unwrap();
        peaks.push(best);
    }
    Ok(peaks
        .into_iter()
        .map(|(pos, _)| Transmitter { pos, power_dbm: 0.0, gain_const: 0.0 })
        .collect())
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Fit the per-transmitter power constants by Levenberg-Marquardt with
/// multiplicative damping. The model is linear in the constants, so this
/// typically converges in a couple of accepted steps.
pub fn fit_power_params(
    samples: &SampleSet,
    tx_positions: &[Transmitter],
    params: &AugmentParams,
) -> Result<Vec<Transmitter>> {
    if tx_positions.is_empty() {
        return Err(Error::InvalidConfig("no transmitter positions to fit".into()));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if samples.len() < tx_positions.len() {
        return Err(Error::InsufficientSamples {
            needed: tx_positions.len(),
            got: samples.len(),
        });
    }
    let grid = &samples.grid;
    let n = params.path_loss_n;
    let coords: Vec<[f64; 3]> = samples
        .samples
        .iter()
        .map(|s| [s.x as f64, s.y as f64, grid.height_cells(s.h)])
        .collect();
    let targets: Vec<f64> = samples.samples.iter().map(|s| s.rss as f64).collect();

    // Jacobian is constant: J[s][t] = d(s, t)^-n.
    let m = tx_positions.len();
    let jac: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| tx_positions.iter().map(|t| tx_distance(*c, t).powf(-n)).collect())
        .collect();

    // Initial constants from the strongest sample.
    let (best_idx, best_val) = targets
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, &v)| (i, v))
        .unwrap();
    let mut ks: Vec<f64> = tx_positions
        .iter()
        .map(|t| best_val * sq_dist(&coords[best_idx], &t.pos).max(1.0))
        .collect();

    let sse = |ks: &[f64]| -> f64 {
        jac.iter()
            .zip(&targets)
            .map(|(row, &r)| {
                let pred: f64 = row.iter().zip(ks).map(|(j, k)| j * k).sum();
                (pred - r).powi(2)
            })
            .sum()
    };

    let mut lambda = 1e-3;
    let mut current = sse(&ks);
    for _ in 0..params.lm_max_iters {
        if current == 0.0 {
            break;
        }
        // Gradient of 0.5*SSE and the Gauss-Newton normal matrix.
        let mut g = vec![0.0f64; m];
        let mut jtj = DMatrix::zeros(m, m);
        for (row, &r) in jac.iter().zip(&targets) {
            let e: f64 = row.iter().zip(&ks).map(|(j, k)| j * k).sum::<f64>() - r;
            for a in 0..m {
                g[a] += row[a] * e;
                for b in 0..m {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let mut damped = jtj.clone();
        for i in 0..m {
            damped[(i, i)] += lambda;
        }
        let rhs = DVector::from_iterator(m, g.iter().map(|v| -v));
        let step: Vec<f64> = match damped.lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s.iter().copied().collect(),
            _ => {
                // Singular normal equations: take a scaled gradient step.
                let scale = jtj.diagonal().amax().max(1.0) + lambda;
                g.iter().map(|v| -v / scale).collect()
            }
        };
        let trial: Vec<f64> = ks.iter().zip(&step).map(|(k, d)| k + d).collect();
        let trial_sse = sse(&trial);
        if trial_sse < current {
            let rel = (current - trial_sse) / current.max(1e-300);
            ks = trial;
            current = trial_sse;
            lambda /= 10.0;
            if rel < params.lm_tol {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    Ok(tx_positions
        .iter()
        .zip(&ks)
        .map(|(t, &k)| {
            let k = k.max(0.0);
            Transmitter {
                pos: t.pos,
                power_dbm: 10.0 * k.max(1e-300).log10(),
                gain_const: k,
            }
        })
        .collect())
}

/// Project every sample onto the target plane. Transmitters are localized
/// and fitted from the samples unless `known_txs` supplies them.
pub fn augment_with_transmitters(
    samples: &SampleSet,
    ctx: &SceneContext<'_>,
    target_h: usize,
    params: &AugmentParams,
    known_txs: Option<&[Transmitter]>,
) -> Result<ProjectedSet> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if target_h >= ctx.grid.h_dim {
        return Err(Error::OutOfRange(format!(
            "target height index {target_h} outside 0..{}",
            ctx.grid.h_dim
        )));
    }
    let grid = ctx.grid;
    let target_h_m = grid.heights_m[target_h];
    let z_t = grid.height_cells(target_h);

    let txs: Vec<Transmitter> = if params.free_space_enabled {
        match known_txs {
            Some(t) => t.to_vec(),
            None => {
                let positions = estimate_transmitters(samples, grid, params)?;
                fit_power_params(samples, &positions, params)?
            }
        }
    } else {
        Vec::new()
    };

    let w = blend_weight(target_h_m, params.u_scale);
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.samples.iter().enumerate() {
        if s.h == target_h {
            entries.push(ProjectedSample {
                source_index: i,
                x: s.x,
                y: s.y,
                rss_hat: s.rss,
                dropped: false,
                pass_through: true,
            });
            continue;
        }
        if (s.rss as f64) < params.theta {
            // Input filter: too weak to trust for projection.
            entries.push(ProjectedSample {
                source_index: i,
                x: s.x,
                y: s.y,
                rss_hat: s.rss,
                dropped: true,
                pass_through: false,
            });
            continue;
        }
        let point = [s.x as f64, s.y as f64, z_t];
        let p_free =
            if params.free_space_enabled { free_space_predict(point, &txs, params.path_loss_n) } else { 0.0 };
        let (p_hata, hata_saturated) = if params.hata_enabled {
            let raw = hata_project_raw(
                s.rss as f64,
                target_h_m,
                grid.heights_m[s.h],
                ctx.freq_mhz,
                &ctx.bounds,
            )?;
            // A transfer pushed onto a clamp rail carries no information
            // about this sample (the height-correction difference exceeds
            // the dynamic range); it cannot guide the blend.
            (raw.clamp(0.0, 1.0), !(0.0..=1.0).contains(&raw))
        } else {
            (0.0, false)
        };
        let r_hat = match (params.free_space_enabled, params.hata_enabled) {
            (true, true) if hata_saturated => p_free,
            (true, true) => (1.0 - w) * p_free + w * p_hata,
            (true, false) => p_free,
            (false, true) => p_hata,
            (false, false) => unreachable!("validated"),
        }
        .clamp(0.0, 1.0);
        entries.push(ProjectedSample {
            source_index: i,
            x: s.x,
            y: s.y,
            rss_hat: r_hat as f32,
            dropped: (r_hat) < params.theta, // output filter
            pass_through: false,
        });
    }
    Ok(ProjectedSet { target_h, entries })
}

/// Project every sample onto the target plane, localizing transmitters from
/// the samples themselves.
pub fn augment(
    samples: &SampleSet,
    ctx: &SceneContext<'_>,
    target_h: usize,
    params: &AugmentParams,
) -> Result<ProjectedSet> {
    augment_with_transmitters(samples, ctx, target_h, params, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Sample, SampleSet};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn grid() -> GridSpec {
        GridSpec::default()
    }

    /// Sample a free-space world: normalized-linear field of the given
    /// transmitters, read at the listed cells.
    fn free_space_samples(
        grid: &GridSpec,
        txs: &[Transmitter],
        n: f64,
        cells: &[(usize, usize, usize)],
    ) -> SampleSet {
        let samples = cells
            .iter()
            .map(|&(x, y, h)| Sample {
                x,
                y,
                h,
                rss: free_space_predict([x as f64, y as f64, grid.height_cells(h)], txs, n) as f32,
            })
            .collect();
        SampleSet { samples, grid: grid.clone() }
    }

    fn dense_cells(grid: &GridSpec, stride: usize) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        for h in 0..grid.h_dim {
            for x in (0..grid.x_dim).step_by(stride) {
                for y in (0..grid.y_dim).step_by(stride) {
                    cells.push((x, y, h));
                }
            }
        }
        cells
    }

    #[test]
    fn blend_weight_triple() {
        assert_eq!(blend_weight(0.0, 20.0), 1.0);
        assert_eq!(blend_weight(20.0, 20.0), 0.5);
        assert_eq!(blend_weight(40.0, 20.0), 0.25);
    }

    #[test]
    fn hata_correction_frozen_values() {
        // High-precision evaluations of the closed form at f = 3500 MHz.
        let a15 = hata_correction(1.5, 3500.0).unwrap();
        assert!((a15 - 0.068_966_123_991_524_8).abs() < 1e-12, "a(1.5) = {a15}");
        let a30 = hata_correction(30.0, 3500.0).unwrap();
        assert!((a30 - a15 - 91.156_533_190_381_14).abs() < 1e-10, "delta = {}", a30 - a15);
        assert!(hata_correction(0.0, 3500.0).is_err());
        assert!(hata_correction(1.5, 0.0).is_err());
    }

    #[test]
    fn hata_correction_antisymmetric() {
        let f = 3500.0;
        for (h1, h2) in [(1.5, 30.0), (30.0, 200.0), (1.5, 200.0)] {
            let d12 = hata_correction(h1, f).unwrap() - hata_correction(h2, f).unwrap();
            let d21 = hata_correction(h2, f).unwrap() - hata_correction(h1, f).unwrap();
            assert!((d12 + d21).abs() < 1e-12);
        }
    }

    #[test]
    fn hata_project_identity_and_shift() {
        let bounds = NormBounds::default();
        let r = hata_project(0.4, 30.0, 30.0, 3500.0, &bounds).unwrap();
        assert_eq!(r, 0.4);

        // A source/target pair whose correction difference is +half the dB
        // range shifts the normalized value by exactly +0.5.
        // a(hs) - a(ht) = slope * (hs - ht); slope at 3500 MHz:
        let slope = 1.1 * 3500f64.log10() - 0.7;
        let span = 110.0; // hi - lo
        let hs = 30.0 + span / 2.0 / slope;
        let r2 = hata_project(0.25, 30.0, hs, 3500.0, &bounds).unwrap();
        assert!((r2 - 0.75).abs() < 1e-9, "{r2}");
        // And clamping at the top.
        let r3 = hata_project(0.8, 30.0, hs, 3500.0, &bounds).unwrap();
        assert!((r3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_space_predict_cases() {
        let tx = |x: f64, k: f64| Transmitter { pos: [x, 0.0, 0.0], power_dbm: 0.0, gain_const: k };
        // One transmitter, K=1, n=2, d=10 -> 0.01.
        let p = free_space_predict([10.0, 0.0, 0.0], &[tx(0.0, 1.0)], 2.0);
        assert!((p - 0.01).abs() < 1e-15);
        // Two symmetric transmitters at d=2, each K=0.02 -> 0.01.
        let p2 = free_space_predict([0.0, 0.0, 0.0], &[tx(-2.0, 0.02), tx(2.0, 0.02)], 2.0);
        assert!((p2 - 0.01).abs() < 1e-15);
        // Distance clamps to one cell at the transmitter itself.
        let p3 = free_space_predict([0.0, 0.0, 0.0], &[tx(0.0, 0.5)], 2.0);
        assert!((p3 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn localizes_single_transmitter() {
        let g = grid();
        let truth = Transmitter { pos: [11.0, 21.0, 2.0], power_dbm: 0.0, gain_const: 0.9 };
        let set = free_space_samples(&g, &[truth.clone()], 2.0, &dense_cells(&g, 2));
        let params = AugmentParams::default();
        let found = estimate_transmitters(&set, &g, &params).unwrap();
        assert!(!found.is_empty());
        let p = found[0].pos;
        let dxy = ((p[0] - 11.0).powi(2) + (p[1] - 21.0).powi(2)).sqrt();
        assert!(dxy <= 2.0, "peak at {:?}", p);
    }

    #[test]
    fn localizes_two_separated_transmitters() {
        let g = grid();
        let t1 = Transmitter { pos: [6.0, 6.0, 2.0], power_dbm: 0.0, gain_const: 0.8 };
        let t2 = Transmitter { pos: [26.0, 25.0, 2.0], power_dbm: 0.0, gain_const: 0.8 };
        let set = free_space_samples(&g, &[t1.clone(), t2.clone()], 2.0, &dense_cells(&g, 3));
        let found = estimate_transmitters(&set, &g, &AugmentParams::default()).unwrap();
        assert!(found.len() >= 2, "found {} peaks", found.len());
        // Boundary extrapolation of the wide kernel can add artifact peaks,
        // so the check is containment, not rank.
        for truth in [&t1, &t2] {
            let near = found.iter().any(|f| {
                ((f.pos[0] - truth.pos[0]).powi(2) + (f.pos[1] - truth.pos[1]).powi(2)).sqrt()
                    <= 4.0
            });
            assert!(near, "no peak near {:?}: {:?}", truth.pos, found);
        }
    }

    #[test]
    fn strongest_peak_is_lattice_argmax() {
        // Brute-force oracle: the reported strongest peak must carry the
        // globally maximal interpolated value over the lattice, which for a
        // single-transmitter field is the node nearest the transmitter.
        let g = grid();
        let truth = Transmitter { pos: [11.0, 21.0, 2.0], power_dbm: 0.0, gain_const: 0.9 };
        let set = free_space_samples(&g, &[truth], 2.0, &dense_cells(&g, 2));
        let found = estimate_transmitters(&set, &g, &AugmentParams::default()).unwrap();
        // Lattice nodes are spaced (dim-1)/15 apart; the nearest node to
        // (11, 21) is within one node spacing.
        let spacing = 31.0 / 15.0;
        assert!((found[0].pos[0] - 11.0).abs() <= spacing);
        assert!((found[0].pos[1] - 21.0).abs() <= spacing);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let g = grid();
        let set = SampleSet {
            samples: vec![
                Sample { x: 1, y: 1, h: 0, rss: 0.5 },
                Sample { x: 2, y: 1, h: 0, rss: 0.5 },
                Sample { x: 3, y: 1, h: 0, rss: 0.5 },
            ],
            grid: g.clone(),
        };
        assert!(matches!(
            estimate_transmitters(&set, &g, &AugmentParams::default()),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn lm_recovers_known_constant() {
        let g = grid();
        let truth = Transmitter { pos: [16.0, 16.0, 2.0], power_dbm: 0.0, gain_const: 0.04 };
        let set = free_space_samples(&g, &[truth.clone()], 2.0, &dense_cells(&g, 3));
        let fitted = fit_power_params(
            &set,
            &[Transmitter { pos: truth.pos, power_dbm: 0.0, gain_const: 0.0 }],
            &AugmentParams::default(),
        )
        .unwrap();
        let k = fitted[0].gain_const;
        assert!((k - 0.04).abs() / 0.04 < 1e-6, "fitted K = {k}");

        // Against a brute-force 1D scan over K.
        let sse = |kv: f64| -> f64 {
            set.samples
                .iter()
                .map(|s| {
                    let p = free_space_predict(
                        [s.x as f64, s.y as f64, g.height_cells(s.h)],
                        &[Transmitter { pos: truth.pos, power_dbm: 0.0, gain_const: kv }],
                        2.0,
                    );
                    (p - s.rss as f64).powi(2)
                })
                .sum()
        };
        let best_scan = (0..=400)
            .map(|i| 0.02 + i as f64 * 0.0001)
            .min_by(|a, b| sse(*a).partial_cmp(&sse(*b)).unwrap())
            .unwrap();
        assert!((k - best_scan).abs() < 1e-4);
    }

    #[test]
    fn lm_stationary_cases() {
        let g = grid();
        let truth = Transmitter { pos: [10.0, 10.0, 2.0], power_dbm: 0.0, gain_const: 0.04 };
        let set = free_space_samples(&g, &[truth.clone()], 2.0, &dense_cells(&g, 4));
        let params = AugmentParams::default();
        let fitted = fit_power_params(
            &set,
            &[Transmitter { pos: truth.pos, power_dbm: 0.0, gain_const: 0.0 }],
            &params,
        )
        .unwrap();
        // At the optimum of this noiseless problem the residual gradient
        // vanishes: g = sum_s J_s * e_s.
        let k = fitted[0].gain_const;
        let mut gsum = 0.0;
        for s in &set.samples {
            let c = [s.x as f64, s.y as f64, g.height_cells(s.h)];
            let j = tx_distance(c, &truth).powf(-2.0);
            gsum += j * (j * k - s.rss as f64);
        }
        assert!(gsum.abs() < params.lm_tol.max(1e-9), "gradient {gsum}");

        // Zero samples is an error.
        let empty = SampleSet { samples: vec![], grid: g.clone() };
        assert!(fit_power_params(&empty, &[truth], &params).is_err());
    }

    #[test]
    fn augment_pass_through_and_filters() {
        let g = grid();
        let mut set = free_space_samples(
            &g,
            &[Transmitter { pos: [16.0, 16.0, 2.0], power_dbm: 0.0, gain_const: 0.5 }],
            2.0,
            &dense_cells(&g, 5),
        );
        // Force one weak sample below theta.
        set.samples[3].rss = 0.02;
        set.samples[3].h = 2;
        let buildings = BuildingMask::empty(&g);
        let terrain = TerrainMap::flat(&g);
        let ctx = SceneContext {
            buildings: &buildings,
            terrain: &terrain,
            grid: &g,
            freq_mhz: 3500.0,
            bounds: NormBounds::default(),
        };
        let proj = augment(&set, &ctx, 0, &AugmentParams::default()).unwrap();
        assert_eq!(proj.entries.len(), set.len());
        for (e, s) in proj.entries.iter().zip(&set.samples) {
            if s.h == 0 {
                assert!(e.pass_through && !e.dropped);
                assert_eq!(e.rss_hat, s.rss);
            }
            if !e.dropped {
                assert!((0.0..=1.0).contains(&e.rss_hat));
            }
        }
        assert!(proj.entries[3].dropped, "sub-theta sample must be filtered");
    }

    #[test]
    fn free_space_only_projection_matches_field_exactly() {
        let g = grid();
        let txs = vec![
            Transmitter { pos: [8.0, 9.0, 2.0], power_dbm: 0.0, gain_const: 0.3 },
            Transmitter { pos: [24.0, 22.0, 2.0], power_dbm: 0.0, gain_const: 0.4 },
        ];
        let set = free_space_samples(&g, &txs, 2.0, &dense_cells(&g, 4));
        let buildings = BuildingMask::empty(&g);
        let terrain = TerrainMap::flat(&g);
        let ctx = SceneContext {
            buildings: &buildings,
            terrain: &terrain,
            grid: &g,
            freq_mhz: 3500.0,
            bounds: NormBounds::default(),
        };
        let params = AugmentParams { hata_enabled: false, ..AugmentParams::default() };
        let target_h = 1;
        let proj = augment_with_transmitters(&set, &ctx, target_h, &params, Some(&txs)).unwrap();
        let z_t = g.height_cells(target_h);
        for e in proj.entries.iter().filter(|e| !e.pass_through && !e.dropped) {
            let oracle = free_space_predict([e.x as f64, e.y as f64, z_t], &txs, 2.0);
            assert!(
                (e.rss_hat as f64 - oracle).abs() < 1e-6,
                "({}, {}): {} vs {}",
                e.x,
                e.y,
                e.rss_hat,
                oracle
            );
        }
    }

    #[test]
    fn hata_only_projection_to_own_height_is_identity() {
        let g = grid();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let samples: Vec<Sample> = (0..12)
            .map(|i| Sample {
                x: (i * 2) % g.x_dim,
                y: (i * 3) % g.y_dim,
                h: 1,
                rss: rng.gen_range(0.1..0.9),
            })
            .collect();
        let set = SampleSet { samples, grid: g.clone() };
        let buildings = BuildingMask::empty(&g);
        let terrain = TerrainMap::flat(&g);
        let ctx = SceneContext {
            buildings: &buildings,
            terrain: &terrain,
            grid: &g,
            freq_mhz: 3500.0,
            bounds: NormBounds::default(),
        };
        let params = AugmentParams { free_space_enabled: false, ..AugmentParams::default() };
        let proj = augment(&set, &ctx, 1, &params).unwrap();
        for (e, s) in proj.entries.iter().zip(&set.samples) {
            assert!(e.pass_through);
            assert_eq!(e.rss_hat, s.rss);
        }
    }

    #[test]
    fn csv_serialization() {
        let set = ProjectedSet {
            target_h: 1,
            entries: vec![
                ProjectedSample { source_index: 0, x: 3, y: 4, rss_hat: 0.5, dropped: false, pass_through: true },
                ProjectedSample { source_index: 1, x: 5, y: 6, rss_hat: 0.25, dropped: true, pass_through: false },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("proj.csv");
        set.save_csv(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "source_index,x,y,rss_hat,dropped\n0,3,4,0.5,false\n1,5,6,0.25,true\n");
    }

    #[test]
    fn params_validation() {
        let ok = AugmentParams::default();
        assert!(ok.validate().is_ok());
        assert!(AugmentParams { u_scale: 0.0, ..ok }.validate().is_err());
        assert!(AugmentParams { theta: 1.0, ..ok }.validate().is_err());
        assert!(AugmentParams { hata_enabled: false, free_space_enabled: false, ..ok }
            .validate()
            .is_err());
    }
}
