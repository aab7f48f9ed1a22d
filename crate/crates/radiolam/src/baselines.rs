//! 3D interpolation baselines: Gaussian RBF and ordinary kriging.
//!
//! Distances are measured in cell units, with physical altitudes converted
//! to cell equivalents through the grid's cell size, and an isotropic metric
//! after that conversion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Map2;
use crate::scene::{GridSpec, SampleSet};

const RIDGE: f64 = 1e-8;

/// Semivariogram model for ordinary kriging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range_cells: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramKind {
    Spherical,
    Exponential,
}

impl VariogramModel {
    pub fn validate(&self) -> Result<()> {
        if self.nugget < 0.0 || self.sill <= self.nugget || self.range_cells <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "variogram needs nugget >= 0, sill > nugget, range > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Semivariance at lag `h` (cells). Zero at zero lag by convention.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let psill = self.sill - self.nugget;
        let s = match self.kind {
            VariogramKind::Spherical => {
                if h >= self.range_cells {
                    1.0
                } else {
                    let r = h / self.range_cells;
                    1.5 * r - 0.5 * r * r * r
                }
            }
            VariogramKind::Exponential => 1.0 - (-3.0 * h / self.range_cells).exp(),
        };
        self.nugget + psill * s
    }
}

fn sample_coords(set: &SampleSet) -> Vec<[f64; 3]> {
    set.samples
        .iter()
        .map(|s| [s.x as f64, s.y as f64, set.grid.height_cells(s.h)])
        .collect()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean nearest-neighbour distance, used as the default RBF width.
fn mean_nn_distance(coords: &[[f64; 3]]) -> f64 {
    if coords.len() < 2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for (i, a) in coords.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in coords.iter().enumerate() {
            if i != j {
                best = best.min(dist(a, b));
            }
        }
        acc += best;
    }
    (acc / coords.len() as f64).max(1.0)
}

struct RbfSolution {
    coords: Vec<[f64; 3]>,
    weights: Vec<f64>,
    inv_two_sigma_sq: f64,
}

impl RbfSolution {
    fn fit(set: &SampleSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let coords = sample_coords(set);
        let sigma = mean_nn_distance(&coords);
        let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
        let k = coords.len();
        let mut a = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let r2 = dist(&coords[i], &coords[j]).powi(2);
                a[(i, j)] = (-r2 * inv_two_sigma_sq).exp();
            }
            a[(i, i)] += RIDGE;
        }
        let b = DVector::from_iterator(k, set.samples.iter().map(|s| s.rss as f64));
        let weights = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
        Ok(RbfSolution { coords, weights: weights.iter().copied().collect(), inv_two_sigma_sq })
    }

    fn predict(&self, p: &[f64; 3]) -> f64 {
        self.coords
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * (-dist(c, p).powi(2) * self.inv_two_sigma_sq).exp())
            .sum()
    }
}

/// RBF prediction at arbitrary 3D points (cell units), unclamped.
pub fn rbf3d_predict(set: &SampleSet, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    let sol = RbfSolution::fit(set)?;
    Ok(points.iter().map(|p| sol.predict(p)).collect())
}

/// Full-plane RBF estimate at the target height, clamped to `[0, 1]`.
pub fn rbf3d_estimate(set: &SampleSet, h_t: usize) -> Result<Map2> {
    let grid = &set.grid;
    check_height(grid, h_t)?;
    let sol = RbfSolution::fit(set)?;
    let z = grid.height_cells(h_t);
    let mut map = Map2::from_fn(grid.x_dim, grid.y_dim, |x, y| {
        sol.predict(&[x as f64, y as f64, z]) as f32
    });
    map.clamp_unit();
    Ok(map)
}

fn check_height(grid: &GridSpec, h_t: usize) -> Result<()> {
    if h_t >= grid.h_dim {
        return Err(Error::OutOfRange(format!(
            "target height index {h_t} outside 0..{}",
            grid.h_dim
        )));
    }
    Ok(())
}

/// Fit a variogram to the empirical semivariogram by least squares over a
/// grid of candidate ranges (linear in nugget and partial sill per range).
pub fn fit_variogram(set: &SampleSet, kind: VariogramKind, bins: usize) -> Result<VariogramModel> {
    if set.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: set.len() });
    }
    let coords = sample_coords(set);
    let vals: Vec<f64> = set.samples.iter().map(|s| s.rss as f64).collect();
    let mut max_d: f64 = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            max_d = max_d.max(dist(&coords[i], &coords[j]));
        }
    }
    if max_d <= 0.0 {
        return Err(Error::InvalidConfig("all samples share one location".into()));
    }
    let bin_w = max_d / bins as f64;
    let mut gamma_hat = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let d = dist(&coords[i], &coords[j]);
            let b = ((d / bin_w) as usize).min(bins - 1);
            gamma_hat[b] += 0.5 * (vals[i] - vals[j]).powi(2);
            counts[b] += 1;
        }
    }
    for (g, &c) in gamma_hat.iter_mut().zip(&counts) {
        if c > 0 {
            *g /= c as f64;
        }
    }

    let var = {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    };
    let fallback = VariogramModel {
        kind,
        nugget: 0.0,
        sill: var.max(1e-6),
        range_cells: max_d / 3.0,
    };

    let mut best = fallback;
    let mut best_sse = f64::INFINITY;
    for ri in 1..=24 {
        let range = max_d * ri as f64 / 24.0;
        let probe = VariogramModel { kind, nugget: 0.0, sill: 1.0, range_cells: range };
        // gamma = nugget + psill * f(h); weighted linear LSQ in (nugget, psill).
        let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for b in 0..bins {
            if counts[b] == 0 {
                continue;
            }
            let w = counts[b] as f64;
            let h = (b as f64 + 0.5) * bin_w;
            let f = probe.gamma(h); // nugget 0, psill 1 -> the shape term
            sw += w;
            sf += w * f;
            sff += w * f * f;
            sg += w * gamma_hat[b];
            sfg += w * f * gamma_hat[b];
        }
        let det = sw * sff - sf * sf;
        if det.abs() < 1e-12 {
            continue;
        }
        let mut nugget = (sff * sg - sf * sfg) / det;
        let mut psill = (sw * sfg - sf * sg) / det;
        nugget = nugget.max(0.0);
        psill = psill.max(1e-9);
        let model = VariogramModel { kind, nugget, sill: nugget + psill, range_cells: range };
        let mut sse = 0.0;
        for b in 0..bins {
            if counts[b] == 0 {
                continue;
            }
            let h = (b as f64 + 0.5) * bin_w;
            sse += counts[b] as f64 * (model.gamma(h) - gamma_hat[b]).powi(2);
        }
        if sse < best_sse {
            best_sse = sse;
            best = model;
        }
    }
    Ok(best)
}

/// Precomputed ordinary kriging system: the LU factors of the bordered
/// semivariance matrix are shared across all target cells.
struct KrigingSolution {
    coords: Vec<[f64; 3]>,
    values: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    vg: VariogramModel,
}

impl KrigingSolution {
    fn fit(set: &SampleSet, vg: VariogramModel) -> Result<Self> {
        if set.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: set.len() });
        }
        vg.validate()?;
        let coords = sample_coords(set);
        let values = set.samples.iter().map(|s| s.rss as f64).collect();
        let k = coords.len();
        let build = |ridge: f64| {
            let mut a = DMatrix::zeros(k + 1, k + 1);
            for i in 0..k {
                for j in 0..k {
                    a[(i, j)] = vg.gamma(dist(&coords[i], &coords[j]));
                }
                a[(i, i)] += ridge;
                a[(i, k)] = 1.0;
                a[(k, i)] = 1.0;
            }
            a
        };
        let mut lu = build(0.0).lu();
        if !lu_usable(&lu, k + 1) {
            // Singular system (e.g. duplicate locations): retry with a ridge.
            lu = build(RIDGE).lu();
            if !lu_usable(&lu, k + 1) {
                return Err(Error::SingularSystem);
            }
        }
        Ok(KrigingSolution { coords, values, lu, vg })
    }

    fn weights(&self, target: &[f64; 3]) -> Result<(Vec<f64>, f64)> {
        let k = self.coords.len();
        let mut b = DVector::zeros(k + 1);
        for i in 0..k {
            b[i] = self.vg.gamma(dist(&self.coords[i], target));
        }
        b[k] = 1.0;
        let sol = self.lu.solve(&b).ok_or(Error::SingularSystem)?;
        Ok((sol.iter().take(k).copied().collect(), sol[k]))
    }

    fn predict(&self, target: &[f64; 3]) -> Result<f64> {
        let (w, _) = self.weights(target)?;
        Ok(w.iter().zip(&self.values).map(|(wi, vi)| wi * vi).sum())
    }
}

fn lu_usable(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, n: usize) -> bool {
    let u = lu.u();
    (0..n).all(|i| u[(i, i)].abs() > 1e-12)
}

/// Ordinary kriging weights (and the Lagrange multiplier) for one target
/// point, exposed for verification against independently solved systems.
pub fn kriging_weights(
    set: &SampleSet,
    vg: VariogramModel,
    target: [f64; 3],
) -> Result<(Vec<f64>, f64)> {
    KrigingSolution::fit(set, vg)?.weights(&target)
}

/// Kriging prediction at arbitrary 3D points (cell units), unclamped.
pub fn kriging3d_predict(
    set: &SampleSet,
    vg: VariogramModel,
    points: &[[f64; 3]],
) -> Result<Vec<f64>> {
    let sol = KrigingSolution::fit(set, vg)?;
    points.iter().map(|p| sol.predict(p)).collect()
}

/// Full-plane ordinary kriging estimate at the target height, clamped.
pub fn kriging3d_estimate(set: &SampleSet, h_t: usize, vg: VariogramModel) -> Result<Map2> {
    let grid = &set.grid;
    check_height(grid, h_t)?;
    let sol = KrigingSolution::fit(set, vg)?;
    let z = grid.height_cells(h_t);
    let mut data = Vec::with_capacity(grid.x_dim * grid.y_dim);
    for x in 0..grid.x_dim {
        for y in 0..grid.y_dim {
            data.push(sol.predict(&[x as f64, y as f64, z])? as f32);
        }
    }
    let mut map = Map2::from_vec(grid.x_dim, grid.y_dim, data)?;
    map.clamp_unit();
    Ok(map)
}
