//! Conditioning tensor assembly. The static channels (everything except the
//! noisy map) are built once per target plane and reused across steps.

use nalgebra::{DMatrix, DVector};

use crate::augment::ProjectedSet;
use crate::error::{Error, Result};
use crate::generation::expert::COND_CHANNELS;
use crate::grid::Map2;
use crate::scene::GridSpec;

/// The five conditioning channels that stay fixed during sampling:
/// projected sample values, sample mask, building slice at the target
/// height, normalized terrain, and the broadcast normalized target height.
/// Also carries the smooth plane prior that seeds the sampler's initial
/// state (not a network input).
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCond {
    pub proj_values: Map2,
    pub proj_mask: Map2,
    pub building_slice: Map2,
    pub terrain_norm: Map2,
    pub height_norm: f32,
    pub prior: Map2,
}

impl StaticCond {
    /// Assemble from the projection output and environment planes. Multiple
    /// surviving projections landing on one cell are averaged; dropped
    /// entries are encoded as mask 0.
    pub fn build(
        projected: &ProjectedSet,
        building_slice: Map2,
        terrain_m: &Map2,
        grid: &GridSpec,
        target_h: usize,
    ) -> Result<Self> {
        if target_h >= grid.h_dim {
            return Err(Error::OutOfRange(format!(
                "target height {target_h} outside 0..{}",
                grid.h_dim
            )));
        }
        let (nx, ny) = (grid.x_dim, grid.y_dim);
        let mut sums = Map2::zeros(nx, ny);
        let mut counts = Map2::zeros(nx, ny);
        for e in &projected.entries {
            if e.dropped {
                continue;
            }
            if e.x >= nx || e.y >= ny {
                return Err(Error::OutOfRange(format!(
                    "projected entry at ({}, {}) outside grid",
                    e.x, e.y
                )));
            }
            sums.set(e.x, e.y, sums.get(e.x, e.y) + e.rss_hat);
            counts.set(e.x, e.y, counts.get(e.x, e.y) + 1.0);
        }
        let mut proj_values = Map2::zeros(nx, ny);
        let mut proj_mask = Map2::zeros(nx, ny);
        for x in 0..nx {
            for y in 0..ny {
                let c = counts.get(x, y);
                if c > 0.0 {
                    proj_values.set(x, y, sums.get(x, y) / c);
                    proj_mask.set(x, y, 1.0);
                }
            }
        }
        let h_max = *grid.heights_m.last().unwrap() as f32;
        let terrain_norm = Map2::from_vec(
            nx,
            ny,
            terrain_m.data().iter().map(|&v| v / h_max).collect(),
        )?;
        let prior = smooth_prior(projected, nx, ny);
        Ok(StaticCond {
            proj_values,
            proj_mask,
            building_slice,
            terrain_norm,
            height_norm: (grid.heights_m[target_h] as f32) / h_max,
            prior,
        })
    }

    pub fn nx(&self) -> usize {
        self.proj_values.nx()
    }

    pub fn ny(&self) -> usize {
        self.proj_values.ny()
    }

    /// Full conditioning tensor for one noisy map.
    pub fn assemble(&self, x_t: &[f32]) -> Vec<f32> {
        let plane = self.nx() * self.ny();
        debug_assert_eq!(x_t.len(), plane);
        let mut cond = Vec::with_capacity(COND_CHANNELS * plane);
        cond.extend_from_slice(x_t);
        cond.extend_from_slice(self.proj_values.data());
        cond.extend_from_slice(self.proj_mask.data());
        cond.extend_from_slice(self.building_slice.data());
        cond.extend_from_slice(self.terrain_norm.data());
        cond.extend(std::iter::repeat(self.height_norm).take(plane));
        cond
    }
}

/// Smooth plane estimate interpolated from the surviving projections with a
/// Gaussian RBF. Coplanar pass-through values are trusted (small ridge);
/// projected ones are treated as noisy (large ridge, which smooths instead
/// of interpolating). Seeds the sampler's initial state.
fn smooth_prior(projected: &ProjectedSet, nx: usize, ny: usize) -> Map2 {
    // Collapse to one point per cell, preferring exact pass-through values.
    let mut per_cell: std::collections::BTreeMap<(usize, usize), (f64, f64, bool)> =
        std::collections::BTreeMap::new();
    for e in &projected.entries {
        if e.dropped {
            continue;
        }
        let slot = per_cell.entry((e.x, e.y)).or_insert((0.0, 0.0, false));
        if e.pass_through && !slot.2 {
            *slot = (e.rss_hat as f64, 1.0, true);
        } else if !slot.2 {
            slot.0 += e.rss_hat as f64;
            slot.1 += 1.0;
        }
    }
    if per_cell.is_empty() {
        return Map2::filled(nx, ny, 0.5);
    }
    let pts: Vec<(f64, f64, f64, bool)> = per_cell
        .into_iter()
        .map(|((x, y), (s, n, exact))| (x as f64, y as f64, s / n, exact))
        .collect();
    let k = pts.len();

    // Kernel width from the mean nearest-neighbour spacing.
    let mut nn_acc = 0.0;
    for (i, a) in pts.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in pts.iter().enumerate() {
            if i != j {
                best = best.min(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
            }
        }
        nn_acc += if best.is_finite() { best } else { 0.0 };
    }
    let sigma = (nn_acc / k as f64).max(2.0) * 1.5;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // Fit deviations from the mean so the estimate relaxes to the mean (not
    // to zero) away from the data points.
    let mean = pts.iter().map(|p| p.2).sum::<f64>() / k as f64;
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let d2 = (pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2);
            a[(i, j)] = (-d2 * inv2s2).exp();
        }
        a[(i, i)] += if pts[i].3 { 1e-6 } else { 0.05 };
    }
    let v = DVector::from_iterator(k, pts.iter().map(|p| p.2 - mean));
    let w = match a.lu().solve(&v) {
        Some(w) => w,
        None => return Map2::filled(nx, ny, mean as f32),
    };
    let mut prior = Map2::from_fn(nx, ny, |x, y| {
        let mut acc = mean;
        for (p, wi) in pts.iter().zip(w.iter()) {
            let d2 = (x as f64 - p.0).powi(2) + (y as f64 - p.1).powi(2);
            acc += wi * (-d2 * inv2s2).exp();
        }
        acc as f32
    });
    prior.clamp_unit();
    prior
}
