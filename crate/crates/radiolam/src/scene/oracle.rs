//! The synthetic propagation oracle that labels generated scenes.
//!
//! Per transmitter, received power is `gain_const * d^-n` in linear
//! milliwatts, attenuated by a fixed per-wall penalty for every building
//! cell the straight path crosses and by a one-time terrain penalty if the
//! path dips below ground level. Powers from all transmitters are summed in
//! the linear domain, converted to dB, and normalized to the unit interval.

use serde::{Deserialize, Serialize};

use crate::grid::Map2;
use crate::scene::{BuildingMask, GridSpec, NormBounds, TerrainMap, Transmitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Path loss exponent n.
    pub path_loss_n: f64,
    /// Penetration loss per building cell crossed, dB.
    pub wall_loss_db: f64,
    /// One-time loss when the path passes below the terrain surface, dB.
    pub terrain_block_db: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams { path_loss_n: 2.0, wall_loss_db: 15.0, terrain_block_db: 25.0 }
    }
}

/// What a straight segment runs into on its way through the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathObstruction {
    /// Occupied building cells crossed, endpoints' own cells excluded.
    pub walls_crossed: usize,
    /// Whether any part of the segment is below the terrain surface.
    pub terrain_blocked: bool,
}

/// Vertical extent of height slab `h` in meters. Slabs partition altitude at
/// the midpoints between consecutive grid heights; the bottom slab starts at
/// ground zero and the top slab is unbounded.
fn slab_bounds(grid: &GridSpec, h: usize) -> (f64, f64) {
    let lo = if h == 0 {
        0.0
    } else {
        0.5 * (grid.heights_m[h - 1] + grid.heights_m[h])
    };
    let hi = if h + 1 == grid.h_dim {
        f64::INFINITY
    } else {
        0.5 * (grid.heights_m[h] + grid.heights_m[h + 1])
    };
    (lo, hi)
}

fn slab_of(grid: &GridSpec, z_m: f64) -> usize {
    for h in 0..grid.h_dim {
        let (_, hi) = slab_bounds(grid, h);
        if z_m < hi {
            return h;
        }
    }
    grid.h_dim - 1
}

/// Trace the straight segment between two points and report obstructions.
///
/// Coordinates: `x`/`y` in grid units with integer values at cell centers,
/// `z` in meters. The traversal visits every voxel the segment passes
/// through (horizontal boundaries at half-integers, vertical boundaries at
/// the slab limits) and inspects the building mask and terrain per column.
pub fn segment_obstruction(
    grid: &GridSpec,
    buildings: &BuildingMask,
    terrain: &TerrainMap,
    from_xy_zm: [f64; 3],
    to_xy_zm: [f64; 3],
) -> PathObstruction {
    let [ax, ay, az] = from_xy_zm;
    let [bx, by, bz] = to_xy_zm;
    let (dx, dy, dz) = (bx - ax, by - ay, bz - az);

    // Parameter values in (0,1) where the segment crosses a voxel boundary.
    let mut cuts = vec![0.0f64, 1.0];
    let mut axis_cuts = |a: f64, d: f64, lim: usize| {
        if d.abs() < 1e-12 {
            return;
        }
        // Horizontal cell boundaries sit at k + 0.5.
        let mut k = -0.5;
        while k < lim as f64 {
            let t = (k - a) / d;
            if t > 1e-12 && t < 1.0 - 1e-12 {
                cuts.push(t);
            }
            k += 1.0;
        }
    };
    axis_cuts(ax, dx, grid.x_dim);
    axis_cuts(ay, dy, grid.y_dim);
    if dz.abs() > 1e-12 {
        for h in 0..grid.h_dim.saturating_sub(1) {
            let (_, hi) = slab_bounds(grid, h);
            let t = (hi - az) / dz;
            if t > 1e-12 && t < 1.0 - 1e-12 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let clamp_x = |v: f64| (v.round().max(0.0) as usize).min(grid.x_dim - 1);
    let clamp_y = |v: f64| (v.round().max(0.0) as usize).min(grid.y_dim - 1);

    let mut walls = 0usize;
    let mut blocked = false;
    let n_iv = cuts.len() - 1;
    for i in 0..n_iv {
        let (t0, t1) = (cuts[i], cuts[i + 1]);
        if t1 - t0 < 1e-12 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let cx = clamp_x(ax + tm * dx);
        let cy = clamp_y(ay + tm * dy);
        let z0 = az + t0 * dz;
        let z1 = az + t1 * dz;
        // Terrain check applies to every visited column, endpoints included.
        if z0.min(z1) < terrain.elevation.get(cx, cy) as f64 {
            blocked = true;
        }
        // Wall counting skips the endpoint voxels themselves.
        if i == 0 || i == n_iv - 1 {
            continue;
        }
        let ch = slab_of(grid, az + tm * dz);
        if buildings.occupied(cx, cy, ch) {
            walls += 1;
        }
    }
    PathObstruction { walls_crossed: walls, terrain_blocked: blocked }
}

/// Received power at one probe point, in dB (before normalization).
pub(crate) fn received_db(
    grid: &GridSpec,
    buildings: &BuildingMask,
    terrain: &TerrainMap,
    transmitters: &[Transmitter],
    params: &OracleParams,
    probe_xy_cells: (f64, f64),
    probe_z_m: f64,
) -> f64 {
    let mut p_lin = 0.0f64;
    for tx in transmitters {
        let tz_m = tx.pos[2] * grid.cell_size_m;
        let obs = segment_obstruction(
            grid,
            buildings,
            terrain,
            [tx.pos[0], tx.pos[1], tz_m],
            [probe_xy_cells.0, probe_xy_cells.1, probe_z_m],
        );
        let dzc = (probe_z_m - tz_m) / grid.cell_size_m;
        let d = ((probe_xy_cells.0 - tx.pos[0]).powi(2)
            + (probe_xy_cells.1 - tx.pos[1]).powi(2)
            + dzc.powi(2))
        .sqrt()
        .max(1.0);
        let mut att_db = obs.walls_crossed as f64 * params.wall_loss_db;
        if obs.terrain_blocked {
            att_db += params.terrain_block_db;
        }
        p_lin += tx.gain_const * d.powf(-params.path_loss_n) * 10f64.powf(-att_db / 10.0);
    }
    10.0 * p_lin.max(1e-300).log10()
}

/// Compute the normalized ground-truth map for every height slice.
/// Building-occupied cells carry exactly zero.
pub fn compute_truth_maps(
    grid: &GridSpec,
    buildings: &BuildingMask,
    terrain: &TerrainMap,
    transmitters: &[Transmitter],
    params: &OracleParams,
    bounds: &NormBounds,
) -> Vec<Map2> {
    (0..grid.h_dim)
        .map(|h| {
            let z_m = grid.heights_m[h];
            Map2::from_fn(grid.x_dim, grid.y_dim, |x, y| {
                if buildings.occupied(x, y, h) {
                    return 0.0;
                }
                let db = received_db(
                    grid,
                    buildings,
                    terrain,
                    transmitters,
                    params,
                    (x as f64, y as f64),
                    z_m,
                );
                bounds.normalize(db) as f32
            })
        })
        .collect()
}
