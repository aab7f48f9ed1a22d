//! Synthetic scene generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Map2;
use crate::scene::{
    compute_truth_maps, BuildingMask, EnvLabel, GridSpec, NormBounds, OracleParams, Scene,
    TerrainMap, Transmitter,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub grid: GridSpec,
    pub env_label: EnvLabel,
    pub freq_mhz: f64,
    /// Inclusive transmitter count range.
    pub tx_count_min: usize,
    pub tx_count_max: usize,
    /// Transmit power range at one cell distance, dBm.
    pub tx_power_dbm_min: f64,
    pub tx_power_dbm_max: f64,
    /// Mast altitude range, meters.
    pub tx_height_m_min: f64,
    pub tx_height_m_max: f64,
    pub oracle: OracleParams,
    pub bounds: NormBounds,
    /// Peak terrain elevation, meters.
    pub terrain_amp_m: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            grid: GridSpec::default(),
            env_label: EnvLabel::Urban,
            freq_mhz: 3500.0,
            tx_count_min: 1,
            tx_count_max: 3,
            tx_power_dbm_min: -44.0,
            tx_power_dbm_max: -40.0,
            tx_height_m_min: 12.0,
            tx_height_m_max: 28.0,
            oracle: OracleParams::default(),
            bounds: NormBounds::default(),
            terrain_amp_m: 8.0,
        }
    }
}

/// Ground-density window targeted when placing buildings for each label.
/// Kept strictly inside the classification thresholds.
fn density_window(env: EnvLabel) -> (f64, f64) {
    match env {
        EnvLabel::Rural => (0.0, 0.015),
        EnvLabel::Suburban => (0.03, 0.07),
        EnvLabel::Urban => (0.10, 0.18),
        EnvLabel::DenseUrban => (0.22, 0.30),
    }
}

fn gen_terrain(grid: &GridSpec, amp_m: f64, rng: &mut ChaCha12Rng) -> TerrainMap {
    // A few random plane waves, shifted and scaled into [0, amp].
    let n_waves = 4;
    let waves: Vec<(f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            let kx = rng.gen_range(0.2..1.3) * std::f64::consts::PI / grid.x_dim as f64
                * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let ky = rng.gen_range(0.2..1.3) * std::f64::consts::PI / grid.y_dim as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (kx * grid.x_dim as f64, ky * grid.y_dim as f64, phase)
        })
        .collect();
    let elev = Map2::from_fn(grid.x_dim, grid.y_dim, |x, y| {
        let (xf, yf) = (x as f64 / grid.x_dim as f64, y as f64 / grid.y_dim as f64);
        let s: f64 = waves.iter().map(|&(a, b, p)| (a * xf + b * yf + p).sin()).sum();
        (amp_m * 0.5 * (s / n_waves as f64 + 1.0)).max(0.0) as f32
    });
    TerrainMap::new(elev).expect("terrain non-negative by construction")
}

fn gen_buildings(grid: &GridSpec, env: EnvLabel, rng: &mut ChaCha12Rng) -> BuildingMask {
    let (lo, hi) = density_window(env);
    let target = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let mut height_field = Map2::zeros(grid.x_dim, grid.y_dim);
    let total = (grid.x_dim * grid.y_dim) as f64;
    let mut occupied = 0usize;
    let mut attempts = 0;
    while (occupied as f64) < target * total && attempts < 10_000 {
        attempts += 1;
        let w = rng.gen_range(2..=5usize);
        let d = rng.gen_range(2..=5usize);
        if grid.x_dim <= w + 2 || grid.y_dim <= d + 2 {
            continue;
        }
        // Never overshoot past the label's density window.
        if (occupied + w * d) as f64 > hi * total {
            continue;
        }
        let x0 = rng.gen_range(1..grid.x_dim - w - 1);
        let y0 = rng.gen_range(1..grid.y_dim - d - 1);
        let h_m = rng.gen_range(8.0..50.0) as f32;
        for x in x0..x0 + w {
            for y in y0..y0 + d {
                if height_field.get(x, y) == 0.0 {
                    occupied += 1;
                }
                height_field.set(x, y, height_field.get(x, y).max(h_m));
            }
        }
    }
    BuildingMask::from_height_field(grid, &height_field)
}

/// Generate a labeled scene. Pure function of `(cfg, seed)`.
pub fn generate_scene(cfg: &SceneGenConfig, seed: u64) -> Result<Scene> {
    cfg.grid.validate()?;
    if cfg.tx_count_min == 0 || cfg.tx_count_min > cfg.tx_count_max {
        return Err(Error::InvalidConfig(format!(
            "transmitter count range [{}, {}] invalid (need at least 1)",
            cfg.tx_count_min, cfg.tx_count_max
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let grid = cfg.grid.clone();
    let terrain = gen_terrain(&grid, cfg.terrain_amp_m, &mut rng);
    let buildings = gen_buildings(&grid, cfg.env_label, &mut rng);
    let density = buildings.ground_density();
    debug_assert_eq!(EnvLabel::classify(density), cfg.env_label);

    let n_tx = rng.gen_range(cfg.tx_count_min..=cfg.tx_count_max);
    let mut transmitters = Vec::with_capacity(n_tx);
    let mut guard = 0;
    while transmitters.len() < n_tx && guard < 10_000 {
        guard += 1;
        let x = rng.gen_range(1.0..(grid.x_dim - 2) as f64);
        let y = rng.gen_range(1.0..(grid.y_dim - 2) as f64);
        let z_m = rng.gen_range(cfg.tx_height_m_min..cfg.tx_height_m_max);
        let slab = grid
            .heights_m
            .iter()
            .position(|&hm| z_m < hm)
            .unwrap_or(grid.h_dim - 1);
        if buildings.occupied(x.round() as usize, y.round() as usize, slab.saturating_sub(1).min(grid.h_dim - 1)) {
            continue;
        }
        let power_dbm = rng.gen_range(cfg.tx_power_dbm_min..cfg.tx_power_dbm_max);
        transmitters.push(Transmitter {
            pos: [x, y, z_m / grid.cell_size_m],
            power_dbm,
            gain_const: 10f64.powf(power_dbm / 10.0),
        });
    }
    if transmitters.is_empty() {
        return Err(Error::InvalidConfig("could not place any transmitter".into()));
    }

    let truth_maps = compute_truth_maps(
        &grid,
        &buildings,
        &terrain,
        &transmitters,
        &cfg.oracle,
        &cfg.bounds,
    );
    Ok(Scene {
        grid,
        buildings,
        terrain,
        env_label: cfg.env_label,
        transmitters,
        truth_maps,
        freq_mhz: cfg.freq_mhz,
        bounds: cfg.bounds,
    })
}
