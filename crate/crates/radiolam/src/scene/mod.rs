//! The 3D environment data model: grids, buildings, terrain, hidden
//! transmitters, ground-truth maps, and sparse sample sets.

mod gen;
mod io;
mod oracle;

pub use gen::{generate_scene, SceneGenConfig};
pub use io::{load_samples, load_scene, save_samples, save_scene};
pub use oracle::{compute_truth_maps, segment_obstruction, OracleParams, PathObstruction};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Map2;

/// Discretization of the 3D area of interest.
///
/// Horizontal cells are square with side `cell_size_m`; the vertical axis is a
/// small list of physical altitudes, one per height index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_dim: usize,
    pub y_dim: usize,
    pub h_dim: usize,
    pub cell_size_m: f64,
    pub heights_m: Vec<f64>,
}

impl GridSpec {
    pub fn new(
        x_dim: usize,
        y_dim: usize,
        cell_size_m: f64,
        heights_m: Vec<f64>,
    ) -> Result<Self> {
        let spec = GridSpec {
            x_dim,
            y_dim,
            h_dim: heights_m.len(),
            cell_size_m,
            heights_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim < 8 || self.y_dim < 8 {
            return Err(Error::InvalidConfig(format!(
                "grid too small: {}x{} (need at least 8x8)",
                self.x_dim, self.y_dim
            )));
        }
        if self.h_dim < 2 || self.heights_m.len() != self.h_dim {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 height levels, got {}",
                self.heights_m.len()
            )));
        }
        if !self.heights_m.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "heights_m must be strictly increasing".into(),
            ));
        }
        if self.cell_size_m <= 0.0 {
            return Err(Error::InvalidConfig("cell_size_m must be positive".into()));
        }
        Ok(())
    }

    /// Physical altitude of height index `h`, in cell-equivalent units.
    pub fn height_cells(&self, h: usize) -> f64 {
        self.heights_m[h] / self.cell_size_m
    }

    pub fn n_cells(&self) -> usize {
        self.x_dim * self.y_dim * self.h_dim
    }
}

/// Default grid: desk-scale 32x32 with the standard three altitudes.
impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_dim: 32,
            y_dim: 32,
            h_dim: 3,
            cell_size_m: 10.0,
            heights_m: vec![1.5, 30.0, 200.0],
        }
    }
}

/// Occupancy of the 3D grid by buildings, stored h-major so each height slice
/// is contiguous. Buildings rise from the ground: a cell occupied at height
/// index `h` is occupied at every lower index too.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingMask {
    nx: usize,
    ny: usize,
    nh: usize,
    data: Vec<bool>,
}

impl BuildingMask {
    pub fn empty(grid: &GridSpec) -> Self {
        BuildingMask {
            nx: grid.x_dim,
            ny: grid.y_dim,
            nh: grid.h_dim,
            data: vec![false; grid.n_cells()],
        }
    }

    /// Build the mask from a per-column building height field (meters):
    /// slice `h` is occupied where the building reaches `heights_m[h]`.
    pub fn from_height_field(grid: &GridSpec, building_height_m: &Map2) -> Self {
        let mut mask = BuildingMask::empty(grid);
        for h in 0..grid.h_dim {
            let level = grid.heights_m[h] as f32;
            for x in 0..grid.x_dim {
                for y in 0..grid.y_dim {
                    if building_height_m.get(x, y) >= level {
                        mask.set(x, y, h, true);
                    }
                }
            }
        }
        mask
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, h: usize) -> usize {
        (h * self.nx + x) * self.ny + y
    }

    #[inline]
    pub fn occupied(&self, x: usize, y: usize, h: usize) -> bool {
        self.data[self.idx(x, y, h)]
    }

    pub fn set(&mut self, x: usize, y: usize, h: usize, v: bool) {
        let i = self.idx(x, y, h);
        self.data[i] = v;
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nh)
    }

    /// Height slice as a 0/1 float plane.
    pub fn slice_at(&self, h: usize) -> Map2 {
        let plane = &self.data[h * self.nx * self.ny..(h + 1) * self.nx * self.ny];
        Map2::from_vec(self.nx, self.ny, plane.iter().map(|&b| b as u8 as f32).collect())
            .expect("slice dims consistent")
    }

    /// Fraction of ground cells occupied (slice 0).
    pub fn ground_density(&self) -> f64 {
        let n = self.nx * self.ny;
        let occ = self.data[..n].iter().filter(|&&b| b).count();
        occ as f64 / n as f64
    }

    pub fn flat(&self) -> &[bool] {
        &self.data
    }

    pub fn from_flat(grid: &GridSpec, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} mask cells", grid.n_cells()),
                got: format!("{}", data.len()),
            });
        }
        // Enforce rise-from-ground: occupied above implies occupied below.
        let (nx, ny, nh) = (grid.x_dim, grid.y_dim, grid.h_dim);
        for x in 0..nx {
            for y in 0..ny {
                let mut above = false;
                for h in (0..nh).rev() {
                    let v = data[(h * nx + x) * ny + y];
                    if above && !v {
                        return Err(Error::InvalidConfig(format!(
                            "building mask at ({x},{y}) does not rise from the ground"
                        )));
                    }
                    above = above || v;
                }
            }
        }
        Ok(BuildingMask { nx, ny, nh, data })
    }
}

/// Ground elevation in meters, one value per horizontal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMap {
    pub elevation: Map2,
}

impl TerrainMap {
    pub fn flat(grid: &GridSpec) -> Self {
        TerrainMap { elevation: Map2::zeros(grid.x_dim, grid.y_dim) }
    }

    pub fn new(elevation: Map2) -> Result<Self> {
        if elevation.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("terrain elevation must be >= 0".into()));
        }
        Ok(TerrainMap { elevation })
    }
}

/// A transmitter with its folded power constant. `pos` is a continuous 3D
/// coordinate in grid units (the vertical component is altitude divided by
/// `cell_size_m`); `gain_const` is the linear-domain constant that multiplies
/// `d^-n` in the free-space model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub pos: [f64; 3],
    pub power_dbm: f64,
    pub gain_const: f64,
}

/// Environment class, ordered by building density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvLabel {
    Rural,
    Suburban,
    Urban,
    DenseUrban,
}

impl EnvLabel {
    pub const ALL: [EnvLabel; 4] = [
        EnvLabel::Rural,
        EnvLabel::Suburban,
        EnvLabel::Urban,
        EnvLabel::DenseUrban,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvLabel::Rural => "rural",
            EnvLabel::Suburban => "suburban",
            EnvLabel::Urban => "urban",
            EnvLabel::DenseUrban => "dense_urban",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rural" => Ok(EnvLabel::Rural),
            "suburban" => Ok(EnvLabel::Suburban),
            "urban" => Ok(EnvLabel::Urban),
            "dense_urban" => Ok(EnvLabel::DenseUrban),
            other => Err(Error::Parse(format!("unknown environment label {other:?}"))),
        }
    }

    /// Index into the fixed environment ordering (also the domain-expert order).
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|e| e == self).unwrap()
    }

    /// Classify from ground building density.
    pub fn classify(density: f64) -> Self {
        if density < 0.02 {
            EnvLabel::Rural
        } else if density < 0.08 {
            EnvLabel::Suburban
        } else if density <= 0.2 {
            EnvLabel::Urban
        } else {
            EnvLabel::DenseUrban
        }
    }
}

/// dBm-to-unit-interval normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub lo_dbm: f64,
    pub hi_dbm: f64,
}

impl NormBounds {
    pub fn new(lo_dbm: f64, hi_dbm: f64) -> Result<Self> {
        if hi_dbm <= lo_dbm {
            return Err(Error::InvalidConfig(format!(
                "normalization bounds need hi > lo, got lo={lo_dbm} hi={hi_dbm}"
            )));
        }
        Ok(NormBounds { lo_dbm, hi_dbm })
    }

    /// Map dBm to the unit interval, clamped.
    pub fn normalize(&self, p_dbm: f64) -> f64 {
        ((p_dbm - self.lo_dbm) / (self.hi_dbm - self.lo_dbm)).clamp(0.0, 1.0)
    }

    /// Inverse of `normalize` on the unclamped range.
    pub fn denormalize(&self, r: f64) -> f64 {
        self.lo_dbm + r * (self.hi_dbm - self.lo_dbm)
    }
}

impl Default for NormBounds {
    fn default() -> Self {
        NormBounds { lo_dbm: -150.0, hi_dbm: -40.0 }
    }
}

/// Map a dBm value to `[0, 1]` given bounds. Errors if `hi <= lo`.
pub fn normalize_rss(p_dbm: f64, lo_dbm: f64, hi_dbm: f64) -> Result<f64> {
    Ok(NormBounds::new(lo_dbm, hi_dbm)?.normalize(p_dbm))
}

/// A labeled 3D instance. `transmitters` are hidden inputs to scene
/// construction only; estimator code paths never receive them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: GridSpec,
    pub buildings: BuildingMask,
    pub terrain: TerrainMap,
    pub env_label: EnvLabel,
    pub transmitters: Vec<Transmitter>,
    pub truth_maps: Vec<Map2>,
    pub freq_mhz: f64,
    pub bounds: NormBounds,
}

/// One sparse RSS measurement at a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: usize,
    pub y: usize,
    pub h: usize,
    pub rss: f32,
}

/// The k collected samples (the sparse form of the sample matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub grid: GridSpec,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draw `k` distinct samples uniformly from non-building cells, reading RSS
/// from the scene's truth maps. Deterministic given the seed.
pub fn draw_samples(scene: &Scene, k: usize, seed: u64) -> Result<SampleSet> {
    let grid = &scene.grid;
    let mut free = Vec::new();
    for h in 0..grid.h_dim {
        for x in 0..grid.x_dim {
            for y in 0..grid.y_dim {
                if !scene.buildings.occupied(x, y, h) {
                    free.push((x, y, h));
                }
            }
        }
    }
    if k > free.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {k} samples but only {} non-building cells exist",
            free.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    free.shuffle(&mut rng);
    let samples = free[..k]
        .iter()
        .map(|&(x, y, h)| Sample { x, y, h, rss: scene.truth_maps[h].get(x, y) })
        .collect();
    Ok(SampleSet { samples, grid: grid.clone() })
}
