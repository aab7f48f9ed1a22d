//! Scene persistence: a JSON manifest referencing RMT tensor files, plus the
//! samples CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Map2;
use crate::rmt::Tensor;
use crate::scene::{
    BuildingMask, EnvLabel, GridSpec, NormBounds, Sample, SampleSet, Scene, TerrainMap,
    Transmitter,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct SceneFiles {
    buildings: String,
    terrain: String,
    truth: String,
}

#[derive(Serialize, Deserialize)]
struct HiddenTransmitters {
    hidden: bool,
    list: Vec<Transmitter>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    grid: GridSpec,
    env_label: EnvLabel,
    freq_mhz: f64,
    normalization: NormBounds,
    files: SceneFiles,
    transmitters: HiddenTransmitters,
}

/// Write a scene into `dir` as `manifest.json` plus three RMT tensors.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = &scene.grid;

    let mask_data: Vec<f32> = scene.buildings.flat().iter().map(|&b| b as u8 as f32).collect();
    Tensor::new(vec![grid.h_dim, grid.x_dim, grid.y_dim], mask_data)?
        .save(&dir.join("buildings.rmt"))?;

    scene.terrain.elevation.to_tensor().save(&dir.join("terrain.rmt"))?;

    let mut truth = Vec::with_capacity(grid.n_cells());
    for m in &scene.truth_maps {
        truth.extend_from_slice(m.data());
    }
    Tensor::new(vec![grid.h_dim, grid.x_dim, grid.y_dim], truth)?.save(&dir.join("truth.rmt"))?;

    let manifest = Manifest {
        format: "radiolam-scene/1".into(),
        grid: grid.clone(),
        env_label: scene.env_label,
        freq_mhz: scene.freq_mhz,
        normalization: scene.bounds,
        files: SceneFiles {
            buildings: "buildings.rmt".into(),
            terrain: "terrain.rmt".into(),
            truth: "truth.rmt".into(),
        },
        transmitters: HiddenTransmitters { hidden: true, list: scene.transmitters.clone() },
    };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Load a scene from a directory or a manifest path. Tensors are validated
/// against the manifest's grid dimensions.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let grid = manifest.grid.clone();
    grid.validate()?;

    let expect_3d = |t: &Tensor, what: &str| -> Result<()> {
        let want = [grid.h_dim, grid.x_dim, grid.y_dim];
        if t.dims() != want {
            return Err(Error::DimensionMismatch {
                expected: format!("{what} dims {:?}", want),
                got: format!("{:?}", t.dims()),
            });
        }
        Ok(())
    };

    let bt = Tensor::load(&dir.join(&manifest.files.buildings))?;
    expect_3d(&bt, "buildings")?;
    let buildings =
        BuildingMask::from_flat(&grid, bt.data().iter().map(|&v| v != 0.0).collect())?;

    let tt = Tensor::load(&dir.join(&manifest.files.terrain))?;
    let terrain = TerrainMap::new(Map2::from_tensor(&tt)?)?;
    if terrain.elevation.nx() != grid.x_dim || terrain.elevation.ny() != grid.y_dim {
        return Err(Error::DimensionMismatch {
            expected: format!("terrain dims [{}, {}]", grid.x_dim, grid.y_dim),
            got: format!("[{}, {}]", terrain.elevation.nx(), terrain.elevation.ny()),
        });
    }

    let rt = Tensor::load(&dir.join(&manifest.files.truth))?;
    expect_3d(&rt, "truth")?;
    let plane = grid.x_dim * grid.y_dim;
    let truth_maps = (0..grid.h_dim)
        .map(|h| {
            Map2::from_vec(grid.x_dim, grid.y_dim, rt.data()[h * plane..(h + 1) * plane].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Scene {
        grid,
        buildings,
        terrain,
        env_label: manifest.env_label,
        transmitters: manifest.transmitters.list,
        truth_maps,
        freq_mhz: manifest.freq_mhz,
        bounds: manifest.normalization,
    })
}

/// Write samples as CSV with header `x,y,h,rss`.
pub fn save_samples(set: &SampleSet, path: &Path) -> Result<()> {
    let mut out = String::from("x,y,h,rss\n");
    for s in &set.samples {
        out.push_str(&format!("{},{},{},{}\n", s.x, s.y, s.h, s.rss));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a samples CSV back. The grid comes from the caller because the CSV
/// carries only coordinates.
pub fn load_samples(path: &Path, grid: &GridSpec) -> Result<SampleSet> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y,h,rss") => {}
        other => {
            return Err(Error::Parse(format!(
                "samples CSV must start with 'x,y,h,rss', got {other:?}"
            )))
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!("samples CSV row {} malformed", i + 2)));
        }
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("samples CSV row {}: {e}", i + 2)))
        };
        let s = Sample {
            x: parse_idx(cols[0])?,
            y: parse_idx(cols[1])?,
            h: parse_idx(cols[2])?,
            rss: cols[3]
                .trim()
                .parse::<f32>()
                .map_err(|e| Error::Parse(format!("samples CSV row {}: {e}", i + 2)))?,
        };
        if s.x >= grid.x_dim || s.y >= grid.y_dim || s.h >= grid.h_dim {
            return Err(Error::OutOfRange(format!(
                "sample ({}, {}, {}) outside grid",
                s.x, s.y, s.h
            )));
        }
        samples.push(s);
    }
    Ok(SampleSet { samples, grid: grid.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{draw_samples, generate_scene, SceneGenConfig};

    #[test]
    fn scene_round_trip_is_field_exact() {
        let scene = generate_scene(&SceneGenConfig::default(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(scene, loaded);
    }

    #[test]
    fn truncated_tensor_reports_dimension_mismatch() {
        let scene = generate_scene(&SceneGenConfig::default(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        let p = dir.path().join("truth.rmt");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn missing_tensor_reports_missing_file() {
        let scene = generate_scene(&SceneGenConfig::default(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        fs::remove_file(dir.path().join("terrain.rmt")).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn samples_round_trip() {
        let scene = generate_scene(&SceneGenConfig::default(), 11).unwrap();
        let set = draw_samples(&scene, 25, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("samples.csv");
        save_samples(&set, &p).unwrap();
        let loaded = load_samples(&p, &scene.grid).unwrap();
        assert_eq!(set, loaded);
    }
}
