//! Heatmap emission as binary (P5) PGM.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::grid::Map2;

/// Encode a map as an 8-bit binary PGM, one row per x index. Values clamp
/// to the unit interval and scale to 0..255 by rounding.
pub fn map_to_pgm_bytes(map: &Map2) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", map.ny(), map.nx());
    let mut bytes = header.into_bytes();
    bytes.extend(
        map.data()
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    bytes
}

pub fn write_pgm(map: &Map2, path: &Path) -> Result<()> {
    fs::write(path, map_to_pgm_bytes(map))?;
    Ok(())
}
