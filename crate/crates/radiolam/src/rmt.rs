//! The RMT tensor file format.
//!
//! Layout: magic bytes `R M T 1`, little-endian `u32` rank, `rank` little-endian
//! `u32` dims, then the row-major payload as little-endian 32-bit floats.
//! Boolean tensors are stored as `0.0` / `1.0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"RMT1";

/// A dense row-major `f32` tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?} = {} values", dims, n),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::BadMagic(path.to_path_buf()))?;
        if magic != MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let rank = read_u32(&mut r, path)? as usize;
        if rank > 8 {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                reason: format!("implausible rank {}", rank),
            });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, path)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|_| Error::DimensionMismatch {
            expected: format!("{:?} = {} payload floats", dims, n),
            got: "truncated payload".into(),
        })?;
        // Trailing garbage also counts as a dimension mismatch.
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?} = {} payload floats", dims, n),
                got: "oversized payload".into(),
            });
        }
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: "truncated header".into(),
    })?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.rmt");
        let t = Tensor::new(vec![2, 3], vec![0.0, -1.5, 3.25, f32::MIN_POSITIVE, 1e30, -0.0]).unwrap();
        t.save(&p).unwrap();
        let u = Tensor::load(&p).unwrap();
        assert_eq!(t.dims(), u.dims());
        for (a, b) in t.data().iter().zip(u.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rmt");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(Tensor::load(&p), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_payload_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.rmt");
        Tensor::new(vec![4], vec![1.0; 4]).unwrap().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            Tensor::load(&p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn missing_file_error() {
        assert!(matches!(
            Tensor::load(Path::new("/nonexistent/t.rmt")),
            Err(Error::MissingFile(_))
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_round_trip(data in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.rmt");
            let n = data.len();
            let t = Tensor::new(vec![n], data).unwrap();
            t.save(&p).unwrap();
            let u = Tensor::load(&p).unwrap();
            prop_assert_eq!(t, u);
        }
    }
}
