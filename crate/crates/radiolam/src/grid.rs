//! Dense 2D float planes, the working currency for radio maps, terrain,
//! conditioning channels and candidate maps.

use crate::error::{Error, Result};
use crate::rmt::Tensor;

/// A dense `nx × ny` plane of `f32` values, row-major with `x` as the slow axis:
/// element `(x, y)` lives at `x * ny + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    nx: usize,
    ny: usize,
    data: Vec<f32>,
}

impl Map2 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, 0.0)
    }

    pub fn filled(nx: usize, ny: usize, v: f32) -> Self {
        Map2 { nx, ny, data: vec![v; nx * ny] }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                data.push(f(x, y));
            }
        }
        Map2 { nx, ny, data }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}={} values", nx, ny, nx * ny),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Map2 { nx, ny, data })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[x * self.ny + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[x * self.ny + y] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Clamp every value into `[0, 1]` in place.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_dims(&self, other: &Map2) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.nx, self.ny], self.data.clone()).expect("dims consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims().len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: "rank-2 tensor".into(),
                got: format!("rank-{} tensor", t.dims().len()),
            });
        }
        Map2::from_vec(t.dims()[0], t.dims()[1], t.data().to_vec())
    }
}
