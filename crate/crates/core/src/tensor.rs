//! Dense NCHW tensors of `f64`.
//!
//! Every value in the crate lives in a [`Tensor4`]. Two-dimensional
//! `(batch, features)` data is stored as `(N, C, 1, 1)`, weight matrices as
//! `(out, in, 1, 1)` and per-channel vectors as `(1, C, 1, 1)`.

use std::fmt;

use crate::error::{Error, Result};

/// Extents of the four NCHW axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    /// Shape of a `(batch, features)` matrix.
    pub const fn nc(n: usize, c: usize) -> Self {
        Shape4 { n, c, h: 1, w: 1 }
    }

    /// Shape of a per-channel vector.
    pub const fn channels(c: usize) -> Self {
        Shape4 { n: 1, c, h: 1, w: 1 }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of pixels per (sample, channel) plane.
    pub const fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_nc(&self) -> bool {
        self.h == 1 && self.w == 1
    }

    /// Row-major (N-major) flat offset of `(n, c, h, w)`.
    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        debug_assert!(idx[0] < self.n && idx[1] < self.c && idx[2] < self.h && idx[3] < self.w);
        ((idx[0] * self.c + idx[1]) * self.h + idx[2]) * self.w + idx[3]
    }

    /// Inverse of [`Shape4::offset`].
    #[inline]
    pub fn unflatten(&self, offset: usize) -> [usize; 4] {
        debug_assert!(offset < self.numel());
        let w = offset % self.w;
        let rest = offset / self.w;
        let h = rest % self.h;
        let rest = rest / self.h;
        [rest / self.c, rest % self.c, h, w]
    }

    pub(crate) fn check_positive(&self) -> Result<()> {
        if self.numel() == 0 {
            return Err(Error::InvalidInput(format!("tensor shape {self} has a zero extent")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    data: Vec<f64>,
    shape: Shape4,
}

impl Tensor4 {
    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        shape.check_positive()?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor4 { data, shape })
    }

    /// Builds a `(rows, cols, 1, 1)` tensor from nested rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::InvalidInput("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Tensor4::from_vec(Shape4::nc(rows.len(), cols), data)
    }

    /// Per-channel vector of shape `(1, C, 1, 1)`.
    pub fn channel_vector(values: Vec<f64>) -> Result<Self> {
        Tensor4::from_vec(Shape4::channels(values.len()), values)
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4::full(shape, 0.0)
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        assert!(shape.numel() > 0, "tensor shape {shape} has a zero extent");
        Tensor4 {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut t = Tensor4::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(shape.unflatten(i));
        }
        t
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.shape.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], value: f64) {
        let off = self.shape.offset(idx);
        self.data[off] = value;
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        if shape.numel() != self.numel() {
            return Err(Error::shape("reshape", format!("{} elements", self.numel()), shape));
        }
        Ok(Tensor4 { data: self.data, shape })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor4 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape,
        }
    }

    pub fn zip_map(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Tensor4 {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            shape: self.shape,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Rows `start..end` along N, keeping C, H and W.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.n {
            return Err(Error::InvalidInput(format!(
                "batch slice {start}..{end} out of range for {}",
                self.shape
            )));
        }
        let per = self.shape.c * self.shape.spatial();
        let shape = Shape4 { n: end - start, ..self.shape };
        Ok(Tensor4 {
            data: self.data[start * per..end * per].to_vec(),
            shape,
        })
    }

    /// Gathers samples by index along N.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("empty gather".into()));
        }
        let per = self.shape.c * self.shape.spatial();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::InvalidInput(format!("sample {i} out of range for {}", self.shape)));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Ok(Tensor4 {
            data,
            shape: Shape4 { n: indices.len(), ..self.shape },
        })
    }

    pub(crate) fn expect_shape(&self, op: &'static str, expected: Shape4) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(op, expected, self.shape));
        }
        Ok(())
    }
}
