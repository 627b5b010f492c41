//! In-memory tensor types shared by every pruning stage.
//!
//! Elements are held as `f64` regardless of storage precision. A buffer tagged
//! [`Dtype::F32`] only ever holds values that are exactly representable in
//! `f32`, so converting back on write is lossless.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    /// Round a value to this precision.
    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(Dtype::F32),
            "f64" | "float64" => Ok(Dtype::F64),
            other => Err(Error::Config(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBuffer {
    rows: usize,
    cols: usize,
    dtype: Dtype,
    data: Vec<f64>,
}

impl MatrixBuffer {
    /// Builds a matrix, rounding every element to `dtype`.
    pub fn new(rows: usize, cols: usize, dtype: Dtype, mut data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Dimension(format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {expected} elements, got {}",
                data.len()
            )));
        }
        if dtype == Dtype::F32 {
            data.iter_mut().for_each(|v| *v = dtype.quantize(*v));
        }
        Ok(Self { rows, cols, dtype, data })
    }

    pub fn zeros(rows: usize, cols: usize, dtype: Dtype) -> Self {
        Self { rows, cols, dtype, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_count(&self) -> usize {
        self.data.iter().filter(|v| **v == 0.0).count()
    }

    /// Zeroes every position whose mask bit is false.
    pub fn apply_mask(&self, mask: &MaskMatrix) -> Result<Self> {
        if mask.rows() != self.rows || mask.cols() != self.cols {
            return Err(Error::Dimension(format!(
                "mask {}x{} does not match matrix {}x{}",
                mask.rows(),
                mask.cols(),
                self.rows,
                self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(mask.bits())
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, dtype: self.dtype, data })
    }
}

/// One-dimensional buffer, used for calibration vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBuffer {
    dtype: Dtype,
    data: Vec<f64>,
}

impl VectorBuffer {
    pub fn new(dtype: Dtype, mut data: Vec<f64>) -> Self {
        if dtype == Dtype::F32 {
            data.iter_mut().for_each(|v| *v = dtype.quantize(*v));
        }
        Self { dtype, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Calibration activations after batching has been reduced to one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub x: Vec<f64>,
    /// Number of sample rows the vector was reduced from.
    pub samples: usize,
}

impl Calibration {
    pub fn from_vector(v: &VectorBuffer) -> Self {
        Self { x: v.data().to_vec(), samples: 1 }
    }

    /// Reduces `B x n` samples to `x_j = sqrt(mean_b x_bj^2)`, which keeps
    /// `sum_j x_j^2` equal to the per-sample mean of the squared norm.
    pub fn from_samples(samples: &MatrixBuffer) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Dimension("calibration matrix has no sample rows".into()));
        }
        let b = samples.rows() as f64;
        let x = (0..samples.cols())
            .map(|j| {
                let sq: Vec<f64> = (0..samples.rows()).map(|r| samples.get(r, j).powi(2)).collect();
                (crate::metrics::pairwise_sum(&sq) / b).sqrt()
            })
            .collect();
        Ok(Self { x, samples: samples.rows() })
    }
}

/// Keep/prune mask; `true` means the weight is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} mask needs {} bits, got {}",
                rows * cols,
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn all_kept(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn pruned_count(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// Fraction of pruned positions; 0 for an empty mask.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.bits.len() as f64
        }
    }

    /// Fraction of positions where both masks make the same decision.
    pub fn overlap(&self, other: &MaskMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("mask shapes differ".into()));
        }
        if self.bits.is_empty() {
            return Ok(1.0);
        }
        let same = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.bits.len() as f64)
    }
}
