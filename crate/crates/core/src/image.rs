use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square N×N image stored row-major as a vector of length N².
///
/// Pixel `(row, col)` lives at index `row * N + col`; row 0 is the top of the
/// image (largest y), column 0 the left edge (smallest x).
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Real> {
    size: usize,
    data: DVector<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(size: usize) -> Self {
        Self { size, data: DVector::zeros(size * size) }
    }

    pub fn from_vector(size: usize, data: DVector<T>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "image of side {size} needs {} values, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = DVector::from_iterator(size * size, (0..size * size).map(|i| f(i / size, i % size)));
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.data
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<T> {
        &mut self.data
    }

    pub fn into_vector(self) -> DVector<T> {
        self.data
    }

    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.size + col] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { size: self.size, data: self.data.map(f) }
    }

    pub fn norm(&self) -> T {
        self.data.norm()
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::min_value().unwrap_or_else(T::zero), |a, b| a.max(b))
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::max_value().unwrap_or_else(T::zero), |a, b| a.min(b))
    }

    pub fn is_constant(&self) -> bool {
        match self.data.iter().next() {
            None => true,
            Some(&first) => self.data.iter().all(|&v| v == first),
        }
    }

    pub(crate) fn check_size(&self, expected: usize) -> Result<()> {
        if self.size != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected}x{expected} image, got {0}x{0}",
                self.size
            )));
        }
        Ok(())
    }
}
