//! Matrix-free parallel-beam Radon transform.
//!
//! The image occupies an N×N grid of square pixels centered at the origin.
//! A ray at angle θ and detector offset `s` is the line
//! `{x cosθ + y sinθ = s}`, so θ = 0 integrates along y and the detector runs
//! along x. Detector offsets are `(t − (D−1)/2) · spacing`.

mod fbp;
mod siddon;

pub use fbp::fbp;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::prior::BasisProjection;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    detector_count: usize,
    detector_spacing: f64,
    image_size: usize,
    #[serde(default = "unit")]
    pixel_size: f64,
}

fn unit() -> f64 {
    1.0
}

impl ScanGeometry {
    /// `angles` in degrees within `[0, 180)`; spacing in units of image pixels.
    pub fn new(angles: Vec<f64>, detector_count: usize, detector_spacing: f64, image_size: usize) -> Result<Self> {
        if let Some(a) = angles.iter().find(|a| !(**a >= 0.0 && **a < 180.0)) {
            return Err(Error::InvalidParameter(format!("angle {a} outside [0, 180)")));
        }
        if detector_count == 0 {
            return Err(Error::InvalidParameter("detector_count must be at least 1".into()));
        }
        if !(detector_spacing > 0.0) || !detector_spacing.is_finite() {
            return Err(Error::InvalidParameter("detector spacing must be positive".into()));
        }
        if image_size == 0 {
            return Err(Error::InvalidParameter("image size must be at least 1".into()));
        }
        Ok(Self { angles, detector_count, detector_spacing, image_size, pixel_size: 1.0 })
    }

    /// N detectors of unit spacing, one per pixel column.
    pub fn parallel(image_size: usize, angles: Vec<f64>) -> Result<Self> {
        Self::new(angles, image_size, 1.0, image_size)
    }

    /// Same angles and detectors over a different pixel grid covering the
    /// same physical extent when `image_size · pixel_size` is unchanged.
    pub fn with_grid(&self, image_size: usize, pixel_size: f64) -> Result<Self> {
        if image_size == 0 || !(pixel_size > 0.0) {
            return Err(Error::InvalidParameter("grid must be non-empty with positive pixel size".into()));
        }
        Ok(Self { image_size, pixel_size, ..self.clone() })
    }

    pub fn with_angles(&self, angles: Vec<f64>) -> Result<Self> {
        let mut g = Self::new(angles, self.detector_count, self.detector_spacing, self.image_size)?;
        g.pixel_size = self.pixel_size;
        Ok(g)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detector_count(&self) -> usize {
        self.detector_count
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    /// Number of line integrals, `|angles| · detector_count`.
    pub fn measurements(&self) -> usize {
        self.angles.len() * self.detector_count
    }

    pub fn detector_offset(&self, t: usize) -> f64 {
        (t as f64 - 0.5 * (self.detector_count as f64 - 1.0)) * self.detector_spacing
    }

    /// Visits the `(pixel, length)` pairs of ray `(angle index, detector)`.
    pub fn trace_ray(&self, angle: usize, detector: usize, mut visit: impl FnMut(usize, f64)) {
        let (sin, cos) = self.angles[angle].to_radians().sin_cos();
        siddon::trace(self.image_size, self.pixel_size, cos, sin, self.detector_offset(detector), &mut visit);
    }
}

/// Rotating acquisition: `A` equally spaced directions advanced by `δ` per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSchedule {
    pub angles_per_step: usize,
    pub increment: f64,
    pub steps: usize,
}

impl AngleSchedule {
    pub fn new(angles_per_step: usize, increment: f64, steps: usize) -> Result<Self> {
        if angles_per_step == 0 {
            return Err(Error::InvalidParameter("at least one angle per step is required".into()));
        }
        if !(increment >= 0.0) || !increment.is_finite() {
            return Err(Error::InvalidParameter("angle increment must be non-negative".into()));
        }
        Ok(Self { angles_per_step, increment, steps })
    }

    /// Angles (degrees) for step `k ≥ 1`: `(j·180/A + (k−1)·δ) mod 180`.
    pub fn angles(&self, k: usize) -> Vec<f64> {
        schedule_angles(self, k)
    }
}

pub fn schedule_angles(sched: &AngleSchedule, k: usize) -> Vec<f64> {
    let a = sched.angles_per_step as f64;
    let offset = k.saturating_sub(1) as f64 * sched.increment;
    (0..sched.angles_per_step)
        .map(|j| {
            let v = (j as f64 * 180.0 / a + offset).rem_euclid(180.0);
            // rem_euclid can round up to exactly 180 for tiny negative inputs
            if v >= 180.0 {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Line-integral measurements for one time step, row-major `angles × detectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T: Real> {
    geometry: ScanGeometry,
    values: DVector<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn new(geometry: ScanGeometry, values: DVector<T>) -> Result<Self> {
        if values.len() != geometry.measurements() {
            return Err(Error::DimensionMismatch(format!(
                "sinogram needs {} values, got {}",
                geometry.measurements(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sinogram contains non-finite values".into()));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        let m = geometry.measurements();
        Self { geometry, values: DVector::zeros(m) }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.values
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<T> {
        &mut self.values
    }

    pub fn into_vector(self) -> DVector<T> {
        self.values
    }

    pub fn value(&self, angle: usize, detector: usize) -> T {
        self.values[angle * self.geometry.detector_count + detector]
    }
}

/// Cached intersection lengths of one geometry in compressed-row form.
#[derive(Debug, Clone)]
pub struct Projector<T: Real> {
    geometry: ScanGeometry,
    row_start: Vec<usize>,
    pixel: Vec<u32>,
    length: Vec<T>,
}

impl<T: Real> Projector<T> {
    pub fn new(geometry: &ScanGeometry) -> Self {
        let m = geometry.measurements();
        let mut row_start = Vec::with_capacity(m + 1);
        let mut pixel = Vec::new();
        let mut length = Vec::new();
        row_start.push(0);
        for a in 0..geometry.angles.len() {
            for t in 0..geometry.detector_count {
                geometry.trace_ray(a, t, |p, l| {
                    pixel.push(p as u32);
                    length.push(lit::<T>(l));
                });
                row_start.push(pixel.len());
            }
        }
        Self { geometry: geometry.clone(), row_start, pixel, length }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    fn row_dot(&self, row: usize, x: &[T]) -> T {
        let mut acc = T::zero();
        for k in self.row_start[row]..self.row_start[row + 1] {
            acc += self.length[k] * x[self.pixel[k] as usize];
        }
        acc
    }

    fn forward_slice(&self, x: &[T]) -> DVector<T> {
        DVector::from_iterator(self.geometry.measurements(), (0..self.geometry.measurements()).map(|i| self.row_dot(i, x)))
    }

    pub fn forward(&self, image: &Image<T>) -> Result<Sinogram<T>> {
        image.check_size(self.geometry.image_size)?;
        Ok(Sinogram { geometry: self.geometry.clone(), values: self.forward_slice(image.as_slice()) })
    }

    /// Forward projection of a raw vectorized image.
    pub fn forward_vector(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let n2 = self.geometry.image_size * self.geometry.image_size;
        if x.len() != n2 {
            return Err(Error::DimensionMismatch(format!("expected {n2} pixels, got {}", x.len())));
        }
        Ok(self.forward_slice(x.as_slice()))
    }

    pub fn adjoint(&self, sino: &Sinogram<T>) -> Result<Image<T>> {
        if sino.geometry != self.geometry {
            return Err(Error::DimensionMismatch("sinogram geometry differs from projector geometry".into()));
        }
        Image::from_vector(self.geometry.image_size, self.adjoint_vector(&sino.values)?)
    }

    pub fn adjoint_vector(&self, y: &DVector<T>) -> Result<DVector<T>> {
        let m = self.geometry.measurements();
        if y.len() != m {
            return Err(Error::DimensionMismatch(format!("expected {m} measurements, got {}", y.len())));
        }
        let n2 = self.geometry.image_size * self.geometry.image_size;
        let mut out = DVector::zeros(n2);
        for i in 0..m {
            let yi = y[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                out[self.pixel[k] as usize] += self.length[k] * yi;
            }
        }
        Ok(out)
    }

    /// `H M` for an N²×c matrix, one column at a time.
    pub fn apply_columns(&self, columns: &DMatrix<T>) -> Result<DMatrix<T>> {
        let n2 = self.geometry.image_size * self.geometry.image_size;
        if columns.nrows() != n2 {
            return Err(Error::DimensionMismatch(format!(
                "columns have {} rows, projector expects {n2}",
                columns.nrows()
            )));
        }
        let m = self.geometry.measurements();
        let projected: Vec<DVector<T>> = (0..columns.ncols())
            .into_par_iter()
            .map(|j| self.forward_slice(columns.column(j).as_slice()))
            .collect();
        let mut out = DMatrix::zeros(m, columns.ncols());
        for (j, col) in projected.iter().enumerate() {
            out.set_column(j, col);
        }
        Ok(out)
    }

    /// `H P_r`, applying the projector to each basis column.
    pub fn reduced_operator(&self, basis: &BasisProjection<T>) -> Result<DMatrix<T>> {
        if basis.target_grid() != self.geometry.image_size {
            return Err(Error::DimensionMismatch(format!(
                "basis is {0}x{0} but geometry is {1}x{1}",
                basis.target_grid(),
                self.geometry.image_size
            )));
        }
        self.apply_columns(basis.columns())
    }

    /// Dense measurement matrix. Oracle scale only.
    pub fn to_dense(&self) -> DMatrix<T> {
        let n2 = self.geometry.image_size * self.geometry.image_size;
        let m = self.geometry.measurements();
        let mut h = DMatrix::zeros(m, n2);
        for i in 0..m {
            for k in self.row_start[i]..self.row_start[i + 1] {
                h[(i, self.pixel[k] as usize)] += self.length[k];
            }
        }
        h
    }
}

pub fn forward<T: Real>(image: &Image<T>, geom: &ScanGeometry) -> Result<Sinogram<T>> {
    Projector::new(geom).forward(image)
}

pub fn adjoint<T: Real>(sino: &Sinogram<T>, geom: &ScanGeometry) -> Result<Image<T>> {
    Projector::new(geom).adjoint(sino)
}

pub fn reduced_operator<T: Real>(basis: &BasisProjection<T>, geom: &ScanGeometry) -> Result<DMatrix<T>> {
    Projector::new(geom).reduced_operator(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = AngleSchedule::new(4, 3.0, 15).unwrap();
        assert_eq!(s.angles(1), vec![0.0, 45.0, 90.0, 135.0]);
        assert_eq!(s.angles(2), vec![3.0, 48.0, 93.0, 138.0]);
    }

    #[test]
    fn schedule_tiles_sixty_angles() {
        let s = AngleSchedule::new(4, 3.0, 15).unwrap();
        let mut all: Vec<f64> = (1..=15).flat_map(|k| s.angles(k)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup();
        assert_eq!(all.len(), 60);
        for w in all.windows(2) {
            assert!((w[1] - w[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(ScanGeometry::parallel(8, vec![180.0]).is_err());
        assert!(ScanGeometry::parallel(8, vec![-1.0]).is_err());
        assert!(ScanGeometry::new(vec![0.0], 0, 1.0, 8).is_err());
        assert!(ScanGeometry::new(vec![0.0], 4, 0.0, 8).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let g = ScanGeometry::parallel(6, vec![0.0, 33.0, 120.0]).unwrap();
        let p = Projector::<f64>::new(&g);
        assert_eq!(p.forward(&Image::zeros(6)).unwrap().as_vector().norm(), 0.0);
        assert_eq!(p.adjoint(&Sinogram::zeros(g.clone())).unwrap().norm(), 0.0);
    }

    #[test]
    fn single_pixel_vertical_ray() {
        let g = ScanGeometry::parallel(5, vec![0.0]).unwrap();
        let mut img = Image::<f64>::zeros(5);
        img.set(2, 3, 1.0);
        let s = forward(&img, &g).unwrap();
        // detector 3 passes through column 3's center
        assert!((s.value(0, 3) - 1.0).abs() < 1e-12);
        assert_eq!(s.as_vector().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let g = ScanGeometry::parallel(5, vec![0.0]).unwrap();
        assert!(forward(&Image::<f64>::zeros(4), &g).is_err());
        let other = ScanGeometry::parallel(5, vec![10.0]).unwrap();
        assert!(adjoint(&Sinogram::<f64>::zeros(other), &g).is_err());
    }

    #[test]
    fn single_ray_adjoint_support() {
        let g = ScanGeometry::parallel(6, vec![30.0]).unwrap();
        let p = Projector::<f64>::new(&g);
        let mut y = Sinogram::zeros(g.clone());
        y.as_vector_mut()[2] = 1.0;
        let back = p.adjoint(&y).unwrap();
        let mut crossed = [false; 36];
        g.trace_ray(0, 2, |pix, l| crossed[pix] |= l > 0.0);
        for (i, &v) in back.as_slice().iter().enumerate() {
            assert_eq!(v > 0.0, crossed[i], "pixel {i}");
        }
    }
}
