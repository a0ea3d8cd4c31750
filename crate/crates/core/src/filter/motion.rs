use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

/// Per-pixel displacement in pixels: `u` along columns (x), `v` along rows
/// (downwards), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T: Real> {
    size: usize,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros(size: usize) -> Self {
        Self { size, u: vec![T::zero(); size * size], v: vec![T::zero(); size * size] }
    }

    pub fn new(size: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if u.len() != size * size || v.len() != size * size {
            return Err(Error::DimensionMismatch(format!("flow components must have {} entries", size * size)));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("flow field contains non-finite values".into()));
        }
        Ok(Self { size, u, v })
    }

    pub fn uniform(size: usize, u: T, v: T) -> Self {
        Self { size, u: vec![u; size * size], v: vec![v; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn max_magnitude(&self) -> T {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(T::zero(), |m, x| m.max(x))
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| *x == T::zero())
    }
}

/// Backward bilinear warp: `(M x)(p) = x(p − d(p))`, zero outside the grid.
#[derive(Debug, Clone)]
pub struct WarpOperator<T: Real> {
    size: usize,
    // four (source pixel, weight) taps per output pixel; weight 0 marks an unused tap
    taps: Vec<[(u32, T); 4]>,
}

impl<T: Real> WarpOperator<T> {
    pub fn new(field: &FlowField<T>) -> Self {
        let n = field.size;
        let mut taps = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                let sr = T::from_usize(r).unwrap() - field.v[i];
                let sc = T::from_usize(c).unwrap() - field.u[i];
                taps.push(bilinear_taps(n, sr, sc));
            }
        }
        Self { size: n, taps }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn apply_slice(&self, x: &[T], out: &mut [T]) {
        for (o, taps) in out.iter_mut().zip(&self.taps) {
            let mut acc = T::zero();
            for &(p, w) in taps {
                if w != T::zero() {
                    acc += w * x[p as usize];
                }
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(x.len());
        self.apply_slice(x.as_slice(), out.as_mut_slice());
        out
    }
}

fn bilinear_taps<T: Real>(n: usize, sr: T, sc: T) -> [(u32, T); 4] {
    let mut taps = [(0u32, T::zero()); 4];
    let r0 = sr.floor();
    let c0 = sc.floor();
    let fr = sr - r0;
    let fc = sc - c0;
    let (r0, c0) = (r0.to_i64().unwrap_or(i64::MIN / 2), c0.to_i64().unwrap_or(i64::MIN / 2));
    let one = T::one();
    let corners = [
        (r0, c0, (one - fr) * (one - fc)),
        (r0, c0 + 1, (one - fr) * fc),
        (r0 + 1, c0, fr * (one - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (slot, &(r, c, w)) in taps.iter_mut().zip(&corners) {
        if r >= 0 && c >= 0 && (r as usize) < n && (c as usize) < n && w != T::zero() {
            *slot = ((r as usize * n + c as usize) as u32, w);
        }
    }
    taps
}

/// Linear state-transition model applied to images and basis columns.
#[derive(Debug, Clone)]
pub enum MotionModel<T: Real> {
    Identity,
    Flow { field: FlowField<T>, warp: WarpOperator<T> },
    /// Explicit N²×N² transition matrix, for small problems.
    Matrix(DMatrix<T>),
}

impl<T: Real> MotionModel<T> {
    pub fn identity() -> Self {
        MotionModel::Identity
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, MotionModel::Identity)
    }

    pub fn field(&self) -> Option<&FlowField<T>> {
        match self {
            MotionModel::Flow { field, .. } => Some(field),
            _ => None,
        }
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            MotionModel::Identity => x.clone(),
            MotionModel::Flow { warp, .. } => warp.apply(x),
            MotionModel::Matrix(m) => m * x,
        }
    }

    pub fn apply_image(&self, x: &Image<T>) -> Result<Image<T>> {
        match self {
            MotionModel::Flow { warp, .. } => x.check_size(warp.size())?,
            MotionModel::Matrix(m) if m.ncols() != x.as_vector().len() => {
                return Err(Error::DimensionMismatch("transition matrix does not match image".into()))
            }
            _ => {}
        }
        Image::from_vector(x.size(), self.apply(x.as_vector()))
    }

    /// `M C` column by column; `None` for the identity (no copy).
    pub fn apply_columns(&self, columns: &DMatrix<T>) -> Option<DMatrix<T>> {
        match self {
            MotionModel::Identity => None,
            MotionModel::Flow { warp, .. } => {
                let cols: Vec<Vec<T>> = (0..columns.ncols())
                    .into_par_iter()
                    .map(|j| {
                        let mut out = vec![T::zero(); columns.nrows()];
                        warp.apply_slice(columns.column(j).as_slice(), &mut out);
                        out
                    })
                    .collect();
                let mut m = DMatrix::zeros(columns.nrows(), columns.ncols());
                for (j, col) in cols.iter().enumerate() {
                    m.column_mut(j).copy_from_slice(col);
                }
                Some(m)
            }
            MotionModel::Matrix(m) => Some(m * columns),
        }
    }
}

/// Motion model that warps by `field`.
pub fn flow_model<T: Real>(field: FlowField<T>) -> MotionModel<T> {
    let warp = WarpOperator::new(&field);
    MotionModel::Flow { field, warp }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_exact_identity() {
        let m = flow_model(FlowField::<f64>::zeros(5));
        let x = DVector::from_fn(25, |i, _| (i as f64 * 0.37).sin());
        assert_eq!(m.apply(&x), x);
    }

    #[test]
    fn integer_shift_moves_delta() {
        let n = 6;
        let m = flow_model(FlowField::<f64>::uniform(n, 1.0, 0.0));
        let mut x = DVector::zeros(n * n);
        x[2 * n + 3] = 1.0;
        let y = m.apply(&x);
        assert_eq!(y[2 * n + 4], 1.0);
        assert_eq!(y.sum(), 1.0);
    }

    #[test]
    fn constant_preserved_for_in_bounds_samples() {
        let n = 8;
        // small displacement only in the interior
        let mut u = vec![0.0; n * n];
        let mut v = vec![0.0; n * n];
        for r in 2..6 {
            for c in 2..6 {
                u[r * n + c] = 0.3 * (r as f64 - 3.5);
                v[r * n + c] = -0.45;
            }
        }
        let m = flow_model(FlowField::new(n, u, v).unwrap());
        let x = DVector::from_element(n * n, 2.5);
        let y = m.apply(&x);
        for &val in y.iter() {
            assert!((val - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn outside_samples_are_zero() {
        let n = 4;
        let m = flow_model(FlowField::<f64>::uniform(n, 10.0, 0.0));
        let x = DVector::from_element(n * n, 1.0);
        assert_eq!(m.apply(&x).norm(), 0.0);
    }
}
