//! Gaussian prior covariance on a pixel grid and its truncated-SVD basis.
//!
//! The covariance between pixels `i` and `j` is `σ² exp(−d²/(2l²))` with `d`
//! the Euclidean distance between pixel centers on the integer lattice (no
//! wrap-around). The basis columns are `√s_i u_i` for the leading singular
//! pairs, so `P_rᵀ Σ⁻¹ P_r = I_r`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::t_mul;
use crate::scalar::{lit, Real};

/// Modes with `s_i < SINGULAR_FLOOR · s_1` are refused.
pub const SINGULAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel<T: Real> {
    variance: T,
    length: T,
    grid: usize,
}

impl<T: Real> CovarianceModel<T> {
    pub fn new(variance: T, length: T, grid: usize) -> Result<Self> {
        if !(variance > T::zero()) {
            return Err(Error::InvalidParameter("prior variance must be positive".into()));
        }
        if !(length > T::zero()) {
            return Err(Error::InvalidParameter("correlation length must be positive".into()));
        }
        if grid < 2 {
            return Err(Error::InvalidParameter("prior grid must have at least 2 pixels per side".into()));
        }
        Ok(Self { variance, length, grid })
    }

    /// Convenience constructor from a standard deviation.
    pub fn from_std(sigma: T, length: T, grid: usize) -> Result<Self> {
        Self::new(sigma * sigma, length, grid)
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn length(&self) -> T {
        self.length
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn pixels(&self) -> usize {
        self.grid * self.grid
    }

    /// `σ² exp(−d²/(2l²))` between row-major pixel indices `i` and `j`.
    pub fn covariance_entry(&self, i: usize, j: usize) -> T {
        let n = self.grid;
        let dr = (i / n) as f64 - (j / n) as f64;
        let dc = (i % n) as f64 - (j % n) as f64;
        self.kernel(lit(dr * dr + dc * dc))
    }

    fn kernel(&self, d2: T) -> T {
        let two = lit::<T>(2.0);
        self.variance * (-d2 / (two * self.length * self.length)).exp()
    }

    /// Dense n²×n² covariance. Only sensible for small grids.
    pub fn dense(&self) -> DMatrix<T> {
        let m = self.pixels();
        DMatrix::from_fn(m, m, |i, j| self.covariance_entry(i, j))
    }

    /// Unit-variance 1-D factor: `Σ = σ² (K₁ ⊗ K₁)`.
    fn factor_1d(&self) -> DMatrix<T> {
        let n = self.grid;
        let one = Self { variance: T::one(), ..*self };
        DMatrix::from_fn(n, n, |a, b| {
            let d = a as f64 - b as f64;
            one.kernel(lit(d * d))
        })
    }
}

/// Truncated-SVD projection basis `P_r = U_r S_r^{1/2}`.
#[derive(Debug, Clone)]
pub struct BasisProjection<T: Real> {
    columns: DMatrix<T>,
    singular_values: Vec<T>,
    source_grid: usize,
    target_grid: usize,
    variance: T,
    length: T,
    gram: OnceLock<DMatrix<T>>,
}

impl<T: Real> BasisProjection<T> {
    /// Assembles a basis from raw parts, e.g. after reading it from disk.
    pub fn from_parts(
        columns: DMatrix<T>,
        singular_values: Vec<T>,
        source_grid: usize,
        target_grid: usize,
        variance: T,
        length: T,
    ) -> Result<Self> {
        if columns.nrows() != target_grid * target_grid {
            return Err(Error::DimensionMismatch(format!(
                "basis columns have {} rows, expected {}",
                columns.nrows(),
                target_grid * target_grid
            )));
        }
        if columns.ncols() != singular_values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} singular values",
                columns.ncols(),
                singular_values.len()
            )));
        }
        if singular_values.windows(2).any(|w| w[1] > w[0]) || singular_values.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidParameter("singular values must be positive and non-increasing".into()));
        }
        Ok(Self {
            columns,
            singular_values,
            source_grid,
            target_grid,
            variance,
            length,
            gram: OnceLock::new(),
        })
    }

    pub fn columns(&self) -> &DMatrix<T> {
        &self.columns
    }

    pub fn column_image(&self, j: usize) -> crate::Image<T> {
        crate::Image::from_vector(self.target_grid, self.columns.column(j).into_owned())
            .expect("basis column length matches target grid")
    }

    pub fn singular_values(&self) -> &[T] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn source_grid(&self) -> usize {
        self.source_grid
    }

    pub fn target_grid(&self) -> usize {
        self.target_grid
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn length(&self) -> T {
        self.length
    }

    /// `P_rᵀ P_r`, computed once on first use.
    pub fn gram(&self) -> &DMatrix<T> {
        self.gram.get_or_init(|| {
            let mut g = t_mul(&self.columns, &self.columns);
            crate::linalg::symmetrize(&mut g);
            g
        })
    }

    /// `P_r α` as a vectorized image.
    pub fn expand(&self, alpha: &DVector<T>) -> DVector<T> {
        &self.columns * alpha
    }
}

fn check_rank(rank: usize, capacity: usize) -> Result<()> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    if rank > capacity {
        return Err(Error::RankExceedsGrid { rank, capacity });
    }
    Ok(())
}

fn check_floor<T: Real>(values: &[T]) -> Result<()> {
    let s1 = values[0];
    let floor = s1 * lit(SINGULAR_FLOOR);
    if !(s1 > T::zero()) {
        return Err(Error::NumericalRank { index: 1, value: to_f64(s1), floor: 0.0 });
    }
    if let Some((i, &s)) = values.iter().enumerate().find(|(_, &s)| !(s >= floor)) {
        return Err(Error::NumericalRank { index: i + 1, value: to_f64(s), floor: to_f64(floor) });
    }
    Ok(())
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Flip `v` so that its largest-magnitude entry is positive.
fn fix_sign<T: Real>(mut v: DVector<T>) -> DVector<T> {
    let mut pivot = T::zero();
    for &x in v.iter() {
        if x.abs() > pivot.abs() {
            pivot = x;
        }
    }
    if pivot < T::zero() {
        v.neg_mut();
    }
    v
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn sorted_eigen<T: Real>(m: DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n = eig.eigenvectors.nrows();
    let mut vectors = DMatrix::zeros(n, order.len());
    let mut values = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &fix_sign(eig.eigenvectors.column(src).into_owned()));
    }
    (values, vectors)
}

/// Leading `rank` factor `U_r S_r^{1/2}` of any symmetric positive semi-definite
/// matrix, with its singular values.
pub fn truncated_factor<T: Real>(sigma: &DMatrix<T>, rank: usize) -> Result<(DMatrix<T>, Vec<T>)> {
    if !sigma.is_square() {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    check_rank(rank, sigma.nrows())?;
    let (values, vectors) = sorted_eigen(sigma.clone());
    let values = values[..rank].to_vec();
    check_floor(&values)?;
    let mut columns = vectors.columns(0, rank).into_owned();
    for (j, &s) in values.iter().enumerate() {
        columns.column_mut(j).scale_mut(s.sqrt());
    }
    Ok((columns, values))
}

/// Basis from the eigendecomposition of the dense n²×n² covariance.
pub fn build_basis<T: Real>(model: &CovarianceModel<T>, rank: usize) -> Result<BasisProjection<T>> {
    check_rank(rank, model.pixels())?;
    let (columns, values) = truncated_factor(&model.dense(), rank)?;
    BasisProjection::from_parts(columns, values, model.grid, model.grid, model.variance, model.length)
}

/// Same basis as [`build_basis`] from two n×n eigendecompositions.
///
/// The Gaussian kernel separates over the two axes, so `Σ = σ² (K₁ ⊗ K₁)`
/// and its eigenpairs are products of the 1-D ones.
pub fn build_basis_kronecker<T: Real>(model: &CovarianceModel<T>, rank: usize) -> Result<BasisProjection<T>> {
    check_rank(rank, model.pixels())?;
    let n = model.grid;
    let (lambda, vectors) = sorted_eigen(model.factor_1d());
    let lambda: Vec<T> = lambda.into_iter().map(|l| l.max(T::zero())).collect();

    let mut pairs: Vec<(T, usize, usize)> = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            pairs.push((model.variance * lambda[a] * lambda[b], a, b));
        }
    }
    // stable: ties keep (a, b) enumeration order
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
    pairs.truncate(rank);
    let values: Vec<T> = pairs.iter().map(|p| p.0).collect();
    check_floor(&values)?;

    let mut columns = DMatrix::zeros(n * n, rank);
    for (j, &(s, a, b)) in pairs.iter().enumerate() {
        let scale = s.sqrt();
        let mut col = columns.column_mut(j);
        for row in 0..n {
            let va = vectors[(row, a)] * scale;
            for c in 0..n {
                col[row * n + c] = va * vectors[(c, b)];
            }
        }
    }
    BasisProjection::from_parts(columns, values, n, n, model.variance, model.length)
}

/// Source sampling for one axis: `(i0, t)` with value `(1−t) f[i0] + t f[i0+1]`.
///
/// Pixel centers of both grids are aligned on the unit interval; target
/// centers in the outer half-pixel margin extrapolate linearly from the edge
/// cell, so affine functions are reproduced exactly.
fn axis_weights(source: usize, target: usize) -> Vec<(usize, f64)> {
    (0..target)
        .map(|j| {
            let u = (j as f64 + 0.5) * source as f64 / target as f64 - 0.5;
            let i0 = (u.floor().max(0.0) as usize).min(source - 2);
            (i0, u - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of a row-major `source`×`source` image to `target`×`target`.
pub(crate) fn resample<T: Real>(values: &[T], source: usize, target: usize, out: &mut [T]) {
    let w = axis_weights(source, target);
    // interpolate along columns (x) first
    let mut rows = vec![T::zero(); source * target];
    for r in 0..source {
        for (c, &(i0, t)) in w.iter().enumerate() {
            let t = lit::<T>(t);
            rows[r * target + c] = values[r * source + i0] * (T::one() - t) + values[r * source + i0 + 1] * t;
        }
    }
    for (r, &(i0, t)) in w.iter().enumerate() {
        let t = lit::<T>(t);
        for c in 0..target {
            out[r * target + c] = rows[i0 * target + c] * (T::one() - t) + rows[(i0 + 1) * target + c] * t;
        }
    }
}

/// Resamples every basis column to an N×N grid. Singular values are carried
/// over unchanged and the columns are not renormalized.
pub fn interpolate_basis<T: Real>(basis: &BasisProjection<T>, target: usize) -> Result<BasisProjection<T>> {
    let source = basis.target_grid;
    if target < source {
        return Err(Error::ShrinkNotSupported { source_grid: source, target });
    }
    let r = basis.rank();
    let mut columns = DMatrix::zeros(target * target, r);
    for j in 0..r {
        let src = basis.columns.column(j);
        let mut dst = columns.column_mut(j);
        resample(src.as_slice(), source, target, dst.as_mut_slice());
    }
    BasisProjection::from_parts(
        columns,
        basis.singular_values.clone(),
        basis.source_grid,
        target,
        basis.variance,
        basis.length,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn covariance_entry_values() {
        let m = CovarianceModel::from_std(1.0, 3.0, 10).unwrap();
        assert_eq!(m.covariance_entry(0, 0), 1.0);
        // d = 3 along a row
        assert!(close(m.covariance_entry(0, 3), (-0.5f64).exp(), 1e-15));
        assert!(close(m.covariance_entry(0, 30), 0.606531, 1e-6));
        let m = CovarianceModel::from_std(0.1, 1.5, 10).unwrap();
        assert!(close(m.covariance_entry(7, 7), 0.01, 1e-15));
    }

    #[test]
    fn covariance_is_symmetric() {
        let m = CovarianceModel::from_std(0.7, 1.3, 6).unwrap();
        for i in 0..36 {
            for j in 0..36 {
                assert_eq!(m.covariance_entry(i, j), m.covariance_entry(j, i));
            }
        }
    }

    #[test]
    fn model_validation() {
        assert!(CovarianceModel::new(0.0, 1.0, 4).is_err());
        assert!(CovarianceModel::new(1.0, -1.0, 4).is_err());
        assert!(CovarianceModel::new(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn rank_checks() {
        let m = CovarianceModel::from_std(1.0, 1.0, 3).unwrap();
        assert!(matches!(build_basis(&m, 10), Err(Error::RankExceedsGrid { rank: 10, capacity: 9 })));
        assert!(matches!(build_basis_kronecker(&m, 10), Err(Error::RankExceedsGrid { .. })));
        assert!(build_basis(&m, 0).is_err());
    }

    #[test]
    fn floor_refuses_numerically_null_modes() {
        let m = CovarianceModel::from_std(1.0, 1e6, 2).unwrap();
        assert!(matches!(build_basis_kronecker(&m, 4), Err(Error::NumericalRank { .. })));
    }

    #[test]
    fn fully_correlated_limit_gives_constant_mode() {
        let m = CovarianceModel::from_std(1.0, 1e6, 2).unwrap();
        let b = build_basis_kronecker(&m, 1).unwrap();
        let col = b.columns().column(0);
        for &v in col.iter() {
            assert!(close(v, 1.0, 1e-9));
        }
        assert!(close(b.singular_values()[0], 4.0, 1e-9));
    }

    #[test]
    fn interpolation_preserves_constants() {
        let src = vec![0.75f64; 16];
        let mut out = vec![0.0; 49];
        resample(&src, 4, 7, &mut out);
        assert!(out.iter().all(|&v| close(v, 0.75, 1e-15)));
    }

    #[test]
    fn interpolation_reproduces_ramps() {
        // ramp over x in unit coordinates: f = 2 + 3 * x_center
        let f = |c: usize, n: usize| 2.0 + 3.0 * (c as f64 + 0.5) / n as f64;
        let src: Vec<f64> = (0..16).map(|i| f(i % 4, 4)).collect();
        let mut out = vec![0.0; 64];
        resample(&src, 4, 8, &mut out);
        for (i, &v) in out.iter().enumerate() {
            assert!(close(v, f(i % 8, 8), 1e-13), "pixel {i}: {v}");
        }
    }

    #[test]
    fn interpolation_refuses_shrink() {
        let m = CovarianceModel::from_std(1.0, 1.0, 4).unwrap();
        let b = build_basis_kronecker(&m, 3).unwrap();
        assert!(matches!(interpolate_basis(&b, 3), Err(Error::ShrinkNotSupported { .. })));
        let same = interpolate_basis(&b, 4).unwrap();
        assert!((same.columns() - b.columns()).norm() < 1e-14);
    }
}
