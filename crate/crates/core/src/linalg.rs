//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// `aᵀ b` through the blocked GEMM path.
///
/// `Matrix::tr_mul` falls back to per-entry dot products, which is two orders
/// of magnitude slower for tall operands such as N²×r bases.
pub fn t_mul<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.transpose() * b
}

pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = lit::<T>(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn cholesky<T: Real>(m: DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse<T: Real>(m: DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// A factor `A` with `A Aᵀ = psi`.
///
/// Lower Cholesky factor when it exists; otherwise `U diag(sqrt(max(λ, floor)))`
/// from the symmetric eigendecomposition, with the floor at `1e-14 · λ_max`.
pub fn psd_sqrt<T: Real>(psi: &DMatrix<T>) -> Result<DMatrix<T>> {
    if let Some(chol) = Cholesky::new(psi.clone()) {
        return Ok(chol.l());
    }
    log::warn!("covariance not numerically SPD; falling back to clamped eigendecomposition");
    let eig = SymmetricEigen::new(psi.clone());
    let max = eig.eigenvalues.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if max <= T::zero() || !max.is_finite() {
        return Err(Error::Singular("covariance has no positive eigenvalue".into()));
    }
    let floor = max * lit(1e-14);
    let mut a = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(floor).sqrt();
        a.column_mut(j).scale_mut(s);
    }
    Ok(a)
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

/// Applies `(B Bᵀ + q² I)⁻¹` to the columns of `v` with the Woodbury identity.
///
/// Computes `q⁻² V − q⁻² B (Bᵀ B / q² + I)⁻¹ Bᵀ V / q²`, so the only
/// factorization is of the c×c inner matrix where c = `b.ncols()`.
pub fn smw_apply<T: Real>(b: &DMatrix<T>, q2: T, v: &DMatrix<T>) -> Result<DMatrix<T>> {
    if q2 <= T::zero() {
        return Err(Error::InvalidParameter("q² must be positive".into()));
    }
    if b.nrows() != v.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows but V has {}",
            b.nrows(),
            v.nrows()
        )));
    }
    let inv_q2 = T::one() / q2;
    let mut inner = t_mul(b, b) * inv_q2;
    for i in 0..inner.nrows() {
        inner[(i, i)] += T::one();
    }
    let chol = cholesky(inner, "SMW inner matrix")?;
    let btv = t_mul(b, v) * inv_q2;
    let solved = chol.solve(&btv);
    Ok((v - b * solved) * inv_q2)
}

pub fn spd_solve_vec<T: Real>(chol: &Cholesky<T, Dyn>, rhs: &DVector<T>) -> DVector<T> {
    chol.solve(rhs)
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute difference when `b` vanishes.
pub fn relative_difference<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom > T::zero() {
        diff / denom
    } else {
        diff
    }
}
