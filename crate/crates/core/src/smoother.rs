//! Dimension-reduced Rauch–Tung–Striebel backward pass.
//!
//! With `W = M_k P_r` and `(C^p_k)⁻¹ = q⁻² I − q⁻⁴ W F Wᵀ`, the smoothed mean
//! stays in the form `x^p_{k−1} + P_r α^s_{k−1}`, where
//! `α^s_{k−1} = α_{k−1} + Ψ_{k−1} Wᵀ (C^p_k)⁻¹ (x^s_k − x^p_k)`.
//! The covariance recursion is
//! `Ψ^s_{k−1} = Ψ + Ψ Dᵀ P_r Ψ^s_k P_rᵀ D Ψ − Ψ Dᵀ W Ψ` with `D = (C^p_k)⁻¹ W`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterStep, ReducedGaussianState, Transition};
use crate::image::Image;
use crate::linalg::{asymmetry, symmetrize, t_mul};
use crate::prior::BasisProjection;
use crate::scalar::{lit, Real};

/// Negative eigenvalues of `Ψ^s` down to `−NEG_EIG_TOL · max(1, λ_max)` are clamped to zero.
const NEG_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherMode {
    /// Means only.
    #[default]
    MeanOnly,
    WithCovariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedState<T: Real> {
    pub step: usize,
    /// Filter prior mean `x^p_k` of the same step.
    pub prior_mean: DVector<T>,
    pub coefficients: DVector<T>,
    pub covariance: Option<DMatrix<T>>,
}

impl<T: Real> SmoothedState<T> {
    /// Recursion start: the filter estimate at the final step.
    pub fn terminal(state: &ReducedGaussianState<T>, mode: SmootherMode) -> Self {
        Self {
            step: state.step,
            prior_mean: state.prior_mean.clone(),
            coefficients: state.coefficients.clone(),
            covariance: match mode {
                SmootherMode::MeanOnly => None,
                SmootherMode::WithCovariance => Some(state.covariance.clone()),
            },
        }
    }

    pub fn mean(&self, basis: &BasisProjection<T>) -> DVector<T> {
        &self.prior_mean + basis.expand(&self.coefficients)
    }

    pub fn mean_image(&self, basis: &BasisProjection<T>) -> Image<T> {
        Image::from_vector(basis.target_grid(), self.mean(basis)).expect("state matches basis grid")
    }
}

fn check_consistent<T: Real>(
    filtered: &ReducedGaussianState<T>,
    transition: &Transition<T>,
    next: &SmoothedState<T>,
    basis: &BasisProjection<T>,
) -> Result<()> {
    let r = basis.rank();
    let n2 = basis.columns().nrows();
    if transition.step != next.step || filtered.step + 1 != next.step {
        return Err(Error::CheckpointMismatch(format!(
            "steps do not chain: filtered {}, transition {}, smoothed {}",
            filtered.step, transition.step, next.step
        )));
    }
    if filtered.coefficients.len() != r
        || next.coefficients.len() != r
        || transition.gain.nrows() != r
        || filtered.prior_mean.len() != n2
        || next.prior_mean.len() != n2
    {
        return Err(Error::CheckpointMismatch("rank or grid differs from the basis".into()));
    }
    Ok(())
}

/// One backward step from `k` to `k − 1`.
pub fn backward_step<T: Real>(
    filtered_prev: &ReducedGaussianState<T>,
    transition: &Transition<T>,
    smooth_next: &SmoothedState<T>,
    basis: &BasisProjection<T>,
    mode: SmootherMode,
) -> Result<SmoothedState<T>> {
    check_consistent(filtered_prev, transition, smooth_next, basis)?;
    let moved_owned = transition.moved_basis(basis);
    let moved = moved_owned.as_ref().unwrap_or(basis.columns());

    // x^s_k − x^p_k = P_r α^s_k
    let innovation = basis.expand(&smooth_next.coefficients);
    let z = transition.moved_inverse_apply(moved, &innovation);
    let psi = &filtered_prev.covariance;
    let coefficients = &filtered_prev.coefficients + psi * z;

    let covariance = match (mode, &smooth_next.covariance) {
        (SmootherMode::MeanOnly, _) => None,
        (SmootherMode::WithCovariance, None) => {
            return Err(Error::CheckpointMismatch("next smoothed state carries no covariance".into()))
        }
        (SmootherMode::WithCovariance, Some(next_cov)) => {
            Some(smoothed_covariance(psi, next_cov, transition, moved_owned.as_ref(), basis)?)
        }
    };
    Ok(SmoothedState { step: filtered_prev.step, prior_mean: filtered_prev.prior_mean.clone(), coefficients, covariance })
}

fn smoothed_covariance<T: Real>(
    psi: &DMatrix<T>,
    next_cov: &DMatrix<T>,
    transition: &Transition<T>,
    moved: Option<&DMatrix<T>>,
    basis: &BasisProjection<T>,
) -> Result<DMatrix<T>> {
    let q2 = transition.noise_variance;
    let q4 = q2 * q2;
    let (gram_pw, gram_ww) = match moved {
        None => (basis.gram().clone(), basis.gram().clone()),
        Some(w) => (t_mul(basis.columns(), w), t_mul(w, w)),
    };
    let f = &transition.gain;
    // P_rᵀ D and Wᵀ D
    let pt_d = &gram_pw / q2 - &gram_pw * (f * &gram_ww) / q4;
    let wt_d = &gram_ww / q2 - &gram_ww * (f * &gram_ww) / q4;
    let dp_psi = &pt_d * psi;
    let mut out = psi + t_mul(&dp_psi, &(next_cov * &dp_psi)) - psi * (wt_d * psi);

    let drift = asymmetry(&out);
    let scale = out.norm().max(T::one());
    if drift > scale * lit(1e-8) {
        log::warn!("smoothed covariance asymmetry {:e} before symmetrization", drift.to_f64().unwrap_or(f64::NAN));
    }
    symmetrize(&mut out);
    clamp_negative(out)
}

fn clamp_negative<T: Real>(m: DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b));
    let min = eig.eigenvalues.iter().fold(max, |a, &b| a.min(b));
    if min >= T::zero() {
        return Ok(m);
    }
    let tol = max.max(T::one()) * lit(NEG_EIG_TOL);
    if min < -tol {
        return Err(Error::Singular(format!(
            "smoothed covariance has eigenvalue {:e}",
            min.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(T::zero()));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Backward pass over a complete filter run; returns states in forward order.
pub fn run_smoother<T: Real>(
    steps: &[FilterStep<T>],
    basis: &BasisProjection<T>,
    mode: SmootherMode,
) -> Result<Vec<SmoothedState<T>>> {
    let last = steps.last().ok_or_else(|| Error::InvalidParameter("at least one filter step is required".into()))?;
    let mut out = vec![SmoothedState::terminal(&last.state, mode)];
    for k in (1..steps.len()).rev() {
        let transition = steps[k]
            .transition
            .as_ref()
            .ok_or_else(|| Error::CheckpointMismatch(format!("step {} has no transition", steps[k].state.step)))?;
        let prev = backward_step(&steps[k - 1].state, transition, out.last().unwrap(), basis, mode)
            .map_err(|e| e.at_step(steps[k - 1].state.step))?;
        out.push(prev);
    }
    out.reverse();
    Ok(out)
}
