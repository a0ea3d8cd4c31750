//! Dimension-reduced Kalman filter.
//!
//! The state is parameterized as `x_k = x_k^p + P_r α_k`. The predicted
//! covariance `C^p = B Bᵀ + q² I` with `B = M P_r A` and `A Aᵀ = Ψ_{k−1}` is
//! never formed; every quantity the update needs reduces to r×r algebra via the
//! Woodbury identity.

mod flow;
mod motion;

pub use flow::{estimate_flow, FlowEstimate, FlowParams};
pub use motion::{flow_model, FlowField, MotionModel, WarpOperator};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{cholesky, psd_sqrt, symmetrize, t_mul};
use crate::prior::BasisProjection;
use crate::projector::{Projector, Sinogram};
use crate::recon::{posterior_coefficients, GaussianObservation};
use crate::scalar::{lit, Real};

/// Relative tolerance on negative eigenvalues of `P_rᵀ (C^p)⁻¹ P_r`.
const PRECISION_NEG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise<T: Real> {
    variance: T,
}

impl<T: Real> ProcessNoise<T> {
    pub fn new(variance: T) -> Result<Self> {
        if !(variance > T::zero()) {
            return Err(Error::InvalidParameter("process noise variance must be positive".into()));
        }
        Ok(Self { variance })
    }

    pub fn variance(&self) -> T {
        self.variance
    }
}

/// Filter state after an update: prior mean, coefficients and their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGaussianState<T: Real> {
    pub step: usize,
    pub prior_mean: DVector<T>,
    pub coefficients: DVector<T>,
    pub covariance: DMatrix<T>,
}

impl<T: Real> ReducedGaussianState<T> {
    /// `x^est = x^p + P_r α`.
    pub fn mean(&self, basis: &BasisProjection<T>) -> DVector<T> {
        &self.prior_mean + basis.expand(&self.coefficients)
    }

    pub fn mean_image(&self, basis: &BasisProjection<T>) -> Image<T> {
        Image::from_vector(basis.target_grid(), self.mean(basis)).expect("state matches basis grid")
    }

    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }
}

/// What the backward pass needs from one prediction: the motion model `M_k`,
/// the process noise, and the r×r gain `F = A (I + AᵀWᵀWA/q²)⁻¹ Aᵀ` with
/// `W = M_k P_r`, so that `(C^p)⁻¹ = q⁻² I − q⁻⁴ W F Wᵀ`.
#[derive(Debug, Clone)]
pub struct Transition<T: Real> {
    pub step: usize,
    pub motion: MotionModel<T>,
    pub noise_variance: T,
    pub gain: DMatrix<T>,
}

impl<T: Real> Transition<T> {
    /// Recomputes the transition into `step` from the previous covariance.
    pub fn rebuild(
        step: usize,
        motion: MotionModel<T>,
        previous_covariance: &DMatrix<T>,
        basis: &BasisProjection<T>,
        noise: &ProcessNoise<T>,
    ) -> Result<Self> {
        let moved = motion.apply_columns(basis.columns());
        let gram_ww = match &moved {
            None => basis.gram().clone(),
            Some(w) => t_mul(w, w),
        };
        let gain = woodbury_gain(previous_covariance, &gram_ww, noise.variance())?;
        Ok(Self { step, motion, noise_variance: noise.variance(), gain })
    }

    /// `W = M P_r`, or `None` when `M` is the identity.
    pub fn moved_basis(&self, basis: &BasisProjection<T>) -> Option<DMatrix<T>> {
        self.motion.apply_columns(basis.columns())
    }

    /// `Wᵀ (C^p)⁻¹ v` using only products with `W`.
    pub fn moved_inverse_apply(&self, moved: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
        let q2 = self.noise_variance;
        let u = moved.tr_mul(v);
        let t = moved * (&self.gain * &u);
        u / q2 - moved.tr_mul(&t) / (q2 * q2)
    }
}

/// `F = A (I + Aᵀ G A / q²)⁻¹ Aᵀ` with `A Aᵀ = Ψ`.
fn woodbury_gain<T: Real>(psi: &DMatrix<T>, gram_ww: &DMatrix<T>, q2: T) -> Result<DMatrix<T>> {
    let a = psd_sqrt(psi)?;
    let r = a.ncols();
    let mut inner = t_mul(&a, &(gram_ww * &a)) / q2;
    for i in 0..r {
        inner[(i, i)] += T::one();
    }
    symmetrize(&mut inner);
    let chol = cholesky(inner, "SMW inner matrix")?;
    let solved = chol.solve(&a.transpose());
    let mut gain = &a * solved;
    symmetrize(&mut gain);
    Ok(gain)
}

// one value per step, so the size gap between variants is irrelevant
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum PredictedPrior<T: Real> {
    /// Whitened prior `α ~ N(0, I)`, i.e. `C^p = P_r P_rᵀ`.
    Whitened,
    /// `C^p = B Bᵀ + q² I`.
    LowRank {
        transition: Transition<T>,
        sqrt_previous: DMatrix<T>,
        moved: Option<DMatrix<T>>,
        gram_pw: DMatrix<T>,
    },
}

/// Prior for step k: mean `x^p_k` and the implicit covariance `C^p_k`.
#[derive(Debug, Clone)]
pub struct PredictedState<T: Real> {
    pub step: usize,
    pub prior_mean: DVector<T>,
    prior: PredictedPrior<T>,
}

impl<T: Real> PredictedState<T> {
    /// First step: `x^p_1 = μ` with the whitened prior.
    pub fn initial(prior_mean: DVector<T>) -> Self {
        Self { step: 1, prior_mean, prior: PredictedPrior::Whitened }
    }

    pub fn transition(&self) -> Option<&Transition<T>> {
        match &self.prior {
            PredictedPrior::Whitened => None,
            PredictedPrior::LowRank { transition, .. } => Some(transition),
        }
    }

    pub fn into_transition(self) -> Option<Transition<T>> {
        match self.prior {
            PredictedPrior::Whitened => None,
            PredictedPrior::LowRank { transition, .. } => Some(transition),
        }
    }

    /// `B = M P_r A` (N²×r); `None` for the whitened first step.
    pub fn factor(&self, basis: &BasisProjection<T>) -> Option<DMatrix<T>> {
        match &self.prior {
            PredictedPrior::Whitened => None,
            PredictedPrior::LowRank { moved, sqrt_previous, .. } => {
                let w = moved.as_ref().unwrap_or(basis.columns());
                Some(w * sqrt_previous)
            }
        }
    }

    /// `P_rᵀ (C^p)⁻¹ P_r = G_pp/q² − G_pw F G_pwᵀ/q⁴`.
    pub fn projected_precision(&self, basis: &BasisProjection<T>) -> DMatrix<T> {
        match &self.prior {
            PredictedPrior::Whitened => DMatrix::identity(basis.rank(), basis.rank()),
            PredictedPrior::LowRank { transition, gram_pw, .. } => {
                let q2 = transition.noise_variance;
                let mut p = basis.gram() / q2 - gram_pw * (&transition.gain * gram_pw.transpose()) / (q2 * q2);
                symmetrize(&mut p);
                p
            }
        }
    }
}

/// Prediction `x^p_k = M(x^p_{k−1} + P_r α_{k−1})`, `C^p_k = B Bᵀ + q² I`.
pub fn predict<T: Real>(
    state: &ReducedGaussianState<T>,
    motion: MotionModel<T>,
    basis: &BasisProjection<T>,
    noise: &ProcessNoise<T>,
) -> Result<PredictedState<T>> {
    let estimate = state.mean(basis);
    let prior_mean = motion.apply(&estimate);
    let sqrt_previous = psd_sqrt(&state.covariance)?;
    let moved = motion.apply_columns(basis.columns());
    let (gram_ww, gram_pw) = match &moved {
        None => (basis.gram().clone(), basis.gram().clone()),
        Some(w) => (t_mul(w, w), t_mul(basis.columns(), w)),
    };
    let gain = woodbury_gain(&state.covariance, &gram_ww, noise.variance())?;
    let step = state.step + 1;
    let transition = Transition { step, motion, noise_variance: noise.variance(), gain };
    Ok(PredictedState { step, prior_mean, prior: PredictedPrior::LowRank { transition, sqrt_previous, moved, gram_pw } })
}

/// Measurement update:
/// `Ψ = ((HP)ᵀR⁻¹(HP) + P_rᵀ(C^p)⁻¹P_r)⁻¹`, `α = Ψ (HP)ᵀR⁻¹(y − H x^p)`.
pub fn update<T: Real>(
    pred: &PredictedState<T>,
    sino: &Sinogram<T>,
    basis: &BasisProjection<T>,
    obs: &GaussianObservation<T>,
) -> Result<ReducedGaussianState<T>> {
    let projector = Projector::new(sino.geometry());
    let hp = projector.reduced_operator(basis)?;
    let residual = sino.as_vector() - projector.forward_vector(&pred.prior_mean)?;
    let precision = pred.projected_precision(basis);
    check_precision(&precision)?;
    let (coefficients, covariance) = posterior_coefficients(&hp, &residual, obs.noise_variance(), precision)?;
    Ok(ReducedGaussianState { step: pred.step, prior_mean: pred.prior_mean.clone(), coefficients, covariance })
}

fn check_precision<T: Real>(precision: &DMatrix<T>) -> Result<()> {
    if cholesky(precision.clone(), "prior precision").is_ok() {
        return Ok(());
    }
    let eig = SymmetricEigen::new(precision.clone());
    let max = eig.eigenvalues.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let min = eig.eigenvalues.iter().fold(max, |m, &x| m.min(x));
    if min < -max * lit(PRECISION_NEG_TOL) {
        return Err(Error::Singular(format!(
            "projected prior precision has eigenvalue {:e} (max {:e})",
            min.to_f64().unwrap_or(f64::NAN),
            max.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonNegativity {
    /// Clamp only the reported image; the filter state is untouched.
    #[default]
    Output,
    /// Clamp and project back: `α ←` least-squares coefficients of `x⁺ − x^p`.
    Feedback,
    Off,
}

/// Returns the (possibly modified) state and the reported image.
pub fn clamp_nonnegative<T: Real>(
    state: &ReducedGaussianState<T>,
    basis: &BasisProjection<T>,
    mode: NonNegativity,
) -> Result<(ReducedGaussianState<T>, Image<T>)> {
    let mean = state.mean(basis);
    if mode == NonNegativity::Off {
        return Ok((state.clone(), Image::from_vector(basis.target_grid(), mean)?));
    }
    let clamped = mean.map(|v| v.max(T::zero()));
    let image = Image::from_vector(basis.target_grid(), clamped.clone())?;
    match mode {
        NonNegativity::Output | NonNegativity::Off => Ok((state.clone(), image)),
        NonNegativity::Feedback => {
            let chol = cholesky(basis.gram().clone(), "basis Gram matrix")?;
            let rhs = basis.columns().tr_mul(&(clamped - &state.prior_mean));
            let coefficients = chol.solve(&rhs);
            Ok((ReducedGaussianState { coefficients, ..state.clone() }, image))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MotionPolicy {
    #[default]
    Identity,
    /// Warp by optical flow between the two latest reported frames for every
    /// prediction into a step after `start_step`.
    Flow { start_step: usize },
}

/// Acceptance test for an estimated flow field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowGate {
    /// Warping must reduce the frame-difference norm to at most this fraction.
    pub residual_ratio: f64,
}

impl Default for FlowGate {
    fn default() -> Self {
        Self { residual_ratio: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig<T: Real> {
    pub observation: GaussianObservation<T>,
    pub process_noise: ProcessNoise<T>,
    pub motion: MotionPolicy,
    pub flow: FlowParams,
    pub gate: FlowGate,
    pub nonnegativity: NonNegativity,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(observation: GaussianObservation<T>, process_noise: ProcessNoise<T>) -> Self {
        Self {
            observation,
            process_noise,
            motion: MotionPolicy::Identity,
            flow: FlowParams::default(),
            gate: FlowGate::default(),
            nonnegativity: NonNegativity::Output,
        }
    }
}

/// One emitted filter step.
#[derive(Debug, Clone)]
pub struct FilterStep<T: Real> {
    pub state: ReducedGaussianState<T>,
    /// Reported image after the non-negativity policy.
    pub image: Image<T>,
    /// Prediction into this step; `None` for step 1.
    pub transition: Option<Transition<T>>,
    /// The flow policy was active but its estimate failed the gate.
    pub flow_rejected: bool,
}

/// Online filter: feed one sinogram per step.
pub struct DimReducedKalman<'a, T: Real> {
    basis: &'a BasisProjection<T>,
    config: FilterConfig<T>,
    last: Option<ReducedGaussianState<T>>,
    // reported images of the two latest steps, oldest first
    frames: Vec<Image<T>>,
}

impl<'a, T: Real> DimReducedKalman<'a, T> {
    pub fn new(basis: &'a BasisProjection<T>, config: FilterConfig<T>) -> Self {
        Self { basis, config, last: None, frames: Vec::new() }
    }

    /// Continues a run from previously filtered states (oldest first, at least the
    /// latest two when flow motion is used).
    pub fn resume(basis: &'a BasisProjection<T>, config: FilterConfig<T>, history: &[ReducedGaussianState<T>]) -> Result<Self> {
        let mut kf = Self::new(basis, config);
        for state in history.iter().rev().take(2).rev() {
            if state.rank() != basis.rank() || state.prior_mean.len() != basis.columns().nrows() {
                return Err(Error::CheckpointMismatch(format!("step {} does not match the basis", state.step)));
            }
            let (_, image) = clamp_nonnegative(state, basis, kf.config.nonnegativity)?;
            kf.frames.push(image);
        }
        kf.last = history.last().cloned();
        Ok(kf)
    }

    pub fn config(&self) -> &FilterConfig<T> {
        &self.config
    }

    fn motion_for(&self, step: usize) -> Result<(MotionModel<T>, bool)> {
        let MotionPolicy::Flow { start_step } = self.config.motion else {
            return Ok((MotionModel::Identity, false));
        };
        if step <= start_step || step < 3 || self.frames.len() < 2 {
            return Ok((MotionModel::Identity, false));
        }
        let (prev, next) = (&self.frames[0], &self.frames[1]);
        let est = estimate_flow(prev, next, &self.config.flow)?;
        if est.degenerate {
            log::warn!("step {step}: flow undefined on constant frames, using identity motion");
            return Ok((MotionModel::Identity, true));
        }
        let model = flow_model(est.field);
        let before = (next.as_vector() - prev.as_vector()).norm();
        let after = (next.as_vector() - model.apply(prev.as_vector())).norm();
        let limit = before * lit::<T>(self.config.gate.residual_ratio);
        if after <= limit || before == T::zero() {
            Ok((model, false))
        } else {
            log::warn!(
                "step {step}: optical flow unreliable (residual ratio {:.3} > {}), using identity motion",
                (after / before).to_f64().unwrap_or(f64::NAN),
                self.config.gate.residual_ratio
            );
            Ok((MotionModel::Identity, true))
        }
    }

    pub fn step(&mut self, sino: &Sinogram<T>) -> Result<FilterStep<T>> {
        let step = self.last.as_ref().map_or(1, |s| s.step + 1);
        self.step_inner(sino).map_err(|e| e.at_step(step))
    }

    fn step_inner(&mut self, sino: &Sinogram<T>) -> Result<FilterStep<T>> {
        let basis = self.basis;
        let (pred, flow_rejected) = match &self.last {
            None => {
                let mean = self.config.observation.prior_mean(basis.target_grid())?;
                (PredictedState::initial(mean.into_vector()), false)
            }
            Some(prev) => {
                let (motion, rejected) = self.motion_for(prev.step + 1)?;
                (predict(prev, motion, basis, &self.config.process_noise)?, rejected)
            }
        };
        let updated = update(&pred, sino, basis, &self.config.observation)?;
        let (state, image) = clamp_nonnegative(&updated, basis, self.config.nonnegativity)?;
        self.frames.push(image.clone());
        if self.frames.len() > 2 {
            self.frames.remove(0);
        }
        self.last = Some(state.clone());
        Ok(FilterStep { state, image, transition: pred.into_transition(), flow_rejected })
    }
}

/// Runs the filter over all steps.
pub fn run_filter<T: Real>(
    sinos: &[Sinogram<T>],
    basis: &BasisProjection<T>,
    config: &FilterConfig<T>,
) -> Result<Vec<FilterStep<T>>> {
    if sinos.is_empty() {
        return Err(Error::InvalidParameter("at least one time step is required".into()));
    }
    let mut kf = DimReducedKalman::new(basis, config.clone());
    sinos.iter().map(|s| kf.step(s)).collect()
}
