//! Single-step reconstructions in the reduced basis, plus dense full-space
//! reference solvers for small grids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::{cholesky, spd_inverse, t_mul};
use crate::prior::BasisProjection;
use crate::projector::{Projector, Sinogram};
use crate::scalar::Real;

/// Largest image side accepted by the dense solvers.
pub const ORACLE_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TikhonovMode {
    /// `Γ = γI` on the image, i.e. penalty `γ² P_rᵀP_r = γ² S_r` on the coefficients.
    #[default]
    Whitened,
    /// Penalty `γ² I` directly on the coefficients.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TikhonovConfig<T: Real> {
    pub gamma: T,
    pub mode: TikhonovMode,
}

impl<T: Real> TikhonovConfig<T> {
    pub fn new(gamma: T, mode: TikhonovMode) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::InvalidParameter("Tikhonov weight must be positive".into()));
        }
        Ok(Self { gamma, mode })
    }
}

/// Observation noise `R = σ_obs² I` and an optional prior mean (zero if absent).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianObservation<T: Real> {
    noise_variance: T,
    prior_mean: Option<Image<T>>,
}

impl<T: Real> GaussianObservation<T> {
    pub fn new(noise_variance: T) -> Result<Self> {
        if !(noise_variance > T::zero()) {
            return Err(Error::InvalidParameter("observation noise variance must be positive".into()));
        }
        Ok(Self { noise_variance, prior_mean: None })
    }

    pub fn with_prior_mean(mut self, mean: Image<T>) -> Self {
        self.prior_mean = Some(mean);
        self
    }

    pub fn noise_variance(&self) -> T {
        self.noise_variance
    }

    pub fn prior_mean(&self, size: usize) -> Result<Image<T>> {
        match &self.prior_mean {
            Some(m) => {
                m.check_size(size)?;
                Ok(m.clone())
            }
            None => Ok(Image::zeros(size)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StaticEstimate<T: Real> {
    pub coefficients: DVector<T>,
    /// `Ψ` for the Bayesian solver; `None` for Tikhonov.
    pub covariance: Option<DMatrix<T>>,
    pub image: Image<T>,
}

fn check_basis<T: Real>(basis: &BasisProjection<T>, sino: &Sinogram<T>) -> Result<()> {
    if basis.target_grid() != sino.geometry().image_size() {
        return Err(Error::DimensionMismatch(format!(
            "basis is {0}x{0} but sinogram geometry is {1}x{1}",
            basis.target_grid(),
            sino.geometry().image_size()
        )));
    }
    Ok(())
}

/// Reduced Tikhonov: solves `((HP)ᵀ(HP) + γ² D) α = (HP)ᵀ y`.
pub fn tikhonov_reduced<T: Real>(
    sino: &Sinogram<T>,
    basis: &BasisProjection<T>,
    cfg: &TikhonovConfig<T>,
) -> Result<StaticEstimate<T>> {
    check_basis(basis, sino)?;
    let hp = Projector::new(sino.geometry()).reduced_operator(basis)?;
    tikhonov_with_operator(&hp, sino.as_vector(), basis, cfg)
}

/// As [`tikhonov_reduced`] with a precomputed `H P_r`.
pub fn tikhonov_with_operator<T: Real>(
    hp: &DMatrix<T>,
    y: &DVector<T>,
    basis: &BasisProjection<T>,
    cfg: &TikhonovConfig<T>,
) -> Result<StaticEstimate<T>> {
    let mut normal = t_mul(hp, hp);
    let g2 = cfg.gamma * cfg.gamma;
    for (i, &s) in basis.singular_values().iter().enumerate() {
        normal[(i, i)] += match cfg.mode {
            TikhonovMode::Whitened => g2 * s,
            TikhonovMode::Identity => g2,
        };
    }
    let chol = cholesky(normal, "Tikhonov normal matrix")?;
    let alpha = chol.solve(&(hp.transpose() * y));
    let image = Image::from_vector(basis.target_grid(), basis.expand(&alpha))?;
    Ok(StaticEstimate { coefficients: alpha, covariance: None, image })
}

/// Reduced Bayesian MAP with whitened prior:
/// `Ψ = ((HP)ᵀR⁻¹(HP) + I)⁻¹`, `α = Ψ (HP)ᵀR⁻¹(y − Hμ)`, image `μ + P_r α`.
pub fn bayes_reduced<T: Real>(
    sino: &Sinogram<T>,
    basis: &BasisProjection<T>,
    obs: &GaussianObservation<T>,
) -> Result<StaticEstimate<T>> {
    check_basis(basis, sino)?;
    let projector = Projector::new(sino.geometry());
    let hp = projector.reduced_operator(basis)?;
    let mu = obs.prior_mean(basis.target_grid())?;
    let residual = sino.as_vector() - projector.forward_vector(mu.as_vector())?;
    let (alpha, psi) = posterior_coefficients(&hp, &residual, obs.noise_variance(), DMatrix::identity(basis.rank(), basis.rank()))?;
    let image = Image::from_vector(basis.target_grid(), mu.as_vector() + basis.expand(&alpha))?;
    Ok(StaticEstimate { coefficients: alpha, covariance: Some(psi), image })
}

/// `Ψ = ((HP)ᵀ(HP)/σ² + prior_precision)⁻¹`, `α = Ψ (HP)ᵀ residual / σ²`.
pub(crate) fn posterior_coefficients<T: Real>(
    hp: &DMatrix<T>,
    residual: &DVector<T>,
    noise_variance: T,
    prior_precision: DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let inv_r = T::one() / noise_variance;
    let info = t_mul(hp, hp) * inv_r + prior_precision;
    let psi = spd_inverse(info, "posterior information matrix")?;
    let rhs = hp.transpose() * residual * inv_r;
    let alpha = &psi * rhs;
    Ok((alpha, psi))
}

fn check_oracle_scale(n: usize) -> Result<()> {
    if n > ORACLE_LIMIT {
        return Err(Error::OracleScaleExceeded { limit: ORACLE_LIMIT, got: n });
    }
    Ok(())
}

/// Full-space Tikhonov `(HᵀH + ΓᵀΓ)⁻¹ Hᵀ y`.
pub fn tikhonov_dense<T: Real>(sino: &Sinogram<T>, gamma: &DMatrix<T>) -> Result<Image<T>> {
    let n = sino.geometry().image_size();
    check_oracle_scale(n)?;
    let h = Projector::new(sino.geometry()).to_dense();
    if gamma.ncols() != n * n {
        return Err(Error::DimensionMismatch(format!("Γ must have {} columns", n * n)));
    }
    let normal = t_mul(&h, &h) + t_mul(gamma, gamma);
    let x = normal
        .lu()
        .solve(&(h.transpose() * sino.as_vector()))
        .ok_or_else(|| Error::Singular("dense Tikhonov normal matrix".into()))?;
    Image::from_vector(n, x)
}

/// Full-space Gaussian posterior: `C = (HᵀR⁻¹H + Σ⁻¹)⁻¹`, `x = μ + C HᵀR⁻¹(y − Hμ)`.
pub fn bayes_dense<T: Real>(
    sino: &Sinogram<T>,
    sigma: &DMatrix<T>,
    mean: &Image<T>,
    noise: &DMatrix<T>,
) -> Result<(Image<T>, DMatrix<T>)> {
    let n = sino.geometry().image_size();
    check_oracle_scale(n)?;
    mean.check_size(n)?;
    let m = sino.geometry().measurements();
    if sigma.shape() != (n * n, n * n) || noise.shape() != (m, m) {
        return Err(Error::DimensionMismatch("covariance shapes do not match the geometry".into()));
    }
    let h = Projector::new(sino.geometry()).to_dense();
    let r_inv = spd_inverse(noise.clone(), "observation covariance")?;
    let sigma_inv = spd_inverse(sigma.clone(), "prior covariance")?;
    let ht_rinv = h.transpose() * &r_inv;
    let cov = spd_inverse(&ht_rinv * &h + sigma_inv, "dense posterior information")?;
    let residual = sino.as_vector() - &h * mean.as_vector();
    let x = mean.as_vector() + &cov * (ht_rinv * residual);
    Ok((Image::from_vector(n, x)?, cov))
}
