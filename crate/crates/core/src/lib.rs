//! Prior-based dimension reduction for static and dynamic X-ray tomography.
//!
//! Reconstructions are parameterized as `x = x^p + P_r α` with a truncated-SVD
//! basis `P_r` of a Gaussian prior covariance, so every solve is r×r. The
//! crate provides the basis construction ([`prior`]), a matrix-free
//! parallel-beam projector ([`projector`]), static reduced Tikhonov/Bayes
//! solvers ([`recon`]), a dimension-reduced Kalman filter ([`filter`]) and
//! Rauch–Tung–Striebel smoother ([`smoother`]), phantom simulation ([`sim`]),
//! and binary containers for all artifacts ([`io`]).
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double-precision instantiations.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filter;
pub mod image;
pub mod io;
pub mod linalg;
pub mod prior;
pub mod projector;
pub mod recon;
pub mod scalar;
pub mod sim;
pub mod smoother;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Real;

pub type Image64 = Image<f64>;
pub type Image32 = Image<f32>;
pub type Basis64 = prior::BasisProjection<f64>;
pub type Basis32 = prior::BasisProjection<f32>;
pub type Sinogram64 = projector::Sinogram<f64>;
pub type Sinogram32 = projector::Sinogram<f32>;
pub type State64 = filter::ReducedGaussianState<f64>;
pub type FilterStep64 = filter::FilterStep<f64>;
pub type Smoothed64 = smoother::SmoothedState<f64>;
