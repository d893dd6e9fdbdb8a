//! Curved factor analysis with the Ellipsoid-Gaussian distribution.
//!
//! An Ellipsoid-Gaussian is the marginal law of a Gaussian linear factor model
//! whose latent factors live on the unit sphere with a von Mises-Fisher
//! distribution; its mass concentrates around a k-dimensional ellipsoid in
//! R^p, which lets it capture curved dependence that a plain Gaussian factor
//! model cannot.
//!
//! The crate provides:
//!
//! * [`special`] — log-scale Bessel functions and the vMF constants,
//! * [`vmf`] — von Mises-Fisher density and exact sampling,
//! * [`fisher_bingham`] — the Fisher-Bingham pseudo-normalizing constant via
//!   saddlepoint approximation (the computational core of the density),
//! * [`eg`] — the distribution itself: parameters, sampling, density,
//!   marginals, moments, MGF, gradients and Gaussian limits,
//! * [`ctef`] — Cayley-transform ellipsoid fitting used for initialization,
//! * [`inference`] — posterior sampling with a hybrid of geodesic
//!   stochastic-gradient Nosé-Hoover thermostat and robust adaptive Metropolis,
//! * [`postprocess`] — loadings alignment, posterior predictive draws,
//!   held-out predictive scoring, conditional curves and diagnostics,
//! * [`benchmarks`] — simulation-study data generators including the hybrid
//!   Rosenbrock benchmark.

pub mod benchmarks;
pub mod ctef;
pub mod dataset;
pub mod eg;
pub mod error;
pub mod inference;
mod optim;
pub mod fisher_bingham;
pub mod postprocess;
pub mod special;
pub mod vmf;

pub use crate::dataset::{Dataset, Standardization};
pub use crate::eg::{EGParams, EgDensity, EgGradient};
pub use crate::error::{EgError, Result};
pub use crate::fisher_bingham::{FbArgs, FisherBinghamHandle, SaddlepointOrder};
pub use crate::inference::{fit, FitConfig, PosteriorSamples, Priors};
