//! Ellipsoid-Gaussian log-density.
//!
//! Marginalizing the latent direction yields
//!
//! ```text
//! log f(x) = log C_k(tau) - (p/2) log 2pi - sum_j log sigma_j
//!            - (x-c)' Sigma^{-1} (x-c) / 2
//!            + log varsigma(tau mu + Lambda' Sigma^{-1} (x-c), Lambda' Sigma^{-1} Lambda / 2)
//! ```
//!
//! The quadratic Fisher-Bingham argument is shared by every data point, so
//! batched evaluation factors it once through [`FisherBinghamHandle`].

use super::EGParams;
use crate::error::{EgError, Result};
use crate::fisher_bingham::{FisherBinghamHandle, SaddlepointOrder};
use crate::special::log_vmf_const;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// How the Fisher-Bingham term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityEval {
    /// Numerically exact contour integration; the default.
    Exact,
    /// Truncated saddlepoint expansion; faster, percent-level worst case.
    Saddlepoint(SaddlepointOrder),
}

impl Default for DensityEval {
    fn default() -> Self {
        DensityEval::Exact
    }
}

/// Batched density evaluator for one fixed parameter set.
pub struct EgDensity {
    pub(crate) c: DVector<f64>,
    pub(crate) lambda: DMatrix<f64>,
    pub(crate) mu: DVector<f64>,
    pub(crate) tau: f64,
    /// 1 / sigma_j^2
    pub(crate) dinv: DVector<f64>,
    /// log C_k(tau) - (p/2) log 2pi - sum log sigma_j
    pub(crate) log_norm: f64,
    pub(crate) fb: FisherBinghamHandle,
    pub(crate) eval: DensityEval,
}

impl EgDensity {
    pub fn new(params: &EGParams) -> Result<Self> {
        Self::with_eval(params, DensityEval::Exact)
    }

    pub fn with_eval(params: &EGParams, eval: DensityEval) -> Result<Self> {
        params.validate()?;
        Self::from_raw(&params.c, &params.lambda(), &params.mu, params.tau, &params.sigma2, eval)
    }

    /// Build from a raw loadings matrix (no orthonormal factorization
    /// required); the density depends on Lambda only through the
    /// Fisher-Bingham arguments, which makes the rotation
    /// non-identifiability (Lambda G', G mu) directly visible.
    pub fn from_raw(
        c: &DVector<f64>,
        lambda: &DMatrix<f64>,
        mu: &DVector<f64>,
        tau: f64,
        sigma2: &DVector<f64>,
        eval: DensityEval,
    ) -> Result<Self> {
        let p = c.len();
        let k = mu.len();
        if lambda.nrows() != p || lambda.ncols() != k || sigma2.len() != p {
            return Err(EgError::dimension(format!(
                "loadings are {}x{}, expected {p}x{k}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        if sigma2.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(EgError::domain("noise variances must be positive".to_string()));
        }
        let dinv = sigma2.map(|v| 1.0 / v);
        let mut a = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let mut acc = 0.0;
                for r in 0..p {
                    acc += lambda[(r, i)] * dinv[r] * lambda[(r, j)];
                }
                a[(i, j)] = 0.5 * acc;
                a[(j, i)] = 0.5 * acc;
            }
        }
        let fb = FisherBinghamHandle::new(&a)?;
        let log_norm = log_vmf_const(k, tau)? - 0.5 * p as f64 * (2.0 * PI).ln()
            + 0.5 * dinv.iter().map(|d| d.ln()).sum::<f64>();
        Ok(EgDensity {
            c: c.clone(),
            lambda: lambda.clone(),
            mu: mu.clone(),
            tau,
            dinv,
            log_norm,
            fb,
            eval,
        })
    }

    pub fn p(&self) -> usize {
        self.c.len()
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// gamma(x) = tau mu + Lambda' Sigma^{-1} (x - c) and the Gaussian
    /// quadratic form (x-c)' Sigma^{-1} (x-c).
    pub(crate) fn gamma_and_quad(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        if x.len() != self.p() {
            return Err(EgError::dimension(format!(
                "point has dimension {} but the distribution has p = {}",
                x.len(),
                self.p()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EgError::domain("point has non-finite entries".to_string()));
        }
        let r = x - &self.c;
        let dr = DVector::from_fn(self.p(), |j, _| self.dinv[j] * r[j]);
        let gamma = self.tau * &self.mu + self.lambda.transpose() * &dr;
        let quad = r.dot(&dr);
        Ok((gamma, r, quad))
    }

    fn fb_term(&self, gamma: &DVector<f64>) -> Result<f64> {
        match self.eval {
            DensityEval::Exact => self.fb.log_const_exact(gamma),
            DensityEval::Saddlepoint(order) => self.fb.log_const(gamma, order),
        }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let (gamma, _r, quad) = self.gamma_and_quad(x)?;
        let fb = self.fb_term(&gamma).map_err(|e| {
            EgError::numerical(format!("{e} while evaluating the density at x = {:?}", x.as_slice()))
        })?;
        Ok(self.log_norm - 0.5 * quad + fb)
    }
}

/// One-shot log-density with the default (exact) Fisher-Bingham evaluation.
pub fn eg_log_density(x: &DVector<f64>, params: &EGParams) -> Result<f64> {
    EgDensity::new(params)?.log_density(x)
}
