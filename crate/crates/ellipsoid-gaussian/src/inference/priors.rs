//! Weakly informative default priors, centered on the ellipsoid-fit
//! initializer:
//!
//! * c ~ Gaussian at the fitted center, per-coordinate sd = 2 x data sd,
//! * log s_j ~ Gaussian(mean of the fitted log lengths, sd 1),
//! * U ~ uniform (Haar) on the Stiefel manifold, mu ~ uniform on the sphere,
//! * tau ~ Gamma(shape 1, rate 0.1), sigma_j^2 ~ inverse-Gamma(1, 1).

use crate::ctef::EllipsoidFit;
use crate::dataset::Dataset;
use crate::eg::EGParams;
use crate::special::ln_gamma;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Priors {
    pub c_mean: Vec<f64>,
    pub c_sd: Vec<f64>,
    pub log_s_mean: f64,
    pub log_s_sd: f64,
    pub tau_shape: f64,
    pub tau_rate: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Priors {
    pub fn from_init(fit: &EllipsoidFit, data: &Dataset) -> Priors {
        let sds = data.column_sds();
        let log_s_mean = fit.lengths.iter().map(|a| a.max(1e-8).ln()).sum::<f64>() / fit.k() as f64;
        Priors {
            c_mean: fit.center.iter().cloned().collect(),
            c_sd: sds.iter().map(|s| (2.0 * s).max(1e-6)).collect(),
            log_s_mean,
            log_s_sd: 1.0,
            tau_shape: 1.0,
            tau_rate: 0.1,
            sigma2_shape: 1.0,
            sigma2_scale: 1.0,
        }
    }

    /// Joint log-prior evaluated at the parameters. The Gaussian blocks for c
    /// and log s are densities in c and log s; tau and sigma^2 carry their
    /// Gamma / inverse-Gamma densities in the natural scale. Uniform blocks
    /// (U, mu) contribute nothing.
    pub fn log_density(&self, params: &EGParams) -> f64 {
        let mut total = 0.0;
        for j in 0..params.p() {
            let sd = self.c_sd[j];
            let z = (params.c[j] - self.c_mean[j]) / sd;
            total += -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * z * z;
        }
        for j in 0..params.k() {
            let z = (params.s[j].max(1e-300).ln() - self.log_s_mean) / self.log_s_sd;
            total += -0.5 * (2.0 * PI).ln() - self.log_s_sd.ln() - 0.5 * z * z;
        }
        total += gamma_log_pdf(params.tau, self.tau_shape, self.tau_rate);
        for j in 0..params.p() {
            total += inv_gamma_log_pdf(params.sigma2[j], self.sigma2_shape, self.sigma2_scale);
        }
        total
    }

    /// d log-prior / d c.
    pub fn grad_c(&self, c: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(c.len(), |j, _| -(c[j] - self.c_mean[j]) / (self.c_sd[j] * self.c_sd[j]))
    }

    /// d log-prior / d log s.
    pub fn grad_log_s(&self, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(s.len(), |j, _| {
            -(s[j].max(1e-300).ln() - self.log_s_mean) / (self.log_s_sd * self.log_s_sd)
        })
    }
}

/// Gamma(shape a, rate b) log-density.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let log_x_term = if shape == 1.0 {
        0.0 // (a-1) ln x vanishes identically, including at x = 0
    } else if x == 0.0 {
        return if shape > 1.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    } else {
        (shape - 1.0) * x.ln()
    };
    shape * rate.ln() - ln_gamma(shape) + log_x_term - rate * x
}

/// Inverse-Gamma(shape a, scale b) log-density.
pub fn inv_gamma_log_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}
