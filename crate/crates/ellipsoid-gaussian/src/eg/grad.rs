//! Gradients of the Ellipsoid-Gaussian log-density.
//!
//! Exact derivatives of the implemented density, with the Fisher-Bingham
//! gradient obtained by differentiating through the saddlepoint solution
//! (series orders) or through the contour moments (exact mode). Gradients
//! for the sphere and Stiefel blocks are returned tangent-projected.

use super::density::{DensityEval, EgDensity};
use super::EGParams;
use crate::error::Result;
use crate::special::bessel_ratio;
use nalgebra::{DMatrix, DVector};

/// Per-block gradient of the log-density.
///
/// `mu` lies in the tangent space of the sphere (mu' g = 0) and `u` in the
/// tangent space of the Stiefel manifold (U' g skew-symmetric). The noise
/// block is with respect to log sigma_j^2.
#[derive(Clone, Debug)]
pub struct EgGradient {
    pub c: DVector<f64>,
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub mu: DVector<f64>,
    pub tau: f64,
    pub log_sigma2: DVector<f64>,
}

/// Running sums over data points sharing one parameter set. All per-point
/// Fisher-Bingham gradients enter additively, so a whole minibatch reduces
/// to a handful of small matrices.
pub(crate) struct GradAccum {
    pub count: usize,
    pub log_lik: f64,
    sum_r: DVector<f64>,
    sum_r2: DVector<f64>,
    /// sum_i r_i g_gamma_i' (p x k)
    m_rg: DMatrix<f64>,
    sum_g: DVector<f64>,
    sum_ga: DMatrix<f64>,
}

impl GradAccum {
    pub fn new(p: usize, k: usize) -> Self {
        GradAccum {
            count: 0,
            log_lik: 0.0,
            sum_r: DVector::zeros(p),
            sum_r2: DVector::zeros(p),
            m_rg: DMatrix::zeros(p, k),
            sum_g: DVector::zeros(k),
            sum_ga: DMatrix::zeros(k, k),
        }
    }
}

impl EgDensity {
    /// Evaluate the log-density at `x` and fold its gradient contributions
    /// into the accumulator. Returns the point's log-density.
    pub(crate) fn accumulate_grad(&self, x: &DVector<f64>, acc: &mut GradAccum) -> Result<f64> {
        let (gamma, r, quad) = self.gamma_and_quad(x)?;
        let (fb_val, g_gamma, ga) = match self.eval {
            DensityEval::Exact => self.fb.log_const_exact_with_grad(&gamma)?,
            DensityEval::Saddlepoint(order) => self.fb.log_const_with_grad(&gamma, order)?,
        };
        let ll = self.log_norm - 0.5 * quad + fb_val;
        acc.count += 1;
        acc.log_lik += ll;
        acc.sum_r += &r;
        for j in 0..r.len() {
            acc.sum_r2[j] += r[j] * r[j];
        }
        acc.m_rg += &r * g_gamma.transpose();
        acc.sum_g += g_gamma;
        acc.sum_ga += ga;
        Ok(ll)
    }
}

/// Chain the accumulated Fisher-Bingham gradients into parameter blocks,
/// scaling the whole likelihood contribution by `scale`.
pub(crate) fn gradient_from_accum(
    params: &EGParams,
    dens: &EgDensity,
    acc: &GradAccum,
    scale: f64,
) -> EgGradient {
    let p = params.p();
    let k = params.k();
    let dinv = &dens.dinv;
    let lambda = params.lambda();
    let count = acc.count as f64;

    // c block: sum_i D (r_i - Lambda g_i)
    let c_grad = DVector::from_fn(p, |j, _| {
        let lam_g: f64 = (0..k).map(|l| lambda[(j, l)] * acc.sum_g[l]).sum();
        scale * dinv[j] * (acc.sum_r[j] - lam_g)
    });

    // tau block: d log C_k / d tau = -rho_k(tau), plus mu' sum_g
    let rho = bessel_ratio(k, params.tau).expect("validated params");
    let tau_grad = scale * (-count * rho + params.mu.dot(&acc.sum_g));

    // mu block, tangent-projected
    let mu_eucl = params.tau * &acc.sum_g * scale;
    let mu_grad = &mu_eucl - params.mu.dot(&mu_eucl) * &params.mu;

    // s block: (U' D M_rg)_{jj} + (U' D U S sum_GA)_{jj}
    let udm = {
        let mut udu = DMatrix::zeros(k, k); // U' D U
        let mut udr = DMatrix::zeros(k, k); // U' D M_rg
        for a in 0..k {
            for b in 0..k {
                let mut acc_udu = 0.0;
                let mut acc_udr = 0.0;
                for r in 0..p {
                    acc_udu += params.u[(r, a)] * dinv[r] * params.u[(r, b)];
                    acc_udr += params.u[(r, a)] * dinv[r] * acc.m_rg[(r, b)];
                }
                udu[(a, b)] = acc_udu;
                udr[(a, b)] = acc_udr;
            }
        }
        (udu, udr)
    };
    let (udu, udr) = udm;
    let s_diag = &params.s;
    let bsga = {
        // B S sum_GA with B = U' D U, S = diag(s)
        let mut bs = udu.clone();
        for col in 0..k {
            for row in 0..k {
                bs[(row, col)] *= s_diag[col];
            }
        }
        bs * &acc.sum_ga
    };
    let s_grad = DVector::from_fn(k, |j, _| scale * (udr[(j, j)] + bsga[(j, j)]));

    // U block (Euclidean): D M_rg S + D U S sum_GA S, then tangent projection
    let mut u_eucl = DMatrix::zeros(p, k);
    let s_ga_s = {
        let mut m = acc.sum_ga.clone();
        for a in 0..k {
            for b in 0..k {
                m[(a, b)] *= s_diag[a] * s_diag[b];
            }
        }
        m
    };
    let u_sgas = &params.u * &s_ga_s;
    for r in 0..p {
        for j in 0..k {
            u_eucl[(r, j)] = scale * dinv[r] * (acc.m_rg[(r, j)] * s_diag[j] + u_sgas[(r, j)]);
        }
    }
    let utg = params.u.transpose() * &u_eucl;
    let sym = 0.5 * (&utg + utg.transpose());
    let u_grad = &u_eucl - &params.u * sym;

    // log sigma^2 block
    let log_sigma2 = DVector::from_fn(p, |j, _| {
        let lam_row = lambda.row(j).transpose();
        let rg: f64 = (0..k).map(|l| lambda[(j, l)] * acc.m_rg[(j, l)]).sum();
        let quad_ga = (lam_row.transpose() * &acc.sum_ga * &lam_row)[(0, 0)];
        scale * (-0.5 * count + 0.5 * dinv[j] * acc.sum_r2[j] - dinv[j] * (rg + 0.5 * quad_ga))
    });

    EgGradient { c: c_grad, u: u_grad, s: s_grad, mu: mu_grad, tau: tau_grad, log_sigma2 }
}

/// Gradient of the log-density at one point, default (exact) evaluation.
pub fn eg_log_density_grad(x: &DVector<f64>, params: &EGParams) -> Result<EgGradient> {
    eg_log_density_grad_mode(x, params, DensityEval::Exact)
}

pub fn eg_log_density_grad_mode(
    x: &DVector<f64>,
    params: &EGParams,
    eval: DensityEval,
) -> Result<EgGradient> {
    let dens = EgDensity::with_eval(params, eval)?;
    let mut acc = GradAccum::new(params.p(), params.k());
    dens.accumulate_grad(x, &mut acc)?;
    Ok(gradient_from_accum(params, &dens, &acc, 1.0))
}
