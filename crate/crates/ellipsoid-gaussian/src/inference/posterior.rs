//! Log-posterior evaluation and its manifold-block gradients.

use super::priors::Priors;
use crate::dataset::Dataset;
use crate::eg::{gradient_from_accum, DensityEval, EGParams, EgDensity, GradAccum};
use crate::error::{EgError, Result};
use nalgebra::{DMatrix, DVector};

/// Likelihood + prior bundle over one training set.
pub struct Posterior<'d> {
    pub data: &'d Dataset,
    pub priors: Priors,
    pub eval: DensityEval,
}

/// Tangent-space gradient of the log-posterior for the blocks the thermostat
/// dynamics updates.
pub struct ManifoldGrad {
    pub c: DVector<f64>,
    pub log_s: DVector<f64>,
    pub u: DMatrix<f64>,
    pub mu: DVector<f64>,
}

impl<'d> Posterior<'d> {
    pub fn new(data: &'d Dataset, priors: Priors, eval: DensityEval) -> Self {
        Posterior { data, priors, eval }
    }

    fn subset_scale(&self, subset: Option<&[usize]>) -> Result<(Vec<usize>, f64)> {
        let n = self.data.n();
        match subset {
            None => Ok(((0..n).collect(), 1.0)),
            Some(idx) => {
                if idx.is_empty() {
                    return Err(EgError::domain("subset must be non-empty".to_string()));
                }
                for &i in idx {
                    if i >= n {
                        return Err(EgError::domain(format!("subset index {i} out of range (n = {n})")));
                    }
                }
                Ok((idx.to_vec(), n as f64 / idx.len() as f64))
            }
        }
    }

    /// Log-posterior: the likelihood over the subset scaled by n/|subset|,
    /// plus the log-prior. Exact and deterministic.
    pub fn log_density(&self, params: &EGParams, subset: Option<&[usize]>) -> Result<f64> {
        let (rows, scale) = self.subset_scale(subset)?;
        let mut lik = 0.0;
        if self.data.n() > 0 {
            let dens = EgDensity::with_eval(params, self.eval)?;
            for &i in &rows {
                lik += dens.log_density(&self.data.row(i))?;
            }
        }
        Ok(scale * lik + self.priors.log_density(params))
    }

    /// Full-data log-posterior in the random-walk block's coordinates
    /// (log sigma^2, log tau): adds the change-of-variable terms
    /// sum_j log sigma_j^2 and log tau.
    pub(crate) fn ram_target(&self, params: &EGParams) -> Result<f64> {
        let base = self.log_density(params, None)?;
        let jac: f64 = params.sigma2.iter().map(|v| v.ln()).sum::<f64>() + params.tau.max(1e-300).ln();
        Ok(base + jac)
    }

    /// Stochastic tangent gradient of the log-posterior for the manifold
    /// blocks, with the likelihood part scaled by n/|subset|.
    pub(crate) fn manifold_grad(&self, params: &EGParams, subset: Option<&[usize]>) -> Result<ManifoldGrad> {
        let (rows, scale) = self.subset_scale(subset)?;
        let dens = EgDensity::with_eval(params, self.eval)?;
        let mut acc = GradAccum::new(params.p(), params.k());
        for &i in &rows {
            dens.accumulate_grad(&self.data.row(i), &mut acc)?;
        }
        let lik = gradient_from_accum(params, &dens, &acc, scale);

        // priors: Gaussian on c and log s; U and mu are uniform
        let c = &lik.c + self.priors.grad_c(&params.c);
        let log_s = DVector::from_fn(params.k(), |j, _| lik.s[j] * params.s[j])
            + self.priors.grad_log_s(&params.s);
        Ok(ManifoldGrad { c, log_s, u: lik.u, mu: lik.mu })
    }
}

/// Log-posterior of the parameters given data and priors; `subset` scales the
/// likelihood by n/|subset| as used by the stochastic-gradient updates.
pub fn log_posterior(
    params: &EGParams,
    data: &Dataset,
    subset: Option<&[usize]>,
    priors: &Priors,
) -> Result<f64> {
    Posterior::new(data, priors.clone(), DensityEval::Exact).log_density(params, subset)
}
