//! Robust adaptive Metropolis (Vihola-style): a random-walk proposal whose
//! lower-triangular scale factor adapts toward a target acceptance rate with
//! the rank-one square-root update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub(crate) struct RamAdapter {
    l: DMatrix<f64>,
    dim: usize,
    target: f64,
    step: usize,
    accepts: Vec<bool>,
}

impl RamAdapter {
    pub fn new(dim: usize, init_scale: f64, target: f64) -> Self {
        RamAdapter {
            l: DMatrix::identity(dim, dim) * init_scale,
            dim,
            target,
            step: 0,
            accepts: Vec::new(),
        }
    }

    /// Draw a proposal `x + L u`; returns the proposal and the raw normal `u`.
    pub fn propose<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let u = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        (x + &self.l * &u, u)
    }

    /// Adapt the factor with the realized acceptance probability and record
    /// the accept/reject outcome.
    pub fn adapt(&mut self, u: &DVector<f64>, alpha: f64, accepted: bool) {
        self.step += 1;
        self.accepts.push(accepted);
        let eta = (self.dim as f64 * (self.step as f64).powf(-2.0 / 3.0)).min(0.9);
        let unorm2 = u.norm_squared().max(1e-300);
        let scale = eta * (alpha - self.target) / unorm2;
        // L (I + scale u u') L' stays positive definite since |scale| |u|^2 < 1
        let m = &self.l * (DMatrix::identity(self.dim, self.dim) + scale * (u * u.transpose())) * self.l.transpose();
        let sym = 0.5 * (&m + m.transpose());
        if let Some(chol) = sym.cholesky() {
            self.l = chol.l();
        }
    }

    #[cfg(test)]
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepts.is_empty() {
            return 0.0;
        }
        self.accepts.iter().filter(|&&a| a).count() as f64 / self.accepts.len() as f64
    }

    /// Acceptance over the trailing `window` steps.
    pub fn recent_acceptance_rate(&self, window: usize) -> f64 {
        let n = self.accepts.len();
        if n == 0 {
            return 0.0;
        }
        let lo = n.saturating_sub(window);
        let cnt = self.accepts[lo..].iter().filter(|&&a| a).count();
        cnt as f64 / (n - lo) as f64
    }
}
