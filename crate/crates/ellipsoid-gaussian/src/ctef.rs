//! Cayley-transform ellipsoid fitting: least-squares estimation of the
//! ellipsoid supporting the data, used to estimate the center and to
//! initialize every other parameter before posterior sampling.
//!
//! The data are first projected onto their top-k principal subspace; inside
//! it the squared algebraic distance
//!
//! ```text
//! J(c, W, a) = sum_i ( |diag(1/a) R(W)' (y_i - c)|^2 - 1 )^2
//! ```
//!
//! is minimized by BFGS over the center, the rotation (parameterized free of
//! constraints by the Cayley transform R(W) = (I - W)(I + W)^{-1} of a
//! skew-symmetric W) and the log semi-axis lengths, with random restarts.

use crate::dataset::Dataset;
use crate::eg::EGParams;
use crate::error::{EgError, Result};
use crate::optim::bfgs;
use crate::special::bessel_ratio_inverse;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct CtefOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for CtefOptions {
    fn default() -> Self {
        CtefOptions { max_iter: 500, tol: 1e-8, restarts: 5 }
    }
}

/// Fitted ellipsoid plus the derived initial latent/noise parameters.
#[derive(Clone, Debug)]
pub struct EllipsoidFit {
    /// Ellipsoid center in the ambient space.
    pub center: DVector<f64>,
    /// Principal axes (p x k, orthonormal columns), lengths sorted descending.
    pub axes: DMatrix<f64>,
    pub lengths: DVector<f64>,
    /// Per-coordinate residual noise scale (standard deviations).
    pub residual_sd: DVector<f64>,
    pub latent_mean_dir: DVector<f64>,
    pub latent_concentration: f64,
    /// Gradient converged within the iteration budget on the best restart.
    pub converged: bool,
    /// Set when the fit looks unreliable: non-convergence, or the data cover
    /// only a small arc of the fitted ellipsoid (mean resultant length of the
    /// projected latents above 0.85), making the fit ill-determined.
    pub warning: bool,
    /// Final value of the least-squares loss.
    pub loss: f64,
}

impl EllipsoidFit {
    pub fn p(&self) -> usize {
        self.center.len()
    }

    pub fn k(&self) -> usize {
        self.lengths.len()
    }

    /// Initial Ellipsoid-Gaussian parameters implied by the fit.
    pub fn to_eg_params(&self) -> Result<EGParams> {
        let sigma2 = self.residual_sd.map(|s| (s * s).max(1e-12));
        EGParams::new(
            self.center.clone(),
            self.axes.clone(),
            self.lengths.clone(),
            self.latent_mean_dir.clone(),
            self.latent_concentration,
            sigma2,
        )
    }

    /// Serialize in the shared parameter file format (extra fields record the
    /// convergence state).
    pub fn to_json_string(&self) -> String {
        let params = self.to_eg_params().expect("fit invariants");
        let mut value: serde_json::Value = serde_json::from_str(&params.to_json_string()).expect("valid json");
        value["converged"] = serde_json::Value::Bool(self.converged);
        value["warning"] = serde_json::Value::Bool(self.warning);
        value["loss"] = serde_json::json!(self.loss);
        serde_json::to_string_pretty(&value).expect("serializable")
    }
}

/// Algebraic distance of a point to the fitted quadric, |diag(1/a) R'(x - c)| .
pub fn quadric_radius(fit: &EllipsoidFit, x: &DVector<f64>) -> f64 {
    let z = fit.axes.transpose() * (x - &fit.center);
    (0..fit.k()).map(|j| (z[j] / fit.lengths[j]).powi(2)).sum::<f64>().sqrt()
}

/// Cayley transform (I - W)(I + W)^{-1} of the skew-symmetric matrix with
/// upper-triangle coefficients `w`.
fn cayley(k: usize, w: &[f64]) -> DMatrix<f64> {
    let mut skew = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            skew[(i, j)] = w[idx];
            skew[(j, i)] = -w[idx];
            idx += 1;
        }
    }
    let eye = DMatrix::identity(k, k);
    let inv = (&eye + &skew).try_inverse().expect("I + W is always invertible for skew W");
    (&eye - &skew) * inv
}

struct LossParts {
    c: DVector<f64>,
    w: Vec<f64>,
    log_a: DVector<f64>,
}

fn unpack(k: usize, theta: &DVector<f64>) -> LossParts {
    let nw = k * (k - 1) / 2;
    LossParts {
        c: DVector::from_column_slice(&theta.as_slice()[0..k]),
        w: theta.as_slice()[k..k + nw].to_vec(),
        log_a: DVector::from_column_slice(&theta.as_slice()[k + nw..k + nw + k]),
    }
}

/// Least-squares ellipsoid loss and its analytic gradient in
/// (c, w, log a) coordinates, on the projected data (n x k rows).
///
/// The plain algebraic loss has spurious minima at infinitely large
/// ellipsoids whenever the data cover only part of the shell (a huge sphere
/// through a cap drives the loss to zero), so a smooth barrier confines the
/// center and the log-lengths to a generous data-scaled trust region. Honest
/// fits sit far inside the barrier and are unaffected.
fn loss_and_grad(y: &DMatrix<f64>, theta: &DVector<f64>, scale: f64) -> (f64, DVector<f64>) {
    let n = y.nrows();
    let k = y.ncols();
    let parts = unpack(k, theta);
    let a = parts.log_a.map(f64::exp);
    let rot = cayley(k, &parts.w);
    let eye = DMatrix::identity(k, k);
    let mut skew = DMatrix::zeros(k, k);
    {
        let mut idx = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                skew[(i, j)] = parts.w[idx];
                skew[(j, i)] = -parts.w[idx];
                idx += 1;
            }
        }
    }
    let inv_ipw = (&eye + &skew).try_inverse().expect("invertible");

    let mut f = 0.0;
    let mut grad_c = DVector::zeros(k);
    let mut grad_loga = DVector::zeros(k);
    let mut grad_w_mat = DMatrix::zeros(k, k);
    let ipr = &eye + &rot; // I + R

    for i in 0..n {
        let u = y.row(i).transpose() - &parts.c;
        let z = rot.transpose() * &u;
        let q = DVector::from_fn(k, |j, _| z[j] / (a[j] * a[j]));
        let v: f64 = z.iter().zip(q.iter()).map(|(zj, qj)| zj * qj).sum();
        // Normalized radial residual (|.| - 1)^2. The squared-form residual
        // (|.|^2 - 1)^2 is strongly biased toward oversized shells when the
        // data cover only part of the ellipsoid, pulling the fit to the
        // trust-region boundary on concentrated data; the radial form keeps
        // the curvature information and recovers partial-coverage ellipsoids.
        let r = v.sqrt().max(1e-12);
        f += (r - 1.0) * (r - 1.0);
        // df = wgt * dv with v the quadratic form
        let wgt = (r - 1.0) / r;

        // d v / d c = -2 R q
        let rq = &rot * &q;
        grad_c += wgt * (-2.0 * &rq);
        // d v / d log a_j = -2 z_j^2 / a_j^2
        for j in 0..k {
            grad_loga[j] += wgt * (-2.0 * z[j] * q[j]);
        }
        // d v = -2 u' (I + R) dW (I + W)^{-1} q
        let left = ipr.transpose() * &u;
        let right = &inv_ipw * &q;
        grad_w_mat += wgt * (-2.0) * (&left * right.transpose());
    }
    // reduce dW to the skew coordinates
    let nw = k * (k - 1) / 2;
    let mut grad_w = DVector::zeros(nw);
    {
        let mut idx = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                grad_w[idx] = grad_w_mat[(i, j)] - grad_w_mat[(j, i)];
                idx += 1;
            }
        }
    }

    let mut grad = DVector::zeros(k + nw + k);
    grad.rows_mut(0, k).copy_from(&grad_c);
    grad.rows_mut(k, nw).copy_from(&grad_w);
    grad.rows_mut(k + nw, k).copy_from(&grad_loga);

    // trust-region barrier: cubic one-sided penalties, C^2 smooth
    let weight = n as f64;
    let a_cap = (4.0 * scale).ln();
    let c_cap = 1.5 * scale;
    for j in 0..k {
        let over = parts.log_a[j] - a_cap;
        if over > 0.0 {
            f += weight * over.powi(3);
            grad[k + nw + j] += 3.0 * weight * over * over;
        }
        let cr = (parts.c[j] / c_cap).powi(2) - 1.0;
        if cr > 0.0 {
            f += weight * cr.powi(3);
            grad[j] += 3.0 * weight * cr * cr * 2.0 * parts.c[j] / (c_cap * c_cap);
        }
    }
    (f, grad)
}

/// Fit an ellipsoid of latent dimension `k` to the data.
pub fn ctef_fit<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    opts: &CtefOptions,
    rng: &mut R,
) -> Result<EllipsoidFit> {
    let n = data.n();
    let p = data.p();
    if !(k >= 2 && k <= p && n > p) {
        return Err(EgError::domain(format!(
            "ellipsoid fitting requires n > p >= k >= 2, got n={n}, p={p}, k={k}"
        )));
    }

    // top-k principal subspace of the centered data
    let xbar = data.column_means();
    let centered = DMatrix::from_fn(n, p, |i, j| data.values()[(i, j)] - xbar[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    if eig.eigenvalues[order[k - 1]] <= 1e-12 * eig.eigenvalues[order[0]].max(1e-300) {
        return Err(EgError::domain(format!(
            "data are rank-deficient: principal subspace has dimension < {k}"
        )));
    }
    let proj = DMatrix::from_fn(p, k, |i, j| eig.eigenvectors[(i, order[j])]);
    let y = &centered * &proj; // n x k

    // heuristic scales for initialization
    let y_sd = DVector::from_fn(k, |j, _| {
        (y.column(j).iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    });

    // radius of the projected data ball, the natural trust-region scale
    let data_scale = (0..n).map(|i| y.row(i).norm()).fold(0.0f64, f64::max).max(1e-9);

    let nw = k * (k - 1) / 2;
    let dim = 2 * k + nw;
    let mut candidates: Vec<EllipsoidFit> = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let mut theta0 = DVector::zeros(dim);
        for j in 0..k {
            // a_j ~ sqrt(k) * sd: points on an ellipsoid have coordinate
            // variance a_j^2 / k in the aligned frame
            theta0[k + nw + j] = ((k as f64).sqrt() * y_sd[j]).max(1e-6).ln();
        }
        if restart > 0 {
            for j in 0..k {
                theta0[j] += 0.3 * y_sd[j] * rng.sample::<f64, _>(StandardNormal);
                theta0[k + nw + j] += 0.4 * rng.sample::<f64, _>(StandardNormal);
            }
            for j in 0..nw {
                theta0[k + j] = 0.6 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let res = bfgs(|th| loss_and_grad(&y, th, data_scale), theta0, opts.max_iter, opts.tol);
        candidates.push(assemble_fit(data, &y, &xbar, &proj, &res, &y_sd)?);
    }

    // The loss alone cannot rank fits reliably: when the data cover only part
    // of the shell, oversized osculating ellipsoids reach comparable or lower
    // loss. The fit feeds a likelihood-based sampler, so rank candidates by
    // the log-likelihood of the model each one implies.
    let score_rows: Vec<usize> = {
        let step = (n / 200).max(1);
        (0..n).step_by(step).collect()
    };
    let mut best: Option<(f64, EllipsoidFit)> = None;
    for fit in candidates {
        let score = implied_log_likelihood(data, &fit, &score_rows);
        let better = match &best {
            None => true,
            Some((s, _)) => score > *s,
        };
        if better {
            best = Some((score, fit));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Average EG log-likelihood of the model implied by a candidate fit over a
/// row subsample; unusable candidates rank at negative infinity.
fn implied_log_likelihood(data: &Dataset, fit: &EllipsoidFit, rows: &[usize]) -> f64 {
    let params = match fit.to_eg_params() {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };
    let dens = match crate::eg::EgDensity::new(&params) {
        Ok(d) => d,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut total = 0.0;
    for &i in rows {
        match dens.log_density(&data.row(i)) {
            Ok(v) => total += v,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total / rows.len() as f64
}

/// Lift one optimizer solution back to the ambient space and derive the
/// latent-mean, concentration and residual-noise initial values.
fn assemble_fit(
    data: &Dataset,
    y: &DMatrix<f64>,
    xbar: &DVector<f64>,
    proj: &DMatrix<f64>,
    best: &crate::optim::BfgsResult,
    y_sd: &DVector<f64>,
) -> Result<EllipsoidFit> {
    let n = data.n();
    let p = data.p();
    let k = y.ncols();
    let parts = unpack(k, &best.x);
    let a = parts.log_a.map(f64::exp);
    let rot = cayley(k, &parts.w);

    // order axes by decreasing length
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap());
    let lengths = DVector::from_fn(k, |j, _| a[order[j]]);
    let rot_sorted = DMatrix::from_fn(k, k, |i, j| rot[(i, order[j])]);

    let center = xbar + proj * &parts.c;
    let axes = proj * &rot_sorted; // p x k, orthonormal

    // latent positions on (approximately) the unit sphere
    let mut zeta = DMatrix::zeros(n, k);
    for i in 0..n {
        let u = y.row(i).transpose() - &parts.c;
        let z = rot_sorted.transpose() * &u;
        for j in 0..k {
            zeta[(i, j)] = z[j] / lengths[j];
        }
    }
    // mean direction from the linear mean of the latents
    let zeta_mean = zeta.row_mean().transpose();
    let latent_mean_dir = if zeta_mean.norm() > 1e-12 {
        &zeta_mean / zeta_mean.norm()
    } else {
        let mut e = DVector::zeros(k);
        e[0] = 1.0;
        e
    };
    // concentration from the mean resultant length of the normalized latents
    let mut resultant = DVector::zeros(k);
    for i in 0..n {
        let zi = zeta.row(i).transpose();
        let norm = zi.norm();
        if norm > 1e-12 {
            resultant += zi / norm;
        }
    }
    let rbar = (resultant.norm() / n as f64).min(1.0);
    let latent_concentration = bessel_ratio_inverse(k, rbar)?;

    // per-coordinate residuals off the fitted shell
    let mut residual_sd: DVector<f64> = DVector::zeros(p);
    for i in 0..n {
        let zi = zeta.row(i).transpose();
        let norm = zi.norm();
        let zhat = if norm > 1e-12 { zi / norm } else { latent_mean_dir.clone() };
        let fitted = &center + &axes * DVector::from_fn(k, |j, _| lengths[j] * zhat[j]);
        let xi = data.row(i);
        for j in 0..p {
            residual_sd[j] += (xi[j] - fitted[j]).powi(2);
        }
    }
    let scale_floor = 1e-6 * y_sd.max().max(1e-6);
    for j in 0..p {
        residual_sd[j] = (residual_sd[j] / n as f64).sqrt().max(scale_floor);
    }

    let converged = best.converged;
    let warning = !converged || rbar > 0.85;
    Ok(EllipsoidFit {
        center,
        axes,
        lengths,
        residual_sd,
        latent_mean_dir,
        latent_concentration,
        converged,
        warning,
        loss: best.f,
    })
}
