//! The Ellipsoid-Gaussian distribution.
//!
//! `x = c + U diag(s) eta + eps` with `eta ~ vMF(mu, tau)` on S^{k-1} and
//! `eps ~ N(0, diag(sigma2))`. Mass concentrates around the k-dimensional
//! ellipsoid with center `c`, principal axes `U` and semi-axis lengths `s`;
//! `tau` controls how far around the ellipsoid the mass spreads and `sigma2`
//! the noise off the shell.

mod density;
mod grad;

pub use density::{eg_log_density, DensityEval, EgDensity};
pub use grad::{eg_log_density_grad, eg_log_density_grad_mode, EgGradient};
pub(crate) use grad::{gradient_from_accum, GradAccum};

use crate::dataset::Dataset;
use crate::error::{EgError, Result};
use crate::special::{bessel_ratio, log_vmf_const};
use crate::vmf::{vmf_sample, VmfParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Full parameter set of an Ellipsoid-Gaussian distribution.
///
/// The loadings are stored factored as `Lambda = U diag(s)`; the right
/// singular factor is not identifiable and is absorbed into `mu`.
///
/// `U` normally has orthonormal columns (which forces `k <= p`). Marginals
/// onto fewer than `k` coordinates are represented with trailing zero
/// columns in `U` paired with zero entries of `s`; such columns carry no
/// loading and are exempt from the orthonormality requirement.
#[derive(Clone, Debug, PartialEq)]
pub struct EGParams {
    pub c: DVector<f64>,
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub mu: DVector<f64>,
    pub tau: f64,
    pub sigma2: DVector<f64>,
}

impl EGParams {
    pub fn new(
        c: DVector<f64>,
        u: DMatrix<f64>,
        s: DVector<f64>,
        mu: DVector<f64>,
        tau: f64,
        sigma2: DVector<f64>,
    ) -> Result<Self> {
        let params = EGParams { c, u, s, mu, tau, sigma2 };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> usize {
        self.c.len()
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let k = self.k();
        if k < 2 {
            return Err(EgError::domain(format!("latent dimension must be >= 2, got {k}")));
        }
        if self.u.nrows() != p || self.u.ncols() != k {
            return Err(EgError::dimension(format!(
                "axis frame is {}x{}, expected {p}x{k}",
                self.u.nrows(),
                self.u.ncols()
            )));
        }
        if self.s.len() != k || self.sigma2.len() != p {
            return Err(EgError::dimension("length mismatch in s or sigma2".to_string()));
        }
        let all_finite = self.c.iter().chain(self.u.iter()).chain(self.s.iter()).chain(self.mu.iter()).chain(self.sigma2.iter()).all(|v| v.is_finite());
        if !all_finite || !self.tau.is_finite() {
            return Err(EgError::domain("parameters contain non-finite values".to_string()));
        }
        if (self.mu.norm() - 1.0).abs() > 1e-12 {
            return Err(EgError::domain(format!("mu must be unit-norm within 1e-12, |mu| = {}", self.mu.norm())));
        }
        if self.tau < 0.0 {
            return Err(EgError::domain(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.s.iter().any(|&v| v < 0.0) {
            return Err(EgError::domain("axis lengths must be >= 0".to_string()));
        }
        if self.sigma2.iter().any(|&v| v <= 0.0) {
            return Err(EgError::domain("noise variances must be > 0".to_string()));
        }
        // live columns must be orthonormal; dead (zero) columns must carry no loading
        let live: Vec<usize> = (0..k).filter(|&j| self.u.column(j).norm() > 0.5).collect();
        for &j in live.iter() {
            for &l in live.iter() {
                let dot = self.u.column(j).dot(&self.u.column(l));
                let want = if j == l { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-10 {
                    return Err(EgError::domain(format!(
                        "axis columns {j} and {l} are not orthonormal (inner product {dot})"
                    )));
                }
            }
        }
        for j in 0..k {
            if !live.contains(&j) {
                if self.u.column(j).norm() > 1e-8 || self.s[j] != 0.0 {
                    return Err(EgError::domain(format!("axis column {j} is neither unit nor zero")));
                }
            }
        }
        Ok(())
    }

    /// The loadings matrix `Lambda = U diag(s)` (p x k).
    pub fn lambda(&self) -> DMatrix<f64> {
        let mut l = self.u.clone();
        for j in 0..self.k() {
            l.column_mut(j).scale_mut(self.s[j]);
        }
        l
    }

    /// Column labels for the flat CSV layout: c, U column-major, s, mu, tau, sigma2.
    pub fn flat_labels(p: usize, k: usize) -> Vec<String> {
        let mut labels = Vec::with_capacity(p + p * k + 2 * k + 1 + p);
        for i in 1..=p {
            labels.push(format!("c.{i}"));
        }
        for j in 1..=k {
            for i in 1..=p {
                labels.push(format!("U.{i}.{j}"));
            }
        }
        for j in 1..=k {
            labels.push(format!("s.{j}"));
        }
        for j in 1..=k {
            labels.push(format!("mu.{j}"));
        }
        labels.push("tau".to_string());
        for i in 1..=p {
            labels.push(format!("sigma2.{i}"));
        }
        labels
    }

    pub fn to_flat_row(&self) -> Vec<f64> {
        let (p, k) = (self.p(), self.k());
        let mut row = Vec::with_capacity(p + p * k + 2 * k + 1 + p);
        row.extend(self.c.iter());
        row.extend(self.u.iter()); // nalgebra stores column-major
        row.extend(self.s.iter());
        row.extend(self.mu.iter());
        row.push(self.tau);
        row.extend(self.sigma2.iter());
        row
    }

    pub fn from_flat_row(p: usize, k: usize, row: &[f64]) -> Result<Self> {
        let want = p + p * k + 2 * k + 1 + p;
        if row.len() != want {
            return Err(EgError::dimension(format!(
                "flat row has {} values, expected {want} for p={p}, k={k}",
                row.len()
            )));
        }
        let mut at = 0usize;
        let c = DVector::from_column_slice(&row[at..at + p]);
        at += p;
        let u = DMatrix::from_column_slice(p, k, &row[at..at + p * k]);
        at += p * k;
        let s = DVector::from_column_slice(&row[at..at + k]);
        at += k;
        let mu = DVector::from_column_slice(&row[at..at + k]);
        at += k;
        let tau = row[at];
        at += 1;
        let sigma2 = DVector::from_column_slice(&row[at..at + p]);
        EGParams::new(c, u, s, mu, tau, sigma2)
    }

    pub fn to_json_string(&self) -> String {
        let file = EGParamsFile {
            p: self.p(),
            k: self.k(),
            c: self.c.iter().cloned().collect(),
            u: self.u.iter().cloned().collect(),
            s: self.s.iter().cloned().collect(),
            mu: self.mu.iter().cloned().collect(),
            tau: self.tau,
            sigma2: self.sigma2.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: EGParamsFile = serde_json::from_str(text)
            .map_err(|e| EgError::Parse { line: e.line(), message: e.to_string() })?;
        if file.c.len() != file.p
            || file.u.len() != file.p * file.k
            || file.s.len() != file.k
            || file.mu.len() != file.k
            || file.sigma2.len() != file.p
        {
            return Err(EgError::dimension("parameter file fields disagree with (p, k)".to_string()));
        }
        EGParams::new(
            DVector::from_column_slice(&file.c),
            DMatrix::from_column_slice(file.p, file.k, &file.u),
            DVector::from_column_slice(&file.s),
            DVector::from_column_slice(&file.mu),
            file.tau,
            DVector::from_column_slice(&file.sigma2),
        )
    }

    pub fn to_json_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        EGParams::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Flat key-value parameter file: `U` is stored column-major.
#[derive(Serialize, Deserialize)]
struct EGParamsFile {
    p: usize,
    k: usize,
    c: Vec<f64>,
    u: Vec<f64>,
    s: Vec<f64>,
    mu: Vec<f64>,
    tau: f64,
    sigma2: Vec<f64>,
}

/// Draw `n` points; optionally also return the latent directions (n x k).
pub fn eg_sample<R: Rng + ?Sized>(
    params: &EGParams,
    n: usize,
    rng: &mut R,
    return_latent: bool,
) -> (Dataset, Option<DMatrix<f64>>) {
    let (p, _k) = (params.p(), params.k());
    let vp = VmfParams::new(params.mu.clone(), params.tau).expect("validated params");
    let latent = vmf_sample(&vp, n, rng);
    let lambda = params.lambda();
    let sd = params.sigma2.map(|v| v.sqrt());
    let mut values = DMatrix::zeros(n, p);
    for i in 0..n {
        let eta = latent.row(i).transpose();
        let mean = &params.c + &lambda * eta;
        for j in 0..p {
            let noise: f64 = rng.sample(StandardNormal);
            values[(i, j)] = mean[j] + sd[j] * noise;
        }
    }
    let data = Dataset::from_matrix(values).expect("finite samples");
    (data, if return_latent { Some(latent) } else { None })
}

/// E[x] = c + rho_k(tau) Lambda mu.
pub fn eg_mean(params: &EGParams) -> DVector<f64> {
    let rho = bessel_ratio(params.k(), params.tau).expect("validated params");
    &params.c + rho * (params.lambda() * &params.mu)
}

/// Cov[x] = rho/tau Lambda Lambda' + (1 - k rho/tau - rho^2) (Lambda mu)(Lambda mu)' + Sigma.
///
/// At tau = 0 the removable singularity is handled by the analytic limits
/// rho/tau -> 1/k and bracket -> 0, giving Lambda Lambda'/k + Sigma.
pub fn eg_cov(params: &EGParams) -> DMatrix<f64> {
    let k = params.k();
    let tau = params.tau;
    let lambda = params.lambda();
    let (rho_over_tau, bracket) = if tau < 1e-8 {
        (1.0 / k as f64, 0.0)
    } else {
        let rho = bessel_ratio(k, tau).expect("validated params");
        (rho / tau, 1.0 - (k as f64 / tau) * rho - rho * rho)
    };
    let lm = &lambda * &params.mu;
    let mut cov = rho_over_tau * (&lambda * lambda.transpose()) + bracket * (&lm * lm.transpose());
    for j in 0..params.p() {
        cov[(j, j)] += params.sigma2[j];
    }
    cov
}

/// log E[exp(t'x)] = t'c + t' Sigma t / 2 + log C_k(tau) - log C_k(|Lambda' t + tau mu|).
pub fn eg_log_mgf(t: &DVector<f64>, params: &EGParams) -> f64 {
    assert_eq!(t.len(), params.p(), "argument dimension mismatch");
    let lambda = params.lambda();
    let arg = lambda.transpose() * t + params.tau * &params.mu;
    let quad: f64 = t.iter().zip(params.sigma2.iter()).map(|(ti, s2)| ti * ti * s2).sum();
    t.dot(&params.c) + 0.5 * quad + log_vmf_const(params.k(), params.tau).expect("validated params")
        - log_vmf_const(params.k(), arg.norm()).expect("validated params")
}

/// Marginal distribution of the sub-vector with the given coordinate indices;
/// the result is again Ellipsoid-Gaussian with the same latent dimension.
///
/// The restricted loadings are re-factored so the live axis columns are
/// orthonormal; the absorbed right rotation is applied to `mu` (the pair
/// (Lambda G', G mu) is not identifiable, so the distribution is unchanged).
/// For fewer retained coordinates than `k`, trailing zero axes appear.
pub fn eg_marginal(params: &EGParams, index_set: &[usize]) -> Result<EGParams> {
    let (p, k) = (params.p(), params.k());
    if index_set.is_empty() {
        return Err(EgError::domain("marginal index set must be non-empty".to_string()));
    }
    let mut seen = vec![false; p];
    for &i in index_set {
        if i >= p {
            return Err(EgError::domain(format!("index {i} out of range for p = {p}")));
        }
        if seen[i] {
            return Err(EgError::domain(format!("duplicate index {i} in marginal set")));
        }
        seen[i] = true;
    }
    let m = index_set.len();
    let lambda = params.lambda();
    let lambda_i = DMatrix::from_fn(m, k, |r, c| lambda[(index_set[r], c)]);
    let c_i = DVector::from_fn(m, |r, _| params.c[index_set[r]]);
    let sigma2_i = DVector::from_fn(m, |r, _| params.sigma2[index_set[r]]);

    if m >= k {
        let svd = lambda_i.svd(true, true);
        let u = svd.u.expect("requested");
        let v_t = svd.v_t.expect("requested");
        let s = DVector::from_fn(k, |j, _| svd.singular_values[j]);
        let mu = &v_t * &params.mu;
        let mu = &mu / mu.norm();
        EGParams::new(c_i, u, s, mu, params.tau, sigma2_i)
    } else {
        // Factor Lambda_I' = W S U2' so Lambda_I = U2 S W' with U2 (m x m)
        // orthonormal and W (k x m) orthonormal columns; complete W to a full
        // k x k rotation absorbed into mu and pad the unused axes with zeros.
        let svd = lambda_i.transpose().svd(true, true);
        let w_part = svd.u.expect("requested"); // k x m
        let u2_t = svd.v_t.expect("requested"); // m x m
        let s_part = DVector::from_fn(m, |j, _| svd.singular_values[j]);

        let completion = orthonormal_completion(&w_part); // k x (k - m)
        let mut mu = DVector::zeros(k);
        for j in 0..m {
            mu[j] = w_part.column(j).dot(&params.mu);
        }
        for j in 0..k - m {
            mu[m + j] = completion.column(j).dot(&params.mu);
        }
        let mu = &mu / mu.norm();

        let mut u_pad = DMatrix::zeros(m, k);
        u_pad.view_mut((0, 0), (m, m)).copy_from(&u2_t.transpose());
        let mut s_pad = DVector::zeros(k);
        s_pad.rows_mut(0, m).copy_from(&s_part);
        EGParams::new(c_i, u_pad, s_pad, mu, params.tau, sigma2_i)
    }
}

/// Orthonormal completion: returns a k x (k - m) block orthogonal to the
/// orthonormal columns of `w` (k x m).
fn orthonormal_completion(w: &DMatrix<f64>) -> DMatrix<f64> {
    let k = w.nrows();
    let m = w.ncols();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(k - m);
    let mut j = 0usize;
    while cols.len() < k - m && j < k + cols.len() + 8 {
        let mut v = DVector::zeros(k);
        v[j % k] = 1.0;
        // project out existing directions
        for c in 0..m {
            let wc = w.column(c);
            let d = wc.dot(&v);
            v -= d * DVector::from_column_slice(wc.as_slice());
        }
        for c in cols.iter() {
            let d = c.dot(&v);
            v -= d * c;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
        j += 1;
    }
    assert_eq!(cols.len(), k - m, "orthonormal completion failed");
    DMatrix::from_fn(k, k - m, |r, c| cols[c][r])
}

/// Builds the diverging-concentration parameter sequence whose limit is a
/// Gaussian factor model: lengths sqrt(tau) * (s_1, .., s_{k-1}, 0) with the
/// latent mean direction pinned to the vanishing axis e_k.
pub fn eg_limit_construction(
    u: &DMatrix<f64>,
    s: &DVector<f64>,
    c: &DVector<f64>,
    sigma2: &DVector<f64>,
    tau: f64,
) -> Result<EGParams> {
    if tau <= 0.0 {
        return Err(EgError::domain("limit construction needs tau > 0".to_string()));
    }
    let k = u.ncols();
    if s.len() != k {
        return Err(EgError::dimension("lengths must match the number of axes".to_string()));
    }
    let scaled = DVector::from_fn(k, |j, _| if j + 1 == k { 0.0 } else { tau.sqrt() * s[j] });
    let mut mu = DVector::zeros(k);
    mu[k - 1] = 1.0;
    EGParams::new(c.clone(), u.clone(), scaled, mu, tau, sigma2.clone())
}

/// The limiting Gaussian factor model of the construction above:
/// x = c + U_{-k} diag(s_{-k}) eta + eps with eta standard normal.
pub fn eg_limit_gaussian_factor(
    u: &DMatrix<f64>,
    s: &DVector<f64>,
    c: &DVector<f64>,
    sigma2: &DVector<f64>,
) -> GaussianFactorModel {
    let k = u.ncols();
    let mut loadings = DMatrix::zeros(u.nrows(), k - 1);
    for j in 0..k - 1 {
        loadings.set_column(j, &(s[j] * u.column(j)));
    }
    GaussianFactorModel { c: c.clone(), loadings, sigma2: sigma2.clone() }
}

/// Plain Gaussian linear factor model x = c + Lambda eta + eps, eta ~ N(0, I).
#[derive(Clone, Debug)]
pub struct GaussianFactorModel {
    pub c: DVector<f64>,
    pub loadings: DMatrix<f64>,
    pub sigma2: DVector<f64>,
}

impl GaussianFactorModel {
    pub fn p(&self) -> usize {
        self.c.len()
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let mut cov = &self.loadings * self.loadings.transpose();
        for j in 0..self.p() {
            cov[(j, j)] += self.sigma2[j];
        }
        cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let p = self.p();
        let k = self.loadings.ncols();
        let mut values = DMatrix::zeros(n, p);
        for i in 0..n {
            let eta = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mean = &self.c + &self.loadings * eta;
            for j in 0..p {
                let noise: f64 = rng.sample(StandardNormal);
                values[(i, j)] = mean[j] + self.sigma2[j].sqrt() * noise;
            }
        }
        Dataset::from_matrix(values).expect("finite samples")
    }

    /// Multivariate normal log-density at x under N(c, Lambda Lambda' + Sigma).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let p = self.p() as f64;
        let cov = self.cov();
        let chol = cov.cholesky().expect("positive definite factor covariance");
        let diff = x - &self.c;
        let solved = chol.solve(&diff);
        let logdet: f64 = (0..self.p()).map(|j| chol.l_dirty()[(j, j)].ln()).sum::<f64>() * 2.0;
        -0.5 * p * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * diff.dot(&solved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf::sample_uniform_sphere;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_stiefel<R: Rng>(p: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
        let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q
    }

    /// Random parameters in a regime where the latent-marginalization Monte
    /// Carlo oracle keeps a useful effective sample size: moderate noise and
    /// enough latent concentration that draws land near the test points.
    fn random_params<R: Rng>(p: usize, k: usize, rng: &mut R) -> EGParams {
        let u = random_stiefel(p, k, rng);
        let s = DVector::from_fn(k, |_, _| 0.7 + 0.9 * rng.random::<f64>());
        let c = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = sample_uniform_sphere(k, rng);
        let tau = 5.0 + 15.0 * rng.random::<f64>();
        let sigma2 = DVector::from_fn(p, |_, _| (0.18 + 0.18 * rng.random::<f64>()).powi(2));
        EGParams::new(c, u, s, mu, tau, sigma2).unwrap()
    }

    /// Latent-marginalization oracle: log of the average Gaussian density over
    /// vMF latent draws, accumulated by log-sum-exp.
    fn mc_log_density<R: Rng>(x: &DVector<f64>, params: &EGParams, n: usize, rng: &mut R) -> f64 {
        let vp = VmfParams::new(params.mu.clone(), params.tau).unwrap();
        let latents = vmf_sample(&vp, n, rng);
        let lambda = params.lambda();
        let p = params.p();
        let log_gauss_norm: f64 = -0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * params.sigma2.iter().map(|v| v.ln()).sum::<f64>();
        let mut max_e = f64::NEG_INFINITY;
        let mut acc = 0.0f64;
        for i in 0..n {
            let eta = latents.row(i).transpose();
            let mean = &params.c + &lambda * eta;
            let mut quad = 0.0;
            for j in 0..p {
                let d = x[j] - mean[j];
                quad += d * d / params.sigma2[j];
            }
            let e = -0.5 * quad;
            if e <= max_e {
                acc += (e - max_e).exp();
            } else {
                acc = acc * (max_e - e).exp() + 1.0;
                max_e = e;
            }
        }
        log_gauss_norm + max_e + acc.ln() - (n as f64).ln()
    }

    #[test]
    fn noiseless_samples_lie_on_the_ellipsoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_stiefel(3, 2, &mut rng);
        let s = DVector::from_column_slice(&[2.0, 0.8]);
        let params = EGParams::new(
            DVector::zeros(3),
            u.clone(),
            s.clone(),
            DVector::from_column_slice(&[1.0, 0.0]),
            1.5,
            DVector::from_element(3, 1e-20),
        )
        .unwrap();
        let (data, latent) = eg_sample(&params, 200, &mut rng, true);
        assert!(latent.is_some());
        for i in 0..200 {
            let x = data.row(i);
            let z = u.transpose() * &x;
            let val = (z[0] / s[0]).powi(2) + (z[1] / s[1]).powi(2);
            assert!((val.sqrt() - 1.0).abs() < 1e-8, "row {i}: {val}");
        }
    }

    #[test]
    fn huge_tau_concentrates_on_a_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = DMatrix::identity(3, 3);
        let params = EGParams::new(
            DVector::from_column_slice(&[1.0, -2.0, 0.5]),
            u,
            DVector::from_element(3, 2.0),
            DVector::from_column_slice(&[0.0, 0.0, 1.0]),
            1e4,
            DVector::from_element(3, 1e-4),
        )
        .unwrap();
        let (data, _) = eg_sample(&params, 2000, &mut rng, false);
        // directions from the center have resultant close to 1
        let mut resultant = DVector::zeros(3);
        for i in 0..2000 {
            let d = data.row(i) - &params.c;
            resultant += d.clone() / d.norm();
        }
        assert!(resultant.norm() / 2000.0 > 0.95);
        // radii concentrate at the common axis length
        for i in 0..2000 {
            let r = (data.row(i) - &params.c).norm();
            assert!((r - 2.0).abs() < 0.15, "radius {r}");
        }
    }

    #[test]
    fn mean_formula_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_stiefel(4, 2, &mut rng);
        let c = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let sigma2 = DVector::from_element(4, 0.09);
        // tau = 0: mean is exactly c
        let p0 = EGParams::new(c.clone(), u.clone(), DVector::from_column_slice(&[1.5, 0.7]),
            DVector::from_column_slice(&[1.0, 0.0]), 0.0, sigma2.clone()).unwrap();
        assert_eq!(eg_mean(&p0), c);
        // Lambda mu = 0 (mu on a zero-length axis): mean is c for every tau
        let p1 = EGParams::new(c.clone(), u.clone(), DVector::from_column_slice(&[1.5, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]), 7.0, sigma2).unwrap();
        assert_eq!(eg_mean(&p1), c);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..3 {
            let (p, k) = [(3, 2), (4, 3), (2, 2)][trial];
            let params = random_params(p, k, &mut rng);
            let n = 400_000;
            let (data, _) = eg_sample(&params, n, &mut rng, false);
            let mean_mc = data.values().row_mean().transpose();
            let mean = eg_mean(&params);
            let scale = eg_cov(&params).trace().sqrt();
            assert!((mean_mc - &mean).norm() < 0.01 * scale.max(1.0), "trial {trial} mean");

            let cov = eg_cov(&params);
            let means = data.values().row_mean();
            let mut cov_mc = DMatrix::zeros(p, p);
            for i in 0..n {
                for a in 0..p {
                    for b in 0..p {
                        cov_mc[(a, b)] += (data.values()[(i, a)] - means[a]) * (data.values()[(i, b)] - means[b]);
                    }
                }
            }
            cov_mc /= n as f64;
            let err = (&cov_mc - &cov).norm() / cov.norm();
            assert!(err < 0.02, "trial {trial} cov relative error {err}");
        }
    }

    #[test]
    fn covariance_tau_zero_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_stiefel(3, 2, &mut rng);
        let s = DVector::from_column_slice(&[1.2, 0.5]);
        let sigma2 = DVector::from_column_slice(&[0.04, 0.09, 0.01]);
        let params = EGParams::new(DVector::zeros(3), u, s, DVector::from_column_slice(&[0.0, 1.0]), 0.0, sigma2.clone()).unwrap();
        let lambda = params.lambda();
        let mut want = &lambda * lambda.transpose() / 2.0;
        for j in 0..3 {
            want[(j, j)] += sigma2[j];
        }
        assert_relative_eq!(eg_cov(&params), want, epsilon = 1e-12);
    }

    #[test]
    fn mgf_reference_points_and_mc() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = random_params(3, 2, &mut rng);
        // t = 0
        assert_eq!(eg_log_mgf(&DVector::zeros(3), &params), 0.0);
        // Lambda = 0 reduces to the Gaussian MGF
        let gauss = EGParams::new(
            params.c.clone(),
            params.u.clone(),
            DVector::zeros(2),
            params.mu.clone(),
            params.tau,
            params.sigma2.clone(),
        )
        .unwrap();
        let t = DVector::from_column_slice(&[0.3, -0.2, 0.5]);
        let want = t.dot(&gauss.c)
            + 0.5 * t.iter().zip(gauss.sigma2.iter()).map(|(ti, s2)| ti * ti * s2).sum::<f64>();
        assert_relative_eq!(eg_log_mgf(&t, &gauss), want, epsilon = 1e-12);

        // Monte Carlo within 3 standard errors for small t
        let n = 400_000;
        let (data, _) = eg_sample(&params, n, &mut rng, false);
        for trial in 0..3 {
            let t = DVector::from_fn(3, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
            let vals: Vec<f64> = (0..n).map(|i| (t.dot(&data.row(i))).exp()).collect();
            let mean: f64 = vals.iter().sum::<f64>() / n as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se_log = (var / n as f64).sqrt() / mean;
            let got = eg_log_mgf(&t, &params);
            assert!(
                (got - mean.ln()).abs() <= 3.0 * se_log,
                "trial {trial}: mgf {got} vs mc {} (se {se_log})",
                mean.ln()
            );
        }
    }

    #[test]
    fn density_matches_latent_marginalization_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..4 {
            let (p, k) = [(3, 2), (2, 2), (4, 3), (4, 2)][trial];
            let params = random_params(p, k, &mut rng);
            let dens = EgDensity::new(&params).unwrap();
            // test point: on-model draw (within the noise band of the shell)
            let (pt, _) = eg_sample(&params, 1, &mut rng, false);
            let x = pt.row(0);
            let got = dens.log_density(&x).unwrap();
            let want = mc_log_density(&x, &params, 200_000, &mut rng);
            let rel = ((got - want).exp() - 1.0).abs();
            assert!(rel < 0.02, "trial {trial}: density off by {rel} (got {got}, mc {want})");
        }
    }

    #[test]
    fn density_gaussian_special_case_is_exact() {
        // tau = 0 and Lambda = 0: exactly the diagonal Gaussian density
        let c = DVector::from_column_slice(&[1.0, -0.5]);
        let sigma2 = DVector::from_column_slice(&[0.3, 2.0]);
        let params = EGParams::new(
            c.clone(),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_column_slice(&[1.0, 0.0]),
            0.0,
            sigma2.clone(),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.2, 0.4]);
        let want: f64 = (0..2)
            .map(|j| {
                -0.5 * (2.0 * std::f64::consts::PI * sigma2[j]).ln()
                    - 0.5 * (x[j] - c[j]).powi(2) / sigma2[j]
            })
            .sum();
        assert_relative_eq!(eg_log_density(&x, &params).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn density_fisher_gaussian_special_case() {
        // Lambda = r I, Sigma = sigma^2 I: the spherical-shell special case
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = 3;
        let r = 1.3;
        let params = EGParams::new(
            DVector::zeros(p),
            DMatrix::identity(p, p),
            DVector::from_element(p, r),
            sample_uniform_sphere(p, &mut rng),
            6.0,
            DVector::from_element(p, 0.06),
        )
        .unwrap();
        let dens = EgDensity::new(&params).unwrap();
        let (pt, _) = eg_sample(&params, 1, &mut rng, false);
        let x = pt.row(0);
        let got = dens.log_density(&x).unwrap();
        let want = mc_log_density(&x, &params, 200_000, &mut rng);
        assert!(((got - want).exp() - 1.0).abs() < 0.02, "{got} vs {want}");
    }

    #[test]
    fn rotation_of_loadings_and_mu_leaves_density_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = random_params(3, 2, &mut rng);
        let lambda = params.lambda();
        for trial in 0..20 {
            let g = random_stiefel(2, 2, &mut rng);
            let d1 = EgDensity::from_raw(&params.c, &lambda, &params.mu, params.tau, &params.sigma2, DensityEval::Exact).unwrap();
            let rotated = &lambda * g.transpose();
            let mu_rot = &g * &params.mu;
            let d2 = EgDensity::from_raw(&params.c, &rotated, &mu_rot, params.tau, &params.sigma2, DensityEval::Exact).unwrap();
            let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = d1.log_density(&x).unwrap();
            let b = d2.log_density(&x).unwrap();
            assert!((a - b).abs() <= 1e-6, "trial {trial}: {a} vs {b}");
        }
    }

    #[test]
    fn marginal_full_set_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = random_params(3, 2, &mut rng);
        let marg = eg_marginal(&params, &[0, 1, 2]).unwrap();
        let d1 = EgDensity::new(&params).unwrap();
        let d2 = EgDensity::new(&marg).unwrap();
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            assert!((d1.log_density(&x).unwrap() - d2.log_density(&x).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn singleton_marginal_density_integrates_to_one() {
        // p = 3, k = 2 marginal onto one coordinate: fewer coordinates than
        // latent dimensions, exercising the zero-padded representation.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = random_params(3, 2, &mut rng);
        let marg = eg_marginal(&params, &[1]).unwrap();
        assert_eq!(marg.p(), 1);
        assert_eq!(marg.k(), 2);
        let dens = EgDensity::new(&marg).unwrap();
        // integrate over a generous interval by Simpson's rule
        let spread = marg.lambda().norm() + 10.0 * marg.sigma2[0].sqrt() + 1.0;
        let (lo, hi) = (marg.c[0] - spread, marg.c[0] + spread);
        let n = 4000usize;
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = DVector::from_element(1, lo + i as f64 * h);
            let f = dens.log_density(&x).unwrap().exp();
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f;
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-4, "integral {total}");
    }

    #[test]
    fn marginal_matches_numerically_integrated_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = random_params(3, 2, &mut rng);
        let marg = eg_marginal(&params, &[0, 2]).unwrap();
        let dm = EgDensity::new(&marg).unwrap();
        let dj = EgDensity::new(&params).unwrap();
        let (pt, _) = eg_sample(&params, 1, &mut rng, false);
        let x_full = pt.row(0);
        let x_i = DVector::from_column_slice(&[x_full[0], x_full[2]]);
        // integrate the joint over the dropped coordinate
        let spread = params.lambda().row(1).norm() + 10.0 * params.sigma2[1].sqrt();
        let (lo, hi) = (params.c[1] - spread, params.c[1] + spread);
        let n = 2000usize;
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let mut x = x_full.clone();
            x[1] = lo + i as f64 * h;
            let f = dj.log_density(&x).unwrap().exp();
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f;
        }
        total *= h / 3.0;
        let got = dm.log_density(&x_i).unwrap();
        assert!(
            ((got - total.ln()).exp() - 1.0).abs() < 1e-4,
            "marginal {got} vs integrated {}",
            total.ln()
        );
    }

    #[test]
    fn density_normalizes_in_two_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = random_params(2, 2, &mut rng);
        let dens = EgDensity::new(&params).unwrap();
        let spread = params.s.max() + 8.0 * params.sigma2.map(|v| v.sqrt()).max() + 0.5;
        // composite Simpson over a wide box; 240 panels per axis resolves the
        // noise-scale features (sigma >= 0.18) with plenty of margin
        let n = 240usize;
        let mut total = 0.0;
        let h0 = 2.0 * spread / n as f64;
        let simpson_w = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        for i in 0..=n {
            let x0 = params.c[0] - spread + i as f64 * h0;
            let mut inner = 0.0;
            for j in 0..=n {
                let x1 = params.c[1] - spread + j as f64 * h0;
                let x = DVector::from_column_slice(&[x0, x1]);
                inner += simpson_w(j) * dens.log_density(&x).unwrap().exp();
            }
            total += simpson_w(i) * inner * h0 / 3.0;
        }
        total *= h0 / 3.0;
        assert!((total - 1.0).abs() < 1e-3, "2-D normalization {total}");
    }

    #[test]
    fn limit_construction_mean_and_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = 4;
        let k = 3;
        let u = random_stiefel(p, k, &mut rng);
        let s = DVector::from_column_slice(&[1.5, 0.8, 0.4]);
        let c = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma2 = DVector::from_element(p, 0.04);

        for &tau in &[10.0, 1e3, 1e6] {
            let params = eg_limit_construction(&u, &s, &c, &sigma2, tau).unwrap();
            assert_relative_eq!(eg_mean(&params), c, epsilon = 1e-10);
        }

        let params = eg_limit_construction(&u, &s, &c, &sigma2, 1e6).unwrap();
        let factor = eg_limit_gaussian_factor(&u, &s, &c, &sigma2);
        let cov_eg = eg_cov(&params);
        let cov_factor = factor.cov();
        let rel = (&cov_eg - &cov_factor).norm() / cov_factor.norm();
        assert!(rel < 1e-2, "limit covariance relative error {rel}");

        // Gaussian limit symmetry: coordinate skewness vanishes
        let (data, _) = eg_sample(&params, 100_000, &mut rng, false);
        let means = data.values().row_mean();
        for j in 0..p {
            let col: Vec<f64> = (0..data.n()).map(|i| data.values()[(i, j)] - means[j]).collect();
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            let m3 = col.iter().map(|v| v * v * v).sum::<f64>() / col.len() as f64;
            let skew = m3 / m2.powf(1.5);
            assert!(skew.abs() < 0.05, "coordinate {j} skewness {skew}");
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params = random_params(4, 3, &mut rng);
        let text = params.to_json_string();
        let back = EGParams::from_json_str(&text).unwrap();
        assert_eq!(params, back);
        let row = params.to_flat_row();
        let back2 = EGParams::from_flat_row(4, 3, &row).unwrap();
        assert_eq!(params, back2);
        assert_eq!(EGParams::flat_labels(4, 3).len(), row.len());
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let mut rng1 = ChaCha8Rng::seed_from_u64(16);
        let mut rng2 = ChaCha8Rng::seed_from_u64(16);
        let params = random_params(3, 2, &mut rng1);
        let params2 = random_params(3, 2, &mut rng2);
        assert_eq!(params, params2);
        let (a, _) = eg_sample(&params, 50, &mut rng1, false);
        let (b, _) = eg_sample(&params2, 50, &mut rng2, false);
        assert_eq!(a.values(), b.values());
    }
}
