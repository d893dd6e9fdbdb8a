//! The von Mises-Fisher distribution on the unit sphere S^{k-1}.
//!
//! Density is taken with respect to the *uniform probability measure* on the
//! sphere, so `f(z) = C_k(tau) exp(tau mu' z)` integrates to one under
//! uniform-measure Monte Carlo and `tau = 0` gives the constant density 1.

use crate::error::{EgError, Result};
use crate::special::{bessel_ratio, log_vmf_const};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Mean direction and concentration of a vMF distribution on S^{k-1}.
#[derive(Clone, Debug)]
pub struct VmfParams {
    mu: DVector<f64>,
    tau: f64,
}

impl VmfParams {
    /// `mu` must be unit-norm within 1e-12, `tau >= 0`, `k >= 2`.
    pub fn new(mu: DVector<f64>, tau: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(EgError::domain(format!(
                "vMF needs ambient dimension >= 2, got {}",
                mu.len()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(EgError::domain("vMF mean direction has non-finite entries".to_string()));
        }
        if (mu.norm() - 1.0).abs() > 1e-12 {
            return Err(EgError::domain(format!(
                "vMF mean direction must be unit-norm within 1e-12, |mu| = {}",
                mu.norm()
            )));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(EgError::domain(format!("vMF concentration must be >= 0, got {tau}")));
        }
        Ok(VmfParams { mu, tau })
    }

    /// Normalizes `direction` and uses it as the mean direction.
    pub fn from_direction(direction: DVector<f64>, tau: f64) -> Result<Self> {
        let n = direction.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(EgError::domain("cannot normalize a zero/non-finite direction".to_string()));
        }
        VmfParams::new(direction / n, tau)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Mean resultant length rho_k(tau); E[z] = rho * mu.
    pub fn mean_resultant(&self) -> f64 {
        bessel_ratio(self.dim(), self.tau).expect("validated params")
    }
}

/// Draw a point uniformly from S^{k-1}.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// log f(z; mu, tau) = log C_k(tau) + tau mu' z, for unit-norm z.
pub fn vmf_log_density(z: &DVector<f64>, params: &VmfParams) -> Result<f64> {
    if z.len() != params.dim() {
        return Err(EgError::dimension(format!(
            "point has dimension {} but vMF lives on S^{}",
            z.len(),
            params.dim() - 1
        )));
    }
    if (z.norm() - 1.0).abs() > 1e-8 {
        return Err(EgError::domain(format!("point must be unit-norm within 1e-8, |z| = {}", z.norm())));
    }
    Ok(log_vmf_const(params.dim(), params.tau)? + params.tau * params.mu.dot(z))
}

/// Radial coordinate w = mu' z via the standard beta-envelope rejection
/// scheme (Wood 1994). Exact for every k >= 2 and tau > 0.
fn sample_radial<R: Rng + ?Sized>(k: usize, tau: f64, rng: &mut R) -> f64 {
    let d = (k - 1) as f64;
    // b computed with the conjugate form to avoid cancellation at large tau.
    let b = d / (2.0 * tau + (4.0 * tau * tau + d * d).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = tau * x0 + d * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * d, 0.5 * d).expect("valid beta shapes");
    for _ in 0..100_000_000u64 {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if tau * w + d * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
    unreachable!("vMF envelope rejection has acceptance probability bounded away from zero");
}

/// Exact vMF draws; returns an n x k matrix whose rows are unit vectors.
///
/// Construction: radial coordinate by envelope rejection, a uniform direction
/// on the orthogonal sphere, then a Householder reflection carrying the north
/// pole onto `mu`. Deterministic given the generator state.
pub fn vmf_sample<R: Rng + ?Sized>(params: &VmfParams, n: usize, rng: &mut R) -> DMatrix<f64> {
    let k = params.dim();
    let mut out = DMatrix::zeros(n, k);

    // Householder vector mapping e_1 to mu (identity when mu ~ e_1).
    let mut v = -params.mu.clone();
    v[0] += 1.0;
    let v_norm2 = v.norm_squared();
    let reflect = v_norm2 > 1e-24;

    for i in 0..n {
        let mut y = if params.tau == 0.0 {
            sample_uniform_sphere(k, rng)
        } else {
            let w = sample_radial(k, params.tau, rng);
            let ortho = sample_uniform_sphere(k - 1, rng);
            let r = (1.0 - w * w).max(0.0).sqrt();
            let mut y = DVector::zeros(k);
            y[0] = w;
            for j in 1..k {
                y[j] = r * ortho[j - 1];
            }
            y
        };
        if reflect {
            let s = 2.0 * v.dot(&y) / v_norm2;
            y -= s * &v;
        }
        y /= y.norm();
        out.row_mut(i).copy_from_slice(y.as_slice());
    }
    out
}

/// Rescaled residuals sqrt(tau) * (z_i - mu); for large tau these approach a
/// Gaussian with covariance I - mu mu' supported on the tangent plane at mu.
pub fn vmf_limit_residuals<R: Rng + ?Sized>(
    params: &VmfParams,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if params.tau <= 0.0 {
        return Err(EgError::domain("limit residuals require tau > 0".to_string()));
    }
    let draws = vmf_sample(params, n, rng);
    let sqrt_tau = params.tau.sqrt();
    let mut out = draws;
    for i in 0..n {
        for j in 0..params.dim() {
            out[(i, j)] = sqrt_tau * (out[(i, j)] - params.mu[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(v);
        let n = v.norm();
        v / n
    }

    #[test]
    fn density_reference_points() {
        let mu = unit(&[0.0, 0.0, 1.0]);
        let uniform = VmfParams::new(mu.clone(), 0.0).unwrap();
        assert_eq!(vmf_log_density(&mu, &uniform).unwrap(), 0.0);

        let p = VmfParams::new(mu.clone(), 3.0).unwrap();
        let want = log_vmf_const(3, 3.0).unwrap() + 3.0;
        assert_relative_eq!(vmf_log_density(&mu, &p).unwrap(), want, max_relative = 1e-14);

        let off = DVector::from_column_slice(&[0.0, 0.0, 1.1]);
        assert!(vmf_log_density(&off, &p).is_err());
    }

    #[test]
    fn density_normalizes_under_uniform_mc() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = VmfParams::new(unit(&[1.0, -2.0, 0.5]), 2.5).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = sample_uniform_sphere(3, &mut rng);
            sum += vmf_log_density(&z, &p).unwrap().exp();
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.005, "normalization {mean}");
    }

    #[test]
    fn samples_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, tau) in &[(2usize, 0.0f64), (2, 5.0), (3, 1.0), (6, 250.0), (4, 1e4)] {
            let mu = sample_uniform_sphere(k, &mut rng);
            let p = VmfParams::new(mu, tau).unwrap();
            let draws = vmf_sample(&p, 200, &mut rng);
            for i in 0..200 {
                let norm: f64 = draws.row(i).norm();
                assert!((norm - 1.0).abs() <= 1e-12, "k={k} tau={tau}: |z| = {norm}");
            }
        }
    }

    #[test]
    fn uniform_case_has_vanishing_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = VmfParams::new(unit(&[1.0, 0.0, 0.0]), 0.0).unwrap();
        let n = 1_000_000;
        let draws = vmf_sample(&p, n, &mut rng);
        let mean = draws.row_mean();
        assert!(mean.norm() <= 0.005, "mean norm {}", mean.norm());
    }

    #[test]
    fn resultant_matches_bessel_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(k, tau) in &[(3usize, 2.0f64), (4, 8.0), (2, 1.0)] {
            let mu = sample_uniform_sphere(k, &mut rng);
            let p = VmfParams::new(mu.clone(), tau).unwrap();
            let n = 1_000_000;
            let draws = vmf_sample(&p, n, &mut rng);
            let mean = draws.row_mean().transpose();
            let rho = bessel_ratio(k, tau).unwrap();
            let err = (&mean - rho * &mu).norm();
            assert!(err <= 0.005 * rho, "k={k} tau={tau}: |mean - rho mu| = {err}");
        }
    }

    #[test]
    fn radial_mean_matches_langevin() {
        // k = 3, tau = 10: E[mu' z] = coth(10) - 1/10.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mu = unit(&[0.0, 0.0, 1.0]);
        let p = VmfParams::new(mu.clone(), 10.0).unwrap();
        let n = 400_000;
        let draws = vmf_sample(&p, n, &mut rng);
        let mean_w: f64 = (0..n).map(|i| draws.row(i).transpose().dot(&mu)).sum::<f64>() / n as f64;
        let want = 1.0 / 10.0f64.tanh() - 0.1;
        assert!((mean_w - want).abs() < 2e-3, "{mean_w} vs {want}");
    }

    #[test]
    fn rotation_equivariance_in_moments() {
        // Rotating draws from vMF(mu) matches draws from vMF(R mu) in the
        // first two moments, up to Monte Carlo error.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let k = 3;
        let mu = unit(&[1.0, 1.0, 0.0]);
        // a fixed rotation: Householder-free QR of a seeded matrix
        let raw = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = raw.qr().q();
        let p1 = VmfParams::new(mu.clone(), 4.0).unwrap();
        let p2 = VmfParams::new(&q * &mu, 4.0).unwrap();
        let n = 200_000;
        let d1 = vmf_sample(&p1, n, &mut rng);
        let d2 = vmf_sample(&p2, n, &mut rng);

        let rotated_mean = &q * d1.row_mean().transpose();
        let direct_mean = d2.row_mean().transpose();
        assert!((rotated_mean - direct_mean).norm() < 0.01);

        let cov = |d: &DMatrix<f64>| {
            let m = d.row_mean();
            let centered = DMatrix::from_fn(d.nrows(), k, |i, j| d[(i, j)] - m[j]);
            centered.transpose() * &centered / (d.nrows() as f64)
        };
        let c1 = &q * cov(&d1) * q.transpose();
        let c2 = cov(&d2);
        assert!((c1 - c2).norm() < 0.01);
    }

    #[test]
    fn limit_residuals_approach_tangent_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mu = unit(&[0.3, -0.5, 0.9]);
        let p = VmfParams::new(mu.clone(), 1e4).unwrap();
        let n = 1_000_000;
        let res = vmf_limit_residuals(&p, n, &mut rng).unwrap();

        let mean = res.row_mean();
        // The limiting mean is zero; at finite tau there is an exact bias of
        // -(k-1)/(2 sqrt(tau)) along mu, so test tangent components against the
        // tight bound and the mu component against its known size.
        let mean_v = mean.transpose();
        let along = mean_v.dot(&mu);
        let tangent = &mean_v - along * &mu;
        assert!(tangent.norm() < 5e-3, "tangent mean norm {}", tangent.norm());
        let expected_bias = -(3.0 - 1.0) / (2.0 * 1e4f64.sqrt());
        assert!((along - expected_bias).abs() < 5e-3, "bias {along} vs {expected_bias}");

        let centered = DMatrix::from_fn(n, 3, |i, j| res[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / n as f64;
        let want = DMatrix::identity(3, 3) - &mu * mu.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (cov[(i, j)] - want[(i, j)]).abs() < 5e-2,
                    "cov[{i},{j}] = {} vs {}",
                    cov[(i, j)],
                    want[(i, j)]
                );
            }
        }
        // component along mu collapses
        let along = (&mu.transpose() * &cov * &mu)[(0, 0)];
        assert!(along <= 1e-2, "variance along mu = {along}");

        assert!(vmf_limit_residuals(&VmfParams::new(mu, 0.0).unwrap(), 10, &mut rng).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sampled_rows_stay_on_sphere(seed in 0u64..1000, k in 2usize..6, tau in 0.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = sample_uniform_sphere(k, &mut rng);
            let p = VmfParams::new(mu, tau).unwrap();
            let draws = vmf_sample(&p, 32, &mut rng);
            for i in 0..32 {
                let norm: f64 = draws.row(i).norm();
                prop_assert!((norm - 1.0).abs() <= 1e-12);
            }
        }
    }
}
