//! Posterior predictive draws and held-out predictive scoring.

use crate::dataset::Dataset;
use crate::eg::{eg_sample, EgDensity};
use crate::error::{EgError, Result};
use crate::inference::PosteriorSamples;
use nalgebra::DMatrix;
use rand::Rng;

/// Draw from the posterior predictive: for each point, pick a posterior draw
/// uniformly with replacement and emit one sample from it. The output carries
/// the training standardization record so points can be mapped back to raw
/// units.
pub fn posterior_predictive<R: Rng + ?Sized>(
    samples: &PosteriorSamples,
    n_draws: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if samples.draws.is_empty() {
        return Err(EgError::domain("posterior sample is empty".to_string()));
    }
    let p = samples.p;
    let mut values = DMatrix::zeros(n_draws, p);
    for i in 0..n_draws {
        let which = rng.random_range(0..samples.draws.len());
        let (one, _) = eg_sample(&samples.draws[which], 1, rng, false);
        for j in 0..p {
            values[(i, j)] = one.values()[(0, j)];
        }
    }
    let data = Dataset::new(values, samples.column_names.clone())?;
    Ok(data.with_standardization(samples.standardization.clone()))
}

/// Held-out predictive score.
#[derive(Clone, Debug)]
pub struct LppdResult {
    /// sum over test rows of the draw-averaged log density.
    pub total: f64,
    /// total / n_test.
    pub per_observation: f64,
    pub n_test: usize,
    pub n_draws: usize,
    /// (row, draw) pairs dropped because the density evaluation failed.
    pub failed_pairs: usize,
}

/// h(X_test) = sum_i mean_m log q(x_i; theta_m) — the inner average is taken
/// over log densities (not a log-mean-exp). Failed (i, m) pairs are excluded
/// from the inner mean and counted.
pub fn lppd(samples: &PosteriorSamples, test: &Dataset) -> Result<LppdResult> {
    if samples.draws.is_empty() {
        return Err(EgError::domain("posterior sample is empty".to_string()));
    }
    if test.n() == 0 {
        return Err(EgError::domain("test set is empty".to_string()));
    }
    if test.p() != samples.p {
        return Err(EgError::dimension(format!(
            "test data has {} columns but the model was trained on {}",
            test.p(),
            samples.p
        )));
    }
    if test.column_names() != samples.column_names.as_slice() {
        return Err(EgError::dimension(
            "test columns do not match the training columns (names differ)".to_string(),
        ));
    }
    match (&samples.standardization, test.standardization()) {
        (Some(a), Some(b)) if a == b => {}
        (None, None) => {}
        _ => {
            return Err(EgError::domain(
                "test data must carry the training standardization record".to_string(),
            ))
        }
    }

    let n = test.n();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    let mut failed = 0usize;
    for draw in &samples.draws {
        let dens = EgDensity::with_eval(draw, samples.config.eval)?;
        for i in 0..n {
            match dens.log_density(&test.row(i)) {
                Ok(v) => {
                    sums[i] += v;
                    counts[i] += 1;
                }
                Err(_) => failed += 1,
            }
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        if counts[i] == 0 {
            return Err(EgError::numerical(format!(
                "density evaluation failed for every draw at test row {i}"
            )));
        }
        total += sums[i] / counts[i] as f64;
    }
    Ok(LppdResult {
        total,
        per_observation: total / n as f64,
        n_test: n,
        n_draws: samples.draws.len(),
        failed_pairs: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eg::{eg_log_density, EGParams};
    use crate::inference::{FitConfig, Priors};
    use crate::vmf::sample_uniform_sphere;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn samples_with(draws: Vec<EGParams>) -> PosteriorSamples {
        let p = draws[0].p();
        let k = draws[0].k();
        PosteriorSamples {
            draws,
            p,
            k,
            config: FitConfig::new(k, 0),
            priors: Priors {
                c_mean: vec![0.0; p],
                c_sd: vec![1.0; p],
                log_s_mean: 0.0,
                log_s_sd: 1.0,
                tau_shape: 1.0,
                tau_rate: 0.1,
                sigma2_shape: 1.0,
                sigma2_scale: 1.0,
            },
            ram_acceptance: 0.0,
            ram_acceptance_recent: 0.0,
            const_failures: 0,
            n_train: 0,
            column_names: (1..=p).map(|j| format!("x{j}")).collect(),
            column_means: vec![0.0; p],
            column_mins: vec![0.0; p],
            column_maxs: vec![0.0; p],
            standardization: None,
            elapsed_secs: 0.0,
        }
    }

    fn some_params(seed: u64) -> EGParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = nalgebra::DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        EGParams::new(
            DVector::zeros(3),
            g.qr().q(),
            DVector::from_column_slice(&[1.5, 0.8]),
            sample_uniform_sphere(2, &mut rng),
            3.0,
            DVector::from_element(3, 0.05),
        )
        .unwrap()
    }

    #[test]
    fn single_draw_lppd_is_the_log_density() {
        let params = some_params(1);
        let samples = samples_with(vec![params.clone()]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (test, _) = eg_sample(&params, 1, &mut rng, false);
        let res = lppd(&samples, &test).unwrap();
        let want = eg_log_density(&test.row(0), &params).unwrap();
        assert!((res.total - want).abs() < 1e-10);
        assert_eq!(res.n_test, 1);
    }

    #[test]
    fn repeated_draws_do_not_change_lppd() {
        let params = some_params(3);
        let one = samples_with(vec![params.clone()]);
        let many = samples_with(vec![params.clone(), params.clone(), params.clone()]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (test, _) = eg_sample(&params, 5, &mut rng, false);
        let a = lppd(&one, &test).unwrap();
        let b = lppd(&many, &test).unwrap();
        assert!((a.total - b.total).abs() < 1e-10);
    }

    #[test]
    fn lppd_is_invariant_to_row_and_draw_order() {
        let p1 = some_params(5);
        let p2 = some_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (test, _) = eg_sample(&p1, 6, &mut rng, false);
        let fwd = lppd(&samples_with(vec![p1.clone(), p2.clone()]), &test).unwrap();
        let rev = lppd(&samples_with(vec![p2, p1]), &test).unwrap();
        assert!((fwd.total - rev.total).abs() < 1e-9);

        let perm: Vec<usize> = vec![3, 1, 5, 0, 4, 2];
        let shuffled = test.subset(&perm).unwrap();
        let fwd2 = lppd(&samples_with(vec![some_params(5), some_params(6)]), &shuffled).unwrap();
        assert!((fwd.total - fwd2.total).abs() < 1e-9);
    }

    #[test]
    fn predictive_single_draw_matches_model_moments() {
        let params = some_params(8);
        let samples = samples_with(vec![params.clone()]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = posterior_predictive(&samples, 100_000, &mut rng).unwrap();
        let mean_pred = pred.values().row_mean().transpose();
        let mean_model = crate::eg::eg_mean(&params);
        assert!((mean_pred - mean_model).norm() < 0.02);
    }

    #[test]
    fn predictive_is_reproducible() {
        let samples = samples_with(vec![some_params(10), some_params(11)]);
        let a = posterior_predictive(&samples, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = posterior_predictive(&samples, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn dimension_and_standardization_mismatches_are_rejected() {
        let samples = samples_with(vec![some_params(12)]);
        let bad = Dataset::from_matrix(DMatrix::zeros(2, 2)).unwrap();
        assert!(lppd(&samples, &bad).is_err());
        let empty = Dataset::from_matrix(DMatrix::zeros(0, 3)).unwrap();
        assert!(lppd(&samples, &empty).is_err());
    }
}
