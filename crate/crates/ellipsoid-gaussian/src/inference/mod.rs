//! Posterior sampling for Ellipsoid-Gaussian parameters.
//!
//! One chain interleaves two kernels per iteration:
//!
//! * a geodesic stochastic-gradient Nosé-Hoover thermostat step that updates
//!   the manifold block {U, log s, mu, and c when the center is free} jointly
//!   from a minibatch gradient, with exact great-circle flow for mu, QR
//!   retraction for U, and a per-block thermostat absorbing gradient noise;
//! * a robust adaptive Metropolis step on (log sigma^2, log tau) against the
//!   full-data posterior, whose proposal factor adapts toward a target
//!   acceptance rate. These parameters benefit from much larger moves than
//!   the shared thermostat step size allows.

mod posterior;
mod priors;
mod ram;
mod sgnht;

pub use posterior::{log_posterior, ManifoldGrad, Posterior};
pub use priors::{gamma_log_pdf, inv_gamma_log_pdf, Priors};

use crate::ctef::{ctef_fit, CtefOptions, EllipsoidFit};
use crate::dataset::{Dataset, Standardization};
use crate::eg::{DensityEval, EGParams};
use crate::error::{EgError, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ram::RamAdapter;
use serde::{Deserialize, Serialize};
use sgnht::{sphere_geodesic, sphere_tangent, stiefel_retract, stiefel_tangent};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Sampler configuration. Defaults follow the recommended settings: step
/// size 1e-5, minibatches of 50, 10000 iterations with the first half
/// discarded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub n_iter: usize,
    /// Iterations discarded; defaults to n_iter / 2.
    pub burn_in: Option<usize>,
    pub step_size: f64,
    pub minibatch: usize,
    pub update_center: bool,
    pub thermostat_diffusion: f64,
    pub ram_target_accept: f64,
    pub seed: u64,
    pub thin: usize,
    /// Fisher-Bingham evaluation used in likelihoods.
    pub eval: DensityEval,
    /// Prior hyperparameters; derived from the initializer when absent.
    pub priors: Option<Priors>,
}

impl FitConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        FitConfig {
            k,
            n_iter: 10_000,
            burn_in: None,
            step_size: 1e-5,
            minibatch: 50,
            update_center: true,
            thermostat_diffusion: 1.0,
            ram_target_accept: 0.234,
            seed,
            thin: 1,
            eval: DensityEval::Exact,
            priors: None,
        }
    }

    pub fn burn_in_len(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iter / 2)
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.k < 2 || self.k > p {
            return Err(EgError::domain(format!("latent dimension k must satisfy 2 <= k <= p, got k={} p={p}", self.k)));
        }
        if self.minibatch == 0 || self.minibatch > n {
            return Err(EgError::domain(format!("minibatch must be in 1..=n, got {} (n = {n})", self.minibatch)));
        }
        if !(self.step_size > 0.0) {
            return Err(EgError::domain("step size must be positive".to_string()));
        }
        if self.burn_in_len() >= self.n_iter {
            return Err(EgError::domain(format!(
                "burn-in ({}) must be smaller than the iteration count ({})",
                self.burn_in_len(),
                self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(EgError::domain("thinning must be >= 1".to_string()));
        }
        if !(self.ram_target_accept > 0.0 && self.ram_target_accept < 1.0) {
            return Err(EgError::domain("target acceptance must be in (0, 1)".to_string()));
        }
        Ok(())
    }
}

/// All per-chain sampler state.
pub struct ChainState {
    pub params: EGParams,
    pub momentum_c: DVector<f64>,
    pub momentum_log_s: DVector<f64>,
    pub momentum_u: DMatrix<f64>,
    pub momentum_mu: DVector<f64>,
    /// Thermostat scalar per manifold block, order (c, log s, U, mu).
    pub thermostats: [f64; 4],
    pub iteration: usize,
}

/// Posterior draws plus run metadata.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub draws: Vec<EGParams>,
    pub p: usize,
    pub k: usize,
    pub config: FitConfig,
    pub priors: Priors,
    pub ram_acceptance: f64,
    pub ram_acceptance_recent: f64,
    /// Count of normalizing-constant evaluation failures over the run.
    pub const_failures: usize,
    pub n_train: usize,
    pub column_names: Vec<String>,
    pub column_means: Vec<f64>,
    pub column_mins: Vec<f64>,
    pub column_maxs: Vec<f64>,
    pub standardization: Option<Standardization>,
    /// Wall-clock seconds; reported on stderr, never serialized, so outputs
    /// stay byte-identical across reruns.
    pub elapsed_secs: f64,
}

#[derive(Serialize, Deserialize)]
struct SamplesMeta {
    p: usize,
    k: usize,
    n_draws: usize,
    config: FitConfig,
    priors: Priors,
    ram_acceptance: f64,
    ram_acceptance_recent: f64,
    const_failures: usize,
    n_train: usize,
    column_names: Vec<String>,
    column_means: Vec<f64>,
    column_mins: Vec<f64>,
    column_maxs: Vec<f64>,
    standardization: Option<Standardization>,
}

impl PosteriorSamples {
    /// Columnar draws file plus a metadata sidecar in `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("samples.csv"))?);
        writeln!(f, "{}", EGParams::flat_labels(self.p, self.k).join(","))?;
        for draw in &self.draws {
            let row: Vec<String> = draw.to_flat_row().iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        let meta = SamplesMeta {
            p: self.p,
            k: self.k,
            n_draws: self.draws.len(),
            config: self.config.clone(),
            priors: self.priors.clone(),
            ram_acceptance: self.ram_acceptance,
            ram_acceptance_recent: self.ram_acceptance_recent,
            const_failures: self.const_failures,
            n_train: self.n_train,
            column_names: self.column_names.clone(),
            column_means: self.column_means.clone(),
            column_mins: self.column_mins.clone(),
            column_maxs: self.column_maxs.clone(),
            standardization: self.standardization.clone(),
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("serializable"))?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<PosteriorSamples> {
        let dir = dir.as_ref();
        let meta_text = std::fs::read_to_string(dir.join("meta.json"))?;
        let meta: SamplesMeta = serde_json::from_str(&meta_text)
            .map_err(|e| EgError::Parse { line: e.line(), message: e.to_string() })?;
        let table = Dataset::from_csv_path(dir.join("samples.csv"))?;
        let want = EGParams::flat_labels(meta.p, meta.k);
        if table.column_names() != want.as_slice() {
            return Err(EgError::dimension(format!(
                "samples file has {} columns, expected the flat layout for p={}, k={}",
                table.column_names().len(),
                meta.p,
                meta.k
            )));
        }
        let mut draws = Vec::with_capacity(table.n());
        for i in 0..table.n() {
            let row: Vec<f64> = (0..table.p()).map(|j| table.values()[(i, j)]).collect();
            draws.push(EGParams::from_flat_row(meta.p, meta.k, &row)?);
        }
        Ok(PosteriorSamples {
            draws,
            p: meta.p,
            k: meta.k,
            elapsed_secs: 0.0,
            config: meta.config,
            priors: meta.priors,
            ram_acceptance: meta.ram_acceptance,
            ram_acceptance_recent: meta.ram_acceptance_recent,
            const_failures: meta.const_failures,
            n_train: meta.n_train,
            column_names: meta.column_names,
            column_means: meta.column_means,
            column_mins: meta.column_mins,
            column_maxs: meta.column_maxs,
            standardization: meta.standardization,
        })
    }
}

fn tangent_noise_u<R: Rng + ?Sized>(u: &DMatrix<f64>, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(u.nrows(), u.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    stiefel_tangent(u, &z)
}

fn tangent_noise_sphere<R: Rng + ?Sized>(mu: &DVector<f64>, scale: f64, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    sphere_tangent(mu, &z)
}

/// Run the hybrid sampler. When `init` is absent an ellipsoid fit is run
/// internally. Deterministic given the seed in `config`.
pub fn fit(data: &Dataset, config: &FitConfig, init: Option<EllipsoidFit>) -> Result<PosteriorSamples> {
    let start = Instant::now();
    let n = data.n();
    let p = data.p();
    config.validate(n, p)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let init = match init {
        Some(f) => f,
        None => ctef_fit(data, config.k, &CtefOptions::default(), &mut rng)?,
    };
    if init.p() != p || init.k() != config.k {
        return Err(EgError::dimension(format!(
            "initializer has p={}, k={} but the fit needs p={p}, k={}",
            init.p(),
            init.k(),
            config.k
        )));
    }
    let priors = match &config.priors {
        Some(pr) => pr.clone(),
        None => Priors::from_init(&init, data),
    };
    let posterior = Posterior::new(data, priors.clone(), config.eval);

    let mut params = init.to_eg_params()?;
    // the sampler works on log tau; keep it strictly positive
    if params.tau <= 1e-8 {
        params.tau = 1e-8;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let h = config.step_size;
    let diffusion = config.thermostat_diffusion;
    let noise_scale = (2.0 * diffusion * h).sqrt();
    let k = config.k;
    let dof = [p as f64, k as f64, (p * k) as f64 - 0.5 * (k * (k + 1)) as f64, (k - 1) as f64];

    let mut state = ChainState {
        momentum_c: DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)),
        momentum_log_s: DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal)),
        momentum_u: tangent_noise_u(&params.u, 1.0, &mut rng),
        momentum_mu: tangent_noise_sphere(&params.mu, 1.0, &mut rng),
        params,
        thermostats: [diffusion; 4],
        iteration: 0,
    };

    let mut ram = RamAdapter::new(p + 1, 0.1, config.ram_target_accept);
    let burn_in = config.burn_in_len();
    let mut draws = Vec::with_capacity((config.n_iter - burn_in) / config.thin + 1);
    let mut const_failures = 0usize;

    for iter in 0..config.n_iter {
        state.iteration = iter;
        let snapshot = (
            state.params.clone(),
            state.momentum_c.clone(),
            state.momentum_log_s.clone(),
            state.momentum_u.clone(),
            state.momentum_mu.clone(),
            state.thermostats,
        );

        let batch = rand::seq::index::sample(&mut rng, n, config.minibatch).into_vec();

        let mut failed = false;
        match sgnht_step(&posterior, config, &mut state, &batch, h, noise_scale, &dof, &mut rng) {
            Ok(()) => {}
            Err(_) => failed = true,
        }
        if !failed {
            match ram_step(&posterior, &mut state, &mut ram, &mut rng) {
                Ok(fails) => const_failures += fails,
                Err(_) => failed = true,
            }
        }
        if failed {
            const_failures += 1;
            let (params, mc, mls, mu_, mmu, th) = snapshot;
            state.params = params;
            state.momentum_c = mc;
            state.momentum_log_s = mls;
            state.momentum_u = mu_;
            state.momentum_mu = mmu;
            state.thermostats = th;
        }

        if iter >= 200 && const_failures as f64 > 0.01 * (iter + 1) as f64 {
            return Err(EgError::numerical(format!(
                "aborting: {const_failures} normalizing-constant failures in {} iterations (> 1%); \
                 last state: tau = {}, min sigma2 = {:.3e}",
                iter + 1,
                state.params.tau,
                state.params.sigma2.min()
            )));
        }

        if iter >= burn_in && (iter - burn_in) % config.thin == 0 {
            draws.push(state.params.clone());
        }
    }

    let (mins, maxs) = data.column_ranges();
    let elapsed = start.elapsed().as_secs_f64();
    Ok(PosteriorSamples {
        draws,
        p,
        k,
        config: config.clone(),
        priors,
        ram_acceptance: ram.acceptance_rate(),
        ram_acceptance_recent: ram.recent_acceptance_rate(2000),
        const_failures,
        n_train: n,
        column_names: data.column_names().to_vec(),
        column_means: data.column_means().iter().cloned().collect(),
        column_mins: mins.iter().cloned().collect(),
        column_maxs: maxs.iter().cloned().collect(),
        standardization: data.standardization().cloned(),
        elapsed_secs: elapsed,
    })
}

/// One symmetric thermostat step on the manifold block: momentum half-kick
/// with friction and injected noise, geodesic/retraction drift, second
/// half-kick with the transported gradient, then the thermostat update.
#[allow(clippy::too_many_arguments)]
fn sgnht_step<R: Rng + ?Sized>(
    posterior: &Posterior,
    config: &FitConfig,
    state: &mut ChainState,
    batch: &[usize],
    h: f64,
    noise_scale: f64,
    dof: &[f64; 4],
    rng: &mut R,
) -> Result<()> {
    let grad = posterior.manifold_grad(&state.params, Some(batch))?;
    let [xi_c, xi_s, xi_u, xi_mu] = state.thermostats;

    // first half-kick, with the injected diffusion noise
    if config.update_center {
        let noise = DVector::from_fn(state.params.c.len(), |_, _| rng.sample::<f64, _>(StandardNormal) * noise_scale);
        state.momentum_c += 0.5 * h * (&grad.c - xi_c * &state.momentum_c) + noise;
    }
    {
        let noise = DVector::from_fn(state.params.s.len(), |_, _| rng.sample::<f64, _>(StandardNormal) * noise_scale);
        state.momentum_log_s += 0.5 * h * (&grad.log_s - xi_s * &state.momentum_log_s) + noise;
    }
    {
        let noise = tangent_noise_u(&state.params.u, noise_scale, rng);
        state.momentum_u += 0.5 * h * (&grad.u - xi_u * &state.momentum_u) + noise;
    }
    {
        let noise = tangent_noise_sphere(&state.params.mu, noise_scale, rng);
        state.momentum_mu += 0.5 * h * (&grad.mu - xi_mu * &state.momentum_mu) + noise;
    }

    // full geodesic / retraction drift
    if config.update_center {
        state.params.c += h * &state.momentum_c;
    }
    let new_log_s = state.params.s.map(|v| v.max(1e-300).ln()) + h * &state.momentum_log_s;
    state.params.s = new_log_s.map(f64::exp);
    let (new_mu, new_vmu) = sphere_geodesic(&state.params.mu, &state.momentum_mu, h);
    state.params.mu = new_mu;
    state.momentum_mu = new_vmu;
    let new_u = stiefel_retract(&state.params.u, &state.momentum_u, h);
    state.momentum_u = stiefel_tangent(&new_u, &state.momentum_u);
    state.params.u = new_u;

    // second half-kick reuses the minibatch gradient, transported to the new
    // tangent spaces
    if config.update_center {
        state.momentum_c += 0.5 * h * (&grad.c - xi_c * &state.momentum_c);
    }
    state.momentum_log_s += 0.5 * h * (&grad.log_s - xi_s * &state.momentum_log_s);
    let gu = stiefel_tangent(&state.params.u, &grad.u);
    state.momentum_u += 0.5 * h * (&gu - xi_u * &state.momentum_u);
    let gmu = sphere_tangent(&state.params.mu, &grad.mu);
    state.momentum_mu += 0.5 * h * (&gmu - xi_mu * &state.momentum_mu);

    // thermostats track per-block kinetic energy
    if config.update_center {
        state.thermostats[0] += h * (state.momentum_c.norm_squared() / dof[0] - 1.0);
    }
    state.thermostats[1] += h * (state.momentum_log_s.norm_squared() / dof[1] - 1.0);
    state.thermostats[2] += h * (state.momentum_u.norm_squared() / dof[2] - 1.0);
    state.thermostats[3] += h * (state.momentum_mu.norm_squared() / dof[3] - 1.0);

    Ok(())
}

/// Full-data adaptive Metropolis step on (log sigma^2, log tau). Returns the
/// number of normalizing-constant failures encountered on proposals.
fn ram_step<R: Rng + ?Sized>(
    posterior: &Posterior,
    state: &mut ChainState,
    ram: &mut RamAdapter,
    rng: &mut R,
) -> Result<usize> {
    let p = state.params.p();
    let current = posterior.ram_target(&state.params)?;
    let mut x = DVector::zeros(p + 1);
    for j in 0..p {
        x[j] = state.params.sigma2[j].ln();
    }
    x[p] = state.params.tau.max(1e-300).ln();

    let (proposal, u) = ram.propose(&x, rng);
    let mut prop_params = state.params.clone();
    for j in 0..p {
        prop_params.sigma2[j] = proposal[j].exp();
    }
    prop_params.tau = proposal[p].exp();

    let mut failures = 0usize;
    let alpha = if prop_params.sigma2.iter().all(|v| v.is_finite() && *v > 0.0) && prop_params.tau.is_finite() {
        match posterior.ram_target(&prop_params) {
            Ok(t) => (t - current).exp().min(1.0),
            Err(_) => {
                failures += 1;
                0.0
            }
        }
    } else {
        0.0
    };
    let accepted = rng.random::<f64>() < alpha;
    if accepted {
        state.params = prop_params;
    }
    ram.adapt(&u, alpha, accepted);
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eg::eg_sample;
    use crate::vmf::sample_uniform_sphere;
    use rand::Rng;

    fn curved_data(seed: u64, n: usize) -> (Dataset, EGParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 4;
        let k = 2;
        let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = g.qr().q();
        let params = EGParams::new(
            DVector::zeros(p),
            u,
            DVector::from_column_slice(&[1.8, 1.0]),
            sample_uniform_sphere(k, &mut rng),
            3.0,
            DVector::from_element(p, 0.01),
        )
        .unwrap();
        let (data, _) = eg_sample(&params, n, &mut rng, false);
        (data, params)
    }

    fn quick_config(seed: u64, n_iter: usize) -> FitConfig {
        let mut c = FitConfig::new(2, seed);
        c.n_iter = n_iter;
        c.burn_in = Some(n_iter / 2);
        c.minibatch = 25;
        c.step_size = 1e-4;
        c
    }

    #[test]
    fn chain_is_reproducible_bitwise() {
        let (data, _) = curved_data(1, 60);
        let config = quick_config(42, 60);
        let a = fit(&data, &config, None).unwrap();
        let b = fit(&data, &config, None).unwrap();
        assert_eq!(a.draws.len(), b.draws.len());
        for (x, y) in a.draws.iter().zip(b.draws.iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.ram_acceptance, b.ram_acceptance);
    }

    #[test]
    fn manifold_constraints_hold_for_every_draw() {
        let (data, _) = curved_data(2, 60);
        let config = quick_config(7, 80);
        let samples = fit(&data, &config, None).unwrap();
        assert!(!samples.draws.is_empty());
        for draw in &samples.draws {
            assert!((draw.mu.norm() - 1.0).abs() <= 1e-8);
            let gram = draw.u.transpose() * &draw.u;
            let err = (&gram - DMatrix::identity(2, 2)).abs().max();
            assert!(err <= 1e-8, "U drifted off the manifold by {err}");
            assert!(draw.validate().is_ok());
        }
    }

    #[test]
    fn fixed_center_stays_fixed() {
        let (data, _) = curved_data(3, 60);
        let mut config = quick_config(9, 60);
        config.update_center = false;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = ctef_fit(&data, 2, &CtefOptions::default(), &mut rng).unwrap();
        let c0 = init.center.clone();
        let samples = fit(&data, &config, Some(init)).unwrap();
        for draw in &samples.draws {
            assert_eq!(draw.c, c0, "center moved in fixed-center mode");
        }
    }

    #[test]
    fn exact_gradient_mode_stays_finite() {
        // minibatch = n with a small step: the trace must never diverge
        let (data, _) = curved_data(4, 50);
        let mut config = quick_config(13, 40);
        config.minibatch = 50;
        config.step_size = 1e-6;
        let samples = fit(&data, &config, None).unwrap();
        let post = Posterior::new(&data, samples.priors.clone(), DensityEval::Exact);
        for draw in &samples.draws {
            let lp = post.log_density(draw, None).unwrap();
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn serialization_round_trip() {
        let (data, _) = curved_data(5, 60);
        let config = quick_config(17, 40);
        let samples = fit(&data, &config, None).unwrap();
        let dir = std::env::temp_dir().join(format!("eg_test_samples_{}", std::process::id()));
        samples.write_dir(&dir).unwrap();
        let back = PosteriorSamples::read_dir(&dir).unwrap();
        assert_eq!(back.draws.len(), samples.draws.len());
        for (a, b) in samples.draws.iter().zip(back.draws.iter()) {
            assert_eq!(a, b, "draws must round-trip bit-exactly");
        }
        assert_eq!(back.n_train, samples.n_train);
        std::fs::remove_dir_all(&dir).ok();
    }
}
