// pilot: end-to-end fit quality on the very curved setting
use ellipsoid_gaussian::benchmarks::{gen_setting, Setting, SettingTruth};
use ellipsoid_gaussian::eg::{eg_sample, EgDensity};
use ellipsoid_gaussian::inference::{fit, FitConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train = gen_setting(Setting::VeryCurved8d, 400, &mut rng).unwrap();
    let mut rng_test = ChaCha8Rng::seed_from_u64(8);
    let test = gen_setting(Setting::VeryCurved8d, 1000, &mut rng_test).unwrap();
    let truth = match &train.truth {
        SettingTruth::Eg(p) => p.clone(),
        _ => unreachable!(),
    };

    let mut config = FitConfig::new(4, 1);
    config.n_iter = 10_000;
    config.minibatch = 50;
    config.step_size = 1e-5;

    let t0 = Instant::now();
    let samples = fit(&train.data, &config, None).unwrap();
    let fit_time = t0.elapsed().as_secs_f64();
    println!("fit: {fit_time:.1}s, {} draws, ram acc {:.3} (recent {:.3}), failures {}",
        samples.draws.len(), samples.ram_acceptance, samples.ram_acceptance_recent, samples.const_failures);

    // held-out lppd per observation: mean over draws of log density (thin to 200 draws)
    let t1 = Instant::now();
    let step = (samples.draws.len() / 200).max(1);
    let kept: Vec<_> = samples.draws.iter().step_by(step).collect();
    let mut total = 0.0;
    for draw in &kept {
        let dens = EgDensity::new(draw).unwrap();
        for i in 0..test.data.n() {
            total += dens.log_density(&test.data.row(i)).unwrap();
        }
    }
    let lppd_fit = total / (kept.len() as f64 * test.data.n() as f64);
    let dens_true = EgDensity::new(&truth).unwrap();
    let mut total_true = 0.0;
    for i in 0..test.data.n() {
        total_true += dens_true.log_density(&test.data.row(i)).unwrap();
    }
    let lppd_true = total_true / test.data.n() as f64;
    println!("lppd/obs: fit {lppd_fit:.4} vs truth {lppd_true:.4} (gap {:.3}) [{:.1}s]",
        (lppd_fit - lppd_true).abs(), t1.elapsed().as_secs_f64());

    // posterior predictive correlation matrix vs training
    let mut rng_pp = ChaCha8Rng::seed_from_u64(9);
    let m = samples.draws.len();
    let n_pp = 4000;
    let p = train.data.p();
    let mut pp = nalgebra::DMatrix::zeros(n_pp, p);
    for i in 0..n_pp {
        let draw = &samples.draws[(i * 7919) % m];
        let (one, _) = eg_sample(draw, 1, &mut rng_pp, false);
        for j in 0..p {
            pp[(i, j)] = one.values()[(0, j)];
        }
    }
    let corr = |d: &nalgebra::DMatrix<f64>| {
        let n = d.nrows();
        let means = d.row_mean();
        let sds: Vec<f64> = (0..d.ncols()).map(|j| {
            ((0..n).map(|i| (d[(i, j)] - means[j]).powi(2)).sum::<f64>() / n as f64).sqrt()
        }).collect();
        nalgebra::DMatrix::from_fn(d.ncols(), d.ncols(), |a, b| {
            (0..n).map(|i| (d[(i, a)] - means[a]) * (d[(i, b)] - means[b])).sum::<f64>() / (n as f64 * sds[a] * sds[b])
        })
    };
    let c_train = corr(train.data.values());
    let c_pp = corr(&pp);
    let mut worst: f64 = 0.0;
    for a in 0..p {
        for b in 0..p {
            worst = worst.max((c_train[(a, b)] - c_pp[(a, b)]).abs());
        }
    }
    println!("predictive correlation: worst entrywise gap {worst:.4}");

    // parameter summaries
    let med_tau = {
        let mut taus: Vec<f64> = samples.draws.iter().map(|d| d.tau).collect();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        taus[taus.len() / 2]
    };
    println!("posterior median tau {med_tau:.2} (true 3.0); last draw s = {:?}",
        samples.draws.last().unwrap().s.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
}
