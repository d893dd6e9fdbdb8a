use crate::config_file::FileConfig;
use clap::{Args, Parser, Subcommand};
use ellipsoid_gaussian::benchmarks::{gen_setting, Setting};
use ellipsoid_gaussian::eg::{eg_sample, DensityEval, EGParams, EgDensity};
use ellipsoid_gaussian::inference::{fit, FitConfig, PosteriorSamples};
use ellipsoid_gaussian::postprocess::{
    conditional_curve, diagnostics, lppd, match_align, posterior_predictive, write_traces,
};
use ellipsoid_gaussian::{Dataset, EgError, Result, SaddlepointOrder};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "eg", version, about = "Ellipsoid-Gaussian modeling: curved factor analysis from the command line")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a benchmark data set with its true-parameter sidecar.
    Simdata(SimdataArgs),
    /// Fit the posterior: ellipsoid initialization, then the hybrid sampler.
    Fit(FitArgs),
    /// Draw samples from a fixed parameter file.
    Sample(SampleArgs),
    /// Evaluate the log-density of data under a fixed parameter file.
    Density(DensityArgs),
    /// Draw from the posterior predictive distribution of a fit.
    Predict(PredictArgs),
    /// Held-out log posterior predictive density of a fit.
    Lppd(LppdArgs),
    /// Align posterior loadings draws (sign/permutation matching).
    Align(AlignArgs),
    /// Conditional-relationship curve with a credible band.
    Curve(CurveArgs),
    /// Effective sample sizes, acceptance rates and trace export.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct SimdataArgs {
    /// very_curved_8d | approx_gaussian_6d | gaussian_factor_6d | hybrid_rosenbrock_3d
    #[arg(long)]
    setting: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Output CSV; a `<stem>.truth.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Training data (headered CSV).
    #[arg(long = "in")]
    input: PathBuf,
    /// Latent dimension.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Thermostat step size.
    #[arg(long)]
    step: Option<f64>,
    /// Minibatch size for the stochastic gradient.
    #[arg(long)]
    batch: Option<usize>,
    /// Update the ellipsoid center during sampling (default).
    #[arg(long, conflicts_with = "fix_center")]
    update_center: bool,
    /// Keep the center fixed at its initializer estimate.
    #[arg(long)]
    fix_center: bool,
    /// Standardize columns to mean 0 / sd 1 first; the transform is recorded.
    #[arg(long)]
    standardize: bool,
    /// Number of independent chains (written to chain_0/, chain_1/, ...).
    #[arg(long)]
    chains: Option<usize>,
    /// Normalizing-constant evaluation: exact | corrected | first_order.
    #[arg(long)]
    order: Option<String>,
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (samples.csv + meta.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    /// Parameter file (JSON).
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the latent directions.
    #[arg(long)]
    latent: Option<PathBuf>,
}

#[derive(Args)]
pub struct DensityArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Fit output directory.
    #[arg(long)]
    post: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct LppdArgs {
    #[arg(long)]
    post: PathBuf,
    /// Held-out data; must match the training columns and standardization.
    #[arg(long)]
    test: PathBuf,
    /// Apply the training standardization record to the test file first.
    #[arg(long)]
    standardize_like_training: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    post: PathBuf,
    /// Output directory (aligned.csv, mean_loadings.csv, record.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CurveArgs {
    #[arg(long)]
    post: PathBuf,
    /// Response column name.
    #[arg(long)]
    response: String,
    /// Predictor column name.
    #[arg(long)]
    predictor: String,
    /// Grid size over the observed predictor range.
    #[arg(long, default_value_t = 25)]
    points: usize,
    /// Grid lower end (defaults to the observed minimum).
    #[arg(long)]
    min: Option<f64>,
    /// Grid upper end (defaults to the observed maximum).
    #[arg(long)]
    max: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    post: PathBuf,
    /// Output directory (report.txt, traces.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Resolve an output path: explicit flag, else EG_OUTPUT_DIR joined with the
/// default name.
fn resolve_out(out: Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    if let Some(p) = out {
        return Ok(p);
    }
    match std::env::var_os("EG_OUTPUT_DIR") {
        Some(dir) => Ok(PathBuf::from(dir).join(default_name)),
        None => Err(EgError::domain(format!(
            "--out is required (or set EG_OUTPUT_DIR for a default location for {default_name})"
        ))),
    }
}

fn parse_order(raw: &str) -> Result<DensityEval> {
    match raw {
        "exact" => Ok(DensityEval::Exact),
        "corrected" => Ok(DensityEval::Saddlepoint(SaddlepointOrder::Corrected)),
        "first_order" | "first-order" => Ok(DensityEval::Saddlepoint(SaddlepointOrder::FirstOrder)),
        other => Err(EgError::domain(format!(
            "unknown order '{other}'; expected exact, corrected or first_order"
        ))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simdata(args) => run_simdata(args),
        Command::Fit(args) => run_fit(args),
        Command::Sample(args) => run_sample(args),
        Command::Density(args) => run_density(args),
        Command::Predict(args) => run_predict(args),
        Command::Lppd(args) => run_lppd(args),
        Command::Align(args) => run_align(args),
        Command::Curve(args) => run_curve(args),
        Command::Diagnose(args) => run_diagnose(args),
    }
}

fn run_simdata(args: SimdataArgs) -> Result<()> {
    let out = resolve_out(args.out, "simdata.csv")?;
    let setting = Setting::from_str(&args.setting)?;
    if args.n == 0 {
        return Err(EgError::domain("--n must be at least 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let sample = gen_setting(setting, args.n, &mut rng)?;
    sample.data.write_csv_path(&out)?;
    let truth_path = out.with_extension("truth.json");
    std::fs::write(&truth_path, sample.truth.to_json_string(setting))?;
    if let Some(rec) = sample.data.standardization() {
        let rec_path = out.with_extension("standardization.json");
        std::fs::write(&rec_path, serde_json::to_string_pretty(rec).expect("serializable"))?;
    }
    eprintln!("wrote {} rows to {} (truth sidecar {})", args.n, out.display(), truth_path.display());
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let out = resolve_out(args.out, "fit")?;
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let k = match args.k.or(file.parse("k")?) {
        Some(k) => k,
        None => return Err(EgError::domain("--k is required (or set k in the config file)".to_string())),
    };
    let seed = match args.seed.or(file.parse("seed")?) {
        Some(s) => s,
        None => return Err(EgError::domain("--seed is required for reproducible fits".to_string())),
    };

    let mut config = FitConfig::new(k, seed);
    if let Some(v) = args.iters.or(file.parse("iters")?) {
        config.n_iter = v;
    }
    if let Some(v) = args.burn_in.or(file.parse("burn_in")?) {
        config.burn_in = Some(v);
    }
    if let Some(v) = args.thin.or(file.parse("thin")?) {
        config.thin = v;
    }
    if let Some(v) = args.step.or(file.parse("step")?) {
        config.step_size = v;
    }
    if let Some(v) = args.batch.or(file.parse("batch")?) {
        config.minibatch = v;
    }
    if args.fix_center {
        config.update_center = false;
    } else if args.update_center {
        config.update_center = true;
    } else if let Some(v) = file.parse::<bool>("update_center")? {
        config.update_center = v;
    }
    if let Some(raw) = args.order.or(file.parse("order")?) {
        config.eval = parse_order(&raw)?;
    }
    let standardize = args.standardize || file.parse::<bool>("standardize")?.unwrap_or(false);
    let chains = args.chains.or(file.parse("chains")?).unwrap_or(1);
    if chains == 0 {
        return Err(EgError::domain("--chains must be at least 1".to_string()));
    }

    let data = Dataset::from_csv_path(&args.input)?;
    let data = if standardize { data.standardize()? } else { data };

    if chains == 1 {
        let samples = fit(&data, &config, None)?;
        samples.write_dir(&out)?;
        eprintln!(
            "fit finished in {:.1}s: {} draws, acceptance {:.3}, {} constant failures -> {}",
            samples.elapsed_secs,
            samples.draws.len(),
            samples.ram_acceptance,
            samples.const_failures,
            out.display()
        );
        return Ok(());
    }

    // independent chains, deterministic per-chain seeds
    let results: Vec<Result<PosteriorSamples>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..chains)
            .map(|c| {
                let mut chain_config = config.clone();
                chain_config.seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(c as u64));
                let data_ref = &data;
                scope.spawn(move || fit(data_ref, &chain_config, None))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    for (c, result) in results.into_iter().enumerate() {
        let samples = result?;
        let chain_dir = out.join(format!("chain_{c}"));
        samples.write_dir(&chain_dir)?;
        eprintln!(
            "chain {c}: {:.1}s, {} draws, acceptance {:.3} -> {}",
            samples.elapsed_secs,
            samples.draws.len(),
            samples.ram_acceptance,
            chain_dir.display()
        );
    }
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<()> {
    let out = resolve_out(args.out, "samples.csv")?;
    let params = EGParams::from_json_path(&args.params)?;
    if args.n == 0 {
        return Err(EgError::domain("--n must be at least 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (data, latent) = eg_sample(&params, args.n, &mut rng, args.latent.is_some());
    data.write_csv_path(&out)?;
    if let Some(latent_path) = args.latent {
        let latent = latent.expect("requested");
        let names = (1..=params.k()).map(|j| format!("eta{j}")).collect();
        Dataset::new(latent, names)?.write_csv_path(&latent_path)?;
    }
    Ok(())
}

fn run_density(args: DensityArgs) -> Result<()> {
    let out = resolve_out(args.out, "density.csv")?;
    let params = EGParams::from_json_path(&args.params)?;
    let data = Dataset::from_csv_path(&args.input)?;
    if data.p() != params.p() {
        return Err(EgError::dimension(format!(
            "parameter file has p = {} but the data has {} columns",
            params.p(),
            data.p()
        )));
    }
    if data.n() == 0 {
        return Err(EgError::domain("input data has no rows".to_string()));
    }
    let dens = EgDensity::new(&params)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(f, "log_density")?;
    for i in 0..data.n() {
        writeln!(f, "{}", dens.log_density(&data.row(i))?)?;
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let out = resolve_out(args.out, "predictive.csv")?;
    let samples = PosteriorSamples::read_dir(&args.post)?;
    if args.n == 0 {
        return Err(EgError::domain("--n must be at least 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pred = posterior_predictive(&samples, args.n, &mut rng)?;
    pred.write_csv_path(&out)?;
    if let Some(rec) = pred.standardization() {
        std::fs::write(
            out.with_extension("standardization.json"),
            serde_json::to_string_pretty(rec).expect("serializable"),
        )?;
    }
    Ok(())
}

fn run_lppd(args: LppdArgs) -> Result<()> {
    let samples = PosteriorSamples::read_dir(&args.post)?;
    let test = Dataset::from_csv_path(&args.test)?;
    if test.n() == 0 {
        return Err(EgError::domain("test data has no rows".to_string()));
    }
    let test = match (&samples.standardization, args.standardize_like_training) {
        (Some(rec), true) => test.standardize_with(rec)?,
        (None, true) => {
            return Err(EgError::domain("the fit was not standardized; drop --standardize-like-training".to_string()))
        }
        _ => test,
    };
    let result = lppd(&samples, &test)?;
    let report = format!(
        "lppd_total = {}\nlppd_per_observation = {}\nn_test = {}\nn_draws = {}\nfailed_pairs = {}\n",
        result.total, result.per_observation, result.n_test, result.n_draws, result.failed_pairs
    );
    print!("{report}");
    if let Some(out) = args.out {
        std::fs::write(out, report)?;
    }
    Ok(())
}

fn run_align(args: AlignArgs) -> Result<()> {
    let out = resolve_out(args.out, "aligned")?;
    let samples = PosteriorSamples::read_dir(&args.post)?;
    let aligned = match_align(&samples)?;
    std::fs::create_dir_all(&out)?;

    let (p, k) = (samples.p, samples.k);
    let mut labels = Vec::new();
    for j in 1..=k {
        for i in 1..=p {
            labels.push(format!("lambda.{i}.{j}"));
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("aligned.csv"))?);
    writeln!(f, "{}", labels.join(","))?;
    for draw in &aligned.draws {
        let row: Vec<String> = draw.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }

    let mean = aligned.mean();
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("mean_loadings.csv"))?);
    let header: Vec<String> = (1..=k).map(|j| format!("axis_{j}")).collect();
    writeln!(f, "variable,{}", header.join(","))?;
    for i in 0..p {
        let row: Vec<String> = (0..k).map(|j| format!("{}", mean[(i, j)])).collect();
        writeln!(f, "{},{}", samples.column_names[i], row.join(","))?;
    }

    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("record.csv"))?);
    let perm_cols: Vec<String> = (1..=k).map(|j| format!("perm.{j}")).collect();
    let sign_cols: Vec<String> = (1..=k).map(|j| format!("sign.{j}")).collect();
    writeln!(f, "draw,pivot,{},{}", perm_cols.join(","), sign_cols.join(","))?;
    for m in 0..aligned.draws.len() {
        let perms: Vec<String> = aligned.permutations[m].iter().map(|v| format!("{v}")).collect();
        let signs: Vec<String> = aligned.signs[m].iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{m},{},{},{}", aligned.pivot, perms.join(","), signs.join(","))?;
    }
    Ok(())
}

fn run_curve(args: CurveArgs) -> Result<()> {
    let out = resolve_out(args.out, "curve.csv")?;
    let samples = PosteriorSamples::read_dir(&args.post)?;
    let find = |name: &str| -> Result<usize> {
        samples.column_names.iter().position(|c| c == name).ok_or_else(|| {
            EgError::domain(format!(
                "column '{name}' not found; training columns are {}",
                samples.column_names.join(", ")
            ))
        })
    };
    let response = find(&args.response)?;
    let predictor = find(&args.predictor)?;
    if args.points < 2 {
        return Err(EgError::domain("--points must be at least 2".to_string()));
    }
    let obs_min = samples.column_mins[predictor];
    let obs_max = samples.column_maxs[predictor];
    let lo = args.min.unwrap_or(obs_min);
    let hi = args.max.unwrap_or(obs_max);
    if !(lo < hi) {
        return Err(EgError::domain(format!("grid range [{lo}, {hi}] is empty")));
    }
    if lo < obs_min - 1e-9 || hi > obs_max + 1e-9 {
        return Err(EgError::domain(format!(
            "grid [{lo}, {hi}] extends beyond the observed predictor range [{obs_min}, {obs_max}]"
        )));
    }
    let grid: Vec<f64> = (0..args.points)
        .map(|i| lo + (hi - lo) * i as f64 / (args.points - 1) as f64)
        .collect();
    let held = DVector::from_column_slice(&samples.column_means);
    let curve = conditional_curve(&samples, response, predictor, &grid, &held)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(f, "{},mean,lower,upper,flagged", args.predictor)?;
    for i in 0..curve.grid.len() {
        writeln!(
            f,
            "{},{},{},{},{}",
            curve.grid[i], curve.mean[i], curve.lower[i], curve.upper[i], curve.flagged[i] as u8
        )?;
    }
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    let out = resolve_out(args.out, "diagnostics")?;
    let samples = PosteriorSamples::read_dir(&args.post)?;
    std::fs::create_dir_all(&out)?;
    let report = diagnostics(&samples);
    let file = std::fs::File::create(out.join("report.txt"))?;
    report.write_report(std::io::BufWriter::new(file))?;
    write_traces(&samples, out.join("traces.csv"))?;
    Ok(())
}

// Path is used in signatures via AsRef; keep the import explicit.
#[allow(unused)]
fn _path_witness(_: &Path) {}
