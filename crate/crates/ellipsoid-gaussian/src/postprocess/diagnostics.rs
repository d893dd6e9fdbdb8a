//! Convergence diagnostics: per-parameter effective sample sizes via the
//! initial-monotone-sequence estimator, trace export, and a flat key-value
//! report.

use crate::eg::EGParams;
use crate::error::Result;
use crate::inference::PosteriorSamples;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct DiagnosticsReport {
    /// (parameter label, effective sample size), in the flat column order.
    pub ess: Vec<(String, f64)>,
    pub n_draws: usize,
    pub ram_acceptance: f64,
    pub ram_acceptance_recent: f64,
    pub const_failures: usize,
}

/// Effective sample size by Geyer's initial monotone sequence: sum paired
/// autocovariances while they stay positive, enforcing monotonicity.
/// A constant series reports ESS = 1 (a single effective observation).
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma = |lag: usize| -> f64 {
        (0..n - lag).map(|i| centered[i] * centered[i + lag]).sum::<f64>() / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 1e-300 {
        return 1.0;
    }
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev); // enforce monotone decrease
        if m == 0 {
            sum_pairs += pair;
        } else {
            sum_pairs += pair;
        }
        prev = pair;
        m += 1;
        if m > n / 2 {
            break;
        }
    }
    // integrated autocorrelation time: 2 * sum of monotone pairs / g0 - 1
    let iact = (2.0 * sum_pairs / g0 - 1.0).max(1.0);
    (n as f64 / iact).clamp(1.0, n as f64)
}

/// Flatten the draws into labeled scalar series and report each series' ESS.
pub fn diagnostics(samples: &PosteriorSamples) -> DiagnosticsReport {
    let labels = EGParams::flat_labels(samples.p, samples.k);
    let m = samples.draws.len();
    let mut ess = Vec::with_capacity(labels.len());
    let mut series = vec![0.0f64; m];
    for (col, label) in labels.iter().enumerate() {
        for (i, draw) in samples.draws.iter().enumerate() {
            series[i] = draw.to_flat_row()[col];
        }
        ess.push((label.clone(), effective_sample_size(&series)));
    }
    DiagnosticsReport {
        ess,
        n_draws: m,
        ram_acceptance: samples.ram_acceptance,
        ram_acceptance_recent: samples.ram_acceptance_recent,
        const_failures: samples.const_failures,
    }
}

impl DiagnosticsReport {
    /// Flat `key = value` text.
    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n_draws = {}", self.n_draws)?;
        writeln!(w, "ram_acceptance = {}", self.ram_acceptance)?;
        writeln!(w, "ram_acceptance_recent = {}", self.ram_acceptance_recent)?;
        writeln!(w, "normconst_failures = {}", self.const_failures)?;
        for (label, e) in &self.ess {
            writeln!(w, "ess.{label} = {e}")?;
        }
        Ok(())
    }
}

/// Export the draw series as a headered CSV for plotting (one row per draw).
pub fn write_traces(samples: &PosteriorSamples, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", EGParams::flat_labels(samples.p, samples.k).join(","))?;
    for draw in &samples.draws {
        let row: Vec<String> = draw.to_flat_row().iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}
