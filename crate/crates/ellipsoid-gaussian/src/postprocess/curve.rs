//! Conditional-relationship curves: the posterior mean and credible band of
//! E[response | predictor = g, other coordinates at fixed values], computed
//! per posterior draw by one-dimensional adaptive quadrature of the joint
//! density over the response coordinate.

use crate::eg::{EGParams, EgDensity};
use crate::error::{EgError, Result};
use crate::inference::PosteriorSamples;
use nalgebra::DVector;

#[derive(Clone, Debug)]
pub struct ConditionalCurve {
    pub grid: Vec<f64>,
    /// Pointwise posterior mean of the conditional expectation.
    pub mean: Vec<f64>,
    /// 2.5% and 97.5% pointwise quantiles across draws.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Set where the quadrature failed to converge for some draw; the point
    /// is still reported from the draws that did converge.
    pub flagged: Vec<bool>,
}

/// Zeroth and first moment of exp(logf(t) - offset) over [lo, hi] by adaptive
/// Simpson; returns (m0, m1, converged).
fn adaptive_moments<F: Fn(f64) -> f64>(
    logf: &F,
    lo: f64,
    hi: f64,
    offset: f64,
    tol: f64,
) -> (f64, f64, bool) {
    fn simpson(f0: [f64; 2], fm: [f64; 2], f1: [f64; 2], h: f64) -> [f64; 2] {
        [(f0[0] + 4.0 * fm[0] + f1[0]) * h / 6.0, (f0[1] + 4.0 * fm[1] + f1[1]) * h / 6.0]
    }
    struct Ctx<'a, F> {
        logf: &'a F,
        offset: f64,
        tol: f64,
        converged: bool,
        evals: usize,
    }
    impl<F: Fn(f64) -> f64> Ctx<'_, F> {
        fn value(&mut self, t: f64) -> [f64; 2] {
            self.evals += 1;
            let v = ((self.logf)(t) - self.offset).exp();
            [v, t * v]
        }
        fn recurse(
            &mut self,
            a: f64,
            b: f64,
            fa: [f64; 2],
            fm: [f64; 2],
            fb: [f64; 2],
            whole: [f64; 2],
            depth: usize,
        ) -> [f64; 2] {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = self.value(lm);
            let frm = self.value(rm);
            let left = simpson(fa, flm, fm, m - a);
            let right = simpson(fm, frm, fb, b - m);
            let sum = [left[0] + right[0], left[1] + right[1]];
            let err = (sum[0] - whole[0]).abs().max((sum[1] - whole[1]).abs());
            if depth == 0 || self.evals > 40_000 {
                if err > self.tol {
                    self.converged = false;
                }
                return sum;
            }
            if err <= self.tol {
                return sum;
            }
            let l = self.recurse(a, m, fa, flm, fm, left, depth - 1);
            let r = self.recurse(m, b, fm, frm, fb, right, depth - 1);
            [l[0] + r[0], l[1] + r[1]]
        }
    }

    let mut ctx = Ctx { logf, offset, tol, converged: true, evals: 0 };
    // seed the recursion with a handful of panels so narrow peaks are found
    let panels = 16;
    let mut total = [0.0, 0.0];
    let h = (hi - lo) / panels as f64;
    let mut fa = ctx.value(lo);
    for i in 0..panels {
        let a = lo + i as f64 * h;
        let b = a + h;
        let fm = ctx.value(0.5 * (a + b));
        let fb = ctx.value(b);
        let whole = simpson(fa, fm, fb, h);
        let part = ctx.recurse(a, b, fa, fm, fb, whole, 24);
        total[0] += part[0];
        total[1] += part[1];
        fa = fb;
    }
    (total[0], total[1], ctx.converged)
}

/// Conditional mean of coordinate `response` for one parameter draw, with
/// all other coordinates held at `held`, except `predictor` set to `g`.
fn conditional_mean_one(
    params: &EGParams,
    dens: &EgDensity,
    response: usize,
    predictor: usize,
    g: f64,
    held: &DVector<f64>,
) -> Result<(f64, bool)> {
    let mut x = held.clone();
    x[predictor] = g;

    // integration range: the shell extent in the response coordinate plus a
    // generous noise margin
    let lam_row_norm = params.lambda().row(response).norm();
    let sd = params.sigma2[response].sqrt();
    let center = params.c[response];
    let lo = center - lam_row_norm - 9.0 * sd;
    let hi = center + lam_row_norm + 9.0 * sd;

    // scan for the peak so the integrand can be exponentiated safely
    let mut peak = f64::NEG_INFINITY;
    for i in 0..=64 {
        let t = lo + (hi - lo) * i as f64 / 64.0;
        x[response] = t;
        let v = dens.log_density(&x)?;
        if v > peak {
            peak = v;
        }
    }
    let logf = |t: f64| -> f64 {
        let mut xi = x.clone();
        xi[response] = t;
        dens.log_density(&xi).unwrap_or(f64::NEG_INFINITY)
    };
    let (m0, m1, converged) = adaptive_moments(&logf, lo, hi, peak, 1e-8);
    if !(m0 > 0.0) || !m0.is_finite() || !m1.is_finite() {
        return Err(EgError::numerical(format!(
            "conditional-mean quadrature failed at predictor value {g}"
        )));
    }
    Ok((m1 / m0, converged))
}

/// Pointwise posterior mean and 95% band of the conditional expectation of
/// `response` as a function of `predictor`, other coordinates held at `held`
/// (typically the training sample means).
pub fn conditional_curve(
    samples: &PosteriorSamples,
    response: usize,
    predictor: usize,
    grid: &[f64],
    held: &DVector<f64>,
) -> Result<ConditionalCurve> {
    if samples.draws.is_empty() {
        return Err(EgError::domain("posterior sample is empty".to_string()));
    }
    let p = samples.p;
    if response >= p || predictor >= p || response == predictor {
        return Err(EgError::domain(format!(
            "response ({response}) and predictor ({predictor}) must be distinct coordinates below p = {p}"
        )));
    }
    if held.len() != p {
        return Err(EgError::dimension(format!("held vector has length {}, expected {p}", held.len())));
    }
    if grid.is_empty() {
        return Err(EgError::domain("grid must be non-empty".to_string()));
    }

    let m = samples.draws.len();
    let handles: Vec<EgDensity> = samples
        .draws
        .iter()
        .map(|d| EgDensity::with_eval(d, samples.config.eval))
        .collect::<Result<_>>()?;

    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut flagged = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut vals = Vec::with_capacity(m);
        let mut flag = false;
        for (draw, dens) in samples.draws.iter().zip(handles.iter()) {
            match conditional_mean_one(draw, dens, response, predictor, g, held) {
                Ok((v, converged)) => {
                    vals.push(v);
                    flag |= !converged;
                }
                Err(_) => flag = true,
            }
        }
        if vals.is_empty() {
            return Err(EgError::numerical(format!(
                "conditional mean failed for every draw at grid value {g}"
            )));
        }
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mean.push(avg);
        lower.push(quantile_sorted(&vals, 0.025));
        upper.push(quantile_sorted(&vals, 0.975));
        flagged.push(flag);
    }
    Ok(ConditionalCurve { grid: grid.to_vec(), mean, lower, upper, flagged })
}

/// Linear-interpolation quantile of a sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}
