//! Scalar special functions behind the spherical normalizing constants.
//!
//! Everything is computed in log space so that concentrations up to ~1e8
//! stay representable. The modified Bessel function switches between the
//! ascending series and the large-argument asymptotic expansion at a
//! crossover validated by the tests in this module.

use crate::error::{EgError, Result};
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation accurate near zero.
        PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Log of the unit-sphere surface area in `k` dimensions.
pub fn ln_sphere_surface(k: usize) -> f64 {
    let kf = k as f64;
    (2.0f64).ln() + 0.5 * kf * PI.ln() - ln_gamma(0.5 * kf)
}

fn check_order_arg(v: f64, x: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(EgError::domain(format!("Bessel order must be finite and >= 0, got {v}")));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(EgError::domain(format!("Bessel argument must be finite and >= 0, got {x}")));
    }
    Ok(())
}

/// Series/asymptotic crossover. Chosen so that both regimes agree to better
/// than 1e-10 in a wide overlap band (see `series_asymptotic_overlap`).
fn bessel_crossover(v: f64) -> f64 {
    (4.0 * v * v).max(100.0)
}

/// Ascending series for log I_v(x), with rescaling so large sums never overflow.
fn log_bessel_series(v: f64, x: f64) -> Result<f64> {
    let half = 0.5 * x;
    let log_pref = v * half.ln() - ln_gamma(v + 1.0);
    let z = half * half;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut offset = 0.0f64;
    for m in 1..=200_000 {
        let mf = m as f64;
        term *= z / (mf * (v + mf));
        sum += term;
        if term < sum * 1e-18 {
            return Ok(log_pref + sum.ln() + offset);
        }
        if sum > 1e280 {
            sum *= 1e-280;
            term *= 1e-280;
            offset += 280.0 * std::f64::consts::LN_10;
        }
    }
    Err(EgError::numerical(format!("Bessel series did not converge for v={v}, x={x}")))
}

/// The Hankel-type asymptotic correction sum: I_v(x) = e^x / sqrt(2 pi x) * hankel_sum.
fn hankel_sum(v: f64, x: f64) -> f64 {
    let mu = 4.0 * v * v;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut prev = f64::INFINITY;
    for j in 1..=60u32 {
        let odd = (2 * j - 1) as f64;
        term *= -(mu - odd * odd) / (8.0 * x * j as f64);
        if term.abs() >= prev {
            break; // asymptotic tail started growing; truncate at smallest term
        }
        sum += term;
        prev = term.abs();
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn log_bessel_asymptotic(v: f64, x: f64) -> f64 {
    x - 0.5 * (2.0 * PI * x).ln() + hankel_sum(v, x).ln()
}

/// log I_v(x) for the modified Bessel function of the first kind, v >= 0, x >= 0.
pub fn log_bessel_i(v: f64, x: f64) -> Result<f64> {
    check_order_arg(v, x)?;
    if x == 0.0 {
        return Ok(if v == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if x <= bessel_crossover(v) {
        log_bessel_series(v, x)
    } else {
        Ok(log_bessel_asymptotic(v, x))
    }
}

fn check_sphere_args(k: usize, tau: f64) -> Result<()> {
    if k < 2 {
        return Err(EgError::domain(format!("sphere dimension k must be >= 2, got {k}")));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(EgError::domain(format!("concentration must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

/// log C_k(tau), the von Mises-Fisher normalizing constant against the uniform
/// probability measure on the sphere: C_k(tau) = (tau/2)^(k/2-1) / (Gamma(k/2) I_{k/2-1}(tau)).
pub fn log_vmf_const(k: usize, tau: f64) -> Result<f64> {
    check_sphere_args(k, tau)?;
    if tau == 0.0 {
        return Ok(0.0);
    }
    let order = 0.5 * k as f64 - 1.0;
    // Written so the order * ln(tau/2) terms cancel exactly against the series
    // prefactor when tau is tiny.
    Ok(order * (0.5 * tau).ln() - ln_gamma(0.5 * k as f64) - log_bessel_i(order, tau)?)
}

/// The mean-resultant ratio rho_k(tau) = I_{k/2}(tau) / I_{k/2-1}(tau), in [0, 1).
pub fn bessel_ratio(k: usize, tau: f64) -> Result<f64> {
    check_sphere_args(k, tau)?;
    if tau == 0.0 {
        return Ok(0.0);
    }
    let v0 = 0.5 * k as f64 - 1.0;
    let v1 = 0.5 * k as f64;
    if tau <= bessel_crossover(v1) {
        Ok((log_bessel_i(v1, tau)? - log_bessel_i(v0, tau)?).exp())
    } else {
        // Shared e^x / sqrt(2 pi x) prefactor cancels; the correction sums are
        // O(1), so the ratio keeps full precision even at tau ~ 1e8.
        Ok(hankel_sum(v1, tau) / hankel_sum(v0, tau))
    }
}

/// Inverse of `bessel_ratio` in tau: returns tau >= 0 with rho_k(tau) = r.
///
/// Values of r at (or numerically above) 1 are capped at a large finite
/// concentration since rho_k approaches 1 only in the limit.
pub fn bessel_ratio_inverse(k: usize, r: f64) -> Result<f64> {
    if k < 2 {
        return Err(EgError::domain(format!("sphere dimension k must be >= 2, got {k}")));
    }
    if !r.is_finite() || r < 0.0 || r > 1.0 + 1e-12 {
        return Err(EgError::domain(format!("mean resultant length must lie in [0, 1], got {r}")));
    }
    const TAU_CAP: f64 = 1e6;
    if r <= 1e-12 {
        return Ok(0.0);
    }
    if r >= bessel_ratio(k, TAU_CAP)? {
        return Ok(TAU_CAP);
    }
    // Banerjee-style starting point, then bisection on the monotone ratio.
    let kf = k as f64;
    let start = (r * (kf - r * r) / (1.0 - r * r)).clamp(1e-8, TAU_CAP);
    let (mut lo, mut hi) = if bessel_ratio(k, start)? < r {
        let mut hi = start;
        while bessel_ratio(k, hi)? < r {
            hi *= 2.0;
        }
        (hi / 2.0, hi)
    } else {
        let mut lo = start;
        while bessel_ratio(k, lo)? > r && lo > 1e-12 {
            lo /= 2.0;
        }
        (lo, lo * 2.0)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_ratio(k, mid)? < r {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-12 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Independent oracle: direct term-by-term summation of the ascending
    /// series in linear space, one exp/ln_gamma call per term.
    fn series_oracle(v: f64, x: f64) -> f64 {
        let mut sum = 0.0f64;
        for m in 0..400 {
            let mf = m as f64;
            let log_term =
                (2.0 * mf + v) * (0.5 * x).ln() - ln_gamma(mf + 1.0) - ln_gamma(v + mf + 1.0);
            sum += log_term.exp();
        }
        sum.ln()
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert_relative_eq!(ln_gamma(0.5), PI.sqrt().ln(), max_relative = 1e-13);
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert_relative_eq!(ln_gamma(11.0), 3628800.0f64.ln(), max_relative = 1e-13);
        assert_relative_eq!(ln_gamma(3.5), (15.0 / 8.0 * PI.sqrt()).ln(), max_relative = 1e-13);
    }

    #[test]
    fn bessel_at_zero() {
        assert_eq!(log_bessel_i(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(log_bessel_i(1.0, 0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn bessel_matches_series_oracle() {
        // The spec-level bar: 1e-10 relative agreement for x <= 30, v <= 10.
        for &v in &[0.0, 0.5, 1.0, 1.5, 2.0, 3.5, 5.0, 7.5, 10.0] {
            for &x in &[1e-3, 0.1, 0.5, 2.0, 5.0, 13.0, 30.0] {
                let got = log_bessel_i(v, x).unwrap();
                let want = series_oracle(v, x);
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                    "v={v} x={x}: got {got}, oracle {want}"
                );
            }
        }
    }

    #[test]
    fn bessel_rejects_bad_inputs() {
        assert!(log_bessel_i(-1.0, 1.0).is_err());
        assert!(log_bessel_i(1.0, -1.0).is_err());
        assert!(log_bessel_i(f64::NAN, 1.0).is_err());
        assert!(log_bessel_i(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn series_asymptotic_overlap() {
        // Both regimes must agree across a band around the crossover.
        for &v in &[0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
            let xc = bessel_crossover(v);
            for &f in &[1.0, 1.25, 1.5, 2.0] {
                let x = xc * f;
                let a = log_bessel_series(v, x).unwrap();
                let b = log_bessel_asymptotic(v, x);
                assert!(
                    (a - b).abs() <= 1e-10 * a.abs().max(1.0),
                    "v={v} x={x}: series {a} vs asymptotic {b}"
                );
            }
        }
    }

    #[test]
    fn bessel_large_argument_finite() {
        for &x in &[1e3, 1e4, 1e6, 1e8] {
            for k in 2..=8usize {
                let v = 0.5 * k as f64 - 1.0;
                let l = log_bessel_i(v, x).unwrap();
                assert!(l.is_finite());
                // Leading behaviour e^x / sqrt(2 pi x).
                assert_relative_eq!(l, x - 0.5 * (2.0 * PI * x).ln(), max_relative = 1e-2);
            }
        }
    }

    #[test]
    fn vmf_const_basics() {
        // tau = 0 is the uniform distribution in this convention.
        assert_eq!(log_vmf_const(5, 0.0).unwrap(), 0.0);
        // k = 2: C_2(tau) = 1 / I_0(tau).
        let got = log_vmf_const(2, 2.0).unwrap();
        assert_relative_eq!(got, -series_oracle(0.0, 2.0), max_relative = 1e-12);
        assert!(log_vmf_const(1, 1.0).is_err());
        assert!(log_vmf_const(3, -0.5).is_err());
    }

    #[test]
    fn vmf_const_tiny_tau_is_continuous() {
        for k in 2..=6 {
            let v = log_vmf_const(k, 1e-12).unwrap();
            assert!(v.abs() < 1e-12, "k={k}: {v}");
        }
    }

    #[test]
    fn vmf_const_mc_normalization() {
        // exp(log C_k(tau)) * E_uniform[exp(tau mu' z)] should be 1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(k, tau) in &[(3usize, 2.0f64), (5, 8.0), (2, 1.5)] {
            let n = 1_000_000usize;
            let mut acc = 0.0f64;
            let mut maxe = f64::NEG_INFINITY;
            for _ in 0..n {
                // uniform sphere draw, first coordinate plays the role of mu' z
                let mut norm2 = 0.0;
                let mut first = 0.0;
                for j in 0..k {
                    let g: f64 = rng.sample(StandardNormal);
                    if j == 0 {
                        first = g;
                    }
                    norm2 += g * g;
                }
                let e = tau * first / norm2.sqrt();
                if e <= maxe {
                    acc += (e - maxe).exp();
                } else {
                    acc = acc * (maxe - e).exp() + 1.0;
                    maxe = e;
                }
            }
            let log_mean = maxe + acc.ln() - (n as f64).ln();
            let total = log_vmf_const(k, tau).unwrap() + log_mean;
            assert!(
                total.exp() < 1.005 && total.exp() > 0.995,
                "k={k} tau={tau}: normalization {}",
                total.exp()
            );
        }
    }

    #[test]
    fn ratio_langevin_closed_form() {
        // k = 3 has the closed form rho_3(tau) = coth(tau) - 1/tau.
        for &tau in &[0.25f64, 1.0, 3.0, 10.0, 50.0] {
            let langevin = 1.0 / tau.tanh() - 1.0 / tau;
            assert_relative_eq!(bessel_ratio(3, tau).unwrap(), langevin, max_relative = 1e-11);
        }
        // The spec's worked value at tau = 1.
        assert!((bessel_ratio(3, 1.0).unwrap() - 0.3130).abs() < 5e-5);
    }

    #[test]
    fn ratio_matches_series_oracle() {
        let got = bessel_ratio(2, 2.0).unwrap();
        let want = (series_oracle(1.0, 2.0) - series_oracle(0.0, 2.0)).exp();
        assert_relative_eq!(got, want, max_relative = 1e-11);
    }

    #[test]
    fn ratio_limits() {
        assert_eq!(bessel_ratio(4, 0.0).unwrap(), 0.0);
        for k in 2..=6 {
            // rho -> 1 as tau -> infinity
            assert!(bessel_ratio(k, 1e8).unwrap() > 1.0 - 1e-6);
            // rho/tau -> 1/k as tau -> 0
            let tau = 1e-6;
            let r = bessel_ratio(k, tau).unwrap() / tau;
            assert_relative_eq!(r, 1.0 / k as f64, max_relative = 1e-4);
        }
    }

    #[test]
    fn ratio_inverse_round_trip() {
        for k in 2..=5 {
            for &tau in &[0.0f64, 0.3, 1.0, 4.0, 30.0, 300.0] {
                let r = bessel_ratio(k, tau).unwrap();
                let back = bessel_ratio_inverse(k, r).unwrap();
                assert!(
                    (back - tau).abs() <= 1e-6 * (1.0 + tau),
                    "k={k} tau={tau} -> r={r} -> {back}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn ratio_in_unit_interval(k in 2usize..8, tau in 0.0f64..1e4) {
            let r = bessel_ratio(k, tau).unwrap();
            prop_assert!((0.0..1.0).contains(&r));
        }

        #[test]
        fn ratio_monotone_in_tau(k in 2usize..8, tau in 1e-3f64..1e3, bump in 1e-3f64..10.0) {
            let lo = bessel_ratio(k, tau).unwrap();
            let hi = bessel_ratio(k, tau + bump).unwrap();
            prop_assert!(hi >= lo - 1e-12);
        }
    }
}
