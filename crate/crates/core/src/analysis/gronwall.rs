use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const MAX_TERMS: usize = 200_000;

fn check_b(b: f64) -> Result<()> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::param("b1", b, "must lie in (0, 1]"));
    }
    Ok(())
}

/// `Σ_{n≥0} w(n) e^{n b ln z - lnΓ(nb + k)}` summed until the terms are past
/// their peak and negligible.
fn series(b: f64, ln_z: f64, k: f64, first: usize, mut w: impl FnMut(usize) -> f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut prev_mag = 0.0;
    for n in first..MAX_TERMS {
        let nb = n as f64 * b;
        let mag = (nb * ln_z - ln_gamma(nb + k)).exp();
        let term = mag * w(n);
        sum += term;
        let decreasing = mag <= prev_mag;
        prev_mag = mag;
        if decreasing && mag <= 1e-17 * sum.abs().max(1e-300) {
            return Ok(sum);
        }
        if ln_z == f64::NEG_INFINITY && n > first {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNotConverged { terms: MAX_TERMS })
}

/// `E(z) = Σ_{n≥0} z^{nb}/Γ(nb + 1)` for `z ≥ 0`.
pub fn mittag_leffler_e(b: f64, z: f64) -> Result<f64> {
    check_b(b)?;
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::param("z", z, "must be finite and nonnegative"));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    series(b, z.ln(), 1.0, 0, |_| 1.0)
}

/// `a(t) + θ₁ ∫₀^t E'(θ₁(t-τ)) a(τ) dτ` with `θ₁ = (c₁ Γ(b₁))^{1/b₁}`,
/// evaluated at the last of `times`.
///
/// `a` is taken piecewise linear between its samples; `times` starts at `0`
/// and increases. Termwise `θ₁E'(θ₁s) = Σ_{n≥1} θ₁^{nb} s^{nb-1}/Γ(nb)`, and
/// each moment `∫ (t-τ)^{nb-1} a(τ) dτ` is integrated exactly.
pub fn gronwall_envelope(b1: f64, c1: f64, times: &[f64], a: &[f64]) -> Result<f64> {
    check_b(b1)?;
    if !(c1 >= 0.0) || !c1.is_finite() {
        return Err(Error::param("c1", c1, "must be finite and nonnegative"));
    }
    if times.len() != a.len() {
        return Err(Error::SizeMismatch {
            expected: times.len(),
            got: a.len(),
        });
    }
    if times.first() != Some(&0.0) {
        return Err(Error::param("times", times.first().copied().unwrap_or(f64::NAN), "must start at 0"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("times", 0.0, "must increase strictly"));
    }
    let t = *times.last().expect("nonempty");
    let a_t = *a.last().expect("nonempty");
    if t == 0.0 || c1 == 0.0 || a.iter().all(|&v| v == 0.0) {
        return Ok(a_t);
    }
    let theta = (c1 * gamma(b1)).powf(1.0 / b1);
    // pieces in σ = (t - τ)/t ∈ [0, 1], a = A + B σ on each
    let pieces: Vec<(f64, f64, f64, f64)> = times
        .windows(2)
        .zip(a.windows(2))
        .map(|(tw, aw)| {
            let (s_hi, s_lo) = ((t - tw[0]) / t, (t - tw[1]) / t);
            let slope = (aw[1] - aw[0]) / (s_lo - s_hi);
            (s_lo, s_hi, aw[1] - slope * s_lo, slope)
        })
        .collect();
    let moment = |beta: f64| -> f64 {
        pieces
            .iter()
            .map(|&(lo, hi, a0, b)| a0 * (hi.powf(beta) - lo.powf(beta)) / beta + b * (hi.powf(beta + 1.0) - lo.powf(beta + 1.0)) / (beta + 1.0))
            .sum()
    };
    // term n: (θ₁t)^{nb}/Γ(nb) · ∫₀¹ σ^{nb-1} a dσ
    let integral = series(b1, (theta * t).ln(), 0.0, 1, |n| moment(n as f64 * b1))?;
    Ok(a_t + integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_case() {
        for z in [0.0, 0.5, 3.0, 20.0] {
            assert!((mittag_leffler_e(1.0, z).unwrap() - f64::exp(z)).abs() < 1e-13 * f64::exp(z));
        }
    }

    #[test]
    fn half_order_matches_direct_sum() {
        for z in [1e-3, 0.05, 0.2] {
            let direct: f64 = (0..40).map(|n| f64::powf(z, n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0)).sum();
            assert!((mittag_leffler_e(0.5, z).unwrap() - direct).abs() < 1e-12);
        }
        // e^{2} erfc(-√2), evaluated at 30 digits
        let closed = 14.441_908_195_414_959;
        let e = mittag_leffler_e(0.5, 2.0).unwrap();
        assert!((e - closed).abs() < 1e-13 * closed, "{e}");
    }

    #[test]
    fn classical_gronwall_for_constant_forcing() {
        // a ≡ 1, b = 1: 1 + c∫₀^t e^{c(t-τ)} dτ = e^{ct}
        let times: Vec<f64> = (0..=50).map(|k| 0.04 * k as f64).collect();
        let a = vec![1.0; times.len()];
        for c in [0.3, 1.0, 2.5] {
            let env = gronwall_envelope(1.0, c, &times, &a).unwrap();
            assert!((env - f64::exp(2.0 * c)).abs() < 1e-8 * f64::exp(2.0 * c), "{c}");
        }
    }

    #[test]
    fn linear_forcing_is_integrated_exactly() {
        // a(τ) = τ, b = 1: t + c∫₀^t e^{c(t-τ)} τ dτ = (e^{ct} - 1)/c
        let times = [0.0, 0.7, 1.5];
        let a = times;
        let c = 0.8;
        let env = gronwall_envelope(1.0, c, &times, &a).unwrap();
        assert!((env - (f64::exp(1.5 * c) - 1.0) / c).abs() < 1e-12);
    }

    #[test]
    fn fractional_constant_forcing() {
        // a ≡ 1: envelope = E(θ₁ t), since ∫₀^t θ₁E'(θ₁ s) ds = E(θ₁t) - 1
        let (b, c, t) = (0.5, 0.7, 1.3);
        let env = gronwall_envelope(b, c, &[0.0, t], &[1.0, 1.0]).unwrap();
        let theta = (c * gamma(b)).powf(1.0 / b);
        let e = mittag_leffler_e(b, theta * t).unwrap();
        assert!((env - e).abs() < 1e-12 * e);
    }

    #[test]
    fn degenerate_inputs() {
        let times = [0.0, 1.0, 2.0];
        assert_eq!(gronwall_envelope(0.5, 1.0, &times, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(gronwall_envelope(0.5, 0.0, &times, &[1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert!(gronwall_envelope(1.5, 1.0, &times, &[0.0; 3]).is_err());
        assert!(gronwall_envelope(0.5, -1.0, &times, &[0.0; 3]).is_err());
        assert!(gronwall_envelope(0.5, 1.0, &[0.5, 1.0], &[0.0; 2]).is_err());
    }
}
