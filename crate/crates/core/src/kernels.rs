//! Heat kernel, one-sided stable subordinator density and the fractional heat
//! kernel obtained from them by subordination,
//! `k_μ(t, r) = ∫₀^∞ f_{t,μ}(s) k₁(s, r) ds`.
//!
//! The subordinator density (Laplace transform `e^{-t λ^μ}`) is evaluated from
//! Kanter's representation, a finite integral over `φ ∈ (0, π)` with a
//! positive integrand, and for large arguments from its convergent series in
//! `s^{-μ}`. Both routes are stable for every `μ ∈ (0,1)`; the real-axis
//! contour form is only well conditioned for `μ ≤ 1/2` and lives in the
//! tests as an oracle.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

/// Relative tolerance used for the kernel quadratures.
pub const KERNEL_TOLERANCE: f64 = 1e-8;

/// Gauss–Weierstrass kernel `(4πt)^{-N/2} exp(-r²/4t)`.
pub fn gaussian_kernel(t: f64, r: f64, dim: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", t, "must be positive"));
    }
    Ok(heat(t, r, dim))
}

#[inline]
pub(crate) fn heat(t: f64, r: f64, dim: usize) -> f64 {
    (4.0 * PI * t).powf(-0.5 * dim as f64) * (-r * r / (4.0 * t)).exp()
}

fn check_mu_open(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::param("mu", mu, "must lie in (0, 1)"));
    }
    Ok(())
}

/// Density `f_{t,μ}(s)` of the one-sided μ-stable law at time `t`.
pub fn subordinator_density(mu: f64, t: f64, s: f64) -> Result<f64> {
    check_mu_open(mu)?;
    if !(t > 0.0) {
        return Err(Error::param("t", t, "must be positive"));
    }
    if s <= 0.0 {
        return Ok(0.0);
    }
    // self-similarity: f_t(s) = t^{-1/μ} f_1(s t^{-1/μ})
    let scale = t.powf(1.0 / mu);
    let x = s / scale;
    let v = if x.powf(-mu) <= 0.5 {
        stable_series(mu, x)
    } else {
        stable_kanter(mu, x)?
    };
    // tiny negative noise is clamped so positivity stays assertable
    Ok(if v < 0.0 && v > -1e-9 { 0.0 } else { v } / scale)
}

/// Kanter's function `A(φ)` in log form.
fn ln_kanter_a(mu: f64, phi: f64) -> f64 {
    let q = 1.0 / (1.0 - mu);
    ((1.0 - mu) * phi).sin().ln() + mu * q * (mu * phi).sin().ln() - q * phi.sin().ln()
}

fn stable_kanter(mu: f64, x: f64) -> Result<f64> {
    let q = 1.0 / (1.0 - mu);
    let c = x.powf(-mu * q);
    // the integrand peaks where c·A(φ) ≈ 1; work relative to its largest value
    let integrand = |phi: f64| {
        let la = ln_kanter_a(mu, phi);
        let a = la.exp();
        if !a.is_finite() {
            return 0.0;
        }
        (la - c * a).exp()
    };
    let tol = Tolerance {
        relative: 1e-12,
        absolute: 0.0,
        max_intervals: 2000,
    };
    let r = quad::integrate(integrand, 0.0, PI, tol).or_else(|_| {
        quad::integrate(
            integrand,
            0.0,
            PI,
            Tolerance {
                relative: 1e-9,
                absolute: 1e-300,
                max_intervals: 8000,
            },
        )
    })?;
    Ok(mu * q / PI * x.powf(-q) * r.value)
}

/// `f_1(x) = (1/π) Σ_{k≥1} (-1)^{k+1} Γ(kμ+1)/k! sin(πkμ) x^{-kμ-1}`, valid
/// for all `x > 0` and used where `x^{-μ}` is small.
fn stable_series(mu: f64, x: f64) -> f64 {
    let z = x.powf(-mu);
    let lnz = z.ln();
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let ln_mag = ln_gamma(kf * mu + 1.0) - ln_gamma(kf + 1.0) + kf * lnz;
        let term = ln_mag.exp() * (PI * kf * mu).sin();
        sum += if k % 2 == 1 { term } else { -term };
        if ln_mag < -40.0 + sum.abs().max(1e-300).ln() {
            break;
        }
    }
    sum / (PI * x)
}

/// Below `negligible_below(mu, t)` the density is smaller than `e^{-50}`
/// times its scale.
pub fn negligible_below(mu: f64, t: f64) -> f64 {
    let a0 = (1.0 - mu) * mu.powf(mu / (1.0 - mu));
    t.powf(1.0 / mu) * (50.0 / a0).powf(-(1.0 - mu) / mu)
}

/// `k_μ(t, r)` in dimension `dim`; `μ = 1` is the Gaussian.
pub fn fractional_kernel(mu: f64, t: f64, r: f64, dim: usize) -> Result<f64> {
    fractional_kernel_tol(mu, t, r, dim, KERNEL_TOLERANCE)
}

pub fn fractional_kernel_tol(mu: f64, t: f64, r: f64, dim: usize, relative: f64) -> Result<f64> {
    if mu == 1.0 {
        return gaussian_kernel(t, r, dim);
    }
    check_mu_open(mu)?;
    if !(t > 0.0) {
        return Err(Error::param("t", t, "must be positive"));
    }
    let s_lo = negligible_below(mu, t);
    let s_hi = t.powf(1.0 / mu).max(r * r) * 1e16;
    let integrand = |u: f64| {
        let s = u.exp();
        match subordinator_density(mu, t, s) {
            Ok(f) => f * s * heat(s, r, dim),
            Err(_) => f64::NAN,
        }
    };
    let tol = Tolerance {
        relative,
        absolute: 0.0,
        max_intervals: 4000,
    };
    let res = quad::integrate(integrand, s_lo.ln(), s_hi.ln(), tol)?;
    if !res.value.is_finite() {
        return Err(Error::Quadrature {
            achieved: f64::INFINITY,
            requested: relative,
        });
    }
    Ok(res.value.max(0.0))
}

/// Comparison profile `I_μ(r) = (1 + r²)^{-(N+2μ)/2}`.
pub fn profile_i(mu: f64, r: f64, dim: usize) -> f64 {
    (1.0 + r * r).powf(-0.5 * (dim as f64 + 2.0 * mu))
}

/// Comparison profile `H_μ(r) = min{1, r^{-(N+2μ)}}`.
pub fn profile_h(mu: f64, r: f64, dim: usize) -> f64 {
    if r <= 1.0 {
        1.0
    } else {
        r.powf(-(dim as f64 + 2.0 * mu))
    }
}

/// Empirical comparability constants `(min, max)` of `k_μ(1, r) / H_μ(r)`
/// over the sampled radii.
pub fn comparability_constants(mu: f64, dim: usize, radii: &[f64]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &r in radii {
        let ratio = fractional_kernel(mu, 1.0, r, dim)? / profile_h(mu, r, dim);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Least-squares slope of `ln k_μ(1, r)` against `ln r` over `samples`
/// log-spaced radii in `[r_lo, r_hi]`.
///
/// The next asymptotic term is of relative size `r^{-2μ}`, so for small `μ`
/// the window has to sit far out before the slope settles at `-(N+2μ)`.
pub fn tail_exponent(mu: f64, dim: usize, r_lo: f64, r_hi: f64, samples: usize) -> Result<f64> {
    if !(r_lo > 0.0) || !(r_hi > r_lo) {
        return Err(Error::param("r_hi", r_hi, "need 0 < r_lo < r_hi"));
    }
    if samples < 2 {
        return Err(Error::param("samples", samples as f64, "need at least two radii"));
    }
    let step = (r_hi / r_lo).ln() / (samples - 1) as f64;
    let mut pts = Vec::with_capacity(samples);
    for i in 0..samples {
        let lr = r_lo.ln() + i as f64 * step;
        let k = fractional_kernel(mu, 1.0, lr.exp(), dim)?;
        if !(k > 0.0) {
            return Err(Error::NonPositiveSample { index: i, value: k });
        }
        pts.push((lr, k.ln()));
    }
    let n = samples as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Maximal defect of the self-similar form `k_μ(t, x) = t^{-N/2μ} K_μ(x / t^{1/2μ})`
/// between two times, relative to the rescaled peak height.
pub fn kernel_self_similarity_check(mu: f64, t1: f64, t2: f64, samples: &[f64], dim: usize) -> Result<f64> {
    if !(t1 > 0.0) || !(t2 > 0.0) {
        return Err(Error::param("t", t1.min(t2), "must be positive"));
    }
    let rescaled = |t: f64, z: f64| -> Result<f64> {
        let a = t.powf(1.0 / (2.0 * mu));
        Ok(t.powf(dim as f64 / (2.0 * mu)) * fractional_kernel(mu, t, a * z, dim)?)
    };
    let scale = rescaled(t1, 0.0)?;
    let mut worst: f64 = 0.0;
    for &z in samples {
        let d = (rescaled(t1, z)? - rescaled(t2, z)?).abs();
        worst = worst.max(d / scale);
    }
    Ok(worst)
}

/// Trapezoidal rule in `u = ln s` for integrals against `f_{t,μ}(s) ds`,
/// truncated to `[negligible_below, s_hi]`.
#[derive(Debug, Clone)]
pub struct SubordinationRule {
    pub mu: f64,
    pub t: f64,
    /// `(s_j, w_j)` with `w_j = Δu · s_j · f_{t,μ}(s_j)`.
    pub nodes: Vec<(f64, f64)>,
}

impl SubordinationRule {
    pub fn new(mu: f64, t: f64, s_hi: f64, count: usize) -> Result<SubordinationRule> {
        check_mu_open(mu)?;
        if !(t > 0.0) {
            return Err(Error::param("t", t, "must be positive"));
        }
        let u_lo = negligible_below(mu, t).ln();
        let u_hi = s_hi.ln().max(u_lo + 1.0);
        let du = (u_hi - u_lo) / (count - 1) as f64;
        let nodes = (0..count)
            .map(|j| {
                let s = (u_lo + j as f64 * du).exp();
                let end = if j == 0 || j == count - 1 { 0.5 } else { 1.0 };
                Ok((s, end * du * s * subordinator_density(mu, t, s)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubordinationRule { mu, t, nodes })
    }

    /// Captured probability mass (below 1 by the truncated tail).
    pub fn mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).sum()
    }
}

/// One-dimensional periodized heat kernel `Σ_m k₁(s, x + mL)`.
pub(crate) fn periodized_heat_1d(s: f64, x: f64, extent: f64) -> f64 {
    let reach = (4.0 * s * 42.0).sqrt() + 0.5 * extent;
    let m_max = (reach / extent).ceil() as i64 + 1;
    let x = crate::grid::wrap(x, extent);
    let mut sum = 0.0;
    for m in -m_max..=m_max {
        sum += heat(s, x + m as f64 * extent, 1);
    }
    sum
}
