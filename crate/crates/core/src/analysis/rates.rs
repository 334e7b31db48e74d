use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::grid::Field;
use crate::morrey::{MorreyParams, NormSpec};
use crate::perturbed::{PerturbedPropagator, Potential, Scheme};

/// Rates below this are reported as zero.
pub const RATE_FLOOR: f64 = 0.02;

const MIN_SAMPLES: usize = 8;
const GATE: f64 = 0.05;

/// Fitted exponential type of one norm trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub label: String,
    pub times: Vec<f64>,
    pub log_norms: Vec<f64>,
    /// `[start, end]` of the trailing half used for the fit.
    pub fit_window: (f64, f64),
    /// Slope of `-ln‖u(t)‖` against `t`.
    pub omega_hat: f64,
    pub intercept: f64,
    /// Largest deviation of `-ln‖u‖` from the fitted line.
    pub residual: f64,
    /// `residual ≤ 0.05 · max(|ω̂|, floor) · window length`.
    pub reliable: bool,
    /// Reliable and `|ω̂| < floor`.
    pub zero_rate: bool,
    pub floor: f64,
}

/// Fits `-ln(norm)` against `t` on the trailing half of the samples.
pub fn estimate_exponential_type(label: &str, times: &[f64], norms: &[f64]) -> Result<DecayReport> {
    if times.len() != norms.len() {
        return Err(Error::SizeMismatch {
            expected: times.len(),
            got: norms.len(),
        });
    }
    if let Some((index, &value)) = norms.iter().enumerate().find(|(_, &n)| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::NonPositiveSample { index, value });
    }
    let logs: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    estimate_from_logs(label, times, &logs)
}

/// [`estimate_exponential_type`] from `ln‖u(t)‖` directly, for trajectories
/// that would overflow.
pub fn estimate_from_logs(label: &str, times: &[f64], log_norms: &[f64]) -> Result<DecayReport> {
    if times.len() != log_norms.len() {
        return Err(Error::SizeMismatch {
            expected: times.len(),
            got: log_norms.len(),
        });
    }
    if times.len() < MIN_SAMPLES {
        return Err(Error::DegenerateFit(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            times.len()
        )));
    }
    if let Some((index, &value)) = log_norms.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::NonPositiveSample { index, value });
    }
    let start = times.len() / 2;
    let xs = &times[start..];
    let ys: Vec<f64> = log_norms[start..].iter().map(|l| -l).collect();
    let line = fit_line(xs, &ys)?;
    let window = xs[xs.len() - 1] - xs[0];
    let reliable = line.residual <= GATE * line.slope.abs().max(RATE_FLOOR) * window;
    Ok(DecayReport {
        label: label.to_string(),
        times: times.to_vec(),
        log_norms: log_norms.to_vec(),
        fit_window: (xs[0], xs[xs.len() - 1]),
        omega_hat: line.slope,
        intercept: line.intercept,
        residual: line.residual,
        reliable,
        zero_rate: reliable && line.slope.abs() < RATE_FLOOR,
        floor: RATE_FLOOR,
    })
}

/// Norms of `S(t)u0` at `t = 0` and each of `times`: one row per norm.
pub fn norm_trajectory(
    prop: &PerturbedPropagator,
    u0: &Field,
    norms: &[NormSpec],
    times: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut ts = Vec::with_capacity(times.len() + 1);
    let mut rows = vec![Vec::with_capacity(times.len() + 1); norms.len()];
    let mut failure = None;
    prop.evolve_observed(u0, times, |t, u| {
        ts.push(t);
        for (row, spec) in rows.iter_mut().zip(norms) {
            match spec.evaluate(u) {
                Ok(v) => row.push(v),
                Err(e) => {
                    failure.get_or_insert(e);
                    row.push(f64::NAN);
                }
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((ts, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichVerdict {
    pub mu: f64,
    pub dim: usize,
    pub params: MorreyParams,
    /// `ϑ = 1 + N/2μ`.
    pub vartheta: f64,
    pub omega_infty: f64,
    pub omega_pl: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    /// `ω̂_{p,ℓ}/ω̂_∞`, absent when `ω̂_∞` is zero.
    pub ratio: Option<f64>,
    pub rule: String,
    pub pass: bool,
}

/// Compares the fitted types in `L^∞` and `M^{p,ℓ}` with the admissible
/// band: equality for `μ = 1`, `[ω_∞/ϑ, (1 + ℓ/2pμ) ω_∞]` otherwise.
///
/// `tol` defaults to `0.05 ω̂_∞`.
pub fn sandwich_check(
    mu: f64,
    dim: usize,
    infty: &DecayReport,
    pl: &DecayReport,
    params: MorreyParams,
    tol: Option<f64>,
) -> Result<SandwichVerdict> {
    crate::freeprop::check_mu(mu)?;
    for r in [infty, pl] {
        if !r.reliable {
            return Err(Error::UnreliableFit(format!(
                "{}: residual {:.3e} over window {:?} at rate {:.4}",
                r.label, r.residual, r.fit_window, r.omega_hat
            )));
        }
    }
    let (wi, wp) = (infty.omega_hat, pl.omega_hat);
    let vartheta = 1.0 + dim as f64 / (2.0 * mu);
    let tol = tol.unwrap_or(0.05 * wi.abs());
    let base = SandwichVerdict {
        mu,
        dim,
        params,
        vartheta,
        omega_infty: wi,
        omega_pl: wp,
        lower: 0.0,
        upper: 0.0,
        tol,
        ratio: None,
        rule: String::new(),
        pass: false,
    };
    if infty.zero_rate {
        return Ok(SandwichVerdict {
            lower: -RATE_FLOOR,
            upper: RATE_FLOOR,
            rule: "zero type: |omega_pl| < floor".into(),
            pass: wp.abs() < RATE_FLOOR,
            ..base
        });
    }
    let ratio = Some(wp / wi);
    if mu == 1.0 {
        let band = 0.1 * wi.max(RATE_FLOOR);
        return Ok(SandwichVerdict {
            lower: wi - band,
            upper: wi + band,
            ratio,
            rule: "mu = 1: |omega_pl - omega_inf| <= 0.1 max(omega_inf, floor)".into(),
            pass: (wp - wi).abs() <= band,
            ..base
        });
    }
    let lower = wi / vartheta;
    let upper = (1.0 + params.slope() / (2.0 * mu)) * wi;
    Ok(SandwichVerdict {
        lower,
        upper,
        ratio,
        rule: "omega_inf/vartheta - tol <= omega_pl <= (1 + ell/2p mu) omega_inf + tol".into(),
        pass: lower - tol <= wp && wp <= upper + tol,
        ..base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformDecayReport {
    pub ps: Vec<f64>,
    pub reports: Vec<DecayReport>,
    /// Some rate above the floor.
    pub decaying: bool,
    /// `(max ω̂ - min ω̂)/max ω̂` when decaying.
    pub spread: f64,
    /// Spread within 10% when decaying; all rates zero otherwise.
    pub agree: bool,
}

/// Exponential types of `S_{μ,V}(t)1` in the uniform norms `L^p_U`.
pub fn uniform_decay_check(mu: f64, v: &Potential, ps: &[f64], times: &[f64], dt: f64) -> Result<UniformDecayReport> {
    if v.field().max() > 0.0 {
        return Err(Error::Hypothesis("uniform decay check needs V ≤ 0".into()));
    }
    let prop = PerturbedPropagator::new(v.clone(), mu, Scheme::Strang, dt)?;
    let specs: Vec<NormSpec> = ps.iter().map(|&p| NormSpec::Uniform { p }).collect();
    let one = Field::constant(v.grid(), 1.0);
    let (ts, rows) = norm_trajectory(&prop, &one, &specs, times)?;
    let mut reports = Vec::with_capacity(ps.len());
    for (spec, row) in specs.iter().zip(&rows) {
        let r = estimate_exponential_type(&spec.label(), &ts, row)?;
        if !r.reliable {
            return Err(Error::UnreliableFit(format!("{}: residual {:.3e}", r.label, r.residual)));
        }
        reports.push(r);
    }
    let rates: Vec<f64> = reports.iter().map(|r| r.omega_hat).collect();
    let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let decaying = hi >= RATE_FLOOR;
    let spread = if decaying { (hi - lo) / hi } else { 0.0 };
    let agree = if decaying {
        spread <= 0.1
    } else {
        reports.iter().all(|r| r.zero_rate)
    };
    Ok(UniformDecayReport {
        ps: ps.to_vec(),
        reports,
        decaying,
        spread,
        agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn times(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_exponential() {
        let ts = times(21, 10.0);
        let ns: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
        let r = estimate_exponential_type("x", &ts, &ns).unwrap();
        assert!((r.omega_hat - 1.0).abs() < 1e-6 && r.reliable && !r.zero_rate);
        assert_eq!(r.fit_window, (5.0, 10.0));
    }

    #[test]
    fn constant_norms_have_zero_type() {
        let ts = times(16, 4.0);
        let r = estimate_exponential_type("x", &ts, &vec![3.0; 16]).unwrap();
        assert!(r.omega_hat.abs() < 1e-8 && r.zero_rate);
    }

    #[test]
    fn oscillating_exponential_within_two_percent() {
        let ts = times(81, 20.0);
        for &w in &[0.5, 1.0, 2.0] {
            let ns: Vec<f64> = ts.iter().map(|&t| 3.0 * (-w * t).exp() * (1.0 + 0.01 * t.sin())).collect();
            let r = estimate_exponential_type("x", &ts, &ns).unwrap();
            assert!((r.omega_hat - w).abs() <= 0.02 * w, "{w}: {}", r.omega_hat);
            assert!(r.reliable);
        }
    }

    #[test]
    fn fit_rejects_bad_samples() {
        let ts = times(10, 1.0);
        let mut ns = vec![1.0; 10];
        ns[3] = 0.0;
        assert!(matches!(
            estimate_exponential_type("x", &ts, &ns),
            Err(Error::NonPositiveSample { index: 3, .. })
        ));
        assert!(estimate_exponential_type("x", &ts[..7], &[1.0; 7]).is_err());
    }

    #[test]
    fn noisy_trajectory_is_flagged() {
        let ts = times(20, 10.0);
        let ns: Vec<f64> = ts.iter().enumerate().map(|(k, t)| (-0.1 * t).exp() * if k % 2 == 0 { 1.0 } else { 3.0 }).collect();
        assert!(!estimate_exponential_type("x", &ts, &ns).unwrap().reliable);
    }

    fn report(w: f64) -> DecayReport {
        let ts = times(20, 10.0);
        let ns: Vec<f64> = ts.iter().map(|t| (-w * t).exp()).collect();
        estimate_exponential_type("x", &ts, &ns).unwrap()
    }

    #[test]
    fn sandwich_rules() {
        let p = MorreyParams::new(2.0, 1.0).unwrap();
        assert!(sandwich_check(1.0, 1, &report(1.0), &report(1.05), p, None).unwrap().pass);
        assert!(!sandwich_check(1.0, 1, &report(1.0), &report(1.2), p, None).unwrap().pass);
        // μ = 1/2, N = 1: ϑ = 2, upper factor 1 + ℓ/p = 1.5
        let v = sandwich_check(0.5, 1, &report(1.0), &report(0.6), p, None).unwrap();
        assert!((v.vartheta - 2.0).abs() < 1e-12 && (v.upper - 1.5).abs() < 1e-9 && v.pass);
        assert!(!sandwich_check(0.5, 1, &report(1.0), &report(0.4), p, None).unwrap().pass);
        assert!(!sandwich_check(0.5, 1, &report(1.0), &report(1.6), p, None).unwrap().pass);
        assert!(sandwich_check(0.5, 1, &report(0.0), &report(0.01), p, None).unwrap().pass);
        assert!(!sandwich_check(0.5, 1, &report(0.0), &report(0.1), p, None).unwrap().pass);
        let mut bad = report(1.0);
        bad.reliable = false;
        assert!(matches!(
            sandwich_check(1.0, 1, &bad, &report(1.0), p, None),
            Err(Error::UnreliableFit(_))
        ));
    }

    #[test]
    fn uniform_rates_constant_and_zero_potential() {
        let grid = Grid::new(1, 16.0, 128).unwrap();
        let ts: Vec<f64> = (1..=20).map(|k| 0.25 * k as f64).collect();
        let ps = [1.0, 2.0, f64::INFINITY];
        let rep = uniform_decay_check(1.0, &Potential::constant(&grid, -1.0), &ps, &ts, 0.05).unwrap();
        assert!(rep.decaying && rep.agree);
        for r in &rep.reports {
            assert!((r.omega_hat - 1.0).abs() < 1e-6, "{}", r.label);
        }
        let rep = uniform_decay_check(0.5, &Potential::zero(&grid), &ps, &ts, 0.05).unwrap();
        assert!(!rep.decaying && rep.agree);
    }

    #[test]
    fn uniform_rates_agree_for_periodic_potential() {
        let grid = Grid::new(1, 8.0 * PI, 256).unwrap();
        let v = Potential::bounded(Field::from_fn(&grid, |x| -(1.0 + x[0].sin())).unwrap());
        let ts: Vec<f64> = (1..=40).map(|k| 0.25 * k as f64).collect();
        let rep = uniform_decay_check(1.0, &v, &[1.0, 2.0, f64::INFINITY], &ts, 0.01).unwrap();
        assert!(rep.decaying && rep.agree, "spread {}", rep.spread);
    }
}
