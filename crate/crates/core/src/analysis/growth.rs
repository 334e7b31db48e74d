use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::grid::Field;
use crate::morrey::{morrey_norm, BallFamily, BallShape};
use crate::perturbed::{PerturbedPropagator, Potential, PotentialClass, Scheme};

use super::rates::{estimate_from_logs, DecayReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    /// Slope of `ln‖u(t)‖∞`; negative for decay.
    pub rate: f64,
    pub fit: DecayReport,
}

/// Exponential growth rate of `‖S(t)u0‖∞` from an evolution that is
/// renormalized to unit sup norm after each of `intervals` equal chunks, so
/// large rates neither overflow nor trip the blow-up guard.
pub fn measure_growth_rate(prop: &PerturbedPropagator, u0: &Field, t_final: f64, intervals: usize) -> Result<GrowthEstimate> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::param("t_final", t_final, "must be positive"));
    }
    let start = u0.max_abs();
    if !(start > 0.0) {
        return Err(Error::param("u0", start, "must not vanish"));
    }
    let gap = t_final / intervals as f64;
    let mut u = u0.scale(1.0 / start)?;
    let mut log_norm = start.ln();
    let mut times = vec![0.0];
    let mut logs = vec![log_norm];
    for k in 1..=intervals {
        let next = prop.evolve(&u, gap)?.last().clone();
        let m = next.max_abs();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::NonPositiveSample { index: k, value: m });
        }
        log_norm += m.ln();
        u = next.scale(1.0 / m)?;
        times.push(k as f64 * gap);
        logs.push(log_norm);
    }
    let fit = estimate_from_logs("Linf", &times, &logs)?;
    Ok(GrowthEstimate { rate: -fit.omega_hat, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub lambdas: Vec<f64>,
    pub rates: Vec<f64>,
    /// Slope of `ln rate` against `ln λ`.
    pub slope: f64,
    pub residual: f64,
}

/// Growth rates of `S_{μ,λW}(t)1` for each `λ`, and their log-log slope.
pub fn lambda_sweep(mu: f64, profile: &Potential, lambdas: &[f64], dt: f64, t_final: f64, intervals: usize) -> Result<LambdaSweep> {
    let one = Field::constant(profile.grid(), 1.0);
    let mut rates = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(lambda > 0.0) {
            return Err(Error::param("lambda", lambda, "must be positive"));
        }
        let v = Potential::bounded(profile.field().scale(lambda)?);
        let prop = PerturbedPropagator::new(v, mu, Scheme::Strang, dt)?;
        let g = measure_growth_rate(&prop, &one, t_final, intervals)?;
        if !(g.rate > 0.0) {
            return Err(Error::NonPositiveSample {
                index: rates.len(),
                value: g.rate,
            });
        }
        rates.push(g.rate);
    }
    let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let line = fit_line(&xs, &ys)?;
    Ok(LambdaSweep {
        lambdas: lambdas.to_vec(),
        rates,
        slope: line.slope,
        residual: line.residual,
    })
}

/// `a = c Σ_i ‖V_i⁺‖^{1/(1-κ_i)}`, norms in each potential's class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub kappas: Vec<f64>,
    pub positive_norms: Vec<f64>,
    /// `Σ ‖V_i⁺‖^{1/(1-κ_i)}`.
    pub shape: f64,
    pub calibration: f64,
    pub bound: f64,
}

impl GrowthBound {
    pub fn holds(&self, measured_rate: f64) -> bool {
        measured_rate <= self.bound * (1.0 + 1e-9) + 1e-12
    }
}

fn positive_norm(v: &Potential) -> Result<f64> {
    let plus = v.positive_part();
    match v.class() {
        PotentialClass::Bounded => Ok(plus.max_abs()),
        PotentialClass::Morrey { .. } => {
            let family = BallFamily::dyadic(v.grid(), BallShape::Euclidean);
            Ok(morrey_norm(&plus, v.params(), &family)?.value)
        }
    }
}

fn bound_shape(mu: f64, potentials: &[&Potential]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut kappas = Vec::with_capacity(potentials.len());
    let mut norms = Vec::with_capacity(potentials.len());
    let mut shape = 0.0;
    for v in potentials {
        v.check_admissible(mu)?;
        let kappa = v.kappa(mu);
        let n = positive_norm(v)?;
        shape += n.powf(1.0 / (1.0 - kappa));
        kappas.push(kappa);
        norms.push(n);
    }
    Ok((kappas, norms, shape))
}

pub fn growth_bound(mu: f64, potentials: &[&Potential], calibration: f64) -> Result<GrowthBound> {
    crate::freeprop::check_mu(mu)?;
    if !(calibration >= 0.0) {
        return Err(Error::param("calibration", calibration, "must be nonnegative"));
    }
    let (kappas, positive_norms, shape) = bound_shape(mu, potentials)?;
    Ok(GrowthBound {
        kappas,
        positive_norms,
        shape,
        calibration,
        bound: calibration * shape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCalibration {
    /// `max rate/shape` over the family.
    pub constant: f64,
    pub shapes: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Fits the constant of the growth bound as the largest ratio of measured
/// rate to bound shape over a family of bounded potentials.
pub fn calibrate_growth_constant(mu: f64, family: &[Potential], dt: f64, t_final: f64, intervals: usize) -> Result<GrowthCalibration> {
    if family.is_empty() {
        return Err(Error::param("family", 0.0, "must not be empty"));
    }
    let mut shapes = Vec::with_capacity(family.len());
    let mut rates = Vec::with_capacity(family.len());
    let mut constant: f64 = 0.0;
    for v in family {
        let (_, _, shape) = bound_shape(mu, &[v])?;
        let prop = PerturbedPropagator::new(v.clone(), mu, Scheme::Strang, dt)?;
        let rate = measure_growth_rate(&prop, &Field::constant(v.grid(), 1.0), t_final, intervals)?.rate;
        if shape > 0.0 {
            constant = constant.max(rate / shape);
        }
        shapes.push(shape);
        rates.push(rate);
    }
    Ok(GrowthCalibration { constant, shapes, rates })
}
