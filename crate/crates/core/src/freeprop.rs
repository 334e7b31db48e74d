//! The free semigroup `S_μ(t) = e^{-t(-Δ)^μ}` on grid fields.
//!
//! Three methods are available:
//!
//! * `Multiplier`: `e^{-t|ξ|^{2μ}}` applied in Fourier space. Exact for the
//!   discrete operator and the default.
//! * `KernelConvolution`: direct periodic convolution with the sampled
//!   periodized kernel `K(x) = Σ_m k_μ(t, x + mL)`.
//! * `Subordination`: `∫ f_{t,μ}(s) S_1(s) ds` discretized by the trapezoid
//!   rule in `ln s`, node count doubled until the result settles.
//!
//! Propagators are plain immutable values and can be shared across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::grid::{AtomicMeasure, Field, Grid};
use crate::kernels::{periodized_heat_1d, SubordinationRule};
use crate::morrey::{morrey_norm, BallFamily, MorreyParams};

/// Starting node count of the subordination rule.
pub const SUBORDINATION_NODES: usize = 64;
/// The subordination rule is refined until the output moves by less than this
/// (relative to `‖u0‖∞`).
pub const SUBORDINATION_TOLERANCE: f64 = 1e-5;
const MAX_NODES: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FreeMethod {
    #[default]
    Multiplier,
    KernelConvolution,
    Subordination,
}

impl std::str::FromStr for FreeMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "multiplier" => Ok(FreeMethod::Multiplier),
            "kernel" | "kernel-convolution" => Ok(FreeMethod::KernelConvolution),
            "subordination" => Ok(FreeMethod::Subordination),
            _ => Err(format!("unknown method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreePropagator {
    mu: f64,
    method: FreeMethod,
    grid: Grid,
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::param("mu", mu, "must lie in (0, 1]"));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", t, "must be finite and nonnegative"));
    }
    Ok(())
}

/// Largest `t` with `(2t)^{1/2μ} ≤ L/8`.
pub fn validity_limit(mu: f64, extent: f64) -> f64 {
    0.5 * (extent / 8.0).powf(2.0 * mu)
}

impl FreePropagator {
    pub fn new(grid: &Grid, mu: f64, method: FreeMethod) -> Result<FreePropagator> {
        check_mu(mu)?;
        Ok(FreePropagator {
            mu,
            method,
            grid: grid.clone(),
        })
    }

    pub fn multiplier(grid: &Grid, mu: f64) -> Result<FreePropagator> {
        FreePropagator::new(grid, mu, FreeMethod::Multiplier)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn method(&self) -> FreeMethod {
        self.method
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn validity_limit(&self) -> f64 {
        validity_limit(self.mu, self.grid.extent())
    }

    /// Errors when `(2t)^{1/2μ} > L/8`.
    pub fn check_validity(&self, t: f64) -> Result<()> {
        let limit = self.validity_limit();
        if t > limit * (1.0 + 1e-12) {
            return Err(Error::ValidityWindow { t, limit });
        }
        Ok(())
    }

    /// `e^{-t|ξ|^{2μ}}` in FFT order.
    pub fn symbol(&self, t: f64) -> Vec<f64> {
        let mu = self.mu;
        self.grid
            .frequency_squared()
            .iter()
            .map(|&k2| if k2 == 0.0 { 1.0 } else { (-t * k2.powf(mu)).exp() })
            .collect()
    }

    pub fn apply(&self, u0: &Field, t: f64) -> Result<Field> {
        self.grid.check(u0)?;
        check_time(t)?;
        if t == 0.0 {
            return Ok(u0.clone());
        }
        match self.method {
            FreeMethod::Multiplier => Field::from_values(&self.grid, self.grid.apply_symbol(u0.values(), &self.symbol(t))),
            FreeMethod::KernelConvolution => {
                let k = periodized_kernel(&self.grid, self.mu, t)?;
                Field::from_values(&self.grid, convolve(&k, u0.values()))
            }
            FreeMethod::Subordination => self.apply_subordinated(u0, t),
        }
    }

    fn apply_subordinated(&self, u0: &Field, t: f64) -> Result<Field> {
        if self.mu == 1.0 {
            return FreePropagator::multiplier(&self.grid, 1.0)?.apply(u0, t);
        }
        let s_hi = heat_relaxation_time(&self.grid);
        let scale = u0.max_abs().max(f64::MIN_POSITIVE);
        let mut count = SUBORDINATION_NODES;
        let mut prev = self.subordinated_values(u0, t, s_hi, count)?;
        loop {
            count *= 2;
            let next = self.subordinated_values(u0, t, s_hi, count)?;
            let change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            if change < SUBORDINATION_TOLERANCE {
                return Field::from_values(&self.grid, next);
            }
            if count >= MAX_NODES {
                return Err(Error::Quadrature {
                    achieved: change,
                    requested: SUBORDINATION_TOLERANCE,
                });
            }
            prev = next;
        }
    }

    /// `Σ_j w_j S_1(s_j) u0` with the mean carried exactly.
    fn subordinated_values(&self, u0: &Field, t: f64, s_hi: f64, count: usize) -> Result<Vec<f64>> {
        let rule = SubordinationRule::new(self.mu, t, s_hi, count)?;
        let symbol: Vec<f64> = self
            .grid
            .frequency_squared()
            .iter()
            .map(|&k2| {
                if k2 == 0.0 {
                    1.0
                } else {
                    rule.nodes.iter().map(|&(s, w)| w * (-s * k2).exp()).sum()
                }
            })
            .collect();
        Ok(self.grid.apply_symbol(u0.values(), &symbol))
    }

    /// `Σ_atoms m_a K(x - x_a)` with the periodized kernel `K`.
    pub fn apply_measure(&self, measure: &AtomicMeasure, t: f64) -> Result<Field> {
        if measure.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param("t", t, "measures need t > 0"));
        }
        let k = periodized_kernel(&self.grid, self.mu, t)?;
        let mut out = vec![0.0; self.grid.len()];
        for &(node, mass) in measure.atoms() {
            let shifted = shift_to(&k, node);
            for (o, v) in out.iter_mut().zip(shifted.values()) {
                *o += mass * v;
            }
        }
        Field::from_values(&self.grid, out)
    }
}

pub fn apply_free(propagator: &FreePropagator, u0: &Field, t: f64) -> Result<Field> {
    propagator.apply(u0, t)
}

pub fn apply_free_measure(propagator: &FreePropagator, measure: &AtomicMeasure, t: f64) -> Result<Field> {
    propagator.apply_measure(measure, t)
}

/// Beyond this time every nonzero heat mode has decayed below `e^{-45}`.
fn heat_relaxation_time(grid: &Grid) -> f64 {
    let k_min = 2.0 * std::f64::consts::PI / grid.extent();
    45.0 / (k_min * k_min)
}

/// Moves a field centered at the origin node so that it is centered at `node`.
fn shift_to(k: &Field, node: usize) -> Field {
    let g = k.grid();
    let o = g.multi_index(g.origin());
    let c = g.multi_index(node);
    k.shifted(&[c[0] as isize - o[0] as isize, c[1] as isize - o[1] as isize])
}

/// Samples of the periodized kernel `K(x) = Σ_m k_μ(t, x + mL)` at the nodes,
/// centered at the origin node.
///
/// Built by subordinating the periodized heat kernel, which factorizes over
/// the axes; the trapezoid rule in `ln s` is doubled until the samples agree
/// to `1e-10` of their maximum.
pub fn periodized_kernel(grid: &Grid, mu: f64, t: f64) -> Result<Field> {
    check_mu(mu)?;
    if !(t > 0.0) {
        return Err(Error::param("t", t, "must be positive"));
    }
    let n = grid.points_per_axis();
    let extent = grid.extent();
    let offsets: Vec<f64> = (0..n).map(|i| grid.coordinate(i)).collect();
    if mu == 1.0 {
        let g: Vec<f64> = offsets.iter().map(|&x| periodized_heat_1d(t, x, extent)).collect();
        return Field::from_values(grid, tensor(grid, &[(1.0, g)], 0.0));
    }
    let s_hi = heat_relaxation_time(grid);
    let base = extent.powi(-(grid.dim() as i32));
    let build = |count: usize| -> Result<Vec<f64>> {
        let rule = SubordinationRule::new(mu, t, s_hi, count)?;
        let factors: Vec<(f64, Vec<f64>)> = rule
            .nodes
            .par_iter()
            .map(|&(s, w)| (w, offsets.iter().map(|&x| periodized_heat_1d(s, x, extent)).collect()))
            .collect();
        Ok(tensor(grid, &factors, base))
    };
    let mut count = SUBORDINATION_NODES;
    let mut prev = build(count)?;
    loop {
        count *= 2;
        let next = build(count)?;
        let scale = next.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change <= 1e-10 * scale {
            let clamped = next.into_iter().map(|v| v.max(0.0)).collect();
            return Field::from_values(grid, clamped);
        }
        if count >= MAX_NODES {
            return Err(Error::Quadrature {
                achieved: change / scale,
                requested: 1e-10,
            });
        }
        prev = next;
    }
}

/// `base + Σ w (Π_axes g - base)` on the grid, or `Σ w Π g` when `base = 0`.
fn tensor(grid: &Grid, factors: &[(f64, Vec<f64>)], base: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    match grid.dim() {
        1 => (0..n)
            .map(|i| base + factors.iter().map(|(w, g)| w * (g[i] - base)).sum::<f64>())
            .collect(),
        _ => (0..n * n)
            .into_par_iter()
            .map(|flat| {
                let (i, j) = (flat / n, flat % n);
                base + factors.iter().map(|(w, g)| w * (g[i] * g[j] - base)).sum::<f64>()
            })
            .collect(),
    }
}

/// `h^N Σ_y K(x - y) u(y)` with `K` centered at the origin node.
fn convolve(kernel: &Field, u: &[f64]) -> Vec<f64> {
    let g = kernel.grid();
    let n = g.points_per_axis();
    let k = kernel.values();
    let vol = g.cell_volume();
    let c = n / 2;
    match g.dim() {
        1 => (0..n)
            .into_par_iter()
            .map(|i| vol * (0..n).map(|j| k[(c + i + n - j) % n] * u[j]).sum::<f64>())
            .collect(),
        _ => (0..n * n)
            .into_par_iter()
            .map(|flat| {
                let (i1, i2) = (flat / n, flat % n);
                let mut s = 0.0;
                for j1 in 0..n {
                    let r = ((c + i1 + n - j1) % n) * n;
                    let urow = &u[j1 * n..(j1 + 1) * n];
                    for (j2, uv) in urow.iter().enumerate() {
                        s += k[r + (c + i2 + n - j2) % n] * uv;
                    }
                }
                vol * s
            })
            .collect(),
    }
}

/// Test datum for smoothing-rate measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Probe {
    /// Unit point mass at the origin.
    Atom,
    /// Indicator of the ball of the given radius around the origin.
    Ball { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingFit {
    /// Slope of `ln ‖S_μ(t) probe‖` against `ln t`.
    pub slope: f64,
    /// `-(ℓ/p - s/q)/2μ`.
    pub predicted: f64,
    /// Fitted prefactor `e^{intercept}`.
    pub prefactor: f64,
    pub residual: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Fits the decay exponent of `‖S_μ(t) probe‖_{M^{q,s}}` over `t_grid`.
///
/// `source` is the space the probe is measured in; for an atom that is the
/// measure space, whose index enters as `(p, ℓ) = (1, ℓ)`.
pub fn measure_smoothing_exponent(
    propagator: &FreePropagator,
    probe: Probe,
    source: MorreyParams,
    target: MorreyParams,
    family: &BallFamily,
    t_grid: &[f64],
) -> Result<SmoothingFit> {
    if target.slope() > source.slope() + 1e-12 {
        return Err(Error::Hypothesis(format!(
            "smoothing needs l/p >= s/q, got {} < {}",
            source.slope(),
            target.slope()
        )));
    }
    if t_grid.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} times, need at least 2", t_grid.len())));
    }
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(Error::param("t", t, "must be positive"));
        }
        propagator.check_validity(t)?;
    }
    let grid = propagator.grid();
    let datum = match probe {
        Probe::Atom => None,
        Probe::Ball { radius } => Some(Field::characteristic_ball(grid, &[0.0, 0.0][..grid.dim()], radius)?),
    };
    let samples = t_grid
        .par_iter()
        .map(|&t| -> Result<(f64, f64)> {
            let u = match &datum {
                None => propagator.apply_measure(&AtomicMeasure::unit_atom(grid), t)?,
                Some(d) => propagator.apply(d, t)?,
            };
            Ok((t, morrey_norm(&u, target, family)?.value))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, &(_, v)) in samples.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveSample { index: i, value: v });
        }
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    Ok(SmoothingFit {
        slope: fit.slope,
        predicted: -(source.slope() - target.slope()) / (2.0 * propagator.mu()),
        prefactor: fit.intercept.exp(),
        residual: fit.residual,
        samples,
    })
}
