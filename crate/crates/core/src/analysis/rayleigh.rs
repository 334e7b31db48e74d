use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

const RESIDUAL_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 300;
const MAX_CG: usize = 5000;
const CG_TOL: f64 = 1e-13;

/// Smallest eigenvalue of `(-Δ)^μ + |V|` on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayleighReport {
    pub omega2: f64,
    /// Normalized in `L²`, positive mean.
    #[serde(skip)]
    pub minimizer: Option<Field>,
    pub iterations: usize,
    pub cg_iterations: usize,
    /// `‖Aφ - ω₂φ‖₂` with `‖φ‖₂ = 1`.
    pub residual: f64,
}

/// `ω₂ = inf {‖(-Δ)^{μ/2} φ‖² + ∫|V||φ|² : ‖φ‖₂ = 1}` for `V ≤ 0`.
pub fn rayleigh_omega2(mu: f64, v: &Field) -> Result<RayleighReport> {
    if v.max() > 0.0 {
        return Err(Error::Hypothesis(format!("Rayleigh quotient needs V ≤ 0, max V = {}", v.max())));
    }
    principal_eigenvalue(mu, &v.abs())
}

struct Operator<'a> {
    grid: &'a Grid,
    symbol: Vec<f64>,
    q: &'a [f64],
}

impl Operator<'_> {
    fn apply(&self, x: &[f64], shift: f64) -> Vec<f64> {
        let mut y = self.grid.apply_symbol(x, &self.symbol);
        for ((yi, xi), qi) in y.iter_mut().zip(x).zip(self.q) {
            *yi += (qi - shift) * xi;
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for `(A - σ) y = b`, preconditioned by
/// the constant-coefficient operator `|ξ|^{2μ} + mean(q) - σ`.
///
/// Returns `None` on negative curvature, i.e. when `σ` is not below the
/// spectrum.
fn pcg(op: &Operator, shift: f64, b: &[f64], precond: &[f64]) -> Option<(Vec<f64>, usize)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = op.grid.apply_symbol(&r, precond);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let target = CG_TOL * norm(b);
    for it in 1..=MAX_CG {
        let ap = op.apply(&p, shift);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return None;
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= target {
            return Some((x, it));
        }
        z = op.grid.apply_symbol(&r, precond);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Some((x, MAX_CG))
}

/// Smallest eigenvalue of `(-Δ)^μ + q` for bounded `q`, by shifted inverse
/// iteration with matrix-free PCG solves.
///
/// The shift starts below `min q` (a lower bound for the spectrum) and
/// follows `ρ - 10 ‖r‖`, never rising above it; negative curvature in the
/// inner solve pushes it back down.
pub fn principal_eigenvalue(mu: f64, q: &Field) -> Result<RayleighReport> {
    crate::freeprop::check_mu(mu)?;
    let grid = q.grid();
    let op = Operator {
        grid,
        symbol: grid.laplacian_power_symbol(mu),
        q: q.values(),
    };
    let n = grid.len();
    let q_min = q.min();
    let q_mean = q.mean();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut shift = q_min - 1.0;
    let mut cg_total = 0;
    let mut last_res = f64::INFINITY;
    for outer in 0..=MAX_OUTER {
        let ax = op.apply(&x, 0.0);
        let rho = dot(&x, &ax);
        let r: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a - rho * b).collect();
        let res = norm(&r);
        last_res = res;
        if res <= RESIDUAL_TOL * rho.abs().max(1.0) {
            let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            // ‖φ‖_{L²} = 1 with the cell volume
            let scale = sign / grid.cell_volume().sqrt();
            let phi = Field::from_values(grid, x.iter().map(|v| v * scale).collect())?;
            return Ok(RayleighReport {
                omega2: rho,
                minimizer: Some(phi),
                iterations: outer,
                cg_iterations: cg_total,
                residual: res,
            });
        }
        if outer == MAX_OUTER {
            break;
        }
        shift = shift.max((rho - 10.0 * res).min(rho - 1e-10 * rho.abs().max(1.0)));
        let solved = loop {
            let precond: Vec<f64> = op.symbol.iter().map(|&s| 1.0 / (s + q_mean - shift)).collect();
            match pcg(&op, shift, &x, &precond) {
                Some(sol) => break sol,
                None => {
                    let fallback = q_min - 1.0;
                    shift = fallback.min(shift - 2.0 * (rho - shift).max(1e-8));
                }
            }
        };
        cg_total += solved.1;
        let y = solved.0;
        let ny = norm(&y);
        if !(ny > 0.0) || !ny.is_finite() {
            break;
        }
        x = y.iter().map(|v| v / ny).collect();
    }
    Err(Error::Stagnation {
        iterations: MAX_OUTER,
        residual: last_res,
    })
}
