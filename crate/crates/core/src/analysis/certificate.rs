use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::kernels::{fractional_kernel, profile_i};
use crate::morrey::{window_sums, BallShape, WindowEngine};
use crate::perturbed::{PerturbedPropagator, Potential, Scheme};
use crate::quad::{integrate, Tolerance};

/// `{0.05, 0.10, …, 0.95}`.
pub const THETA_GRID: [f64; 19] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
];

const PSI_START_INTERVALS: usize = 32;
const PSI_MAX_INTERVALS: usize = 1 << 24;
const PSI_CHANGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PsiField {
    pub psi: Field,
    pub theta: f64,
    /// Simpson intervals of the accepted rule.
    pub intervals: usize,
    /// Sup-norm change from the previous refinement.
    pub change: f64,
}

fn check_nonpositive(v: &Field) -> Result<f64> {
    if v.max() > 0.0 {
        return Err(Error::Hypothesis(format!("potential must be nonpositive, max V = {}", v.max())));
    }
    let sup = v.max_abs();
    if sup == 0.0 {
        return Err(Error::Hypothesis("potential vanishes identically".into()));
    }
    Ok(sup)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param("theta", theta, "must lie in (0, 1)"));
    }
    Ok(())
}

/// `(1 - q^k)/(1 - q)` for `q = e^{-x}`, `x ≥ 0`.
fn geometric(x: f64, k: usize) -> f64 {
    if x == 0.0 || k == 0 {
        return k as f64;
    }
    (-(k as f64) * x).exp_m1() / (-x).exp_m1()
}

/// Composite Simpson weights with `m` intervals on `[0, T]`, summed against
/// `e^{-sλ}`, in closed form.
fn simpson_multiplier(lambda: f64, t: f64, m: usize) -> f64 {
    let h = t / m as f64;
    let x = h * lambda;
    let r = (-x).exp();
    let half = m / 2;
    let odd = r * geometric(2.0 * x, half);
    let even = r * r * geometric(2.0 * x, half - 1);
    h / 3.0 * (1.0 + (-(m as f64) * x).exp() + 4.0 * odd + 2.0 * even)
}

fn psi_with(grid: &Grid, abs_v: &Field, symbol: &[f64], t: f64, m: usize) -> Result<Field> {
    let weights: Vec<f64> = symbol.iter().map(|&l| simpson_multiplier(l, t, m)).collect();
    Field::from_values(grid, grid.apply_symbol(abs_v.values(), &weights))
}

/// `Ψ_θ = ∫₀^{θ/‖V‖∞} S_μ(s)|V| ds`.
pub fn psi_field(mu: f64, v: &Field, theta: f64) -> Result<Field> {
    Ok(psi_field_detailed(mu, v, theta)?.psi)
}

/// [`psi_field`] with the quadrature diagnostics.
///
/// Composite Simpson in `s`, starting from 32 intervals and doubling until
/// the sup-norm change drops below `1e-6`. Each Fourier mode of `|V|` is
/// integrated against the weights in closed form, so a refinement costs one
/// transform.
pub fn psi_field_detailed(mu: f64, v: &Field, theta: f64) -> Result<PsiField> {
    crate::freeprop::check_mu(mu)?;
    check_theta(theta)?;
    let sup = check_nonpositive(v)?;
    let grid = v.grid();
    let t = theta / sup;
    let abs_v = v.abs();
    let symbol = grid.laplacian_power_symbol(mu);
    let mut m = PSI_START_INTERVALS;
    let mut prev = psi_with(grid, &abs_v, &symbol, t, m)?;
    loop {
        m *= 2;
        let next = psi_with(grid, &abs_v, &symbol, t, m)?;
        let change = next.sub(&prev)?.max_abs();
        if change < PSI_CHANGE {
            if next.max() > theta + 1e-8 {
                return Err(Error::Hypothesis(format!(
                    "max psi = {} exceeds theta = {theta}; the discrete semigroup is not contractive here",
                    next.max()
                )));
            }
            return Ok(PsiField {
                psi: next,
                theta,
                intervals: m,
                change,
            });
        }
        if m >= PSI_MAX_INTERVALS {
            return Err(Error::Quadrature {
                achieved: change,
                requested: PSI_CHANGE,
            });
        }
        prev = next;
    }
}

/// `(c, C₀)` from `α = 1 - (1-θ) inf Ψ`: `c = -ln(α)/θ`, `C₀ = 1/α`.
pub fn certificate_constants(theta: f64, inf_psi: f64) -> Result<(f64, f64)> {
    check_theta(theta)?;
    if !(inf_psi > 0.0) {
        return Err(Error::CertificateUnavailable { inf_psi });
    }
    if inf_psi > theta * (1.0 + 1e-8) {
        return Err(Error::param("inf_psi", inf_psi, "cannot exceed theta"));
    }
    let alpha = 1.0 - (1.0 - theta) * inf_psi;
    Ok((-alpha.ln() / theta, 1.0 / alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificatePoint {
    pub theta: f64,
    pub inf_psi: f64,
    pub max_psi: f64,
    pub c_rate: f64,
    pub c0: f64,
    pub omega0: f64,
}

/// `‖S_{μ,V}(t)‖ ≤ C₀ e^{-ω₀ t}` on `L^∞`, at the best `θ` of the scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub theta: f64,
    #[serde(skip)]
    pub psi: Option<Field>,
    pub inf_psi: f64,
    pub max_psi: f64,
    pub c_rate: f64,
    pub c0: f64,
    pub omega0: f64,
    pub v_sup: f64,
    pub scan: Vec<CertificatePoint>,
}

impl DecayCertificate {
    pub fn bound(&self, t: f64) -> f64 {
        self.c0 * (-self.omega0 * t).exp()
    }
}

pub fn decay_certificate(mu: f64, v: &Field, theta_grid: &[f64]) -> Result<DecayCertificate> {
    if theta_grid.is_empty() {
        return Err(Error::param("theta_grid", 0.0, "must not be empty"));
    }
    let v_sup = check_nonpositive(v)?;
    let mut best: Option<(CertificatePoint, Field)> = None;
    let mut scan = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let psi = psi_field(mu, v, theta)?;
        let inf_psi = psi.min();
        if !(inf_psi > 0.0) {
            return Err(Error::CertificateUnavailable { inf_psi });
        }
        let (c_rate, c0) = certificate_constants(theta, inf_psi.min(theta))?;
        let point = CertificatePoint {
            theta,
            inf_psi,
            max_psi: psi.max(),
            c_rate,
            c0,
            omega0: c_rate * v_sup,
        };
        scan.push(point);
        if best.as_ref().map_or(true, |(b, _)| point.omega0 > b.omega0) {
            best = Some((point, psi));
        }
    }
    let (p, psi) = best.expect("nonempty grid");
    Ok(DecayCertificate {
        theta: p.theta,
        psi: Some(psi),
        inf_psi: p.inf_psi,
        max_psi: p.max_psi,
        c_rate: p.c_rate,
        c0: p.c0,
        omega0: p.omega0,
        v_sup,
        scan,
    })
}

/// Largest `c` with `k_μ(1, ρ) ≥ c I_μ(ρ)` over sampled `ρ ∈ [0, 10³]`.
///
/// Self-similarity turns this into `k_μ(s, z) ≥ c s (s^{1/μ} + |z|²)^{-(N+2μ)/2}`
/// for every `s`.
pub fn g_mu_calibration(mu: f64, dim: usize) -> Result<f64> {
    let mut c = fractional_kernel(mu, 1.0, 0.0, dim)? / profile_i(mu, 0.0, dim);
    for i in 0..=120 {
        let rho = 10f64.powf(-2.0 + 5.0 * i as f64 / 120.0);
        c = c.min(fractional_kernel(mu, 1.0, rho, dim)? / profile_i(mu, rho, dim));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiLowerBound {
    pub radius: f64,
    /// `inf_x ∫_{B(x,R)} |V|`.
    pub c_v: f64,
    /// `∫₀^{θ/‖V‖∞} g_μ(s) ds`.
    pub g_integral: f64,
    /// Constant in `g_μ` for `μ < 1`; `1` for the Gaussian.
    pub calibration: f64,
    pub bound: f64,
}

/// `inf Ψ ≥ C_V ∫₀^{θ/‖V‖∞} g_μ(s) ds`, with `g_μ(s)` a lower bound for the
/// kernel on `B(0, R)`.
pub fn psi_lower_bound(mu: f64, v: &Field, theta: f64, radius: f64) -> Result<PsiLowerBound> {
    crate::freeprop::check_mu(mu)?;
    check_theta(theta)?;
    let sup = check_nonpositive(v)?;
    let grid = v.grid();
    let dim = grid.dim();
    let sums = window_sums(grid, v.abs().values(), radius, BallShape::Euclidean, WindowEngine::PrefixSums)?;
    let c_v = grid.cell_volume() * sums.into_iter().fold(f64::INFINITY, f64::min);
    let n = dim as f64;
    let r2 = radius * radius;
    let calibration = if mu == 1.0 { 1.0 } else { g_mu_calibration(mu, dim)? };
    let g = move |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if mu == 1.0 {
            (-r2 / (4.0 * s)).exp() / (4.0 * std::f64::consts::PI * s).powf(0.5 * n)
        } else {
            calibration * s / (s.powf(1.0 / mu) + r2).powf(0.5 * (n + 2.0 * mu))
        }
    };
    let g_integral = integrate(g, 0.0, theta / sup, Tolerance::default())?.value;
    Ok(PsiLowerBound {
        radius,
        c_v,
        g_integral,
        calibration,
        bound: c_v * g_integral,
    })
}

fn check_norm_potential(v: &Potential) -> Result<()> {
    if !v.is_bounded() {
        return Err(Error::SchemeMismatch("operator norms need a bounded potential".into()));
    }
    if v.field().max() > 0.0 {
        return Err(Error::Hypothesis("operator norm via S(t)1 needs V ≤ 0".into()));
    }
    Ok(())
}

/// `‖S_{μ,V}(t)‖_{L^∞→L^∞} = max S_{μ,V}(t)1`, valid since the semigroup is
/// positive. Strang splitting with step `dt`.
pub fn operator_norm_linfty(mu: f64, v: &Potential, t: f64, dt: f64) -> Result<f64> {
    check_norm_potential(v)?;
    let one = Field::constant(v.grid(), 1.0);
    if t == 0.0 {
        return Ok(1.0);
    }
    let prop = PerturbedPropagator::new(v.clone(), mu, Scheme::Strang, dt)?;
    Ok(prop.evolve(&one, t)?.last().max())
}

/// [`operator_norm_linfty`] at each of the increasing positive `times`.
pub fn operator_norm_trajectory(mu: f64, v: &Potential, times: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_norm_potential(v)?;
    let one = Field::constant(v.grid(), 1.0);
    let prop = PerturbedPropagator::new(v.clone(), mu, Scheme::Strang, dt)?;
    let mut out = Vec::with_capacity(times.len());
    prop.evolve_observed(&one, times, |t, u| {
        if t > 0.0 {
            out.push(u.max());
        }
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ab::{ab_check, default_ab_radii};
    use std::f64::consts::PI;

    #[test]
    fn closed_form_simpson_matches_explicit_sum() {
        for &(lambda, t, m) in &[(0.0, 1.0, 32usize), (3.7, 0.4, 64), (250.0, 0.3, 128)] {
            let h = t / m as f64;
            let mut s = 0.0;
            for j in 0..=m {
                let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                s += w * (-(j as f64) * h * lambda).exp();
            }
            s *= h / 3.0;
            assert!((simpson_multiplier(lambda, t, m) - s).abs() < 1e-14 * s.max(1.0), "{lambda}");
        }
    }

    #[test]
    fn constant_potential_gives_psi_equal_theta() {
        let grid = Grid::new(1, 10.0, 64).unwrap();
        let v = Field::constant(&grid, -2.5);
        for &mu in &[0.5, 1.0] {
            let psi = psi_field(mu, &v, 0.3).unwrap();
            assert!(psi.values().iter().all(|&p| (p - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn psi_matches_exact_modal_integral() {
        // mode by mode: ∫₀^T e^{-sλ} ds = (1 - e^{-λT})/λ
        let grid = Grid::new(1, 2.0 * PI, 128).unwrap();
        let v = Field::from_fn(&grid, |x| -(1.0 + x[0].sin())).unwrap();
        let (mu, theta) = (0.75, 0.4);
        let t = theta / v.max_abs();
        let exact_w: Vec<f64> = grid
            .laplacian_power_symbol(mu)
            .iter()
            .map(|&l| if l == 0.0 { t } else { -(-l * t).exp_m1() / l })
            .collect();
        let exact = grid.apply_symbol(v.abs().values(), &exact_w);
        let psi = psi_field_detailed(mu, &v, theta).unwrap();
        assert!(psi.intervals >= 64);
        for (a, b) in psi.psi.values().iter().zip(&exact) {
            assert!((a - b).abs() < 2e-6, "{a} vs {b}");
        }
        assert!(psi.psi.min() > 0.0 && psi.psi.max() <= theta + 1e-8);
    }

    #[test]
    fn psi_rejects_bad_input() {
        let grid = Grid::new(1, 10.0, 64).unwrap();
        assert!(psi_field(1.0, &Field::zeros(&grid), 0.5).is_err());
        assert!(psi_field(1.0, &Field::constant(&grid, 1.0), 0.5).is_err());
        for theta in [0.0, 1.0, -0.1] {
            assert!(psi_field(1.0, &Field::constant(&grid, -1.0), theta).is_err());
        }
    }

    #[test]
    fn certificate_spot_values() {
        let (c, c0) = certificate_constants(0.5, 0.5).unwrap();
        assert!((c + 2.0 * 0.75f64.ln()).abs() < 1e-12);
        assert!((c0 - 4.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            certificate_constants(0.5, 0.0),
            Err(Error::CertificateUnavailable { .. })
        ));
    }

    #[test]
    fn constant_potential_recovers_its_rate_as_theta_vanishes() {
        let grid = Grid::new(1, 8.0, 32).unwrap();
        let v = Field::constant(&grid, -3.0);
        let thetas = [1e-1, 1e-2, 1e-3, 1e-4];
        let mut prev = 0.0;
        for &theta in &thetas {
            let cert = decay_certificate(1.0, &v, &[theta]).unwrap();
            assert!(cert.c_rate > prev && cert.c_rate < 1.0);
            assert!(cert.c0 > 1.0);
            prev = cert.c_rate;
        }
        let cert = decay_certificate(1.0, &v, &[1e-4]).unwrap();
        assert!((cert.c_rate - 1.0).abs() < 2e-4 && (cert.c0 - 1.0) < 2e-4);
        assert!((cert.omega0 - 3.0).abs() < 1e-3);
        // the default grid picks the smallest theta for constant potentials
        let cert = decay_certificate(1.0, &v, &THETA_GRID).unwrap();
        assert_eq!(cert.theta, 0.05);
        assert_eq!(cert.scan.len(), 19);
    }

    #[test]
    fn certificate_bounds_the_measured_norm() {
        let grid = Grid::new(1, 2.0 * PI, 128).unwrap();
        let field = Field::from_fn(&grid, |x| -(1.0 + x[0].sin())).unwrap();
        let cert = decay_certificate(1.0, &field, &THETA_GRID).unwrap();
        assert!(cert.inf_psi > 0.0 && cert.max_psi <= cert.theta + 1e-8);
        assert!(cert.omega0 > 0.0 && cert.c0 > 1.0);
        let v = Potential::bounded(field);
        let times: Vec<f64> = (1..=50).map(|k| 0.1 * k as f64).collect();
        let norms = operator_norm_trajectory(1.0, &v, &times, 1e-3).unwrap();
        for (&t, &n) in times.iter().zip(&norms) {
            assert!(n <= cert.bound(t) * 1.02, "t = {t}: {n} > {}", cert.bound(t));
        }
    }

    #[test]
    fn lower_bound_holds() {
        let grid = Grid::new(1, 16.0, 256).unwrap();
        let field = Field::from_fn(&grid, |x| -(1.0 + (2.0 * PI * x[0] / 4.0).sin()).max(0.0) * 0.8).unwrap();
        assert!(ab_check(&field, &default_ab_radii(&grid)).unwrap().holds);
        for &mu in &[1.0, 0.5] {
            let psi = psi_field(mu, &field, 0.5).unwrap();
            let lb = psi_lower_bound(mu, &field, 0.5, 2.0).unwrap();
            assert!(lb.bound > 0.0);
            assert!(psi.min() >= lb.bound - 1e-6, "mu {mu}: {} < {}", psi.min(), lb.bound);
        }
    }

    #[test]
    fn cauchy_calibration_is_one_over_pi() {
        // k_{1/2}(1, ρ) = (1/π)(1+ρ²)^{-1} = I_{1/2}(ρ)/π in one dimension
        let c = g_mu_calibration(0.5, 1).unwrap();
        assert!((c - 1.0 / PI).abs() < 1e-6, "{c}");
    }

    #[test]
    fn operator_norm_special_cases() {
        let grid = Grid::new(1, 8.0, 64).unwrap();
        let zero = Potential::zero(&grid);
        assert!((operator_norm_linfty(0.5, &zero, 2.0, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let one = Potential::constant(&grid, -1.0);
        for t in [0.5, 1.0, 3.0] {
            let n = operator_norm_linfty(0.75, &one, t, 0.05).unwrap();
            assert!((n - (-t).exp()).abs() < 1e-8);
        }
        let bump = Potential::bounded(Field::from_fn(&grid, |x| -(-x[0] * x[0]).exp()).unwrap());
        let times: Vec<f64> = (1..=20).map(|k| 0.25 * k as f64).collect();
        let norms = operator_norm_trajectory(1.0, &bump, &times, 0.01).unwrap();
        assert!(norms[0] <= 1.0 + 1e-12);
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(operator_norm_linfty(1.0, &Potential::constant(&grid, 1.0), 1.0, 0.1).is_err());
    }
}
