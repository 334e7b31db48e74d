//! Perturbed semigroups `u_t + (-Δ)^μ u = V u`.
//!
//! Two independent solvers:
//!
//! * operator splitting (`Strang`, `Lie`) with exact free substeps and
//!   pointwise exponentials of `V`, for bounded potentials;
//! * Picard iteration of the variation-of-constants formula
//!   `φ(t) = S_base(t) u0 + ∫₀^t S_base(t-τ) W φ(τ) dτ` on successive time
//!   windows, in any of the five base/perturbation splittings of the
//!   potentials.
//!
//! With the free base the time integral is evaluated mode by mode against a
//! piecewise-linear interpolant of `W φ` (exponential product integration).
//! With a perturbed base the base semigroup is itself a fine Strang solve and
//! the integral is the trapezoid rule.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freeprop::{check_mu, FreePropagator};
use crate::grid::{Field, Grid};
use crate::morrey::{morrey_norm, BallFamily, BallShape, MorreyParams};

/// Relative growth of `‖u‖∞` that aborts an evolution.
pub const BLOW_UP_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PotentialClass {
    Bounded,
    Morrey { p: f64, ell: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignHint {
    Nonpositive,
    Nonnegative,
    Mixed,
}

/// A potential: values on the grid plus the function class it is meant to
/// represent.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    field: Field,
    class: PotentialClass,
    sign: SignHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialNorms {
    pub sup: f64,
    /// `‖V⁺‖` and `‖V⁻‖` in the declared class norm.
    pub positive: f64,
    pub negative: f64,
}

fn observed_sign(field: &Field) -> SignHint {
    if field.max() <= 0.0 {
        SignHint::Nonpositive
    } else if field.min() >= 0.0 {
        SignHint::Nonnegative
    } else {
        SignHint::Mixed
    }
}

impl Potential {
    pub fn new(field: Field, class: PotentialClass) -> Result<Potential> {
        if let PotentialClass::Morrey { p, ell } = class {
            MorreyParams::new(p, ell)?.check_dim(field.grid().dim())?;
        }
        let sign = observed_sign(&field);
        Ok(Potential { field, class, sign })
    }

    /// Like [`Potential::new`] but insists on a sign.
    pub fn with_sign(field: Field, class: PotentialClass, sign: SignHint) -> Result<Potential> {
        let v = Potential::new(field, class)?;
        let ok = match sign {
            SignHint::Mixed => true,
            s => v.sign == s || v.field.max_abs() == 0.0,
        };
        if !ok {
            return Err(Error::Hypothesis(format!("potential declared {sign:?} but is {:?}", v.sign)));
        }
        Ok(Potential { sign, ..v })
    }

    pub fn bounded(field: Field) -> Potential {
        let sign = observed_sign(&field);
        Potential {
            field,
            class: PotentialClass::Bounded,
            sign,
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Potential {
        Potential::bounded(Field::constant(grid, c))
    }

    pub fn zero(grid: &Grid) -> Potential {
        Potential::constant(grid, 0.0)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn class(&self) -> PotentialClass {
        self.class
    }

    pub fn sign(&self) -> SignHint {
        self.sign
    }

    pub fn is_bounded(&self) -> bool {
        self.class == PotentialClass::Bounded
    }

    pub fn sup_norm(&self) -> f64 {
        self.field.max_abs()
    }

    /// Morrey parameters of the class (`p = ∞` for bounded potentials).
    pub fn params(&self) -> MorreyParams {
        match self.class {
            PotentialClass::Bounded => MorreyParams::sup(),
            PotentialClass::Morrey { p, ell } => MorreyParams { p, ell },
        }
    }

    /// `κ = ℓ/(2μp)`; 0 for bounded potentials.
    pub fn kappa(&self, mu: f64) -> f64 {
        self.params().kappa(mu)
    }

    pub fn check_admissible(&self, mu: f64) -> Result<()> {
        let kappa = self.kappa(mu);
        if kappa >= 1.0 {
            return Err(Error::Inadmissible { kappa });
        }
        Ok(())
    }

    pub fn positive_part(&self) -> Field {
        self.field.map(|v| v.max(0.0)).expect("finite")
    }

    pub fn negative_part(&self) -> Field {
        self.field.map(|v| (-v).max(0.0)).expect("finite")
    }

    /// Norms in the declared class, over the dyadic Euclidean family.
    pub fn norms(&self) -> Result<PotentialNorms> {
        let family = BallFamily::dyadic(self.grid(), BallShape::Euclidean);
        let params = self.params();
        Ok(PotentialNorms {
            sup: self.sup_norm(),
            positive: morrey_norm(&self.positive_part(), params, &family)?.value,
            negative: morrey_norm(&self.negative_part(), params, &family)?.value,
        })
    }

    /// `V + c`, same class.
    pub fn plus_constant(&self, c: f64) -> Potential {
        let field = self.field.map(|v| v + c).expect("finite");
        let sign = observed_sign(&field);
        Potential {
            field,
            class: self.class,
            sign,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Result<Potential> {
        let field = self.field.scale(lambda)?;
        let sign = observed_sign(&field);
        Ok(Potential {
            field,
            class: self.class,
            sign,
        })
    }
}

/// `V_n = S_μ(1/n) V`, a bounded potential.
pub fn smooth_potential(v: &Potential, mu: f64, n: u32) -> Result<Potential> {
    if n == 0 {
        return Err(Error::param("n", 0.0, "must be at least 1"));
    }
    let free = FreePropagator::multiplier(v.grid(), mu)?;
    Ok(Potential::bounded(free.apply(v.field(), 1.0 / n as f64)?))
}

/// `V_M = max(V, -M)`, a bounded potential.
pub fn truncate_potential(v: &Potential, m: f64) -> Result<Potential> {
    if !(m > 0.0) {
        return Err(Error::param("M", m, "must be positive"));
    }
    Ok(Potential::bounded(v.field().map(|x| x.max(-m))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Strang,
    Lie,
    PicardVcf,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strang" => Ok(Scheme::Strang),
            "lie" => Ok(Scheme::Lie),
            "picard" | "picard-vcf" | "picard_vcf" => Ok(Scheme::PicardVcf),
            _ => Err(format!("unknown scheme {s:?}")),
        }
    }
}

/// Which semigroup the fixed-point map is built on. With potentials
/// `V⁰, V¹`, an optional extra `Ṽ` and a constant `c`:
///
/// | variant | base | perturbation |
/// |---|---|---|
/// | `Free` | `S_μ` | `V⁰ + V¹ + Ṽ + c` |
/// | `BaseV1` | `S_{μ,V¹+c}` | `V⁰ + Ṽ` |
/// | `BaseV0` | `S_{μ,V⁰+c}` | `V¹ + Ṽ` |
/// | `BaseBoth` | `S_{μ,V⁰+V¹+c}` | `Ṽ` |
///
/// The base potentials must be bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VcfBase {
    #[default]
    Free,
    BaseV1,
    BaseV0,
    BaseBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    /// Initial window length; halved until the map contracts.
    pub window: f64,
    pub max_iters: usize,
    /// Stop once the sup-norm update is below `tolerance · ‖φ‖∞`.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Largest acceptable ratio of successive Picard updates.
    pub contraction: f64,
    pub base: VcfBase,
    /// Strang substeps per time step inside a perturbed base.
    pub base_substeps: usize,
    /// Space of the initial data, used only for the recorded `(w, κ)`.
    pub data_space: MorreyParams,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            window: 1.0,
            max_iters: 200,
            tolerance: 1e-12,
            max_halvings: 24,
            contraction: 0.5,
            base: VcfBase::Free,
            base_substeps: 4,
            data_space: MorreyParams::sup(),
        }
    }
}

/// The auxiliary space `M^{w,κ}` of the fixed-point argument:
/// `θ = min(1/p₀', 1/p₁')`, `(w, κ) = (p, ℓ)` if `1/p₁ ≤ θ`, else `(1/θ, ℓθ)`.
pub fn fixed_point_space(data: MorreyParams, p0: f64, p1: f64) -> (f64, f64) {
    let theta = (1.0 - 1.0 / p0).min(1.0 - 1.0 / p1);
    if 1.0 / p1 <= theta || theta <= 0.0 {
        (data.p, data.ell)
    } else {
        (1.0 / theta, data.ell * theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub start: f64,
    pub length: f64,
    pub steps: usize,
    pub iterations: usize,
    /// Largest observed ratio of successive updates.
    pub contraction: f64,
    pub final_update: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub windows: Vec<WindowReport>,
    /// `(w, κ)` of the auxiliary space, recorded only.
    pub w: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory has t = 0")
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedPropagator {
    free: FreePropagator,
    v1: Potential,
    v0: Option<Potential>,
    extra: Option<Potential>,
    constant: f64,
    scheme: Scheme,
    dt: f64,
    picard: PicardConfig,
}

impl PerturbedPropagator {
    pub fn new(potential: Potential, mu: f64, scheme: Scheme, dt: f64) -> Result<PerturbedPropagator> {
        check_mu(mu)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", dt, "must be positive"));
        }
        let free = FreePropagator::multiplier(potential.grid(), mu)?;
        let p = PerturbedPropagator {
            free,
            v1: potential,
            v0: None,
            extra: None,
            constant: 0.0,
            scheme,
            dt,
            picard: PicardConfig::default(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Adds `V⁰`; the propagator becomes `S_{μ,{V⁰,V¹}}`.
    pub fn with_second_potential(mut self, v0: Potential) -> Result<Self> {
        self.v0 = Some(v0);
        self.validate()?;
        Ok(self)
    }

    /// Adds the extra perturbation `Ṽ` of the last two fixed-point forms.
    pub fn with_extra(mut self, extra: Potential) -> Result<Self> {
        self.extra = Some(extra);
        self.validate()?;
        Ok(self)
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn with_picard(mut self, config: PicardConfig) -> Result<Self> {
        self.picard = config;
        self.validate()?;
        Ok(self)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Result<Self> {
        self.scheme = scheme;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", dt, "must be positive"));
        }
        self.dt = dt;
        Ok(self)
    }

    pub fn mu(&self) -> f64 {
        self.free.mu()
    }

    pub fn grid(&self) -> &Grid {
        self.free.grid()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn picard_config(&self) -> &PicardConfig {
        &self.picard
    }

    fn potentials(&self) -> impl Iterator<Item = &Potential> {
        std::iter::once(&self.v1).chain(self.v0.iter()).chain(self.extra.iter())
    }

    fn validate(&self) -> Result<()> {
        let grid = self.grid();
        for v in self.potentials() {
            if v.grid() != grid {
                return Err(Error::GridMismatch);
            }
        }
        match self.scheme {
            Scheme::Strang | Scheme::Lie => {
                if let Some(v) = self.potentials().find(|v| !v.is_bounded()) {
                    return Err(Error::SchemeMismatch(format!(
                        "splitting needs bounded potentials, got {:?}",
                        v.class()
                    )));
                }
            }
            Scheme::PicardVcf => {
                for v in self.potentials() {
                    v.check_admissible(self.mu())?;
                }
                let (base, _) = self.vcf_split()?;
                if let Some(v) = base.iter().find(|v| !v.is_bounded()) {
                    return Err(Error::SchemeMismatch(format!(
                        "the base semigroup needs bounded potentials, got {:?}",
                        v.class()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Base and perturbation potentials of the configured fixed-point form.
    fn vcf_split(&self) -> Result<(Vec<&Potential>, Vec<&Potential>)> {
        let need = |o: &Option<Potential>, what: &str| -> Result<()> {
            if o.is_none() {
                return Err(Error::SchemeMismatch(format!("{:?} needs {what}", self.picard.base)));
            }
            Ok(())
        };
        let v0 = self.v0.iter();
        let ex = self.extra.iter();
        Ok(match self.picard.base {
            VcfBase::Free => (vec![], self.potentials().collect()),
            VcfBase::BaseV1 => {
                need(&self.v0, "a second potential")?;
                (vec![&self.v1], v0.chain(ex).collect())
            }
            VcfBase::BaseV0 => {
                need(&self.v0, "a second potential")?;
                (v0.collect(), std::iter::once(&self.v1).chain(ex).collect())
            }
            VcfBase::BaseBoth => {
                need(&self.extra, "an extra potential")?;
                (std::iter::once(&self.v1).chain(v0).collect(), ex.collect())
            }
        })
    }

    /// Pointwise sum of all potentials and the constant.
    pub fn total_potential(&self) -> Field {
        sum_fields(self.grid(), self.potentials(), self.constant)
    }

    /// Solution at each of `times` (sorted, positive), with `t = 0` first.
    pub fn evolve_at(&self, u0: &Field, times: &[f64]) -> Result<Trajectory> {
        let mut out = Trajectory {
            times: vec![],
            fields: vec![],
        };
        self.evolve_observed(u0, times, |t, u| {
            out.times.push(t);
            out.fields.push(u.clone());
        })?;
        Ok(out)
    }

    /// `[(0, u0), (t_final, u(t_final))]`.
    pub fn evolve(&self, u0: &Field, t_final: f64) -> Result<Trajectory> {
        if t_final == 0.0 {
            return self.evolve_at(u0, &[]);
        }
        self.evolve_at(u0, &[t_final])
    }

    /// Calls `observe` at `t = 0` and at each requested time without storing
    /// the fields.
    pub fn evolve_observed(&self, u0: &Field, times: &[f64], mut observe: impl FnMut(f64, &Field)) -> Result<()> {
        self.grid().check(u0)?;
        let mut prev = 0.0;
        for &t in times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::param("t", t, "times must be positive and increasing"));
            }
            prev = t;
        }
        observe(0.0, u0);
        let scale = u0.max_abs();
        let mut u = u0.clone();
        let mut now = 0.0;
        let mut stepper = Stepper::new(self);
        for &t in times {
            let gap = t - now;
            u = match self.scheme {
                Scheme::Strang | Scheme::Lie => stepper.advance(&u, gap, now, scale)?,
                Scheme::PicardVcf => self.picard_solve(&u, gap, now, scale)?.0,
            };
            now = t;
            observe(t, &u);
        }
        Ok(())
    }

    /// Fixed point of the variation-of-constants map at `t` together with the
    /// per-window diagnostics.
    pub fn evolve_vcf_picard(&self, u0: &Field, t: f64) -> Result<(Field, PicardReport)> {
        self.grid().check(u0)?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param("t", t, "must be positive"));
        }
        for v in self.potentials() {
            v.check_admissible(self.mu())?;
        }
        self.picard_solve(u0, t, 0.0, u0.max_abs())
    }

    fn picard_solve(&self, u0: &Field, t: f64, offset: f64, scale: f64) -> Result<(Field, PicardReport)> {
        let (base, pert) = self.vcf_split()?;
        let (base_c, pert_c) = match self.picard.base {
            VcfBase::Free => (0.0, self.constant),
            _ => (self.constant, 0.0),
        };
        let grid = self.grid();
        let w_field = sum_fields(grid, pert.iter().copied(), pert_c);
        let base_field = sum_fields(grid, base.iter().copied(), base_c);
        let steps_total = ((t / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let delta = t / steps_total as f64;
        let engine = WindowEngine::new(self, &base_field, delta);
        let mut windows = Vec::new();
        let mut u = u0.clone();
        let mut done = 0usize;
        let mut window_steps = ((self.picard.window / delta).round() as usize).max(1);
        let mut halvings = 0usize;
        while done < steps_total {
            let m = window_steps.min(steps_total - done);
            match engine.solve(&u, &w_field, m, &self.picard)? {
                WindowOutcome::Converged(end, mut report) => {
                    if scale > 0.0 && end.max_abs() > BLOW_UP_FACTOR * scale {
                        return Err(Error::BlowUp {
                            t: offset + (done + m) as f64 * delta,
                            ratio: end.max_abs() / scale,
                        });
                    }
                    report.start = offset + done as f64 * delta;
                    report.halvings = halvings;
                    windows.push(report);
                    u = end;
                    done += m;
                }
                WindowOutcome::NotContracting(factor) => {
                    halvings += 1;
                    if halvings > self.picard.max_halvings || m == 1 {
                        return Err(Error::NonContraction { factor, halvings });
                    }
                    window_steps = (m / 2).max(1);
                }
            }
        }
        let p0 = self.v0.as_ref().map(|v| v.params().p).unwrap_or(f64::INFINITY);
        let (w, kappa) = fixed_point_space(self.picard.data_space, p0, self.v1.params().p);
        Ok((u, PicardReport { windows, w, kappa }))
    }
}

fn sum_fields<'a>(grid: &Grid, vs: impl Iterator<Item = &'a Potential>, c: f64) -> Field {
    let mut acc = vec![c; grid.len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.field().values()) {
            *a += x;
        }
    }
    Field::from_values(grid, acc).expect("sum of finite potentials")
}

/// Splitting stepper; caches per-step-size factors.
struct Stepper<'a> {
    prop: &'a PerturbedPropagator,
    potential: Vec<f64>,
    cache: BTreeMap<u64, (Vec<f64>, Vec<f64>)>,
}

impl<'a> Stepper<'a> {
    fn new(prop: &'a PerturbedPropagator) -> Self {
        Stepper {
            prop,
            potential: prop.total_potential().into_values(),
            cache: BTreeMap::new(),
        }
    }

    fn factors(&mut self, delta: f64) -> &(Vec<f64>, Vec<f64>) {
        let scheme = self.prop.scheme;
        let free = &self.prop.free;
        let v = &self.potential;
        self.cache.entry(delta.to_bits()).or_insert_with(|| {
            let frac = if scheme == Scheme::Strang { 0.5 } else { 1.0 };
            (free.symbol(delta), v.iter().map(|x| (frac * delta * x).exp()).collect())
        })
    }

    fn advance(&mut self, u: &Field, gap: f64, offset: f64, scale: f64) -> Result<Field> {
        let steps = ((gap / self.prop.dt) - 1e-9).ceil().max(1.0) as usize;
        let delta = gap / steps as f64;
        let strang = self.prop.scheme == Scheme::Strang;
        let grid = self.prop.grid().clone();
        let (symbol, expv) = self.factors(delta).clone();
        let mut vals = u.values().to_vec();
        for k in 0..steps {
            if strang {
                mul_in_place(&mut vals, &expv);
                vals = grid.apply_symbol(&vals, &symbol);
                mul_in_place(&mut vals, &expv);
            } else {
                vals = grid.apply_symbol(&vals, &symbol);
                mul_in_place(&mut vals, &expv);
            }
            check_growth(&vals, scale, offset + (k + 1) as f64 * delta)?;
        }
        Field::from_values(&grid, vals)
    }
}

fn mul_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x *= y;
    }
}

fn check_growth(vals: &[f64], scale: f64, t: f64) -> Result<()> {
    let m = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !m.is_finite() || (scale > 0.0 && m > BLOW_UP_FACTOR * scale) {
        return Err(Error::BlowUp { t, ratio: m / scale });
    }
    Ok(())
}

/// `(1 - e^{-x})/x`.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(x - 1 + e^{-x})/x²`.
fn phi2(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Taylor series, the closed form cancels badly here
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 3..12 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

enum WindowOutcome {
    Converged(Field, WindowReport),
    NotContracting(f64),
}

enum BaseOp {
    /// Exponential product integration against `e^{-t|ξ|^{2μ}}`.
    Free {
        decay: Vec<f64>,
        w_prev: Vec<f64>,
        w_next: Vec<f64>,
    },
    /// Fine Strang steps for the base, trapezoid rule for the integral.
    Perturbed {
        symbol: Vec<f64>,
        half_exp: Vec<f64>,
        substeps: usize,
    },
}

struct WindowEngine<'a> {
    grid: &'a Grid,
    delta: f64,
    op: BaseOp,
}

impl<'a> WindowEngine<'a> {
    fn new(prop: &'a PerturbedPropagator, base: &Field, delta: f64) -> Self {
        let grid = prop.grid();
        let op = if base.max_abs() == 0.0 {
            let lam = grid.laplacian_power_symbol(prop.mu());
            BaseOp::Free {
                decay: lam.iter().map(|l| (-l * delta).exp()).collect(),
                w_prev: lam.iter().map(|l| delta * (phi1(l * delta) - phi2(l * delta))).collect(),
                w_next: lam.iter().map(|l| delta * phi2(l * delta)).collect(),
            }
        } else {
            let substeps = prop.picard.base_substeps.max(1);
            let small = delta / substeps as f64;
            BaseOp::Perturbed {
                symbol: prop.free.symbol(small),
                half_exp: base.values().iter().map(|v| (0.5 * small * v).exp()).collect(),
                substeps,
            }
        };
        WindowEngine { grid, delta, op }
    }

    fn base_step(&self, vals: &[f64]) -> Vec<f64> {
        match &self.op {
            BaseOp::Free { decay, .. } => self.grid.apply_symbol(vals, decay),
            BaseOp::Perturbed {
                symbol,
                half_exp,
                substeps,
            } => {
                let mut v = vals.to_vec();
                for _ in 0..*substeps {
                    mul_in_place(&mut v, half_exp);
                    v = self.grid.apply_symbol(&v, symbol);
                    mul_in_place(&mut v, half_exp);
                }
                v
            }
        }
    }

    /// `∫₀^{t_k} S_base(t_k - τ) g(τ) dτ` for `k = 0..=m`.
    fn integrals(&self, g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let len = self.grid.len();
        let scale = 1.0 / len as f64;
        match &self.op {
            BaseOp::Free { decay, w_prev, w_next } => {
                let spectra: Vec<Vec<Complex64>> = g
                    .iter()
                    .map(|v| {
                        let mut d: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                        self.grid.fft_in_place(&mut d, true);
                        d
                    })
                    .collect();
                let mut acc = vec![Complex64::new(0.0, 0.0); len];
                let mut out = vec![vec![0.0; len]];
                for k in 1..g.len() {
                    for i in 0..len {
                        acc[i] = acc[i] * decay[i] + spectra[k - 1][i] * w_prev[i] + spectra[k][i] * w_next[i];
                    }
                    let mut d = acc.clone();
                    self.grid.fft_in_place(&mut d, false);
                    out.push(d.iter().map(|c| c.re * scale).collect());
                }
                out
            }
            BaseOp::Perturbed { .. } => {
                let mut b: Vec<f64> = g[0].iter().map(|x| 0.5 * x).collect();
                let mut out = vec![vec![0.0; len]];
                for gk in &g[1..] {
                    b = self.base_step(&b);
                    for (x, y) in b.iter_mut().zip(gk) {
                        *x += y;
                    }
                    out.push(b.iter().zip(gk).map(|(x, y)| self.delta * (x - 0.5 * y)).collect());
                }
                out
            }
        }
    }

    fn solve(&self, u0: &Field, w: &Field, m: usize, cfg: &PicardConfig) -> Result<WindowOutcome> {
        let mut free = vec![u0.values().to_vec()];
        for k in 0..m {
            let next = self.base_step(&free[k]);
            free.push(next);
        }
        let wv = w.values();
        let mut phi = free.clone();
        let mut last_update = f64::INFINITY;
        let mut worst_ratio: f64 = 0.0;
        for iter in 1..=cfg.max_iters {
            let g: Vec<Vec<f64>> = phi.iter().map(|p| p.iter().zip(wv).map(|(a, b)| a * b).collect()).collect();
            let integ = self.integrals(&g);
            let mut update: f64 = 0.0;
            let mut size: f64 = 0.0;
            let mut next = Vec::with_capacity(m + 1);
            for (k, (f, i)) in free.iter().zip(&integ).enumerate() {
                let v: Vec<f64> = f.iter().zip(i).map(|(a, b)| a + b).collect();
                for (a, b) in v.iter().zip(&phi[k]) {
                    update = update.max((a - b).abs());
                    size = size.max(a.abs());
                }
                next.push(v);
            }
            if !size.is_finite() {
                return Ok(WindowOutcome::NotContracting(f64::INFINITY));
            }
            phi = next;
            let rel = if size > 0.0 { update / size } else { 0.0 };
            if iter >= 2 && last_update > 0.0 {
                let ratio = update / last_update;
                worst_ratio = worst_ratio.max(ratio);
                if iter <= 3 && ratio > cfg.contraction && rel > cfg.tolerance {
                    return Ok(WindowOutcome::NotContracting(ratio));
                }
            }
            last_update = update;
            if rel <= cfg.tolerance {
                let end = Field::from_values(self.grid, phi.pop().expect("m + 1 nodes"))?;
                return Ok(WindowOutcome::Converged(
                    end,
                    WindowReport {
                        start: 0.0,
                        length: m as f64 * self.delta,
                        steps: m,
                        iterations: iter,
                        contraction: worst_ratio,
                        final_update: rel,
                        halvings: 0,
                    },
                ));
            }
        }
        Err(Error::PicardNotConverged {
            iterations: cfg.max_iters,
            update: last_update,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> Grid {
        Grid::new(1, 2.0 * std::f64::consts::PI, 64).unwrap()
    }

    #[test]
    fn sign_hints() {
        let g = grid1();
        let v = Potential::bounded(Field::from_fn(&g, |x| -x[0].cos().powi(2)).unwrap());
        assert_eq!(v.sign(), SignHint::Nonpositive);
        let mixed = Field::from_fn(&g, |x| x[0].sin()).unwrap();
        assert!(Potential::with_sign(mixed.clone(), PotentialClass::Bounded, SignHint::Nonnegative).is_err());
        assert_eq!(Potential::new(mixed, PotentialClass::Bounded).unwrap().sign(), SignHint::Mixed);
    }

    #[test]
    fn admissibility() {
        let g = grid1();
        let f = Field::homogeneous(&g, &[0.0], 0.5).unwrap();
        let v = Potential::new(f, PotentialClass::Morrey { p: 2.0, ell: 1.0 }).unwrap();
        assert!(v.check_admissible(1.0).is_ok());
        assert!(matches!(v.check_admissible(0.25), Err(Error::Inadmissible { .. })));
        assert!(PerturbedPropagator::new(v.clone(), 1.0, Scheme::Strang, 0.01).is_err());
        assert!(PerturbedPropagator::new(v, 1.0, Scheme::PicardVcf, 0.01).is_ok());
    }

    #[test]
    fn phi_functions_are_continuous() {
        for x in [1e-3, 9.99e-3, 1.001e-2, 0.5, 3.0] {
            let p2 = (x + (-x as f64).exp_m1()) / (x * x);
            assert!((phi2(x) - p2).abs() < 1e-9, "{x}");
        }
        assert!((phi1(1e-9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_point_space_cases() {
        let data = MorreyParams::new(2.0, 1.0).unwrap();
        // bounded potentials: theta = 1 >= 1/p1 = 0
        assert_eq!(fixed_point_space(data, f64::INFINITY, f64::INFINITY), (2.0, 1.0));
        // p1 = 1.5: theta = 1/3 < 2/3
        let (w, k) = fixed_point_space(data, f64::INFINITY, 1.5);
        assert!((w - 3.0).abs() < 1e-12 && (k - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_is_exact() {
        let g = grid1();
        let u0 = Field::from_fn(&g, |x| 1.0 + x[0].sin()).unwrap();
        for c in [-2.0, 1.0] {
            let p = PerturbedPropagator::new(Potential::constant(&g, c), 0.5, Scheme::Strang, 0.01).unwrap();
            let u = p.evolve(&u0, 1.0).unwrap();
            let exact = FreePropagator::multiplier(&g, 0.5).unwrap().apply(&u0, 1.0).unwrap().scale(c.exp()).unwrap();
            assert!(u.last().sub(&exact).unwrap().max_abs() <= 1e-10 * c.exp() * u0.max_abs());
        }
    }

    #[test]
    fn picard_matches_strang() {
        let g = Grid::new(1, 2.0 * std::f64::consts::PI, 128).unwrap();
        let v = Potential::bounded(Field::from_fn(&g, |x| -(1.0 + x[0].sin()) + 0.5 * (2.0 * x[0]).cos()).unwrap());
        let u0 = Field::from_fn(&g, |x| (x[0].cos()).exp()).unwrap();
        let strang = PerturbedPropagator::new(v.clone(), 0.75, Scheme::Strang, 1e-3).unwrap();
        let picard = PerturbedPropagator::new(v, 0.75, Scheme::PicardVcf, 1e-3).unwrap();
        let a = strang.evolve(&u0, 1.0).unwrap();
        let (b, report) = picard.evolve_vcf_picard(&u0, 1.0).unwrap();
        let rel = a.last().sub(&b).unwrap().max_abs() / a.last().max_abs();
        assert!(rel < 1e-4, "{rel}");
        assert!(!report.windows.is_empty());
        let total: f64 = report.windows.iter().map(|w| w.length).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn configurations_agree() {
        let g = Grid::new(1, 2.0 * std::f64::consts::PI, 64).unwrap();
        let v0 = Potential::bounded(Field::from_fn(&g, |x| 0.5 * x[0].cos()).unwrap());
        let v1 = Potential::bounded(Field::from_fn(&g, |x| -1.0 - 0.3 * x[0].sin()).unwrap());
        let extra = Potential::bounded(Field::from_fn(&g, |x| 0.2 * (2.0 * x[0]).sin()).unwrap());
        let u0 = Field::from_fn(&g, |x| 1.0 + 0.5 * x[0].cos()).unwrap();
        let base = PerturbedPropagator::new(v1, 1.0, Scheme::PicardVcf, 1e-3)
            .unwrap()
            .with_second_potential(v0)
            .unwrap()
            .with_extra(extra)
            .unwrap()
            .with_constant(-0.25);
        let mut results = Vec::new();
        for b in [VcfBase::Free, VcfBase::BaseV1, VcfBase::BaseV0, VcfBase::BaseBoth] {
            let cfg = PicardConfig {
                base: b,
                base_substeps: 8,
                ..PicardConfig::default()
            };
            let p = base.clone().with_picard(cfg).unwrap();
            results.push(p.evolve_vcf_picard(&u0, 0.5).unwrap().0);
        }
        for r in &results[1..] {
            let d = r.sub(&results[0]).unwrap().max_abs() / results[0].max_abs();
            assert!(d < 1e-6, "{d}");
        }
    }

    #[test]
    fn missing_potential_for_configuration() {
        let g = grid1();
        let p = PerturbedPropagator::new(Potential::zero(&g), 1.0, Scheme::PicardVcf, 0.1).unwrap();
        let cfg = PicardConfig {
            base: VcfBase::BaseBoth,
            ..PicardConfig::default()
        };
        assert!(matches!(p.with_picard(cfg), Err(Error::SchemeMismatch(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let g = grid1();
        let p = PerturbedPropagator::new(Potential::constant(&g, 40.0), 1.0, Scheme::Lie, 0.1).unwrap();
        let u0 = Field::constant(&g, 1.0);
        assert!(matches!(p.evolve(&u0, 1.0), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn truncation_and_smoothing() {
        let g = Grid::new(2, 8.0, 64).unwrap();
        let v = Potential::new(
            Field::homogeneous(&g, &[0.0, 0.0], 1.0).unwrap().scale(-1.0).unwrap(),
            PotentialClass::Morrey { p: 2.0, ell: 1.5 },
        )
        .unwrap();
        let vm = truncate_potential(&v, 10.0).unwrap();
        assert_eq!(vm.field().min(), -10.0);
        assert!(vm.is_bounded());
        let unchanged = truncate_potential(&Potential::constant(&g, -1.0), 2.0).unwrap();
        assert_eq!(unchanged.field().max_abs(), 1.0);
        let twice = truncate_potential(&Potential::constant(&g, -4.0), 2.0).unwrap();
        assert!(twice.field().values().iter().all(|&x| x == -2.0));
        let pos = Potential::bounded(Field::characteristic_ball(&g, &[0.0, 0.0], 1.0).unwrap());
        let s = smooth_potential(&pos, 1.0, 16).unwrap();
        assert!(s.field().min() >= -1e-12);
    }
}
