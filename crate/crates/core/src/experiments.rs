//! Scripted experiments on individual solutions: decay of single data,
//! self-similar data with constant Morrey norm, and families of data whose
//! decay gets arbitrarily slow.
//!
//! An [`ExperimentSpec`] is plain JSON; running it twice on the same machine
//! gives bitwise identical reports.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::freeprop::{periodized_kernel, validity_limit, FreePropagator};
use crate::grid::{AtomicMeasure, Field, Grid, GridSpec};
use crate::io::read_field_on;
use crate::morrey::{morrey_norm, BallFamily, BallShape, MorreyParams, NormSpec};
use crate::perturbed::{PerturbedPropagator, Potential, Scheme};

/// Smoothing time applied to homogeneous data unless a recipe says otherwise.
pub const PRESMOOTH: f64 = 0.1;

/// Initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DatumRecipe {
    /// `height · e^{-|x|²/width²}`.
    Gaussian {
        width: f64,
        #[serde(default = "one")]
        height: f64,
    },
    /// `S_μ(presmooth) |x|^{-exponent}`.
    Homogeneous {
        exponent: f64,
        #[serde(default = "presmooth")]
        presmooth: f64,
    },
    /// The periodized kernel `k_μ(t, ·)`.
    Kernel { t: f64 },
    /// Unit point mass at the origin, evolved as a measure.
    Atom,
    /// Indicator of `B(0, radius)`.
    Ball { radius: f64 },
    Constant { value: f64 },
    /// Nonnegative trigonometric polynomial with random coefficients.
    RandomSmooth { seed: u64, modes: usize },
    /// Field file (binary, with its JSON sidecar).
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

fn presmooth() -> f64 {
    PRESMOOTH
}

/// Potentials; all are bounded except `Homogeneous` without truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PotentialRecipe {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `offset + amplitude · sin(2π x₁/period)`.
    Sinusoid { offset: f64, amplitude: f64, period: f64 },
    /// `-depth` on `B(0, radius)`, zero elsewhere.
    Well { depth: f64, radius: f64 },
    /// `scale · min(|x|^{-exponent}, truncate)`.
    Homogeneous { exponent: f64, scale: f64, truncate: f64 },
    File { path: PathBuf },
}

/// Behaviour the experiment is expected to show; selects the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Decays,
    ConstantNorm,
    NoUniformRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub grid: GridSpec,
    pub mu: f64,
    pub datum: DatumRecipe,
    #[serde(default)]
    pub potential: PotentialRecipe,
    pub norms: Vec<NormSpec>,
    /// Evolution times after the datum is built, increasing, starting above 0.
    pub times: Vec<f64>,
    pub expected: Expectation,
    /// Space the datum is measured in, for classifying each norm as a strict
    /// or an equality pair.
    #[serde(default)]
    pub datum_space: Option<MorreyParams>,
    /// Ball radii of the slow-decay family.
    #[serde(default)]
    pub family_radii: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    0.01
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::from_spec(self.grid)
    }

    /// Time already spent building the datum, counted against the window.
    fn datum_time(&self) -> f64 {
        match self.datum {
            DatumRecipe::Homogeneous { presmooth, .. } => presmooth,
            DatumRecipe::Kernel { t } => t,
            _ => 0.0,
        }
    }

    pub fn validity(&self) -> ValidityCheck {
        let limit = validity_limit(self.mu, self.grid.extent);
        let t_max = self.datum_time() + self.times.last().copied().unwrap_or(0.0);
        ValidityCheck {
            limit,
            t_max,
            ok: t_max <= limit * (1.0 + 1e-12),
        }
    }

    fn validate(&self) -> Result<()> {
        crate::freeprop::check_mu(self.mu)?;
        if self.times.is_empty() {
            return Err(Error::param("times", 0.0, "must not be empty"));
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::param("times", t, "must be positive and increasing"));
            }
            prev = t;
        }
        if self.norms.is_empty() {
            return Err(Error::param("norms", 0.0, "must not be empty"));
        }
        let v = self.validity();
        if !v.ok {
            return Err(Error::ValidityWindow { t: v.t_max, limit: v.limit });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityCheck {
    /// `(L/8)^{2μ}/2`, where `(2t)^{1/2μ} = L/8`.
    pub limit: f64,
    pub t_max: f64,
    pub ok: bool,
}

pub fn build_datum(recipe: &DatumRecipe, grid: &Grid, mu: f64) -> Result<Field> {
    let origin = [0.0, 0.0];
    let origin = &origin[..grid.dim()];
    match recipe {
        DatumRecipe::Gaussian { width, height } => {
            if !(*width > 0.0) {
                return Err(Error::param("width", *width, "must be positive"));
            }
            Field::from_fn(grid, |x| {
                let r2: f64 = x.iter().map(|c| c * c).sum();
                height * (-r2 / (width * width)).exp()
            })
        }
        DatumRecipe::Homogeneous { exponent, presmooth } => {
            let phi = Field::homogeneous(grid, origin, *exponent)?;
            if *presmooth == 0.0 {
                return Ok(phi);
            }
            FreePropagator::multiplier(grid, mu)?.apply(&phi, *presmooth)
        }
        DatumRecipe::Kernel { t } => periodized_kernel(grid, mu, *t),
        DatumRecipe::Atom => Ok(AtomicMeasure::unit_atom(grid).to_density()),
        DatumRecipe::Ball { radius } => Field::characteristic_ball(grid, origin, *radius),
        DatumRecipe::Constant { value } => Ok(Field::constant(grid, *value)),
        DatumRecipe::RandomSmooth { seed, modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let l = grid.extent();
            let terms: Vec<(f64, f64, f64, f64)> = (0..*modes)
                .map(|_| {
                    let kx = rng.gen_range(1..=4) as f64;
                    let ky = rng.gen_range(0..=4) as f64;
                    (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU), kx, ky)
                })
                .collect();
            let raw = Field::from_fn(grid, |x| {
                let y = x.get(1).copied().unwrap_or(0.0);
                terms
                    .iter()
                    .map(|(a, ph, kx, ky)| a * (std::f64::consts::TAU * (kx * x[0] + ky * y) / l + ph).cos())
                    .sum()
            })?;
            let shift = 1.0 + raw.max_abs();
            raw.map(|v| v + shift)
        }
        DatumRecipe::File { path } => read_field_on(grid, path),
    }
}

pub fn build_potential(recipe: &PotentialRecipe, grid: &Grid) -> Result<Potential> {
    match recipe {
        PotentialRecipe::Zero => Ok(Potential::zero(grid)),
        PotentialRecipe::Constant { value } => Ok(Potential::constant(grid, *value)),
        PotentialRecipe::Sinusoid { offset, amplitude, period } => {
            if !(*period > 0.0) {
                return Err(Error::param("period", *period, "must be positive"));
            }
            let k = std::f64::consts::TAU / period;
            Ok(Potential::bounded(Field::from_fn(grid, |x| offset + amplitude * (k * x[0]).sin())?))
        }
        PotentialRecipe::Well { depth, radius } => {
            let origin = [0.0, 0.0];
            Ok(Potential::bounded(
                Field::characteristic_ball(grid, &origin[..grid.dim()], *radius)?.scale(-depth)?,
            ))
        }
        PotentialRecipe::Homogeneous { exponent, scale, truncate } => {
            if !(*truncate > 0.0) {
                return Err(Error::param("truncate", *truncate, "must be positive"));
            }
            let origin = [0.0, 0.0];
            let f = Field::homogeneous(grid, &origin[..grid.dim()], *exponent)?;
            Ok(Potential::bounded(f.map(|v| scale * v.min(*truncate))?))
        }
        PotentialRecipe::File { path } => Ok(Potential::bounded(read_field_on(grid, path)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTrajectory {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Outcome for one tracked norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormVerdict {
    pub label: String,
    /// `"strict"`, `"equality"` or `"unclassified"`.
    pub pair: String,
    pub expect_decay: bool,
    /// `norm(0)/norm(t_end)`.
    pub decrease_factor: f64,
    pub monotone: bool,
    /// `max |norm(t)/norm(t₀) - 1|`.
    pub flatness: f64,
    /// Log-log slope of the norm on the trailing half.
    pub loglog_slope: Option<f64>,
    /// `-(ℓ/p - s/q)/2μ`.
    pub predicted_slope: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfDecay {
    pub radius: f64,
    /// First time the norm reaches half its initial value, interpolated.
    pub time: f64,
    /// The window ran out first; `time` is then a lower bound.
    pub lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub radii: Vec<f64>,
    /// `‖(1 - χ_{B(0,r)}) u0‖` in the datum space.
    pub norms: Vec<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub validity: ValidityCheck,
    pub trajectories: Vec<NormTrajectory>,
    pub verdicts: Vec<NormVerdict>,
    pub tail: Option<TailCheck>,
    pub half_decay: Vec<HalfDecay>,
    pub metrics: BTreeMap<String, f64>,
    pub pass: bool,
}

impl ExperimentReport {
    /// `t,label1,label2,…` rows; the slow-decay family has one column per
    /// radius.
    pub fn trajectories_csv(&self) -> String {
        let mut out = String::from("t");
        for tr in &self.trajectories {
            out.push(',');
            out.push_str(&tr.label);
        }
        out.push('\n');
        let rows = self.trajectories.first().map_or(0, |t| t.times.len());
        for i in 0..rows {
            out.push_str(&format!("{}", self.trajectories[0].times[i]));
            for tr in &self.trajectories {
                out.push_str(&format!(",{}", tr.values[i]));
            }
            out.push('\n');
        }
        out
    }
}

fn evolve_norms(spec: &ExperimentSpec, grid: &Grid, u0: &Field, datum_is_atom: bool, norms: &[NormSpec]) -> Result<Vec<NormTrajectory>> {
    let potential = build_potential(&spec.potential, grid)?;
    let mut ts = vec![0.0];
    ts.extend_from_slice(&spec.times);
    let mut rows = vec![Vec::with_capacity(ts.len()); norms.len()];
    let mut push = |u: &Field| -> Result<()> {
        for (row, n) in rows.iter_mut().zip(norms) {
            row.push(n.evaluate(u)?);
        }
        Ok(())
    };
    let free_atom = datum_is_atom && potential.field().max_abs() == 0.0;
    if free_atom {
        let free = FreePropagator::multiplier(grid, spec.mu)?;
        push(u0)?;
        for &t in &spec.times {
            push(&free.apply_measure(&AtomicMeasure::unit_atom(grid), t)?)?;
        }
    } else {
        let prop = PerturbedPropagator::new(potential, spec.mu, Scheme::Strang, spec.dt)?;
        let mut failure = None;
        prop.evolve_observed(u0, &spec.times, |_, u| {
            if failure.is_none() {
                if let Err(e) = push(u) {
                    failure = Some(e);
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(norms
        .iter()
        .zip(rows)
        .map(|(n, values)| NormTrajectory {
            label: n.label(),
            times: ts.clone(),
            values,
        })
        .collect())
}

fn norm_slope(spec: &NormSpec) -> Option<f64> {
    match spec {
        NormSpec::Morrey { params, .. } => Some(params.slope()),
        NormSpec::Uniform { .. } => None,
    }
}

/// Tail norms `‖(1 - χ_{B(0,r)}) u0‖_{M^{p,ℓ}}` for dyadic `r` from `4h` to
/// `L/4`; the condition holds when the last is at most a tenth of the first.
pub fn tail_condition(u0: &Field, params: MorreyParams) -> Result<TailCheck> {
    let grid = u0.grid();
    let family = BallFamily::dyadic(grid, BallShape::Euclidean);
    let origin = [0.0, 0.0];
    let mut radii = Vec::new();
    let mut r = 4.0 * grid.spacing();
    while r <= 0.25 * grid.extent() * (1.0 + 1e-12) {
        radii.push(r);
        r *= 2.0;
    }
    if radii.len() < 2 {
        return Err(Error::BoxTooSmall {
            extent: grid.extent(),
            required: 32.0 * grid.spacing(),
        });
    }
    let mut norms = Vec::with_capacity(radii.len());
    for &r in &radii {
        let outside = Field::characteristic_ball(grid, &origin[..grid.dim()], r)?.map(|c| 1.0 - c)?;
        norms.push(morrey_norm(&u0.mul(&outside)?, params, &family)?.value);
    }
    let holds = norms[norms.len() - 1] <= 0.1 * norms[0];
    Ok(TailCheck { radii, norms, holds })
}

fn summarize(tr: &NormTrajectory) -> (f64, bool, f64, Option<f64>) {
    let v = &tr.values;
    let first = v[0];
    let last = v[v.len() - 1];
    let monotone = v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let flat = v.iter().map(|x| (x / first - 1.0).abs()).fold(0.0, f64::max);
    let start = (tr.times.len() / 2).max(1);
    let slope = if tr.times.len() - start >= 2 {
        let xs: Vec<f64> = tr.times[start..].iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = v[start..].iter().map(|x| x.ln()).collect();
        fit_line(&xs, &ys).ok().map(|f| f.slope)
    } else {
        None
    };
    (first / last, monotone, flat, slope)
}

/// Norm trajectories of one datum with decay verdicts: strict pairs
/// (`s/q < ℓ/p`) must decay, equality pairs only when the datum satisfies
/// the tail condition. Decay means a drop by a factor of at least 2 within
/// the window.
pub fn run_individual_decay(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let grid = spec.build_grid()?;
    let u0 = build_datum(&spec.datum, &grid, spec.mu)?;
    let is_atom = matches!(spec.datum, DatumRecipe::Atom);
    let trajectories = evolve_norms(spec, &grid, &u0, is_atom, &spec.norms)?;
    let tail = match (spec.datum_space, is_atom) {
        (Some(p), false) => Some(tail_condition(&u0, p)?),
        _ => None,
    };
    let mut verdicts = Vec::with_capacity(trajectories.len());
    for (tr, norm) in trajectories.iter().zip(&spec.norms) {
        let (factor, monotone, flatness, loglog) = summarize(tr);
        let (pair, expect_decay, predicted) = match (spec.datum_space, norm_slope(norm)) {
            (Some(ds), Some(s)) if s < ds.slope() - 1e-12 => {
                ("strict", true, Some(-(ds.slope() - s) / (2.0 * spec.mu)))
            }
            (Some(_), Some(_)) => ("equality", tail.as_ref().map_or(false, |t| t.holds), None),
            _ => ("unclassified", false, None),
        };
        let decayed = factor >= 2.0;
        let pass = if pair == "unclassified" {
            true
        } else {
            decayed == expect_decay
        };
        verdicts.push(NormVerdict {
            label: tr.label.clone(),
            pair: pair.into(),
            expect_decay,
            decrease_factor: factor,
            monotone,
            flatness,
            loglog_slope: loglog,
            predicted_slope: predicted,
            pass,
        });
    }
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(ExperimentReport {
        validity: spec.validity(),
        spec: spec.clone(),
        trajectories,
        verdicts,
        tail,
        half_decay: vec![],
        metrics: BTreeMap::new(),
        pass,
    })
}

/// Flatness `max |norm(t)/norm(0) - 1|` of each tracked norm; passes when
/// every one is at most 5%.
pub fn run_constant_norm(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let grid = spec.build_grid()?;
    let u0 = build_datum(&spec.datum, &grid, spec.mu)?;
    let trajectories = evolve_norms(spec, &grid, &u0, false, &spec.norms)?;
    let mut metrics = BTreeMap::new();
    let mut verdicts = Vec::new();
    for tr in &trajectories {
        let (factor, monotone, flatness, loglog) = summarize(tr);
        metrics.insert(format!("flatness[{}]", tr.label), flatness);
        verdicts.push(NormVerdict {
            label: tr.label.clone(),
            pair: "equality".into(),
            expect_decay: false,
            decrease_factor: factor,
            monotone,
            flatness,
            loglog_slope: loglog,
            predicted_slope: Some(0.0),
            pass: flatness <= 0.05,
        });
    }
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(ExperimentReport {
        validity: spec.validity(),
        spec: spec.clone(),
        trajectories,
        verdicts,
        tail: None,
        half_decay: vec![],
        metrics,
        pass,
    })
}

fn half_decay_time(times: &[f64], values: &[f64]) -> (f64, bool) {
    let target = 0.5 * values[0];
    for i in 1..values.len() {
        if values[i] <= target {
            let (t0, t1) = (times[i - 1], times[i]);
            let (v0, v1) = (values[i - 1], values[i]);
            let s = if v0 == v1 { 1.0 } else { (v0 - target) / (v0 - v1) };
            return (t0 + s * (t1 - t0), false);
        }
    }
    (times[times.len() - 1], true)
}

/// Half-decay times of `χ_{B(0,R_k)}` in the first tracked norm for each
/// radius of the family; passes when they increase strictly.
pub fn run_slow_decay_family(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if spec.family_radii.is_empty() {
        return Err(Error::param("family_radii", 0.0, "must not be empty"));
    }
    let grid = spec.build_grid()?;
    let v = build_potential(&spec.potential, &grid)?;
    if v.field().max() > 0.0 {
        return Err(Error::Hypothesis("slow-decay family needs V ≤ 0".into()));
    }
    let norm = spec.norms[0];
    let mut trajectories = Vec::new();
    let mut half_decay = Vec::new();
    for &radius in &spec.family_radii {
        let u0 = build_datum(&DatumRecipe::Ball { radius }, &grid, spec.mu)?;
        let mut tr = evolve_norms(spec, &grid, &u0, false, &[norm])?.remove(0);
        let (time, lower_bound) = half_decay_time(&tr.times, &tr.values);
        tr.label = format!("{}[R={radius}]", tr.label);
        trajectories.push(tr);
        half_decay.push(HalfDecay {
            radius,
            time,
            lower_bound,
        });
    }
    let mut metrics = BTreeMap::new();
    for w in half_decay.windows(2) {
        metrics.insert(format!("ratio[{}->{}]", w[0].radius, w[1].radius), w[1].time / w[0].time);
    }
    let pass = half_decay.windows(2).all(|w| w[1].time > w[0].time);
    Ok(ExperimentReport {
        validity: spec.validity(),
        spec: spec.clone(),
        trajectories,
        verdicts: vec![],
        tail: None,
        half_decay,
        metrics,
        pass,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    match spec.expected {
        Expectation::Decays => run_individual_decay(spec),
        Expectation::ConstantNorm => run_constant_norm(spec),
        Expectation::NoUniformRate => run_slow_decay_family(spec),
    }
}

pub const BUILTIN_NAMES: [&str; 7] = [
    "gaussian-decay",
    "homogeneous-constant-norm",
    "homogeneous-no-decay",
    "kernel-mass",
    "atom-smoothing",
    "slow-decay-heat",
    "slow-decay-damped",
];

pub fn builtin(name: &str) -> Option<ExperimentSpec> {
    let line = |n: usize, t_end: f64| -> Vec<f64> { (1..=n).map(|k| t_end * k as f64 / n as f64).collect() };
    let params = |p: f64, ell: f64| MorreyParams { p, ell };
    let morrey = |p: f64, ell: f64| NormSpec::Morrey {
        params: params(p, ell),
        shape: BallShape::Euclidean,
    };
    let grid = |dim, extent, points_per_axis| GridSpec {
        dim,
        extent,
        points_per_axis,
    };
    let base = ExperimentSpec {
        name: name.to_string(),
        grid: grid(1, 64.0, 512),
        mu: 1.0,
        datum: DatumRecipe::Gaussian { width: 1.0, height: 1.0 },
        potential: PotentialRecipe::Zero,
        norms: vec![morrey(2.0, 0.5)],
        times: line(20, 20.0),
        expected: Expectation::Decays,
        datum_space: Some(params(2.0, 0.5)),
        family_radii: vec![],
        dt: 0.01,
    };
    Some(match name {
        "gaussian-decay" => ExperimentSpec {
            norms: vec![morrey(2.0, 0.5), morrey(1.0, 0.25), NormSpec::sup()],
            ..base
        },
        "homogeneous-constant-norm" => ExperimentSpec {
            datum: DatumRecipe::Homogeneous {
                exponent: 0.25,
                presmooth: PRESMOOTH,
            },
            times: line(18, 0.9),
            expected: Expectation::ConstantNorm,
            ..base
        },
        "homogeneous-no-decay" => ExperimentSpec {
            datum: DatumRecipe::Homogeneous {
                exponent: 0.25,
                presmooth: PRESMOOTH,
            },
            norms: vec![morrey(2.0, 0.5), morrey(1.0, 0.25)],
            times: line(20, 10.0),
            ..base
        },
        "kernel-mass" => ExperimentSpec {
            datum: DatumRecipe::Kernel { t: 1.0 },
            norms: vec![morrey(1.0, 1.0)],
            times: line(20, 10.0),
            expected: Expectation::ConstantNorm,
            datum_space: None,
            ..base
        },
        "atom-smoothing" => ExperimentSpec {
            datum: DatumRecipe::Atom,
            norms: vec![NormSpec::sup()],
            times: line(20, 10.0),
            datum_space: Some(params(1.0, 1.0)),
            ..base
        },
        "slow-decay-heat" => ExperimentSpec {
            datum: DatumRecipe::Ball { radius: 1.0 },
            norms: vec![NormSpec::sup()],
            times: line(640, 32.0),
            expected: Expectation::NoUniformRate,
            datum_space: None,
            family_radii: vec![1.0, 2.0, 4.0],
            ..base
        },
        "slow-decay-damped" => ExperimentSpec {
            datum: DatumRecipe::Ball { radius: 1.0 },
            potential: PotentialRecipe::Constant { value: -1.0 },
            norms: vec![NormSpec::sup()],
            times: line(400, 4.0),
            expected: Expectation::NoUniformRate,
            datum_space: None,
            family_radii: vec![1.0, 2.0, 4.0],
            ..base
        },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_roundtrip_through_json() {
        for name in BUILTIN_NAMES {
            let spec = builtin(name).unwrap();
            let back = ExperimentSpec::from_json(&spec.to_json().unwrap()).unwrap();
            assert_eq!(back, spec, "{name}");
            assert!(spec.validity().ok, "{name}");
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn window_violation_is_rejected() {
        let mut spec = builtin("gaussian-decay").unwrap();
        spec.times = vec![1.0, 100.0];
        assert!(matches!(run_experiment(&spec), Err(Error::ValidityWindow { .. })));
    }

    #[test]
    fn gaussian_decays_in_every_norm() {
        let rep = run_experiment(&builtin("gaussian-decay").unwrap()).unwrap();
        assert!(rep.tail.as_ref().unwrap().holds);
        for v in &rep.verdicts {
            assert!(v.expect_decay && v.decrease_factor >= 2.0 && v.monotone, "{v:?}");
        }
        assert!(rep.pass);
    }

    #[test]
    fn homogeneous_datum_keeps_its_norm() {
        let rep = run_experiment(&builtin("homogeneous-constant-norm").unwrap()).unwrap();
        assert!(rep.verdicts[0].flatness <= 0.05, "{}", rep.verdicts[0].flatness);
        assert!(rep.pass);
        let rep = run_experiment(&builtin("homogeneous-no-decay").unwrap()).unwrap();
        assert!(!rep.tail.as_ref().unwrap().holds);
        assert_eq!(rep.verdicts[0].pair, "equality");
        for v in &rep.verdicts {
            assert!(v.pair == "equality" && !v.expect_decay && v.decrease_factor < 2.0, "{v:?}");
        }
        assert!(rep.pass, "{:?}", rep.verdicts);
    }

    #[test]
    fn kernel_mass_is_conserved() {
        let rep = run_experiment(&builtin("kernel-mass").unwrap()).unwrap();
        assert!(rep.verdicts[0].flatness <= 1e-4);
    }

    #[test]
    fn atom_decays_at_the_smoothing_rate() {
        let rep = run_experiment(&builtin("atom-smoothing").unwrap()).unwrap();
        let v = &rep.verdicts[0];
        let (fit, pred) = (v.loglog_slope.unwrap(), v.predicted_slope.unwrap());
        assert!((pred + 0.5).abs() < 1e-12);
        assert!((fit - pred).abs() <= 0.05 * pred.abs(), "{fit}");
        assert!(rep.pass);
    }

    #[test]
    fn heat_half_decay_times_scale_diffusively() {
        let rep = run_experiment(&builtin("slow-decay-heat").unwrap()).unwrap();
        assert!(rep.pass);
        for w in rep.half_decay.windows(2) {
            let r = w[1].time / w[0].time;
            assert!((3.0..=5.0).contains(&r), "{r}");
            assert!(!w[1].lower_bound);
        }
    }

    #[test]
    fn damping_bounds_half_decay_times() {
        let rep = run_experiment(&builtin("slow-decay-damped").unwrap()).unwrap();
        for h in &rep.half_decay {
            assert!(h.time <= std::f64::consts::LN_2 + 1e-6, "{h:?}");
        }
    }

    #[test]
    fn single_member_family() {
        let mut spec = builtin("slow-decay-heat").unwrap();
        spec.family_radii = vec![2.0];
        let rep = run_experiment(&spec).unwrap();
        assert_eq!(rep.half_decay.len(), 1);
        assert!(rep.pass && rep.metrics.is_empty());
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let mut spec = builtin("gaussian-decay").unwrap();
        spec.datum = DatumRecipe::RandomSmooth { seed: 11, modes: 5 };
        spec.times = vec![0.5, 1.0];
        let a = serde_json::to_string(&run_experiment(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
