use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use morrey_lab::analysis::{
    ab_check_with, decay_certificate, default_ab_radii, estimate_exponential_type, norm_trajectory,
    psi_lower_bound, rayleigh_omega2, sandwich_check,
};
use morrey_lab::experiments::{builtin, build_datum, build_potential, run_experiment, DatumRecipe, ExperimentSpec, PotentialRecipe, BUILTIN_NAMES};
use morrey_lab::freeprop::{validity_limit, FreeMethod, FreePropagator};
use morrey_lab::io::{read_field, write_field};
use morrey_lab::kernels::{fractional_kernel, tail_exponent};
use morrey_lab::morrey::{morrey_norm_with, parse_exponent, uniform_norm, BallFamily, NormSpec, WindowEngine};
use morrey_lab::perturbed::{PerturbedPropagator, Potential, Scheme};
use morrey_lab::{BallShape, Field, Grid, GridSpec, MorreyParams};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

/// A failed command: validation failures exit with 2, numerical ones with 3.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub validation: bool,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Failure {
        Failure {
            kind: "usage".into(),
            message: message.into(),
            validation: true,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind, "message": self.message } })
    }
}

impl From<morrey_lab::Error> for Failure {
    fn from(e: morrey_lab::Error) -> Self {
        Failure {
            kind: e.kind().into(),
            message: e.to_string(),
            validation: e.is_validation(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        morrey_lab::Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        morrey_lab::Error::from(e).into()
    }
}

type CmdResult = Result<Value, Failure>;

/// Resolved configuration embedded in every report.
#[derive(Debug, Serialize, Default)]
pub struct RunConfig {
    pub subcommand: String,
    pub grid: Option<GridSpec>,
    pub mu: Option<f64>,
    pub scheme: Option<Scheme>,
    pub dt: Option<f64>,
    pub norms: Vec<NormSpec>,
    pub times: Vec<f64>,
    pub potential: Option<String>,
    pub initial: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

pub struct Context {
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Context {
    fn config(&self, subcommand: &str) -> RunConfig {
        RunConfig {
            subcommand: subcommand.into(),
            out: self.out.clone(),
            seed: self.seed,
            ..RunConfig::default()
        }
    }

    fn out_dir(&self) -> Result<Option<&Path>, Failure> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
        }
        Ok(self.out.as_deref())
    }
}

pub fn dispatch(cli: Cli) -> CmdResult {
    let ctx = Context {
        out: cli.out,
        seed: cli.seed,
    };
    let (name, report) = match cli.command {
        Command::Kernel(a) => ("kernel", kernel(&ctx, a)?),
        Command::Evolve(a) => ("evolve", evolve(&ctx, a)?),
        Command::MorreyNorm(a) => ("morrey-norm", morrey_norm_cmd(&ctx, a)?),
        Command::AbCheck(a) => ("ab-check", ab_check_cmd(&ctx, a)?),
        Command::Certify(a) => ("certify", certify(&ctx, a)?),
        Command::DecayRate(a) => ("decay-rate", decay_rate(&ctx, a)?),
        Command::BoundsCheck(a) => ("bounds-check", bounds_check(&ctx, a)?),
        Command::Rayleigh(a) => ("rayleigh", rayleigh(&ctx, a)?),
        Command::Experiment(a) => ("experiment", experiment(&ctx, a)?),
        Command::Sweep(a) => ("sweep", sweep(&ctx, a)?),
    };
    if let Some(dir) = ctx.out_dir()? {
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

fn grid_from(spec: Option<GridSpec>) -> Result<Grid, Failure> {
    let spec = spec.ok_or_else(|| Failure::usage("no grid: pass --grid d,L,n or a field file"))?;
    Ok(Grid::from_spec(spec)?)
}

fn same_grid(expected: &Option<GridSpec>, field: &Field) -> Result<(), Failure> {
    if let Some(g) = expected {
        if *g != field.grid().spec() {
            return Err(morrey_lab::Error::GridMismatch.into());
        }
    }
    Ok(())
}

/// Grid and potential from a field file, a JSON recipe, or `V = 0`.
fn load_potential(
    grid: Option<GridSpec>,
    path: &Option<PathBuf>,
    recipe: &Option<String>,
) -> Result<(Grid, Potential, String), Failure> {
    if let Some(path) = path {
        let field = read_field(path)?;
        same_grid(&grid, &field)?;
        return Ok((field.grid().clone(), Potential::bounded(field), path.display().to_string()));
    }
    let grid = grid_from(grid)?;
    match recipe {
        Some(text) => {
            let r: PotentialRecipe = serde_json::from_str(text)?;
            Ok((grid.clone(), build_potential(&r, &grid)?, text.clone()))
        }
        None => Ok((grid.clone(), Potential::zero(&grid), "zero".into())),
    }
}

fn problem(p: &ProblemArgs) -> Result<(Grid, Potential, String), Failure> {
    load_potential(p.grid, &p.potential, &p.potential_recipe)
}

fn load_initial(grid: &Grid, mu: f64, path: &Option<PathBuf>, recipe: Option<&str>) -> Result<(Field, String), Failure> {
    if let Some(path) = path {
        let f = read_field(path)?;
        if f.grid() != grid {
            return Err(morrey_lab::Error::GridMismatch.into());
        }
        return Ok((f, path.display().to_string()));
    }
    match recipe {
        Some(text) => {
            let r: DatumRecipe = serde_json::from_str(text)?;
            Ok((build_datum(&r, grid, mu)?, text.to_string()))
        }
        None => Ok((Field::constant(grid, 1.0), "constant 1".into())),
    }
}

fn kernel(ctx: &Context, a: KernelArgs) -> CmdResult {
    let mut samples = Vec::with_capacity(a.radii.len());
    for &r in &a.radii {
        samples.push(json!({ "r": r, "k": fractional_kernel(a.mu, a.t, r, a.dim)? }));
    }
    let tail = match &a.tail_window {
        Some(w) => Some(json!({
            "window": w,
            "exponent": tail_exponent(a.mu, a.dim, w[0], w[1], 24)?,
            "predicted": -(a.dim as f64 + 2.0 * a.mu),
        })),
        None => None,
    };
    let mut config = ctx.config("kernel");
    config.mu = Some(a.mu);
    config.tolerances.insert("kernel_relative".into(), 1e-10);
    Ok(json!({ "config": config, "t": a.t, "dim": a.dim, "samples": samples, "tail": tail }))
}

fn evolve(ctx: &Context, a: EvolveArgs) -> CmdResult {
    let (grid, potential, pot_label) = problem(&a.problem)?;
    let mu = a.problem.mu;
    let recipe = a.datum.as_deref().unwrap_or(r#"{"kind":"gaussian","width":1}"#);
    let (u0, init_label) = load_initial(&grid, mu, &a.initial, Some(recipe))?;
    let mut times = a.time.resolve();
    times.extend(a.checkpoint.iter().copied());
    times.sort_by(f64::total_cmp);
    times.dedup();
    let norms = if a.norms.is_empty() { vec![NormSpec::sup()] } else { a.norms.clone() };
    let out = ctx.out_dir()?;
    if !a.checkpoint.is_empty() && out.is_none() {
        return Err(Failure::usage("--checkpoint needs --out"));
    }
    let limit = validity_limit(mu, grid.extent());
    let t_max = times.last().copied().unwrap_or(0.0);
    let warning = (t_max > limit).then(|| format!("t = {t_max} exceeds the box validity window t <= {limit}"));

    let mut csv = match out {
        Some(dir) => {
            let mut w = BufWriter::new(File::create(dir.join("norms.csv"))?);
            let header: Vec<String> = norms.iter().map(NormSpec::label).collect();
            writeln!(w, "t,{}", header.join(","))?;
            Some(w)
        }
        None => None,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut failure: Option<Failure> = None;
    let mut observe = |t: f64, u: &Field| {
        if failure.is_some() {
            return;
        }
        let mut step = || -> Result<(), Failure> {
            let mut row = vec![t];
            for n in &norms {
                row.push(n.evaluate(u)?);
            }
            if let Some(w) = csv.as_mut() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            rows.push(row);
            if a.checkpoint.iter().any(|&c| c == t) {
                let (bin, _) = write_field(u, &out.expect("checked").join(format!("u_t{t}")))?;
                checkpoints.push(json!({ "t": t, "path": bin }));
            }
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(e);
        }
    };
    let free_only = potential.field().max_abs() == 0.0 && a.method != FreeMethod::Multiplier;
    if free_only {
        let free = FreePropagator::new(&grid, mu, a.method)?;
        observe(0.0, &u0);
        for &t in &times {
            observe(t, &free.apply(&u0, t)?);
        }
    } else {
        let prop = PerturbedPropagator::new(potential, mu, a.scheme, a.time.dt)?;
        prop.evolve_observed(&u0, &times, &mut observe)?;
    }
    if let Some(f) = failure {
        return Err(f);
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    let mut config = ctx.config("evolve");
    config.grid = Some(grid.spec());
    config.mu = Some(mu);
    config.scheme = Some(a.scheme);
    config.dt = Some(a.time.dt);
    config.norms = norms.clone();
    config.times = times.clone();
    config.potential = Some(pot_label);
    config.initial = Some(init_label);
    Ok(json!({
        "config": config,
        "method": if free_only { a.method } else { FreeMethod::Multiplier },
        "validity": { "limit": limit, "t_max": t_max },
        "warning": warning,
        "norms": norms.iter().map(NormSpec::label).collect::<Vec<_>>(),
        "rows": rows,
        "checkpoints": checkpoints,
    }))
}

fn morrey_norm_cmd(ctx: &Context, a: MorreyNormArgs) -> CmdResult {
    let field = read_field(&a.field)?;
    let grid = field.grid();
    let engine = if a.mask { WindowEngine::Mask } else { WindowEngine::PrefixSums };
    let mut results = Vec::new();
    for n in &a.norms {
        let entry = match *n {
            NormSpec::Morrey { params, shape } => {
                let m = morrey_norm_with(&field, params, &BallFamily::dyadic(grid, shape), engine)?;
                json!({ "norm": n.label(), "value": m.value, "center": grid.node(m.center)[..grid.dim()].to_vec(), "radius": m.radius })
            }
            NormSpec::Uniform { p } => json!({ "norm": n.label(), "value": uniform_norm(&field, p)? }),
        };
        results.push(entry);
    }
    let mut config = ctx.config("morrey-norm");
    config.grid = Some(grid.spec());
    config.norms = a.norms.clone();
    config.initial = Some(a.field.display().to_string());
    Ok(json!({ "config": config, "engine": if a.mask { "mask" } else { "prefix-sums" }, "results": results }))
}

fn ab_check_cmd(ctx: &Context, a: AbCheckArgs) -> CmdResult {
    let (grid, v, label) = load_potential(a.grid, &a.potential, &a.potential_recipe)?;
    let radii = if a.radii.is_empty() { default_ab_radii(&grid) } else { a.radii.clone() };
    let shape = if a.cube { BallShape::Cube } else { BallShape::Euclidean };
    let engine = if a.mask { WindowEngine::Mask } else { WindowEngine::PrefixSums };
    let report = ab_check_with(v.field(), &radii, shape, engine)?;
    let mut config = ctx.config("ab-check");
    config.grid = Some(grid.spec());
    config.potential = Some(label);
    config.tolerances.insert("beta_negative_below".into(), -morrey_lab::analysis::AB_TOLERANCE);
    Ok(json!({ "config": config, "report": report }))
}

fn certify(ctx: &Context, a: CertifyArgs) -> CmdResult {
    let (grid, v, label) = problem(&a.problem)?;
    let mu = a.problem.mu;
    let cert = decay_certificate(mu, v.field(), &a.theta_grid.0)?;
    let lower = match a.lower_bound_radius {
        Some(r) => Some(psi_lower_bound(mu, v.field(), cert.theta, r)?),
        None => None,
    };
    if let (Some(dir), Some(psi)) = (ctx.out_dir()?, &cert.psi) {
        write_field(psi, &dir.join("psi"))?;
    }
    let mut config = ctx.config("certify");
    config.grid = Some(grid.spec());
    config.mu = Some(mu);
    config.potential = Some(label);
    config.tolerances.insert("psi_quadrature_change".into(), 1e-6);
    Ok(json!({
        "config": config,
        "theta_star": cert.theta,
        "omega0": cert.omega0,
        "c0": cert.c0,
        "inf_psi": cert.inf_psi,
        "max_psi": cert.max_psi,
        "c_rate": cert.c_rate,
        "v_sup": cert.v_sup,
        "scan": cert.scan,
        "lower_bound": lower,
    }))
}

fn decay_rate(ctx: &Context, a: DecayRateArgs) -> CmdResult {
    let (grid, v, label) = problem(&a.problem)?;
    let mu = a.problem.mu;
    let (u0, init) = load_initial(&grid, mu, &a.initial, None)?;
    let norms = if a.norms.is_empty() { vec![NormSpec::sup()] } else { a.norms.clone() };
    let times = a.time.resolve();
    let prop = PerturbedPropagator::new(v, mu, Scheme::Strang, a.time.dt)?;
    let (ts, rows) = norm_trajectory(&prop, &u0, &norms, &times)?;
    let mut reports = Vec::new();
    for (n, row) in norms.iter().zip(&rows) {
        reports.push(estimate_exponential_type(&n.label(), &ts, row)?);
    }
    let mut config = ctx.config("decay-rate");
    config.grid = Some(grid.spec());
    config.mu = Some(mu);
    config.scheme = Some(Scheme::Strang);
    config.dt = Some(a.time.dt);
    config.norms = norms;
    config.times = times;
    config.potential = Some(label);
    config.initial = Some(init);
    config.tolerances.insert("rate_floor".into(), morrey_lab::analysis::RATE_FLOOR);
    Ok(json!({ "config": config, "reports": reports }))
}

fn bounds_check(ctx: &Context, a: BoundsCheckArgs) -> CmdResult {
    let (grid, v, label) = problem(&a.problem)?;
    let mu = a.problem.mu;
    let p = parse_exponent(&a.p).map_err(Failure::usage)?;
    let params = MorreyParams::new(p, a.ell)?;
    if params.ell > grid.dim() as f64 {
        return Err(morrey_lab::Error::InvalidParameter {
            name: "ell",
            value: params.ell,
            reason: "must not exceed the dimension",
        }
        .into());
    }
    let norms = [NormSpec::sup(), NormSpec::Morrey { params, shape: BallShape::Euclidean }];
    let times = a.time.resolve();
    let prop = PerturbedPropagator::new(v, mu, Scheme::Strang, a.time.dt)?;
    let (ts, rows) = norm_trajectory(&prop, &Field::constant(&grid, 1.0), &norms, &times)?;
    let infty = estimate_exponential_type(&norms[0].label(), &ts, &rows[0])?;
    let pl = estimate_exponential_type(&norms[1].label(), &ts, &rows[1])?;
    let verdict = sandwich_check(mu, grid.dim(), &infty, &pl, params, a.tol)?;
    let mut config = ctx.config("bounds-check");
    config.grid = Some(grid.spec());
    config.mu = Some(mu);
    config.scheme = Some(Scheme::Strang);
    config.dt = Some(a.time.dt);
    config.norms = norms.to_vec();
    config.times = times;
    config.potential = Some(label);
    config.tolerances.insert("band".into(), verdict.tol);
    Ok(json!({
        "config": config,
        "verdict": if verdict.pass { "pass" } else { "fail" },
        "omega_infty": infty.omega_hat,
        "omega_pl": pl.omega_hat,
        "check": verdict,
        "fits": [infty, pl],
    }))
}

fn rayleigh(ctx: &Context, a: RayleighArgs) -> CmdResult {
    let (grid, v, label) = problem(&a.problem)?;
    let report = rayleigh_omega2(a.problem.mu, v.field())?;
    if let (Some(path), Some(phi)) = (&a.minimizer, &report.minimizer) {
        write_field(phi, path)?;
    }
    let mut config = ctx.config("rayleigh");
    config.grid = Some(grid.spec());
    config.mu = Some(a.problem.mu);
    config.potential = Some(label);
    config.tolerances.insert("eigen_residual".into(), 1e-9);
    Ok(json!({ "config": config, "report": report }))
}

fn resolve_spec(target: &str) -> Result<ExperimentSpec, Failure> {
    if let Some(spec) = builtin(target) {
        return Ok(spec);
    }
    let path = Path::new(target);
    if !path.exists() {
        return Err(Failure::usage(format!(
            "unknown experiment {target:?}; built-ins: {}",
            BUILTIN_NAMES.join(", ")
        )));
    }
    Ok(ExperimentSpec::from_json(&fs::read_to_string(path)?)?)
}

fn write_experiment(dir: &Path, report: &morrey_lab::experiments::ExperimentReport) -> Result<(), Failure> {
    let name = &report.spec.name;
    fs::write(dir.join(format!("{name}.report.json")), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(format!("{name}.csv")), report.trajectories_csv())?;
    Ok(())
}

fn experiment(ctx: &Context, a: ExperimentCommand) -> CmdResult {
    match a {
        ExperimentCommand::List => Ok(json!({ "experiments": BUILTIN_NAMES })),
        ExperimentCommand::Show { name } => {
            let spec = builtin(&name).ok_or_else(|| Failure::usage(format!("unknown experiment {name:?}")))?;
            Ok(serde_json::to_value(spec)?)
        }
        ExperimentCommand::Run { target } => {
            let spec = resolve_spec(&target)?;
            let report = run_experiment(&spec)?;
            if let Some(dir) = ctx.out_dir()? {
                write_experiment(dir, &report)?;
            }
            let mut config = ctx.config("experiment");
            config.grid = Some(spec.grid);
            config.mu = Some(spec.mu);
            config.scheme = Some(Scheme::Strang);
            config.dt = Some(spec.dt);
            config.norms = spec.norms.clone();
            config.times = spec.times.clone();
            Ok(json!({ "config": config, "report": report }))
        }
    }
}

fn sweep(ctx: &Context, a: SweepArgs) -> CmdResult {
    if a.targets.is_empty() {
        return Err(Failure::usage("sweep needs at least one experiment"));
    }
    let mut specs = Vec::new();
    for t in &a.targets {
        let spec = resolve_spec(t)?;
        if a.mu.is_empty() {
            specs.push(spec);
        } else {
            for &mu in &a.mu {
                specs.push(ExperimentSpec {
                    name: format!("{}-mu{mu}", spec.name),
                    mu,
                    ..spec.clone()
                });
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(Failure::usage("--workers must be positive"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Failure::usage(e.to_string()))?;
    let workers = pool.current_num_threads();
    let out = ctx.out_dir()?.map(Path::to_path_buf);
    let runs: Vec<Value> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| match run_experiment(spec) {
                Ok(report) => {
                    let written = match &out {
                        Some(dir) => write_experiment(dir, &report).map_err(|f| f.message).err(),
                        None => None,
                    };
                    json!({ "name": spec.name, "pass": report.pass, "metrics": report.metrics, "write_error": written })
                }
                Err(e) => json!({ "name": spec.name, "error": { "kind": e.kind(), "message": e.to_string() } }),
            })
            .collect()
    });
    let mut config = ctx.config("sweep");
    config.tolerances.insert("workers".into(), workers as f64);
    Ok(json!({ "config": config, "workers": workers, "runs": runs }))
}
