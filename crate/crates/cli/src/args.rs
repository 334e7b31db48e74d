use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use morrey_lab::freeprop::FreeMethod;
use morrey_lab::morrey::NormSpec;
use morrey_lab::perturbed::Scheme;
use morrey_lab::GridSpec;

#[derive(Debug, Parser)]
#[command(name = "morrey-lab", version, about = "Fractional Schrödinger semigroups, Morrey norms and decay rates")]
pub struct Cli {
    /// Directory for reports, CSV trajectories and field files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for randomized inputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the fractional heat kernel k_μ(t, r).
    Kernel(KernelArgs),
    /// Evolve an initial datum and stream norms.
    Evolve(EvolveArgs),
    /// Morrey or uniform norms of a field file.
    MorreyNorm(MorreyNormArgs),
    /// Window test sup_x ∫_{B(x,r)} V < 0 over a set of radii.
    AbCheck(AbCheckArgs),
    /// Decay certificate ‖S(t)‖ ≤ C₀ e^{-ω₀ t} on L^∞.
    Certify(CertifyArgs),
    /// Fitted exponential types of S(t)u0 in the requested norms.
    DecayRate(DecayRateArgs),
    /// Compare the exponential types in L^∞ and M^{p,ℓ}.
    BoundsCheck(BoundsCheckArgs),
    /// Smallest eigenvalue of (-Δ)^μ + |V|.
    Rayleigh(RayleighArgs),
    /// Scripted experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Run many experiments in parallel.
    Sweep(SweepArgs),
}

pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("grid {s:?}: expected d,L,n"));
    }
    Ok(GridSpec {
        dim: parts[0].parse().map_err(|e| format!("bad dimension {:?}: {e}", parts[0]))?,
        extent: parts[1].parse().map_err(|e| format!("bad extent {:?}: {e}", parts[1]))?,
        points_per_axis: parts[2].parse().map_err(|e| format!("bad point count {:?}: {e}", parts[2]))?,
    })
}

fn parse_theta_grid(s: &str) -> Result<ThetaGrid, String> {
    if s == "default" {
        return Ok(ThetaGrid(morrey_lab::analysis::THETA_GRID.to_vec()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad theta {t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(ThetaGrid)
}

#[derive(Debug, Clone)]
pub struct ThetaGrid(pub Vec<f64>);

/// Grid, potential and initial datum.
#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// `d,L,n`; taken from the potential or initial file when omitted.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,

    /// Potential field file (`.bin` or its `.json` sidecar).
    #[arg(long)]
    pub potential: Option<PathBuf>,

    /// Potential recipe as JSON, e.g. `{"kind":"constant","value":-1}`.
    #[arg(long, conflicts_with = "potential")]
    pub potential_recipe: Option<String>,

    #[arg(long)]
    pub mu: f64,
}

#[derive(Debug, Args)]
pub struct TimeArgs {
    /// Explicit sample times.
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,

    /// Last time of an equispaced grid (used when `--times` is absent).
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,

    #[arg(long, default_value_t = 40)]
    pub samples: usize,

    /// Time step of the splitting scheme.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
}

impl TimeArgs {
    pub fn resolve(&self) -> Vec<f64> {
        if !self.times.is_empty() {
            return self.times.clone();
        }
        (1..=self.samples).map(|k| self.t_end * k as f64 / self.samples as f64).collect()
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4,8")]
    pub radii: Vec<f64>,
    /// Also fit the tail exponent over `r_lo,r_hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub tail_window: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    /// Initial field file.
    #[arg(long)]
    pub initial: Option<PathBuf>,

    /// Initial datum recipe as JSON, e.g. `{"kind":"gaussian","width":1}`.
    #[arg(long, conflicts_with = "initial")]
    pub datum: Option<String>,

    #[arg(long, default_value = "strang")]
    pub scheme: Scheme,

    /// Free propagator for `V = 0`.
    #[arg(long, default_value = "multiplier")]
    pub method: FreeMethod,

    /// `p,ell[,shape]` or `uniform,p`; repeatable.
    #[arg(long = "norm")]
    pub norms: Vec<NormSpec>,

    /// Times at which field files are written.
    #[arg(long, value_delimiter = ',')]
    pub checkpoint: Vec<f64>,

    #[command(flatten)]
    pub time: TimeArgs,
}

#[derive(Debug, Args)]
pub struct MorreyNormArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long = "norm", required = true)]
    pub norms: Vec<NormSpec>,
    /// Enumerate every ball node by node instead of using prefix sums.
    #[arg(long)]
    pub mask: bool,
}

#[derive(Debug, Args)]
pub struct AbCheckArgs {
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    #[arg(long)]
    pub potential: Option<PathBuf>,
    #[arg(long, conflicts_with = "potential")]
    pub potential_recipe: Option<String>,
    /// Radii to test; dyadic up to L/4 by default.
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    #[arg(long)]
    pub cube: bool,
    #[arg(long)]
    pub mask: bool,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// `default` or a comma-separated list.
    #[arg(long, default_value = "default", value_parser = parse_theta_grid)]
    pub theta_grid: ThetaGrid,
    /// Also report the lower bound for inf Ψ with balls of this radius.
    #[arg(long)]
    pub lower_bound_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecayRateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub initial: Option<PathBuf>,
    /// `p,ell[,shape]` or `uniform,p`; repeatable. Defaults to `L^∞`.
    #[arg(long = "norm")]
    pub norms: Vec<NormSpec>,
    #[command(flatten)]
    pub time: TimeArgs,
}

#[derive(Debug, Args)]
pub struct BoundsCheckArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub p: String,
    #[arg(long)]
    pub ell: f64,
    /// Absolute tolerance of the band; `0.05 ω̂_∞` by default.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub time: TimeArgs,
}

#[derive(Debug, Args)]
pub struct RayleighArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Write the minimizer to this field file.
    #[arg(long)]
    pub minimizer: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Run a built-in experiment by name or a spec file.
    Run { target: String },
    /// List the built-in experiments.
    List,
    /// Print the spec of a built-in experiment.
    Show { name: String },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Built-in names or spec files.
    #[arg(value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Replace μ in each target by every value listed.
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    /// Worker threads.
    #[arg(long, env = "MORREY_LAB_WORKERS")]
    pub workers: Option<usize>,
}
