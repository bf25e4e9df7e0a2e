mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ssnflow::newton::WarmStart;
use ssnflow::problems::channel::Inflow;
use ssnflow::problems::CAVITY_NU;
use ssnflow::verify::Mutation;
use ssnflow::BinghamForm;

/// Benchmarks and property checks for the implicit-constitutive flow solver.
#[derive(Debug, Parser)]
#[command(name = "ssnflow", version = config::VERSION)]
struct Cli {
    /// Defaults file of `flag = value` lines; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug). `RUST_LOG` overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Plane Poiseuille flow with a known solution, over a mesh ladder.
    Poiseuille(PoiseuilleArgs),
    /// Lid-driven cavity marched to steady state.
    Cavity(CavityArgs),
    /// Expansion-contraction channel and its corner dead zones.
    Channel(ChannelArgs),
    /// Run the property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "ssnflow-out")]
    out: PathBuf,
    /// Sweep points solved concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
}

#[derive(Debug, Args)]
struct PoiseuilleArgs {
    #[arg(long, default_value_t = 1.0)]
    tau_star: f64,
    /// Finest refinement of the base grid; every level from 0 is solved.
    #[arg(long, default_value_t = 2)]
    refinements: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.0166,0.001,0.0001")]
    eps_schedule: Vec<f64>,
    #[arg(long, default_value = "product", value_parser = ["product", "max", "projection"])]
    form: String,
    #[arg(long, default_value = "reuse", value_parser = ["reuse", "extrapolate"])]
    warm_start: String,
    /// Absolute tolerance on the residual norm.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 60)]
    max_iter: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CavityArgs {
    /// Yield stress; a comma-separated list runs a sweep.
    #[arg(long, required = true, value_delimiter = ',')]
    tau_star: Vec<f64>,
    /// Time step; by default 1e-4 for tau* >= 20 and 5e-4 below.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = CAVITY_NU)]
    nu: f64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 3)]
    refinements: usize,
    /// Cells per side of the base grid.
    #[arg(long, default_value_t = 10)]
    base_cells: usize,
    #[arg(long, default_value = "product", value_parser = ["product", "max", "projection"])]
    form: String,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Steady once the L2 velocity increment falls below this.
    #[arg(long, default_value_t = 1e-6)]
    steady_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_steps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ChannelArgs {
    /// Bingham number; a comma-separated list runs a sweep.
    #[arg(long, required = true, value_delimiter = ',')]
    bn: Vec<f64>,
    #[arg(long, default_value = "unit-mean", value_parser = ["unit-mean", "yield-scaled"])]
    inflow: String,
    /// Length of the straight sections on either side of the cavity.
    #[arg(long, default_value_t = 3.0)]
    l_hat: f64,
    /// Aspect ratio of the cavity.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Half-height of the cavity.
    #[arg(long, default_value_t = 1.2)]
    height: f64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    refinements: usize,
    /// Relative strain-rate threshold of the dead zone.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    #[arg(long, default_value = "product", value_parser = ["product", "max", "projection"])]
    form: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 60)]
    max_iter: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberate defect, to check that the suite catches it.
    #[arg(long, default_value = "none", value_parser = ["none", "flip-d2"])]
    mutation: String,
    /// Run only these properties.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Also write results and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn form(s: &str) -> BinghamForm {
    s.parse().expect("restricted by the value parser")
}

fn warm_start(s: &str) -> WarmStart {
    s.parse().expect("restricted by the value parser")
}

fn inflow(s: &str) -> Inflow {
    s.parse().expect("restricted by the value parser")
}

fn mutation(s: &str) -> Mutation {
    match s {
        "flip-d2" => Mutation::FlipD2,
        _ => Mutation::None,
    }
}

fn main() -> ExitCode {
    let root = Cli::command();
    let argv = match config::expand(std::env::args_os().collect(), &root) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let matches = match root.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let manifest = config::manifest(&root, name, sub);
    let code = match cli.command {
        Cmd::Poiseuille(a) => commands::poiseuille(&a, &manifest),
        Cmd::Cavity(a) => commands::cavity(&a, &manifest),
        Cmd::Channel(a) => commands::channel(&a, &manifest),
        Cmd::Verify(a) => commands::verify(&a, &manifest),
    };
    ExitCode::from(code)
}
