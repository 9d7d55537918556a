use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sir_iss::config::{parse_equilibrium, parse_levels};
use sir_iss::{commands, CliError, Overrides, RunConfig};
use sir_iss_core::{EquilibriumKind, ModelParams};

/// SIR model with demography: equilibria, simulation, Lyapunov
/// certification and level sets.
#[derive(Parser)]
#[command(name = "sir-iss", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print R0, the regime and both equilibria.
    Equilibria(Common),
    /// Integrate and write trajectory.csv (t,S,I,R,B).
    Simulate(Common),
    /// Run the check suite; exit 3 if any check fails.
    Certify(Common),
    /// Write level contours of the selected function.
    Levelsets(Common),
    /// Print the selected Lyapunov constants and write the resolved config.
    Params(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Comma-separated levels.
    #[arg(long)]
    levels: Option<String>,
    /// df or endemic.
    #[arg(long, value_parser = parse_equilibrium)]
    equilibrium: Option<EquilibriumKind>,
    /// Write level sets in populations instead of deviations.
    #[arg(long)]
    absolute: bool,
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            // Without a file: the disease-free example rates.
            let p = ModelParams::new(0.0002, 0.032, 0.015, 3.0).map_err(|e| CliError::Config(e.to_string()))?;
            RunConfig::for_model(p, EquilibriumKind::DiseaseFree)
        }
    };
    cfg.apply(&Overrides {
        out: c.out.clone(),
        seed: c.seed,
        dt: c.dt,
        t_end: c.t_end,
        levels: c.levels.as_deref().map(parse_levels).transpose().map_err(CliError::Config)?,
        equilibrium: c.equilibrium,
        absolute: c.absolute,
    })?;
    Ok(cfg)
}

type Handler = fn(&RunConfig, &mut dyn io::Write) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    let (common, f): (&Common, Handler) = match &cli.cmd {
        Cmd::Equilibria(c) => (c, commands::equilibria),
        Cmd::Simulate(c) => (c, commands::simulate),
        Cmd::Certify(c) => (c, commands::certify),
        Cmd::Levelsets(c) => (c, commands::levelsets),
        Cmd::Params(c) => (c, commands::params),
    };
    let cfg = load(common)?;
    f(&cfg, &mut out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
