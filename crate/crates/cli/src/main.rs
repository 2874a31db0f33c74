//! `safeloop`: batch front end for invariant-set safety certificates.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 infeasible or
//! uncertified.

mod commands;
mod config;
mod error;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Context, PlotArgs, Status};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "safeloop",
    version,
    about = "Safety certificates and secondary controller synthesis for attacked LTI loops"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the primary-only loop against a fixed attack bound.
    Verify(Common),
    /// Find the largest attack bound the primary-only loop tolerates.
    Assess(Common),
    /// Synthesize a secondary controller and certify it.
    Synthesize(Common),
    /// Simulate attacked trajectories and check them against the sets.
    Simulate(Simulate),
    /// Draw the safe set and invariant sets from report files.
    Plot(Plot),
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Scalar grid file overriding the config's `scalars`.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Seed replacing `simulation.seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Simulate {
    #[command(flatten)]
    common: Common,
    /// Controller file written by `synthesize`.
    #[arg(long)]
    controller: Option<PathBuf>,
}

#[derive(Args)]
struct Plot {
    /// Problem file supplying the safe set; defaults to the first report's.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file with an invariant set; repeatable.
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
    /// Coordinate pair to project onto, e.g. `0,1`.
    #[arg(long, value_parser = parse_coords)]
    coords: Option<(usize, usize)>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_coords(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s.split_once(',').ok_or("expected two indices, e.g. 0,1")?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad index `{t}`: {e}"))
    };
    Ok((parse(i)?, parse(j)?))
}

fn run(cli: Cli) -> Result<Status, CliError> {
    let context = |c: &Common| Context::load(&c.config, &c.out, c.grid.as_deref(), c.seed);
    match cli.command {
        Command::Verify(c) => commands::verify(&context(&c)?),
        Command::Assess(c) => commands::assess(&context(&c)?),
        Command::Synthesize(c) => commands::synthesize_cmd(&context(&c)?),
        Command::Simulate(s) => commands::simulate(&context(&s.common)?, s.controller.as_deref()),
        Command::Plot(p) => commands::plot(&PlotArgs {
            config: p.config.as_deref(),
            reports: &p.reports,
            coords: p.coords,
            out: &p.out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Uncertified) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
