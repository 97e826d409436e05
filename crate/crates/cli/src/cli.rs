//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::commands::{cmd_check, cmd_inspect, cmd_run, defaults_toml, At};
use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "groupnewton", version, about = "Partitioned second-order optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an optimizer; writes trace.csv, trace.json, params.json and manifest.json.
    Run(Common),
    /// Export the pseudo-Hessian and its inverse as heatmap data.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// `checkpoint` runs the configured optimizer first.
        #[arg(long, value_enum, default_value_t = AtArg::Init)]
        at: AtArg,
    },
    /// Run the derivative test battery; writes check_report.json.
    Check {
        #[command(flatten)]
        common: Common,
        /// Highest summary order to check.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
        order: u8,
    },
    /// Configuration utilities.
    Config {
        /// Print the default configuration as TOML.
        #[arg(long)]
        print_defaults: bool,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config, or a manifest.json to replay a run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// gd, cauchy, newton or partitioned.
    #[arg(long)]
    method: Option<String>,
    /// trivial, discrete, canonical or file:PATH.
    #[arg(long)]
    partition: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AtArg {
    Init,
    Checkpoint,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            method: self.method.clone(),
            partition: self.partition.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let r = cmd_run(&cfg)?;
            println!(
                "{} steps, loss {:e}, |g| {:e}{}; wrote {}",
                r.steps,
                r.loss,
                r.grad_norm,
                if r.converged { ", converged" } else { "" },
                cfg.output.dir.display()
            );
        }
        Command::Inspect { common, at } => {
            let cfg = common.resolve()?;
            let at = match at {
                AtArg::Init => At::Init,
                AtArg::Checkpoint => At::Checkpoint,
            };
            let r = cmd_inspect(&cfg, at)?;
            let n = r.hbar.labels.len();
            println!("{n}x{n} pseudo-Hessian at step {}; wrote {}", r.step, cfg.output.dir.display());
            for w in r.hbar.warning.iter().chain(&r.inverse.warning) {
                eprintln!("warning: {w}");
            }
        }
        Command::Check { common, order } => {
            let cfg = common.resolve()?;
            let r = cmd_check(&cfg, order as usize)?;
            for c in &r.checks {
                println!(
                    "{} {:<32} {:.3e} (limit {:.3e})",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                );
            }
            if let Some(name) = r.first_failure {
                return Err(CliError::CheckFailed(name));
            }
        }
        Command::Config { print_defaults } => {
            if !print_defaults {
                return Err(CliError::Config("nothing to do; try `config --print-defaults`".into()));
            }
            print!("{}", defaults_toml());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(format!(
        "Exit codes: 0 ok, 2 config error, 3 runtime abort, 4 check failure.\n\n\
         Default configuration (`config --print-defaults`):\n\n{}",
        defaults_toml()
    ));
    let matches = match command.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
