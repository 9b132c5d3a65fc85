//! `platoon`: topology inspection, gain certification, closed-loop analysis,
//! simulation and gain sweeps.
//!
//! Exit codes: 0 success or stable, 1 certified unstable, 2 bad input,
//! 3 theorem not applicable, 4 numerical failure. Log verbosity comes from
//! `PLATOON_LOG` (for example `PLATOON_LOG=debug`).

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platoon_core::config::GridAxis;

use commands::Common;
use exit::Status;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Platoon topology, gain certification and simulation toolkit")]
struct Cli {
    /// Sectioned key-value config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing (default: ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a named topology; write its matrix file and coupling spectrum.
    Topo {
        /// PF, PFL, TPF, TPFL, rPF, rPFL, BD, BDL, rBD or rBDL.
        kind: String,
        /// Number of followers.
        n: usize,
        /// Communication range of the generalized kinds.
        #[arg(long)]
        range: Option<usize>,
    },
    /// Certify the configured gains on every configured topology.
    Certify {
        /// Print the machine-readable key=value form.
        #[arg(long)]
        kv: bool,
        /// Replace kappa_v by the smallest certified value times MARGIN.
        #[arg(long, value_name = "MARGIN")]
        synthesize_kv: Option<f64>,
    },
    /// Run the disturbance scenario; write trajectory, metrics and plot script.
    Simulate,
    /// Certificate and numerical verdict over a gain grid.
    Sweep {
        /// Axis `gain:min:max:steps`, overriding sweep.x.
        #[arg(long)]
        x: Option<GridAxis>,
        /// Second axis, overriding sweep.y.
        #[arg(long)]
        y: Option<GridAxis>,
    },
    /// Closed-loop spectrum, Hurwitz verdict and block decomposition check.
    Analyze,
    /// Print a config file listing every key at its default.
    Template,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLATOON_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::BadInput } else { Status::Ok }.into();
        }
    };
    let common = Common {
        config: cli.config,
        overrides: cli.overrides,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Topo { kind, n, range } => commands::topo(&common, &kind, n, range),
        Command::Certify { kv, synthesize_kv } => commands::certify(&common, kv, synthesize_kv),
        Command::Simulate => commands::simulate(&common),
        Command::Sweep { x, y } => commands::sweep(&common, x, y),
        Command::Analyze => commands::analyze(&common),
        Command::Template => commands::template(),
    };
    match result {
        Ok(status) => status.into(),
        Err(f) => {
            eprintln!("error: {f}");
            f.status.into()
        }
    }
}
