use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covsteer_cli::commands::{self, Outcome, SimulateArgs, SteerArgs};
use covsteer_cli::CliError;

/// Covariance steering for linear stochastic systems.
#[derive(Parser)]
#[command(name = "covsteer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether `Sigma` can be held stationary by constant feedback.
    Check {
        file: PathBuf,
        /// Also write admissibility.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the finite-horizon minimum-energy SDP and recover gains.
    Steer {
        file: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Initial ADMM penalty.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Build a smooth positive covariance path between the boundary values.
    FeasiblePath {
        file: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Minimum-power constant gain holding `Sigma` stationary.
    StationaryGain {
        file: PathBuf,
        /// Regularization for the fallback gain when the optimum is not Hurwitz.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo ensemble of the closed loop.
    Simulate {
        file: PathBuf,
        /// Time-varying gains as written by `steer`.
        #[arg(long, conflicts_with = "constant")]
        policy: Option<PathBuf>,
        /// Use the stationary gain for the target covariance.
        #[arg(long)]
        constant: bool,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Continue with the stationary gain after the horizon, up to this time.
        #[arg(long)]
        hold_until: Option<f64>,
        /// End time for stationary problem files.
        #[arg(long)]
        horizon: Option<f64>,
        /// Write this many sample paths to paths.csv.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
        /// Record statistics every this many steps.
        #[arg(long, default_value_t = 10)]
        record_every: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Experimental fixed-point iteration on the coupled Riccati system.
    Schrodinger {
        file: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        /// RK4 steps on [0, T].
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Check { file, out } => commands::check(&file, out.as_deref()),
        Command::Steer { file, grid, out, rho, max_iters } => commands::steer(&SteerArgs { file, grid, out, rho, max_iters }),
        Command::FeasiblePath { file, grid, out } => commands::feasible_path(&file, grid, &out),
        Command::StationaryGain { file, epsilon, out } => commands::stationary_gain(&file, epsilon, out.as_deref()),
        Command::Simulate { file, policy, constant, paths, seed, dt, hold_until, horizon, dump_paths, record_every, out } => {
            let args = SimulateArgs { file, policy, constant, paths, seed, dt, hold_until, horizon, dump_paths, record_every, out };
            commands::simulate(&args).map(|(outcome, _)| outcome)
        }
        Command::Schrodinger { file, max_iters, steps, out } => commands::schrodinger(&file, max_iters, steps, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{}", outcome.text);
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("covsteer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
