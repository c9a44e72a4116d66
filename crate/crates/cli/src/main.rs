use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod inputs;
mod output;

use output::CliError;

#[derive(Parser)]
#[command(name = "mfgame", version, about = "Leader-follower mean-field LQ games: Riccati solver, certificate checks and Monte Carlo verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Suite {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate X and X̂ backward and report regimes and maximal intervals.
    Solve {
        problem: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check certificate conditions and the comparison orderings.
    Check {
        problem: PathBuf,
        /// Certificate file; omitted or `{}` means the constructive defaults.
        #[arg(long)]
        certificates: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo cost of the equilibrium or of a control law from a file.
    Simulate {
        problem: PathBuf,
        /// `equilibrium` or a path to a control-law file.
        #[arg(long, default_value = "equilibrium")]
        strategy: String,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 5e-4)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-path fluctuation costs.
        #[arg(long)]
        per_path: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the verification suite on a problem or on the built-in worked example.
    Verify {
        #[arg(required_unless_present = "example_sun")]
        problem: Option<PathBuf>,
        /// Use the built-in scalar worked example.
        #[arg(long)]
        example_sun: bool,
        #[arg(long, value_enum, default_value = "fast")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { problem, step, out } => commands::solve(&problem, step, &out),
        Command::Check { problem, certificates, step, out } => commands::check(&problem, certificates.as_deref(), step, &out),
        Command::Simulate { problem, strategy, x0, paths, dt, seed, per_path, out } => {
            commands::simulate(&problem, &strategy, &x0, paths, dt, seed, per_path, &out)
        }
        Command::Verify { problem, example_sun, suite, seed, out } => {
            commands::verify(problem.as_deref(), example_sun, suite, seed, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::VerificationFailed(_)) {
                eprintln!("error: {e}");
            } else {
                eprintln!("{e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
