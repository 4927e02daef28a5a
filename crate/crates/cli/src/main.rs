use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volterra_ldp_cli::config::CONFIG_HELP;
use volterra_ldp_cli::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "vldp", version, about = "Small-noise large deviations for Volterra volatility models", after_long_help = CONFIG_HELP)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Kernel covariance table, modulus fit and optional scaling check.
    CheckKernel(Common),
    /// Simulate log-price paths.
    Simulate(Common),
    /// Pathwise rate of `rate.x`.
    RatePath(Common),
    /// Terminal rate at `rate.y`.
    RateTerminal(Common),
    /// Barrier-crossing rate for `rate.U`.
    Crossing(Common),
    /// Monte-Carlo decay slope against the predicted rate.
    VerifyLdp(Common),
    /// Numerical checks of the assumptions on μ and σ.
    ValidateModel(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` and $VLDP_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config overrides, e.g. `--rate.y 0.3`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let (cmd, common) = match cli.command {
        Sub::CheckKernel(c) => (Command::CheckKernel, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::RatePath(c) => (Command::RatePath, c),
        Sub::RateTerminal(c) => (Command::RateTerminal, c),
        Sub::Crossing(c) => (Command::Crossing, c),
        Sub::VerifyLdp(c) => (Command::VerifyLdp, c),
        Sub::ValidateModel(c) => (Command::ValidateModel, c),
    };
    let opts = RunOptions {
        config: common.config,
        seed: common.seed,
        out: common.out,
        overrides: common.overrides,
        timestamp: None,
    };
    match run(cmd, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
