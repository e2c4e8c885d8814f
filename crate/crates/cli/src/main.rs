use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unitguard_cli::{cmd_check, cmd_rules, cmd_run, cmd_validate, Outcome, EXIT_INVALID, EXIT_OK};

/// Decentralized failure handling for partitioned component systems.
#[derive(Parser)]
#[command(name = "unitguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario's model, isolation and resources.
    Validate { scenario: PathBuf },
    /// Simulate a scenario and print its event log and timing report.
    Run {
        scenario: PathBuf,
        /// Write the event log here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the timing report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a CAN policy over a recorded trace.
    Rules {
        policy: PathBuf,
        trace: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: u64,
        #[arg(long, default_value_t = 100)]
        stride: u64,
    },
    /// Compare simulated total recovery time with an expectation.
    Check {
        scenario: PathBuf,
        /// Expected total in ms; defaults to the calibrated composition.
        #[arg(long)]
        expect: Option<f64>,
        /// Allowed deviation in ms; defaults to one beacon period.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn main() -> ExitCode {
    // Usage errors are parse errors (exit 1); clap would exit 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK } as u8);
        }
    };
    let out: Outcome = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Run { scenario, log, report } => cmd_run(&scenario, log.as_deref(), report.as_deref()),
        Command::Rules { policy, trace, window, stride } => cmd_rules(&policy, &trace, window, stride),
        Command::Check { scenario, expect, tol } => cmd_check(&scenario, expect, tol),
    };
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.code as u8)
}
