use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dacapo_core::app::{cmd_allocate, cmd_encode, cmd_run, cmd_validate, AppError, RunConfig, RunOverrides};
use dacapo_core::mx::MxPrecision;
use dacapo_core::scheduler::Policy;

#[derive(Parser)]
#[command(name = "dacapo-sim", version, about = "Continuous-learning MX accelerator simulator")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize an F32M matrix file into an MXT1 tensor file
    Encode {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// mx4, mx6 or mx9
        #[arg(long, default_value = "mx9", value_parser = parse_precision)]
        precision: MxPrecision,
    },
    /// Print the offline T-SA/B-SA row split for the configured student
    Allocate,
    /// Simulate the configured scenario under each policy and write traces
    Run {
        #[arg(long)]
        seed: Option<u64>,
        /// spatiotemporal, spatial or fixed-window
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run N consecutive seeds in parallel
        #[arg(long, value_name = "N")]
        sweep_seeds: Option<u64>,
    },
    /// Cross-check the analytic cycle model against the event simulator
    Validate,
    /// Print the full default configuration
    PrintDefaults,
}

fn parse_precision(s: &str) -> Result<MxPrecision, String> {
    match s.to_ascii_lowercase().as_str() {
        "mx4" => Ok(MxPrecision::Mx4),
        "mx6" => Ok(MxPrecision::Mx6),
        "mx9" => Ok(MxPrecision::Mx9),
        _ => Err(format!("unknown precision `{s}`")),
    }
}

fn load(config: Option<&Path>) -> Result<RunConfig, AppError> {
    match config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::PrintDefaults => {
            print!("{}", RunConfig::default().to_toml());
        }
        Command::Encode { input, output, precision } => {
            let r = cmd_encode(&input, &output, precision)?;
            println!(
                "{} {}x{}: {} blocks, max error {:e}, mean block max error {:e}, max error/bound {:.4}, violations {}",
                r.precision, r.rows, r.cols, r.blocks, r.max_error, r.mean_block_max_error, r.max_error_over_bound, r.bound_violations
            );
        }
        Command::Allocate => {
            let cfg = load(cli.config.as_deref())?;
            let r = cmd_allocate(&cfg)?;
            eprintln!(
                "r_tsa={} r_bsa={} ({} of {} cycles per frame)",
                r.partition.r_tsa, r.partition.r_bsa, r.inference_cycles, r.frame_budget_cycles
            );
            println!("{}", json(&r));
        }
        Command::Run { seed, policy, out, sweep_seeds } => {
            let cfg = load(cli.config.as_deref())?;
            let overrides = RunOverrides { seed, policy, out_dir: out, sweep_seeds };
            let output = cmd_run(&cfg, &overrides)?;
            for s in &output.summaries {
                println!(
                    "{} seed {} {}: accuracy {:.4}, recovery {:.1} s, drifts {}, drop rate {:.4}",
                    s.scenario, s.seed, s.policy, s.mean_accuracy, s.mean_recovery_s, s.drift_count, s.drop_rate
                );
            }
            println!("aggregate: {}", output.aggregate_csv.display());
        }
        Command::Validate => {
            let cfg = load(cli.config.as_deref())?;
            let r = cmd_validate(&cfg.validate)?;
            println!("ok: {} grid points agree", r.checked);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
