//! Command-line entry point: dataset generation, training, evaluation,
//! report emission, and the property self-test.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
//! `CDPCL_THREADS` caps internal parallelism; the default of 1 keeps runs
//! bit-deterministic (all current kernels are single-threaded regardless).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdpcl_core::evalreport::{discrepancy_report, emit_report, evaluate, write_eval_csv};
use cdpcl_core::segtrain::{train, TrainConfig};
use cdpcl_core::selftest::run_all;
use cdpcl_core::synthdomains::{make_split, SplitConfig};
use cdpcl_core::CdpclError;

#[derive(Parser)]
#[command(name = "cdpcl", version, about = "Calibrated dual prototypical contrastive training for domain-generalized segmentation, at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain corpus (source + unseen splits)
    GenData(GenDataArgs),
    /// Train from a `key = value` config file
    Train(TrainArgs),
    /// Evaluate a checkpoint on dataset splits and write the discrepancy analysis
    Eval(EvalArgs),
    /// Aggregate run directories into a summary report with plots
    Report(ReportArgs),
    /// Run the invariant and oracle property suite
    Selftest,
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the split subdirectories
    #[arg(long)]
    out: PathBuf,
    /// Master seed for all sample streams
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of classes
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Source training images
    #[arg(long, default_value_t = 200)]
    train_count: usize,
    /// Evaluation images per unseen domain
    #[arg(long, default_value_t = 50)]
    eval_count: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the training config file
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// One or more dataset split directories
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Directory receiving eval_miou.csv and discrepancy.md
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (each holding config_used.cfg, train_log.csv, eval_miou.csv)
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Report output directory
    #[arg(long)]
    out: PathBuf,
}

/// Validation failures exit 1, runtime failures 2.
fn classify(e: &CdpclError) -> u8 {
    match e {
        CdpclError::Config(_) | CdpclError::Contract { .. } => 1,
        _ => 2,
    }
}

fn check_threads_var() -> Result<(), String> {
    match std::env::var("CDPCL_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(format!("CDPCL_THREADS must be a positive integer, got '{v}'")),
        },
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    check_threads_var().map_err(|m| (1, m))?;
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = SplitConfig::default_desk(a.out, a.classes, a.seed);
            cfg.height = a.height;
            cfg.width = a.width;
            cfg.train_count = a.train_count;
            cfg.eval_count = a.eval_count;
            cfg.validate().map_err(|e| (1, e.to_string()))?;
            let dirs = make_split(&cfg).map_err(|e| (classify(&e), e.to_string()))?;
            for d in dirs {
                println!("wrote {}", d.display());
            }
            Ok(())
        }
        Command::Train(a) => {
            let cfg = TrainConfig::from_file(&a.config).map_err(|e| (1, e.to_string()))?;
            let outcome = train(&cfg).map_err(|e| (classify(&e), e.to_string()))?;
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("log {}", outcome.log.display());
            println!("final loss {}", outcome.final_loss);
            Ok(())
        }
        Command::Eval(a) => {
            if !a.checkpoint.is_file() {
                return Err((1, format!("checkpoint {} not found", a.checkpoint.display())));
            }
            for d in &a.data {
                if !d.is_dir() {
                    return Err((1, format!("dataset directory {} not found", d.display())));
                }
            }
            let evals = evaluate(&a.checkpoint, &a.data).map_err(|e| (classify(&e), e.to_string()))?;
            std::fs::create_dir_all(&a.out)
                .map_err(|e| (2, format!("{}: {e}", a.out.display())))?;
            let csv = a.out.join("eval_miou.csv");
            write_eval_csv(&evals, &csv).map_err(|e| (2, e.to_string()))?;
            for e in &evals {
                println!("{}: mIoU {:.4} over {} pixels", e.domain, e.mean, e.pixels);
            }
            let rep = discrepancy_report(&a.checkpoint, &a.data)
                .map_err(|e| (classify(&e), e.to_string()))?;
            let md = a.out.join("discrepancy.md");
            std::fs::write(&md, &rep.markdown).map_err(|e| (2, format!("{}: {e}", md.display())))?;
            println!("wrote {} and {}", csv.display(), md.display());
            Ok(())
        }
        Command::Report(a) => {
            for d in &a.runs {
                if !d.is_dir() {
                    return Err((1, format!("run directory {} not found", d.display())));
                }
            }
            let written = emit_report(&a.runs, &a.out).map_err(|e| (classify(&e), e.to_string()))?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Selftest => {
            let results = run_all();
            let mut failed = 0;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("[{status}] {}: {}", r.name, r.detail);
                if !r.passed {
                    failed += 1;
                }
            }
            if failed == 0 {
                println!("{} properties passed", results.len());
                Ok(())
            } else {
                Err((2, format!("{failed} of {} properties failed", results.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own usage text; help and version are not errors
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
