//! `ctxflow` command-line harness.

pub mod commands;
pub mod data;
pub mod failure;
pub mod manifest;
pub mod suite;

use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, GenDataArgs, InferArgs, SampleArgs, TrainArgs};
use failure::{CliResult, Failure, EXIT_PARTIAL};
use suite::BenchmarkArgs;

#[derive(Parser, Debug)]
#[command(name = "ctxflow", version, about = "In-context posterior sampling with conditional flow matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate (dataset, latent) pairs from a scenario.
    GenData(GenDataArgs),
    /// Train an in-context model on freshly simulated data.
    Train(TrainArgs),
    /// Draw posterior samples for one dataset from a trained model.
    Sample(SampleArgs),
    /// Run a reference inference method on one dataset.
    Infer(InferArgs),
    /// Compare two sample files and append metric rows to a report.
    Evaluate(EvaluateArgs),
    /// Run a suite of datasets and methods and summarize the metrics.
    Benchmark(BenchmarkArgs),
}

/// Run one command; the `Failure` carries the exit code.
pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => {
            let m = commands::gen_data(a)?;
            println!("wrote {} datasets to {} (run {})", a.n, a.out.display(), m.run_id);
        }
        Command::Train(a) => {
            let m = commands::train_cmd(a)?;
            println!("trained model in {} (run {})", a.out.display(), m.run_id);
        }
        Command::Sample(a) => {
            commands::sample_cmd(a)?;
            println!("wrote {}", a.out.display());
        }
        Command::Infer(a) => {
            commands::infer_cmd(a)?;
            println!("wrote {}", a.out.display());
        }
        Command::Evaluate(a) => {
            let (_, rows) = commands::evaluate_cmd(a)?;
            for r in rows {
                println!("{}\t{:.6}\t(se {:.6})", r.metric, r.value, r.se);
            }
        }
        Command::Benchmark(a) => {
            let out = suite::benchmark_cmd(a)?;
            for s in &out.summary {
                let mark = if s.best { "*" } else { "" };
                println!("{}\t{}\t{:.4} ± {:.4}{mark}", s.method, s.metric, s.mean, s.se);
            }
            let failed = out.failed();
            if failed > 0 {
                return Err(Failure { code: EXIT_PARTIAL, message: format!("{failed} benchmark cells failed; see status.csv") });
            }
        }
    }
    Ok(())
}
