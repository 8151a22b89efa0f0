mod common;
mod eval;
mod predict;
mod slice;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use common::Failure;

#[derive(Parser, Debug)]
#[command(name = "cbstm", version, about = "COVID-19 CT detection and lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert NIfTI volumes or class-labelled image folders into 2-D slices
    /// and a JSON-lines manifest.
    Slice(slice::SliceArgs),
    /// Train the detection network.
    TrainDetect(train::TrainArgs),
    /// Train the segmentation network on COVID slices with masks.
    TrainSeg(train::TrainArgs),
    /// Score a checkpoint on one manifest split.
    Eval(eval::EvalArgs),
    /// Detect, then segment when the verdict is COVID.
    Predict(predict::PredictArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Detect,
    Seg,
}

/// Caps the rayon pool at `CBSTM_THREADS` when set.
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CBSTM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("CBSTM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Slice(a) => slice::run(&a),
        Command::TrainDetect(a) => train::run(&a, Phase::Detect),
        Command::TrainSeg(a) => train::run(&a, Phase::Seg),
        Command::Eval(a) => eval::run(&a),
        Command::Predict(a) => predict::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
