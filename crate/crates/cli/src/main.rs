//! `rtmdet`: inspection workflows over the rtmdet library.
//!
//! Every subcommand prints a text table and writes `<sub>.json` and
//! `<sub>.txt` (plus any artifacts) under `--out`. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 internal invariant violation.

mod analyze;
mod assign;
mod augment;
mod common;
mod eval;
mod lr_curve;
mod split_dota;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use common::{Common, InvariantError, Outputs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "rtmdet", version, about = "Label assignment, augmentation, model accounting and evaluation tools")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run dynamic soft label assignment and report matches and costs
    Assign(assign::AssignArgs),
    /// Apply the cached Mosaic/MixUp or LSJ pipeline and dump the samples
    Augment(augment::AugmentArgs),
    /// Per-stage parameter and FLOP table of a model configuration
    Analyze(analyze::AnalyzeArgs),
    /// VOC-style per-class AP of a detection dump
    Eval(eval::EvalArgs),
    /// Cut DOTA images into overlapping square patches
    SplitDota(split_dota::SplitArgs),
    /// Dump the flat-cosine learning-rate schedule as CSV
    LrCurve(lr_curve::LrArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Assign(_) => "assign",
            Command::Augment(_) => "augment",
            Command::Analyze(_) => "analyze",
            Command::Eval(_) => "eval",
            Command::SplitDota(_) => "split-dota",
            Command::LrCurve(_) => "lr-curve",
        }
    }
}

/// Human table plus machine-readable report of one run.
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

fn run(cli: &Cli) -> Result<()> {
    cli.common.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build()?;
    let mut out = Outputs::create(&cli.common.out)?;
    let report = pool.install(|| -> Result<Report> {
        match &cli.command {
            Command::Assign(a) => assign::run(a, &cli.common, &mut out),
            Command::Augment(a) => augment::run(a, &cli.common, &mut out),
            Command::Analyze(a) => analyze::run(a, &cli.common),
            Command::Eval(a) => eval::run(a, &cli.common),
            Command::SplitDota(a) => split_dota::run(a, &cli.common, &mut out),
            Command::LrCurve(a) => lr_curve::run(a, &mut out),
        }
    })?;
    let name = cli.command.name();
    out.write_json(format!("{name}.json"), &report.json)?;
    out.write(format!("{name}.txt"), report.text.as_bytes())?;
    out.commit();
    print!("{}", report.text);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<UsageError>().is_some() {
                1
            } else if e.downcast_ref::<InvariantError>().is_some() {
                3
            } else {
                2
            };
            ExitCode::from(code)
        }
    }
}
