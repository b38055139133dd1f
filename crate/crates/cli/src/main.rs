mod cases;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{biomarker, evaluate, heatmap, perturb, rank, survival, synth, time};

/// Airway segmentation evaluation toolkit.
///
/// Every command accepts `--config file.json`; flags given on the command
/// line override file values, and the effective settings are written to
/// `resolved_config.json` in the output folder.
#[derive(Debug, Parser)]
#[command(name = "airway", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Evaluate(evaluate::EvaluateArgs),
    Rank(rank::RankArgs),
    Perturb(perturb::PerturbArgs),
    Heatmap(heatmap::HeatmapArgs),
    Biomarker(biomarker::BiomarkerArgs),
    Survival(survival::SurvivalArgs),
    Wilcoxon(survival::WilcoxonArgs),
    Time(time::TimeArgs),
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Evaluate(a) => evaluate::run(a),
        Command::Rank(a) => rank::run(a),
        Command::Perturb(a) => perturb::run(a),
        Command::Heatmap(a) => heatmap::run(a),
        Command::Biomarker(a) => biomarker::run(a),
        Command::Survival(a) => survival::run(a),
        Command::Wilcoxon(a) => survival::run_wilcoxon(a),
        Command::Time(a) => time::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
