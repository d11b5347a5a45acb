//! `pixlm`: tokenizer training, atlas building, rendering, pretraining,
//! evaluation, fine-tuning and noise sweeps from the command line.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "pixlm", version, about = "Pixel-embedding language model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand. Settings resolve as preset, then
/// `--config` file, then `--set` pairs, then dedicated flags.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for initialization, sampling and noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base settings: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// Single setting override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE vocabulary from text files.
    TokenizerTrain(commands::TokenizerTrain),
    /// Render every vocabulary entry into an atlas file.
    AtlasBuild(commands::AtlasBuild),
    /// Render one string to a PGM or PNG image.
    Render(commands::Render),
    /// Train a decoder on a corpus.
    Pretrain(commands::Pretrain),
    /// Perplexity of a checkpoint on a corpus.
    EvalPpl(commands::EvalPpl),
    /// Fit a classification head on a frozen backbone.
    Finetune(commands::Finetune),
    /// Perplexity under increasing homoglyph noise.
    NoiseSweep(commands::NoiseSweep),
    /// Train pixel and token models on one corpus and sweep both.
    Compare(commands::Compare),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.common.log_level)
        .format_target(false)
        .format_timestamp_secs()
        .init();
    let c = &cli.common;
    let result = match &cli.command {
        Command::TokenizerTrain(a) => a.run(c),
        Command::AtlasBuild(a) => a.run(c),
        Command::Render(a) => a.run(c),
        Command::Pretrain(a) => a.run(c),
        Command::EvalPpl(a) => a.run(c),
        Command::Finetune(a) => a.run(c),
        Command::NoiseSweep(a) => a.run(c),
        Command::Compare(a) => a.run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e.downcast::<CliError>() {
                Ok(e) => e,
                Err(other) => CliError::new("failed", format!("{other:#}").replace('\n', " ")),
            };
            eprintln!("{}", e.to_json_line());
            ExitCode::from(1)
        }
    }
}
