//! `ssnn` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ssnn", version, about = "Sequence-spectrogram fusion toolkit for few-shot time-series classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct OutArgs {
    /// Output location.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output instead of failing.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw dataset (`<out>/<class>/<id>.csv`).
    Synth {
        /// Synthetic spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convert every CSV series under a directory into per-channel spectrogram PGMs.
    Stft {
        /// Directory scanned recursively for `.csv` series.
        #[arg(long = "in")]
        input: PathBuf,
        /// Window length in samples.
        #[arg(long)]
        window: usize,
        /// Overlap as a fraction of the window; rounded to whole samples.
        #[arg(long)]
        overlap: f64,
        /// Analysis window.
        #[arg(long, value_enum, default_value = "hann")]
        window_kind: commands::WindowArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Random-erase every PGM under a directory.
    Augment {
        /// Directory scanned recursively for `.pgm` images.
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated area ratios, each in [0.1, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        /// Master seed for the per-variant seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Placement attempts per rectangle before failing.
        #[arg(long, default_value_t = ssnn::augment::DEFAULT_MAX_RETRIES)]
        max_retries: usize,
        /// Do not copy the original images to the output.
        #[arg(long)]
        no_original: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build the dataset from raw series, train a network and save it.
    Train {
        /// Experiment config JSON with `dataset`, `model` and `train` sections.
        #[arg(long)]
        config: PathBuf,
        /// Raw dataset root (`<class>/<id>.csv`).
        #[arg(long)]
        data: PathBuf,
        /// Overrides the training and augmentation seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score a checkpoint on a processed dataset.
    Eval {
        /// Checkpoint JSON written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Processed dataset directory (with `manifest.json`).
        #[arg(long)]
        data: PathBuf,
        /// Inputs the network consumes.
        #[arg(long, value_enum, default_value = "fusion")]
        modality: commands::ModalityArg,
        /// Samples per forward pass.
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write per-sample predictions for a processed dataset.
    Predict {
        /// Checkpoint JSON written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Processed dataset directory (with `manifest.json`).
        #[arg(long)]
        data: PathBuf,
        /// Inputs the network consumes.
        #[arg(long, value_enum, default_value = "fusion")]
        modality: commands::ModalityArg,
        /// Samples per forward pass.
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Render an evaluation report as an SVG confusion-matrix heatmap.
    Report {
        /// Evaluation JSON written by `eval`.
        #[arg(long)]
        eval: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth { spec, seed, out } => commands::synth(&spec, seed, &out),
        Command::Stft {
            input,
            window,
            overlap,
            window_kind,
            out,
        } => commands::stft(&input, window, overlap, window_kind, &out),
        Command::Augment {
            input,
            ratios,
            seed,
            max_retries,
            no_original,
            out,
        } => commands::augment(&input, ratios, seed, max_retries, !no_original, &out),
        Command::Train { config, data, seed, out } => commands::train(&config, &data, seed, &out),
        Command::Eval {
            model,
            data,
            modality,
            batch_size,
            out,
        } => commands::eval(&model, &data, modality, batch_size, &out),
        Command::Predict {
            model,
            data,
            modality,
            batch_size,
            out,
        } => commands::predict(&model, &data, modality, batch_size, &out),
        Command::Report { eval, out } => commands::report(&eval, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
