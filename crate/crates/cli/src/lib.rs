//! Command-line orchestration of the fNIRS classification pipeline:
//! synthetic data, preprocessing, features, training, evaluation and
//! plot-ready exports.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Subset;
use config::{load_config_file, parse_override, PipelineConfig, CONFIG_ENV};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fnirs-bci", version, about = "fNIRS ternary task classification pipeline")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; input files default to paths inside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// raw_ica, features or features_kpca.
    #[arg(long, global = true)]
    pub pipeline: Option<String>,
    /// Override any config key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic recording and event list.
    Synth,
    /// Hemoglobin conversion, band-pass filtering, epoching and baseline correction.
    Preprocess,
    /// Export the configured feature matrix.
    Features,
    /// Fit the configured pipeline and write a model container.
    Train,
    /// Score a model container and write metrics and ROC curves.
    Evaluate {
        /// Model container; defaults to `model.fnirs` in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        subset: Subset,
    },
    /// Export correlation matrices and per-task time courses.
    Visualize,
}

impl Cli {
    pub fn resolve_config(&self) -> CliResult<PipelineConfig> {
        let file = load_config_file(self.config.as_deref())?;
        let mut flags = self.set.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            flags.push(("seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            flags.push(("out".into(), out.display().to_string()));
        }
        if let Some(p) = &self.pipeline {
            flags.push(("pipeline".into(), p.clone()));
        }
        PipelineConfig::resolve(&[file, flags])
    }

    pub fn execute(&self) -> CliResult<String> {
        let cfg = self.resolve_config()?;
        match &self.command {
            Command::Synth => commands::cmd_synth(&cfg, self.force),
            Command::Preprocess => commands::cmd_preprocess(&cfg, self.force),
            Command::Features => commands::cmd_features(&cfg, self.force),
            Command::Train => commands::cmd_train(&cfg, self.force),
            Command::Evaluate { model, subset } => commands::cmd_evaluate(&cfg, self.force, model.as_deref(), *subset),
            Command::Visualize => commands::cmd_visualize(&cfg, self.force),
        }
    }
}

/// Parses arguments (including the program name) and runs the command,
/// returning what it prints on stdout.
pub fn run<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let text = e.to_string();
        let first = text.lines().next().unwrap_or("invalid arguments");
        CliError::usage(first.trim_start_matches("error: "))
    })?;
    cli.execute()
}
