// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stacked_sim::harness::{
    emit_results, parse_layer_range, render, run_experiment, with_threads, ExperimentKind, ExperimentSpec,
    OutputFormat, SchemeId, SpecOverrides,
};
use stacked_sim::Error;

#[derive(Parser)]
#[command(name = "stacked-sim", version, about = "Stacked intelligent metasurface experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average sum-rate of the precoding schemes versus the layer count.
    Sumrate(Common),
    /// DOA quadrant classification accuracy versus the layer count.
    Doa {
        #[command(flatten)]
        common: Common,
        /// Write the trained phases of every (L, trial) here.
        #[arg(long, value_name = "DIR")]
        model_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Result file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, value_name = "a..b")]
    layers: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated: joint, average-pa, codebook, zf-4ta, zf-8ta.
    #[arg(long, value_name = "LIST")]
    schemes: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Record compute seconds per row instead of 0.
    #[arg(long)]
    timing: bool,
}

fn overrides(c: &Common, model_dir: Option<PathBuf>) -> Result<SpecOverrides, Error> {
    let layers = c
        .layers
        .as_deref()
        .map(parse_layer_range)
        .transpose()
        .map_err(|m| Error::InvalidConfig(format!("--layers: {m}")))?;
    let schemes = c
        .schemes
        .as_deref()
        .map(|list| {
            list.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    SchemeId::parse(s)
                        .ok_or_else(|| Error::InvalidConfig(format!("--schemes: unknown scheme `{}`", s.trim())))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    Ok(SpecOverrides {
        seed: c.seed,
        trials: c.trials,
        layers,
        schemes,
        output: c.out.clone(),
        format: c.format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }),
        timing: c.timing.then_some(true),
        model_dir,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let (kind, common, model_dir) = match cli.command {
        Command::Sumrate(c) => (ExperimentKind::Sumrate, c, None),
        Command::Doa { common, model_dir } => (ExperimentKind::Doa, common, model_dir),
    };
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let spec =
        ExperimentSpec::from_toml(&text, kind, &overrides(&common, model_dir)?).map_err(|e| match &common.config {
            Some(path) => Error::InvalidConfig(format!("{}: {e}", path.display())),
            None => e.into(),
        })?;
    let rows = with_threads(common.threads, || run_experiment(&spec))??;
    match &spec.output {
        Some(path) => emit_results(&rows, &spec, path, spec.format)?,
        None => {
            let text = render(&rows, &spec, spec.format);
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|source| Error::Io {
                    context: "cannot write to stdout".into(),
                    source,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stacked-sim: {e}");
            ExitCode::from(match e {
                Error::Numerical(_) => 3,
                Error::Io { .. } => 1,
                _ => 2,
            })
        }
    }
}
