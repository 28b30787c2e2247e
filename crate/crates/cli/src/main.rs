//! `pulsepeak` command-line harness.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pulsepeak::experiment::{self, CsvTable, ExperimentConfig, ExperimentKind, ExperimentOutput};
use pulsepeak::io::read_stream_csv;

#[derive(Parser)]
#[command(
    name = "pulsepeak",
    version,
    about = "Pulse-width peak-amplitude detector harness"
)]
struct Cli {
    /// JSON experiment configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (defaults to the config's `out_dir`, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured waveform to stream.csv.
    Synth,
    /// Run the detector on a stream and dump every intermediate table.
    Detect {
        /// Stream CSV (`time_s,chA,...`); the configured waveform when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Amplitude or frequency sweep.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Scenario test.
    Test {
        #[arg(value_enum)]
        kind: TestKind,
    },
    /// Fit the correction constant over the linearity sweep.
    Calibrate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Linearity,
    Frequency,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Sequence,
    Unbalance,
    Harmonics,
    Sag,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_tables(dir: &Path, tables: &[CsvTable]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for t in tables {
        let path = dir.join(&t.name);
        fs::write(&path, &t.text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn report(dir: &Path, out: &ExperimentOutput) -> Result<bool> {
    write_tables(dir, &out.tables)?;
    let s = &out.summary;
    let name = format!("{}_summary.csv", s.experiment);
    fs::write(dir.join(&name), s.to_csv())?;
    for c in &s.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: {} {} (bound {})",
            s.experiment, c.name, c.value, c.bound
        );
    }
    for (k, v) in &s.notes {
        println!("info {}: {k} = {v}", s.experiment);
    }
    Ok(s.passed())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(cli.config.as_deref())?;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Synth => {
            let (_, table) = experiment::synthesize(&cfg)?;
            write_tables(&dir, &[table])?;
            Ok(true)
        }
        Command::Detect { input } => {
            let stream = match input {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    read_stream_csv(&text)?
                }
                None => experiment::synthesize(&cfg)?.0,
            };
            let (tables, out) = experiment::detect(&stream, &cfg)?;
            write_tables(&dir, &tables)?;
            for d in &out.diagnostics {
                eprintln!("warning: {}: {}", d.label, d.message);
            }
            if out.merge_warning {
                eprintln!("warning: adder output merged pulses; per-phase trains used");
            }
            println!(
                "{} estimates written to {}",
                out.estimates.len(),
                dir.display()
            );
            Ok(true)
        }
        Command::Sweep { kind } => {
            let kind = match kind {
                SweepKind::Linearity => ExperimentKind::Linearity,
                SweepKind::Frequency => ExperimentKind::Frequency,
            };
            report(&dir, &experiment::run(kind, &cfg)?)
        }
        Command::Test { kind } => {
            let kind = match kind {
                TestKind::Sequence => ExperimentKind::Sequence,
                TestKind::Unbalance => ExperimentKind::Unbalance,
                TestKind::Harmonics => ExperimentKind::Harmonics,
                TestKind::Sag => ExperimentKind::SagLatency,
            };
            report(&dir, &experiment::run(kind, &cfg)?)
        }
        Command::Calibrate => report(&dir, &experiment::run_calibration(&cfg)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
