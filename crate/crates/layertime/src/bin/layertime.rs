use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use layertime::artifacts::emit_curve;
use layertime::executor::Threaded;
use layertime::run::{load_config, run, CliError, Overrides};
use layertime::sweep::{parse_seeds, sweep, GridAxis, SweepPlan};
use layertime_core::optimizer::TrainingMode;

#[derive(Parser)]
#[command(name = "layertime", version, about = "Layer-parallel training with nested iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nested,
    NonNested,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write log.csv, curve.csv, summary.json and controls.bin.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Skip calibration and use this many seconds per work unit.
        #[arg(long)]
        seconds_per_unit: Option<f64>,
    },
    /// Train every grid cell for every seed and summarize validation accuracy.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: String,
        /// `key=v1,v2` overrides; several axes form a Cartesian grid.
        #[arg(long, num_args = 1..)]
        grid: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run configurations concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Write the plotting curve of a log.csv.
    Curve {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to curve.csv next to the log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            mode,
            seconds_per_unit,
        } => {
            let overrides = Overrides {
                seed,
                out,
                mode: mode.map(|m| match m {
                    Mode::Nested => TrainingMode::Nested,
                    Mode::NonNested => TrainingMode::NonNested,
                }),
                seconds_per_unit,
            };
            let cfg = load_config(&config, &overrides)?;
            let exec = Threaded::from_env()?;
            let outcome = run(&cfg, &exec)?;
            let m = &outcome.summary.final_metrics;
            println!(
                "{} iterations, {:.2} work units, objective {:.6}, train {:.4}, validation {:.4} -> {}",
                m.iterations,
                m.total_work_units,
                m.objective,
                m.train_acc,
                m.val_acc,
                cfg.run.out.display()
            );
            Ok(())
        }
        Command::Sweep {
            config,
            seeds,
            grid,
            out,
            parallel,
        } => {
            let overrides = Overrides {
                out,
                ..Overrides::default()
            };
            let cfg = load_config(&config, &overrides)?;
            let plan = SweepPlan {
                seeds: parse_seeds(&seeds)?,
                grid: grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<_, _>>()?,
                parallel,
            };
            let summary = sweep(&cfg, &plan)?;
            for r in &summary.rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{}: runs {} failed {} mean {} median {} max {} min {} stddev {}",
                    r.config,
                    r.runs,
                    r.failed,
                    f(r.mean),
                    f(r.median),
                    f(r.max),
                    f(r.min),
                    f(r.stddev)
                );
            }
            Ok(())
        }
        Command::Curve { log, out } => {
            let out = out.unwrap_or_else(|| log.with_file_name("curve.csv"));
            let rows = emit_curve(&log, &out)?;
            println!("{rows} rows -> {}", out.display());
            Ok(())
        }
    }
}
