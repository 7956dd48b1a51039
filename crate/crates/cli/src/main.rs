//! `fedsim`: run federated-learning simulations, parameter sweeps and YOLO
//! corpus statistics from the command line.
//!
//! Exit codes: 0 on success, 2 for invalid configs or unparsable inputs,
//! 3 for I/O failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim_core::orchestrator::total_simulated_duration;
use fedsim_core::report::{metrics_csv, summary_json};
use fedsim_core::yolo::{corpus_stats, parse_label_file, AnnotationRecord};
use fedsim_core::{ConfigError, Experiment, ExperimentConfig, RoundMetrics, SweepSpec};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Record measured wall-clock time in metrics.csv (makes the file
        /// differ between runs).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Run every (value, seed) cell of a one-axis sweep.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        wall_clock: bool,
    },
    /// Class histogram and box coordinates of a directory of YOLO labels.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(msg) | Failure::Io(msg) => f.write_str(msg),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path, err: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {err}", path.display()))
}

fn config_err(path: &Path, err: &ConfigError) -> Failure {
    match err.line {
        Some(line) => Failure::Invalid(format!(
            "{}:{line}: {}",
            path.display(),
            ConfigError { line: None, ..err.clone() }
        )),
        None => Failure::Invalid(format!("{}: {err}", path.display())),
    }
}

fn engine_err(err: fedsim_core::Error) -> Failure {
    Failure::Invalid(err.to_string())
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes through a temp file in the same directory and renames it into
/// place.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn configure_threads() -> CliResult<()> {
    let threads = match std::env::var("FEDSIM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return Err(Failure::Invalid(format!("FEDSIM_THREADS=`{v}` is not a positive integer"))),
        },
        Err(_) => 0, // rayon default: available cores
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Io(format!("cannot start worker pool: {e}")))
}

fn run_config(config: &ExperimentConfig) -> CliResult<(Vec<RoundMetrics>, String)> {
    let mut exp = Experiment::new(config.clone()).map_err(engine_err)?;
    let metrics = (0..config.rounds)
        .map(|_| exp.run_round())
        .collect::<Result<Vec<_>, _>>()
        .map_err(engine_err)?;
    Ok((metrics, exp.partition().to_manifest()))
}

fn write_run(out: &Path, config: &ExperimentConfig, metrics: &[RoundMetrics], manifest: &str, wall_clock: bool) -> CliResult<()> {
    create_dir(out)?;
    write_atomic(&out.join("metrics.csv"), &metrics_csv(metrics, wall_clock))?;
    let summary = serde_json::to_string_pretty(&summary_json(config, metrics))
        .map_err(|e| Failure::Io(format!("cannot encode summary: {e}")))?;
    write_atomic(&out.join("summary.json"), &(summary + "\n"))?;
    write_atomic(&out.join("partition.txt"), manifest)
}

fn cmd_run(config_path: &Path, seed: Option<u64>, out: &Path, wall_clock: bool) -> CliResult<()> {
    let text = read(config_path)?;
    let mut config = ExperimentConfig::parse(&text).map_err(|e| config_err(config_path, &e))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (metrics, manifest) = run_config(&config)?;
    write_run(out, &config, &metrics, &manifest, wall_clock)
}

fn cell_dir_name(axis_key: &str, value: &str, seed: u64) -> String {
    let safe: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{axis_key}={safe}_seed={seed}")
}

fn cmd_sweep(spec_path: &Path, out: &Path, wall_clock: bool) -> CliResult<()> {
    let text = read(spec_path)?;
    let spec = SweepSpec::parse(&text).map_err(|e| config_err(spec_path, &e))?;
    let cells = spec.cells().map_err(|e| config_err(spec_path, &e))?;
    let results = cells
        .par_iter()
        .map(|cell| run_config(&cell.config))
        .collect::<CliResult<Vec<_>>>()?;

    create_dir(&out.join("cells"))?;
    let mut table = String::from("axis_value,seed,final_accuracy,total_sim_duration_s\n");
    for (cell, (metrics, manifest)) in cells.iter().zip(&results) {
        let dir = out.join("cells").join(cell_dir_name(spec.axis.key(), &cell.axis_value, cell.seed));
        write_run(&dir, &cell.config, metrics, manifest, wall_clock)?;
        let final_acc = metrics.last().map_or(0.0, |m| m.global_accuracy);
        let _ = writeln!(
            table,
            "{},{},{},{}",
            cell.axis_value,
            cell.seed,
            final_acc,
            total_simulated_duration(metrics)
        );
    }
    write_atomic(&out.join("sweep.csv"), &table)
}

fn cmd_stats(labels: &Path, out: &Path) -> CliResult<()> {
    if !labels.is_dir() {
        return Err(io_err(labels, "not a directory"));
    }
    let mut records = Vec::new();
    for entry in walkdir::WalkDir::new(labels).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(labels, e))?;
        let path = entry.path();
        let is_label = entry.file_type().is_file()
            && path.extension().is_some_and(|e| e == "txt")
            && path.file_name().is_some_and(|n| n != "classes.txt");
        if !is_label {
            continue;
        }
        let text = read(path)?;
        let boxes = parse_label_file(&text).map_err(|e| match e {
            fedsim_core::Error::Parse { line, message } => {
                Failure::Invalid(format!("{}:{line}: {message}", path.display()))
            }
            other => Failure::Invalid(format!("{}: {other}", path.display())),
        })?;
        let rel = path.strip_prefix(labels).unwrap_or(path).with_extension("");
        records.push(AnnotationRecord::new(rel.to_string_lossy(), boxes));
    }
    let stats = corpus_stats(&records);
    create_dir(out)?;
    write_atomic(&out.join("class_histogram.csv"), &stats.histogram_csv())?;
    write_atomic(&out.join("boxes.csv"), &stats.points_csv())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run { config, seed, out, wall_clock } => cmd_run(config, *seed, out, *wall_clock),
        Command::Sweep { spec, out, wall_clock } => cmd_sweep(spec, out, *wall_clock),
        Command::Stats { labels, out } => cmd_stats(labels, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("fedsim: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
