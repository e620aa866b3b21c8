//! Command-line front end: run experiments from TOML configs, sweep
//! strategies and seeds, aggregate results, and run standalone clustering.
//!
//! Exit codes: 0 on success, 2 on configuration errors (bad files, bad
//! flags, bad overrides), 1 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eoal_core::alloop::{
    read_rounds_csv, rounds_csv_string, run_experiment, summarize, write_rounds_csv,
    write_summary_csv, ExperimentResult, RoundRow,
};
use eoal_core::config::{apply_overrides, ExperimentConfig, StrategyName};
use eoal_core::data::load_csv;
use eoal_core::finch::{partition_at_k, Metric};
use eoal_core::io::atomic_write;

#[derive(Parser)]
#[command(
    name = "eoal-lab",
    version,
    about = "Open-set active learning laboratory: entropic sample selection over synthetic or CSV datasets"
)]
struct Cli {
    /// Suppress progress lines on stdout (diagnostics still go to stderr).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv + config_echo.toml.
    Run {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key overrides, e.g. --set strategy.name=random.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a strategies x seeds grid: one result directory per cell plus a
    /// merged sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Maximum number of cells to run in parallel.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate a sweep directory into summary.csv.
    Report {
        #[arg(long = "sweep-dir")]
        sweep_dir: PathBuf,
    },
    /// Cluster a `id,label,f1,...,fd` feature CSV into exactly K clusters.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        metric: String,
        /// Output CSV (`id,cluster`).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    init_thread_cap();
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let outcome = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
        } => cmd_run(&config, &overrides, &out, quiet),
        Command::Sweep {
            config,
            strategies,
            seeds,
            overrides,
            out,
            jobs,
        } => cmd_sweep(&config, &strategies, &seeds, &overrides, &out, jobs, quiet),
        Command::Report { sweep_dir } => cmd_report(&sweep_dir, quiet),
        Command::Cluster {
            features,
            k,
            metric,
            out,
        } => cmd_cluster(&features, k, &metric, &out, quiet),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// `EOAL_LAB_THREADS` caps the global worker pool used for parallel seeds,
/// sweep cells, and scoring.
fn init_thread_cap() {
    if let Ok(v) = std::env::var("EOAL_LAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(path: &Path, overrides: &[String]) -> eoal_core::Result<(ExperimentConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eoal_core::Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let resolved = apply_overrides(&text, overrides)?;
    let config = ExperimentConfig::from_toml_str(&resolved)?;
    // Echo the parsed configuration, not the raw text, so defaults show up.
    let echo = config.to_toml_string()?;
    Ok((config, echo))
}

fn report_result(result: &ExperimentResult, quiet: bool) {
    if !quiet {
        for outcome in &result.seeds {
            if let Some(last) = outcome.rounds.last() {
                println!(
                    "seed {}: {} cycles, final accuracy {:.4}, final precision {:.4}",
                    outcome.seed,
                    outcome.rounds.len(),
                    last.accuracy,
                    last.precision
                );
            }
        }
    }
    for (seed, error) in result.failures() {
        eprintln!("seed {seed} failed: {error}");
    }
}

fn cmd_run(
    config_path: &Path,
    overrides: &[String],
    out: &Path,
    quiet: bool,
) -> eoal_core::Result<ExitCode> {
    let (config, echo) = load_config(config_path, overrides)?;
    std::fs::create_dir_all(out)?;
    if !quiet {
        println!(
            "run: strategy={} seeds={} cycles={} budget={}",
            config.strategy.name.as_str(),
            config.experiment.seeds.len(),
            config.strategy.cycles,
            config.strategy.budget
        );
    }
    let result = run_experiment::<f64>(&config, Some(out))?;
    let rows = result.to_rows();
    write_rounds_csv(&out.join("rounds.csv"), &rows)?;
    atomic_write(&out.join("config_echo.toml"), echo.as_bytes())?;
    report_result(&result, quiet);
    if !quiet {
        // Mean and deviation across seeds, per cycle.
        for s in summarize(&rows) {
            println!(
                "cycle {}: accuracy {:.4} +/- {:.4}, precision {:.4} +/- {:.4}",
                s.cycle, s.accuracy_mean, s.accuracy_std, s.precision_mean, s.precision_std
            );
        }
        println!("wrote {}", out.join("rounds.csv").display());
    }
    if result.seeds.iter().all(|s| s.error.is_some()) {
        return Err(eoal_core::Error::Diverged("every seed failed".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    config_path: &Path,
    strategies: &[String],
    seeds: &[u64],
    overrides: &[String],
    out: &Path,
    jobs: Option<usize>,
    quiet: bool,
) -> eoal_core::Result<ExitCode> {
    // Validate strategy names before any work.
    let parsed: Vec<StrategyName> = strategies
        .iter()
        .map(|s| s.parse())
        .collect::<eoal_core::Result<_>>()?;
    if seeds.is_empty() {
        return Err(eoal_core::Error::Config("no seeds given".into()));
    }
    let (_, _) = load_config(config_path, overrides)?; // fail fast on bad config
    std::fs::create_dir_all(out)?;

    let cells: Vec<(StrategyName, u64)> = parsed
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    if !quiet {
        println!(
            "sweep: {} strategies x {} seeds = {} cells",
            parsed.len(),
            seeds.len(),
            cells.len()
        );
    }

    let run_cell = |&(strategy, seed): &(StrategyName, u64)| -> eoal_core::Result<Vec<RoundRow>> {
        let mut cell_overrides = overrides.to_vec();
        cell_overrides.push(format!("strategy.name=\"{}\"", strategy.as_str()));
        cell_overrides.push(format!("experiment.seeds=[{seed}]"));
        let (config, echo) = load_config(config_path, &cell_overrides)?;
        let cell_dir = out.join(format!("{}_seed{}", strategy.as_str(), seed));
        std::fs::create_dir_all(&cell_dir)?;
        let result = run_experiment::<f64>(&config, Some(&cell_dir))?;
        let rows = result.to_rows();
        write_rounds_csv(&cell_dir.join("rounds.csv"), &rows)?;
        atomic_write(&cell_dir.join("config_echo.toml"), echo.as_bytes())?;
        for (s, error) in result.failures() {
            eprintln!("cell {}/{}: seed {s} failed: {error}", strategy.as_str(), seed);
        }
        Ok(rows)
    };

    let results: Vec<eoal_core::Result<Vec<RoundRow>>> = match jobs {
        Some(n) if n >= 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| eoal_core::Error::Config(format!("cannot build pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                cells.par_iter().map(run_cell).collect()
            })
        }
        _ => {
            use rayon::prelude::*;
            cells.par_iter().map(run_cell).collect()
        }
    };

    let mut merged: Vec<RoundRow> = Vec::new();
    let mut failures = 0usize;
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(rows) => merged.extend(rows),
            Err(e) => {
                failures += 1;
                eprintln!("cell {}/{} failed: {e}", cell.0.as_str(), cell.1);
            }
        }
    }
    atomic_write(
        &out.join("sweep.csv"),
        rounds_csv_string(&merged).as_bytes(),
    )?;
    if !quiet {
        println!("wrote {} ({} rows)", out.join("sweep.csv").display(), merged.len());
    }
    if failures == cells.len() {
        return Err(eoal_core::Error::Diverged("every sweep cell failed".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(sweep_dir: &Path, quiet: bool) -> eoal_core::Result<ExitCode> {
    let sweep_csv = sweep_dir.join("sweep.csv");
    if !sweep_csv.exists() {
        return Err(eoal_core::Error::Config(format!(
            "no sweep.csv in {}",
            sweep_dir.display()
        )));
    }
    let rows = read_rounds_csv(&sweep_csv)?;
    if rows.is_empty() {
        return Err(eoal_core::Error::Config(format!(
            "{} holds no result rows",
            sweep_csv.display()
        )));
    }
    let summary = summarize(&rows);
    let path = sweep_dir.join("summary.csv");
    write_summary_csv(&path, &summary)?;
    if !quiet {
        println!("wrote {} ({} rows)", path.display(), summary.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cluster(
    features: &Path,
    k: usize,
    metric: &str,
    out: &Path,
    quiet: bool,
) -> eoal_core::Result<ExitCode> {
    let metric: Metric = metric.parse()?;
    let dataset = load_csv::<f64>(features)?;
    let ids: Vec<u64> = dataset.samples().iter().map(|s| s.id).collect();
    let matrix = dataset.features_of(&ids)?;
    let partition = partition_at_k(&matrix, k, metric)?;

    let mut text = String::from("id,cluster\n");
    for (id, label) in ids.iter().zip(&partition.labels) {
        text.push_str(&format!("{id},{label}\n"));
    }
    atomic_write(out, text.as_bytes())?;
    if !quiet {
        println!(
            "wrote {} ({} samples, {} clusters)",
            out.display(),
            ids.len(),
            partition.k
        );
    }
    Ok(ExitCode::SUCCESS)
}
