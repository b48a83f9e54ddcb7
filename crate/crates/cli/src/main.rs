//! Command-line front end for the drift-detection toolkit.
//!
//! Subcommands cover the experiment protocols (`run`, `baseline`,
//! `validate-positions`), hyperparameter sweeps (`sweep`), and merging of
//! result directories (`report`). Every output file is written atomically
//! (temporary file plus rename) and contains no timestamps or wall-clock
//! figures, so re-running an identical command into a fresh directory
//! produces byte-identical files; timings appear on standard output only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use udrift_core::config::FileConfig;
use udrift_core::stream::{
    load_stream, run_experiment, sweep, DatasetStream, EstimatorKind, ExperimentConfig,
    ExperimentReport, LoadOptions, PositionStrategy, RunMode, RunOutput, SweepGrid, SweepRow,
};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "UDRIFT_OUT";

#[derive(Parser)]
#[command(
    name = "udrift",
    version,
    about = "Streaming drift detection with uncertainty-triggered retraining",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prequential run; drift detection triggers retraining (default mode).
    Run(RunArgs),
    /// Prequential run that never retrains, as a reference point.
    Baseline(BaselineArgs),
    /// Prequential run retraining at fixed positions instead of detections.
    ValidatePositions(ValidatePositionsArgs),
    /// Cartesian hyperparameter sweep with a single fixed seed.
    Sweep(SweepArgs),
    /// Merge per-run JSON files from a results directory into one CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset file: numeric feature columns then one label column, no header.
    #[arg(long)]
    dataset: PathBuf,
    /// TOML configuration file; bundled defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Uncertainty estimator scoring every online sample.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Basic)]
    estimator: EstimatorArg,
    /// Detector significance level, overriding the dataset profile.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated seed list, e.g. `0,1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Inference chunk size (throughput only; detection stays per-sample).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Dataset field delimiter: one ASCII character, or `\t` for tab.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Min-max scale features, with bounds fitted on the initial segment only.
    #[arg(long)]
    scale_features: bool,
    /// Output directory (default: $UDRIFT_OUT, then ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the seeds on N worker threads instead of sequentially.
    #[arg(long, value_name = "N")]
    parallel_seeds: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the run mode while keeping the rest of the command.
    #[arg(long, value_enum, default_value_t = ModeArg::Detect)]
    mode: ModeArg,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ValidatePositionsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// How the fixed retraining positions are placed over the online phase.
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Number of retraining positions.
    #[arg(long)]
    count: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run mode evaluated at every grid point.
    #[arg(long, value_enum, default_value_t = ModeArg::Detect)]
    mode: ModeArg,
    /// Grid axis as `key=v1,v2,...`; repeat per axis. Keys: passes, members,
    /// samples, rank, pruning_percent, layer_offset, delta.
    #[arg(long, required = true, value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding per-run JSON files (default: $UDRIFT_OUT, then
    /// ./results).
    #[arg(long)]
    results: Option<PathBuf>,
    /// Output CSV path (default: <results>/report.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Basic,
    Mcd,
    Ensemble,
    Swag,
    Ash,
}

impl EstimatorArg {
    fn kind(self) -> EstimatorKind {
        match self {
            EstimatorArg::Basic => EstimatorKind::Basic,
            EstimatorArg::Mcd => EstimatorKind::Mcd,
            EstimatorArg::Ensemble => EstimatorKind::Ensemble,
            EstimatorArg::Swag => EstimatorKind::Swag,
            EstimatorArg::Ash => EstimatorKind::Ash,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Detect,
    Baseline,
}

impl ModeArg {
    fn mode(self) -> RunMode {
        match self {
            ModeArg::Detect => RunMode::Detect,
            ModeArg::Baseline => RunMode::Baseline,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Equal,
    Random,
}

impl StrategyArg {
    fn strategy(self) -> PositionStrategy {
        match self {
            StrategyArg::Equal => PositionStrategy::Equal,
            StrategyArg::Random => PositionStrategy::Random,
        }
    }
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s.as_bytes() {
        [b] => Ok(*b),
        br"\t" => Ok(b'\t'),
        _ => Err(r"delimiter must be a single ASCII character or \t".into()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => execute_experiment(&args.common, args.mode.mode()),
        Command::Baseline(args) => execute_experiment(&args.common, RunMode::Baseline),
        Command::ValidatePositions(args) => {
            if args.count == 0 {
                bail!("--count must be at least 1");
            }
            execute_experiment(
                &args.common,
                RunMode::FixedPositions {
                    strategy: args.strategy.strategy(),
                    count: args.count,
                },
            )
        }
        Command::Sweep(args) => execute_sweep(&args),
        Command::Report(args) => execute_report(&args),
    }
}

/// Resolves the output directory: flag, then environment, then `./results`.
fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Loads the configuration file and the dataset named by the common flags.
fn load_inputs(common: &CommonArgs) -> Result<(FileConfig, DatasetStream)> {
    let file_config = match &common.config {
        Some(path) => FileConfig::load(path)
            .with_context(|| format!("loading configuration {}", path.display()))?,
        None => FileConfig::builtin(),
    };
    let options = LoadOptions {
        delimiter: common.delimiter,
        scale_features: common.scale_features,
        initial_fraction: file_config.experiment.initial_fraction,
    };
    let stream = load_stream(&common.dataset, &options)
        .with_context(|| format!("loading dataset {}", common.dataset.display()))?;
    Ok((file_config, stream))
}

/// Builds the experiment configuration for `stream`, applying flag overrides
/// on top of the file (or bundled) configuration.
fn assemble_config(
    file_config: &FileConfig,
    stream: &DatasetStream,
    common: &CommonArgs,
    mode: RunMode,
) -> Result<ExperimentConfig> {
    let mut config = file_config.experiment(stream.name(), common.estimator.kind(), mode);
    if let Some(delta) = common.delta {
        config.adwin_delta = delta;
    }
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(batch_size) = common.batch_size {
        config.batch_size = batch_size;
    }
    if let Some(threads) = common.parallel_seeds {
        if threads == 0 {
            bail!("--parallel-seeds must be at least 1");
        }
        config.parallel = true;
    }
    Ok(config)
}

/// Runs `f` on a dedicated pool of `threads` workers when given, otherwise
/// on the calling thread.
fn with_workers<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> udrift_core::Result<T> + Send,
) -> Result<T> {
    let result = match threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building the worker pool")?
            .install(f),
        None => f(),
    };
    result.map_err(Into::into)
}

fn execute_experiment(common: &CommonArgs, mode: RunMode) -> Result<()> {
    let (file_config, stream) = load_inputs(common)?;
    let config = assemble_config(&file_config, &stream, common, mode)?;
    let report = with_workers(common.parallel_seeds, || run_experiment(&stream, &config))?;

    let dir = out_dir(&common.out);
    let stem = format!("{}_{}_{}", report.dataset, report.estimator, report.mode);
    for run in &report.runs {
        let record = RunRecord {
            dataset: &report.dataset,
            estimator: &report.estimator,
            mode: &report.mode,
            run,
        };
        let mut bytes = serde_json::to_vec_pretty(&record).context("encoding run record")?;
        bytes.push(b'\n');
        write_atomic(&dir.join(format!("{stem}_seed{}.json", run.seed)), &bytes)?;
    }
    write_atomic(
        &dir.join(format!("{stem}_summary.csv")),
        summary_csv(&report).as_bytes(),
    )?;
    write_atomic(
        &dir.join(format!("{stem}_reliability.csv")),
        reliability_csv(&report).as_bytes(),
    )?;

    let agg = &report.aggregate;
    println!(
        "{} {} {}: seeds={} mcc={:.4}±{:.4} ece={:.4}±{:.4} retrainings={:.1} wall={:.1}s",
        report.dataset,
        report.estimator,
        report.mode,
        agg.runs,
        agg.mean.mcc,
        agg.std.mcc,
        agg.mean.ece,
        agg.std.ece,
        agg.mean.retrainings,
        agg.mean.wall_time_s * agg.runs as f64,
    );
    Ok(())
}

fn execute_sweep(args: &SweepArgs) -> Result<()> {
    let (file_config, stream) = load_inputs(&args.common)?;
    let config = assemble_config(&file_config, &stream, &args.common, args.mode.mode())?;

    let mut grid = SweepGrid::new();
    for axis in &args.grid {
        let (key, values) = parse_grid_axis(axis)?;
        grid.add(key, values)?;
    }
    let rows = sweep(&stream, &config, &grid)?;

    for row in &rows {
        println!(
            "{} {} sweep {}: mcc={:.4} ece={:.4} retrainings={} wall={:.1}s",
            stream.name(),
            config.estimator.name(),
            format_setting(&row.setting),
            row.mcc,
            row.ece,
            row.retrainings,
            row.wall_time_s,
        );
    }

    let dir = out_dir(&args.common.out);
    let path = dir.join(format!(
        "{}_{}_sweep.csv",
        stream.name(),
        config.estimator.name()
    ));
    write_atomic(&path, sweep_csv(&rows).as_bytes())?;
    Ok(())
}

fn parse_grid_axis(axis: &str) -> Result<(&str, Vec<f64>)> {
    let (key, rest) = axis
        .split_once('=')
        .with_context(|| format!("grid axis `{axis}` is not of the form key=v1,v2,..."))?;
    let values = rest
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("grid axis `{key}`: `{v}` is not a number"))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((key, values))
}

fn format_setting(setting: &BTreeMap<String, f64>) -> String {
    setting
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

// --- output files -----------------------------------------------------------

/// One per-run JSON document: run output plus the experiment identity needed
/// to regroup files later.
#[derive(Serialize)]
struct RunRecord<'a> {
    dataset: &'a str,
    estimator: &'a str,
    mode: &'a str,
    #[serde(flatten)]
    run: &'a RunOutput,
}

const SUMMARY_HEADER: &str =
    "dataset,estimator,mode,seeds,mcc_mean,mcc_std,ece_mean,ece_std,retrainings_mean,retrainings_std\n";

fn summary_row(
    dataset: &str,
    estimator: &str,
    mode: &str,
    seeds: usize,
    mcc: (f64, f64),
    ece: (f64, f64),
    retrainings: (f64, f64),
) -> String {
    format!(
        "{dataset},{estimator},{mode},{seeds},{},{},{},{},{},{}\n",
        mcc.0, mcc.1, ece.0, ece.1, retrainings.0, retrainings.1
    )
}

fn summary_csv(report: &ExperimentReport) -> String {
    let agg = &report.aggregate;
    let mut out = String::from(SUMMARY_HEADER);
    out.push_str(&summary_row(
        &report.dataset,
        &report.estimator,
        &report.mode,
        agg.runs,
        (agg.mean.mcc, agg.std.mcc),
        (agg.mean.ece, agg.std.ece),
        (agg.mean.retrainings, agg.std.retrainings),
    ));
    out
}

fn reliability_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,bin_low,bin_high,count,avg_confidence,accuracy,gap\n");
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for run in &report.runs {
        for bin in run.calibration.reliability() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                run.seed,
                bin.bin_low,
                bin.bin_high,
                bin.count,
                fmt(bin.avg_confidence),
                fmt(bin.accuracy),
                fmt(bin.gap),
            )
            .expect("writing to a string cannot fail");
        }
    }
    out
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    if let Some(first) = rows.first() {
        let keys: Vec<&str> = first.setting.keys().map(String::as_str).collect();
        out.push_str(&keys.join(","));
        out.push_str(",mcc,ece,retrainings\n");
        for row in rows {
            let values: Vec<String> = row.setting.values().map(f64::to_string).collect();
            out.push_str(&values.join(","));
            writeln!(out, ",{},{},{}", row.mcc, row.ece, row.retrainings)
                .expect("writing to a string cannot fail");
        }
    }
    out
}

/// Writes `bytes` to `path` via a temporary sibling file and an atomic
/// rename, creating parent directories as needed. A failed write never
/// leaves a partial file at `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)
        .with_context(|| format!("creating output directory {}", parent.display()))?;
    let file_name = path
        .file_name()
        .with_context(|| format!("output path {} has no file name", path.display()))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!("{file_name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| {
        let _ = fs::remove_file(&tmp);
        format!("moving {} into place", path.display())
    })?;
    Ok(())
}

// --- report -----------------------------------------------------------------

/// The slice of a per-run JSON document the report needs; other fields are
/// ignored, and files without these fields are skipped with a warning.
#[derive(Deserialize)]
struct ReportRecord {
    dataset: String,
    estimator: String,
    mode: String,
    metrics: ReportMetrics,
}

#[derive(Deserialize)]
struct ReportMetrics {
    mcc: f64,
    ece: f64,
    retraining_count: usize,
}

fn execute_report(args: &ReportArgs) -> Result<()> {
    let results = args
        .results
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| results.join("report.csv"));

    let mut groups: BTreeMap<(String, String, String), Vec<ReportMetrics>> = BTreeMap::new();
    let mut scanned = 0usize;
    let entries = fs::read_dir(&results)
        .with_context(|| format!("reading results directory {}", results.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("reading results directory {}", results.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        match serde_json::from_slice::<ReportRecord>(&bytes) {
            Ok(record) => {
                groups
                    .entry((record.dataset, record.estimator, record.mode))
                    .or_default()
                    .push(record.metrics);
                scanned += 1;
            }
            Err(err) => eprintln!("skipping {}: {err}", path.display()),
        }
    }
    if groups.is_empty() {
        bail!("no run records found under {}", results.display());
    }

    let mut csv = String::from(SUMMARY_HEADER);
    for ((dataset, estimator, mode), runs) in &groups {
        let moments = |f: &dyn Fn(&ReportMetrics) -> f64| -> (f64, f64) {
            let n = runs.len() as f64;
            let mean = runs.iter().map(f).sum::<f64>() / n;
            let var = runs
                .iter()
                .map(|r| (f(r) - mean) * (f(r) - mean))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        };
        csv.push_str(&summary_row(
            dataset,
            estimator,
            mode,
            runs.len(),
            moments(&|r| r.mcc),
            moments(&|r| r.ece),
            moments(&|r| r.retraining_count as f64),
        ));
    }
    write_atomic(&out, csv.as_bytes())?;
    println!(
        "report: {scanned} run files, {} configurations -> {}",
        groups.len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn delimiter_parsing() {
        assert_eq!(parse_delimiter(",").unwrap(), b',');
        assert_eq!(parse_delimiter(";").unwrap(), b';');
        assert_eq!(parse_delimiter(r"\t").unwrap(), b'\t');
        assert!(parse_delimiter("").is_err());
        assert!(parse_delimiter("ab").is_err());
        assert!(parse_delimiter("λ").is_err());
    }

    #[test]
    fn grid_axis_parsing() {
        let (key, values) = parse_grid_axis("passes=25,50,75").unwrap();
        assert_eq!(key, "passes");
        assert_eq!(values, vec![25.0, 50.0, 75.0]);
        assert!(parse_grid_axis("passes").is_err());
        assert!(parse_grid_axis("passes=1,x").is_err());
    }

    #[test]
    fn sweep_csv_orders_axes_alphabetically() {
        let mut setting = BTreeMap::new();
        setting.insert("passes".to_string(), 25.0);
        setting.insert("delta".to_string(), 0.002);
        let rows = vec![SweepRow {
            setting,
            mcc: 0.5,
            ece: 0.1,
            retrainings: 2,
            wall_time_s: 9.0,
        }];
        let csv = sweep_csv(&rows);
        assert_eq!(
            csv,
            "delta,passes,mcc,ece,retrainings\n0.002,25,0.5,0.1,2\n"
        );
        assert!(!csv.contains('9'), "wall time must stay out of the file");
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp_files() {
        let dir = std::env::temp_dir().join(format!("udrift-cli-test-{}", std::process::id()));
        let path = dir.join("nested").join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let siblings: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(siblings, vec![std::ffi::OsString::from("out.csv")]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
