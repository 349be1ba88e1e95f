//! `loadbench`: benchmark harness for day-ahead building load forecasting.
//!
//! Subcommands: `synth`, `ingest`, `index`, `tokenize`, `eval-zero-shot`,
//! `eval-transfer`, `score-file`, `compare`, `report`.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use loadbench_cli::compare::compare_runs;
use loadbench_cli::config::{
    parse_config_file, EvalConfig, ForecasterKind, Overlay, Task,
};
use loadbench_cli::ingest_cmd::run_ingest;
use loadbench_cli::report::render_report;
use loadbench_cli::runner::{run_eval, score_file_run, corpus_load_values, ScoreFileConfig};
use loadbench_core::ingest::{Aggregation, IngestPolicy};
use loadbench_core::store::{build_index, IndexBuildOptions, Manifest, INDEX_FILE};
use loadbench_core::synth::{generate_corpus, SynthConfig};
use loadbench_core::tokenizer::TokenVocabulary;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "loadbench", version, about = "Day-ahead building load forecasting benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus of simulated buildings.
    Synth(SynthArgs),
    /// Clean raw meter CSVs into a corpus directory.
    Ingest(IngestArgs),
    /// Build the O(1)-seek window index over a corpus.
    Index(IndexArgs),
    /// Fit the load tokenizer on a corpus and write the vocabulary CSV.
    Tokenize(TokenizeArgs),
    /// Zero-shot evaluation: forecast every building with one week of history.
    EvalZeroShot(EvalArgs),
    /// Transfer evaluation: train on 6 months per building, test on 6 months.
    EvalTransfer(EvalArgs),
    /// Score an external prediction file against corpus actuals.
    ScoreFile(ScoreFileArgs),
    /// Compare two runs: probability of improvement and per-building deltas.
    Compare(CompareArgs),
    /// Print a summary of a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_residential: usize,
    #[arg(long, default_value_t = 10)]
    n_commercial: usize,
    #[arg(long, default_value_t = 365)]
    n_days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Residential base load range in kWh, as `min,max`.
    #[arg(long, default_value = "0.1,0.5")]
    base_load: String,
    /// Residential peak amplitude range in kWh, as `min,max`.
    #[arg(long, default_value = "0.8,3.0")]
    peak_load: String,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.4)]
    weekend_attenuation: f64,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of raw `<building id>.csv` files.
    #[arg(long)]
    raw: PathBuf,
    /// Building metadata CSV.
    #[arg(long)]
    metadata: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Sub-hourly aggregation: `sum` or `mean`.
    #[arg(long, default_value = "mean")]
    aggregation: String,
    #[arg(long, default_value_t = 0.10)]
    max_missing_fraction: f64,
    /// Gaps longer than this many hours are zero-filled.
    #[arg(long, default_value_t = 168)]
    long_gap_hours: usize,
    /// Exclude buildings whose max hourly consumption exceeds this (kWh).
    #[arg(long, default_value_t = 5100.0)]
    max_hourly_kwh: f64,
    /// Disable the consumption cap.
    #[arg(long)]
    no_cap: bool,
    #[arg(long, default_value_t = 24)]
    outlier_window: usize,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hours between successive window starts.
    #[arg(long, default_value_t = 24)]
    stride: usize,
    /// Hours withheld at the end of every shard (336 = two-week validation
    /// holdout); no emitted window overlaps them.
    #[arg(long, default_value_t = 0)]
    holdout_hours: usize,
    /// Region to hold out from enumeration entirely (repeatable).
    #[arg(long)]
    holdout_region: Vec<String>,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Initial KMeans cluster count.
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Merge threshold in kWh; 0 disables merging.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Key-value config file; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// previous-day, previous-week, persistence-ensemble, linear-direct, dlinear.
    #[arg(long)]
    forecaster: Option<String>,
    /// Run output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Evaluate a seeded sample of this many buildings per building type.
    #[arg(long)]
    sample: Option<usize>,
    /// Baseline run directory for probability-of-improvement reporting.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Train linear models without bias terms.
    #[arg(long)]
    no_bias: bool,
    #[arg(long)]
    dlinear_kernel: Option<usize>,
}

#[derive(Args)]
struct ScoreFileArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prediction interchange CSV to score.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Token vocabulary CSV (required for categorical predictions).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Box-Cox parameter file; Gaussian rows are treated as transformed-space
    /// forecasts and back-projected before scoring.
    #[arg(long)]
    boxcox_params: Option<PathBuf>,
    /// Fit Box-Cox parameters on the corpus (saved into the run directory).
    #[arg(long)]
    fit_boxcox: bool,
    /// Fit Box-Cox per building type instead of globally.
    #[arg(long)]
    boxcox_per_type: bool,
    /// Standard-scaler parameter file; Gaussian rows are treated as
    /// standard-scaled forecasts.
    #[arg(long)]
    standard_params: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    run_a: PathBuf,
    #[arg(long)]
    run_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
}

fn parse_range(text: &str, flag: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text
        .split_once(',')
        .ok_or_else(|| usage(format!("--{flag} expects `min,max`")))?;
    let lo: f64 = lo.trim().parse().map_err(|_| usage(format!("--{flag}: bad min")))?;
    let hi: f64 = hi.trim().parse().map_err(|_| usage(format!("--{flag}: bad max")))?;
    if !(lo > 0.0 && hi >= lo) {
        return Err(usage(format!("--{flag}: need 0 < min <= max")));
    }
    Ok((lo, hi))
}

/// Marker wrapped around argument-level problems so main can exit 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(message.into()))
}

fn resolve_eval_config(task: Task, args: &EvalArgs) -> Result<EvalConfig> {
    let file = match &args.config {
        Some(path) => Some(parse_config_file(path)?),
        None => None,
    };
    let overlay = Overlay::new(file.as_ref());
    let corpus = args
        .corpus
        .clone()
        .or_else(|| overlay.get("corpus").map(PathBuf::from))
        .ok_or_else(|| usage("--corpus is required (flag or config)"))?;
    let forecaster_name = args
        .forecaster
        .clone()
        .or_else(|| overlay.get("forecaster").map(String::from))
        .ok_or_else(|| usage("--forecaster is required (flag or config)"))?;
    let forecaster = ForecasterKind::parse(&forecaster_name).map_err(|e| usage(e.to_string()))?;
    let out = args
        .out
        .clone()
        .or_else(|| overlay.get("out").map(PathBuf::from))
        .ok_or_else(|| usage("--out is required (flag or config)"))?;

    let mut config = EvalConfig::new(task, corpus, forecaster, out);
    if let Some(v) = args.n_boot.or(overlay.parse("n_boot")?) {
        config.n_boot = v;
    }
    if let Some(v) = args.seed.or(overlay.parse("seed")?) {
        config.seed = v;
    }
    if let Some(v) = args.sigma_floor.or(overlay.parse("sigma_floor")?) {
        config.sigma_floor = v;
    }
    config.sample = args.sample.or(overlay.parse("sample")?);
    config.baseline = args
        .baseline
        .clone()
        .or_else(|| overlay.get("baseline").map(PathBuf::from));
    config.max_epochs = args.max_epochs.or(overlay.parse("max_epochs")?);
    if args.no_bias || overlay.parse::<bool>("no_bias")?.unwrap_or(false) {
        config.use_bias = false;
    }
    if let Some(v) = args.dlinear_kernel.or(overlay.parse("dlinear_kernel")?) {
        config.dlinear_kernel = v;
    }
    if task == Task::ZeroShot && config.baseline.is_some() {
        return Err(usage("--baseline applies to eval-transfer only"));
    }
    if config.forecaster.needs_fit() && task == Task::ZeroShot {
        return Err(usage(format!(
            "forecaster `{}` needs training and is not available zero-shot",
            config.forecaster.as_str()
        )));
    }
    Ok(config)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => {
            let config = SynthConfig {
                n_residential: args.n_residential,
                n_commercial: args.n_commercial,
                n_days: args.n_days,
                seed: args.seed,
                base_load_range: parse_range(&args.base_load, "base-load")?,
                peak_load_range: parse_range(&args.peak_load, "peak-load")?,
                noise_scale: args.noise_scale,
                weekend_attenuation: args.weekend_attenuation,
            };
            let manifest = generate_corpus(&config, &args.out)?;
            println!(
                "wrote {} buildings in {} shards to {}",
                config.n_buildings(),
                manifest.shards.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Ingest(args) => {
            let aggregation = match args.aggregation.as_str() {
                "sum" => Aggregation::Sum,
                "mean" => Aggregation::Mean,
                other => return Err(usage(format!("--aggregation must be sum or mean, got `{other}`"))),
            };
            let policy = IngestPolicy {
                max_missing_fraction: args.max_missing_fraction,
                long_gap_threshold: args.long_gap_hours,
                max_hourly_kwh: if args.no_cap { f64::INFINITY } else { args.max_hourly_kwh },
                outlier_window: args.outlier_window,
                aggregation,
            };
            let summary = run_ingest(&args.raw, &args.metadata, &args.out, &policy)?;
            println!(
                "ingested {} buildings: kept {}, excluded {}, failed {}",
                summary.input, summary.kept, summary.excluded, summary.failed
            );
            Ok(())
        }
        Command::Index(args) => {
            let mut manifest = Manifest::read(&args.corpus)?;
            if !args.holdout_region.is_empty() {
                manifest.holdout_regions = args.holdout_region.iter().cloned().collect();
                manifest.write(&args.corpus)?;
            }
            let options = IndexBuildOptions {
                stride: args.stride,
                holdout_hours: args.holdout_hours,
                seed: args.seed,
            };
            let entries = build_index(&manifest, &options, &args.corpus.join(INDEX_FILE))?;
            println!("indexed {entries} windows");
            Ok(())
        }
        Command::Tokenize(args) => {
            let labeled = corpus_load_values(&args.corpus)?;
            let samples: Vec<f64> = labeled.iter().map(|(v, _)| *v).collect();
            let vocab = TokenVocabulary::fit(&samples, args.k, args.tau, args.seed)
                .map_err(|e| anyhow!("{e}"))?;
            let stats = loadbench_core::tokenizer::compression_stats(&labeled, &vocab)
                .map_err(|e| anyhow!("{e}"))?;
            std::fs::write(&args.out, vocab.to_csv())
                .with_context(|| format!("cannot write `{}`", args.out.display()))?;
            let mut histogram = String::from("token,centroid_kwh,count\n");
            for (token, count) in stats.token_counts.iter().enumerate() {
                histogram.push_str(&format!("{token},{},{count}\n", vocab.decode(token)));
            }
            let histogram_path = args.out.with_extension("utilization.csv");
            std::fs::write(&histogram_path, histogram)
                .with_context(|| format!("cannot write `{}`", histogram_path.display()))?;
            println!(
                "vocabulary: {} tokens from k = {} (tau = {}), quantization MAE {:.6} kWh",
                vocab.vocab_size(),
                args.k,
                args.tau,
                stats.mae_overall
            );
            for (kind, mae) in &stats.mae_by_type {
                println!("  {kind}: MAE {mae:.6} kWh");
            }
            println!("utilization histogram: {}", histogram_path.display());
            Ok(())
        }
        Command::EvalZeroShot(args) => {
            let config = resolve_eval_config(Task::ZeroShot, &args)?;
            let doc = run_eval(&config)?;
            print_eval_summary(&doc);
            Ok(())
        }
        Command::EvalTransfer(args) => {
            let config = resolve_eval_config(Task::Transfer, &args)?;
            let doc = run_eval(&config)?;
            print_eval_summary(&doc);
            Ok(())
        }
        Command::ScoreFile(args) => {
            let file = match &args.config {
                Some(path) => Some(parse_config_file(path)?),
                None => None,
            };
            let overlay = Overlay::new(file.as_ref());
            let corpus = args
                .corpus
                .clone()
                .or_else(|| overlay.get("corpus").map(PathBuf::from))
                .ok_or_else(|| usage("--corpus is required (flag or config)"))?;
            let predictions = args
                .predictions
                .clone()
                .or_else(|| overlay.get("predictions").map(PathBuf::from))
                .ok_or_else(|| usage("--predictions is required (flag or config)"))?;
            let out = args
                .out
                .clone()
                .or_else(|| overlay.get("out").map(PathBuf::from))
                .ok_or_else(|| usage("--out is required (flag or config)"))?;
            if !predictions.is_file() {
                return Err(anyhow!("predictions file `{}` does not exist", predictions.display()));
            }
            let mut eval = EvalConfig::new(
                Task::ScoreFile,
                corpus,
                ForecasterKind::PreviousDay, // placeholder; not used for scoring files
                out,
            );
            if let Some(v) = args.n_boot.or(overlay.parse("n_boot")?) {
                eval.n_boot = v;
            }
            if let Some(v) = args.seed.or(overlay.parse("seed")?) {
                eval.seed = v;
            }
            if let Some(v) = args.sigma_floor.or(overlay.parse("sigma_floor")?) {
                eval.sigma_floor = v;
            }
            let config = ScoreFileConfig {
                eval,
                predictions,
                vocab: args.vocab.clone().or_else(|| overlay.get("vocab").map(PathBuf::from)),
                boxcox_params: args
                    .boxcox_params
                    .clone()
                    .or_else(|| overlay.get("boxcox_params").map(PathBuf::from)),
                fit_boxcox: args.fit_boxcox || overlay.parse::<bool>("fit_boxcox")?.unwrap_or(false),
                boxcox_per_type: args.boxcox_per_type
                    || overlay.parse::<bool>("boxcox_per_type")?.unwrap_or(false),
                standard_params: args
                    .standard_params
                    .clone()
                    .or_else(|| overlay.get("standard_params").map(PathBuf::from)),
            };
            let doc = score_file_run(&config)?;
            print_eval_summary(&doc);
            Ok(())
        }
        Command::Compare(args) => {
            let comparison = compare_runs(&args.run_a, &args.run_b, &args.out)?;
            if let Some(warning) = &comparison.warning {
                eprintln!("warning: {warning}");
            }
            println!(
                "compared {} paired buildings; results in {}",
                comparison.paired_buildings,
                args.out.display()
            );
            Ok(())
        }
        Command::Report(args) => {
            print!("{}", render_report(&args.run)?);
            Ok(())
        }
    }
}

fn print_eval_summary(doc: &loadbench_cli::runfiles::AggregateJson) {
    let c = &doc.counts;
    println!(
        "{} ({}): scored {} of {} buildings (skipped {}, excluded {})",
        doc.task, doc.forecaster, c.scored, c.input, c.skipped_short, c.excluded_zero_mean
    );
    for (name, metric) in &doc.metrics {
        println!(
            "  {name}: median {:.4} [{:.4}, {:.4}]",
            metric.overall.median, metric.overall.ci_low, metric.overall.ci_high
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("usage error: {e}");
                ExitCode::from(1)
            } else if e.downcast_ref::<loadbench_core::metrics::MetricsError>().is_some() {
                // Metric-level failures reaching the top are harness bugs.
                eprintln!("internal error: {e:#}");
                ExitCode::from(3)
            } else {
                eprintln!("data error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}
