//! The evaluation protocols.
//!
//! Zero-shot: every building with at least 192 hours is evaluated on all
//! stride-24 windows of its series, the first target day starting after the
//! first week of history.
//!
//! Transfer: months are 30-day blocks. Each building needs 12 months; months
//! 1-5 train, month 6 is the early-stopping validation, and months 7-12 are
//! tested with stride-24 windows whose contexts may reach back across the
//! boundary.

use crate::compare::pair_and_improve;
use crate::config::{EvalConfig, ForecasterKind, Task};
use crate::runfiles::{
    aggregate_rows, profiles_for_rows, read_per_building_csv, write_aggregate_json,
    write_per_building_csv, write_profiles_csv, AggregateJson, CountsJson, FlagsJson,
    PImprovementJson, RunManifest, ScoreRow, AGGREGATE_FILE, METRIC_NAMES, PER_BUILDING_FILE,
    PROFILES_FILE,
};
use anyhow::{anyhow, bail, Context, Result};
use loadbench_core::domain::{
    extract_covariates, sliding_windows, BuildingRecord, LoadSeries, Window, CONTEXT_HOURS,
    HORIZON_HOURS, WINDOW_HOURS,
};
use loadbench_core::forecast::{
    fit_dlinear, fit_linear_direct, training_pairs, Forecaster, PersistenceEnsemble, PreviousDay,
    PreviousWeek, TrainSchedule,
};
use loadbench_core::metrics::{score_building, BuildingScore, MetricsError, ScoreContext};
use loadbench_core::store::load_building_series;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Days per protocol month; a fixed 30-day block keeps the split arithmetic
/// unambiguous across datasets with different calendar spans.
pub const MONTH_DAYS: usize = 30;
pub const TRANSFER_TRAIN_DAYS: usize = 5 * MONTH_DAYS;
pub const TRANSFER_VAL_DAYS: usize = MONTH_DAYS;
pub const TRANSFER_TEST_DAYS: usize = 6 * MONTH_DAYS;
pub const TRANSFER_MIN_DAYS: usize =
    TRANSFER_TRAIN_DAYS + TRANSFER_VAL_DAYS + TRANSFER_TEST_DAYS;

enum BuildingOutcome {
    Scored(BuildingScore),
    SkippedShort { needed_hours: usize, have_hours: usize },
    ExcludedZeroMean,
}

/// Cuts the 192-hour window whose context starts at `start_hour`.
fn window_at(series: &LoadSeries, record: &BuildingRecord, start_hour: usize) -> Result<Window> {
    let context = series.slice(start_hour, CONTEXT_HOURS)?;
    let target = series.slice(start_hour + CONTEXT_HOURS, HORIZON_HOURS)?;
    let covariates = (0..WINDOW_HOURS)
        .map(|h| extract_covariates(series.timestamp(start_hour + h), record))
        .collect();
    Ok(Window::new(context, target, covariates)?)
}

fn make_forecaster(kind: ForecasterKind) -> Box<dyn Forecaster> {
    match kind {
        ForecasterKind::PreviousDay => Box::new(PreviousDay),
        ForecasterKind::PreviousWeek => Box::new(PreviousWeek),
        ForecasterKind::PersistenceEnsemble => Box::new(PersistenceEnsemble),
        ForecasterKind::LinearDirect | ForecasterKind::DLinear => {
            unreachable!("fitted per building in the transfer protocol")
        }
    }
}

fn score_windows(
    record: &BuildingRecord,
    windows: &[Window],
    forecaster: &dyn Forecaster,
    ctx: &ScoreContext,
) -> Result<BuildingOutcome> {
    let mut actuals = Vec::with_capacity(windows.len() * HORIZON_HOURS);
    let mut forecasts = Vec::with_capacity(windows.len());
    for window in windows {
        actuals.extend_from_slice(window.target().values());
        forecasts.push(forecaster.predict(window)?);
    }
    match score_building(&record.id, &record.dataset_name, &actuals, &forecasts, ctx) {
        Ok(score) => Ok(BuildingOutcome::Scored(score)),
        Err(MetricsError::ZeroMeanActuals) => Ok(BuildingOutcome::ExcludedZeroMean),
        Err(e) => Err(e.into()),
    }
}

fn eval_zero_shot_building(
    record: &BuildingRecord,
    series: &LoadSeries,
    config: &EvalConfig,
    ctx: &ScoreContext,
) -> Result<BuildingOutcome> {
    if series.len() < WINDOW_HOURS {
        return Ok(BuildingOutcome::SkippedShort {
            needed_hours: WINDOW_HOURS,
            have_hours: series.len(),
        });
    }
    let windows: Vec<Window> = sliding_windows(series, record, HORIZON_HOURS).collect();
    let forecaster = make_forecaster(config.forecaster);
    score_windows(record, &windows, forecaster.as_ref(), ctx)
}

/// Transfer split: window start hours for the train span and the target days
/// of the validation and test spans.
pub struct TransferSplit {
    pub train_starts: Vec<usize>,
    pub val_days: std::ops::Range<usize>,
    pub test_days: std::ops::Range<usize>,
}

pub fn transfer_split() -> TransferSplit {
    let train_hours = TRANSFER_TRAIN_DAYS * 24;
    let last_start = train_hours - WINDOW_HOURS;
    TransferSplit {
        train_starts: (0..=last_start).step_by(HORIZON_HOURS).collect(),
        val_days: TRANSFER_TRAIN_DAYS..TRANSFER_TRAIN_DAYS + TRANSFER_VAL_DAYS,
        test_days: TRANSFER_TRAIN_DAYS + TRANSFER_VAL_DAYS..TRANSFER_MIN_DAYS,
    }
}

fn windows_for_days(
    series: &LoadSeries,
    record: &BuildingRecord,
    days: std::ops::Range<usize>,
) -> Result<Vec<Window>> {
    days.map(|d| window_at(series, record, d * 24 - CONTEXT_HOURS))
        .collect()
}

fn eval_transfer_building(
    record: &BuildingRecord,
    series: &LoadSeries,
    config: &EvalConfig,
    ctx: &ScoreContext,
) -> Result<BuildingOutcome> {
    let needed = TRANSFER_MIN_DAYS * 24;
    if series.len() < needed {
        return Ok(BuildingOutcome::SkippedShort {
            needed_hours: needed,
            have_hours: series.len(),
        });
    }
    let split = transfer_split();
    let test_windows = windows_for_days(series, record, split.test_days.clone())?;

    match config.forecaster {
        ForecasterKind::LinearDirect => {
            let train: Vec<Window> = split
                .train_starts
                .iter()
                .map(|&s| window_at(series, record, s))
                .collect::<Result<_>>()?;
            let model = fit_linear_direct(&training_pairs(&train), config.use_bias)?;
            score_windows(record, &test_windows, &model, ctx)
        }
        ForecasterKind::DLinear => {
            let train: Vec<Window> = split
                .train_starts
                .iter()
                .map(|&s| window_at(series, record, s))
                .collect::<Result<_>>()?;
            let val = windows_for_days(series, record, split.val_days.clone())?;
            let mut schedule = TrainSchedule::from_scratch(config.seed);
            if let Some(max_epochs) = config.max_epochs {
                schedule.max_epochs = max_epochs;
            }
            let (model, _history) = fit_dlinear(
                &training_pairs(&train),
                &training_pairs(&val),
                config.dlinear_kernel,
                config.use_bias,
                &schedule,
            )?;
            score_windows(record, &test_windows, &model, ctx)
        }
        kind => {
            let forecaster = make_forecaster(kind);
            score_windows(record, &test_windows, forecaster.as_ref(), ctx)
        }
    }
}

/// Seeded per-type sampling of evaluation buildings.
fn sample_buildings(
    buildings: Vec<(BuildingRecord, LoadSeries)>,
    per_type: usize,
    seed: u64,
) -> Vec<(BuildingRecord, LoadSeries)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5a5a_5a5a);
    let mut by_type: BTreeMap<&'static str, Vec<(BuildingRecord, LoadSeries)>> = BTreeMap::new();
    for item in buildings {
        by_type
            .entry(item.0.building_type.as_str())
            .or_default()
            .push(item);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_type {
        group.shuffle(&mut rng);
        group.truncate(per_type);
        out.extend(group);
    }
    out.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    out
}

/// Runs an evaluation task end to end and writes the run directory.
pub fn run_eval(config: &EvalConfig) -> Result<AggregateJson> {
    config.validate_paths()?;
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create run directory `{}`", config.out.display()))?;

    let mut buildings: Vec<(BuildingRecord, LoadSeries)> =
        load_building_series(&config.corpus)?.into_values().collect();
    buildings.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    if let Some(per_type) = config.sample {
        buildings = sample_buildings(buildings, per_type, config.seed);
    }
    let input = buildings.len();

    let outcomes: Vec<(String, Result<BuildingOutcome>)> = buildings
        .par_iter()
        .map(|(record, series)| {
            let ctx = ScoreContext {
                sigma_floor: config.sigma_floor,
                ..ScoreContext::new()
            };
            let outcome = match config.task {
                Task::ZeroShot => eval_zero_shot_building(record, series, config, &ctx),
                Task::Transfer => eval_transfer_building(record, series, config, &ctx),
                Task::ScoreFile => Err(anyhow!("score-file runs through score_file_run")),
            };
            (record.id.clone(), outcome)
        })
        .collect();

    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let mut excluded = Vec::new();
    for (id, outcome) in outcomes {
        match outcome.with_context(|| format!("building `{id}`"))? {
            BuildingOutcome::Scored(score) => scores.push(score),
            BuildingOutcome::SkippedShort { needed_hours, have_hours } => {
                skipped.push(format!("{id}: {have_hours} h < {needed_hours} h"))
            }
            BuildingOutcome::ExcludedZeroMean => excluded.push(id),
        }
    }
    scores.sort_by(|a, b| a.building_id.cmp(&b.building_id));

    let counts = CountsJson {
        input,
        scored: scores.len(),
        skipped_short: skipped.len(),
        excluded_zero_mean: excluded.len(),
    };
    let flags = FlagsJson {
        sigma_floored_hours: scores.iter().map(|s| s.floored_hours).sum(),
        boxcox_clamped_hours: scores.iter().map(|s| s.clamped_hours).sum(),
    };
    let rows: Vec<ScoreRow> = scores.iter().map(ScoreRow::from_score).collect();

    let p_improvement = match &config.baseline {
        Some(baseline) => {
            let baseline_rows = read_per_building_csv(&baseline.join(PER_BUILDING_FILE))
                .context("baseline run is missing or malformed")?;
            let (improvement, deltas) = pair_and_improve(&rows, &baseline_rows)?;
            std::fs::write(config.out.join("improvement.csv"), deltas)?;
            Some(improvement)
        }
        None => None,
    };

    let doc = assemble_report(config, rows.clone(), counts, flags, p_improvement)?;
    write_run_dir(config, &doc, &rows, &skipped, &excluded)?;
    Ok(doc)
}

fn assemble_report(
    config: &EvalConfig,
    rows: Vec<ScoreRow>,
    counts: CountsJson,
    flags: FlagsJson,
    p_improvement: Option<BTreeMap<String, PImprovementJson>>,
) -> Result<AggregateJson> {
    let mut metrics = BTreeMap::new();
    if !rows.is_empty() {
        for metric in METRIC_NAMES {
            if let Some(agg) = aggregate_rows(&rows, metric, config.n_boot, config.seed)? {
                metrics.insert(metric.to_string(), agg);
            }
        }
    }
    let profiles = if rows.is_empty() {
        BTreeMap::new()
    } else {
        profiles_for_rows(&rows, config.n_boot, config.seed)?
    };
    Ok(AggregateJson {
        task: config.task.as_str().to_string(),
        forecaster: config.forecaster_label().to_string(),
        seed: config.seed,
        n_boot: config.n_boot,
        sigma_floor: config.sigma_floor,
        counts,
        flags,
        metrics,
        profiles,
        p_improvement,
    })
}

fn write_run_dir(
    config: &EvalConfig,
    doc: &AggregateJson,
    rows: &[ScoreRow],
    skipped: &[String],
    excluded: &[String],
) -> Result<()> {
    write_per_building_csv(&config.out.join(PER_BUILDING_FILE), rows)?;
    write_aggregate_json(&config.out.join(AGGREGATE_FILE), doc)?;
    write_profiles_csv(&config.out.join(PROFILES_FILE), &doc.profiles)?;
    let mut extra = Vec::new();
    for line in skipped {
        extra.push(("skipped".to_string(), line.clone()));
    }
    for id in excluded {
        extra.push(("excluded_zero_mean".to_string(), id.clone()));
    }
    RunManifest {
        task: doc.task.clone(),
        forecaster: doc.forecaster.clone(),
        config_text: config.canonical_text(),
        config_hash: config.config_hash(),
        seed: config.seed,
        counts: doc.counts.clone(),
        extra,
    }
    .write(&config.out)
}

/// Settings for scoring an external prediction file.
pub struct ScoreFileConfig {
    pub eval: EvalConfig,
    pub predictions: std::path::PathBuf,
    pub vocab: Option<std::path::PathBuf>,
    pub boxcox_params: Option<std::path::PathBuf>,
    pub fit_boxcox: bool,
    pub boxcox_per_type: bool,
    /// Standard-scaler parameter file; Gaussian rows are treated as
    /// standard-scaled forecasts (ablation alternative to Box-Cox).
    pub standard_params: Option<std::path::PathBuf>,
}

/// Scores a prediction interchange file against the corpus and writes a run
/// directory plus a `scoring_report.txt` of rejected rows.
pub fn score_file_run(config: &ScoreFileConfig) -> Result<AggregateJson> {
    use loadbench_core::forecast::score_prediction_file;
    use loadbench_core::tokenizer::TokenVocabulary;
    use loadbench_core::transform::{BoxCoxParams, StandardScalerParams};

    config.eval.validate_paths()?;
    if config.standard_params.is_some()
        && (config.boxcox_params.is_some() || config.fit_boxcox)
    {
        bail!("--standard-params and Box-Cox options are mutually exclusive");
    }
    std::fs::create_dir_all(&config.eval.out)?;
    let buildings = load_building_series(&config.eval.corpus)?;

    let vocab = match &config.vocab {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read vocabulary `{}`", path.display()))?;
            Some(TokenVocabulary::from_csv(&text).map_err(|e| anyhow!("{e}"))?)
        }
        None => None,
    };

    let standard = match &config.standard_params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read `{}`", path.display()))?;
            Some(StandardScalerParams::from_kv(&text).map_err(|e| anyhow!("{e}"))?)
        }
        None => None,
    };

    // Box-Cox parameters for Gaussian forecasts made in transformed space:
    // either loaded from a file or fitted on the corpus (globally or per
    // building type) and saved into the run directory for reuse.
    let mut boxcox_global: Option<BoxCoxParams> = None;
    let mut boxcox_by_type: BTreeMap<&'static str, BoxCoxParams> = BTreeMap::new();
    if let Some(path) = &config.boxcox_params {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read `{}`", path.display()))?;
        boxcox_global = Some(BoxCoxParams::from_kv(&text).map_err(|e| anyhow!("{e}"))?);
    } else if config.fit_boxcox {
        if config.boxcox_per_type {
            let mut by_type: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
            for (record, series) in buildings.values() {
                by_type
                    .entry(record.building_type.as_str())
                    .or_default()
                    .extend_from_slice(series.values());
            }
            for (name, samples) in by_type {
                let params = BoxCoxParams::fit(&samples).map_err(|e| anyhow!("{e}"))?;
                std::fs::write(
                    config.eval.out.join(format!("boxcox_{name}.txt")),
                    params.to_kv(),
                )?;
                boxcox_by_type.insert(name, params);
            }
        } else {
            let samples: Vec<f64> = buildings
                .values()
                .flat_map(|(_, series)| series.values().iter().copied())
                .collect();
            let params = BoxCoxParams::fit(&samples).map_err(|e| anyhow!("{e}"))?;
            std::fs::write(config.eval.out.join("boxcox_global.txt"), params.to_kv())?;
            boxcox_global = Some(params);
        }
    }

    let file = std::fs::File::open(&config.predictions)
        .with_context(|| format!("cannot read predictions `{}`", config.predictions.display()))?;
    let sigma_floor = config.eval.sigma_floor;
    let ctx_for = |record: &loadbench_core::domain::BuildingRecord| ScoreContext {
        boxcox: boxcox_by_type
            .get(record.building_type.as_str())
            .copied()
            .or(boxcox_global),
        standard,
        vocab: vocab.clone(),
        sigma_floor,
    };
    let outcome = score_prediction_file(file, &buildings, &ctx_for)?;

    let mut scores = outcome.scores;
    scores.sort_by(|a, b| a.building_id.cmp(&b.building_id));
    let rows: Vec<ScoreRow> = scores.iter().map(ScoreRow::from_score).collect();
    let counts = CountsJson {
        input: rows.len() + outcome.skipped_buildings.len(),
        scored: rows.len(),
        skipped_short: 0,
        excluded_zero_mean: outcome.skipped_buildings.len(),
    };
    let flags = FlagsJson {
        sigma_floored_hours: scores.iter().map(|s| s.floored_hours).sum(),
        boxcox_clamped_hours: scores.iter().map(|s| s.clamped_hours).sum(),
    };

    let mut report = String::new();
    let _ = writeln!(report, "# scoring report");
    let _ = writeln!(report, "rejected_rows = {}", outcome.rejected_rows.len());
    for line in &outcome.rejected_rows {
        let _ = writeln!(report, "rejected: {line}");
    }
    for (id, reason) in &outcome.skipped_buildings {
        let _ = writeln!(report, "skipped building {id}: {reason}");
    }
    std::fs::write(config.eval.out.join("scoring_report.txt"), report)?;

    let doc = assemble_report(&config.eval, rows.clone(), counts, flags, None)?;
    write_run_dir(&config.eval, &doc, &rows, &[], &[])?;
    Ok(doc)
}

/// Gathers every load value in the corpus (tokenizer fitting input).
pub fn corpus_load_values(corpus: &Path) -> Result<Vec<(f64, loadbench_core::domain::BuildingType)>> {
    let buildings = load_building_series(corpus)?;
    let mut out = Vec::new();
    for (record, series) in buildings.values() {
        out.extend(series.values().iter().map(|&v| (v, record.building_type)));
    }
    if out.is_empty() {
        bail!("corpus holds no load values");
    }
    Ok(out)
}
