//! Files written into (and read back from) a run directory:
//!
//! - `per_building.csv` - `building,dataset,nrmse,nmae,nmbe,rps,n_days`,
//!   sorted by building id; `rps` is empty for point forecasters
//! - `aggregate.json` - medians with bootstrap CIs, performance profiles,
//!   counts, and probability-of-improvement blocks
//! - `profiles.csv` - `metric,threshold,fraction,ci_low,ci_high`
//! - `run_manifest.txt` - tool version, config hash, seeds, and the
//!   building-count conservation check

use anyhow::{bail, Context, Result};
use loadbench_core::metrics::{
    aggregate, default_thresholds, performance_profile, AggregateMetric, BuildingScore,
    MetricSummary, ProfilePoint,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const PER_BUILDING_FILE: &str = "per_building.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";

pub const METRIC_NAMES: [&str; 4] = ["nrmse", "nmae", "nmbe", "rps"];
const PROFILE_POINTS: usize = 41;

/// One row of `per_building.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub building: String,
    pub dataset: String,
    pub nrmse: f64,
    pub nmae: f64,
    pub nmbe: f64,
    pub rps: Option<f64>,
    pub n_days: usize,
}

impl ScoreRow {
    pub fn from_score(score: &BuildingScore) -> Self {
        Self {
            building: score.building_id.clone(),
            dataset: score.dataset.clone(),
            nrmse: score.nrmse,
            nmae: score.nmae,
            nmbe: score.nmbe,
            rps: score.rps,
            n_days: score.n_days,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "nrmse" => Some(self.nrmse),
            "nmae" => Some(self.nmae),
            "nmbe" => Some(self.nmbe),
            "rps" => self.rps,
            _ => None,
        }
    }
}

pub fn write_per_building_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = String::from("building,dataset,nrmse,nmae,nmbe,rps,n_days\n");
    for row in rows {
        let rps = row.rps.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.building, row.dataset, row.nrmse, row.nmae, row.nmbe, rps, row.n_days
        );
    }
    std::fs::write(path, out).with_context(|| format!("cannot write `{}`", path.display()))
}

pub fn read_per_building_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("building,dataset,nrmse,nmae,nmbe,rps,n_days") => {}
        other => bail!(
            "`{}` has unexpected header {:?}",
            path.display(),
            other.unwrap_or("")
        ),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("`{}` row {}: expected 7 fields", path.display(), i + 2);
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .with_context(|| format!("`{}` row {}: bad {what}", path.display(), i + 2))
        };
        rows.push(ScoreRow {
            building: fields[0].to_string(),
            dataset: fields[1].to_string(),
            nrmse: num(fields[2], "nrmse")?,
            nmae: num(fields[3], "nmae")?,
            nmbe: num(fields[4], "nmbe")?,
            rps: if fields[5].is_empty() {
                None
            } else {
                Some(num(fields[5], "rps")?)
            },
            n_days: fields[6]
                .parse()
                .with_context(|| format!("`{}` row {}: bad n_days", path.display(), i + 2))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryJson {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<MetricSummary> for SummaryJson {
    fn from(s: MetricSummary) -> Self {
        Self {
            median: s.median,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricJson {
    pub overall: SummaryJson,
    pub strata: BTreeMap<String, SummaryJson>,
    /// Buildings contributing to this metric.
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProfilePointJson {
    pub threshold: f64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CountsJson {
    pub input: usize,
    pub scored: usize,
    pub skipped_short: usize,
    pub excluded_zero_mean: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlagsJson {
    /// Hours where a degenerate Gaussian sigma was floored.
    pub sigma_floored_hours: usize,
    /// Hours where the Box-Cox back-projection clamped at its domain edge
    /// (low-confidence forecasts).
    pub boxcox_clamped_hours: usize,
}

/// `aggregate.json` document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateJson {
    pub task: String,
    pub forecaster: String,
    pub seed: u64,
    pub n_boot: usize,
    pub sigma_floor: f64,
    pub counts: CountsJson,
    pub flags: FlagsJson,
    pub metrics: BTreeMap<String, MetricJson>,
    pub profiles: BTreeMap<String, Vec<ProfilePointJson>>,
    /// Probability of improvement against a baseline run, percent, per
    /// metric (overall and per stratum); present only when a baseline was
    /// compared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_improvement: Option<BTreeMap<String, PImprovementJson>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PImprovementJson {
    pub overall: f64,
    pub strata: BTreeMap<String, f64>,
    pub n_pairs: usize,
}

/// Aggregates one metric over score rows, stratified by dataset.
pub fn aggregate_rows(
    rows: &[ScoreRow],
    metric: &str,
    n_boot: usize,
    seed: u64,
) -> Result<Option<MetricJson>> {
    let mut by_stratum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut n = 0;
    for row in rows {
        if let Some(value) = row.metric(metric) {
            by_stratum.entry(row.dataset.clone()).or_default().push(value);
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    let AggregateMetric { overall, strata } = aggregate(&by_stratum, n_boot, seed)?;
    Ok(Some(MetricJson {
        overall: overall.into(),
        strata: strata.into_iter().map(|(k, v)| (k, v.into())).collect(),
        n,
    }))
}

/// Performance-profile curves for every metric with data.
pub fn profiles_for_rows(
    rows: &[ScoreRow],
    n_boot: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<ProfilePointJson>>> {
    let mut out = BTreeMap::new();
    for (i, metric) in METRIC_NAMES.iter().enumerate() {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.metric(metric)).collect();
        if values.is_empty() {
            continue;
        }
        let thresholds = default_thresholds(&values, PROFILE_POINTS);
        let points = performance_profile(&values, &thresholds, n_boot, seed ^ (i as u64 + 1))?;
        out.insert(
            metric.to_string(),
            points
                .into_iter()
                .map(|ProfilePoint { threshold, fraction, ci_low, ci_high }| ProfilePointJson {
                    threshold,
                    fraction,
                    ci_low,
                    ci_high,
                })
                .collect(),
        );
    }
    Ok(out)
}

pub fn write_profiles_csv(
    path: &Path,
    profiles: &BTreeMap<String, Vec<ProfilePointJson>>,
) -> Result<()> {
    let mut out = String::from("metric,threshold,fraction,ci_low,ci_high\n");
    for (metric, points) in profiles {
        for p in points {
            let _ = writeln!(
                out,
                "{metric},{},{},{},{}",
                p.threshold, p.fraction, p.ci_low, p.ci_high
            );
        }
    }
    std::fs::write(path, out).with_context(|| format!("cannot write `{}`", path.display()))
}

pub fn write_aggregate_json(path: &Path, doc: &AggregateJson) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write `{}`", path.display()))
}

pub fn read_aggregate_json(path: &Path) -> Result<AggregateJson> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse `{}`", path.display()))
}

/// Writes `run_manifest.txt` and asserts building-count conservation.
pub struct RunManifest {
    pub task: String,
    pub forecaster: String,
    pub config_text: String,
    pub config_hash: String,
    pub seed: u64,
    pub counts: CountsJson,
    pub extra: Vec<(String, String)>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let c = &self.counts;
        assert_eq!(
            c.scored + c.skipped_short + c.excluded_zero_mean,
            c.input,
            "building-count conservation violated"
        );
        let mut out = String::from("# run manifest\n");
        let _ = writeln!(out, "tool = loadbench {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "task = {}", self.task);
        let _ = writeln!(out, "forecaster = {}", self.forecaster);
        let _ = writeln!(out, "config_hash = {}", self.config_hash);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "buildings_input = {}", c.input);
        let _ = writeln!(out, "buildings_scored = {}", c.scored);
        let _ = writeln!(out, "buildings_skipped = {}", c.skipped_short);
        let _ = writeln!(out, "buildings_excluded = {}", c.excluded_zero_mean);
        let _ = writeln!(out, "conservation = ok");
        for (key, value) in &self.extra {
            let _ = writeln!(out, "{key} = {value}");
        }
        out.push_str("\n# config\n");
        for line in self.config_text.lines() {
            let _ = writeln!(out, "config.{line}");
        }
        let path = dir.join(RUN_MANIFEST_FILE);
        std::fs::write(&path, out).with_context(|| format!("cannot write `{}`", path.display()))
    }
}
