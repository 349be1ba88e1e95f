//! Ingestion of real-building meter CSVs: hourly resampling, missing-value
//! policy, consumption cap, and 1-NN sliding-window outlier removal.
//!
//! Per-building input CSV has the header `timestamp,kwh` with timestamps in
//! RFC 3339 or `YYYY-MM-DD HH:MM:SS` (auto-detected; the latter is taken as
//! UTC) and missing readings encoded as empty `kwh` fields. Building
//! metadata comes from a CSV with the header
//! `id,dataset,building_type,latitude,longitude,region_id`.

use crate::domain::{BuildingRecord, BuildingType, LoadSeries};
use chrono::{DateTime, Duration, DurationRound, NaiveDateTime, Timelike, Utc};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: cannot parse timestamp `{text}`")]
    BadTimestamp { row: usize, text: String },
    #[error("row {row}: cannot parse load value `{text}`")]
    BadValue { row: usize, text: String },
    #[error("row {row}: negative load value {value}")]
    NegativeValue { row: usize, value: f64 },
    #[error("samples are not sorted by timestamp (row {row})")]
    Unsorted { row: usize },
    #[error("no samples")]
    EmptyInput,
    #[error("metadata row {row}: {reason}")]
    BadMetadata { row: usize, reason: String },
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

/// Why a building was dropped during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub enum ExclusionReason {
    AllMissing,
    TooManyMissing { fraction: f64, max: f64 },
    OverConsumptionCap { max_kwh: f64, cap_kwh: f64 },
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AllMissing => write!(f, "all values missing"),
            Self::TooManyMissing { fraction, max } => {
                write!(f, "missing fraction {fraction:.4} exceeds {max}")
            }
            Self::OverConsumptionCap { max_kwh, cap_kwh } => {
                write!(f, "max hourly consumption {max_kwh} kWh exceeds cap {cap_kwh}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Kept(LoadSeries),
    Excluded(ExclusionReason),
}

/// Aggregation of sub-hourly samples into an hour. Simulated output is
/// energy per interval and is summed; real meter readings are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Mean,
}

/// Cleaning thresholds. `max_hourly_kwh` may be infinite to disable the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestPolicy {
    pub max_missing_fraction: f64,
    /// Gaps longer than this many hours are zero-filled instead of
    /// interpolated (one week).
    pub long_gap_threshold: usize,
    pub max_hourly_kwh: f64,
    pub outlier_window: usize,
    pub aggregation: Aggregation,
}

impl Default for IngestPolicy {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.10,
            long_gap_threshold: 168,
            max_hourly_kwh: 5100.0,
            outlier_window: 24,
            aggregation: Aggregation::Mean,
        }
    }
}

/// One raw meter reading; `None` marks an explicitly missing value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub timestamp: DateTime<Utc>,
    pub value: Option<f64>,
}

/// Hourly series with explicit missing markers, the intermediate form
/// between resampling and gap filling.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub start: DateTime<Utc>,
    pub values: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn missing_fraction(&self) -> f64 {
        self.values.iter().filter(|v| v.is_none()).count() as f64 / self.values.len() as f64
    }
}

/// Parses a per-building meter CSV (`timestamp,kwh`).
pub fn parse_building_csv<R: Read>(reader: R) -> Result<Vec<RawSample>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let ts_text = record.get(0).unwrap_or("").trim();
        let timestamp = parse_timestamp(ts_text).ok_or_else(|| IngestError::BadTimestamp {
            row,
            text: ts_text.to_string(),
        })?;
        let value_text = record.get(1).unwrap_or("").trim();
        let value = if value_text.is_empty() {
            None
        } else {
            let v: f64 = value_text.parse().map_err(|_| IngestError::BadValue {
                row,
                text: value_text.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IngestError::BadValue {
                    row,
                    text: value_text.to_string(),
                });
            }
            if v < 0.0 {
                return Err(IngestError::NegativeValue { row, value: v });
            }
            Some(v)
        };
        samples.push(RawSample { timestamp, value });
    }
    Ok(samples)
}

pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Some(ts.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|naive| naive.and_utc())
}

/// Parses the building-metadata CSV
/// (`id,dataset,building_type,latitude,longitude,region_id`).
pub fn parse_metadata_csv<R: Read>(reader: R) -> Result<Vec<BuildingRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut records = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let field = |idx: usize, name: &str| -> Result<String, IngestError> {
            record
                .get(idx)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| IngestError::BadMetadata {
                    row,
                    reason: format!("missing field `{name}`"),
                })
        };
        let id = field(0, "id")?;
        let dataset = field(1, "dataset")?;
        let kind =
            BuildingType::parse(&field(2, "building_type")?).ok_or(IngestError::BadMetadata {
                row,
                reason: "building_type must be residential or commercial".to_string(),
            })?;
        let latitude: f64 = field(3, "latitude")?
            .parse()
            .map_err(|_| IngestError::BadMetadata {
                row,
                reason: "latitude is not a number".to_string(),
            })?;
        let longitude: f64 = field(4, "longitude")?
            .parse()
            .map_err(|_| IngestError::BadMetadata {
                row,
                reason: "longitude is not a number".to_string(),
            })?;
        let region = field(5, "region_id")?;
        records.push(
            BuildingRecord::new(id, kind, latitude, longitude, region, dataset).map_err(|e| {
                IngestError::BadMetadata {
                    row,
                    reason: e.to_string(),
                }
            })?,
        );
    }
    Ok(records)
}

/// Buckets sorted raw samples into clock hours. The output spans the first
/// through last sample row; hours with no present readings in between
/// (no rows, or only empty-valued rows) become missing markers.
pub fn resample_hourly(
    samples: &[RawSample],
    aggregation: Aggregation,
) -> Result<HourlySeries, IngestError> {
    if samples.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(IngestError::Unsorted { row: i + 1 });
        }
    }
    let floor = |ts: DateTime<Utc>| ts.duration_trunc(Duration::hours(1)).expect("hour trunc");
    let start = floor(samples[0].timestamp);
    let end = floor(samples[samples.len() - 1].timestamp);
    let n = ((end - start).num_hours() + 1) as usize;
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u32; n];
    for sample in samples {
        if let Some(v) = sample.value {
            let idx = (floor(sample.timestamp) - start).num_hours() as usize;
            sums[idx] += v;
            counts[idx] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &count)| {
            if count == 0 {
                None
            } else {
                Some(match aggregation {
                    Aggregation::Sum => sum,
                    Aggregation::Mean => sum / f64::from(count),
                })
            }
        })
        .collect();
    Ok(HourlySeries { start, values })
}

/// Applies the missing-value policy: exclude when too much is missing,
/// linearly interpolate short gaps, zero-fill gaps longer than a week, and
/// extend the nearest observation over short leading/trailing gaps.
pub fn fill_missing(
    hourly: &HourlySeries,
    policy: &IngestPolicy,
) -> Result<IngestOutcome, IngestError> {
    let n = hourly.values.len();
    if n == 0 {
        return Err(IngestError::EmptyInput);
    }
    let missing = hourly.values.iter().filter(|v| v.is_none()).count();
    if missing == n {
        return Ok(IngestOutcome::Excluded(ExclusionReason::AllMissing));
    }
    let fraction = missing as f64 / n as f64;
    if fraction > policy.max_missing_fraction {
        return Ok(IngestOutcome::Excluded(ExclusionReason::TooManyMissing {
            fraction,
            max: policy.max_missing_fraction,
        }));
    }

    let mut out = vec![0.0f64; n];
    for (i, v) in hourly.values.iter().enumerate() {
        if let Some(x) = v {
            out[i] = *x;
        }
    }
    let mut i = 0;
    while i < n {
        if hourly.values[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < n && hourly.values[i].is_none() {
            i += 1;
        }
        let gap_len = i - gap_start;
        let left = gap_start.checked_sub(1).map(|j| out[j]);
        let right = (i < n).then(|| out[i]);
        if gap_len > policy.long_gap_threshold {
            continue; // already zero-filled
        }
        match (left, right) {
            (Some(l), Some(r)) => {
                let span = (gap_len + 1) as f64;
                for (t, slot) in out[gap_start..gap_start + gap_len].iter_mut().enumerate() {
                    *slot = l + (r - l) * (t + 1) as f64 / span;
                }
            }
            (None, Some(r)) => out[gap_start..gap_start + gap_len].fill(r),
            (Some(l), None) => out[gap_start..gap_start + gap_len].fill(l),
            (None, None) => unreachable!("not all-missing"),
        }
    }
    Ok(IngestOutcome::Kept(LoadSeries::new(hourly.start, out)?))
}

/// Excludes the series when any hour exceeds the consumption cap.
pub fn apply_consumption_cap(series: &LoadSeries, policy: &IngestPolicy) -> IngestOutcome {
    let max = series.values().iter().cloned().fold(0.0f64, f64::max);
    if max > policy.max_hourly_kwh {
        IngestOutcome::Excluded(ExclusionReason::OverConsumptionCap {
            max_kwh: max,
            cap_kwh: policy.max_hourly_kwh,
        })
    } else {
        IngestOutcome::Kept(series.clone())
    }
}

/// Replaces meter-noise spikes: a value is an outlier when its minimum
/// absolute difference to the other values in its 24-hour window (12 hours
/// back, 11 forward, truncated at the edges) exceeds the series' average
/// daily peak-to-base range. Detection runs on the original values and all
/// replacements (window medians) are applied afterwards.
pub fn remove_outliers(series: &LoadSeries, policy: &IngestPolicy) -> (LoadSeries, usize) {
    let values = series.values();
    let n = values.len();
    let threshold = daily_range_threshold(series);
    let half_back = policy.outlier_window / 2;
    let half_fwd = policy.outlier_window - half_back; // window = [i-12, i+11]
    let mut replacements: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(half_back);
        let hi = (i + half_fwd).min(n);
        let mut nn = f64::INFINITY;
        for j in lo..hi {
            if j != i {
                nn = nn.min((values[i] - values[j]).abs());
            }
        }
        if nn.is_finite() && nn > threshold {
            let mut window: Vec<f64> = values[lo..hi].to_vec();
            window.sort_by(|a, b| a.total_cmp(b));
            let m = window.len();
            let median = if m % 2 == 1 {
                window[m / 2]
            } else {
                (window[m / 2 - 1] + window[m / 2]) / 2.0
            };
            replacements.push((i, median));
        }
    }
    let count = replacements.len();
    if count == 0 {
        return (series.clone(), 0);
    }
    let mut out = values.to_vec();
    for (i, median) in replacements {
        out[i] = median;
    }
    (
        LoadSeries::new(series.start(), out).expect("medians of valid values are valid"),
        count,
    )
}

/// Average daily peak minus average daily base over complete UTC calendar
/// days; falls back to the global range when the series has no complete day.
fn daily_range_threshold(series: &LoadSeries) -> f64 {
    let values = series.values();
    let offset = (24 - series.start().hour() as usize) % 24;
    let mut peaks = 0.0f64;
    let mut bases = 0.0f64;
    let mut days = 0usize;
    let mut i = offset;
    while i + 24 <= values.len() {
        let day = &values[i..i + 24];
        peaks += day.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        bases += day.iter().cloned().fold(f64::INFINITY, f64::min);
        days += 1;
        i += 24;
    }
    if days == 0 {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        return max - min;
    }
    (peaks - bases) / days as f64
}

/// Outcome of running the full cleaning pipeline on one building.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub outcome: IngestOutcome,
    pub missing_fraction: f64,
    pub outliers_replaced: usize,
}

/// resample -> fill gaps -> consumption cap -> outlier removal.
pub fn ingest_samples(
    samples: &[RawSample],
    policy: &IngestPolicy,
) -> Result<IngestReport, IngestError> {
    let hourly = resample_hourly(samples, policy.aggregation)?;
    let missing_fraction = hourly.missing_fraction();
    let filled = match fill_missing(&hourly, policy)? {
        IngestOutcome::Kept(series) => series,
        excluded => {
            return Ok(IngestReport {
                outcome: excluded,
                missing_fraction,
                outliers_replaced: 0,
            })
        }
    };
    let capped = match apply_consumption_cap(&filled, policy) {
        IngestOutcome::Kept(series) => series,
        excluded => {
            return Ok(IngestReport {
                outcome: excluded,
                missing_fraction,
                outliers_replaced: 0,
            })
        }
    };
    let (clean, outliers_replaced) = remove_outliers(&capped, policy);
    Ok(IngestReport {
        outcome: IngestOutcome::Kept(clean),
        missing_fraction,
        outliers_replaced,
    })
}
