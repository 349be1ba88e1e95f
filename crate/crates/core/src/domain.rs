//! Domain types shared across the benchmark: hourly load series, building
//! metadata, cyclically encoded covariates, and context/target windows.

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use std::f64::consts::TAU;
use thiserror::Error;

/// Hours of history available to a forecaster.
pub const CONTEXT_HOURS: usize = 168;
/// Hours in the forecast target (one day ahead).
pub const HORIZON_HOURS: usize = 24;
/// Total hours in one forecasting window.
pub const WINDOW_HOURS: usize = CONTEXT_HOURS + HORIZON_HOURS;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("load series must contain at least one value")]
    Empty,
    #[error("load value at hour {index} is {value}, expected finite and >= 0")]
    InvalidValue { index: usize, value: f64 },
    #[error("timestamp {0} is not aligned to a whole hour")]
    UnalignedTimestamp(DateTime<Utc>),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeRange(f64),
    #[error("window context/target are not contiguous or have wrong lengths")]
    MalformedWindow,
}

/// Hourly energy consumption in kWh with an hour-aligned UTC start.
///
/// Timestamps are implicit: hour `i` is `start + i` hours. Gap handling is an
/// ingestion concern; a constructed series has no holes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl LoadSeries {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>) -> Result<Self, DomainError> {
        if !is_hour_aligned(start) {
            return Err(DomainError::UnalignedTimestamp(start));
        }
        if values.is_empty() {
            return Err(DomainError::Empty);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DomainError::InvalidValue { index, value });
            }
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp of hour `i`.
    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    /// Copy of hours `[offset, offset + len)` as a standalone series.
    pub fn slice(&self, offset: usize, len: usize) -> Result<Self, DomainError> {
        if offset + len > self.values.len() || len == 0 {
            return Err(DomainError::Empty);
        }
        Ok(Self {
            start: self.timestamp(offset),
            values: self.values[offset..offset + len].to_vec(),
        })
    }
}

pub fn is_hour_aligned(ts: DateTime<Utc>) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuildingType {
    Residential,
    Commercial,
}

impl BuildingType {
    pub fn as_str(&self) -> &'static str {
        match self {
            BuildingType::Residential => "residential",
            BuildingType::Commercial => "commercial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residential" | "res" => Some(BuildingType::Residential),
            "commercial" | "com" => Some(BuildingType::Commercial),
            _ => None,
        }
    }
}

/// Identity and metadata for one building.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingRecord {
    pub id: String,
    pub building_type: BuildingType,
    pub latitude: f64,
    pub longitude: f64,
    /// Geographic sharding label (e.g. a census area id).
    pub region_id: String,
    /// Stratum label used for stratified bootstrap aggregation.
    pub dataset_name: String,
}

impl BuildingRecord {
    pub fn new(
        id: impl Into<String>,
        building_type: BuildingType,
        latitude: f64,
        longitude: f64,
        region_id: impl Into<String>,
        dataset_name: impl Into<String>,
    ) -> Result<Self, DomainError> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(DomainError::LatitudeRange(latitude));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(DomainError::LongitudeRange(longitude));
        }
        Ok(Self {
            id: id.into(),
            building_type,
            latitude,
            longitude,
            region_id: region_id.into(),
            dataset_name: dataset_name.into(),
        })
    }
}

/// Calendar and geography features for one hour, conditioning a forecast.
///
/// Calendar values are zero-indexed before encoding (hour 0-23, weekday 0-6
/// with Monday = 0, day of year 0-365) and mapped to the unit circle with
/// `(sin(2*pi*c/P), cos(2*pi*c/P))`. Day-of-year uses a fixed period of 366
/// so leap and non-leap years stay comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateVector {
    pub day_of_year_sin: f64,
    pub day_of_year_cos: f64,
    pub day_of_week_sin: f64,
    pub day_of_week_cos: f64,
    pub hour_of_day_sin: f64,
    pub hour_of_day_cos: f64,
    pub latitude_norm: f64,
    pub longitude_norm: f64,
    pub building_type_flag: f64,
}

fn cyclic(value: f64, period: f64) -> (f64, f64) {
    let angle = TAU * value / period;
    angle.sin_cos()
}

/// Covariates for an hour-aligned UTC timestamp and a building.
pub fn extract_covariates(ts: DateTime<Utc>, building: &BuildingRecord) -> CovariateVector {
    let (day_of_year_sin, day_of_year_cos) = cyclic(f64::from(ts.ordinal0()), 366.0);
    let (day_of_week_sin, day_of_week_cos) =
        cyclic(f64::from(ts.weekday().num_days_from_monday()), 7.0);
    let (hour_of_day_sin, hour_of_day_cos) = cyclic(f64::from(ts.hour()), 24.0);
    CovariateVector {
        day_of_year_sin,
        day_of_year_cos,
        day_of_week_sin,
        day_of_week_cos,
        hour_of_day_sin,
        hour_of_day_cos,
        latitude_norm: building.latitude / 90.0,
        longitude_norm: building.longitude / 180.0,
        building_type_flag: match building.building_type {
            BuildingType::Residential => 0.0,
            BuildingType::Commercial => 1.0,
        },
    }
}

/// One forecasting instance: a week of context, a day of target, and the
/// covariates for all 192 hours.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    context: LoadSeries,
    target: LoadSeries,
    covariates: Vec<CovariateVector>,
}

impl Window {
    pub fn new(
        context: LoadSeries,
        target: LoadSeries,
        covariates: Vec<CovariateVector>,
    ) -> Result<Self, DomainError> {
        let contiguous = target.start() == context.timestamp(context.len());
        if context.len() != CONTEXT_HOURS
            || target.len() != HORIZON_HOURS
            || covariates.len() != WINDOW_HOURS
            || !contiguous
        {
            return Err(DomainError::MalformedWindow);
        }
        Ok(Self {
            context,
            target,
            covariates,
        })
    }

    pub fn context(&self) -> &LoadSeries {
        &self.context
    }

    pub fn target(&self) -> &LoadSeries {
        &self.target
    }

    pub fn covariates(&self) -> &[CovariateVector] {
        &self.covariates
    }
}

/// Extracts 192-hour windows from `series` at the given stride (hours).
///
/// Window `k` starts at hour `k * stride`; a series shorter than 192 hours
/// yields nothing. The expected count is `(len - 192) / stride + 1`.
pub fn sliding_windows<'a>(
    series: &'a LoadSeries,
    building: &'a BuildingRecord,
    stride: usize,
) -> impl ExactSizeIterator<Item = Window> + 'a {
    assert!(stride >= 1, "stride must be at least one hour");
    let count = if series.len() >= WINDOW_HOURS {
        (series.len() - WINDOW_HOURS) / stride + 1
    } else {
        0
    };
    (0..count).map(move |k| {
        let offset = k * stride;
        let context = series.slice(offset, CONTEXT_HOURS).expect("in range");
        let target = series
            .slice(offset + CONTEXT_HOURS, HORIZON_HOURS)
            .expect("in range");
        let covariates = (0..WINDOW_HOURS)
            .map(|h| extract_covariates(series.timestamp(offset + h), building))
            .collect();
        Window::new(context, target, covariates).expect("windows are well-formed by construction")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(y: i32, mo: u32, d: u32, h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, mo, d, h, 0, 0).unwrap()
    }

    fn building(kind: BuildingType) -> BuildingRecord {
        BuildingRecord::new("b1", kind, 45.0, -90.0, "R000", "testset").unwrap()
    }

    #[test]
    fn series_rejects_negative_and_nonfinite() {
        let start = ts(2018, 1, 1, 0);
        assert!(LoadSeries::new(start, vec![1.0, -0.1]).is_err());
        assert!(LoadSeries::new(start, vec![f64::NAN]).is_err());
        assert!(LoadSeries::new(start, vec![]).is_err());
        assert!(LoadSeries::new(start, vec![0.0, 2.5]).is_ok());
    }

    #[test]
    fn series_rejects_unaligned_start() {
        let start = Utc.with_ymd_and_hms(2018, 1, 1, 0, 30, 0).unwrap();
        assert!(LoadSeries::new(start, vec![1.0]).is_err());
    }

    #[test]
    fn covariates_hour_zero_has_zero_phase() {
        let cov = extract_covariates(ts(2018, 1, 1, 0), &building(BuildingType::Residential));
        assert!((cov.hour_of_day_sin - 0.0).abs() < 1e-12);
        assert!((cov.hour_of_day_cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariates_hour_six_is_quarter_turn() {
        // Hand check: 2*pi*6/24 = pi/2, so (sin, cos) = (1, 0).
        let cov = extract_covariates(ts(2018, 1, 1, 6), &building(BuildingType::Residential));
        assert!((cov.hour_of_day_sin - 1.0).abs() < 1e-12);
        assert!(cov.hour_of_day_cos.abs() < 1e-12);
    }

    #[test]
    fn covariates_building_type_flag() {
        let res = extract_covariates(ts(2018, 1, 1, 0), &building(BuildingType::Residential));
        let com = extract_covariates(ts(2018, 1, 1, 0), &building(BuildingType::Commercial));
        assert_eq!(res.building_type_flag, 0.0);
        assert_eq!(com.building_type_flag, 1.0);
    }

    #[test]
    fn covariates_normalize_coordinates() {
        let cov = extract_covariates(ts(2018, 1, 1, 0), &building(BuildingType::Residential));
        assert_eq!(cov.latitude_norm, 0.5);
        assert_eq!(cov.longitude_norm, -0.5);
    }

    proptest! {
        #[test]
        fn covariate_pairs_lie_on_unit_circle(day in 0u32..730, hour in 0u32..24) {
            let t = ts(2019, 1, 1, 0) + Duration::days(i64::from(day)) + Duration::hours(i64::from(hour));
            let cov = extract_covariates(t, &building(BuildingType::Commercial));
            for (s, c) in [
                (cov.day_of_year_sin, cov.day_of_year_cos),
                (cov.day_of_week_sin, cov.day_of_week_cos),
                (cov.hour_of_day_sin, cov.hour_of_day_cos),
            ] {
                prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn hour_and_week_components_are_periodic(day in 0u32..365, hour in 0u32..24) {
            let t = ts(2018, 3, 1, 0) + Duration::days(i64::from(day)) + Duration::hours(i64::from(hour));
            let b = building(BuildingType::Residential);
            let base = extract_covariates(t, &b);
            let next_day = extract_covariates(t + Duration::hours(24), &b);
            let next_week = extract_covariates(t + Duration::days(7), &b);
            prop_assert!((base.hour_of_day_sin - next_day.hour_of_day_sin).abs() < 1e-12);
            prop_assert!((base.hour_of_day_cos - next_day.hour_of_day_cos).abs() < 1e-12);
            prop_assert!((base.day_of_week_sin - next_week.day_of_week_sin).abs() < 1e-12);
            prop_assert!((base.day_of_week_cos - next_week.day_of_week_cos).abs() < 1e-12);
        }
    }

    #[test]
    fn day_of_year_wraps_after_leap_year() {
        // 2020 has 366 days, so one full period elapses between these dates.
        let b = building(BuildingType::Residential);
        let a = extract_covariates(ts(2020, 1, 1, 0), &b);
        let z = extract_covariates(ts(2021, 1, 1, 0), &b);
        assert!((a.day_of_year_sin - z.day_of_year_sin).abs() < 1e-12);
        assert!((a.day_of_year_cos - z.day_of_year_cos).abs() < 1e-12);
    }

    fn ramp_series(len: usize) -> LoadSeries {
        LoadSeries::new(ts(2018, 1, 1, 0), (0..len).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts_at_boundaries() {
        let b = building(BuildingType::Residential);
        assert_eq!(sliding_windows(&ramp_series(192), &b, 24).len(), 1);
        assert_eq!(sliding_windows(&ramp_series(191), &b, 24).len(), 0);

        let windows: Vec<_> = sliding_windows(&ramp_series(216), &b, 24).collect();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].context().values()[0], 0.0);
        assert_eq!(windows[1].context().values()[0], 24.0);
    }

    proptest! {
        #[test]
        fn window_concat_reproduces_source(len in 192usize..500, stride in 1usize..48) {
            let series = ramp_series(len);
            let b = building(BuildingType::Commercial);
            let expected = if len >= 192 { (len - 192) / stride + 1 } else { 0 };
            let windows: Vec<_> = sliding_windows(&series, &b, stride).collect();
            prop_assert_eq!(windows.len(), expected);
            for (k, w) in windows.iter().enumerate() {
                let offset = k * stride;
                let mut joined = w.context().values().to_vec();
                joined.extend_from_slice(w.target().values());
                prop_assert_eq!(&joined[..], &series.values()[offset..offset + 192]);
                prop_assert_eq!(w.covariates().len(), 192);
                prop_assert_eq!(w.context().start(), series.timestamp(offset));
            }
        }
    }
}
