//! Core library for day-ahead building load forecasting benchmarks.
//!
//! Everything operates on hourly energy series (kWh per hour). A forecasting
//! instance is a 192-hour window: 168 hours of context and a 24-hour target
//! day, plus calendar/geography covariates. The crate provides:
//!
//! - [`domain`]: series, building metadata, covariates, and window extraction
//! - [`ingest`]: CSV ingestion, hourly resampling, gap filling, outlier removal
//! - [`synth`]: seeded generator of simulated residential/commercial corpora
//! - [`store`]: sharded on-disk corpus with a fixed-width seekable window index
//! - [`transform`]: standard scaling and Box-Cox with Gaussian back-projection
//! - [`tokenizer`]: 1-D KMeans load quantizer with centroid merging
//! - [`metrics`]: NRMSE/NMAE/NMBE, Gaussian CRPS, categorical RPS, bootstrap
//!   aggregation, probability of improvement, performance profiles
//! - [`forecast`]: persistence baselines, direct linear and decomposition
//!   linear models, training with early stopping, prediction-file scoring

pub mod domain;
pub mod forecast;
pub mod ingest;
pub mod metrics;
pub mod store;
pub mod synth;
pub mod tokenizer;
pub mod transform;

pub use domain::{
    extract_covariates, sliding_windows, BuildingRecord, BuildingType, CovariateVector,
    LoadSeries, Window, CONTEXT_HOURS, HORIZON_HOURS, WINDOW_HOURS,
};
