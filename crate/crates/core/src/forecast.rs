//! Forecasters: persistence baselines, a direct linear multi-step model, a
//! moving-average decomposition linear model (trend head plus residual
//! head), gradient training with early stopping, and scoring of external
//! prediction files.
//!
//! Prediction interchange CSV: `building,day_index,hour,kind,p1,p2,...`
//! with `kind` one of `point` (p1 = value), `gaussian` (p1 = mean,
//! p2 = std), or `categorical` (sparse `index:value` fields over a sidecar
//! vocabulary). `day_index` d covers hours `[168 + 24*d, 192 + 24*d)` of the
//! building's series, matching the evaluation windowing.

use crate::domain::{LoadSeries, Window, CONTEXT_HOURS, HORIZON_HOURS};
use crate::metrics::{score_building, BuildingScore, ForecastDistribution, MetricsError, ScoreContext};
use crate::domain::BuildingRecord;
use nalgebra::{Cholesky, DMatrix};
use std::collections::BTreeMap;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no training windows")]
    EmptyTrainingSet,
    #[error("no validation windows")]
    EmptyValidationSet,
    #[error("schedule allows zero epochs")]
    NoEpochs,
    #[error("kernel size must be odd and at most {CONTEXT_HOURS}, got {0}")]
    BadKernel(usize),
    #[error("normal equations could not be solved")]
    SingularSystem,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A fitted (or fit-free) day-ahead forecaster.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError>;
}

/// Copies the last 24 context hours.
pub struct PreviousDay;

impl Forecaster for PreviousDay {
    fn name(&self) -> &str {
        "previous-day"
    }

    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError> {
        let context = window.context().values();
        Ok(ForecastDistribution::point(
            context[CONTEXT_HOURS - HORIZON_HOURS..].to_vec(),
        )?)
    }
}

/// Copies the same day one week back (the first 24 context hours).
pub struct PreviousWeek;

impl Forecaster for PreviousWeek {
    fn name(&self) -> &str {
        "previous-week"
    }

    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError> {
        let context = window.context().values();
        Ok(ForecastDistribution::point(
            context[..HORIZON_HOURS].to_vec(),
        )?)
    }
}

/// Gaussian per horizon hour `i`: mean and population standard deviation of
/// the load at that hour over the past 7 days,
/// `mu = 1/7 * sum_j x[t+i-24j]`, `sigma = sqrt(1/7 * sum_j (x[t+i-24j] - mu)^2)`.
pub struct PersistenceEnsemble;

impl Forecaster for PersistenceEnsemble {
    fn name(&self) -> &str {
        "persistence-ensemble"
    }

    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError> {
        let context = window.context().values();
        let mut params = Vec::with_capacity(HORIZON_HOURS);
        for h in 0..HORIZON_HOURS {
            let mut sum = 0.0;
            for j in 1..=7 {
                sum += context[h + CONTEXT_HOURS - 24 * j];
            }
            let mean = sum / 7.0;
            let mut sq = 0.0;
            for j in 1..=7 {
                sq += (context[h + CONTEXT_HOURS - 24 * j] - mean).powi(2);
            }
            params.push((mean, (sq / 7.0).sqrt()));
        }
        Ok(ForecastDistribution::gaussian(params)?)
    }
}

/// One supervised example: a week of context and the day-ahead target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainingPair {
    pub fn from_window(window: &Window) -> Self {
        Self {
            context: window.context().values().to_vec(),
            target: window.target().values().to_vec(),
        }
    }
}

pub fn training_pairs(windows: &[Window]) -> Vec<TrainingPair> {
    windows.iter().map(TrainingPair::from_window).collect()
}

/// Models trainable by full-batch gradient descent on MSE.
pub trait GradientModel: Clone {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    /// Mean squared error over all windows and horizon hours, plus its
    /// gradient with respect to [`params`](Self::params).
    fn loss_and_grad(&self, pairs: &[TrainingPair]) -> (f64, Vec<f64>);
    fn predict_context(&self, context: &[f64]) -> Vec<f64>;

    fn loss(&self, pairs: &[TrainingPair]) -> f64 {
        self.loss_and_grad(pairs).0
    }
}

/// Direct multi-step linear forecaster: all 24 future hours regressed on the
/// 168 past hours, one weight row per output hour.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDirectModel {
    /// Row-major 24 x 168.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub use_bias: bool,
}

impl LinearDirectModel {
    pub fn zeros(use_bias: bool) -> Self {
        Self {
            weights: vec![0.0; HORIZON_HOURS * CONTEXT_HOURS],
            bias: vec![0.0; HORIZON_HOURS],
            use_bias,
        }
    }
}

impl GradientModel for LinearDirectModel {
    fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        if self.use_bias {
            p.extend_from_slice(&self.bias);
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let w = HORIZON_HOURS * CONTEXT_HOURS;
        self.weights.copy_from_slice(&params[..w]);
        if self.use_bias {
            self.bias.copy_from_slice(&params[w..]);
        }
    }

    fn loss_and_grad(&self, pairs: &[TrainingPair]) -> (f64, Vec<f64>) {
        let w = HORIZON_HOURS * CONTEXT_HOURS;
        let n_terms = (pairs.len() * HORIZON_HOURS) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; if self.use_bias { w + HORIZON_HOURS } else { w }];
        for pair in pairs {
            let pred = self.predict_context(&pair.context);
            for o in 0..HORIZON_HOURS {
                let err = pred[o] - pair.target[o];
                loss += err * err;
                let scale = 2.0 * err / n_terms;
                let row = &mut grad[o * CONTEXT_HOURS..(o + 1) * CONTEXT_HOURS];
                for (g, &x) in row.iter_mut().zip(&pair.context) {
                    *g += scale * x;
                }
                if self.use_bias {
                    grad[w + o] += scale;
                }
            }
        }
        (loss / n_terms, grad)
    }

    fn predict_context(&self, context: &[f64]) -> Vec<f64> {
        (0..HORIZON_HOURS)
            .map(|o| {
                let row = &self.weights[o * CONTEXT_HOURS..(o + 1) * CONTEXT_HOURS];
                let dot: f64 = row.iter().zip(context).map(|(w, x)| w * x).sum();
                dot + if self.use_bias { self.bias[o] } else { 0.0 }
            })
            .collect()
    }
}

impl Forecaster for LinearDirectModel {
    fn name(&self) -> &str {
        "linear-direct"
    }

    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError> {
        Ok(ForecastDistribution::point(
            self.predict_context(window.context().values()),
        )?)
    }
}

/// Ridge damping applied to the normal equations for conditioning.
pub const OLS_RIDGE: f64 = 1e-8;

/// Fits the direct linear model by ordinary least squares per output hour,
/// sharing one damped normal-equation factorization across the 24 outputs.
pub fn fit_linear_direct(
    pairs: &[TrainingPair],
    use_bias: bool,
) -> Result<LinearDirectModel, ForecastError> {
    if pairs.is_empty() {
        return Err(ForecastError::EmptyTrainingSet);
    }
    let p = CONTEXT_HOURS + usize::from(use_bias);
    let n = pairs.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DMatrix::zeros(n, HORIZON_HOURS);
    for (r, pair) in pairs.iter().enumerate() {
        for (c, &v) in pair.context.iter().enumerate() {
            x[(r, c)] = v;
        }
        if use_bias {
            x[(r, CONTEXT_HOURS)] = 1.0;
        }
        for (c, &v) in pair.target.iter().enumerate() {
            y[(r, c)] = v;
        }
    }
    let mut gram = x.transpose() * &x;
    for i in 0..p {
        gram[(i, i)] += OLS_RIDGE;
    }
    let rhs = x.transpose() * y;
    let solution = match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or(ForecastError::SingularSystem)?,
    };
    let mut model = LinearDirectModel::zeros(use_bias);
    for o in 0..HORIZON_HOURS {
        for i in 0..CONTEXT_HOURS {
            model.weights[o * CONTEXT_HOURS + i] = solution[(i, o)];
        }
        if use_bias {
            model.bias[o] = solution[(CONTEXT_HOURS, o)];
        }
    }
    Ok(model)
}

/// Default moving-average kernel for the decomposition model.
pub const DLINEAR_KERNEL: usize = 25;

/// Decomposition linear model: the context is split into a moving-average
/// trend and a residual, each gets its own 24 x 168 linear head, and the
/// prediction is the sum of the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DLinearModel {
    pub kernel_size: usize,
    pub trend: LinearDirectModel,
    pub residual: LinearDirectModel,
}

impl DLinearModel {
    pub fn zeros(kernel_size: usize, use_bias: bool) -> Result<Self, ForecastError> {
        if kernel_size.is_multiple_of(2) || kernel_size > CONTEXT_HOURS {
            return Err(ForecastError::BadKernel(kernel_size));
        }
        Ok(Self {
            kernel_size,
            trend: LinearDirectModel::zeros(use_bias),
            residual: LinearDirectModel::zeros(use_bias),
        })
    }
}

/// Centered moving average with edge replication padding, and the residual
/// that restores the input exactly: `trend + residual == input`.
pub fn decompose(context: &[f64], kernel_size: usize) -> (Vec<f64>, Vec<f64>) {
    let half = kernel_size / 2;
    let n = context.len();
    let trend: Vec<f64> = (0..n)
        .map(|i| {
            let mut sum = 0.0;
            for offset in 0..kernel_size {
                let j = (i + offset).saturating_sub(half).min(n - 1);
                sum += context[j];
            }
            sum / kernel_size as f64
        })
        .collect();
    let residual = context
        .iter()
        .zip(&trend)
        .map(|(x, t)| x - t)
        .collect();
    (trend, residual)
}

impl GradientModel for DLinearModel {
    fn params(&self) -> Vec<f64> {
        let mut p = self.trend.params();
        p.extend(self.residual.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let half = params.len() / 2;
        self.trend.set_params(&params[..half]);
        self.residual.set_params(&params[half..]);
    }

    fn loss_and_grad(&self, pairs: &[TrainingPair]) -> (f64, Vec<f64>) {
        let n_terms = (pairs.len() * HORIZON_HOURS) as f64;
        let w = HORIZON_HOURS * CONTEXT_HOURS;
        let use_bias = self.trend.use_bias;
        let head_len = if use_bias { w + HORIZON_HOURS } else { w };
        let mut loss = 0.0;
        let mut grad = vec![0.0; 2 * head_len];
        for pair in pairs {
            let (trend_in, resid_in) = decompose(&pair.context, self.kernel_size);
            let trend_out = self.trend.predict_context(&trend_in);
            let resid_out = self.residual.predict_context(&resid_in);
            for o in 0..HORIZON_HOURS {
                let err = trend_out[o] + resid_out[o] - pair.target[o];
                loss += err * err;
                let scale = 2.0 * err / n_terms;
                for i in 0..CONTEXT_HOURS {
                    grad[o * CONTEXT_HOURS + i] += scale * trend_in[i];
                    grad[head_len + o * CONTEXT_HOURS + i] += scale * resid_in[i];
                }
                if use_bias {
                    grad[w + o] += scale;
                    grad[head_len + w + o] += scale;
                }
            }
        }
        (loss / n_terms, grad)
    }

    fn predict_context(&self, context: &[f64]) -> Vec<f64> {
        let (trend_in, resid_in) = decompose(context, self.kernel_size);
        let trend_out = self.trend.predict_context(&trend_in);
        let resid_out = self.residual.predict_context(&resid_in);
        trend_out
            .iter()
            .zip(&resid_out)
            .map(|(a, b)| a + b)
            .collect()
    }
}

impl Forecaster for DLinearModel {
    fn name(&self) -> &str {
        "dlinear"
    }

    fn predict(&self, window: &Window) -> Result<ForecastDistribution, ForecastError> {
        Ok(ForecastDistribution::point(
            self.predict_context(window.context().values()),
        )?)
    }
}

/// Epoch budget, patience, and the learning-rate grid swept during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rates: Vec<f64>,
    pub seed: u64,
}

pub const LEARNING_RATE_GRID: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

impl TrainSchedule {
    /// Budget used when adapting an already-fitted model.
    pub fn fine_tune(seed: u64) -> Self {
        Self {
            max_epochs: 25,
            patience: 2,
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            seed,
        }
    }

    /// Budget used when training from scratch.
    pub fn from_scratch(seed: u64) -> Self {
        Self {
            max_epochs: 100,
            patience: 2,
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            seed,
        }
    }
}

/// Early-stopping state machine: stop once the validation loss has failed to
/// improve (strictly) for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs_since_improvement: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1);
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's validation loss; returns true when training
    /// should stop. The first observation always counts as an improvement.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        self.epochs_since_improvement >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub learning_rate: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub chosen_learning_rate: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Full-batch gradient descent over the schedule's learning-rate grid with
/// early stopping on validation MSE; returns the best-validation snapshot
/// across the whole sweep (not the last iterate).
pub fn train_with_early_stopping<M: GradientModel>(
    initial: &M,
    train: &[TrainingPair],
    val: &[TrainingPair],
    schedule: &TrainSchedule,
) -> Result<(M, TrainingHistory), ForecastError> {
    if train.is_empty() {
        return Err(ForecastError::EmptyTrainingSet);
    }
    if val.is_empty() {
        return Err(ForecastError::EmptyValidationSet);
    }
    if schedule.max_epochs == 0 || schedule.learning_rates.is_empty() {
        return Err(ForecastError::NoEpochs);
    }
    let mut best: Option<(f64, Vec<f64>, f64, usize)> = None; // (val, params, lr, epoch)
    let mut records = Vec::new();
    for &lr in &schedule.learning_rates {
        let mut model = initial.clone();
        let mut params = model.params();
        let mut stopper = EarlyStopping::new(schedule.patience);
        for epoch in 1..=schedule.max_epochs {
            let (train_loss, grad) = model.loss_and_grad(train);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            model.set_params(&params);
            let val_loss = model.loss(val);
            records.push(EpochRecord {
                learning_rate: lr,
                epoch,
                train_loss,
                val_loss,
            });
            let is_best = best.as_ref().is_none_or(|(b, ..)| val_loss < *b);
            if is_best {
                best = Some((val_loss, params.clone(), lr, epoch));
            }
            if stopper.observe(val_loss) {
                break;
            }
        }
    }
    let (best_val_loss, best_params, chosen_learning_rate, best_epoch) =
        best.expect("at least one epoch ran");
    let mut model = initial.clone();
    model.set_params(&best_params);
    Ok((
        model,
        TrainingHistory {
            records,
            chosen_learning_rate,
            best_epoch,
            best_val_loss,
        },
    ))
}

/// Trains the decomposition model from zero-initialized heads.
pub fn fit_dlinear(
    train: &[TrainingPair],
    val: &[TrainingPair],
    kernel_size: usize,
    use_bias: bool,
    schedule: &TrainSchedule,
) -> Result<(DLinearModel, TrainingHistory), ForecastError> {
    let initial = DLinearModel::zeros(kernel_size, use_bias)?;
    train_with_early_stopping(&initial, train, val, schedule)
}

/// Result of scoring an external prediction file.
#[derive(Debug, Clone)]
pub struct PredictionFileOutcome {
    pub scores: Vec<BuildingScore>,
    /// One message per rejected row or incomplete/invalid forecast day.
    pub rejected_rows: Vec<String>,
    /// (building, reason) for buildings that could not be scored at all.
    pub skipped_buildings: Vec<(String, String)>,
}

enum ParsedForecast {
    Point(f64),
    Gaussian(f64, f64),
    Categorical(Vec<(usize, f64)>),
}

/// Parses and scores a prediction interchange file against corpus actuals.
/// Malformed rows are rejected individually; remaining complete days are
/// scored per building. `ctx_for` resolves the scoring context for each
/// building (a constant closure for one shared context, or per-type
/// transform parameters).
pub fn score_prediction_file<R: Read>(
    reader: R,
    buildings: &BTreeMap<String, (BuildingRecord, LoadSeries)>,
    ctx_for: &dyn Fn(&BuildingRecord) -> ScoreContext,
) -> Result<PredictionFileOutcome, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut rejected_rows = Vec::new();
    // building -> day -> hour -> forecast
    let mut parsed: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, ParsedForecast>>> =
        BTreeMap::new();
    let mut kinds: BTreeMap<String, &'static str> = BTreeMap::new();
    let mut contexts: BTreeMap<String, ScoreContext> = BTreeMap::new();
    let mut context_of = |id: &str| -> ScoreContext {
        contexts
            .entry(id.to_string())
            .or_insert_with(|| ctx_for(&buildings[id].0))
            .clone()
    };

    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected_rows.push(format!("row {row}: csv: {e}"));
                continue;
            }
        };
        let ctx = match record.get(0).map(str::trim) {
            Some(id) if buildings.contains_key(id) => context_of(id),
            _ => {
                rejected_rows.push(format!(
                    "row {row}: unknown building `{}`",
                    record.get(0).unwrap_or("").trim()
                ));
                continue;
            }
        };
        match parse_prediction_row(&record, buildings, &mut kinds, &ctx) {
            Ok((building, day, hour, forecast)) => {
                parsed
                    .entry(building)
                    .or_default()
                    .entry(day)
                    .or_default()
                    .insert(hour, forecast);
            }
            Err(reason) => rejected_rows.push(format!("row {row}: {reason}")),
        }
    }

    let mut scores = Vec::new();
    let mut skipped_buildings = Vec::new();
    for (building_id, days) in parsed {
        let (record, series) = &buildings[&building_id];
        let ctx = context_of(&building_id);
        let mut actuals = Vec::new();
        let mut forecasts = Vec::new();
        for (day, hours) in days {
            if hours.len() != HORIZON_HOURS {
                rejected_rows.push(format!(
                    "building {building_id} day {day}: only {} of 24 hours present",
                    hours.len()
                ));
                continue;
            }
            let target_start = CONTEXT_HOURS + HORIZON_HOURS * day;
            let dist = match assemble_day(&hours, kinds[&building_id], &ctx) {
                Ok(d) => d,
                Err(reason) => {
                    rejected_rows.push(format!("building {building_id} day {day}: {reason}"));
                    continue;
                }
            };
            actuals.extend_from_slice(
                &series.values()[target_start..target_start + HORIZON_HOURS],
            );
            forecasts.push(dist);
        }
        if forecasts.is_empty() {
            skipped_buildings.push((building_id, "no complete days".to_string()));
            continue;
        }
        match score_building(&building_id, &record.dataset_name, &actuals, &forecasts, &ctx) {
            Ok(score) => scores.push(score),
            Err(MetricsError::ZeroMeanActuals) => {
                skipped_buildings.push((building_id, "zero mean actual load".to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(PredictionFileOutcome {
        scores,
        rejected_rows,
        skipped_buildings,
    })
}

fn parse_prediction_row(
    record: &csv::StringRecord,
    buildings: &BTreeMap<String, (BuildingRecord, LoadSeries)>,
    kinds: &mut BTreeMap<String, &'static str>,
    ctx: &ScoreContext,
) -> Result<(String, usize, usize, ParsedForecast), String> {
    let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
    let building = field(0).to_string();
    let (_, series) = &buildings[&building];
    let day: usize = field(1).parse().map_err(|_| "bad day_index")?;
    let hour: usize = field(2).parse().map_err(|_| "bad hour")?;
    if hour >= HORIZON_HOURS {
        return Err(format!("hour {hour} outside the 24-hour horizon"));
    }
    if CONTEXT_HOURS + HORIZON_HOURS * (day + 1) > series.len() {
        return Err(format!("day_index {day} beyond the building's series"));
    }
    let kind = match field(3) {
        "point" => "point",
        "gaussian" => "gaussian",
        "categorical" => "categorical",
        other => return Err(format!("unknown kind `{other}`")),
    };
    if let Some(established) = kinds.get(&building) {
        if *established != kind {
            return Err(format!(
                "kind `{kind}` conflicts with `{established}` seen earlier for this building"
            ));
        }
    }
    let forecast = match kind {
        "point" => {
            let v: f64 = field(4).parse().map_err(|_| "bad point value")?;
            ParsedForecast::Point(v)
        }
        "gaussian" => {
            let mu: f64 = field(4).parse().map_err(|_| "bad mean")?;
            let sigma: f64 = field(5).parse().map_err(|_| "bad std")?;
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(format!("std {sigma} must be finite and >= 0"));
            }
            ParsedForecast::Gaussian(mu, sigma)
        }
        _ => {
            let vocab = ctx
                .vocab
                .as_ref()
                .ok_or("categorical rows need a vocabulary (--vocab)")?;
            let mut mass = Vec::new();
            for i in 4..record.len() {
                let cell = field(i);
                if cell.is_empty() {
                    continue;
                }
                let (idx, value) = cell
                    .split_once(':')
                    .ok_or_else(|| format!("bad sparse entry `{cell}`"))?;
                let idx: usize = idx.parse().map_err(|_| "bad token index")?;
                let value: f64 = value.parse().map_err(|_| "bad mass value")?;
                if idx >= vocab.vocab_size() {
                    return Err(format!("token {idx} outside the vocabulary"));
                }
                mass.push((idx, value));
            }
            ParsedForecast::Categorical(mass)
        }
    };
    kinds.insert(building.clone(), kind);
    Ok((building, day, hour, forecast))
}

fn assemble_day(
    hours: &BTreeMap<usize, ParsedForecast>,
    kind: &str,
    ctx: &ScoreContext,
) -> Result<ForecastDistribution, String> {
    match kind {
        "point" => {
            let values = hours
                .values()
                .map(|f| match f {
                    ParsedForecast::Point(v) => *v,
                    _ => unreachable!("kind is consistent per building"),
                })
                .collect();
            ForecastDistribution::point(values).map_err(|e| e.to_string())
        }
        "gaussian" => {
            let params = hours
                .values()
                .map(|f| match f {
                    ParsedForecast::Gaussian(mu, sigma) => (*mu, *sigma),
                    _ => unreachable!("kind is consistent per building"),
                })
                .collect();
            ForecastDistribution::gaussian(params).map_err(|e| e.to_string())
        }
        _ => {
            let vocab = ctx.vocab.as_ref().ok_or("missing vocabulary")?;
            let masses = hours
                .values()
                .map(|f| match f {
                    ParsedForecast::Categorical(sparse) => {
                        let mut mass = vec![0.0; vocab.vocab_size()];
                        for &(idx, value) in sparse {
                            mass[idx] += value;
                        }
                        mass
                    }
                    _ => unreachable!("kind is consistent per building"),
                })
                .collect();
            ForecastDistribution::categorical(masses).map_err(|e| e.to_string())
        }
    }
}
