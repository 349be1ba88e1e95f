//! Run configuration: defaults, key-value config files, command-line
//! overrides, and the canonical text that gets hashed into run manifests.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ZeroShot,
    Transfer,
    ScoreFile,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::ZeroShot => "zero-shot",
            Task::Transfer => "transfer",
            Task::ScoreFile => "score-file",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecasterKind {
    PreviousDay,
    PreviousWeek,
    PersistenceEnsemble,
    LinearDirect,
    DLinear,
}

impl ForecasterKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "previous-day" => Self::PreviousDay,
            "previous-week" => Self::PreviousWeek,
            "persistence-ensemble" => Self::PersistenceEnsemble,
            "linear-direct" => Self::LinearDirect,
            "dlinear" => Self::DLinear,
            other => bail!(
                "unknown forecaster `{other}` (expected previous-day, previous-week, \
                 persistence-ensemble, linear-direct, or dlinear)"
            ),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PreviousDay => "previous-day",
            Self::PreviousWeek => "previous-week",
            Self::PersistenceEnsemble => "persistence-ensemble",
            Self::LinearDirect => "linear-direct",
            Self::DLinear => "dlinear",
        }
    }

    /// Whether the forecaster needs a training split.
    pub fn needs_fit(&self) -> bool {
        matches!(self, Self::LinearDirect | Self::DLinear)
    }
}

/// Settings for an evaluation run. Values come from defaults, then an
/// optional key-value config file, then command-line flags, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub task: Task,
    pub corpus: PathBuf,
    pub forecaster: ForecasterKind,
    pub out: PathBuf,
    pub n_boot: usize,
    pub seed: u64,
    pub sigma_floor: f64,
    /// When set, evaluate a seeded random sample of this many buildings per
    /// building type instead of the whole corpus.
    pub sample: Option<usize>,
    /// Baseline run directory for probability-of-improvement reporting
    /// (transfer task).
    pub baseline: Option<PathBuf>,
    pub max_epochs: Option<usize>,
    pub use_bias: bool,
    pub dlinear_kernel: usize,
}

impl EvalConfig {
    pub fn new(task: Task, corpus: PathBuf, forecaster: ForecasterKind, out: PathBuf) -> Self {
        Self {
            task,
            corpus,
            forecaster,
            out,
            n_boot: 1000,
            seed: 0,
            sigma_floor: loadbench_core::metrics::DEFAULT_SIGMA_FLOOR,
            sample: None,
            baseline: None,
            max_epochs: None,
            use_bias: true,
            dlinear_kernel: loadbench_core::forecast::DLINEAR_KERNEL,
        }
    }

    /// Label reported in manifests and summaries: the forecaster name, or
    /// `external` when scoring a prediction file.
    pub fn forecaster_label(&self) -> &'static str {
        match self.task {
            Task::ScoreFile => "external",
            _ => self.forecaster.as_str(),
        }
    }

    /// Canonical text form recorded (and hashed) in the run manifest.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task = {}", self.task.as_str());
        let _ = writeln!(out, "corpus = {}", self.corpus.display());
        let _ = writeln!(out, "forecaster = {}", self.forecaster_label());
        let _ = writeln!(out, "out = {}", self.out.display());
        let _ = writeln!(out, "n_boot = {}", self.n_boot);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "sigma_floor = {}", self.sigma_floor);
        if let Some(sample) = self.sample {
            let _ = writeln!(out, "sample = {sample}");
        }
        if let Some(baseline) = &self.baseline {
            let _ = writeln!(out, "baseline = {}", baseline.display());
        }
        if let Some(max_epochs) = self.max_epochs {
            let _ = writeln!(out, "max_epochs = {max_epochs}");
        }
        let _ = writeln!(out, "use_bias = {}", self.use_bias);
        let _ = writeln!(out, "dlinear_kernel = {}", self.dlinear_kernel);
        out
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    /// Checks that every referenced path exists.
    pub fn validate_paths(&self) -> Result<()> {
        if !self.corpus.is_dir() {
            bail!("corpus directory `{}` does not exist", self.corpus.display());
        }
        if let Some(baseline) = &self.baseline {
            if !baseline.is_dir() {
                bail!("baseline run `{}` does not exist", baseline.display());
            }
        }
        Ok(())
    }
}

/// Parses a `key = value` config file (`#` starts a comment).
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected `key = value`", i + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Applies config-file entries for keys the command line left unset.
pub struct Overlay<'a> {
    map: Option<&'a BTreeMap<String, String>>,
}

impl<'a> Overlay<'a> {
    pub fn new(map: Option<&'a BTreeMap<String, String>>) -> Self {
        Self { map }
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.map.and_then(|m| m.get(key)).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| anyhow::anyhow!("config key `{key}`: cannot parse `{raw}`")),
        }
    }
}
