//! Load tokenizer: 1-D KMeans over sampled load values followed by a merge
//! pass that collapses runs of centroids closer than a threshold `tau`.
//!
//! Merging is anchored: a run accumulates successive sorted centroids while
//! `sorted[i] - run_first < tau`, comparing against the *first* centroid of
//! the run rather than the previous one, and each run is replaced by its
//! mean. Encoding is a two-step lookup: nearest original centroid, then the
//! merged token that centroid maps to. Per-token bin widths (max minus min
//! load assigned to the token) feed the categorical ranked probability score.

use crate::domain::BuildingType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// KMeans runs on at most this many values, sampled with the fit seed.
pub const MAX_FIT_SAMPLES: usize = 1_000_000;
const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("k = {k} exceeds the number of distinct sample values ({distinct})")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("tau must be nonnegative and finite, got {0}")]
    BadTau(f64),
    #[error("no samples provided")]
    EmptySamples,
    #[error("KMeans produced non-distinct centroids; refit with a different seed")]
    DegenerateCentroids,
    #[error("malformed vocabulary file: {0}")]
    Parse(String),
}

/// Fitted token vocabulary: merged centroids with bin widths, plus the
/// original centroids and their merge mapping (encode needs both).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocabulary {
    merged_centroids: Vec<f64>,
    bin_widths: Vec<f64>,
    original_centroids: Vec<f64>,
    merge_map: Vec<usize>,
    k_initial: usize,
    tau: f64,
}

impl TokenVocabulary {
    /// Fits the vocabulary: seeded KMeans (kmeans++ init, Lloyd iterations)
    /// on a subsample, sort, anchored merge, then bin widths from the full
    /// sample set's assignments mapped through the merge.
    pub fn fit(samples: &[f64], k: usize, tau: f64, seed: u64) -> Result<Self, TokenizerError> {
        if samples.is_empty() {
            return Err(TokenizerError::EmptySamples);
        }
        if k < 2 {
            return Err(TokenizerError::KTooSmall(k));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(TokenizerError::BadTau(tau));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let subsample = subsample(samples, MAX_FIT_SAMPLES, &mut rng);
        let distinct = count_distinct(&subsample);
        if distinct < k {
            return Err(TokenizerError::TooFewDistinct { k, distinct });
        }

        let original_centroids = lloyd_1d(&subsample, k, &mut rng)?;
        let (merged_centroids, merge_map) = merge_centroids(&original_centroids, tau);

        // Bin extent per original centroid from the full sample set, then
        // unioned across each merged run (min of mins, max of maxes).
        let mut extents: Vec<Option<(f64, f64)>> = vec![None; k];
        for &x in samples {
            let i = nearest_index(&original_centroids, x);
            let e = extents[i].get_or_insert((x, x));
            e.0 = e.0.min(x);
            e.1 = e.1.max(x);
        }
        let mut merged_extents: Vec<Option<(f64, f64)>> = vec![None; merged_centroids.len()];
        for (i, extent) in extents.iter().enumerate() {
            if let Some((lo, hi)) = extent {
                let m = merged_extents[merge_map[i]].get_or_insert((*lo, *hi));
                m.0 = m.0.min(*lo);
                m.1 = m.1.max(*hi);
            }
        }
        let bin_widths = merged_extents
            .iter()
            .map(|e| e.map_or(0.0, |(lo, hi)| hi - lo))
            .collect();

        Ok(Self {
            merged_centroids,
            bin_widths,
            original_centroids,
            merge_map,
            k_initial: k,
            tau,
        })
    }

    /// Number of tokens after merging.
    pub fn vocab_size(&self) -> usize {
        self.merged_centroids.len()
    }

    pub fn k_initial(&self) -> usize {
        self.k_initial
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Merged centroids, strictly increasing.
    pub fn centroids(&self) -> &[f64] {
        &self.merged_centroids
    }

    /// Bin width per token: max minus min load value assigned to it.
    pub fn bin_widths(&self) -> &[f64] {
        &self.bin_widths
    }

    pub fn original_centroids(&self) -> &[f64] {
        &self.original_centroids
    }

    pub fn merge_map(&self) -> &[usize] {
        &self.merge_map
    }

    /// Token for a load value: nearest original centroid (ties to the lower
    /// index), mapped to its merged token.
    pub fn encode(&self, x: f64) -> usize {
        self.merge_map[nearest_index(&self.original_centroids, x)]
    }

    /// Load value for a token: the merged centroid.
    pub fn decode(&self, token: usize) -> f64 {
        self.merged_centroids[token]
    }

    /// Serializes as CSV with one row per *original* centroid so the two-step
    /// encode lookup survives a round trip. `token` is the merged token the
    /// original maps to and `bin_width_kwh` is that token's width. The first
    /// line is a `#` metadata comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# loadtok v1 k_initial={} tau={} vocab_size={}",
            self.k_initial,
            self.tau,
            self.vocab_size()
        );
        out.push_str("token,centroid_kwh,bin_width_kwh\n");
        for (i, &c) in self.original_centroids.iter().enumerate() {
            let t = self.merge_map[i];
            let _ = writeln!(out, "{t},{c},{}", self.bin_widths[t]);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .ok_or_else(|| TokenizerError::Parse("empty file".into()))?;
        let meta = meta
            .strip_prefix("# loadtok v1 ")
            .ok_or_else(|| TokenizerError::Parse("missing `# loadtok v1` metadata line".into()))?;
        let mut k_initial = None;
        let mut tau = None;
        let mut vocab_size = None;
        for field in meta.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| TokenizerError::Parse(format!("bad metadata field `{field}`")))?;
            match key {
                "k_initial" => k_initial = value.parse::<usize>().ok(),
                "tau" => tau = value.parse::<f64>().ok(),
                "vocab_size" => vocab_size = value.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (k_initial, tau, vocab_size) = match (k_initial, tau, vocab_size) {
            (Some(k), Some(t), Some(v)) => (k, t, v),
            _ => return Err(TokenizerError::Parse("incomplete metadata line".into())),
        };
        let header = lines.next();
        if header != Some("token,centroid_kwh,bin_width_kwh") {
            return Err(TokenizerError::Parse("missing column header".into()));
        }

        let mut original_centroids = Vec::new();
        let mut merge_map = Vec::new();
        let mut widths: BTreeMap<usize, f64> = BTreeMap::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let err = || TokenizerError::Parse(format!("bad row `{line}`"));
            let token: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
            let centroid: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
            let width: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
            original_centroids.push(centroid);
            merge_map.push(token);
            if let Some(prev) = widths.insert(token, width) {
                if prev != width {
                    return Err(TokenizerError::Parse(format!(
                        "inconsistent bin width for token {token}"
                    )));
                }
            }
        }
        if merge_map.len() != k_initial || widths.len() != vocab_size {
            return Err(TokenizerError::Parse(
                "row counts do not match metadata".into(),
            ));
        }
        // Merged centroids are means over each run of originals; recomputing
        // with the same left-to-right summation reproduces the fit bit-exactly.
        let mut merged_centroids = vec![0.0; vocab_size];
        let mut counts = vec![0usize; vocab_size];
        for (i, &t) in merge_map.iter().enumerate() {
            if t >= vocab_size {
                return Err(TokenizerError::Parse(format!("token {t} out of range")));
            }
            merged_centroids[t] += original_centroids[i];
            counts[t] += 1;
        }
        for (c, &n) in merged_centroids.iter_mut().zip(&counts) {
            if n == 0 {
                return Err(TokenizerError::Parse("empty merged token".into()));
            }
            *c /= n as f64;
        }
        let bin_widths = (0..vocab_size).map(|t| widths[&t]).collect();
        Ok(Self {
            merged_centroids,
            bin_widths,
            original_centroids,
            merge_map,
            k_initial,
            tau,
        })
    }
}

/// Mean absolute quantization error and vocabulary utilization.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionStats {
    pub mae_overall: f64,
    /// Keyed by building type name; only types present in the input appear.
    pub mae_by_type: BTreeMap<String, f64>,
    /// Sample count per token, length `vocab_size`.
    pub token_counts: Vec<u64>,
}

/// Quantization error statistics of `vocab` on labeled samples.
pub fn compression_stats(
    samples: &[(f64, BuildingType)],
    vocab: &TokenVocabulary,
) -> Result<CompressionStats, TokenizerError> {
    if samples.is_empty() {
        return Err(TokenizerError::EmptySamples);
    }
    let mut token_counts = vec![0u64; vocab.vocab_size()];
    let mut total_abs = 0.0;
    let mut by_type: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for &(x, kind) in samples {
        let t = vocab.encode(x);
        token_counts[t] += 1;
        let err = (x - vocab.decode(t)).abs();
        total_abs += err;
        let slot = by_type.entry(kind.as_str().to_string()).or_insert((0.0, 0));
        slot.0 += err;
        slot.1 += 1;
    }
    Ok(CompressionStats {
        mae_overall: total_abs / samples.len() as f64,
        mae_by_type: by_type
            .into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect(),
        token_counts,
    })
}

fn subsample(samples: &[f64], limit: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    if samples.len() <= limit {
        return samples.to_vec();
    }
    rand::seq::index::sample(rng, samples.len(), limit)
        .into_iter()
        .map(|i| samples[i])
        .collect()
}

fn count_distinct(samples: &[f64]) -> usize {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    sorted.len()
}

/// Index of the nearest centroid in a sorted list, ties to the lower index.
fn nearest_index(sorted_centroids: &[f64], x: f64) -> usize {
    let n = sorted_centroids.len();
    let right = sorted_centroids.partition_point(|&c| c < x);
    if right == 0 {
        return 0;
    }
    if right == n {
        return n - 1;
    }
    let left = right - 1;
    if (x - sorted_centroids[left]) <= (sorted_centroids[right] - x) {
        left
    } else {
        right
    }
}

/// Seeded kmeans++ initialization followed by Lloyd iterations, specialized
/// to one dimension. Returns sorted, strictly increasing centroids.
fn lloyd_1d(values: &[f64], k: usize, rng: &mut ChaCha12Rng) -> Result<Vec<f64>, TokenizerError> {
    let mut centroids = kmeanspp_init(values, k, rng);
    centroids.sort_by(|a, b| a.total_cmp(b));

    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for &x in values {
            let i = nearest_index(&centroids, x);
            sums[i] += x;
            counts[i] += 1;
        }
        let mut max_shift = 0.0f64;
        for i in 0..k {
            if counts[i] > 0 {
                let new = sums[i] / counts[i] as f64;
                max_shift = max_shift.max((new - centroids[i]).abs());
                centroids[i] = new;
            }
        }
        if max_shift <= 1e-12 {
            break;
        }
    }
    centroids.sort_by(|a, b| a.total_cmp(b));
    if centroids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TokenizerError::DegenerateCentroids);
    }
    Ok(centroids)
}

fn kmeanspp_init(values: &[f64], k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let n = values.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.random_range(0..n)]);
    let mut sq_dist: Vec<f64> = values
        .iter()
        .map(|&x| (x - centroids[0]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = sq_dist.iter().sum();
        let mut pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = None;
            for (i, &d) in sq_dist.iter().enumerate() {
                if d > 0.0 {
                    if u < d {
                        chosen = Some(i);
                        break;
                    }
                    u -= d;
                }
            }
            chosen
        } else {
            None
        };
        if pick.is_none() {
            // Floating-point slack: fall back to the farthest point.
            pick = sq_dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i);
        }
        let c = values[pick.expect("nonempty sample")];
        centroids.push(c);
        for (d, &x) in sq_dist.iter_mut().zip(values) {
            *d = d.min((x - c).powi(2));
        }
    }
    centroids
}

/// Anchored merge of sorted centroids: runs accumulate while the candidate is
/// within `tau` of the run's first member, each run collapses to its mean.
/// Returns merged centroids and the original -> merged index map.
pub fn merge_centroids(sorted_centroids: &[f64], tau: f64) -> (Vec<f64>, Vec<usize>) {
    let mut merged = Vec::new();
    let mut merge_map = Vec::with_capacity(sorted_centroids.len());
    let mut run_start = 0usize;
    for i in 1..=sorted_centroids.len() {
        let run_done =
            i == sorted_centroids.len() || sorted_centroids[i] - sorted_centroids[run_start] >= tau;
        if run_done {
            let run = &sorted_centroids[run_start..i];
            let mean = run.iter().sum::<f64>() / run.len() as f64;
            for _ in run {
                merge_map.push(merged.len());
            }
            merged.push(mean);
            run_start = i;
        }
    }
    (merged, merge_map)
}
