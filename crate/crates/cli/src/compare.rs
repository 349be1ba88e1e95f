//! Pairwise comparison of two runs: probability of improvement per metric
//! (overall and per stratum) and a per-building delta table.

use crate::runfiles::{
    read_per_building_csv, PImprovementJson, ScoreRow, METRIC_NAMES, PER_BUILDING_FILE,
};
use anyhow::{Context, Result};
use loadbench_core::metrics::probability_of_improvement;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// `comparison.json` document. X is run A, Y is run B: `P(X < Y)` is the
/// percentage of paired buildings where run A scored strictly lower
/// (improved), per metric.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonJson {
    pub run_a: String,
    pub run_b: String,
    pub paired_buildings: usize,
    pub p_improvement: BTreeMap<String, PImprovementJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Pairs rows by building id and computes P(X<Y) per metric plus the delta
/// table CSV. Strata come from run A's dataset labels.
pub fn pair_and_improve(
    rows_a: &[ScoreRow],
    rows_b: &[ScoreRow],
) -> Result<(BTreeMap<String, PImprovementJson>, String)> {
    let by_id_b: BTreeMap<&str, &ScoreRow> =
        rows_b.iter().map(|r| (r.building.as_str(), r)).collect();
    let pairs: Vec<(&ScoreRow, &ScoreRow)> = rows_a
        .iter()
        .filter_map(|a| by_id_b.get(a.building.as_str()).map(|b| (a, *b)))
        .collect();

    let mut improvement = BTreeMap::new();
    for metric in METRIC_NAMES {
        let paired: Vec<(&ScoreRow, f64, f64)> = pairs
            .iter()
            .filter_map(|(a, b)| match (a.metric(metric), b.metric(metric)) {
                (Some(x), Some(y)) => Some((*a, x, y)),
                _ => None,
            })
            .collect();
        if paired.is_empty() {
            continue;
        }
        let xs: Vec<f64> = paired.iter().map(|(_, x, _)| *x).collect();
        let ys: Vec<f64> = paired.iter().map(|(_, _, y)| *y).collect();
        let overall = probability_of_improvement(&xs, &ys)?;
        let mut strata_values: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (row, x, y) in &paired {
            let slot = strata_values.entry(row.dataset.clone()).or_default();
            slot.0.push(*x);
            slot.1.push(*y);
        }
        let mut strata = BTreeMap::new();
        for (name, (xs, ys)) in strata_values {
            strata.insert(name, probability_of_improvement(&xs, &ys)?);
        }
        improvement.insert(
            metric.to_string(),
            PImprovementJson {
                overall,
                strata,
                n_pairs: paired.len(),
            },
        );
    }

    let mut deltas = String::from(
        "building,dataset,nrmse_a,nrmse_b,nrmse_delta,nmae_a,nmae_b,nmae_delta,\
         nmbe_a,nmbe_b,nmbe_delta,rps_a,rps_b,rps_delta\n",
    );
    for (a, b) in &pairs {
        let _ = write!(deltas, "{},{}", a.building, a.dataset);
        for metric in METRIC_NAMES {
            match (a.metric(metric), b.metric(metric)) {
                (Some(x), Some(y)) => {
                    let _ = write!(deltas, ",{x},{y},{}", x - y);
                }
                _ => deltas.push_str(",,,"),
            }
        }
        deltas.push('\n');
    }
    Ok((improvement, deltas))
}

/// Compares two run directories and writes `comparison.json` and
/// `deltas.csv` into `out`. Returns the comparison (with a warning when the
/// building sets are disjoint).
pub fn compare_runs(run_a: &Path, run_b: &Path, out: &Path) -> Result<ComparisonJson> {
    let rows_a = read_per_building_csv(&run_a.join(PER_BUILDING_FILE))
        .context("run A is missing per_building.csv")?;
    let rows_b = read_per_building_csv(&run_b.join(PER_BUILDING_FILE))
        .context("run B is missing per_building.csv")?;
    let (p_improvement, deltas) = pair_and_improve(&rows_a, &rows_b)?;
    let paired = p_improvement
        .values()
        .map(|p| p.n_pairs)
        .max()
        .unwrap_or(0);
    let comparison = ComparisonJson {
        run_a: run_a.display().to_string(),
        run_b: run_b.display().to_string(),
        paired_buildings: paired,
        p_improvement,
        warning: (paired == 0)
            .then(|| "no buildings in common between the two runs".to_string()),
    };
    std::fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(&comparison)?;
    text.push('\n');
    std::fs::write(out.join("comparison.json"), text)?;
    std::fs::write(out.join("deltas.csv"), deltas)?;
    Ok(comparison)
}
