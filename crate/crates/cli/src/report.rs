//! Human-readable summary of a run directory, printed to stdout.

use crate::runfiles::{read_aggregate_json, AGGREGATE_FILE};
use anyhow::Result;
use std::fmt::Write as _;
use std::path::Path;

pub fn render_report(run_dir: &Path) -> Result<String> {
    let doc = read_aggregate_json(&run_dir.join(AGGREGATE_FILE))?;
    let mut out = String::new();
    let _ = writeln!(out, "run: {}", run_dir.display());
    let _ = writeln!(out, "task: {}  forecaster: {}", doc.task, doc.forecaster);
    let c = &doc.counts;
    let _ = writeln!(
        out,
        "buildings: {} scored / {} input ({} skipped, {} excluded zero-mean)",
        c.scored, c.input, c.skipped_short, c.excluded_zero_mean
    );
    if doc.flags.sigma_floored_hours > 0 || doc.flags.boxcox_clamped_hours > 0 {
        let _ = writeln!(
            out,
            "flags: {} sigma-floored hours, {} low-confidence (clamped) hours",
            doc.flags.sigma_floored_hours, doc.flags.boxcox_clamped_hours
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<8} {:>12} {:>12} {:>12} {:>6}",
        "metric", "median", "ci_low", "ci_high", "n"
    );
    for (name, metric) in &doc.metrics {
        let _ = writeln!(
            out,
            "{:<8} {:>12.4} {:>12.4} {:>12.4} {:>6}",
            name, metric.overall.median, metric.overall.ci_low, metric.overall.ci_high, metric.n
        );
        for (stratum, summary) in &metric.strata {
            let _ = writeln!(
                out,
                "  {:<22} {:>12.4}  [{:.4}, {:.4}]",
                stratum, summary.median, summary.ci_low, summary.ci_high
            );
        }
    }
    if let Some(improvement) = &doc.p_improvement {
        let _ = writeln!(out);
        let _ = writeln!(out, "probability of improvement vs baseline (percent):");
        for (metric, p) in improvement {
            let _ = writeln!(
                out,
                "  {:<8} overall {:>6.2}  ({} pairs)",
                metric, p.overall, p.n_pairs
            );
            for (stratum, value) in &p.strata {
                let _ = writeln!(out, "    {stratum:<20} {value:>6.2}");
            }
        }
    }
    Ok(out)
}
