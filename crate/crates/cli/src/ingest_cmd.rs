//! The `ingest` command: clean raw per-building meter CSVs into a corpus
//! directory in the store schema.
//!
//! Raw layout: one `<building id>.csv` per building (header `timestamp,kwh`)
//! next to a metadata CSV. Cleaned buildings are grouped into shards by
//! (region, building type, series start, series length) so that every column
//! of a shard covers the same hours.

use anyhow::{bail, Context, Result};
use loadbench_core::domain::{BuildingRecord, LoadSeries};
use loadbench_core::ingest::{
    ingest_samples, parse_building_csv, parse_metadata_csv, IngestOutcome, IngestPolicy,
};
use loadbench_core::store::{write_shard, Manifest, ShardEntry, METADATA_FILE, SHARD_DIR};
use chrono::Datelike;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub struct IngestSummary {
    pub input: usize,
    pub kept: usize,
    pub excluded: usize,
    pub failed: usize,
    pub report_text: String,
}

pub fn run_ingest(
    raw_dir: &Path,
    metadata_path: &Path,
    out_dir: &Path,
    policy: &IngestPolicy,
) -> Result<IngestSummary> {
    let metadata_file = std::fs::File::open(metadata_path)
        .with_context(|| format!("cannot open metadata `{}`", metadata_path.display()))?;
    let records = parse_metadata_csv(metadata_file)?;
    if records.is_empty() {
        bail!("metadata file lists no buildings");
    }

    let mut report = String::from("# ingest report\n");
    let mut kept: Vec<(BuildingRecord, LoadSeries)> = Vec::new();
    let mut excluded = 0usize;
    let mut failed = 0usize;
    for record in &records {
        let csv_path = raw_dir.join(format!("{}.csv", record.id));
        let outcome = std::fs::read(&csv_path)
            .map_err(|e| anyhow::anyhow!("{e}"))
            .and_then(|bytes| Ok(parse_building_csv(bytes.as_slice())?))
            .and_then(|samples| Ok(ingest_samples(&samples, policy)?));
        match outcome {
            Ok(result) => match result.outcome {
                IngestOutcome::Kept(series) => {
                    let _ = writeln!(
                        report,
                        "kept {} ({} h, missing {:.4}, outliers replaced {})",
                        record.id,
                        series.len(),
                        result.missing_fraction,
                        result.outliers_replaced
                    );
                    kept.push((record.clone(), series));
                }
                IngestOutcome::Excluded(reason) => {
                    excluded += 1;
                    let _ = writeln!(report, "excluded {}: {reason}", record.id);
                }
            },
            Err(e) => {
                failed += 1;
                let _ = writeln!(report, "failed {}: {e}", record.id);
            }
        }
    }
    let _ = writeln!(
        report,
        "summary: input {} kept {} excluded {excluded} failed {failed}",
        records.len(),
        kept.len()
    );
    assert_eq!(
        kept.len() + excluded + failed,
        records.len(),
        "building-count conservation violated in ingest"
    );

    write_corpus(out_dir, &kept)?;
    std::fs::write(out_dir.join("ingest_report.txt"), &report)?;
    Ok(IngestSummary {
        input: records.len(),
        kept: kept.len(),
        excluded,
        failed,
        report_text: report,
    })
}

/// Writes cleaned buildings as a corpus: shards grouped by
/// (region, type, start, hours), plus metadata and manifest.
fn write_corpus(out_dir: &Path, kept: &[(BuildingRecord, LoadSeries)]) -> Result<()> {
    std::fs::create_dir_all(out_dir.join(SHARD_DIR))?;

    type GroupKey = (String, &'static str, i64, usize);
    let mut groups: BTreeMap<GroupKey, Vec<(BuildingRecord, LoadSeries)>> = BTreeMap::new();
    for (record, series) in kept {
        let key = (
            record.region_id.clone(),
            record.building_type.as_str(),
            series.start().timestamp(),
            series.len(),
        );
        groups.entry(key).or_default().push((record.clone(), series.clone()));
    }

    let mut metadata = String::from("id,dataset,building_type,latitude,longitude,region_id\n");
    let mut manifest = Manifest::default();
    let mut name_counter: BTreeMap<(String, &'static str, i32), usize> = BTreeMap::new();
    for ((region, type_name, _, n_hours), mut members) in groups {
        members.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let start = members[0].1.start();
        let year = start.year();
        let k = name_counter
            .entry((region.clone(), type_name, year))
            .or_insert(0);
        let rel = if *k == 0 {
            format!("{SHARD_DIR}/shard_{region}_{type_name}_{year}.csv")
        } else {
            format!("{SHARD_DIR}/shard_{region}_{type_name}_{year}_{k}.csv")
        };
        *k += 1;
        let columns: Vec<(String, Vec<f64>)> = members
            .iter()
            .map(|(r, s)| (r.id.clone(), s.values().to_vec()))
            .collect();
        write_shard(&out_dir.join(&rel), start, &columns)?;
        for (r, _) in &members {
            let _ = writeln!(
                metadata,
                "{},{},{},{},{},{}",
                r.id,
                r.dataset_name,
                r.building_type.as_str(),
                r.latitude,
                r.longitude,
                r.region_id
            );
        }
        manifest.shards.push(ShardEntry {
            path: rel,
            region_id: region,
            building_type: members[0].0.building_type,
            year_tag: year.to_string(),
            n_buildings: members.len(),
            n_hours,
        });
    }
    std::fs::write(out_dir.join(METADATA_FILE), metadata)?;
    manifest.write(out_dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use loadbench_core::store::load_building_series;

    fn write_raw_building(dir: &Path, id: &str, hours: usize, spike: Option<usize>) {
        let mut csv = String::from("timestamp,kwh\n");
        for h in 0..hours {
            let day = h / 24 + 1;
            let hod = h % 24;
            let value = if spike == Some(h) {
                50.0
            } else {
                2.0 + (hod as f64 / 12.0)
            };
            let _ = writeln!(csv, "2018-01-{day:02} {hod:02}:00:00,{value}");
        }
        std::fs::write(dir.join(format!("{id}.csv")), csv).unwrap();
    }

    #[test]
    fn ingest_cleans_and_writes_readable_corpus() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_raw_building(raw.path(), "b1", 240, Some(100));
        write_raw_building(raw.path(), "b2", 240, None);
        let metadata = "id,dataset,building_type,latitude,longitude,region_id\n\
                        b1,setA,residential,40.0,-100.0,R001\n\
                        b2,setA,commercial,41.0,-101.0,R001\n\
                        ghost,setA,residential,40.0,-100.0,R001\n";
        let meta_path = raw.path().join("meta.csv");
        std::fs::write(&meta_path, metadata).unwrap();

        let summary =
            run_ingest(raw.path(), &meta_path, out.path(), &IngestPolicy::default()).unwrap();
        assert_eq!(summary.input, 3);
        assert_eq!(summary.kept, 2);
        assert_eq!(summary.failed, 1); // ghost has no csv

        let buildings = load_building_series(out.path()).unwrap();
        assert_eq!(buildings.len(), 2);
        assert_eq!(buildings["b1"].1.len(), 240);
        // The spike was replaced during cleaning.
        assert!(buildings["b1"].1.values().iter().all(|&v| v < 10.0));
    }
}
