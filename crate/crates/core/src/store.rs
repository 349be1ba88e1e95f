//! Sharded on-disk corpus with an O(1)-seek window index.
//!
//! A corpus directory holds:
//!
//! - `metadata.csv` - building metadata (ingest schema)
//! - `shards/*.csv` - one CSV per (region, building type, year tag): a
//!   `timestamp` column plus one column per building id, every column with
//!   exactly `n_hours` rows
//! - `manifest.txt` - key-value text mapping shard ordinals to paths and
//!   recording held-out regions
//! - `index.idx` - fixed-width window index (see below)
//!
//! Index format, bit-exact: a 32-byte header `STLFIDX v1 <entry_count>`
//! padded with spaces to 31 bytes plus a newline, then one 19-byte line per
//! entry: `SSSSSS BBBBB HHHHH\n` (zero-padded shard ordinal, building
//! column, window start hour). Entry `n` lives at byte `32 + 19*n`, so any
//! window is addressable with a single seek and a 19-byte read.

use crate::domain::{
    extract_covariates, BuildingRecord, BuildingType, LoadSeries, Window, CONTEXT_HOURS,
    HORIZON_HOURS, WINDOW_HOURS,
};
use crate::ingest::{parse_metadata_csv, parse_timestamp};
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const INDEX_HEADER_BYTES: u64 = 32;
pub const INDEX_LINE_BYTES: u64 = 19;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METADATA_FILE: &str = "metadata.csv";
pub const INDEX_FILE: &str = "index.idx";
pub const SHARD_DIR: &str = "shards";
/// Hours withheld from index enumeration when the two-week validation
/// holdout is enabled.
pub const VALIDATION_HOLDOUT_HOURS: usize = 336;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("entry {0} out of range, index holds {1} entries")]
    OutOfRange(usize, usize),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("shard {path}: {reason}")]
    BadShard { path: PathBuf, reason: String },
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Manifest entry for one shard file.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardEntry {
    /// Path relative to the corpus directory.
    pub path: String,
    pub region_id: String,
    pub building_type: BuildingType,
    pub year_tag: String,
    pub n_buildings: usize,
    pub n_hours: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub shards: Vec<ShardEntry>,
    /// Regions excluded from index enumeration (held-out test regions).
    pub holdout_regions: BTreeSet<String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# corpus manifest\nversion = 1\n");
        for (i, s) in self.shards.iter().enumerate() {
            out.push_str(&format!("shard.{i}.path = {}\n", s.path));
            out.push_str(&format!("shard.{i}.region = {}\n", s.region_id));
            out.push_str(&format!("shard.{i}.type = {}\n", s.building_type.as_str()));
            out.push_str(&format!("shard.{i}.year = {}\n", s.year_tag));
            out.push_str(&format!("shard.{i}.buildings = {}\n", s.n_buildings));
            out.push_str(&format!("shard.{i}.hours = {}\n", s.n_hours));
        }
        for region in &self.holdout_regions {
            out.push_str(&format!("holdout_region = {region}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, StoreError> {
        let mut fields: BTreeMap<(usize, String), String> = BTreeMap::new();
        let mut holdout_regions = BTreeSet::new();
        let mut max_ordinal = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StoreError::BadManifest(format!("bad line `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "holdout_region" {
                holdout_regions.insert(value.to_string());
                continue;
            }
            if key == "version" {
                if value != "1" {
                    return Err(StoreError::BadManifest(format!(
                        "unsupported version `{value}`"
                    )));
                }
                continue;
            }
            if let Some(rest) = key.strip_prefix("shard.") {
                let (ordinal, field) = rest
                    .split_once('.')
                    .ok_or_else(|| StoreError::BadManifest(format!("bad key `{key}`")))?;
                let ordinal: usize = ordinal
                    .parse()
                    .map_err(|_| StoreError::BadManifest(format!("bad ordinal in `{key}`")))?;
                max_ordinal = Some(max_ordinal.map_or(ordinal, |m: usize| m.max(ordinal)));
                fields.insert((ordinal, field.to_string()), value.to_string());
            } else {
                return Err(StoreError::BadManifest(format!("unknown key `{key}`")));
            }
        }
        let mut shards = Vec::new();
        if let Some(max) = max_ordinal {
            for i in 0..=max {
                let get = |field: &str| {
                    fields.get(&(i, field.to_string())).cloned().ok_or_else(|| {
                        StoreError::BadManifest(format!("shard {i} missing `{field}`"))
                    })
                };
                let parse_count = |field: &str| -> Result<usize, StoreError> {
                    get(field)?.parse().map_err(|_| {
                        StoreError::BadManifest(format!("shard {i}: `{field}` not a count"))
                    })
                };
                shards.push(ShardEntry {
                    path: get("path")?,
                    region_id: get("region")?,
                    building_type: BuildingType::parse(&get("type")?).ok_or_else(|| {
                        StoreError::BadManifest(format!("shard {i}: bad building type"))
                    })?,
                    year_tag: get("year")?,
                    n_buildings: parse_count("buildings")?,
                    n_hours: parse_count("hours")?,
                });
            }
        }
        Ok(Self {
            shards,
            holdout_regions,
        })
    }

    pub fn write(&self, corpus_dir: &Path) -> Result<(), StoreError> {
        let path = corpus_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(io_err(&path))
    }

    pub fn read(corpus_dir: &Path) -> Result<Self, StoreError> {
        let path = corpus_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Self::from_text(&text)
    }
}

/// In-memory contents of one shard file.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardData {
    pub start: DateTime<Utc>,
    pub building_ids: Vec<String>,
    /// One value series per building, each of equal length.
    pub columns: Vec<Vec<f64>>,
}

impl ShardData {
    pub fn n_hours(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Writes a shard CSV: `timestamp` column plus one column per building.
pub fn write_shard(
    path: &Path,
    start: DateTime<Utc>,
    columns: &[(String, Vec<f64>)],
) -> Result<(), StoreError> {
    let n_hours = columns.first().map_or(0, |(_, v)| v.len());
    if columns.iter().any(|(_, v)| v.len() != n_hours) {
        return Err(StoreError::BadShard {
            path: path.to_path_buf(),
            reason: "building columns have unequal lengths".into(),
        });
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |line: &str| w.write_all(line.as_bytes()).map_err(io_err(path));
    let header = std::iter::once("timestamp".to_string())
        .chain(columns.iter().map(|(id, _)| id.clone()))
        .collect::<Vec<_>>()
        .join(",");
    write(&header)?;
    write("\n")?;
    for hour in 0..n_hours {
        let ts = start + chrono::Duration::hours(hour as i64);
        let mut line = ts.format("%Y-%m-%d %H:%M:%S").to_string();
        for (_, values) in columns {
            line.push(',');
            line.push_str(&format!("{}", values[hour]));
        }
        line.push('\n');
        write(&line)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a shard CSV back into memory.
pub fn read_shard(path: &Path) -> Result<ShardData, StoreError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |reason: &str| StoreError::BadShard {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("timestamp") {
        return Err(bad("first column must be `timestamp`"));
    }
    let building_ids: Vec<String> = cols.map(str::to_string).collect();
    if building_ids.is_empty() {
        return Err(bad("no building columns"));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); building_ids.len()];
    let mut start = None;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let ts_text = fields.next().unwrap_or("");
        let ts = parse_timestamp(ts_text)
            .ok_or_else(|| bad(&format!("row {}: bad timestamp `{ts_text}`", i + 2)))?;
        if start.is_none() {
            start = Some(ts);
        }
        for column in columns.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| bad(&format!("row {}: too few fields", i + 2)))?;
            let value: f64 = field
                .parse()
                .map_err(|_| bad(&format!("row {}: bad value `{field}`", i + 2)))?;
            column.push(value);
        }
        if fields.next().is_some() {
            return Err(bad(&format!("row {}: too many fields", i + 2)));
        }
    }
    let start = start.ok_or_else(|| bad("no data rows"))?;
    Ok(ShardData {
        start,
        building_ids,
        columns,
    })
}

/// Index entry: which shard, which building column, which window start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub shard_ordinal: usize,
    pub building_column: usize,
    pub window_start_hour: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexBuildOptions {
    /// Hours between successive window starts.
    pub stride: usize,
    /// Hours at the end of every shard excluded from enumeration; no emitted
    /// window overlaps them. Zero disables the validation holdout.
    pub holdout_hours: usize,
    pub seed: u64,
}

impl Default for IndexBuildOptions {
    fn default() -> Self {
        Self {
            stride: HORIZON_HOURS,
            holdout_hours: 0,
            seed: 0,
        }
    }
}

/// Enumerates every (shard, building, window start) triple outside held-out
/// regions and the holdout tail, shuffles with the seeded RNG, and writes the
/// fixed-width index. Returns the entry count.
pub fn build_index(
    manifest: &Manifest,
    options: &IndexBuildOptions,
    out_path: &Path,
) -> Result<usize, StoreError> {
    assert!(options.stride >= 1, "stride must be at least one hour");
    let mut entries: Vec<IndexEntry> = Vec::new();
    for (shard_ordinal, shard) in manifest.shards.iter().enumerate() {
        if manifest.holdout_regions.contains(&shard.region_id) {
            continue;
        }
        let usable = shard.n_hours.saturating_sub(options.holdout_hours);
        if usable < WINDOW_HOURS {
            continue;
        }
        let last_start = usable - WINDOW_HOURS;
        for building_column in 0..shard.n_buildings {
            let mut start = 0;
            while start <= last_start {
                entries.push(IndexEntry {
                    shard_ordinal,
                    building_column,
                    window_start_hour: start,
                });
                start += options.stride;
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(options.seed);
    entries.shuffle(&mut rng);

    let file = File::create(out_path).map_err(io_err(out_path))?;
    let mut w = BufWriter::new(file);
    let header = format!("{:<31}\n", format!("STLFIDX v1 {}", entries.len()));
    debug_assert_eq!(header.len() as u64, INDEX_HEADER_BYTES);
    w.write_all(header.as_bytes()).map_err(io_err(out_path))?;
    for e in &entries {
        if e.shard_ordinal > 999_999 || e.building_column > 99_999 || e.window_start_hour > 99_999
        {
            return Err(StoreError::Integrity(
                "entry field exceeds fixed-width index capacity".into(),
            ));
        }
        let line = format!(
            "{:06} {:05} {:05}\n",
            e.shard_ordinal, e.building_column, e.window_start_hour
        );
        debug_assert_eq!(line.len() as u64, INDEX_LINE_BYTES);
        w.write_all(line.as_bytes()).map_err(io_err(out_path))?;
    }
    w.flush().map_err(io_err(out_path))?;
    Ok(entries.len())
}

/// Seekable reader over the fixed-width index. Each entry access costs one
/// seek and one 19-byte read regardless of position; the instrumentation
/// counters let tests assert that.
pub struct IndexReader {
    file: File,
    path: PathBuf,
    count: usize,
    bytes_read: u64,
    read_calls: u64,
}

impl IndexReader {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut file = File::open(path).map_err(io_err(path))?;
        let mut header = [0u8; INDEX_HEADER_BYTES as usize];
        file.read_exact(&mut header)
            .map_err(|_| StoreError::Integrity("index shorter than its header".into()))?;
        let text = std::str::from_utf8(&header)
            .map_err(|_| StoreError::Integrity("index header is not UTF-8".into()))?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some("STLFIDX") || parts.next() != Some("v1") {
            return Err(StoreError::Integrity("bad index magic".into()));
        }
        let count: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| StoreError::Integrity("bad entry count in index header".into()))?;
        let expected = INDEX_HEADER_BYTES + count as u64 * INDEX_LINE_BYTES;
        let actual = file.metadata().map_err(io_err(path))?.len();
        if actual != expected {
            return Err(StoreError::Integrity(format!(
                "index holds {actual} bytes, header implies {expected}"
            )));
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
            count,
            bytes_read: INDEX_HEADER_BYTES,
            read_calls: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Reads entry `n` with a direct seek; no preceding lines are touched.
    pub fn entry(&mut self, n: usize) -> Result<IndexEntry, StoreError> {
        if n >= self.count {
            return Err(StoreError::OutOfRange(n, self.count));
        }
        let offset = INDEX_HEADER_BYTES + n as u64 * INDEX_LINE_BYTES;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(io_err(&self.path))?;
        let mut line = [0u8; INDEX_LINE_BYTES as usize];
        self.file
            .read_exact(&mut line)
            .map_err(|_| StoreError::Integrity(format!("index truncated at entry {n}")))?;
        self.bytes_read += INDEX_LINE_BYTES;
        self.read_calls += 1;
        let text = std::str::from_utf8(&line)
            .map_err(|_| StoreError::Integrity(format!("entry {n} is not UTF-8")))?;
        let mut fields = text.trim_end().split(' ');
        let mut next = || -> Result<usize, StoreError> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| StoreError::Integrity(format!("malformed entry {n}: `{text}`")))
        };
        Ok(IndexEntry {
            shard_ordinal: next()?,
            building_column: next()?,
            window_start_hour: next()?,
        })
    }

    /// Total bytes read from the index file, header included.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    pub fn read_calls(&self) -> u64 {
        self.read_calls
    }
}

/// Random access to corpus windows: manifest + metadata + index + lazily
/// loaded shards.
pub struct CorpusReader {
    dir: PathBuf,
    manifest: Manifest,
    metadata: BTreeMap<String, BuildingRecord>,
    index: IndexReader,
    shards: HashMap<usize, ShardData>,
}

impl CorpusReader {
    pub fn open(corpus_dir: &Path) -> Result<Self, StoreError> {
        let manifest = Manifest::read(corpus_dir)?;
        let metadata = read_metadata(corpus_dir)?;
        let index = IndexReader::open(&corpus_dir.join(INDEX_FILE))?;
        Ok(Self {
            dir: corpus_dir.to_path_buf(),
            manifest,
            metadata,
            index,
            shards: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn index_bytes_read(&self) -> u64 {
        self.index.bytes_read()
    }

    pub fn index_read_calls(&self) -> u64 {
        self.index.read_calls()
    }

    fn shard_data(&mut self, ordinal: usize) -> Result<&ShardData, StoreError> {
        if ordinal >= self.manifest.shards.len() {
            return Err(StoreError::Integrity(format!(
                "index references shard {ordinal}, manifest has {}",
                self.manifest.shards.len()
            )));
        }
        if !self.shards.contains_key(&ordinal) {
            let entry = &self.manifest.shards[ordinal];
            let data = read_shard(&self.dir.join(&entry.path))?;
            if data.building_ids.len() != entry.n_buildings || data.n_hours() != entry.n_hours {
                return Err(StoreError::Integrity(format!(
                    "shard {ordinal} shape {}x{} does not match manifest {}x{}",
                    data.building_ids.len(),
                    data.n_hours(),
                    entry.n_buildings,
                    entry.n_hours
                )));
            }
            self.shards.insert(ordinal, data);
        }
        Ok(&self.shards[&ordinal])
    }

    /// Fetches window `n` of the shuffled index.
    pub fn fetch(&mut self, n: usize) -> Result<Window, StoreError> {
        let entry = self.index.entry(n)?;
        let shard = self.shard_data(entry.shard_ordinal)?;
        if entry.building_column >= shard.building_ids.len()
            || entry.window_start_hour + WINDOW_HOURS > shard.n_hours()
        {
            return Err(StoreError::Integrity(format!(
                "entry {n} points outside its shard"
            )));
        }
        let building_id = shard.building_ids[entry.building_column].clone();
        let column = &shard.columns[entry.building_column];
        let start = shard.start + chrono::Duration::hours(entry.window_start_hour as i64);
        let slice = column
            [entry.window_start_hour..entry.window_start_hour + WINDOW_HOURS]
            .to_vec();
        let record = self.metadata.get(&building_id).ok_or_else(|| {
            StoreError::Integrity(format!("building `{building_id}` missing from metadata"))
        })?;
        let series = LoadSeries::new(start, slice)?;
        let context = series.slice(0, CONTEXT_HOURS)?;
        let target = series.slice(CONTEXT_HOURS, HORIZON_HOURS)?;
        let covariates = (0..WINDOW_HOURS)
            .map(|h| extract_covariates(series.timestamp(h), record))
            .collect();
        Ok(Window::new(context, target, covariates)?)
    }
}

/// Loads `metadata.csv` keyed by building id.
pub fn read_metadata(corpus_dir: &Path) -> Result<BTreeMap<String, BuildingRecord>, StoreError> {
    let path = corpus_dir.join(METADATA_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let records = parse_metadata_csv(file)?;
    let mut map = BTreeMap::new();
    for record in records {
        if map.insert(record.id.clone(), record).is_some() {
            return Err(StoreError::Integrity("duplicate building id in metadata".into()));
        }
    }
    Ok(map)
}

/// Per-building series access for the evaluation protocols: building id to
/// (record, series), loaded shard by shard in manifest order.
pub fn load_building_series(
    corpus_dir: &Path,
) -> Result<BTreeMap<String, (BuildingRecord, LoadSeries)>, StoreError> {
    let manifest = Manifest::read(corpus_dir)?;
    let metadata = read_metadata(corpus_dir)?;
    let mut out = BTreeMap::new();
    for entry in &manifest.shards {
        let data = read_shard(&corpus_dir.join(&entry.path))?;
        for (id, column) in data.building_ids.iter().zip(&data.columns) {
            let record = metadata.get(id).ok_or_else(|| {
                StoreError::Integrity(format!("building `{id}` missing from metadata"))
            })?;
            let series = LoadSeries::new(data.start, column.clone())?;
            if out.insert(id.clone(), (record.clone(), series)).is_some() {
                return Err(StoreError::Integrity(format!(
                    "building `{id}` appears in more than one shard"
                )));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::collections::BTreeSet;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap()
    }

    /// Writes a corpus of three shards with deterministic ramp series.
    fn write_test_corpus(dir: &Path, hours: &[usize]) -> Manifest {
        std::fs::create_dir_all(dir.join(SHARD_DIR)).unwrap();
        let mut meta = String::from("id,dataset,building_type,latitude,longitude,region_id\n");
        let mut shards = Vec::new();
        for (s, &n_hours) in hours.iter().enumerate() {
            let region = format!("R{s:03}");
            let ids: Vec<String> = (0..2).map(|b| format!("b{s}{b}")).collect();
            let columns: Vec<(String, Vec<f64>)> = ids
                .iter()
                .enumerate()
                .map(|(b, id)| {
                    let values = (0..n_hours)
                        .map(|h| (s * 100_000 + b * 10_000 + h) as f64 * 0.001)
                        .collect();
                    (id.clone(), values)
                })
                .collect();
            let rel = format!("{SHARD_DIR}/shard_{s}.csv");
            write_shard(&dir.join(&rel), start(), &columns).unwrap();
            for id in &ids {
                meta.push_str(&format!("{id},setA,residential,40.0,-100.0,{region}\n"));
            }
            shards.push(ShardEntry {
                path: rel,
                region_id: region,
                building_type: BuildingType::Residential,
                year_tag: "2018".to_string(),
                n_buildings: 2,
                n_hours,
            });
        }
        std::fs::write(dir.join(METADATA_FILE), meta).unwrap();
        let manifest = Manifest {
            shards,
            holdout_regions: BTreeSet::new(),
        };
        manifest.write(dir).unwrap();
        manifest
    }

    #[test]
    fn manifest_round_trips() {
        let mut manifest = Manifest::default();
        manifest.shards.push(ShardEntry {
            path: "shards/a.csv".into(),
            region_id: "R000".into(),
            building_type: BuildingType::Commercial,
            year_tag: "2018".into(),
            n_buildings: 3,
            n_hours: 8760,
        });
        manifest.holdout_regions.insert("R009".into());
        let parsed = Manifest::from_text(&manifest.to_text()).unwrap();
        assert_eq!(parsed, manifest);
    }

    #[test]
    fn shard_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let columns = vec![
            ("b1".to_string(), vec![1.25, 0.0, 3.5]),
            ("b2".to_string(), vec![0.1, 0.2, 0.3]),
        ];
        write_shard(&path, start(), &columns).unwrap();
        let data = read_shard(&path).unwrap();
        assert_eq!(data.building_ids, vec!["b1", "b2"]);
        assert_eq!(data.columns[0], vec![1.25, 0.0, 3.5]);
        assert_eq!(data.start, start());
    }

    #[test]
    fn index_count_for_one_year_shard() {
        // floor((8760 - 192) / 24) + 1 = 358 windows per building.
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Manifest::default();
        manifest.shards.push(ShardEntry {
            path: "unused.csv".into(),
            region_id: "R0".into(),
            building_type: BuildingType::Residential,
            year_tag: "2018".into(),
            n_buildings: 1,
            n_hours: 8760,
        });
        let path = dir.path().join(INDEX_FILE);
        let n = build_index(&manifest, &IndexBuildOptions::default(), &path).unwrap();
        assert_eq!(n, 358);
    }

    #[test]
    fn index_holdout_excludes_final_two_weeks() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Manifest::default();
        manifest.shards.push(ShardEntry {
            path: "unused.csv".into(),
            region_id: "R0".into(),
            building_type: BuildingType::Residential,
            year_tag: "2018".into(),
            n_buildings: 1,
            n_hours: 8760,
        });
        let options = IndexBuildOptions {
            holdout_hours: VALIDATION_HOLDOUT_HOURS,
            ..Default::default()
        };
        let path = dir.path().join(INDEX_FILE);
        let n = build_index(&manifest, &options, &path).unwrap();
        // Window starts 0..=8232 step 24: no window overlaps the last 336 h.
        assert_eq!(n, 344);
        let mut reader = IndexReader::open(&path).unwrap();
        for i in 0..n {
            let entry = reader.entry(i).unwrap();
            assert!(entry.window_start_hour + WINDOW_HOURS <= 8760 - 336);
        }
    }

    #[test]
    fn index_skips_holdout_regions_and_short_shards() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Manifest::default();
        for (i, hours) in [(0, 8760usize), (1, 8760), (2, 100)] {
            manifest.shards.push(ShardEntry {
                path: format!("s{i}.csv"),
                region_id: format!("R{i}"),
                building_type: BuildingType::Residential,
                year_tag: "2018".into(),
                n_buildings: 1,
                n_hours: hours,
            });
        }
        manifest.holdout_regions.insert("R1".into());
        let path = dir.path().join(INDEX_FILE);
        let n = build_index(&manifest, &IndexBuildOptions::default(), &path).unwrap();
        // Shard 1 is held out and shard 2 is too short to hold any window.
        assert_eq!(n, 358);
        let mut reader = IndexReader::open(&path).unwrap();
        for i in 0..n {
            assert_eq!(reader.entry(i).unwrap().shard_ordinal, 0);
        }
    }

    #[test]
    fn empty_index_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INDEX_FILE);
        let n = build_index(&Manifest::default(), &IndexBuildOptions::default(), &path).unwrap();
        assert_eq!(n, 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), INDEX_HEADER_BYTES);
        let reader = IndexReader::open(&path).unwrap();
        assert!(reader.is_empty());
    }

    #[test]
    fn same_seed_builds_byte_identical_index() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_test_corpus(dir.path(), &[8760, 4000, 1000]);
        let a = dir.path().join("a.idx");
        let b = dir.path().join("b.idx");
        let options = IndexBuildOptions {
            seed: 99,
            ..Default::default()
        };
        build_index(&manifest, &options, &a).unwrap();
        build_index(&manifest, &options, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn shuffle_is_a_permutation_of_the_enumeration() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_test_corpus(dir.path(), &[1000, 500, 192]);
        let path = dir.path().join(INDEX_FILE);
        let options = IndexBuildOptions {
            seed: 7,
            ..Default::default()
        };
        let n = build_index(&manifest, &options, &path).unwrap();

        let mut expected = BTreeSet::new();
        for (s, shard) in manifest.shards.iter().enumerate() {
            for b in 0..shard.n_buildings {
                let mut h = 0;
                while h + WINDOW_HOURS <= shard.n_hours {
                    expected.insert((s, b, h));
                    h += 24;
                }
            }
        }
        let mut reader = IndexReader::open(&path).unwrap();
        let mut seen = BTreeSet::new();
        for i in 0..n {
            let e = reader.entry(i).unwrap();
            assert!(seen.insert((e.shard_ordinal, e.building_column, e.window_start_hour)));
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn fetch_round_trips_every_window() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_test_corpus(dir.path(), &[400, 250, 192]);
        let options = IndexBuildOptions {
            seed: 3,
            ..Default::default()
        };
        build_index(&manifest, &options, &dir.path().join(INDEX_FILE)).unwrap();
        let mut reader = CorpusReader::open(dir.path()).unwrap();
        let mut index = IndexReader::open(&dir.path().join(INDEX_FILE)).unwrap();
        for n in 0..reader.len() {
            let window = reader.fetch(n).unwrap();
            let e = index.entry(n).unwrap();
            let shard = read_shard(&dir.path().join(&manifest.shards[e.shard_ordinal].path)).unwrap();
            let expected =
                &shard.columns[e.building_column][e.window_start_hour..e.window_start_hour + 192];
            let mut joined = window.context().values().to_vec();
            joined.extend_from_slice(window.target().values());
            assert_eq!(joined, expected, "window {n} differs from its shard slice");
        }
    }

    #[test]
    fn fetch_cost_does_not_depend_on_position() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_test_corpus(dir.path(), &[8760]);
        build_index(
            &manifest,
            &IndexBuildOptions::default(),
            &dir.path().join(INDEX_FILE),
        )
        .unwrap();
        let mut reader = IndexReader::open(&dir.path().join(INDEX_FILE)).unwrap();
        let n = reader.len();
        let mut costs = Vec::new();
        for position in [0, 1, n / 2, n - 2, n - 1] {
            let before = reader.bytes_read();
            reader.entry(position).unwrap();
            costs.push(reader.bytes_read() - before);
        }
        assert!(costs.iter().all(|&c| c == INDEX_LINE_BYTES));
        // One header read plus one read per entry access: no scans.
        assert_eq!(reader.read_calls(), 1 + costs.len() as u64);
    }

    #[test]
    fn fetch_out_of_range_and_truncation_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_test_corpus(dir.path(), &[400]);
        let path = dir.path().join(INDEX_FILE);
        let n = build_index(&manifest, &IndexBuildOptions::default(), &path).unwrap();
        let mut reader = IndexReader::open(&path).unwrap();
        assert!(matches!(
            reader.entry(n),
            Err(StoreError::OutOfRange(_, _))
        ));

        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 10]).unwrap();
        assert!(matches!(
            IndexReader::open(&path),
            Err(StoreError::Integrity(_))
        ));
    }

    #[test]
    fn shard_mismatch_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_test_corpus(dir.path(), &[400]);
        manifest.shards[0].n_buildings = 5;
        manifest.write(dir.path()).unwrap();
        build_index(
            &manifest,
            &IndexBuildOptions::default(),
            &dir.path().join(INDEX_FILE),
        )
        .unwrap();
        let mut reader = CorpusReader::open(dir.path()).unwrap();
        assert!(matches!(reader.fetch(0), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn load_building_series_reads_all_columns() {
        let dir = tempfile::tempdir().unwrap();
        write_test_corpus(dir.path(), &[400, 250]);
        let buildings = load_building_series(dir.path()).unwrap();
        assert_eq!(buildings.len(), 4);
        assert_eq!(buildings["b00"].1.len(), 400);
        assert_eq!(buildings["b10"].1.len(), 250);
    }
}
