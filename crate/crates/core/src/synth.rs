//! Seeded generator of simulated hourly building loads, so every protocol can
//! run at desk scale. Profiles are deterministic functions of the hour of
//! week: commercial buildings get a weekday daytime bump with attenuated
//! weekends, residential buildings get morning/evening bumps plus a seeded
//! appliance-spike process. Noise is multiplicative lognormal (mean one) so
//! values stay positive, and the spike process is driven by `noise_scale`, so
//! a noiseless configuration is exactly periodic with a 168-hour period.

use crate::domain::{BuildingRecord, BuildingType, LoadSeries};
use crate::store::{Manifest, ShardEntry, METADATA_FILE, SHARD_DIR};
use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Commercial buildings scale the configured residential kWh ranges up by
/// this factor.
pub const COMMERCIAL_SCALE: f64 = 25.0;
/// Residential noise is this much stronger than commercial for the same
/// `noise_scale`.
pub const RESIDENTIAL_NOISE_FACTOR: f64 = 2.0;
/// Buildings are spread round-robin over this many synthetic regions.
pub const REGION_COUNT: usize = 4;

pub const RESIDENTIAL_DATASET: &str = "synth-res";
pub const COMMERCIAL_DATASET: &str = "synth-com";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_residential: usize,
    pub n_commercial: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Residential base load range, kWh.
    pub base_load_range: (f64, f64),
    /// Residential peak amplitude range, kWh.
    pub peak_load_range: (f64, f64),
    /// Lognormal sigma of the multiplicative noise; zero disables noise and
    /// the residential spike process.
    pub noise_scale: f64,
    /// Multiplier on the commercial daytime bump during weekends, in [0, 1].
    /// One gives every day the same shape.
    pub weekend_attenuation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_residential: 10,
            n_commercial: 10,
            n_days: 365,
            seed: 0,
            base_load_range: (0.1, 0.5),
            peak_load_range: (0.8, 3.0),
            noise_scale: 0.1,
            weekend_attenuation: 0.4,
        }
    }
}

impl SynthConfig {
    pub fn n_buildings(&self) -> usize {
        self.n_residential + self.n_commercial
    }

    fn validate(&self) {
        assert!(self.base_load_range.0 > 0.0 && self.base_load_range.1 >= self.base_load_range.0);
        assert!(self.peak_load_range.0 > 0.0 && self.peak_load_range.1 >= self.peak_load_range.0);
        assert!(self.noise_scale >= 0.0);
        assert!((0.0..=1.0).contains(&self.weekend_attenuation));
    }
}

/// All generated series start here (a Monday).
pub fn corpus_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap()
}

fn building_rng(seed: u64, ordinal: usize) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(ordinal as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&0x6c6f_6164_6265_6e63u64.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

struct Profile {
    base: f64,
    kind: BuildingType,
    weekend_attenuation: f64,
    // Gaussian bumps: (amplitude kWh, center hour, width hours).
    bumps: Vec<(f64, f64, f64)>,
}

impl Profile {
    /// Noise-free load at an hour of week (0 = Monday 00:00).
    fn shape(&self, hour_of_week: usize) -> f64 {
        let dow = hour_of_week / 24;
        let hod = (hour_of_week % 24) as f64;
        let weekend = dow >= 5;
        let day_factor = match self.kind {
            BuildingType::Commercial if weekend => self.weekend_attenuation,
            _ => 1.0,
        };
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|&(amp, center, width)| amp * (-((hod - center).powi(2)) / (2.0 * width * width)).exp())
            .sum();
        self.base + day_factor * bumps
    }
}

/// Deterministically generates building `ordinal` of the corpus. Ordinals
/// `0..n_residential` are residential, the rest commercial; the output is
/// fully determined by `(config.seed, ordinal)`.
pub fn generate_building(config: &SynthConfig, ordinal: usize) -> (BuildingRecord, LoadSeries) {
    config.validate();
    assert!(ordinal < config.n_buildings(), "ordinal out of range");
    let mut rng = building_rng(config.seed, ordinal);
    let kind = if ordinal < config.n_residential {
        BuildingType::Residential
    } else {
        BuildingType::Commercial
    };
    let scale = match kind {
        BuildingType::Residential => 1.0,
        BuildingType::Commercial => COMMERCIAL_SCALE,
    };
    let base = scale * rng.random_range(config.base_load_range.0..=config.base_load_range.1);
    let peak = scale * rng.random_range(config.peak_load_range.0..=config.peak_load_range.1);
    let bumps = match kind {
        BuildingType::Commercial => {
            let open = rng.random_range(7.0..9.0);
            let close = rng.random_range(17.0..20.0);
            vec![(peak, (open + close) / 2.0, (close - open) / 3.0)]
        }
        BuildingType::Residential => {
            let morning = rng.random_range(6.0..9.0);
            let evening = rng.random_range(17.0..21.0);
            let evening_share = rng.random_range(0.55..0.75);
            vec![
                (peak * (1.0 - evening_share), morning, rng.random_range(1.0..2.0)),
                (peak * evening_share, evening, rng.random_range(1.5..2.5)),
            ]
        }
    };
    let profile = Profile {
        base,
        kind,
        weekend_attenuation: config.weekend_attenuation,
        bumps,
    };

    let latitude = rng.random_range(25.0..49.0);
    let longitude = rng.random_range(-124.0..-67.0);
    let region_id = format!("R{:03}", ordinal % REGION_COUNT);
    let (prefix, dataset) = match kind {
        BuildingType::Residential => ("res", RESIDENTIAL_DATASET),
        BuildingType::Commercial => ("com", COMMERCIAL_DATASET),
    };
    let record = BuildingRecord::new(
        format!("{prefix}-{ordinal:04}"),
        kind,
        latitude,
        longitude,
        region_id,
        dataset,
    )
    .expect("generated coordinates are in range");

    let sigma = config.noise_scale
        * match kind {
            BuildingType::Residential => RESIDENTIAL_NOISE_FACTOR,
            BuildingType::Commercial => 1.0,
        };
    let spike_prob = (0.25 * config.noise_scale).min(0.1);
    let n_hours = config.n_days * 24;
    let mut values = Vec::with_capacity(n_hours);
    for t in 0..n_hours {
        let mut v = profile.shape(t % 168);
        // Mean-one lognormal noise; exactly one when sigma is zero.
        let z: f64 = rng.sample(StandardNormal);
        v *= (sigma * z - sigma * sigma / 2.0).exp();
        if kind == BuildingType::Residential {
            let u: f64 = rng.random_range(0.0..1.0);
            if spike_prob > 0.0 && u < spike_prob {
                v += peak * rng.random_range(0.5..2.0);
            }
        }
        values.push(v);
    }
    let series = LoadSeries::new(corpus_start(), values).expect("generated loads are valid");
    (record, series)
}

/// Writes a full synthetic corpus (shards, metadata, manifest) to a
/// directory, in the store schema. Returns the manifest.
pub fn generate_corpus(config: &SynthConfig, out_dir: &Path) -> Result<Manifest, crate::store::StoreError> {
    config.validate();
    std::fs::create_dir_all(out_dir.join(SHARD_DIR)).map_err(|source| {
        crate::store::StoreError::Io {
            path: out_dir.join(SHARD_DIR),
            source,
        }
    })?;

    type ShardColumns = Vec<(String, Vec<f64>)>;
    let mut by_shard: BTreeMap<(String, &'static str), ShardColumns> = BTreeMap::new();
    let mut records = Vec::new();
    for ordinal in 0..config.n_buildings() {
        let (record, series) = generate_building(config, ordinal);
        let key = (record.region_id.clone(), record.building_type.as_str());
        by_shard
            .entry(key)
            .or_default()
            .push((record.id.clone(), series.values().to_vec()));
        records.push(record);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let mut metadata = String::from("id,dataset,building_type,latitude,longitude,region_id\n");
    for r in &records {
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
    std::fs::write(out_dir.join(METADATA_FILE), metadata).map_err(|source| {
        crate::store::StoreError::Io {
            path: out_dir.join(METADATA_FILE),
            source,
        }
    })?;

    let mut manifest = Manifest::default();
    for ((region, type_name), mut columns) in by_shard {
        columns.sort_by(|a, b| a.0.cmp(&b.0));
        let rel = format!("{SHARD_DIR}/shard_{region}_{type_name}_2018.csv");
        crate::store::write_shard(&out_dir.join(&rel), corpus_start(), &columns)?;
        manifest.shards.push(ShardEntry {
            path: rel,
            region_id: region,
            building_type: BuildingType::parse(type_name).expect("valid type name"),
            year_tag: "2018".to_string(),
            n_buildings: columns.len(),
            n_hours: config.n_days * 24,
        });
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> SynthConfig {
        SynthConfig {
            noise_scale: 0.0,
            weekend_attenuation: 1.0,
            n_days: 28,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_series_is_weekly_periodic() {
        let config = noiseless();
        for ordinal in [0, config.n_residential] {
            let (_, series) = generate_building(&config, ordinal);
            let v = series.values();
            for t in 0..v.len() - 168 {
                assert_eq!(v[t], v[t + 168], "hour {t} of building {ordinal}");
            }
        }
    }

    #[test]
    fn same_seed_and_ordinal_reproduce_exactly() {
        let config = SynthConfig::default();
        let (ra, sa) = generate_building(&config, 3);
        let (rb, sb) = generate_building(&config, 3);
        assert_eq!(ra, rb);
        assert_eq!(sa, sb);
    }

    #[test]
    fn different_ordinals_differ() {
        let config = SynthConfig::default();
        let (a, sa) = generate_building(&config, 0);
        let (b, sb) = generate_building(&config, 1);
        assert_ne!(a.id, b.id);
        assert_ne!(sa.values()[..48], sb.values()[..48]);
    }

    #[test]
    fn commercial_daytime_exceeds_nighttime() {
        let config = SynthConfig {
            n_days: 365,
            ..SynthConfig::default()
        };
        let (record, series) = generate_building(&config, config.n_residential);
        assert_eq!(record.building_type, BuildingType::Commercial);
        let v = series.values();
        let mut day = (0.0, 0u32);
        let mut night = (0.0, 0u32);
        for (t, &x) in v.iter().enumerate() {
            match t % 24 {
                9..=16 => {
                    day.0 += x;
                    day.1 += 1;
                }
                0..=4 => {
                    night.0 += x;
                    night.1 += 1;
                }
                _ => {}
            }
        }
        assert!(day.0 / f64::from(day.1) > night.0 / f64::from(night.1));
    }

    #[test]
    fn generated_values_are_finite_and_nonnegative() {
        let config = SynthConfig {
            noise_scale: 0.5,
            n_days: 60,
            ..SynthConfig::default()
        };
        for ordinal in 0..config.n_buildings() {
            let (_, series) = generate_building(&config, ordinal);
            assert!(series.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn corpus_writer_produces_readable_store() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_residential: 3,
            n_commercial: 2,
            n_days: 10,
            ..SynthConfig::default()
        };
        let manifest = generate_corpus(&config, dir.path()).unwrap();
        assert_eq!(
            manifest.shards.iter().map(|s| s.n_buildings).sum::<usize>(),
            5
        );
        let buildings = crate::store::load_building_series(dir.path()).unwrap();
        assert_eq!(buildings.len(), 5);
        for (record, series) in buildings.values() {
            assert_eq!(series.len(), 240);
            let (expected_record, expected_series) = generate_building(
                &config,
                record.id[4..].parse::<usize>().unwrap(),
            );
            assert_eq!(record, &expected_record);
            assert_eq!(series.values(), expected_series.values());
        }
    }
}
