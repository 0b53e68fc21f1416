//! Per-UE KPM time-series handling: CSV ingestion, class statistics,
//! MinMax scaling, sliding-window construction, stratified splits,
//! replay training sets, and a synthetic corpus generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SentinelError};

/// Fixed feature order shared by every record, window, and table in the pipeline.
pub const FEATURE_NAMES: [&str; 14] = [
    "epre",
    "pusch_snr",
    "p_ue",
    "ul_mcs",
    "cqi",
    "ul_bitrate",
    "dl_mcs",
    "dl_retx",
    "ul_tx",
    "dl_tx",
    "ul_retx",
    "dl_bitrate",
    "dl_err",
    "ul_err",
];

pub const NUM_FEATURES: usize = 14;

/// KPM reports arrive every five seconds per UE.
pub const SAMPLING_PERIOD_SECS: i64 = 5;

/// Maximum timestamp gap inside a window: 1.5x the sampling period.
pub const MAX_GAP_SECS: f64 = 1.5 * SAMPLING_PERIOD_SECS as f64;

/// One 5-second KPM sample for one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmRecord {
    pub timestamp: i64,
    pub ue_id: String,
    pub features: [f64; NUM_FEATURES],
    /// 0 = benign, 1 = malicious.
    pub label: u8,
    pub day_index: u32,
}

/// Per-class mean/std for one feature, plus the percentage difference
/// of the attack mean relative to the normal mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureClassStats {
    pub name: String,
    pub normal_mean: f64,
    pub normal_std: f64,
    pub attack_mean: f64,
    pub attack_std: f64,
    pub pct_diff: f64,
}

/// Class-conditional summary over all 14 features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub per_feature: Vec<FeatureClassStats>,
}

impl FeatureStats {
    pub fn feature(&self, name: &str) -> Option<&FeatureClassStats> {
        self.per_feature.iter().find(|f| f.name == name)
    }
}

/// MinMax scaler fit on the training split only. Out-of-range values clamp to [0,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scaler {
    pub mins: [f64; NUM_FEATURES],
    pub maxs: [f64; NUM_FEATURES],
}

impl Scaler {
    pub fn transform_value(&self, feature_idx: usize, value: f64) -> f64 {
        let (min, max) = (self.mins[feature_idx], self.maxs[feature_idx]);
        if max <= min {
            // Constant column carries no information; map it to 0.0.
            return 0.0;
        }
        ((value - min) / (max - min)).clamp(0.0, 1.0)
    }
}

/// A W x 14 normalized matrix; the LSTM input unit.
/// Label is the label of the last timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub values: Vec<[f64; NUM_FEATURES]>,
    pub label: u8,
    pub ue_id: String,
    pub start_timestamp: i64,
    pub day_index: u32,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major flattening: timestep-major, feature-minor (W*14 entries).
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|row| row.iter().copied()).collect()
    }
}

/// All windows of one experiment day.
#[derive(Debug, Clone, Default)]
pub struct DaySlice {
    pub day_index: u32,
    pub windows: Vec<Window>,
}

/// Accumulated windows of all prior days.
#[derive(Debug, Clone, Default)]
pub struct ReplayPool {
    pub windows: Vec<Window>,
}

impl ReplayPool {
    pub fn absorb(&mut self, day: &DaySlice) {
        self.windows.extend(day.windows.iter().cloned());
    }
}

/// Outcome of loading a CSV corpus: parsed records plus the count of
/// rows dropped for missing/NaN feature cells.
#[derive(Debug)]
pub struct LoadReport {
    pub records: Vec<KpmRecord>,
    pub dropped_rows: usize,
}

/// Load KPM records from CSV. The header must contain `timestamp`, `ue_id`,
/// all 14 feature columns, and `label`; `day` is optional (defaults to 0).
/// Rows with a missing or NaN feature cell are dropped and counted;
/// unparseable numeric cells are a hard error naming the line.
pub fn load_kpm_csv(path: &Path) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let ts_idx = col("timestamp").ok_or_else(|| SentinelError::MissingColumn("timestamp".into()))?;
    let ue_idx = col("ue_id").ok_or_else(|| SentinelError::MissingColumn("ue_id".into()))?;
    let label_idx = col("label").ok_or_else(|| SentinelError::MissingColumn("label".into()))?;
    let day_idx = col("day");
    let mut feat_idx = [0usize; NUM_FEATURES];
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        feat_idx[i] = col(name).ok_or_else(|| SentinelError::MissingColumn((*name).into()))?;
    }

    let mut records = Vec::new();
    let mut dropped_rows = 0usize;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_num = |idx: usize, what: &str| -> Result<Option<f64>> {
            let cell = row.get(idx).unwrap_or("").trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                return Ok(None);
            }
            cell.parse::<f64>().map(Some).map_err(|_| SentinelError::BadRow {
                line,
                message: format!("unparseable {what} value {cell:?}"),
            })
        };

        let mut features = [0.0; NUM_FEATURES];
        let mut drop = false;
        for (i, &idx) in feat_idx.iter().enumerate() {
            match parse_num(idx, FEATURE_NAMES[i])? {
                Some(v) if v.is_finite() => features[i] = v,
                _ => {
                    drop = true;
                    break;
                }
            }
        }
        if drop {
            dropped_rows += 1;
            continue;
        }

        let timestamp = parse_num(ts_idx, "timestamp")?.ok_or(SentinelError::BadRow {
            line,
            message: "missing timestamp".into(),
        })? as i64;
        let label_val = parse_num(label_idx, "label")?.ok_or(SentinelError::BadRow {
            line,
            message: "missing label".into(),
        })?;
        let label = match label_val as i64 {
            0 => 0,
            1 => 1,
            other => {
                return Err(SentinelError::BadRow {
                    line,
                    message: format!("label must be 0 or 1, got {other}"),
                })
            }
        };
        let day_index = match day_idx {
            Some(idx) => parse_num(idx, "day")?.unwrap_or(0.0) as u32,
            None => 0,
        };
        records.push(KpmRecord {
            timestamp,
            ue_id: row.get(ue_idx).unwrap_or("").to_string(),
            features,
            label,
            day_index,
        });
    }

    records.sort_by(|a, b| (a.ue_id.as_str(), a.timestamp).cmp(&(b.ue_id.as_str(), b.timestamp)));
    Ok(LoadReport { records, dropped_rows })
}

/// Write records in the same CSV schema `load_kpm_csv` reads.
pub fn write_kpm_csv(path: &Path, records: &[KpmRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string(), "ue_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.push("label".into());
    header.push("day".into());
    writer.write_record(&header)?;
    for r in records {
        let mut row = vec![r.timestamp.to_string(), r.ue_id.clone()];
        row.extend(r.features.iter().map(|v| format!("{v}")));
        row.push(r.label.to_string());
        row.push(r.day_index.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-class mean/std per feature, plus the percentage difference
/// (attack_mean - normal_mean) / |normal_mean| * 100.
pub fn compute_class_stats(records: &[KpmRecord]) -> Result<FeatureStats> {
    let normal: Vec<&KpmRecord> = records.iter().filter(|r| r.label == 0).collect();
    let attack: Vec<&KpmRecord> = records.iter().filter(|r| r.label == 1).collect();
    if normal.is_empty() || attack.is_empty() {
        return Err(SentinelError::MissingClass);
    }
    let mut per_feature = Vec::with_capacity(NUM_FEATURES);
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        let n_vals: Vec<f64> = normal.iter().map(|r| r.features[i]).collect();
        let a_vals: Vec<f64> = attack.iter().map(|r| r.features[i]).collect();
        let (normal_mean, normal_std) = mean_std(&n_vals);
        let (attack_mean, attack_std) = mean_std(&a_vals);
        let pct_diff = if normal_mean == 0.0 {
            f64::INFINITY * (attack_mean - normal_mean).signum()
        } else {
            (attack_mean - normal_mean) / normal_mean.abs() * 100.0
        };
        per_feature.push(FeatureClassStats {
            name: (*name).into(),
            normal_mean,
            normal_std,
            attack_mean,
            attack_std,
            pct_diff,
        });
    }
    Ok(FeatureStats { per_feature })
}

/// Fit a MinMax scaler on the training split.
pub fn fit_scaler(train_records: &[KpmRecord]) -> Result<Scaler> {
    if train_records.is_empty() {
        return Err(SentinelError::EmptyInput("fit_scaler"));
    }
    let mut mins = [f64::INFINITY; NUM_FEATURES];
    let mut maxs = [f64::NEG_INFINITY; NUM_FEATURES];
    for r in train_records {
        for i in 0..NUM_FEATURES {
            mins[i] = mins[i].min(r.features[i]);
            maxs[i] = maxs[i].max(r.features[i]);
        }
    }
    Ok(Scaler { mins, maxs })
}

/// Map features into [0,1] using a fitted scaler.
pub fn apply_scaler(scaler: &Scaler, records: &[KpmRecord]) -> Vec<KpmRecord> {
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            for i in 0..NUM_FEATURES {
                out.features[i] = scaler.transform_value(i, r.features[i]);
            }
            out
        })
        .collect()
}

/// Sliding windows per UE with stride 1. Windows never span a timestamp gap
/// larger than 1.5x the sampling period, and the window label is the label
/// of the last timestep.
pub fn make_windows(records: &[KpmRecord], window_len: usize) -> Result<Vec<Window>> {
    if window_len < 1 {
        return Err(SentinelError::InvalidArgument("window length must be >= 1".into()));
    }
    let mut by_ue: BTreeMap<&str, Vec<&KpmRecord>> = BTreeMap::new();
    for r in records {
        by_ue.entry(r.ue_id.as_str()).or_default().push(r);
    }

    let mut windows = Vec::new();
    for (_, mut ue_records) in by_ue {
        ue_records.sort_by_key(|r| r.timestamp);
        // Split into contiguous runs at gaps, then slide within each run.
        let mut run_start = 0usize;
        for i in 0..=ue_records.len() {
            let run_ends = i == ue_records.len()
                || (i > run_start
                    && (ue_records[i].timestamp - ue_records[i - 1].timestamp) as f64 > MAX_GAP_SECS);
            if !run_ends {
                continue;
            }
            let run = &ue_records[run_start..i];
            if run.len() >= window_len {
                for start in 0..=(run.len() - window_len) {
                    let slice = &run[start..start + window_len];
                    windows.push(Window {
                        values: slice.iter().map(|r| r.features).collect(),
                        label: slice[window_len - 1].label,
                        ue_id: slice[0].ue_id.clone(),
                        start_timestamp: slice[0].timestamp,
                        day_index: slice[window_len - 1].day_index,
                    });
                }
            }
            run_start = i;
        }
    }
    Ok(windows)
}

/// Stratified shuffle split: both classes keep (approximately) the input
/// positive rate in each side. Deterministic under `seed`.
pub fn split_train_test(
    windows: &[Window],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Window>, Vec<Window>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SentinelError::InvalidArgument(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<&Window> = windows.iter().filter(|w| w.label == class).collect();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * train_fraction).round() as usize;
        for (i, w) in members.into_iter().enumerate() {
            if i < n_train {
                train.push(w.clone());
            } else {
                test.push(w.clone());
            }
        }
    }
    Ok((train, test))
}

/// Replay training set: the new day's windows plus a seeded uniform sample
/// (without replacement) of `floor(ratio * |new_day|)` windows from the pool.
/// Returns the set and whether the pool was too small for the requested sample.
pub fn build_replay_trainset(
    new_day: &[Window],
    pool: &[Window],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Window>, bool)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SentinelError::InvalidArgument(format!(
            "replay ratio must be in [0,1], got {ratio}"
        )));
    }
    let requested = (ratio * new_day.len() as f64).floor() as usize;
    let take = requested.min(pool.len());
    let truncated = take < requested;
    let mut out: Vec<Window> = new_day.to_vec();
    if take > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.shuffle(&mut rng);
        out.extend(indices[..take].iter().map(|&i| pool[i].clone()));
    }
    Ok((out, truncated))
}

/// Marks one UE malicious for a sample-index interval of one day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackInterval {
    pub day_index: u32,
    pub ue_index: usize,
    /// Half-open sample-index range [start, end) within the UE's day.
    pub start: usize,
    pub end: usize,
}

/// Per-feature (mean, std) overrides for the attack class of one day,
/// giving each day a distinct attack signature.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AttackProfile {
    pub overrides: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: u32,
    pub ues: usize,
    pub samples_per_ue: usize,
    pub schedule: Vec<AttackInterval>,
    pub seed: u64,
    /// AR(1) lag-one correlation of each feature series.
    pub rho: f64,
    /// Optional day-specific attack signatures; features not overridden
    /// fall back to the attack stats, days without a profile likewise.
    pub profiles: BTreeMap<u32, AttackProfile>,
}

impl SynthConfig {
    pub fn new(days: u32, ues: usize, samples_per_ue: usize, seed: u64) -> Self {
        SynthConfig {
            days,
            ues,
            samples_per_ue,
            schedule: Vec::new(),
            seed,
            rho: 0.8,
            profiles: BTreeMap::new(),
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean of clip(N(mu, sigma), 0, 1).
fn clipped_mean(mu: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return mu.clamp(0.0, 1.0);
    }
    let a = (0.0 - mu) / sigma;
    let b = (1.0 - mu) / sigma;
    1.0 - normal_cdf(b) + mu * (normal_cdf(b) - normal_cdf(a)) + sigma * (normal_pdf(a) - normal_pdf(b))
}

/// Pre-clip mean whose clipped mean equals `target`; keeps post-clip sample
/// means anchored to the requested statistics even near the [0,1] boundary.
fn invert_clipped_mean(target: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return target;
    }
    let (mut lo, mut hi) = (target - 6.0 * sigma - 1.0, target + 6.0 * sigma + 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if clipped_mean(mid, sigma) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate a synthetic corpus: per-class AR(1) Gaussian feature series
/// (lag-one correlation `rho`) with class mean/std taken from `stats`
/// (normalized units), clipped to [0,1]. Labels follow the schedule.
/// Deterministic under the config seed.
pub fn synthesize_dataset(stats: &FeatureStats, config: &SynthConfig) -> Result<Vec<KpmRecord>> {
    if stats.per_feature.len() != NUM_FEATURES {
        return Err(SentinelError::ShapeMismatch(format!(
            "stats cover {} features, expected {NUM_FEATURES}",
            stats.per_feature.len()
        )));
    }
    let rho = config.rho;
    let innovation = (1.0 - rho * rho).max(0.0).sqrt();
    let mut records = Vec::with_capacity(config.days as usize * config.ues * config.samples_per_ue);

    for day in 0..config.days {
        let profile = config.profiles.get(&day);
        for ue in 0..config.ues {
            // Independent stream per (day, ue) so corpora are stable under
            // changes to unrelated days/UEs.
            let mut rng = ChaCha8Rng::seed_from_u64(
                config.seed ^ (u64::from(day) << 32) ^ ((ue as u64) << 8),
            );
            let ue_id = format!("ue{ue:02}");
            let base_ts = i64::from(day) * 86_400;
            let mut prev = [0.0f64; NUM_FEATURES];
            let mut prev_label = 2u8; // force re-seed of the AR state on first sample
            for idx in 0..config.samples_per_ue {
                let malicious = config.schedule.iter().any(|iv| {
                    iv.day_index == day && iv.ue_index == ue && idx >= iv.start && idx < iv.end
                });
                let label = u8::from(malicious);
                let mut features = [0.0f64; NUM_FEATURES];
                for (i, fs) in stats.per_feature.iter().enumerate() {
                    let (mean, std) = if malicious {
                        profile
                            .and_then(|p| {
                                p.overrides
                                    .iter()
                                    .find(|(name, _, _)| name == &fs.name)
                                    .map(|&(_, m, s)| (m, s))
                            })
                            .unwrap_or((fs.attack_mean, fs.attack_std))
                    } else {
                        (fs.normal_mean, fs.normal_std)
                    };
                    let mu = invert_clipped_mean(mean, std);
                    let noise: f64 = sample_standard_normal(&mut rng);
                    let value = if label == prev_label {
                        mu + rho * (prev[i] - mu) + std * innovation * noise
                    } else {
                        mu + std * noise
                    };
                    prev[i] = value;
                    features[i] = value.clamp(0.0, 1.0);
                }
                prev_label = label;
                records.push(KpmRecord {
                    timestamp: base_ts + idx as i64 * SAMPLING_PERIOD_SECS,
                    ue_id: ue_id.clone(),
                    features,
                    label,
                    day_index: day,
                });
            }
        }
    }
    Ok(records)
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout obvious.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The normalized class statistics used throughout the bundled experiments.
pub fn reference_stats() -> FeatureStats {
    let rows: [(&str, f64, f64, f64, f64); NUM_FEATURES] = [
        ("epre", 0.5695, 0.2032, 0.4760, 0.1560),
        ("pusch_snr", 0.6561, 0.0997, 0.6250, 0.0732),
        ("p_ue", 0.3921, 0.2464, 0.3714, 0.1638),
        ("ul_mcs", 0.6775, 0.2775, 0.5885, 0.2767),
        ("cqi", 0.8097, 0.2172, 0.6855, 0.2649),
        ("ul_bitrate", 0.0766, 0.1215, 0.0905, 0.0983),
        ("dl_mcs", 0.7158, 0.2803, 0.5847, 0.3470),
        ("dl_retx", 0.0455, 0.0745, 0.0541, 0.0636),
        ("ul_tx", 0.2864, 0.3242, 0.3674, 0.1803),
        ("dl_tx", 0.1623, 0.2190, 0.0790, 0.0434),
        ("ul_retx", 0.0864, 0.1140, 0.1630, 0.1318),
        ("dl_bitrate", 0.0162, 0.0220, 0.0006, 0.0005),
        ("dl_err", 0.0012, 0.0085, 0.0075, 0.0262),
        ("ul_err", 0.0008, 0.0054, 0.0233, 0.0865),
    ];
    FeatureStats {
        per_feature: rows
            .iter()
            .map(|&(name, nm, ns, am, asd)| FeatureClassStats {
                name: name.into(),
                normal_mean: nm,
                normal_std: ns,
                attack_mean: am,
                attack_std: asd,
                pct_diff: if nm == 0.0 { f64::INFINITY } else { (am - nm) / nm.abs() * 100.0 },
            })
            .collect(),
    }
}

/// Day-specific attack signatures for the bundled four-day corpus. Each day
/// perturbs a different feature group, and days 0 and 2 pull shared features
/// in opposite directions so that sequential training without replay
/// interferes with earlier days.
pub fn default_attack_profiles() -> BTreeMap<u32, AttackProfile> {
    let mk = |pairs: &[(&str, f64, f64)]| AttackProfile {
        overrides: pairs.iter().map(|&(n, m, s)| (n.to_string(), m, s)).collect(),
    };
    let mut profiles = BTreeMap::new();
    // Day 0: uplink flood.
    profiles.insert(
        0,
        mk(&[
            ("ul_bitrate", 0.55, 0.06),
            ("ul_retx", 0.45, 0.06),
            ("ul_tx", 0.75, 0.08),
            ("ul_err", 0.08, 0.03),
        ]),
    );
    // Day 1: downlink starvation.
    profiles.insert(
        1,
        mk(&[
            ("dl_bitrate", 0.0006, 0.0005),
            ("dl_tx", 0.01, 0.01),
            ("dl_err", 0.12, 0.04),
            ("dl_retx", 0.35, 0.07),
        ]),
    );
    // Day 2: low-rate throttling; reverses day 0's uplink direction.
    profiles.insert(
        2,
        mk(&[
            ("ul_bitrate", 0.004, 0.003),
            ("ul_tx", 0.02, 0.015),
            ("ul_retx", 0.02, 0.015),
            ("pusch_snr", 0.30, 0.04),
            ("p_ue", 0.90, 0.04),
        ]),
    );
    // Day 3: radio degradation.
    profiles.insert(
        3,
        mk(&[
            ("cqi", 0.20, 0.06),
            ("epre", 0.10, 0.05),
            ("dl_mcs", 0.15, 0.06),
            ("ul_mcs", 0.15, 0.06),
        ]),
    );
    profiles
}

/// Schedule `malicious_ues` UEs per day for one contiguous interval covering
/// `attack_fraction` of their samples, midway through the day.
pub fn default_schedule(
    days: u32,
    ues: usize,
    samples_per_ue: usize,
    malicious_ues: usize,
    attack_fraction: f64,
) -> Vec<AttackInterval> {
    let span = ((samples_per_ue as f64) * attack_fraction).round() as usize;
    let start = (samples_per_ue.saturating_sub(span)) / 2;
    let mut schedule = Vec::new();
    for day in 0..days {
        for m in 0..malicious_ues.min(ues) {
            // Rotate which UEs attack so no UE is malicious every day.
            let ue_index = (day as usize + m * 3) % ues;
            schedule.push(AttackInterval {
                day_index: day,
                ue_index,
                start,
                end: (start + span).min(samples_per_ue),
            });
        }
    }
    schedule
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn rec(ue: &str, ts: i64, label: u8, value: f64) -> KpmRecord {
        KpmRecord {
            timestamp: ts,
            ue_id: ue.into(),
            features: [value; NUM_FEATURES],
            label,
            day_index: 0,
        }
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn header() -> String {
        let mut h = String::from("timestamp,ue_id,");
        h.push_str(&FEATURE_NAMES.join(","));
        h.push_str(",label,day");
        h
    }

    fn csv_row(ts: i64, ue: &str, value: &str, label: u8) -> String {
        let cells = vec![value; NUM_FEATURES].join(",");
        format!("{ts},{ue},{cells},{label},0")
    }

    #[test]
    fn load_well_formed_rows_in_order() {
        let body = format!(
            "{}\n{}\n{}\n{}\n",
            header(),
            csv_row(10, "ue-b", "0.5", 0),
            csv_row(5, "ue-a", "0.25", 1),
            csv_row(0, "ue-b", "0.75", 0),
        );
        let f = write_csv(&body);
        let report = load_kpm_csv(f.path()).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.dropped_rows, 0);
        let keys: Vec<(String, i64)> =
            report.records.iter().map(|r| (r.ue_id.clone(), r.timestamp)).collect();
        assert_eq!(keys, vec![("ue-a".into(), 5), ("ue-b".into(), 0), ("ue-b".into(), 10)]);
    }

    #[test]
    fn load_drops_nan_rows() {
        let mut nan_cells = vec!["0.5"; NUM_FEATURES];
        nan_cells[NUM_FEATURES - 1] = "NaN"; // ul_err
        let body = format!(
            "{}\n{}\n0,ue-a,{},0,0\n",
            header(),
            csv_row(5, "ue-a", "0.5", 0),
            nan_cells.join(","),
        );
        let f = write_csv(&body);
        let report = load_kpm_csv(f.path()).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.dropped_rows, 1);
    }

    #[test]
    fn load_missing_column_names_it() {
        let h = header().replace("cqi,", "");
        let f = write_csv(&format!("{h}\n"));
        match load_kpm_csv(f.path()) {
            Err(SentinelError::MissingColumn(name)) => assert_eq!(name, "cqi"),
            other => panic!("expected missing column error, got {other:?}"),
        }
    }

    #[test]
    fn load_unparseable_cell_reports_line() {
        let body = format!("{}\n{}\n", header(), csv_row(5, "ue-a", "oops", 0));
        let f = write_csv(&body);
        match load_kpm_csv(f.path()) {
            Err(SentinelError::BadRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec("ue-a", 0, 0, 0.25), rec("ue-a", 5, 1, 0.5)];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_kpm_csv(f.path(), &records).unwrap();
        let report = load_kpm_csv(f.path()).unwrap();
        assert_eq!(report.records, records);
    }

    #[test]
    fn class_stats_zero_variance() {
        let records = vec![
            rec("a", 0, 0, 0.5),
            rec("a", 5, 0, 0.5),
            rec("a", 10, 1, 0.9),
            rec("a", 15, 1, 0.9),
        ];
        let stats = compute_class_stats(&records).unwrap();
        for f in &stats.per_feature {
            assert_eq!(f.normal_std, 0.0);
            assert_eq!(f.attack_std, 0.0);
            assert_relative_eq!(f.normal_mean, 0.5);
            assert_relative_eq!(f.attack_mean, 0.9);
            assert_relative_eq!(f.pct_diff, 80.0);
        }
    }

    #[test]
    fn class_stats_single_class_errors() {
        let records = vec![rec("a", 0, 0, 0.5)];
        assert!(matches!(compute_class_stats(&records), Err(SentinelError::MissingClass)));
    }

    #[test]
    fn class_stats_matches_raw_reference_diff() {
        // ul_err raw means 0.10 (normal) vs 2.94 (attack): diff +2840%.
        // The published +2906.13% comes from unrounded means; assert on the
        // exact arithmetic of the rounded table values here.
        let mut records = Vec::new();
        for _ in 0..10 {
            let mut r = rec("a", 0, 0, 0.0);
            r.features[13] = 0.10;
            records.push(r);
            let mut r = rec("a", 5, 1, 0.0);
            r.features[13] = 2.94;
            records.push(r);
        }
        let stats = compute_class_stats(&records).unwrap();
        let ul_err = stats.feature("ul_err").unwrap();
        assert_relative_eq!(ul_err.normal_mean, 0.10);
        assert_relative_eq!(ul_err.attack_mean, 2.94);
        assert_relative_eq!(ul_err.pct_diff, 2840.0, epsilon = 1e-9);
    }

    #[test]
    fn scaler_affine_and_clamp() {
        let train: Vec<KpmRecord> =
            [2.0, 4.0, 6.0].iter().map(|&v| rec("a", v as i64, 0, v)).collect();
        let scaler = fit_scaler(&train).unwrap();
        let scaled = apply_scaler(&scaler, &train);
        assert_relative_eq!(scaled[0].features[0], 0.0);
        assert_relative_eq!(scaled[1].features[0], 0.5);
        assert_relative_eq!(scaled[2].features[0], 1.0);
        // Out-of-range test value clamps.
        let test = apply_scaler(&scaler, &[rec("a", 0, 0, 8.0)]);
        assert_relative_eq!(test[0].features[0], 1.0);
        let test = apply_scaler(&scaler, &[rec("a", 0, 0, -1.0)]);
        assert_relative_eq!(test[0].features[0], 0.0);
    }

    #[test]
    fn scaler_constant_column_maps_to_zero() {
        let train = vec![rec("a", 0, 0, 5.0), rec("a", 5, 0, 5.0)];
        let scaler = fit_scaler(&train).unwrap();
        let scaled = apply_scaler(&scaler, &train);
        assert_eq!(scaled[0].features[0], 0.0);
        assert_eq!(scaled[1].features[0], 0.0);
    }

    #[test]
    fn scaler_empty_input_errors() {
        assert!(fit_scaler(&[]).is_err());
    }

    #[test]
    fn windows_count_and_label() {
        let records: Vec<KpmRecord> =
            (0..5).map(|i| rec("a", i * 5, u8::from(i == 4), 0.1)).collect();
        let windows = make_windows(&records, 3).unwrap();
        assert_eq!(windows.len(), 3);
        // Labels (0,0,1) in the last window -> label 1 (last-step rule).
        assert_eq!(windows[0].label, 0);
        assert_eq!(windows[2].label, 1);
    }

    #[test]
    fn windows_never_cross_gaps() {
        // 10 samples, 30 s gap after sample 4: runs of 4 and 6 -> 2 + 4 windows.
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(rec("a", i * 5, 0, 0.1));
        }
        for i in 0..6 {
            records.push(rec("a", 45 + i * 5, 0, 0.1));
        }
        let windows = make_windows(&records, 3).unwrap();
        assert_eq!(windows.len(), 6);
        for w in &windows {
            assert!(w.start_timestamp + 10 <= 15 || w.start_timestamp >= 45);
        }
    }

    #[test]
    fn windows_short_run_yields_none() {
        let records = vec![rec("a", 0, 0, 0.1), rec("a", 5, 0, 0.1)];
        assert!(make_windows(&records, 3).unwrap().is_empty());
        assert!(make_windows(&records, 0).is_err());
    }

    fn dummy_windows(n: usize, positives: usize) -> Vec<Window> {
        (0..n)
            .map(|i| Window {
                values: vec![[0.5; NUM_FEATURES]; 3],
                label: u8::from(i < positives),
                ue_id: format!("ue{i}"),
                start_timestamp: i as i64 * 5,
                day_index: 0,
            })
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let windows = dummy_windows(100, 30);
        let (train, test) = split_train_test(&windows, 0.8, 42).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let (train2, test2) = split_train_test(&windows, 0.8, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_is_stratified_at_low_positive_rate() {
        // 1.7% positive rate; both splits stay within +-0.5 pp.
        let windows = dummy_windows(10_000, 170);
        let (train, test) = split_train_test(&windows, 0.8, 7).unwrap();
        for part in [&train, &test] {
            let rate = part.iter().filter(|w| w.label == 1).count() as f64 / part.len() as f64;
            assert!((rate - 0.017).abs() < 0.005, "rate {rate}");
        }
    }

    #[test]
    fn replay_sizes() {
        let new_day = dummy_windows(100, 10);
        let pool = dummy_windows(500, 50);
        let (set, truncated) = build_replay_trainset(&new_day, &pool, 0.3, 1).unwrap();
        assert_eq!(set.len(), 130);
        assert!(!truncated);

        let (set, truncated) = build_replay_trainset(&new_day, &pool, 0.0, 1).unwrap();
        assert_eq!(set.len(), 100);
        assert!(!truncated);

        let small_pool = dummy_windows(20, 2);
        let (set, truncated) = build_replay_trainset(&new_day, &small_pool, 0.5, 1).unwrap();
        assert_eq!(set.len(), 120);
        assert!(truncated);
    }

    #[test]
    fn synth_benign_mean_anchor() {
        // 1000 benign samples: dl_bitrate sample mean within 3*sigma/sqrt(1000)
        // of the configured 0.0162.
        let stats = reference_stats();
        let mut config = SynthConfig::new(1, 1, 1000, 99);
        config.schedule.clear();
        let records = synthesize_dataset(&stats, &config).unwrap();
        assert_eq!(records.len(), 1000);
        let idx = FEATURE_NAMES.iter().position(|&n| n == "dl_bitrate").unwrap();
        let mean = records.iter().map(|r| r.features[idx]).sum::<f64>() / 1000.0;
        let tol = 3.0 * 0.0220 / (1000f64).sqrt();
        assert!((mean - 0.0162).abs() < tol, "mean {mean} tol {tol}");
    }

    #[test]
    fn synth_deterministic_and_all_attack() {
        let stats = reference_stats();
        let mut config = SynthConfig::new(2, 2, 50, 5);
        config.schedule = vec![
            AttackInterval { day_index: 0, ue_index: 0, start: 0, end: 50 },
            AttackInterval { day_index: 0, ue_index: 1, start: 0, end: 50 },
            AttackInterval { day_index: 1, ue_index: 0, start: 0, end: 50 },
            AttackInterval { day_index: 1, ue_index: 1, start: 0, end: 50 },
        ];
        let a = synthesize_dataset(&stats, &config).unwrap();
        let b = synthesize_dataset(&stats, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.label == 1));

        // Empty schedule -> all benign.
        config.schedule.clear();
        let c = synthesize_dataset(&stats, &config).unwrap();
        assert!(c.iter().all(|r| r.label == 0));
    }

    #[test]
    fn synth_values_in_unit_interval() {
        let stats = reference_stats();
        let config = SynthConfig::new(1, 2, 200, 3);
        let records = synthesize_dataset(&stats, &config).unwrap();
        for r in &records {
            for v in &r.features {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn rescaling_normalized_data_is_identity_like() {
        let stats = reference_stats();
        let config = SynthConfig::new(1, 2, 300, 11);
        let records = synthesize_dataset(&stats, &config).unwrap();
        let scaler = fit_scaler(&records).unwrap();
        let once = apply_scaler(&scaler, &records);
        let refit = fit_scaler(&once).unwrap();
        for i in 0..NUM_FEATURES {
            if scaler.maxs[i] > scaler.mins[i] {
                assert_relative_eq!(refit.mins[i], 0.0, epsilon = 1e-12);
                assert_relative_eq!(refit.maxs[i], 1.0, epsilon = 1e-12);
            }
        }
    }
}
