//! Sequential-day training experiments: replay-ratio runs, window-size by
//! replay-ratio sweeps, and the CSV/JSON emitters for their result grids.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::{
    apply_scaler, build_replay_trainset, fit_scaler, make_windows, split_train_test, KpmRecord,
    ReplayPool, Window,
};
use crate::error::{Result, SentinelError};
use crate::lstm::{fit, init_model, predict_window, LstmParams, TrainConfig, DEFAULT_INPUT_DIM};
use crate::metrics::compute_metrics;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub window_size: usize,
    pub hidden_dim: usize,
    /// Per-day fraction of windows kept for training; the rest is the fixed
    /// held-out test split.
    pub train_fraction: f64,
    /// Fraction of each day's training split held back for early stopping.
    pub val_fraction: f64,
    pub threshold: f64,
    /// Seed for the per-day splits, shared across training seeds so every
    /// run sees the same held-out windows.
    pub split_seed: u64,
    pub train: TrainConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            window_size: 3,
            hidden_dim: 32,
            train_fraction: 0.8,
            val_fraction: 0.1,
            threshold: 0.5,
            split_seed: 7,
            train: TrainConfig::default(),
        }
    }
}

/// One experiment day's windows after splitting.
#[derive(Debug, Clone)]
pub struct DayData {
    pub day_index: u32,
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    /// False when the test split lacks one of the classes; F1 cells for
    /// such a day are reported as invalid rather than misleading zeros.
    pub test_has_both_classes: bool,
}

/// Scale the corpus, window each day separately, and carve the fixed
/// train/validation/test splits. Days are ordered by `day_index`.
pub fn prepare_days(records: &[KpmRecord], config: &HarnessConfig) -> Result<Vec<DayData>> {
    if records.is_empty() {
        return Err(SentinelError::EmptyInput("prepare_days"));
    }
    let scaler = fit_scaler(records)?;
    let scaled = apply_scaler(&scaler, records);

    let mut by_day: BTreeMap<u32, Vec<KpmRecord>> = BTreeMap::new();
    for r in scaled {
        by_day.entry(r.day_index).or_default().push(r);
    }

    let mut days = Vec::with_capacity(by_day.len());
    for (day_index, day_records) in by_day {
        let windows = make_windows(&day_records, config.window_size)?;
        if windows.is_empty() {
            return Err(SentinelError::InvalidArgument(format!(
                "day {day_index} produced no windows at window size {}",
                config.window_size
            )));
        }
        let (mut train, test) =
            split_train_test(&windows, config.train_fraction, config.split_seed ^ u64::from(day_index))?;
        let keep = 1.0 - config.val_fraction;
        let (mut train_part, mut validation) = if keep > 0.0 && keep < 1.0 {
            split_train_test(&train, keep, config.split_seed.wrapping_add(u64::from(day_index) + 97))?
        } else {
            (std::mem::take(&mut train), Vec::new())
        };
        // Early stopping needs at least one validation window.
        if validation.is_empty() {
            if let Some(w) = train_part.pop() {
                validation.push(w);
            }
        }
        let test_has_both_classes =
            test.iter().any(|w| w.label == 0) && test.iter().any(|w| w.label == 1);
        days.push(DayData {
            day_index,
            train: train_part,
            validation,
            test,
            test_has_both_classes,
        });
    }
    Ok(days)
}

/// F1 grid recorded after fine-tuning on one day: one cell per day seen so
/// far, `None` when that day's test split is single-class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEval {
    pub after_day: u32,
    pub f1_per_day: Vec<Option<f64>>,
}

/// Train on the first day, then fine-tune through the remaining days with
/// the given replay ratio, evaluating on every already-seen day after each
/// stage. Returns the final model and the stage-by-stage F1 grid.
pub fn run_sequence(
    days: &[DayData],
    ratio: f64,
    seed: u64,
    config: &HarnessConfig,
) -> Result<(LstmParams, Vec<StageEval>)> {
    if days.is_empty() {
        return Err(SentinelError::EmptyInput("run_sequence"));
    }
    let mut model = init_model(seed, DEFAULT_INPUT_DIM, config.hidden_dim);
    let mut pool = ReplayPool::default();
    let mut stages = Vec::with_capacity(days.len());

    for (d, day) in days.iter().enumerate() {
        let trainset = if d == 0 {
            day.train.clone()
        } else {
            let (set, _truncated) = build_replay_trainset(
                &day.train,
                &pool.windows,
                ratio,
                seed.wrapping_add(101 * d as u64),
            )?;
            set
        };
        let mut train_config = config.train;
        train_config.seed = seed.wrapping_add(7919 * d as u64);
        let (next, _history) = fit(&model, &trainset, &day.validation, &train_config)?;
        model = next;

        let mut f1_per_day = Vec::with_capacity(d + 1);
        for seen in &days[..=d] {
            f1_per_day.push(day_f1(&model, seen, config.threshold)?);
        }
        stages.push(StageEval { after_day: day.day_index, f1_per_day });

        pool.windows.extend(day.train.iter().cloned());
        pool.windows.extend(day.validation.iter().cloned());
    }
    Ok((model, stages))
}

fn day_f1(model: &LstmParams, day: &DayData, threshold: f64) -> Result<Option<f64>> {
    if !day.test_has_both_classes {
        return Ok(None);
    }
    let mut predictions = Vec::with_capacity(day.test.len());
    let mut labels = Vec::with_capacity(day.test.len());
    for w in &day.test {
        predictions.push(predict_window(model, w, threshold)?.label);
        labels.push(w.label);
    }
    Ok(Some(compute_metrics(&predictions, &labels)?.f1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialRun {
    pub ratio: f64,
    pub seed: u64,
    pub stages: Vec<StageEval>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialResult {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub day_indices: Vec<u32>,
    pub runs: Vec<SequentialRun>,
    /// Seed-averaged F1 per [ratio][day] after the final stage; `None` marks
    /// a day whose test split is single-class.
    pub final_f1: Vec<Vec<Option<f64>>>,
    /// Mean over the valid cells of each ratio's final row.
    pub mean_final_f1: Vec<f64>,
}

/// The replay-ratio experiment: every (ratio, seed) pair runs the full
/// sequential schedule; final-stage F1 is averaged over seeds.
pub fn run_sequential_days(
    days: &[DayData],
    ratios: &[f64],
    seeds: &[u64],
    config: &HarnessConfig,
) -> Result<SequentialResult> {
    if ratios.is_empty() || seeds.is_empty() {
        return Err(SentinelError::EmptyInput("run_sequential_days: ratios/seeds"));
    }
    let mut runs = Vec::with_capacity(ratios.len() * seeds.len());
    let mut final_f1 = Vec::with_capacity(ratios.len());
    let mut mean_final_f1 = Vec::with_capacity(ratios.len());

    for &ratio in ratios {
        let mut sums = vec![0.0f64; days.len()];
        for &seed in seeds {
            let (_, stages) = run_sequence(days, ratio, seed, config)?;
            let last = stages.last().expect("at least one stage");
            for (i, cell) in last.f1_per_day.iter().enumerate() {
                if let Some(f1) = cell {
                    sums[i] += f1;
                }
            }
            runs.push(SequentialRun { ratio, seed, stages });
        }
        let row: Vec<Option<f64>> = days
            .iter()
            .enumerate()
            .map(|(i, day)| day.test_has_both_classes.then(|| sums[i] / seeds.len() as f64))
            .collect();
        let valid: Vec<f64> = row.iter().flatten().copied().collect();
        mean_final_f1.push(if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        });
        final_f1.push(row);
    }

    Ok(SequentialResult {
        ratios: ratios.to_vec(),
        seeds: seeds.to_vec(),
        day_indices: days.iter().map(|d| d.day_index).collect(),
        runs,
        final_f1,
        mean_final_f1,
    })
}

/// Pooled final-model error rates over all days' test windows.
fn pooled_rates(
    model: &LstmParams,
    days: &[DayData],
    threshold: f64,
) -> Result<Option<(f64, f64, f64)>> {
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for day in days {
        for w in &day.test {
            predictions.push(predict_window(model, w, threshold)?.label);
            labels.push(w.label);
        }
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Ok(None);
    }
    let m = compute_metrics(&predictions, &labels)?;
    Ok(Some((m.fpr_pct, m.fnr_pct, m.f1)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub window_sizes: Vec<usize>,
    pub ratios: Vec<f64>,
    /// Seed-averaged pooled final-model percentages per [window][ratio].
    pub fpr_pct: Vec<Vec<Option<f64>>>,
    pub fnr_pct: Vec<Vec<Option<f64>>>,
    pub f1: Vec<Vec<Option<f64>>>,
    /// The (window_size, ratio) cell with the highest pooled F1, i.e. the
    /// minimum F1 regret; `None` when every cell is invalid.
    pub best_cell: Option<(usize, f64)>,
}

/// The window-size by replay-ratio sweep. Each cell reruns the sequential
/// schedule and reports seed-averaged error rates pooled over every day's
/// held-out windows under the final model.
pub fn sweep_window_ratio(
    records: &[KpmRecord],
    window_sizes: &[usize],
    ratios: &[f64],
    seeds: &[u64],
    config: &HarnessConfig,
) -> Result<SweepResult> {
    if window_sizes.is_empty() || ratios.is_empty() || seeds.is_empty() {
        return Err(SentinelError::EmptyInput("sweep_window_ratio: grid axes"));
    }
    let mut fpr = Vec::with_capacity(window_sizes.len());
    let mut fnr = Vec::with_capacity(window_sizes.len());
    let mut f1 = Vec::with_capacity(window_sizes.len());

    for &window in window_sizes {
        let mut cfg = config.clone();
        cfg.window_size = window;
        let days = prepare_days(records, &cfg)?;
        let mut fpr_row = Vec::with_capacity(ratios.len());
        let mut fnr_row = Vec::with_capacity(ratios.len());
        let mut f1_row = Vec::with_capacity(ratios.len());
        for &ratio in ratios {
            let mut acc: Option<(f64, f64, f64)> = None;
            let mut n = 0usize;
            for &seed in seeds {
                let (model, _) = run_sequence(&days, ratio, seed, &cfg)?;
                if let Some((a, b, c)) = pooled_rates(&model, &days, cfg.threshold)? {
                    let entry = acc.get_or_insert((0.0, 0.0, 0.0));
                    entry.0 += a;
                    entry.1 += b;
                    entry.2 += c;
                    n += 1;
                }
            }
            let cell = acc.map(|(a, b, c)| (a / n as f64, b / n as f64, c / n as f64));
            fpr_row.push(cell.map(|c| c.0));
            fnr_row.push(cell.map(|c| c.1));
            f1_row.push(cell.map(|c| c.2));
        }
        fpr.push(fpr_row);
        fnr.push(fnr_row);
        f1.push(f1_row);
    }

    let mut best: Option<(usize, f64, f64)> = None;
    for (i, row) in f1.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                if best.is_none_or(|(_, _, b)| *v > b) {
                    best = Some((window_sizes[i], ratios[j], *v));
                }
            }
        }
    }

    Ok(SweepResult {
        window_sizes: window_sizes.to_vec(),
        ratios: ratios.to_vec(),
        fpr_pct: fpr,
        fnr_pct: fnr,
        f1,
        best_cell: best.map(|(w, r, _)| (w, r)),
    })
}

fn fmt_cell(cell: &Option<f64>) -> String {
    match cell {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// Final-stage F1 per ratio and day as CSV: one row per ratio.
pub fn write_ratio_day_csv(path: &Path, result: &SequentialResult) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let header: Vec<String> =
        result.day_indices.iter().map(|d| format!("day_{d}_f1")).collect();
    writeln!(file, "ratio,{},mean_f1", header.join(","))?;
    for (i, &ratio) in result.ratios.iter().enumerate() {
        let cells: Vec<String> = result.final_f1[i].iter().map(fmt_cell).collect();
        writeln!(file, "{ratio},{},{:.6}", cells.join(","), result.mean_final_f1[i])?;
    }
    Ok(())
}

/// One window-by-ratio grid as CSV: rows are window sizes, columns ratios.
pub fn write_grid_csv(
    path: &Path,
    window_sizes: &[usize],
    ratios: &[f64],
    grid: &[Vec<Option<f64>>],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let header: Vec<String> = ratios.iter().map(|r| format!("ratio_{r}")).collect();
    writeln!(file, "window,{}", header.join(","))?;
    for (i, &window) in window_sizes.iter().enumerate() {
        let cells: Vec<String> = grid[i].iter().map(fmt_cell).collect();
        writeln!(file, "{window},{}", cells.join(","))?;
    }
    Ok(())
}

/// Long-form stage series: F1 on each already-seen day after every stage of
/// every run, for plotting forgetting curves.
pub fn write_stage_series_csv(path: &Path, result: &SequentialResult) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "ratio,seed,after_day,eval_day,f1")?;
    for run in &result.runs {
        for stage in &run.stages {
            for (i, cell) in stage.f1_per_day.iter().enumerate() {
                writeln!(
                    file,
                    "{},{},{},{},{}",
                    run.ratio,
                    run.seed,
                    stage.after_day,
                    result.day_indices[i],
                    fmt_cell(cell)
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_summary_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}
