//! LIME-style local explanations: quartile discretization of flattened
//! window cells, binary perturbation sampling around the instance, and a
//! kernel-weighted ridge surrogate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FEATURE_NAMES;
use crate::error::{Result, SentinelError};

pub const MIN_PERTURBATIONS: usize = 50;

/// Flattened-cell names, timestep-major: `<feature>_t-<step>` with step 0
/// being the first timestep of the window.
pub fn cell_names(window_size: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(window_size * FEATURE_NAMES.len());
    for t in 0..window_size {
        for feat in FEATURE_NAMES {
            names.push(format!("{feat}_t-{t}"));
        }
    }
    names
}

/// Per-cell quartile bins fitted on flattened training windows. Duplicate
/// quantiles collapse, so a cell can have fewer than four bins; a constant
/// cell has a single bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Discretizer {
    pub cell_names: Vec<String>,
    /// Ascending, deduplicated bin edges per cell.
    pub thresholds: Vec<Vec<f64>>,
    /// Sorted training values per cell, kept for perturbation resampling.
    sorted_values: Vec<Vec<f64>>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation between order statistics.
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Discretizer {
    pub fn fit(training: &[Vec<f64>], cell_names: Vec<String>) -> Result<Discretizer> {
        if training.is_empty() {
            return Err(SentinelError::EmptyInput("discretizer training data"));
        }
        let cells = cell_names.len();
        for row in training {
            if row.len() != cells {
                return Err(SentinelError::ShapeMismatch(format!(
                    "training row has {} cells, expected {cells}",
                    row.len()
                )));
            }
        }
        let mut thresholds = Vec::with_capacity(cells);
        let mut sorted_values = Vec::with_capacity(cells);
        for c in 0..cells {
            let mut vals: Vec<f64> = training.iter().map(|r| r[c]).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(SentinelError::NonFinite("discretizer training data"));
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut edges: Vec<f64> =
                [0.25, 0.5, 0.75].iter().map(|&p| quantile(&vals, p)).collect();
            edges.dedup();
            // An edge at the maximum would leave an empty top bin; a constant
            // cell keeps a single bin and renders as an equality rule.
            edges.retain(|&e| e < vals[vals.len() - 1]);
            thresholds.push(edges);
            sorted_values.push(vals);
        }
        Ok(Discretizer { cell_names, thresholds, sorted_values })
    }

    pub fn num_cells(&self) -> usize {
        self.cell_names.len()
    }

    /// Bin index of a value: values equal to an edge fall in the lower bin.
    pub fn bin_of(&self, cell: usize, value: f64) -> usize {
        self.thresholds[cell].partition_point(|&t| value > t)
    }

    fn num_bins(&self, cell: usize) -> usize {
        self.thresholds[cell].len() + 1
    }

    /// Training values falling in `bin` of `cell`.
    fn bin_slice(&self, cell: usize, bin: usize) -> &[f64] {
        let vals = &self.sorted_values[cell];
        let edges = &self.thresholds[cell];
        let start = if bin == 0 { 0 } else { vals.partition_point(|&v| v <= edges[bin - 1]) };
        let end =
            if bin == edges.len() { vals.len() } else { vals.partition_point(|&v| v <= edges[bin]) };
        &vals[start..end]
    }

    /// Human-readable rule for the bin containing `value`.
    pub fn rule_for(&self, cell: usize, value: f64) -> String {
        let name = &self.cell_names[cell];
        let edges = &self.thresholds[cell];
        if edges.is_empty() {
            return format!("{name} = {:.2}", self.sorted_values[cell][0]);
        }
        let bin = self.bin_of(cell, value);
        if bin == 0 {
            format!("{name} <= {:.2}", edges[0])
        } else if bin == edges.len() {
            format!("{name} > {:.2}", edges[edges.len() - 1])
        } else {
            format!("{:.2} < {name} <= {:.2}", edges[bin - 1], edges[bin])
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LimeConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub ridge_lambda: f64,
    /// Exponential-kernel width; `None` means the 0.75 * sqrt(cells) default.
    pub kernel_width: Option<f64>,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { num_samples: 5000, seed: 0, ridge_lambda: 1e-3, kernel_width: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimeRule {
    pub cell_index: usize,
    pub rule: String,
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimeExplanation {
    /// One rule per cell, sorted by descending absolute weight.
    pub rules: Vec<LimeRule>,
    pub intercept: f64,
    pub r_squared: f64,
    pub kernel_width: f64,
    pub sample_count: usize,
}

/// Fit a local ridge surrogate around one flattened instance.
///
/// Each perturbation keeps a cell with probability 0.5 (interpretable value
/// 1); otherwise the cell is resampled from a different bin, drawn from the
/// training marginal over the remaining bins, with a uniformly chosen
/// training value inside that bin. Sample weights use the exponential kernel
/// over the count of flipped cells with width 0.75 * sqrt(num_cells).
pub fn explain_lime<F>(
    f: F,
    instance: &[f64],
    discretizer: &Discretizer,
    config: &LimeConfig,
) -> Result<LimeExplanation>
where
    F: Fn(&[f64]) -> f64,
{
    let m = discretizer.num_cells();
    if instance.len() != m {
        return Err(SentinelError::ShapeMismatch(format!(
            "instance has {} cells, discretizer has {m}",
            instance.len()
        )));
    }
    if instance.iter().any(|v| !v.is_finite()) {
        return Err(SentinelError::NonFinite("lime instance"));
    }
    if config.num_samples < MIN_PERTURBATIONS {
        return Err(SentinelError::InsufficientPerturbations(config.num_samples));
    }

    let n = config.num_samples;
    let kernel_width = config.kernel_width.unwrap_or(0.75 * (m as f64).sqrt());
    if kernel_width.is_nan() || kernel_width <= 0.0 {
        return Err(SentinelError::InvalidArgument(format!(
            "kernel width must be positive, got {kernel_width}"
        )));
    }
    let instance_bins: Vec<usize> =
        (0..m).map(|c| discretizer.bin_of(c, instance[c])).collect();
    // Marginal bin counts excluding the instance bin, per cell.
    let other_bins: Vec<Vec<(usize, usize)>> = (0..m)
        .map(|c| {
            (0..discretizer.num_bins(c))
                .filter(|&b| b != instance_bins[c])
                .map(|b| (b, discretizer.bin_slice(c, b).len()))
                .filter(|&(_, count)| count > 0)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = DMatrix::zeros(n, m + 1);
    let mut y = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut probe = instance.to_vec();
    for r in 0..n {
        probe.copy_from_slice(instance);
        let mut flipped = 0usize;
        x[(r, 0)] = 1.0;
        for c in 0..m {
            let keep = other_bins[c].is_empty() || rng.gen::<f64>() < 0.5;
            if keep {
                x[(r, c + 1)] = 1.0;
            } else {
                flipped += 1;
                let total: usize = other_bins[c].iter().map(|&(_, n)| n).sum();
                let mut pick = rng.gen_range(0..total);
                let mut bin = other_bins[c][0].0;
                for &(b, count) in &other_bins[c] {
                    if pick < count {
                        bin = b;
                        break;
                    }
                    pick -= count;
                }
                let slice = discretizer.bin_slice(c, bin);
                probe[c] = slice[rng.gen_range(0..slice.len())];
            }
        }
        y[r] = f(&probe);
        let d2 = flipped as f64;
        w[r] = (-d2 / (kernel_width * kernel_width)).exp();
    }

    // Weighted ridge, intercept unregularized.
    let xtw = {
        let mut xt = x.transpose();
        for (c, mut col) in xt.column_iter_mut().enumerate() {
            col *= w[c];
        }
        xt
    };
    let mut a = &xtw * &x;
    for i in 1..=m {
        a[(i, i)] += config.ridge_lambda;
    }
    let b = &xtw * &y;
    let beta = a
        .lu()
        .solve(&b)
        .ok_or_else(|| SentinelError::InvalidArgument("lime ridge system singular".into()))?;

    let y_hat = &x * &beta;
    let w_sum: f64 = w.iter().sum();
    let y_mean: f64 = w.iter().zip(y.iter()).map(|(wi, yi)| wi * yi).sum::<f64>() / w_sum;
    let tss: f64 = w.iter().zip(y.iter()).map(|(wi, yi)| wi * (yi - y_mean).powi(2)).sum();
    let rss: f64 =
        w.iter().zip(y.iter().zip(y_hat.iter())).map(|(wi, (yi, yh))| wi * (yi - yh).powi(2)).sum();
    // A locally constant model is fit perfectly by its intercept.
    let r_squared = if tss < 1e-12 { 1.0 } else { 1.0 - rss / tss };

    let mut rules: Vec<LimeRule> = (0..m)
        .map(|c| LimeRule {
            cell_index: c,
            rule: discretizer.rule_for(c, instance[c]),
            phi: beta[c + 1],
        })
        .collect();
    rules.sort_by(|a, b| b.phi.abs().partial_cmp(&a.phi.abs()).unwrap());
    Ok(LimeExplanation {
        rules,
        intercept: beta[0],
        r_squared,
        kernel_width,
        sample_count: n,
    })
}
