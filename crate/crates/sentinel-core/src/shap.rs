//! Kernel SHAP attribution over flattened windows, with an exact Shapley
//! enumerator used as the correctness oracle for small player counts.
//!
//! Players are individual window cells. A coalition keeps the instance value
//! for present players and substitutes the background value for absent ones.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SentinelError};

pub const MAX_EXACT_PLAYERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoalitionSampling {
    /// All 2^M - 2 proper coalitions, weighted by the Shapley kernel.
    FullEnumeration,
    /// The given number of coalitions, sizes drawn from the kernel density
    /// and paired with their complements; uniform regression weights.
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapConfig {
    pub sampling: CoalitionSampling,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig { sampling: CoalitionSampling::Sampled(2048), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapExplanation {
    /// One attribution per player, in player (flattened cell) order.
    pub phi: Vec<f64>,
    /// Model output on the all-background input.
    pub base_value: f64,
    /// Model output on the instance.
    pub fx: f64,
    /// Set when the weighted least squares system was singular and a small
    /// ridge term was added to solve it.
    pub used_ridge_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub feature_names: Vec<String>,
    pub window_size: usize,
    /// Mean absolute attribution per cell (timestep-major), averaged over
    /// all explained instances.
    pub per_cell: Vec<f64>,
    /// Mean absolute attribution per feature, additionally averaged over
    /// timesteps.
    pub per_feature: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Shapley kernel weight for a coalition of size `s` out of `m` players.
/// Undefined (infinite) at s = 0 and s = m.
pub fn shapley_kernel_weight(m: usize, s: usize) -> Result<f64> {
    if m < 2 {
        return Err(SentinelError::InvalidArgument(format!("need at least 2 players, got {m}")));
    }
    if s == 0 || s >= m {
        return Err(SentinelError::InvalidArgument(format!(
            "kernel weight undefined for coalition size {s} of {m}"
        )));
    }
    Ok((m - 1) as f64 / (binomial(m, s) * (s * (m - s)) as f64))
}

fn masked_input(instance: &[f64], background: &[f64], mask: u64, buf: &mut [f64]) {
    for (j, slot) in buf.iter_mut().enumerate() {
        *slot = if mask >> j & 1 == 1 { instance[j] } else { background[j] };
    }
}

fn check_inputs(instance: &[f64], background: &[f64]) -> Result<usize> {
    if instance.len() != background.len() {
        return Err(SentinelError::ShapeMismatch(format!(
            "instance has {} cells, background has {}",
            instance.len(),
            background.len()
        )));
    }
    if instance.is_empty() {
        return Err(SentinelError::EmptyInput("shap instance"));
    }
    if instance.iter().chain(background).any(|v| !v.is_finite()) {
        return Err(SentinelError::NonFinite("shap inputs"));
    }
    Ok(instance.len())
}

/// Exact Shapley values by full coalition enumeration; the value of every
/// coalition is evaluated once and cached by bitmask.
pub fn exact_shapley<F>(f: F, instance: &[f64], background: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let m = check_inputs(instance, background)?;
    if m > MAX_EXACT_PLAYERS {
        return Err(SentinelError::TooManyPlayers(m));
    }
    let mut values = vec![0.0f64; 1usize << m];
    let mut buf = vec![0.0f64; m];
    for (mask, slot) in values.iter_mut().enumerate() {
        masked_input(instance, background, mask as u64, &mut buf);
        *slot = f(&buf);
    }
    // weight(s) = s!(m-s-1)!/m! = 1 / (m * C(m-1, s))
    let weights: Vec<f64> =
        (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mut phi = vec![0.0f64; m];
    for mask in 0..values.len() {
        let size = (mask as u64).count_ones() as usize;
        for (i, phi_i) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *phi_i += weights[size] * (values[mask | 1 << i] - values[mask]);
            }
        }
    }
    Ok(phi)
}

/// Draw a proper coalition size from the kernel density over sizes,
/// proportional to (m-1) / (s (m-s)).
fn sample_size(rng: &mut ChaCha8Rng, cdf: &[f64]) -> usize {
    let u: f64 = rng.gen();
    match cdf.iter().position(|&c| u <= c) {
        Some(idx) => idx + 1,
        None => cdf.len(),
    }
}

fn random_mask(rng: &mut ChaCha8Rng, m: usize, size: usize) -> u64 {
    // Floyd's algorithm for a uniform size-subset.
    let mut mask = 0u64;
    for j in (m - size)..m {
        let t = rng.gen_range(0..=j);
        if mask >> t & 1 == 0 {
            mask |= 1 << t;
        } else {
            mask |= 1 << j;
        }
    }
    mask
}

/// Kernel SHAP attributions for one flattened instance.
///
/// The efficiency constraint (attributions sum to fx - base) holds exactly:
/// the last player is substituted out of the regression and recovered from
/// the constraint afterwards.
pub fn explain_kernel_shap<F>(
    f: F,
    instance: &[f64],
    background: &[f64],
    config: &ShapConfig,
) -> Result<ShapExplanation>
where
    F: Fn(&[f64]) -> f64,
{
    let m = check_inputs(instance, background)?;
    if m < 2 {
        return Err(SentinelError::InvalidArgument("need at least 2 players".into()));
    }
    if m > 63 {
        return Err(SentinelError::TooManyPlayers(m));
    }
    let base_value = f(background);
    let fx = f(instance);

    let mut buf = vec![0.0f64; m];
    let mut masks: Vec<u64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    match config.sampling {
        CoalitionSampling::FullEnumeration => {
            if m > MAX_EXACT_PLAYERS {
                return Err(SentinelError::TooManyPlayers(m));
            }
            for mask in 1..(1u64 << m) - 1 {
                masks.push(mask);
                weights.push(shapley_kernel_weight(m, mask.count_ones() as usize)?);
            }
        }
        CoalitionSampling::Sampled(n) => {
            if n < 2 * m {
                return Err(SentinelError::InvalidArgument(format!(
                    "need at least {} coalitions for {} players, got {}",
                    2 * m,
                    m,
                    n
                )));
            }
            let density: Vec<f64> =
                (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
            let total: f64 = density.iter().sum();
            let mut acc = 0.0;
            let cdf: Vec<f64> = density
                .iter()
                .map(|d| {
                    acc += d / total;
                    acc
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let full = (1u64 << m) - 1;
            while masks.len() + 1 < n {
                let size = sample_size(&mut rng, &cdf);
                let mask = random_mask(&mut rng, m, size);
                masks.push(mask);
                // Antithetic pairing keeps the size distribution symmetric.
                masks.push(full ^ mask);
            }
            if masks.len() < n {
                let size = sample_size(&mut rng, &cdf);
                masks.push(random_mask(&mut rng, m, size));
            }
            // Sampling already follows the kernel, so regression weights
            // stay uniform.
            weights = vec![1.0; masks.len()];
        }
    }

    // Eliminate the last player: y = f(S) - base - z_M (fx - base),
    // design columns are z_j - z_M for j < M.
    let rows = masks.len();
    let cols = m - 1;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DVector::zeros(rows);
    for (r, &mask) in masks.iter().enumerate() {
        masked_input(instance, background, mask, &mut buf);
        let z_last = (mask >> (m - 1) & 1) as f64;
        y[r] = f(&buf) - base_value - z_last * (fx - base_value);
        for c in 0..cols {
            x[(r, c)] = (mask >> c & 1) as f64 - z_last;
        }
    }

    let w = DVector::from_vec(weights);
    let xtw = {
        let mut xt = x.transpose();
        for (c, mut col) in xt.column_iter_mut().enumerate() {
            col *= w[c];
        }
        xt
    };
    let a = &xtw * &x;
    let b = &xtw * &y;
    let mut used_ridge_fallback = false;
    let solution = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => {
            used_ridge_fallback = true;
            let mut ridged = a;
            for i in 0..cols {
                ridged[(i, i)] += 1e-6;
            }
            ridged
                .cholesky()
                .ok_or_else(|| {
                    SentinelError::InvalidArgument("WLS system singular even with ridge".into())
                })?
                .solve(&b)
        }
    };

    let mut phi: Vec<f64> = solution.iter().copied().collect();
    let sum_rest: f64 = phi.iter().sum();
    phi.push(fx - base_value - sum_rest);
    Ok(ShapExplanation { phi, base_value, fx, used_ridge_fallback })
}

/// Aggregate per-cell attributions from many explanations into mean
/// absolute importances. Cell order is timestep-major, so cell index modulo
/// the feature count recovers the feature; all explanations must share the
/// same cell count.
pub fn global_importance(
    explanations: &[ShapExplanation],
    feature_names: &[String],
) -> Result<GlobalImportance> {
    if explanations.is_empty() {
        return Err(SentinelError::EmptyInput("global_importance"));
    }
    let nf = feature_names.len();
    let cells = explanations[0].phi.len();
    if !cells.is_multiple_of(nf) {
        return Err(SentinelError::ShapeMismatch(format!(
            "{cells} attributions do not tile {nf} features"
        )));
    }
    let window_size = cells / nf;
    let mut cell_sums = vec![0.0f64; cells];
    for exp in explanations {
        if exp.phi.len() != cells {
            return Err(SentinelError::ShapeMismatch(format!(
                "explanation has {} attributions, expected {cells}",
                exp.phi.len()
            )));
        }
        for (j, &p) in exp.phi.iter().enumerate() {
            cell_sums[j] += p.abs();
        }
    }
    let n = explanations.len() as f64;
    let per_cell: Vec<f64> = cell_sums.iter().map(|s| s / n).collect();
    let per_feature: Vec<f64> = (0..nf)
        .map(|f| (0..window_size).map(|t| per_cell[t * nf + f]).sum::<f64>() / window_size as f64)
        .collect();
    Ok(GlobalImportance {
        feature_names: feature_names.to_vec(),
        window_size,
        per_cell,
        per_feature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_weight_known_values() {
        assert_relative_eq!(shapley_kernel_weight(4, 1).unwrap(), 0.25, epsilon = 1e-12);
        assert_relative_eq!(shapley_kernel_weight(4, 2).unwrap(), 0.125, epsilon = 1e-12);
        assert!(shapley_kernel_weight(4, 0).is_err());
        assert!(shapley_kernel_weight(4, 4).is_err());
    }

    #[test]
    fn kernel_weight_symmetry() {
        for m in 2..=12usize {
            for s in 1..m {
                assert_relative_eq!(
                    shapley_kernel_weight(m, s).unwrap(),
                    shapley_kernel_weight(m, m - s).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn exact_linear_model_recovers_coefficients() {
        let f = |x: &[f64]| 2.0 * x[0] + 3.0 * x[1];
        let phi = exact_shapley(f, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(phi[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(phi[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_symmetry_and_dummy_axioms() {
        // Players 0 and 1 are interchangeable; player 2 never matters.
        let f = |x: &[f64]| x[0] * x[1] + x[0] + x[1];
        let phi = exact_shapley(f, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(phi[0], phi[1], epsilon = 1e-12);
        assert!(phi[2].abs() < 1e-12);
    }

    #[test]
    fn exact_efficiency_axiom() {
        let f = |x: &[f64]| x[0] * x[1] - 0.5 * x[2] + x[3].powi(2);
        let inst = [0.9, 0.4, 0.7, 0.3];
        let back = [0.1, 0.2, 0.3, 0.4];
        let phi = exact_shapley(f, &inst, &back).unwrap();
        assert_relative_eq!(phi.iter().sum::<f64>(), f(&inst) - f(&back), epsilon = 1e-12);
    }

    #[test]
    fn exact_rejects_large_player_counts() {
        let inst = vec![0.0; 21];
        assert!(matches!(
            exact_shapley(|_| 0.0, &inst, &inst),
            Err(SentinelError::TooManyPlayers(21))
        ));
    }

    fn nonlinear(x: &[f64]) -> f64 {
        let s: f64 = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum();
        1.0 / (1.0 + (-s).exp()) + 0.3 * x[0] * x[x.len() - 1]
    }

    #[test]
    fn full_enumeration_matches_exact() {
        let inst: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let back = vec![0.5; 8];
        let exact = exact_shapley(nonlinear, &inst, &back).unwrap();
        let cfg = ShapConfig { sampling: CoalitionSampling::FullEnumeration, seed: 0 };
        let got = explain_kernel_shap(nonlinear, &inst, &back, &cfg).unwrap();
        assert!(!got.used_ridge_fallback);
        for (a, b) in exact.iter().zip(&got.phi) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn sampled_close_to_exact() {
        let inst: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let back = vec![0.5; 8];
        let exact = exact_shapley(nonlinear, &inst, &back).unwrap();
        let cfg = ShapConfig { sampling: CoalitionSampling::Sampled(4000), seed: 3 };
        let got = explain_kernel_shap(nonlinear, &inst, &back, &cfg).unwrap();
        for (a, b) in exact.iter().zip(&got.phi) {
            assert!((a - b).abs() < 0.05, "exact {a} vs sampled {b}");
        }
    }

    #[test]
    fn local_accuracy_holds_for_both_modes() {
        let inst: Vec<f64> = (0..10).map(|i| (i as f64).sin().abs()).collect();
        let back = vec![0.2; 10];
        for sampling in
            [CoalitionSampling::FullEnumeration, CoalitionSampling::Sampled(500)]
        {
            let cfg = ShapConfig { sampling, seed: 5 };
            let got = explain_kernel_shap(nonlinear, &inst, &back, &cfg).unwrap();
            assert_relative_eq!(
                got.phi.iter().sum::<f64>(),
                got.fx - got.base_value,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn constant_model_gets_zero_attributions() {
        let inst = vec![0.3; 6];
        let back = vec![0.9; 6];
        let cfg = ShapConfig { sampling: CoalitionSampling::Sampled(200), seed: 1 };
        let got = explain_kernel_shap(|_| 0.42, &inst, &back, &cfg).unwrap();
        for p in &got.phi {
            assert!(p.abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_requires_minimum_coalitions() {
        let inst = vec![0.3; 6];
        let cfg = ShapConfig { sampling: CoalitionSampling::Sampled(11), seed: 0 };
        assert!(explain_kernel_shap(|x| x[0], &inst, &inst, &cfg).is_err());
    }

    #[test]
    fn sampled_is_deterministic_under_seed() {
        let inst: Vec<f64> = (0..6).map(|i| 0.1 + 0.12 * i as f64).collect();
        let back = vec![0.0; 6];
        let cfg = ShapConfig { sampling: CoalitionSampling::Sampled(300), seed: 9 };
        let a = explain_kernel_shap(nonlinear, &inst, &back, &cfg).unwrap();
        let b = explain_kernel_shap(nonlinear, &inst, &back, &cfg).unwrap();
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn global_importance_tiles_timesteps() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let e1 = ShapExplanation {
            phi: vec![1.0, -2.0, 3.0, -4.0],
            base_value: 0.0,
            fx: 0.0,
            used_ridge_fallback: false,
        };
        let g = global_importance(&[e1], &names).unwrap();
        assert_eq!(g.window_size, 2);
        assert_eq!(g.per_cell, vec![1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(g.per_feature[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.per_feature[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_inputs_error() {
        assert!(explain_kernel_shap(|_| 0.0, &[0.0; 3], &[0.0; 4], &ShapConfig::default()).is_err());
        assert!(exact_shapley(|_| 0.0, &[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
    }
}
