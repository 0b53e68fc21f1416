//! Structured prompt construction for the insight stage: feature statistics,
//! the input sequence, the prediction, LIME and SHAP tables, and the task
//! block, rendered as byte-deterministic markdown in zero-shot or few-shot
//! mode.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, FEATURE_NAMES};
use crate::error::{Result, SentinelError};
use crate::lime::LimeRule;
use crate::lstm::Prediction;

pub const ZERO_SHOT_SYSTEM_TEXT: &str =
    "You are a cybersecurity expert analyzing LSTM outputs for DDoS detection.";
pub const FEW_SHOT_SYSTEM_TEXT: &str = "You are a cybersecurity expert analyzing LSTM outputs \
for DDoS detection. Respond with 3 sections: Anomaly Summary (3-6 bullet points), \
Misclassification Likelihood (1-2 bullets), and Mitigation Steps (2-4 bullets).";

const ZERO_SHOT_TASK_TEXT: &str = "Provide a human-readable summary of the model's decision. \
Highlight the most influential features or patterns that contributed to the classification. \
Assess the likelihood of misclassification and suggest actionable mitigation strategies for \
the network operator.";
const FEW_SHOT_TASK_TEXT: &str = "Provide a human-readable summary of the model's decision. \
Highlight which features or patterns most influenced the classification outcome. Assess the \
likelihood of misclassification and suggest actionable mitigation steps for the network \
operator.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

/// A worked example pair placed ahead of the real query in few-shot mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub user_text: String,
    pub assistant_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub system_text: String,
    pub exemplars: Vec<Exemplar>,
    pub user_text: String,
}

/// One chat message in the gateway wire shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl PromptBundle {
    /// Flatten to the gateway message list: system, exemplar pairs in
    /// order, then the query.
    pub fn to_messages(&self) -> Vec<Message> {
        let mut out = vec![Message { role: "system".into(), content: self.system_text.clone() }];
        for ex in &self.exemplars {
            out.push(Message { role: "user".into(), content: ex.user_text.clone() });
            out.push(Message { role: "assistant".into(), content: ex.assistant_text.clone() });
        }
        out.push(Message { role: "user".into(), content: self.user_text.clone() });
        out
    }
}

/// Everything the user prompt displays about one explained window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptInputs {
    pub stats: FeatureStats,
    /// Normalized input sequence, one row per timestep.
    pub sequence: Vec<Vec<f64>>,
    pub prediction: Prediction,
    /// LIME rules in display order (reading order of the rendered table).
    pub lime_rules: Vec<LimeRule>,
    /// Per-timestep local SHAP attributions.
    pub shap_local: Vec<Vec<f64>>,
    /// Per-timestep global mean absolute SHAP values.
    pub shap_global: Vec<Vec<f64>>,
}

fn fmt5(v: f64) -> String {
    format!("{v:.5}")
}

fn grid_table(out: &mut String, rows: &[Vec<f64>]) {
    out.push_str("| Timestep |");
    for feat in FEATURE_NAMES {
        out.push_str(&format!(" {feat} |"));
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in FEATURE_NAMES {
        out.push_str(" --- |");
    }
    out.push('\n');
    for (t, row) in rows.iter().enumerate() {
        out.push_str(&format!("| T{t} |"));
        for v in row {
            out.push_str(&format!(" {} |", fmt5(*v)));
        }
        out.push('\n');
    }
}

fn check_grid(name: &str, rows: &[Vec<f64>]) -> Result<()> {
    if rows.is_empty() {
        return Err(SentinelError::EmptyInput("prompt grid"));
    }
    for row in rows {
        if row.len() != FEATURE_NAMES.len() {
            return Err(SentinelError::ShapeMismatch(format!(
                "{name} row has {} values, expected {}",
                row.len(),
                FEATURE_NAMES.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SentinelError::NonFinite("prompt grid"));
        }
    }
    Ok(())
}

/// Render the user prompt for one instance. Section order is fixed:
/// statistics, sequence, prediction, LIME, SHAP local, SHAP global, task.
pub fn render_user_text(inputs: &PromptInputs, mode: PromptMode) -> Result<String> {
    if inputs.stats.per_feature.len() != FEATURE_NAMES.len() {
        return Err(SentinelError::ShapeMismatch(format!(
            "stats table has {} features, expected {}",
            inputs.stats.per_feature.len(),
            FEATURE_NAMES.len()
        )));
    }
    check_grid("sequence", &inputs.sequence)?;
    check_grid("shap_local", &inputs.shap_local)?;
    check_grid("shap_global", &inputs.shap_global)?;
    if inputs.shap_local.len() != inputs.sequence.len() {
        return Err(SentinelError::ShapeMismatch(format!(
            "shap_local has {} timesteps, sequence has {}",
            inputs.shap_local.len(),
            inputs.sequence.len()
        )));
    }
    if inputs.lime_rules.is_empty() {
        return Err(SentinelError::EmptyInput("lime rules"));
    }

    let mut out = String::new();
    out.push_str("Normalized General Data Distribution (Feature Statistics):\n\n");
    out.push_str("| Feature | Normal Mean | Normal Std | Attack Mean | Attack Std |\n");
    out.push_str("| --- | --- | --- | --- | --- |\n");
    for row in &inputs.stats.per_feature {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            row.name,
            fmt5(row.normal_mean),
            fmt5(row.normal_std),
            fmt5(row.attack_mean),
            fmt5(row.attack_std)
        ));
    }

    out.push_str(&format!(
        "\nInput Sequence to LSTM Model ({} timesteps × {} features):\n\n",
        inputs.sequence.len(),
        FEATURE_NAMES.len()
    ));
    grid_table(&mut out, &inputs.sequence);

    let verdict = if inputs.prediction.label == 1 { "Anomalous" } else { "Normal" };
    out.push_str(&format!(
        "\nModel Prediction Output: {} ({verdict})\n",
        inputs.prediction.label
    ));

    match mode {
        PromptMode::ZeroShot => out.push_str("\nLocal Explanation Table (LIME):\n\n"),
        PromptMode::FewShot => out.push_str("\nLIME Local Explanation:\n\n"),
    }
    out.push_str("| Feature | Contrib. | Feature | Contrib. | Feature | Contrib. |\n");
    out.push_str("| --- | --- | --- | --- | --- | --- |\n");
    for chunk in inputs.lime_rules.chunks(3) {
        out.push('|');
        for i in 0..3 {
            match chunk.get(i) {
                Some(r) => out.push_str(&format!(" {} | {} |", r.rule, fmt5(r.phi))),
                None => out.push_str("  |  |"),
            }
        }
        out.push('\n');
    }

    out.push_str("\nSHAP Local Heatmap:\n\n");
    grid_table(&mut out, &inputs.shap_local);

    out.push_str("\nGlobal SHAP Feature Importance:\n\n");
    grid_table(&mut out, &inputs.shap_global);

    match mode {
        PromptMode::ZeroShot => {
            out.push_str("\nTask for the LLM:\n");
            out.push_str(ZERO_SHOT_TASK_TEXT);
        }
        PromptMode::FewShot => {
            out.push_str("\nTask For LLM:\n");
            out.push_str(FEW_SHOT_TASK_TEXT);
        }
    }
    out.push('\n');
    Ok(out)
}

pub fn render_prompt(
    inputs: &PromptInputs,
    mode: PromptMode,
    exemplars: &[Exemplar],
) -> Result<PromptBundle> {
    let (system_text, exemplars) = match mode {
        PromptMode::ZeroShot => (ZERO_SHOT_SYSTEM_TEXT.to_string(), Vec::new()),
        PromptMode::FewShot => {
            if exemplars.is_empty() {
                return Err(SentinelError::InvalidArgument(
                    "few-shot mode requires at least one exemplar".into(),
                ));
            }
            (FEW_SHOT_SYSTEM_TEXT.to_string(), exemplars.to_vec())
        }
    };
    Ok(PromptBundle { mode, system_text, exemplars, user_text: render_user_text(inputs, mode)? })
}

/// Rough budget guard: whitespace words times 1.35, rounded up.
pub fn estimate_tokens(bundle: &PromptBundle) -> usize {
    let words: usize = std::iter::once(bundle.system_text.as_str())
        .chain(std::iter::once(bundle.user_text.as_str()))
        .chain(bundle.exemplars.iter().flat_map(|e| {
            [e.user_text.as_str(), e.assistant_text.as_str()]
        }))
        .map(|t| t.split_whitespace().count())
        .sum();
    (words as f64 * 1.35).ceil() as usize
}
