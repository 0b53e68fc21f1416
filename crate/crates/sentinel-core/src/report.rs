//! The per-window insight report document and its JSON-schema validation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::error::{Result, SentinelError};
use crate::gateway::InsightText;
use crate::lime::LimeExplanation;
use crate::lstm::Prediction;
use crate::prompt::{PromptBundle, PromptMode};
use crate::shap::{GlobalImportance, ShapExplanation};

pub const INSIGHT_REPORT_SCHEMA: &str =
    include_str!("../../../schemas/insight_report.schema.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRef {
    pub window_id: String,
    pub ue_id: String,
    pub start_timestamp: i64,
    pub day_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadabilityScores {
    pub flesch_reading_ease: f64,
    pub gunning_fog: f64,
    pub fog_grade_band: String,
}

/// Everything the explain stage produced for one window. `insight` and
/// `readability` stay null when the provider call failed; the explanations
/// are still worth writing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsightReport {
    pub window: WindowRef,
    pub prediction: Prediction,
    pub lime: LimeExplanation,
    pub shap: ShapExplanation,
    pub shap_global: GlobalImportance,
    pub prompt_mode: PromptMode,
    pub prompt_digest: String,
    pub insight: Option<InsightText>,
    pub readability: Option<ReadabilityScores>,
    pub timings_ms: BTreeMap<String, f64>,
}

/// Stable digest of a rendered bundle: sha256 over system text, exemplar
/// pairs, and user text with length framing.
pub fn prompt_digest(bundle: &PromptBundle) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |part: &str| {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    };
    feed(&bundle.system_text);
    for ex in &bundle.exemplars {
        feed(&ex.user_text);
        feed(&ex.assistant_text);
    }
    feed(&bundle.user_text);
    format!("{:x}", hasher.finalize())
}

/// Validate an arbitrary JSON document against the published report schema.
pub fn validate_report_json(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(INSIGHT_REPORT_SCHEMA)?;
    let validator = jsonschema::validator_for(&schema)
        .map_err(|e| SentinelError::SchemaValidation(e.to_string()))?;
    let errors: Vec<String> =
        validator.iter_errors(value).map(|e| format!("{}: {e}", e.instance_path())).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(SentinelError::SchemaValidation(errors.join("; ")))
    }
}

pub fn validate_report(report: &InsightReport) -> Result<()> {
    validate_report_json(&serde_json::to_value(report)?)
}
