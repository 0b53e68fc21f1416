//! Bundled exemplar and demo data: two worked prompt instances with
//! human-written responses (one normal, one anomalous), a third query
//! instance, recorded insight outputs, and the golden rendered prompt.

use serde::Deserialize;

use crate::data::{reference_stats, FEATURE_NAMES};
use crate::error::{Result, SentinelError};
use crate::lime::LimeRule;
use crate::lstm::Prediction;
use crate::prompt::{render_user_text, Exemplar, PromptInputs, PromptMode};

pub const INSTANCE_TP_JSON: &str = include_str!("../fixtures/instance_tp.json");
pub const INSTANCE_TN_JSON: &str = include_str!("../fixtures/instance_tn.json");
pub const INSTANCE_QUERY_JSON: &str = include_str!("../fixtures/instance_query.json");
pub const ASSISTANT_TN_TEXT: &str = include_str!("../fixtures/assistant_tn.md");
pub const ASSISTANT_TP_TEXT: &str = include_str!("../fixtures/assistant_tp.md");
pub const LLM_OUTPUT_ZERO_SHOT: &str = include_str!("../fixtures/llm_output_zero_shot.md");
pub const LLM_OUTPUT_FEW_SHOT: &str = include_str!("../fixtures/llm_output_few_shot.md");
pub const GOLDEN_ZERO_SHOT_PROMPT: &str =
    include_str!("../fixtures/golden_zero_shot_prompt.md");

#[derive(Deserialize)]
struct RawInstance {
    label: u8,
    sequence: Vec<Vec<f64>>,
    lime: Vec<(String, f64)>,
    shap_local: Vec<Vec<f64>>,
    shap_global: Vec<Vec<f64>>,
}

fn cell_index_of(rule: &str, window_size: usize) -> Result<usize> {
    for t in 0..window_size {
        for (f, feat) in FEATURE_NAMES.iter().enumerate() {
            if rule.contains(&format!("{feat}_t-{t}")) {
                return Ok(t * FEATURE_NAMES.len() + f);
            }
        }
    }
    Err(SentinelError::InvalidArgument(format!("rule names no known cell: {rule}")))
}

/// Parse one bundled instance into prompt inputs, attaching the reference
/// feature statistics. The fixture stores only the hard label; the
/// probability mirrors it.
pub fn instance_inputs(json: &str) -> Result<PromptInputs> {
    let raw: RawInstance = serde_json::from_str(json)?;
    let window_size = raw.sequence.len();
    let lime_rules = raw
        .lime
        .into_iter()
        .map(|(rule, phi)| {
            Ok(LimeRule { cell_index: cell_index_of(&rule, window_size)?, rule, phi })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptInputs {
        stats: reference_stats(),
        sequence: raw.sequence,
        prediction: Prediction { probability: f64::from(raw.label), label: raw.label },
        lime_rules,
        shap_local: raw.shap_local,
        shap_global: raw.shap_global,
    })
}

/// The two bundled exemplars in fixed order: normal case first, anomalous
/// second. User texts are rendered in the few-shot layout.
pub fn bundled_exemplars() -> Result<Vec<Exemplar>> {
    let tn = instance_inputs(INSTANCE_TN_JSON)?;
    let tp = instance_inputs(INSTANCE_TP_JSON)?;
    Ok(vec![
        Exemplar {
            user_text: render_user_text(&tn, PromptMode::FewShot)?,
            assistant_text: ASSISTANT_TN_TEXT.to_string(),
        },
        Exemplar {
            user_text: render_user_text(&tp, PromptMode::FewShot)?,
            assistant_text: ASSISTANT_TP_TEXT.to_string(),
        },
    ])
}
