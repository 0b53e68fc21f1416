//! Core library for the KPM anomaly-detection pipeline: data handling and
//! synthesis, an LSTM classifier, model-agnostic explanations, prompt
//! construction, an LLM gateway, readability scoring, and the experiment
//! harness.

pub mod data;
pub mod error;
pub mod fixtures;
pub mod gateway;
pub mod harness;
pub mod lime;
pub mod lstm;
pub mod metrics;
pub mod prompt;
pub mod readability;
pub mod report;
pub mod shap;

pub use error::{Result, SentinelError};
