//! Feedback scoring, gating, and parsing.
//!
//! The assistant's raw output is turned into a rollback instruction in
//! three steps: its confidence is the arithmetic mean of its per-token
//! generation probabilities, feedback scoring below the threshold is
//! discarded outright (neither forwarded to the generator nor able to
//! trigger a rollback), and the error location is extracted from the text.
//!
//! # Location-parsing tolerances
//!
//! The extractor looks for an `Error Location` marker followed by
//! `Action <integer>` and is tolerant of:
//!
//! | variation   | accepted forms                               |
//! |-------------|----------------------------------------------|
//! | asterisks   | `**Error Location**`, `** Error Location **` |
//! | case        | `error location`, `ERROR LOCATION`           |
//! | colon       | present or absent, surrounded by spaces      |
//! | whitespace  | any run of spaces/tabs between the parts     |
//!
//! When several matches exist the **last** one wins, because the
//! conclusion section of an analysis comes last. Locations outside
//! `1..=trajectory length` are rejected, which degrades to "no rollback".
//! The explanation is the text after the last `Explanation` marker, or the
//! whole raw text when no marker exists.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::ContractViolation;

/// Parsed assistant output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub raw_text: String,
    /// 1-based step the assistant flagged, when one was found and in range.
    pub error_step: Option<usize>,
    pub explanation: String,
    /// Mean token probability of the assistant output, in [0, 1].
    pub confidence: f64,
}

/// Arithmetic mean of per-token probabilities.
pub fn confidence_score(token_probs: &[f64]) -> Result<f64, ContractViolation> {
    if token_probs.is_empty() {
        return Err(ContractViolation(
            "confidence_score over an empty probability list".into(),
        ));
    }
    Ok(token_probs.iter().sum::<f64>() / token_probs.len() as f64)
}

/// True when the feedback passes the gate: score >= theta. Strictly lower
/// scores are discarded.
pub fn accept_feedback(score: f64, theta: f64) -> bool {
    score >= theta
}

fn location_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)error[ \t]+location[*\s]*:?[*\s]*action[ \t]+(\d+)").unwrap()
    })
}

fn explanation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\*{0,2}[ \t]*explanation[ \t]*\*{0,2}[ \t]*:?[ \t]*").unwrap())
}

/// Extract the flagged step and explanation from raw assistant text.
/// Unparseable text degrades to `error_step = None`, meaning no rollback.
/// The returned confidence is 0.0; scoring happens separately.
pub fn parse_feedback(raw: &str, traj_len: usize) -> Feedback {
    let error_step = location_regex()
        .captures_iter(raw)
        .last()
        .and_then(|caps| caps[1].parse::<usize>().ok())
        .filter(|step| (1..=traj_len).contains(step));

    let explanation = explanation_regex()
        .find_iter(raw)
        .last()
        .map(|m| raw[m.end()..].trim().to_string())
        .filter(|text| !text.is_empty())
        .unwrap_or_else(|| raw.trim().to_string());

    Feedback {
        raw_text: raw.to_string(),
        error_step,
        explanation,
        confidence: 0.0,
    }
}
