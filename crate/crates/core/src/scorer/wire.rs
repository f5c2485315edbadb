//! JSON wire protocol shared with the inference sidecar.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoreError;

pub const PATH_CLOZE: &str = "/v1/cloze";
pub const PATH_CONTINUATION: &str = "/v1/continuation";
pub const PATH_SEQUENCE: &str = "/v1/sequence";
pub const PATH_DISCRIMINATE: &str = "/v1/discriminate";
pub const PATH_EMBED: &str = "/v1/embed";
pub const PATH_CAPABILITIES: &str = "/v1/capabilities";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeRequest {
    pub text: String,
    pub blank_marker: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRequest {
    pub prefix: String,
    pub candidates: Vec<String>,
}

/// How per-token probabilities are averaged into one sequence score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceAggregation {
    /// Arithmetic mean of token probabilities.
    #[default]
    MeanProb,
    /// Mean of token log-probabilities; scored as its exponential.
    MeanLogprob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRequest {
    pub text: String,
    /// Omitted from the body for the default aggregation.
    #[serde(default, skip_serializing_if = "is_default_aggregation")]
    pub aggregation: SequenceAggregation,
}

fn is_default_aggregation(a: &SequenceAggregation) -> bool {
    *a == SequenceAggregation::MeanProb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminateRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
    pub word_index: usize,
}

/// Candidate probabilities for one slot (cloze and continuation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbs {
    pub probs: BTreeMap<String, f64>,
    #[serde(default)]
    pub top_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_token_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_token_logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminateResponse {
    pub per_token_original_prob: Vec<f64>,
    pub mean_original_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapabilitiesResponse {
    #[serde(default)]
    pub cloze: bool,
    #[serde(default)]
    pub continuation: bool,
    #[serde(default)]
    pub sequence: bool,
    #[serde(default)]
    pub discriminate: bool,
    #[serde(default)]
    pub embed: bool,
    #[serde(default)]
    pub model: Option<String>,
}

fn probability(value: f64, what: &str) -> Result<(), ScoreError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ScoreError::Protocol(format!(
            "{what} = {value} is not a probability"
        )))
    }
}

impl TokenProbs {
    /// Range-check every probability and require each candidate.
    pub fn validate(&self, candidates: &[String]) -> Result<(), ScoreError> {
        for (token, p) in &self.probs {
            probability(*p, &format!("probs[{token:?}]"))?;
        }
        for c in candidates {
            if !self.probs.contains_key(c) {
                return Err(ScoreError::CandidateUnscorable(c.clone()));
            }
        }
        Ok(())
    }
}

impl SequenceResponse {
    /// The sequence score in `[0, 1]` for the requested aggregation.
    pub fn score(&self, aggregation: SequenceAggregation) -> Result<f64, ScoreError> {
        match aggregation {
            SequenceAggregation::MeanProb => {
                let p = self.mean_token_prob.ok_or_else(|| {
                    ScoreError::Protocol("missing field `mean_token_prob`".into())
                })?;
                probability(p, "mean_token_prob")?;
                Ok(p)
            }
            SequenceAggregation::MeanLogprob => {
                let lp = self.mean_token_logprob.ok_or_else(|| {
                    ScoreError::Protocol("missing field `mean_token_logprob`".into())
                })?;
                if !lp.is_finite() || lp > 0.0 {
                    return Err(ScoreError::Protocol(format!(
                        "mean_token_logprob = {lp} is not a log-probability"
                    )));
                }
                Ok(lp.exp())
            }
        }
    }
}

impl DiscriminateResponse {
    pub fn validate(&self) -> Result<(), ScoreError> {
        for (i, p) in self.per_token_original_prob.iter().enumerate() {
            probability(*p, &format!("per_token_original_prob[{i}]"))?;
        }
        probability(self.mean_original_prob, "mean_original_prob")
    }
}

impl EmbedResponse {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.vector.len() != self.dim || self.dim == 0 {
            return Err(ScoreError::Protocol(format!(
                "embedding has {} entries but dim = {}",
                self.vector.len(),
                self.dim
            )));
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err(ScoreError::Protocol("non-finite embedding entry".into()));
        }
        Ok(())
    }
}
