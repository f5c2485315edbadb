//! Pronoun resolution accuracy on explicit-explanation stimuli, split by
//! whether the explanation agrees with the verb's bias.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::scorer::{PronounScores, ResponseRecord};
use crate::stimgen::{Congruency, Mode, Referent, StimulusVariant};

#[derive(Debug, thiserror::Error)]
pub enum CongruencyError {
    #[error("stimulus {0} is not an explanation stimulus")]
    NotExplanation(String),
    #[error("stimulus {0} has no congruency label")]
    Unlabelled(String),
    #[error("{} stimuli have no scores: {}", .0.len(), preview(.0))]
    MissingScores(Vec<String>),
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .cloned()
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Subject,
    Object,
    Tie,
}

pub fn resolve_preference(scores: &PronounScores) -> Preference {
    if scores.p_s > scores.p_o {
        Preference::Subject
    } else if scores.p_s < scores.p_o {
        Preference::Object
    } else {
        Preference::Tie
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub n: usize,
    pub correct: usize,
    /// `None` when the condition is empty.
    pub accuracy: Option<f64>,
}

impl ConditionStats {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
        self.accuracy = Some(self.correct as f64 / self.n as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbCongruency {
    pub verb_id: String,
    pub condition: Congruency,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongruencyReport {
    pub congruent: ConditionStats,
    pub incongruent: ConditionStats,
    pub neutral: ConditionStats,
    pub overall: ConditionStats,
    /// Mean of per-verb accuracies within each condition.
    pub per_verb_mean: BTreeMap<Congruency, f64>,
    /// One row per (verb, condition).
    pub per_verb: Vec<VerbCongruency>,
}

impl CongruencyReport {
    pub fn condition(&self, c: Congruency) -> Option<&ConditionStats> {
        match c {
            Congruency::Congruent => Some(&self.congruent),
            Congruency::Incongruent => Some(&self.incongruent),
            Congruency::Neutral => Some(&self.neutral),
            Congruency::NA => None,
        }
    }
}

fn target_of(s: &StimulusVariant) -> Result<Referent, CongruencyError> {
    match s.mode {
        Mode::Explanation { target } => Ok(target),
        _ => Err(CongruencyError::NotExplanation(s.id())),
    }
}

fn is_correct(pref: Preference, target: Referent) -> bool {
    matches!(
        (pref, target),
        (Preference::Subject, Referent::Subject) | (Preference::Object, Referent::Object)
    )
}

/// Accuracy per condition over `stimuli`, scored by `responses`.
///
/// Every stimulus must have a response; extra responses are ignored.
pub fn evaluate(
    stimuli: &[StimulusVariant],
    responses: &[ResponseRecord],
) -> Result<CongruencyReport, CongruencyError> {
    let by_id: HashMap<&str, &PronounScores> = responses
        .iter()
        .map(|r| (r.stimulus_id.as_str(), &r.scores))
        .collect();
    let missing: Vec<String> = stimuli
        .iter()
        .map(StimulusVariant::id)
        .filter(|id| !by_id.contains_key(id.as_str()))
        .collect();
    if !missing.is_empty() {
        return Err(CongruencyError::MissingScores(missing));
    }

    let mut congruent = ConditionStats::default();
    let mut incongruent = ConditionStats::default();
    let mut neutral = ConditionStats::default();
    let mut overall = ConditionStats::default();
    let mut verbs: BTreeMap<(String, Congruency), (usize, usize)> = BTreeMap::new();

    for s in stimuli {
        let target = target_of(s)?;
        let id = s.id();
        let correct = is_correct(resolve_preference(by_id[id.as_str()]), target);
        match s.congruency {
            Congruency::Congruent => congruent.add(correct),
            Congruency::Incongruent => incongruent.add(correct),
            Congruency::Neutral => neutral.add(correct),
            Congruency::NA => return Err(CongruencyError::Unlabelled(id)),
        }
        overall.add(correct);
        let cell = verbs.entry((s.verb_id.clone(), s.congruency)).or_default();
        cell.0 += 1;
        cell.1 += usize::from(correct);
    }

    let per_verb: Vec<VerbCongruency> = verbs
        .into_iter()
        .map(|((verb_id, condition), (n, correct))| VerbCongruency {
            verb_id,
            condition,
            n,
            correct,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    let mut sums: BTreeMap<Congruency, (f64, usize)> = BTreeMap::new();
    for v in &per_verb {
        let e = sums.entry(v.condition).or_default();
        e.0 += v.accuracy;
        e.1 += 1;
    }
    let per_verb_mean = sums
        .into_iter()
        .map(|(c, (sum, k))| (c, sum / k as f64))
        .collect();

    Ok(CongruencyReport {
        congruent,
        incongruent,
        neutral,
        overall,
        per_verb_mean,
        per_verb,
    })
}
