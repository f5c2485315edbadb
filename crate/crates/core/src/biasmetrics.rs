//! Verb-level bias scores from per-stimulus pronoun scores.
//!
//! For each verb, every stimulus votes for the subject (`p_s > p_o`), the
//! object (`p_s < p_o`) or neither. The bias score is
//! `100 * (s_wins - o_wins) / (s_wins + o_wins)`, so ties shrink the
//! denominator instead of pulling the score towards zero.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::lexicon::{Gender, Polarity, VerbEntry};
use crate::scorer::{PronounScores, Pronouns, ResponseRecord};

#[derive(Debug, thiserror::Error)]
pub enum BiasError {
    #[error("cannot tally an empty list of scores")]
    Empty,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("responses mix {what}: {first} and {other}")]
    Mixed {
        what: &'static str,
        first: String,
        other: String,
    },
    #[error("no discount groups: the response set is empty")]
    EmptyTable,
    #[error("no discount group for ({pronoun}, {subject_gender}, {nonce})")]
    MissingGroup {
        pronoun: String,
        subject_gender: Gender,
        nonce: String,
    },
    #[error("no response carries a top token")]
    NoTopTokens,
    #[error("verb {0} has no responses")]
    MissingVerb(String),
    #[error("bias results: {0}")]
    Csv(#[from] csv::Error),
    #[error("bias results: {0}")]
    Io(#[from] std::io::Error),
}

/// Win counts of one verb.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub s_wins: usize,
    pub o_wins: usize,
    pub ties: usize,
}

impl Tally {
    pub fn n(&self) -> usize {
        self.s_wins + self.o_wins + self.ties
    }

    pub fn bias(&self) -> Option<f64> {
        bias_score(self.s_wins, self.o_wins)
    }
}

pub fn tally(scores: &[PronounScores]) -> Result<Tally, BiasError> {
    if scores.is_empty() {
        return Err(BiasError::Empty);
    }
    let mut t = Tally::default();
    for (i, s) in scores.iter().enumerate() {
        if !s.p_s.is_finite() || !s.p_o.is_finite() {
            return Err(BiasError::NonFinite(i));
        }
        match s.p_s.partial_cmp(&s.p_o) {
            Some(std::cmp::Ordering::Greater) => t.s_wins += 1,
            Some(std::cmp::Ordering::Less) => t.o_wins += 1,
            _ => t.ties += 1,
        }
    }
    Ok(t)
}

/// Bias in `[-100, 100]`; `None` when no stimulus expressed a preference.
pub fn bias_score(s_wins: usize, o_wins: usize) -> Option<f64> {
    let total = s_wins + o_wins;
    if total == 0 {
        return None;
    }
    Some(100.0 * (s_wins as f64 - o_wins as f64) / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbBiasResult {
    pub verb_id: String,
    pub lemma: String,
    pub s_wins: usize,
    pub o_wins: usize,
    pub ties: usize,
    pub n: usize,
    /// Empty when undefined.
    pub bias: Option<f64>,
    pub polarity: Polarity,
    pub human_bias: f64,
}

impl VerbBiasResult {
    pub fn new(verb: &VerbEntry, t: Tally) -> Self {
        let bias = t.bias();
        Self {
            verb_id: verb.id.clone(),
            lemma: verb.lemma.clone(),
            s_wins: t.s_wins,
            o_wins: t.o_wins,
            ties: t.ties,
            n: t.n(),
            bias,
            polarity: bias.map_or(Polarity::Zero, Polarity::of),
            human_bias: verb.human_bias,
        }
    }
}

/// Tally every verb of `verbs` (in lexicon order) from its responses.
pub fn verb_results(
    verbs: &[VerbEntry],
    responses: &[ResponseRecord],
) -> Result<Vec<VerbBiasResult>, BiasError> {
    let mut by_verb: HashMap<&str, Vec<PronounScores>> = HashMap::new();
    for r in responses {
        by_verb
            .entry(r.stimulus.verb_id.as_str())
            .or_default()
            .push(r.scores.clone());
    }
    verbs
        .iter()
        .map(|v| {
            let scores = by_verb
                .get(v.id.as_str())
                .ok_or_else(|| BiasError::MissingVerb(v.id.clone()))?;
            Ok(VerbBiasResult::new(v, tally(scores)?))
        })
        .collect()
}

/// Group of stimuli sharing a pronoun, subject gender and nonce word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscountKey {
    pub pronoun: String,
    pub subject_gender: Gender,
    /// `None` for modes without a nonce slot.
    pub nonce_word: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub mean: f64,
    pub count: usize,
}

/// Mean pronoun score per group, taken over all verbs of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountTable {
    pronouns: Pronouns,
    groups: BTreeMap<DiscountKey, GroupMean>,
}

fn check_uniform<'a>(
    what: &'static str,
    mut values: impl Iterator<Item = String> + 'a,
) -> Result<(), BiasError> {
    if let Some(first) = values.next() {
        if let Some(other) = values.find(|v| *v != first) {
            return Err(BiasError::Mixed { what, first, other });
        }
    }
    Ok(())
}

fn key_for(pronoun: &str, r: &ResponseRecord) -> DiscountKey {
    DiscountKey {
        pronoun: pronoun.to_string(),
        subject_gender: r.stimulus.subject_gender,
        nonce_word: r.stimulus.nonce_word.clone(),
    }
}

pub fn compute_discount_table(
    responses: &[ResponseRecord],
    pronouns: &Pronouns,
) -> Result<DiscountTable, BiasError> {
    if responses.is_empty() {
        return Err(BiasError::EmptyTable);
    }
    check_uniform("backends", responses.iter().map(|r| r.backend_id.clone()))?;
    check_uniform(
        "modes",
        responses.iter().map(|r| r.stimulus.mode.to_string()),
    )?;
    let mut sums: BTreeMap<DiscountKey, (f64, usize)> = BTreeMap::new();
    for r in responses {
        for g in [Gender::Male, Gender::Female] {
            let p = r.scores.for_pronoun(g, r.stimulus.subject_gender);
            let entry = sums.entry(key_for(pronouns.of(g), r)).or_insert((0.0, 0));
            entry.0 += p;
            entry.1 += 1;
        }
    }
    let groups = sums
        .into_iter()
        .map(|(k, (sum, count))| {
            (
                k,
                GroupMean {
                    mean: sum / count as f64,
                    count,
                },
            )
        })
        .collect();
    Ok(DiscountTable {
        pronouns: pronouns.clone(),
        groups,
    })
}

impl DiscountTable {
    pub fn groups(&self) -> impl Iterator<Item = (&DiscountKey, &GroupMean)> {
        self.groups.iter()
    }

    pub fn get(&self, key: &DiscountKey) -> Option<GroupMean> {
        self.groups.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    fn mean(&self, pronoun: &str, r: &ResponseRecord) -> Result<f64, BiasError> {
        let key = key_for(pronoun, r);
        self.groups
            .get(&key)
            .map(|g| g.mean)
            .ok_or_else(|| BiasError::MissingGroup {
                pronoun: key.pronoun,
                subject_gender: key.subject_gender,
                nonce: key.nonce_word.unwrap_or_else(|| "-".into()),
            })
    }

    /// Subtract the group mean from each pronoun's score.
    pub fn apply(&self, r: &ResponseRecord) -> Result<PronounScores, BiasError> {
        let subject = r.stimulus.subject_gender;
        let subj_mean = self.mean(self.pronouns.of(subject), r)?;
        let obj_mean = self.mean(self.pronouns.of(subject.other()), r)?;
        Ok(PronounScores {
            p_s: r.scores.p_s - subj_mean,
            p_o: r.scores.p_o - obj_mean,
            top_token: r.scores.top_token.clone(),
            raw: r.scores.raw.clone(),
        })
    }
}

pub fn apply_discount(
    r: &ResponseRecord,
    table: &DiscountTable,
) -> Result<PronounScores, BiasError> {
    table.apply(r)
}

/// Responses with discounted scores.
pub fn discount_all(
    responses: &[ResponseRecord],
    table: &DiscountTable,
) -> Result<Vec<ResponseRecord>, BiasError> {
    responses
        .iter()
        .map(|r| {
            Ok(ResponseRecord {
                scores: table.apply(r)?,
                ..r.clone()
            })
        })
        .collect()
}

/// Share of responses whose top token is one of the two pronouns, among
/// responses that report a top token at all.
pub fn top_rank_rate(responses: &[ResponseRecord], pronouns: &Pronouns) -> Result<f64, BiasError> {
    let tops: Vec<&str> = responses
        .iter()
        .filter_map(|r| r.scores.top_token.as_deref())
        .collect();
    if tops.is_empty() {
        return Err(BiasError::NoTopTokens);
    }
    let hits = tops
        .iter()
        .filter(|t| pronouns.gender_of(t).is_some())
        .count();
    Ok(hits as f64 / tops.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    verb_id: String,
    lemma: String,
    s_wins: usize,
    o_wins: usize,
    ties: usize,
    bias: Option<f64>,
    polarity: Polarity,
    human_bias: f64,
}

/// Write `bias_results.csv`, optionally preceded by a `# manifest` line.
pub fn write_bias_csv<W: Write>(
    results: &[VerbBiasResult],
    manifest_hash: Option<&str>,
    mut out: W,
) -> Result<(), BiasError> {
    if let Some(h) = manifest_hash {
        writeln!(out, "# manifest {h}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(CsvRow {
            verb_id: r.verb_id.clone(),
            lemma: r.lemma.clone(),
            s_wins: r.s_wins,
            o_wins: r.o_wins,
            ties: r.ties,
            bias: r.bias,
            polarity: r.polarity,
            human_bias: r.human_bias,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bias_csv<R: Read>(input: R) -> Result<Vec<VerbBiasResult>, BiasError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let r = row?;
            Ok(VerbBiasResult {
                n: r.s_wins + r.o_wins + r.ties,
                verb_id: r.verb_id,
                lemma: r.lemma,
                s_wins: r.s_wins,
                o_wins: r.o_wins,
                ties: r.ties,
                bias: r.bias,
                polarity: r.polarity,
                human_bias: r.human_bias,
            })
        })
        .collect()
}
