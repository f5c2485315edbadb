//! Model-agnostic scoring of stimuli.
//!
//! A [`Backend`] answers the five wire requests. [`choose_method`] picks the
//! request family a backend can serve for a given mode, and
//! [`score_stimulus`] turns the answer into a [`PronounScores`] pair with the
//! subject's pronoun in `p_s`.

pub mod cache;
pub mod http;
pub mod oracle;
pub mod wire;

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::Gender;
use crate::stimgen::{Mode, StimulusVariant, BLANK};
use wire::{
    ClozeRequest, ContinuationRequest, DiscriminateRequest, DiscriminateResponse, EmbedRequest,
    EmbedResponse, SequenceAggregation, SequenceRequest, SequenceResponse, TokenProbs,
};

pub use cache::{canonical_json, ResponseCache};
pub use http::{HttpBackend, RetryPolicy};
pub use oracle::{OracleBackend, OraclePolicy, PronounShift};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("candidate `{0}` cannot be scored")]
    CandidateUnscorable(String),
    #[error("backend cannot score mode `{mode}` (capabilities: {caps})")]
    Capability {
        mode: Mode,
        caps: ScorerCapabilities,
    },
    #[error("backend does not support {0} requests")]
    Unsupported(&'static str),
    #[error("no pronoun candidates for language `{0}`")]
    UnsupportedLanguage(String),
    #[error("cache file {file}:{line}: {message}")]
    Cache {
        file: PathBuf,
        line: usize,
        message: String,
    },
}

impl ScoreError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ScoreError::Transport { .. } => "transport",
            ScoreError::Timeout => "timeout",
            ScoreError::Http { .. } => "http",
            ScoreError::Protocol(_) => "protocol",
            ScoreError::CandidateUnscorable(_) => "candidate",
            ScoreError::Capability { .. } => "capability",
            ScoreError::Unsupported(_) => "unsupported",
            ScoreError::UnsupportedLanguage(_) => "language",
            ScoreError::Cache { .. } => "cache",
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            ScoreError::Transport { retryable, .. } => *retryable,
            ScoreError::Timeout => true,
            ScoreError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// What a backend can do.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerCapabilities {
    pub supports_cloze: bool,
    pub supports_continuation: bool,
    pub supports_sequence: bool,
    pub supports_discriminate: bool,
    pub supports_embed: bool,
}

impl ScorerCapabilities {
    pub const ALL: Self = Self {
        supports_cloze: true,
        supports_continuation: true,
        supports_sequence: true,
        supports_discriminate: true,
        supports_embed: true,
    };
    pub const MASKED: Self = Self {
        supports_cloze: true,
        supports_continuation: false,
        supports_sequence: true,
        supports_discriminate: false,
        supports_embed: true,
    };
    pub const CAUSAL: Self = Self {
        supports_cloze: false,
        supports_continuation: true,
        supports_sequence: true,
        supports_discriminate: false,
        supports_embed: true,
    };
    pub const DISCRIMINATIVE: Self = Self {
        supports_cloze: false,
        supports_continuation: false,
        supports_sequence: false,
        supports_discriminate: true,
        supports_embed: true,
    };

    pub fn can_score(&self) -> bool {
        self.supports_cloze
            || self.supports_continuation
            || self.supports_sequence
            || self.supports_discriminate
    }
}

impl fmt::Display for ScorerCapabilities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags = [
            (self.supports_cloze, "cloze"),
            (self.supports_continuation, "continuation"),
            (self.supports_sequence, "sequence"),
            (self.supports_discriminate, "discriminate"),
            (self.supports_embed, "embed"),
        ];
        let names: Vec<&str> = flags.iter().filter(|f| f.0).map(|f| f.1).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl From<wire::CapabilitiesResponse> for ScorerCapabilities {
    fn from(c: wire::CapabilitiesResponse) -> Self {
        Self {
            supports_cloze: c.cloze,
            supports_continuation: c.continuation,
            supports_sequence: c.sequence,
            supports_discriminate: c.discriminate,
            supports_embed: c.embed,
        }
    }
}

/// The two pronoun candidates of a language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pronouns {
    pub male: String,
    pub female: String,
}

impl Pronouns {
    pub fn for_language(language: &str) -> Result<Self, ScoreError> {
        match language {
            "en" => Ok(Self {
                male: "he".into(),
                female: "she".into(),
            }),
            other => Err(ScoreError::UnsupportedLanguage(other.into())),
        }
    }

    pub fn of(&self, gender: Gender) -> &str {
        match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }

    pub fn candidates(&self) -> Vec<String> {
        vec![self.male.clone(), self.female.clone()]
    }

    pub fn gender_of(&self, token: &str) -> Option<Gender> {
        if token == self.male {
            Some(Gender::Male)
        } else if token == self.female {
            Some(Gender::Female)
        } else {
            None
        }
    }
}

/// Request family used to score a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Cloze,
    Continuation,
    SequencePair,
    DiscriminativePair,
}

/// A fully specified scoring request for one stimulus.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreMethod {
    Cloze { candidates: Vec<String> },
    Continuation { candidates: Vec<String> },
    SequencePair { text_he: String, text_she: String },
    DiscriminativePair { text_he: String, text_she: String },
    Embed { word_index: usize },
}

impl ScoreMethod {
    pub fn for_variant(kind: MethodKind, variant: &StimulusVariant, pronouns: &Pronouns) -> Self {
        let fill = |p: &str| variant.text.replacen(BLANK, p, 1);
        match kind {
            MethodKind::Cloze => ScoreMethod::Cloze {
                candidates: pronouns.candidates(),
            },
            MethodKind::Continuation => ScoreMethod::Continuation {
                candidates: pronouns.candidates(),
            },
            MethodKind::SequencePair => ScoreMethod::SequencePair {
                text_he: fill(&pronouns.male),
                text_she: fill(&pronouns.female),
            },
            MethodKind::DiscriminativePair => ScoreMethod::DiscriminativePair {
                text_he: fill(&pronouns.male),
                text_she: fill(&pronouns.female),
            },
        }
    }
}

/// Pick the request family for `mode`, or fail if none is admissible.
pub fn choose_method(caps: ScorerCapabilities, mode: Mode) -> Result<MethodKind, ScoreError> {
    let kind = match mode {
        Mode::OpenEnded if caps.supports_continuation => Some(MethodKind::Continuation),
        Mode::OpenEnded => None,
        _ if caps.supports_cloze => Some(MethodKind::Cloze),
        _ if caps.supports_discriminate => Some(MethodKind::DiscriminativePair),
        Mode::Explanation { .. } if caps.supports_sequence => Some(MethodKind::SequencePair),
        _ => None,
    };
    kind.ok_or(ScoreError::Capability { mode, caps })
}

/// Scores of the subject's and the object's pronoun for one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronounScores {
    pub p_s: f64,
    pub p_o: f64,
    #[serde(default)]
    pub top_token: Option<String>,
    /// Cache keys of the backend replies this score was built from.
    #[serde(default)]
    pub raw: Vec<String>,
}

impl PronounScores {
    pub fn new(p_s: f64, p_o: f64) -> Self {
        Self {
            p_s,
            p_o,
            top_token: None,
            raw: Vec::new(),
        }
    }

    /// Score of `pronoun_gender`'s pronoun given the stimulus' subject gender.
    pub fn for_pronoun(&self, pronoun_gender: Gender, subject_gender: Gender) -> f64 {
        if pronoun_gender == subject_gender {
            self.p_s
        } else {
            self.p_o
        }
    }
}

/// One scored stimulus as persisted in `responses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub stimulus_id: String,
    pub backend_id: String,
    pub method: MethodKind,
    pub stimulus: StimulusVariant,
    pub scores: PronounScores,
}

impl ResponseRecord {
    pub fn new(
        backend_id: &str,
        method: MethodKind,
        stimulus: StimulusVariant,
        scores: PronounScores,
    ) -> Self {
        Self {
            stimulus_id: stimulus.id(),
            backend_id: backend_id.to_string(),
            method,
            stimulus,
            scores,
        }
    }
}

/// A backend reply with an optional reference to the stored payload.
#[derive(Debug, Clone)]
pub struct Reply<T> {
    pub value: T,
    pub reference: Option<String>,
}

impl<T> Reply<T> {
    pub fn unreferenced(value: T) -> Self {
        Self {
            value,
            reference: None,
        }
    }
}

/// Stimulus metadata passed alongside each request. Remote backends ignore
/// it; the oracle uses it to decide its answer.
#[derive(Debug, Clone, Copy)]
pub struct RequestContext<'a> {
    pub verb_id: &'a str,
    pub variant_index: usize,
    pub subject_gender: Gender,
    pub mode: Option<Mode>,
    /// Gender of the pronoun filled into a whole-sequence request.
    pub filled: Option<Gender>,
}

impl<'a> RequestContext<'a> {
    pub fn of(variant: &'a StimulusVariant) -> Self {
        Self {
            verb_id: &variant.verb_id,
            variant_index: variant.variant_index,
            subject_gender: variant.subject_gender,
            mode: Some(variant.mode),
            filled: None,
        }
    }
}

/// A scoring backend. Implementations must accept concurrent calls.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn capabilities(&self) -> Result<ScorerCapabilities, ScoreError>;
    fn cloze(
        &self,
        req: &ClozeRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError>;
    fn continuation(
        &self,
        req: &ContinuationRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError>;
    fn sequence(
        &self,
        req: &SequenceRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<SequenceResponse>, ScoreError>;
    fn discriminate(
        &self,
        req: &DiscriminateRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<DiscriminateResponse>, ScoreError>;
    fn embed(
        &self,
        req: &EmbedRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<EmbedResponse>, ScoreError>;
}

/// Options for whole-sequence scoring.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringOptions {
    pub aggregation: SequenceAggregation,
}

fn role_scores(probs: &TokenProbs, pronouns: &Pronouns, subject_gender: Gender) -> (f64, f64) {
    let score = |g: Gender| probs.probs[pronouns.of(g)];
    (score(subject_gender), score(subject_gender.other()))
}

fn check_finite(scores: PronounScores) -> Result<PronounScores, ScoreError> {
    if scores.p_s.is_finite() && scores.p_o.is_finite() {
        Ok(scores)
    } else {
        Err(ScoreError::Protocol(format!(
            "non-finite pronoun scores ({}, {})",
            scores.p_s, scores.p_o
        )))
    }
}

/// Score one stimulus with a method admissible for `backend`.
pub fn score_stimulus(
    backend: &dyn Backend,
    variant: &StimulusVariant,
    method: &ScoreMethod,
    pronouns: &Pronouns,
    options: ScoringOptions,
) -> Result<PronounScores, ScoreError> {
    let ctx = RequestContext::of(variant);
    let subject = variant.subject_gender;
    let scores = match method {
        ScoreMethod::Cloze { candidates } => {
            let req = ClozeRequest {
                text: variant.text.clone(),
                blank_marker: BLANK.into(),
                candidates: candidates.clone(),
            };
            let reply = backend.cloze(&req, &ctx)?;
            reply.value.validate(candidates)?;
            let (p_s, p_o) = role_scores(&reply.value, pronouns, subject);
            PronounScores {
                p_s,
                p_o,
                top_token: reply.value.top_token,
                raw: reply.reference.into_iter().collect(),
            }
        }
        ScoreMethod::Continuation { candidates } => {
            let req = ContinuationRequest {
                prefix: variant.text.clone(),
                candidates: candidates.clone(),
            };
            let reply = backend.continuation(&req, &ctx)?;
            reply.value.validate(candidates)?;
            let (p_s, p_o) = role_scores(&reply.value, pronouns, subject);
            PronounScores {
                p_s,
                p_o,
                top_token: reply.value.top_token,
                raw: reply.reference.into_iter().collect(),
            }
        }
        ScoreMethod::SequencePair { text_he, text_she } => {
            let score = |text: &str, g: Gender| -> Result<(f64, Option<String>), ScoreError> {
                let req = SequenceRequest {
                    text: text.to_string(),
                    aggregation: options.aggregation,
                };
                let ctx = RequestContext {
                    filled: Some(g),
                    ..ctx
                };
                let reply = backend.sequence(&req, &ctx)?;
                Ok((reply.value.score(options.aggregation)?, reply.reference))
            };
            pair_scores(
                score(text_he, Gender::Male)?,
                score(text_she, Gender::Female)?,
                subject,
            )
        }
        ScoreMethod::DiscriminativePair { text_he, text_she } => {
            let score = |text: &str, g: Gender| -> Result<(f64, Option<String>), ScoreError> {
                let req = DiscriminateRequest {
                    text: text.to_string(),
                };
                let ctx = RequestContext {
                    filled: Some(g),
                    ..ctx
                };
                let reply = backend.discriminate(&req, &ctx)?;
                reply.value.validate()?;
                Ok((reply.value.mean_original_prob, reply.reference))
            };
            pair_scores(
                score(text_he, Gender::Male)?,
                score(text_she, Gender::Female)?,
                subject,
            )
        }
        ScoreMethod::Embed { .. } => {
            return Err(ScoreError::Unsupported("embedding as pronoun scoring"))
        }
    };
    check_finite(scores)
}

fn pair_scores(
    he: (f64, Option<String>),
    she: (f64, Option<String>),
    subject: Gender,
) -> PronounScores {
    let (subj, obj) = match subject {
        Gender::Male => (he, she),
        Gender::Female => (she, he),
    };
    PronounScores {
        p_s: subj.0,
        p_o: obj.0,
        top_token: None,
        raw: [subj.1, obj.1].into_iter().flatten().collect(),
    }
}

/// Score many stimuli with at most `parallelism` requests in flight.
///
/// The output is aligned with `variants` whatever the completion order.
pub fn score_all(
    backend: &dyn Backend,
    variants: &[StimulusVariant],
    kind: MethodKind,
    pronouns: &Pronouns,
    options: ScoringOptions,
    parallelism: usize,
) -> Vec<Result<PronounScores, ScoreError>> {
    let run = || {
        variants
            .par_iter()
            .map(|v| {
                let method = ScoreMethod::for_variant(kind, v, pronouns);
                score_stimulus(backend, v, &method, pronouns, options)
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => variants
            .iter()
            .map(|v| {
                let method = ScoreMethod::for_variant(kind, v, pronouns);
                score_stimulus(backend, v, &method, pronouns, options)
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimgen::{Congruency, Referent};
    use std::collections::BTreeMap;
    use std::sync::Mutex;

    #[test]
    fn method_selection() {
        use MethodKind::*;
        let cloze_modes = [Mode::ClozeNonce, Mode::SwappedCloze];
        let expl = Mode::Explanation {
            target: Referent::Subject,
        };
        for m in cloze_modes {
            assert_eq!(choose_method(ScorerCapabilities::MASKED, m).unwrap(), Cloze);
            assert_eq!(
                choose_method(ScorerCapabilities::DISCRIMINATIVE, m).unwrap(),
                DiscriminativePair
            );
            assert!(choose_method(ScorerCapabilities::CAUSAL, m).is_err());
        }
        assert_eq!(
            choose_method(ScorerCapabilities::MASKED, expl).unwrap(),
            Cloze
        );
        assert_eq!(
            choose_method(ScorerCapabilities::CAUSAL, expl).unwrap(),
            SequencePair
        );
        assert_eq!(
            choose_method(ScorerCapabilities::DISCRIMINATIVE, expl).unwrap(),
            DiscriminativePair
        );
        assert_eq!(
            choose_method(ScorerCapabilities::CAUSAL, Mode::OpenEnded).unwrap(),
            Continuation
        );
        let err = choose_method(ScorerCapabilities::DISCRIMINATIVE, Mode::OpenEnded).unwrap_err();
        assert_eq!(err.code(), "capability");
        assert!(choose_method(ScorerCapabilities::MASKED, Mode::OpenEnded).is_err());
    }

    /// Replies with fixed per-pronoun probabilities and records request texts.
    struct Fixed {
        he: f64,
        she: f64,
        seen: Mutex<Vec<String>>,
    }

    impl Fixed {
        fn probs(&self) -> TokenProbs {
            TokenProbs {
                probs: BTreeMap::from([("he".into(), self.he), ("she".into(), self.she)]),
                top_token: Some("she".into()),
            }
        }
        fn by_text(&self, text: &str) -> f64 {
            self.seen.lock().unwrap().push(text.to_string());
            if text.contains(" he ") {
                self.he
            } else {
                self.she
            }
        }
    }

    impl Backend for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn capabilities(&self) -> Result<ScorerCapabilities, ScoreError> {
            Ok(ScorerCapabilities::ALL)
        }
        fn cloze(
            &self,
            _: &ClozeRequest,
            _: &RequestContext<'_>,
        ) -> Result<Reply<TokenProbs>, ScoreError> {
            Ok(Reply::unreferenced(self.probs()))
        }
        fn continuation(
            &self,
            _: &ContinuationRequest,
            _: &RequestContext<'_>,
        ) -> Result<Reply<TokenProbs>, ScoreError> {
            Ok(Reply::unreferenced(self.probs()))
        }
        fn sequence(
            &self,
            req: &SequenceRequest,
            _: &RequestContext<'_>,
        ) -> Result<Reply<SequenceResponse>, ScoreError> {
            Ok(Reply::unreferenced(SequenceResponse {
                mean_token_prob: Some(self.by_text(&req.text)),
                mean_token_logprob: None,
            }))
        }
        fn discriminate(
            &self,
            req: &DiscriminateRequest,
            _: &RequestContext<'_>,
        ) -> Result<Reply<DiscriminateResponse>, ScoreError> {
            let p = self.by_text(&req.text);
            Ok(Reply::unreferenced(DiscriminateResponse {
                per_token_original_prob: vec![p],
                mean_original_prob: p,
            }))
        }
        fn embed(
            &self,
            _: &EmbedRequest,
            _: &RequestContext<'_>,
        ) -> Result<Reply<EmbedResponse>, ScoreError> {
            Err(ScoreError::Unsupported("embed"))
        }
    }

    fn variant(gender: Gender) -> StimulusVariant {
        StimulusVariant {
            verb_id: "v1".into(),
            variant_index: 0,
            subject_name: "Mary".into(),
            object_name: "John".into(),
            subject_gender: gender,
            nonce_word: None,
            mode: Mode::Explanation {
                target: Referent::Object,
            },
            text: "Mary praised John because ___ had done well .".into(),
            congruency: Congruency::Neutral,
        }
    }

    fn en() -> Pronouns {
        Pronouns::for_language("en").unwrap()
    }

    #[test]
    fn female_subject_maps_she_to_p_s() {
        let backend = Fixed {
            he: 0.2,
            she: 0.7,
            seen: Mutex::default(),
        };
        let v = variant(Gender::Female);
        let method = ScoreMethod::for_variant(MethodKind::Cloze, &v, &en());
        let s = score_stimulus(&backend, &v, &method, &en(), ScoringOptions::default()).unwrap();
        assert_eq!((s.p_s, s.p_o), (0.7, 0.2));
        assert_eq!(s.top_token.as_deref(), Some("she"));

        let v = variant(Gender::Male);
        let s = score_stimulus(&backend, &v, &method, &en(), ScoringOptions::default()).unwrap();
        assert_eq!((s.p_s, s.p_o), (0.2, 0.7));
    }

    #[test]
    fn sequence_pairs_fill_the_blank() {
        let backend = Fixed {
            he: 0.4,
            she: 0.6,
            seen: Mutex::default(),
        };
        let v = variant(Gender::Female);
        let method = ScoreMethod::for_variant(MethodKind::SequencePair, &v, &en());
        let s = score_stimulus(&backend, &v, &method, &en(), ScoringOptions::default()).unwrap();
        assert_eq!((s.p_s, s.p_o), (0.6, 0.4));
        let seen = backend.seen.lock().unwrap();
        assert_eq!(seen[0], "Mary praised John because he had done well .");
        assert_eq!(seen[1], "Mary praised John because she had done well .");
    }

    #[test]
    fn equal_discriminator_scores_tie() {
        let backend = Fixed {
            he: 0.9,
            she: 0.9,
            seen: Mutex::default(),
        };
        let v = variant(Gender::Male);
        let method = ScoreMethod::for_variant(MethodKind::DiscriminativePair, &v, &en());
        let s = score_stimulus(&backend, &v, &method, &en(), ScoringOptions::default()).unwrap();
        assert_eq!((s.p_s, s.p_o), (0.9, 0.9));
    }

    #[test]
    fn out_of_range_reply_is_rejected() {
        let backend = Fixed {
            he: 1.3,
            she: 0.1,
            seen: Mutex::default(),
        };
        let v = variant(Gender::Male);
        let method = ScoreMethod::for_variant(MethodKind::Cloze, &v, &en());
        let err =
            score_stimulus(&backend, &v, &method, &en(), ScoringOptions::default()).unwrap_err();
        assert_eq!(err.code(), "protocol");
    }

    #[test]
    fn unknown_language_has_no_pronouns() {
        assert_eq!(Pronouns::for_language("de").unwrap_err().code(), "language");
    }

    #[test]
    fn retryable_errors() {
        assert!(ScoreError::Timeout.is_retryable());
        assert!(ScoreError::Http {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(!ScoreError::Http {
            status: 404,
            body: String::new()
        }
        .is_retryable());
        assert!(!ScoreError::Protocol("x".into()).is_retryable());
    }
}
