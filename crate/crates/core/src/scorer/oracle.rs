//! Deterministic in-process backend with known answers.
//!
//! Under [`OraclePolicy::TargetBias`] a verb with target bias `b` prefers the
//! subject on exactly the first `round(b) + 100` variants, so the recovered
//! bias score equals `round(b)` for every verb.

use std::collections::BTreeMap;

use crate::lexicon::{Gender, VerbEntry};
use crate::rng::{derive_seed, fnv1a64, mix64};
use crate::stimgen::{stimulus_id, Mode, Referent, VARIANTS_PER_VERB};

use super::wire::{
    ClozeRequest, ContinuationRequest, DiscriminateRequest, DiscriminateResponse, EmbedRequest,
    EmbedResponse, SequenceRequest, SequenceResponse, TokenProbs,
};
use super::{Backend, Pronouns, Reply, RequestContext, ScoreError, ScorerCapabilities};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_NOISE_AMPLITUDE: f64 = 0.01;

/// How the oracle decides which referent a stimulus prefers.
#[derive(Debug, Clone, PartialEq)]
pub enum OraclePolicy {
    /// Per-verb target bias in `[-100, 100]`.
    TargetBias(BTreeMap<String, f64>),
    /// Prefer whichever referent the explanation points to.
    FollowExplanation,
    /// Seeded fair coin per stimulus.
    CoinFlip { seed: u64 },
}

/// Constant offsets added to each pronoun's score.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PronounShift {
    pub male: f64,
    pub female: f64,
}

impl PronounShift {
    fn of(&self, g: Gender) -> f64 {
        match g {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    id: String,
    policy: OraclePolicy,
    caps: ScorerCapabilities,
    preferred: f64,
    dispreferred: f64,
    shift: PronounShift,
    embed_dim: usize,
    noise_amplitude: f64,
    pronouns: Pronouns,
}

/// Nearest achievable bias on the 200-variant grid.
pub fn achievable_bias(target: f64) -> i64 {
    target.clamp(-100.0, 100.0).round() as i64
}

/// Number of leading variants that prefer the subject for `target`.
pub fn subject_wins_target(target: f64) -> usize {
    (achievable_bias(target) + 100) as usize * VARIANTS_PER_VERB / 200
}

impl OracleBackend {
    pub fn new(policy: OraclePolicy) -> Self {
        Self {
            id: "oracle".into(),
            policy,
            caps: ScorerCapabilities::ALL,
            preferred: 0.75,
            dispreferred: 0.25,
            shift: PronounShift::default(),
            embed_dim: DEFAULT_EMBED_DIM,
            noise_amplitude: DEFAULT_NOISE_AMPLITUDE,
            pronouns: Pronouns::for_language("en").expect("english pronouns"),
        }
    }

    pub fn with_targets(targets: BTreeMap<String, f64>) -> Self {
        Self::new(OraclePolicy::TargetBias(targets))
    }

    /// Targets taken from the verbs' human bias scores.
    pub fn from_human_bias(verbs: &[VerbEntry]) -> Self {
        Self::with_targets(verbs.iter().map(|v| (v.id.clone(), v.human_bias)).collect())
    }

    /// Always prefers the referent favoured by each verb's bias polarity.
    pub fn ic_following(verbs: &[VerbEntry]) -> Self {
        let extreme = |bias: f64| match bias.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 100.0,
            Some(std::cmp::Ordering::Less) => -100.0,
            _ => 0.0,
        };
        Self::with_targets(
            verbs
                .iter()
                .map(|v| (v.id.clone(), extreme(v.human_bias)))
                .collect(),
        )
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_capabilities(mut self, caps: ScorerCapabilities) -> Self {
        self.caps = caps;
        self
    }

    /// Scores given to the preferred and the dispreferred pronoun.
    pub fn with_levels(mut self, preferred: f64, dispreferred: f64) -> Self {
        assert!(preferred > dispreferred);
        self.preferred = preferred;
        self.dispreferred = dispreferred;
        self
    }

    pub fn with_shift(mut self, shift: PronounShift) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_embedding(mut self, dim: usize, noise_amplitude: f64) -> Self {
        assert!(dim >= 1);
        self.embed_dim = dim;
        self.noise_amplitude = noise_amplitude;
        self
    }

    fn target(&self, verb_id: &str) -> f64 {
        match &self.policy {
            OraclePolicy::TargetBias(map) => map.get(verb_id).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    fn prefers_subject(&self, ctx: &RequestContext<'_>) -> bool {
        match &self.policy {
            OraclePolicy::TargetBias(map) => {
                let target = map.get(ctx.verb_id).copied().unwrap_or(0.0);
                ctx.variant_index < subject_wins_target(target)
            }
            OraclePolicy::FollowExplanation => match ctx.mode {
                Some(Mode::Explanation { target }) => target == Referent::Subject,
                _ => ctx.variant_index.is_multiple_of(2),
            },
            OraclePolicy::CoinFlip { seed } => {
                let mode = ctx.mode.unwrap_or(Mode::ClozeNonce);
                let key = fnv1a64(&stimulus_id(ctx.verb_id, mode, ctx.variant_index));
                derive_seed(*seed, key) & 1 == 1
            }
        }
    }

    /// Score of the pronoun of `pronoun_gender` for this stimulus.
    fn pronoun_score(&self, ctx: &RequestContext<'_>, pronoun_gender: Gender) -> f64 {
        let refers_to_subject = pronoun_gender == ctx.subject_gender;
        let base = if refers_to_subject == self.prefers_subject(ctx) {
            self.preferred
        } else {
            self.dispreferred
        };
        base + self.shift.of(pronoun_gender)
    }

    fn token_probs(&self, ctx: &RequestContext<'_>) -> TokenProbs {
        let he = self.pronoun_score(ctx, Gender::Male);
        let she = self.pronoun_score(ctx, Gender::Female);
        let top = if he >= she {
            &self.pronouns.male
        } else {
            &self.pronouns.female
        };
        TokenProbs {
            probs: BTreeMap::from([
                (self.pronouns.male.clone(), he),
                (self.pronouns.female.clone(), she),
            ]),
            top_token: Some(top.clone()),
        }
    }

    fn filled_score(&self, ctx: &RequestContext<'_>) -> Result<f64, ScoreError> {
        let g = ctx.filled.ok_or_else(|| {
            ScoreError::Protocol("sequence request without a filled pronoun".into())
        })?;
        Ok(self.pronoun_score(ctx, g))
    }

    fn require(&self, flag: bool, what: &'static str) -> Result<(), ScoreError> {
        if flag {
            Ok(())
        } else {
            Err(ScoreError::Unsupported(what))
        }
    }
}

/// Deterministic noise in `[-1, 1]` for one embedding coordinate.
fn hash_noise(verb_id: &str, variant: usize, coord: usize) -> f64 {
    let h = mix64(fnv1a64(verb_id) ^ mix64(((variant as u64) << 32) | coord as u64));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Result<ScorerCapabilities, ScoreError> {
        Ok(self.caps)
    }

    fn cloze(
        &self,
        _: &ClozeRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError> {
        self.require(self.caps.supports_cloze, "cloze")?;
        Ok(Reply::unreferenced(self.token_probs(ctx)))
    }

    fn continuation(
        &self,
        _: &ContinuationRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError> {
        self.require(self.caps.supports_continuation, "continuation")?;
        Ok(Reply::unreferenced(self.token_probs(ctx)))
    }

    fn sequence(
        &self,
        _: &SequenceRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<SequenceResponse>, ScoreError> {
        self.require(self.caps.supports_sequence, "sequence")?;
        let p = self.filled_score(ctx)?;
        Ok(Reply::unreferenced(SequenceResponse {
            mean_token_prob: Some(p),
            mean_token_logprob: Some(p.ln()),
        }))
    }

    fn discriminate(
        &self,
        _: &DiscriminateRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<DiscriminateResponse>, ScoreError> {
        self.require(self.caps.supports_discriminate, "discriminate")?;
        let p = self.filled_score(ctx)?;
        Ok(Reply::unreferenced(DiscriminateResponse {
            per_token_original_prob: vec![p],
            mean_original_prob: p,
        }))
    }

    /// First coordinate carries `target / 100`; the rest is hash noise.
    fn embed(
        &self,
        _: &EmbedRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<Reply<EmbedResponse>, ScoreError> {
        self.require(self.caps.supports_embed, "embed")?;
        let mut vector = Vec::with_capacity(self.embed_dim);
        vector.push(achievable_bias(self.target(ctx.verb_id)) as f64 / 100.0);
        vector.extend(
            (1..self.embed_dim)
                .map(|j| self.noise_amplitude * hash_noise(ctx.verb_id, ctx.variant_index, j)),
        );
        Ok(Reply::unreferenced(EmbedResponse {
            dim: self.embed_dim,
            vector,
        }))
    }
}
