//! Stimulus enumeration and rendering.
//!
//! Each verb gets 200 variants: every (male, female) name pair in both gender
//! orders. Nonce modes draw one nonce word per variant, without replacement,
//! from a per-verb Fisher-Yates permutation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lexicon::{ExplanationPair, Gender, NamePool, NonceLexicon, VerbEntry, POOL_SIZE};
use crate::rng::{fnv1a64, shuffle, SplitMix64};

pub const BLANK: &str = "___";
pub const VARIANTS_PER_VERB: usize = 2 * POOL_SIZE * POOL_SIZE;
pub const STRONG_BIAS_THRESHOLD: f64 = 65.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StimgenError {
    #[error("nonce lexicon has {0} words, at least {VARIANTS_PER_VERB} are required")]
    LexiconTooSmall(usize),
    #[error("no explanation pair for verb `{0}`")]
    MissingExplanation(String),
}

/// Referent of an explicit explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Referent {
    Subject,
    Object,
}

/// Experimental formulation of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// `S verb O because ___ was a {nonce} .`
    ClozeNonce,
    /// `S verb O because`
    OpenEnded,
    /// `Because ___ was a {nonce} , S verb O .`
    SwappedCloze,
    /// `S verb O because ___ {explanation} .`
    Explanation { target: Referent },
}

impl Mode {
    pub fn uses_nonce(self) -> bool {
        matches!(self, Mode::ClozeNonce | Mode::SwappedCloze)
    }

    /// Short tag used in stimulus ids and file names.
    pub fn tag(self) -> &'static str {
        match self {
            Mode::ClozeNonce => "cloze",
            Mode::OpenEnded => "open",
            Mode::SwappedCloze => "swapped",
            Mode::Explanation {
                target: Referent::Subject,
            } => "expl-subj",
            Mode::Explanation {
                target: Referent::Object,
            } => "expl-obj",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Congruency {
    Congruent,
    Incongruent,
    Neutral,
    NA,
}

/// One rendered probe sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusVariant {
    pub verb_id: String,
    pub variant_index: usize,
    pub subject_name: String,
    pub object_name: String,
    pub subject_gender: Gender,
    pub nonce_word: Option<String>,
    pub mode: Mode,
    pub text: String,
    pub congruency: Congruency,
}

impl StimulusVariant {
    /// Unique key of the stimulus within a run.
    pub fn id(&self) -> String {
        stimulus_id(&self.verb_id, self.mode, self.variant_index)
    }
}

pub fn stimulus_id(verb_id: &str, mode: Mode, variant_index: usize) -> String {
    format!("{verb_id}:{}:{variant_index}", mode.tag())
}

/// A (subject, object) pair with the subject's gender.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NamePair {
    pub subject: String,
    pub object: String,
    pub subject_gender: Gender,
}

/// All 200 name pairs: male-subject pairs by (male, female) index, then
/// female-subject pairs by (female, male) index.
pub fn enumerate_name_pairs(pool: &NamePool) -> Vec<NamePair> {
    let mut pairs = Vec::with_capacity(VARIANTS_PER_VERB);
    for gender in [Gender::Male, Gender::Female] {
        for subject in pool.names(gender) {
            for object in pool.names(gender.other()) {
                pairs.push(NamePair {
                    subject: subject.clone(),
                    object: object.clone(),
                    subject_gender: gender,
                });
            }
        }
    }
    pairs
}

/// Seeded permutation of the first 200 nonce words.
pub fn assign_nonce(lexicon: &NonceLexicon, seed: u64) -> Result<Vec<String>, StimgenError> {
    if lexicon.words.len() < VARIANTS_PER_VERB {
        return Err(StimgenError::LexiconTooSmall(lexicon.words.len()));
    }
    let mut words = lexicon.words[..VARIANTS_PER_VERB].to_vec();
    shuffle(&mut words, &mut SplitMix64::new(seed));
    Ok(words)
}

/// Nonce seed of one verb: the run seed XOR the FNV-1a hash of its id.
pub fn verb_seed(seed: u64, verb_id: &str) -> u64 {
    seed ^ fnv1a64(verb_id)
}

pub fn label_congruency(verb: &VerbEntry, target: Referent, strong_threshold: f64) -> Congruency {
    let favoured = if verb.human_bias > strong_threshold {
        Referent::Subject
    } else if verb.human_bias < -strong_threshold {
        Referent::Object
    } else {
        return Congruency::Neutral;
    };
    if favoured == target {
        Congruency::Congruent
    } else {
        Congruency::Incongruent
    }
}

/// Render the probe text for one name pair.
pub fn render(
    verb: &VerbEntry,
    pair: &NamePair,
    mode: Mode,
    nonce: Option<&str>,
    explanation: Option<&str>,
) -> String {
    let clause = verb.fill(&pair.subject, &pair.object);
    match mode {
        Mode::ClozeNonce => format!("{clause} because {BLANK} was a {} .", nonce.unwrap_or("")),
        Mode::OpenEnded => format!("{clause} because"),
        Mode::SwappedCloze => format!("Because {BLANK} was a {} , {clause} .", nonce.unwrap_or("")),
        Mode::Explanation { .. } => {
            format!("{clause} because {BLANK} {} .", explanation.unwrap_or(""))
        }
    }
}

/// The 200 variants of `verb` in `mode`.
///
/// `explanations` is consulted only in explanation mode; `lexicon` only in
/// nonce modes.
pub fn generate(
    verb: &VerbEntry,
    mode: Mode,
    pool: &NamePool,
    lexicon: &NonceLexicon,
    explanations: &[ExplanationPair],
    seed: u64,
) -> Result<Vec<StimulusVariant>, StimgenError> {
    let nonce = if mode.uses_nonce() {
        Some(assign_nonce(lexicon, verb_seed(seed, &verb.id))?)
    } else {
        None
    };
    let (explanation, congruency) = match mode {
        Mode::Explanation { target } => {
            let pair = explanations
                .iter()
                .find(|p| p.verb_id == verb.id)
                .ok_or_else(|| StimgenError::MissingExplanation(verb.id.clone()))?;
            let text = match target {
                Referent::Subject => pair.subj_expl.as_str(),
                Referent::Object => pair.obj_expl.as_str(),
            };
            (
                Some(text),
                label_congruency(verb, target, STRONG_BIAS_THRESHOLD),
            )
        }
        _ => (None, Congruency::NA),
    };

    Ok(enumerate_name_pairs(pool)
        .into_iter()
        .enumerate()
        .map(|(index, pair)| {
            let nonce_word = nonce.as_ref().map(|words| words[index].clone());
            StimulusVariant {
                verb_id: verb.id.clone(),
                variant_index: index,
                text: render(verb, &pair, mode, nonce_word.as_deref(), explanation),
                subject_name: pair.subject,
                object_name: pair.object,
                subject_gender: pair.subject_gender,
                nonce_word,
                mode,
                congruency,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{bundled, load_explanations, load_names, load_nonce, load_verbs};
    use std::collections::HashSet;

    fn praise() -> VerbEntry {
        VerbEntry {
            id: "v1".into(),
            lemma: "praise".into(),
            frame_past: "{SUBJ} praised {OBJ}".into(),
            human_bias: -45.0,
            language: "en".into(),
        }
    }

    fn john_mary() -> NamePair {
        NamePair {
            subject: "John".into(),
            object: "Mary".into(),
            subject_gender: Gender::Male,
        }
    }

    #[test]
    fn renders_each_mode() {
        let v = praise();
        let p = john_mary();
        assert_eq!(
            render(&v, &p, Mode::ClozeNonce, Some("dax"), None),
            "John praised Mary because ___ was a dax ."
        );
        assert_eq!(
            render(&v, &p, Mode::OpenEnded, None, None),
            "John praised Mary because"
        );
        assert_eq!(
            render(&v, &p, Mode::SwappedCloze, Some("dax"), None),
            "Because ___ was a dax , John praised Mary ."
        );
        assert_eq!(
            render(
                &v,
                &p,
                Mode::Explanation {
                    target: Referent::Object
                },
                None,
                Some("had done well")
            ),
            "John praised Mary because ___ had done well ."
        );
    }

    #[test]
    fn name_pair_order() {
        let pool = load_names(&bundled::names()).unwrap();
        let pairs = enumerate_name_pairs(&pool);
        assert_eq!(pairs.len(), 200);
        assert_eq!(pairs[0].subject, pool.male[0]);
        assert_eq!(pairs[0].object, pool.female[0]);
        assert_eq!(pairs[0].subject_gender, Gender::Male);
        assert_eq!(pairs[13].subject, pool.male[1]);
        assert_eq!(pairs[13].object, pool.female[3]);
        assert_eq!(pairs[100].subject, pool.female[0]);
        assert_eq!(pairs[100].object, pool.male[0]);
        assert_eq!(pairs[199].subject, pool.female[9]);
        assert_eq!(pairs[199].object, pool.male[9]);
        assert!(pairs[..100]
            .iter()
            .all(|p| p.subject_gender == Gender::Male));
        assert!(pairs[100..]
            .iter()
            .all(|p| p.subject_gender == Gender::Female));
        let distinct: HashSet<_> = pairs.iter().collect();
        assert_eq!(distinct.len(), 200);
    }

    #[test]
    fn nonce_assignment_is_a_seeded_bijection() {
        let lex = load_nonce(&bundled::nonce()).unwrap();
        let a = assign_nonce(&lex, 1).unwrap();
        assert_eq!(a, assign_nonce(&lex, 1).unwrap());
        assert_ne!(a, assign_nonce(&lex, 2).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        let mut first: Vec<String> = lex.words[..200].to_vec();
        first.sort();
        assert_eq!(sorted, first);
    }

    #[test]
    fn nonce_permutation_matches_reference_generator() {
        // Frozen from an independent Python SplitMix64 + Fisher-Yates run over
        // the indices 0..200 with seed 1.
        let lex = NonceLexicon {
            words: (0..200).map(|i| format!("w{i}")).collect(),
        };
        let perm = assign_nonce(&lex, 1).unwrap();
        let head: Vec<&str> = perm[..8].iter().map(String::as_str).collect();
        assert_eq!(head, REFERENCE_SEED1_HEAD);
    }

    const REFERENCE_SEED1_HEAD: [&str; 8] =
        ["w25", "w113", "w172", "w42", "w57", "w4", "w88", "w148"];

    #[test]
    fn small_lexicon_is_rejected() {
        let lex = NonceLexicon {
            words: vec!["dax".into(); 1],
        };
        assert_eq!(assign_nonce(&lex, 0), Err(StimgenError::LexiconTooSmall(1)));
    }

    #[test]
    fn congruency_labels() {
        let mut v = praise();
        v.human_bias = 70.0;
        assert_eq!(
            label_congruency(&v, Referent::Subject, 65.0),
            Congruency::Congruent
        );
        assert_eq!(
            label_congruency(&v, Referent::Object, 65.0),
            Congruency::Incongruent
        );
        v.human_bias = -70.0;
        assert_eq!(
            label_congruency(&v, Referent::Object, 65.0),
            Congruency::Congruent
        );
        v.human_bias = 10.0;
        assert_eq!(
            label_congruency(&v, Referent::Subject, 65.0),
            Congruency::Neutral
        );
        assert_eq!(
            label_congruency(&v, Referent::Object, 65.0),
            Congruency::Neutral
        );
        v.human_bias = 65.0;
        assert_eq!(
            label_congruency(&v, Referent::Object, 65.0),
            Congruency::Neutral
        );
    }

    #[test]
    fn generate_every_mode() {
        let verbs = load_verbs(&bundled::verbs()).unwrap();
        let pool = load_names(&bundled::names()).unwrap();
        let lex = load_nonce(&bundled::nonce()).unwrap();
        let expl = load_explanations(&bundled::explanations()).unwrap();
        let verb = verbs.iter().find(|v| v.id == "v03").unwrap();
        for mode in [
            Mode::ClozeNonce,
            Mode::OpenEnded,
            Mode::SwappedCloze,
            Mode::Explanation {
                target: Referent::Subject,
            },
            Mode::Explanation {
                target: Referent::Object,
            },
        ] {
            let vs = generate(verb, mode, &pool, &lex, &expl, 7).unwrap();
            assert_eq!(vs.len(), 200);
            for (i, v) in vs.iter().enumerate() {
                assert_eq!(v.variant_index, i);
                assert_ne!(v.subject_name, v.object_name);
                assert_eq!(v.nonce_word.is_some(), mode.uses_nonce());
                assert_eq!(v.text.contains(BLANK), mode != Mode::OpenEnded);
            }
            if mode.uses_nonce() {
                let distinct: HashSet<_> = vs.iter().map(|v| &v.nonce_word).collect();
                assert_eq!(distinct.len(), 200);
            }
        }
        let subj = generate(
            verb,
            Mode::Explanation {
                target: Referent::Subject,
            },
            &pool,
            &lex,
            &expl,
            7,
        )
        .unwrap();
        assert_eq!(subj[0].congruency, Congruency::Congruent);
        assert_eq!(
            subj[0].text,
            "John annoyed Mary because ___ kept humming loudly ."
        );
    }

    #[test]
    fn missing_explanation_is_an_error() {
        let pool = load_names(&bundled::names()).unwrap();
        let lex = load_nonce(&bundled::nonce()).unwrap();
        let err = generate(
            &praise(),
            Mode::Explanation {
                target: Referent::Subject,
            },
            &pool,
            &lex,
            &[],
            0,
        )
        .unwrap_err();
        assert_eq!(err, StimgenError::MissingExplanation("v1".into()));
    }

    #[test]
    fn stimulus_ids_separate_explanation_directions() {
        let a = stimulus_id(
            "v1",
            Mode::Explanation {
                target: Referent::Subject,
            },
            3,
        );
        let b = stimulus_id(
            "v1",
            Mode::Explanation {
                target: Referent::Object,
            },
            3,
        );
        assert_ne!(a, b);
        assert_eq!(stimulus_id("v1", Mode::ClozeNonce, 0), "v1:cloze:0");
    }
}
