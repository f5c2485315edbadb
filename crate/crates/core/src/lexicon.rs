//! Verbs, human bias norms, name pools, nonce words and explanation pairs.
//!
//! Every loader validates its input fully and reports the first violation
//! with file, line and field. Loaded values are immutable.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const SUBJ: &str = "{SUBJ}";
pub const OBJ: &str = "{OBJ}";
pub const POOL_SIZE: usize = 10;
pub const MIN_NONCE_WORDS: usize = 200;

const PRONOUN_WORDS: &[&str] = &[
    "he", "she", "him", "her", "his", "hers", "they", "them", "their", "it", "its", "i", "you",
    "we",
];

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("{file}: cannot read: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed row: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: field `{field}`: {message}")]
    Invalid {
        file: PathBuf,
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("{file}: {message}")]
    Pool { file: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn other(self) -> Self {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

/// Sign of a bias score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    S,
    O,
    Zero,
}

impl Polarity {
    pub fn of(bias: f64) -> Self {
        if bias > 0.0 {
            Polarity::S
        } else if bias < 0.0 {
            Polarity::O
        } else {
            Polarity::Zero
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::S => "S",
            Polarity::O => "O",
            Polarity::Zero => "Zero",
        })
    }
}

/// An interpersonal verb with its past-tense frame and human IC bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbEntry {
    pub id: String,
    pub lemma: String,
    /// Surface template, e.g. `{SUBJ} apologized to {OBJ}`.
    pub frame_past: String,
    /// Human bias score in `[-100, 100]`; positive means subject bias.
    pub human_bias: f64,
    pub language: String,
}

impl VerbEntry {
    pub fn polarity(&self) -> Polarity {
        Polarity::of(self.human_bias)
    }

    /// The frame with both placeholders filled.
    pub fn fill(&self, subject: &str, object: &str) -> String {
        self.frame_past
            .replacen(SUBJ, subject, 1)
            .replacen(OBJ, object, 1)
    }

    /// Whitespace word index of the verb in the filled frame: the word right
    /// after the subject.
    pub fn verb_word_index(&self) -> usize {
        let before = &self.frame_past[..self.frame_past.find(SUBJ).unwrap_or(0)];
        before.split_whitespace().count() + 1
    }
}

fn check_frame(frame: &str) -> Result<(), String> {
    let subj = frame.matches(SUBJ).count();
    let obj = frame.matches(OBJ).count();
    if subj != 1 || obj != 1 {
        return Err(format!(
            "must contain {SUBJ} and {OBJ} exactly once (found {subj} and {obj})"
        ));
    }
    let (s, o) = (frame.find(SUBJ).unwrap(), frame.find(OBJ).unwrap());
    if s > o {
        return Err(format!("{SUBJ} must precede {OBJ}"));
    }
    let words: Vec<&str> = frame.split_whitespace().collect();
    let subj_word = words.iter().position(|w| *w == SUBJ);
    let obj_word = words.iter().position(|w| *w == OBJ);
    match (subj_word, obj_word) {
        (Some(s), Some(o)) if o > s + 1 => Ok(()),
        (Some(_), Some(_)) => Err("no verb between subject and object".into()),
        _ => Err("placeholders must be whitespace-delimited words".into()),
    }
}

impl VerbEntry {
    fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.id.trim().is_empty() {
            return Err(("id", "must not be empty".into()));
        }
        if self.lemma.trim().is_empty() {
            return Err(("lemma", "must not be empty".into()));
        }
        check_frame(&self.frame_past).map_err(|m| ("frame_past", m))?;
        if !self.human_bias.is_finite() || !(-100.0..=100.0).contains(&self.human_bias) {
            return Err((
                "human_bias",
                format!("{} outside [-100, 100]", self.human_bias),
            ));
        }
        if self.language.trim().is_empty() {
            return Err(("language", "must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct VerbRow {
    id: String,
    lemma: String,
    frame_past: String,
    human_bias: String,
    language: String,
}

fn read(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        file: path.to_path_buf(),
        source,
    })
}

/// Parse a verbs CSV (`id,lemma,frame_past,human_bias,language`).
pub fn parse_verbs(text: &str, file: &Path) -> Result<Vec<VerbEntry>, LexiconError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| LexiconError::Malformed {
            file: file.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["id", "lemma", "frame_past", "human_bias", "language"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(LexiconError::Malformed {
            file: file.to_path_buf(),
            line: 1,
            message: format!("header must be {}", expected.join(",")),
        });
    }
    let mut verbs = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let malformed = |line: usize, e: csv::Error| LexiconError::Malformed {
            file: file.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: VerbRow = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(line, e))?;
        let human_bias: f64 = row.human_bias.parse().map_err(|_| LexiconError::Invalid {
            file: file.to_path_buf(),
            line,
            field: "human_bias",
            message: format!("`{}` is not a number", row.human_bias),
        })?;
        let verb = VerbEntry {
            id: row.id,
            lemma: row.lemma,
            frame_past: row.frame_past,
            human_bias,
            language: row.language,
        };
        verb.validate()
            .map_err(|(field, message)| LexiconError::Invalid {
                file: file.to_path_buf(),
                line,
                field,
                message,
            })?;
        if !seen.insert(verb.id.clone()) {
            return Err(LexiconError::Invalid {
                file: file.to_path_buf(),
                line,
                field: "id",
                message: format!("duplicate id `{}`", verb.id),
            });
        }
        verbs.push(verb);
    }
    Ok(verbs)
}

pub fn load_verbs(path: &Path) -> Result<Vec<VerbEntry>, LexiconError> {
    parse_verbs(&read(path)?, path)
}

pub fn write_verbs<W: Write>(verbs: &[VerbEntry], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["id", "lemma", "frame_past", "human_bias", "language"])?;
    for v in verbs {
        writer.write_record([
            v.id.as_str(),
            v.lemma.as_str(),
            v.frame_past.as_str(),
            &v.human_bias.to_string(),
            v.language.as_str(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Ten male and ten female names, order significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamePool {
    pub male: Vec<String>,
    pub female: Vec<String>,
}

impl NamePool {
    pub fn new(male: Vec<String>, female: Vec<String>) -> Result<Self, String> {
        for (label, list) in [("male", &male), ("female", &female)] {
            if list.len() != POOL_SIZE {
                return Err(format!(
                    "pool size must be {POOL_SIZE} ({label} has {})",
                    list.len()
                ));
            }
            let distinct: HashSet<_> = list.iter().collect();
            if distinct.len() != list.len() {
                return Err(format!("{label} names must be distinct"));
            }
        }
        if let Some(shared) = male.iter().find(|m| female.contains(m)) {
            return Err(format!("`{shared}` appears in both pools"));
        }
        Ok(Self { male, female })
    }

    pub fn names(&self, gender: Gender) -> &[String] {
        match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }
}

pub fn parse_names(text: &str, file: &Path) -> Result<NamePool, LexiconError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| LexiconError::Malformed {
        file: file.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["gender", "name"] {
        return Err(LexiconError::Malformed {
            file: file.to_path_buf(),
            line: 1,
            message: "header must be gender,name".into(),
        });
    }
    let (mut male, mut female) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| LexiconError::Malformed {
            file: file.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let name = record.get(1).unwrap_or_default().to_string();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(LexiconError::Invalid {
                file: file.to_path_buf(),
                line,
                field: "name",
                message: format!("`{name}` must be a single non-empty word"),
            });
        }
        match record
            .get(0)
            .unwrap_or_default()
            .to_ascii_lowercase()
            .as_str()
        {
            "male" => male.push(name),
            "female" => female.push(name),
            other => {
                return Err(LexiconError::Invalid {
                    file: file.to_path_buf(),
                    line,
                    field: "gender",
                    message: format!("`{other}` is not male or female"),
                })
            }
        }
    }
    NamePool::new(male, female).map_err(|message| LexiconError::Pool {
        file: file.to_path_buf(),
        message,
    })
}

pub fn load_names(path: &Path) -> Result<NamePool, LexiconError> {
    parse_names(&read(path)?, path)
}

pub fn write_names<W: Write>(pool: &NamePool, mut out: W) -> std::io::Result<()> {
    writeln!(out, "gender,name")?;
    for name in &pool.male {
        writeln!(out, "male,{name}")?;
    }
    for name in &pool.female {
        writeln!(out, "female,{name}")?;
    }
    Ok(())
}

/// Ordered list of distinct made-up words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceLexicon {
    pub words: Vec<String>,
}

pub fn parse_nonce(text: &str, file: &Path) -> Result<NonceLexicon, LexiconError> {
    let mut words = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let word = raw.trim();
        if word.is_empty() {
            continue;
        }
        let invalid = |message: String| LexiconError::Invalid {
            file: file.to_path_buf(),
            line: i + 1,
            field: "word",
            message,
        };
        if !word.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(invalid(format!("`{word}` must be lowercase alphabetic")));
        }
        if !seen.insert(word.to_string()) {
            return Err(invalid(format!("duplicate nonce word `{word}`")));
        }
        words.push(word.to_string());
    }
    Ok(NonceLexicon { words })
}

pub fn load_nonce(path: &Path) -> Result<NonceLexicon, LexiconError> {
    parse_nonce(&read(path)?, path)
}

pub fn write_nonce<W: Write>(lexicon: &NonceLexicon, mut out: W) -> std::io::Result<()> {
    for word in &lexicon.words {
        writeln!(out, "{word}")?;
    }
    Ok(())
}

/// A subject-referring and an object-referring explanation for one verb.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationPair {
    pub verb_id: String,
    pub subj_expl: String,
    pub obj_expl: String,
}

fn check_explanation(text: &str) -> Result<(), String> {
    let first = text.split_whitespace().next().ok_or("must not be empty")?;
    if first.contains(SUBJ) || first.contains(OBJ) {
        return Err("must not start with a placeholder".into());
    }
    if PRONOUN_WORDS.contains(&first.to_lowercase().as_str()) {
        return Err(format!("must start with a verb, not the pronoun `{first}`"));
    }
    Ok(())
}

pub fn parse_explanations(text: &str, file: &Path) -> Result<Vec<ExplanationPair>, LexiconError> {
    let mut pairs: Vec<ExplanationPair> = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut pair: ExplanationPair =
            serde_json::from_str(raw).map_err(|e| LexiconError::Malformed {
                file: file.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        pair.subj_expl = pair.subj_expl.trim().to_string();
        pair.obj_expl = pair.obj_expl.trim().to_string();
        let invalid = |field, message| LexiconError::Invalid {
            file: file.to_path_buf(),
            line,
            field,
            message,
        };
        check_explanation(&pair.subj_expl).map_err(|m| invalid("subj_expl", m))?;
        check_explanation(&pair.obj_expl).map_err(|m| invalid("obj_expl", m))?;
        if !seen.insert(pair.verb_id.clone()) {
            return Err(invalid(
                "verb_id",
                format!("duplicate pair for `{}`", pair.verb_id),
            ));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_explanations(path: &Path) -> Result<Vec<ExplanationPair>, LexiconError> {
    parse_explanations(&read(path)?, path)
}

pub fn write_explanations<W: Write>(pairs: &[ExplanationPair], mut out: W) -> std::io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Paths of the lexicon files bundled with the crate.
pub mod bundled {
    use std::path::PathBuf;

    fn data(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("data")
            .join(name)
    }

    pub fn verbs() -> PathBuf {
        data("verbs.csv")
    }
    pub fn names() -> PathBuf {
        data("names.csv")
    }
    pub fn nonce() -> PathBuf {
        data("nonce.txt")
    }
    pub fn explanations() -> PathBuf {
        data("explanations.jsonl")
    }
}
