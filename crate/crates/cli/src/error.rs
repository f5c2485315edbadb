use std::path::PathBuf;

use icprobe::biasmetrics::BiasError;
use icprobe::congruency::CongruencyError;
use icprobe::lexicon::LexiconError;
use icprobe::repprobe::ProbeError;
use icprobe::scorer::ScoreError;
use icprobe::stats::StatsError;
use icprobe::stimgen::StimgenError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: &'static str },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Stimgen(#[from] StimgenError),
    #[error("backend error ({code}): {0}", code = .0.code())]
    Score(#[from] ScoreError),
    #[error("{failed} of {total} stimuli failed; first error ({code}): {first}", code = .first.code())]
    Scoring {
        failed: usize,
        total: usize,
        first: ScoreError,
    },
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Congruency(#[from] CongruencyError),
    #[error(transparent)]
    Probe(ProbeError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Score(s) => CliError::Score(s),
            other => CliError::Probe(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Score(_) | CliError::Scoring { .. } => EXIT_BACKEND,
            CliError::Write { .. } | CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Bias(BiasError::Io(_)) => EXIT_INTERNAL,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
