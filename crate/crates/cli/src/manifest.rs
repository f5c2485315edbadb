//! Run manifest: everything needed to reproduce a run directory.

use std::path::{Path, PathBuf};

use icprobe::lexicon::{
    load_explanations, load_names, load_nonce, load_verbs, ExplanationPair, NamePool, NonceLexicon,
    VerbEntry,
};
use icprobe::scorer::cache::{canonical_json, sha256_hex};
use serde::{Deserialize, Serialize};

use crate::args::CliMode;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        let path = std::fs::canonicalize(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let bytes = std::fs::read(&path).map_err(|source| CliError::Read {
            path: path.clone(),
            source,
        })?;
        Ok(Self {
            sha256: sha256_hex(&bytes),
            path,
        })
    }

    fn verify(&self) -> Result<()> {
        let now = Self::hash(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(CliError::Validation(format!(
                "{} changed since the run was generated (sha256 {} != {})",
                self.path.display(),
                now.sha256,
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub verbs: InputFile,
    pub names: InputFile,
    pub nonce: InputFile,
    pub explanations: InputFile,
}

/// The backend a run directory is bound to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    /// `oracle` or `http`.
    pub kind: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    pub aggregation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub mode: CliMode,
    pub inputs: Inputs,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendInfo>,
}

/// Lexicon files loaded from a manifest.
pub struct Lexicon {
    pub verbs: Vec<VerbEntry>,
    pub pool: NamePool,
    pub nonce: NonceLexicon,
    pub explanations: Vec<ExplanationPair>,
}

impl RunManifest {
    // The output directory is recorded but not hashed, so a run directory
    // can be moved or regenerated elsewhere with identical artifacts.
    fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out_dir");
        }
        sha256_hex(canonical_json(&value).as_bytes())
    }

    /// Hash of the whole manifest, embedded in every stage output.
    pub fn hash(&self) -> String {
        self.digest()
    }

    /// Hash without the backend binding; embedded in `stimuli.jsonl`.
    pub fn base_hash(&self) -> String {
        Self {
            backend: None,
            ..self.clone()
        }
        .digest()
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    pub fn load(out: &Path) -> Result<Self> {
        let path = Self::path(out);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::MissingInput {
                    path,
                    hint: "run `icprobe gen` first",
                })
            }
            Err(source) => return Err(CliError::Read { path, source }),
        };
        serde_json::from_str(&text).map_err(|e| CliError::Malformed {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        crate::runio::write_json(&Self::path(out), self)
    }

    /// Load the lexicon files, checking they are unchanged.
    pub fn lexicon(&self) -> Result<Lexicon> {
        let i = &self.inputs;
        for f in [&i.verbs, &i.names, &i.nonce, &i.explanations] {
            f.verify()?;
        }
        Ok(Lexicon {
            verbs: load_verbs(&i.verbs.path)?,
            pool: load_names(&i.names.path)?,
            nonce: load_nonce(&i.nonce.path)?,
            explanations: load_explanations(&i.explanations.path)?,
        })
    }

    /// Record `info` as the run's backend; a different earlier binding is an error.
    pub fn bind(&mut self, info: BackendInfo) -> Result<()> {
        match &self.backend {
            Some(b) if *b != info => Err(CliError::Validation(format!(
                "run directory is bound to backend `{}` ({}); use a fresh --out for `{}`",
                b.id, b.kind, info.id
            ))),
            _ => {
                self.backend = Some(info);
                Ok(())
            }
        }
    }

    pub fn require_backend(&self) -> Result<&BackendInfo> {
        self.backend.as_ref().ok_or_else(|| {
            CliError::Validation("run has no backend yet; run `icprobe probe` first".into())
        })
    }
}
