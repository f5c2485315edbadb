//! Content-addressed response cache.
//!
//! A request is keyed by the SHA-256 of its canonical JSON form (sorted
//! object keys, sorted candidate lists, no insignificant whitespace). Each
//! backend owns one append-only JSONL file of
//! `{key, request, response, timestamp}` records.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::ScoreError;

/// Recursively sort object keys and the `candidates` list.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                let v = match (k.as_str(), v) {
                    ("candidates", Value::Array(items)) => {
                        let mut items: Vec<Value> = items.iter().map(canonicalize).collect();
                        items.sort_by_key(|a| a.to_string());
                        Value::Array(items)
                    }
                    _ => canonicalize(v),
                };
                out.insert(k.clone(), v);
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Compact canonical serialization.
pub fn canonical_json(value: &Value) -> String {
    canonicalize(value).to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cache key of a request to `path` with JSON `body`.
pub fn request_key(path: &str, body: &Value) -> String {
    let request = serde_json::json!({ "path": path, "body": body });
    sha256_hex(canonical_json(&request).as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: Value,
    pub response: Value,
    pub timestamp: u64,
}

#[derive(Debug)]
struct Inner {
    entries: HashMap<String, Value>,
    file: File,
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl ResponseCache {
    /// Open (or create) `<dir>/<backend_id>.jsonl` and load every record.
    pub fn open(dir: &Path, backend_id: &str) -> Result<Self, ScoreError> {
        let path = dir.join(format!("{backend_id}.jsonl"));
        let cache_err = |line: usize, message: String| ScoreError::Cache {
            file: path.clone(),
            line,
            message,
        };
        fs::create_dir_all(dir).map_err(|e| cache_err(0, e.to_string()))?;
        let mut entries = HashMap::new();
        if path.exists() {
            let reader =
                BufReader::new(File::open(&path).map_err(|e| cache_err(0, e.to_string()))?);
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| cache_err(line_no, e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| cache_err(line_no, format!("corrupt record: {e}")))?;
                let path_str = record.request.get("path").and_then(Value::as_str);
                let body = record.request.get("body");
                match (path_str, body) {
                    (Some(p), Some(b)) if request_key(p, b) == record.key => {}
                    _ => {
                        return Err(cache_err(
                            line_no,
                            "record key does not match its request".into(),
                        ))
                    }
                }
                entries.insert(record.key, record.response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| cache_err(0, e.to_string()))?;
        Ok(Self {
            path,
            inner: Mutex::new(Inner { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.inner
            .lock()
            .expect("cache lock")
            .entries
            .get(key)
            .cloned()
    }

    /// Append a record. A key already present is left untouched.
    pub fn insert(&self, path: &str, body: &Value, response: Value) -> Result<String, ScoreError> {
        let key = request_key(path, body);
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.entries.contains_key(&key) {
            return Ok(key);
        }
        let record = CacheRecord {
            key: key.clone(),
            request: canonicalize(&serde_json::json!({ "path": path, "body": body })),
            response: response.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let line = serde_json::to_string(&record).map_err(|e| ScoreError::Cache {
            file: self.path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(inner.file, "{line}")
            .and_then(|_| inner.file.flush())
            .map_err(|e| ScoreError::Cache {
                file: self.path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
        inner.entries.insert(key.clone(), response);
        Ok(key)
    }
}
