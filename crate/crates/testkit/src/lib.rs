//! Shared fixtures for integration tests: an in-process HTTP server speaking
//! the scoring wire protocol, and synthetic lexica of arbitrary size.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use icprobe::lexicon::{self, NamePool, NonceLexicon, VerbEntry};
use icprobe::rng::{fnv1a64, mix64, SplitMix64};
use serde_json::{json, Value};

/// Uniform value in `[0, 1)` determined by `parts`.
pub fn hash_unit(parts: &[&str]) -> f64 {
    let mut h = 0u64;
    for p in parts {
        h = mix64(h ^ fnv1a64(p));
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A one-shot misbehaviour for the next request the server handles.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Status(u16),
    MalformedJson,
    OutOfRange,
    DropConnection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockCaps {
    pub cloze: bool,
    pub continuation: bool,
    pub sequence: bool,
    pub discriminate: bool,
    pub embed: bool,
}

impl MockCaps {
    pub const ALL: Self = Self {
        cloze: true,
        continuation: true,
        sequence: true,
        discriminate: true,
        embed: true,
    };
    pub const MASKED: Self = Self {
        cloze: true,
        continuation: false,
        sequence: true,
        discriminate: false,
        embed: true,
    };
}

struct Shared {
    caps: MockCaps,
    embed_dim: usize,
    requests: AtomicUsize,
    faults: Mutex<VecDeque<Fault>>,
    log: Mutex<Vec<(String, String)>>,
}

/// Deterministic scoring server on a random local port.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(caps: MockCaps) -> Self {
        Self::with_embed_dim(caps, 8)
    }

    pub fn with_embed_dim(caps: MockCaps, embed_dim: usize) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let shared = Arc::new(Shared {
            caps,
            embed_dim,
            requests: AtomicUsize::new(0),
            faults: Mutex::new(VecDeque::new()),
            log: Mutex::new(Vec::new()),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        let shared = Arc::clone(&shared);
                        std::thread::spawn(move || {
                            let _ = serve(stream, &shared);
                        });
                    }
                }
            })
        };
        Self {
            addr,
            shared,
            stop,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, including faulted ones.
    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// `(path, body)` of every request received.
    pub fn log(&self) -> Vec<(String, String)> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn push_fault(&self, fault: Fault) {
        self.shared.faults.lock().unwrap().push_back(fault);
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    shared.requests.fetch_add(1, Ordering::SeqCst);
    shared
        .log
        .lock()
        .unwrap()
        .push((path.clone(), body.clone()));
    let fault = shared.faults.lock().unwrap().pop_front();
    let (status, payload) = match fault {
        Some(Fault::DropConnection) => return Ok(()),
        Some(Fault::Status(code)) => (code, json!({"error": "injected"}).to_string()),
        Some(Fault::MalformedJson) => (200, "{\"probs\": ".to_string()),
        Some(Fault::OutOfRange) => (
            200,
            json!({"probs": {"he": 1.5, "she": 0.2}, "top_token": "he", "mean_token_prob": 1.5,
                   "per_token_original_prob": [1.5], "mean_original_prob": 1.5})
            .to_string(),
        ),
        None => route(&method, &path, &body, shared),
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

fn pronoun_probs(text: &str, candidates: &[String]) -> Value {
    let probs: BTreeMap<&str, f64> = candidates
        .iter()
        .map(|c| (c.as_str(), 0.05 + 0.45 * hash_unit(&[text, c])))
        .collect();
    // Occasionally some other word outranks both pronouns.
    let top = if hash_unit(&[text, "top"]) < 0.02 {
        "the".to_string()
    } else {
        probs
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k.to_string())
            .unwrap_or_default()
    };
    json!({"probs": probs, "top_token": top})
}

fn candidates(body: &Value) -> Vec<String> {
    body["candidates"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(String::from))
                .collect()
        })
        .unwrap_or_default()
}

fn route(method: &str, path: &str, body: &str, shared: &Shared) -> (u16, String) {
    let caps = shared.caps;
    if method == "GET" && path == "/v1/capabilities" {
        return (
            200,
            json!({"cloze": caps.cloze, "continuation": caps.continuation, "sequence": caps.sequence,
                   "discriminate": caps.discriminate, "embed": caps.embed, "model": "mock"})
            .to_string(),
        );
    }
    let Ok(req) = serde_json::from_str::<Value>(body) else {
        return (400, json!({"error": "malformed JSON"}).to_string());
    };
    let text = req["text"].as_str().unwrap_or("");
    let reply = match path {
        "/v1/cloze" if caps.cloze => pronoun_probs(text, &candidates(&req)),
        "/v1/continuation" if caps.continuation => {
            pronoun_probs(req["prefix"].as_str().unwrap_or(""), &candidates(&req))
        }
        "/v1/sequence" if caps.sequence => {
            let p = 0.05 + 0.9 * hash_unit(&[text, "seq"]);
            if req["aggregation"] == "mean_logprob" {
                json!({"mean_token_logprob": p.ln()})
            } else {
                json!({"mean_token_prob": p})
            }
        }
        "/v1/discriminate" if caps.discriminate => {
            let per: Vec<f64> = text
                .split_whitespace()
                .enumerate()
                .map(|(i, _)| 0.5 + 0.5 * hash_unit(&[text, &i.to_string()]))
                .collect();
            let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
            json!({"per_token_original_prob": per, "mean_original_prob": mean})
        }
        "/v1/embed" if caps.embed => {
            let idx = req["word_index"].to_string();
            let v: Vec<f64> = (0..shared.embed_dim)
                .map(|j| 2.0 * hash_unit(&[text, &idx, &j.to_string()]) - 1.0)
                .collect();
            json!({"vector": v, "dim": shared.embed_dim})
        }
        _ => return (404, json!({"error": "unsupported"}).to_string()),
    };
    (200, reply.to_string())
}

fn letters(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    String::from_utf8(s).unwrap()
}

/// `n` verbs with nonzero integer human bias drawn from `seed`.
pub fn synthetic_verbs(n: usize, seed: u64) -> Vec<VerbEntry> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let magnitude = 1 + rng.next_below(100) as i64;
            let sign = if rng.next_below(2) == 0 { -1 } else { 1 };
            let lemma = format!("zib{}", letters(i));
            VerbEntry {
                id: format!("s{i:03}"),
                frame_past: format!("{} {lemma}ed {}", lexicon::SUBJ, lexicon::OBJ),
                lemma,
                human_bias: (sign * magnitude) as f64,
                language: "en".into(),
            }
        })
        .collect()
}

pub fn bundled_verbs() -> Vec<VerbEntry> {
    lexicon::load_verbs(&lexicon::bundled::verbs()).expect("bundled verbs")
}

pub fn bundled_pool() -> NamePool {
    lexicon::load_names(&lexicon::bundled::names()).expect("bundled names")
}

pub fn bundled_nonce() -> NonceLexicon {
    lexicon::load_nonce(&lexicon::bundled::nonce()).expect("bundled nonce words")
}

pub fn bundled_explanations() -> Vec<lexicon::ExplanationPair> {
    lexicon::load_explanations(&lexicon::bundled::explanations()).expect("bundled explanations")
}
