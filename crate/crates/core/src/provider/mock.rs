//! Offline stand-ins for remote providers.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cache_key, BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::prompting::{Role, JUDGE};

/// One line of a script file: the reply for the request with this digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub digest: String,
    pub content: String,
}

/// Writes script entries as JSON lines, sorted by digest.
pub fn write_script(path: impl AsRef<Path>, entries: &[ScriptEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.digest.cmp(&b.digest));
    sorted.dedup_by(|a, b| a.digest == b.digest);
    let mut out = Vec::new();
    for e in &sorted {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Replies looked up by request digest.
///
/// Unknown digests fall through to `fallback`, then to `default`, and
/// otherwise fail with a non-retryable 404. The first `failures` attempts
/// fail with `failure_status` regardless of the request.
#[derive(Default)]
pub struct ScriptedMock {
    responses: HashMap<String, String>,
    default: Option<String>,
    fallback: Option<Arc<dyn ChatBackend>>,
    failures: AtomicU32,
    failure_status: u16,
    attempts: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        ScriptedMock::default()
    }

    /// Loads a JSON-lines script of [`ScriptEntry`] records.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mock = ScriptedMock::new();
        for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: format!("{}: {e}", path.display()),
            })?;
            mock.responses.insert(entry.digest, entry.content);
        }
        Ok(mock)
    }

    pub fn with_response(mut self, digest: impl Into<String>, content: impl Into<String>) -> Self {
        self.responses.insert(digest.into(), content.into());
        self
    }

    pub fn with_default(mut self, content: impl Into<String>) -> Self {
        self.default = Some(content.into());
        self
    }

    pub fn with_fallback(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.fallback = Some(backend);
        self
    }

    pub fn with_failures(mut self, count: u32, status: u16) -> Self {
        self.failures = AtomicU32::new(count);
        self.failure_status = status;
        self
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Attempts received so far, including scripted failures.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Digests of every attempt, in arrival order.
    pub fn log(&self) -> Vec<String> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl ChatBackend for ScriptedMock {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        let digest = cache_key(request).to_string();
        self.attempts.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(digest.clone());
        if self
            .failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(BackendError::Status {
                status: self.failure_status,
                body: "scripted failure".into(),
            });
        }
        if let Some(content) = self.responses.get(&digest) {
            return Ok(ChatResponse::stop(content.clone()));
        }
        if let Some(fallback) = &self.fallback {
            return fallback.send(request);
        }
        match &self.default {
            Some(content) => Ok(ChatResponse::stop(content.clone())),
            None => Err(BackendError::Status {
                status: 404,
                body: format!("no scripted response for {digest}"),
            }),
        }
    }
}

/// Words that make [`HeuristicMock`] call a sentence subjective.
pub fn default_lexicon() -> Vec<String> {
    [
        "absurd", "amazing", "awful", "best", "brilliant", "clearly", "disaster", "disgraceful",
        "dreadful", "excellent", "fantastic", "horrible", "incredible", "obviously", "outrageous",
        "pathetic", "perhaps", "probably", "ridiculous", "shameful", "should", "so", "surely",
        "terrible", "terrific", "unfortunately", "wonderful", "worst",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Labels a sentence subjective iff it contains a lexicon word, and answers
/// in whatever form the system prompt asks for. Debate advocates get a short
/// canned argument. Meant for generating realistic offline traffic.
pub struct HeuristicMock {
    lexicon: Vec<String>,
    calls: AtomicUsize,
}

impl HeuristicMock {
    pub fn new(lexicon: impl IntoIterator<Item = impl Into<String>>) -> Self {
        HeuristicMock {
            lexicon: lexicon.into_iter().map(|w| w.into().to_lowercase()).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn matches(&self, sentence: &str) -> Vec<String> {
        let lower = sentence.to_lowercase();
        let mut hits: Vec<String> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| self.lexicon.iter().any(|l| l == w))
            .map(str::to_string)
            .collect();
        hits.dedup();
        hits
    }
}

impl Default for HeuristicMock {
    fn default() -> Self {
        HeuristicMock::new(default_lexicon())
    }
}

fn target_sentence(user: &str) -> &str {
    match user.find("Sentence: ") {
        Some(i) => {
            let rest = &user[i + "Sentence: ".len()..];
            rest.split("\n\nOpinion (").next().unwrap_or(rest)
        }
        None => user,
    }
}

fn leading_number(s: &str) -> Option<u32> {
    let digits: String = s.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

impl ChatBackend for HeuristicMock {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let messages = &request.messages.messages;
        let system = messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| BackendError::Status {
                status: 400,
                body: "no user message".into(),
            })?;
        let hits = self.matches(target_sentence(user));
        let subjective = !hits.is_empty();

        let reply = if system == JUDGE {
            if subjective { "subjective" } else { "objective" }.to_string()
        } else if system.contains("explain why") {
            if subjective {
                format!("The wording ({}) carries the author's evaluation.", hits.join(", "))
            } else {
                "The sentence reports verifiable content without evaluative wording.".to_string()
            }
        } else if system.ends_with("Answer only with Yes or No.") {
            if subjective { "Yes" } else { "No" }.to_string()
        } else if let Some(i) = system.rfind("Answer only with Category ") {
            let tail = &system[i + "Answer only with Category ".len()..];
            let obj = leading_number(tail);
            let subj = tail
                .find("or Category ")
                .and_then(|j| leading_number(&tail[j + "or Category ".len()..]));
            match (obj, subj) {
                (Some(o), Some(s)) => format!("Category {}", if subjective { s } else { o }),
                _ => return Err(BackendError::Status { status: 400, body: "bad category prompt".into() }),
            }
        } else if system.contains("OBJ or SUBJ") {
            if subjective { "SUBJ" } else { "OBJ" }.to_string()
        } else {
            if subjective { "subjective" } else { "objective" }.to_string()
        };
        Ok(ChatResponse::stop(reply))
    }
}

/// Deterministic pseudo-embeddings from SHA-256 of the text.
pub struct HashEmbeddingProvider {
    dim: usize,
    calls: AtomicUsize,
}

impl HashEmbeddingProvider {
    pub fn new(dim: usize) -> Self {
        HashEmbeddingProvider {
            dim: dim.max(1),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let mut h = Sha256::new();
                h.update((i as u64).to_be_bytes());
                h.update(text.as_bytes());
                let bytes = h.finalize();
                let x = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
                (x as f64 / u64::MAX as f64) * 2.0 - 1.0
            })
            .collect()
    }
}

impl EmbeddingProvider for HashEmbeddingProvider {
    fn provenance(&self) -> String {
        format!("hash-mock/dim{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
