//! Record/replay of chat completions.
//!
//! A cassette is a JSON Lines file of `{"fingerprint": hex, "response": {...}}`.
//! Lookups are by fingerprint, never by position, so replay tolerates request
//! reordering but not edits.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Record,
    Replay,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::String(s) => Value::String(normalize_ws(&s)),
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        // serde_json's default map is ordered by key
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| (k, canonicalize(v)))
                .collect(),
        ),
        other => other,
    }
}

/// Stable hex digest over the canonical JSON form of a request.
pub fn fingerprint(request: &ChatRequest) -> String {
    let value = serde_json::to_value(request).expect("request serializes");
    let canonical = serde_json::to_string(&canonicalize(value)).expect("value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn load_entries(path: &Path) -> Result<HashMap<String, ChatResponse>, BackendError> {
    let file = File::open(path)?;
    let mut entries = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
            BackendError::CorruptCassette(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if entries.contains_key(&entry.fingerprint) {
            return Err(BackendError::CorruptCassette(format!(
                "{}:{}: duplicate fingerprint {}",
                path.display(),
                lineno + 1,
                entry.fingerprint
            )));
        }
        entries.insert(entry.fingerprint, entry.response);
    }
    Ok(entries)
}

struct Recorder {
    inner: Arc<dyn ChatBackend>,
    file: File,
}

pub struct CassetteBackend {
    path: PathBuf,
    entries: Mutex<HashMap<String, ChatResponse>>,
    recorder: Option<Mutex<Recorder>>,
}

impl CassetteBackend {
    /// Serve answers from an existing cassette without touching `inner` or the network.
    pub fn replay(path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        if !path.exists() {
            return Err(BackendError::Config(format!(
                "cassette {} does not exist",
                path.display()
            )));
        }
        let entries = load_entries(&path)?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            recorder: None,
        })
    }

    /// Delegate to `inner` and append every new (fingerprint, response) pair.
    /// An existing cassette is extended; already-recorded requests are answered
    /// from it.
    pub fn record(inner: Arc<dyn ChatBackend>, path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        let entries = if path.exists() {
            load_entries(&path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            recorder: Some(Mutex::new(Recorder { inner, file })),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ChatBackend for CassetteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let fp = fingerprint(request);
        if let Some(hit) = self.entries.lock().expect("cassette lock").get(&fp) {
            return Ok(hit.clone());
        }
        let Some(recorder) = &self.recorder else {
            return Err(BackendError::CassetteMiss { fingerprint: fp });
        };
        // Holding the recorder lock across the call keeps file order equal to call order.
        let mut rec = recorder.lock().expect("recorder lock");
        let response = rec.inner.complete(request)?;
        let mut entries = self.entries.lock().expect("cassette lock");
        if let Entry::Vacant(slot) = entries.entry(fp.clone()) {
            let entry = CassetteEntry {
                fingerprint: fp,
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(rec.file, "{line}")?;
            rec.file.flush()?;
            slot.insert(response.clone());
        }
        Ok(response)
    }
}

/// Wrap `inner` for recording, or open `path` for replay (`inner` unused).
pub fn record_replay(
    inner: Option<Arc<dyn ChatBackend>>,
    path: impl Into<PathBuf>,
    mode: CassetteMode,
) -> Result<CassetteBackend, BackendError> {
    match mode {
        CassetteMode::Replay => CassetteBackend::replay(path),
        CassetteMode::Record => {
            let inner = inner.ok_or_else(|| {
                BackendError::Config("record mode needs an inner backend".into())
            })?;
            CassetteBackend::record(inner, path)
        }
    }
}
