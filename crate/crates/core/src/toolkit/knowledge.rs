//! Knowledge tools: plug-in sources the planner can consult besides the video.
//!
//! - symbolic: a table (CSV or SQLite file) queried by the same SQL sub-agent
//!   the sub-task tools use;
//! - textual: a document corpus split into fixed-size chunks, ranked by cosine
//!   similarity under a pluggable [`Embedder`], answered by one completion;
//! - web: one HTTP search call whose snippets are summarized by one completion.
//!
//! Source problems never abort the planner; they come back as observations.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::subtask::run_sql_agent;
use super::{ToolContext, ToolError, ToolHandler, ToolInvocation};
use crate::backend::{ChatBackend, ChatRequest};
use crate::memory::{MemoryError, SqlStore};

pub const CHUNK_TOKENS: usize = 256;
pub const TOP_K: usize = 4;
pub const NO_RESULTS: &str = "no results found";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    Symbolic,
    Textual,
    Web,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSource {
    pub kind: KnowledgeKind,
    /// Table file, document file/directory, or search URL template with `{query}`.
    pub locator: String,
    pub description: String,
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, String>;
}

/// Bag-of-words counts hashed into a fixed number of buckets. Deterministic and
/// offline; good enough for lexical overlap retrieval and for tests.
#[derive(Debug, Clone)]
pub struct TokenFrequencyEmbedder {
    dims: usize,
}

impl Default for TokenFrequencyEmbedder {
    fn default() -> Self {
        Self { dims: 4096 }
    }
}

impl TokenFrequencyEmbedder {
    pub fn new(dims: usize) -> Self {
        Self { dims: dims.max(1) }
    }

    fn bucket(&self, token: &str) -> usize {
        // FNV-1a, stable across platforms and releases
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.dims as u64) as usize
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for TokenFrequencyEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, String> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; self.dims];
                for tok in tokens(t) {
                    v[self.bucket(&tok)] += 1.0;
                }
                v
            })
            .collect())
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Consecutive windows of at most `size` whitespace tokens.
pub fn chunk_text(text: &str, size: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    words.chunks(size.max(1)).map(|c| c.join(" ")).collect()
}

struct TextIndex {
    chunks: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

enum Backing {
    Symbolic(Result<SqlStore, String>),
    Textual {
        chunks: Result<Vec<String>, String>,
        embedder: Option<Arc<dyn Embedder>>,
        index: OnceLock<Result<TextIndex, String>>,
    },
    Web {
        client: reqwest::blocking::Client,
    },
}

pub struct KnowledgeTool {
    source: KnowledgeSource,
    backing: Backing,
}

fn load_table(path: &Path) -> Result<SqlStore, String> {
    if !path.exists() {
        return Err(format!("{} does not exist", path.display()));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" => csv_to_store(path).map_err(|e| e.to_string()),
        _ => SqlStore::load_file(path, None).map_err(|e| e.to_string()),
    }
}

fn csv_to_store(path: &Path) -> Result<SqlStore, MemoryError> {
    let table: String = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("t")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut reader = csv::Reader::from_path(path).map_err(|e| MemoryError::Store(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| MemoryError::Store(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| MemoryError::Store(e.to_string()))?;
    // column affinity: INTEGER if every value parses, else REAL, else TEXT
    let types: Vec<&str> = (0..headers.len())
        .map(|i| {
            let vals = rows.iter().filter_map(|r| r.get(i)).filter(|v| !v.is_empty());
            if vals.clone().all(|v| v.parse::<i64>().is_ok()) {
                "INTEGER"
            } else if vals.clone().all(|v| v.parse::<f64>().is_ok()) {
                "REAL"
            } else {
                "TEXT"
            }
        })
        .collect();
    let cols: Vec<String> = headers
        .iter()
        .zip(&types)
        .map(|(h, t)| format!("\"{}\" {t}", h.replace('"', "")))
        .collect();
    let mut conn = Connection::open_in_memory()?;
    conn.execute_batch(&format!("CREATE TABLE \"{table}\"({});", cols.join(", ")))?;
    let placeholders = vec!["?"; headers.len()].join(", ");
    let tx = conn.transaction()?;
    {
        let mut stmt = tx.prepare(&format!("INSERT INTO \"{table}\" VALUES ({placeholders})"))?;
        for row in &rows {
            let values: Vec<rusqlite::types::Value> = row
                .iter()
                .zip(&types)
                .map(|(v, t)| {
                    if v.is_empty() {
                        rusqlite::types::Value::Null
                    } else {
                        match *t {
                            "INTEGER" => rusqlite::types::Value::Integer(v.parse().unwrap_or(0)),
                            "REAL" => rusqlite::types::Value::Real(v.parse().unwrap_or(0.0)),
                            _ => rusqlite::types::Value::Text(v.clone()),
                        }
                    }
                })
                .collect();
            stmt.execute(rusqlite::params_from_iter(values))?;
        }
    }
    tx.commit()?;
    SqlStore::seal(conn, vec![table])
}

fn load_corpus(path: &Path) -> Result<Vec<String>, String> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(format!("{} does not exist", path.display()));
    };
    files.retain(|p| {
        matches!(
            p.extension().and_then(|e| e.to_str()),
            Some("txt") | Some("md") | None
        )
    });
    let mut chunks = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| format!("{}: {e}", f.display()))?;
        chunks.extend(chunk_text(&text, CHUNK_TOKENS));
    }
    Ok(chunks)
}

fn encode_query(q: &str) -> String {
    url::form_urlencoded::byte_serialize(q.as_bytes()).collect()
}

impl KnowledgeTool {
    /// Build a tool for `source`. Locators are read here; failures are kept and
    /// reported on each call.
    pub fn new(source: KnowledgeSource, embedder: Option<Arc<dyn Embedder>>) -> Self {
        let backing = match source.kind {
            KnowledgeKind::Symbolic => Backing::Symbolic(load_table(Path::new(&source.locator))),
            KnowledgeKind::Textual => Backing::Textual {
                chunks: load_corpus(Path::new(&source.locator)),
                embedder,
                index: OnceLock::new(),
            },
            KnowledgeKind::Web => Backing::Web {
                client: reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(30))
                    .build()
                    .expect("http client builds"),
            },
        };
        Self { source, backing }
    }

    /// Textual sources built from in-memory chunks rather than files.
    pub fn from_chunks(description: impl Into<String>, chunks: Vec<String>, embedder: Option<Arc<dyn Embedder>>) -> Self {
        Self {
            source: KnowledgeSource {
                kind: KnowledgeKind::Textual,
                locator: "<memory>".into(),
                description: description.into(),
            },
            backing: Backing::Textual {
                chunks: Ok(chunks),
                embedder,
                index: OnceLock::new(),
            },
        }
    }

    pub fn source(&self) -> &KnowledgeSource {
        &self.source
    }

    /// Top-`k` chunk indices with scores, best first; ties by ascending index.
    pub fn retrieve(&self, question: &str, k: usize) -> Result<Vec<(usize, f64)>, String> {
        let Backing::Textual { chunks, embedder, index } = &self.backing else {
            return Err("retrieval needs a textual source".into());
        };
        let chunks = chunks.as_ref().map_err(|e| format!("SOURCE_UNAVAILABLE: {e}"))?;
        let embedder = embedder
            .as_ref()
            .ok_or("EMBEDDING_BACKEND_MISSING: textual source has no embedding provider")?;
        let index = index
            .get_or_init(|| {
                embedder.embed(chunks).map(|vectors| TextIndex {
                    chunks: chunks.clone(),
                    vectors,
                })
            })
            .as_ref()
            .map_err(|e| format!("SOURCE_UNAVAILABLE: embedding failed: {e}"))?;
        let q = embedder
            .embed(&[question.to_string()])
            .map_err(|e| format!("SOURCE_UNAVAILABLE: embedding failed: {e}"))?
            .pop()
            .unwrap_or_default();
        let mut scored: Vec<(usize, f64)> = index
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine(&q, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    fn chunk(&self, i: usize) -> &str {
        match &self.backing {
            Backing::Textual { index, .. } => index
                .get()
                .and_then(|r| r.as_ref().ok())
                .map(|ix| ix.chunks[i].as_str())
                .unwrap_or(""),
            _ => "",
        }
    }

    fn answer_textual(&self, question: &str, backend: &dyn ChatBackend) -> Result<String, ToolError> {
        let top = match self.retrieve(question, TOP_K) {
            Ok(t) => t,
            Err(msg) => return Ok(msg),
        };
        let context: Vec<String> = top
            .iter()
            .enumerate()
            .map(|(n, (i, _))| format!("[{}] {}", n + 1, self.chunk(*i)))
            .collect();
        let request = ChatRequest::new(
            format!(
                "You answer questions using a reference corpus: {}",
                self.source.description
            ),
            format!(
                "Context:\n{}\n\nQuestion: {question}\nAnswer using only the context above.",
                context.join("\n")
            ),
        );
        Ok(backend.complete(&request)?.text.trim().to_string())
    }

    fn answer_web(
        &self,
        client: &reqwest::blocking::Client,
        question: &str,
        backend: &dyn ChatBackend,
    ) -> Result<String, ToolError> {
        let url = self.source.locator.replace("{query}", &encode_query(question));
        let body: Value = match client.get(&url).send().and_then(|r| r.error_for_status()) {
            Ok(resp) => match resp.json() {
                Ok(v) => v,
                Err(e) => return Ok(format!("SOURCE_UNAVAILABLE: bad search response: {e}")),
            },
            Err(e) => return Ok(format!("SOURCE_UNAVAILABLE: {e}")),
        };
        let items = match &body {
            Value::Array(a) => a.clone(),
            Value::Object(o) => o
                .get("results")
                .or_else(|| o.get("items"))
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        let snippets: Vec<String> = items
            .iter()
            .filter_map(|item| {
                let title = item.get("title").and_then(Value::as_str).unwrap_or("");
                let snippet = item
                    .get("snippet")
                    .or_else(|| item.get("content"))
                    .and_then(Value::as_str)
                    .unwrap_or("");
                let text = format!("{title} {snippet}").trim().to_string();
                (!text.is_empty()).then_some(text)
            })
            .collect();
        if snippets.is_empty() {
            return Ok(NO_RESULTS.to_string());
        }
        let listing: Vec<String> = snippets
            .iter()
            .enumerate()
            .map(|(i, s)| format!("[{}] {s}", i + 1))
            .collect();
        let request = ChatRequest::new(
            "You summarize web search results to answer a question.",
            format!(
                "Search results:\n{}\n\nQuestion: {question}\nSummarize what the results say about the question.",
                listing.join("\n")
            ),
        );
        Ok(backend.complete(&request)?.text.trim().to_string())
    }
}

/// Query a knowledge source with a natural-language question.
pub fn run_knowledge_tool(
    tool: &KnowledgeTool,
    question: &str,
    backend: &dyn ChatBackend,
) -> Result<String, ToolError> {
    match &tool.backing {
        Backing::Symbolic(Err(e)) => Ok(format!("SOURCE_UNAVAILABLE: {e}")),
        Backing::Symbolic(Ok(store)) => run_sql_agent(
            store,
            &format!("questions using this table: {}", tool.source.description),
            "",
            question,
            backend,
        ),
        Backing::Textual { .. } => tool.answer_textual(question, backend),
        Backing::Web { client } => tool.answer_web(client, question, backend),
    }
}

impl ToolHandler for KnowledgeTool {
    fn invoke(&self, invocation: &ToolInvocation, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        run_knowledge_tool(self, &invocation.sub_question, ctx.backend)
    }
}
