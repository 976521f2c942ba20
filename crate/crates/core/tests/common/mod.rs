//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::Value;
use vidagent::backend::{BackendError, ChatRequest, FnBackend};
use vidagent::memory::{read_records, MemoryTypeSelection, TaskMemory, DEFAULT_DEDUP_THRESHOLD};

pub const MEMORY_FIXTURES: [&str; 3] = ["park", "street", "living_room"];

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn memory_fixture(name: &str) -> PathBuf {
    fixture(&format!("memories/{name}.jsonl"))
}

pub fn load_memory(name: &str) -> TaskMemory {
    let (records, rejected) = read_records(&memory_fixture(name)).unwrap();
    assert!(rejected.is_empty(), "{rejected:?}");
    TaskMemory::ingest(name, records, MemoryTypeSelection::BOTH, DEFAULT_DEDUP_THRESHOLD)
        .unwrap()
        .memory
}

fn raw_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Distinct instance ids per category, straight from the JSONL file.
pub fn tally_instances(path: &Path, category: &str) -> usize {
    raw_lines(path)
        .iter()
        .filter(|v| v["kind"] == "detection" && v["category"] == category)
        .map(|v| v["instance_id"].as_i64().unwrap())
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn categories(path: &Path) -> BTreeSet<String> {
    raw_lines(path)
        .iter()
        .filter(|v| v["kind"] == "detection")
        .map(|v| v["category"].as_str().unwrap().to_string())
        .collect()
}

pub fn distinct_frames(path: &Path) -> usize {
    raw_lines(path)
        .iter()
        .filter(|v| v["kind"] != "detection" && v["kind"] != "action")
        .map(|v| v["frame_index"].as_i64().unwrap())
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn detection_rows(path: &Path) -> usize {
    raw_lines(path).iter().filter(|v| v["kind"] == "detection").count()
}

/// A sub-agent stand-in for counting: writes a COUNT query for `category`,
/// then reads the number back out of the result table it is shown.
pub fn counting_backend(category: &'static str) -> FnBackend<impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync> {
    FnBackend::new(move |req: &ChatRequest| {
        let last = req.last_user_text();
        if let Some(result) = last.strip_prefix("Result:\n") {
            let n = result.lines().nth(1).unwrap_or("").trim().to_string();
            Ok(format!("There are {n} {category}s."))
        } else {
            Ok(format!(
                "SQL: SELECT COUNT(DISTINCT instance_id) AS n FROM instances WHERE category = '{category}'"
            ))
        }
    })
}

/// Pulls the integer out of "There are N xs."
pub fn count_from_answer(answer: &str) -> Option<usize> {
    answer.split_whitespace().find_map(|w| w.parse().ok())
}

pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

/// Minimal HTTP/1.1 server: one response per connection, then close.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<StubRequest>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start<F>(respond: F) -> Self
    where
        F: Fn(&StubRequest) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (reqs, stop2) = (requests.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                if let Some(req) = read_request(&stream) {
                    let (status, body) = respond(&req);
                    reqs.lock().unwrap().push(req);
                    let mut s = stream;
                    let _ = write!(
                        s,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                }
            }
        });
        Self {
            url,
            requests,
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.url.trim_start_matches("http://"));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn read_request(stream: &TcpStream) -> Option<StubRequest> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(StubRequest {
        method,
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

use vidagent::toolkit::{ToolContext, ToolError, ToolInvocation, ToolKind, ToolRegistry, ToolSpec};

/// Registry of closure tools `T0..T{n-1}` that echo their sub-question.
pub fn echo_registry(n: usize) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    for i in 0..n {
        let name = format!("T{i}");
        let tag = name.clone();
        r.register(
            ToolSpec { name, description: format!("Echo tool {i}. Input: <video>#<question>"), kind: ToolKind::Knowledge },
            Arc::new(move |inv: &ToolInvocation, _: &ToolContext<'_>| -> Result<String, ToolError> {
                Ok(format!("{tag} saw {}", inv.sub_question))
            }),
        )
        .unwrap();
    }
    r
}

pub fn empty_memory() -> TaskMemory {
    TaskMemory::ingest("empty", Vec::new(), MemoryTypeSelection::BOTH, DEFAULT_DEDUP_THRESHOLD)
        .unwrap()
        .memory
}

use vidagent::backend::{Role, Turn};
use vidagent::planner::BEGIN_MARKER;

/// Scripted model for the park counting session, as a pure function of the
/// request. Planner prompts get ReAct steps, sub-agent prompts get a person
/// COUNT query and then a sentence, memory-type prompts get `both`.
pub fn park_session_reply(req: &ChatRequest) -> String {
    let last = req.last_user_text();
    if req.stop_sequences.iter().any(|s| s == "Observation:") {
        let tail = &last[last.find(BEGIN_MARKER).unwrap_or(0)..];
        let steps = tail.lines().filter(|l| l.starts_with("Action: ")).count();
        let tried = tail.lines().filter(|l| l.starts_with("- Thought:")).count();
        if steps == 0 {
            let input = match tried {
                0 => "How many people are there?",
                1 => "How many persons appear in the video?",
                _ => "Count every person in the park.",
            };
            return format!("Thought: I need the number of people.\nAction: VideoCount\nAction Input: park.mp4#{input}");
        }
        let n = tail
            .lines()
            .filter_map(|l| l.strip_prefix("Observation: "))
            .find_map(count_from_answer)
            .map(|n| n.to_string())
            .unwrap_or_else(|| "unknown".into());
        return match tried {
            0 => format!("Thought: I now know the final answer.\nFinal Answer: {n}"),
            _ => format!("Thought: The count answers it.\nFinal Answer: There are {n} people in the park."),
        };
    }
    if last.contains("construction") {
        return "Action: both construction".into();
    }
    if let Some(result) = last.strip_prefix("Result:\n") {
        let n = result.lines().nth(1).unwrap_or("").trim().to_string();
        return format!("There are {n} persons.");
    }
    "SQL: SELECT COUNT(DISTINCT instance_id) AS n FROM instances WHERE category = 'person'".into()
}

/// Rebuild the request a `/chat/completions` body was made from.
pub fn request_from_wire(body: &str) -> ChatRequest {
    let v: Value = serde_json::from_str(body).unwrap();
    let mut system = String::new();
    let mut turns = Vec::new();
    for m in v["messages"].as_array().unwrap() {
        let text = m["content"].as_str().unwrap().to_string();
        match m["role"].as_str().unwrap() {
            "system" => system = text,
            "assistant" => turns.push(Turn { role: Role::Assistant, text }),
            _ => turns.push(Turn { role: Role::User, text }),
        }
    }
    ChatRequest {
        system_prompt: system,
        turns,
        temperature: v["temperature"].as_f64().unwrap(),
        stop_sequences: v["stop"]
            .as_array()
            .map(|a| a.iter().map(|s| s.as_str().unwrap().to_string()).collect())
            .unwrap_or_default(),
        max_tokens: v["max_tokens"].as_u64().unwrap() as u32,
    }
}

pub fn wire_completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 5},
    })
    .to_string()
}

/// A stub chat endpoint that answers with `reply`.
pub fn chat_server(reply: fn(&ChatRequest) -> String) -> StubServer {
    StubServer::start(move |r| (200, wire_completion(&reply(&request_from_wire(&r.body)))))
}

/// Invariants of a clip partition over `captions` (frame, caption), which
/// must be sorted by frame. Returns the first violation found.
pub fn check_clip_partition(captions: &[(i64, String)], clips: &[vidagent::memory::Clip], threshold: f64) -> Result<(), String> {
    use vidagent::memory::jaccard;
    if captions.is_empty() {
        return if clips.is_empty() { Ok(()) } else { Err("clips from no frames".into()) };
    }
    // coverage and disjointness: consecutive clips tile the frame sequence
    let mut i = 0;
    for (k, clip) in clips.iter().enumerate() {
        let start = captions.get(i).ok_or(format!("clip {k} starts past the end"))?;
        if start.0 != clip.start_frame {
            return Err(format!("clip {k} starts at {} but next frame is {}", clip.start_frame, start.0));
        }
        if clip.caption != start.1 {
            return Err(format!("clip {k} caption is not its first frame's caption"));
        }
        let mut j = i;
        while j + 1 < captions.len() && captions[j + 1].0 <= clip.end_frame {
            j += 1;
            if jaccard(&captions[j].1, &clip.caption) < threshold {
                return Err(format!("frame {} joined clip {k} below threshold", captions[j].0));
            }
        }
        if captions[j].0 != clip.end_frame {
            return Err(format!("clip {k} ends at {} which is not a frame", clip.end_frame));
        }
        if let Some(next) = captions.get(j + 1) {
            if jaccard(&next.1, &clip.caption) >= threshold {
                return Err(format!("frame {} should have joined clip {k}", next.0));
            }
        }
        i = j + 1;
    }
    if i != captions.len() {
        return Err(format!("{} frames left uncovered", captions.len() - i));
    }
    Ok(())
}
