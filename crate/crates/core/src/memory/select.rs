//! Ask the model which memory type a question needs.

use tracing::warn;

use super::MemoryTypeSelection;
use crate::backend::{BackendError, ChatBackend, ChatRequest, Role};

/// Extra attempts after the first malformed reply.
pub const SELECTION_RETRIES: usize = 2;

const SYSTEM: &str = "You plan how to answer questions about a video. Before answering, \
a symbolic memory of the video is built. Decide which memory type the question needs.";

const SPACE_DESCRIPTION: &str = "space-dominant: one row per tracked object instance with its \
unique ID, semantic category, trajectory and segmentation, appearance description and action \
label. Suited to questions about specific targets (people, animals, objects) and their spatial \
relations.";

const TIME_DESCRIPTION: &str = "time-dominant: one row per sampled frame with its timestamp, \
speech transcript (ASR), on-screen text (OCR) and caption, plus clip-level captions merged from \
similar consecutive frames. Suited to questions about what happens over time.";

fn prompt(question: &str) -> String {
    format!(
        "Memory types:\n- {SPACE_DESCRIPTION}\n- {TIME_DESCRIPTION}\n- both: build both memories.\n\n\
         Question: {question}\n\n\
         Reply with exactly one line of the form\n\
         Action: <space-dominant|time-dominant|both> construction"
    )
}

/// Parse `Action: <type> construction` anywhere in a reply.
pub fn parse_selection(reply: &str) -> Option<MemoryTypeSelection> {
    reply.lines().find_map(|line| {
        let rest = line.trim().strip_prefix("Action:")?;
        let word = rest
            .trim()
            .trim_end_matches(|c: char| c == '.' || c == '…' || c.is_whitespace())
            .to_ascii_lowercase();
        let word = word.strip_suffix("construction").unwrap_or(&word).trim();
        match word {
            "space-dominant" => Some(MemoryTypeSelection::SPACE),
            "time-dominant" => Some(MemoryTypeSelection::TIME),
            "both" => Some(MemoryTypeSelection::BOTH),
            _ => None,
        }
    })
}

/// Falls back to building both memories when no attempt parses.
pub fn select_memory_type(
    question: &str,
    backend: &dyn ChatBackend,
) -> Result<MemoryTypeSelection, BackendError> {
    if question.trim().is_empty() {
        return Err(BackendError::InvalidRequest("empty question".into()));
    }
    let mut request = ChatRequest::new(SYSTEM, prompt(question));
    for attempt in 0..=SELECTION_RETRIES {
        let reply = backend.complete(&request)?.text;
        if let Some(sel) = parse_selection(&reply) {
            return Ok(sel);
        }
        warn!(attempt, reply = %reply, "unparseable memory-type reply");
        request.push_turn(Role::Assistant, reply);
        request.push_turn(
            Role::User,
            "Your reply did not follow the format. Answer with one line: \
             Action: <space-dominant|time-dominant|both> construction",
        );
    }
    Ok(MemoryTypeSelection::BOTH)
}
