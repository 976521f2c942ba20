//! SQL sub-agents.
//!
//! Each sub-task tool is a small agent: it sees in-context examples for its
//! question type, the memory schema and the sub-question, writes one SQL
//! query, and on success turns the result table into a one-sentence answer.
//! Failed queries are fed back for another try, up to [`SQL_ATTEMPTS`].

use serde::{Deserialize, Serialize};

use super::{ToolContext, ToolError, ToolHandler, ToolInvocation};
use crate::backend::{ChatBackend, ChatRequest, Role};
use crate::memory::SqlStore;

pub const SQL_ATTEMPTS: usize = 3;
pub const SUBTASK_FAILED_PREFIX: &str = "SUBTASK_FAILED:";
const RESULT_ROWS_SHOWN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    When,
    Why,
    What,
    How,
    Count,
    Other,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 6] = [
        SubtaskKind::When,
        SubtaskKind::Why,
        SubtaskKind::What,
        SubtaskKind::How,
        SubtaskKind::Count,
        SubtaskKind::Other,
    ];

    pub fn default_tool_name(self) -> &'static str {
        match self {
            SubtaskKind::When => "VideoWhen",
            SubtaskKind::Why => "VideoWhy",
            SubtaskKind::What => "VideoWhat",
            SubtaskKind::How => "VideoHow",
            SubtaskKind::Count => "VideoCount",
            SubtaskKind::Other => "VideoOther",
        }
    }

    pub fn default_description(self) -> &'static str {
        match self {
            SubtaskKind::When => "Use for temporal questions about when something happens in the video, e.g. when the dog walks past the sofa. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#When does the dog walk past the sofa?",
            SubtaskKind::Why => "Use for causal questions about why something happens in the video. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#Why did the lady shake the toy?",
            SubtaskKind::What => "Use to describe the content of the video or retrieve specific information shown in it. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#What's in the video?",
            SubtaskKind::How => "Use for questions about the manner, means or quality of something in the video. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#How does the baby keep himself safe?",
            SubtaskKind::Count => "Use to count objects, people or events in the video. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#How many people are in the room?",
            SubtaskKind::Other => "Use for video questions that fit none of the other tools, e.g. comparisons between objects. Input is the video path and the question joined by '#', for example ./videos/xxx.mp4#Who slides farther at the end?",
        }
    }

    /// In-context examples, one file per kind under `assets/subtask/`.
    pub fn examples(self) -> &'static str {
        match self {
            SubtaskKind::When => include_str!("../../assets/subtask/when.txt"),
            SubtaskKind::Why => include_str!("../../assets/subtask/why.txt"),
            SubtaskKind::What => include_str!("../../assets/subtask/what.txt"),
            SubtaskKind::How => include_str!("../../assets/subtask/how.txt"),
            SubtaskKind::Count => include_str!("../../assets/subtask/count.txt"),
            SubtaskKind::Other => include_str!("../../assets/subtask/other.txt"),
        }
    }

    fn focus(self) -> &'static str {
        match self {
            SubtaskKind::When => "temporal questions (when something happens)",
            SubtaskKind::Why => "causal questions (why something happens)",
            SubtaskKind::What => "descriptive questions (what is shown or said)",
            SubtaskKind::How => "questions about manner or means (how something is done)",
            SubtaskKind::Count => "counting questions (how many)",
            SubtaskKind::Other => "questions not covered by the other question types",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| format!("{k:?}").eq_ignore_ascii_case(s.trim()))
    }
}

/// Pull the query out of a reply: a fenced block, an `SQL:` line, or the whole text.
pub fn extract_sql(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim().to_string();
    }
    for line in reply.lines() {
        let t = line.trim();
        for label in ["SQL:", "SQLQuery:", "Query:"] {
            if let Some(rest) = t.strip_prefix(label) {
                return rest.trim().to_string();
            }
        }
    }
    reply.trim().to_string()
}

fn strip_answer_label(reply: &str) -> String {
    let t = reply.trim();
    t.strip_prefix("Answer:").map(str::trim).unwrap_or(t).to_string()
}

/// The shared query-then-answer loop. `focus` phrases what the agent specializes in.
pub fn run_sql_agent(
    store: &SqlStore,
    focus: &str,
    examples: &str,
    question: &str,
    backend: &dyn ChatBackend,
) -> Result<String, ToolError> {
    let system = format!(
        "You answer {focus} about a video by querying a SQLite database that describes it. \
         Write exactly one read-only SQL query per reply, on a line starting with `SQL:`."
    );
    let user = format!(
        "Examples:\n{}\n\nDatabase schema:\n{}\nQuestion: {question}\nSQL:",
        examples.trim_end(),
        store.describe()
    );
    let mut request = ChatRequest::new(system, user);
    let mut last_error = String::new();
    for _ in 0..SQL_ATTEMPTS {
        let reply = backend.complete(&request)?.text;
        let sql = extract_sql(&reply);
        request.push_turn(Role::Assistant, reply);
        match store.execute(&sql) {
            Ok(table) => {
                request.push_turn(
                    Role::User,
                    format!(
                        "Result:\n{}\nAnswer the question in one sentence using only this result.\nAnswer:",
                        table.render(RESULT_ROWS_SHOWN)
                    ),
                );
                let answer = backend.complete(&request)?.text;
                return Ok(strip_answer_label(&answer));
            }
            Err(err) => {
                last_error = err.to_string();
                request.push_turn(
                    Role::User,
                    format!("The query failed: {err}\nWrite a corrected query.\nSQL:"),
                );
            }
        }
    }
    tracing::debug!(error = %last_error, "sql agent gave up");
    Ok(format!("{SUBTASK_FAILED_PREFIX} sql_error_budget_exhausted"))
}

pub fn run_subtask_tool(
    kind: SubtaskKind,
    ctx: &ToolContext<'_>,
    sub_question: &str,
) -> Result<String, ToolError> {
    run_sql_agent(
        ctx.memory.store(),
        kind.focus(),
        kind.examples(),
        sub_question,
        ctx.backend,
    )
}

#[derive(Debug, Clone, Copy)]
pub struct SubtaskTool {
    kind: SubtaskKind,
}

impl SubtaskTool {
    pub fn new(kind: SubtaskKind) -> Self {
        Self { kind }
    }
}

impl ToolHandler for SubtaskTool {
    fn invoke(&self, invocation: &ToolInvocation, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        run_subtask_tool(self.kind, ctx, &invocation.sub_question)
    }
}
