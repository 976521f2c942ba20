//! The planner prompt and the text forms of steps that go into it.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::template::{Template, TemplateError};

pub const PLACEHOLDERS: [&str; 7] = [
    "video_filename",
    "input_question",
    "tool_names",
    "tool_descriptions",
    "agent_scratchpad",
    "ancestor_history",
    "expansion_prompt",
];

/// Stop sequence handed to the backend so the model never writes observations.
pub const STOP: &str = "Observation:";

/// Marks the end of the instructions. Everything after it is task-specific.
pub const BEGIN_MARKER: &str = "Begin!";

const PLANNER_TEMPLATE: &str = "\
You answer questions about a video by calling tools. The video is stored at {video_filename}.

You have access to the following tools:
{tool_descriptions}

Use the following format:

Question: the question to answer
Thought: what to do next and why
Action: the tool to call, exactly one of [{tool_names}]
Action Input: <video path>#<sub-question for the tool>
Observation: the result returned by the tool
... (Thought/Action/Action Input/Observation may repeat)
Thought: I now know the final answer
Final Answer: the answer to the question

Begin!

Question: {input_question}
{ancestor_history}{expansion_prompt}{agent_scratchpad}";

pub fn planner_template() -> &'static Template {
    static TEMPLATE: OnceLock<Template> = OnceLock::new();
    TEMPLATE.get_or_init(|| Template::parse(PLANNER_TEMPLATE).expect("planner template parses"))
}

/// Values for the seven placeholders. `None` means the caller forgot one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    pub video_filename: Option<String>,
    pub input_question: Option<String>,
    pub tool_names: Option<String>,
    pub tool_descriptions: Option<String>,
    pub agent_scratchpad: Option<String>,
    pub ancestor_history: Option<String>,
    pub expansion_prompt: Option<String>,
}

pub fn render_planner_prompt(ctx: &PromptContext) -> Result<String, TemplateError> {
    let mut values = BTreeMap::new();
    let fields = [
        ("video_filename", &ctx.video_filename),
        ("input_question", &ctx.input_question),
        ("tool_names", &ctx.tool_names),
        ("tool_descriptions", &ctx.tool_descriptions),
        ("agent_scratchpad", &ctx.agent_scratchpad),
        ("ancestor_history", &ctx.ancestor_history),
        ("expansion_prompt", &ctx.expansion_prompt),
    ];
    for (name, value) in fields {
        if let Some(v) = value {
            values.insert(name, v.clone());
        }
    }
    planner_template().render(&values)
}

/// Observations are kept on one line so a tool result cannot forge a label.
pub fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn format_step(thought: &str, action: &str, action_input: &str, observation: &str) -> String {
    format!(
        "Thought: {}\nAction: {}\nAction Input: {}\nObservation: {}\n",
        flatten(thought),
        action.trim(),
        action_input.trim(),
        flatten(observation)
    )
}

pub fn format_final(thought: &str, answer: &str) -> String {
    format!("Thought: {}\nFinal Answer: {}\n", flatten(thought), flatten(answer))
}

/// One earlier attempt from the node being expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriedAction {
    Call {
        thought: String,
        action: String,
        action_input: String,
    },
    Final {
        thought: String,
        answer: String,
    },
}

/// Lists the node's existing children so the model picks something new.
/// Empty when nothing was tried yet.
pub fn expansion_prompt(tried: &[TriedAction]) -> String {
    if tried.is_empty() {
        return String::new();
    }
    let mut out = String::from("Earlier attempts from this point already tried the following:\n");
    for t in tried {
        match t {
            TriedAction::Call {
                thought,
                action,
                action_input,
            } => out.push_str(&format!(
                "- Thought: {} | Action: {} | Action Input: {}\n",
                flatten(thought),
                action.trim(),
                action_input.trim()
            )),
            TriedAction::Final { thought, answer } => out.push_str(&format!(
                "- Thought: {} | Final Answer: {}\n",
                flatten(thought),
                flatten(answer)
            )),
        }
    }
    out.push_str("Choose a different action, or the same action with a different input.\n");
    out
}
