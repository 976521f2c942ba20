//! `Action` / `Action Input` command grammar.
//!
//! A command names a registered tool and passes `<video_ref>#<sub_question>`.
//! The input is split at the first `#`, so questions may contain `#` but video
//! references may not.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ToolKind, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool_name: String,
    pub video_ref: String,
    pub sub_question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvocationError {
    #[error("`{0}` is not a valid tool, try one of the listed tools")]
    UnknownTool(String),
    #[error("input for `{0}` must be `<video>#<question>`, no `#` separator found")]
    MissingSeparator(String),
    #[error("input for `{0}` has an empty question after `#`")]
    EmptyQuestion(String),
}

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> &'a str {
    let line = line.trim();
    for label in labels {
        if let Some(rest) = line.strip_prefix(label) {
            return rest.trim();
        }
    }
    line
}

/// Resolve an action line and its input line against `registry`.
///
/// Both lines may carry their `Action:` / `Action Input:` labels or be bare
/// values. Tool names match case-sensitively.
pub fn parse_invocation(
    action_line: &str,
    input_line: &str,
    registry: &ToolRegistry,
) -> Result<ToolInvocation, InvocationError> {
    let name = strip_label(action_line, &["Action:"])
        .trim_end_matches('.')
        .trim();
    let tool = registry
        .get(name)
        .ok_or_else(|| InvocationError::UnknownTool(name.to_string()))?;
    let input = strip_label(input_line, &["Action Input:", "Input:"]);
    let (video_ref, sub_question) = match input.split_once('#') {
        Some((v, q)) => (v.trim(), q.trim()),
        None if tool.spec.kind == ToolKind::Utility => (input, ""),
        None => return Err(InvocationError::MissingSeparator(name.to_string())),
    };
    if sub_question.is_empty() && tool.spec.kind != ToolKind::Utility {
        return Err(InvocationError::EmptyQuestion(name.to_string()));
    }
    Ok(ToolInvocation {
        tool_name: name.to_string(),
        video_ref: video_ref.to_string(),
        sub_question: sub_question.to_string(),
    })
}

/// Inverse of [`parse_invocation`]: the two lines a model would emit.
pub fn format_invocation(inv: &ToolInvocation) -> (String, String) {
    (
        format!("Action: {}", inv.tool_name),
        format!("Action Input: {}#{}", inv.video_ref, inv.sub_question),
    )
}
