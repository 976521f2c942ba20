//! Parsing model output into ReAct steps, and checking whole transcripts.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReactOutput {
    Step {
        thought: String,
        action: String,
        action_input: String,
    },
    Final {
        thought: String,
        answer: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReactError {
    #[error("Invalid Format: missing `Action:` after `Thought:`, or a `Final Answer:`")]
    NoAction,
    #[error("Invalid Format: missing `Action Input:` after `Action:`")]
    MissingActionInput,
    #[error("Invalid Format: reply has both an action and a final answer")]
    Ambiguous,
    #[error("Invalid Format: the final answer is empty")]
    EmptyAnswer,
}

fn label_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    line.trim_start().strip_prefix(label).map(str::trim)
}

/// Parse one completion. The text may or may not start with `Thought:`; the
/// thought is everything before the action or final answer line.
pub fn parse_completion(text: &str) -> Result<ReactOutput, ReactError> {
    let lines: Vec<&str> = text.lines().collect();
    let final_at = lines.iter().position(|l| label_value(l, "Final Answer:").is_some());
    let action_at = lines
        .iter()
        .position(|l| label_value(l, "Action:").is_some());
    let thought_of = |end: usize| {
        let raw = lines[..end].join(" ");
        let raw = raw.trim();
        raw.strip_prefix("Thought:").unwrap_or(raw).trim().to_string()
    };
    match (action_at, final_at) {
        (Some(_), Some(_)) => Err(ReactError::Ambiguous),
        (None, None) => Err(ReactError::NoAction),
        (None, Some(f)) => {
            let mut answer = vec![label_value(lines[f], "Final Answer:").unwrap_or("")];
            answer.extend(lines[f + 1..].iter().map(|l| l.trim()));
            let answer = answer.join(" ").trim().to_string();
            if answer.is_empty() {
                return Err(ReactError::EmptyAnswer);
            }
            Ok(ReactOutput::Final {
                thought: thought_of(f),
                answer,
            })
        }
        (Some(a), None) => {
            let action = label_value(lines[a], "Action:").unwrap_or("").to_string();
            let input = lines[a + 1..]
                .iter()
                .find_map(|l| label_value(l, "Action Input:"))
                .ok_or(ReactError::MissingActionInput)?;
            Ok(ReactOutput::Step {
                thought: thought_of(a),
                action,
                action_input: input.to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TranscriptSummary {
    pub steps: usize,
    pub has_final_answer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TranscriptError {
    pub line: usize,
    pub message: String,
}

/// Check that `text` is a sequence of `Thought/Action/Action Input/Observation`
/// blocks, optionally closed by one `Thought/Final Answer` block, and nothing else.
pub fn validate_transcript(text: &str) -> Result<TranscriptSummary, TranscriptError> {
    const STEP: [&str; 4] = ["Thought:", "Action:", "Action Input:", "Observation:"];
    let mut summary = TranscriptSummary::default();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut i = 0;
    let err = |line: usize, message: String| TranscriptError { line: line + 1, message };
    while i < lines.len() {
        if summary.has_final_answer {
            return Err(err(i, "content after the final answer".into()));
        }
        if !lines[i].starts_with("Thought:") {
            return Err(err(i, format!("expected `Thought:`, got `{}`", lines[i])));
        }
        match lines.get(i + 1) {
            Some(l) if l.starts_with("Final Answer:") => {
                if l["Final Answer:".len()..].trim().is_empty() {
                    return Err(err(i + 1, "empty final answer".into()));
                }
                summary.has_final_answer = true;
                i += 2;
            }
            _ => {
                for (k, label) in STEP.iter().enumerate().skip(1) {
                    match lines.get(i + k) {
                        Some(l) if l.starts_with(label) => {}
                        Some(l) => return Err(err(i + k, format!("expected `{label}`, got `{l}`"))),
                        None => return Err(err(i + k, format!("expected `{label}`, got end of text"))),
                    }
                }
                summary.steps += 1;
                i += 4;
            }
        }
    }
    Ok(summary)
}
