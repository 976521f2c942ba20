//! Reduce the planner's candidate answers to one.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::planner::Answer;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no answer could be mapped to a choice")]
    NoVotes,
    #[error("no answers to aggregate")]
    NoAnswers,
    #[error("choice list is empty")]
    NoChoices,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    Vote,
    Summarize,
}

impl FromStr for AggregateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vote" => Ok(Self::Vote),
            "summarize" => Ok(Self::Summarize),
            other => Err(format!("unknown aggregation `{other}` (expected vote or summarize)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    /// Option text, when known.
    pub text: Option<String>,
}

impl Choice {
    pub fn label(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: None,
        }
    }
}

/// Parse `A,B,C` or `A=a dog,B=a cat`.
pub fn parse_choices(spec: &str) -> Vec<Choice> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match item.split_once('=') {
            Some((l, t)) => Choice {
                label: l.trim().to_string(),
                text: Some(t.trim().to_string()).filter(|t| !t.is_empty()),
            },
            None => Choice::label(item),
        })
        .collect()
}

/// Which choice an answer refers to, if any.
///
/// In order: the first word that is a label with matching case, the whole
/// answer being a label in any case, then the first choice whose text occurs
/// in the answer. Lowercase labels inside prose are skipped so the article
/// "a" does not count as a vote for `A`.
pub fn map_to_choice<'c>(answer: &str, choices: &'c [Choice]) -> Option<&'c Choice> {
    let words: Vec<&str> = answer
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if let Some(c) = words
        .iter()
        .find_map(|w| choices.iter().find(|c| c.label == *w))
    {
        return Some(c);
    }
    if words.len() == 1 {
        if let Some(c) = choices.iter().find(|c| c.label.eq_ignore_ascii_case(words[0])) {
            return Some(c);
        }
    }
    let lower = answer.to_lowercase();
    choices.iter().find(|c| {
        c.text
            .as_deref()
            .is_some_and(|t| !t.is_empty() && lower.contains(&t.to_lowercase()))
    })
}

#[derive(Debug, Default)]
struct Tally {
    votes: usize,
    reward: f64,
    first_iteration: usize,
}

/// Majority label. Ties go to the larger summed path reward, then to the
/// label whose first vote came earliest.
pub fn vote(answers: &[Answer], choices: &[Choice]) -> Result<String, AggregateError> {
    if choices.is_empty() {
        return Err(AggregateError::NoChoices);
    }
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    for a in answers {
        let Some(choice) = map_to_choice(&a.text, choices) else {
            continue;
        };
        let t = tallies.entry(choice.label.as_str()).or_insert(Tally {
            first_iteration: usize::MAX,
            ..Default::default()
        });
        t.votes += 1;
        t.reward += a.path_reward;
        t.first_iteration = t.first_iteration.min(a.iteration);
    }
    tallies
        .into_iter()
        .max_by(|(_, x), (_, y)| {
            x.votes
                .cmp(&y.votes)
                .then(x.reward.total_cmp(&y.reward))
                .then(y.first_iteration.cmp(&x.first_iteration))
        })
        .map(|(label, _)| label.to_string())
        .ok_or(AggregateError::NoVotes)
}

const SUMMARY_SYSTEM: &str = "You combine several candidate answers to a question about a video into one answer.";

fn path_length(answer: &Answer) -> usize {
    answer.path.lines().filter(|l| l.starts_with("Thought:")).count()
}

/// Single answers pass through untouched; otherwise one completion merges them.
pub fn summarize(answers: &[Answer], question: &str, backend: &dyn ChatBackend) -> Result<String, AggregateError> {
    match answers {
        [] => Err(AggregateError::NoAnswers),
        [only] => Ok(only.text.clone()),
        _ => {
            let listing: Vec<String> = answers
                .iter()
                .enumerate()
                .map(|(i, a)| format!("Answer {} (reached in {} steps): {}", i + 1, path_length(a), a.text))
                .collect();
            let request = ChatRequest::new(
                SUMMARY_SYSTEM,
                format!(
                    "Question: {question}\n\nCandidate answers:\n{}\n\nWrite one informative answer to the question that is consistent with the candidates.",
                    listing.join("\n")
                ),
            );
            Ok(backend.complete(&request)?.text)
        }
    }
}

/// Vote when choices are given, falling back to a summary when nothing maps.
pub fn aggregate(
    mode: AggregateMode,
    answers: &[Answer],
    choices: &[Choice],
    question: &str,
    backend: &dyn ChatBackend,
) -> Result<String, AggregateError> {
    if answers.is_empty() {
        return Err(AggregateError::NoAnswers);
    }
    match mode {
        AggregateMode::Vote => match vote(answers, choices) {
            Err(AggregateError::NoVotes | AggregateError::NoChoices) => {
                tracing::info!("no votes; summarizing instead");
                summarize(answers, question, backend)
            }
            other => other,
        },
        AggregateMode::Summarize => summarize(answers, question, backend),
    }
}
