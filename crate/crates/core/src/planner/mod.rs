//! Reward-guided tree search over ReAct steps.
//!
//! Each of the N iterations selects an expandable node, asks the model for a
//! child that differs from the node's existing children, runs the chain from
//! that child until a final answer or an error, and propagates the outcome's
//! reward back to the root.

mod prompt;
mod react;
mod select;
mod trace;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::backend::{BackendError, ChatBackend, ChatRequest, MeteredBackend, UsageSnapshot};
use crate::memory::TaskMemory;
use crate::template::TemplateError;
use crate::toolkit::{parse_invocation, ToolContext, ToolError, ToolRegistry};

pub use prompt::{
    expansion_prompt, flatten, format_final, format_step, planner_template, render_planner_prompt, PromptContext,
    TriedAction, BEGIN_MARKER, PLACEHOLDERS, STOP,
};
pub use react::{parse_completion, validate_transcript, ReactError, ReactOutput, TranscriptError, TranscriptSummary};
pub use select::{expandable, select_node, selection_distribution, softmax, Policy};
pub use trace::{IterationRecord, Trace, TraceConfig};
pub use tree::{decay, NodeContent, NodeId, Outcome, PlannerTree, RewardConfig, TreeNode};

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_PARSE_RETRIES: usize = 2;
pub const MAX_DEPTH_REACHED: &str = "maximum depth reached";

const SYSTEM_PROMPT: &str = "You are a planner that answers questions about videos by calling tools.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_depth: usize,
    pub max_children: usize,
    pub parse_retries: usize,
}

impl Limits {
    /// Defaults, with one child per registered tool.
    pub fn for_registry(registry: &ToolRegistry) -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            max_children: registry.len().max(1),
            parse_retries: DEFAULT_PARSE_RETRIES,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 || self.max_children == 0 {
            return Err("max_depth and max_children must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub reward: RewardConfig,
    pub limits: Limits,
    pub policy: Policy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub leaf_id: NodeId,
    /// ReAct transcript from the root to the leaf.
    pub path: String,
    /// Sum of rewards on the path below the root, taken at the end of the run.
    pub path_reward: f64,
    pub iteration: usize,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Everything a run needs besides its configuration.
#[derive(Clone, Copy)]
pub struct Session<'a> {
    pub question: &'a str,
    pub video_ref: &'a str,
    pub memory: &'a TaskMemory,
    pub registry: &'a ToolRegistry,
    pub backend: &'a dyn ChatBackend,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Non-failure answers in iteration order.
    pub answers: Vec<Answer>,
    pub tree: PlannerTree,
    pub iterations: Vec<IterationRecord>,
    /// True when the search stopped early because no node was expandable.
    pub exhausted: bool,
    pub usage: UsageSnapshot,
    pub config: TraceConfig,
    pub question: String,
    pub video_ref: String,
}

impl RunOutput {
    pub fn trace(&self) -> Trace {
        Trace::from_run(self)
    }
}

enum Generated {
    Step {
        thought: String,
        action: String,
        action_input: String,
        observation: Result<String, String>,
    },
    Final {
        thought: String,
        answer: String,
    },
    Failed(String),
}

struct Planner<'s, 'b> {
    session: Session<'s>,
    backend: &'b MeteredBackend<&'s dyn ChatBackend>,
    limits: Limits,
    tool_names: String,
    tool_descriptions: String,
}

impl Planner<'_, '_> {
    fn prompt(&self, history: &str, expansion: &str, scratchpad: &str) -> Result<ChatRequest, PlannerError> {
        let text = render_planner_prompt(&PromptContext {
            video_filename: Some(self.session.video_ref.to_string()),
            input_question: Some(self.session.question.to_string()),
            tool_names: Some(self.tool_names.clone()),
            tool_descriptions: Some(self.tool_descriptions.clone()),
            agent_scratchpad: Some(scratchpad.to_string()),
            ancestor_history: Some(history.to_string()),
            expansion_prompt: Some(expansion.to_string()),
        })?;
        Ok(ChatRequest::new(SYSTEM_PROMPT, text).with_stop(STOP))
    }

    /// Ask for one step, retrying malformed or repeated ones with the error
    /// shown as an observation.
    fn generate(
        &self,
        history: &str,
        expansion: &str,
        scratchpad: &str,
        taken: &[(String, String)],
    ) -> Result<Generated, PlannerError> {
        let mut scratch = scratchpad.to_string();
        let mut last_error = String::new();
        for attempt in 0..=self.limits.parse_retries {
            let request = self.prompt(history, expansion, &scratch)?;
            let reply = self.backend.complete(&request)?.text;
            let checked = match parse_completion(&reply) {
                Ok(out) => self.check(out, taken)?,
                Err(e) => Err(e.to_string()),
            };
            match checked {
                Ok(g) => return Ok(g),
                Err(error) => {
                    debug!(attempt, %error, "rejected planner step");
                    let reply = reply.trim_end();
                    if !reply.is_empty() {
                        scratch.push_str(reply);
                        scratch.push('\n');
                    }
                    scratch.push_str(&format!("Observation: {error}\n"));
                    last_error = error;
                }
            }
        }
        Ok(Generated::Failed(last_error))
    }

    /// Outer error ends the run; inner error is fed back to the model.
    fn check(&self, out: ReactOutput, taken: &[(String, String)]) -> Result<Result<Generated, String>, PlannerError> {
        Ok(match out {
            ReactOutput::Final { thought, answer } => {
                if taken.iter().any(|(a, i)| a == "Final Answer" && *i == answer) {
                    return Ok(Err(format!(
                        "Final Answer `{answer}` was already given from this point; try something different"
                    )));
                }
                Ok(Generated::Final { thought, answer })
            }
            ReactOutput::Step {
                thought,
                action,
                action_input,
            } => {
                let invocation = match parse_invocation(&action, &action_input, self.session.registry) {
                    Ok(inv) => inv,
                    Err(e) => return Ok(Err(e.to_string())),
                };
                let key = (invocation.tool_name.clone(), action_input.trim().to_string());
                if taken.contains(&key) {
                    return Ok(Err(format!(
                        "Action `{}` with input `{}` was already tried from this point; choose a different one",
                        key.0, key.1
                    )));
                }
                let ctx = ToolContext {
                    memory: self.session.memory,
                    backend: self.backend,
                };
                let observation = match self.session.registry.dispatch(&invocation, &ctx) {
                    Ok(o) => Ok(o),
                    Err(ToolError::Fatal(msg)) => Err(msg),
                    Err(ToolError::Backend(e)) => return Err(e.into()),
                };
                Ok(Generated::Step {
                    thought,
                    action: invocation.tool_name,
                    action_input: action_input.trim().to_string(),
                    observation,
                })
            }
        })
    }

    /// Add the generated node under `parent`.
    fn attach(&self, tree: &mut PlannerTree, parent: NodeId, iteration: usize, g: Generated) -> NodeId {
        let depth = tree.node(parent).depth + 1;
        match g {
            Generated::Failed(error) => tree.add_child(
                parent,
                iteration,
                NodeContent {
                    observation: Some(error.clone()),
                    error: Some(error),
                    ..Default::default()
                },
                Outcome::Failure,
            ),
            Generated::Final { thought, answer } => tree.add_child(
                parent,
                iteration,
                NodeContent {
                    thought: Some(thought),
                    final_answer: Some(answer),
                    ..Default::default()
                },
                Outcome::Nonfailure,
            ),
            Generated::Step {
                thought,
                action,
                action_input,
                observation,
            } => {
                let (observation, error, outcome) = match observation {
                    Ok(o) if depth >= self.limits.max_depth => (o, Some(MAX_DEPTH_REACHED.to_string()), Outcome::Failure),
                    Ok(o) => (o, None, Outcome::Open),
                    Err(e) => (format!("Tool execution error: {e}"), Some(e), Outcome::Failure),
                };
                tree.add_child(
                    parent,
                    iteration,
                    NodeContent {
                        thought: Some(thought),
                        action: Some(action),
                        action_input: Some(action_input),
                        observation: Some(observation),
                        error,
                        ..Default::default()
                    },
                    outcome,
                )
            }
        }
    }

    /// Expansion plus chain execution from `selected`. Returns the leaf.
    fn iterate(&self, tree: &mut PlannerTree, selected: NodeId, iteration: usize) -> Result<NodeId, PlannerError> {
        let history = tree.transcript(selected);
        let parent = tree.node(selected);
        let taken: Vec<(String, String)> = parent
            .children
            .iter()
            .filter_map(|c| tree.node(*c).action_key())
            .collect();
        let tried: Vec<TriedAction> = parent.children.iter().filter_map(|c| tree.node(*c).tried()).collect();
        let expansion = expansion_prompt(&tried);
        let g = self.generate(&history, &expansion, "", &taken)?;
        let start = self.attach(tree, selected, iteration, g);
        let mut current = start;
        let mut scratchpad = tree.node(start).render();
        while !tree.node(current).is_leaf() {
            let g = self.generate(&history, "", &scratchpad, &[])?;
            current = self.attach(tree, current, iteration, g);
            scratchpad.push_str(&tree.node(current).render());
        }
        Ok(current)
    }
}

/// Run the search for `config.reward.n` iterations.
pub fn run(session: Session<'_>, config: &SearchConfig) -> Result<RunOutput, PlannerError> {
    config.reward.validate().map_err(PlannerError::Config)?;
    config.limits.validate().map_err(PlannerError::Config)?;
    if session.registry.is_empty() {
        return Err(PlannerError::EmptyRegistry);
    }
    let metered = MeteredBackend::new(session.backend);
    let planner = Planner {
        session,
        backend: &metered,
        limits: config.limits,
        tool_names: session.registry.names().join(", "),
        tool_descriptions: session.registry.descriptions(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tree = PlannerTree::new(session.question);
    let mut iterations = Vec::new();
    let mut leaves = Vec::new();
    let mut exhausted = false;
    for iteration in 1..=config.reward.n {
        let calls_before = metered.usage().calls;
        let selected = if iteration == 1 {
            Some(PlannerTree::ROOT)
        } else {
            select_node(&tree, config.policy, &config.limits, &mut rng)
        };
        let Some(selected) = selected else {
            info!(iteration, "no expandable node left");
            exhausted = true;
            iterations.push(IterationRecord {
                iteration,
                selected: None,
                leaf: None,
                outcome: None,
                calls: 0,
            });
            break;
        };
        let leaf = planner.iterate(&mut tree, selected, iteration)?;
        tree.backpropagate(leaf, &config.reward, iteration);
        let outcome = tree.node(leaf).outcome;
        debug!(iteration, selected, leaf, ?outcome, "iteration done");
        iterations.push(IterationRecord {
            iteration,
            selected: Some(selected),
            leaf: Some(leaf),
            outcome: Some(outcome),
            calls: metered.usage().calls - calls_before,
        });
        if outcome == Outcome::Nonfailure {
            leaves.push((leaf, iteration));
        }
    }
    let answers = leaves
        .into_iter()
        .map(|(leaf, iteration)| Answer {
            text: tree.node(leaf).final_answer.clone().unwrap_or_default(),
            leaf_id: leaf,
            path: tree.transcript(leaf),
            path_reward: tree.path(leaf).iter().skip(1).map(|n| tree.node(*n).reward).sum(),
            iteration,
        })
        .collect();
    Ok(RunOutput {
        answers,
        iterations,
        exhausted,
        usage: metered.usage(),
        config: TraceConfig::new(&config.reward, &config.limits, config.policy, config.seed),
        question: session.question.to_string(),
        video_ref: session.video_ref.to_string(),
        tree,
    })
}
