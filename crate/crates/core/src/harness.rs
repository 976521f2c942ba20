//! Synthetic ablation rig for the selection policies.
//!
//! A [`SyntheticTask`] is a complete tree of tool calls: `width` tools, `depth`
//! calls per solution, then a final answer. A scripted model walks it: at each
//! context it proposes tools in a fixed per-context preference order, skipping
//! the ones listed as already tried. Each first-level branch is either sound
//! (every solution under it answers with the correct label) or unsound (each
//! solution under it either fails at its last tool call or answers with a
//! wrong label drawn per solution).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{vote, Choice};
use crate::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::memory::{MemoryTypeSelection, TaskMemory, DEFAULT_DEDUP_THRESHOLD};
use crate::planner::{self, Limits, Policy, RewardConfig, RunOutput, SearchConfig, Session, BEGIN_MARKER};
use crate::toolkit::{ToolContext, ToolError, ToolInvocation, ToolKind, ToolRegistry, ToolSpec};

pub const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const VIDEO: &str = "synthetic.mp4";
const QUESTION: &str = "Which option best answers the synthetic question?";

pub type ToolPath = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub seed: u64,
    pub width: usize,
    pub depth: usize,
    pub failure_ratio: f64,
    /// Context (tools called so far) to the model's proposals, most preferred first.
    pub tool_graph: BTreeMap<ToolPath, Vec<String>>,
    /// Full paths that answer with `correct_label`.
    pub success_paths: BTreeSet<ToolPath>,
    /// Full paths whose last tool call errors.
    pub distractor_paths: BTreeSet<ToolPath>,
    /// Full paths that answer with a wrong label.
    pub wrong_answers: BTreeMap<ToolPath, String>,
    pub sound_branches: BTreeSet<usize>,
    pub correct_label: String,
}

fn tool_name(i: usize) -> String {
    format!("T{i}")
}

fn encode(path: &[usize]) -> String {
    if path.is_empty() {
        "start".into()
    } else {
        path.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    }
}

fn decode(text: &str) -> Option<ToolPath> {
    let body = text.trim().strip_prefix("step ")?;
    if body == "start" {
        return Some(Vec::new());
    }
    body.split('-').map(|p| p.parse().ok()).collect()
}

fn all_paths(width: usize, len: usize) -> Vec<ToolPath> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..width).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Build a task. Same arguments, same task.
///
/// Panics unless `width >= 2`, `depth >= 1` and `0 <= failure_ratio < 1`.
pub fn generate_task(seed: u64, width: usize, depth: usize, failure_ratio: f64) -> SyntheticTask {
    assert!(width >= 2 && depth >= 1, "width must be >= 2 and depth >= 1");
    assert!((0.0..1.0).contains(&failure_ratio), "failure_ratio must be in [0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let correct_label = LABELS[rng.gen_range(0..LABELS.len())].to_string();

    let mut tool_graph = BTreeMap::new();
    for len in 0..depth {
        for ctx in all_paths(width, len) {
            let mut order: Vec<usize> = (0..width).collect();
            order.shuffle(&mut rng);
            let completions = order
                .iter()
                .map(|&t| {
                    let mut next = ctx.clone();
                    next.push(t);
                    format!(
                        "Thought: I should ask {} next.\nAction: {}\nAction Input: {VIDEO}#step {}",
                        tool_name(t),
                        tool_name(t),
                        encode(&next)
                    )
                })
                .collect();
            tool_graph.insert(ctx, completions);
        }
    }

    let mut sound_branches: BTreeSet<usize> = (0..width).filter(|_| rng.gen::<f64>() >= failure_ratio).collect();
    if sound_branches.is_empty() {
        sound_branches.insert(rng.gen_range(0..width));
    }

    let wrong: Vec<&str> = LABELS.iter().copied().filter(|l| *l != correct_label).collect();
    let mut success_paths = BTreeSet::new();
    let mut distractor_paths = BTreeSet::new();
    let mut wrong_answers = BTreeMap::new();
    for path in all_paths(width, depth) {
        if sound_branches.contains(&path[0]) {
            success_paths.insert(path);
        } else if rng.gen_bool(0.5) {
            distractor_paths.insert(path);
        } else {
            let label = wrong[rng.gen_range(0..wrong.len())].to_string();
            wrong_answers.insert(path, label);
        }
    }

    SyntheticTask {
        seed,
        width,
        depth,
        failure_ratio,
        tool_graph,
        success_paths,
        distractor_paths,
        wrong_answers,
        sound_branches,
        correct_label,
    }
}

impl SyntheticTask {
    pub fn choices(&self) -> Vec<Choice> {
        LABELS.iter().map(|l| Choice::label(*l)).collect()
    }

    fn final_completion(&self, path: &[usize]) -> String {
        let label = if self.success_paths.contains(path) {
            self.correct_label.as_str()
        } else {
            self.wrong_answers.get(path).map(String::as_str).unwrap_or("?")
        };
        format!("Thought: I now know the final answer.\nFinal Answer: The answer is {label}.")
    }

    /// Tools `T0..T{width-1}`; the last call of a distractor path errors.
    pub fn registry(self: &Arc<Self>) -> ToolRegistry {
        let mut registry = ToolRegistry::new();
        for t in 0..self.width {
            let task = Arc::clone(self);
            registry
                .register(
                    ToolSpec {
                        name: tool_name(t),
                        description: format!(
                            "Synthetic probe number {t}. Input: <video>#step <path>, e.g. {VIDEO}#step 0-1"
                        ),
                        kind: ToolKind::Knowledge,
                    },
                    Arc::new(move |inv: &ToolInvocation, _: &ToolContext<'_>| {
                        let path = decode(&inv.sub_question)
                            .ok_or_else(|| ToolError::Fatal(format!("unreadable step `{}`", inv.sub_question)))?;
                        if task.distractor_paths.contains(&path) {
                            return Err(ToolError::Fatal(format!("probe failed at step {}", encode(&path))));
                        }
                        Ok(format!("probe {} done", encode(&path)))
                    }),
                )
                .expect("synthetic tool names are unique");
        }
        registry
    }
}

/// The scripted model for one task. Replies depend only on the prompt.
pub struct TaskBackend {
    task: Arc<SyntheticTask>,
}

impl TaskBackend {
    pub fn new(task: Arc<SyntheticTask>) -> Self {
        Self { task }
    }

    fn reply(&self, prompt: &str) -> Result<String, BackendError> {
        let tail = prompt
            .find(BEGIN_MARKER)
            .map(|i| &prompt[i..])
            .ok_or_else(|| BackendError::InvalidRequest("not a planner prompt".into()))?;
        let mut context = Vec::new();
        let mut tried = BTreeSet::new();
        for line in tail.lines() {
            if let Some(name) = line.strip_prefix("Action: ") {
                context.push(parse_tool(name)?);
            } else if line.starts_with("- Thought:") {
                if let Some(name) = line.split(" | Action: ").nth(1).and_then(|r| r.split(" | ").next()) {
                    tried.insert(parse_tool(name)?);
                }
            }
        }
        if context.len() >= self.task.depth {
            return Ok(self.task.final_completion(&context));
        }
        let proposals = self
            .task
            .tool_graph
            .get(&context)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown context {context:?}")))?;
        let order = proposals.iter().zip(proposal_tools(proposals));
        for (text, tool) in order {
            if !tried.contains(&tool) {
                return Ok(text.clone());
            }
        }
        // everything was tried; repeat the favourite and let the planner reject it
        Ok(proposals[0].clone())
    }
}

fn parse_tool(name: &str) -> Result<usize, BackendError> {
    name.trim()
        .strip_prefix('T')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| BackendError::InvalidRequest(format!("unexpected tool `{name}`")))
}

fn proposal_tools(proposals: &[String]) -> Vec<usize> {
    proposals
        .iter()
        .map(|p| {
            p.lines()
                .find_map(|l| l.strip_prefix("Action: "))
                .and_then(|n| parse_tool(n).ok())
                .unwrap_or(usize::MAX)
        })
        .collect()
}

impl ChatBackend for TaskBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let text = self.reply(request.last_user_text())?;
        Ok(ChatResponse::estimated(request, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub seed: u64,
    pub success: bool,
    pub answers: usize,
    /// Iteration of the first answer carrying the correct label.
    pub first_success_iteration: Option<usize>,
    pub api_calls: u64,
}

/// Run the planner on one task with `policy`.
pub fn run_task(task: &Arc<SyntheticTask>, policy: Policy, reward: &RewardConfig) -> Result<(TaskResult, RunOutput), planner::PlannerError> {
    let registry = task.registry();
    let memory = empty_memory();
    let backend = TaskBackend::new(Arc::clone(task));
    let session = Session {
        question: QUESTION,
        video_ref: VIDEO,
        memory: &memory,
        registry: &registry,
        backend: &backend,
    };
    let config = SearchConfig {
        reward: *reward,
        limits: Limits::for_registry(&registry),
        policy,
        seed: task.seed,
    };
    let output = planner::run(session, &config)?;
    let label = vote(&output.answers, &task.choices()).ok();
    let correct = |text: &str| text.contains(&format!("is {}.", task.correct_label));
    let result = TaskResult {
        seed: task.seed,
        success: label.as_deref() == Some(task.correct_label.as_str()),
        answers: output.answers.len(),
        first_success_iteration: output.answers.iter().find(|a| correct(&a.text)).map(|a| a.iteration),
        api_calls: output.usage.calls,
    };
    Ok((result, output))
}

fn empty_memory() -> TaskMemory {
    TaskMemory::ingest("synthetic", Vec::new(), MemoryTypeSelection::TIME, DEFAULT_DEDUP_THRESHOLD)
        .expect("empty memory builds")
        .memory
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: Policy,
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over tasks where a correct answer appeared; `None` if there were none.
    pub mean_iterations_to_first_success: Option<f64>,
    pub mean_api_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub rows: Vec<PolicyRow>,
}

impl Report {
    pub fn row(&self, policy: Policy) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("alpha={} beta={} n={}\n", self.alpha, self.beta, self.n);
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>9} {:>8} {:>12} {:>10}",
            "policy", "tasks", "successes", "rate", "first_succ", "api_calls"
        );
        for r in &self.rows {
            let first = r
                .mean_iterations_to_first_success
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>9} {:>8.3} {:>12} {:>10.3}",
                r.policy.as_str(),
                r.tasks,
                r.successes,
                r.success_rate,
                first,
                r.mean_api_calls
            );
        }
        out
    }
}

/// Per-policy success rate, iterations to first correct answer and API calls.
pub fn evaluate(policies: &[Policy], tasks: &[SyntheticTask], reward: &RewardConfig) -> Result<Report, planner::PlannerError> {
    let tasks: Vec<Arc<SyntheticTask>> = tasks.iter().cloned().map(Arc::new).collect();
    let mut rows = Vec::new();
    for &policy in policies {
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = tasks
                .iter()
                .map(|task| scope.spawn(move || run_task(task, policy, reward).map(|(r, _)| r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("task thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let successes = results.iter().filter(|r| r.success).count();
        let firsts: Vec<f64> = results
            .iter()
            .filter_map(|r| r.first_success_iteration.map(|i| i as f64))
            .collect();
        let n = results.len().max(1) as f64;
        rows.push(PolicyRow {
            policy,
            tasks: results.len(),
            successes,
            success_rate: successes as f64 / n,
            mean_iterations_to_first_success: (!firsts.is_empty())
                .then(|| firsts.iter().sum::<f64>() / firsts.len() as f64),
            mean_api_calls: results.iter().map(|r| r.api_calls as f64).sum::<f64>() / n,
        });
    }
    Ok(Report {
        alpha: reward.alpha,
        beta: reward.beta,
        n: reward.n,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub width: usize,
    pub depth: usize,
    pub failure_ratio: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            width: 3,
            depth: 2,
            failure_ratio: 0.67,
        }
    }
}

pub fn generate_tasks(seeds: impl IntoIterator<Item = u64>, spec: &TaskSpec) -> Vec<SyntheticTask> {
    seeds
        .into_iter()
        .map(|s| generate_task(s, spec.width, spec.depth, spec.failure_ratio))
        .collect()
}
