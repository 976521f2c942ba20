//! Serialized record of one planner run.

use serde::{Deserialize, Serialize};

use super::tree::{NodeId, Outcome, TreeNode};
use super::{Answer, Limits, Policy, RewardConfig, RunOutput};
use crate::backend::UsageSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub seed: u64,
    pub policy: Policy,
    pub max_depth: usize,
    pub max_children: usize,
    pub parse_retries: usize,
}

impl TraceConfig {
    pub fn new(reward: &RewardConfig, limits: &Limits, policy: Policy, seed: u64) -> Self {
        Self {
            alpha: reward.alpha,
            beta: reward.beta,
            n: reward.n,
            seed,
            policy,
            max_depth: limits.max_depth,
            max_children: limits.max_children,
            parse_retries: limits.parse_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `None` when nothing was expandable and the search stopped.
    pub selected: Option<NodeId>,
    pub leaf: Option<NodeId>,
    pub outcome: Option<Outcome>,
    /// Backend calls made during this iteration, sub-agent calls included.
    pub calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: TraceConfig,
    pub question: String,
    pub video_ref: String,
    pub nodes: Vec<TreeNode>,
    pub iterations: Vec<IterationRecord>,
    pub answers: Vec<Answer>,
    pub exhausted: bool,
    pub usage: UsageSnapshot,
}

impl Trace {
    pub fn from_run(output: &RunOutput) -> Self {
        Self {
            config: output.config.clone(),
            question: output.question.clone(),
            video_ref: output.video_ref.clone(),
            nodes: output.tree.nodes().to_vec(),
            iterations: output.iterations.clone(),
            answers: output.answers.clone(),
            exhausted: output.exhausted,
            usage: output.usage,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }
}
