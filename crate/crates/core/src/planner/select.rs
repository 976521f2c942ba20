//! Node selection policies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{NodeId, PlannerTree};
use super::Limits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Sample by softmax over node rewards.
    Mcts,
    /// Deepest expandable node, highest id on ties.
    Dfs,
    /// Always the root.
    Root,
    /// Every expandable node equally likely.
    Uniform,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Mcts, Policy::Dfs, Policy::Root, Policy::Uniform];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Mcts => "mcts",
            Policy::Dfs => "dfs",
            Policy::Root => "root",
            Policy::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown policy `{s}` (expected mcts, dfs, root or uniform)"))
    }
}

/// Ids of nodes that can take another child, ascending.
pub fn expandable(tree: &PlannerTree, limits: &Limits) -> Vec<NodeId> {
    tree.nodes()
        .iter()
        .filter(|n| !n.is_leaf() && n.children.len() < limits.max_children && n.depth < limits.max_depth)
        .map(|n| n.id)
        .collect()
}

/// Softmax over raw rewards, shifted by the max for stability.
pub fn softmax(rewards: &[f64]) -> Vec<f64> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Probability of each candidate under `policy`.
pub fn selection_distribution(tree: &PlannerTree, candidates: &[NodeId], policy: Policy) -> Vec<f64> {
    let k = candidates.len();
    match policy {
        Policy::Mcts => {
            let rewards: Vec<f64> = candidates.iter().map(|&c| tree.node(c).reward).collect();
            softmax(&rewards)
        }
        Policy::Uniform => vec![1.0 / k as f64; k],
        Policy::Root => candidates
            .iter()
            .map(|&c| if c == PlannerTree::ROOT { 1.0 } else { 0.0 })
            .collect(),
        Policy::Dfs => {
            let pick = dfs_pick(tree, candidates);
            candidates.iter().map(|&c| if Some(c) == pick { 1.0 } else { 0.0 }).collect()
        }
    }
}

fn dfs_pick(tree: &PlannerTree, candidates: &[NodeId]) -> Option<NodeId> {
    candidates
        .iter()
        .copied()
        .max_by_key(|&c| (tree.node(c).depth, c))
}

/// Draw an index from `weights` (which sum to 1) with one uniform sample.
fn sample<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// `None` when nothing is expandable.
pub fn select_node<R: Rng>(tree: &PlannerTree, policy: Policy, limits: &Limits, rng: &mut R) -> Option<NodeId> {
    let candidates = expandable(tree, limits);
    if candidates.is_empty() {
        return None;
    }
    match policy {
        Policy::Root => candidates.contains(&PlannerTree::ROOT).then_some(PlannerTree::ROOT),
        Policy::Dfs => dfs_pick(tree, &candidates),
        Policy::Uniform => Some(candidates[rng.gen_range(0..candidates.len())]),
        Policy::Mcts => {
            let p = selection_distribution(tree, &candidates, policy);
            Some(candidates[sample(&p, rng)])
        }
    }
}
