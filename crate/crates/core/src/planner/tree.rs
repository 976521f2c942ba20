//! The search tree and reward back-propagation.

use serde::{Deserialize, Serialize};

use super::prompt::{format_final, format_step, TriedAction};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Open,
    Failure,
    Nonfailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            n: 2,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(format!("beta must be a finite value >= 0, got {}", self.beta));
        }
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        Ok(())
    }
}

/// Weight applied to an ancestor `d` edges above the leaf.
pub fn decay(beta: f64, d: usize) -> f64 {
    (beta * (1.0 - d as f64)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    /// Iteration that created the node; 0 for the root.
    pub iteration: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub reward: f64,
    pub reward_history: Vec<(usize, f64)>,
    pub outcome: Outcome,
}

impl TreeNode {
    fn blank(id: NodeId, parent: Option<NodeId>, depth: usize, iteration: usize) -> Self {
        Self {
            id,
            parent,
            children: Vec::new(),
            depth,
            iteration,
            question: None,
            thought: None,
            action: None,
            action_input: None,
            observation: None,
            final_answer: None,
            error: None,
            reward: 0.0,
            reward_history: Vec::new(),
            outcome: Outcome::Open,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.outcome != Outcome::Open
    }

    /// Identity used to keep siblings distinct. Nodes without an action or a
    /// final answer (failed attempts) have none.
    pub fn action_key(&self) -> Option<(String, String)> {
        if let Some(answer) = &self.final_answer {
            return Some(("Final Answer".into(), answer.trim().to_string()));
        }
        Some((
            self.action.as_ref()?.trim().to_string(),
            self.action_input.as_deref().unwrap_or("").trim().to_string(),
        ))
    }

    pub fn tried(&self) -> Option<TriedAction> {
        let thought = self.thought.clone().unwrap_or_default();
        if let Some(answer) = &self.final_answer {
            return Some(TriedAction::Final {
                thought,
                answer: answer.clone(),
            });
        }
        Some(TriedAction::Call {
            thought,
            action: self.action.clone()?,
            action_input: self.action_input.clone().unwrap_or_default(),
        })
    }

    /// ReAct text for this node; empty for the root and for failed attempts.
    pub fn render(&self) -> String {
        let thought = self.thought.as_deref().unwrap_or("");
        if let Some(answer) = &self.final_answer {
            return format_final(thought, answer);
        }
        match &self.action {
            Some(action) => format_step(
                thought,
                action,
                self.action_input.as_deref().unwrap_or(""),
                self.observation.as_deref().unwrap_or(""),
            ),
            None => String::new(),
        }
    }
}

/// What a new node carries besides its position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeContent {
    pub thought: Option<String>,
    pub action: Option<String>,
    pub action_input: Option<String>,
    pub observation: Option<String>,
    pub final_answer: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerTree {
    nodes: Vec<TreeNode>,
}

impl PlannerTree {
    pub fn new(question: impl Into<String>) -> Self {
        let mut root = TreeNode::blank(0, None, 0, 0);
        root.question = Some(question.into());
        Self { nodes: vec![root] }
    }

    pub const ROOT: NodeId = 0;

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_child(&mut self, parent: NodeId, iteration: usize, content: NodeContent, outcome: Outcome) -> NodeId {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        let mut node = TreeNode::blank(id, Some(parent), depth, iteration);
        node.thought = content.thought;
        node.action = content.action;
        node.action_input = content.action_input;
        node.observation = content.observation;
        node.final_answer = content.final_answer;
        node.error = content.error;
        node.outcome = outcome;
        self.nodes.push(node);
        self.nodes[parent].children.push(id);
        id
    }

    #[cfg(test)]
    pub(crate) fn close(&mut self, id: NodeId, outcome: Outcome, error: Option<String>) {
        let node = &mut self.nodes[id];
        node.outcome = outcome;
        if error.is_some() {
            node.error = error;
        }
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Concatenated ReAct text of the non-root nodes on the path to `id`.
    pub fn transcript(&self, id: NodeId) -> String {
        self.path(id).iter().map(|n| self.nodes[*n].render()).collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Set the leaf reward to ±α and add the decayed reward to each ancestor.
    pub fn backpropagate(&mut self, leaf: NodeId, config: &RewardConfig, iteration: usize) {
        let r = match self.nodes[leaf].outcome {
            Outcome::Nonfailure => config.alpha,
            Outcome::Failure => -config.alpha,
            Outcome::Open => panic!("back-propagation from open node {leaf}"),
        };
        let node = &mut self.nodes[leaf];
        let delta = r - node.reward;
        node.reward = r;
        node.reward_history.push((iteration, delta));
        let mut d = 0;
        let mut cur = self.nodes[leaf].parent;
        while let Some(id) = cur {
            d += 1;
            let inc = r * decay(config.beta, d);
            let node = &mut self.nodes[id];
            node.reward += inc;
            node.reward_history.push((iteration, inc));
            cur = node.parent;
        }
    }

    /// Check link consistency; used by tests.
    pub fn check_links(&self) -> Result<(), String> {
        for n in &self.nodes {
            if let Some(p) = n.parent {
                if p >= n.id {
                    return Err(format!("node {} has parent {p} created after it", n.id));
                }
                if !self.nodes[p].children.contains(&n.id) {
                    return Err(format!("node {} missing from parent {p}", n.id));
                }
                if n.depth != self.nodes[p].depth + 1 {
                    return Err(format!("node {} depth mismatch", n.id));
                }
            } else if n.id != Self::ROOT {
                return Err(format!("orphan node {}", n.id));
            }
            for c in &n.children {
                if self.nodes[*c].parent != Some(n.id) {
                    return Err(format!("child {c} of {} points elsewhere", n.id));
                }
            }
            if n.is_leaf() && !n.children.is_empty() {
                return Err(format!("leaf {} has children", n.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(depth: usize) -> (PlannerTree, NodeId) {
        let mut t = PlannerTree::new("q");
        let mut cur = PlannerTree::ROOT;
        for _ in 0..depth {
            cur = t.add_child(cur, 1, NodeContent::default(), Outcome::Open);
        }
        (t, cur)
    }

    #[test]
    fn leaf_reward_is_set_directly() {
        let (mut t, leaf) = chain(3);
        t.close(leaf, Outcome::Failure, None);
        t.backpropagate(leaf, &RewardConfig::default(), 1);
        assert_eq!(t.node(leaf).reward, -1.0);
        assert_eq!(t.node(2).reward, -1.0);
        assert!((t.node(1).reward + (-0.5f64).exp()).abs() < 1e-15);
        assert!((t.node(0).reward + (-1.0f64).exp()).abs() < 1e-15);
        t.check_links().unwrap();
    }

    #[test]
    fn zero_beta_is_uniform() {
        let (mut t, leaf) = chain(4);
        t.close(leaf, Outcome::Nonfailure, None);
        t.backpropagate(leaf, &RewardConfig { alpha: 2.0, beta: 0.0, n: 1 }, 1);
        assert!(t.nodes().iter().all(|n| n.reward == 2.0));
    }

    #[test]
    fn path_and_transcript() {
        let mut t = PlannerTree::new("q");
        let a = t.add_child(
            0,
            1,
            NodeContent {
                thought: Some("t".into()),
                action: Some("A".into()),
                action_input: Some("v#q".into()),
                observation: Some("o".into()),
                ..Default::default()
            },
            Outcome::Open,
        );
        let b = t.add_child(
            a,
            1,
            NodeContent {
                thought: Some("done".into()),
                final_answer: Some("3".into()),
                ..Default::default()
            },
            Outcome::Nonfailure,
        );
        assert_eq!(t.path(b), vec![0, a, b]);
        assert_eq!(
            t.transcript(b),
            "Thought: t\nAction: A\nAction Input: v#q\nObservation: o\nThought: done\nFinal Answer: 3\n"
        );
        assert_eq!(t.node(b).action_key(), Some(("Final Answer".into(), "3".into())));
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        assert!(RewardConfig { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { beta: -1.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { n: 0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { beta: 1e8, ..Default::default() }.validate().is_ok());
    }
}
