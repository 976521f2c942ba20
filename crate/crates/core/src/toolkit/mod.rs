//! Tools the planner can call.
//!
//! A [`ToolRegistry`] maps tool names to a [`ToolSpec`] (what the model reads)
//! and a [`ToolHandler`] (what runs). Three kinds exist: sub-task tools that
//! answer sub-questions with SQL over the task memory, knowledge tools backed
//! by an external source, and utility tools that shell out.

mod config;
mod grammar;
mod knowledge;
mod subtask;
mod utility;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::backend::{BackendError, ChatBackend};
use crate::memory::TaskMemory;

pub use config::{load_registry, RegistryConfig, ToolEntry};
pub use grammar::{format_invocation, parse_invocation, InvocationError, ToolInvocation};
pub use knowledge::{
    chunk_text, cosine, run_knowledge_tool, Embedder, KnowledgeKind, KnowledgeSource, KnowledgeTool,
    TokenFrequencyEmbedder, CHUNK_TOKENS, NO_RESULTS, TOP_K,
};
pub use subtask::{
    extract_sql, run_sql_agent, run_subtask_tool, SubtaskKind, SubtaskTool, SQL_ATTEMPTS,
    SUBTASK_FAILED_PREFIX,
};
pub use utility::CommandTool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Subtask,
    Knowledge,
    Utility,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub kind: ToolKind,
}

/// Per-call environment handed to a tool.
#[derive(Clone, Copy)]
pub struct ToolContext<'a> {
    pub memory: &'a TaskMemory,
    pub backend: &'a dyn ChatBackend,
}

#[derive(Debug, Error)]
pub enum ToolError {
    /// The call itself failed in a way the agent cannot recover from.
    #[error("tool execution failed: {0}")]
    Fatal(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Handlers must be safe to call from concurrent sessions.
pub trait ToolHandler: Send + Sync {
    /// Returns the observation text.
    fn invoke(&self, invocation: &ToolInvocation, ctx: &ToolContext<'_>) -> Result<String, ToolError>;
}

impl<F> ToolHandler for F
where
    F: Fn(&ToolInvocation, &ToolContext<'_>) -> Result<String, ToolError> + Send + Sync,
{
    fn invoke(&self, invocation: &ToolInvocation, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        self(invocation, ctx)
    }
}

#[derive(Clone)]
pub struct RegisteredTool {
    pub spec: ToolSpec,
    pub handler: Arc<dyn ToolHandler>,
}

impl fmt::Debug for RegisteredTool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredTool").field("spec", &self.spec).finish()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate tool name `{0}`")]
    DuplicateName(String),
    #[error("invalid tool name `{0}`: must be non-empty without whitespace or `#`")]
    InvalidName(String),
    #[error("tool `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("registry config: {0}")]
    Config(String),
}

/// Ordered, immutable-after-build collection of tools.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<RegisteredTool>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The six sub-task tools, in When/Why/What/How/Count/Other order.
    pub fn with_subtask_tools() -> Self {
        let mut registry = Self::new();
        for kind in SubtaskKind::ALL {
            registry
                .register(
                    ToolSpec {
                        name: kind.default_tool_name().to_string(),
                        description: kind.default_description().to_string(),
                        kind: ToolKind::Subtask,
                    },
                    Arc::new(SubtaskTool::new(kind)),
                )
                .expect("default tool names are unique");
        }
        registry
    }

    pub fn register(&mut self, spec: ToolSpec, handler: Arc<dyn ToolHandler>) -> Result<(), RegistryError> {
        if spec.name.is_empty() || spec.name.chars().any(|c| c.is_whitespace() || c == '#') {
            return Err(RegistryError::InvalidName(spec.name));
        }
        if spec.description.trim().is_empty() {
            return Err(RegistryError::EmptyDescription(spec.name));
        }
        if self.get(&spec.name).is_some() {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        self.tools.push(RegisteredTool { spec, handler });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredTool> {
        self.tools.iter().find(|t| t.spec.name == name)
    }

    pub fn tools(&self) -> &[RegisteredTool] {
        &self.tools
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.spec.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// One `name: description` line per tool, in registration order.
    pub fn descriptions(&self) -> String {
        if self.tools.is_empty() {
            warn!("tool registry is empty; the planner has nothing to call");
            return String::new();
        }
        self.tools
            .iter()
            .map(|t| format!("{}: {}", t.spec.name, t.spec.description.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Look up and run the tool an invocation names.
    pub fn dispatch(&self, invocation: &ToolInvocation, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let tool = self
            .get(&invocation.tool_name)
            .ok_or_else(|| ToolError::Fatal(format!("unknown tool {}", invocation.tool_name)))?;
        tool.handler.invoke(invocation, ctx)
    }
}

/// Free-function form used by the planner prompt.
pub fn registry_descriptions(registry: &ToolRegistry) -> String {
    registry.descriptions()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noop() -> Arc<dyn ToolHandler> {
        Arc::new(|_: &ToolInvocation, _: &ToolContext<'_>| Ok(String::new()))
    }

    fn spec(name: &str, desc: &str) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: desc.into(),
            kind: ToolKind::Utility,
        }
    }

    #[test]
    fn descriptions_keep_registration_order() {
        let mut r = ToolRegistry::new();
        r.register(spec("Zeta", "last letter"), noop()).unwrap();
        r.register(spec("Alpha", "first letter"), noop()).unwrap();
        let d = r.descriptions();
        assert_eq!(d, "Zeta: last letter\nAlpha: first letter");
        assert_eq!(d, registry_descriptions(&r));
    }

    #[test]
    fn empty_registry_describes_as_empty() {
        assert_eq!(ToolRegistry::new().descriptions(), "");
    }

    #[test]
    fn registration_rules() {
        let mut r = ToolRegistry::new();
        r.register(spec("A", "x"), noop()).unwrap();
        assert_eq!(
            r.register(spec("A", "y"), noop()),
            Err(RegistryError::DuplicateName("A".into()))
        );
        assert_eq!(
            r.register(spec("B C", "y"), noop()),
            Err(RegistryError::InvalidName("B C".into()))
        );
        assert_eq!(
            r.register(spec("D", "  "), noop()),
            Err(RegistryError::EmptyDescription("D".into()))
        );
    }

    #[test]
    fn default_registry_has_six_subtask_tools() {
        let r = ToolRegistry::with_subtask_tools();
        assert_eq!(
            r.names(),
            vec!["VideoWhen", "VideoWhy", "VideoWhat", "VideoHow", "VideoCount", "VideoOther"]
        );
        assert!(r.tools().iter().all(|t| t.spec.kind == ToolKind::Subtask));
        assert!(r.get("VideoWhat").unwrap().spec.description.contains("#"));
    }
}
