//! Declarative tool registration.
//!
//! ```toml
//! include_default_subtasks = true   # the six Video* tools, before any entries
//!
//! [[tools]]
//! name = "Encyclopedia"
//! kind = "knowledge"
//! source = "textual"
//! locator = "docs/"
//! embedder = "token-frequency"
//! description = "Background articles. Input: <video>#<question>"
//!
//! [[tools]]
//! name = "FrameGrab"
//! kind = "utility"
//! command = ["grab", "{video}", "{question}"]
//! description = "..."
//! ```
//!
//! Relative locators resolve against the config file's directory.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    CommandTool, Embedder, KnowledgeKind, KnowledgeSource, KnowledgeTool, RegistryError, SubtaskKind,
    SubtaskTool, TokenFrequencyEmbedder, ToolHandler, ToolKind, ToolRegistry, ToolSpec,
};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryConfig {
    #[serde(default = "yes")]
    pub include_default_subtasks: bool,
    #[serde(default)]
    pub tools: Vec<ToolEntry>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            include_default_subtasks: true,
            tools: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolEntry {
    pub name: String,
    pub kind: ToolKind,
    /// Required for utility and knowledge tools; subtask tools fall back to the built-in text.
    #[serde(default)]
    pub description: Option<String>,
    /// Sub-task kind (when/why/what/how/count/other).
    #[serde(default)]
    pub subtask: Option<SubtaskKind>,
    #[serde(default)]
    pub source: Option<KnowledgeKind>,
    #[serde(default)]
    pub locator: Option<String>,
    /// Only `token-frequency` is built in.
    #[serde(default)]
    pub embedder: Option<String>,
    #[serde(default)]
    pub command: Option<Vec<String>>,
}

impl RegistryConfig {
    pub fn from_toml(text: &str) -> Result<Self, RegistryError> {
        toml::from_str(text).map_err(|e| RegistryError::Config(e.to_string()))
    }

    /// Build the registry. `base_dir` anchors relative locators.
    pub fn build(&self, base_dir: &Path) -> Result<ToolRegistry, RegistryError> {
        let mut registry = if self.include_default_subtasks {
            ToolRegistry::with_subtask_tools()
        } else {
            ToolRegistry::new()
        };
        for entry in &self.tools {
            let (spec, handler) = entry.build(base_dir)?;
            registry.register(spec, handler)?;
        }
        Ok(registry)
    }
}

impl ToolEntry {
    fn missing(&self, field: &str) -> RegistryError {
        RegistryError::Config(format!("tool `{}` ({:?}) needs `{field}`", self.name, self.kind))
    }

    fn build(&self, base_dir: &Path) -> Result<(ToolSpec, Arc<dyn ToolHandler>), RegistryError> {
        let description = self.description.clone().unwrap_or_default();
        let (description, handler): (String, Arc<dyn ToolHandler>) = match self.kind {
            ToolKind::Subtask => {
                let kind = self.subtask.ok_or_else(|| self.missing("subtask"))?;
                let d = if description.trim().is_empty() {
                    kind.default_description().to_string()
                } else {
                    description
                };
                (d, Arc::new(SubtaskTool::new(kind)))
            }
            ToolKind::Knowledge => {
                let kind = self.source.ok_or_else(|| self.missing("source"))?;
                let locator = self.locator.clone().ok_or_else(|| self.missing("locator"))?;
                let locator = if kind == KnowledgeKind::Web || Path::new(&locator).is_absolute() {
                    locator
                } else {
                    base_dir.join(&locator).to_string_lossy().into_owned()
                };
                let embedder: Option<Arc<dyn Embedder>> = match self.embedder.as_deref() {
                    None => None,
                    Some("token-frequency") => Some(Arc::new(TokenFrequencyEmbedder::default())),
                    Some(other) => {
                        return Err(RegistryError::Config(format!(
                            "tool `{}`: unknown embedder `{other}`",
                            self.name
                        )))
                    }
                };
                let source = KnowledgeSource {
                    kind,
                    locator,
                    description: description.clone(),
                };
                (description, Arc::new(KnowledgeTool::new(source, embedder)))
            }
            ToolKind::Utility => {
                let argv = self.command.clone().ok_or_else(|| self.missing("command"))?;
                let tool = CommandTool::new(argv)
                    .map_err(|e| RegistryError::Config(format!("tool `{}`: {e}", self.name)))?;
                (description, Arc::new(tool))
            }
        };
        Ok((
            ToolSpec {
                name: self.name.clone(),
                description,
                kind: self.kind,
            },
            handler,
        ))
    }
}

/// Read a registry config file and build it.
pub fn load_registry(path: &Path) -> Result<ToolRegistry, RegistryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RegistryError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RegistryConfig::from_toml(&text)?.build(base)
}
