//! Utility tools: run an external program and return its stdout.

use std::process::Command;

use super::{ToolContext, ToolError, ToolHandler, ToolInvocation};

/// Argument vector with `{video}`, `{question}` and `{input}` placeholders.
/// `{input}` is the raw `<video>#<question>` text. No shell is involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTool {
    argv: Vec<String>,
}

impl CommandTool {
    pub fn new(argv: Vec<String>) -> Result<Self, String> {
        if argv.first().is_none_or(|p| p.trim().is_empty()) {
            return Err("utility command needs a program".into());
        }
        Ok(Self { argv })
    }

    pub fn argv(&self) -> &[String] {
        &self.argv
    }

    fn expand(&self, inv: &ToolInvocation) -> Vec<String> {
        let input = if inv.sub_question.is_empty() {
            inv.video_ref.clone()
        } else {
            format!("{}#{}", inv.video_ref, inv.sub_question)
        };
        self.argv
            .iter()
            .map(|a| {
                a.replace("{video}", &inv.video_ref)
                    .replace("{question}", &inv.sub_question)
                    .replace("{input}", &input)
            })
            .collect()
    }
}

impl ToolHandler for CommandTool {
    fn invoke(&self, invocation: &ToolInvocation, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let argv = self.expand(invocation);
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .output()
            .map_err(|e| ToolError::Fatal(format!("{}: {e}", argv[0])))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(ToolError::Fatal(format!(
                "{} exited with {}: {}",
                argv[0],
                output.status,
                stderr.trim()
            )));
        }
        Ok(String::from_utf8_lossy(&output.stdout).trim().to_string())
    }
}
