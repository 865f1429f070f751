//! Inference contract shared by the log agent, planner and reflector.
//!
//! Backends receive an [`AgentPrompt`] and must answer with a document that
//! validates against the prompt's response schema. Two backends ship: a
//! scripted rule table ([`ScriptedReasoner`]) and a chat-completion HTTP
//! client ([`RemoteReasoner`]).

mod remote;
pub mod schema;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use remote::{RemoteConfig, RemoteReasoner};
pub use schema::validate_response;
pub use scripted::{RuleEntry, RuleTable, ScriptedReasoner};

pub const DEFAULT_PROMPT_BUDGET: usize = 32 * 1024;
pub const TRUNCATED_LABEL: &str = "[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentRole {
    LogAgent,
    Planner,
    Reflector,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::LogAgent => "LOG_AGENT",
            AgentRole::Planner => "PLANNER",
            AgentRole::Reflector => "REFLECTOR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub label: String,
    pub text: String,
}

impl ContextBlock {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        ContextBlock { label: label.into(), text: text.into() }
    }

    fn size(&self) -> usize {
        self.label.len() + self.text.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPrompt {
    pub agent_role: AgentRole,
    pub instructions: String,
    pub context_blocks: Vec<ContextBlock>,
    pub response_schema_id: String,
}

impl AgentPrompt {
    pub fn context_size(&self) -> usize {
        self.context_blocks.iter().map(ContextBlock::size).sum()
    }

    /// The text rule predicates match against: `## label\ntext\n` per block.
    pub fn context_text(&self) -> String {
        let mut out = String::new();
        for b in &self.context_blocks {
            out.push_str("## ");
            out.push_str(&b.label);
            out.push('\n');
            out.push_str(&b.text);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub schema_id: String,
    pub body: Value,
    pub raw_text: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReasonerError {
    #[error("no rule matched for {role} / {schema}")]
    NoRuleMatched { role: AgentRole, schema: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed model output at `{path}`: {detail}")]
    MalformedModelOutput { path: String, detail: String },
    #[error("unknown response schema `{0}`")]
    UnknownSchema(String),
    #[error("rule table: {0}")]
    RuleTable(String),
}

pub trait Reasoner: Send + Sync {
    fn complete(&self, prompt: &AgentPrompt) -> Result<StructuredResponse, ReasonerError>;
}

/// Builds a prompt whose context fits `budget` bytes. When the blocks do not
/// fit, the oldest (leading) blocks are dropped and a `[truncated]` marker
/// block is put in their place; a single oversized block keeps its tail.
pub fn render_prompt(
    role: AgentRole,
    instructions: &str,
    blocks: Vec<ContextBlock>,
    schema_id: &str,
    budget: usize,
) -> AgentPrompt {
    let total: usize = blocks.iter().map(ContextBlock::size).sum();
    let context_blocks = if total <= budget { blocks } else { truncate_blocks(blocks, budget) };
    AgentPrompt {
        agent_role: role,
        instructions: instructions.to_string(),
        context_blocks,
        response_schema_id: schema_id.to_string(),
    }
}

fn marker(dropped: usize) -> ContextBlock {
    ContextBlock::new(TRUNCATED_LABEL, format!("{dropped} earlier block(s) omitted"))
}

fn truncate_blocks(mut blocks: Vec<ContextBlock>, budget: usize) -> Vec<ContextBlock> {
    let n = blocks.len();
    let mut kept_size: usize = blocks.iter().map(ContextBlock::size).sum();
    let mut start = 0;
    while start < n && kept_size + marker(start).size() > budget {
        kept_size -= blocks[start].size();
        start += 1;
    }
    let m = marker(start);
    if m.size() > budget {
        return Vec::new();
    }
    let mut out = vec![m];
    if start == n {
        // Even the newest block alone is too big: keep as much of its tail as fits.
        let last = blocks.pop().expect("non-empty when over budget");
        let room = budget - out[0].size();
        if room > last.label.len() {
            let keep = room - last.label.len();
            let mut cut = last.text.len().saturating_sub(keep);
            while !last.text.is_char_boundary(cut) {
                cut += 1;
            }
            out[0] = marker(n - 1);
            if out[0].size() + last.label.len() + (last.text.len() - cut) <= budget {
                out.push(ContextBlock::new(last.label, &last.text[cut..]));
            }
        }
        return out;
    }
    out.extend(blocks.drain(start..));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(n: usize, size: usize) -> Vec<ContextBlock> {
        (0..n).map(|i| ContextBlock::new(format!("b{i}"), "x".repeat(size))).collect()
    }

    #[test]
    fn within_budget_unchanged() {
        let b = blocks(3, 10);
        let p = render_prompt(AgentRole::Planner, "go", b.clone(), "plan.v1", 1000);
        assert_eq!(p.context_blocks, b);
    }

    #[test]
    fn over_budget_drops_oldest() {
        let b = blocks(10, 100);
        let budget = b.iter().map(ContextBlock::size).sum::<usize>() / 2;
        let p = render_prompt(AgentRole::Planner, "go", b, "plan.v1", budget);
        assert!(p.context_size() <= budget);
        assert_eq!(p.context_blocks[0].label, TRUNCATED_LABEL);
        assert_eq!(p.context_blocks.last().unwrap().label, "b9");
        assert!(!p.context_blocks.iter().any(|b| b.label == "b0"));
    }

    #[test]
    fn oversized_single_block_keeps_tail() {
        let b = vec![ContextBlock::new("big", format!("{}END", "y".repeat(500)))];
        let p = render_prompt(AgentRole::LogAgent, "", b, "gaps.v1", 100);
        assert!(p.context_size() <= 100);
        assert!(p.context_blocks.last().unwrap().text.ends_with("END"));
    }

    #[test]
    fn empty_evidence() {
        let p = render_prompt(AgentRole::Reflector, "check", vec![], "verdict.v1", 10);
        assert!(p.context_blocks.is_empty());
        assert_eq!(p.context_text(), "");
    }
}
