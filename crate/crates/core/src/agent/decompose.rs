use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskList {
    subtasks: Vec<String>,
    cursor: usize,
}

impl SubtaskList {
    pub fn new(subtasks: Vec<String>) -> Result<Self, AgentError> {
        if subtasks.is_empty() {
            return Err(AgentError::EmptyInstruction);
        }
        Ok(Self { subtasks, cursor: 0 })
    }

    pub fn subtasks(&self) -> &[String] {
        &self.subtasks
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn current(&self) -> &str {
        &self.subtasks[self.cursor]
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    /// Moves to the next subtask; stays on the last one.
    pub fn advance(&mut self) {
        if self.cursor + 1 < self.subtasks.len() {
            self.cursor += 1;
        }
    }

    /// Numbered list with the current subtask marked.
    pub fn render(&self) -> String {
        self.subtasks
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mark = if i == self.cursor { " (current)" } else { "" };
                format!("{}. {s}{mark}", i + 1)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait Decomposer {
    fn decompose(&self, instruction: &str) -> Result<SubtaskList, AgentError>;
}

static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+(?:\s+|$)").unwrap());
static CLAUSE_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i),?\s*\band then\b|,\s*then\b|;\s").unwrap());

/// Splits on sentence boundaries, then on ", then", "and then" and "; ".
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleDecomposer;

impl Decomposer for RuleDecomposer {
    fn decompose(&self, instruction: &str) -> Result<SubtaskList, AgentError> {
        decompose_instruction(instruction)
    }
}

pub fn decompose_instruction(w: &str) -> Result<SubtaskList, AgentError> {
    if w.trim().is_empty() {
        return Err(AgentError::EmptyInstruction);
    }
    let parts: Vec<String> = SENTENCE_END
        .split(w)
        .flat_map(|sentence| CLAUSE_SPLIT.split(sentence))
        .map(|s| s.trim().trim_end_matches([',', ';']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    SubtaskList::new(parts)
}
