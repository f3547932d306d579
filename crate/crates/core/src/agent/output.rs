//! Tagged model output: `<recall>`, `<observe>`, `<decide>` and `<action>` sections.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::ActionType;

pub const TAGS: [&str; 4] = ["recall", "observe", "decide", "action"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no <action> section in model output")]
    MissingActionTag,
    #[error("`{0}` is not one of FORWARD, LEFT_ROTATE, RIGHT_ROTATE, STOP")]
    InvalidAction(String),
    #[error("no <{0}> section in model output")]
    MissingSection(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    /// Missing recall/observe/decide sections become empty strings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub raw: String,
    pub action: ActionType,
    /// Contents of `<recall>`.
    pub memory_thought: String,
    /// Contents of `<decide>`.
    pub decision_thought: String,
    /// Contents of `<observe>`.
    pub observation_thought: String,
}

static SECTION: LazyLock<[Regex; 4]> = LazyLock::new(|| {
    TAGS.map(|t| Regex::new(&format!(r"(?s)<{t}>(.*?)</{t}>")).unwrap())
});

fn section(raw: &str, idx: usize) -> Option<&str> {
    SECTION[idx].captures(raw).map(|c| c.get(1).unwrap().as_str())
}

/// Upper-cases and joins words with `_`, so `left rotate` and `Left-Rotate` both match.
fn normalize_action(s: &str) -> String {
    s.trim()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("_")
        .to_uppercase()
}

/// First occurrence of each tag wins.
pub fn parse_output(raw: &str, mode: ParseMode) -> Result<ModelOutput, ParseError> {
    let action_text = section(raw, 3).ok_or(ParseError::MissingActionTag)?;
    let action = ActionType::from_name(&normalize_action(action_text))
        .ok_or_else(|| ParseError::InvalidAction(action_text.trim().to_string()))?;
    let mut texts = [""; 3];
    for (i, slot) in texts.iter_mut().enumerate() {
        match (section(raw, i), mode) {
            (Some(s), _) => *slot = s,
            (None, ParseMode::Lenient) => {}
            (None, ParseMode::Strict) => return Err(ParseError::MissingSection(TAGS[i])),
        }
    }
    Ok(ModelOutput {
        raw: raw.to_string(),
        action,
        memory_thought: texts[0].to_string(),
        observation_thought: texts[1].to_string(),
        decision_thought: texts[2].to_string(),
    })
}

/// Inverse of [`parse_output`] for texts free of tag literals.
pub fn compose_output(recall: &str, observe: &str, decide: &str, action: ActionType) -> String {
    format!(
        "<recall>{recall}</recall><observe>{observe}</observe><decide>{decide}</decide><action>{}</action>",
        action.name()
    )
}
