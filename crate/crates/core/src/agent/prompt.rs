use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use regex::{Captures, Regex};
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use super::{AgentError, SubtaskList};
use crate::geometry::{Frame, Image};
use crate::imageio::png_base64;
use crate::simulator::ActionType;

pub const PLACEHOLDERS: [&str; 4] = ["instruction", "subtasks", "history", "step"];

pub const DEFAULT_TEMPLATE: &str = include_str!("../../templates/default_prompt.txt");

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap());

/// System and user text with `{{name}}` placeholders. On disk the two sections are separated
/// by a line containing only `---`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_text: String,
    pub user_text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Result<Self, AgentError> {
        let t = Self { system_text: system_text.into(), user_text: user_text.into() };
        t.check()?;
        Ok(t)
    }

    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen_sep = false;
        for line in text.lines() {
            if !seen_sep && line.trim() == "---" {
                seen_sep = true;
            } else if seen_sep {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen_sep {
            return Err(AgentError::TemplateFormat("missing `---` separator line".into()));
        }
        Self::new(system.join("\n").trim().to_string(), user.join("\n").trim().to_string())
    }

    fn check(&self) -> Result<(), AgentError> {
        for text in [&self.system_text, &self.user_text] {
            for c in PLACEHOLDER.captures_iter(text) {
                let name = &c[1];
                if !PLACEHOLDERS.contains(&name) {
                    return Err(AgentError::UnresolvedPlaceholder(name.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Single-pass substitution: placeholder-like text inside values is not expanded again.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<(String, String), AgentError> {
        let fill = |text: &str| -> Result<String, AgentError> {
            let mut missing = None;
            let out = PLACEHOLDER.replace_all(text, |c: &Captures| match values.get(&c[1]) {
                Some(v) => v.clone(),
                None => {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                }
            });
            match missing {
                Some(name) => Err(AgentError::UnresolvedPlaceholder(name)),
                None => Ok(out.into_owned()),
            }
        };
        Ok((fill(&self.system_text)?, fill(&self.user_text)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRole {
    Memory,
    Frame,
}

/// One message part. Images are PNG-encoded lazily, at serialization time.
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image { role: ImageRole, image: Arc<Image> },
}

impl Serialize for Part {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        match self {
            Part::Text(t) => {
                m.serialize_entry("type", "text")?;
                m.serialize_entry("data", t)?;
            }
            Part::Image { image, .. } => {
                let b64 = png_base64(image).map_err(serde::ser::Error::custom)?;
                m.serialize_entry("type", "image")?;
                m.serialize_entry("data", &b64)?;
            }
        }
        m.end()
    }
}

/// Wire body of `POST /decide`: `{system, parts: [{type, data}]}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRequest {
    pub system: String,
    pub parts: Vec<Part>,
}

impl ModelRequest {
    pub fn attachments(&self) -> impl Iterator<Item = (ImageRole, &Image)> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image { role, image } => Some((*role, image.as_ref())),
            Part::Text(_) => None,
        })
    }

    pub fn memory_attachments(&self) -> usize {
        self.attachments().filter(|(r, _)| *r == ImageRole::Memory).count()
    }

    pub fn frame_attachments(&self) -> usize {
        self.attachments().filter(|(r, _)| *r == ImageRole::Frame).count()
    }

    pub fn to_json(&self) -> Result<Vec<u8>, serde_json::Error> {
        serde_json::to_vec(self)
    }
}

/// Everything the decision model sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct RequestInputs<'a> {
    pub instruction: &'a str,
    pub subtasks: &'a SubtaskList,
    pub memory: &'a [Arc<Image>],
    pub recent_frames: &'a [Arc<Frame>],
    pub history: &'a [ActionType],
    pub step: usize,
    /// Number of most recent frames attached.
    pub history_window: usize,
}

fn history_text(history: &[ActionType]) -> String {
    if history.is_empty() {
        return "none".to_string();
    }
    history.iter().enumerate().map(|(t, a)| format!("t={t} {a}")).collect::<Vec<_>>().join(", ")
}

/// Memory images first (labeled as spatial memory), then the last `history_window` frames,
/// then the rendered user text.
pub fn build_request(p: &PromptTemplate, input: &RequestInputs<'_>) -> Result<ModelRequest, AgentError> {
    if input.recent_frames.is_empty() {
        return Err(AgentError::NoFrames);
    }
    let values = BTreeMap::from([
        ("instruction", input.instruction.to_string()),
        ("subtasks", input.subtasks.render()),
        ("history", history_text(input.history)),
        ("step", input.step.to_string()),
    ]);
    let (system, user) = p.render(&values)?;

    let mut parts = Vec::new();
    if !input.memory.is_empty() {
        parts.push(Part::Text(format!(
            "Spatial memory of this scene ({} image{}), rendered from an earlier reconstruction:",
            input.memory.len(),
            if input.memory.len() == 1 { "" } else { "s" }
        )));
        for m in input.memory {
            parts.push(Part::Image { role: ImageRole::Memory, image: m.clone() });
        }
    }
    let window = input.history_window.max(1);
    let frames = &input.recent_frames[input.recent_frames.len().saturating_sub(window)..];
    parts.push(Part::Text(format!("Front camera, last {} frame(s), oldest first:", frames.len())));
    for f in frames {
        parts.push(Part::Image { role: ImageRole::Frame, image: Arc::new(f.image.clone()) });
    }
    parts.push(Part::Text(user));
    Ok(ModelRequest { system, parts })
}
