//! Decision layer: instruction decomposition, prompt assembly, decision policies and
//! parsing of tagged model output.

mod decompose;
mod output;
mod policy;
mod prompt;
mod remote;

pub use decompose::*;
pub use output::*;
pub use policy::*;
pub use prompt::*;
pub use remote::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("unresolved placeholder `{{{{{0}}}}}`")]
    UnresolvedPlaceholder(String),
    #[error("malformed prompt template: {0}")]
    TemplateFormat(String),
    #[error("request needs at least one recent frame")]
    NoFrames,
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("model returned no usable text: {0}")]
    ModelRefusal(String),
    #[error("policy misconfigured: {0}")]
    Config(String),
}
