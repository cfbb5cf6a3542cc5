use serde::{Deserialize, Serialize};

use crate::lang::ToolName;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub phrase: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    /// Extracted page body.
    pub content: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub instruction: String,
    /// Text appended after the instruction; empty when the call has none.
    #[serde(default)]
    pub context: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LmRequest {
    pub fn new(instruction: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            context: context.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }

    /// The full text sent to the model: the instruction, then a blank line
    /// and the context when there is one.
    pub fn text(&self) -> String {
        if self.context.is_empty() {
            self.instruction.clone()
        } else {
            format!("{}\n\n{}", self.instruction, self.context)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("search backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    SearchBackend {
        status: Option<u16>,
        message: String,
    },
    #[error("language model backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    LmBackend {
        status: Option<u16>,
        message: String,
    },
    #[error("replay miss: no recorded {tool} call for {summary} (hash {hash}; nearest recorded hash {})", nearest.as_deref().unwrap_or("none"))]
    ReplayMiss {
        tool: ToolName,
        summary: String,
        hash: String,
        nearest: Option<String>,
    },
    #[error("invalid {tool} request: {message}")]
    InvalidRequest { tool: ToolName, message: String },
}

impl ToolError {
    pub fn search(message: impl Into<String>) -> Self {
        ToolError::SearchBackend {
            status: None,
            message: message.into(),
        }
    }

    pub fn lm(message: impl Into<String>) -> Self {
        ToolError::LmBackend {
            status: None,
            message: message.into(),
        }
    }
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError>;
}

pub trait LmBackend: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError>;
}

impl<T: SearchBackend + ?Sized> SearchBackend for std::sync::Arc<T> {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        (**self).search(request)
    }
}

impl<T: LmBackend + ?Sized> LmBackend for std::sync::Arc<T> {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        (**self).complete(request)
    }
}
