//! The effectful surface reachable from scripts: web search and a language
//! model, each available live, recorded, replayed or mocked.

mod http;
mod mock;
mod transcript;
mod types;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::{
    extract_page_text, ChatCompletionLm, ChatLmConfig, HttpResponse, HttpTransport, UreqTransport,
    WebSearch, WebSearchConfig,
};
pub use mock::{FixtureSearch, LmFn, OfflineSentinel, ScriptedLm};
pub use transcript::{
    counts_by_tool, load_transcript, tool_sequence, Recorder, RecordingLm, RecordingSearch, Replay,
    ToolRequest, ToolResponse, ToolTranscript, TranscriptEntry, TranscriptError, TranscriptMode,
};
pub use types::{
    LmBackend, LmRequest, LmResponse, SearchBackend, SearchRequest, SearchResult, ToolError, Usage,
};

use crate::lang::ToolName;
use crate::runtime::truncate_to_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    /// Results requested per search.
    pub k: usize,
    /// Each result's content is cut to this many tokens before it reaches
    /// the script.
    pub truncate_tokens: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            k: 5,
            truncate_tokens: 2000,
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

/// The pair of backends one session talks to, plus the per-call knobs.
#[derive(Clone)]
pub struct ToolRegistry {
    pub search: Arc<dyn SearchBackend>,
    pub lm: Arc<dyn LmBackend>,
    pub config: ToolConfig,
}

impl ToolRegistry {
    pub fn new(search: Arc<dyn SearchBackend>, lm: Arc<dyn LmBackend>) -> Self {
        Self {
            search,
            lm,
            config: ToolConfig::default(),
        }
    }

    pub fn with_config(mut self, config: ToolConfig) -> Self {
        self.config = config;
        self
    }

    /// Replays both tools from one transcript.
    pub fn replay(transcript: &ToolTranscript) -> Self {
        let replay = Replay::new(transcript);
        Self::new(replay.clone(), replay)
    }

    /// Runs a search, keeping at most `k` results (the configured default
    /// when `None`) and truncating each result's content.
    pub fn search(&self, phrase: &str, k: Option<usize>) -> Result<Vec<SearchResult>, ToolError> {
        let k = k.unwrap_or(self.config.k);
        if phrase.trim().is_empty() {
            return Err(ToolError::InvalidRequest {
                tool: ToolName::Search,
                message: "search phrase is empty".into(),
            });
        }
        if k == 0 {
            return Err(ToolError::InvalidRequest {
                tool: ToolName::Search,
                message: "k must be at least 1".into(),
            });
        }
        let mut results = self.search.search(&SearchRequest {
            phrase: phrase.to_string(),
            k,
        })?;
        results.truncate(k);
        for r in &mut results {
            truncate_to_tokens(&mut r.content, self.config.truncate_tokens);
        }
        Ok(results)
    }

    /// Builds the request a script's `llm(instruction, context)` call sends.
    pub fn lm_request(&self, instruction: &str, context: &str) -> LmRequest {
        LmRequest {
            instruction: instruction.to_string(),
            context: context.to_string(),
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
        }
    }

    pub fn llm_complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        llm_complete(self.lm.as_ref(), request)
    }
}

/// Sends `request` to `lm`, rejecting an empty instruction up front.
pub fn llm_complete(lm: &dyn LmBackend, request: &LmRequest) -> Result<LmResponse, ToolError> {
    if request.instruction.trim().is_empty() {
        return Err(ToolError::InvalidRequest {
            tool: ToolName::Llm,
            message: "instruction is empty".into(),
        });
    }
    lm.complete(request)
}

/// Wraps both backends of `tools` so that every call is recorded.
pub fn record_session(tools: &ToolRegistry, recorder: Arc<Recorder>) -> ToolRegistry {
    ToolRegistry {
        search: Arc::new(RecordingSearch {
            inner: tools.search.clone(),
            recorder: recorder.clone(),
        }),
        lm: Arc::new(RecordingLm {
            inner: tools.lm.clone(),
            recorder,
        }),
        config: tools.config,
    }
}
