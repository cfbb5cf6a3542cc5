//! Turns command-line choices into tool backends.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;

use deepstrat_core::tools::{
    load_transcript, ChatCompletionLm, ChatLmConfig, FixtureSearch, LmBackend, LmRequest,
    LmResponse, ScriptedLm, SearchBackend, SearchRequest, SearchResult, ToolConfig, ToolError,
    ToolRegistry, UreqTransport, WebSearch, WebSearchConfig,
};

use deepstrat_service::ToolFactory;

use crate::config::Settings;
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct ToolFlags {
    /// Serve tool calls from a recorded transcript.
    #[arg(long, value_name = "TRANSCRIPT", conflicts_with_all = ["live", "mock_search", "mock_lm"])]
    pub replay: Option<PathBuf>,
    /// Use the configured live search and language-model endpoints.
    #[arg(long)]
    pub live: bool,
    /// Answer searches from a fixture corpus (JSON map of phrase to results).
    #[arg(
        long,
        value_name = "CORPUS",
        requires = "mock_lm",
        conflicts_with = "live"
    )]
    pub mock_search: Option<PathBuf>,
    /// Answer model calls from scripted rules (JSON).
    #[arg(
        long,
        value_name = "RULES",
        requires = "mock_search",
        conflicts_with = "live"
    )]
    pub mock_lm: Option<PathBuf>,
    /// Wait this long inside every tool call, to pace a replay like a live run.
    #[arg(long, value_name = "MS", default_value_t = 0)]
    pub delay_ms: u64,
}

impl ToolFlags {
    /// Resolves the flags into a factory producing fresh backends for each
    /// run. Files are read up front so that a bad path fails before any run.
    pub fn factory(&self, settings: &Settings) -> Result<ToolFactory, CliError> {
        let config = ToolConfig {
            k: settings.k,
            truncate_tokens: settings.truncate_tokens,
            ..ToolConfig::default()
        };
        let make: ToolFactory = if let Some(path) = &self.replay {
            let transcript = load_transcript(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            Arc::new(move || ToolRegistry::replay(&transcript))
        } else if let (Some(corpus), Some(rules)) = (&self.mock_search, &self.mock_lm) {
            let corpus = read(corpus)?;
            let rules = read(rules)?;
            FixtureSearch::from_json(&corpus).map_err(CliError::usage)?;
            ScriptedLm::from_json(&rules).map_err(CliError::usage)?;
            Arc::new(move || {
                ToolRegistry::new(
                    Arc::new(FixtureSearch::from_json(&corpus).expect("checked above")),
                    Arc::new(ScriptedLm::from_json(&rules).expect("checked above")),
                )
            })
        } else if self.live {
            let search = live_search(settings)?;
            let lm = live_lm(settings)?;
            Arc::new(move || ToolRegistry::new(search.clone(), lm.clone()))
        } else {
            return Err(CliError::usage(
                "choose tool backends with --replay, --live or --mock-search/--mock-lm",
            ));
        };
        let delay = Duration::from_millis(self.delay_ms);
        Ok(Arc::new(move || {
            let mut tools = make();
            if !delay.is_zero() {
                tools.search = Arc::new(Paced {
                    inner: tools.search,
                    delay,
                });
                tools.lm = Arc::new(Paced {
                    inner: tools.lm,
                    delay,
                });
            }
            tools.with_config(config)
        }))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn live_search(settings: &Settings) -> Result<Arc<dyn SearchBackend>, CliError> {
    let s = settings
        .search
        .as_ref()
        .ok_or_else(|| CliError::usage("--live needs a search endpoint (--search-endpoint)"))?;
    Ok(Arc::new(WebSearch::new(
        WebSearchConfig {
            endpoint: s.endpoint.clone(),
            api_key: s.api_key.clone(),
            key_header: s.key_header.clone(),
            fetch_pages: s.fetch_pages,
        },
        Arc::new(UreqTransport::default()),
    )))
}

pub fn live_lm(settings: &Settings) -> Result<Arc<dyn LmBackend>, CliError> {
    let l = settings
        .lm
        .as_ref()
        .ok_or_else(|| CliError::usage("a language-model endpoint is required (--lm-endpoint)"))?;
    Ok(Arc::new(ChatCompletionLm::new(
        ChatLmConfig {
            endpoint: l.endpoint.clone(),
            api_key: l.api_key.clone(),
            model: l.model.clone(),
        },
        Arc::new(UreqTransport::default()),
    )))
}

struct Paced<B: ?Sized> {
    inner: Arc<B>,
    delay: Duration,
}

impl SearchBackend for Paced<dyn SearchBackend> {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        std::thread::sleep(self.delay);
        self.inner.search(request)
    }
}

impl LmBackend for Paced<dyn LmBackend> {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        std::thread::sleep(self.delay);
        self.inner.complete(request)
    }
}
