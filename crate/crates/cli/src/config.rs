//! Settings shared by every subcommand.
//!
//! Precedence is flag, then environment variable, then the TOML file named by
//! `--config` (or `DEEPSTRAT_CONFIG`). Clap resolves the first two; anything
//! still unset falls back to the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use deepstrat_core::runtime::ExecutionBudget;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub search: SearchSection,
    pub lm: LmSection,
    pub tools: ToolsSection,
    pub budget: Option<ExecutionBudget>,
    pub service: ServiceSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub key_header: Option<String>,
    pub fetch_pages: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    pub k: Option<usize>,
    pub truncate_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub addr: Option<String>,
    pub store_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub max_attempts: Option<u32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Backend endpoints and tool knobs.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendFlags {
    /// Web-search API endpoint.
    #[arg(long, env = "DEEPSTRAT_SEARCH_ENDPOINT", global = true)]
    pub search_endpoint: Option<String>,
    #[arg(
        long,
        env = "DEEPSTRAT_SEARCH_KEY",
        global = true,
        hide_env_values = true
    )]
    pub search_key: Option<String>,
    /// Chat-completions endpoint of the language model.
    #[arg(long, env = "DEEPSTRAT_LM_ENDPOINT", global = true)]
    pub lm_endpoint: Option<String>,
    #[arg(long, env = "DEEPSTRAT_LM_KEY", global = true, hide_env_values = true)]
    pub lm_key: Option<String>,
    #[arg(long, env = "DEEPSTRAT_LM_MODEL", global = true)]
    pub lm_model: Option<String>,
    /// Results per search.
    #[arg(long, env = "DEEPSTRAT_K", global = true)]
    pub k: Option<usize>,
    /// Tokens kept from each search result.
    #[arg(long, env = "DEEPSTRAT_TRUNCATE_TOKENS", global = true)]
    pub truncate_tokens: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchSettings {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub key_header: String,
    pub fetch_pages: bool,
}

#[derive(Debug, Clone)]
pub struct LmSettings {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub search: Option<SearchSettings>,
    pub lm: Option<LmSettings>,
    pub k: usize,
    pub truncate_tokens: usize,
    pub budget: ExecutionBudget,
    pub addr: String,
    pub store_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub max_attempts: u32,
}

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

impl Settings {
    pub fn resolve(flags: &BackendFlags, file: FileConfig) -> Self {
        let search = flags
            .search_endpoint
            .clone()
            .or(file.search.endpoint)
            .map(|endpoint| SearchSettings {
                endpoint,
                api_key: flags.search_key.clone().or(file.search.api_key),
                key_header: file
                    .search
                    .key_header
                    .unwrap_or_else(|| "Authorization".into()),
                fetch_pages: file.search.fetch_pages.unwrap_or(false),
            });
        let lm = flags
            .lm_endpoint
            .clone()
            .or(file.lm.endpoint)
            .map(|endpoint| LmSettings {
                endpoint,
                api_key: flags.lm_key.clone().or(file.lm.api_key),
                model: flags
                    .lm_model
                    .clone()
                    .or(file.lm.model)
                    .unwrap_or_else(|| DEFAULT_MODEL.into()),
            });
        Self {
            search,
            lm,
            k: flags.k.or(file.tools.k).unwrap_or(5),
            truncate_tokens: flags
                .truncate_tokens
                .or(file.tools.truncate_tokens)
                .unwrap_or(2000),
            budget: file.budget.unwrap_or_default(),
            addr: file.service.addr.unwrap_or_else(|| "127.0.0.1:8080".into()),
            store_dir: file
                .service
                .store_dir
                .unwrap_or_else(|| "deepstrat-store".into()),
            templates_dir: file.service.templates_dir,
            max_attempts: file.service.max_attempts.unwrap_or(3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let file: FileConfig = toml::from_str(
            "[lm]\nendpoint = \"http://file\"\nmodel = \"m\"\n[tools]\nk = 3\n[budget]\nmax_tool_calls = 7\n",
        )
        .unwrap();
        let flags = BackendFlags {
            lm_endpoint: Some("http://flag".into()),
            ..Default::default()
        };
        let s = Settings::resolve(&flags, file);
        let lm = s.lm.unwrap();
        assert_eq!(lm.endpoint, "http://flag");
        assert_eq!(lm.model, "m");
        assert_eq!(s.k, 3);
        assert_eq!(s.budget.max_tool_calls, 7);
        assert_eq!(s.budget.max_lm_input_tokens, 8192);
        assert!(s.search.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[lm]\nendpont = \"x\"\n").is_err());
    }
}
