//! Deterministic offline backends for tests, fixtures and dry runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::types::{
    LmBackend, LmRequest, LmResponse, SearchBackend, SearchRequest, SearchResult, ToolError, Usage,
};
use crate::runtime::count_tokens;

/// Language model stand-in that answers from a list of regex rules.
///
/// The first rule whose pattern matches the full request text answers. A
/// rule with several responses returns them in order, repeating the last
/// one once the list is exhausted.
pub struct ScriptedLm {
    rules: Vec<ScriptedRule>,
}

struct ScriptedRule {
    pattern: Regex,
    responses: Vec<String>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
struct RulesFile {
    rules: Vec<RuleSpec>,
}

#[derive(Deserialize)]
struct RuleSpec {
    pattern: String,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    responses: Vec<String>,
}

impl ScriptedLm {
    pub fn new() -> Self {
        Self { rules: Vec::new() }
    }

    /// Adds a rule; panics on an invalid pattern (test and fixture use only).
    pub fn rule(mut self, pattern: &str, responses: &[&str]) -> Self {
        self.rules.push(ScriptedRule {
            pattern: Regex::new(pattern).expect("valid scripted pattern"),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            calls: AtomicUsize::new(0),
        });
        self
    }

    /// Always answers `text`, whatever the request.
    pub fn constant(text: &str) -> Self {
        Self::new().rule("", &[text])
    }

    /// Loads `{"rules":[{"pattern": "...", "responses": ["..."]}]}`.
    /// A single `"response"` string is accepted in place of `"responses"`.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: RulesFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut rules = Vec::new();
        for (i, entry) in file.rules.into_iter().enumerate() {
            let pattern =
                Regex::new(&entry.pattern).map_err(|e| format!("rule {i}: bad pattern: {e}"))?;
            let mut responses = entry.responses;
            if let Some(r) = entry.response {
                responses.insert(0, r);
            }
            if responses.is_empty() {
                return Err(format!("rule {i}: no responses"));
            }
            rules.push(ScriptedRule {
                pattern,
                responses,
                calls: AtomicUsize::new(0),
            });
        }
        Ok(Self { rules })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}

impl Default for ScriptedLm {
    fn default() -> Self {
        Self::new()
    }
}

impl LmBackend for ScriptedLm {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        let text = request.text();
        let rule = self
            .rules
            .iter()
            .find(|r| r.pattern.is_match(&text))
            .ok_or_else(|| ToolError::lm("no scripted response matches the request"))?;
        let n = rule.calls.fetch_add(1, Ordering::SeqCst);
        let answer = rule.responses[n.min(rule.responses.len() - 1)].clone();
        Ok(LmResponse {
            usage: Usage {
                prompt_tokens: count_tokens(&text) as u64,
                completion_tokens: count_tokens(&answer) as u64,
            },
            text: answer,
        })
    }
}

/// Adapts a closure into a language model backend.
pub struct LmFn<F>(pub F);

impl<F> LmBackend for LmFn<F>
where
    F: Fn(&LmRequest) -> Result<String, ToolError> + Send + Sync,
{
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        let text = (self.0)(request)?;
        Ok(LmResponse {
            usage: Usage {
                prompt_tokens: count_tokens(&request.text()) as u64,
                completion_tokens: count_tokens(&text) as u64,
            },
            text,
        })
    }
}

/// Search backend that serves a fixed corpus keyed by exact phrase.
///
/// Corpus file: `{"phrase": [{"title": "...", "url": "...", "content": "..."}]}`.
/// Ranks are assigned from list order.
pub struct FixtureSearch {
    corpus: BTreeMap<String, Vec<SearchResult>>,
}

#[derive(Deserialize)]
struct CorpusItem {
    title: String,
    url: String,
    content: String,
}

impl FixtureSearch {
    pub fn new(corpus: BTreeMap<String, Vec<SearchResult>>) -> Self {
        Self { corpus }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let raw: BTreeMap<String, Vec<CorpusItem>> =
            serde_json::from_str(text).map_err(|e| e.to_string())?;
        let corpus = raw
            .into_iter()
            .map(|(phrase, items)| {
                let results = items
                    .into_iter()
                    .enumerate()
                    .map(|(rank, i)| SearchResult {
                        title: i.title,
                        url: i.url,
                        content: i.content,
                        rank,
                    })
                    .collect();
                (phrase, results)
            })
            .collect();
        Ok(Self { corpus })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}

impl SearchBackend for FixtureSearch {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        let results = self.corpus.get(&request.phrase).ok_or_else(|| {
            ToolError::search(format!("no fixture results for {:?}", request.phrase))
        })?;
        Ok(results.iter().take(request.k).cloned().collect())
    }
}

/// Backend that refuses every call and counts the attempts. Stands in for
/// live network backends where a run must stay offline.
#[derive(Default)]
pub struct OfflineSentinel {
    attempts: AtomicUsize,
    last: Mutex<Option<String>>,
}

impl OfflineSentinel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn last_attempt(&self) -> Option<String> {
        self.last.lock().expect("sentinel lock").clone()
    }

    pub(crate) fn refuse_http(&self, method: &str, url: &str) -> String {
        self.refuse(format!("{method} {url}"))
    }

    fn refuse(&self, what: String) -> String {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let msg = format!("network access attempted in offline mode: {what}");
        *self.last.lock().expect("sentinel lock") = Some(what);
        msg
    }
}

impl SearchBackend for OfflineSentinel {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        Err(ToolError::search(
            self.refuse(format!("search {:?}", request.phrase)),
        ))
    }
}

impl LmBackend for OfflineSentinel {
    fn complete(&self, _request: &LmRequest) -> Result<LmResponse, ToolError> {
        Err(ToolError::lm(self.refuse("llm completion".into())))
    }
}
