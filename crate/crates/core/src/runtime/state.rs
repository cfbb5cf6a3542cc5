use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::value::Value;
use crate::lang::ToolName;

/// Where a source cited by the final report came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub title: String,
    pub url: String,
}

/// Everything a running script knows. All intermediate research text lives
/// in `variables`; language model calls see only what a script passes them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutionState {
    pub variables: BTreeMap<String, Value>,
    /// Step label of the statement being executed.
    pub step_cursor: Option<String>,
    pub accumulated_context_bytes: usize,
    pub tool_call_counts: BTreeMap<ToolName, u64>,
    pub foreach_iterations: u64,
    /// Variables whose value is derived from search results.
    pub search_derived: BTreeSet<String>,
    /// Text variables that search-result content has been appended to, in
    /// the order they first received it.
    pub context_variables: Vec<String>,
    /// Number of search-result items appended to context variables.
    pub appended_results: u64,
    /// Distinct sources returned by searches, in first-seen order.
    pub sources: Vec<Source>,
}

impl ExecutionState {
    pub fn with_prompt(prompt: &str) -> Self {
        let mut s = Self::default();
        s.set(crate::lang::PROMPT_VAR, Value::Text(prompt.to_string()));
        s
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.variables.get(name)
    }

    /// Binds `name`, keeping `accumulated_context_bytes` in step.
    pub fn set(&mut self, name: &str, value: Value) {
        let added = value.text_bytes();
        if let Some(old) = self.variables.insert(name.to_string(), value) {
            self.accumulated_context_bytes -= old.text_bytes();
        }
        self.accumulated_context_bytes += added;
        debug_assert_eq!(self.accumulated_context_bytes, self.recompute_bytes());
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        let old = self.variables.remove(name)?;
        self.accumulated_context_bytes -= old.text_bytes();
        Some(old)
    }

    pub fn recompute_bytes(&self) -> usize {
        self.variables.values().map(Value::text_bytes).sum()
    }

    pub fn total_tool_calls(&self) -> u64 {
        self.tool_call_counts.values().sum()
    }

    pub fn tool_calls(&self, tool: ToolName) -> u64 {
        self.tool_call_counts.get(&tool).copied().unwrap_or(0)
    }

    /// Non-empty context variables, skipping any whose text is already
    /// contained in an earlier pick (e.g. a per-round store that has been
    /// merged into a global one).
    pub fn context_texts(&self) -> Vec<(&str, &str)> {
        let mut candidates: Vec<(&str, &str)> = self
            .context_variables
            .iter()
            .filter_map(|name| match self.variables.get(name) {
                Some(Value::Text(t)) if !t.is_empty() => Some((name.as_str(), t.as_str())),
                _ => None,
            })
            .collect();
        // Longest first so that contained stores are dropped in favour of
        // the store that contains them.
        candidates.sort_by_key(|(_, t)| std::cmp::Reverse(t.len()));
        let mut picked: Vec<(&str, &str)> = Vec::new();
        for (name, text) in candidates {
            if !picked.iter().any(|(_, p)| p.contains(text)) {
                picked.push((name, text));
            }
        }
        let order = |n: &str| self.context_variables.iter().position(|c| c == n);
        picked.sort_by_key(|(n, _)| order(n));
        picked
    }

    pub fn note_source(&mut self, title: &str, url: &str) {
        if !self.sources.iter().any(|s| s.url == url) {
            self.sources.push(Source {
                title: title.to_string(),
                url: url.to_string(),
            });
        }
    }
}
