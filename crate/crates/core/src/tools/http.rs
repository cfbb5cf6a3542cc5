//! Live backends: a web-search HTTP API with page text extraction, and a
//! chat-completion style language model endpoint.
//!
//! Both go through [`HttpTransport`], so tests and offline runs can swap in
//! a transport that never opens a socket.

use std::sync::Arc;
use std::time::Duration;

use scraper::{ElementRef, Html, Node, Selector};
use serde_json::{json, Value as Json};

use super::mock::OfflineSentinel;
use super::types::{
    LmBackend, LmRequest, LmResponse, SearchBackend, SearchRequest, SearchResult, ToolError, Usage,
};

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, headers: &[(String, String)]) -> Result<HttpResponse, String>;
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Json,
    ) -> Result<HttpResponse, String>;
}

/// Blocking transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new()
                .timeout(timeout)
                .user_agent(concat!("deepstrat/", env!("CARGO_PKG_VERSION")))
                .build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

fn finish(result: Result<ureq::Response, ureq::Error>) -> Result<HttpResponse, String> {
    match result {
        Ok(resp) => {
            let status = resp.status();
            let body = resp.into_string().map_err(|e| e.to_string())?;
            Ok(HttpResponse { status, body })
        }
        Err(ureq::Error::Status(status, resp)) => Ok(HttpResponse {
            status,
            body: resp.into_string().unwrap_or_default(),
        }),
        Err(e) => Err(e.to_string()),
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, headers: &[(String, String)]) -> Result<HttpResponse, String> {
        let mut req = self.agent.get(url);
        for (k, v) in headers {
            req = req.set(k, v);
        }
        finish(req.call())
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Json,
    ) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.set(k, v);
        }
        finish(req.send_json(body.clone()))
    }
}

impl HttpTransport for OfflineSentinel {
    fn get(&self, url: &str, _headers: &[(String, String)]) -> Result<HttpResponse, String> {
        Err(self.refuse_http("GET", url))
    }

    fn post_json(
        &self,
        url: &str,
        _headers: &[(String, String)],
        _body: &Json,
    ) -> Result<HttpResponse, String> {
        Err(self.refuse_http("POST", url))
    }
}

#[derive(Debug, Clone)]
pub struct WebSearchConfig {
    /// Search endpoint; the query is sent as `q` and the result count as `count`.
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Header carrying the key; `Authorization` values get a `Bearer ` prefix.
    pub key_header: String,
    /// Fetch each result page and extract its text instead of using the
    /// snippet returned by the API.
    pub fetch_pages: bool,
}

/// Generic web-search adapter.
///
/// Accepts responses shaped as `{"results": [...]}`, `{"web": {"results": [...]}}`
/// or `{"organic": [...]}`, where each item has `title`, `url` (or `link`) and
/// optionally `content`, `description` or `snippet`.
pub struct WebSearch {
    config: WebSearchConfig,
    transport: Arc<dyn HttpTransport>,
}

impl WebSearch {
    pub fn new(config: WebSearchConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self { config, transport }
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut h = vec![("Accept".to_string(), "application/json".to_string())];
        if let Some(key) = &self.config.api_key {
            let value = if self.config.key_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            h.push((self.config.key_header.clone(), value));
        }
        h
    }
}

impl SearchBackend for WebSearch {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        let mut url = url::Url::parse(&self.config.endpoint)
            .map_err(|e| ToolError::search(format!("bad endpoint: {e}")))?;
        url.query_pairs_mut()
            .append_pair("q", &request.phrase)
            .append_pair("count", &request.k.to_string());
        let resp = self
            .transport
            .get(url.as_str(), &self.headers())
            .map_err(ToolError::search)?;
        if !(200..300).contains(&resp.status) {
            return Err(ToolError::SearchBackend {
                status: Some(resp.status),
                message: truncate_for_error(&resp.body),
            });
        }
        let body: Json = serde_json::from_str(&resp.body)
            .map_err(|e| ToolError::search(format!("malformed search response: {e}")))?;
        let mut results = parse_search_items(&body);
        results.truncate(request.k);
        if self.config.fetch_pages {
            for r in &mut results {
                if let Ok(page) = self.transport.get(&r.url, &[]) {
                    if (200..300).contains(&page.status) {
                        let text = extract_page_text(&page.body);
                        if !text.is_empty() {
                            r.content = text;
                        }
                    }
                }
            }
        }
        Ok(results)
    }
}

fn parse_search_items(body: &Json) -> Vec<SearchResult> {
    let items = body
        .get("results")
        .or_else(|| body.get("web").and_then(|w| w.get("results")))
        .or_else(|| body.get("organic"))
        .and_then(Json::as_array)
        .cloned()
        .unwrap_or_default();
    let field = |item: &Json, keys: &[&str]| {
        keys.iter()
            .find_map(|k| item.get(*k).and_then(Json::as_str))
            .unwrap_or_default()
            .to_string()
    };
    items
        .iter()
        .filter_map(|item| {
            let url = field(item, &["url", "link"]);
            if url.is_empty() {
                return None;
            }
            Some((
                field(item, &["title"]),
                url,
                field(item, &["content", "description", "snippet"]),
            ))
        })
        .enumerate()
        .map(|(rank, (title, url, content))| SearchResult {
            title,
            url,
            content,
            rank,
        })
        .collect()
}

const SKIPPED_ELEMENTS: [&str; 9] = [
    "script", "style", "noscript", "nav", "header", "footer", "aside", "form", "svg",
];
const BLOCK_ELEMENTS: [&str; 12] = [
    "p",
    "li",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "pre",
    "blockquote",
    "td",
    "th",
];

/// Extracts readable text from an HTML page: block-level text from the
/// `<main>`/`<article>` element when present (else `<body>`), skipping
/// navigation and scripts, one paragraph per block.
pub fn extract_page_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let root = ["main", "article", "body"].iter().find_map(|sel| {
        doc.select(&Selector::parse(sel).expect("static selector"))
            .next()
    });
    let Some(root) = root else {
        return String::new();
    };
    let mut paragraphs = Vec::new();
    collect_blocks(root, &mut paragraphs);
    if paragraphs.is_empty() {
        let mut text = String::new();
        collect_text(root, &mut text);
        let text = collapse_whitespace(&text);
        if !text.is_empty() {
            paragraphs.push(text);
        }
    }
    paragraphs.join("\n\n")
}

fn collect_blocks(el: ElementRef<'_>, out: &mut Vec<String>) {
    for child in el.children() {
        let Some(child) = ElementRef::wrap(child) else {
            continue;
        };
        let name = child.value().name();
        if SKIPPED_ELEMENTS.contains(&name) {
            continue;
        }
        if BLOCK_ELEMENTS.contains(&name) {
            let mut text = String::new();
            collect_text(child, &mut text);
            let text = collapse_whitespace(&text);
            if !text.is_empty() {
                out.push(text);
            }
        } else {
            collect_blocks(child, out);
        }
    }
}

fn collect_text(el: ElementRef<'_>, out: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) if !SKIPPED_ELEMENTS.contains(&e.name()) => {
                if let Some(child) = ElementRef::wrap(child) {
                    collect_text(child, out);
                    out.push(' ');
                }
            }
            _ => {}
        }
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn truncate_for_error(body: &str) -> String {
    let mut s: String = body.chars().take(300).collect();
    if body.chars().count() > 300 {
        s.push('…');
    }
    s
}

#[derive(Debug, Clone)]
pub struct ChatLmConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
}

/// Language model reached through an OpenAI-compatible chat-completions API.
pub struct ChatCompletionLm {
    config: ChatLmConfig,
    transport: Arc<dyn HttpTransport>,
}

impl ChatCompletionLm {
    pub fn new(config: ChatLmConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self { config, transport }
    }
}

impl LmBackend for ChatCompletionLm {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.text() }],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.config.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let resp = self
            .transport
            .post_json(&self.config.endpoint, &headers, &body)
            .map_err(ToolError::lm)?;
        if !(200..300).contains(&resp.status) {
            return Err(ToolError::LmBackend {
                status: Some(resp.status),
                message: truncate_for_error(&resp.body),
            });
        }
        let parsed: Json = serde_json::from_str(&resp.body)
            .map_err(|e| ToolError::lm(format!("malformed completion response: {e}")))?;
        let text = parsed
            .pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .ok_or_else(|| ToolError::lm("completion response has no choices[0].message.content"))?
            .to_string();
        let usage = Usage {
            prompt_tokens: parsed
                .pointer("/usage/prompt_tokens")
                .and_then(Json::as_u64)
                .unwrap_or(0),
            completion_tokens: parsed
                .pointer("/usage/completion_tokens")
                .and_then(Json::as_u64)
                .unwrap_or(0),
        };
        Ok(LmResponse { text, usage })
    }
}
