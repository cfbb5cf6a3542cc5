//! Recorded tool traffic and the record/replay backends built on it.
//!
//! A transcript file holds one JSON object per line:
//!
//! ```text
//! {"seq":0,"tool":"search","request_hash":"…","request":{…},"response":{…}}
//! ```
//!
//! The request hash is the lowercase hex SHA-256 of the tool name, a line
//! feed, and the compact JSON serialization (keys sorted) of the hashed
//! request fields. Search hashes cover only `phrase`, so a recording made
//! with one `k` can be replayed with a smaller one.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use super::types::{
    LmBackend, LmRequest, LmResponse, SearchBackend, SearchRequest, SearchResult, ToolError,
};
use crate::lang::ToolName;

#[derive(Debug, Clone, PartialEq)]
pub enum ToolRequest {
    Search(SearchRequest),
    Llm(LmRequest),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolResponse {
    Search(Vec<SearchResult>),
    Llm(LmResponse),
}

impl ToolRequest {
    pub fn tool(&self) -> ToolName {
        match self {
            ToolRequest::Search(_) => ToolName::Search,
            ToolRequest::Llm(_) => ToolName::Llm,
        }
    }

    /// Short human-readable description used in replay-miss errors.
    pub fn summary(&self) -> String {
        match self {
            ToolRequest::Search(r) => format!("phrase {:?}", r.phrase),
            ToolRequest::Llm(r) => {
                let head: String = r.instruction.chars().take(60).collect();
                format!("instruction starting {head:?}")
            }
        }
    }

    fn hashed_fields(&self) -> Json {
        match self {
            ToolRequest::Search(r) => json!({ "phrase": r.phrase }),
            ToolRequest::Llm(r) => json!({
                "context": r.context,
                "instruction": r.instruction,
                "max_output_tokens": r.max_output_tokens,
                "temperature": r.temperature,
            }),
        }
    }

    pub fn canonical_hash(&self) -> String {
        // serde_json's default map is ordered, so keys serialize sorted.
        let body = serde_json::to_string(&self.hashed_fields()).expect("request serializes");
        let mut h = Sha256::new();
        h.update(self.tool().as_str().as_bytes());
        h.update(b"\n");
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub request_hash: String,
    pub request: ToolRequest,
    pub response: ToolResponse,
}

impl TranscriptEntry {
    pub fn tool(&self) -> ToolName {
        self.request.tool()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolTranscript {
    pub entries: Vec<TranscriptEntry>,
    pub mode: TranscriptMode,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript record {index}: {message}")]
    Format { index: usize, message: String },
    #[error("transcript is empty")]
    Empty,
    #[error("{path} already exists (pass --force to overwrite)")]
    Exists { path: String },
    #[error("transcript io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Record {
    seq: u64,
    tool: ToolName,
    request_hash: String,
    request: Json,
    response: Json,
}

#[derive(Serialize, Deserialize)]
struct SearchResponseRecord {
    results: Vec<SearchResult>,
}

impl TranscriptEntry {
    fn to_record(&self) -> Record {
        let (request, response) = match (&self.request, &self.response) {
            (ToolRequest::Search(q), ToolResponse::Search(r)) => (
                serde_json::to_value(q),
                serde_json::to_value(SearchResponseRecord { results: r.clone() }),
            ),
            (ToolRequest::Llm(q), ToolResponse::Llm(r)) => {
                (serde_json::to_value(q), serde_json::to_value(r))
            }
            _ => unreachable!("entry request and response kinds always agree"),
        };
        Record {
            seq: self.seq,
            tool: self.tool(),
            request_hash: self.request_hash.clone(),
            request: request.expect("request serializes"),
            response: response.expect("response serializes"),
        }
    }

    fn from_record(index: usize, rec: Record) -> Result<Self, TranscriptError> {
        let bad = |message: String| TranscriptError::Format { index, message };
        let (request, response) = match rec.tool {
            ToolName::Search => {
                let q: SearchRequest = serde_json::from_value(rec.request)
                    .map_err(|e| bad(format!("request: {e}")))?;
                let r: SearchResponseRecord = serde_json::from_value(rec.response)
                    .map_err(|e| bad(format!("response: {e}")))?;
                (ToolRequest::Search(q), ToolResponse::Search(r.results))
            }
            ToolName::Llm => {
                let q: LmRequest = serde_json::from_value(rec.request)
                    .map_err(|e| bad(format!("request: {e}")))?;
                let r: LmResponse = serde_json::from_value(rec.response)
                    .map_err(|e| bad(format!("response: {e}")))?;
                (ToolRequest::Llm(q), ToolResponse::Llm(r))
            }
        };
        let expected = request.canonical_hash();
        if expected != rec.request_hash {
            return Err(bad(format!(
                "request_hash {} does not match request (expected {expected})",
                rec.request_hash
            )));
        }
        Ok(TranscriptEntry {
            seq: rec.seq,
            request_hash: rec.request_hash,
            request,
            response,
        })
    }
}

impl ToolTranscript {
    pub fn new(mode: TranscriptMode) -> Self {
        Self {
            entries: Vec::new(),
            mode,
        }
    }

    pub fn count(&self, tool: ToolName) -> usize {
        self.entries.iter().filter(|e| e.tool() == tool).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&e.to_record()).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses transcript text. Blank lines are ignored; a file with no
    /// records is an error.
    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let index = entries.len();
            let rec: Record = serde_json::from_str(line).map_err(|e| TranscriptError::Format {
                index,
                message: e.to_string(),
            })?;
            if rec.seq != index as u64 {
                return Err(TranscriptError::Format {
                    index,
                    message: format!("seq {} out of order (expected {index})", rec.seq),
                });
            }
            entries.push(TranscriptEntry::from_record(index, rec)?);
        }
        if entries.is_empty() {
            return Err(TranscriptError::Format {
                index: 0,
                message: "transcript contains no records".into(),
            });
        }
        Ok(Self {
            entries,
            mode: TranscriptMode::Replay,
        })
    }

    /// Writes the transcript; refuses an empty transcript and, unless
    /// `force` is set, an existing file.
    pub fn save(&self, path: &Path, force: bool) -> Result<(), TranscriptError> {
        if self.entries.is_empty() {
            return Err(TranscriptError::Empty);
        }
        if path.exists() && !force {
            return Err(TranscriptError::Exists {
                path: path.display().to_string(),
            });
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a transcript file for replay.
pub fn load_transcript(path: &Path) -> Result<ToolTranscript, TranscriptError> {
    let file = File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    ToolTranscript::from_jsonl(&text)
}

/// Serves recorded responses. Each recorded entry is used at most once;
/// requests with the same hash consume entries in recording order.
pub struct Replay {
    entries: Vec<TranscriptEntry>,
    consumed: Mutex<Vec<bool>>,
}

impl Replay {
    pub fn new(transcript: &ToolTranscript) -> Arc<Self> {
        Arc::new(Self {
            consumed: Mutex::new(vec![false; transcript.entries.len()]),
            entries: transcript.entries.clone(),
        })
    }

    fn take(&self, request: &ToolRequest) -> Result<&ToolResponse, ToolError> {
        let hash = request.canonical_hash();
        let tool = request.tool();
        let mut consumed = self.consumed.lock().expect("replay lock");
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !consumed[*i] && e.tool() == tool && e.request_hash == hash);
        if let Some((i, e)) = hit {
            consumed[i] = true;
            return Ok(&e.response);
        }
        let nearest = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !consumed[*i] && e.tool() == tool)
            .or_else(|| {
                self.entries
                    .iter()
                    .enumerate()
                    .find(|(_, e)| e.tool() == tool)
            })
            .map(|(_, e)| e.request_hash.clone());
        Err(ToolError::ReplayMiss {
            tool,
            summary: request.summary(),
            hash,
            nearest,
        })
    }
}

impl SearchBackend for Replay {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        match self.take(&ToolRequest::Search(request.clone()))? {
            ToolResponse::Search(results) => Ok(results.iter().take(request.k).cloned().collect()),
            ToolResponse::Llm(_) => unreachable!("hash lookup is per tool"),
        }
    }
}

impl LmBackend for Replay {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        match self.take(&ToolRequest::Llm(request.clone()))? {
            ToolResponse::Llm(r) => Ok(r.clone()),
            ToolResponse::Search(_) => unreachable!("hash lookup is per tool"),
        }
    }
}

/// Shared append-only log that record-mode backends write into. When a
/// sink path is attached, each entry is also appended to that file as it
/// arrives.
#[derive(Default)]
pub struct Recorder {
    inner: Mutex<RecorderInner>,
}

#[derive(Default)]
struct RecorderInner {
    entries: Vec<TranscriptEntry>,
    sink: Option<BufWriter<File>>,
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Streams each entry to `path` (created fresh) as it is recorded.
    pub fn with_sink(path: &Path) -> Result<Arc<Self>, TranscriptError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Arc::new(Self {
            inner: Mutex::new(RecorderInner {
                entries: Vec::new(),
                sink: Some(BufWriter::new(file)),
            }),
        }))
    }

    fn push(&self, request: ToolRequest, response: ToolResponse) {
        let mut inner = self.inner.lock().expect("recorder lock");
        let entry = TranscriptEntry {
            seq: inner.entries.len() as u64,
            request_hash: request.canonical_hash(),
            request,
            response,
        };
        if let Some(w) = inner.sink.as_mut() {
            let line = serde_json::to_string(&entry.to_record()).expect("record serializes");
            let _ = writeln!(w, "{line}").and_then(|_| w.flush());
        }
        inner.entries.push(entry);
    }

    pub fn transcript(&self) -> ToolTranscript {
        ToolTranscript {
            entries: self.inner.lock().expect("recorder lock").entries.clone(),
            mode: TranscriptMode::Record,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("recorder lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a live search backend and records every successful call.
pub struct RecordingSearch<B> {
    pub inner: B,
    pub recorder: Arc<Recorder>,
}

impl<B: SearchBackend> SearchBackend for RecordingSearch<B> {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        let results = self.inner.search(request)?;
        self.recorder.push(
            ToolRequest::Search(request.clone()),
            ToolResponse::Search(results.clone()),
        );
        Ok(results)
    }
}

/// Wraps a live language model backend and records every successful call.
pub struct RecordingLm<B> {
    pub inner: B,
    pub recorder: Arc<Recorder>,
}

impl<B: LmBackend> LmBackend for RecordingLm<B> {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        let response = self.inner.complete(request)?;
        self.recorder.push(
            ToolRequest::Llm(request.clone()),
            ToolResponse::Llm(response.clone()),
        );
        Ok(response)
    }
}

/// Counts recorded calls per tool; handy for asserting hand-traced call orders.
pub fn tool_sequence(transcript: &ToolTranscript) -> Vec<ToolName> {
    transcript.entries.iter().map(|e| e.tool()).collect()
}

pub fn counts_by_tool(transcript: &ToolTranscript) -> BTreeMap<ToolName, usize> {
    let mut m = BTreeMap::new();
    for e in &transcript.entries {
        *m.entry(e.tool()).or_insert(0) += 1;
    }
    m
}
