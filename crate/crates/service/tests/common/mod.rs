#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use deepstrat_core::runtime::NotificationEvent;
use deepstrat_core::tools::{
    FixtureSearch, LmBackend, LmFn, LmRequest, ScriptedLm, SearchBackend, SearchRequest,
    SearchResult, ToolError, ToolRegistry,
};
use deepstrat_service::{Backends, Engine, ServiceConfig};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn swallow_prompt() -> String {
    std::fs::read_to_string(fixtures().join("prompt-swallow.txt"))
        .unwrap()
        .trim_end()
        .to_string()
}

/// Fixture search that blocks the `block_on`-th call until opened.
pub struct GatedSearch {
    inner: FixtureSearch,
    pub calls: AtomicUsize,
    block_on: usize,
    open: Mutex<bool>,
    cv: Condvar,
}

impl GatedSearch {
    pub fn new(block_on: usize) -> Arc<Self> {
        Arc::new(Self {
            inner: FixtureSearch::from_file(&fixtures().join("corpus/swallow.json")).unwrap(),
            calls: AtomicUsize::new(0),
            block_on,
            open: Mutex::new(false),
            cv: Condvar::new(),
        })
    }

    pub fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }

    pub async fn wait_for_calls(&self, n: usize) {
        for _ in 0..500 {
            if self.calls.load(Ordering::SeqCst) >= n {
                return;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("search was not called {n} times");
    }
}

impl SearchBackend for GatedSearch {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if n == self.block_on {
            let mut open = self.open.lock().unwrap();
            while !*open {
                open = self.cv.wait(open).unwrap();
            }
        }
        self.inner.search(request)
    }
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub engine: Arc<Engine>,
    pub search: Arc<GatedSearch>,
    pub lm_requests: Arc<Mutex<Vec<LmRequest>>>,
    pub codegen_calls: Arc<AtomicUsize>,
}

pub fn backends(
    search: Arc<GatedSearch>,
    lm_requests: Arc<Mutex<Vec<LmRequest>>>,
    codegen: ScriptedLm,
    codegen_calls: Arc<AtomicUsize>,
) -> Backends {
    let rules = std::fs::read_to_string(fixtures().join("lm/swallow.json")).unwrap();
    let tools = move || {
        let lm = ScriptedLm::from_json(&rules).unwrap();
        let seen = lm_requests.clone();
        let lm = LmFn(move |r: &LmRequest| {
            seen.lock().unwrap().push(r.clone());
            lm.complete(r).map(|x| x.text)
        });
        ToolRegistry::new(search.clone(), Arc::new(lm))
    };
    let codegen = Arc::new(codegen);
    let codegen = LmFn(move |r: &LmRequest| {
        codegen_calls.fetch_add(1, Ordering::SeqCst);
        codegen.complete(r).map(|x| x.text)
    });
    Backends {
        tools: Arc::new(tools),
        codegen: Arc::new(codegen),
    }
}

pub fn harness_with(
    block_on: usize,
    codegen: ScriptedLm,
    dir: Option<tempfile::TempDir>,
) -> Harness {
    let dir = dir.unwrap_or_else(|| tempfile::tempdir().unwrap());
    let search = GatedSearch::new(block_on);
    let lm_requests = Arc::new(Mutex::new(Vec::new()));
    let codegen_calls = Arc::new(AtomicUsize::new(0));
    let engine = Engine::open(
        ServiceConfig::new(dir.path()),
        backends(
            search.clone(),
            lm_requests.clone(),
            codegen,
            codegen_calls.clone(),
        ),
    )
    .unwrap();
    Harness {
        dir,
        engine,
        search,
        lm_requests,
        codegen_calls,
    }
}

/// A harness whose searches never block.
pub fn harness() -> Harness {
    harness_with(usize::MAX, ScriptedLm::constant("unused"), None)
}

pub fn codegen_from(file: &str) -> ScriptedLm {
    ScriptedLm::from_file(&fixtures().join("lm").join(file)).unwrap()
}

pub async fn spawn_server(engine: Arc<Engine>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(deepstrat_service::serve(listener, engine));
    format!("http://{addr}")
}

/// Reads an event stream to its end, returning `(id, event)` pairs.
pub async fn read_sse(url: &str, last_event_id: Option<u64>) -> Vec<(u64, NotificationEvent)> {
    use futures::StreamExt;
    let client = reqwest::Client::new();
    let mut req = client.get(url);
    if let Some(id) = last_event_id {
        req = req.header("Last-Event-ID", id.to_string());
    }
    let resp = req.send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let read = async {
        while let Some(chunk) = body.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk.unwrap()));
        }
    };
    tokio::time::timeout(Duration::from_secs(10), read)
        .await
        .expect("event stream did not close");
    parse_sse(&buf)
}

pub fn parse_sse(text: &str) -> Vec<(u64, NotificationEvent)> {
    let mut out = Vec::new();
    for frame in text.split("\n\n") {
        let mut id = None;
        let mut data = String::new();
        for line in frame.lines() {
            if let Some(v) = line.strip_prefix("id:") {
                id = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.trim_start());
            }
        }
        if let Some(id) = id {
            out.push((id, serde_json::from_str(&data).unwrap()));
        }
    }
    out
}

pub async fn wait_terminal(engine: &Engine, id: &str) -> deepstrat_service::SessionView {
    for _ in 0..500 {
        let view = engine.view(id).unwrap();
        if view.record.state.is_terminal() {
            return view;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} did not finish");
}

pub async fn wait_state(engine: &Engine, id: &str, state: deepstrat_service::SessionState) {
    for _ in 0..500 {
        if engine.view(id).unwrap().record.state == state {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} never reached {state:?}");
}

pub fn store_path(h: &Harness) -> &Path {
    h.dir.path()
}
