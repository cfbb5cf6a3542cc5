//! Session lifecycle, independent of the HTTP layer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tokio::sync::watch;

use deepstrat_core::compiler::{
    check_source, check_step_coverage, compile_strategy, extract_steps, CompileAttempt,
    CompileError, CompileOptions, ExtractError, PromptTemplates, StrategyText, LANGUAGE_REFERENCE,
    TOOL_DOCS,
};
use deepstrat_core::lang::{parse_script, ValidatorLimits};
use deepstrat_core::library;
use deepstrat_core::runtime::{
    execute, generate_partial_report, now_ms, CancellationSignal, ExecutionBudget,
    ExecutionOutcome, ExecutionState, NotificationEvent, PartialReportError, Report, Terminal,
    CANCELLED, ERROR, FINAL_REPORT,
};
use deepstrat_core::tools::{LmBackend, ToolRegistry};

use crate::error::ApiError;
use crate::session::{SessionRecord, SessionState};
use crate::store::{CompiledScript, RevisionMeta, ScriptOrigin, Store, StrategyMeta};

/// Builds the tool backends for one session.
pub type ToolFactory = Arc<dyn Fn() -> ToolRegistry + Send + Sync>;

#[derive(Clone)]
pub struct Backends {
    pub tools: ToolFactory,
    /// Model used to turn strategies into scripts.
    pub codegen: Arc<dyn LmBackend>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    pub budget: ExecutionBudget,
    pub limits: ValidatorLimits,
    pub max_attempts: u32,
    pub templates: PromptTemplates,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            budget: ExecutionBudget::default(),
            limits: ValidatorLimits::default(),
            max_attempts: 3,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyView {
    pub id: String,
    pub title: String,
    pub description: String,
    pub revision: u64,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategySummary {
    pub id: String,
    pub title: String,
    pub revision: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub record: SessionRecord,
    pub events: u64,
    /// Whether a preliminary report may be requested now.
    pub can_generate_report: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopAck {
    /// The stop signal was raised by this call.
    Stopping,
    /// The session was already stopping or stopped.
    AlreadyStopped,
}

/// In-memory view of one session: its record and event log.
pub struct LiveSession {
    record: Mutex<SessionRecord>,
    events: Mutex<Vec<NotificationEvent>>,
    changed: watch::Sender<u64>,
    cancel: CancellationSignal,
    final_state: Mutex<Option<ExecutionState>>,
    report_lock: tokio::sync::Mutex<()>,
}

impl LiveSession {
    fn new(record: SessionRecord, events: Vec<NotificationEvent>) -> Arc<Self> {
        let n = events.len() as u64;
        Arc::new(Self {
            record: Mutex::new(record),
            events: Mutex::new(events),
            changed: watch::channel(n).0,
            cancel: CancellationSignal::new(),
            final_state: Mutex::new(None),
            report_lock: tokio::sync::Mutex::new(()),
        })
    }

    pub fn record(&self) -> SessionRecord {
        self.record.lock().unwrap().clone()
    }

    /// Events with `seq > after`, and whether the log is finished.
    pub fn events_after(&self, after: u64) -> (Vec<NotificationEvent>, bool) {
        let log = self.events.lock().unwrap();
        let done = log.last().is_some_and(|e| e.is_terminal());
        (
            log.iter().filter(|e| e.seq > after).cloned().collect(),
            done,
        )
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.changed.subscribe()
    }
}

pub struct Engine {
    store: Store,
    config: ServiceConfig,
    backends: Backends,
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
    strategy_lock: Mutex<()>,
}

fn steps_error(e: ExtractError) -> ApiError {
    match e {
        ExtractError::EmptyBody => ApiError::EmptyBody,
        ExtractError::NoStepsFound => ApiError::NoSteps,
    }
}

fn state_for_terminal(event: &NotificationEvent) -> SessionState {
    match event.kind.as_str() {
        FINAL_REPORT => SessionState::Completed,
        CANCELLED => SessionState::Cancelled,
        _ => SessionState::Failed,
    }
}

impl Engine {
    /// Opens the store, seeding the strategy library on first boot and
    /// settling sessions that a previous process left unfinished.
    pub fn open(config: ServiceConfig, backends: Backends) -> Result<Arc<Self>, ApiError> {
        let store = Store::open(&config.store_dir)?;
        let engine = Arc::new(Self {
            store,
            config,
            backends,
            sessions: Mutex::new(HashMap::new()),
            strategy_lock: Mutex::new(()),
        });
        engine.seed()?;
        engine.recover()?;
        Ok(engine)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn seed(&self) -> Result<(), ApiError> {
        let marker = self.store.seeded_marker();
        if marker.exists() {
            return Ok(());
        }
        for seed in library::SEEDS {
            let at = now_ms();
            self.store.save_body(seed.name, 1, seed.text)?;
            let steps = extract_steps(seed.text).map_err(steps_error)?;
            let prompt =
                self.config
                    .templates
                    .codegen_prompt(&steps, TOOL_DOCS, LANGUAGE_REFERENCE);
            let (ast, report) = check_source(seed.script, &self.config.limits);
            let missing = ast
                .map(|a| check_step_coverage(&a, &steps).missing)
                .unwrap_or_default();
            self.store.save_compiled(
                seed.name,
                1,
                &CompiledScript {
                    origin: ScriptOrigin::Bundled,
                    source: Some(seed.script.to_string()),
                    attempts: vec![CompileAttempt {
                        attempt: 1,
                        prompt,
                        raw_output: seed.script.to_string(),
                        report,
                    }],
                    missing_steps: missing,
                },
            )?;
            self.store.save_strategy(&StrategyMeta {
                id: seed.name.to_string(),
                description: seed.description.to_string(),
                revisions: vec![RevisionMeta {
                    revision: 1,
                    title: seed.name.to_string(),
                    created_ms: at,
                }],
                deleted: false,
            })?;
        }
        std::fs::write(marker, b"")?;
        Ok(())
    }

    fn recover(&self) -> Result<(), ApiError> {
        for id in self.store.session_ids()? {
            let Some(mut record) = self.store.load_session(&id)? else {
                continue;
            };
            let mut events = self.store.load_events(&id)?;
            let final_state = self.store.load_final_state(&id)?;
            match events.last().filter(|e| e.is_terminal()).cloned() {
                Some(terminal) => {
                    let state = state_for_terminal(&terminal);
                    if record.state != state && record.transition(state, now_ms()).is_ok() {
                        if state == SessionState::Completed && record.report.is_none() {
                            let markdown = terminal.payload_str("report").unwrap_or_default();
                            let sources = final_state
                                .as_ref()
                                .map(|s| s.sources.clone())
                                .unwrap_or_default();
                            record.report =
                                Some(Report::new(markdown.to_string(), false, &sources));
                        }
                        if state == SessionState::Failed {
                            record.error = Some(terminal.description.clone());
                        }
                        self.store.save_session(&record)?;
                    }
                }
                None => {
                    let message = "session interrupted by a service restart".to_string();
                    let mut payload = std::collections::BTreeMap::new();
                    payload.insert("reason".into(), serde_json::json!("runtime"));
                    payload.insert("message".into(), serde_json::json!(message.clone()));
                    let event = NotificationEvent {
                        seq: events.len() as u64 + 1,
                        wall_clock_ms: now_ms(),
                        kind: ERROR.into(),
                        description: message.clone(),
                        payload: Some(payload),
                    };
                    self.store.append_event(&id, &event)?;
                    events.push(event);
                    if !record.state.is_terminal() {
                        let _ = record.transition(SessionState::Failed, now_ms());
                        record.error = Some(message);
                        self.store.save_session(&record)?;
                    }
                    tracing::warn!(session = %id, "marked interrupted session as failed");
                }
            }
            let live = LiveSession::new(record, events);
            *live.final_state.lock().unwrap() = final_state;
            self.sessions.lock().unwrap().insert(id, live);
        }
        Ok(())
    }

    // Strategies

    fn strategy_meta(&self, id: &str) -> Result<StrategyMeta, ApiError> {
        match self.store.load_strategy(id)? {
            Some(m) if !m.deleted => Ok(m),
            _ => Err(ApiError::UnknownStrategy(id.to_string())),
        }
    }

    pub fn list_strategies(&self) -> Result<Vec<StrategySummary>, ApiError> {
        let mut out = Vec::new();
        for id in self.store.strategy_ids()? {
            if let Some(meta) = self.store.load_strategy(&id)? {
                if !meta.deleted {
                    out.push(StrategySummary {
                        id: meta.id.clone(),
                        title: meta.latest().title.clone(),
                        revision: meta.latest().revision,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn get_strategy(&self, id: &str, revision: Option<u64>) -> Result<StrategyView, ApiError> {
        let meta = self.strategy_meta(id)?;
        let rev = match revision {
            Some(r) => meta
                .revisions
                .iter()
                .find(|m| m.revision == r)
                .ok_or_else(|| ApiError::UnknownStrategy(format!("{id} revision {r}")))?,
            None => meta.latest(),
        };
        Ok(StrategyView {
            id: meta.id.clone(),
            title: rev.title.clone(),
            description: meta.description.clone(),
            revision: rev.revision,
            body: self.store.load_body(id, rev.revision)?,
        })
    }

    pub fn create_strategy(&self, title: &str, body: &str) -> Result<StrategyView, ApiError> {
        extract_steps(body).map_err(steps_error)?;
        let _guard = self.strategy_lock.lock().unwrap();
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.store.save_body(&id, 1, body)?;
        self.store.save_strategy(&StrategyMeta {
            id: id.clone(),
            description: String::new(),
            revisions: vec![RevisionMeta {
                revision: 1,
                title: title.to_string(),
                created_ms: now_ms(),
            }],
            deleted: false,
        })?;
        drop(_guard);
        self.get_strategy(&id, None)
    }

    /// Stores `body` as a new revision; earlier revisions are kept.
    pub fn update_strategy(
        &self,
        id: &str,
        title: Option<&str>,
        body: &str,
    ) -> Result<StrategyView, ApiError> {
        extract_steps(body).map_err(steps_error)?;
        let _guard = self.strategy_lock.lock().unwrap();
        let mut meta = self.strategy_meta(id)?;
        let next = meta.latest().revision + 1;
        let title = title.map_or_else(|| meta.latest().title.clone(), str::to_string);
        self.store.save_body(id, next, body)?;
        meta.revisions.push(RevisionMeta {
            revision: next,
            title,
            created_ms: now_ms(),
        });
        self.store.save_strategy(&meta)?;
        drop(_guard);
        self.get_strategy(id, None)
    }

    pub fn delete_strategy(&self, id: &str) -> Result<(), ApiError> {
        let _guard = self.strategy_lock.lock().unwrap();
        let mut meta = self.strategy_meta(id)?;
        meta.deleted = true;
        self.store.save_strategy(&meta)?;
        Ok(())
    }

    // Sessions

    pub fn session(&self, id: &str) -> Result<Arc<LiveSession>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn list_sessions(&self) -> Vec<SessionRecord> {
        let mut out: Vec<SessionRecord> = self
            .sessions
            .lock()
            .unwrap()
            .values()
            .map(|s| s.record())
            .collect();
        out.sort_by_key(|r| r.transitions.first().map(|t| t.at_ms));
        out
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ApiError> {
        let live = self.session(id)?;
        let record = live.record();
        let events = live.events.lock().unwrap().len() as u64;
        let has_context = live
            .final_state
            .lock()
            .unwrap()
            .as_ref()
            .is_some_and(|s| !s.context_texts().is_empty());
        Ok(SessionView {
            can_generate_report: record.state == SessionState::Cancelled
                && record.report.is_none()
                && has_context,
            record,
            events,
        })
    }

    fn set_state(&self, live: &LiveSession, next: SessionState, error: Option<String>) {
        let mut record = live.record.lock().unwrap();
        if let Err((from, to)) = record.transition(next, now_ms()) {
            tracing::error!(session = %record.id, ?from, ?to, "refused illegal transition");
            return;
        }
        if error.is_some() {
            record.error = error;
        }
        if let Err(e) = self.store.save_session(&record) {
            tracing::error!(session = %record.id, "cannot persist session: {e}");
        }
        tracing::info!(session = %record.id, state = next.as_str(), "session transition");
    }

    fn push_event(&self, live: &LiveSession, event: NotificationEvent) {
        let id = live.record.lock().unwrap().id.clone();
        if let Err(e) = self.store.append_event(&id, &event) {
            tracing::error!(session = %id, "cannot persist event {}: {e}", event.seq);
        }
        let n = {
            let mut log = live.events.lock().unwrap();
            log.push(event);
            log.len() as u64
        };
        live.changed.send_replace(n);
    }

    pub fn start_session(
        self: &Arc<Self>,
        strategy_id: &str,
        prompt: &str,
    ) -> Result<String, ApiError> {
        if prompt.trim().is_empty() {
            return Err(ApiError::EmptyPrompt);
        }
        let meta = self.strategy_meta(strategy_id)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = SessionRecord::new(
            id.clone(),
            strategy_id.to_string(),
            meta.latest().revision,
            prompt.to_string(),
            now_ms(),
        );
        self.store.save_session(&record)?;
        let live = LiveSession::new(record, Vec::new());
        self.sessions
            .lock()
            .unwrap()
            .insert(id.clone(), live.clone());
        let engine = self.clone();
        tokio::spawn(async move { engine.drive(live).await });
        Ok(id)
    }

    /// Returns the script for a strategy revision, compiling it on first use.
    fn compiled_script(
        &self,
        strategy_id: &str,
        revision: u64,
    ) -> Result<CompiledScript, ApiError> {
        if let Some(cached) = self.store.load_compiled(strategy_id, revision)? {
            if cached.source.is_some() {
                return Ok(cached);
            }
        }
        let strategy = StrategyText {
            id: strategy_id.to_string(),
            title: String::new(),
            body: self.store.load_body(strategy_id, revision)?,
            revision,
        };
        let options = CompileOptions {
            limits: self.config.limits,
            max_attempts: self.config.max_attempts,
            templates: self.config.templates.clone(),
            ..Default::default()
        };
        let script = match compile_strategy(&strategy, self.backends.codegen.as_ref(), &options) {
            Ok(artifact) => {
                let steps = extract_steps(&strategy.body).map_err(steps_error)?;
                CompiledScript {
                    origin: ScriptOrigin::Compiled,
                    missing_steps: check_step_coverage(&artifact.script, &steps).missing,
                    source: Some(artifact.source_text),
                    attempts: artifact.transcript,
                }
            }
            Err(CompileError::Rejected { transcript }) => CompiledScript {
                origin: ScriptOrigin::Compiled,
                source: None,
                attempts: transcript,
                missing_steps: Vec::new(),
            },
            Err(e) => return Err(ApiError::Backend(e.to_string())),
        };
        if script.source.is_some() {
            self.store.save_compiled(strategy_id, revision, &script)?;
        }
        Ok(script)
    }

    fn fail_before_run(&self, live: &LiveSession, message: String) {
        let mut payload = std::collections::BTreeMap::new();
        payload.insert("reason".into(), serde_json::json!("compile"));
        payload.insert("message".into(), serde_json::json!(message.clone()));
        self.push_event(
            live,
            NotificationEvent {
                seq: 1,
                wall_clock_ms: now_ms(),
                kind: ERROR.into(),
                description: message.clone(),
                payload: Some(payload),
            },
        );
        self.set_state(live, SessionState::Failed, Some(message));
    }

    async fn drive(self: Arc<Self>, live: Arc<LiveSession>) {
        self.set_state(&live, SessionState::Compiling, None);
        let record = live.record();
        let engine = self.clone();
        let compiled = tokio::task::spawn_blocking(move || {
            engine.compiled_script(&record.strategy_id, record.revision)
        })
        .await
        .unwrap_or_else(|e| Err(ApiError::Backend(format!("compiler task failed: {e}"))));
        let record = live.record();
        let compiled = match compiled {
            Ok(c) => c,
            Err(e) => return self.fail_before_run(&live, format!("compilation failed: {e}")),
        };
        if let Err(e) = self.store.save_session_script(&record.id, &compiled) {
            tracing::error!(session = %record.id, "cannot persist script: {e}");
        }
        let Some(source) = compiled.source.clone() else {
            let n = compiled.attempts.len();
            return self.fail_before_run(
                &live,
                format!("compilation failed: no valid script after {n} attempt(s)"),
            );
        };
        let script = match parse_script(&source) {
            Ok(s) => s,
            Err(e) => {
                return self.fail_before_run(&live, format!("stored script does not parse: {e}"))
            }
        };
        self.set_state(&live, SessionState::Running, None);

        let engine = self.clone();
        let run_live = live.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let tools = (engine.backends.tools)();
            let mut sink = |e: &NotificationEvent| engine.push_event(&run_live, e.clone());
            execute(
                &script,
                &record.prompt,
                &tools,
                &engine.config.budget,
                &run_live.cancel,
                &mut sink,
            )
        })
        .await;
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                let message = format!("interpreter task failed: {e}");
                let seq = live.events.lock().unwrap().len() as u64 + 1;
                self.push_event(
                    &live,
                    NotificationEvent {
                        seq,
                        wall_clock_ms: now_ms(),
                        kind: ERROR.into(),
                        description: message.clone(),
                        payload: None,
                    },
                );
                return self.set_state(&live, SessionState::Failed, Some(message));
            }
        };
        self.finish(&live, outcome);
    }

    fn finish(&self, live: &LiveSession, outcome: ExecutionOutcome) {
        let id = live.record.lock().unwrap().id.clone();
        if let Err(e) = self.store.save_final_state(&id, &outcome.state) {
            tracing::error!(session = %id, "cannot persist final state: {e}");
        }
        let report = Report::from_outcome(&outcome);
        *live.final_state.lock().unwrap() = Some(outcome.state);
        match outcome.terminal {
            Terminal::Completed { .. } => {
                live.record.lock().unwrap().report = report;
                self.set_state(live, SessionState::Completed, None);
            }
            Terminal::Cancelled => self.set_state(live, SessionState::Cancelled, None),
            Terminal::Failed(f) => self.set_state(live, SessionState::Failed, Some(f.message())),
        }
    }

    pub fn stop_session(&self, id: &str) -> Result<StopAck, ApiError> {
        let live = self.session(id)?;
        let state = live.record.lock().unwrap().state;
        match state {
            SessionState::Running => Ok(if live.cancel.cancel() {
                StopAck::Stopping
            } else {
                StopAck::AlreadyStopped
            }),
            SessionState::Cancelled => Ok(StopAck::AlreadyStopped),
            actual => Err(ApiError::InvalidState {
                actual,
                needed: "running",
            }),
        }
    }

    /// Returns the session's report, writing a preliminary one for a
    /// stopped session on first request.
    pub async fn request_report(self: &Arc<Self>, id: &str) -> Result<Report, ApiError> {
        let live = self.session(id)?;
        let _guard = live.report_lock.lock().await;
        let record = live.record();
        if let Some(report) = &record.report {
            return Ok(report.clone());
        }
        if record.state != SessionState::Cancelled {
            return Err(ApiError::InvalidState {
                actual: record.state,
                needed: "cancelled",
            });
        }
        let state = live
            .final_state
            .lock()
            .unwrap()
            .clone()
            .ok_or(ApiError::InsufficientContext)?;
        let outcome = ExecutionOutcome {
            terminal: Terminal::Cancelled,
            state,
            trace: Vec::new(),
            events_emitted: live.events.lock().unwrap().len() as u64,
        };
        let engine = self.clone();
        let prompt = record.prompt.clone();
        let report = tokio::task::spawn_blocking(move || {
            let tools = (engine.backends.tools)();
            generate_partial_report(
                &outcome,
                &prompt,
                tools.lm.as_ref(),
                &tools.config,
                &engine.config.budget,
            )
        })
        .await
        .map_err(|e| ApiError::Backend(e.to_string()))?
        .map_err(|e| match e {
            PartialReportError::InsufficientContext => ApiError::InsufficientContext,
            PartialReportError::NotCancelled => ApiError::InvalidState {
                actual: record.state,
                needed: "cancelled",
            },
            PartialReportError::ContextTooLarge { .. } => ApiError::ContextTooLarge(e.to_string()),
            other => ApiError::Backend(other.to_string()),
        })?;
        let mut rec = live.record.lock().unwrap();
        rec.report = Some(report.clone());
        self.store.save_session(&rec)?;
        Ok(report)
    }

    pub fn session_script(&self, id: &str) -> Result<CompiledScript, ApiError> {
        self.session(id)?;
        self.store
            .load_session_script(id)?
            .ok_or_else(|| ApiError::NoScript(format!("session `{id}` has not been compiled yet")))
    }
}
