//! End-to-end acceptance checks, run headlessly against recorded fixtures.
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use deepstrat_core::compiler::{compile_strategy, CompileError, CompileOptions, StrategyText};
use deepstrat_core::lang::{
    parse_script, validate_script, RuleId, ScriptAst, ToolName, ValidatorLimits,
};
use deepstrat_core::library::{self, SeedStrategy};
use deepstrat_core::runtime::{
    execute, generate_partial_report, CancellationSignal, ExecutionBudget, ExecutionOutcome,
    NotificationEvent, PartialReportError, Terminal, TraceEntry,
};
use deepstrat_core::tools::{
    load_transcript, LmBackend, LmFn, LmRequest, LmResponse, OfflineSentinel, ScriptedLm,
    SearchBackend, SearchRequest, SearchResult, ToolError, ToolRegistry, ToolResponse,
    ToolTranscript,
};
use deepstrat_service::{Backends, Engine, ServiceConfig, SessionState};

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, &str, Check); 8] = [
        ("A1", "minimal strategy trace", a1),
        ("A2", "expansive and intensive structure", a2),
        ("A3", "model input stays within 8192 tokens", a3),
        ("A4", "replay determinism", a4),
        ("A5", "validator rejection catalog", a5),
        ("A6", "repair loop", a6),
        ("A7", "stop and preliminary report", a7),
        ("A8", "replay stays offline", a8),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("{id} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn prompt() -> String {
    std::fs::read_to_string(fixtures().join("prompt-swallow.txt"))
        .unwrap()
        .trim_end()
        .to_string()
}

fn transcript(name: &str) -> ToolTranscript {
    load_transcript(&fixtures().join(format!("transcripts/{name}.jsonl"))).unwrap()
}

fn strategy(seed: &SeedStrategy) -> StrategyText {
    StrategyText {
        id: seed.name.into(),
        title: seed.name.into(),
        body: seed.text.into(),
        revision: 1,
    }
}

/// Compiles a seed strategy through the scripted code-generation model.
fn compile_seed(seed: &SeedStrategy) -> Result<ScriptAst, String> {
    let lm = ScriptedLm::from_file(&fixtures().join(format!("lm/codegen-{}.json", seed.name)))?;
    let artifact = compile_strategy(&strategy(seed), &lm, &CompileOptions::default())
        .map_err(|e| format!("{} does not compile: {e}", seed.name))?;
    ensure!(
        artifact.source_text == seed.script,
        "{} compiled to a different script",
        seed.name
    );
    Ok(artifact.script)
}

fn replay(script: &ScriptAst, name: &str) -> (ExecutionOutcome, Vec<NotificationEvent>) {
    let tools = ToolRegistry::replay(&transcript(name));
    let mut events = Vec::new();
    let outcome = execute(
        script,
        &prompt(),
        &tools,
        &ExecutionBudget::default(),
        &CancellationSignal::new(),
        &mut |e| events.push(e.clone()),
    );
    (outcome, events)
}

fn kinds(events: &[NotificationEvent]) -> Vec<&str> {
    events.iter().map(|e| e.kind.as_str()).collect()
}

fn calls(outcome: &ExecutionOutcome, tool: ToolName) -> usize {
    outcome
        .tool_calls()
        .filter(|t| t.tool() == Some(tool))
        .count()
}

fn clears(outcome: &ExecutionOutcome, var: &str) -> usize {
    outcome
        .trace
        .iter()
        .filter(|t| matches!(t, TraceEntry::Cleared { variable, .. } if variable == var))
        .count()
}

fn searched_phrases(outcome: &ExecutionOutcome) -> Vec<String> {
    outcome
        .trace
        .iter()
        .filter_map(|t| match t {
            TraceEntry::Search { request, .. } => Some(request.phrase.clone()),
            _ => None,
        })
        .collect()
}

fn a1() -> Result<String, String> {
    let started = Instant::now();
    let script = compile_seed(&library::MINIMAL)?;
    let (outcome, events) = replay(&script, "minimal");
    let elapsed = started.elapsed();
    let mut expected = vec![
        "prompt_received",
        "prompt_analysis_started",
        "prompt_analysis_completed",
        "task_analysis_completed",
    ];
    for _ in 0..3 {
        expected.extend(["search_started", "search_result_processing_completed"]);
    }
    expected.extend([
        "research_completed",
        "report_building",
        "report_done",
        "final_report",
    ]);
    ensure!(
        kinds(&events) == expected,
        "event types were {:?}",
        kinds(&events)
    );
    ensure!(
        matches!(outcome.terminal, Terminal::Completed { .. }),
        "terminal was {:?}",
        outcome.terminal
    );
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{} events, 3 search rounds, {} ms",
        events.len(),
        elapsed.as_millis()
    ))
}

fn a2() -> Result<String, String> {
    let expansive = compile_seed(&library::EXPANSIVE)?;
    let (out, _) = replay(&expansive, "expansive");
    ensure!(
        matches!(out.terminal, Terminal::Completed { .. }),
        "expansive: {:?}",
        out.terminal
    );
    let (s, l) = (calls(&out, ToolName::Search), calls(&out, ToolName::Llm));
    // 1 topic call, 2 phrase calls (one per topic), 1 report call.
    ensure!(
        s == 4 && l == 4,
        "expansive made {s} searches and {l} model calls, expected 4 and 4"
    );
    ensure!(
        clears(&out, "context") == 1,
        "expansive cleared context {} times",
        clears(&out, "context")
    );

    let intensive = compile_seed(&library::INTENSIVE)?;
    let (out, _) = replay(&intensive, "intensive");
    ensure!(
        matches!(out.terminal, Terminal::Completed { .. }),
        "intensive: {:?}",
        out.terminal
    );
    let (s, l) = (calls(&out, ToolName::Search), calls(&out, ToolName::Llm));
    // 1 initial phrase call, 1 regeneration per outer iteration, 1 report call.
    ensure!(
        s == 4 && l == 4,
        "intensive made {s} searches and {l} model calls, expected 4 and 4"
    );
    let (sub, sup) = (clears(&out, "subcontext"), clears(&out, "supercontext"));
    // subcontext starts empty and is emptied after each of the 2 iterations.
    ensure!(
        sub == 3 && sup == 1,
        "intensive cleared subcontext {sub} and supercontext {sup} times"
    );
    let phrases = searched_phrases(&out);
    let expected = [
        "airspeed velocity of an unladen swallow",
        "Monty Python and the Holy Grail swallow scene",
        "European swallow cruising speed",
        "unladen swallow meme origins",
    ];
    ensure!(phrases == expected, "intensive searched {phrases:?}");
    Ok("expansive 4 searches / 4 model calls; intensive 4 / 4, subcontext cleared 3 times".into())
}

fn a3() -> Result<String, String> {
    let mut largest = 0;
    let mut count = 0;
    for seed in library::SEEDS {
        let (out, _) = replay(&seed.parse(), seed.name);
        for t in &out.trace {
            if let TraceEntry::Llm { input_tokens, .. } = t {
                count += 1;
                largest = largest.max(*input_tokens);
                ensure!(
                    *input_tokens <= 8192,
                    "{}: model input of {input_tokens} tokens",
                    seed.name
                );
            }
        }
    }
    Ok(format!(
        "{count} model calls, largest input {largest} tokens"
    ))
}

fn a4() -> Result<String, String> {
    let log = |events: &[NotificationEvent]| -> Vec<u8> {
        let mut out = Vec::new();
        for e in events {
            let mut e = e.clone();
            e.wall_clock_ms = 0;
            out.extend(serde_json::to_vec(&e).unwrap());
            out.push(b'\n');
        }
        out
    };
    let mut bytes = 0;
    for seed in library::SEEDS {
        let script = seed.parse();
        let (_, first) = replay(&script, seed.name);
        let (_, second) = replay(&script, seed.name);
        let (a, b) = (log(&first), log(&second));
        ensure!(a == b, "{}: replayed event logs differ", seed.name);
        bytes += a.len();
    }
    Ok(format!(
        "3 fixtures replayed twice, {bytes} identical bytes per pass"
    ))
}

const CATALOG: [(&str, RuleId); 16] = [
    ("unknown_tool", RuleId::UnknownTool),
    ("tool_arity", RuleId::ToolArity),
    ("missing_report", RuleId::MissingReport),
    ("missing_report_in_branch", RuleId::MissingReport),
    ("unreachable_code", RuleId::UnreachableCode),
    ("non_literal_repeat", RuleId::NonLiteralRepeat),
    ("repeat_not_positive", RuleId::RepeatNotPositive),
    ("repeat_limit", RuleId::RepeatLimit),
    ("total_repeat_limit", RuleId::TotalRepeatLimit),
    ("nesting_depth", RuleId::NestingDepth),
    ("undefined_variable", RuleId::UndefinedVariable),
    ("undefined_after_for", RuleId::UndefinedVariable),
    ("readonly_variable", RuleId::ReadonlyVariable),
    ("duplicate_step_label", RuleId::DuplicateStepLabel),
    ("empty_step", RuleId::EmptyStep),
    (
        "reserved_notification_type",
        RuleId::ReservedNotificationType,
    ),
];

fn a5() -> Result<String, String> {
    let limits = ValidatorLimits::default();
    for (file, rule) in CATALOG {
        let source =
            std::fs::read_to_string(fixtures().join(format!("invalid/{file}.ssl"))).unwrap();
        let ast = parse_script(&source).map_err(|e| format!("{file} does not parse: {e}"))?;
        let report = validate_script(&ast, &limits);
        let rules: Vec<RuleId> = report.rule_ids().into_iter().collect();
        ensure!(
            !report.is_accept() && rules == [rule],
            "{file}: expected [{rule}], got {rules:?}"
        );
    }
    for seed in library::SEEDS {
        let report = validate_script(&seed.parse(), &limits);
        ensure!(
            report.is_accept(),
            "{} rejected: {:?}",
            seed.name,
            report.violations
        );
    }
    Ok(format!(
        "{} malformed scripts rejected with the expected rule, 3 fixtures accepted",
        CATALOG.len()
    ))
}

fn a6() -> Result<String, String> {
    let lm = ScriptedLm::from_file(&fixtures().join("lm/codegen-invalid-then-minimal.json"))?;
    let artifact = compile_strategy(
        &strategy(&library::MINIMAL),
        &lm,
        &CompileOptions::default(),
    )
    .map_err(|e| format!("repair did not converge: {e}"))?;
    ensure!(
        artifact.attempts == 2,
        "converged in {} attempts",
        artifact.attempts
    );
    ensure!(
        artifact.transcript[0]
            .report
            .rule_ids()
            .contains(&RuleId::UnknownTool),
        "first attempt was not rejected for UNKNOWN_TOOL"
    );
    ensure!(
        artifact.transcript[1].prompt.contains("UNKNOWN_TOOL"),
        "repair prompt does not name the violated rule"
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attempts.jsonl");
    let lm = ScriptedLm::from_file(&fixtures().join("lm/codegen-always-invalid.json"))?;
    let options = CompileOptions {
        max_attempts: 3,
        transcript_path: Some(path.clone()),
        ..CompileOptions::default()
    };
    let transcript = match compile_strategy(&strategy(&library::MINIMAL), &lm, &options) {
        Err(CompileError::Rejected { transcript }) => transcript,
        other => return Err(format!("expected exhaustion, got {other:?}")),
    };
    ensure!(
        transcript.len() == 3,
        "{} attempts recorded",
        transcript.len()
    );
    let persisted = deepstrat_core::compiler::read_attempts(&path).map_err(|e| e.to_string())?;
    ensure!(
        persisted == transcript,
        "persisted transcript differs from the returned one"
    );
    Ok("invalid-then-valid converged in 2 attempts; always-invalid exhausted 3 attempts, all persisted".into())
}

/// Search backend that raises the stop signal during its Nth call.
struct StopDuringSearch {
    inner: Arc<dyn SearchBackend>,
    cancel: CancellationSignal,
    stop_on: usize,
    calls: AtomicUsize,
}

impl SearchBackend for StopDuringSearch {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ToolError> {
        if self.cancel.is_cancelled() {
            return Err(ToolError::search("search called after stop"));
        }
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let results = self.inner.search(request);
        if n == self.stop_on {
            self.cancel.cancel();
        }
        results
    }
}

/// Model backend that fails if called after the stop signal.
struct GuardedLm {
    inner: Arc<dyn LmBackend>,
    cancel: CancellationSignal,
}

impl LmBackend for GuardedLm {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, ToolError> {
        if self.cancel.is_cancelled() {
            return Err(ToolError::lm("model called after stop"));
        }
        self.inner.complete(request)
    }
}

/// Runs the minimal fixture, stopping during the given search call.
fn stopped_run(stop_on: usize) -> Result<ExecutionOutcome, String> {
    let cancel = CancellationSignal::new();
    let base = ToolRegistry::replay(&transcript("minimal"));
    let search = Arc::new(StopDuringSearch {
        inner: base.search.clone(),
        cancel: cancel.clone(),
        stop_on,
        calls: AtomicUsize::new(0),
    });
    let lm = Arc::new(GuardedLm {
        inner: base.lm.clone(),
        cancel: cancel.clone(),
    });
    let tools = ToolRegistry::new(search.clone(), lm);
    let mut events = Vec::new();
    let outcome = execute(
        &library::MINIMAL.parse(),
        &prompt(),
        &tools,
        &ExecutionBudget::default(),
        &cancel,
        &mut |e| events.push(e.clone()),
    );
    ensure!(
        outcome.terminal == Terminal::Cancelled,
        "terminal was {:?}",
        outcome.terminal
    );
    ensure!(
        events.last().map(|e| e.kind.as_str()) == Some("cancelled"),
        "last event was {:?}",
        events.last().map(|e| &e.kind)
    );
    let made = search.calls.load(Ordering::SeqCst);
    ensure!(
        made == stop_on,
        "{made} searches were made, expected {stop_on}"
    );
    ensure!(
        outcome.tool_calls().count() == stop_on + 1,
        "{} tool calls in the trace",
        outcome.tool_calls().count()
    );
    Ok(outcome)
}

fn a7() -> Result<String, String> {
    let recorded: Vec<Vec<String>> = transcript("minimal")
        .entries
        .iter()
        .filter_map(|e| match &e.response {
            ToolResponse::Search(results) => {
                Some(results.iter().map(|r| r.content.clone()).collect())
            }
            ToolResponse::Llm(_) => None,
        })
        .collect();
    let seen: Arc<Mutex<Vec<LmRequest>>> = Arc::default();
    let lm = {
        let seen = seen.clone();
        LmFn(move |r: &LmRequest| {
            seen.lock().unwrap().push(r.clone());
            Ok(format!(
                "# Preliminary\n\n{} characters of context",
                r.context.len()
            ))
        })
    };
    let config = Default::default();
    let budget = ExecutionBudget::default();

    // Stopped while the second search was in flight: one result set was processed.
    let outcome = stopped_run(2)?;
    let report = generate_partial_report(&outcome, &prompt(), &lm, &config, &budget)
        .map_err(|e| format!("partial report failed: {e}"))?;
    ensure!(report.preliminary, "report not marked preliminary");
    let requests = seen.lock().unwrap().clone();
    ensure!(
        requests.len() == 1,
        "{} model calls for the report",
        requests.len()
    );
    ensure!(
        requests[0].context == recorded[0].join("\n\n"),
        "report input is not exactly the first search's results"
    );

    // Stopped during the first search: nothing was processed yet.
    let outcome = stopped_run(1)?;
    match generate_partial_report(&outcome, &prompt(), &lm, &config, &budget) {
        Err(PartialReportError::InsufficientContext) => {}
        other => return Err(format!("expected insufficient context, got {other:?}")),
    }
    ensure!(
        seen.lock().unwrap().len() == 1,
        "model called without context"
    );
    Ok(format!(
        "no tool calls after stop; preliminary report built from {} recorded results; refused with none",
        recorded[0].len()
    ))
}

fn a8() -> Result<String, String> {
    let sentinel = Arc::new(OfflineSentinel::new());
    let mut merged = ToolTranscript::new(deepstrat_core::tools::TranscriptMode::Replay);
    for seed in library::SEEDS {
        merged.entries.extend(transcript(seed.name).entries);
    }
    let dir = tempfile::tempdir().unwrap();
    let backends = Backends {
        tools: Arc::new(move || ToolRegistry::replay(&merged)),
        codegen: sentinel.clone(),
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    let summary = rt.block_on(async {
        let engine =
            Engine::open(ServiceConfig::new(dir.path()), backends).map_err(|e| e.to_string())?;
        let mut ids = Vec::new();
        for seed in library::SEEDS {
            ids.push((
                seed.name,
                engine
                    .start_session(seed.name, &prompt())
                    .map_err(|e| e.to_string())?,
            ));
        }
        // An unrecorded request must fail rather than fall through to a live call.
        let miss = engine
            .start_session("minimal", "an unrecorded question")
            .map_err(|e| e.to_string())?;
        let deadline = Instant::now() + Duration::from_secs(10);
        let settle = |id: &str| {
            let engine = engine.clone();
            let id = id.to_string();
            async move {
                loop {
                    let state = engine.view(&id).unwrap().record.state;
                    if state.is_terminal() || Instant::now() > deadline {
                        return state;
                    }
                    tokio::time::sleep(Duration::from_millis(10)).await;
                }
            }
        };
        for (name, id) in &ids {
            let state = settle(id).await;
            ensure!(
                state == SessionState::Completed,
                "{name} session ended {state:?}"
            );
        }
        let state = settle(&miss).await;
        ensure!(
            state == SessionState::Failed,
            "unrecorded session ended {state:?}"
        );
        Ok::<_, String>(format!("{} sessions", ids.len() + 1))
    })?;
    ensure!(
        sentinel.attempts() == 0,
        "{} network attempts, last: {:?}",
        sentinel.attempts(),
        sentinel.last_attempt()
    );
    Ok(format!(
        "{summary} replayed through the service with zero network attempts"
    ))
}
