use std::path::PathBuf;
use std::sync::Arc;

use deepstrat_core::lang::ToolName;
use deepstrat_core::library::{self, SeedStrategy};
use deepstrat_core::runtime::{
    count_tokens, execute, CancellationSignal, ExecutionBudget, ExecutionOutcome,
    NotificationEvent, Terminal, TraceEntry,
};
use deepstrat_core::tools::{FixtureSearch, ScriptedLm, ToolRegistry};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn prompt() -> String {
    std::fs::read_to_string(fixtures().join("prompt-swallow.txt"))
        .unwrap()
        .trim_end()
        .to_string()
}

fn run(seed: SeedStrategy) -> (ExecutionOutcome, Vec<NotificationEvent>) {
    let lm = ScriptedLm::from_file(&fixtures().join("lm/swallow.json")).unwrap();
    let search = FixtureSearch::from_file(&fixtures().join("corpus/swallow.json")).unwrap();
    let tools = ToolRegistry::new(Arc::new(search), Arc::new(lm));
    let mut events = Vec::new();
    let outcome = execute(
        &seed.parse(),
        &prompt(),
        &tools,
        &ExecutionBudget::default(),
        &CancellationSignal::new(),
        &mut |e| events.push(e.clone()),
    );
    (outcome, events)
}

fn clears(outcome: &ExecutionOutcome, var: &str) -> usize {
    outcome
        .trace
        .iter()
        .filter(|t| matches!(t, TraceEntry::Cleared { variable, .. } if variable == var))
        .count()
}

fn kinds(events: &[NotificationEvent]) -> Vec<&str> {
    events.iter().map(|e| e.kind.as_str()).collect()
}

#[test]
fn minimal_run() {
    let (out, events) = run(library::MINIMAL);
    assert!(matches!(out.terminal, Terminal::Completed { .. }));
    assert_eq!(out.state.tool_calls(ToolName::Search), 3);
    assert_eq!(out.state.tool_calls(ToolName::Llm), 2);
    assert_eq!(clears(&out, "CONTEXT"), 1);
    assert_eq!(events.len(), 14);
    assert_eq!(out.state.context_variables, ["CONTEXT"]);
}

#[test]
fn expansive_run() {
    let (out, events) = run(library::EXPANSIVE);
    assert!(matches!(out.terminal, Terminal::Completed { .. }));
    assert_eq!(out.state.tool_calls(ToolName::Search), 4);
    assert_eq!(out.state.tool_calls(ToolName::Llm), 4);
    assert_eq!(clears(&out, "context"), 1);
    let searches = kinds(&events)
        .iter()
        .filter(|k| **k == "search_started")
        .count();
    assert_eq!(searches, 4);
}

#[test]
fn intensive_run() {
    let (out, events) = run(library::INTENSIVE);
    assert!(matches!(out.terminal, Terminal::Completed { .. }));
    assert_eq!(out.state.tool_calls(ToolName::Search), 4);
    assert_eq!(out.state.tool_calls(ToolName::Llm), 4);
    assert_eq!(clears(&out, "subcontext"), 3);
    assert_eq!(clears(&out, "supercontext"), 1);
    // Round two searches the phrases regenerated after round one.
    let phrases: Vec<_> = out
        .trace
        .iter()
        .filter_map(|t| match t {
            TraceEntry::Search { request, .. } => Some(request.phrase.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(
        phrases,
        [
            "airspeed velocity of an unladen swallow",
            "Monty Python and the Holy Grail swallow scene",
            "European swallow cruising speed",
            "unladen swallow meme origins",
        ]
    );
    assert_eq!(events.last().unwrap().kind, "final_report");
}

#[test]
fn lm_inputs_stay_under_default_budget() {
    for seed in library::SEEDS {
        let (out, _) = run(seed);
        for req in out.lm_requests() {
            assert!(count_tokens(&req.text()) <= 8192, "{}", seed.name);
        }
    }
}
