//! Tree-walking interpreter for validated scripts.
//!
//! Execution is single-threaded and strictly sequential: tool calls block,
//! and every notification is handed to the event sink before the next
//! statement runs. Cancellation is checked before every statement and before
//! every tool call, so after a stop request at most the statement in flight
//! completes and no further tool call is issued.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::budget::{BudgetKind, CancellationSignal, ExecutionBudget};
use super::event::{now_ms, NotificationEvent, CANCELLED, ERROR, FINAL_REPORT};
use super::state::ExecutionState;
use super::tokens::{CharsPerToken, TokenCounter};
use super::value::{TypeError, Value};
use crate::lang::{Condition, Expression, ScriptAst, Statement, TemplatePart, ToolName};
use crate::tools::{LmRequest, SearchRequest, ToolRegistry};

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Failure {
    Budget { budget: BudgetKind, limit: String },
    Tool { message: String },
    Runtime { message: String },
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Failure::Runtime {
            message: message.into(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Budget { budget, limit } => {
                format!("budget exhausted: {budget} (limit {limit})")
            }
            Failure::Tool { message } => format!("tool failure: {message}"),
            Failure::Runtime { message } => format!("runtime error: {message}"),
        }
    }
}

impl From<TypeError> for Failure {
    fn from(e: TypeError) -> Self {
        Failure::runtime(e.to_string())
    }
}

/// Non-local exit from statement execution.
#[derive(Debug, Clone, PartialEq)]
pub enum Halt {
    Report(String),
    Cancelled,
    Failed(Failure),
}

impl From<Failure> for Halt {
    fn from(f: Failure) -> Self {
        Halt::Failed(f)
    }
}

impl From<TypeError> for Halt {
    fn from(e: TypeError) -> Self {
        Halt::Failed(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Terminal {
    Completed { report: String },
    Cancelled,
    Failed(Failure),
}

/// A tool call or notable state change, recorded in execution order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Search {
        request: SearchRequest,
        results: usize,
        /// Number of events emitted before the call.
        after_seq: u64,
    },
    Llm {
        request: LmRequest,
        input_tokens: usize,
        after_seq: u64,
    },
    /// A variable was assigned an empty text or list.
    Cleared { variable: String, after_seq: u64 },
}

impl TraceEntry {
    pub fn tool(&self) -> Option<ToolName> {
        match self {
            TraceEntry::Search { .. } => Some(ToolName::Search),
            TraceEntry::Llm { .. } => Some(ToolName::Llm),
            TraceEntry::Cleared { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub terminal: Terminal,
    pub state: ExecutionState,
    pub trace: Vec<TraceEntry>,
    pub events_emitted: u64,
}

impl ExecutionOutcome {
    pub fn tool_calls(&self) -> impl Iterator<Item = &TraceEntry> {
        self.trace.iter().filter(|t| t.tool().is_some())
    }

    pub fn lm_requests(&self) -> impl Iterator<Item = &LmRequest> {
        self.trace.iter().filter_map(|t| match t {
            TraceEntry::Llm { request, .. } => Some(request),
            _ => None,
        })
    }
}

/// Runs `script` to completion, handing each event to `sink` as it is
/// produced. Exactly one terminal event (`final_report`, `cancelled` or
/// `error`) is emitted, and it is the last.
pub fn execute(
    script: &ScriptAst,
    prompt: &str,
    tools: &ToolRegistry,
    budget: &ExecutionBudget,
    cancel: &CancellationSignal,
    sink: &mut dyn FnMut(&NotificationEvent),
) -> ExecutionOutcome {
    let mut interp = Interpreter::new(prompt, tools, *budget, cancel.clone(), sink);
    let halt = match budget.check() {
        Ok(()) => interp.run(script),
        Err(kind) => Halt::Failed(Failure::runtime(format!("budget {kind} must be positive"))),
    };
    interp.finish(halt)
}

/// Handle to an execution running on its own thread.
pub struct ExecutionHandle {
    pub events: mpsc::Receiver<NotificationEvent>,
    pub cancel: CancellationSignal,
    thread: thread::JoinHandle<ExecutionOutcome>,
}

impl ExecutionHandle {
    pub fn join(self) -> ExecutionOutcome {
        self.thread.join().expect("interpreter thread panicked")
    }
}

/// Starts `execute` on a new thread; events arrive on a channel.
pub fn spawn_execution(
    script: Arc<ScriptAst>,
    prompt: String,
    tools: ToolRegistry,
    budget: ExecutionBudget,
    cancel: CancellationSignal,
) -> ExecutionHandle {
    let (tx, rx) = mpsc::channel();
    let thread_cancel = cancel.clone();
    let thread = thread::spawn(move || {
        let mut sink = |e: &NotificationEvent| {
            let _ = tx.send(e.clone());
        };
        execute(&script, &prompt, &tools, &budget, &thread_cancel, &mut sink)
    });
    ExecutionHandle {
        events: rx,
        cancel,
        thread,
    }
}

pub struct Interpreter<'a> {
    tools: &'a ToolRegistry,
    budget: ExecutionBudget,
    cancel: CancellationSignal,
    counter: Box<dyn TokenCounter>,
    started: Instant,
    seq: u64,
    pub state: ExecutionState,
    pub trace: Vec<TraceEntry>,
    sink: &'a mut dyn FnMut(&NotificationEvent),
}

impl<'a> Interpreter<'a> {
    pub fn new(
        prompt: &str,
        tools: &'a ToolRegistry,
        budget: ExecutionBudget,
        cancel: CancellationSignal,
        sink: &'a mut dyn FnMut(&NotificationEvent),
    ) -> Self {
        Self {
            tools,
            budget,
            cancel,
            counter: Box::new(CharsPerToken),
            started: Instant::now(),
            seq: 0,
            state: ExecutionState::with_prompt(prompt),
            trace: Vec::new(),
            sink,
        }
    }

    pub fn with_token_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    fn run(&mut self, script: &ScriptAst) -> Halt {
        for step in &script.steps {
            self.state.step_cursor = Some(step.label.clone());
            if let Err(halt) = self.block(&step.statements) {
                return halt;
            }
        }
        Halt::Failed(Failure::runtime("script ended without yield_report"))
    }

    /// Emits the terminal event for `halt` and returns the outcome.
    pub fn finish(mut self, halt: Halt) -> ExecutionOutcome {
        let terminal = match halt {
            Halt::Report(report) => {
                let mut payload = serde_json::Map::new();
                payload.insert("report".into(), json!(report));
                self.emit(
                    FINAL_REPORT,
                    "Research report delivered.".into(),
                    Some(payload.into_iter().collect()),
                );
                Terminal::Completed { report }
            }
            Halt::Cancelled => {
                self.emit(
                    CANCELLED,
                    "Research stopped before completion.".into(),
                    None,
                );
                Terminal::Cancelled
            }
            Halt::Failed(failure) => {
                let mut payload = std::collections::BTreeMap::new();
                if let Ok(serde_json::Value::Object(m)) = serde_json::to_value(&failure) {
                    payload.extend(m);
                }
                self.emit(ERROR, failure.message(), Some(payload));
                Terminal::Failed(failure)
            }
        };
        ExecutionOutcome {
            terminal,
            state: self.state,
            trace: self.trace,
            events_emitted: self.seq,
        }
    }

    fn emit(
        &mut self,
        kind: &str,
        description: String,
        payload: Option<std::collections::BTreeMap<String, serde_json::Value>>,
    ) {
        self.seq += 1;
        let event = NotificationEvent {
            seq: self.seq,
            wall_clock_ms: now_ms(),
            kind: kind.to_string(),
            description,
            payload,
        };
        (self.sink)(&event);
    }

    fn check_cancel(&self) -> Result<(), Halt> {
        if self.cancel.is_cancelled() {
            Err(Halt::Cancelled)
        } else {
            Ok(())
        }
    }

    fn exhausted(&self, budget: BudgetKind) -> Halt {
        let limit = match budget {
            BudgetKind::ToolCalls => self.budget.max_tool_calls.to_string(),
            BudgetKind::ForeachIterations => self.budget.max_foreach_iterations.to_string(),
            BudgetKind::LmInputTokens => self.budget.max_lm_input_tokens.to_string(),
            BudgetKind::WallClock => format!("{}s", self.budget.max_wall_clock.as_secs()),
            BudgetKind::StateBytes => self.budget.max_state_bytes.to_string(),
        };
        Halt::Failed(Failure::Budget { budget, limit })
    }

    fn block(&mut self, stmts: &[Statement]) -> Result<(), Halt> {
        for stmt in stmts {
            self.step_interpret(stmt)?;
        }
        Ok(())
    }

    /// Executes one statement (and its nested body), emitting any events it
    /// yields through the sink.
    pub fn step_interpret(&mut self, stmt: &Statement) -> Result<(), Halt> {
        self.check_cancel()?;
        if self.started.elapsed() > self.budget.max_wall_clock {
            return Err(self.exhausted(BudgetKind::WallClock));
        }
        match stmt {
            Statement::Assign { name, value } => self.assign(name, value),
            Statement::ForEach {
                var,
                iterable,
                body,
            } => {
                let from_search = self.is_search_derived(iterable);
                let items = match self.eval(iterable)? {
                    Value::List(items) => items,
                    other => {
                        return Err(Failure::runtime(format!(
                            "`for` needs a list, found {}",
                            other.type_name()
                        ))
                        .into())
                    }
                };
                let saved = self.state.remove(var);
                let saved_taint = self.state.search_derived.contains(var);
                let mut result = Ok(());
                for item in items {
                    if self.state.foreach_iterations >= self.budget.max_foreach_iterations {
                        result = Err(self.exhausted(BudgetKind::ForeachIterations));
                        break;
                    }
                    self.state.foreach_iterations += 1;
                    self.bind(var, item, from_search)?;
                    result = self.block(body);
                    if result.is_err() {
                        break;
                    }
                }
                if result.is_ok() {
                    self.state.remove(var);
                    if let Some(v) = saved {
                        self.bind(var, v, saved_taint)?;
                    } else {
                        self.state.search_derived.remove(var);
                    }
                }
                result
            }
            Statement::RepeatN { count, body } => {
                let n = self.eval(count)?.as_int()?;
                for _ in 0..n.max(0) {
                    self.block(body)?;
                }
                Ok(())
            }
            Statement::If {
                condition,
                then_body,
                else_body,
            } => {
                if self.condition(condition)? {
                    self.block(then_body)
                } else {
                    self.block(else_body)
                }
            }
            Statement::YieldNotification {
                kind,
                description,
                extra,
            } => {
                let kind = self.eval(kind)?.render()?;
                if super::event::is_terminal_type(&kind) {
                    return Err(Failure::runtime(format!(
                        "notification type `{kind}` is reserved"
                    ))
                    .into());
                }
                let description = self.eval(description)?.render()?;
                let payload = if extra.is_empty() {
                    None
                } else {
                    let mut map = std::collections::BTreeMap::new();
                    for (k, e) in extra {
                        map.insert(k.clone(), self.eval(e)?.to_json());
                    }
                    Some(map)
                };
                self.emit(&kind, description, payload);
                Ok(())
            }
            Statement::YieldReport { report } => {
                let report = self.eval(report)?.render()?;
                if report.trim().is_empty() {
                    return Err(Failure::runtime("report is empty").into());
                }
                Err(Halt::Report(report))
            }
        }
    }

    fn bind(&mut self, name: &str, value: Value, from_search: bool) -> Result<(), Halt> {
        self.state.set(name, value);
        if from_search {
            self.state.search_derived.insert(name.to_string());
        } else {
            self.state.search_derived.remove(name);
        }
        if self.state.accumulated_context_bytes > self.budget.max_state_bytes {
            return Err(self.exhausted(BudgetKind::StateBytes));
        }
        Ok(())
    }

    fn assign(&mut self, name: &str, expr: &Expression) -> Result<(), Halt> {
        let from_search = self.is_search_derived(expr);
        let appends_search = match expr {
            Expression::Append { target, item, .. } => {
                matches!(target.as_ref(), Expression::Var(t) if t == name)
                    && self.is_search_derived(item)
            }
            _ => false,
        };
        let value = self.eval(expr)?;
        let cleared = value.is_empty() && !matches!(value, Value::Int(_));
        self.bind(name, value, from_search)?;
        if appends_search {
            self.state.appended_results += 1;
            if !self.state.context_variables.iter().any(|c| c == name) {
                self.state.context_variables.push(name.to_string());
            }
        }
        if cleared {
            self.trace.push(TraceEntry::Cleared {
                variable: name.to_string(),
                after_seq: self.seq,
            });
        }
        Ok(())
    }

    /// Whether evaluating `expr` can yield search-result text.
    fn is_search_derived(&self, expr: &Expression) -> bool {
        expr.contains_tool_call(ToolName::Search.as_str())
            || expr
                .variables()
                .iter()
                .any(|v| self.state.search_derived.contains(*v))
    }

    fn lookup(&self, name: &str) -> Result<&Value, Halt> {
        self.state
            .get(name)
            .ok_or_else(|| Failure::runtime(format!("undefined variable `{name}`")).into())
    }

    fn condition(&mut self, c: &Condition) -> Result<bool, Halt> {
        Ok(match c {
            Condition::Eq(a, b) | Condition::Ne(a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                if std::mem::discriminant(&a) != std::mem::discriminant(&b) {
                    return Err(Failure::runtime(format!(
                        "cannot compare {} with {}",
                        a.type_name(),
                        b.type_name()
                    ))
                    .into());
                }
                (a == b) == matches!(c, Condition::Eq(..))
            }
            Condition::Lt(a, b) => self.eval(a)?.as_int()? < self.eval(b)?.as_int()?,
            Condition::Le(a, b) => self.eval(a)?.as_int()? <= self.eval(b)?.as_int()?,
            Condition::IsEmpty(a) => self.eval(a)?.is_empty(),
            Condition::NotEmpty(a) => !self.eval(a)?.is_empty(),
        })
    }

    fn eval(&mut self, e: &Expression) -> Result<Value, Halt> {
        Ok(match e {
            Expression::Str(s) => Value::Text(s.clone()),
            Expression::Int(i) => Value::Int(*i),
            Expression::Var(name) => self.lookup(name)?.clone(),
            Expression::Interpolate(parts) => {
                let mut out = String::new();
                for p in parts {
                    match p {
                        TemplatePart::Text(t) => out.push_str(t),
                        TemplatePart::Hole(name) => out.push_str(&self.lookup(name)?.render()?),
                    }
                }
                Value::Text(out)
            }
            Expression::List(items) => Value::List(
                items
                    .iter()
                    .map(|i| self.eval(i))
                    .collect::<Result<_, _>>()?,
            ),
            Expression::Concat(items) => {
                let mut out = String::new();
                for i in items {
                    out.push_str(&self.eval(i)?.render()?);
                }
                Value::Text(out)
            }
            Expression::JoinWith { separator, list } => {
                let sep = self.eval(separator)?.render()?;
                self.eval(list)?.join(&sep)?
            }
            Expression::SplitLines(e) => self.eval(e)?.split_lines()?,
            Expression::StripBlank(e) => self.eval(e)?.strip_blank()?,
            Expression::Length(e) => self.eval(e)?.length()?,
            Expression::Append {
                target,
                item,
                separator,
            } => {
                let target = self.eval(target)?;
                let item = self.eval(item)?;
                let sep = match separator {
                    Some(s) => Some(self.eval(s)?.render()?),
                    None => None,
                };
                target.append(&item, sep.as_deref())?
            }
            Expression::ToolCall { tool, args } => {
                let args = args
                    .iter()
                    .map(|a| self.eval(a))
                    .collect::<Result<Vec<_>, _>>()?;
                match ToolName::parse(tool) {
                    Some(ToolName::Search) => self.call_search(&args)?,
                    Some(ToolName::Llm) => self.call_llm(&args)?,
                    None => return Err(Failure::runtime(format!("unknown tool `{tool}`")).into()),
                }
            }
        })
    }

    fn before_tool_call(&self) -> Result<(), Halt> {
        self.check_cancel()?;
        if self.state.total_tool_calls() >= self.budget.max_tool_calls {
            return Err(self.exhausted(BudgetKind::ToolCalls));
        }
        Ok(())
    }

    fn count_call(&mut self, tool: ToolName) {
        *self.state.tool_call_counts.entry(tool).or_insert(0) += 1;
    }

    fn call_search(&mut self, args: &[Value]) -> Result<Value, Halt> {
        let phrase = args
            .first()
            .ok_or_else(|| Failure::runtime("search needs a phrase"))?
            .render()?;
        let k = match args.get(1) {
            Some(v) => Some(usize::try_from(v.as_int()?).unwrap_or(0)),
            None => None,
        };
        self.before_tool_call()?;
        let results = self.tools.search(&phrase, k).map_err(|e| Failure::Tool {
            message: e.to_string(),
        })?;
        self.count_call(ToolName::Search);
        self.trace.push(TraceEntry::Search {
            request: SearchRequest {
                phrase,
                k: k.unwrap_or(self.tools.config.k),
            },
            results: results.len(),
            after_seq: self.seq,
        });
        for r in &results {
            self.state.note_source(&r.title, &r.url);
        }
        Ok(Value::List(
            results
                .into_iter()
                .map(|r| Value::Text(r.content))
                .collect(),
        ))
    }

    fn call_llm(&mut self, args: &[Value]) -> Result<Value, Halt> {
        let instruction = args
            .first()
            .ok_or_else(|| Failure::runtime("llm needs an instruction"))?
            .render()?;
        let context = match args.get(1) {
            Some(v) => v.render()?,
            None => String::new(),
        };
        self.before_tool_call()?;
        let request = self.tools.lm_request(&instruction, &context);
        let input_tokens = self.counter.count(&request.text());
        if input_tokens > self.budget.max_lm_input_tokens {
            return Err(self.exhausted(BudgetKind::LmInputTokens));
        }
        let response = self
            .tools
            .llm_complete(&request)
            .map_err(|e| Failure::Tool {
                message: e.to_string(),
            })?;
        self.count_call(ToolName::Llm);
        self.trace.push(TraceEntry::Llm {
            request,
            input_tokens,
            after_seq: self.seq,
        });
        Ok(Value::Text(response.text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_script;
    use crate::tools::{FixtureSearch, ScriptedLm, SearchResult};
    use std::collections::BTreeMap;

    fn corpus(phrases: &[&str]) -> FixtureSearch {
        let mut map = BTreeMap::new();
        for (i, p) in phrases.iter().enumerate() {
            map.insert(
                p.to_string(),
                vec![
                    SearchResult {
                        title: format!("page {i}"),
                        url: format!("https://example.org/{i}"),
                        content: format!("facts about {p}"),
                        rank: 0,
                    },
                    SearchResult {
                        title: "shared".into(),
                        url: "https://example.org/shared".into(),
                        content: "shared page".into(),
                        rank: 1,
                    },
                ],
            );
        }
        FixtureSearch::new(map)
    }

    fn registry(lm: ScriptedLm, search: FixtureSearch) -> ToolRegistry {
        ToolRegistry::new(Arc::new(search), Arc::new(lm))
    }

    fn run(
        src: &str,
        tools: &ToolRegistry,
        budget: ExecutionBudget,
    ) -> (ExecutionOutcome, Vec<NotificationEvent>) {
        let ast = parse_script(src).unwrap();
        let mut events = Vec::new();
        let outcome = execute(
            &ast,
            "swallows",
            tools,
            &budget,
            &CancellationSignal::new(),
            &mut |e| events.push(e.clone()),
        );
        (outcome, events)
    }

    const SEARCH_LOOP: &str = r#"# Step 1: search
ctx = ""
for p in ["a", "b"] {
    yield_notification("search_started", "{p}")
    for r in search(p) {
        ctx = append(ctx, r, "\n\n")
    }
}

# Step 2: report
yield_report(llm("write", ctx))
"#;

    #[test]
    fn completes_with_report_and_provenance() {
        let tools = registry(ScriptedLm::constant("# Report"), corpus(&["a", "b"]));
        let (out, events) = run(SEARCH_LOOP, &tools, ExecutionBudget::default());
        assert_eq!(
            out.terminal,
            Terminal::Completed {
                report: "# Report".into()
            }
        );
        let kinds: Vec<_> = events.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, ["search_started", "search_started", FINAL_REPORT]);
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(events[2].payload_str("report"), Some("# Report"));
        assert_eq!(out.state.context_variables, ["ctx"]);
        assert_eq!(out.state.appended_results, 4);
        assert_eq!(out.state.sources.len(), 3);
        assert_eq!(
            out.state.get("ctx").unwrap().as_text().unwrap(),
            "facts about a\n\nshared page\n\nfacts about b\n\nshared page"
        );
        let req = out.lm_requests().next().unwrap();
        assert_eq!(req.instruction, "write");
        assert!(req.context.starts_with("facts about a"));
        // Loop variables do not outlive their loop.
        assert!(out.state.get("p").is_none());
    }

    #[test]
    fn cancelled_before_start_makes_no_calls() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&["a", "b"]));
        let ast = parse_script(SEARCH_LOOP).unwrap();
        let cancel = CancellationSignal::new();
        cancel.cancel();
        let mut events = Vec::new();
        let out = execute(
            &ast,
            "q",
            &tools,
            &ExecutionBudget::default(),
            &cancel,
            &mut |e| events.push(e.clone()),
        );
        assert_eq!(out.terminal, Terminal::Cancelled);
        assert_eq!(out.tool_calls().count(), 0);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, CANCELLED);
    }

    #[test]
    fn cancel_from_sink_stops_before_next_tool_call() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&["a", "b"]));
        let ast = parse_script(SEARCH_LOOP).unwrap();
        let cancel = CancellationSignal::new();
        let c = cancel.clone();
        let mut sink = |e: &NotificationEvent| {
            if e.kind == "search_started" {
                c.cancel();
            }
        };
        let out = execute(
            &ast,
            "q",
            &tools,
            &ExecutionBudget::default(),
            &cancel,
            &mut sink,
        );
        assert_eq!(out.terminal, Terminal::Cancelled);
        assert_eq!(out.tool_calls().count(), 0);
    }

    #[test]
    fn tool_call_budget_names_the_limit() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&["a", "b"]));
        let budget = ExecutionBudget {
            max_tool_calls: 1,
            ..Default::default()
        };
        let (out, events) = run(SEARCH_LOOP, &tools, budget);
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Budget {
                budget: BudgetKind::ToolCalls,
                ..
            })
        ));
        assert_eq!(out.tool_calls().count(), 1);
        let last = events.last().unwrap();
        assert_eq!(last.kind, ERROR);
        assert_eq!(last.payload_str("budget"), Some("max_tool_calls"));
        assert_eq!(last.payload_str("reason"), Some("budget"));
    }

    #[test]
    fn foreach_and_token_budgets() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&["a", "b"]));
        let budget = ExecutionBudget {
            max_foreach_iterations: 2,
            ..Default::default()
        };
        let (out, _) = run(SEARCH_LOOP, &tools, budget);
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Budget {
                budget: BudgetKind::ForeachIterations,
                ..
            })
        ));

        let budget = ExecutionBudget {
            max_lm_input_tokens: 5,
            ..Default::default()
        };
        let (out, _) = run(SEARCH_LOOP, &tools, budget);
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Budget {
                budget: BudgetKind::LmInputTokens,
                ..
            })
        ));
        assert_eq!(out.lm_requests().count(), 0);
    }

    #[test]
    fn state_bytes_budget() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&[]));
        let src = "# Step 1: grow\ns = \"0123456789\"\nrepeat 5 {\n    s = concat(s, s)\n}\nyield_report(s)\n";
        let budget = ExecutionBudget {
            max_state_bytes: 100,
            ..Default::default()
        };
        let (out, _) = run(src, &tools, budget);
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Budget {
                budget: BudgetKind::StateBytes,
                ..
            })
        ));
    }

    #[test]
    fn tool_errors_end_the_run() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&["a"]));
        let (out, events) = run(SEARCH_LOOP, &tools, ExecutionBudget::default());
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Tool { .. })
        ));
        assert_eq!(events.last().unwrap().payload_str("reason"), Some("tool"));
    }

    #[test]
    fn conditions_and_clears() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&[]));
        let src = r#"# Step 1: branch
xs = split_lines("a\nb")
n = length(xs)
buf = ""
if n == 2 {
    out = "two"
} else {
    out = "other"
}
if empty(buf) {
    out = concat(out, " empty")
}
if n < 1 {
    out = "never"
}
yield_report(out)
"#;
        let (out, _) = run(src, &tools, ExecutionBudget::default());
        assert_eq!(
            out.terminal,
            Terminal::Completed {
                report: "two empty".into()
            }
        );
        assert!(out
            .trace
            .iter()
            .any(|t| matches!(t, TraceEntry::Cleared { variable, .. } if variable == "buf")));
    }

    #[test]
    fn reserved_types_and_missing_report_fail_at_runtime() {
        let tools = registry(ScriptedLm::constant("x"), corpus(&[]));
        let (out, _) = run(
            "# Step 1: bad\nyield_notification(\"error\", \"x\")\n",
            &tools,
            ExecutionBudget::default(),
        );
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Runtime { .. })
        ));
        let (out, events) = run(
            "# Step 1: quiet\nx = 1\n",
            &tools,
            ExecutionBudget::default(),
        );
        assert!(matches!(
            out.terminal,
            Terminal::Failed(Failure::Runtime { .. })
        ));
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn spawned_execution_streams_events() {
        let tools = registry(ScriptedLm::constant("done"), corpus(&["a", "b"]));
        let handle = spawn_execution(
            Arc::new(parse_script(SEARCH_LOOP).unwrap()),
            "q".into(),
            tools,
            ExecutionBudget::default(),
            CancellationSignal::new(),
        );
        let events: Vec<_> = handle.events.iter().collect();
        assert_eq!(events.len(), 3);
        assert!(events.last().unwrap().is_terminal());
        let out = handle.join();
        assert_eq!(out.events_emitted, 3);
    }
}
