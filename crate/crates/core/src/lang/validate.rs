//! Static checks that every script must pass before it may run.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{
    Expression, NodeId, ScriptAst, Span, Statement, ToolName, PROMPT_VAR, TERMINAL_TYPES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorLimits {
    pub max_depth: usize,
    pub max_repeat: i64,
    pub max_total_repeat: u64,
}

impl Default for ValidatorLimits {
    fn default() -> Self {
        Self {
            max_depth: 4,
            max_repeat: 10,
            max_total_repeat: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleId {
    /// Source did not parse; only produced by the compiler's repair loop.
    ParseError,
    UnknownTool,
    ToolArity,
    MissingReport,
    UnreachableCode,
    NonLiteralRepeat,
    RepeatNotPositive,
    RepeatLimit,
    TotalRepeatLimit,
    NestingDepth,
    UndefinedVariable,
    ReadonlyVariable,
    DuplicateStepLabel,
    EmptyStep,
    ReservedNotificationType,
}

impl RuleId {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::ParseError => "PARSE_ERROR",
            RuleId::UnknownTool => "UNKNOWN_TOOL",
            RuleId::ToolArity => "TOOL_ARITY",
            RuleId::MissingReport => "MISSING_REPORT",
            RuleId::UnreachableCode => "UNREACHABLE_CODE",
            RuleId::NonLiteralRepeat => "NON_LITERAL_REPEAT",
            RuleId::RepeatNotPositive => "REPEAT_NOT_POSITIVE",
            RuleId::RepeatLimit => "REPEAT_LIMIT",
            RuleId::TotalRepeatLimit => "TOTAL_REPEAT_LIMIT",
            RuleId::NestingDepth => "NESTING_DEPTH",
            RuleId::UndefinedVariable => "UNDEFINED_VARIABLE",
            RuleId::ReadonlyVariable => "READONLY_VARIABLE",
            RuleId::DuplicateStepLabel => "DUPLICATE_STEP_LABEL",
            RuleId::EmptyStep => "EMPTY_STEP",
            RuleId::ReservedNotificationType => "RESERVED_NOTIFICATION_TYPE",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: RuleId,
    pub span: Option<Span>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(
                f,
                "{}:{}: {}: {}",
                s.line, s.column, self.rule_id, self.message
            ),
            None => write!(f, "{}: {}", self.rule_id, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        let verdict = if violations.is_empty() {
            Verdict::Accept
        } else {
            Verdict::Reject
        };
        Self {
            verdict,
            violations,
        }
    }

    pub fn is_accept(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn rule_ids(&self) -> BTreeSet<RuleId> {
        self.violations.iter().map(|v| v.rule_id).collect()
    }
}

/// Checks `ast` against the language rules. Rejection is reported in the
/// returned value, never as an error.
pub fn validate_script(ast: &ScriptAst, limits: &ValidatorLimits) -> ValidationReport {
    let mut v = Validator {
        ast,
        limits,
        next_id: 0,
        out: Vec::new(),
    };
    v.run();
    ValidationReport::from_violations(v.out)
}

/// Worst-case iteration product over all `repeat` nests, treating
/// non-literal counts as unbounded (`None`).
pub fn repeat_bound(ast: &ScriptAst) -> Option<u64> {
    fn block(stmts: &[Statement]) -> Option<u64> {
        let mut worst = 1u64;
        for s in stmts {
            let inner = s
                .child_blocks()
                .into_iter()
                .map(block)
                .try_fold(1u64, |acc, b| b.map(|b| acc.max(b)))?;
            let here = match s {
                Statement::RepeatN {
                    count: Expression::Int(n),
                    ..
                } => u64::try_from(*n).ok()?.checked_mul(inner)?,
                Statement::RepeatN { .. } => return None,
                _ => inner,
            };
            worst = worst.max(here);
        }
        Some(worst)
    }
    ast.steps
        .iter()
        .map(|s| block(&s.statements))
        .try_fold(1u64, |acc, b| b.map(|b| acc.max(b)))
}

struct Validator<'a> {
    ast: &'a ScriptAst,
    limits: &'a ValidatorLimits,
    next_id: u32,
    out: Vec<Violation>,
}

/// Outcome of checking a statement list: which variables are definitely
/// assigned afterwards, and whether every path through it yields the report.
struct Flow {
    defined: BTreeSet<String>,
    reports: bool,
}

impl<'a> Validator<'a> {
    fn push(&mut self, rule_id: RuleId, id: Option<NodeId>, message: impl Into<String>) {
        let span = id.and_then(|id| self.ast.span_of(id));
        self.out.push(Violation {
            rule_id,
            span,
            message: message.into(),
        });
    }

    fn run(&mut self) {
        let mut labels = BTreeSet::new();
        for step in &self.ast.steps {
            if !labels.insert(step.label.as_str()) {
                self.push(
                    RuleId::DuplicateStepLabel,
                    None,
                    format!("step label `{}` appears more than once", step.label),
                );
            }
            if step.statements.is_empty() {
                self.push(
                    RuleId::EmptyStep,
                    None,
                    format!("step `{}` has no statements", step.label),
                );
            }
        }

        let mut defined = BTreeSet::from([PROMPT_VAR.to_string()]);
        let mut reported = false;
        for step in &self.ast.steps {
            let flow = self.block(&step.statements, defined, 0, 1, reported);
            defined = flow.defined;
            reported = flow.reports;
        }
        if !reported {
            self.push(
                RuleId::MissingReport,
                None,
                "no `yield_report` is reached on every path through the script",
            );
        }
    }

    /// `depth` counts enclosing compound statements; `repeat_product` is the
    /// product of the literal counts of enclosing `repeat` loops.
    fn block(
        &mut self,
        stmts: &[Statement],
        mut defined: BTreeSet<String>,
        depth: usize,
        repeat_product: u64,
        mut reported: bool,
    ) -> Flow {
        for stmt in stmts {
            let id = NodeId(self.next_id);
            self.next_id += 1;
            if reported {
                self.push(
                    RuleId::UnreachableCode,
                    Some(id),
                    format!("{} after `yield_report` can never run", stmt.kind_name()),
                );
            }
            if stmt.is_compound() && depth + 1 > self.limits.max_depth {
                self.push(
                    RuleId::NestingDepth,
                    Some(id),
                    format!(
                        "{} nested {} levels deep exceeds the limit of {}",
                        stmt.kind_name(),
                        depth + 1,
                        self.limits.max_depth
                    ),
                );
            }
            for e in stmt.expressions() {
                self.expression(e, id, &defined);
            }
            match stmt {
                Statement::Assign { name, .. } => {
                    self.check_writable(name, id);
                    defined.insert(name.clone());
                }
                Statement::ForEach { var, body, .. } => {
                    self.check_writable(var, id);
                    let mut inner = defined.clone();
                    inner.insert(var.clone());
                    // The body may run zero times: nothing it defines or
                    // reports carries over.
                    self.block(body, inner, depth + 1, repeat_product, false);
                }
                Statement::RepeatN { count, body } => {
                    let literal = self.check_repeat(count, id);
                    let product = match literal {
                        Some(n) => {
                            let p = repeat_product.saturating_mul(n);
                            if p > self.limits.max_total_repeat {
                                self.push(
                                    RuleId::TotalRepeatLimit,
                                    Some(id),
                                    format!(
                                        "nested repeat counts multiply to {p}, above the limit of {}",
                                        self.limits.max_total_repeat
                                    ),
                                );
                            }
                            p
                        }
                        None => repeat_product,
                    };
                    let flow = self.block(body, defined.clone(), depth + 1, product, false);
                    if literal.is_some() {
                        defined = flow.defined;
                        reported = flow.reports;
                    }
                }
                Statement::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    let a =
                        self.block(then_body, defined.clone(), depth + 1, repeat_product, false);
                    let b =
                        self.block(else_body, defined.clone(), depth + 1, repeat_product, false);
                    defined = a.defined.intersection(&b.defined).cloned().collect();
                    reported = a.reports && b.reports;
                }
                Statement::YieldNotification { kind, .. } => {
                    if let Expression::Str(kind) = kind {
                        if TERMINAL_TYPES.contains(&kind.as_str()) {
                            self.push(
                                RuleId::ReservedNotificationType,
                                Some(id),
                                format!(
                                    "notification type `{kind}` is reserved for terminal events"
                                ),
                            );
                        }
                    }
                }
                Statement::YieldReport { .. } => reported = true,
            }
        }
        Flow {
            defined,
            reports: reported,
        }
    }

    fn check_writable(&mut self, name: &str, id: NodeId) {
        if name == PROMPT_VAR {
            self.push(
                RuleId::ReadonlyVariable,
                Some(id),
                format!("`{PROMPT_VAR}` is read-only"),
            );
        }
    }

    /// Returns the literal count when it is acceptable.
    fn check_repeat(&mut self, count: &Expression, id: NodeId) -> Option<u64> {
        let Expression::Int(n) = count else {
            self.push(
                RuleId::NonLiteralRepeat,
                Some(id),
                "repeat count must be an integer literal",
            );
            return None;
        };
        if *n < 1 {
            self.push(
                RuleId::RepeatNotPositive,
                Some(id),
                format!("repeat count {n} is not positive"),
            );
            return None;
        }
        if *n > self.limits.max_repeat {
            self.push(
                RuleId::RepeatLimit,
                Some(id),
                format!(
                    "repeat count {n} exceeds the limit of {}",
                    self.limits.max_repeat
                ),
            );
        }
        Some(*n as u64)
    }

    fn expression(&mut self, e: &Expression, id: NodeId, defined: &BTreeSet<String>) {
        for name in e.variables() {
            if !defined.contains(name) {
                self.push(
                    RuleId::UndefinedVariable,
                    Some(id),
                    format!("`{name}` is not assigned on every path before this use"),
                );
            }
        }
        let mut found = Vec::new();
        e.visit(&mut |sub| {
            if let Expression::ToolCall { tool, args } = sub {
                found.push((tool.clone(), args.len()));
            }
        });
        for (tool, argc) in found {
            match ToolName::parse(&tool) {
                None => self.push(
                    RuleId::UnknownTool,
                    Some(id),
                    format!("`{tool}` is not an available tool (only `search` and `llm`)"),
                ),
                Some(t) => {
                    let (lo, hi) = t.arity();
                    if argc < lo || argc > hi {
                        self.push(
                            RuleId::ToolArity,
                            Some(id),
                            format!("`{tool}` takes {lo} to {hi} arguments, got {argc}"),
                        );
                    }
                }
            }
        }
    }
}
