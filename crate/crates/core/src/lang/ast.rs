//! Abstract syntax for strategy scripts.
//!
//! A script is an ordered list of step blocks. Each block is introduced in
//! source by a `# Step <label>: <title>` comment and holds the statements
//! generated for that step of the research strategy.

use std::collections::BTreeMap;
use std::fmt;

/// Byte range into the source text, plus the 1-based line/column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

/// Pre-order index of a statement within a script.
///
/// Step blocks are not numbered; only statements are. The numbering is stable
/// for a given tree shape, so spans recorded at parse time can be looked up by
/// any later walk that visits statements in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Default)]
pub struct ScriptAst {
    pub steps: Vec<StepBlock>,
    /// Source location of each statement, keyed by pre-order [`NodeId`].
    /// Empty for trees built in code rather than parsed.
    pub source_span_index: BTreeMap<NodeId, Span>,
}

/// Structural equality: spans are ignored.
impl PartialEq for ScriptAst {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
    }
}

impl ScriptAst {
    pub fn new(steps: Vec<StepBlock>) -> Self {
        Self {
            steps,
            source_span_index: BTreeMap::new(),
        }
    }

    pub fn span_of(&self, id: NodeId) -> Option<Span> {
        self.source_span_index.get(&id).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.label.as_str())
    }

    /// Visits every statement in pre-order together with its [`NodeId`] and
    /// the number of compound statements enclosing it.
    pub fn walk(&self, mut f: impl FnMut(NodeId, &Statement, usize)) {
        let mut next = 0u32;
        for step in &self.steps {
            walk_block(&step.statements, 0, &mut next, &mut f);
        }
    }
}

fn walk_block(
    stmts: &[Statement],
    depth: usize,
    next: &mut u32,
    f: &mut impl FnMut(NodeId, &Statement, usize),
) {
    for stmt in stmts {
        let id = NodeId(*next);
        *next += 1;
        f(id, stmt, depth);
        for body in stmt.child_blocks() {
            walk_block(body, depth + 1, next, f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBlock {
    /// Step label such as `4.1`.
    pub label: String,
    /// Free text after the label in the step comment; may be empty.
    pub title: String,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Assign {
        name: String,
        value: Expression,
    },
    ForEach {
        var: String,
        iterable: Expression,
        body: Vec<Statement>,
    },
    /// `repeat <count> { ... }`. The count is kept as an expression so that
    /// the validator can reject anything other than a positive literal.
    RepeatN {
        count: Expression,
        body: Vec<Statement>,
    },
    If {
        condition: Condition,
        then_body: Vec<Statement>,
        else_body: Vec<Statement>,
    },
    YieldNotification {
        kind: Expression,
        description: Expression,
        extra: BTreeMap<String, Expression>,
    },
    YieldReport {
        report: Expression,
    },
}

impl Statement {
    /// Nested statement lists, in source order.
    pub fn child_blocks(&self) -> Vec<&[Statement]> {
        match self {
            Statement::ForEach { body, .. } | Statement::RepeatN { body, .. } => vec![body],
            Statement::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            _ => Vec::new(),
        }
    }

    pub fn is_compound(&self) -> bool {
        matches!(
            self,
            Statement::ForEach { .. } | Statement::RepeatN { .. } | Statement::If { .. }
        )
    }

    /// Expressions evaluated directly by this statement (not its children).
    pub fn expressions(&self) -> Vec<&Expression> {
        match self {
            Statement::Assign { value, .. } => vec![value],
            Statement::ForEach { iterable, .. } => vec![iterable],
            Statement::RepeatN { count, .. } => vec![count],
            Statement::If { condition, .. } => condition.operands(),
            Statement::YieldNotification {
                kind,
                description,
                extra,
            } => {
                let mut v = vec![kind, description];
                v.extend(extra.values());
                v
            }
            Statement::YieldReport { report } => vec![report],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Statement::Assign { .. } => "assignment",
            Statement::ForEach { .. } => "for",
            Statement::RepeatN { .. } => "repeat",
            Statement::If { .. } => "if",
            Statement::YieldNotification { .. } => "yield_notification",
            Statement::YieldReport { .. } => "yield_report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Eq(Expression, Expression),
    Ne(Expression, Expression),
    Lt(Expression, Expression),
    Le(Expression, Expression),
    IsEmpty(Expression),
    NotEmpty(Expression),
}

impl Condition {
    pub fn operands(&self) -> Vec<&Expression> {
        match self {
            Condition::Eq(a, b)
            | Condition::Ne(a, b)
            | Condition::Lt(a, b)
            | Condition::Le(a, b) => {
                vec![a, b]
            }
            Condition::IsEmpty(a) | Condition::NotEmpty(a) => vec![a],
        }
    }
}

/// One piece of an interpolated string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Text(String),
    Hole(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Str(String),
    Int(i64),
    Var(String),
    /// String literal with at least one `{name}` hole. Adjacent text parts
    /// are always merged.
    Interpolate(Vec<TemplatePart>),
    List(Vec<Expression>),
    Concat(Vec<Expression>),
    JoinWith {
        separator: Box<Expression>,
        list: Box<Expression>,
    },
    SplitLines(Box<Expression>),
    StripBlank(Box<Expression>),
    /// Appends `item` to a list, or to a text value with an optional
    /// separator that is only inserted when the text is non-empty.
    Append {
        target: Box<Expression>,
        item: Box<Expression>,
        separator: Option<Box<Expression>>,
    },
    Length(Box<Expression>),
    ToolCall {
        tool: String,
        args: Vec<Expression>,
    },
}

impl Expression {
    /// Direct sub-expressions.
    pub fn children(&self) -> Vec<&Expression> {
        match self {
            Expression::Str(_)
            | Expression::Int(_)
            | Expression::Var(_)
            | Expression::Interpolate(_) => Vec::new(),
            Expression::List(items) | Expression::Concat(items) => items.iter().collect(),
            Expression::ToolCall { args, .. } => args.iter().collect(),
            Expression::JoinWith { separator, list } => vec![separator, list],
            Expression::SplitLines(e) | Expression::StripBlank(e) | Expression::Length(e) => {
                vec![e]
            }
            Expression::Append {
                target,
                item,
                separator,
            } => {
                let mut v: Vec<&Expression> = vec![target, item];
                if let Some(s) = separator {
                    v.push(s);
                }
                v
            }
        }
    }

    /// Every variable name read by this expression, including template holes.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expression::Var(name) => out.push(name),
            Expression::Interpolate(parts) => {
                for p in parts {
                    if let TemplatePart::Hole(name) = p {
                        out.push(name);
                    }
                }
            }
            other => {
                for c in other.children() {
                    c.collect_variables(out);
                }
            }
        }
    }

    /// Visits this expression and all descendants.
    pub fn visit(&self, f: &mut impl FnMut(&Expression)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn contains_tool_call(&self, tool: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expression::ToolCall { tool: t, .. } = e {
                found |= t == tool;
            }
        });
        found
    }
}

/// The two callables the language exposes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ToolName {
    Search,
    Llm,
}

impl ToolName {
    pub const ALL: [ToolName; 2] = [ToolName::Search, ToolName::Llm];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::Search => "search",
            ToolName::Llm => "llm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "search" => Some(ToolName::Search),
            "llm" => Some(ToolName::Llm),
            _ => None,
        }
    }

    /// Accepted argument counts, inclusive.
    pub fn arity(self) -> (usize, usize) {
        match self {
            ToolName::Search => (1, 2),
            ToolName::Llm => (1, 2),
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Variable bound to the research prompt before execution starts.
pub const PROMPT_VAR: &str = "PROMPT";

/// Notification types reserved for terminal events.
pub const TERMINAL_TYPES: [&str; 3] = ["final_report", "error", "cancelled"];
