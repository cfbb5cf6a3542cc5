//! The strategy script language: syntax tree, parser, canonical formatter
//! and static validator.
//!
//! The language is closed. Its only effectful operations are calls to the
//! `search` and `llm` tools, so a script that passes validation cannot touch
//! the host.

mod ast;
mod error;
mod format;
mod lexer;
mod parser;
mod validate;

pub use ast::{
    Condition, Expression, NodeId, ScriptAst, Span, Statement, StepBlock, TemplatePart, ToolName,
    PROMPT_VAR, TERMINAL_TYPES,
};
pub use error::ParseError;
pub use format::format_script;
pub use parser::{parse_script, parse_script_bytes, BUILTINS, KEYWORDS};
pub use validate::{
    repeat_bound, validate_script, RuleId, ValidationReport, ValidatorLimits, Verdict, Violation,
};
