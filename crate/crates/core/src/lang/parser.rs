//! Recursive-descent parser for strategy scripts.
//!
//! Statements are newline-terminated; newlines inside `(...)` and `[...]`
//! are insignificant. See `docs/ssl-grammar.md` for the grammar.

use std::collections::BTreeMap;

use super::ast::{
    Condition, Expression, NodeId, ScriptAst, Span, Statement, StepBlock, TemplatePart,
};
use super::error::ParseError;
use super::lexer::{tokenize, Tok, Token};

/// Names handled by the language itself rather than dispatched as tool calls.
pub const BUILTINS: [&str; 6] = [
    "concat",
    "join",
    "split_lines",
    "strip_blank",
    "append",
    "length",
];

pub const KEYWORDS: [&str; 9] = [
    "for",
    "in",
    "repeat",
    "if",
    "else",
    "yield_notification",
    "yield_report",
    "empty",
    "not_empty",
];

/// Parses UTF-8 script source into a [`ScriptAst`].
pub fn parse_script(source: &str) -> Result<ScriptAst, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        spans: BTreeMap::new(),
        next_id: 0,
    };
    let steps = p.script()?;
    Ok(ScriptAst {
        steps,
        source_span_index: p.spans,
    })
}

/// Byte-level entry point; invalid UTF-8 is reported as a parse error.
pub fn parse_script_bytes(bytes: &[u8]) -> Result<ScriptAst, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_script(s),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = prefix.iter().filter(|&&b| b == b'\n').count() + 1;
            let column = prefix.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
            Err(ParseError::new(
                line,
                column,
                "source is not valid UTF-8",
                Vec::new(),
            ))
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    spans: BTreeMap<NodeId, Span>,
    next_id: u32,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>, expected: &[&str]) -> ParseError {
        let span = self.span();
        ParseError::new(
            span.line,
            span.column,
            message,
            expected.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        self.error(format!("unexpected {}", self.peek().describe()), expected)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.unexpected(&[what]))
        }
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.advance();
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.advance();
                Ok(name)
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn script(&mut self) -> PResult<Vec<StepBlock>> {
        self.skip_newlines();
        let mut steps = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::StepHeader { label, title } => {
                    self.advance();
                    let statements = self.step_body()?;
                    steps.push(StepBlock {
                        label,
                        title,
                        statements,
                    });
                }
                _ if steps.is_empty() => {
                    return Err(self.error(
                        "statements must follow a `# Step <label>:` comment",
                        &["step header"],
                    ));
                }
                _ => return Err(self.unexpected(&["statement", "step header"])),
            }
        }
        if steps.is_empty() {
            return Err(self.error("expected at least one step block", &["step header"]));
        }
        Ok(steps)
    }

    fn step_body(&mut self) -> PResult<Vec<Statement>> {
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::Eof | Tok::StepHeader { .. } => return Ok(out),
                _ => out.push(self.statement()?),
            }
        }
    }

    /// `{ NEWLINE statement* }`
    fn block(&mut self) -> PResult<Vec<Statement>> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::RBrace => {
                    self.advance();
                    return Ok(out);
                }
                Tok::Eof => return Err(self.error("unclosed block", &["`}`"])),
                Tok::StepHeader { .. } => {
                    return Err(self.error("step header inside a block", &["statement", "`}`"]))
                }
                _ => out.push(self.statement()?),
            }
        }
    }

    fn end_of_statement(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline => {
                self.advance();
                Ok(())
            }
            Tok::Eof | Tok::RBrace | Tok::StepHeader { .. } => Ok(()),
            _ => Err(self.unexpected(&["end of line"])),
        }
    }

    fn statement(&mut self) -> PResult<Statement> {
        let start = self.span();
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let stmt = match self.peek().clone() {
            Tok::Ident(kw) if kw == "for" => {
                self.advance();
                let var = self.ident()?;
                match self.peek() {
                    Tok::Ident(k) if k == "in" => {
                        self.advance();
                    }
                    _ => return Err(self.unexpected(&["`in`"])),
                }
                let iterable = self.expression()?;
                let body = self.block()?;
                Statement::ForEach {
                    var,
                    iterable,
                    body,
                }
            }
            Tok::Ident(kw) if kw == "repeat" => {
                self.advance();
                let count = self.expression()?;
                let body = self.block()?;
                Statement::RepeatN { count, body }
            }
            Tok::Ident(kw) if kw == "if" => {
                self.advance();
                let condition = self.condition()?;
                let then_body = self.block()?;
                let else_body = match self.peek() {
                    Tok::Ident(k) if k == "else" => {
                        self.advance();
                        self.block()?
                    }
                    _ => Vec::new(),
                };
                Statement::If {
                    condition,
                    then_body,
                    else_body,
                }
            }
            Tok::Ident(kw) if kw == "yield_notification" => {
                self.advance();
                self.notification()?
            }
            Tok::Ident(kw) if kw == "yield_report" => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                self.skip_newlines();
                let report = self.expression()?;
                self.skip_newlines();
                self.expect(Tok::RParen, "`)`")?;
                Statement::YieldReport { report }
            }
            Tok::Ident(_) if *self.peek_at(1) == Tok::Assign => {
                let name = self.ident()?;
                self.advance();
                let value = self.expression()?;
                Statement::Assign { name, value }
            }
            _ => {
                return Err(self.unexpected(&[
                    "assignment",
                    "`for`",
                    "`repeat`",
                    "`if`",
                    "`yield_notification`",
                    "`yield_report`",
                ]))
            }
        };
        let span = Span {
            end: self.prev_end(),
            ..start
        };
        self.spans.insert(id, span);
        self.end_of_statement()?;
        Ok(stmt)
    }

    fn notification(&mut self) -> PResult<Statement> {
        self.expect(Tok::LParen, "`(`")?;
        self.skip_newlines();
        let kind = self.expression()?;
        self.skip_newlines();
        self.expect(Tok::Comma, "`,`")?;
        self.skip_newlines();
        let description = self.expression()?;
        let mut extra = BTreeMap::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::RParen => {
                    self.advance();
                    break;
                }
                Tok::Comma => {
                    self.advance();
                    self.skip_newlines();
                    if *self.peek() == Tok::RParen {
                        continue;
                    }
                    let key_span = self.span();
                    let key = self.ident()?;
                    self.expect(Tok::Colon, "`:`")?;
                    self.skip_newlines();
                    let value = self.expression()?;
                    if extra.insert(key.clone(), value).is_some() {
                        return Err(ParseError::new(
                            key_span.line,
                            key_span.column,
                            format!("duplicate notification field `{key}`"),
                            Vec::new(),
                        ));
                    }
                }
                _ => return Err(self.unexpected(&["`,`", "`)`"])),
            }
        }
        Ok(Statement::YieldNotification {
            kind,
            description,
            extra,
        })
    }

    fn condition(&mut self) -> PResult<Condition> {
        if let Tok::Ident(kw) = self.peek().clone() {
            if kw == "empty" || kw == "not_empty" {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expression()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(if kw == "empty" {
                    Condition::IsEmpty(e)
                } else {
                    Condition::NotEmpty(e)
                });
            }
        }
        let lhs = self.expression()?;
        let op = self.peek().clone();
        match op {
            Tok::EqEq | Tok::NotEq | Tok::Lt | Tok::Le => {
                self.advance();
            }
            _ => return Err(self.unexpected(&["`==`", "`!=`", "`<`", "`<=`"])),
        }
        let rhs = self.expression()?;
        Ok(match op {
            Tok::EqEq => Condition::Eq(lhs, rhs),
            Tok::NotEq => Condition::Ne(lhs, rhs),
            Tok::Lt => Condition::Lt(lhs, rhs),
            _ => Condition::Le(lhs, rhs),
        })
    }

    fn expression(&mut self) -> PResult<Expression> {
        match self.peek().clone() {
            Tok::Str(parts) => {
                self.advance();
                Ok(string_expression(parts))
            }
            Tok::Int(i) => {
                self.advance();
                Ok(Expression::Int(i))
            }
            Tok::LBracket => {
                self.advance();
                let items = self.comma_list(Tok::RBracket, "`]`")?;
                Ok(Expression::List(items))
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                let call_span = self.span();
                self.advance();
                if *self.peek() != Tok::LParen {
                    return Ok(Expression::Var(name));
                }
                self.advance();
                let args = self.comma_list(Tok::RParen, "`)`")?;
                builtin_or_tool(name, args).map_err(|msg| {
                    ParseError::new(call_span.line, call_span.column, msg, Vec::new())
                })
            }
            _ => Err(self.unexpected(&["expression"])),
        }
    }

    /// Comma-separated expressions up to `close`; the opening token has been
    /// consumed. A trailing comma is accepted.
    fn comma_list(&mut self, close: Tok, what: &str) -> PResult<Vec<Expression>> {
        let mut items = Vec::new();
        loop {
            self.skip_newlines();
            if *self.peek() == close {
                self.advance();
                return Ok(items);
            }
            items.push(self.expression()?);
            self.skip_newlines();
            if *self.peek() == Tok::Comma {
                self.advance();
            } else if *self.peek() == close {
                self.advance();
                return Ok(items);
            } else {
                return Err(self.unexpected(&["`,`", what]));
            }
        }
    }
}

fn string_expression(parts: Vec<TemplatePart>) -> Expression {
    if parts.iter().all(|p| matches!(p, TemplatePart::Text(_))) {
        let text = parts
            .into_iter()
            .map(|p| match p {
                TemplatePart::Text(t) => t,
                TemplatePart::Hole(_) => unreachable!(),
            })
            .collect();
        Expression::Str(text)
    } else {
        Expression::Interpolate(parts)
    }
}

/// Resolves a call to one of the built-in operations; any other name is a
/// tool call, which the validator checks against the tool whitelist.
fn builtin_or_tool(name: String, mut args: Vec<Expression>) -> Result<Expression, String> {
    let arity = |lo: usize, hi: usize, args: &Vec<Expression>| {
        if args.len() < lo || args.len() > hi {
            let want = if lo == hi {
                format!("{lo}")
            } else {
                format!("{lo} to {hi}")
            };
            Err(format!(
                "`{name}` takes {want} argument(s), got {}",
                args.len()
            ))
        } else {
            Ok(())
        }
    };
    let boxed = |e: Expression| Box::new(e);
    match name.as_str() {
        "concat" => {
            arity(1, usize::MAX, &args)?;
            Ok(Expression::Concat(args))
        }
        "join" => {
            arity(2, 2, &args)?;
            let list = args.pop().unwrap();
            let separator = args.pop().unwrap();
            Ok(Expression::JoinWith {
                separator: boxed(separator),
                list: boxed(list),
            })
        }
        "split_lines" => {
            arity(1, 1, &args)?;
            Ok(Expression::SplitLines(boxed(args.pop().unwrap())))
        }
        "strip_blank" => {
            arity(1, 1, &args)?;
            Ok(Expression::StripBlank(boxed(args.pop().unwrap())))
        }
        "length" => {
            arity(1, 1, &args)?;
            Ok(Expression::Length(boxed(args.pop().unwrap())))
        }
        "append" => {
            arity(2, 3, &args)?;
            let separator = if args.len() == 3 {
                args.pop().map(boxed)
            } else {
                None
            };
            let item = args.pop().unwrap();
            let target = args.pop().unwrap();
            Ok(Expression::Append {
                target: boxed(target),
                item: boxed(item),
                separator,
            })
        }
        _ => Ok(Expression::ToolCall { tool: name, args }),
    }
}
