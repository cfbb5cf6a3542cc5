use super::ast::{Span, TemplatePart};
use super::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    /// String literal already split into text and `{hole}` parts.
    Str(Vec<TemplatePart>),
    StepHeader {
        label: String,
        title: String,
    },
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Newline,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Str(_) => "string literal".into(),
            Tok::StepHeader { label, .. } => format!("step header `Step {label}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Assign => "`=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::NotEq => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
    out: Vec<Token>,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut lx = Lexer {
        src,
        pos: 0,
        line: 1,
        col: 1,
        out: Vec::new(),
    };
    lx.run()?;
    Ok(lx.out)
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn mark(&self) -> Span {
        Span {
            start: self.pos,
            end: self.pos,
            line: self.line,
            column: self.col,
        }
    }

    fn push(&mut self, tok: Tok, mut span: Span) {
        span.end = self.pos;
        self.out.push(Token { tok, span });
    }

    fn err(&self, at: Span, message: impl Into<String>) -> ParseError {
        ParseError::new(at.line, at.column, message, Vec::new())
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(c) = self.peek() {
            let start = self.mark();
            match c {
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    self.push(Tok::Newline, start);
                }
                '#' => self.comment(start),
                '"' => {
                    let parts = self.string(start)?;
                    self.push(Tok::Str(parts), start);
                }
                '(' | ')' | '{' | '}' | '[' | ']' | ',' | ':' => {
                    self.bump();
                    let tok = match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '{' => Tok::LBrace,
                        '}' => Tok::RBrace,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        ',' => Tok::Comma,
                        _ => Tok::Colon,
                    };
                    self.push(tok, start);
                }
                '=' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        self.push(Tok::EqEq, start);
                    } else {
                        self.push(Tok::Assign, start);
                    }
                }
                '!' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        self.push(Tok::NotEq, start);
                    } else {
                        return Err(self.err(start, "unexpected `!` (did you mean `!=`?)"));
                    }
                }
                '<' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        self.push(Tok::Le, start);
                    } else {
                        self.push(Tok::Lt, start);
                    }
                }
                '-' if self.peek2().is_some_and(|d| d.is_ascii_digit()) => {
                    self.bump();
                    self.int(start, true)?;
                }
                c if c.is_ascii_digit() => self.int(start, false)?,
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            name.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.push(Tok::Ident(name), start);
                }
                other => {
                    return Err(self.err(start, format!("unexpected character {other:?}")));
                }
            }
        }
        let end = self.mark();
        self.push(Tok::Eof, end);
        Ok(())
    }

    fn int(&mut self, start: Span, negative: bool) -> Result<(), ParseError> {
        let digits_from = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self
            .peek()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        {
            return Err(self.err(start, "identifiers may not start with a digit"));
        }
        let digits = &self.src[digits_from..self.pos];
        let text = if negative {
            format!("-{digits}")
        } else {
            digits.to_string()
        };
        let value: i64 = text
            .parse()
            .map_err(|_| self.err(start, format!("integer literal `{text}` out of range")))?;
        self.push(Tok::Int(value), start);
        Ok(())
    }

    /// A `#` comment. Lines of the form `# Step <label>[: title]` become step
    /// headers; everything else is discarded.
    fn comment(&mut self, start: Span) {
        let line_end = self.src[self.pos..]
            .find('\n')
            .map_or(self.src.len(), |i| self.pos + i);
        let text = &self.src[self.pos + 1..line_end];
        while self.pos < line_end {
            self.bump();
        }
        let line_start = matches!(
            self.out.last(),
            None | Some(Token {
                tok: Tok::Newline,
                ..
            })
        );
        if !line_start {
            return;
        }
        if let Some((label, title)) = parse_step_header(text) {
            self.push(Tok::StepHeader { label, title }, start);
        }
    }

    fn string(&mut self, start: Span) -> Result<Vec<TemplatePart>, ParseError> {
        self.bump(); // opening quote
        let mut parts = Vec::new();
        let mut text = String::new();
        loop {
            let here = self.mark();
            let Some(c) = self.bump() else {
                return Err(self.err(start, "unterminated string literal"));
            };
            match c {
                '"' => break,
                '\n' => return Err(self.err(start, "unterminated string literal")),
                '\\' => {
                    let esc = self
                        .bump()
                        .ok_or_else(|| self.err(start, "unterminated string literal"))?;
                    match esc {
                        'n' => text.push('\n'),
                        't' => text.push('\t'),
                        'r' => text.push('\r'),
                        '"' => text.push('"'),
                        '\\' => text.push('\\'),
                        'u' => text.push(self.unicode_escape(here)?),
                        other => {
                            return Err(self.err(here, format!("unknown escape `\\{other}`")));
                        }
                    }
                }
                '{' => {
                    if self.peek() == Some('{') {
                        self.bump();
                        text.push('{');
                        continue;
                    }
                    let mut name = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            name.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if self.peek() != Some('}') || !is_identifier(&name) {
                        return Err(self.err(
                            here,
                            "interpolation holes must be `{name}`; write `{{` for a literal brace",
                        ));
                    }
                    self.bump();
                    if !text.is_empty() {
                        parts.push(TemplatePart::Text(std::mem::take(&mut text)));
                    }
                    parts.push(TemplatePart::Hole(name));
                }
                '}' => {
                    if self.peek() == Some('}') {
                        self.bump();
                        text.push('}');
                    } else {
                        return Err(self.err(here, "unmatched `}` in string; write `}}`"));
                    }
                }
                other => text.push(other),
            }
        }
        if !text.is_empty() || parts.is_empty() {
            parts.push(TemplatePart::Text(text));
        }
        Ok(parts)
    }

    fn unicode_escape(&mut self, at: Span) -> Result<char, ParseError> {
        if self.bump() != Some('{') {
            return Err(self.err(at, "expected `{` after `\\u`"));
        }
        let mut hex = String::new();
        while let Some(c) = self.peek() {
            if c == '}' {
                break;
            }
            if hex.len() >= 6 || !c.is_ascii_hexdigit() {
                return Err(self.err(at, "malformed unicode escape"));
            }
            hex.push(c);
            self.bump();
        }
        if self.bump() != Some('}') || hex.is_empty() {
            return Err(self.err(at, "malformed unicode escape"));
        }
        u32::from_str_radix(&hex, 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| self.err(at, "unicode escape is not a scalar value"))
    }
}

/// Recognizes the body of a step comment (text after `#`).
pub(crate) fn parse_step_header(comment: &str) -> Option<(String, String)> {
    let rest = comment.trim_start().strip_prefix("Step")?;
    if !rest.starts_with([' ', '\t']) {
        return None;
    }
    let rest = rest.trim_start();
    let label_end = rest
        .find(|c: char| c.is_whitespace() || c == ':')
        .unwrap_or(rest.len());
    let label = &rest[..label_end];
    if label.is_empty() {
        return None;
    }
    let after = rest[label_end..].trim_start();
    let title = after.strip_prefix(':').unwrap_or(after).trim();
    Some((label.to_string(), title.to_string()))
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
