//! Canonical text rendering of a script.

use std::fmt::Write;

use super::ast::{Condition, Expression, ScriptAst, Statement, TemplatePart};

const INDENT: &str = "    ";

/// Renders `ast` in canonical form: one blank line between step blocks,
/// four-space indentation, every call on a single line.
pub fn format_script(ast: &ScriptAst) -> String {
    let mut out = String::new();
    for (i, step) in ast.steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if step.title.is_empty() {
            let _ = writeln!(out, "# Step {}", step.label);
        } else {
            let _ = writeln!(out, "# Step {}: {}", step.label, step.title);
        }
        for stmt in &step.statements {
            statement(&mut out, stmt, 0);
        }
    }
    out
}

fn statement(out: &mut String, stmt: &Statement, depth: usize) {
    let pad = INDENT.repeat(depth);
    match stmt {
        Statement::Assign { name, value } => {
            let _ = writeln!(out, "{pad}{name} = {}", expression(value));
        }
        Statement::ForEach {
            var,
            iterable,
            body,
        } => {
            let _ = writeln!(out, "{pad}for {var} in {} {{", expression(iterable));
            block(out, body, depth);
        }
        Statement::RepeatN { count, body } => {
            let _ = writeln!(out, "{pad}repeat {} {{", expression(count));
            block(out, body, depth);
        }
        Statement::If {
            condition: cond,
            then_body,
            else_body,
        } => {
            let _ = writeln!(out, "{pad}if {} {{", condition(cond));
            for s in then_body {
                statement(out, s, depth + 1);
            }
            if else_body.is_empty() {
                let _ = writeln!(out, "{pad}}}");
            } else {
                let _ = writeln!(out, "{pad}}} else {{");
                block(out, else_body, depth);
            }
        }
        Statement::YieldNotification {
            kind,
            description,
            extra,
        } => {
            let _ = write!(
                out,
                "{pad}yield_notification({}, {}",
                expression(kind),
                expression(description)
            );
            for (key, value) in extra {
                let _ = write!(out, ", {key}: {}", expression(value));
            }
            out.push_str(")\n");
        }
        Statement::YieldReport { report } => {
            let _ = writeln!(out, "{pad}yield_report({})", expression(report));
        }
    }
}

fn block(out: &mut String, body: &[Statement], depth: usize) {
    for s in body {
        statement(out, s, depth + 1);
    }
    let _ = writeln!(out, "{}}}", INDENT.repeat(depth));
}

fn condition(c: &Condition) -> String {
    match c {
        Condition::Eq(a, b) => format!("{} == {}", expression(a), expression(b)),
        Condition::Ne(a, b) => format!("{} != {}", expression(a), expression(b)),
        Condition::Lt(a, b) => format!("{} < {}", expression(a), expression(b)),
        Condition::Le(a, b) => format!("{} <= {}", expression(a), expression(b)),
        Condition::IsEmpty(a) => format!("empty({})", expression(a)),
        Condition::NotEmpty(a) => format!("not_empty({})", expression(a)),
    }
}

pub(crate) fn expression(e: &Expression) -> String {
    match e {
        Expression::Str(s) => {
            let mut out = String::from("\"");
            escape_into(&mut out, s);
            out.push('"');
            out
        }
        Expression::Int(i) => i.to_string(),
        Expression::Var(name) => name.clone(),
        Expression::Interpolate(parts) => {
            let mut out = String::from("\"");
            for p in parts {
                match p {
                    TemplatePart::Text(t) => escape_into(&mut out, t),
                    TemplatePart::Hole(name) => {
                        let _ = write!(out, "{{{name}}}");
                    }
                }
            }
            out.push('"');
            out
        }
        Expression::List(items) => format!("[{}]", list(items)),
        Expression::Concat(items) => format!("concat({})", list(items)),
        Expression::JoinWith { separator, list } => {
            format!("join({}, {})", expression(separator), expression(list))
        }
        Expression::SplitLines(e) => format!("split_lines({})", expression(e)),
        Expression::StripBlank(e) => format!("strip_blank({})", expression(e)),
        Expression::Length(e) => format!("length({})", expression(e)),
        Expression::Append {
            target,
            item,
            separator,
        } => match separator {
            Some(sep) => format!(
                "append({}, {}, {})",
                expression(target),
                expression(item),
                expression(sep)
            ),
            None => format!("append({}, {})", expression(target), expression(item)),
        },
        Expression::ToolCall { tool, args } => format!("{tool}({})", list(args)),
    }
}

fn list(items: &[Expression]) -> String {
    items.iter().map(expression).collect::<Vec<_>>().join(", ")
}

fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '{' => out.push_str("{{"),
            '}' => out.push_str("}}"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
}
