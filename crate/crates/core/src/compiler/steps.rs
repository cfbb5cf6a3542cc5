use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// One step of a natural-language strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedStep {
    /// Label as written, without trailing punctuation ("4", "4.1").
    pub label: String,
    /// Step text without its label. Continuation lines (including bullets)
    /// are kept on their own lines, trimmed.
    pub text: String,
    /// Label of the enclosing step for dotted labels whose prefix is itself
    /// a step ("4" for "4.1").
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("strategy body is empty")]
    EmptyBody,
    #[error("no numbered or bulleted steps found in the strategy")]
    NoStepsFound,
}

fn numbered() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+(?:\.\d+)*)([.)])?(?:\s+(.*))?$").unwrap())
}

fn bullet() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\s*)[-*\u{2022}]\s+(.*)$").unwrap())
}

/// Returns the label and remaining text of a numbered step line. Plain
/// numbers need a trailing `.` or `)`; dotted labels ("4.1") do not.
fn step_line(line: &str) -> Option<(String, String)> {
    let caps = numbered().captures(line)?;
    let label = caps[1].to_string();
    if caps.get(2).is_none() && !label.contains('.') {
        return None;
    }
    let text = caps.get(3).map_or("", |m| m.as_str()).trim().to_string();
    Some((label, text))
}

/// Splits a strategy into its steps.
///
/// Numbered lines (`1.`, `2)`, `4.1`, `6.2.`) start steps; every other
/// non-blank line belongs to the step above it. Text before the first
/// numbered line is attached to the first step. A body with no numbered
/// lines but with bullets gets one step per outermost bullet, labelled
/// from 1.
pub fn extract_steps(body: &str) -> Result<Vec<ExtractedStep>, ExtractError> {
    if body.trim().is_empty() {
        return Err(ExtractError::EmptyBody);
    }
    let lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    let has_numbers = lines.iter().any(|l| step_line(l).is_some());

    let mut steps: Vec<ExtractedStep> = Vec::new();
    let mut preamble: Vec<String> = Vec::new();
    let outer_indent = if has_numbers {
        None
    } else {
        lines
            .iter()
            .filter_map(|l| bullet().captures(l).map(|c| c[1].len()))
            .min()
    };
    if !has_numbers && outer_indent.is_none() {
        return Err(ExtractError::NoStepsFound);
    }

    for line in lines {
        let start = if has_numbers {
            step_line(line)
        } else {
            bullet()
                .captures(line)
                .filter(|c| Some(c[1].len()) == outer_indent)
                .map(|c| ((steps.len() + 1).to_string(), c[2].trim().to_string()))
        };
        match start {
            Some((label, text)) => {
                let parent = label
                    .rsplit_once('.')
                    .map(|(p, _)| p.to_string())
                    .filter(|p| steps.iter().any(|s| &s.label == p));
                let mut text_lines = std::mem::take(&mut preamble);
                if !text.is_empty() {
                    text_lines.push(text);
                }
                steps.push(ExtractedStep {
                    label,
                    text: text_lines.join("\n"),
                    parent,
                });
            }
            None => {
                let trimmed = line.trim().to_string();
                match steps.last_mut() {
                    Some(step) if !step.text.is_empty() => {
                        step.text.push('\n');
                        step.text.push_str(&trimmed);
                    }
                    Some(step) => step.text = trimmed,
                    None => preamble.push(trimmed),
                }
            }
        }
    }
    Ok(steps)
}

/// Renders steps back as a numbered list, one step per entry, nested steps
/// indented under their parent.
pub fn render_steps(steps: &[ExtractedStep]) -> String {
    let mut out = String::new();
    for step in steps {
        let depth = step.label.matches('.').count();
        let indent = "    ".repeat(depth);
        let mut lines = step.text.lines();
        out.push_str(&format!(
            "{indent}{}. {}\n",
            step.label,
            lines.next().unwrap_or("")
        ));
        for l in lines {
            out.push_str(&format!("{indent}    {l}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let steps = extract_steps("1. do X").unwrap();
        assert_eq!(
            steps,
            [ExtractedStep {
                label: "1".into(),
                text: "do X".into(),
                parent: None
            }]
        );
    }

    #[test]
    fn nested_labels_and_bullets() {
        let body = "Intro line\n1. first\n2) second\n    - a\n    - b\n2.1 child\n3. third\n3.1. grand\n  3.1.1 deeper\n";
        let steps = extract_steps(body).unwrap();
        let labels: Vec<_> = steps.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["1", "2", "2.1", "3", "3.1", "3.1.1"]);
        assert_eq!(steps[0].text, "Intro line\nfirst");
        assert_eq!(steps[1].text, "second\n- a\n- b");
        assert_eq!(steps[2].parent.as_deref(), Some("2"));
        assert_eq!(steps[5].parent.as_deref(), Some("3.1"));
        assert_eq!(steps[3].parent, None);
    }

    #[test]
    fn bare_numbers_are_not_labels() {
        let steps = extract_steps("1. Search for\n1972 events\n").unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].text, "Search for\n1972 events");
    }

    #[test]
    fn bullets_only() {
        let steps = extract_steps("- one\n  * detail\n- two\n").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].label, "1");
        assert_eq!(steps[0].text, "one\n* detail");
        assert_eq!(steps[1].label, "2");
    }

    #[test]
    fn errors() {
        assert_eq!(extract_steps("  \n"), Err(ExtractError::EmptyBody));
        assert_eq!(
            extract_steps("just prose\nwith no list"),
            Err(ExtractError::NoStepsFound)
        );
    }

    #[test]
    fn rendering_keeps_labels() {
        let steps = extract_steps("1. a\n1.1 b\n    - c\n").unwrap();
        assert_eq!(render_steps(&steps), "1. a\n    1.1. b\n        - c\n");
    }
}
