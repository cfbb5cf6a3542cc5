use std::path::Path;

use super::steps::{render_steps, ExtractedStep};
use crate::lang::Violation;

/// Reference for the script language, shipped as the normative grammar.
pub const LANGUAGE_REFERENCE: &str = include_str!("../../../../docs/ssl-grammar.md");

pub const TOOL_DOCS: &str = "\
search(phrase) -> list of text
search(phrase, k) -> list of text
    Web search. Returns the page text of up to k results (default 5), best first.
llm(instruction) -> text
llm(instruction, context) -> text
    Language model completion. The context, when given, is sent after the instruction.
";

const CODEGEN_TEMPLATE: &str = include_str!("../../assets/prompts/codegen.txt");
const REPAIR_TEMPLATE: &str = include_str!("../../assets/prompts/repair.txt");

/// Prompt templates for code generation and repair.
///
/// `codegen` uses `{language_reference}`, `{tool_docs}` and `{steps}`;
/// `repair` uses `{base_prompt}`, `{previous_output}` and `{violations}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub codegen: String,
    pub repair: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            codegen: CODEGEN_TEMPLATE.to_string(),
            repair: REPAIR_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Reads `codegen.txt` and `repair.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            codegen: std::fs::read_to_string(dir.join("codegen.txt"))?,
            repair: std::fs::read_to_string(dir.join("repair.txt"))?,
        })
    }

    pub fn codegen_prompt(
        &self,
        steps: &[ExtractedStep],
        tool_docs: &str,
        language_reference: &str,
    ) -> String {
        let steps = render_steps(steps);
        fill(
            &self.codegen,
            &[
                ("language_reference", language_reference.trim_end()),
                ("tool_docs", tool_docs.trim_end()),
                ("steps", steps.trim_end()),
            ],
        )
    }

    pub fn repair_prompt(
        &self,
        base_prompt: &str,
        previous_output: &str,
        violations: &[Violation],
    ) -> String {
        let listing: Vec<String> = violations.iter().map(|v| format!("- {v}")).collect();
        fill(
            &self.repair,
            &[
                ("base_prompt", base_prompt.trim_end()),
                ("previous_output", previous_output.trim_end()),
                ("violations", &listing.join("\n")),
            ],
        )
    }
}

/// Replaces `{key}` placeholders in one pass, so substituted text is never
/// scanned for further placeholders.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (key, value) in values {
            if let Some(tail) = after.strip_prefix(key).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = tail;
                continue 'scan;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// The code generation prompt for `steps` with the default template.
pub fn build_codegen_prompt(
    steps: &[ExtractedStep],
    tool_docs: &str,
    language_reference: &str,
) -> String {
    PromptTemplates::default().codegen_prompt(steps, tool_docs, language_reference)
}
