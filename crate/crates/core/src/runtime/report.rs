//! Final and preliminary reports.

use serde::{Deserialize, Serialize};

use super::budget::ExecutionBudget;
use super::interp::{ExecutionOutcome, Terminal};
use super::state::Source;
use super::tokens::count_tokens;
use crate::tools::{llm_complete, LmBackend, ToolConfig, ToolError};

/// Instruction used to turn collected research into a report. `{PROMPT}` is
/// replaced with the research request; the context follows the instruction.
pub const REPORT_INSTRUCTION: &str = "You are writing a deep research report. The research request is given below, followed by the collected source material (CONTEXT). Produce a deep research report on the topic requested in the research request. Go into detail wherever possible, rely only on the information available in CONTEXT, address every instruction given in the research request, and format the report in Markdown. Do not output any other text, just the report.\n\nResearch request:\n{PROMPT}\n\nCONTEXT:";

pub fn report_instruction(prompt: &str) -> String {
    REPORT_INSTRUCTION.replace("{PROMPT}", prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub index: usize,
    pub title: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub markdown: String,
    /// Set when the report was written from an interrupted run.
    pub preliminary: bool,
    pub citations: Vec<Citation>,
}

impl Report {
    pub fn new(markdown: String, preliminary: bool, sources: &[Source]) -> Self {
        let citations = sources
            .iter()
            .enumerate()
            .map(|(i, s)| Citation {
                index: i,
                title: s.title.clone(),
                url: s.url.clone(),
            })
            .collect();
        Self {
            markdown,
            preliminary,
            citations,
        }
    }

    /// The report of a completed run, or `None` for any other terminal.
    pub fn from_outcome(outcome: &ExecutionOutcome) -> Option<Self> {
        match &outcome.terminal {
            Terminal::Completed { report } => {
                Some(Self::new(report.clone(), false, &outcome.state.sources))
            }
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PartialReportError {
    #[error("a preliminary report needs a cancelled run")]
    NotCancelled,
    #[error("no research results were collected before the run stopped")]
    InsufficientContext,
    #[error("collected context needs {tokens} tokens, over the limit of {limit}")]
    ContextTooLarge { tokens: usize, limit: usize },
    #[error("the language model returned an empty report")]
    EmptyReport,
    #[error(transparent)]
    Lm(#[from] ToolError),
}

/// Writes a report from whatever research a cancelled run had collected.
///
/// The context is every store search results were appended to, with stores
/// already merged into another left out. A context too large for the input
/// budget is an error rather than being silently cut.
pub fn generate_partial_report(
    outcome: &ExecutionOutcome,
    prompt: &str,
    lm: &dyn LmBackend,
    config: &ToolConfig,
    budget: &ExecutionBudget,
) -> Result<Report, PartialReportError> {
    if outcome.terminal != Terminal::Cancelled {
        return Err(PartialReportError::NotCancelled);
    }
    let texts = outcome.state.context_texts();
    if texts.is_empty() {
        return Err(PartialReportError::InsufficientContext);
    }
    let context = texts
        .iter()
        .map(|(_, t)| *t)
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut request = crate::tools::LmRequest::new(report_instruction(prompt), context);
    request.temperature = config.temperature;
    request.max_output_tokens = config.max_output_tokens;
    let tokens = count_tokens(&request.text());
    if tokens > budget.max_lm_input_tokens {
        return Err(PartialReportError::ContextTooLarge {
            tokens,
            limit: budget.max_lm_input_tokens,
        });
    }
    let response = llm_complete(lm, &request)?;
    if response.text.trim().is_empty() {
        return Err(PartialReportError::EmptyReport);
    }
    Ok(Report::new(response.text, true, &outcome.state.sources))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ExecutionState, Value};
    use crate::tools::{LmFn, LmRequest, ScriptedLm};

    fn cancelled(state: ExecutionState) -> ExecutionOutcome {
        ExecutionOutcome {
            terminal: Terminal::Cancelled,
            state,
            trace: Vec::new(),
            events_emitted: 1,
        }
    }

    fn state_with(stores: &[(&str, &str)]) -> ExecutionState {
        let mut s = ExecutionState::with_prompt("q");
        for (name, text) in stores {
            s.set(name, Value::Text(text.to_string()));
            s.context_variables.push(name.to_string());
        }
        s.note_source("A", "https://a.example");
        s
    }

    #[test]
    fn partial_report_uses_merged_context_once() {
        let seen = std::sync::Mutex::new(Vec::<LmRequest>::new());
        let lm = LmFn(|r: &LmRequest| {
            seen.lock().unwrap().push(r.clone());
            Ok("# Partial".to_string())
        });
        let outcome = cancelled(state_with(&[("sub", "beta"), ("sup", "alpha\n\nbeta")]));
        let report = generate_partial_report(
            &outcome,
            "q",
            &lm,
            &ToolConfig::default(),
            &ExecutionBudget::default(),
        )
        .unwrap();
        assert!(report.preliminary);
        assert_eq!(report.markdown, "# Partial");
        assert_eq!(report.citations[0].index, 0);
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].context, "alpha\n\nbeta");
        assert_eq!(seen[0].instruction, report_instruction("q"));
    }

    #[test]
    fn partial_report_preconditions() {
        let lm = ScriptedLm::constant("r");
        let cfg = ToolConfig::default();
        let budget = ExecutionBudget::default();
        let empty = cancelled(state_with(&[]));
        assert!(matches!(
            generate_partial_report(&empty, "q", &lm, &cfg, &budget),
            Err(PartialReportError::InsufficientContext)
        ));
        let mut done = cancelled(state_with(&[("c", "x")]));
        done.terminal = Terminal::Completed { report: "r".into() };
        assert!(matches!(
            generate_partial_report(&done, "q", &lm, &cfg, &budget),
            Err(PartialReportError::NotCancelled)
        ));
        let big = cancelled(state_with(&[("c", &"x".repeat(40_000))]));
        assert!(matches!(
            generate_partial_report(&big, "q", &lm, &cfg, &budget),
            Err(PartialReportError::ContextTooLarge { .. })
        ));
    }
}
