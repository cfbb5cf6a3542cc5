use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompt::{PromptTemplates, LANGUAGE_REFERENCE, TOOL_DOCS};
use super::steps::{extract_steps, ExtractError, ExtractedStep};
use crate::lang::{
    format_script, parse_script, validate_script, RuleId, ScriptAst, Span, ValidationReport,
    ValidatorLimits, Violation,
};
use crate::tools::{LmBackend, LmRequest, ToolError};

/// A natural-language strategy as stored by the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyText {
    pub id: String,
    pub title: String,
    pub body: String,
    pub revision: u64,
}

/// One round of the generate-and-check loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileAttempt {
    pub attempt: u32,
    pub prompt: String,
    /// Model output exactly as returned.
    pub raw_output: String,
    pub report: ValidationReport,
}

#[derive(Debug, Clone)]
pub struct CompilationArtifact {
    pub script: ScriptAst,
    /// Canonical source of `script`.
    pub source_text: String,
    pub attempts: u32,
    pub transcript: Vec<CompileAttempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Strategy step labels with no step block in the script.
    pub missing: Vec<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub limits: ValidatorLimits,
    pub max_attempts: u32,
    pub max_output_tokens: u32,
    pub templates: PromptTemplates,
    /// Each attempt is appended here as one JSON line when set.
    pub transcript_path: Option<PathBuf>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            limits: ValidatorLimits::default(),
            max_attempts: 3,
            max_output_tokens: 4096,
            templates: PromptTemplates::default(),
            transcript_path: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error(transparent)]
    Steps(#[from] ExtractError),
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("language model failed on attempt {attempt}: {source}")]
    Lm { attempt: u32, source: ToolError },
    #[error("no valid script after {} attempt(s); last problems: {}", .transcript.len(), last_problems(.transcript))]
    Rejected { transcript: Vec<CompileAttempt> },
    #[error("cannot write compile transcript {path}: {source}")]
    Transcript {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn last_problems(transcript: &[CompileAttempt]) -> String {
    transcript
        .last()
        .map(|a| {
            a.report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        })
        .unwrap_or_default()
}

impl CompileError {
    /// Attempts made before the failure, when there were any.
    pub fn transcript(&self) -> &[CompileAttempt] {
        match self {
            CompileError::Rejected { transcript } => transcript,
            _ => &[],
        }
    }
}

/// Pulls the script out of a model answer: the first fenced code block when
/// there is one, otherwise the whole answer.
pub fn extract_script(raw: &str) -> String {
    let mut lines = raw.lines();
    let mut fenced = None;
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            let body: Vec<&str> = lines
                .by_ref()
                .take_while(|l| !l.trim_start().starts_with("```"))
                .collect();
            fenced = Some(body.join("\n"));
            break;
        }
    }
    let mut text = fenced.unwrap_or_else(|| raw.to_string());
    let trimmed = text.trim().to_string();
    text = trimmed;
    text.push('\n');
    text
}

/// Parses and validates generated source. A parse failure is reported as a
/// `PARSE_ERROR` violation so it can be fed back like any other problem.
pub fn check_source(
    source: &str,
    limits: &ValidatorLimits,
) -> (Option<ScriptAst>, ValidationReport) {
    match parse_script(source) {
        Ok(ast) => {
            let report = validate_script(&ast, limits);
            (Some(ast), report)
        }
        Err(e) => (
            None,
            ValidationReport::from_violations(vec![Violation {
                rule_id: RuleId::ParseError,
                span: Some(Span {
                    start: 0,
                    end: 0,
                    line: e.line,
                    column: e.column,
                }),
                message: e.to_string(),
            }]),
        ),
    }
}

/// Generates a script for `strategy` with `lm`, feeding validator findings
/// back until a script is accepted or `max_attempts` is used up.
pub fn compile_strategy(
    strategy: &StrategyText,
    lm: &dyn LmBackend,
    options: &CompileOptions,
) -> Result<CompilationArtifact, CompileError> {
    if options.max_attempts == 0 {
        return Err(CompileError::NoAttempts);
    }
    let steps = extract_steps(&strategy.body)?;
    let base_prompt = options
        .templates
        .codegen_prompt(&steps, TOOL_DOCS, LANGUAGE_REFERENCE);
    let mut transcript: Vec<CompileAttempt> = Vec::new();
    let mut prompt = base_prompt.clone();
    for attempt in 1..=options.max_attempts {
        let mut request = LmRequest::new(prompt.clone(), "");
        request.temperature = 0.0;
        request.max_output_tokens = options.max_output_tokens;
        let raw_output = lm
            .complete(&request)
            .map_err(|source| CompileError::Lm { attempt, source })?
            .text;
        let source = extract_script(&raw_output);
        let (ast, report) = check_source(&source, &options.limits);
        let record = CompileAttempt {
            attempt,
            prompt: prompt.clone(),
            raw_output,
            report,
        };
        if let Some(path) = &options.transcript_path {
            append_attempt(path, &record).map_err(|source| CompileError::Transcript {
                path: path.clone(),
                source,
            })?;
        }
        let accepted = record.report.is_accept();
        prompt = options
            .templates
            .repair_prompt(&base_prompt, &source, &record.report.violations);
        transcript.push(record);
        if accepted {
            let script = ast.expect("accepted scripts parsed");
            return Ok(CompilationArtifact {
                source_text: format_script(&script),
                script,
                attempts: attempt,
                transcript,
            });
        }
    }
    Err(CompileError::Rejected { transcript })
}

fn normalize_label(label: &str) -> &str {
    label.trim().trim_end_matches(['.', ')'])
}

/// Lists strategy steps that have no matching step block in the script.
pub fn check_step_coverage(script: &ScriptAst, steps: &[ExtractedStep]) -> CoverageReport {
    let present: BTreeSet<&str> = script
        .steps
        .iter()
        .map(|s| normalize_label(&s.label))
        .collect();
    let mut seen = BTreeSet::new();
    let missing = steps
        .iter()
        .map(|s| normalize_label(&s.label))
        .filter(|l| !present.contains(l) && seen.insert(*l))
        .map(str::to_string)
        .collect();
    CoverageReport { missing }
}

/// Appends one attempt to a JSON-lines compile transcript.
pub fn append_attempt(path: &Path, attempt: &CompileAttempt) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(attempt).map_err(std::io::Error::other)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()
}

pub fn read_attempts(path: &Path) -> std::io::Result<Vec<CompileAttempt>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let attempt = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("record {i}: {e}"))
        })?;
        out.push(attempt);
    }
    Ok(out)
}
