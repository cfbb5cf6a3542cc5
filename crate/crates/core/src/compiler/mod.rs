//! Turns natural-language strategies into checked scripts.

mod compile;
mod prompt;
mod steps;

pub use compile::{
    append_attempt, check_source, check_step_coverage, compile_strategy, extract_script,
    read_attempts, CompilationArtifact, CompileAttempt, CompileError, CompileOptions,
    CoverageReport, StrategyText,
};
pub use prompt::{build_codegen_prompt, PromptTemplates, LANGUAGE_REFERENCE, TOOL_DOCS};
pub use steps::{extract_steps, render_steps, ExtractError, ExtractedStep};
