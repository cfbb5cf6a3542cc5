mod budget;
mod event;
mod interp;
mod report;
mod state;
mod tokens;
mod value;

pub use budget::{BudgetKind, CancellationSignal, ExecutionBudget};
pub use event::{is_terminal_type, now_ms, NotificationEvent, CANCELLED, ERROR, FINAL_REPORT};
pub use interp::{
    execute, spawn_execution, ExecutionHandle, ExecutionOutcome, Failure, Halt, Interpreter,
    Terminal, TraceEntry,
};
pub use report::{
    generate_partial_report, report_instruction, Citation, PartialReportError, Report,
    REPORT_INSTRUCTION,
};
pub use state::{ExecutionState, Source};
pub use tokens::{count_tokens, truncate_to_tokens, CharsPerToken, TokenCounter};
pub use value::{TypeError, Value};
