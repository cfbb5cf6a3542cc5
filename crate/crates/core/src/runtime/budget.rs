use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Hard limits for one execution. Every field must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionBudget {
    pub max_tool_calls: u64,
    pub max_foreach_iterations: u64,
    pub max_lm_input_tokens: usize,
    #[serde(with = "duration_secs")]
    pub max_wall_clock: Duration,
    pub max_state_bytes: usize,
}

impl Default for ExecutionBudget {
    fn default() -> Self {
        Self {
            max_tool_calls: 100,
            max_foreach_iterations: 1000,
            max_lm_input_tokens: 8192,
            max_wall_clock: Duration::from_secs(30 * 60),
            max_state_bytes: 4 << 20,
        }
    }
}

impl ExecutionBudget {
    /// Names the first non-positive limit, if any.
    pub fn check(&self) -> Result<(), BudgetKind> {
        let checks = [
            (self.max_tool_calls > 0, BudgetKind::ToolCalls),
            (
                self.max_foreach_iterations > 0,
                BudgetKind::ForeachIterations,
            ),
            (self.max_lm_input_tokens > 0, BudgetKind::LmInputTokens),
            (!self.max_wall_clock.is_zero(), BudgetKind::WallClock),
            (self.max_state_bytes > 0, BudgetKind::StateBytes),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, kind)) => Err(kind),
            None => Ok(()),
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetKind {
    #[serde(rename = "max_tool_calls")]
    ToolCalls,
    #[serde(rename = "max_foreach_iterations")]
    ForeachIterations,
    #[serde(rename = "max_lm_input_tokens")]
    LmInputTokens,
    #[serde(rename = "max_wall_clock")]
    WallClock,
    #[serde(rename = "max_state_bytes")]
    StateBytes,
}

impl BudgetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetKind::ToolCalls => "max_tool_calls",
            BudgetKind::ForeachIterations => "max_foreach_iterations",
            BudgetKind::LmInputTokens => "max_lm_input_tokens",
            BudgetKind::WallClock => "max_wall_clock",
            BudgetKind::StateBytes => "max_state_bytes",
        }
    }
}

impl fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stop flag shared between a running session and whoever may stop it.
/// Once set it stays set.
#[derive(Debug, Clone, Default)]
pub struct CancellationSignal {
    flag: Arc<AtomicBool>,
}

impl CancellationSignal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the flag. Returns `true` only for the call that set it.
    pub fn cancel(&self) -> bool {
        !self.flag.swap(true, Ordering::SeqCst)
    }

    pub fn is_cancelled(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }
}
