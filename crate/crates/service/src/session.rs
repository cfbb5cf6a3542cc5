use serde::{Deserialize, Serialize};

use deepstrat_core::runtime::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Compiling,
    Running,
    Completed,
    Cancelled,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SessionState::Completed | SessionState::Cancelled | SessionState::Failed
        )
    }

    /// Allowed lifecycle moves. Any non-terminal state may fail, for
    /// example when a restart interrupts it.
    pub fn can_transition(self, next: SessionState) -> bool {
        use SessionState::*;
        match (self, next) {
            (Created, Compiling) | (Compiling, Running) => true,
            (Running, Completed) | (Running, Cancelled) => true,
            (from, Failed) => !from.is_terminal(),
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Compiling => "compiling",
            SessionState::Running => "running",
            SessionState::Completed => "completed",
            SessionState::Cancelled => "cancelled",
            SessionState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: SessionState,
    pub at_ms: u64,
}

/// Persistent description of one research session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub strategy_id: String,
    pub revision: u64,
    pub prompt: String,
    pub state: SessionState,
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub report: Option<Report>,
    #[serde(default)]
    pub error: Option<String>,
}

impl SessionRecord {
    pub fn new(id: String, strategy_id: String, revision: u64, prompt: String, at_ms: u64) -> Self {
        Self {
            id,
            strategy_id,
            revision,
            prompt,
            state: SessionState::Created,
            transitions: vec![Transition {
                state: SessionState::Created,
                at_ms,
            }],
            report: None,
            error: None,
        }
    }

    /// Moves to `next`, recording the time. Illegal moves are refused and
    /// leave the record unchanged.
    pub fn transition(
        &mut self,
        next: SessionState,
        at_ms: u64,
    ) -> Result<(), (SessionState, SessionState)> {
        if !self.state.can_transition(next) {
            return Err((self.state, next));
        }
        self.state = next;
        self.transitions.push(Transition { state: next, at_ms });
        Ok(())
    }
}
