use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const FINAL_REPORT: &str = "final_report";
pub const ERROR: &str = "error";
pub const CANCELLED: &str = "cancelled";

/// One progress update yielded by a running script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationEvent {
    /// Logical timestamp: 1 for the first event of a session, strictly
    /// increasing.
    pub seq: u64,
    /// Wall-clock timestamp in milliseconds since the Unix epoch.
    pub wall_clock_ms: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<BTreeMap<String, serde_json::Value>>,
}

impl NotificationEvent {
    pub fn is_terminal(&self) -> bool {
        is_terminal_type(&self.kind)
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.as_ref()?.get(key)?.as_str()
    }

    /// The same event with its wall-clock field zeroed, for comparisons
    /// that must ignore time.
    pub fn without_clock(&self) -> Self {
        Self {
            wall_clock_ms: 0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

pub fn is_terminal_type(kind: &str) -> bool {
    matches!(kind, FINAL_REPORT | ERROR | CANCELLED)
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
