//! Single-directory persistence.
//!
//! ```text
//! <root>/strategies/<id>/meta.json
//! <root>/strategies/<id>/r<N>.txt            strategy body
//! <root>/strategies/<id>/r<N>.compiled.json  cached compilation
//! <root>/sessions/<id>/session.json
//! <root>/sessions/<id>/events.jsonl          one event per line, appended
//! <root>/sessions/<id>/script.json           compiled script and attempts
//! <root>/sessions/<id>/state.json            variables at the end of the run
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use deepstrat_core::compiler::CompileAttempt;
use deepstrat_core::runtime::{ExecutionState, NotificationEvent};

use crate::session::SessionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionMeta {
    pub revision: u64,
    pub title: String,
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMeta {
    pub id: String,
    pub description: String,
    pub revisions: Vec<RevisionMeta>,
    #[serde(default)]
    pub deleted: bool,
}

impl StrategyMeta {
    pub fn latest(&self) -> &RevisionMeta {
        self.revisions.last().expect("strategies have a revision")
    }
}

/// How a cached script came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptOrigin {
    /// Shipped with the library.
    Bundled,
    /// Generated by the code generation model.
    Compiled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledScript {
    pub origin: ScriptOrigin,
    /// Canonical source; absent when compilation failed.
    pub source: Option<String>,
    pub attempts: Vec<CompileAttempt>,
    #[serde(default)]
    pub missing_steps: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<Option<T>> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn subdirs(dir: &Path) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

impl Store {
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("strategies"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn strategy_dir(&self, id: &str) -> PathBuf {
        self.root.join("strategies").join(id)
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn seeded_marker(&self) -> PathBuf {
        self.root.join("strategies").join(".seeded")
    }

    pub fn strategy_ids(&self) -> io::Result<Vec<String>> {
        subdirs(&self.root.join("strategies"))
    }

    pub fn load_strategy(&self, id: &str) -> io::Result<Option<StrategyMeta>> {
        read_json(&self.strategy_dir(id).join("meta.json"))
    }

    pub fn save_strategy(&self, meta: &StrategyMeta) -> io::Result<()> {
        let dir = self.strategy_dir(&meta.id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("meta.json"), meta)
    }

    pub fn save_body(&self, id: &str, revision: u64, body: &str) -> io::Result<()> {
        let dir = self.strategy_dir(id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("r{revision}.txt")), body.as_bytes())
    }

    pub fn load_body(&self, id: &str, revision: u64) -> io::Result<String> {
        fs::read_to_string(self.strategy_dir(id).join(format!("r{revision}.txt")))
    }

    pub fn save_compiled(
        &self,
        id: &str,
        revision: u64,
        script: &CompiledScript,
    ) -> io::Result<()> {
        write_json(
            &self
                .strategy_dir(id)
                .join(format!("r{revision}.compiled.json")),
            script,
        )
    }

    pub fn load_compiled(&self, id: &str, revision: u64) -> io::Result<Option<CompiledScript>> {
        read_json(
            &self
                .strategy_dir(id)
                .join(format!("r{revision}.compiled.json")),
        )
    }

    pub fn session_ids(&self) -> io::Result<Vec<String>> {
        subdirs(&self.root.join("sessions"))
    }

    pub fn save_session(&self, record: &SessionRecord) -> io::Result<()> {
        let dir = self.session_dir(&record.id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("session.json"), record)
    }

    pub fn load_session(&self, id: &str) -> io::Result<Option<SessionRecord>> {
        read_json(&self.session_dir(id).join("session.json"))
    }

    /// Appends one event and flushes it to disk before returning.
    pub fn append_event(&self, id: &str, event: &NotificationEvent) -> io::Result<()> {
        let dir = self.session_dir(id);
        fs::create_dir_all(&dir)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        let mut line = event.to_json_line();
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    /// Reads the event log. A torn final line (from a crash mid-write) is
    /// ignored.
    pub fn load_events(&self, id: &str) -> io::Result<Vec<NotificationEvent>> {
        let text = match fs::read_to_string(self.session_dir(id).join("events.jsonl")) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out: Vec<NotificationEvent> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<NotificationEvent>(line) {
                Ok(e) if out.last().map_or(e.seq == 1, |p| e.seq == p.seq + 1) => out.push(e),
                _ => break,
            }
        }
        Ok(out)
    }

    pub fn save_session_script(&self, id: &str, script: &CompiledScript) -> io::Result<()> {
        write_json(&self.session_dir(id).join("script.json"), script)
    }

    pub fn load_session_script(&self, id: &str) -> io::Result<Option<CompiledScript>> {
        read_json(&self.session_dir(id).join("script.json"))
    }

    pub fn save_final_state(&self, id: &str, state: &ExecutionState) -> io::Result<()> {
        write_json(&self.session_dir(id).join("state.json"), state)
    }

    pub fn load_final_state(&self, id: &str) -> io::Result<Option<ExecutionState>> {
        read_json(&self.session_dir(id).join("state.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(seq: u64) -> NotificationEvent {
        NotificationEvent {
            seq,
            wall_clock_ms: 0,
            kind: "k".into(),
            description: "d".into(),
            payload: None,
        }
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.append_event("s", &event(1)).unwrap();
        store.append_event("s", &event(2)).unwrap();
        let path = dir.path().join("sessions/s/events.jsonl");
        let mut f = OpenOptions::new().append(true).open(path).unwrap();
        f.write_all(b"{\"seq\":3,\"wall").unwrap();
        let events = store.load_events("s").unwrap();
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn missing_files_read_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(store.load_strategy("nope").unwrap().is_none());
        assert!(store.load_events("nope").unwrap().is_empty());
    }
}
