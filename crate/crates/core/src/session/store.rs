//! Event persistence: one append-only `<id>.jsonl` file per session.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::events::SessionEvent;
use super::SessionError;

pub trait EventSink: Send + Sync {
    fn append(&self, session_id: &str, event: &SessionEvent) -> io::Result<()>;
}

/// Discards everything; the service keeps events in memory regardless.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&self, _: &str, _: &SessionEvent) -> io::Result<()> {
        Ok(())
    }
}

pub struct FileStore {
    dir: PathBuf,
    open: Mutex<HashMap<String, File>>,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(FileStore {
            dir,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    /// Every `*.jsonl` log in the directory, sorted by file name.
    pub fn log_paths(&self) -> io::Result<Vec<PathBuf>> {
        log_paths(&self.dir)
    }
}

impl EventSink for FileStore {
    fn append(&self, session_id: &str, event: &SessionEvent) -> io::Result<()> {
        let mut open = self.open.lock().unwrap_or_else(|e| e.into_inner());
        let file = match open.get_mut(session_id) {
            Some(f) => f,
            None => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(self.path_for(session_id))?;
                open.entry(session_id.to_string()).or_insert(f)
            }
        };
        let mut line = event.to_line();
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}

pub fn log_paths(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Parse a JSONL event log. A line that fails to parse is reported as
/// corruption at the sequence number it should have carried.
pub fn parse_log(text: &str) -> Result<Vec<SessionEvent>, SessionError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(line).map_err(|e| SessionError::CorruptLog {
            seq: events.len() as u64 + 1,
            reason: format!("line {}: {e}", i + 1),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn read_log(path: &Path) -> Result<Vec<SessionEvent>, SessionError> {
    let text = fs::read_to_string(path)
        .map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
    parse_log(&text)
}

pub fn write_log(path: &Path, events: &[SessionEvent]) -> io::Result<()> {
    fs::write(path, render_log(events))
}

pub fn render_log(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}
