//! On-disk session layout and durable writes.
//!
//! ```text
//! <root>/<sessionId>/manifest.json   dataset snapshot, clip paths absolute
//! <root>/<sessionId>/config.json     session configuration
//! <root>/<sessionId>/features.jsonl  micro-clip feature store
//! <root>/<sessionId>/shots.jsonl     principal shots of every clip
//! <root>/<sessionId>/events.log      append-only JSON lines
//! <root>/<sessionId>/model.json      latest committed model
//! <root>/<sessionId>/queue.json      latest committed queue
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Label;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const SHOTS_FILE: &str = "shots.jsonl";
pub const EVENTS_FILE: &str = "events.log";
pub const MODEL_FILE: &str = "model.json";
pub const QUEUE_FILE: &str = "queue.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Event {
    #[serde(rename_all = "camelCase")]
    Label { seq: u64, timestamp_ms: u64, clip_id: String, label: Label, coder_id: String },
    #[serde(rename_all = "camelCase")]
    Retrain { seq: u64, timestamp_ms: u64 },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Label { seq, .. } | Event::Retrain { seq, .. } => *seq,
        }
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Append-only event log; every append is flushed to stable storage before returning.
#[derive(Debug)]
pub struct EventLog {
    file: File,
}

impl EventLog {
    /// Opens for appending, first cutting any incomplete trailing line so
    /// the next event starts on a fresh line.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Ok(bytes) = fs::read(path) {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < bytes.len() {
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { file })
    }

    pub fn append(&mut self, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(std::io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

/// Events in log order. A trailing line without a newline is an append cut
/// short by a crash and was never acknowledged, so it is dropped.
pub fn read_events(path: &Path) -> std::io::Result<Vec<Event>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if !line.ends_with('\n') {
            log::warn!("{}: dropping incomplete trailing event", path.display());
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

pub fn session_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Session ids found under `root`, sorted.
pub fn list_sessions(root: &Path) -> std::io::Result<Vec<String>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        if entry.path().join(MANIFEST_FILE).is_file() {
            if let Some(name) = entry.file_name().to_str() {
                out.push(name.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip_and_torn_tail() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join(EVENTS_FILE);
        let mut log = EventLog::open(&p).unwrap();
        let e1 = Event::Label { seq: 1, timestamp_ms: 5, clip_id: "a".into(), label: Label::Positive, coder_id: "c".into() };
        let e2 = Event::Retrain { seq: 2, timestamp_ms: 6 };
        log.append(&e1).unwrap();
        log.append(&e2).unwrap();
        assert_eq!(read_events(&p).unwrap(), vec![e1.clone(), e2.clone()]);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(br#"{"type":"label","seq":3,"#).unwrap();
        assert_eq!(read_events(&p).unwrap(), vec![e1.clone(), e2.clone()]);
        let e3 = Event::Retrain { seq: 3, timestamp_ms: 7 };
        EventLog::open(&p).unwrap().append(&e3).unwrap();
        assert_eq!(read_events(&p).unwrap(), vec![e1, e2, e3]);
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("q.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
