//! Run journal: every prompt and reply of a run is persisted for audit.
//!
//! A journal is one directory per run holding a `calls.jsonl` log of raw
//! provider calls plus named JSON artifacts (per-plan debate transcripts,
//! feedback details).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// One raw provider call as persisted in `calls.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: String,
    pub actor: String,
    pub messages: Vec<(String, String)>,
    pub reply: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempts: u32,
}

/// Append-only sink for [`CallRecord`]s, shareable across threads.
#[derive(Clone)]
pub struct CallLog {
    file: Arc<Mutex<fs::File>>,
}

impl CallLog {
    pub fn append(&self, record: &CallRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("call record serializes");
        let mut file = self.file.lock().expect("call log lock");
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// Directory-backed journal for one detection or evaluation run.
pub struct RunJournal {
    dir: PathBuf,
}

impl RunJournal {
    /// Creates the journal directory (and parents) if missing.
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunJournal { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Opens the shared call log, creating `calls.jsonl` on first use.
    pub fn call_log(&self) -> std::io::Result<CallLog> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("calls.jsonl"))?;
        Ok(CallLog { file: Arc::new(Mutex::new(file)) })
    }

    /// Writes a named JSON artifact (pretty-printed, trailing newline).
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        fs::write(self.dir.join(name), text)
    }

    /// Reads back all call records, e.g. for accounting checks.
    pub fn read_calls(&self) -> std::io::Result<Vec<CallRecord>> {
        let path = self.dir.join("calls.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(path)?;
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).expect("call record parses"))
            .collect())
    }
}
