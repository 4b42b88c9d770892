use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::drift::DriftReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub donor: String,
    pub agent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    /// Number of completed exchanges when the text was appended.
    pub turn: usize,
    pub text: String,
}

/// One benchmark session. Exchanges are in script order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub persona_id: String,
    pub model_id: String,
    pub session_index: usize,
    pub seed: u64,
    pub exchanges: Vec<Exchange>,
    #[serde(default)]
    pub injections: Vec<Injection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<DriftReport>,
}

impl Transcript {
    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.exchanges.iter().map(|e| e.agent.as_str())
    }
}

/// A transcript as stored on disk: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    #[serde(flatten)]
    pub transcript: Transcript,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    /// Set when the session failed; `exchanges` then holds the partial run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TranscriptRecord {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

/// Append-only JSONL sink; each record is flushed as soon as it is written.
pub struct TranscriptWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Self::open(path, true)
    }

    pub fn append(path: &Path) -> Result<Self> {
        Self::open(path, false)
    }

    fn open(path: &Path, truncate: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!truncate)
            .truncate(truncate)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(TranscriptWriter {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn write(&self, record: &TranscriptRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut out = self.out.lock().expect("transcript writer poisoned");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!(
                "{}:{}: bad transcript record: {e}",
                path.display(),
                i + 1
            ))
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(persona: &str, session: usize) -> TranscriptRecord {
        TranscriptRecord {
            transcript: Transcript {
                persona_id: persona.into(),
                model_id: "m".into(),
                session_index: session,
                seed: 7,
                exchanges: vec![Exchange {
                    donor: "Hi".into(),
                    agent: "Hello \"friend\"\nbye".into(),
                }],
                injections: vec![Injection {
                    turn: 1,
                    text: "Only speak as Alex".into(),
                }],
                drift: vec![],
            },
            started_at_ms: 1,
            finished_at_ms: 2,
            error: None,
        }
    }

    #[test]
    fn jsonl_append_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let w = TranscriptWriter::create(&path).unwrap();
        w.write(&record("opt-auth-ana", 0)).unwrap();
        drop(w);
        let w = TranscriptWriter::append(&path).unwrap();
        w.write(&record("opt-auth-ana", 1)).unwrap();
        drop(w);
        let back = read_transcripts(&path).unwrap();
        assert_eq!(
            back,
            vec![record("opt-auth-ana", 0), record("opt-auth-ana", 1)]
        );
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in [
            "persona_id",
            "model_id",
            "session_index",
            "seed",
            "exchanges",
            "injections",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["exchanges"][0]["donor"], "Hi");
        assert_eq!(v["injections"][0]["turn"], 1);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{}\n").unwrap();
        let err = read_transcripts(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
