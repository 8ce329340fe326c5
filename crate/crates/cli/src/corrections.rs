//! Append-only log of expert bottom corrections, one JSON object per line.
//!
//! Each survey has its own file. An event replaces the bottom on a ping
//! range; replaying the events in sequence order reproduces the corrected
//! bottom line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("stale sequence number {got}, next is {expected}")]
    StaleSequence { expected: u64, got: u64 },
    #[error("malformed correction: {0}")]
    Malformed(String),
    #[error("corrupt log {path} at line {line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a client submits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    /// Sequence number the event should receive: last acknowledged + 1.
    pub seq: u64,
    pub start: usize,
    pub end: usize,
    pub bottom_m: Vec<f64>,
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub survey_id: String,
    pub seq: u64,
    pub start: usize,
    pub end: usize,
    pub bottom_m: Vec<f64>,
    pub author: String,
    /// UTC seconds.
    pub timestamp: u64,
}

impl CorrectionEvent {
    fn check(&self, n_pings: usize) -> Result<(), String> {
        if self.start >= self.end {
            return Err(format!("empty range [{}, {})", self.start, self.end));
        }
        if self.end > n_pings {
            return Err(format!("range end {} beyond {} pings", self.end, n_pings));
        }
        if self.bottom_m.len() != self.end - self.start {
            return Err(format!("{} values for a range of {}", self.bottom_m.len(), self.end - self.start));
        }
        if self.bottom_m.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("bottom depths must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct CorrectionLog {
    survey_id: String,
    n_pings: usize,
    path: PathBuf,
    file: File,
    events: Vec<CorrectionEvent>,
}

impl CorrectionLog {
    /// Opens (creating if needed) and replays the log of one survey.
    pub fn open(path: impl AsRef<Path>, survey_id: &str, n_pings: usize) -> Result<Self, CorrectionError> {
        let path = path.as_ref().to_path_buf();
        let mut events: Vec<CorrectionEvent> = Vec::new();
        if path.exists() {
            let corrupt = |line: usize, reason: String| CorrectionError::CorruptLog { path: path.clone(), line, reason };
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: CorrectionEvent = serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e.to_string()))?;
                if ev.survey_id != survey_id {
                    return Err(corrupt(i + 1, format!("event for survey {}", ev.survey_id)));
                }
                let expected = events.last().map_or(1, |e| e.seq + 1);
                if ev.seq != expected {
                    return Err(corrupt(i + 1, format!("sequence {} where {} was expected", ev.seq, expected)));
                }
                ev.check(n_pings).map_err(|r| corrupt(i + 1, r))?;
                events.push(ev);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(CorrectionLog { survey_id: survey_id.to_string(), n_pings, path, file, events })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn events(&self) -> &[CorrectionEvent] {
        &self.events
    }

    pub fn since(&self, seq: u64) -> Vec<CorrectionEvent> {
        self.events.iter().filter(|e| e.seq > seq).cloned().collect()
    }

    /// Validates, writes and syncs the event before returning it.
    pub fn append(&mut self, req: CorrectionRequest) -> Result<CorrectionEvent, CorrectionError> {
        let expected = self.last_seq() + 1;
        if req.seq != expected {
            return Err(CorrectionError::StaleSequence { expected, got: req.seq });
        }
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let ev = CorrectionEvent {
            survey_id: self.survey_id.clone(),
            seq: req.seq,
            start: req.start,
            end: req.end,
            bottom_m: req.bottom_m,
            author: req.author,
            timestamp,
        };
        ev.check(self.n_pings).map_err(CorrectionError::Malformed)?;
        let mut line = serde_json::to_string(&ev).map_err(|e| CorrectionError::Malformed(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.events.push(ev.clone());
        Ok(ev)
    }

    /// The automatic bottom with every event applied in order.
    pub fn corrected(&self, auto_bottom_m: &[f64]) -> Vec<f64> {
        replay(auto_bottom_m, &self.events)
    }
}

pub fn replay(auto_bottom_m: &[f64], events: &[CorrectionEvent]) -> Vec<f64> {
    let mut out = auto_bottom_m.to_vec();
    for e in events {
        let end = e.end.min(out.len());
        if e.start < end {
            out[e.start..end].copy_from_slice(&e.bottom_m[..end - e.start]);
        }
    }
    out
}
