//! Append-only JSON Lines session files.
//!
//! One record per line, tagged by `"rec"`: `manifest`, `viewport`,
//! `fixation`, `saccade`, `flush`, `end`. Records are buffered in memory and
//! appended in batches, each batch terminated by a `flush` record carrying
//! the session header and the metrics of words changed since the previous
//! flush.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::metrics_csv;
use crate::metrics::MetricsEngine;
use crate::model::{Fixation, LayoutManifest, Saccade, ViewportState, WordMetrics};

use super::SessionConfig;

/// Identity and configuration of a session, repeated on every flush record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub participant: String,
    pub stimulus_url: Option<String>,
    pub start_us: Option<i64>,
    pub onset_us: Option<i64>,
    pub config: SessionConfig,
}

#[derive(Debug, Serialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub(crate) enum RecordOut<'a> {
    Manifest { t_us: Option<i64>, manifest: &'a LayoutManifest },
    Viewport(&'a ViewportState),
    Fixation(&'a Fixation),
    Saccade(&'a Saccade),
    Flush { seq: u64, t_us: Option<i64>, header: &'a SessionHeader, metrics: &'a [WordMetrics] },
    End { end_us: Option<i64> },
}

impl RecordOut<'_> {
    pub(crate) fn line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("records always serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum Record {
    Manifest { t_us: Option<i64>, manifest: LayoutManifest },
    Viewport(ViewportState),
    Fixation(Fixation),
    Saccade(Saccade),
    Flush { seq: u64, t_us: Option<i64>, header: SessionHeader, metrics: Vec<WordMetrics> },
    End { end_us: Option<i64> },
}

/// Destination for session batches and the final metrics export.
pub trait SessionStore: Send {
    fn append(&mut self, batch: &[u8]) -> io::Result<()>;
    fn write_metrics(&mut self, csv: &str) -> io::Result<()>;
}

/// `<dir>/<session>.jsonl` plus `<dir>/<session>.metrics.csv`.
#[derive(Debug)]
pub struct FileStore {
    jsonl: PathBuf,
    csv: PathBuf,
    file: Option<File>,
}

impl FileStore {
    pub fn new(dir: &Path, session_id: &str) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            jsonl: dir.join(format!("{session_id}.jsonl")),
            csv: dir.join(format!("{session_id}.metrics.csv")),
            file: None,
        })
    }

    pub fn session_path(&self) -> &Path {
        &self.jsonl
    }

    pub fn metrics_path(&self) -> &Path {
        &self.csv
    }
}

impl SessionStore for FileStore {
    fn append(&mut self, batch: &[u8]) -> io::Result<()> {
        if self.file.is_none() {
            self.file = Some(OpenOptions::new().create(true).append(true).open(&self.jsonl)?);
        }
        let f = self.file.as_mut().expect("opened above");
        let res = f.write_all(batch).and_then(|_| f.flush());
        if res.is_err() {
            // reopen on the next attempt
            self.file = None;
        }
        res
    }

    fn write_metrics(&mut self, csv: &str) -> io::Result<()> {
        let tmp = self.csv.with_extension("csv.tmp");
        fs::write(&tmp, csv)?;
        fs::rename(&tmp, &self.csv)
    }
}

/// In-memory store sharing its buffers, for tests and embedding.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    pub jsonl: Arc<Mutex<Vec<u8>>>,
    pub csv: Arc<Mutex<Option<String>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        String::from_utf8(self.jsonl.lock().unwrap().clone()).expect("utf-8 records")
    }

    pub fn metrics(&self) -> Option<String> {
        self.csv.lock().unwrap().clone()
    }
}

impl SessionStore for MemoryStore {
    fn append(&mut self, batch: &[u8]) -> io::Result<()> {
        self.jsonl.lock().unwrap().extend_from_slice(batch);
        Ok(())
    }

    fn write_metrics(&mut self, csv: &str) -> io::Result<()> {
        *self.csv.lock().unwrap() = Some(csv.to_string());
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("session file has no flush record")]
    NoHeader,
}

/// A session file read back into memory.
#[derive(Debug, Clone, Default)]
pub struct LoadedSession {
    pub header: Option<SessionHeader>,
    pub manifests: Vec<LayoutManifest>,
    pub viewports: Vec<ViewportState>,
    pub fixations: Vec<Fixation>,
    pub saccades: Vec<Saccade>,
    pub flushes: usize,
    pub ended: bool,
    pub end_us: Option<i64>,
    /// Whether a trailing partial line was dropped.
    pub truncated_tail: bool,
}

impl LoadedSession {
    pub fn from_path(path: &Path) -> Result<Self, LoadError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Parses JSONL text. A malformed final line without a newline is treated
    /// as an interrupted write and dropped; any other bad line is an error.
    pub fn parse(text: &str) -> Result<Self, LoadError> {
        let mut out = LoadedSession::default();
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if i + 1 == lines.len() && !complete => {
                    out.truncated_tail = true;
                    break;
                }
                Err(source) => return Err(LoadError::Record { line: i + 1, source }),
            };
            match rec {
                Record::Manifest { manifest, .. } => out.manifests.push(manifest),
                Record::Viewport(v) => out.viewports.push(v),
                Record::Fixation(f) => out.fixations.push(f),
                Record::Saccade(s) => out.saccades.push(s),
                Record::Flush { header, .. } => {
                    out.flushes += 1;
                    out.header = Some(header);
                }
                Record::End { end_us } => {
                    out.ended = true;
                    out.end_us = end_us;
                }
            }
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Option<&LayoutManifest> {
        self.manifests.last()
    }

    /// Rebuilds the reading state by feeding the recorded fixations through a
    /// fresh engine.
    pub fn replay_metrics(&self) -> Result<MetricsEngine, LoadError> {
        let header = self.header.as_ref().ok_or(LoadError::NoHeader)?;
        let mut engine = MetricsEngine::new(header.config.first_pass_mode);
        if let Some(t) = header.start_us {
            engine.set_session_start(t);
        }
        if let Some(t) = header.onset_us {
            engine.set_onset(t);
        }
        let n = self.manifests.iter().map(|m| m.words.len()).max().unwrap_or(0);
        engine.ensure_words(n);
        for f in &self.fixations {
            let mut f = f.clone();
            engine.on_fixation(&mut f).map_err(|e| LoadError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
        }
        if self.ended {
            engine.finalize();
        }
        Ok(engine)
    }

    pub fn metrics_csv(&self) -> Result<String, LoadError> {
        let engine = self.replay_metrics()?;
        Ok(metrics_csv(self.manifest(), &engine.all_metrics()))
    }
}
