//! Incremental fixation, saccade and reading metrics.
//!
//! Reading-measure definitions (all over the chronological sequence of
//! word-mapped fixations; unmapped fixations are invisible here):
//!
//! - visit: maximal run of consecutive fixations on the same word;
//! - first pass of `w`: its first visit. In [`FirstPassMode::Strict`] it only
//!   counts if no word with a higher index was fixated before it;
//! - FpD / FpFFD / Fp_group: summed duration, first duration and fixation
//!   group of the first pass;
//! - FpR: whether the fixation ending the first pass lands on a lower index;
//! - RPD: every fixation from the first-pass onset until (exclusive) the first
//!   fixation on a higher index, or until session end; sRPD keeps only the
//!   fixations on `w` itself;
//! - RRD: `TFD - FpD`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fixation, Saccade, WordMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstPassMode {
    #[default]
    Strict,
    FirstVisit,
}

impl std::str::FromStr for FirstPassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "first_visit" => Ok(Self::FirstVisit),
            other => Err(format!("unknown first-pass mode {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("fixation starting at {start_us} precedes previous fixation end {previous_end_us}")]
    OutOfOrder { start_us: i64, previous_end_us: i64 },
    #[error("unknown word index {0}")]
    UnknownWord(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum FirstPass {
    #[default]
    NotYet,
    Open,
    Closed,
    /// The word was reached only after reading past it.
    Skipped,
}

#[derive(Debug, Clone, Default)]
struct WordState {
    tfd: i64,
    count: u32,
    min: i64,
    max: i64,
    first_start: Option<i64>,
    ffd: Option<i64>,
    pass: FirstPass,
    fpd: i64,
    fp_ffd: i64,
    fp_group: u64,
    fp_regression: Option<bool>,
    rpd: i64,
    srpd: i64,
}

/// Per-session reading state.
#[derive(Debug, Clone, Default)]
pub struct MetricsEngine {
    mode: FirstPassMode,
    words: Vec<WordState>,
    /// Words whose regression-path window is still open.
    open_windows: BTreeSet<usize>,
    max_fixated: Option<usize>,
    /// Word of the current visit.
    current_word: Option<usize>,
    /// Word of the immediately preceding fixation (`None` if it was unmapped).
    previous_fixation_word: Option<usize>,
    group: u64,
    last_end_us: Option<i64>,
    session_start_us: Option<i64>,
    onset_us: Option<i64>,
    finalized: bool,
    saccade_seq: u64,
    fixation_total_us: i64,
}

impl MetricsEngine {
    pub fn new(mode: FirstPassMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn mode(&self) -> FirstPassMode {
        self.mode
    }

    /// Ensures metrics exist for words `0..n`.
    pub fn ensure_words(&mut self, n: usize) {
        if self.words.len() < n {
            self.words.resize_with(n, WordState::default);
        }
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn set_session_start(&mut self, t_us: i64) {
        self.session_start_us.get_or_insert(t_us);
    }

    /// Stimulus onset, the reference for time-to-first-fixation.
    pub fn set_onset(&mut self, t_us: i64) {
        self.onset_us.get_or_insert(t_us);
    }

    pub fn session_start(&self) -> Option<i64> {
        self.session_start_us
    }

    pub fn onset(&self) -> Option<i64> {
        self.onset_us
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Sum of durations of all word-mapped fixations seen so far.
    pub fn mapped_fixation_total_us(&self) -> i64 {
        self.fixation_total_us
    }

    /// Consumes a finalized, mapped fixation: assigns its fixation group and
    /// updates every metric it affects. Returns the word it touched.
    pub fn on_fixation(&mut self, f: &mut Fixation) -> Result<Option<usize>, MetricsError> {
        if let Some(prev) = self.last_end_us {
            if f.start_us < prev {
                return Err(MetricsError::OutOfOrder { start_us: f.start_us, previous_end_us: prev });
            }
        }
        self.last_end_us = Some(f.end_us);

        let same_group = f.word_index.is_some() && f.word_index == self.previous_fixation_word;
        if !same_group {
            self.group += 1;
        }
        f.fixation_group = self.group;
        self.previous_fixation_word = f.word_index;

        let Some(x) = f.word_index else {
            return Ok(None);
        };
        self.ensure_words(x + 1);
        let d = f.duration_us;
        self.fixation_total_us += d;

        {
            let w = &mut self.words[x];
            if w.count == 0 {
                w.min = d;
                w.max = d;
                w.first_start = Some(f.start_us);
                w.ffd = Some(d);
            } else {
                w.min = w.min.min(d);
                w.max = w.max.max(d);
            }
            w.tfd += d;
            w.count += 1;
        }

        if self.current_word != Some(x) {
            if let Some(p) = self.current_word {
                let prev = &mut self.words[p];
                if prev.pass == FirstPass::Open {
                    prev.pass = FirstPass::Closed;
                    prev.fp_regression = Some(x < p);
                }
            }
            if self.words[x].pass == FirstPass::NotYet {
                let eligible = match self.mode {
                    FirstPassMode::FirstVisit => true,
                    FirstPassMode::Strict => self.max_fixated.is_none_or(|m| m < x),
                };
                let w = &mut self.words[x];
                if eligible {
                    w.pass = FirstPass::Open;
                    w.fp_ffd = d;
                    w.fp_group = self.group;
                    self.open_windows.insert(x);
                } else {
                    w.pass = FirstPass::Skipped;
                }
            }
            self.current_word = Some(x);
        }

        // passing beyond w closes w's regression path
        self.open_windows = self.open_windows.split_off(&x);
        for &w in &self.open_windows {
            self.words[w].rpd += d;
        }
        let w = &mut self.words[x];
        if self.open_windows.contains(&x) {
            w.srpd += d;
        }
        if w.pass == FirstPass::Open {
            w.fpd += d;
        }
        self.max_fixated = Some(self.max_fixated.map_or(x, |m| m.max(x)));
        Ok(Some(x))
    }

    /// Numbers the saccade and fills its geometric measures.
    pub fn on_saccade(&mut self, s: &mut Saccade) {
        self.saccade_seq += 1;
        s.seq_index = self.saccade_seq;
        measure_saccade(s);
    }

    /// Marks the session as ended: a first pass still open at this point is
    /// closed without a regression.
    pub fn finalize(&mut self) {
        if self.finalized {
            return;
        }
        self.finalized = true;
        if let Some(p) = self.current_word {
            let w = &mut self.words[p];
            if w.pass == FirstPass::Open {
                w.fp_regression = Some(false);
            }
        }
    }

    pub fn compute_word_metrics(&self, word_index: usize) -> Result<WordMetrics, MetricsError> {
        let w = self.words.get(word_index).ok_or(MetricsError::UnknownWord(word_index))?;
        let mut m = WordMetrics::empty(word_index);
        if w.count == 0 {
            return Ok(m);
        }
        let start = self.session_start_us.unwrap_or(0);
        let onset = self.onset_us.unwrap_or(start);
        m.tfd_us = w.tfd;
        m.fixation_count = w.count;
        m.afd_us = Some(w.tfd as f64 / w.count as f64);
        m.mifd_us = Some(w.min);
        m.mafd_us = Some(w.max);
        m.tff_ts_us = w.first_start.map(|t| t - start);
        m.ttff_us = w.first_start.map(|t| t - onset);
        m.ffd_us = w.ffd;
        m.rrd_us = w.tfd;
        if matches!(w.pass, FirstPass::Open | FirstPass::Closed) {
            m.fp_ffd_us = Some(w.fp_ffd);
            m.fp_group = Some(w.fp_group);
            m.fpd_us = Some(w.fpd);
            m.rpd_us = Some(w.rpd);
            m.srpd_us = Some(w.srpd);
            m.rrd_us = w.tfd - w.fpd;
            m.fp_regression = match w.pass {
                FirstPass::Closed => w.fp_regression,
                _ if self.finalized => Some(false),
                _ => None,
            };
        }
        Ok(m)
    }

    /// Snapshot for every known word.
    pub fn all_metrics(&self) -> Vec<WordMetrics> {
        (0..self.words.len()).map(|i| self.compute_word_metrics(i).expect("index in range")).collect()
    }
}

/// Length, unit direction and degeneracy flag from the endpoints.
pub fn measure_saccade(s: &mut Saccade) {
    match (s.start_pt, s.end_pt) {
        (Some(a), Some(b)) => {
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len = dx.hypot(dy);
            s.length_px = len;
            if len > 0.0 {
                s.direction = [dx / len, dy / len];
                s.degenerate = false;
            } else {
                s.direction = [0.0, 0.0];
                s.degenerate = true;
            }
        }
        _ => {
            s.length_px = 0.0;
            s.direction = [0.0, 0.0];
            s.degenerate = true;
        }
    }
}
