//! Per-sample processing latency of the full session pipeline.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;

use serde::Serialize;

use crate::model::{GazeSample, LayoutManifest, ScreenModel, ViewportState};
use crate::protocol::{ClientMessage, GazeMessage};
use crate::session::{MemoryStore, Session, SessionConfig, SessionError, SystemClock};
use crate::toolkit::simulate::{simulate_reading, synthetic_layout, LayoutParams, ReadingProfile};

/// One new sample every 1/1200 s.
pub const BUDGET_US: f64 = 833.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_us: f64,
    pub sd_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_ns(ns: &[u64]) -> Self {
        if ns.is_empty() {
            return Self { count: 0, mean_us: 0.0, sd_us: 0.0, p50_us: 0.0, p99_us: 0.0, max_us: 0.0 };
        }
        let us: Vec<f64> = ns.iter().map(|v| *v as f64 / 1000.0).collect();
        let n = us.len() as f64;
        let mean = us.iter().sum::<f64>() / n;
        let sd = (us.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let mut sorted = us.clone();
        sorted.sort_by(f64::total_cmp);
        // nearest rank
        let pct = |p: f64| sorted[((p * n).ceil() as usize).clamp(1, sorted.len()) - 1];
        Self {
            count: us.len(),
            mean_us: mean,
            sd_us: sd,
            p50_us: pct(0.50),
            p99_us: pct(0.99),
            max_us: *sorted.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    /// Viewers attached for the whole run that never read.
    pub stalled_viewers: usize,
    /// Queue capacity of each viewer.
    pub viewer_buffer: usize,
    pub budget_us: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { stalled_viewers: 0, viewer_buffer: 256, budget_us: BUDGET_US }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub words: usize,
    pub stats: LatencyStats,
    pub budget_us: f64,
    pub within_budget: bool,
    pub fixations: usize,
    pub saccades: usize,
    pub viewers_attached: usize,
    pub viewers_dropped: u64,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = &self.stats;
        writeln!(f, "samples {}  words {}  viewers {}", self.samples, self.words, self.viewers_attached)?;
        writeln!(
            f,
            "per-sample us: mean {:.3}  sd {:.3}  p50 {:.3}  p99 {:.3}  max {:.3}",
            s.mean_us, s.sd_us, s.p50_us, s.p99_us, s.max_us
        )?;
        writeln!(f, "events: {} fixations, {} saccades", self.fixations, self.saccades)?;
        write!(f, "budget {:.0} us: {}", self.budget_us, if self.within_budget { "PASS" } else { "FAIL" })
    }
}

/// Feeds the recording through a full session (parse, classify, map,
/// metrics, in-memory persistence, fan-out) and reports per-sample timings.
pub fn run_bench(
    samples: &[GazeSample],
    manifest: &LayoutManifest,
    config: SessionConfig,
    opts: BenchOptions,
) -> Result<BenchReport, SessionError> {
    let texts: Vec<String> = samples.iter().map(|s| ClientMessage::Gaze(GazeMessage::from(s)).to_json()).collect();
    let t0 = samples.first().map_or(0, |s| s.t_us);
    let mut session =
        Session::new(None, "bench", config, Some(Box::new(MemoryStore::new())), Arc::new(SystemClock::default()))?;
    session.ingest(ClientMessage::Layout(manifest.clone()))?;
    session.ingest(ClientMessage::Viewport(ViewportState::identity(t0)))?;
    let mut parked: Vec<Receiver<Arc<str>>> = Vec::new();
    for _ in 0..opts.stalled_viewers {
        let (tx, rx) = sync_channel(opts.viewer_buffer);
        session.add_viewer(Box::new(tx));
        parked.push(rx);
    }
    for t in &texts {
        // rejected samples are counted by the session; timing still recorded
        let _ = session.ingest_text(t);
    }
    session.end_session();
    let stats = LatencyStats::from_ns(session.latencies_ns());
    drop(parked);
    Ok(BenchReport {
        samples: samples.len(),
        words: manifest.words.len(),
        within_budget: stats.mean_us < opts.budget_us,
        stats,
        budget_us: opts.budget_us,
        fixations: session.fixations().len(),
        saccades: session.saccades().len(),
        viewers_attached: opts.stalled_viewers,
        viewers_dropped: session.counters().viewers_dropped,
    })
}

/// Synthetic bench input: a `words`-word page read repeatedly until at least
/// `min_samples` samples exist.
pub fn synthetic_input(words: usize, min_samples: usize, seed: u64) -> (LayoutManifest, Vec<GazeSample>) {
    let layout =
        synthetic_layout(&LayoutParams { words, paragraphs: (words / 120).max(1), seed, ..Default::default() });
    let samples = synthetic_reading(&layout, min_samples, seed);
    (layout, samples)
}

/// Repeated noisy readings of `layout` totalling at least `min_samples` samples.
pub fn synthetic_reading(layout: &LayoutManifest, min_samples: usize, seed: u64) -> Vec<GazeSample> {
    let screen = ScreenModel::default();
    let base = ReadingProfile { p_skip: 0.15, p_regress: 0.1, noise_px: 1.0, seed, ..Default::default() };
    let one = simulate_reading(layout, &base, &screen).samples.len().max(1);
    let mut passes = min_samples.div_ceil(one).max(1);
    loop {
        let samples = simulate_reading(layout, &ReadingProfile { passes, ..base.clone() }, &screen).samples;
        if samples.len() >= min_samples {
            return samples;
        }
        passes += 1;
    }
}
