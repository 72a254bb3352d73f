//! Per-session orchestration: viewport transform, classification, AOI
//! mapping, metrics, persistence cadence and live fan-out to viewers.

mod store;

use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use store::RecordOut;
pub use store::{FileStore, LoadError, LoadedSession, MemoryStore, Record, SessionHeader, SessionStore};

use crate::aoi::{SaccadeMapper, WordHitIndex};
use crate::export::metrics_csv;
use crate::ivt::{IvtClassifier, IvtConfig, IvtError, IvtEvent};
use crate::metrics::{FirstPassMode, MetricsEngine, MetricsError};
use crate::model::{
    Fixation, GazeSample, LayoutManifest, ManifestError, Point, Saccade, ScreenModel, ViewportState, WordMetrics,
};
use crate::protocol::{ClientMessage, GazeMessage, ServerMessage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlushPolicy {
    pub interval_us: i64,
    pub flush_on_state_change: bool,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        Self { interval_us: 5_000_000, flush_on_state_change: true }
    }
}

/// Everything that influences the computed events and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub ivt: IvtConfig,
    pub first_pass_mode: FirstPassMode,
    pub screen: ScreenModel,
    pub flush: FlushPolicy,
}

impl SessionConfig {
    /// Same event and metric semantics (flush cadence excluded).
    pub fn analysis_matches(&self, other: &SessionConfig) -> bool {
        self.ivt == other.ivt && self.first_pass_mode == other.first_pass_mode && self.screen == other.screen
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session has ended")]
    Closed,
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("sample rejected: {0}")]
    Sample(#[from] IvtError),
    #[error("layout rejected: {0}")]
    Manifest(#[from] ManifestError),
    #[error("fixation rejected: {0}")]
    Metrics(#[from] MetricsError),
    #[error("viewport rejected: dpr must be > 0")]
    Viewport,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Fresh random session identifier.
pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

/// Wall-clock source for flush cadence and latency; never used for metrics.
pub trait Clock: Send + Sync {
    fn now_us(&self) -> i64;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_us(&self) -> i64 {
        self.0.elapsed().as_micros() as i64
    }
}

/// Settable clock for deterministic tests and simulated replay.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t_us: i64) {
        self.0.store(t_us, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_us(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkError {
    Full,
    Closed,
}

/// Non-blocking outbound queue of a live viewer.
pub trait ViewerSink: Send {
    fn try_send(&self, msg: Arc<str>) -> Result<(), SinkError>;
}

impl ViewerSink for std::sync::mpsc::SyncSender<Arc<str>> {
    fn try_send(&self, msg: Arc<str>) -> Result<(), SinkError> {
        std::sync::mpsc::SyncSender::try_send(self, msg).map_err(|e| match e {
            std::sync::mpsc::TrySendError::Full(_) => SinkError::Full,
            std::sync::mpsc::TrySendError::Disconnected(_) => SinkError::Closed,
        })
    }
}

impl ViewerSink for tokio::sync::mpsc::Sender<Arc<str>> {
    fn try_send(&self, msg: Arc<str>) -> Result<(), SinkError> {
        tokio::sync::mpsc::Sender::try_send(self, msg).map_err(|e| match e {
            tokio::sync::mpsc::error::TrySendError::Full(_) => SinkError::Full,
            tokio::sync::mpsc::error::TrySendError::Closed(_) => SinkError::Closed,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionCounters {
    pub samples: u64,
    pub rejected_samples: u64,
    pub malformed: u64,
    pub rejected_layouts: u64,
    pub flushes: u64,
    pub flush_failures: u64,
    pub viewers_dropped: u64,
}

pub struct Session {
    id: String,
    participant: String,
    config: SessionConfig,
    classifier: IvtClassifier,
    viewport: Option<ViewportState>,
    upcoming_viewports: VecDeque<ViewportState>,
    manifest: Option<Arc<LayoutManifest>>,
    index: Option<Arc<WordHitIndex>>,
    saccade_mapper: SaccadeMapper,
    metrics: MetricsEngine,
    fixations: Vec<Fixation>,
    saccades: Vec<Saccade>,
    start_us: Option<i64>,
    last_sample_us: Option<i64>,
    onset_pending: bool,
    end_us: Option<i64>,
    ended: bool,
    store: Option<Box<dyn SessionStore>>,
    unpersisted: String,
    dirty: BTreeSet<usize>,
    flush_seq: u64,
    last_flush_wall_us: i64,
    clock: Arc<dyn Clock>,
    latencies_ns: Vec<u64>,
    viewers: Vec<Box<dyn ViewerSink>>,
    counters: SessionCounters,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("fixations", &self.fixations.len())
            .field("saccades", &self.saccades.len())
            .field("ended", &self.ended)
            .finish()
    }
}

impl Session {
    pub fn new(
        session_id: Option<String>,
        participant: impl Into<String>,
        config: SessionConfig,
        store: Option<Box<dyn SessionStore>>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, SessionError> {
        let classifier = IvtClassifier::new(config.ivt, config.screen)?;
        if !config.screen.is_valid() {
            return Err(SessionError::Config("screen model fields must be > 0".into()));
        }
        if config.flush.interval_us <= 0 {
            return Err(SessionError::Config("flush interval must be > 0".into()));
        }
        let last_flush_wall_us = clock.now_us();
        Ok(Self {
            id: session_id.unwrap_or_else(new_session_id),
            participant: participant.into(),
            config,
            classifier,
            viewport: None,
            upcoming_viewports: VecDeque::new(),
            manifest: None,
            index: None,
            saccade_mapper: SaccadeMapper::new(),
            metrics: MetricsEngine::new(config.first_pass_mode),
            fixations: Vec::new(),
            saccades: Vec::new(),
            start_us: None,
            last_sample_us: None,
            onset_pending: false,
            end_us: None,
            ended: false,
            store,
            unpersisted: String::new(),
            dirty: BTreeSet::new(),
            flush_seq: 0,
            last_flush_wall_us,
            clock,
            latencies_ns: Vec::new(),
            viewers: Vec::new(),
            counters: SessionCounters::default(),
        })
    }

    /// Session without persistence, on the system clock.
    pub fn in_memory(config: SessionConfig) -> Result<Self, SessionError> {
        Self::new(None, "", config, None, Arc::new(SystemClock::default()))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn manifest(&self) -> Option<&LayoutManifest> {
        self.manifest.as_deref()
    }

    pub fn fixations(&self) -> &[Fixation] {
        &self.fixations
    }

    pub fn saccades(&self) -> &[Saccade] {
        &self.saccades
    }

    pub fn metrics(&self) -> &MetricsEngine {
        &self.metrics
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    pub fn classifier(&self) -> &IvtClassifier {
        &self.classifier
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn start_us(&self) -> Option<i64> {
        self.start_us
    }

    pub fn end_us(&self) -> Option<i64> {
        self.end_us
    }

    /// Wall-clock processing time of every gaze sample, in nanoseconds.
    pub fn latencies_ns(&self) -> &[u64] {
        &self.latencies_ns
    }

    pub fn viewer_count(&self) -> usize {
        self.viewers.len()
    }

    pub fn word_metrics(&self, word_index: usize) -> Result<WordMetrics, MetricsError> {
        self.metrics.compute_word_metrics(word_index)
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            session_id: self.id.clone(),
            participant: self.participant.clone(),
            stimulus_url: self.manifest.as_ref().map(|m| m.url.clone()),
            start_us: self.start_us,
            onset_us: self.metrics.onset(),
            config: self.config,
        }
    }

    /// Parses and processes one wire message. Gaze samples are timed from the
    /// start of parsing to the end of the metric update.
    pub fn ingest_text(&mut self, text: &str) -> Result<(), SessionError> {
        let t0 = Instant::now();
        let msg = match ClientMessage::parse(text) {
            Ok(m) => m,
            Err(e) => {
                self.counters.malformed += 1;
                return Err(e.into());
            }
        };
        let is_gaze = matches!(msg, ClientMessage::Gaze(_));
        let res = self.dispatch(msg);
        if is_gaze {
            self.latencies_ns.push(t0.elapsed().as_nanos() as u64);
        }
        res
    }

    pub fn ingest(&mut self, msg: ClientMessage) -> Result<(), SessionError> {
        let t0 = Instant::now();
        let is_gaze = matches!(msg, ClientMessage::Gaze(_));
        let res = self.dispatch(msg);
        if is_gaze {
            self.latencies_ns.push(t0.elapsed().as_nanos() as u64);
        }
        res
    }

    fn dispatch(&mut self, msg: ClientMessage) -> Result<(), SessionError> {
        if self.ended {
            return match msg {
                ClientMessage::End | ClientMessage::Hello { .. } => Ok(()),
                _ => Err(SessionError::Closed),
            };
        }
        let res = match msg {
            ClientMessage::Hello { .. } => Ok(()),
            ClientMessage::Gaze(g) => self.on_gaze(&g),
            ClientMessage::Layout(m) => self.set_layout(m),
            ClientMessage::Viewport(v) => self.set_viewport(v),
            ClientMessage::Tabstate { .. } => {
                if self.config.flush.flush_on_state_change {
                    self.try_flush();
                }
                Ok(())
            }
            ClientMessage::End => {
                self.end_session();
                Ok(())
            }
        };
        self.maybe_flush();
        res
    }

    fn on_gaze(&mut self, g: &GazeMessage) -> Result<(), SessionError> {
        let sample = GazeSample::from(g);
        self.counters.samples += 1;
        while let Some(v) = self.upcoming_viewports.front() {
            if v.t_us > sample.t_us {
                break;
            }
            self.viewport = self.upcoming_viewports.pop_front();
        }
        let page = self.viewport.map(|v| v.screen_to_page(Point::new(sample.screen_x, sample.screen_y)));
        let step = match self.classifier.push(&sample, page) {
            Ok(s) => s,
            Err(e) => {
                self.counters.rejected_samples += 1;
                return Err(e.into());
            }
        };
        if self.start_us.is_none() {
            self.start_us = Some(sample.t_us);
            self.metrics.set_session_start(sample.t_us);
        }
        if self.onset_pending {
            self.onset_pending = false;
            self.metrics.set_onset(sample.t_us);
        }
        self.last_sample_us = Some(sample.t_us);
        if let Some(ev) = step.event {
            self.handle_event(ev)?;
        }
        Ok(())
    }

    fn handle_event(&mut self, ev: IvtEvent) -> Result<(), SessionError> {
        match ev {
            IvtEvent::Fixation(mut f) => {
                if let Some(idx) = &self.index {
                    idx.map_fixation(&mut f);
                }
                let touched = self.metrics.on_fixation(&mut f)?;
                if self.store.is_some() {
                    self.unpersisted.push_str(&RecordOut::Fixation(&f).line());
                }
                if let Some(w) = touched {
                    self.dirty.insert(w);
                }
                if !self.viewers.is_empty() {
                    self.broadcast(&ServerMessage::FixationEnd(f.clone()));
                    if let Some(w) = touched {
                        let metrics = self.metrics.compute_word_metrics(w)?;
                        self.broadcast(&ServerMessage::MetricsUpdate { word_index: w, metrics });
                    }
                }
                self.fixations.push(f);
            }
            IvtEvent::Saccade(mut s) => {
                self.saccade_mapper.map_saccade(&mut s, self.index.as_deref());
                self.metrics.on_saccade(&mut s);
                if self.store.is_some() {
                    self.unpersisted.push_str(&RecordOut::Saccade(&s).line());
                }
                if !self.viewers.is_empty() {
                    self.broadcast(&ServerMessage::Saccade(s.clone()));
                }
                self.saccades.push(s);
            }
        }
        Ok(())
    }

    /// Installs a new layout. Fixations finalized from now on map against it.
    pub fn set_layout(&mut self, manifest: LayoutManifest) -> Result<(), SessionError> {
        if self.ended {
            return Err(SessionError::Closed);
        }
        let built = manifest.validate().and_then(|_| WordHitIndex::build(&manifest));
        let index = match built {
            Ok(i) => i,
            Err(e) => {
                self.counters.rejected_layouts += 1;
                warn!(session = %self.id, error = %e, "layout rejected");
                return Err(e.into());
            }
        };
        if self.manifest.is_none() {
            match self.last_sample_us {
                Some(t) => self.metrics.set_onset(t),
                None => self.onset_pending = true,
            }
        }
        self.metrics.ensure_words(manifest.words.len());
        if self.store.is_some() {
            self.unpersisted.push_str(&RecordOut::Manifest { t_us: self.last_sample_us, manifest: &manifest }.line());
        }
        debug!(session = %self.id, words = manifest.words.len(), "layout installed");
        self.manifest = Some(Arc::new(manifest));
        self.index = Some(Arc::new(index));
        if !self.viewers.is_empty() {
            let snap = self.snapshot();
            self.broadcast(&snap);
        }
        Ok(())
    }

    pub fn set_viewport(&mut self, v: ViewportState) -> Result<(), SessionError> {
        if self.ended {
            return Err(SessionError::Closed);
        }
        if !v.is_valid() {
            return Err(SessionError::Viewport);
        }
        if self.store.is_some() {
            self.unpersisted.push_str(&RecordOut::Viewport(&v).line());
        }
        let pos = self.upcoming_viewports.partition_point(|u| u.t_us <= v.t_us);
        self.upcoming_viewports.insert(pos, v);
        Ok(())
    }

    /// Manifest plus current metrics of every word.
    pub fn snapshot(&self) -> ServerMessage {
        ServerMessage::Snapshot { manifest: self.manifest.as_deref().cloned(), metrics: self.metrics.all_metrics() }
    }

    /// Registers a viewer: it receives a snapshot first, then live events.
    pub fn add_viewer(&mut self, sink: Box<dyn ViewerSink>) {
        let snap: Arc<str> = self.snapshot().to_json().into();
        if sink.try_send(snap).is_ok() {
            self.viewers.push(sink);
        } else {
            self.counters.viewers_dropped += 1;
        }
    }

    fn broadcast(&mut self, msg: &ServerMessage) {
        let text: Arc<str> = msg.to_json().into();
        let before = self.viewers.len();
        // a full queue means the viewer stalled: drop it rather than wait
        self.viewers.retain(|v| v.try_send(text.clone()).is_ok());
        self.counters.viewers_dropped += (before - self.viewers.len()) as u64;
    }

    /// Runs the wall-clock flush cadence; call periodically when idle.
    pub fn tick(&mut self) {
        if !self.ended {
            self.maybe_flush();
        }
    }

    fn maybe_flush(&mut self) {
        let now = self.clock.now_us();
        if now - self.last_flush_wall_us >= self.config.flush.interval_us {
            self.last_flush_wall_us = now;
            self.try_flush();
        }
    }

    fn try_flush(&mut self) {
        if let Err(e) = self.flush() {
            self.counters.flush_failures += 1;
            warn!(session = %self.id, error = %e, "flush failed; will retry");
        }
    }

    /// Appends every not-yet-persisted record plus a flush record. Returns
    /// `Ok(false)` when there was nothing new. On failure the data stays
    /// buffered for the next attempt.
    pub fn flush(&mut self) -> std::io::Result<bool> {
        if self.store.is_none() || (self.unpersisted.is_empty() && self.dirty.is_empty()) {
            return Ok(false);
        }
        let metrics: Vec<WordMetrics> =
            self.dirty.iter().filter_map(|w| self.metrics.compute_word_metrics(*w).ok()).collect();
        let header = self.header();
        let mut batch = std::mem::take(&mut self.unpersisted);
        let keep = batch.len();
        batch.push_str(
            &RecordOut::Flush {
                seq: self.flush_seq + 1,
                t_us: self.last_sample_us,
                header: &header,
                metrics: &metrics,
            }
            .line(),
        );
        let store = self.store.as_mut().expect("checked above");
        match store.append(batch.as_bytes()) {
            Ok(()) => {
                self.flush_seq += 1;
                self.counters.flushes += 1;
                self.dirty.clear();
                Ok(true)
            }
            Err(e) => {
                batch.truncate(keep);
                self.unpersisted = batch;
                Err(e)
            }
        }
    }

    /// Closes the stream: flushes the classifier, closes open first passes,
    /// persists the remainder and writes the metrics CSV. Idempotent.
    pub fn end_session(&mut self) {
        if self.ended {
            return;
        }
        if let Some(ev) = self.classifier.finalize_stream() {
            if let Err(e) = self.handle_event(ev) {
                warn!(session = %self.id, error = %e, "final event rejected");
            }
        }
        self.metrics.finalize();
        self.ended = true;
        self.end_us = self.last_sample_us;
        self.dirty.extend(0..self.metrics.word_count());
        if self.store.is_some() {
            self.unpersisted.push_str(&RecordOut::End { end_us: self.end_us }.line());
        }
        self.try_flush();
        let csv = self.metrics_csv();
        if let Some(store) = self.store.as_mut() {
            if let Err(e) = store.write_metrics(&csv) {
                self.counters.flush_failures += 1;
                warn!(session = %self.id, error = %e, "metrics export failed");
            }
        }
        // viewers see the end state
        if !self.viewers.is_empty() {
            let snap = self.snapshot();
            self.broadcast(&snap);
        }
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(self.manifest.as_deref(), &self.metrics.all_metrics())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParagraphAoi, Rect, WordAoi};

    fn layout() -> LayoutManifest {
        let words = ["alpha", "beta", "gamma"];
        let mut text = String::new();
        let mut ws = vec![];
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            ws.push(WordAoi {
                word_index: i,
                char_index: text.len(),
                sentence_index: 0,
                paragraph_id: 0,
                text: w.to_string(),
                bbox: Rect::new(100.0 + 200.0 * i as f64, 500.0, 150.0, 40.0),
            });
            text.push_str(w);
        }
        LayoutManifest {
            url: "test://page".into(),
            page_text: text,
            words: ws,
            paragraphs: vec![ParagraphAoi { id: 0, bbox: Rect::new(100.0, 500.0, 550.0, 40.0) }],
            media: vec![],
        }
    }

    fn gaze(t_us: i64, x: f64, y: f64) -> ClientMessage {
        ClientMessage::Gaze(GazeMessage { t_us, sx: x, sy: y, origin: None, pos: None, valid: true })
    }

    fn session_with(store: MemoryStore, clock: ManualClock) -> Session {
        Session::new(Some("s1".into()), "p1", SessionConfig::default(), Some(Box::new(store)), Arc::new(clock)).unwrap()
    }

    #[test]
    fn empty_session_exports_header_only() {
        let store = MemoryStore::new();
        let mut s = session_with(store.clone(), ManualClock::new());
        s.ingest(ClientMessage::End).unwrap();
        assert!(s.fixations().is_empty());
        let csv = store.metrics().unwrap();
        assert_eq!(csv.lines().count(), 1);
        let loaded = LoadedSession::parse(&store.contents()).unwrap();
        assert!(loaded.ended);
        assert_eq!(loaded.metrics_csv().unwrap(), csv);
    }

    #[test]
    fn stationary_gaze_yields_one_fixation() {
        let store = MemoryStore::new();
        let mut s = session_with(store.clone(), ManualClock::new());
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        s.ingest(ClientMessage::Viewport(ViewportState::identity(0))).unwrap();
        for i in 0..60 {
            s.ingest(gaze(i * 3333, 175.0, 520.0)).unwrap();
        }
        s.ingest(ClientMessage::End).unwrap();
        assert_eq!(s.fixations().len(), 1);
        assert_eq!(s.fixations()[0].word_index, Some(0));
        assert_eq!(s.word_metrics(0).unwrap().fixation_count, 1);
        let loaded = LoadedSession::parse(&store.contents()).unwrap();
        assert_eq!(loaded.fixations.len(), 1);
        assert_eq!(s.latencies_ns().len(), 60);
    }

    #[test]
    fn samples_before_viewport_are_unmapped() {
        let mut s = Session::in_memory(SessionConfig::default()).unwrap();
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        for i in 0..30 {
            s.ingest(gaze(i * 3333, 175.0, 520.0)).unwrap();
        }
        // viewport takes effect from its own timestamp on
        s.ingest(ClientMessage::Viewport(ViewportState::identity(200_000))).unwrap();
        for i in 0..30 {
            s.ingest(gaze(100_000 + i * 3333, 175.0, 520.0)).unwrap();
        }
        s.end_session();
        assert_eq!(s.fixations().len(), 1);
        assert_eq!(s.fixations()[0].centroid, None);
        assert_eq!(s.fixations()[0].word_index, None);
    }

    #[test]
    fn flush_is_idempotent_and_tabstate_flushes() {
        let store = MemoryStore::new();
        let mut s = session_with(store.clone(), ManualClock::new());
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        assert_eq!(store.contents(), "");
        s.ingest(ClientMessage::Tabstate { state: crate::protocol::TabState::Hidden }).unwrap();
        let after_tab = store.contents();
        assert!(after_tab.contains(r#""rec":"manifest""#));
        assert!(after_tab.contains(r#""rec":"flush""#));
        assert!(!s.flush().unwrap());
        assert_eq!(store.contents(), after_tab);
    }

    #[test]
    fn cadence_flush_uses_wall_clock() {
        let store = MemoryStore::new();
        let clock = ManualClock::new();
        let mut s = session_with(store.clone(), clock.clone());
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        clock.set(4_999_999);
        s.ingest(gaze(0, 175.0, 520.0)).unwrap();
        assert_eq!(store.contents(), "");
        clock.set(5_000_000);
        s.ingest(gaze(3333, 175.0, 520.0)).unwrap();
        assert_eq!(s.counters().flushes, 1);
    }

    struct FlakyStore {
        inner: MemoryStore,
        fail: Arc<std::sync::atomic::AtomicBool>,
    }

    impl SessionStore for FlakyStore {
        fn append(&mut self, batch: &[u8]) -> std::io::Result<()> {
            if self.fail.load(Ordering::SeqCst) {
                return Err(std::io::Error::other("disk full"));
            }
            self.inner.append(batch)
        }

        fn write_metrics(&mut self, csv: &str) -> std::io::Result<()> {
            self.inner.write_metrics(csv)
        }
    }

    #[test]
    fn failed_flush_keeps_data_for_retry() {
        let inner = MemoryStore::new();
        let fail = Arc::new(std::sync::atomic::AtomicBool::new(true));
        let store = FlakyStore { inner: inner.clone(), fail: fail.clone() };
        let mut s =
            Session::new(None, "", SessionConfig::default(), Some(Box::new(store)), Arc::new(ManualClock::new()))
                .unwrap();
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        assert!(s.flush().is_err());
        assert_eq!(inner.contents(), "");
        fail.store(false, Ordering::SeqCst);
        assert!(s.flush().unwrap());
        let loaded = LoadedSession::parse(&inner.contents()).unwrap();
        assert_eq!(loaded.manifests.len(), 1);
        assert_eq!(loaded.flushes, 1);
    }

    #[test]
    fn closed_session_rejects_and_double_end_is_noop() {
        let store = MemoryStore::new();
        let mut s = session_with(store.clone(), ManualClock::new());
        s.ingest(ClientMessage::End).unwrap();
        let first = store.contents();
        s.ingest(ClientMessage::End).unwrap();
        s.end_session();
        assert_eq!(store.contents(), first);
        assert!(matches!(s.ingest(gaze(0, 1.0, 1.0)), Err(SessionError::Closed)));
    }

    #[test]
    fn malformed_and_rejected_messages_are_counted() {
        let mut s = Session::in_memory(SessionConfig::default()).unwrap();
        assert!(s.ingest_text("{not json").is_err());
        assert!(s.ingest_text(r#"{"type":"gaze"}"#).is_err());
        s.ingest(gaze(10, 1.0, 1.0)).unwrap();
        assert!(s.ingest(gaze(5, 1.0, 1.0)).is_err());
        let bad_vp = ViewportState { dpr: 0.0, ..ViewportState::identity(0) };
        assert!(matches!(s.set_viewport(bad_vp), Err(SessionError::Viewport)));
        let mut bad = layout();
        bad.words[1].bbox.x = 150.0;
        assert!(s.set_layout(bad).is_err());
        let c = s.counters();
        assert_eq!((c.malformed, c.rejected_samples, c.rejected_layouts), (2, 1, 1));
    }

    #[test]
    fn viewers_get_snapshot_then_events_and_stalled_ones_are_dropped() {
        let mut s = Session::in_memory(SessionConfig::default()).unwrap();
        s.ingest(ClientMessage::Layout(layout())).unwrap();
        s.ingest(ClientMessage::Viewport(ViewportState::identity(0))).unwrap();
        let (tx, rx) = std::sync::mpsc::sync_channel::<Arc<str>>(1024);
        s.add_viewer(Box::new(tx));
        let (stalled, _keep) = std::sync::mpsc::sync_channel::<Arc<str>>(2);
        s.add_viewer(Box::new(stalled));
        // fixation on word 0, then word 1
        for i in 0..30 {
            s.ingest(gaze(i * 3333, 175.0, 520.0)).unwrap();
        }
        for i in 30..60 {
            s.ingest(gaze(i * 3333, 375.0, 520.0)).unwrap();
        }
        let msgs: Vec<ServerMessage> = rx.try_iter().map(|m| ServerMessage::parse(&m).unwrap()).collect();
        assert!(matches!(msgs[0], ServerMessage::Snapshot { .. }));
        assert!(matches!(msgs[1], ServerMessage::FixationEnd(_)));
        match &msgs[2] {
            ServerMessage::MetricsUpdate { word_index, metrics } => {
                assert_eq!(*word_index, 0);
                assert!(metrics.tfd_us > 0);
            }
            m => panic!("{m:?}"),
        }
        assert_eq!(s.viewer_count(), 1);
        assert_eq!(s.counters().viewers_dropped, 1);
    }
}
