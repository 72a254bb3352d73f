//! Streaming velocity-threshold (I-VT) classification.
//!
//! Each valid sample's angular velocity is measured against an earlier sample
//! in a short trailing window and compared to a deg/s threshold. Runs of
//! below-threshold samples become fixations; runs at or above it become
//! saccades.
//!
//! Event boundaries:
//! - the first sample after a reset is a seed: it is labelled `Unknown` and
//!   joins the first fixation, or serves as the origin of a first saccade;
//! - a saccade starts at the sample preceding its first saccade-labelled
//!   sample and ends at its last member;
//! - a single below-threshold sample sandwiched between saccade samples (or
//!   trailing a saccade at a flush) is absorbed into the saccade, so every
//!   emitted fixation spans at least two samples and events alternate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fixation, GazeSample, Point, Saccade, ScreenModel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvtConfig {
    pub threshold_dps: f64,
    pub window_samples: usize,
    /// Fixations shorter than this are discarded; 0 disables the filter.
    pub min_fixation_us: i64,
    /// Larger gaps between valid samples close pending events and restart.
    pub max_gap_us: i64,
}

impl Default for IvtConfig {
    fn default() -> Self {
        Self { threshold_dps: 30.0, window_samples: 2, min_fixation_us: 0, max_gap_us: 100_000 }
    }
}

impl IvtConfig {
    pub fn validate(&self) -> Result<(), IvtError> {
        if self.threshold_dps.is_nan() || self.threshold_dps <= 0.0 {
            return Err(IvtError::Config("threshold_dps must be > 0"));
        }
        if self.window_samples < 2 {
            return Err(IvtError::Config("window_samples must be >= 2"));
        }
        if self.max_gap_us <= 0 {
            return Err(IvtError::Config("max_gap_us must be > 0"));
        }
        if self.min_fixation_us < 0 {
            return Err(IvtError::Config("min_fixation_us must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IvtError {
    #[error("gaze origin and position coincide")]
    DegenerateGeometry,
    #[error("sample flagged invalid")]
    InvalidSample,
    #[error("timestamp {t_us} is not after {previous_us}")]
    OutOfOrder { t_us: i64, previous_us: i64 },
    #[error("invalid classifier config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Fixation,
    Saccade,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLabel {
    pub t_us: i64,
    pub label: Label,
    pub velocity_dps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IvtEvent {
    Fixation(Fixation),
    Saccade(Saccade),
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Unit gaze vector of a sample.
///
/// With 3D geometry this is `normalize(pos - origin)`. Without it, the eye is
/// placed `eye_distance_mm` in front of the screen center and the vector
/// points at the sample's physical location on the panel.
pub fn gaze_direction(s: &GazeSample, screen: &ScreenModel) -> Result<Vec3, IvtError> {
    if !s.valid {
        return Err(IvtError::InvalidSample);
    }
    match (s.origin_3d, s.pos_3d) {
        (Some(o), Some(p)) => {
            let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
            if d == [0.0, 0.0, 0.0] {
                return Err(IvtError::DegenerateGeometry);
            }
            Ok(normalize(d))
        }
        _ => {
            let x = (s.screen_x - screen.width_px / 2.0) * screen.mm_per_px_x();
            let y = (s.screen_y - screen.height_px / 2.0) * screen.mm_per_px_y();
            Ok(normalize([x, y, screen.eye_distance_mm]))
        }
    }
}

/// Angle between two unit vectors, in degrees.
///
/// Evaluated as `atan2(|a×b|, a·b)`, which equals `acos(clamp(a·b))` for unit
/// vectors but keeps precision for tiny angles.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let cx = a[1] * b[2] - a[2] * b[1];
    let cy = a[2] * b[0] - a[0] * b[2];
    let cz = a[0] * b[1] - a[1] * b[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    cross.atan2(dot).to_degrees()
}

/// Angular velocity in deg/s between two gaze directions `dt_us` apart.
pub fn angular_velocity(prev: &Vec3, cur: &Vec3, dt_us: i64) -> Result<f64, IvtError> {
    if dt_us <= 0 {
        return Err(IvtError::OutOfOrder { t_us: dt_us, previous_us: 0 });
    }
    Ok(angle_deg(prev, cur) / (dt_us as f64 / 1e6))
}

#[derive(Debug, Clone, Copy)]
struct SampleInfo {
    t_us: i64,
    pt: Option<Point>,
    dir: Vec3,
    velocity: f64,
}

#[derive(Debug, Clone, Copy)]
struct FixationRun {
    start_us: i64,
    last: SampleInfo,
    count: u32,
    sum_x: f64,
    sum_y: f64,
    n_pts: u32,
}

impl FixationRun {
    fn start(first: SampleInfo) -> Self {
        let mut run = Self { start_us: first.t_us, last: first, count: 0, sum_x: 0.0, sum_y: 0.0, n_pts: 0 };
        run.add(first);
        run
    }

    fn add(&mut self, s: SampleInfo) {
        self.count += 1;
        if let Some(p) = s.pt {
            self.sum_x += p.x;
            self.sum_y += p.y;
            self.n_pts += 1;
        }
        self.last = s;
    }

    fn into_fixation(self) -> Fixation {
        let centroid =
            (self.n_pts > 0).then(|| Point::new(self.sum_x / self.n_pts as f64, self.sum_y / self.n_pts as f64));
        Fixation::new(self.start_us, self.last.t_us, centroid, self.count)
    }
}

#[derive(Debug, Clone, Copy)]
struct SaccadeRun {
    origin: SampleInfo,
    last: SampleInfo,
    count: u32,
    peak: f64,
}

impl SaccadeRun {
    fn start(origin: SampleInfo, first: SampleInfo) -> Self {
        Self { origin, last: first, count: 1, peak: first.velocity }
    }

    fn add(&mut self, s: SampleInfo) {
        self.count += 1;
        self.peak = self.peak.max(s.velocity);
        self.last = s;
    }

    /// Absorbs a below-threshold sample without touching the peak.
    fn absorb(&mut self, s: SampleInfo) {
        self.count += 1;
        self.last = s;
    }

    fn into_saccade(self) -> Saccade {
        Saccade {
            start_us: self.origin.t_us,
            end_us: self.last.t_us,
            duration_us: self.last.t_us - self.origin.t_us,
            start_pt: self.origin.pt,
            end_pt: self.last.pt,
            seq_index: 0,
            aoi_seq_index: None,
            paragraph_id: None,
            length_px: 0.0,
            amplitude_deg: angle_deg(&self.origin.dir, &self.last.dir),
            peak_velocity_dps: self.peak,
            direction: [0.0, 0.0],
            degenerate: false,
            sample_count: self.count,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Empty,
    Seed(SampleInfo),
    Fixation(FixationRun),
    Saccade(SaccadeRun),
    /// Saccade followed by one below-threshold sample; decided by the next sample.
    SaccadeThenFixation(SaccadeRun, SampleInfo),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierStats {
    pub samples: u64,
    pub invalid_skipped: u64,
    pub rejected_out_of_order: u64,
    pub degenerate: u64,
    pub resets: u64,
    pub short_fixations_dropped: u64,
}

/// Result of pushing one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// `None` for skipped invalid samples.
    pub label: Option<SampleLabel>,
    pub event: Option<IvtEvent>,
}

/// One classifier per session stream.
#[derive(Debug, Clone)]
pub struct IvtClassifier {
    config: IvtConfig,
    screen: ScreenModel,
    history: VecDeque<(i64, Vec3)>,
    last_t: Option<i64>,
    last_valid_t: Option<i64>,
    pending: Pending,
    stats: ClassifierStats,
}

impl IvtClassifier {
    pub fn new(config: IvtConfig, screen: ScreenModel) -> Result<Self, IvtError> {
        config.validate()?;
        Ok(Self {
            config,
            screen,
            history: VecDeque::with_capacity(config.window_samples),
            last_t: None,
            last_valid_t: None,
            pending: Pending::Empty,
            stats: ClassifierStats::default(),
        })
    }

    pub fn config(&self) -> &IvtConfig {
        &self.config
    }

    pub fn stats(&self) -> &ClassifierStats {
        &self.stats
    }

    /// Classifies one sample. `page` is the sample's page position when a
    /// viewport is known; it only feeds centroids and saccade endpoints.
    pub fn push(&mut self, s: &GazeSample, page: Option<Point>) -> Result<Step, IvtError> {
        if let Some(prev) = self.last_t {
            if s.t_us <= prev {
                self.stats.rejected_out_of_order += 1;
                return Err(IvtError::OutOfOrder { t_us: s.t_us, previous_us: prev });
            }
        }
        self.last_t = Some(s.t_us);
        self.stats.samples += 1;

        if !s.valid {
            self.stats.invalid_skipped += 1;
            return Ok(Step { label: None, event: None });
        }
        let dir = match gaze_direction(s, &self.screen) {
            Ok(d) => d,
            Err(e) => {
                self.stats.degenerate += 1;
                return Err(e);
            }
        };

        let mut event = None;
        if let Some(prev) = self.last_valid_t {
            if s.t_us - prev > self.config.max_gap_us {
                event = self.flush_pending();
                self.history.clear();
                self.stats.resets += 1;
            }
        }
        self.last_valid_t = Some(s.t_us);

        if self.history.is_empty() {
            self.history.push_back((s.t_us, dir));
            self.pending = Pending::Seed(SampleInfo { t_us: s.t_us, pt: page, dir, velocity: 0.0 });
            return Ok(Step {
                label: Some(SampleLabel { t_us: s.t_us, label: Label::Unknown, velocity_dps: 0.0 }),
                event,
            });
        }

        // reference sample: window_samples - 1 back, or the oldest retained
        let back = self.config.window_samples - 1;
        let idx = self.history.len().saturating_sub(back);
        let (ref_t, ref_dir) = self.history[idx];
        let velocity = angular_velocity(&ref_dir, &dir, s.t_us - ref_t)?;
        let label = if velocity < self.config.threshold_dps { Label::Fixation } else { Label::Saccade };
        let info = SampleInfo { t_us: s.t_us, pt: page, dir, velocity };

        let transition = self.advance(label, info);
        debug_assert!(event.is_none() || transition.is_none());
        event = event.or(transition);

        self.history.push_back((s.t_us, dir));
        while self.history.len() > self.config.window_samples {
            self.history.pop_front();
        }

        Ok(Step { label: Some(SampleLabel { t_us: s.t_us, label, velocity_dps: velocity }), event })
    }

    fn advance(&mut self, label: Label, s: SampleInfo) -> Option<IvtEvent> {
        let fix = label == Label::Fixation;
        let (next, event) = match self.pending {
            Pending::Empty => unreachable!("non-seed sample without pending state"),
            Pending::Seed(seed) => {
                if fix {
                    let mut run = FixationRun::start(seed);
                    run.add(s);
                    (Pending::Fixation(run), None)
                } else {
                    (Pending::Saccade(SaccadeRun::start(seed, s)), None)
                }
            }
            Pending::Fixation(mut run) => {
                if fix {
                    run.add(s);
                    (Pending::Fixation(run), None)
                } else {
                    let ev = self.emit_fixation(run);
                    (Pending::Saccade(SaccadeRun::start(run.last, s)), ev)
                }
            }
            Pending::Saccade(mut run) => {
                if fix {
                    (Pending::SaccadeThenFixation(run, s), None)
                } else {
                    run.add(s);
                    (Pending::Saccade(run), None)
                }
            }
            Pending::SaccadeThenFixation(mut run, lone) => {
                if fix {
                    let mut fixation = FixationRun::start(lone);
                    fixation.add(s);
                    (Pending::Fixation(fixation), Some(IvtEvent::Saccade(run.into_saccade())))
                } else {
                    run.absorb(lone);
                    run.add(s);
                    (Pending::Saccade(run), None)
                }
            }
        };
        self.pending = next;
        event
    }

    fn emit_fixation(&mut self, run: FixationRun) -> Option<IvtEvent> {
        let f = run.into_fixation();
        if f.duration_us < self.config.min_fixation_us {
            self.stats.short_fixations_dropped += 1;
            return None;
        }
        Some(IvtEvent::Fixation(f))
    }

    fn flush_pending(&mut self) -> Option<IvtEvent> {
        match std::mem::replace(&mut self.pending, Pending::Empty) {
            Pending::Empty | Pending::Seed(_) => None,
            Pending::Fixation(run) => self.emit_fixation(run),
            Pending::Saccade(run) => Some(IvtEvent::Saccade(run.into_saccade())),
            Pending::SaccadeThenFixation(mut run, lone) => {
                run.absorb(lone);
                Some(IvtEvent::Saccade(run.into_saccade()))
            }
        }
    }

    /// Closes any pending event at the last sample and resets the stream.
    pub fn finalize_stream(&mut self) -> Option<IvtEvent> {
        let ev = self.flush_pending();
        self.history.clear();
        self.last_valid_t = None;
        ev
    }
}
