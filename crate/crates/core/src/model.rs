//! Domain types shared by every stage of the engine.
//!
//! Coordinates: raw samples arrive in screen device pixels; everything after
//! the viewport transform lives in page CSS pixels. Durations are carried as
//! integer microseconds and only converted to milliseconds on export.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

/// Axis-aligned rectangle, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Closed containment (edges included).
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect::new(x, y, self.right().max(other.right()) - x, self.bottom().max(other.bottom()) - y)
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

// ── Raw input ───────────────────────────────────────────────

/// One raw eye-tracker observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    /// Source clock, microseconds, strictly increasing within a session.
    pub t_us: i64,
    pub screen_x: f64,
    pub screen_y: f64,
    /// Gaze origin in the user coordinate system (mm).
    pub origin_3d: Option<Vec3>,
    /// Gaze position in the user coordinate system (mm).
    pub pos_3d: Option<Vec3>,
    pub valid: bool,
}

impl GazeSample {
    /// A 2D-only sample.
    pub fn screen(t_us: i64, x: f64, y: f64) -> Self {
        Self { t_us, screen_x: x, screen_y: y, origin_3d: None, pos_3d: None, valid: true }
    }

    pub fn with_geometry(mut self, origin: Vec3, pos: Vec3) -> Self {
        self.origin_3d = Some(origin);
        self.pos_3d = Some(pos);
        self
    }
}

/// Browser window placement and scroll, applied to every sample at or after `t_us`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewportState {
    pub t_us: i64,
    pub win_x: f64,
    pub win_y: f64,
    pub scroll_x: f64,
    pub scroll_y: f64,
    pub dpr: f64,
}

impl ViewportState {
    pub fn identity(t_us: i64) -> Self {
        Self { t_us, win_x: 0.0, win_y: 0.0, scroll_x: 0.0, scroll_y: 0.0, dpr: 1.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.dpr > 0.0 && self.dpr.is_finite()
    }

    pub fn screen_to_page(&self, p: Point) -> Point {
        Point::new((p.x - self.win_x) / self.dpr + self.scroll_x, (p.y - self.win_y) / self.dpr + self.scroll_y)
    }

    pub fn page_to_screen(&self, p: Point) -> Point {
        Point::new((p.x - self.scroll_x) * self.dpr + self.win_x, (p.y - self.scroll_y) * self.dpr + self.win_y)
    }
}

/// Physical display description used for visual-angle estimates when a
/// sample carries no 3D gaze geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenModel {
    pub width_px: f64,
    pub height_px: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub eye_distance_mm: f64,
}

impl Default for ScreenModel {
    /// 24" 16:9 panel at 1080p viewed from 65 cm.
    fn default() -> Self {
        Self { width_px: 1920.0, height_px: 1080.0, width_mm: 531.0, height_mm: 299.0, eye_distance_mm: 650.0 }
    }
}

impl ScreenModel {
    pub fn is_valid(&self) -> bool {
        [self.width_px, self.height_px, self.width_mm, self.height_mm, self.eye_distance_mm]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
    }

    /// Millimetres per device pixel, horizontally.
    pub fn mm_per_px_x(&self) -> f64 {
        self.width_mm / self.width_px
    }

    pub fn mm_per_px_y(&self) -> f64 {
        self.height_mm / self.height_px
    }

    /// Device pixels subtended by one degree of visual angle at screen center.
    pub fn px_per_degree(&self) -> f64 {
        let mm = self.eye_distance_mm * 1f64.to_radians().tan();
        mm / self.mm_per_px_x()
    }
}

// ── Layout ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAoi {
    #[serde(rename = "i")]
    pub word_index: usize,
    #[serde(rename = "char")]
    pub char_index: usize,
    #[serde(rename = "sent")]
    pub sentence_index: usize,
    #[serde(rename = "para")]
    pub paragraph_id: usize,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphAoi {
    pub id: usize,
    #[serde(rename = "box")]
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaAoi {
    pub id: usize,
    pub kind: String,
    #[serde(rename = "box")]
    pub bbox: Rect,
}

/// Page snapshot used as area-of-interest ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayoutManifest {
    pub url: String,
    pub page_text: String,
    #[serde(default)]
    pub words: Vec<WordAoi>,
    #[serde(default)]
    pub paragraphs: Vec<ParagraphAoi>,
    #[serde(default)]
    pub media: Vec<MediaAoi>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("word at position {position} has index {found}")]
    NonContiguousIndex { position: usize, found: usize },
    #[error("word {word} references unknown paragraph {paragraph}")]
    UnknownParagraph { word: usize, paragraph: usize },
    #[error("word {word}: text {text:?} not found at char index {char_index}")]
    TextMismatch { word: usize, char_index: usize, text: String },
    #[error("negative or non-finite box on {what} {id}")]
    BadBox { what: &'static str, id: usize },
    #[error("word boxes {a} and {b} overlap on the same line")]
    OverlappingWords { a: usize, b: usize },
    #[error("invalid manifest json: {0}")]
    Json(String),
}

fn box_ok(r: &Rect) -> bool {
    [r.x, r.y, r.w, r.h].iter().all(|v| v.is_finite()) && r.w >= 0.0 && r.h >= 0.0
}

impl LayoutManifest {
    pub fn from_json(s: &str) -> Result<Self, ManifestError> {
        let m: LayoutManifest = serde_json::from_str(s).map_err(|e| ManifestError::Json(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Checks the structural invariants (index contiguity, paragraph
    /// references, text offsets, box sanity). Line overlap is checked when the
    /// hit index is built.
    pub fn validate(&self) -> Result<(), ManifestError> {
        // char offset -> byte offset, computed once
        let byte_at: Vec<usize> =
            self.page_text.char_indices().map(|(b, _)| b).chain(std::iter::once(self.page_text.len())).collect();
        for (pos, w) in self.words.iter().enumerate() {
            if w.word_index != pos {
                return Err(ManifestError::NonContiguousIndex { position: pos, found: w.word_index });
            }
            if !self.paragraphs.iter().any(|p| p.id == w.paragraph_id) {
                return Err(ManifestError::UnknownParagraph { word: pos, paragraph: w.paragraph_id });
            }
            if !box_ok(&w.bbox) {
                return Err(ManifestError::BadBox { what: "word", id: pos });
            }
            let matches =
                byte_at.get(w.char_index).map(|&b| self.page_text[b..].starts_with(w.text.as_str())).unwrap_or(false);
            if !matches {
                return Err(ManifestError::TextMismatch { word: pos, char_index: w.char_index, text: w.text.clone() });
            }
        }
        for p in &self.paragraphs {
            if !box_ok(&p.bbox) {
                return Err(ManifestError::BadBox { what: "paragraph", id: p.id });
            }
        }
        for m in &self.media {
            if !box_ok(&m.bbox) {
                return Err(ManifestError::BadBox { what: "media", id: m.id });
            }
        }
        Ok(())
    }

    pub fn word(&self, index: usize) -> Option<&WordAoi> {
        self.words.get(index)
    }
}

// ── Events ──────────────────────────────────────────────────

/// A classified dwell event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start_us: i64,
    pub end_us: i64,
    pub duration_us: i64,
    /// Mean page position of the run's samples; absent when no viewport was known.
    pub centroid: Option<Point>,
    pub sample_count: u32,
    pub word_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_id: Option<usize>,
    /// Original (unextended) box of the mapped element.
    pub aoi_box: Option<Rect>,
    pub fixation_group: u64,
}

impl Fixation {
    pub fn new(start_us: i64, end_us: i64, centroid: Option<Point>, sample_count: u32) -> Self {
        Self {
            start_us,
            end_us,
            duration_us: end_us - start_us,
            centroid,
            sample_count,
            word_index: None,
            media_id: None,
            aoi_box: None,
            fixation_group: 0,
        }
    }
}

/// A classified rapid movement between fixations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saccade {
    pub start_us: i64,
    pub end_us: i64,
    pub duration_us: i64,
    pub start_pt: Option<Point>,
    pub end_pt: Option<Point>,
    /// 1-based, session-wide.
    pub seq_index: u64,
    /// 1-based ordinal within the assigned paragraph.
    pub aoi_seq_index: Option<u64>,
    pub paragraph_id: Option<usize>,
    pub length_px: f64,
    pub amplitude_deg: f64,
    pub peak_velocity_dps: f64,
    pub direction: [f64; 2],
    /// Set when start and end coincide (or are unknown) and direction is undefined.
    pub degenerate: bool,
    pub sample_count: u32,
}

/// Per-word aggregate of fixation and reading measures. All durations and
/// timestamps are microseconds; the CSV export converts to milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordMetrics {
    pub word_index: usize,
    #[serde(rename = "TFD")]
    pub tfd_us: i64,
    #[serde(rename = "AFD")]
    pub afd_us: Option<f64>,
    #[serde(rename = "MiFD")]
    pub mifd_us: Option<i64>,
    #[serde(rename = "MaFD")]
    pub mafd_us: Option<i64>,
    #[serde(rename = "F_count")]
    pub fixation_count: u32,
    #[serde(rename = "TFF_ts")]
    pub tff_ts_us: Option<i64>,
    #[serde(rename = "TTFF")]
    pub ttff_us: Option<i64>,
    #[serde(rename = "FFD")]
    pub ffd_us: Option<i64>,
    #[serde(rename = "FpFFD")]
    pub fp_ffd_us: Option<i64>,
    #[serde(rename = "Fp_group")]
    pub fp_group: Option<u64>,
    #[serde(rename = "FpR")]
    pub fp_regression: Option<bool>,
    #[serde(rename = "FpD")]
    pub fpd_us: Option<i64>,
    #[serde(rename = "RPD")]
    pub rpd_us: Option<i64>,
    #[serde(rename = "sRPD")]
    pub srpd_us: Option<i64>,
    #[serde(rename = "RRD")]
    pub rrd_us: i64,
}

impl WordMetrics {
    pub fn empty(word_index: usize) -> Self {
        Self {
            word_index,
            tfd_us: 0,
            afd_us: None,
            mifd_us: None,
            mafd_us: None,
            fixation_count: 0,
            tff_ts_us: None,
            ttff_us: None,
            ffd_us: None,
            fp_ffd_us: None,
            fp_group: None,
            fp_regression: None,
            fpd_us: None,
            rpd_us: None,
            srpd_us: None,
            rrd_us: 0,
        }
    }
}

/// Integer microseconds as milliseconds with exactly three decimals.
pub fn format_ms(us: i64) -> String {
    let sign = if us < 0 { "-" } else { "" };
    let a = us.unsigned_abs();
    format!("{sign}{}.{:03}", a / 1000, a % 1000)
}

/// Fractional microseconds as milliseconds with three decimals.
pub fn format_ms_f64(us: f64) -> String {
    format!("{:.3}", us / 1000.0)
}
