//! Synthetic layouts and reading gaze.
//!
//! The reader fixates word centers in reading order, jumping between them
//! with constant-angular-speed saccades; skips, regressions, Gaussian
//! positional noise and tracking dropouts are optional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{GazeSample, LayoutManifest, MediaAoi, ParagraphAoi, Point, Rect, ScreenModel, WordAoi};

/// Geometry of a generated text page (CSS px).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub words: usize,
    pub paragraphs: usize,
    pub left: f64,
    pub top: f64,
    pub line_width: f64,
    pub char_width: f64,
    pub line_height: f64,
    pub font_height: f64,
    pub word_gap: f64,
    pub paragraph_gap: f64,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            words: 200,
            paragraphs: 3,
            left: 100.0,
            top: 120.0,
            line_width: 1100.0,
            char_width: 11.0,
            line_height: 40.0,
            font_height: 24.0,
            word_gap: 10.0,
            paragraph_gap: 40.0,
            seed: 1,
        }
    }
}

const LETTERS: &[u8] = b"etaoinshrdlucmfwypvbgkjqxz";

/// Generates a page of pseudo-words laid out left to right in lines, with
/// sentence indices following the `.`/`!`/`?` rule.
pub fn synthetic_layout(p: &LayoutParams) -> LayoutManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let paragraphs = p.paragraphs.clamp(1, p.words.max(1));
    let mut words = Vec::with_capacity(p.words);
    let mut paras = Vec::new();
    let mut text = String::new();
    let mut chars = 0usize;
    let mut sentence = 0usize;
    let mut y = p.top;
    let mut i = 0usize;
    for para in 0..paragraphs {
        let n = p.words / paragraphs + usize::from(para < p.words % paragraphs);
        if n == 0 {
            continue;
        }
        if para > 0 {
            text.push_str("\n\n");
            chars += 2;
            y += p.line_height + p.paragraph_gap;
        }
        let mut x = p.left;
        let mut bbox: Option<Rect> = None;
        for k in 0..n {
            let len = rng.random_range(1..=9);
            let mut w: String =
                (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len().min(12 + len))] as char).collect();
            let last = k + 1 == n;
            let end_mark = if last {
                Some('.')
            } else {
                match rng.random_range(0..20) {
                    0 => Some('.'),
                    1 => Some('?'),
                    2 => Some(','),
                    _ => None,
                }
            };
            if let Some(c) = end_mark {
                w.push(c);
            }
            let width = w.chars().count() as f64 * p.char_width;
            if x > p.left && x + width > p.left + p.line_width {
                x = p.left;
                y += p.line_height;
            }
            if k > 0 {
                text.push(' ');
                chars += 1;
            }
            let r = Rect::new(x, y + (p.line_height - p.font_height) / 2.0, width, p.font_height);
            bbox = Some(bbox.map_or(r, |b| b.union(&r)));
            words.push(WordAoi {
                word_index: i,
                char_index: chars,
                sentence_index: sentence,
                paragraph_id: para,
                text: w.clone(),
                bbox: r,
            });
            chars += w.chars().count();
            text.push_str(&w);
            if matches!(end_mark, Some('.' | '!' | '?')) {
                sentence += 1;
            }
            x += width + p.word_gap;
            i += 1;
        }
        paras.push(ParagraphAoi { id: para, bbox: bbox.expect("paragraph has words") });
    }
    LayoutManifest {
        url: format!("synthetic://page/{}", p.seed),
        page_text: text,
        words,
        paragraphs: paras,
        media: Vec::<MediaAoi>::new(),
    }
}

/// Parameters of the simulated reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadingProfile {
    pub rate_hz: f64,
    pub fixation_mean_ms: f64,
    pub fixation_sd_ms: f64,
    pub fixation_min_ms: f64,
    /// Probability of skipping the next word.
    pub p_skip: f64,
    /// Probability of jumping back 1-3 words after a forward fixation.
    pub p_regress: f64,
    /// Words after whose first fixation a regression always follows.
    pub regress_at: Vec<usize>,
    /// Standard deviation of Gaussian positional noise (px), per sample.
    pub noise_px: f64,
    pub saccade_speed_dps: f64,
    /// Probability that a sample is flagged invalid.
    pub p_dropout: f64,
    /// Emit 3D origin/position columns instead of screen-only samples.
    pub geometry_3d: bool,
    /// Number of times the whole text is read.
    pub passes: usize,
    pub start_us: i64,
    pub seed: u64,
}

impl Default for ReadingProfile {
    fn default() -> Self {
        Self {
            rate_hz: 300.0,
            fixation_mean_ms: 220.0,
            fixation_sd_ms: 60.0,
            fixation_min_ms: 80.0,
            p_skip: 0.0,
            p_regress: 0.0,
            regress_at: Vec::new(),
            noise_px: 0.0,
            saccade_speed_dps: 300.0,
            p_dropout: 0.0,
            geometry_3d: false,
            passes: 1,
            start_us: 0,
            seed: 1,
        }
    }
}

impl ReadingProfile {
    /// Randomized reader: skip and regression rates, fixation timing,
    /// dropouts and geometry mode are drawn from `seed`.
    pub fn randomized(seed: u64, noise_px: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_6a2e);
        Self {
            fixation_mean_ms: rng.random_range(150.0..300.0),
            fixation_sd_ms: rng.random_range(20.0..90.0),
            p_skip: rng.random_range(0.0..0.35),
            p_regress: rng.random_range(0.02..0.3),
            regress_at: vec![rng.random_range(3..12)],
            noise_px,
            saccade_speed_dps: rng.random_range(200.0..450.0),
            p_dropout: rng.random_range(0.0..0.02),
            geometry_3d: rng.random_bool(0.5),
            seed,
            ..Self::default()
        }
    }
}

/// A fixation the simulated reader intended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedFixation {
    pub word_index: usize,
    pub start_us: i64,
    pub end_us: i64,
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedReading {
    pub samples: Vec<GazeSample>,
    pub planned: Vec<PlannedFixation>,
}

struct Emitter<'a> {
    profile: &'a ReadingProfile,
    screen: ScreenModel,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    k: i64,
    out: Vec<GazeSample>,
}

impl Emitter<'_> {
    fn t_us(&self) -> i64 {
        self.profile.start_us + (self.k as f64 * 1e6 / self.profile.rate_hz).round() as i64
    }

    fn emit(&mut self, p: Point) {
        let (mut x, mut y) = (p.x, p.y);
        if let Some(n) = &self.noise {
            x += n.sample(&mut self.rng);
            y += n.sample(&mut self.rng);
        }
        let mut s = GazeSample::screen(self.t_us(), x, y);
        if self.profile.geometry_3d {
            let m = &self.screen;
            let px = (x - m.width_px / 2.0) * m.mm_per_px_x();
            let py = (y - m.height_px / 2.0) * m.mm_per_px_y();
            s = s.with_geometry([0.0, 0.0, 0.0], [px, py, m.eye_distance_mm]);
        }
        if self.profile.p_dropout > 0.0 && self.rng.random_bool(self.profile.p_dropout) {
            s.valid = false;
        }
        self.out.push(s);
        self.k += 1;
    }
}

/// Simulates reading `layout` with `profile` on a display described by
/// `screen` (page coordinates equal screen coordinates).
pub fn simulate_reading(layout: &LayoutManifest, profile: &ReadingProfile, screen: &ScreenModel) -> SimulatedReading {
    let mut em = Emitter {
        profile,
        screen: *screen,
        rng: ChaCha8Rng::seed_from_u64(profile.seed),
        noise: (profile.noise_px > 0.0).then(|| Normal::new(0.0, profile.noise_px).expect("finite sigma")),
        k: 0,
        out: Vec::new(),
    };
    let dur = Normal::new(profile.fixation_mean_ms, profile.fixation_sd_ms.max(0.0)).expect("finite duration");
    let step_deg = profile.saccade_speed_dps / profile.rate_hz;
    let px_per_deg = screen.px_per_degree();
    let n = layout.words.len();
    let mut planned = Vec::new();
    let mut at: Option<Point> = None;

    let mut visit = |em: &mut Emitter, word: usize, at: &mut Option<Point>| {
        let target = layout.words[word].bbox.center();
        if let Some(from) = *at {
            let deg = from.distance(&target) / px_per_deg;
            let steps = ((deg / step_deg).ceil() as usize).max(1);
            for j in 1..steps {
                let f = j as f64 / steps as f64;
                em.emit(Point::new(from.x + (target.x - from.x) * f, from.y + (target.y - from.y) * f));
            }
        }
        let ms = dur.sample(&mut em.rng).max(profile.fixation_min_ms);
        let count = ((ms * profile.rate_hz / 1000.0).round() as usize).max(2);
        let start = em.t_us();
        for _ in 0..count {
            em.emit(target);
        }
        let end = em.t_us() - 1;
        planned.push(PlannedFixation { word_index: word, start_us: start, end_us: end });
        *at = Some(target);
    };

    for pass in 0..profile.passes {
        let mut i = 0;
        while i < n {
            visit(&mut em, i, &mut at);
            let forced = pass == 0 && profile.regress_at.contains(&i);
            if i > 0 && (forced || (profile.p_regress > 0.0 && em.rng.random_bool(profile.p_regress))) {
                let back = em.rng.random_range(1..=i.min(3));
                visit(&mut em, i - back, &mut at);
            }
            let skip = profile.p_skip > 0.0 && em.rng.random_bool(profile.p_skip);
            i += if skip { 2 } else { 1 };
        }
    }
    SimulatedReading { samples: em.out, planned }
}
