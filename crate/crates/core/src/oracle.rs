//! Offline brute-force reference implementation.
//!
//! Recomputes events and per-word metrics from a complete recording by
//! whole-stream scans, sharing no state machine with the streaming engine:
//! samples are labelled in one pass, runs are cut afterwards, words are hit
//! by testing every box, and each metric is derived by scanning the whole
//! fixation list for that word.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::export::metrics_csv;
use crate::metrics::FirstPassMode;
use crate::model::{Fixation, GazeSample, LayoutManifest, ManifestError, Point, Rect, Saccade, WordMetrics};
use crate::session::{LoadError, Record, SessionConfig, SessionHeader};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("layout: {0}")]
    Manifest(#[from] ManifestError),
    #[error("words {a} and {b} overlap on a line")]
    Overlap { a: usize, b: usize },
    #[error("session file: {0}")]
    Load(#[from] LoadError),
    #[error("session file has no header")]
    NoHeader,
    #[error("recorded configuration differs from the requested one")]
    ConfigMismatch { recorded: Box<SessionConfig>, requested: Box<SessionConfig> },
}

/// Events and metrics derived offline.
#[derive(Debug, Clone, Default)]
pub struct OracleOutput {
    pub fixations: Vec<Fixation>,
    pub saccades: Vec<Saccade>,
    pub metrics: Vec<WordMetrics>,
    pub start_us: Option<i64>,
}

impl OracleOutput {
    pub fn csv(&self, manifest: Option<&LayoutManifest>) -> String {
        metrics_csv(manifest, &self.metrics)
    }
}

// ── geometry ────────────────────────────────────────────────

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// `None` for degenerate 3D geometry.
fn direction(s: &GazeSample, cfg: &SessionConfig) -> Option<[f64; 3]> {
    if let (Some(o), Some(p)) = (s.origin_3d, s.pos_3d) {
        let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        return (d != [0.0; 3]).then(|| unit(d));
    }
    let m = &cfg.screen;
    let x = (s.screen_x - m.width_px / 2.0) * (m.width_mm / m.width_px);
    let y = (s.screen_y - m.height_px / 2.0) * (m.height_mm / m.height_px);
    Some(unit([x, y, m.eye_distance_mm]))
}

fn degrees_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let sin = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    sin.atan2(cos).to_degrees()
}

// ── classification ──────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct Accepted {
    t: i64,
    pt: Point,
    dir: [f64; 3],
}

/// Splits the log into reset-delimited segments of usable samples and finds
/// the session start (first sample the engine would accept).
fn segments(samples: &[GazeSample], cfg: &SessionConfig) -> (Vec<Vec<Accepted>>, Option<i64>) {
    let mut out: Vec<Vec<Accepted>> = Vec::new();
    let mut last_t: Option<i64> = None;
    let mut start = None;
    for s in samples {
        if last_t.is_some_and(|l| s.t_us <= l) {
            continue;
        }
        last_t = Some(s.t_us);
        if !s.valid {
            start.get_or_insert(s.t_us);
            continue;
        }
        let Some(dir) = direction(s, cfg) else { continue };
        start.get_or_insert(s.t_us);
        let a = Accepted { t: s.t_us, pt: Point::new(s.screen_x, s.screen_y), dir };
        match out.last_mut() {
            Some(seg) if a.t - seg.last().unwrap().t <= cfg.ivt.max_gap_us => seg.push(a),
            _ => out.push(vec![a]),
        }
    }
    (out, start)
}

fn classify_segment(seg: &[Accepted], cfg: &SessionConfig, fix: &mut Vec<Fixation>, sac: &mut Vec<Saccade>) {
    let n = seg.len();
    if n < 2 {
        return;
    }
    let back = cfg.ivt.window_samples - 1;
    let mut vel = vec![0.0; n];
    let mut is_sac = vec![false; n];
    for k in 1..n {
        let r = k.saturating_sub(back);
        vel[k] = degrees_between(&seg[r].dir, &seg[k].dir) / ((seg[k].t - seg[r].t) as f64 / 1e6);
        is_sac[k] = vel[k] >= cfg.ivt.threshold_dps;
    }
    // a single fixation sample after a saccade sample, followed by another
    // saccade sample or by the end, belongs to the saccade
    let mut merged = is_sac.clone();
    for k in 2..n {
        if !is_sac[k] && is_sac[k - 1] && (k + 1 == n || is_sac[k + 1]) {
            merged[k] = true;
        }
    }
    let mut k = 1;
    while k < n {
        let mut e = k;
        while e + 1 < n && merged[e + 1] == merged[k] {
            e += 1;
        }
        if merged[k] {
            let o = k - 1;
            let peak = (k..=e).filter(|&i| is_sac[i]).map(|i| vel[i]).fold(f64::NEG_INFINITY, f64::max);
            sac.push(Saccade {
                start_us: seg[o].t,
                end_us: seg[e].t,
                duration_us: seg[e].t - seg[o].t,
                start_pt: Some(seg[o].pt),
                end_pt: Some(seg[e].pt),
                seq_index: 0,
                aoi_seq_index: None,
                paragraph_id: None,
                length_px: 0.0,
                amplitude_deg: degrees_between(&seg[o].dir, &seg[e].dir),
                peak_velocity_dps: peak,
                direction: [0.0, 0.0],
                degenerate: false,
                sample_count: (e - k + 1) as u32,
            });
        } else {
            let first = if k == 1 { 0 } else { k };
            let (mut sx, mut sy) = (0.0, 0.0);
            for a in &seg[first..=e] {
                sx += a.pt.x;
                sy += a.pt.y;
            }
            let cnt = (e - first + 1) as f64;
            let f = Fixation::new(seg[first].t, seg[e].t, Some(Point::new(sx / cnt, sy / cnt)), (e - first + 1) as u32);
            if f.duration_us >= cfg.ivt.min_fixation_us {
                fix.push(f);
            }
        }
        k = e + 1;
    }
}

// ── AOI ─────────────────────────────────────────────────────

/// Extended word boxes computed pairwise from line neighbours.
#[derive(Debug, Clone)]
pub struct BruteAoi {
    /// (left, right, top, bottom) per word
    ext: Vec<(f64, f64, f64, f64)>,
    words: Vec<Rect>,
    manifest: LayoutManifest,
}

impl BruteAoi {
    pub fn new(m: &LayoutManifest) -> Result<Self, OracleError> {
        m.validate()?;
        let n = m.words.len();
        let b: Vec<Rect> = m.words.iter().map(|w| w.bbox).collect();
        let touches = |i: usize, j: usize| {
            m.words[i].paragraph_id == m.words[j].paragraph_id
                && (b[i].y == b[j].y || (b[i].y < b[j].y + b[j].h && b[j].y < b[i].y + b[i].h))
        };
        // line = connected component of the vertical-overlap graph
        let mut line = vec![usize::MAX; n];
        let mut lines = 0;
        for s in 0..n {
            if line[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            line[s] = lines;
            while let Some(i) = stack.pop() {
                #[allow(clippy::needless_range_loop)]
                for j in 0..n {
                    if line[j] == usize::MAX && touches(i, j) {
                        line[j] = lines;
                        stack.push(j);
                    }
                }
            }
            lines += 1;
        }
        let mut ext = Vec::with_capacity(n);
        for i in 0..n {
            let mates: Vec<usize> = (0..n).filter(|&j| line[j] == line[i]).collect();
            let top = mates.iter().map(|&j| b[j].y).fold(f64::INFINITY, f64::min);
            let bottom = mates.iter().map(|&j| b[j].y + b[j].h).fold(f64::NEG_INFINITY, f64::max);
            let order = |p: &usize, q: &usize| b[*p].x.total_cmp(&b[*q].x).then(p.cmp(q));
            let prev = mates.iter().filter(|&j| order(j, &i).is_lt()).max_by(|p, q| order(p, q)).copied();
            let next = mates.iter().filter(|&j| order(j, &i).is_gt()).min_by(|p, q| order(p, q)).copied();
            let split = |p: usize, q: usize| -> Result<f64, OracleError> {
                let gap = b[q].x - (b[p].x + b[p].w);
                if gap < 0.0 {
                    return Err(OracleError::Overlap { a: p.min(q), b: p.max(q) });
                }
                Ok(b[p].x + b[p].w + gap / 3.0)
            };
            let left = match prev {
                Some(p) => split(p, i)?,
                None => b[i].x,
            };
            let right = match next {
                Some(q) => split(i, q)?,
                None => b[i].x + b[i].w,
            };
            ext.push((left, right, top, bottom));
        }
        Ok(Self { ext, words: b, manifest: m.clone() })
    }

    pub fn word_at(&self, p: Point) -> Option<usize> {
        (0..self.ext.len()).find(|&i| {
            let (l, r, t, btm) = self.ext[i];
            p.x >= l && p.x < r && p.y >= t && p.y < btm
        })
    }

    fn media_at(&self, p: Point) -> Option<(usize, Rect)> {
        self.manifest
            .media
            .iter()
            .find(|m| p.x >= m.bbox.x && p.x <= m.bbox.x + m.bbox.w && p.y >= m.bbox.y && p.y <= m.bbox.y + m.bbox.h)
            .map(|m| (m.id, m.bbox))
    }

    fn paragraph_at(&self, a: Point, c: Point) -> Option<usize> {
        let inside = |r: &Rect, p: Point| p.x >= r.x && p.x <= r.x + r.w && p.y >= r.y && p.y <= r.y + r.h;
        self.manifest.paragraphs.iter().find(|p| inside(&p.bbox, a) && inside(&p.bbox, c)).map(|p| p.id)
    }

    fn map(&self, f: &mut Fixation) {
        f.word_index = None;
        f.media_id = None;
        f.aoi_box = None;
        let Some(c) = f.centroid else { return };
        if let Some(w) = self.word_at(c) {
            f.word_index = Some(w);
            f.aoi_box = Some(self.words[w]);
        } else if let Some((id, r)) = self.media_at(c) {
            f.media_id = Some(id);
            f.aoi_box = Some(r);
        }
    }
}

// ── saccade measures ────────────────────────────────────────

fn finish_saccades(saccades: &mut [Saccade], aoi: Option<&BruteAoi>) {
    let mut per_para: HashMap<usize, u64> = HashMap::new();
    for (i, s) in saccades.iter_mut().enumerate() {
        s.seq_index = i as u64 + 1;
        let (a, c) = (s.start_pt.unwrap(), s.end_pt.unwrap());
        s.length_px = (c.x - a.x).hypot(c.y - a.y);
        s.degenerate = s.length_px == 0.0;
        s.direction = if s.degenerate { [0.0, 0.0] } else { [(c.x - a.x) / s.length_px, (c.y - a.y) / s.length_px] };
        s.paragraph_id = aoi.and_then(|x| x.paragraph_at(a, c));
        s.aoi_seq_index = s.paragraph_id.map(|p| {
            let n = per_para.entry(p).or_insert(0);
            *n += 1;
            *n
        });
    }
}

// ── metrics ─────────────────────────────────────────────────

/// Assigns fixation groups: a new group unless this and the previous
/// fixation are mapped to the same word.
fn assign_groups(fixations: &mut [Fixation]) {
    for i in 0..fixations.len() {
        fixations[i].fixation_group = if i == 0 {
            1
        } else {
            let same = fixations[i].word_index.is_some() && fixations[i].word_index == fixations[i - 1].word_index;
            fixations[i - 1].fixation_group + u64::from(!same)
        };
    }
}

/// Per-word metrics by scanning the full fixation list for every word.
pub fn word_metrics(
    fixations: &[Fixation],
    n_words: usize,
    mode: FirstPassMode,
    start_us: Option<i64>,
    onset_us: Option<i64>,
    ended: bool,
) -> Vec<WordMetrics> {
    let mut fixations = fixations.to_vec();
    assign_groups(&mut fixations);
    let mapped: Vec<(usize, &Fixation)> = fixations.iter().filter_map(|f| f.word_index.map(|w| (w, f))).collect();
    let n_words = mapped.iter().map(|(w, _)| w + 1).fold(n_words, usize::max);
    let start = start_us.unwrap_or(0);
    let onset = onset_us.unwrap_or(start);

    (0..n_words)
        .map(|w| {
            let mut m = WordMetrics::empty(w);
            let own: Vec<&Fixation> = mapped.iter().filter(|(x, _)| *x == w).map(|(_, f)| *f).collect();
            if own.is_empty() {
                return m;
            }
            m.fixation_count = own.len() as u32;
            m.tfd_us = own.iter().map(|f| f.duration_us).sum();
            m.afd_us = Some(m.tfd_us as f64 / own.len() as f64);
            m.mifd_us = own.iter().map(|f| f.duration_us).min();
            m.mafd_us = own.iter().map(|f| f.duration_us).max();
            m.ffd_us = Some(own[0].duration_us);
            m.tff_ts_us = Some(own[0].start_us - start);
            m.ttff_us = Some(own[0].start_us - onset);
            m.rrd_us = m.tfd_us;

            // first visit: [a, b] in the mapped sequence
            let a = mapped.iter().position(|(x, _)| *x == w).unwrap();
            let mut b = a;
            while b + 1 < mapped.len() && mapped[b + 1].0 == w {
                b += 1;
            }
            let valid = match mode {
                FirstPassMode::FirstVisit => true,
                FirstPassMode::Strict => mapped[..a].iter().all(|(x, _)| *x < w),
            };
            if !valid {
                return m;
            }
            let fpd: i64 = mapped[a..=b].iter().map(|(_, f)| f.duration_us).sum();
            m.fpd_us = Some(fpd);
            m.fp_ffd_us = Some(mapped[a].1.duration_us);
            m.fp_group = Some(mapped[a].1.fixation_group);
            m.fp_regression = match mapped.get(b + 1) {
                Some((x, _)) => Some(*x < w),
                None if ended => Some(false),
                None => None,
            };
            let stop = mapped[a..].iter().position(|(x, _)| *x > w).map_or(mapped.len(), |p| a + p);
            m.rpd_us = Some(mapped[a..stop].iter().map(|(_, f)| f.duration_us).sum());
            m.srpd_us = Some(mapped[a..stop].iter().filter(|(x, _)| *x == w).map(|(_, f)| f.duration_us).sum());
            m.rrd_us = m.tfd_us - fpd;
            m
        })
        .collect()
}

/// Full recomputation from a gaze log read against one manifest through an
/// identity viewport, as the replay tool presents it. The layout is known
/// before the first sample, so onset equals session start.
pub fn run_log(
    samples: &[GazeSample],
    manifest: Option<&LayoutManifest>,
    cfg: &SessionConfig,
) -> Result<OracleOutput, OracleError> {
    let aoi = manifest.map(BruteAoi::new).transpose()?;
    let (segs, start) = segments(samples, cfg);
    let mut fixations = Vec::new();
    let mut saccades = Vec::new();
    for s in &segs {
        classify_segment(s, cfg, &mut fixations, &mut saccades);
    }
    // chronological interleave is implied: events are cut from disjoint runs
    if let Some(aoi) = &aoi {
        for f in &mut fixations {
            aoi.map(f);
        }
    }
    finish_saccades(&mut saccades, aoi.as_ref());
    let n_words = manifest.map_or(0, |m| m.words.len());
    let metrics = word_metrics(&fixations, n_words, cfg.first_pass_mode, start, start, true);
    assign_groups(&mut fixations);
    Ok(OracleOutput { fixations, saccades, metrics, start_us: start })
}

/// Recomputes metrics from a session file: every recorded fixation is
/// re-mapped against the manifest that was active when it was recorded.
pub fn run_session_text(
    text: &str,
    cfg: &SessionConfig,
) -> Result<(OracleOutput, Option<LayoutManifest>), OracleError> {
    let mut header: Option<SessionHeader> = None;
    let mut current: Option<BruteAoi> = None;
    let mut last_manifest: Option<LayoutManifest> = None;
    let mut n_words = 0;
    let mut fixations = Vec::new();
    let mut saccades = Vec::new();
    let mut ended = false;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(source) => return Err(LoadError::Record { line: i + 1, source }.into()),
        };
        match rec {
            Record::Manifest { manifest, .. } => {
                n_words = n_words.max(manifest.words.len());
                current = Some(BruteAoi::new(&manifest)?);
                last_manifest = Some(manifest);
            }
            Record::Fixation(mut f) => {
                match &current {
                    Some(a) => a.map(&mut f),
                    None => {
                        f.word_index = None;
                        f.media_id = None;
                        f.aoi_box = None;
                    }
                }
                fixations.push(f);
            }
            Record::Saccade(s) => saccades.push(s),
            Record::Flush { header: h, .. } => header = Some(h),
            Record::End { .. } => ended = true,
            Record::Viewport(_) => {}
        }
    }
    let header = header.ok_or(OracleError::NoHeader)?;
    if !header.config.analysis_matches(cfg) {
        return Err(OracleError::ConfigMismatch { recorded: Box::new(header.config), requested: Box::new(*cfg) });
    }
    let metrics = word_metrics(&fixations, n_words, cfg.first_pass_mode, header.start_us, header.onset_us, ended);
    assign_groups(&mut fixations);
    Ok((OracleOutput { fixations, saccades, metrics, start_us: header.start_us }, last_manifest))
}

pub fn run_session_file(
    path: &Path,
    cfg: &SessionConfig,
) -> Result<(OracleOutput, Option<LayoutManifest>), OracleError> {
    let text = std::fs::read_to_string(path).map_err(LoadError::Io)?;
    run_session_text(&text, cfg)
}
