//! Area-of-interest mapping: fixations to words, saccades to paragraphs.
//!
//! Words are grouped into lines (same paragraph, vertically overlapping
//! boxes). Within a line, the horizontal gap `g` between neighbours is split
//! so the previous word extends right by `g/3` and the next word extends left
//! by `2g/3`. Extended boxes are half-open `[left, right) x [top, bottom)`,
//! using the line's vertical extent, so they tile each line without overlap.

use std::collections::{BTreeMap, HashMap};

use crate::model::{Fixation, LayoutManifest, ManifestError, MediaAoi, ParagraphAoi, Point, Rect, Saccade};

#[derive(Debug, Clone)]
struct Line {
    top: f64,
    bottom: f64,
    /// Word indices sorted left to right.
    words: Vec<usize>,
    /// `words.len() + 1` edges: left edge, split boundaries, right edge.
    edges: Vec<f64>,
}

impl Line {
    fn hit(&self, x: f64) -> Option<usize> {
        let n = self.words.len();
        if x < self.edges[0] || x >= self.edges[n] {
            return None;
        }
        let k = self.edges[1..n].partition_point(|b| *b <= x);
        Some(self.words[k])
    }
}

/// What a page point landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoiHit {
    Word(usize),
    Media(usize),
    Miss,
}

/// Hit-test index over a manifest's words.
#[derive(Debug, Clone)]
pub struct WordHitIndex {
    lines: Vec<Line>,
    /// running max of `bottom` over `lines[..=i]`
    bottom_prefix_max: Vec<f64>,
    word_boxes: Vec<Rect>,
    paragraphs: Vec<ParagraphAoi>,
    media: Vec<MediaAoi>,
}

impl WordHitIndex {
    pub fn build(layout: &LayoutManifest) -> Result<Self, ManifestError> {
        let mut by_para: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for w in &layout.words {
            by_para.entry(w.paragraph_id).or_default().push(w.word_index);
        }
        let boxes: Vec<Rect> = layout.words.iter().map(|w| w.bbox).collect();

        let mut lines = Vec::new();
        for (_, mut members) in by_para {
            members.sort_by(|a, b| {
                let (ra, rb) = (&boxes[*a], &boxes[*b]);
                ra.y.total_cmp(&rb.y).then(ra.x.total_cmp(&rb.x)).then(a.cmp(b))
            });
            let mut current: Option<(f64, f64, Vec<usize>)> = None;
            for wi in members {
                let r = boxes[wi];
                match current.as_mut() {
                    Some((top, bottom, ws)) if (r.y < *bottom && r.bottom() > *top) || r.y == *top => {
                        *bottom = bottom.max(r.bottom());
                        ws.push(wi);
                    }
                    _ => {
                        if let Some((t, b, ws)) = current.take() {
                            lines.push(make_line(t, b, ws, &boxes)?);
                        }
                        current = Some((r.y, r.bottom(), vec![wi]));
                    }
                }
            }
            if let Some((t, b, ws)) = current {
                lines.push(make_line(t, b, ws, &boxes)?);
            }
        }
        lines.sort_by(|a, b| a.top.total_cmp(&b.top).then(a.words[0].cmp(&b.words[0])));
        let mut bottom_prefix_max = Vec::with_capacity(lines.len());
        let mut m = f64::NEG_INFINITY;
        for l in &lines {
            m = m.max(l.bottom);
            bottom_prefix_max.push(m);
        }

        Ok(Self {
            lines,
            bottom_prefix_max,
            word_boxes: boxes,
            paragraphs: layout.paragraphs.clone(),
            media: layout.media.clone(),
        })
    }

    pub fn word_count(&self) -> usize {
        self.word_boxes.len()
    }

    pub fn word_box(&self, word_index: usize) -> Option<Rect> {
        self.word_boxes.get(word_index).copied()
    }

    /// Exact `[left, right)` edges of a word's extended box.
    pub fn extended_edges(&self, word_index: usize) -> Option<(f64, f64)> {
        self.lines
            .iter()
            .find_map(|l| l.words.iter().position(|w| *w == word_index).map(|k| (l.edges[k], l.edges[k + 1])))
    }

    /// Extended (gap-split) box of a word, as `[left, right) x [top, bottom)`.
    /// `x + w` may differ from the exact right edge by rounding; use
    /// [`Self::extended_edges`] for boundary comparisons.
    pub fn extended_box(&self, word_index: usize) -> Option<Rect> {
        self.lines.iter().find_map(|l| {
            l.words
                .iter()
                .position(|w| *w == word_index)
                .map(|k| Rect::new(l.edges[k], l.top, l.edges[k + 1] - l.edges[k], l.bottom - l.top))
        })
    }

    pub fn map_point_to_word(&self, p: Point) -> Option<usize> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return None;
        }
        // lines with top <= y, scanned downward while some earlier line may still reach y
        let end = self.lines.partition_point(|l| l.top <= p.y);
        let mut hit = None;
        for i in (0..end).rev() {
            if self.bottom_prefix_max[i] <= p.y {
                break;
            }
            let l = &self.lines[i];
            if p.y < l.bottom {
                if let Some(w) = l.hit(p.x) {
                    // lowest word index wins if lines overlap
                    hit = Some(hit.map_or(w, |h: usize| h.min(w)));
                }
            }
        }
        hit
    }

    pub fn map_point(&self, p: Point) -> AoiHit {
        if let Some(w) = self.map_point_to_word(p) {
            return AoiHit::Word(w);
        }
        self.media.iter().find(|m| m.bbox.contains(&p)).map_or(AoiHit::Miss, |m| AoiHit::Media(m.id))
    }

    /// Fills `word_index` / `media_id` / `aoi_box` from the fixation centroid.
    pub fn map_fixation(&self, f: &mut Fixation) {
        f.word_index = None;
        f.media_id = None;
        f.aoi_box = None;
        let Some(c) = f.centroid else { return };
        match self.map_point(c) {
            AoiHit::Word(w) => {
                f.word_index = Some(w);
                f.aoi_box = self.word_box(w);
            }
            AoiHit::Media(id) => {
                f.media_id = Some(id);
                f.aoi_box = self.media.iter().find(|m| m.id == id).map(|m| m.bbox);
            }
            AoiHit::Miss => {}
        }
    }

    /// Paragraph containing both points, if any.
    pub fn paragraph_of(&self, a: Point, b: Point) -> Option<usize> {
        self.paragraphs.iter().find(|p| p.bbox.contains(&a) && p.bbox.contains(&b)).map(|p| p.id)
    }
}

fn make_line(top: f64, bottom: f64, mut words: Vec<usize>, boxes: &[Rect]) -> Result<Line, ManifestError> {
    words.sort_by(|a, b| boxes[*a].x.total_cmp(&boxes[*b].x).then(a.cmp(b)));
    let mut edges = Vec::with_capacity(words.len() + 1);
    edges.push(boxes[words[0]].x);
    for pair in words.windows(2) {
        let (prev, next) = (&boxes[pair[0]], &boxes[pair[1]]);
        let gap = next.x - prev.right();
        if gap < 0.0 {
            return Err(ManifestError::OverlappingWords { a: pair[0].min(pair[1]), b: pair[0].max(pair[1]) });
        }
        edges.push(prev.right() + gap / 3.0);
    }
    edges.push(boxes[*words.last().unwrap()].right());
    Ok(Line { top, bottom, words, edges })
}

/// Assigns saccades to paragraphs and numbers them per paragraph.
#[derive(Debug, Clone, Default)]
pub struct SaccadeMapper {
    per_paragraph: HashMap<usize, u64>,
}

impl SaccadeMapper {
    pub fn new() -> Self {
        Self::default()
    }

    /// A saccade belongs to a paragraph iff both endpoints lie inside its box.
    pub fn map_saccade(&mut self, s: &mut Saccade, idx: Option<&WordHitIndex>) {
        s.paragraph_id = None;
        s.aoi_seq_index = None;
        let (Some(idx), Some(a), Some(b)) = (idx, s.start_pt, s.end_pt) else {
            return;
        };
        if let Some(pid) = idx.paragraph_of(a, b) {
            let n = self.per_paragraph.entry(pid).or_insert(0);
            *n += 1;
            s.paragraph_id = Some(pid);
            s.aoi_seq_index = Some(*n);
        }
    }

    pub fn count(&self, paragraph_id: usize) -> u64 {
        self.per_paragraph.get(&paragraph_id).copied().unwrap_or(0)
    }
}
