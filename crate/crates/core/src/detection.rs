//! From foreground vectors to scored detections.
//!
//! A foreground is thresholded into a mask, the mask is split into connected
//! components, and each component's bounding box is matched one-to-one
//! against groundtruth boxes by IoU. Recall, precision and F1 are reported
//! over the latest `k` frames and over everything seen so far.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(invalid("box extents must be positive"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = ix * iy;
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Rule turning foreground magnitudes into a binary mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segmentation {
    /// `|s_i| ≥ θ`.
    Fixed(f64),
    /// `θ` is the `q`-quantile of `|s|`; pixels with `s_i = 0` are never set.
    Quantile(f64),
}

impl Default for Segmentation {
    fn default() -> Self {
        Segmentation::Quantile(0.995)
    }
}

impl FromStr for Segmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("segmentation '{s}' is not of the form fixed:θ or quantile:q")))?;
        let value: f64 = value.parse().map_err(|_| invalid(format!("bad segmentation value '{value}'")))?;
        let seg = match kind {
            "fixed" => Segmentation::Fixed(value),
            "quantile" => Segmentation::Quantile(value),
            other => return Err(invalid(format!("unknown segmentation '{other}'"))),
        };
        seg.validate()?;
        Ok(seg)
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segmentation::Fixed(t) => write!(f, "fixed:{t}"),
            Segmentation::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl Segmentation {
    fn validate(&self) -> Result<()> {
        match *self {
            Segmentation::Fixed(t) if !t.is_finite() => Err(invalid("threshold must be finite")),
            Segmentation::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                Err(invalid(format!("quantile {q} is outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

pub fn threshold_mask(s: &[f64], method: Segmentation) -> Result<Vec<bool>> {
    method.validate()?;
    match method {
        Segmentation::Fixed(theta) => Ok(s.iter().map(|v| v.abs() >= theta).collect()),
        Segmentation::Quantile(q) => {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            let mut mags: Vec<f64> = s.iter().map(|v| v.abs()).collect();
            let rank = ((q * s.len() as f64).floor() as usize).min(s.len() - 1);
            let (_, theta, _) = mags.select_nth_unstable_by(rank, |a, b| a.total_cmp(b));
            let theta = *theta;
            Ok(s.iter().map(|v| v.abs() >= theta && *v != 0.0).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            _ => Err(invalid(format!("connectivity must be 4 or 8, got '{s}'"))),
        }
    }
}

/// Tight bounding boxes of the connected true-regions of a row-major mask,
/// keeping components with at least `min_area` pixels, sorted by `(y, x)`.
pub fn connected_components(
    mask: &[bool],
    height: usize,
    width: usize,
    connectivity: Connectivity,
    min_area: usize,
) -> Result<Vec<BoundingBox>> {
    if mask.len() != height * width {
        return Err(invalid("mask length does not match frame dimensions"));
    }
    let neighbours: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    let mut visited = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let mut boxes = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0;
        while let Some(idx) = queue.pop_front() {
            let (y, x) = (idx / width, idx % width);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for &(dy, dx) in neighbours {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let n = ny as usize * width + nx as usize;
                if mask[n] && !visited[n] {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if area >= min_area {
            boxes.push(BoundingBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 });
        }
    }
    boxes.sort_by_key(|b| (b.y, b.x));
    Ok(boxes)
}

/// TP/FP/FN counts of one frame and the matched `(detection, groundtruth, iou)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub pairs: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// Repeatedly take the highest-IoU unmatched pair.
    #[default]
    Greedy,
    /// Maximum total IoU assignment (Hungarian algorithm).
    Optimal,
}

impl FromStr for Matching {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Matching::Greedy),
            "optimal" => Ok(Matching::Optimal),
            _ => Err(invalid(format!("matching must be greedy or optimal, got '{s}'"))),
        }
    }
}

fn into_result(pairs: Vec<(usize, usize, f64)>, dets: usize, gts: usize) -> MatchResult {
    let tp = pairs.len();
    MatchResult { true_positives: tp, false_positives: dets - tp, false_negatives: gts - tp, pairs }
}

/// Greedy one-to-one matching by descending IoU; pairs below `thresh` never match.
pub fn match_detections(dets: &[BoundingBox], gts: &[BoundingBox], thresh: f64) -> MatchResult {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(d, g);
            if v >= thresh && v > 0.0 {
                candidates.push((i, j, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (i, j, v) in candidates {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, v));
        }
    }
    into_result(pairs, dets.len(), gts.len())
}

/// Assignment maximizing the summed IoU over pairs at or above `thresh`.
pub fn match_detections_optimal(dets: &[BoundingBox], gts: &[BoundingBox], thresh: f64) -> MatchResult {
    if dets.is_empty() || gts.is_empty() {
        return into_result(Vec::new(), dets.len(), gts.len());
    }
    let weight = |i: usize, j: usize| {
        let v = iou(&dets[i], &gts[j]);
        if v >= thresh && v > 0.0 {
            v
        } else {
            0.0
        }
    };
    // Hungarian on rows ≤ cols, minimizing −weight.
    let transpose = dets.len() > gts.len();
    let (rows, cols) = if transpose { (gts.len(), dets.len()) } else { (dets.len(), gts.len()) };
    let cost = |r: usize, c: usize| if transpose { -weight(c, r) } else { -weight(r, c) };
    let assignment = hungarian(rows, cols, cost);
    let mut pairs = Vec::new();
    for (r, c) in assignment.into_iter().enumerate() {
        let (i, j) = if transpose { (c, r) } else { (r, c) };
        let v = weight(i, j);
        if v > 0.0 {
            pairs.push((i, j, v));
        }
    }
    pairs.sort_by_key(|p| p.0);
    into_result(pairs, dets.len(), gts.len())
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`).
fn hungarian(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Metrics {
    /// Recall, precision and F1 from summed counts, with 0 for every 0/0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let recall = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f1 = if recall + precision == 0.0 { 0.0 } else { 2.0 * recall * precision / (recall + precision) };
        Self { recall, precision, f1 }
    }

    pub fn from_matches<'a>(matches: impl IntoIterator<Item = &'a MatchResult>) -> Self {
        let (tp, fp, fn_) = matches.into_iter().fold((0, 0, 0), |(tp, fp, fn_), m| {
            (tp + m.true_positives, fp + m.false_positives, fn_ + m.false_negatives)
        });
        Self::from_counts(tp, fp, fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    LastK(usize),
    Accumulated,
}

pub fn metrics_window(history: &[MatchResult], mode: Window) -> Result<Metrics> {
    if history.is_empty() {
        return Err(invalid("metrics need at least one frame"));
    }
    let selected = match mode {
        Window::LastK(0) => return Err(invalid("window must cover at least one frame")),
        Window::LastK(k) => &history[history.len().saturating_sub(k)..],
        Window::Accumulated => history,
    };
    Ok(Metrics::from_matches(selected))
}

/// Knobs of the detection post-processing and scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub segmentation: Segmentation,
    pub connectivity: Connectivity,
    pub min_area: usize,
    pub iou_thresh: f64,
    pub matching: Matching,
    pub window: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            segmentation: Segmentation::default(),
            connectivity: Connectivity::Eight,
            min_area: 2,
            iou_thresh: 0.3,
            matching: Matching::Greedy,
            window: 5,
        }
    }
}

impl DetectionConfig {
    pub fn detect(&self, foreground: &[f64], height: usize, width: usize) -> Result<Vec<BoundingBox>> {
        let mask = threshold_mask(foreground, self.segmentation)?;
        connected_components(&mask, height, width, self.connectivity, self.min_area)
    }

    pub fn score(&self, dets: &[BoundingBox], gts: &[BoundingBox]) -> MatchResult {
        match self.matching {
            Matching::Greedy => match_detections(dets, gts, self.iou_thresh),
            Matching::Optimal => match_detections_optimal(dets, gts, self.iou_thresh),
        }
    }
}

/// Per-frame boxes keyed by frame index.
pub type BoxesByFrame = BTreeMap<usize, Vec<BoundingBox>>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvaluation {
    pub frame_index: usize,
    pub detections: Vec<BoundingBox>,
    pub matches: MatchResult,
    pub windowed: Metrics,
    pub accumulated: Metrics,
}

/// Scores a stream of foregrounds against groundtruth, keeping the match history.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: DetectionConfig,
    groundtruth: BoxesByFrame,
    history: Vec<(usize, MatchResult)>,
}

impl Evaluator {
    pub fn new(config: DetectionConfig, groundtruth: BoxesByFrame) -> Result<Self> {
        config.segmentation.validate()?;
        if !(config.iou_thresh > 0.0 && config.iou_thresh <= 1.0) {
            return Err(invalid("IoU threshold must lie in (0, 1]"));
        }
        if config.window == 0 {
            return Err(invalid("metrics window must be at least 1"));
        }
        Ok(Self { config, groundtruth, history: Vec::new() })
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.config
    }

    pub fn evaluate(&mut self, frame_index: usize, foreground: &[f64], height: usize, width: usize) -> Result<FrameEvaluation> {
        let detections = self.config.detect(foreground, height, width)?;
        Ok(self.evaluate_boxes(frame_index, detections))
    }

    pub fn evaluate_boxes(&mut self, frame_index: usize, detections: Vec<BoundingBox>) -> FrameEvaluation {
        let gts = self.groundtruth.get(&frame_index).map(Vec::as_slice).unwrap_or(&[]);
        let matches = self.config.score(&detections, gts);
        self.history.push((frame_index, matches.clone()));
        let k = self.config.window;
        let windowed = Metrics::from_matches(self.history[self.history.len().saturating_sub(k)..].iter().map(|(_, m)| m));
        let accumulated = Metrics::from_matches(self.history.iter().map(|(_, m)| m));
        FrameEvaluation { frame_index, detections, matches, windowed, accumulated }
    }

    /// Per-frame match results in arrival order.
    pub fn history(&self) -> &[(usize, MatchResult)] {
        &self.history
    }

    /// Accumulated metrics over frames whose index lies in `range`.
    pub fn metrics_in(&self, range: std::ops::Range<usize>) -> Metrics {
        Metrics::from_matches(self.history.iter().filter(|(i, _)| range.contains(i)).map(|(_, m)| m))
    }
}
