//! Barcode / address region detection and average-precision scoring.
//!
//! Two detectors share one interface: `Oracle` echoes ground-truth boxes;
//! `Classical` finds the barcode from a horizontal-gradient map and the
//! address from a text-line transition profile.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, BoundingBox, Raster};
use crate::synthlabel::Annotation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoiError {
    #[error("oracle detection requires an annotation")]
    MissingAnnotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Barcode,
    Address,
}

impl RegionKind {
    pub const ALL: [RegionKind; 2] = [RegionKind::Barcode, RegionKind::Address];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub kind: RegionKind,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMethod {
    Oracle,
    #[default]
    Classical,
}

pub fn detect_rois(
    image: &Raster,
    method: DetectorMethod,
    annotation: Option<&Annotation>,
) -> Result<Vec<Detection>, RoiError> {
    match method {
        DetectorMethod::Oracle => {
            let ann = annotation.ok_or(RoiError::MissingAnnotation)?;
            Ok(vec![
                Detection {
                    bbox: ann.barcode_box,
                    kind: RegionKind::Barcode,
                    confidence: 1.0,
                },
                Detection {
                    bbox: ann.address_box,
                    kind: RegionKind::Address,
                    confidence: 1.0,
                },
            ])
        }
        DetectorMethod::Classical => {
            let gray = raster::to_grayscale(image);
            let mut out = Vec::new();
            let barcode = detect_barcode(&gray);
            if let Some(d) = barcode {
                out.push(d);
            }
            if let Some(d) = detect_address(&gray, barcode.map(|d| d.bbox)) {
                out.push(d);
            }
            Ok(out)
        }
    }
}

/// Best detection of `kind`, if any.
pub fn best_of(dets: &[Detection], kind: RegionKind) -> Option<Detection> {
    dets.iter()
        .filter(|d| d.kind == kind)
        .copied()
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
}

// ---------------------------------------------------------------------------
// classical barcode localization

fn box_blur(src: &[i32], w: usize, h: usize, kw: usize, kh: usize) -> Vec<i32> {
    // summed-area table with a zero row/column
    let mut sat = vec![0i64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0i64;
        for x in 0..w {
            row += src[y * w + x] as i64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let (rx, ry) = (kw / 2, kh / 2);
    let mut out = vec![0i32; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(ry);
        let y1 = (y + ry + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(rx);
            let x1 = (x + rx + 1).min(w);
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            let n = ((x1 - x0) * (y1 - y0)) as i64;
            out[y * w + x] = (s / n) as i32;
        }
    }
    out
}

/// Otsu threshold over 8-bit values; returns the level `t` maximizing
/// between-class variance for the split `<= t` / `> t`.
pub fn otsu_level(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &n)| i as f64 * n as f64)
        .sum();
    let (mut w0, mut sum0) = (0f64, 0f64);
    let mut best = (0u8, -1.0f64);
    for (t, &n) in hist.iter().enumerate() {
        w0 += n as f64;
        sum0 += t as f64 * n as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.1 {
            best = (t as u8, between);
        }
    }
    best.0
}

fn morph(src: &[bool], w: usize, h: usize, kw: usize, kh: usize, dilate: bool) -> Vec<bool> {
    let (rx, ry) = (kw / 2, kh / 2);
    // separable: rows then columns
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(rx);
            let x1 = (x + rx + 1).min(w);
            let row = &src[y * w + x0..y * w + x1];
            tmp[y * w + x] = if dilate {
                row.iter().any(|&b| b)
            } else {
                row.iter().all(|&b| b)
            };
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(ry);
        let y1 = (y + ry + 1).min(h);
        for x in 0..w {
            let mut acc = !dilate;
            for yy in y0..y1 {
                let v = tmp[yy * w + x];
                if dilate {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// 8-connected components as `(pixel count, bounding box)`, in scan order of first pixel.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<(usize, BoundingBox)> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0;
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        let bbox = BoundingBox::from_corners(x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1);
        out.push((count, bbox));
    }
    out
}

const MIN_BARCODE_AREA: usize = 400;

fn detect_barcode(gray: &Raster) -> Option<Detection> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w < 3 || h < 3 {
        return None;
    }
    let px = |x: usize, y: usize| gray.luma(x as u32, y as u32) as i32;
    let mut grad = vec![0i32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x - 1, y)
                - px(x - 1, y + 1);
            let gy = px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x, y - 1)
                - px(x + 1, y - 1);
            grad[y * w + x] = (gx.abs() - gy.abs()).max(0);
        }
    }
    let blurred = box_blur(&grad, w, h, 9, 9);
    let peak = *blurred.iter().max()?;
    if peak == 0 {
        return None;
    }
    let quant = |v: i32| ((v as i64 * 255) / peak as i64) as usize;
    let mut hist = [0u64; 256];
    for &v in &blurred {
        hist[quant(v)] += 1;
    }
    let level = otsu_level(&hist) as usize;
    let mask: Vec<bool> = blurred.iter().map(|&v| quant(v) > level).collect();
    let closed = morph(&morph(&mask, w, h, 7, 3, true), w, h, 7, 3, false);
    let (count, bbox) = components(&closed, w, h)
        .into_iter()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.y.cmp(&a.1.y)))?;
    if count < MIN_BARCODE_AREA {
        return None;
    }
    Some(Detection {
        bbox,
        kind: RegionKind::Barcode,
        confidence: count as f64 / bbox.area() as f64,
    })
}

// ---------------------------------------------------------------------------
// classical address localization

const MIN_ROW_TRANSITIONS: u32 = 6;
const MAX_ROW_GAP: usize = 8;
const MAX_COL_GAP: usize = 24;
const MIN_BLOCK_ROWS: usize = 12;

fn detect_address(gray: &Raster, barcode: Option<BoundingBox>) -> Option<Detection> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let exclude = barcode.map(|b| b.expand(14, gray.width(), gray.height()));
    let dark = |x: usize, y: usize| {
        gray.luma(x as u32, y as u32) < 128
            && !exclude.is_some_and(|b| b.contains(x as u32, y as u32))
    };
    let mut transitions = vec![0u32; h];
    for (y, t) in transitions.iter_mut().enumerate() {
        let mut prev = false;
        let mut count = 0;
        let mut dark_n = 0;
        for x in 0..w {
            let d = dark(x, y);
            dark_n += d as usize;
            if d != prev {
                count += 1;
            }
            prev = d;
        }
        // solid bands are not text
        *t = if dark_n * 5 > w * 3 { 0 } else { count };
    }
    // cluster text rows allowing short gaps
    let mut blocks: Vec<(usize, usize, u64)> = Vec::new();
    let mut cur: Option<(usize, usize, u64)> = None;
    for (y, &t) in transitions.iter().enumerate() {
        if t < MIN_ROW_TRANSITIONS {
            continue;
        }
        cur = match cur {
            Some((s, e, sum)) if y - e <= MAX_ROW_GAP => Some((s, y, sum + t as u64)),
            Some(done) => {
                blocks.push(done);
                Some((y, y, t as u64))
            }
            None => Some((y, y, t as u64)),
        };
    }
    blocks.extend(cur);
    let (y0, y1, total) = blocks
        .into_iter()
        .filter(|b| b.1 + 1 - b.0 >= MIN_BLOCK_ROWS)
        .max_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)))?;

    // horizontal extent: densest run of dark columns within the block
    let mut col = vec![0u32; w];
    for y in y0..=y1 {
        for (x, c) in col.iter_mut().enumerate() {
            *c += dark(x, y) as u32;
        }
    }
    let mut best: Option<(usize, usize, u64)> = None;
    let mut run: Option<(usize, usize, u64)> = None;
    for (x, &c) in col.iter().enumerate() {
        if c == 0 {
            continue;
        }
        run = match run {
            Some((s, e, sum)) if x - e <= MAX_COL_GAP => Some((s, x, sum + c as u64)),
            Some(done) => {
                if best.is_none_or(|b| done.2 > b.2) {
                    best = Some(done);
                }
                Some((x, x, c as u64))
            }
            None => Some((x, x, c as u64)),
        };
    }
    if let Some(done) = run {
        if best.is_none_or(|b| done.2 > b.2) {
            best = Some(done);
        }
    }
    let (x0, x1, _) = best?;
    let bbox = BoundingBox::from_corners(x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1)
        .expand(crate::synthlabel::ADDRESS_PAD, gray.width(), gray.height());
    let density = total as f64 / ((x1 + 1 - x0) * (y1 + 1 - y0)) as f64;
    Some(Detection {
        bbox,
        kind: RegionKind::Address,
        confidence: (density * 4.0).clamp(0.0, 1.0),
    })
}

// ---------------------------------------------------------------------------
// metrics

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Ground truth of one image: at most one box per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub barcode: Option<BoundingBox>,
    pub address: Option<BoundingBox>,
}

impl ImageTruth {
    pub fn from_annotation(a: &Annotation) -> Self {
        Self {
            barcode: Some(a.barcode_box),
            address: Some(a.address_box),
        }
    }

    pub fn get(&self, kind: RegionKind) -> Option<BoundingBox> {
        match kind {
            RegionKind::Barcode => self.barcode,
            RegionKind::Address => self.address,
        }
    }
}

/// A detection attributed to the image at `image` in the ground-truth list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedDetection {
    pub image: usize,
    pub detection: Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub kind: RegionKind,
    pub ap: f64,
    pub ground_truths: usize,
    pub detections: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub per_kind: Vec<KindMetrics>,
    /// Mean AP over kinds that have at least one ground-truth box.
    pub map: f64,
}

impl DetectionMetrics {
    pub fn ap(&self, kind: RegionKind) -> Option<f64> {
        self.per_kind.iter().find(|k| k.kind == kind).map(|k| k.ap)
    }
}

/// Area under the all-point interpolated precision/recall curve.
pub fn ap_from_matches(matches: &[bool], n_truth: usize) -> f64 {
    if n_truth == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(matches.len());
    let mut precision = Vec::with_capacity(matches.len());
    let mut tp = 0usize;
    for (i, &m) in matches.iter().enumerate() {
        tp += m as usize;
        recall.push(tp as f64 / n_truth as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Greedy matching in descending confidence (stable for ties); each truth box
/// matches at most once at `iou >= iou_threshold`.
pub fn average_precision(
    detections: &[RankedDetection],
    truth: &[ImageTruth],
    iou_threshold: f64,
) -> DetectionMetrics {
    let mut per_kind = Vec::new();
    for kind in RegionKind::ALL {
        let n_truth = truth.iter().filter(|t| t.get(kind).is_some()).count();
        let mut ranked: Vec<&RankedDetection> = detections
            .iter()
            .filter(|d| d.detection.kind == kind)
            .collect();
        ranked.sort_by(|a, b| b.detection.confidence.total_cmp(&a.detection.confidence));
        let mut used = vec![false; truth.len()];
        let matches: Vec<bool> = ranked
            .iter()
            .map(|d| {
                let Some(gt) = truth.get(d.image).and_then(|t| t.get(kind)) else {
                    return false;
                };
                if used[d.image] || iou(&d.detection.bbox, &gt) < iou_threshold {
                    return false;
                }
                used[d.image] = true;
                true
            })
            .collect();
        per_kind.push(KindMetrics {
            kind,
            ap: ap_from_matches(&matches, n_truth),
            ground_truths: n_truth,
            detections: ranked.len(),
            true_positives: matches.iter().filter(|&&m| m).count(),
        });
    }
    let present: Vec<f64> = per_kind
        .iter()
        .filter(|k| k.ground_truths > 0)
        .map(|k| k.ap)
        .collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    DetectionMetrics { per_kind, map }
}

/// One line of the detections JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub path: String,
    pub kind: RegionKind,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub conf: f64,
}
