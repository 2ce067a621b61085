//! FAST-9 corner detection and corner-density patch selection.
//!
//! Patch selection converts the image to gray, detects corners, tiles the
//! image into `patch_w` x `patch_h` cells (padding the right/bottom edge
//! with white up to a tile multiple), counts corners per tile and returns the
//! `n_p` tiles with the highest counts at their original scale. Images
//! smaller than one tile are copied into a white canvas instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, BoundingBox, Raster};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FastError {
    #[error("corner detection needs a single-channel image, got {0} channels")]
    NotGrayscale(u8),
    #[error("invalid patch selection config: {0}")]
    InvalidConfig(String),
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Minimum contiguous arc length.
pub const ARC: usize = 9;
const RADIUS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corner {
    pub x: u32,
    pub y: u32,
    /// Largest threshold at which the pixel still passes the segment test.
    pub score: u8,
    /// Longest run of contiguous circle pixels beyond the detection threshold.
    pub arc: u8,
}

pub type CornerSet = Vec<Corner>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSelectionConfig {
    pub threshold: u8,
    pub patch_w: u32,
    pub patch_h: u32,
    pub n_patches: usize,
}

impl Default for PatchSelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 50,
            patch_w: 256,
            patch_h: 256,
            n_patches: 3,
        }
    }
}

impl PatchSelectionConfig {
    pub fn validate(&self) -> Result<(), FastError> {
        if self.threshold == 0 {
            return Err(FastError::InvalidConfig(
                "threshold must be in [1, 255]".into(),
            ));
        }
        if self.n_patches == 0 {
            return Err(FastError::InvalidConfig(
                "at least one patch is required".into(),
            ));
        }
        if self.patch_w < 16 || self.patch_h < 16 {
            return Err(FastError::InvalidConfig("patch dims must be >= 16".into()));
        }
        Ok(())
    }
}

/// Score of the best arc: for each start position, the minimum signed
/// difference over `ARC` consecutive circle pixels, maximized over starts and
/// over both polarities, minus one. Negative means "never a corner".
fn arc_score(diffs: &[i16; 16]) -> i16 {
    let mut best = i16::MIN;
    for start in 0..16 {
        let mut bright = i16::MAX;
        let mut dark = i16::MAX;
        for k in 0..ARC {
            let d = diffs[(start + k) % 16];
            bright = bright.min(d);
            dark = dark.min(-d);
        }
        best = best.max(bright).max(dark);
    }
    best - 1
}

/// Corner score and arc length at `(x, y)`, or `None` when the pixel fails the
/// segment test at `threshold`. A pixel is a corner at `t` iff some arc of nine
/// contiguous circle pixels is entirely `> center + t` or entirely `< center - t`.
#[inline]
fn score_at(gray: &Raster, x: u32, y: u32, threshold: u8) -> Option<(u8, u8)> {
    let w = gray.width() as usize;
    let data = gray.data();
    let c = data[y as usize * w + x as usize] as i16;
    let t = threshold as i16;
    let mut diffs = [0i16; 16];
    let mut above = 0u32;
    let mut below = 0u32;
    for (i, &(dx, dy)) in CIRCLE.iter().enumerate() {
        let p = data[(y as i64 + dy as i64) as usize * w + (x as i64 + dx as i64) as usize] as i16;
        let d = p - c;
        diffs[i] = d;
        above |= ((d > t) as u32) << i;
        below |= ((d < -t) as u32) << i;
    }
    if !has_arc(above) && !has_arc(below) {
        return None;
    }
    let arc = longest_run(above).max(longest_run(below));
    Some((arc_score(&diffs).clamp(0, 255) as u8, arc))
}

/// Longest circular run of set bits in a 16-bit mask.
fn longest_run(mask: u32) -> u8 {
    if mask & 0xffff == 0xffff {
        return 16;
    }
    let doubled = mask | (mask << 16);
    let (mut best, mut run) = (0u8, 0u8);
    for i in 0..32 {
        run = if doubled >> i & 1 == 1 { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// True when the 16-bit circular mask contains `ARC` consecutive set bits.
#[inline]
fn has_arc(mask: u32) -> bool {
    if mask.count_ones() < ARC as u32 {
        return false;
    }
    let doubled = mask | (mask << 16);
    let mut run = doubled;
    for _ in 1..ARC {
        run &= run >> 1;
    }
    run != 0
}

/// Every pixel passing the segment test, with scores, in raster order.
pub fn detect_corners_raw(gray: &Raster, threshold: u8) -> Result<CornerSet, FastError> {
    if !gray.is_gray() {
        return Err(FastError::NotGrayscale(gray.channels()));
    }
    let (w, h) = (gray.width(), gray.height());
    let mut out = Vec::new();
    if w <= 2 * RADIUS || h <= 2 * RADIUS {
        return Ok(out);
    }
    for y in RADIUS..h - RADIUS {
        for x in RADIUS..w - RADIUS {
            if let Some((score, arc)) = score_at(gray, x, y, threshold) {
                out.push(Corner { x, y, score, arc });
            }
        }
    }
    Ok(out)
}

/// 3x3 non-maximum suppression on `(score, arc)`. A corner survives when no
/// 8-neighbour ranks higher and no earlier (raster order) neighbour ranks equal.
pub fn non_max_suppression(corners: &[Corner], width: u32, height: u32) -> CornerSet {
    let key = |c: &Corner| (c.score as i32) << 8 | c.arc as i32;
    let mut map = vec![-1i32; width as usize * height as usize];
    for c in corners {
        map[(c.y * width + c.x) as usize] = key(c);
    }
    corners
        .iter()
        .filter(|c| {
            let s = key(c);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let n = map[(ny * width as i64 + nx) as usize];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (n == s && earlier) {
                        return false;
                    }
                }
            }
            true
        })
        .copied()
        .collect()
}

/// FAST-9 corners after non-maximum suppression.
pub fn detect_corners(gray: &Raster, threshold: u8) -> Result<CornerSet, FastError> {
    let raw = detect_corners_raw(gray, threshold)?;
    Ok(non_max_suppression(&raw, gray.width(), gray.height()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// Exactly `n_patches` tiles, highest corner count first.
    pub patches: Vec<Raster>,
    /// Corner count of every grid tile in row-major order (empty on the small-image path).
    pub tile_counts: Vec<usize>,
    /// Source rectangle of each returned patch (in padded-image coordinates).
    pub tile_origins: Vec<BoundingBox>,
    /// Grid tile index of each returned patch; `None` on the small-image path.
    pub tile_indices: Vec<Option<usize>>,
}

/// Tile grid dims `(cols, rows)` after padding up to a tile multiple.
pub fn grid_dims(width: u32, height: u32, patch_w: u32, patch_h: u32) -> (u32, u32) {
    (width.div_ceil(patch_w), height.div_ceil(patch_h))
}

/// Pick the `n_patches` tiles with most corners; ties go to the lower tile index.
pub fn select_patches(
    image: &Raster,
    config: &PatchSelectionConfig,
) -> Result<PatchSet, FastError> {
    config.validate()?;
    let gray = raster::to_grayscale(image);
    let (pw, ph) = (config.patch_w, config.patch_h);
    if gray.width() < pw || gray.height() < ph {
        let mut canvas = Raster::new(pw, ph, 1, 255);
        canvas.paste(&gray, 0, 0);
        let origin = BoundingBox::new(0, 0, pw, ph);
        return Ok(PatchSet {
            patches: vec![canvas; config.n_patches],
            tile_counts: Vec::new(),
            tile_origins: vec![origin; config.n_patches],
            tile_indices: vec![None; config.n_patches],
        });
    }
    let corners = detect_corners(&gray, config.threshold)?;
    let (cols, rows) = grid_dims(gray.width(), gray.height(), pw, ph);
    let mut counts = vec![0usize; (cols * rows) as usize];
    for c in &corners {
        counts[((c.y / ph) * cols + c.x / pw) as usize] += 1;
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut padded = Raster::new(cols * pw, rows * ph, 1, 255);
    padded.paste(&gray, 0, 0);
    let mut set = PatchSet {
        patches: Vec::with_capacity(config.n_patches),
        tile_counts: counts,
        tile_origins: Vec::with_capacity(config.n_patches),
        tile_indices: Vec::with_capacity(config.n_patches),
    };
    // fewer tiles than requested: cycle through the ranking again
    for &tile in order.iter().cycle().take(config.n_patches) {
        let origin = BoundingBox::new((tile as u32 % cols) * pw, (tile as u32 / cols) * ph, pw, ph);
        set.patches
            .push(raster::crop(&padded, origin).expect("tile inside padded image"));
        set.tile_origins.push(origin);
        set.tile_indices.push(Some(tile));
    }
    Ok(set)
}
