//! Class-specific image degradations applied to clean label renders.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use super::draw;
use super::layout::{ADDRESS_PAD, PAPER};
use super::{font, text, Annotation, QualityClass, SynthError};
use crate::raster::{self, BoundingBox, Raster};
use crate::rng;

/// Contamination and handwriting never touch pixels further than this from the address box.
pub const ADDRESS_HALO: u32 = 12;

/// Separable Gaussian blur with clamped edges. Weights are quantized to
/// 16-bit fixed point so the result does not depend on the platform `exp`
/// beyond the last bit of each weight.
pub fn gaussian_blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut kernel: Vec<u64> = raw
        .iter()
        .map(|w| (w / total * 65536.0).round() as u64)
        .collect();
    let ksum: u64 = kernel.iter().sum();
    let mid = radius as usize;
    kernel[mid] = (kernel[mid] as i64 + (65536 - ksum as i64)) as u64;

    let (w, h, ch) = (
        img.width() as i64,
        img.height() as i64,
        img.channels() as usize,
    );
    let src = img.data();
    let mut tmp = vec![0u64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0u64;
                for (i, &kw) in kernel.iter().enumerate() {
                    let sx = (x + i as i64 - radius).clamp(0, w - 1);
                    acc += kw * src[((y * w + sx) as usize) * ch + c] as u64;
                }
                tmp[((y * w + x) as usize) * ch + c] = acc;
            }
        }
    }
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0u64;
                for (i, &kw) in kernel.iter().enumerate() {
                    let sy = (y + i as i64 - radius).clamp(0, h - 1);
                    acc += kw * tmp[((sy * w + x) as usize) * ch + c];
                }
                dst[((y * w + x) as usize) * ch + c] = ((acc + (1 << 31)) >> 32).min(255) as u8;
            }
        }
    }
    out
}

/// Average of nine samples spaced `step` pixels apart along `(dx, dy)`.
pub fn motion_blur(img: &Raster, dx: f64, dy: f64, step: f64) -> Raster {
    let offsets: Vec<(i64, i64)> = (-4..=4)
        .map(|k| {
            (
                (k as f64 * step * dx).round() as i64,
                (k as f64 * step * dy).round() as i64,
            )
        })
        .collect();
    let (w, h, ch) = (
        img.width() as i64,
        img.height() as i64,
        img.channels() as usize,
    );
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let sum: u32 = offsets
                    .iter()
                    .map(|&(ox, oy)| {
                        let sx = (x + ox).clamp(0, w - 1);
                        let sy = (y + oy).clamp(0, h - 1);
                        src[((sy * w + sx) as usize) * ch + c] as u32
                    })
                    .sum();
                dst[((y * w + x) as usize) * ch + c] = ((sum + 4) / 9) as u8;
            }
        }
    }
    out
}

/// Box-average downscale by `factor`, then bilinear upscale back to the original size.
pub fn downscale_upscale(img: &Raster, factor: u32) -> Raster {
    let factor = factor.max(1);
    let (w, h, ch) = (img.width(), img.height(), img.channels() as usize);
    let sw = w.div_ceil(factor);
    let sh = h.div_ceil(factor);
    let mut small = Raster::new(sw, sh, img.channels(), 0);
    for sy in 0..sh {
        for sx in 0..sw {
            let x1 = ((sx + 1) * factor).min(w);
            let y1 = ((sy + 1) * factor).min(h);
            for c in 0..ch {
                let mut sum = 0u32;
                let mut n = 0u32;
                for y in sy * factor..y1 {
                    for x in sx * factor..x1 {
                        sum += img.get(x, y, c as u8) as u32;
                        n += 1;
                    }
                }
                small.data_mut()[(sy * sw + sx) as usize * ch + c] = ((sum + n / 2) / n) as u8;
            }
        }
    }
    raster::resize_bilinear(&small, w, h)
}

/// Variance of the 4-neighbour Laplacian over the interior of a gray image.
pub fn laplacian_variance(gray: &Raster) -> f64 {
    let (w, h) = (gray.width(), gray.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut vals = Vec::with_capacity(((w - 2) * (h - 2)) as usize);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = gray.luma(x, y) as f64;
            let l = gray.luma(x - 1, y) as f64
                + gray.luma(x + 1, y) as f64
                + gray.luma(x, y - 1) as f64
                + gray.luma(x, y + 1) as f64
                - 4.0 * c;
            vals.push(l);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_point_in<R: Rng>(rng: &mut R, b: &BoundingBox) -> (f64, f64) {
    (
        b.x as f64 + 0.5 + rng.random_range(0..b.w) as f64,
        b.y as f64 + 0.5 + rng.random_range(0..b.h) as f64,
    )
}

fn contaminate<R: Rng>(img: &mut Raster, ann: &Annotation, rng: &mut R, intensity: f64) {
    const STAINS: [[u8; 3]; 3] = [[110, 72, 38], [5, 5, 5], [40, 40, 165]];
    let addr = ann.address_box;
    let clip = addr.expand(ADDRESS_HALO, img.width(), img.height());
    let count = 1 + rng.random_range(0..=(3.0 * intensity).round() as u32);
    for _ in 0..count {
        let color = STAINS[rng.random_range(0..STAINS.len())];
        if rng.random_bool(0.5) {
            let (cx, cy) = random_point_in(rng, &addr);
            let radius = (6.0 + 18.0 * intensity) * uniform(rng, 0.7, 1.3);
            let phase = uniform(rng, 0.0, std::f64::consts::TAU);
            let lobes = rng.random_range(2..6) as f64;
            let pts: Vec<(f64, f64)> = (0..28)
                .map(|k| {
                    let a = k as f64 / 28.0 * std::f64::consts::TAU;
                    let r = radius * (1.0 + 0.3 * (lobes * a + phase).sin());
                    (cx + r * a.cos(), cy + 0.7 * r * a.sin())
                })
                .collect();
            draw::fill_polygon(img, &clip, &pts, |_, _| color);
            draw::disc(img, &clip, cx, cy, 1.0, color);
        } else {
            let n = rng.random_range(3..=5);
            let pts: Vec<(f64, f64)> = (0..n).map(|_| random_point_in(rng, &addr)).collect();
            let r = 1.5 + 1.5 * intensity;
            for seg in pts.windows(2) {
                draw::thick_line(img, &clip, seg[0], seg[1], r, color);
            }
        }
    }
}

fn clip_box(b: &BoundingBox, x0: u32, x1: u32) -> Option<BoundingBox> {
    let l = b.x.max(x0);
    let r = b.right().min(x1);
    (r > l).then(|| BoundingBox::new(l - x0, b.y, r - l, b.h))
}

/// Horizontal crop that leaves only `keep` of the address width in frame.
fn misframe(
    img: &Raster,
    ann: &Annotation,
    rng: &mut impl Rng,
    keep: f64,
) -> Option<(Raster, Annotation)> {
    let a = ann.address_box;
    let kept = ((a.w as f64 * keep).round() as u32).max(1);
    let right_cut = (a.x + kept, 0, a.x + kept);
    let left_cut = (a.right() - kept, a.right() - kept, img.width());
    let mut options = [right_cut, left_cut];
    if rng.random_bool(0.5) {
        options.swap(0, 1);
    }
    for (_, x0, x1) in options {
        if x1 - x0 < 32 {
            continue;
        }
        let (Some(barcode), Some(address)) =
            (clip_box(&ann.barcode_box, x0, x1), clip_box(&a, x0, x1))
        else {
            continue;
        };
        let out = raster::crop(img, BoundingBox::new(x0, 0, x1 - x0, img.height())).ok()?;
        let mut next = ann.clone();
        next.barcode_box = barcode;
        next.address_box = address;
        return Some((out, next));
    }
    None
}

fn unreadable<R: Rng>(
    img: &Raster,
    ann: &Annotation,
    rng: &mut R,
    intensity: f64,
) -> (Raster, Annotation) {
    let sigma = 1.5 + 2.5 * intensity;
    match rng.random_range(0..4) {
        0 => (gaussian_blur(img, sigma), ann.clone()),
        1 => {
            const DIRS: [(f64, f64); 4] = [
                (1.0, 0.0),
                (0.0, 1.0),
                (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
                (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
            ];
            let (dx, dy) = DIRS[rng.random_range(0..4)];
            (motion_blur(img, dx, dy, 1.0 + 1.5 * intensity), ann.clone())
        }
        2 => (
            downscale_upscale(img, 2 + (2.0 * intensity).round() as u32),
            ann.clone(),
        ),
        _ => misframe(img, ann, rng, 0.5 - 0.3 * intensity)
            .unwrap_or_else(|| (gaussian_blur(img, sigma), ann.clone())),
    }
}

fn glyph_strokes(rows: &[u8; 7]) -> Vec<((u32, u32), (u32, u32))> {
    let on = |c: i32, r: i32| {
        c >= 0 && r >= 0 && c < 5 && r < 7 && font::cell_on(rows, c as u32, r as u32)
    };
    let mut segs = Vec::new();
    for r in 0..7i32 {
        for c in 0..5i32 {
            if !on(c, r) {
                continue;
            }
            segs.push(((c as u32, r as u32), (c as u32, r as u32)));
            for (dc, dr) in [(1, 0), (0, 1), (1, 1), (-1, 1)] {
                let diagonal = dc != 0 && dr != 0;
                if on(c + dc, r + dr) && !(diagonal && (on(c + dc, r) || on(c, r + dr))) {
                    segs.push(((c as u32, r as u32), ((c + dc) as u32, (r + dr) as u32)));
                }
            }
        }
    }
    segs
}

fn handwrite<R: Rng>(img: &mut Raster, ann: &Annotation, rng: &mut R, intensity: f64) {
    const PENS: [[u8; 3]; 3] = [[28, 40, 170], [15, 15, 15], [60, 30, 120]];
    let addr = ann.address_box;
    draw::fill_rect(img, &img.full_box(), addr, PAPER);
    let clip = addr.expand(ADDRESS_HALO, img.width(), img.height());
    let inner_h = addr.h.saturating_sub(2 * ADDRESS_PAD);
    let scale = (inner_h / (3 * font::LINE_PITCH + font::GLYPH_H)).clamp(1, 4) as f64;
    let max_chars =
        ((addr.w.saturating_sub(2 * ADDRESS_PAD)) as f64 / (6.0 * scale)).max(4.0) as usize;
    let lines = text::address(rng, max_chars);
    let pen = PENS[rng.random_range(0..PENS.len())];
    let slant = uniform(rng, -0.15, 0.25);
    let mut wander = 0.0f64;
    for (li, line) in lines.iter().enumerate() {
        let base_y = (addr.y + ADDRESS_PAD) as f64 + li as f64 * font::LINE_PITCH as f64 * scale;
        for (ci, ch) in line.chars().enumerate() {
            let rows = font::glyph(ch);
            wander = (wander + uniform(rng, -1.0, 1.0)).clamp(-2.0, 2.0);
            let angle = uniform(rng, -8.0, 8.0).to_radians();
            let radius =
                (0.45 * scale + 0.35) * uniform(rng, 1.0 - 0.4 * intensity, 1.0 + 0.4 * intensity);
            let (sin, cos) = angle.sin_cos();
            let ox = (addr.x + ADDRESS_PAD) as f64
                + ci as f64 * font::ADVANCE as f64 * scale
                + 2.5 * scale;
            let oy = base_y + wander + 3.5 * scale;
            let place = |c: u32, r: u32| {
                let lx = (c as f64 + 0.5 - 2.5) * scale;
                let ly = (r as f64 + 0.5 - 3.5) * scale;
                let lx = lx - slant * ly;
                (ox + lx * cos - ly * sin, oy + lx * sin + ly * cos)
            };
            for (a, b) in glyph_strokes(&rows) {
                draw::thick_line(img, &clip, place(a.0, a.1), place(b.0, b.1), radius, pen);
            }
        }
    }
}

fn cardboard(seed: u64) -> impl Fn(u32, u32) -> [u8; 3] {
    move |x, y| {
        let n = rng::mix64(seed ^ ((y as u64) << 32 | x as u64));
        let fiber = rng::mix64(seed.wrapping_add(y as u64)).is_multiple_of(7);
        let d = (n % 25) as i32 - 12 - if fiber { 18 } else { 0 };
        let c = |base: i32| (base + d).clamp(0, 255) as u8;
        [c(178), c(140), c(96)]
    }
}

fn damage<R: Rng>(img: &mut Raster, ann: &Annotation, rng: &mut R, intensity: f64) {
    let (w, h) = (img.width(), img.height());
    let target = if rng.random_bool(0.5) {
        ann.address_box
    } else {
        ann.barcode_box
    };
    let clip = img.full_box();
    if rng.random_bool(0.5) {
        // tear: jagged strip from the side nearest to the target box
        let dists = [target.x, w - target.right(), target.y, h - target.bottom()];
        let side = (0..4).min_by_key(|&i| dists[i]).expect("four sides");
        let (extent, length, box_depth) = if side < 2 {
            (w, h, target.w)
        } else {
            (h, w, target.h)
        };
        let (e, l) = (extent as f64, length as f64);
        let depth = (dists[side] as f64 + 0.35 * box_depth as f64 + 0.03 * e)
            .max((0.24 + 0.1 * intensity) * e)
            .min(0.7 * e);
        let n = (length / 16).max(2);
        let mut pts = Vec::with_capacity(n as usize + 3);
        let to_img = |along: f64, d: f64| match side {
            0 => (d, along),
            1 => (e - d, along),
            2 => (along, d),
            _ => (along, e - d),
        };
        pts.push(to_img(0.0, 0.0));
        for k in 0..=n {
            let along = k as f64 / n as f64 * l;
            let d = (depth + uniform(rng, -0.03, 0.03) * e).max(0.21 * e);
            pts.push(to_img(along, d));
        }
        pts.push(to_img(l, 0.0));
        let texture = cardboard(rng.random());
        draw::fill_polygon(img, &clip, &pts, texture);
    } else {
        // another label stuck on top
        let u = uniform(rng, 0.45, 0.75);
        let v = uniform(rng, (0.22 / u).max(0.3), 0.75);
        let rw = ((w as f64 * u).ceil() as u32).min(w);
        let rh = ((h as f64 * v).ceil() as u32).min(h);
        let span = |lo: u32, hi: u32, size: u32, total: u32| {
            let a = (lo + 1).saturating_sub(size);
            let b = (hi - 1).min(total - size);
            (a, b.max(a))
        };
        let (ax, bx) = span(target.x, target.right(), rw, w);
        let (ay, by) = span(target.y, target.bottom(), rh, h);
        let rect = BoundingBox::new(rng.random_range(ax..=bx), rng.random_range(ay..=by), rw, rh);
        draw::fill_rect(img, &clip, rect, [248, 248, 244]);
        draw::stroke_rect(img, &clip, rect, 2, [60, 60, 60]);
        let lines = text::address(rng, ((rw.saturating_sub(16)) / 6).max(1) as usize);
        draw::text_block(img, &rect, rect.x + 8, rect.y + 10, &lines, 1, [30, 30, 30]);
        let bars_y = rect.y + 10 + 40;
        let mut x = rect.x + 8;
        while x + 4 < rect.right().saturating_sub(8) && bars_y + 20 < rect.bottom() {
            let bw = rng.random_range(1..=3);
            draw::fill_rect(
                img,
                &rect,
                BoundingBox::new(x, bars_y, bw, 20),
                [30, 30, 30],
            );
            x += bw + rng.random_range(1..=3);
        }
    }
}

/// Apply the degradation for `class`. `intensity` in `[0, 1]` scales the
/// defect strength. The returned annotation differs from the input only
/// when the degradation re-frames the image.
pub fn apply_degradation(
    img: &Raster,
    ann: &Annotation,
    class: QualityClass,
    seed: u64,
    intensity: f64,
) -> Result<(Raster, Annotation), SynthError> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(SynthError::InvalidIntensity(intensity));
    }
    let mut rng = rng::stream(seed);
    let mut out = img.clone();
    let mut next = ann.clone();
    next.class = class;
    match class {
        QualityClass::Normal => {}
        QualityClass::Contaminated => contaminate(&mut out, ann, &mut rng, intensity),
        QualityClass::Unreadable => {
            let (r, a) = unreadable(img, &next, &mut rng, intensity);
            return Ok((r, a));
        }
        QualityClass::Handwritten => handwrite(&mut out, ann, &mut rng, intensity),
        QualityClass::Damaged => damage(&mut out, ann, &mut rng, intensity),
    }
    Ok((out, next))
}
