//! Rasterization primitives used by the label renderer and the degradations.
//! Every primitive takes a clip box; pixels outside it are never touched.

use super::font::{self, cell_on, ADVANCE, GLYPH_H, GLYPH_W, LINE_PITCH};
use crate::raster::{BoundingBox, Raster};

pub(crate) fn put_clipped(img: &mut Raster, clip: &BoundingBox, x: i64, y: i64, rgb: [u8; 3]) {
    if x >= clip.x as i64
        && y >= clip.y as i64
        && x < clip.right() as i64
        && y < clip.bottom() as i64
    {
        img.put(x as u32, y as u32, rgb);
    }
}

pub(crate) fn fill_rect(img: &mut Raster, clip: &BoundingBox, b: BoundingBox, rgb: [u8; 3]) {
    if let Some(r) = b.intersection(clip) {
        img.fill_box(r, rgb);
    }
}

/// Axis-aligned rectangle outline of thickness `t`.
pub(crate) fn stroke_rect(
    img: &mut Raster,
    clip: &BoundingBox,
    b: BoundingBox,
    t: u32,
    rgb: [u8; 3],
) {
    let t = t.min(b.w / 2).min(b.h / 2).max(1);
    fill_rect(img, clip, BoundingBox::new(b.x, b.y, b.w, t), rgb);
    fill_rect(
        img,
        clip,
        BoundingBox::new(b.x, b.bottom() - t, b.w, t),
        rgb,
    );
    fill_rect(img, clip, BoundingBox::new(b.x, b.y, t, b.h), rgb);
    fill_rect(img, clip, BoundingBox::new(b.right() - t, b.y, t, b.h), rgb);
}

/// Filled disc centered at `(cx, cy)`.
pub(crate) fn disc(img: &mut Raster, clip: &BoundingBox, cx: f64, cy: f64, r: f64, rgb: [u8; 3]) {
    let r2 = r * r;
    let x0 = (cx - r).floor() as i64;
    let x1 = (cx + r).ceil() as i64;
    let y0 = (cy - r).floor() as i64;
    let y1 = (cy + r).ceil() as i64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                put_clipped(img, clip, x, y, rgb);
            }
        }
    }
}

/// Round-capped line of radius `r` from `a` to `b`.
pub(crate) fn thick_line(
    img: &mut Raster,
    clip: &BoundingBox,
    a: (f64, f64),
    b: (f64, f64),
    r: f64,
    rgb: [u8; 3],
) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len / (r * 0.5).max(0.5)).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        disc(
            img,
            clip,
            a.0 + (b.0 - a.0) * t,
            a.1 + (b.1 - a.1) * t,
            r,
            rgb,
        );
    }
}

/// Even-odd scanline fill of a closed polygon, sampled at pixel centers.
pub(crate) fn fill_polygon(
    img: &mut Raster,
    clip: &BoundingBox,
    pts: &[(f64, f64)],
    mut shade: impl FnMut(u32, u32) -> [u8; 3],
) {
    if pts.len() < 3 {
        return;
    }
    let ymin = pts
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
        .floor()
        .max(clip.y as f64) as u32;
    let ymax = pts
        .iter()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min(clip.bottom() as f64) as u32;
    let mut xs = Vec::new();
    for y in ymin..ymax {
        let sy = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            if (y0 <= sy && y1 > sy) || (y1 <= sy && y0 > sy) {
                xs.push(x0 + (sy - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let xa = (pair[0] - 0.5).ceil().max(clip.x as f64) as i64;
            let xb = (pair[1] - 0.5).floor().min(clip.right() as f64 - 1.0) as i64;
            for x in xa..=xb {
                let (ux, uy) = (x as u32, y);
                let c = shade(ux, uy);
                img.put(ux, uy, c);
            }
        }
    }
}

/// Draw `text` with the bitmap font; top-left of the first glyph at `(x, y)`.
pub(crate) fn text(
    img: &mut Raster,
    clip: &BoundingBox,
    x: u32,
    y: u32,
    s: &str,
    scale: u32,
    rgb: [u8; 3],
) {
    for (i, c) in s.chars().enumerate() {
        let rows = font::glyph(c);
        let gx = x + i as u32 * ADVANCE * scale;
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if cell_on(&rows, col, row) {
                    fill_rect(
                        img,
                        clip,
                        BoundingBox::new(gx + col * scale, y + row * scale, scale, scale),
                        rgb,
                    );
                }
            }
        }
    }
}

/// Multi-line text block; returns its bounding box (tight to the glyph cells).
pub(crate) fn text_block(
    img: &mut Raster,
    clip: &BoundingBox,
    x: u32,
    y: u32,
    lines: &[String],
    scale: u32,
    rgb: [u8; 3],
) -> BoundingBox {
    let (w, h) = block_size(lines, scale);
    for (i, line) in lines.iter().enumerate() {
        text(
            img,
            clip,
            x,
            y + i as u32 * LINE_PITCH * scale,
            line,
            scale,
            rgb,
        );
    }
    BoundingBox::new(x, y, w.max(1), h.max(1))
}

pub(crate) fn block_size(lines: &[String], scale: u32) -> (u32, u32) {
    let w = lines
        .iter()
        .map(|l| font::text_size(l, scale).0)
        .max()
        .unwrap_or(0);
    let n = lines.len() as u32;
    let h = if n == 0 {
        0
    } else {
        ((n - 1) * LINE_PITCH + GLYPH_H) * scale
    };
    (w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_fill_covers_square() {
        let mut img = Raster::new(10, 10, 1, 255);
        let clip = img.full_box();
        fill_polygon(
            &mut img,
            &clip,
            &[(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)],
            |_, _| [0, 0, 0],
        );
        let dark = img.data().iter().filter(|&&v| v == 0).count();
        assert_eq!(dark, 16);
        assert_eq!(img.luma(2, 2), 0);
        assert_eq!(img.luma(6, 6), 255);
    }

    #[test]
    fn clip_is_respected() {
        let mut img = Raster::new(20, 20, 1, 255);
        let clip = BoundingBox::new(5, 5, 5, 5);
        disc(&mut img, &clip, 10.0, 10.0, 8.0, [0, 0, 0]);
        for y in 0..20 {
            for x in 0..20 {
                if !clip.contains(x, y) {
                    assert_eq!(img.luma(x, y), 255);
                }
            }
        }
    }

    #[test]
    fn text_block_box_is_tight() {
        let mut img = Raster::new(100, 60, 1, 255);
        let clip = img.full_box();
        let lines = vec!["AB".to_string(), "L".to_string()];
        let b = text_block(&mut img, &clip, 3, 4, &lines, 2, [0, 0, 0]);
        assert_eq!(b, BoundingBox::new(3, 4, 22, 32));
        // 'L' bottom row reaches the last row of the block
        assert_eq!(img.luma(3, b.bottom() - 1), 0);
    }
}
