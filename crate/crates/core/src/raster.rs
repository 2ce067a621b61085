//! 8-bit raster images: PNM I/O, grayscale conversion, cropping and
//! aspect-preserving letterbox resizing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("malformed PNM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PNM body: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("unsupported PNM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("box {0:?} does not fit inside a {1}x{2} image")]
    OutOfBounds(BoundingBox, u32, u32),
    #[error("invalid raster geometry {width}x{height}x{channels} for {len} samples")]
    InvalidGeometry {
        width: u32,
        height: u32,
        channels: u8,
        len: usize,
    },
}

/// Row-major 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

/// Axis-aligned pixel rectangle: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", from = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl From<[u32; 4]> for BoundingBox {
    fn from(v: [u32; 4]) -> Self {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Box spanning the half-open ranges `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BoundingBox::from_corners(x0, y0, x1, y1))
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection(other).is_some()
    }

    /// Grow by `margin` on every side, clamped to a `width` x `height` image.
    pub fn expand(&self, margin: u32, width: u32, height: u32) -> BoundingBox {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.right() + margin).min(width);
        let y1 = (self.bottom() + margin).min(height);
        BoundingBox::from_corners(x0, y0, x1, y1)
    }
}

impl Raster {
    /// Image filled with `fill` in every channel.
    pub fn new(width: u32, height: u32, channels: u8, fill: u8) -> Self {
        assert!(width >= 1 && height >= 1, "raster dims must be >= 1");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let len = width as usize * height as usize * channels as usize;
        Self {
            width,
            height,
            channels,
            data: vec![fill; len],
        }
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * channels as usize;
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) || data.len() != expected
        {
            return Err(RasterError::InvalidGeometry {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut r = Self::new(width, height, 1, 0);
        for y in 0..height {
            for x in 0..width {
                r.data[(y * width + x) as usize] = f(x, y);
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox::new(0, 0, self.width, self.height)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Sample of channel `c` at `(x, y)`.
    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y) + c as usize]
    }

    /// Gray value at `(x, y)`; on RGB images this is the first channel.
    #[inline]
    pub fn luma(&self, x: u32, y: u32) -> u8 {
        self.data[self.offset(x, y)]
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    /// Write a color; gray images take the BT.601 luma of `rgb`.
    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        if self.channels == 1 {
            self.data[o] = luma_of(rgb);
        } else {
            self.data[o..o + 3].copy_from_slice(&rgb);
        }
    }

    pub fn set_gray(&mut self, x: u32, y: u32, v: u8) {
        let o = self.offset(x, y);
        for c in 0..self.channels as usize {
            self.data[o + c] = v;
        }
    }

    /// Fill every pixel of `b` (clipped to the image) with `rgb`.
    pub fn fill_box(&mut self, b: BoundingBox, rgb: [u8; 3]) {
        let x1 = b.right().min(self.width);
        let y1 = b.bottom().min(self.height);
        for y in b.y..y1 {
            for x in b.x..x1 {
                self.put(x, y, rgb);
            }
        }
    }

    /// Copy `src` into `self` with its top-left at `(x0, y0)`; parts outside are dropped.
    /// Channel counts must agree.
    pub fn paste(&mut self, src: &Raster, x0: u32, y0: u32) {
        assert_eq!(self.channels, src.channels, "paste channel mismatch");
        let ch = self.channels as usize;
        let w = src.width.min(self.width.saturating_sub(x0));
        let h = src.height.min(self.height.saturating_sub(y0));
        for y in 0..h {
            let so = src.offset(0, y);
            let d = self.offset(x0, y0 + y);
            let n = w as usize * ch;
            self.data[d..d + n].copy_from_slice(&src.data[so..so + n]);
        }
    }
}

#[inline]
pub(crate) fn luma_of(rgb: [u8; 3]) -> u8 {
    // round-half-up of 0.299 R + 0.587 G + 0.114 B in exact integer arithmetic
    ((299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32 + 500) / 1000) as u8
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Decode a binary PNM (`P5` gray or `P6` RGB) with maxval 255.
pub fn read_pnm(bytes: &[u8]) -> Result<Raster, RasterError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1u8,
        Some(b"P6") => 3u8,
        _ => {
            return Err(RasterError::MalformedHeader(
                "expected magic P5 or P6".into(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // at least one separator before every header field
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(&b) if is_pnm_space(b) => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == start {
            return Err(RasterError::MalformedHeader(format!(
                "missing separator before field {i}"
            )));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            return Err(RasterError::MalformedHeader(format!(
                "field {i} is not a number"
            )));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| RasterError::MalformedHeader(format!("field {i} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(RasterError::MalformedHeader("zero image dimension".into()));
    }
    if maxval != 255 {
        return Err(RasterError::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(&b) if is_pnm_space(b) => pos += 1,
        _ => {
            return Err(RasterError::MalformedHeader(
                "missing separator after maxval".into(),
            ))
        }
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| RasterError::MalformedHeader("image too large".into()))?;
    let body = &bytes[pos..];
    if body.len() < expected {
        return Err(RasterError::TruncatedBody {
            expected,
            found: body.len(),
        });
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: body[..expected].to_vec(),
    })
}

/// Canonical binary PNM encoding: `P5\n<w> <h>\n255\n` (or `P6`) then the samples.
pub fn write_pnm(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

pub fn to_grayscale(r: &Raster) -> Raster {
    if r.channels == 1 {
        return r.clone();
    }
    let data = r
        .data
        .chunks_exact(3)
        .map(|p| luma_of([p[0], p[1], p[2]]))
        .collect();
    Raster {
        width: r.width,
        height: r.height,
        channels: 1,
        data,
    }
}

pub fn crop(r: &Raster, b: BoundingBox) -> Result<Raster, RasterError> {
    if !b.fits_in(r.width, r.height) {
        return Err(RasterError::OutOfBounds(b, r.width, r.height));
    }
    let ch = r.channels as usize;
    let mut data = Vec::with_capacity(b.area() as usize * ch);
    for y in b.y..b.bottom() {
        let o = r.offset(b.x, y);
        data.extend_from_slice(&r.data[o..o + b.w as usize * ch]);
    }
    Ok(Raster {
        width: b.w,
        height: b.h,
        channels: r.channels,
        data,
    })
}

/// Bilinear resample to exactly `new_w` x `new_h` using pixel-center alignment.
/// Equal dimensions return a bit-identical copy.
pub fn resize_bilinear(r: &Raster, new_w: u32, new_h: u32) -> Raster {
    assert!(new_w >= 1 && new_h >= 1);
    if new_w == r.width && new_h == r.height {
        return r.clone();
    }
    let ch = r.channels as usize;
    let sx = r.width as f64 / new_w as f64;
    let sy = r.height as f64 / new_h as f64;
    let taps = |dst: u32, scale: f64, src_len: u32| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len as usize - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..new_w).map(|x| taps(x, sx, r.width)).collect();
    let mut out = Raster::new(new_w, new_h, r.channels, 0);
    let stride = r.width as usize * ch;
    for y in 0..new_h {
        let (y0, y1, fy) = taps(y, sy, r.height);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..ch {
                let p = |yy: usize, xx: usize| r.data[yy * stride + xx * ch + c] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.data[(y as usize * new_w as usize + x) * ch + c] =
                    (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Placement of scaled content inside a letterbox canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LetterboxGeometry {
    pub content: BoundingBox,
}

pub fn letterbox_geometry(w: u32, h: u32, target_w: u32, target_h: u32) -> LetterboxGeometry {
    let s = (target_w as f64 / w as f64).min(target_h as f64 / h as f64);
    let cw = ((w as f64 * s).round() as u32).clamp(1, target_w);
    let ch = ((h as f64 * s).round() as u32).clamp(1, target_h);
    LetterboxGeometry {
        content: BoundingBox::new((target_w - cw) / 2, (target_h - ch) / 2, cw, ch),
    }
}

/// Scale `r` by `min(target_w / w, target_h / h)` and center it on a
/// `target_w` x `target_h` canvas filled with `pad_value`.
pub fn resize_letterbox(r: &Raster, target_w: u32, target_h: u32, pad_value: u8) -> Raster {
    let geo = letterbox_geometry(r.width, r.height, target_w, target_h);
    let scaled = resize_bilinear(r, geo.content.w, geo.content.h);
    let mut out = Raster::new(target_w, target_h, r.channels, pad_value);
    out.paste(&scaled, geo.content.x, geo.content.y);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_p5() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([0, 255, 0, 255]);
        let r = read_pnm(&bytes).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (2, 2, 1));
        assert_eq!(r.data(), &[0, 255, 0, 255]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            read_pnm(b"P7 1 1 255\n\0"),
            Err(RasterError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_pnm(b"P5 x 1 255\n\0"),
            Err(RasterError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_pnm(b"P5 0 1 255\n"),
            Err(RasterError::MalformedHeader(_))
        ));
        assert_eq!(
            read_pnm(b"P5 1 1 65535\n\0\0"),
            Err(RasterError::UnsupportedMaxval(65535))
        );
        assert_eq!(
            read_pnm(b"P6 1 1 255\n\x01\x02"),
            Err(RasterError::TruncatedBody {
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn header_comments_are_skipped() {
        let r = read_pnm(b"P5\n# made by hand\n1 1\n255\n\x07").unwrap();
        assert_eq!(r.data(), &[7]);
    }

    #[test]
    fn canonical_encoding() {
        let r = Raster::from_raw(1, 1, 1, vec![128]).unwrap();
        assert_eq!(write_pnm(&r), b"P5\n1 1\n255\n\x80".to_vec());
        let rgb = Raster::from_raw(1, 1, 3, vec![1, 2, 3]).unwrap();
        assert_eq!(write_pnm(&rgb), b"P6\n1 1\n255\n\x01\x02\x03".to_vec());
    }

    #[test]
    fn grayscale_weights() {
        let white = Raster::from_raw(1, 1, 3, vec![255, 255, 255]).unwrap();
        assert_eq!(to_grayscale(&white).data(), &[255]);
        let red = Raster::from_raw(1, 1, 3, vec![255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&red).data(), &[76]);
        let g = Raster::from_fn(3, 2, |x, y| (x * 40 + y) as u8);
        assert_eq!(to_grayscale(&g), g);
    }

    #[test]
    fn crop_cases() {
        let r = Raster::from_fn(4, 4, |x, y| (y * 4 + x) as u8);
        assert_eq!(crop(&r, r.full_box()).unwrap(), r);
        let c = crop(&r, BoundingBox::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.data(), &[5, 6, 9, 10]);
        assert!(matches!(
            crop(&r, BoundingBox::new(3, 3, 2, 2)),
            Err(RasterError::OutOfBounds(..))
        ));
        assert!(crop(&r, BoundingBox::new(0, 0, 0, 2)).is_err());
    }

    #[test]
    fn letterbox_landscape() {
        let r = Raster::new(800, 600, 1, 0);
        let out = resize_letterbox(&r, 256, 256, 255);
        assert_eq!((out.width(), out.height()), (256, 256));
        let geo = letterbox_geometry(800, 600, 256, 256);
        assert_eq!(geo.content, BoundingBox::new(0, 32, 256, 192));
        assert_eq!(out.luma(10, 31), 255);
        assert_eq!(out.luma(10, 32), 0);
        assert_eq!(out.luma(10, 223), 0);
        assert_eq!(out.luma(10, 224), 255);
    }

    #[test]
    fn letterbox_portrait() {
        let geo = letterbox_geometry(100, 200, 256, 256);
        assert_eq!(geo.content, BoundingBox::new(64, 0, 128, 256));
        let out = resize_letterbox(&Raster::new(100, 200, 1, 0), 256, 256, 255);
        assert_eq!(out.luma(63, 100), 255);
        assert_eq!(out.luma(64, 100), 0);
        assert_eq!(out.luma(191, 100), 0);
        assert_eq!(out.luma(192, 100), 255);
    }

    #[test]
    fn letterbox_identity_at_unit_scale() {
        let r = Raster::from_fn(256, 256, |x, y| (x ^ y) as u8);
        assert_eq!(resize_letterbox(&r, 256, 256, 255), r);
    }

    #[test]
    fn box_helpers() {
        let a = BoundingBox::new(0, 0, 4, 4);
        let b = BoundingBox::new(2, 2, 4, 4);
        assert_eq!(a.intersection(&b), Some(BoundingBox::new(2, 2, 2, 2)));
        assert!(!a.intersects(&BoundingBox::new(4, 0, 1, 1)));
        assert_eq!(b.expand(3, 7, 7), BoundingBox::new(0, 0, 7, 7));
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[0,0,4,4]");
    }
}
