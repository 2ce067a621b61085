//! Synthetic shipping-label generator with five quality classes.
//!
//! A label is rendered from a per-image seed (layout, text, barcode), then
//! the class-specific degradation is applied on top. Rendering consumes the
//! random stream identically for every class, so the `Normal` image for a
//! seed is the clean counterpart of every degraded image with that seed.

pub mod code128;
pub mod degrade;
mod draw;
pub mod font;
mod layout;

pub(crate) use layout::ADDRESS_PAD;
mod text;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use code128::{encode_code128, Code128, Code128Error};
pub use degrade::apply_degradation;

use crate::raster::{self, BoundingBox, Raster};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("label layout does not fit in a {width}x{height} image")]
    ConfigTooSmall { width: u32, height: u32 },
    #[error("unknown quality class code {0}")]
    UnknownClass(u8),
    #[error("degradation intensity {0} outside [0, 1]")]
    InvalidIntensity(f64),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure at {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

/// Image condition. Integer codes are part of the manifest format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum QualityClass {
    Normal = 0,
    Contaminated = 1,
    Unreadable = 2,
    Handwritten = 3,
    Damaged = 4,
}

impl QualityClass {
    pub const COUNT: usize = 5;
    pub const ALL: [QualityClass; 5] = [
        QualityClass::Normal,
        QualityClass::Contaminated,
        QualityClass::Unreadable,
        QualityClass::Handwritten,
        QualityClass::Damaged,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityClass::Normal => "normal",
            QualityClass::Contaminated => "contaminated",
            QualityClass::Unreadable => "unreadable",
            QualityClass::Handwritten => "handwritten",
            QualityClass::Damaged => "damaged",
        }
    }
}

impl From<QualityClass> for u8 {
    fn from(c: QualityClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for QualityClass {
    type Error = SynthError;
    fn try_from(v: u8) -> Result<Self, SynthError> {
        Self::from_index(v as usize).ok_or(SynthError::UnknownClass(v))
    }
}

impl std::fmt::Display for QualityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    #[serde(rename = "path")]
    pub image_path: String,
    pub class: QualityClass,
    #[serde(rename = "barcode")]
    pub barcode_box: BoundingBox,
    #[serde(rename = "address")]
    pub address_box: BoundingBox,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRange {
    pub min_w: u32,
    pub min_h: u32,
    pub max_w: u32,
    pub max_h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutOptions {
    pub margin: u32,
    pub max_receiver_scale: u32,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self {
            margin: 12,
            max_receiver_scale: 3,
        }
    }
}

/// Intensity ranges `[lo, hi]` within `[0, 1]`, one per degraded class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationRanges {
    pub contaminated: [f64; 2],
    pub unreadable: [f64; 2],
    pub handwritten: [f64; 2],
    pub damaged: [f64; 2],
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            contaminated: [0.3, 1.0],
            unreadable: [0.3, 1.0],
            handwritten: [0.3, 1.0],
            damaged: [0.3, 1.0],
        }
    }
}

impl DegradationRanges {
    pub fn range(&self, class: QualityClass) -> [f64; 2] {
        match class {
            QualityClass::Normal => [0.0, 0.0],
            QualityClass::Contaminated => self.contaminated,
            QualityClass::Unreadable => self.unreadable,
            QualityClass::Handwritten => self.handwritten,
            QualityClass::Damaged => self.damaged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub per_class_count: usize,
    /// Explicit per-class counts in class-code order; overrides `per_class_count`.
    pub class_counts: Option<[usize; 5]>,
    pub image_size: SizeRange,
    pub master_seed: u64,
    pub layout: LayoutOptions,
    pub degradation: DegradationRanges,
    /// Emit RGB (`P6`) images; gray (`P5`) otherwise.
    pub color: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            per_class_count: 100,
            class_counts: None,
            image_size: SizeRange {
                min_w: 360,
                min_h: 300,
                max_w: 600,
                max_h: 460,
            },
            master_seed: 42,
            layout: LayoutOptions::default(),
            degradation: DegradationRanges::default(),
            color: true,
        }
    }
}

impl GenConfig {
    /// Image counts of the generated set reported for the original study,
    /// in class-code order.
    pub const STUDY_COUNTS: [usize; 5] = [1283, 1054, 904, 988, 1077];

    pub fn counts(&self) -> [usize; 5] {
        self.class_counts.unwrap_or([self.per_class_count; 5])
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let s = &self.image_size;
        if s.min_w < 320 || s.min_h < 240 {
            return Err(SynthError::InvalidConfig(format!(
                "minimum image size {}x{} is below 320x240",
                s.min_w, s.min_h
            )));
        }
        if s.max_w < s.min_w || s.max_h < s.min_h {
            return Err(SynthError::InvalidConfig(
                "image size range is inverted".into(),
            ));
        }
        for class in QualityClass::ALL {
            let [lo, hi] = self.degradation.range(class);
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(SynthError::InvalidConfig(format!(
                    "bad intensity range for {class}"
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Render and degrade one label. Identical arguments give identical bytes.
pub fn generate_label(
    seed: u64,
    config: &GenConfig,
    class: QualityClass,
) -> Result<(Raster, Annotation), SynthError> {
    let mut stream = rng::stream(seed);
    let clean = layout::render(&mut stream, config)?;
    let ann = Annotation {
        image_path: String::new(),
        class: QualityClass::Normal,
        barcode_box: clean.barcode,
        address_box: clean.address,
        seed,
    };
    let [lo, hi] = config.degradation.range(class);
    let intensity = (lo + (hi - lo) * stream.random::<f64>()).clamp(0.0, 1.0);
    let degrade_seed = stream.next_u64();
    apply_degradation(&clean.image, &ann, class, degrade_seed, intensity)
}

/// Rigid pixel permutations used for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

/// Rotations are clockwise.
pub fn augment(img: &Raster, op: Augment) -> Raster {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = match op {
        Augment::Rot90 | Augment::Rot270 => (h, w),
        _ => (w, h),
    };
    let mut out = Raster::new(ow, oh, img.channels(), 0);
    let ch = img.channels() as usize;
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = match op {
                Augment::Rot90 => (y, h - 1 - x),
                Augment::Rot180 => (w - 1 - x, h - 1 - y),
                Augment::Rot270 => (w - 1 - y, x),
                Augment::FlipH => (w - 1 - x, y),
                Augment::FlipV => (x, h - 1 - y),
            };
            let dst = (y as usize * ow as usize + x as usize) * ch;
            out.data_mut()[dst..dst + ch].copy_from_slice(img.pixel(sx, sy));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub version: u32,
    pub config_hash: String,
    pub config: GenConfig,
}

/// Ordered list of generated images plus the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<Annotation>,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("annotation serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SynthError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| SynthError::Manifest("empty".into()))?,
        )
        .map_err(|e| SynthError::Manifest(format!("header: {e}")))?;
        if header.version != MANIFEST_VERSION {
            return Err(SynthError::Manifest(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let entries = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| SynthError::Manifest(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { header, entries })
    }

    pub fn load(dir: &Path) -> Result<Self, SynthError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| SynthError::IoFailure {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn labels(&self) -> Vec<QualityClass> {
        self.entries.iter().map(|e| e.class).collect()
    }
}

/// `(seed, class)` for every image of the dataset, in manifest order
/// (class-major, then index within class).
pub fn dataset_plan(config: &GenConfig) -> Vec<(u64, QualityClass)> {
    let mut plan = Vec::new();
    let mut index = 0u64;
    for (class, &n) in QualityClass::ALL.iter().zip(config.counts().iter()) {
        for _ in 0..n {
            plan.push((rng::derive_seed(config.master_seed, index), *class));
            index += 1;
        }
    }
    plan
}

/// Generate every image of the dataset in memory, in manifest order.
pub fn generate_dataset(config: &GenConfig) -> Result<Vec<(Raster, Annotation)>, SynthError> {
    config.validate()?;
    dataset_plan(config)
        .into_par_iter()
        .enumerate()
        .map(|(i, (seed, class))| {
            let (img, mut ann) = generate_label(seed, config, class)?;
            let ext = if img.channels() == 3 { "ppm" } else { "pgm" };
            ann.image_path = format!("images/{i:06}.{ext}");
            Ok((img, ann))
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Write the dataset under `out_dir` (`images/*.ppm` and `manifest.jsonl`).
pub fn build_dataset(config: &GenConfig, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let items = generate_dataset(config)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    items.par_iter().try_for_each(|(img, ann)| {
        let path = out_dir.join(&ann.image_path);
        fs::write(&path, raster::write_pnm(img)).map_err(io_err(&path))
    })?;
    let manifest = DatasetManifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            config_hash: config.hash(),
            config: config.clone(),
        },
        entries: items.into_iter().map(|(_, a)| a).collect(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(manifest.to_jsonl().as_bytes())
        .map_err(io_err(&path))?;
    Ok(manifest)
}

/// Load the image referenced by a manifest entry.
pub fn load_image(dataset_dir: &Path, ann: &Annotation) -> Result<Raster, SynthError> {
    let path = dataset_dir.join(&ann.image_path);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    raster::read_pnm(&bytes).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
}

/// Boxes lie inside the image and do not overlap each other.
pub fn layout_is_valid(img: &Raster, ann: &Annotation) -> bool {
    let fits = |b: &BoundingBox| b.fits_in(img.width(), img.height());
    fits(&ann.barcode_box)
        && fits(&ann.address_box)
        && !ann.barcode_box.intersects(&ann.address_box)
}
