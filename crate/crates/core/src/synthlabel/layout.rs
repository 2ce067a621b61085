//! Parametric shipping-label layouts: carrier band, sender block, receiver
//! block and a Code 128 strip, stacked vertically in one of four orders.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::code128::{encode_code128, Code128};
use super::draw;
use super::{text, GenConfig, SynthError};
use crate::raster::{BoundingBox, Raster};

pub(crate) const INK: [u8; 3] = [22, 22, 26];
pub(crate) const PAPER: [u8; 3] = [255, 255, 255];
const BAND_COLORS: &[[u8; 3]] = &[
    [90, 50, 20],
    [200, 20, 30],
    [20, 40, 140],
    [30, 30, 30],
    [0, 110, 60],
];

const BAND_H: u32 = 26;
const RULE_H: u32 = 2;
const RECEIVER_HEADER: u32 = 12;
/// Padding between the receiver glyphs and the annotated address box.
pub(crate) const ADDRESS_PAD: u32 = 4;
const FRAME_PAD: u32 = 7;
const MIN_GAP: u32 = 6;
const QUIET_MODULES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Band,
    Sender,
    Rule,
    Receiver,
    Barcode,
}

const LAYOUTS: [&[Block]; 4] = [
    &[
        Block::Band,
        Block::Sender,
        Block::Rule,
        Block::Receiver,
        Block::Barcode,
    ],
    &[
        Block::Band,
        Block::Barcode,
        Block::Receiver,
        Block::Rule,
        Block::Sender,
    ],
    &[
        Block::Band,
        Block::Sender,
        Block::Receiver,
        Block::Rule,
        Block::Barcode,
    ],
    &[Block::Barcode, Block::Sender, Block::Receiver, Block::Band],
];

pub(crate) struct Rendered {
    pub image: Raster,
    pub barcode: BoundingBox,
    pub address: BoundingBox,
}

struct Plan {
    receiver_scale: u32,
    receiver_lines: Vec<String>,
    bar_h: u32,
    module_w: u32,
    code: Code128,
}

fn receiver_height(lines: &[String], scale: u32) -> u32 {
    RECEIVER_HEADER + 2 * FRAME_PAD + draw::block_size(lines, scale).1
}

fn block_height(b: Block, plan: &Plan, sender: &[String]) -> u32 {
    match b {
        Block::Band => BAND_H,
        Block::Sender => draw::block_size(sender, 1).1,
        Block::Rule => RULE_H,
        Block::Receiver => receiver_height(&plan.receiver_lines, plan.receiver_scale),
        Block::Barcode => plan.bar_h + 10,
    }
}

pub(crate) fn render<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Result<Rendered, SynthError> {
    let size = &cfg.image_size;
    let width = rng.random_range(size.min_w..=size.max_w);
    let height = rng.random_range(size.min_h..=size.max_h);
    let margin = cfg.layout.margin;
    if width <= 2 * margin + 40 || height <= 2 * margin + 40 {
        return Err(SynthError::ConfigTooSmall { width, height });
    }
    let inner_w = width - 2 * margin;
    let avail_h = height - 2 * margin;
    let blocks = LAYOUTS[rng.random_range(0..LAYOUTS.len())];

    let carrier = text::carrier(rng);
    let band_color = *BAND_COLORS.choose(rng).expect("nonempty");
    let sender = text::sender(rng, (inner_w / 6).min(28) as usize);
    let receiver_full = text::address(rng, 24);
    let tracking_len = rng.random_range(10..=14);
    let tracking = text::tracking(rng, tracking_len);
    let code = encode_code128(&tracking).expect("tracking numbers are subset B");
    let span = code.total_modules() + 2 * QUIET_MODULES;
    let max_mw = (inner_w / span).min(3);
    if max_mw == 0 {
        return Err(SynthError::ConfigTooSmall { width, height });
    }
    let module_w = (max_mw - rng.random_range(0..=1u32)).max(1);
    let bar_base = (height / 6 + rng.random_range(0..20)).clamp(30, 80);

    // largest receiver font that fits, then shrink bars if still too tall
    let mut chosen = None;
    'fit: for scale in (1..=cfg.layout.max_receiver_scale.max(1)).rev() {
        let max_chars = (inner_w / (6 * scale)) as usize;
        if max_chars < 6 {
            continue;
        }
        let lines: Vec<String> = receiver_full
            .iter()
            .map(|l| {
                l.chars()
                    .take(max_chars)
                    .collect::<String>()
                    .trim_end()
                    .to_string()
            })
            .collect();
        for bar_h in [bar_base, 30] {
            let plan = Plan {
                receiver_scale: scale,
                receiver_lines: lines.clone(),
                bar_h,
                module_w,
                code: code.clone(),
            };
            let total: u32 = blocks
                .iter()
                .map(|&b| block_height(b, &plan, &sender))
                .sum::<u32>()
                + MIN_GAP * (blocks.len() as u32 - 1);
            if total <= avail_h {
                chosen = Some((plan, avail_h - total));
                break 'fit;
            }
        }
    }
    let (plan, slack) = chosen.ok_or(SynthError::ConfigTooSmall { width, height })?;

    // spread the slack over top, gaps and bottom
    let slots = blocks.len() + 1;
    let weights: Vec<u32> = (0..slots).map(|_| rng.random_range(1..=8)).collect();
    let wsum: u32 = weights.iter().sum();
    let mut extra: Vec<u32> = weights.iter().map(|w| slack * w / wsum).collect();
    let used: u32 = extra.iter().sum();
    extra[slots - 1] += slack - used;

    let channels = if cfg.color { 3 } else { 1 };
    let mut img = Raster::new(width, height, channels, 255);
    let clip = img.full_box();
    let mut y = margin + extra[0];
    let mut barcode_box = None;
    let mut address_box = None;
    for (i, &b) in blocks.iter().enumerate() {
        let h = block_height(b, &plan, &sender);
        match b {
            Block::Band => {
                draw::fill_rect(
                    &mut img,
                    &clip,
                    BoundingBox::new(margin, y, inner_w, BAND_H),
                    band_color,
                );
                draw::text(&mut img, &clip, margin + 8, y + 6, carrier, 2, PAPER);
            }
            Block::Rule => {
                draw::fill_rect(
                    &mut img,
                    &clip,
                    BoundingBox::new(margin, y, inner_w, RULE_H),
                    INK,
                );
            }
            Block::Sender => {
                let (w, _) = draw::block_size(&sender, 1);
                let x = margin + rng.random_range(0..=(inner_w - w.min(inner_w)).min(24));
                draw::text_block(&mut img, &clip, x, y, &sender, 1, INK);
            }
            Block::Receiver => {
                let (w, th) = draw::block_size(&plan.receiver_lines, plan.receiver_scale);
                let free = inner_w.saturating_sub(w + 2 * FRAME_PAD);
                let x = margin + FRAME_PAD + rng.random_range(0..=free);
                draw::text(&mut img, &clip, x - FRAME_PAD, y, "SHIP TO:", 1, INK);
                let ty = y + RECEIVER_HEADER + FRAME_PAD;
                let tb = draw::text_block(
                    &mut img,
                    &clip,
                    x,
                    ty,
                    &plan.receiver_lines,
                    plan.receiver_scale,
                    INK,
                );
                debug_assert_eq!(tb.h, th);
                if blocks == LAYOUTS[2] {
                    let frame = tb.expand(FRAME_PAD - 1, width, height);
                    draw::stroke_rect(&mut img, &clip, frame, 2, INK);
                }
                address_box = Some(tb.expand(ADDRESS_PAD, width, height));
            }
            Block::Barcode => {
                let widths = plan.code.module_widths();
                let bars_w = plan.code.total_modules() * plan.module_w;
                let free = inner_w - span * plan.module_w;
                let x0 = margin + rng.random_range(0..=free) + QUIET_MODULES * plan.module_w;
                let mut x = x0;
                for (k, &mw) in widths.iter().enumerate() {
                    let w = mw as u32 * plan.module_w;
                    if k % 2 == 0 {
                        draw::fill_rect(
                            &mut img,
                            &clip,
                            BoundingBox::new(x, y, w, plan.bar_h),
                            INK,
                        );
                    }
                    x += w;
                }
                let (tw, _) = super::font::text_size(&tracking, 1);
                let tx = x0 + bars_w.saturating_sub(tw) / 2;
                draw::text(&mut img, &clip, tx, y + plan.bar_h + 3, &tracking, 1, INK);
                barcode_box = Some(BoundingBox::new(x0, y, bars_w, plan.bar_h));
            }
        }
        y += h + MIN_GAP + extra[i + 1];
    }
    Ok(Rendered {
        image: img,
        barcode: barcode_box.expect("every layout has a barcode"),
        address: address_box.expect("every layout has a receiver"),
    })
}
