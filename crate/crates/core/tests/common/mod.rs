//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use labelqc::evalharness::FoldPlan;
use labelqc::fastloc::Corner;
use labelqc::raster::Raster;
use labelqc::synthlabel::QualityClass;

const RING: [(i32, i32); 16] = [
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

fn px(img: &Raster, x: i64, y: i64) -> i32 {
    img.data()[(y * img.width() as i64 + x) as usize] as i32
}

/// Plain segment test: nine consecutive ring pixels all brighter than
/// `c + t` or all darker than `c - t`.
pub fn segment_test(img: &Raster, x: u32, y: u32, t: i32) -> bool {
    let c = px(img, x as i64, y as i64);
    let ring: Vec<i32> = RING
        .iter()
        .map(|&(dx, dy)| px(img, x as i64 + dx as i64, y as i64 + dy as i64))
        .collect();
    (0..16).any(|s| {
        (0..9).all(|k| ring[(s + k) % 16] > c + t) || (0..9).all(|k| ring[(s + k) % 16] < c - t)
    })
}

/// Longest stretch of contiguous ring pixels all brighter or all darker than
/// the center by more than `t`.
pub fn longest_arc(img: &Raster, x: u32, y: u32, t: i32) -> u8 {
    let c = px(img, x as i64, y as i64);
    let ring: Vec<i32> = RING
        .iter()
        .map(|&(dx, dy)| px(img, x as i64 + dx as i64, y as i64 + dy as i64))
        .collect();
    let mut best = 0;
    for start in 0..16 {
        for pred in [
            |p: i32, c: i32, t: i32| p > c + t,
            |p: i32, c: i32, t: i32| p < c - t,
        ] {
            let len = (0..16)
                .take_while(|&k| pred(ring[(start + k) % 16], c, t))
                .count();
            best = best.max(len);
        }
    }
    best as u8
}

/// Every pixel passing at `threshold`, scored by the largest passing
/// threshold (found by bisection, the test being monotone in `t`).
pub fn fast_oracle(img: &Raster, threshold: u8) -> Vec<Corner> {
    let mut out = Vec::new();
    if img.width() < 7 || img.height() < 7 {
        return out;
    }
    for y in 3..img.height() - 3 {
        for x in 3..img.width() - 3 {
            if !segment_test(img, x, y, threshold as i32) {
                continue;
            }
            let (mut lo, mut hi) = (threshold as i32, 255);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if segment_test(img, x, y, mid) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            out.push(Corner {
                x,
                y,
                score: lo as u8,
                arc: longest_arc(img, x, y, threshold as i32),
            });
        }
    }
    out
}

/// Tiles ranked by a per-tile recount of `corners`: most corners first,
/// then lower row-major index. Returns `(tile index, x0, y0)` for the top `n`,
/// wrapping around the ranking when the grid has fewer tiles than `n`.
pub fn rank_tiles(
    corners: &[Corner],
    width: u32,
    height: u32,
    tw: u32,
    th: u32,
    n: usize,
) -> Vec<(usize, u32, u32)> {
    let cols = width.div_ceil(tw);
    let rows = height.div_ceil(th);
    let mut scored = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c * tw, r * th);
            let count = corners
                .iter()
                .filter(|k| k.x >= x0 && k.x < x0 + tw && k.y >= y0 && k.y < y0 + th)
                .count();
            scored.push(((r * cols + c) as usize, count, x0, y0));
        }
    }
    scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    (0..n)
        .map(|i| scored[i % scored.len()])
        .map(|(t, _, x, y)| (t, x, y))
        .collect()
}

/// Tile of a gray image padded with white beyond its edges.
pub fn padded_tile(img: &Raster, x0: u32, y0: u32, tw: u32, th: u32) -> Raster {
    Raster::from_fn(tw, th, |x, y| {
        let (sx, sy) = (x0 + x, y0 + y);
        if sx < img.width() && sy < img.height() {
            img.data()[(sy * img.width() + sx) as usize]
        } else {
            255
        }
    })
}

pub fn majority_oracle(preds: &[QualityClass]) -> QualityClass {
    let mut counts = [0usize; 5];
    for p in preds {
        counts[p.index()] += 1;
    }
    let best = *counts.iter().max().unwrap();
    QualityClass::from_index(counts.iter().position(|&c| c == best).unwrap()).unwrap()
}

pub fn weighted_oracle(preds: &[QualityClass], weights: &[f64]) -> QualityClass {
    let mut totals = [0f64; 5];
    for (p, w) in preds.iter().zip(weights) {
        totals[p.index()] += w;
    }
    let mut best = 0;
    for c in 1..5 {
        if totals[c] > totals[best] {
            best = c;
        }
    }
    QualityClass::from_index(best).unwrap()
}

/// Checks that the folds partition `0..labels.len()` and are stratified:
/// every class is spread over the folds with sizes differing by at most one.
pub fn check_partition(plan: &FoldPlan, labels: &[QualityClass]) -> Result<(), String> {
    let mut seen = vec![0usize; labels.len()];
    for f in &plan.folds {
        for &i in f {
            seen[i] += 1;
        }
    }
    for &i in &plan.train_only {
        seen[i] += 1;
    }
    if let Some(i) = seen.iter().position(|&s| s != 1) {
        return Err(format!("index {i} appears {} times", seen[i]));
    }
    for c in QualityClass::ALL {
        let per_fold: Vec<usize> = plan
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
            .collect();
        let (lo, hi) = (
            per_fold.iter().min().unwrap(),
            per_fold.iter().max().unwrap(),
        );
        if hi - lo > 1 {
            return Err(format!("class {c:?} spread {per_fold:?}"));
        }
    }
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
        return Err(format!("fold sizes {sizes:?}"));
    }
    for f in 0..plan.k {
        let train = plan.train(f);
        if train.len() + plan.folds[f].len() != labels.len()
            || train.iter().any(|i| plan.folds[f].contains(i))
        {
            return Err(format!("train split of fold {f} is not the complement"));
        }
    }
    Ok(())
}
