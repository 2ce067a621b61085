mod common;

use labelqc::evalharness::kfold_split;
use labelqc::fastloc::{detect_corners, detect_corners_raw, select_patches, PatchSelectionConfig};
use labelqc::fusion::{predict_majority, predict_weighted_majority};
use labelqc::raster::Raster;
use labelqc::rng;
use labelqc::synthlabel::code128::{encode_code128, START_B, STOP};
use labelqc::synthlabel::QualityClass;
use rand::Rng;

fn noise(r: &mut impl Rng, w: u32, h: u32) -> Raster {
    Raster::from_fn(w, h, |_, _| r.random())
}

#[test]
fn fast_matches_segment_test_oracle() {
    let mut r = rng::stream(11);
    for _ in 0..10 {
        let img = noise(&mut r, 64, 64);
        let t = r.random_range(10..80);
        assert_eq!(
            detect_corners_raw(&img, t).unwrap(),
            common::fast_oracle(&img, t)
        );
    }
}

#[test]
fn fast_finds_square_corners() {
    let img = Raster::from_fn(64, 64, |x, y| {
        if (24..40).contains(&x) && (24..40).contains(&y) {
            255
        } else {
            0
        }
    });
    let mut found: Vec<(u32, u32)> = detect_corners(&img, 50)
        .unwrap()
        .iter()
        .map(|c| (c.x, c.y))
        .collect();
    found.sort();
    assert_eq!(found, vec![(24, 24), (24, 39), (39, 24), (39, 39)]);
}

#[test]
fn patch_selection_matches_recount() {
    let mut r = rng::stream(12);
    let cfg = PatchSelectionConfig::default();
    for _ in 0..3 {
        let (w, h) = (r.random_range(300..=900), r.random_range(300..=700));
        let img = noise(&mut r, w, h);
        let set = select_patches(&img, &cfg).unwrap();
        let corners = detect_corners(&img, cfg.threshold).unwrap();
        let expected = common::rank_tiles(&corners, w, h, cfg.patch_w, cfg.patch_h, cfg.n_patches);
        let tiles: Vec<usize> = set.tile_indices.iter().map(|t| t.unwrap()).collect();
        assert_eq!(tiles, expected.iter().map(|e| e.0).collect::<Vec<_>>());
        for (p, &(_, x0, y0)) in set.patches.iter().zip(&expected) {
            assert_eq!(
                *p,
                common::padded_tile(&img, x0, y0, cfg.patch_w, cfg.patch_h)
            );
        }
    }
}

#[test]
fn small_image_gives_padded_copies() {
    let cfg = PatchSelectionConfig::default();
    let img = Raster::from_fn(300, 120, |x, y| ((x + y) % 256) as u8);
    let set = select_patches(&img, &cfg).unwrap();
    let expected = common::padded_tile(&img, 0, 0, 256, 256);
    assert_eq!(set.patches, vec![expected; 3]);
    assert!(set.tile_indices.iter().all(Option::is_none));
}

#[test]
fn voting_matches_oracles() {
    let mut r = rng::stream(13);
    for _ in 0..1000 {
        let n = r.random_range(1..8);
        let preds: Vec<QualityClass> = (0..n)
            .map(|_| QualityClass::from_index(r.random_range(0..5)).unwrap())
            .collect();
        let weights: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..4) as f64 * 0.25 + 0.25)
            .collect();
        assert_eq!(
            predict_majority(&preds).unwrap(),
            common::majority_oracle(&preds)
        );
        assert_eq!(
            predict_weighted_majority(&preds, &weights).unwrap(),
            common::weighted_oracle(&preds, &weights)
        );
    }
}

#[test]
fn code128_checksum_recomputes() {
    let mut r = rng::stream(14);
    for _ in 0..200 {
        let len = r.random_range(1..24);
        let text: String = (0..len)
            .map(|_| char::from(r.random_range(32u8..=126)))
            .collect();
        let code = encode_code128(&text).unwrap();
        let s = code.symbols();
        assert_eq!((s[0], s[s.len() - 1]), (START_B, STOP));
        let data = &s[1..s.len() - 2];
        let sum: u32 = START_B as u32
            + data
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u32 + 1) * v as u32)
                .sum::<u32>();
        assert_eq!(s[s.len() - 2] as u32, sum % 103, "{text:?}");
    }
}

#[test]
fn folds_partition_the_dataset() {
    let mut r = rng::stream(15);
    for _ in 0..20 {
        let n = r.random_range(10..200);
        let k = r.random_range(2..=10.min(n));
        let labels: Vec<QualityClass> = (0..n)
            .map(|_| QualityClass::from_index(r.random_range(0..5)).unwrap())
            .collect();
        let plan = kfold_split(&labels, k, r.random(), None).unwrap();
        common::check_partition(&plan, &labels).unwrap();
    }
}
