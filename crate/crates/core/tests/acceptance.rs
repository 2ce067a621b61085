//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; numeric arguments select a subset, e.g.
//! `cargo test --release --test acceptance -- 1 3 7`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use labelqc::evalharness::{evaluate_classifier, kfold_split, summarize_runs};
use labelqc::fastloc::{detect_corners, detect_corners_raw, select_patches, PatchSelectionConfig};
use labelqc::fusion::{predict_majority, predict_weighted_majority};
use labelqc::nnet::{gradient_check, softmax, Branch, ExtractorParams, Fault, Sample, Tensor};
use labelqc::pipeline::{self, EvalReport, Model, Paths, PipelineConfig};
use labelqc::raster::Raster;
use labelqc::rng;
use labelqc::roidet::{
    self, average_precision, DetectorMethod, ImageTruth, RankedDetection, RegionKind,
};
use labelqc::synthlabel::code128::{encode_code128, START_B};
use labelqc::synthlabel::{self, GenConfig, QualityClass};
use rand::Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_fast_oracle() -> Check {
    let mut r = rng::stream(1001);
    let start = Instant::now();
    let mut total = 0;
    for i in 0..100 {
        let img = Raster::from_fn(64, 64, |_, _| r.random());
        let t = r.random_range(5..60);
        let got = detect_corners_raw(&img, t).map_err(|e| e.to_string())?;
        let want = common::fast_oracle(&img, t);
        if got != want {
            return Err(format!(
                "raster {i} (t = {t}): {} corners vs oracle {}",
                got.len(),
                want.len()
            ));
        }
        total += got.len();
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("100 rasters, {total} corners identical to the segment-test oracle in {secs:.2} s (limit 10 s)"))
}

fn c2_patch_oracle() -> Check {
    let mut r = rng::stream(1002);
    let cfg = PatchSelectionConfig::default();
    for i in 0..100 {
        let (w, h) = (r.random_range(300..=900), r.random_range(300..=700));
        let img = Raster::from_fn(w, h, |_, _| r.random());
        let set = select_patches(&img, &cfg).map_err(|e| e.to_string())?;
        let corners = detect_corners(&img, cfg.threshold).map_err(|e| e.to_string())?;
        let want = common::rank_tiles(&corners, w, h, cfg.patch_w, cfg.patch_h, cfg.n_patches);
        let tiles: Vec<Option<usize>> = want.iter().map(|t| Some(t.0)).collect();
        if set.tile_indices != tiles {
            return Err(format!(
                "image {i} ({w}x{h}): tiles {:?} vs oracle {tiles:?}",
                set.tile_indices
            ));
        }
        for (p, &(_, x0, y0)) in set.patches.iter().zip(&want) {
            if *p != common::padded_tile(&img, x0, y0, cfg.patch_w, cfg.patch_h) {
                return Err(format!(
                    "image {i}: patch at ({x0}, {y0}) differs from the source tile"
                ));
            }
        }
    }
    let mut small = 0;
    for _ in 0..20 {
        let (w, h) = if r.random_bool(0.5) {
            (r.random_range(20..256), r.random_range(20..700))
        } else {
            (r.random_range(20..900), r.random_range(20..256))
        };
        let img = Raster::from_fn(w, h, |_, _| r.random());
        let set = select_patches(&img, &cfg).map_err(|e| e.to_string())?;
        let want = common::padded_tile(&img, 0, 0, cfg.patch_w, cfg.patch_h);
        if set.patches != vec![want; cfg.n_patches] {
            return Err(format!(
                "small {w}x{h} image is not a replicated padded copy"
            ));
        }
        small += 1;
    }
    Ok(format!(
        "100 tiled images match the count-and-sort oracle; {small} small images give padded copies"
    ))
}

fn gradcheck_fixture() -> (ExtractorParams, Sample) {
    let side = 16;
    let mut r = rng::stream(1003);
    let params = ExtractorParams::init(Branch::Global, 8, side, &mut r);
    let data = (0..side * side)
        .map(|_| r.random_range(0.0..1.0f32))
        .collect();
    let sample = Sample {
        input: Tensor::from_vec(vec![1, side, side], data).expect("fixture shape"),
        label: 3,
    };
    (params, sample)
}

fn c3_gradients() -> Check {
    let (params, sample) = gradcheck_fixture();
    let clean = gradient_check(&params, &sample, 200, 7, None).map_err(|e| e.to_string())?;
    let faulty = gradient_check(&params, &sample, 200, 7, Some(Fault::ZeroConvGradient))
        .map_err(|e| e.to_string())?;
    ensure(
        clean < 1e-4 && faulty > 0.5,
        format!("max relative error {clean:.2e} (< 1e-4), fault-injected {faulty:.3} (> 0.5)"),
    )
}

fn c4_numerics(desk: &Result<Desk, String>) -> Check {
    let mut r = rng::stream(1004);
    let mut worst = 0f64;
    for _ in 0..10_000 {
        let z: Vec<f64> = (0..5).map(|_| r.random_range(-100.0..100.0)).collect();
        worst = worst.max((softmax(&z).iter().sum::<f64>() - 1.0).abs());
    }
    if worst >= 1e-9 {
        return Err(format!("softmax sum deviates by {worst:.2e}"));
    }
    let desk = desk
        .as_ref()
        .map_err(|e| format!("softmax ok ({worst:.1e}); desk training failed: {e}"))?;
    for fold in 0..desk.report.plan.k {
        let model = Model::load(&desk.paths.weights_dir.join(format!("fold{fold}")))
            .map_err(|e| e.to_string())?;
        let finite = Branch::ALL.iter().all(|&b| model.extractor(b).all_finite())
            && model.fusion.tensors().iter().all(|t| t.all_finite());
        if !finite {
            return Err(format!("fold {fold} weights contain non-finite values"));
        }
    }
    Ok(format!(
        "max |sum softmax - 1| = {worst:.1e} over 10^4 vectors; every training epoch of {} folds x {} branches stayed finite",
        desk.report.folds.len(),
        Branch::ALL.len()
    ))
}

fn c5_voting() -> Check {
    let mut r = rng::stream(1005);
    let class =
        |r: &mut rng::Stream| QualityClass::from_index(r.random_range(0..5)).expect("index < 5");
    for i in 0..1000 {
        let n = r.random_range(1..10);
        let preds: Vec<QualityClass> = (0..n).map(|_| class(&mut r)).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(1..5) as f64 / 4.0).collect();
        let equal = vec![r.random_range(0.1..3.0); n];
        let major = predict_majority(&preds).map_err(|e| e.to_string())?;
        let weighted = predict_weighted_majority(&preds, &weights).map_err(|e| e.to_string())?;
        let reduced = predict_weighted_majority(&preds, &equal).map_err(|e| e.to_string())?;
        if major != common::majority_oracle(&preds) {
            return Err(format!("case {i}: majority {major:?} for {preds:?}"));
        }
        if weighted != common::weighted_oracle(&preds, &weights) {
            return Err(format!(
                "case {i}: weighted {weighted:?} for {preds:?} / {weights:?}"
            ));
        }
        if reduced != major {
            return Err(format!(
                "case {i}: equal weights give {reduced:?}, majority {major:?}"
            ));
        }
    }
    Ok("1000 cases each match the brute-force oracles; equal weights reduce to majority".into())
}

fn c6_code128() -> Check {
    let mut r = rng::stream(1006);
    for _ in 0..1000 {
        let len = r.random_range(1..30);
        let text: String = (0..len)
            .map(|_| char::from(r.random_range(32u8..=126)))
            .collect();
        let symbols = encode_code128(&text)
            .map_err(|e| e.to_string())?
            .symbols()
            .to_vec();
        let data = &symbols[1..symbols.len() - 2];
        let sum = START_B as u64
            + data
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u64 + 1) * v as u64)
                .sum::<u64>();
        if symbols[symbols.len() - 2] as u64 != sum % 103 {
            return Err(format!(
                "{text:?}: checksum symbol {} != {}",
                symbols[symbols.len() - 2],
                sum % 103
            ));
        }
    }
    Ok("1000 random subset-B strings: recomputed checksum equals the emitted symbol".into())
}

fn c7_detection(desk: &Result<Desk, String>) -> Check {
    let desk = desk
        .as_ref()
        .map_err(|e| format!("no generated set: {e}"))?;
    let cfg = PipelineConfig {
        paths: desk.paths.clone(),
        ..PipelineConfig::default()
    };
    let (_, oracle) =
        pipeline::run_detect(&cfg, DetectorMethod::Oracle).map_err(|e| e.to_string())?;

    let normal = GenConfig {
        class_counts: Some([100, 0, 0, 0, 0]),
        master_seed: 42,
        ..GenConfig::default()
    };
    let items = synthlabel::generate_dataset(&normal).map_err(|e| e.to_string())?;
    let mut ranked = Vec::new();
    let mut truth = Vec::new();
    for (i, (img, ann)) in items.iter().enumerate() {
        for d in
            roidet::detect_rois(img, DetectorMethod::Classical, None).map_err(|e| e.to_string())?
        {
            ranked.push(RankedDetection {
                image: i,
                detection: d,
            });
        }
        truth.push(ImageTruth::from_annotation(ann));
    }
    let classical = average_precision(&ranked, &truth, 0.5);
    let barcode = classical.ap(RegionKind::Barcode).unwrap_or(0.0);
    ensure(
        oracle.metrics.map == 1.0 && barcode >= 0.80,
        format!(
            "Oracle mAP {:.3} on {} generated images; Classical barcode AP@0.5 {barcode:.3} (>= 0.80) on {} Normal images",
            oracle.metrics.map,
            desk.report.images,
            items.len()
        ),
    )
}

struct Desk {
    paths: Paths,
    report: EvalReport,
    elapsed: Duration,
}

fn run_desk(root: &Path) -> Result<Desk, String> {
    let cfg = PipelineConfig {
        paths: Paths {
            dataset_dir: root.join("data"),
            weights_dir: root.join("weights"),
            reports_dir: root.join("reports"),
        },
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    synthlabel::build_dataset(&cfg.generator, &cfg.paths.dataset_dir).map_err(|e| e.to_string())?;
    let report = pipeline::run_eval(&cfg).map_err(|e| e.to_string())?;
    Ok(Desk {
        paths: cfg.paths,
        report,
        elapsed: start.elapsed(),
    })
}

fn c8_desk(desk: &Result<Desk, String>) -> Check {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    let stacked = &desk.report.stacked().summary;
    let global = &desk.report.global_only().summary;
    let secs = desk.elapsed.as_secs_f64();
    ensure(
        stacked.mean >= 0.80 && stacked.mean >= global.mean - 0.02 && secs < 1800.0,
        format!(
            "{} images, {}-fold: stacked {} (>= 80%), global-only {}, gap {:+.2} pts (>= -2), {secs:.0} s (< 1800 s)",
            desk.report.images,
            desk.report.plan.k,
            stacked.percent(),
            global.percent(),
            (stacked.mean - global.mean) * 100.0
        ),
    )
}

fn tree_hashes(dir: &Path) -> BTreeMap<PathBuf, [u8; 32]> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else {
            continue;
        };
        for entry in entries.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.insert(
                    p.strip_prefix(dir).expect("under root").to_path_buf(),
                    Sha256::digest(bytes).into(),
                );
            }
        }
    }
    out
}

fn c9_determinism(first: &Result<Desk, String>, root: &Path) -> Check {
    let first = first
        .as_ref()
        .map_err(|e| format!("first run failed: {e}"))?;
    let second = run_desk(root)?;
    let mut compared = 0;
    for (what, a, b) in [
        (
            "dataset",
            &first.paths.dataset_dir,
            &second.paths.dataset_dir,
        ),
        (
            "weights",
            &first.paths.weights_dir,
            &second.paths.weights_dir,
        ),
        (
            "reports",
            &first.paths.reports_dir,
            &second.paths.reports_dir,
        ),
    ] {
        let (ha, hb) = (tree_hashes(a), tree_hashes(b));
        if ha.is_empty() {
            return Err(format!("{what} tree is empty"));
        }
        if ha != hb {
            let differing: Vec<_> = ha
                .keys()
                .filter(|k| ha.get(*k) != hb.get(*k))
                .take(3)
                .collect();
            return Err(format!("{what} differs, e.g. {differing:?}"));
        }
        compared += ha.len();
    }
    Ok(format!(
        "repeat run: {compared} files (manifest, images, weights, reports) byte-identical"
    ))
}

fn c10_harness() -> Check {
    let s = summarize_runs(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    if (s.mean, s.std) != (2.0, 1.0) {
        return Err(format!("summarize_runs([1,2,3]) = ({}, {})", s.mean, s.std));
    }
    let labels: Vec<QualityClass> = QualityClass::ALL.iter().flat_map(|&c| [c; 7]).collect();
    let diag = evaluate_classifier(&labels, &labels).map_err(|e| e.to_string())?;
    if diag.accuracy != 1.0 {
        return Err(format!("diagonal confusion accuracy {}", diag.accuracy));
    }
    let mut r = rng::stream(1010);
    for t in 0..50 {
        let n = r.random_range(10..400);
        let k = r.random_range(2..=10usize.min(n));
        let seed = r.random();
        let labels: Vec<QualityClass> = (0..n)
            .map(|_| QualityClass::from_index(r.random_range(0..5)).expect("index < 5"))
            .collect();
        let plan = kfold_split(&labels, k, seed, None).map_err(|e| e.to_string())?;
        common::check_partition(&plan, &labels)
            .map_err(|e| format!("triple {t} (n={n}, k={k}): {e}"))?;
    }
    Ok("summarize_runs([1,2,3]) = (2, 1); diagonal accuracy 1.0; 50 random (n, k, seed) splits partition".into())
}

const NAMES: [&str; 10] = [
    "FAST oracle equivalence",
    "Patch selection equivalence",
    "Gradient correctness",
    "Numeric hygiene",
    "Voting oracles",
    "Code 128 checksum",
    "Detection metrics",
    "End-to-end desk experiment",
    "Determinism",
    "Harness arithmetic",
];

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .filter(|n| (1..=10).contains(n))
        .collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::tempdir().expect("temp dir");

    let needs_desk = [4, 7, 8, 9].iter().any(|&n| wants(n));
    let desk = if needs_desk {
        run_desk(&tmp.path().join("run1"))
    } else {
        Err("not run".into())
    };

    let mut failed = 0;
    for n in 1..=10 {
        if !wants(n) {
            continue;
        }
        let outcome = match n {
            1 => c1_fast_oracle(),
            2 => c2_patch_oracle(),
            3 => c3_gradients(),
            4 => c4_numerics(&desk),
            5 => c5_voting(),
            6 => c6_code128(),
            7 => c7_detection(&desk),
            8 => c8_desk(&desk),
            9 => c9_determinism(&desk, &tmp.path().join("run2")),
            _ => c10_harness(),
        };
        match &outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {}: {detail}", NAMES[n - 1]),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {}: {detail}", NAMES[n - 1]);
            }
        }
    }
    if let Ok(d) = &desk {
        println!("\n{}", d.report.text());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
