//! End-to-end orchestration: preprocessing, model training, inference and
//! the k-fold experiment behind the `eval` command.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalharness::{self, EvalError, FoldPlan, MethodResult};
use crate::fastloc::{self, FastError, PatchSelectionConfig};
use crate::fusion::{self, FusionConfig, FusionError, FusionParams, Prediction};
use crate::nnet::{
    self, Branch, ExtractorParams, NnetError, Sample, Tensor, TrainConfig, NUM_CLASSES,
};
use crate::raster::{self, Raster};
use crate::rng::{self, derive_seed};
use crate::roidet::{
    self, DetectionMetrics, DetectionRecord, DetectorMethod, ImageTruth, RankedDetection,
    RegionKind, RoiError,
};
use crate::synthlabel::{self, Annotation, DatasetManifest, GenConfig, QualityClass, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Fast(#[from] FastError),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset_dir: "data".into(),
            weights_dir: "weights".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchTraining {
    pub global: TrainConfig,
    pub address: TrainConfig,
    pub barcode: TrainConfig,
    pub fast_patch: TrainConfig,
}

impl BranchTraining {
    pub fn get(&self, branch: Branch) -> &TrainConfig {
        match branch {
            Branch::Global => &self.global,
            Branch::Address => &self.address,
            Branch::Barcode => &self.barcode,
            Branch::FastPatch => &self.fast_patch,
        }
    }

    pub fn get_mut(&mut self, branch: Branch) -> &mut TrainConfig {
        match branch {
            Branch::Global => &mut self.global,
            Branch::Address => &mut self.address,
            Branch::Barcode => &mut self.barcode,
            Branch::FastPatch => &mut self.fast_patch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k: usize,
    pub seed: u64,
    pub quota: Option<usize>,
    /// Share of each training split held out to weight the voting baselines.
    pub validation_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 42,
            quota: None,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub generator: GenConfig,
    pub patches: PatchSelectionConfig,
    pub train: BranchTraining,
    pub fusion: FusionConfig,
    pub fusion_train: TrainConfig,
    pub detector: DetectorMethod,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            generator: GenConfig::default(),
            patches: PatchSelectionConfig::default(),
            train: BranchTraining::default(),
            fusion: FusionConfig::default(),
            fusion_train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            detector: DetectorMethod::Classical,
            eval: EvalSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: String| PipelineError::Config(e);
        self.generator
            .validate()
            .map_err(|e| cfg_err(format!("generator: {e}")))?;
        self.patches
            .validate()
            .map_err(|e| cfg_err(format!("patches: {e}")))?;
        for b in Branch::ALL {
            self.train
                .get(b)
                .validate()
                .map_err(|e| cfg_err(format!("train.{}: {e}", b.name())))?;
        }
        self.fusion_train
            .validate()
            .map_err(|e| cfg_err(format!("fusion_train: {e}")))?;
        self.fusion
            .validate()
            .map_err(|e| cfg_err(format!("fusion: {e}")))?;
        if self.fusion.n_patches != self.patches.n_patches {
            return Err(cfg_err(format!(
                "fusion.n_patches = {} but patches.n_patches = {}",
                self.fusion.n_patches, self.patches.n_patches
            )));
        }
        if self.eval.k < 2 {
            return Err(cfg_err("eval.k must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.eval.validation_fraction) {
            return Err(cfg_err(
                "eval.validation_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Switch feature and hidden sizes to the large configuration.
    pub fn paper_scale(mut self) -> Self {
        self.fusion = FusionConfig {
            n_patches: self.fusion.n_patches,
            ..FusionConfig::paper_scale()
        };
        self
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            detector: self.detector,
            patches: self.patches.clone(),
            input_sides: Branch::ALL.map(|b| self.train.get(b).input_side),
        }
    }
}

// ---------------------------------------------------------------------------
// preprocessing

/// Everything needed to turn an image into network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub detector: DetectorMethod,
    pub patches: PatchSelectionConfig,
    /// Input side per branch, in branch order.
    pub input_sides: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchInputs {
    pub global: Tensor<f32>,
    pub address: Tensor<f32>,
    pub barcode: Tensor<f32>,
    pub patches: Vec<Tensor<f32>>,
}

impl BranchInputs {
    fn single(&self, branch: Branch) -> &Tensor<f32> {
        match branch {
            Branch::Global => &self.global,
            Branch::Address => &self.address,
            Branch::Barcode => &self.barcode,
            Branch::FastPatch => unreachable!("patch branch has several inputs"),
        }
    }
}

fn blank_input(side: usize) -> Tensor<f32> {
    Tensor::zeros(&[1, side, side])
}

/// Letterboxed whole image, ROI crops and FAST patches. A region the
/// detector misses becomes a blank (white) input.
pub fn prepare_inputs(
    image: &Raster,
    annotation: Option<&Annotation>,
    pre: &Preprocess,
) -> Result<BranchInputs> {
    let gray = raster::to_grayscale(image);
    let side = |b: Branch| pre.input_sides[b.id() as usize];
    let dets = roidet::detect_rois(&gray, pre.detector, annotation)?;
    let roi = |kind: RegionKind, branch: Branch| -> Result<Tensor<f32>> {
        match roidet::best_of(&dets, kind) {
            Some(d) => {
                let crop = raster::crop(&gray, d.bbox)
                    .map_err(|e| PipelineError::Config(format!("roi crop: {e}")))?;
                Ok(nnet::prepare_input(&crop, side(branch)))
            }
            None => Ok(blank_input(side(branch))),
        }
    };
    let patch_set = fastloc::select_patches(&gray, &pre.patches)?;
    Ok(BranchInputs {
        global: nnet::prepare_input(&gray, side(Branch::Global)),
        address: roi(RegionKind::Address, Branch::Address)?,
        barcode: roi(RegionKind::Barcode, Branch::Barcode)?,
        patches: patch_set
            .patches
            .iter()
            .map(|p| nnet::prepare_input(p, side(Branch::FastPatch)))
            .collect(),
    })
}

/// Loads every manifest image and prepares its inputs, in manifest order.
pub fn prepare_dataset(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    pre: &Preprocess,
) -> Result<Vec<BranchInputs>> {
    manifest
        .entries
        .par_iter()
        .map(|ann| {
            let img = synthlabel::load_image(dataset_dir, ann)?;
            prepare_inputs(&img, Some(ann), pre)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub preprocess: Preprocess,
    pub fusion: FusionConfig,
    /// Held-out accuracy of each branch, used as weighted-vote weights.
    pub voting_weights: [f64; 4],
    pub fit_size: usize,
    pub validation_size: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub meta: ModelMeta,
    /// In branch order.
    pub extractors: Vec<ExtractorParams>,
    pub fusion: FusionParams,
}

pub const MODEL_META_FILE: &str = "model.json";
pub const FUSION_WEIGHTS_FILE: &str = "fusion.slqi";

pub fn weights_file(branch: Branch) -> String {
    format!("{}.slqi", branch.name())
}

/// Per-image outputs of every decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Classifier head of each branch; the patch branch averages its patches.
    pub branches: Vec<Prediction>,
    pub majority: QualityClass,
    pub weighted_majority: QualityClass,
    pub stacked: Prediction,
}

fn head_prediction(params: &ExtractorParams, inputs: &[&Tensor<f32>]) -> Result<Prediction> {
    let mut mean = [0f64; NUM_CLASSES];
    for t in inputs {
        for (m, p) in mean.iter_mut().zip(nnet::head_probabilities(params, t)?) {
            *m += p as f64;
        }
    }
    let n = inputs.len() as f64;
    Ok(Prediction::from_probabilities(mean.map(|m| m / n)))
}

fn branch_inputs(inp: &BranchInputs, branch: Branch) -> Vec<&Tensor<f32>> {
    match branch {
        Branch::FastPatch => inp.patches.iter().collect(),
        b => vec![inp.single(b)],
    }
}

impl Model {
    pub fn extractor(&self, branch: Branch) -> &ExtractorParams {
        &self.extractors[branch.id() as usize]
    }

    pub fn fused_features(&self, inp: &BranchInputs) -> Result<Vec<f32>> {
        let f = |b: Branch| self.extractor(b).features(inp.single(b));
        let patches = inp
            .patches
            .iter()
            .map(|p| self.extractor(Branch::FastPatch).features(p))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(fusion::fuse_features(
            &self.meta.fusion,
            &f(Branch::Global)?,
            &f(Branch::Address)?,
            &f(Branch::Barcode)?,
            &patches,
        )?)
    }

    pub fn infer(&self, inp: &BranchInputs) -> Result<Verdicts> {
        let branches = Branch::ALL
            .iter()
            .map(|&b| head_prediction(self.extractor(b), &branch_inputs(inp, b)))
            .collect::<Result<Vec<_>>>()?;
        let votes: Vec<QualityClass> = branches.iter().map(|p| p.class).collect();
        let stacked = fusion::predict_stacked(&self.fusion, &self.fused_features(inp)?)?;
        Ok(Verdicts {
            majority: fusion::predict_majority(&votes)?,
            weighted_majority: weighted_vote(&votes, &self.meta.voting_weights)?,
            branches,
            stacked,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (b, params) in Branch::ALL.iter().zip(&self.extractors) {
            write_file(&dir.join(weights_file(*b)), &params.to_bytes())?;
        }
        write_file(&dir.join(FUSION_WEIGHTS_FILE), &self.fusion.to_bytes())?;
        write_file(&dir.join(MODEL_META_FILE), to_json(&self.meta).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = read_json(&dir.join(MODEL_META_FILE))?;
        let extractors = Branch::ALL
            .iter()
            .map(|&b| {
                let path = dir.join(weights_file(b));
                let params = ExtractorParams::from_bytes(&fs::read(&path).map_err(io_err(&path))?)?;
                if params.branch != b || params.feature_dim() != meta.fusion.branch_dim(b) {
                    return Err(PipelineError::Config(format!(
                        "{} does not match {MODEL_META_FILE}",
                        path.display()
                    )));
                }
                Ok(params)
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(FUSION_WEIGHTS_FILE);
        let fusion = FusionParams::from_bytes(&fs::read(&path).map_err(io_err(&path))?)?;
        if fusion.input_dim() != meta.fusion.concat_dim() {
            return Err(PipelineError::Config(format!(
                "{} does not match {MODEL_META_FILE}",
                path.display()
            )));
        }
        Ok(Self {
            meta,
            extractors,
            fusion,
        })
    }
}

/// Weighted vote, falling back to plain majority when every weight is zero.
fn weighted_vote(votes: &[QualityClass], weights: &[f64]) -> Result<QualityClass> {
    match fusion::predict_weighted_majority(votes, weights) {
        Err(FusionError::AllZeroWeights) => Ok(fusion::predict_majority(votes)?),
        other => Ok(other?),
    }
}

/// Stratified fit/validation split of `indices` (both ascending).
pub fn validation_split(
    indices: &[usize],
    labels: &[QualityClass],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut stream = rng::stream(seed);
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for c in QualityClass::ALL {
        let mut idx: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| labels[i] == c)
            .collect();
        idx.shuffle(&mut stream);
        let n_val = (idx.len() as f64 * fraction).floor() as usize;
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

fn branch_samples(
    inputs: &[BranchInputs],
    labels: &[QualityClass],
    idx: &[usize],
    branch: Branch,
) -> Vec<Sample> {
    idx.iter()
        .flat_map(|&i| {
            branch_inputs(&inputs[i], branch)
                .into_iter()
                .map(move |t| Sample {
                    input: t.clone(),
                    label: labels[i].index(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLog {
    pub branch: Branch,
    pub final_loss: f64,
    pub final_train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

/// Trains the four extractors on a fit split, weights the votes by held-out
/// accuracy, then fits the fusion head on features of all of `train_idx`.
/// `salt` separates the random streams of different folds.
pub fn train_model(
    inputs: &[BranchInputs],
    labels: &[QualityClass],
    train_idx: &[usize],
    cfg: &PipelineConfig,
    salt: u64,
) -> Result<(Model, Vec<BranchLog>)> {
    let (fit, val) = validation_split(
        train_idx,
        labels,
        cfg.eval.validation_fraction,
        derive_seed(cfg.eval.seed, salt),
    );
    let trained = Branch::ALL
        .par_iter()
        .map(|&b| {
            let samples = branch_samples(inputs, labels, &fit, b);
            let mut tc = cfg.train.get(b).clone();
            tc.seed = derive_seed(tc.seed, (salt << 8) | b.id() as u64);
            nnet::train_extractor(&samples, b, cfg.fusion.branch_dim(b), &tc)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut logs = Vec::new();
    let mut weights = [0f64; 4];
    for (b, t) in Branch::ALL.iter().zip(&trained) {
        let validation_accuracy = if val.is_empty() {
            None
        } else {
            let correct = val
                .iter()
                .map(|&i| {
                    head_prediction(&t.params, &branch_inputs(&inputs[i], *b))
                        .map(|p| (p.class == labels[i]) as usize)
                })
                .sum::<Result<usize>>()?;
            Some(correct as f64 / val.len() as f64)
        };
        weights[b.id() as usize] = validation_accuracy.unwrap_or(1.0);
        let last = t.history.last().expect("at least one epoch");
        logs.push(BranchLog {
            branch: *b,
            final_loss: last.mean_loss,
            final_train_accuracy: last.train_accuracy,
            validation_accuracy,
        });
    }

    let mut model = Model {
        meta: ModelMeta {
            preprocess: cfg.preprocess(),
            fusion: cfg.fusion.clone(),
            voting_weights: weights,
            fit_size: fit.len(),
            validation_size: val.len(),
        },
        extractors: trained.into_iter().map(|t| t.params).collect(),
        fusion: FusionParams::zeroed(cfg.fusion.concat_dim(), cfg.fusion.hidden),
    };
    let features = train_idx
        .par_iter()
        .map(|&i| model.fused_features(&inputs[i]))
        .collect::<Result<Vec<_>>>()?;
    let fusion_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i].index()).collect();
    let mut ft = cfg.fusion_train.clone();
    ft.seed = derive_seed(ft.seed, (salt << 8) | 0xff);
    model.fusion = fusion::train_fusion_head(&features, &fusion_labels, &cfg.fusion, &ft)?;
    Ok((model, logs))
}

// ---------------------------------------------------------------------------
// experiment

pub const METHODS: [&str; 7] = [
    "Global only",
    "Address only",
    "Barcode only",
    "FAST patches only",
    "Majority voting",
    "Weighted majority voting",
    "Stacked fusion",
];

pub const GLOBAL_ONLY: usize = 0;
pub const STACKED: usize = 6;

fn method_classes(v: &Verdicts) -> [QualityClass; 7] {
    [
        v.branches[0].class,
        v.branches[1].class,
        v.branches[2].class,
        v.branches[3].class,
        v.majority,
        v.weighted_majority,
        v.stacked.class,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    /// Accuracy per entry of [`METHODS`].
    pub accuracy: Vec<f64>,
    pub branches: Vec<BranchLog>,
    pub voting_weights: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_hash: String,
    pub images: usize,
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub methods: Vec<MethodResult>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn stacked(&self) -> &MethodResult {
        &self.methods[STACKED]
    }

    pub fn global_only(&self) -> &MethodResult {
        &self.methods[GLOBAL_ONLY]
    }

    pub fn text(&self) -> String {
        format!(
            "{} images, {}-fold cross-validation\n\n{}\nPer-class accuracy (pooled over folds)\n\n{}",
            self.images,
            self.plan.k,
            evalharness::render_summary_table(&self.methods),
            evalharness::render_class_table(&self.methods)
        )
    }
}

pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TEXT: &str = "eval.txt";

/// k-fold run over the dataset in `cfg.paths.dataset_dir`. Fold weights go to
/// `weights_dir/fold{i}`, reports to `reports_dir`.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.paths.dataset_dir)?;
    let labels = manifest.labels();
    let inputs = prepare_dataset(&cfg.paths.dataset_dir, &manifest, &cfg.preprocess())?;
    let plan = evalharness::kfold_split(&labels, cfg.eval.k, cfg.eval.seed, cfg.eval.quota)?;
    let mut folds = Vec::with_capacity(plan.k);
    let mut confusion = vec![[[0usize; 5]; 5]; METHODS.len()];
    for fold in 0..plan.k {
        let (model, branches) =
            train_model(&inputs, &labels, &plan.train(fold), cfg, fold as u64 + 1)?;
        model.save(&cfg.paths.weights_dir.join(format!("fold{fold}")))?;
        let test = plan.test(fold);
        let verdicts = test
            .par_iter()
            .map(|&i| model.infer(&inputs[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut correct = [0usize; METHODS.len()];
        for (&i, v) in test.iter().zip(&verdicts) {
            for (m, c) in method_classes(v).iter().enumerate() {
                confusion[m][labels[i].index()][c.index()] += 1;
                correct[m] += (*c == labels[i]) as usize;
            }
        }
        folds.push(FoldResult {
            fold,
            test_size: test.len(),
            accuracy: correct
                .iter()
                .map(|&c| c as f64 / test.len() as f64)
                .collect(),
            branches,
            voting_weights: model.meta.voting_weights,
        });
    }
    let methods = METHODS
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let per_fold: Vec<f64> = folds.iter().map(|f| f.accuracy[m]).collect();
            Ok(MethodResult {
                method: name.to_string(),
                summary: evalharness::summarize_runs(&per_fold)?,
                pooled: evalharness::report_from_confusion(confusion[m]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport {
        dataset_hash: manifest.header.config_hash.clone(),
        images: labels.len(),
        plan,
        folds,
        methods,
    };
    write_file(
        &cfg.paths.reports_dir.join(EVAL_JSON),
        to_json(&report).as_bytes(),
    )?;
    write_file(
        &cfg.paths.reports_dir.join(EVAL_TEXT),
        report.text().as_bytes(),
    )?;
    Ok(report)
}

/// Trains on the whole dataset and saves the model to `weights_dir`.
pub fn run_train(cfg: &PipelineConfig) -> Result<(Model, Vec<BranchLog>)> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.paths.dataset_dir)?;
    let labels = manifest.labels();
    let inputs = prepare_dataset(&cfg.paths.dataset_dir, &manifest, &cfg.preprocess())?;
    let all: Vec<usize> = (0..labels.len()).collect();
    let (model, logs) = train_model(&inputs, &labels, &all, cfg, 0)?;
    model.save(&cfg.paths.weights_dir)?;
    write_file(
        &cfg.paths.reports_dir.join("train.json"),
        to_json(&logs).as_bytes(),
    )?;
    Ok((model, logs))
}

// ---------------------------------------------------------------------------
// classification output

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Reacquire,
    Inspect,
}

impl Action {
    pub fn for_class(class: QualityClass) -> Option<Self> {
        match class {
            QualityClass::Unreadable => Some(Action::Reacquire),
            QualityClass::Damaged => Some(Action::Inspect),
            _ => None,
        }
    }
}

/// One line of `classify` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRecord {
    pub path: String,
    pub class: QualityClass,
    pub probabilities: [f64; NUM_CLASSES],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub action: Option<Action>,
}

/// Stacked prediction for one image file. Oracle detection is not available
/// here (no annotation), so it degrades to the classical detector.
pub fn classify_image(model: &Model, path: &Path) -> Result<ClassifyRecord> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = raster::read_pnm(&bytes)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let mut pre = model.meta.preprocess.clone();
    if pre.detector == DetectorMethod::Oracle {
        pre.detector = DetectorMethod::Classical;
    }
    let inputs = prepare_inputs(&img, None, &pre)?;
    let pred = fusion::predict_stacked(&model.fusion, &model.fused_features(&inputs)?)?;
    Ok(ClassifyRecord {
        path: path.display().to_string(),
        class: pred.class,
        probabilities: pred.probabilities,
        action: Action::for_class(pred.class),
    })
}

// ---------------------------------------------------------------------------
// detection and patch dumps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub method: DetectorMethod,
    pub iou_threshold: f64,
    pub metrics: DetectionMetrics,
}

/// Runs the detector over the dataset; returns JSONL records and AP metrics.
pub fn run_detect(
    cfg: &PipelineConfig,
    method: DetectorMethod,
) -> Result<(Vec<DetectionRecord>, DetectReport)> {
    let manifest = DatasetManifest::load(&cfg.paths.dataset_dir)?;
    let per_image = manifest
        .entries
        .par_iter()
        .map(|ann| {
            let img = synthlabel::load_image(&cfg.paths.dataset_dir, ann)?;
            Ok(roidet::detect_rois(&img, method, Some(ann))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut ranked = Vec::new();
    for (i, (ann, dets)) in manifest.entries.iter().zip(&per_image).enumerate() {
        for d in dets {
            records.push(DetectionRecord {
                path: ann.image_path.clone(),
                kind: d.kind,
                bbox: d.bbox,
                conf: d.confidence,
            });
            ranked.push(RankedDetection {
                image: i,
                detection: *d,
            });
        }
    }
    let truth: Vec<ImageTruth> = manifest
        .entries
        .iter()
        .map(ImageTruth::from_annotation)
        .collect();
    let report = DetectReport {
        method,
        iou_threshold: 0.5,
        metrics: roidet::average_precision(&ranked, &truth, 0.5),
    };
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub path: String,
    pub tiles: Vec<Option<usize>>,
    pub origins: Vec<raster::BoundingBox>,
    pub tile_counts: Vec<usize>,
    pub files: Vec<String>,
}

/// Writes the selected tiles of every dataset image as PGM files under `out_dir`.
pub fn run_patches(cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<PatchRecord>> {
    let manifest = DatasetManifest::load(&cfg.paths.dataset_dir)?;
    manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, ann)| {
            let img = synthlabel::load_image(&cfg.paths.dataset_dir, ann)?;
            let set = fastloc::select_patches(&raster::to_grayscale(&img), &cfg.patches)?;
            let mut files = Vec::new();
            for (k, p) in set.patches.iter().enumerate() {
                let name = format!("{i:06}_{k}.pgm");
                write_file(&out_dir.join(&name), &raster::write_pnm(p))?;
                files.push(name);
            }
            Ok(PatchRecord {
                path: ann.image_path.clone(),
                tiles: set.tile_indices,
                origins: set.tile_origins,
                tile_counts: set.tile_counts,
                files,
            })
        })
        .collect()
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}
