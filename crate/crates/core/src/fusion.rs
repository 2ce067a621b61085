//! Stacked fusion of branch features, plus majority-vote baselines.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{
    argmax, dense_backward, dense_forward, relu_backward, relu_in_place, softmax,
    softmax_cross_entropy, zeros_like, Branch, FeatureVector, NnetError, Sgd, Tensor, TrainConfig,
    WeightFile, FUSION_TAG, NUM_CLASSES,
};
use crate::rng;
use crate::synthlabel::QualityClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("expected {expected} FAST-patch features, got {found}")]
    WrongPatchCount { expected: usize, found: usize },
    #[error("no inputs")]
    EmptyInput,
    #[error("all voting weights are zero")]
    AllZeroWeights,
    #[error("invalid voting weight {0}")]
    InvalidWeight(f64),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NnetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchPooling {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub global_dim: usize,
    pub local_dim: usize,
    pub hidden: [usize; 2],
    pub patch_pooling: PatchPooling,
    pub n_patches: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            global_dim: 64,
            local_dim: 16,
            hidden: [64, 32],
            patch_pooling: PatchPooling::Mean,
            n_patches: 3,
        }
    }
}

impl FusionConfig {
    pub fn paper_scale() -> Self {
        Self {
            global_dim: 2048,
            local_dim: 512,
            hidden: [512, 128],
            ..Self::default()
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.global_dim + 3 * self.local_dim
    }

    pub fn branch_dim(&self, branch: Branch) -> usize {
        match branch {
            Branch::Global => self.global_dim,
            _ => self.local_dim,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.global_dim == 0 || self.local_dim == 0 || self.hidden.contains(&0) {
            return Err(FusionError::DimMismatch(
                "feature and hidden dims must be positive".into(),
            ));
        }
        if self.n_patches == 0 {
            return Err(FusionError::WrongPatchCount {
                expected: 1,
                found: 0,
            });
        }
        Ok(())
    }
}

fn check_len(v: &FeatureVector, want: usize) -> Result<(), FusionError> {
    if v.values.len() != want {
        return Err(FusionError::DimMismatch(format!(
            "{} feature has length {}, expected {want}",
            v.branch.name(),
            v.values.len()
        )));
    }
    Ok(())
}

/// `[global ‖ address ‖ barcode ‖ mean of FAST patches]`.
pub fn fuse_features(
    cfg: &FusionConfig,
    global: &FeatureVector,
    address: &FeatureVector,
    barcode: &FeatureVector,
    fast_patches: &[FeatureVector],
) -> Result<Vec<f32>, FusionError> {
    if fast_patches.len() != cfg.n_patches {
        return Err(FusionError::WrongPatchCount {
            expected: cfg.n_patches,
            found: fast_patches.len(),
        });
    }
    check_len(global, cfg.global_dim)?;
    check_len(address, cfg.local_dim)?;
    check_len(barcode, cfg.local_dim)?;
    let mut pooled = vec![0f64; cfg.local_dim];
    for p in fast_patches {
        check_len(p, cfg.local_dim)?;
        for (acc, &v) in pooled.iter_mut().zip(&p.values) {
            *acc += v as f64;
        }
    }
    let n = fast_patches.len() as f64;
    let mut out = Vec::with_capacity(cfg.concat_dim());
    out.extend_from_slice(&global.values);
    out.extend_from_slice(&address.values);
    out.extend_from_slice(&barcode.values);
    out.extend(pooled.into_iter().map(|s| (s / n) as f32));
    Ok(out)
}

/// Input standardization followed by three dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    tensors: Vec<Tensor<f32>>,
}

const MEAN: usize = 0;
const INV_STD: usize = 1;
const DENSE0: usize = 2;

impl FusionParams {
    fn init<R: rand::Rng>(input_dim: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let dims = [input_dim, hidden[0], hidden[1], NUM_CLASSES];
        let mut tensors = vec![
            Tensor::zeros(&[input_dim]),
            Tensor::from_vec(vec![input_dim], vec![1.0; input_dim]).expect("len"),
        ];
        for l in 0..3 {
            let mut w = Tensor::zeros(&[dims[l + 1], dims[l]]);
            let normal = Normal::new(0.0, (2.0 / dims[l] as f64).sqrt()).expect("positive std");
            for v in w.data_mut() {
                *v = normal.sample(rng) as f32;
            }
            tensors.push(w);
            tensors.push(Tensor::zeros(&[dims[l + 1]]));
        }
        Self { tensors }
    }

    /// All weights zero: uniform output for any input.
    pub fn zeroed(input_dim: usize, hidden: [usize; 2]) -> Self {
        let mut p = Self::init(input_dim, hidden, &mut rng::stream(0));
        for t in &mut p.tensors[DENSE0..] {
            t.fill(0.0);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.tensors[MEAN].len()
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        WeightFile {
            tag: FUSION_TAG,
            input_side: 0,
            tensors: self.tensors.clone(),
        }
        .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FusionError> {
        let wf = WeightFile::from_bytes(bytes)?;
        let bad = |m: String| FusionError::Network(NnetError::WeightFormat(m));
        if wf.tag != FUSION_TAG {
            return Err(bad(format!("tag {} is not a fusion head", wf.tag)));
        }
        if wf.tensors.len() != DENSE0 + 6 {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                DENSE0 + 6,
                wf.tensors.len()
            )));
        }
        let input = wf.tensors[MEAN].len();
        let mut prev = input;
        let mut ok = wf.tensors[INV_STD].shape() == [input];
        for l in 0..3 {
            let w = wf.tensors[DENSE0 + 2 * l].shape();
            let b = wf.tensors[DENSE0 + 2 * l + 1].shape();
            ok &= w.len() == 2 && w[1] == prev && b == [w[0]];
            prev = if w.len() == 2 { w[0] } else { 0 };
        }
        if !ok || prev != NUM_CLASSES {
            return Err(bad("inconsistent fusion layer shapes".into()));
        }
        Ok(Self {
            tensors: wf.tensors,
        })
    }
}

struct HeadTrace {
    x: Vec<f32>,
    a1: Vec<f32>,
    a2: Vec<f32>,
    logits: Vec<f32>,
}

fn head_forward(t: &[Tensor<f32>], raw: &[f32]) -> HeadTrace {
    let x: Vec<f32> = raw
        .iter()
        .zip(t[MEAN].data().iter().zip(t[INV_STD].data()))
        .map(|(&v, (&m, &s))| (v - m) * s)
        .collect();
    let layer = |i: usize, input: &[f32], relu: bool| {
        let w = &t[DENSE0 + 2 * i];
        let mut out = vec![0f32; w.shape()[0]];
        dense_forward(w.data(), t[DENSE0 + 2 * i + 1].data(), input, &mut out);
        if relu {
            relu_in_place(&mut out);
        }
        out
    };
    let a1 = layer(0, &x, true);
    let a2 = layer(1, &a1, true);
    let logits = layer(2, &a2, false);
    HeadTrace { x, a1, a2, logits }
}

fn head_backward(t: &[Tensor<f32>], tr: &HeadTrace, dlogits: &[f32], grads: &mut [Tensor<f32>]) {
    let mut da2 = vec![0f32; tr.a2.len()];
    let mut da1 = vec![0f32; tr.a1.len()];
    let step =
        |grads: &mut [Tensor<f32>], i: usize, input: &[f32], dy: &[f32], dx: Option<&mut [f32]>| {
            let (lo, hi) = grads.split_at_mut(DENSE0 + 2 * i + 1);
            dense_backward(
                t[DENSE0 + 2 * i].data(),
                input,
                dy,
                lo[DENSE0 + 2 * i].data_mut(),
                hi[0].data_mut(),
                dx,
            );
        };
    step(grads, 2, &tr.a2, dlogits, Some(&mut da2));
    relu_backward(&tr.a2, &mut da2);
    step(grads, 1, &tr.a1, &da2, Some(&mut da1));
    relu_backward(&tr.a1, &mut da1);
    step(grads, 0, &tr.x, &da1, None);
}

/// Seeded SGD on cross-entropy. Standardization statistics come from the
/// training features and stay fixed.
pub fn train_fusion_head(
    features: &[Vec<f32>],
    labels: &[usize],
    cfg: &FusionConfig,
    train: &TrainConfig,
) -> Result<FusionParams, FusionError> {
    cfg.validate()?;
    train.validate()?;
    if features.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    if features.len() != labels.len() {
        return Err(FusionError::DimMismatch(format!(
            "{} feature rows, {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = cfg.concat_dim();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(FusionError::DimMismatch(format!(
            "fused feature length {}, expected {dim}",
            bad.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(NnetError::LabelOutOfRange {
            label: l,
            classes: NUM_CLASSES,
        }
        .into());
    }
    let mut stream = rng::stream(train.seed);
    let mut params = FusionParams::init(dim, cfg.hidden, &mut stream);
    let n = features.len() as f64;
    for d in 0..dim {
        let mean = features.iter().map(|f| f[d] as f64).sum::<f64>() / n;
        let var = features
            .iter()
            .map(|f| (f[d] as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        params.tensors[MEAN].data_mut()[d] = mean as f32;
        params.tensors[INV_STD].data_mut()[d] = if var > 1e-12 {
            (1.0 / var.sqrt()) as f32
        } else {
            1.0
        };
    }
    let mut opt = Sgd::new(&params.tensors, train.learning_rate, train.momentum);
    let mut grads = zeros_like(&params.tensors);
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.shuffle(&mut stream);
        for batch in order.chunks(train.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            for &i in batch {
                let tr = head_forward(&params.tensors, &features[i]);
                let (_, dlogits) = softmax_cross_entropy(&tr.logits, labels[i])?;
                head_backward(&params.tensors, &tr, &dlogits, &mut grads);
            }
            opt.step(&mut params.tensors, &grads, 1.0 / batch.len() as f32);
        }
        if !params.tensors.iter().all(Tensor::all_finite) {
            return Err(NnetError::NonFinite { epoch }.into());
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: QualityClass,
    pub probabilities: [f64; NUM_CLASSES],
}

impl Prediction {
    /// Argmax with the lowest index winning ties.
    pub fn from_probabilities(probabilities: [f64; NUM_CLASSES]) -> Self {
        let class = QualityClass::from_index(argmax(&probabilities)).expect("five classes");
        Self {
            class,
            probabilities,
        }
    }
}

pub fn stacked_logits(params: &FusionParams, fused: &[f32]) -> Result<Vec<f32>, FusionError> {
    if fused.len() != params.input_dim() {
        return Err(FusionError::DimMismatch(format!(
            "fused feature length {}, head expects {}",
            fused.len(),
            params.input_dim()
        )));
    }
    Ok(head_forward(&params.tensors, fused).logits)
}

pub fn predict_stacked(params: &FusionParams, fused: &[f32]) -> Result<Prediction, FusionError> {
    let logits: Vec<f64> = stacked_logits(params, fused)?
        .into_iter()
        .map(f64::from)
        .collect();
    let p = softmax(&logits);
    Ok(Prediction::from_probabilities(
        p.try_into().expect("five logits"),
    ))
}

/// Plurality vote; ties go to the lowest class index.
pub fn predict_majority(predictions: &[QualityClass]) -> Result<QualityClass, FusionError> {
    predict_weighted_majority(predictions, &vec![1.0; predictions.len()])
}

/// Class with the largest summed weight; ties go to the lowest class index.
pub fn predict_weighted_majority(
    predictions: &[QualityClass],
    weights: &[f64],
) -> Result<QualityClass, FusionError> {
    if predictions.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    if predictions.len() != weights.len() {
        return Err(FusionError::DimMismatch(format!(
            "{} predictions, {} weights",
            predictions.len(),
            weights.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(FusionError::InvalidWeight(w));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(FusionError::AllZeroWeights);
    }
    let mut tally = [0f64; NUM_CLASSES];
    for (p, w) in predictions.iter().zip(weights) {
        tally[p.index()] += w;
    }
    Ok(QualityClass::from_index(argmax(&tally)).expect("five classes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use QualityClass::*;

    fn fv(branch: Branch, values: Vec<f32>) -> FeatureVector {
        FeatureVector { branch, values }
    }

    #[test]
    fn fused_lengths() {
        for (cfg, want) in [
            (FusionConfig::default(), 112),
            (FusionConfig::paper_scale(), 3584),
        ] {
            let g = fv(Branch::Global, vec![0.0; cfg.global_dim]);
            let l = |b| fv(b, vec![1.0; cfg.local_dim]);
            let patches = vec![l(Branch::FastPatch); 3];
            let out = fuse_features(&cfg, &g, &l(Branch::Address), &l(Branch::Barcode), &patches)
                .unwrap();
            assert_eq!(out.len(), want);
            assert_eq!(cfg.concat_dim(), want);
        }
    }

    #[test]
    fn identical_patches_pool_to_themselves() {
        let cfg = FusionConfig::default();
        let v: Vec<f32> = (0..16).map(|i| i as f32 * 0.3).collect();
        let patches = vec![fv(Branch::FastPatch, v.clone()); 3];
        let g = fv(Branch::Global, vec![0.0; 64]);
        let z = fv(Branch::Address, vec![0.0; 16]);
        let out = fuse_features(&cfg, &g, &z, &z, &patches).unwrap();
        assert_eq!(&out[96..], v.as_slice());
    }

    #[test]
    fn fuse_errors() {
        let cfg = FusionConfig::default();
        let g = fv(Branch::Global, vec![0.0; 64]);
        let l = fv(Branch::Address, vec![0.0; 16]);
        assert!(matches!(
            fuse_features(&cfg, &g, &l, &l, std::slice::from_ref(&l)),
            Err(FusionError::WrongPatchCount {
                expected: 3,
                found: 1
            })
        ));
        let short = fv(Branch::Global, vec![0.0; 63]);
        assert!(matches!(
            fuse_features(&cfg, &short, &l, &l, &[l.clone(), l.clone(), l.clone()]),
            Err(FusionError::DimMismatch(_))
        ));
    }

    #[test]
    fn zero_head_is_uniform() {
        let p = FusionParams::zeroed(112, [64, 32]);
        let pred = predict_stacked(&p, &[0.7; 112]).unwrap();
        assert_eq!(pred.class, Normal);
        for v in pred.probabilities {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_features_are_learned() {
        let cfg = FusionConfig {
            global_dim: 5,
            local_dim: 1,
            hidden: [16, 8],
            ..FusionConfig::default()
        };
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let feats: Vec<Vec<f32>> = labels
            .iter()
            .map(|&l| (0..8).map(|d| (d == l) as u8 as f32).collect())
            .collect();
        let train = TrainConfig {
            epochs: 100,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let params = train_fusion_head(&feats, &labels, &cfg, &train).unwrap();
        let correct = feats
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| predict_stacked(&params, f).unwrap().class.index() == l)
            .count();
        assert!(correct as f64 / 50.0 >= 0.99);
        let again = train_fusion_head(&feats, &labels, &cfg, &train).unwrap();
        assert_eq!(params.to_bytes(), again.to_bytes());
        assert_eq!(
            FusionParams::from_bytes(&params.to_bytes()).unwrap(),
            params
        );
    }

    #[test]
    fn train_rejects_bad_dims() {
        let cfg = FusionConfig::default();
        let r = train_fusion_head(&[vec![0.0; 10]], &[0], &cfg, &TrainConfig::default());
        assert!(matches!(r, Err(FusionError::DimMismatch(_))));
        let r = train_fusion_head(&[], &[], &cfg, &TrainConfig::default());
        assert!(matches!(r, Err(FusionError::EmptyDataset)));
    }

    #[test]
    fn voting_examples() {
        assert_eq!(
            predict_majority(&[Damaged, Damaged, Unreadable, Handwritten]).unwrap(),
            Damaged
        );
        assert_eq!(
            predict_majority(&[Handwritten, Handwritten, Contaminated, Contaminated]).unwrap(),
            Contaminated
        );
        assert_eq!(predict_majority(&[Handwritten]).unwrap(), Handwritten);
        assert_eq!(predict_majority(&[]), Err(FusionError::EmptyInput));
        assert_eq!(
            predict_weighted_majority(&[Normal, Normal, Contaminated], &[0.3, 0.3, 0.9]).unwrap(),
            Contaminated
        );
        assert_eq!(
            predict_weighted_majority(&[Normal, Contaminated, Unreadable], &[0.0, 0.0, 1.0])
                .unwrap(),
            Unreadable
        );
        assert_eq!(
            predict_weighted_majority(&[Normal, Unreadable], &[0.0, 0.0]),
            Err(FusionError::AllZeroWeights)
        );
    }
}
