//! Small CNN feature extractors trained from scratch with SGD.
//!
//! Every branch shares one trunk: three `conv3x3 → ReLU → maxpool2` blocks
//! (8, 16, 32 channels), global average pooling, a linear projection to the
//! branch feature size and a 5-way classifier head used for pretraining.

mod extractor;
mod gradcheck;
mod kernels;
mod tensor;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extractor::{
    dataset_loss, flip_variants, forward_features, head_probabilities, image_input, prepare_input,
    sample_gradient, train_extractor, EpochStats, ExtractorParams, FeatureVector, Sample, Trained,
    TRUNK_CHANNELS,
};
pub use gradcheck::{gradient_check, Fault};
pub use kernels::{dense_backward, dense_forward, relu_backward, relu_in_place};
pub use tensor::{zeros_like, Real, Tensor};
pub use weights::{WeightFile, FORMAT_VERSION, FUSION_TAG, MAGIC};

pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameters after epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("weight file: {0}")]
    WeightFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Global = 0,
    Address = 1,
    Barcode = 2,
    FastPatch = 3,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::Global,
        Branch::Address,
        Branch::Barcode,
        Branch::FastPatch,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Global => "global",
            Branch::Address => "address",
            Branch::Barcode => "barcode",
            Branch::FastPatch => "fast_patch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub input_side: usize,
    /// Also train on the mirrored and 180°-rotated copy of every sample.
    /// Extractors only; the fusion head ignores it.
    pub flip_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch_size: 4,
            seed: 7,
            input_side: 64,
            flip_augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnetError> {
        let bad = |m: &str| Err(NnetError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.input_side < 8 || !self.input_side.is_multiple_of(8) {
            return bad("input_side must be a positive multiple of 8");
        }
        Ok(())
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss `-log p[label]` via log-sum-exp, and its gradient `p - onehot`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    label: usize,
) -> Result<(T, Vec<T>), NnetError> {
    if label >= logits.len() {
        return Err(NnetError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - max).exp() / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Heavy-ball SGD: `v = μ·v + g`, `w -= lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real> {
    lr: T,
    momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64, momentum: f64) -> Self {
        Self {
            lr: T::lit(learning_rate),
            momentum: T::lit(momentum),
            velocity: zeros_like(params),
        }
    }

    /// `grads` are sums over a batch; `scale` turns them into means.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], scale: T) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pw, gw), vw) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vw = self.momentum * *vw + *gw * scale;
                *pw -= self.lr * *vw;
            }
        }
    }
}
