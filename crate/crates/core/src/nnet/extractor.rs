use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::*;
use super::tensor::{zeros_like, Real, Tensor};
use super::weights::WeightFile;
use super::{
    argmax, softmax, softmax_cross_entropy, Branch, NnetError, Sgd, TrainConfig, NUM_CLASSES,
};
use crate::raster::{self, Raster};
use crate::rng;

/// Channel counts from the input plane through the three conv blocks.
pub const TRUNK_CHANNELS: [usize; 4] = [1, 8, 16, 32];

const CONV_BLOCKS: usize = 3;
const FEAT_W: usize = 6;
const FEAT_B: usize = 7;
const HEAD_W: usize = 8;
const HEAD_B: usize = 9;
const N_TENSORS: usize = 10;

fn layer_shapes(feature_dim: usize) -> Vec<Vec<usize>> {
    let mut shapes = Vec::with_capacity(N_TENSORS);
    for b in 0..CONV_BLOCKS {
        shapes.push(vec![TRUNK_CHANNELS[b + 1], TRUNK_CHANNELS[b], 3, 3]);
        shapes.push(vec![TRUNK_CHANNELS[b + 1]]);
    }
    shapes.push(vec![feature_dim, TRUNK_CHANNELS[3]]);
    shapes.push(vec![feature_dim]);
    shapes.push(vec![NUM_CLASSES, feature_dim]);
    shapes.push(vec![NUM_CLASSES]);
    shapes
}

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub branch: Branch,
    pub input_side: usize,
    tensors: Vec<Tensor<f32>>,
}

impl ExtractorParams {
    /// He-normal weights and zero biases, drawn in layer order from `rng`.
    pub fn init<R: rand::Rng>(
        branch: Branch,
        feature_dim: usize,
        input_side: usize,
        rng: &mut R,
    ) -> Self {
        let tensors = layer_shapes(feature_dim)
            .into_iter()
            .map(|shape| {
                let mut t = Tensor::zeros(&shape);
                if shape.len() > 1 {
                    let normal = Normal::new(0.0, (2.0 / fan_in(&shape) as f64).sqrt())
                        .expect("positive std");
                    for v in t.data_mut() {
                        *v = normal.sample(rng) as f32;
                    }
                }
                t
            })
            .collect();
        Self {
            branch,
            input_side,
            tensors,
        }
    }

    pub fn zeroed(branch: Branch, feature_dim: usize, input_side: usize) -> Self {
        Self {
            branch,
            input_side,
            tensors: layer_shapes(feature_dim)
                .iter()
                .map(|s| Tensor::zeros(s))
                .collect(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.tensors[FEAT_B].len()
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        WeightFile {
            tag: self.branch.id(),
            input_side: self.input_side as u16,
            tensors: self.tensors.clone(),
        }
        .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnetError> {
        let wf = WeightFile::from_bytes(bytes)?;
        let branch = Branch::from_id(wf.tag)
            .ok_or_else(|| NnetError::WeightFormat(format!("unknown branch id {}", wf.tag)))?;
        if wf.tensors.len() != N_TENSORS {
            return Err(NnetError::WeightFormat(format!(
                "expected {N_TENSORS} tensors, found {}",
                wf.tensors.len()
            )));
        }
        let feature_dim = wf.tensors[FEAT_B].len();
        for (t, want) in wf.tensors.iter().zip(layer_shapes(feature_dim)) {
            if t.shape() != want.as_slice() {
                return Err(NnetError::WeightFormat(format!(
                    "tensor shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        let side = wf.input_side as usize;
        if side < 8 || !side.is_multiple_of(8) {
            return Err(NnetError::WeightFormat(format!(
                "invalid input side {side}"
            )));
        }
        Ok(Self {
            branch,
            input_side: side,
            tensors: wf.tensors,
        })
    }
}

/// A preprocessed `[1, side, side]` input plane in `[0, 1]` and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub branch: Branch,
    pub values: Vec<f32>,
}

/// Grayscale, `side × side`, scaled to `[0, 1]` with ink high: white paper
/// maps to 0 and black to 1.
pub fn image_input(image: &Raster, side: usize) -> Result<Tensor<f32>, NnetError> {
    if image.width() as usize != side || image.height() as usize != side {
        return Err(NnetError::ShapeMismatch(format!(
            "input is {}x{}, network expects {side}x{side}",
            image.width(),
            image.height()
        )));
    }
    let gray = raster::to_grayscale(image);
    let data = gray
        .data()
        .iter()
        .map(|&v| (255 - v) as f32 / 255.0)
        .collect();
    Tensor::from_vec(vec![1, side, side], data)
}

/// Letterbox onto a white square canvas, then [`image_input`].
pub fn prepare_input(image: &Raster, side: usize) -> Tensor<f32> {
    let gray = raster::to_grayscale(image);
    let boxed = raster::resize_letterbox(&gray, side as u32, side as u32, 255);
    image_input(&boxed, side).expect("letterbox yields the requested side")
}

pub(crate) struct Trace<T> {
    side: usize,
    /// Unfolded block inputs.
    cols: [Vec<T>; CONV_BLOCKS],
    /// Post-ReLU conv outputs.
    acts: [Vec<T>; CONV_BLOCKS],
    argmax: [Vec<u32>; CONV_BLOCKS],
    pub(crate) gap: Vec<T>,
    pub(crate) feat: Vec<T>,
    pub(crate) logits: Vec<T>,
}

fn check_input<T: Real>(input: &Tensor<T>, side: usize) -> Result<(), NnetError> {
    if input.shape() != [1, side, side] {
        return Err(NnetError::ShapeMismatch(format!(
            "input shape {:?}, expected [1, {side}, {side}]",
            input.shape()
        )));
    }
    Ok(())
}

pub(crate) fn forward_trace<T: Real>(tensors: &[Tensor<T>], side: usize, input: &[T]) -> Trace<T> {
    let mut inputs: [Vec<T>; CONV_BLOCKS + 1] = Default::default();
    let mut acts: [Vec<T>; CONV_BLOCKS] = Default::default();
    let mut cols: [Vec<T>; CONV_BLOCKS] = Default::default();
    let mut argmax: [Vec<u32>; CONV_BLOCKS] = Default::default();
    inputs[0] = input.to_vec();
    let mut s = side;
    for b in 0..CONV_BLOCKS {
        let (ci, co) = (TRUNK_CHANNELS[b], TRUNK_CHANNELS[b + 1]);
        let mut act = vec![T::zero(); co * s * s];
        conv3x3_forward(
            &inputs[b],
            ci,
            s,
            s,
            tensors[2 * b].data(),
            tensors[2 * b + 1].data(),
            co,
            &mut act,
            &mut cols[b],
        );
        relu_in_place(&mut act);
        let half = s / 2;
        let mut pooled = vec![T::zero(); co * half * half];
        let mut arg = vec![0u32; co * half * half];
        maxpool2_forward(&act, co, s, s, &mut pooled, &mut arg);
        acts[b] = act;
        argmax[b] = arg;
        inputs[b + 1] = pooled;
        s = half;
    }
    let c = TRUNK_CHANNELS[CONV_BLOCKS];
    let area = T::lit((s * s) as f64);
    let last = &inputs[CONV_BLOCKS];
    let gap: Vec<T> = (0..c)
        .map(|ch| sum(&last[ch * s * s..(ch + 1) * s * s]) / area)
        .collect();
    let mut feat = vec![T::zero(); tensors[FEAT_B].len()];
    dense_forward(
        tensors[FEAT_W].data(),
        tensors[FEAT_B].data(),
        &gap,
        &mut feat,
    );
    let mut logits = vec![T::zero(); NUM_CLASSES];
    dense_forward(
        tensors[HEAD_W].data(),
        tensors[HEAD_B].data(),
        &feat,
        &mut logits,
    );
    Trace {
        side,
        cols,
        acts,
        argmax,
        gap,
        feat,
        logits,
    }
}

/// Accumulates parameter gradients of the loss with logit gradient `dlogits`.
pub(crate) fn backward<T: Real>(
    tensors: &[Tensor<T>],
    trace: &Trace<T>,
    dlogits: &[T],
    grads: &mut [Tensor<T>],
    zero_conv: bool,
) {
    let fd = trace.feat.len();
    let mut dfeat = vec![T::zero(); fd];
    {
        let (head_w, head_b) = split_pair(grads, HEAD_W);
        dense_backward(
            tensors[HEAD_W].data(),
            &trace.feat,
            dlogits,
            head_w,
            head_b,
            Some(&mut dfeat),
        );
    }
    let c = TRUNK_CHANNELS[CONV_BLOCKS];
    let mut dgap = vec![T::zero(); c];
    {
        let (feat_w, feat_b) = split_pair(grads, FEAT_W);
        dense_backward(
            tensors[FEAT_W].data(),
            &trace.gap,
            &dfeat,
            feat_w,
            feat_b,
            Some(&mut dgap),
        );
    }
    let s_last = trace.side >> CONV_BLOCKS;
    let area = T::lit((s_last * s_last) as f64);
    let mut dpool: Vec<T> = dgap
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / area, s_last * s_last))
        .collect();
    let mut s = s_last * 2;
    for b in (0..CONV_BLOCKS).rev() {
        let (ci, co) = (TRUNK_CHANNELS[b], TRUNK_CHANNELS[b + 1]);
        let mut dact = vec![T::zero(); co * s * s];
        maxpool2_backward(&dpool, &trace.argmax[b], &mut dact);
        relu_backward(&trace.acts[b], &mut dact);
        let mut dinput = if b > 0 {
            Some(vec![T::zero(); ci * s * s])
        } else {
            None
        };
        let (dw, db) = split_pair(grads, 2 * b);
        conv3x3_backward(
            &trace.cols[b],
            ci,
            s,
            s,
            tensors[2 * b].data(),
            co,
            &dact,
            dw,
            db,
            dinput.as_deref_mut(),
        );
        if zero_conv {
            dw.fill(T::zero());
        }
        if let Some(d) = dinput {
            dpool = d;
        }
        s *= 2;
    }
}

fn split_pair<T: Real>(grads: &mut [Tensor<T>], w: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.split_at_mut(w + 1);
    (a[w].data_mut(), b[0].data_mut())
}

/// Adds one sample's gradient into `grads` and returns its loss.
pub fn sample_gradient<T: Real>(
    tensors: &[Tensor<T>],
    side: usize,
    input: &Tensor<T>,
    label: usize,
    grads: &mut [Tensor<T>],
) -> Result<T, NnetError> {
    check_input(input, side)?;
    let trace = forward_trace(tensors, side, input.data());
    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, label)?;
    backward(tensors, &trace, &dlogits, grads, false);
    Ok(loss)
}

pub(crate) fn sample_loss<T: Real>(
    tensors: &[Tensor<T>],
    side: usize,
    input: &[T],
    label: usize,
) -> T {
    let trace = forward_trace(tensors, side, input);
    softmax_cross_entropy(&trace.logits, label)
        .expect("label validated")
        .0
}

pub fn forward_features(
    params: &ExtractorParams,
    image: &Raster,
) -> Result<FeatureVector, NnetError> {
    let input = image_input(image, params.input_side)?;
    features_of(params, &input)
}

impl ExtractorParams {
    pub fn features(&self, input: &Tensor<f32>) -> Result<FeatureVector, NnetError> {
        features_of(self, input)
    }
}

fn features_of(params: &ExtractorParams, input: &Tensor<f32>) -> Result<FeatureVector, NnetError> {
    check_input(input, params.input_side)?;
    let trace = forward_trace(&params.tensors, params.input_side, input.data());
    Ok(FeatureVector {
        branch: params.branch,
        values: trace.feat,
    })
}

/// Class probabilities from the pretraining head.
pub fn head_probabilities(
    params: &ExtractorParams,
    input: &Tensor<f32>,
) -> Result<Vec<f32>, NnetError> {
    check_input(input, params.input_side)?;
    let trace = forward_trace(&params.tensors, params.input_side, input.data());
    Ok(softmax(&trace.logits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ExtractorParams,
    pub history: Vec<EpochStats>,
}

/// The sample followed by its horizontal mirror, vertical mirror and 180°
/// rotation.
pub fn flip_variants(sample: &Sample) -> [Sample; 4] {
    let [_, h, w] = sample.input.shape()[..] else {
        unreachable!("inputs are [1, side, side]")
    };
    let src = sample.input.data();
    let variant = |flip_x: bool, flip_y: bool| {
        let mut data = Vec::with_capacity(src.len());
        for y in 0..h {
            let sy = if flip_y { h - 1 - y } else { y };
            let row = &src[sy * w..(sy + 1) * w];
            if flip_x {
                data.extend(row.iter().rev());
            } else {
                data.extend_from_slice(row);
            }
        }
        Sample {
            input: Tensor::from_vec(vec![1, h, w], data).expect("same shape"),
            label: sample.label,
        }
    };
    [
        variant(false, false),
        variant(true, false),
        variant(false, true),
        variant(true, true),
    ]
}

/// Minibatch SGD over `samples`. The seeded stream draws the initial weights,
/// then one shuffle of the sample order per epoch. With `flip_augment` each
/// sample expands in place into its four [`flip_variants`].
pub fn train_extractor(
    samples: &[Sample],
    branch: Branch,
    feature_dim: usize,
    cfg: &TrainConfig,
) -> Result<Trained, NnetError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NnetError::EmptyDataset);
    }
    if feature_dim == 0 {
        return Err(NnetError::InvalidConfig(
            "feature_dim must be positive".into(),
        ));
    }
    for s in samples {
        check_input(&s.input, cfg.input_side)?;
        if s.label >= NUM_CLASSES {
            return Err(NnetError::LabelOutOfRange {
                label: s.label,
                classes: NUM_CLASSES,
            });
        }
    }
    let augmented: Vec<Sample>;
    let samples = if cfg.flip_augment {
        augmented = samples.iter().flat_map(flip_variants).collect();
        &augmented[..]
    } else {
        samples
    };
    let mut stream = rng::stream(cfg.seed);
    let mut params = ExtractorParams::init(branch, feature_dim, cfg.input_side, &mut stream);
    let mut opt = Sgd::new(&params.tensors, cfg.learning_rate, cfg.momentum);
    let mut grads = zeros_like(&params.tensors);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream);
        let (mut loss_sum, mut correct) = (0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            for &i in batch {
                let s = &samples[i];
                let trace = forward_trace(&params.tensors, cfg.input_side, s.input.data());
                let (loss, dlogits) = softmax_cross_entropy(&trace.logits, s.label)?;
                loss_sum += loss as f64;
                correct += (argmax(&trace.logits) == s.label) as usize;
                backward(&params.tensors, &trace, &dlogits, &mut grads, false);
            }
            opt.step(&mut params.tensors, &grads, 1.0 / batch.len() as f32);
        }
        if !params.all_finite() {
            return Err(NnetError::NonFinite { epoch });
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
        });
    }
    Ok(Trained { params, history })
}

/// Mean loss over a sample set under fixed parameters.
pub fn dataset_loss(params: &ExtractorParams, samples: &[Sample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| sample_loss(&params.tensors, params.input_side, s.input.data(), s.label) as f64)
        .sum();
    total / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Bright square on dark (class 0) or dark square on bright (class 1).
    pub(crate) fn toy_samples(n: usize, side: usize, seed: u64) -> Vec<Sample> {
        use rand::Rng;
        let mut r = stream(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let (bg, fg) = if label == 0 { (0.1, 0.9) } else { (0.9, 0.1) };
                let sq = side / 2;
                let ox = r.random_range(0..=side - sq);
                let oy = r.random_range(0..=side - sq);
                let data = (0..side * side)
                    .map(|p| {
                        let (x, y) = (p % side, p / side);
                        let inside = (ox..ox + sq).contains(&x) && (oy..oy + sq).contains(&y);
                        (if inside { fg } else { bg }) + r.random_range(-0.05..0.05f32)
                    })
                    .collect();
                Sample {
                    input: Tensor::from_vec(vec![1, side, side], data).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn forward_is_deterministic_and_sized() {
        let side = 16;
        for fd in [4, 16, 64] {
            let p = ExtractorParams::init(Branch::Address, fd, side, &mut stream(3));
            let s = &toy_samples(1, side, 1)[0];
            let a = p.features(&s.input).unwrap();
            assert_eq!(a.values.len(), fd);
            assert_eq!(a, p.features(&s.input).unwrap());
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let p = ExtractorParams::zeroed(Branch::Global, 8, 16);
        let s = &toy_samples(1, 16, 2)[0];
        assert!(p
            .features(&s.input)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let p = ExtractorParams::zeroed(Branch::Global, 8, 16);
        let img = Raster::new(20, 16, 1, 0);
        assert!(matches!(
            forward_features(&p, &img),
            Err(NnetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn empty_split_rejected() {
        let r = train_extractor(&[], Branch::Global, 8, &TrainConfig::default());
        assert!(matches!(r, Err(NnetError::EmptyDataset)));
    }

    #[test]
    fn toy_set_is_learned() {
        let side = 16;
        let samples = toy_samples(40, side, 11);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            input_side: side,
            seed: 5,
            ..TrainConfig::default()
        };
        let trained = train_extractor(&samples, Branch::Global, 8, &cfg).unwrap();
        let correct = samples
            .iter()
            .filter(|s| argmax(&head_probabilities(&trained.params, &s.input).unwrap()) == s.label)
            .count();
        assert_eq!(correct, samples.len());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let samples = toy_samples(12, 16, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            input_side: 16,
            ..TrainConfig::default()
        };
        let a = train_extractor(&samples, Branch::Barcode, 8, &cfg).unwrap();
        let b = train_extractor(&samples, Branch::Barcode, 8, &cfg).unwrap();
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    }

    #[test]
    fn small_lr_loss_does_not_increase() {
        let samples = toy_samples(20, 16, 8);
        let mut last = f64::INFINITY;
        for epochs in 1..=5 {
            let cfg = TrainConfig {
                epochs,
                learning_rate: 1e-3,
                batch_size: 20,
                input_side: 16,
                seed: 21,
                ..TrainConfig::default()
            };
            let loss = dataset_loss(
                &train_extractor(&samples, Branch::Global, 8, &cfg)
                    .unwrap()
                    .params,
                &samples,
            );
            assert!(loss <= last, "epoch {epochs}: {loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn weight_file_round_trip() {
        let p = ExtractorParams::init(Branch::FastPatch, 16, 64, &mut stream(9));
        let bytes = p.to_bytes();
        assert_eq!(bytes[6], 3);
        assert_eq!(ExtractorParams::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn flip_variants_are_the_four_orientations() {
        let input = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = flip_variants(&Sample { input, label: 2 });
        let data: Vec<&[f32]> = v.iter().map(|s| s.input.data()).collect();
        assert_eq!(
            data,
            [
                &[1.0, 2.0, 3.0, 4.0][..],
                &[2.0, 1.0, 4.0, 3.0],
                &[3.0, 4.0, 1.0, 2.0],
                &[4.0, 3.0, 2.0, 1.0]
            ]
        );
        assert!(v.iter().all(|s| s.label == 2));
    }
}
