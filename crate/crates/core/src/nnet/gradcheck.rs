use rand::Rng;

use super::extractor::{backward, forward_trace, sample_loss, ExtractorParams, Sample};
use super::tensor::{zeros_like, Real, Tensor};
use super::{softmax_cross_entropy, NnetError};
use crate::rng;

/// Deliberate defects for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    ZeroConvGradient,
}

/// Largest relative error `|a - n| / max(1e-8, |a| + |n|)` between analytic
/// and central-difference gradients over at least `n_weights` weights, drawn
/// evenly from every parameter tensor. Runs in `f64`.
pub fn gradient_check(
    params: &ExtractorParams,
    sample: &Sample,
    n_weights: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<f64, NnetError> {
    let side = params.input_side;
    let mut tensors: Vec<Tensor<f64>> = params.tensors().iter().map(Tensor::cast).collect();
    let input: Tensor<f64> = sample.input.cast();
    if input.shape() != [1, side, side] {
        return Err(NnetError::ShapeMismatch(format!(
            "input shape {:?}",
            input.shape()
        )));
    }
    let trace = forward_trace(&tensors, side, input.data());
    let (_, dlogits) = softmax_cross_entropy(&trace.logits, sample.label)?;
    let mut analytic = zeros_like(&tensors);
    backward(
        &tensors,
        &trace,
        &dlogits,
        &mut analytic,
        fault == Some(Fault::ZeroConvGradient),
    );

    let mut stream = rng::stream(seed);
    let per_tensor = n_weights.div_ceil(tensors.len()).max(1);
    let mut worst = 0f64;
    for t in 0..tensors.len() {
        for _ in 0..per_tensor {
            let idx = stream.random_range(0..tensors[t].len());
            let w = tensors[t].data()[idx];
            let h = 1e-4 * w.abs().max(1.0);
            tensors[t].data_mut()[idx] = w + h;
            let plus = sample_loss(&tensors, side, input.data(), sample.label);
            tensors[t].data_mut()[idx] = w - h;
            let minus = sample_loss(&tensors, side, input.data(), sample.label);
            tensors[t].data_mut()[idx] = w;
            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[t].data()[idx];
            worst = worst.max(relative_error(exact, numeric));
        }
    }
    Ok(worst)
}

fn relative_error<T: Real>(a: T, b: T) -> f64 {
    let (a, b) = (a.as_f64(), b.as_f64());
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}
