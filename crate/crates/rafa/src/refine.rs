//! Attention-weighted refinement, context gating, Gaussian dropout, and
//! the softmax classifier with its cross-entropy loss.

use crate::error::{Error, Result};
use crate::regions::LAYER_NORM_EPS;
use crate::rng::Rng;
use crate::tensor::{layer_norm, Tensor};

/// Weights of the refinement stage and classifier.
#[derive(Debug, Clone)]
pub struct RefineParams {
    /// Scoring vector and bias for the attention weighting of the path-B
    /// sequence; absent for variants without weighted refinement.
    pub gate: Option<GateParams>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    /// `c x K`.
    pub classifier_w: Tensor,
    /// `K`.
    pub classifier_b: Tensor,
    /// Gaussian dropout rate in [0, 1).
    pub dropout_rate: f64,
    /// Apply a parameterless layer norm to the logits before the softmax.
    /// Off by default; exists as an ablation switch.
    pub normalize_logits: bool,
}

#[derive(Debug, Clone)]
pub struct GateParams {
    /// `c x 1`.
    pub w_phi: Tensor,
    /// scalar.
    pub b_phi: Tensor,
}

impl GateParams {
    pub fn init(channels: usize, rng: &mut Rng) -> GateParams {
        let bound = 1.0 / (channels as f64).sqrt();
        GateParams {
            w_phi: Tensor::param(
                vec![channels, 1],
                (0..channels).map(|_| rng.uniform(-bound, bound)).collect(),
            )
            .unwrap(),
            b_phi: Tensor::param(vec![1], vec![0.0]).unwrap(),
        }
    }
}

impl RefineParams {
    pub fn init(
        channels: usize,
        classes: usize,
        dropout_rate: f64,
        with_gate: bool,
        rng: &mut Rng,
    ) -> RefineParams {
        let gate = with_gate.then(|| GateParams::init(channels, rng));
        let bound = 1.0 / (channels as f64).sqrt();
        RefineParams {
            gate,
            final_gain: Tensor::param(vec![channels], vec![1.0; channels]).unwrap(),
            final_bias: Tensor::param(vec![channels], vec![0.0; channels]).unwrap(),
            classifier_w: Tensor::param(
                vec![channels, classes],
                (0..channels * classes)
                    .map(|_| rng.uniform(-bound, bound))
                    .collect(),
            )
            .unwrap(),
            classifier_b: Tensor::param(vec![classes], vec![0.0; classes]).unwrap(),
            dropout_rate,
            normalize_logits: false,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(gate) = &self.gate {
            out.push((format!("{prefix}.w_phi"), gate.w_phi.clone()));
            out.push((format!("{prefix}.b_phi"), gate.b_phi.clone()));
        }
        out.push((format!("{prefix}.final_gain"), self.final_gain.clone()));
        out.push((format!("{prefix}.final_bias"), self.final_bias.clone()));
        out.push((format!("{prefix}.classifier_w"), self.classifier_w.clone()));
        out.push((format!("{prefix}.classifier_b"), self.classifier_b.clone()));
        out
    }
}

/// Softmax weighting over the rows of the path-B sequence together with
/// the weight vector itself.
pub fn attention_weights_detailed(
    sequence: &Tensor,
    gate: &GateParams,
) -> Result<(Tensor, Tensor)> {
    let shape = sequence.shape();
    if shape.len() != 2 {
        return Err(Error::Contract(format!(
            "attention weighting expects an R x c sequence, got rank {}",
            shape.len()
        )));
    }
    let r = shape[0];
    let scores = sequence
        .matmul(&gate.w_phi)?
        .add_scalar_param(&gate.b_phi)?
        .reshape(vec![1, r])?;
    let phi = scores.softmax_last();
    let weighted = phi.matmul(sequence)?.reshape(vec![shape[1]])?;
    Ok((weighted, phi.reshape(vec![r])?))
}

/// Attention-weighted sum of the sequence rows.
pub fn attention_weights(sequence: &Tensor, gate: &GateParams) -> Result<Tensor> {
    Ok(attention_weights_detailed(sequence, gate)?.0)
}

/// Context gating with a residual path: `x + x * sigmoid(signal)`.
pub fn context_gate(x: &Tensor, signal: &Tensor) -> Result<Tensor> {
    x.add(&x.mul(&signal.sigmoid())?)
}

/// Standard deviation of the multiplicative dropout noise for rate `q`.
pub fn dropout_noise_std(q: f64) -> f64 {
    (q / (1.0 - q)).sqrt()
}

/// Multiplicative Gaussian noise with mean 1 and std sqrt(q / (1 - q)),
/// active only in training mode. Inference returns the input unchanged.
pub fn gaussian_dropout(x: &Tensor, q: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {q}")));
    }
    if !training || q == 0.0 {
        return Ok(x.clone());
    }
    let std = dropout_noise_std(q);
    let noise: Vec<f64> = (0..x.numel()).map(|_| 1.0 + std * rng.standard_normal()).collect();
    x.mul(&Tensor::new(x.shape(), noise)?)
}

/// Classifier output: the probability vector (still attached to the graph)
/// and its argmax.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Tensor,
    pub predicted_class: usize,
}

/// Dropout, layer norm, affine map to class logits, softmax.
pub fn classify(
    features: &Tensor,
    p: &RefineParams,
    training: bool,
    rng: &mut Rng,
) -> Result<Prediction> {
    let c = features.numel();
    let dropped = gaussian_dropout(features, p.dropout_rate, training, rng)?;
    let normed = layer_norm(&dropped, &p.final_gain, &p.final_bias, LAYER_NORM_EPS)?;
    let mut logits = normed
        .reshape(vec![1, c])?
        .matmul(&p.classifier_w)?
        .add(&p.classifier_b)?;
    if p.normalize_logits {
        let k = logits.numel();
        let unit = Tensor::new(vec![k], vec![1.0; k])?;
        let zero = Tensor::new(vec![k], vec![0.0; k])?;
        logits = layer_norm(&logits, &unit, &zero, LAYER_NORM_EPS)?;
    }
    let probs = logits.softmax_last().reshape(vec![p.classifier_b.numel()])?;
    let predicted_class = argmax(&probs.to_vec());
    Ok(Prediction { probs, predicted_class })
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Negative log likelihood of the true class, with the probability floored
/// at 1e-12 before the log.
pub fn cross_entropy(probs: &Tensor, true_class: usize) -> Result<Tensor> {
    if true_class >= probs.numel() {
        return Err(Error::Contract(format!(
            "class index {true_class} out of range for {} classes",
            probs.numel()
        )));
    }
    Ok(probs.pick(true_class)?.ln_clamped(1e-12).scale(-1.0))
}
