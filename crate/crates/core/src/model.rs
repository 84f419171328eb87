//! Two-class linear softmax classifier with prior-scaled probabilities.
//!
//! The classifier is a dense weight matrix (2 x D) plus bias. During local
//! training the predicted distribution is scaled by dividing each class
//! probability by that client's empirical prior raised to `beta`, then
//! renormalized with a softmax; at inference the distribution is rescaled
//! by multiplying with the priors instead. The training loss is the
//! negative log-likelihood of the true label under the scaled
//! distribution, with an exact analytic gradient.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::seeding;

pub const CLASS_COUNT: usize = 2;

const CHECKPOINT_MAGIC: [u8; 4] = *b"FPMD";
const CHECKPOINT_VERSION: u32 = 1;

/// Dense parameters of the classifier. Also used as the container for
/// gradients, which have the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) dim: usize,
    /// Row-major `CLASS_COUNT x dim`.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: [f64; 2],
}

/// Which per-instance loss the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Negative log-likelihood of the true label under the scaled
    /// distribution.
    #[default]
    TrueLabelNll,
    /// Sum of negative log scaled probabilities over both classes,
    /// independent of the true label. Kept for comparison runs.
    BothClassesNll,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> ModelParams {
        ModelParams {
            dim,
            weights: vec![0.0; CLASS_COUNT * dim],
            bias: [0.0; 2],
        }
    }

    /// Seeded small-Gaussian initialization: weights from a normal with
    /// standard deviation 0.01, bias zero.
    pub fn seeded_gaussian(dim: usize, seed: u64) -> ModelParams {
        let mut rng = seeding::derived_rng(&[seeding::TAG_INIT, seed]);
        let normal = Normal::new(0.0, 0.01).expect("valid std dev");
        let weights = (0..CLASS_COUNT * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        ModelParams {
            dim,
            weights,
            bias: [0.0; 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> [f64; 2] {
        self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite()) && self.bias.iter().all(|b| b.is_finite())
    }

    fn shape_label(&self) -> String {
        format!("{}x{}", CLASS_COUNT, self.dim)
    }

    pub(crate) fn check_same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::ShapeMismatch {
                expected: self.shape_label(),
                actual: other.shape_label(),
            });
        }
        Ok(())
    }

    /// Checkpoint encoding: magic, version, class count, dimension, then
    /// all weights (row-major) and the bias as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * (self.weights.len() + 2));
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(CLASS_COUNT as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &self.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
        let fail = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 {
            return Err(fail("truncated header"));
        }
        if bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let classes = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if classes != CLASS_COUNT {
            return Err(Error::Checkpoint(format!(
                "unsupported class count {classes}"
            )));
        }
        let dim = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let expected = 20 + 8 * (CLASS_COUNT * dim + 2);
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes for dimension {dim}, got {}",
                bytes.len()
            )));
        }
        let mut doubles = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let weights: Vec<f64> = doubles.by_ref().take(CLASS_COUNT * dim).collect();
        let bias = [doubles.next().unwrap(), doubles.next().unwrap()];
        let params = ModelParams { dim, weights, bias };
        if !params.is_finite() {
            return Err(fail("non-finite parameter entries"));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        ModelParams::from_bytes(&bytes)
    }
}

/// Numerically stable two-way softmax (max subtraction).
fn softmax2(args: [f64; 2]) -> [f64; 2] {
    let m = args[0].max(args[1]);
    let e0 = (args[0] - m).exp();
    let e1 = (args[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Index of the larger component; ties go to class 0.
pub fn argmax2(v: [f64; 2]) -> u8 {
    u8::from(v[1] > v[0])
}

fn check_scaling_inputs(priors: [f64; 2], beta: f64) -> Result<()> {
    for p in priors {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "prior {p} outside the open interval (0, 1)"
            )));
        }
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Domain(format!(
            "beta {beta} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Class probabilities `softmax(W x + b)`.
pub fn forward(params: &ModelParams, x: &FeatureVector) -> Result<[f64; 2]> {
    if x.dim() != params.dim {
        return Err(Error::ShapeMismatch {
            expected: params.shape_label(),
            actual: format!("input of dimension {}", x.dim()),
        });
    }
    let xs = x.values();
    let mut logits = params.bias;
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = params.weights_row(c);
        *logit += row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>();
    }
    if !logits.iter().all(|l| l.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    Ok(softmax2(logits))
}

/// Training-time adaptation: divide each class probability by the client's
/// prior raised to `beta`, then renormalize with a softmax.
pub fn scale_train(prob: [f64; 2], priors: [f64; 2], beta: f64) -> Result<[f64; 2]> {
    check_scaling_inputs(priors, beta)?;
    let args = [
        prob[0] / priors[0].powf(beta),
        prob[1] / priors[1].powf(beta),
    ];
    if !args.iter().all(|a| a.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite scaled arguments {args:?}"
        )));
    }
    Ok(softmax2(args))
}

/// Inference-time adaptation: multiply each class probability by the
/// client's prior raised to `beta`, then renormalize with a softmax.
pub fn scale_infer(prob: [f64; 2], priors: [f64; 2], beta: f64) -> Result<[f64; 2]> {
    check_scaling_inputs(priors, beta)?;
    let args = [
        prob[0] * priors[0].powf(beta),
        prob[1] * priors[1].powf(beta),
    ];
    if !args.iter().all(|a| a.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite scaled arguments {args:?}"
        )));
    }
    Ok(softmax2(args))
}

/// Mean loss over the batch and its exact analytic gradient (carried in a
/// `ModelParams`-shaped container).
///
/// Per instance, with `p = softmax(W x + b)`, `c_y = prior_y^beta`,
/// `q = softmax(p / c)`: the [`Objective::TrueLabelNll`] loss is
/// `-log q[t]`. Backpropagation through both softmaxes and the scaling
/// gives `dL/dz_b = p_b (g_b - sum_a g_a p_a)` where `g_a = (dL/dq-pre)_a
/// / c_a` is the upstream softmax gradient divided by the scaling factor.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(&FeatureVector, u8)],
    priors: [f64; 2],
    beta: f64,
    objective: Objective,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    check_scaling_inputs(priors, beta)?;
    let scale = [priors[0].powf(beta), priors[1].powf(beta)];

    let mut loss = 0.0;
    let mut grad = ModelParams::zeros(params.dim);
    for &(x, label) in batch {
        if label > 1 {
            return Err(Error::Domain(format!("label {label} is not binary")));
        }
        let t = usize::from(label);
        let p = forward(params, x)?;
        let s = [p[0] / scale[0], p[1] / scale[1]];
        let q = softmax2(s);

        let ds = match objective {
            Objective::TrueLabelNll => {
                loss -= q[t].ln();
                [
                    q[0] - if t == 0 { 1.0 } else { 0.0 },
                    q[1] - if t == 1 { 1.0 } else { 0.0 },
                ]
            }
            Objective::BothClassesNll => {
                loss -= q[0].ln() + q[1].ln();
                [2.0 * q[0] - 1.0, 2.0 * q[1] - 1.0]
            }
        };
        let g = [ds[0] / scale[0], ds[1] / scale[1]];
        let inner = g[0] * p[0] + g[1] * p[1];
        let dz = [p[0] * (g[0] - inner), p[1] * (g[1] - inner)];

        let xs = x.values();
        for (c, &dzc) in dz.iter().enumerate() {
            grad.bias[c] += dzc;
            let row = &mut grad.weights[c * params.dim..(c + 1) * params.dim];
            for (gw, &v) in row.iter_mut().zip(xs) {
                *gw += dzc * v;
            }
        }
    }

    let n = batch.len() as f64;
    loss /= n;
    for w in &mut grad.weights {
        *w /= n;
    }
    grad.bias[0] /= n;
    grad.bias[1] /= n;

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, grad))
}

/// One gradient-descent step: every entry moves by `-eta * grad`.
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, eta: f64) -> Result<ModelParams> {
    params.check_same_shape(grad)?;
    let weights = params
        .weights
        .iter()
        .zip(&grad.weights)
        .map(|(w, g)| w - eta * g)
        .collect();
    let bias = [
        params.bias[0] - eta * grad.bias[0],
        params.bias[1] - eta * grad.bias[1],
    ];
    Ok(ModelParams {
        dim: params.dim,
        weights,
        bias,
    })
}

/// Test-support gradient oracle: central finite differences over every
/// parameter. Independent of the analytic path in [`loss_and_grad`].
pub fn finite_difference_grad(
    params: &ModelParams,
    batch: &[(&FeatureVector, u8)],
    priors: [f64; 2],
    beta: f64,
    objective: Objective,
    step: f64,
) -> Result<ModelParams> {
    let loss_at = |p: &ModelParams| -> Result<f64> {
        Ok(loss_and_grad(p, batch, priors, beta, objective)?.0)
    };
    let mut grad = ModelParams::zeros(params.dim);
    for i in 0..params.weights.len() {
        let mut hi = params.clone();
        hi.weights[i] += step;
        let mut lo = params.clone();
        lo.weights[i] -= step;
        grad.weights[i] = (loss_at(&hi)? - loss_at(&lo)?) / (2.0 * step);
    }
    for c in 0..2 {
        let mut hi = params.clone();
        hi.bias[c] += step;
        let mut lo = params.clone();
        lo.bias[c] -= step;
        grad.bias[c] = (loss_at(&hi)? - loss_at(&lo)?) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest absolute entrywise difference between two parameter sets.
pub fn max_abs_diff(a: &ModelParams, b: &ModelParams) -> f64 {
    let mut worst = (a.bias[0] - b.bias[0])
        .abs()
        .max((a.bias[1] - b.bias[1]).abs());
    for (x, y) in a.weights.iter().zip(&b.weights) {
        worst = worst.max((x - y).abs());
    }
    worst
}

/// Largest relative disagreement between two same-shaped parameter sets,
/// with near-zero pairs compared absolutely.
pub fn max_relative_error(a: &ModelParams, b: &ModelParams) -> f64 {
    let rel = |x: f64, y: f64| -> f64 {
        let denom = x.abs().max(y.abs());
        if denom < 1e-8 {
            0.0
        } else {
            (x - y).abs() / denom
        }
    };
    let mut worst: f64 = 0.0;
    for (x, y) in a.weights.iter().zip(&b.weights) {
        worst = worst.max(rel(*x, *y));
    }
    for c in 0..2 {
        worst = worst.max(rel(a.bias[c], b.bias[c]));
    }
    worst
}

/// Random model/batch generator shared by the gradient-check tests.
pub fn random_instance(seed: u64) -> (ModelParams, Vec<(FeatureVector, u8)>, [f64; 2], f64) {
    let mut rng = seeding::derived_rng(&[0xF00D, seed]);
    let dim = rng.random_range(3..=10);
    let batch_len = rng.random_range(1..=6);
    let mut params = ModelParams::zeros(dim);
    for w in &mut params.weights {
        *w = rng.random_range(-1.5..1.5);
    }
    params.bias = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let batch: Vec<(FeatureVector, u8)> = (0..batch_len)
        .map(|_| {
            let values = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (FeatureVector::from_values(values), rng.random_range(0..=1))
        })
        .collect();
    let prior_pos: f64 = rng.random_range(0.1..0.9);
    let priors = [1.0 - prior_pos, prior_pos];
    let beta = rng.random_range(0.0..=2.0);
    (params, batch, priors, beta)
}
