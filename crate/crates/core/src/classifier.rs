//! The two trainable parts of the decoupled model: a small tanh feature
//! extractor and a linear `(C+1)`-channel classification head, plus SGD with
//! momentum and weight decay and versioned checkpoints.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{inference_probs, softmax};
use crate::params::LrSchedule;
use crate::rng::StreamRng;

/// Initial head weights are drawn uniformly from `±HEAD_INIT_SCALE`.
pub const HEAD_INIT_SCALE: f64 = 0.01;

/// Named flat parameter tensors, visited in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<(&'static str, &[f64])>;
    fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn is_frozen(&self) -> bool {
        false
    }

    /// Zeroed gradient buffers mirroring the parameter shapes.
    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Affine::zeros(dim, dim);
        for k in 0..dim {
            a.weight[k * dim + k] = 1.0;
        }
        a
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut StreamRng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut a = Affine::zeros(in_dim, out_dim);
        for w in &mut a.weight {
            *w = rng.random_range(-bound..bound);
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dW += g x^T`, `db += g` and returns `W^T g`.
    fn backward(&self, x: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for k in 0..self.in_dim {
                grow[k] += g * x[k];
                grad_in[k] += g * row[k];
            }
        }
        grad_in
    }
}

/// Stack of affine layers, each followed by `tanh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub layers: Vec<Affine>,
    pub frozen: bool,
}

/// Layer inputs and outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExtractorTrace {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ExtractorTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&[], Vec::as_slice)
    }
}

impl FeatureExtractor {
    pub fn new(input_dim: usize, dim: usize, depth: usize, rng: &mut StreamRng) -> Self {
        let layers = (0..depth)
            .map(|k| Affine::glorot(if k == 0 { input_dim } else { dim }, dim, rng))
            .collect();
        FeatureExtractor {
            layers,
            frozen: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.outputs.pop().unwrap_or_default())
    }

    pub fn trace(&self, x: &[f64]) -> Result<ExtractorTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "extractor input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let out: Vec<f64> = layer.forward(&cur).into_iter().map(f64::tanh).collect();
            inputs.push(std::mem::replace(&mut cur, out.clone()));
            outputs.push(out);
        }
        Ok(ExtractorTrace { inputs, outputs })
    }

    /// Accumulates parameter gradients for `dL/dh = grad_h` into `grads`
    /// (ordered as [`Parameters::params`]).
    pub fn backward(&self, trace: &ExtractorTrace, grad_h: &[f64], grads: &mut [Vec<f64>]) {
        let mut g = grad_h.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            for (gi, y) in g.iter_mut().zip(&trace.outputs[k]) {
                *gi *= 1.0 - y * y;
            }
            let (gw, rest) = grads[2 * k..].split_at_mut(1);
            g = layer.backward(&trace.inputs[k], &g, &mut gw[0], &mut rest[0]);
        }
    }
}

impl Parameters for FeatureExtractor {
    fn params(&self) -> Vec<(&'static str, &[f64])> {
        self.layers
            .iter()
            .flat_map(|l| [("extractor.weight", l.weight.as_slice()), ("extractor.bias", l.bias.as_slice())])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    ("extractor.weight", l.weight.as_mut_slice()),
                    ("extractor.bias", l.bias.as_mut_slice()),
                ]
            })
            .collect()
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Linear head `z = W h + b` with `C` foreground rows and the objectness row
/// last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub linear: Affine,
}

impl ClassifierHead {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        ClassifierHead {
            linear: Affine::zeros(dim, num_classes + 1),
        }
    }

    pub fn new(dim: usize, num_classes: usize, rng: &mut StreamRng) -> Self {
        let mut head = ClassifierHead::zeros(dim, num_classes);
        for w in &mut head.linear.weight {
            *w = rng.random_range(-HEAD_INIT_SCALE..HEAD_INIT_SCALE);
        }
        head
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim - 1
    }

    pub fn dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim() {
            return Err(Error::Shape {
                context: "head input",
                expected: self.dim(),
                actual: h.len(),
            });
        }
        Ok(self.linear.forward(h))
    }

    /// Accumulates weight/bias gradients and returns `dL/dh`.
    pub fn backward(&self, h: &[f64], grad_z: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let (gw, gb) = grads.split_at_mut(1);
        self.linear.backward(h, grad_z, &mut gw[0], &mut gb[0])
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let d = self.dim();
        &self.linear.weight[class * d..(class + 1) * d]
    }
}

impl Parameters for ClassifierHead {
    fn params(&self) -> Vec<(&'static str, &[f64])> {
        vec![("head.weight", &self.linear.weight), ("head.bias", &self.linear.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("head.weight", &mut self.linear.weight),
            ("head.bias", &mut self.linear.bias),
        ]
    }
}

/// L2 norm of each foreground weight row.
pub fn weight_norms(head: &ClassifierHead) -> Vec<f64> {
    (0..head.num_classes())
        .map(|c| head.weight_row(c).iter().map(|w| w * w).sum::<f64>().sqrt())
        .collect()
}

/// SGD with momentum, L2 weight decay folded into the gradient, and a step
/// learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub lr: f64,
    pub step: u64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(schedule: LrSchedule, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            lr: schedule.initial,
            schedule,
            step: 0,
            velocity: Vec::new(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.schedule.lr_at_epoch(epoch);
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// `v <- momentum v + (g + wd p)`, `p <- p - lr v`. Leaves frozen
    /// parameter sets untouched. Nothing is modified if any gradient is
    /// non-finite or misshapen.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Vec<f64>]) -> Result<()> {
        if params.is_frozen() {
            return Ok(());
        }
        let shapes: Vec<(&'static str, usize)> = params.params().iter().map(|(n, p)| (*n, p.len())).collect();
        if grads.len() != shapes.len() {
            return Err(Error::Shape {
                context: "gradient list",
                expected: shapes.len(),
                actual: grads.len(),
            });
        }
        for ((name, len), g) in shapes.iter().zip(grads) {
            if g.len() != *len {
                return Err(Error::Shape {
                    context: "gradient tensor",
                    expected: *len,
                    actual: g.len(),
                });
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}[{k}]")));
            }
        }
        if self.velocity.len() != shapes.len() {
            self.velocity = shapes.iter().map(|(_, n)| vec![0.0; *n]).collect();
        }
        for (((_, p), g), v) in params.params_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for k in 0..p.len() {
                v[k] = self.momentum * v[k] + (g[k] + self.weight_decay * p[k]);
                p[k] -= self.lr * v[k];
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// How logits become class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Per-channel sigmoids gated by objectness.
    Sigmoid,
    /// One softmax over all `C+1` channels.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
    pub scoring: Scoring,
}

impl Model {
    pub fn new(input_dim: usize, dim: usize, num_classes: usize, scoring: Scoring, rng: &mut StreamRng) -> Self {
        let extractor = FeatureExtractor::new(input_dim, dim, 2, rng);
        let head = ClassifierHead::new(dim, num_classes, rng);
        Model {
            extractor,
            head,
            scoring,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.forward(&self.extractor.extract(x)?)
    }

    /// Probabilities over the `C+1` channels; the last entry is background.
    pub fn probs_from_logits(&self, z: &[f64]) -> Vec<f64> {
        match self.scoring {
            Scoring::Sigmoid => inference_probs(z),
            Scoring::Softmax => softmax(z),
        }
    }

    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probs_from_logits(&self.logits(x)?))
    }
}

pub const CHECKPOINT_FORMAT: &str = "bacl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved model with the stage and mode that produced it. Stored as JSON
/// carrying `format` and `version` tags; floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub stage: u8,
    pub mode: String,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(stage: u8, mode: &str, model: Model) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            stage,
            mode: mode.to_string(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
