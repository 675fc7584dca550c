//! Feed-forward classifiers: definition, forward pass, backpropagation and
//! text serialization.
//!
//! Logits are the output of the last layer before the softmax; the softmax is
//! applied only to report probabilities and never enters verification.

mod probe;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KvDocument;

pub use probe::{linear_probe, ProbeMode, ProbeReport};
pub use train::{
    evaluate, train, AdversarySource, Confusion, EpochMetrics, Evaluation, TrainConfig,
    TrainOutcome, TrainingSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softmax" => Ok(Activation::Softmax),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// The classifier architecture: `input → 256 → 128 → classes` with ReLU hidden
/// layers and a softmax output. Every layer beyond three inserts another
/// 128-wide ReLU layer before the output.
pub fn classifier_spec(input_dim: usize, layers: usize, classes: usize) -> Result<Vec<LayerSpec>> {
    if layers < 3 {
        return Err(Error::BadSpec(format!("classifier needs at least 3 layers, got {layers}")));
    }
    let mut spec = vec![
        LayerSpec::new(input_dim, 256, Activation::Relu),
        LayerSpec::new(256, 128, Activation::Relu),
    ];
    for _ in 3..layers {
        spec.push(LayerSpec::new(128, 128, Activation::Relu));
    }
    spec.push(LayerSpec::new(128, classes, Activation::Softmax));
    Ok(spec)
}

/// One fully-connected layer; `weights` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) spec: LayerSpec,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Dense {
    pub fn new(spec: LayerSpec, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::BadSpec("layer dimensions must be positive".into()));
        }
        if weights.len() != spec.in_dim * spec.out_dim || bias.len() != spec.out_dim {
            return Err(Error::BadSpec(format!(
                "layer {}x{} needs {} weights and {} biases, got {} and {}",
                spec.out_dim,
                spec.in_dim,
                spec.in_dim * spec.out_dim,
                spec.out_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::BadSpec("non-finite layer parameter".into()));
        }
        Ok(Self {
            spec,
            weights,
            bias,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.spec.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.spec.in_dim..(o + 1) * self.spec.in_dim]
    }

    /// Pre-activation `W a + b`. Each row accumulates left to right and adds
    /// the bias last; interval propagation mirrors this order.
    pub fn affine(&self, a: &[f64]) -> Vec<f64> {
        (0..self.spec.out_dim)
            .map(|o| {
                let mut acc = 0.0;
                for (w, v) in self.row(o).iter().zip(a) {
                    acc += w * v;
                }
                acc + self.bias[o]
            })
            .collect()
    }

    /// Activation applied on the forward path (softmax is deferred).
    pub(crate) fn activate(&self, mut z: Vec<f64>) -> Vec<f64> {
        if self.spec.activation == Activation::Relu {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        z
    }
}

/// Logits and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln Σ exp(logits) − logits[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Scalar objectives whose input gradient the attacks follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputObjective {
    /// Cross-entropy against `label`.
    CrossEntropy(usize),
    /// `max_{j≠t} logit_j − logit_t`; positive exactly when `t` loses.
    Misclassification(usize),
}

impl InputObjective {
    pub fn value(self, logits: &[f64]) -> f64 {
        match self {
            InputObjective::CrossEntropy(label) => cross_entropy(logits, label),
            InputObjective::Misclassification(t) => -margin_of(logits, t),
        }
    }

    fn logit_gradient(self, logits: &[f64]) -> Vec<f64> {
        match self {
            InputObjective::CrossEntropy(label) => {
                let mut g = softmax(logits);
                g[label] -= 1.0;
                g
            }
            InputObjective::Misclassification(t) => {
                let mut g = vec![0.0; logits.len()];
                if let Some(j) = runner_up(logits, t) {
                    g[j] = 1.0;
                    g[t] = -1.0;
                }
                g
            }
        }
    }
}

fn runner_up(logits: &[f64], target: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, v) in logits.iter().enumerate() {
        if j != target && best.is_none_or(|b| *v > logits[b]) {
            best = Some(j);
        }
    }
    best
}

/// `logit_t − max_{j≠t} logit_j`.
pub fn margin_of(logits: &[f64], target: usize) -> f64 {
    match runner_up(logits, target) {
        Some(j) => logits[target] - logits[j],
        None => f64::INFINITY,
    }
}

/// Parameter-shaped gradient (or optimizer state).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
}

impl MlpNetwork {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::BadSpec("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::BadSpec(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        if layers[..last]
            .iter()
            .any(|l| l.activation() == Activation::Softmax)
        {
            return Err(Error::BadSpec("softmax is only allowed on the last layer".into()));
        }
        Ok(Self { layers })
    }

    /// Uniform `±√(6 / (in + out))` weights, zero biases.
    pub fn init(spec: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.len());
        for s in spec {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::BadSpec("layer dimensions must be positive".into()));
            }
            let limit = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let weights = (0..s.in_dim * s.out_dim)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            layers.push(Dense::new(*s, weights, vec![0.0; s.out_dim])?);
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Output> {
        self.check_input(x)?;
        let logits = self.logits(x);
        let probabilities = softmax(&logits);
        Ok(Output {
            logits,
            probabilities,
        })
    }

    /// Logits for an input of the right dimension.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.activate(l.affine(&a));
        }
        a
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// `logit_t − max_{j≠t} logit_j` at `x`.
    pub fn margin(&self, x: &[f64], target: usize) -> f64 {
        margin_of(&self.logits(x), target)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's input and pre-activation.
    fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.affine(&a);
            inputs.push(a);
            a = l.activate(z.clone());
            pre.push(z);
        }
        (inputs, pre, a)
    }

    /// Backpropagates `dlogits` for one input, accumulating parameter
    /// gradients into `grads` (when given) and returning `∂/∂x`.
    fn backprop(&self, x: &[f64], dlogits_of: impl FnOnce(&[f64]) -> Vec<f64>, mut grads: Option<&mut Gradients>) -> Vec<f64> {
        let (inputs, pre, logits) = self.trace(x);
        let mut delta = dlogits_of(&logits);
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.activation() == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&pre[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let a = &inputs[li];
            if let Some(g) = grads.as_deref_mut() {
                let lg = &mut g.layers[li];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    lg.bias[o] += d;
                    let row = &mut lg.weights[o * l.in_dim()..(o + 1) * l.in_dim()];
                    for (w, v) in row.iter_mut().zip(a) {
                        *w += d * v;
                    }
                }
            }
            let mut prev = vec![0.0; l.in_dim()];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(l.row(o)) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Mean cross-entropy over `batch` and its exact parameter gradient.
    pub fn gradients(&self, batch: &[(&[f64], usize)]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for (x, label) in batch {
            let label = *label;
            self.backprop(
                x,
                |logits| {
                    loss += cross_entropy(logits, label);
                    InputObjective::CrossEntropy(label).logit_gradient(logits)
                },
                Some(&mut grads),
            );
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        (loss / n, grads)
    }

    /// Gradient of `objective` with respect to the input.
    pub fn input_gradient(&self, x: &[f64], objective: InputObjective) -> Vec<f64> {
        self.backprop(x, |logits| objective.logit_gradient(logits), None)
    }

    pub(crate) fn apply_update(&mut self, step: &Gradients) {
        for (l, s) in self.layers.iter_mut().zip(&step.layers) {
            for (w, d) in l.weights.iter_mut().zip(&s.weights) {
                *w -= d;
            }
            for (b, d) in l.bias.iter_mut().zip(&s.bias) {
                *b -= d;
            }
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Key-value document with every parameter at 17 significant digits.
    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("format", "mlp/1");
        doc.set("layers", self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            doc.set(format!("layer.{i}.in"), l.in_dim());
            doc.set(format!("layer.{i}.out"), l.out_dim());
            doc.set(format!("layer.{i}.activation"), l.activation());
            doc.set(format!("layer.{i}.weights"), fmt17(&l.weights));
            doc.set(format!("layer.{i}.bias"), fmt17(&l.bias));
        }
        doc
    }

    pub fn from_document(doc: &KvDocument) -> Result<Self> {
        let format = doc.require("format")?;
        if format != "mlp/1" {
            return Err(Error::Config {
                key: "format".into(),
                message: format!("expected mlp/1, found {format:?}"),
            });
        }
        let n: usize = doc.parse_value("layers")?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let spec = LayerSpec::new(
                doc.parse_value(&format!("layer.{i}.in"))?,
                doc.parse_value(&format!("layer.{i}.out"))?,
                doc.parse_value(&format!("layer.{i}.activation"))?,
            );
            let weights = doc.floats(&format!("layer.{i}.weights"))?;
            let bias = doc.floats(&format!("layer.{i}.bias"))?;
            layers.push(Dense::new(spec, weights, bias)?);
        }
        Self::from_layers(layers)
    }
}

fn fmt17(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn linear(w: &[&[f64]], b: &[f64]) -> MlpNetwork {
        let out = w.len();
        let inp = w[0].len();
        let weights = w.iter().flat_map(|r| r.iter().copied()).collect();
        MlpNetwork::from_layers(vec![Dense::new(
            LayerSpec::new(inp, out, Activation::Identity),
            weights,
            b.to_vec(),
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let spec = [LayerSpec::new(2, 2, Activation::Identity)];
        let a = MlpNetwork::init(&spec, 7).unwrap();
        assert_eq!(a, MlpNetwork::init(&spec, 7).unwrap());
        assert_ne!(MlpNetwork::init(&spec, 0).unwrap(), MlpNetwork::init(&spec, 1).unwrap());
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= limit));
        assert!(a.layers()[0].bias().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn classifier_parameter_count() {
        let net = MlpNetwork::init(&classifier_spec(384, 3, 2).unwrap(), 0).unwrap();
        assert_eq!(net.parameter_count(), 384 * 256 + 256 + 256 * 128 + 128 + 128 * 2 + 2);
        assert_eq!(net.parameter_count(), 131_714);
        let deeper = classifier_spec(384, 5, 2).unwrap();
        assert_eq!(deeper.len(), 5);
        assert_eq!(deeper[2], LayerSpec::new(128, 128, Activation::Relu));
        assert!(classifier_spec(384, 2, 2).is_err());
    }

    #[test]
    fn bad_specs() {
        let a = Dense::new(LayerSpec::new(2, 3, Activation::Softmax), vec![0.0; 6], vec![0.0; 3]).unwrap();
        let b = Dense::new(LayerSpec::new(3, 2, Activation::Identity), vec![0.0; 6], vec![0.0; 2]).unwrap();
        assert!(MlpNetwork::from_layers(vec![a.clone(), b.clone()]).is_err());
        assert!(MlpNetwork::from_layers(vec![b.clone(), b]).is_err());
        assert!(Dense::new(LayerSpec::new(2, 2, Activation::Relu), vec![0.0; 3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = linear(&[&[0.0, 0.0], &[0.0, 0.0]], &[0.0, 0.0]);
        let out = zero.forward(&[3.0, -2.0]).unwrap();
        assert_eq!(out.logits, vec![0.0, 0.0]);
        assert_eq!(out.probabilities, vec![0.5, 0.5]);

        let eye = linear(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let out = eye.forward(&[3.0, 1.0]).unwrap();
        assert_eq!(out.logits, vec![3.0, 1.0]);
        let p0 = 3f64.exp() / (3f64.exp() + 1f64.exp());
        assert!((out.probabilities[0] - p0).abs() < 1e-15);
        assert!((p0 - 0.8808).abs() < 1e-4);
        assert!(matches!(eye.forward(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn symmetric_bias_gradient() {
        let spec = [LayerSpec::new(3, 4, Activation::Relu), LayerSpec::new(4, 2, Activation::Softmax)];
        let mut net = MlpNetwork::init(&spec, 1).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let a = [1.0, 2.0, 3.0];
        let b = [-1.0, 0.5, 0.0];
        let (_, g) = net.gradients(&[(&a, 0), (&b, 1), (&b, 0), (&a, 1)]);
        let last = &g.layers[1].bias;
        assert_eq!(last[0], -last[1]);
    }

    #[test]
    fn linear_input_gradient_is_weight_difference() {
        let net = linear(&[&[0.5, -2.0, 1.0], &[1.5, 0.25, -1.0]], &[0.1, -0.2]);
        let x = [0.3, -0.7, 2.0];
        // objective logit_1 − logit_0 for target 0
        let g = net.input_gradient(&x, InputObjective::Misclassification(0));
        assert_eq!(g, vec![1.5 - 0.5, 0.25 + 2.0, -1.0 - 1.0]);
        let g1 = net.input_gradient(&x, InputObjective::Misclassification(1));
        assert_eq!(g1, vec![0.5 - 1.5, -2.0 - 0.25, 1.0 + 1.0]);
    }

    #[test]
    fn document_round_trip_is_exact() {
        let net = MlpNetwork::init(&classifier_spec(5, 4, 2).unwrap(), 3).unwrap();
        let text = net.to_document().to_text("net");
        let back = MlpNetwork::from_document(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
