use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, cross_entropy, Gradients, MlpNetwork};
use crate::dataset::{BinaryLabel, EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::RegionSet;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the clean cross-entropy term.
    pub alpha: f64,
    /// Weight of the adversarial cross-entropy term.
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !(self.alpha + self.beta > 0.0) {
            return bad("loss weights need alpha >= 0, beta >= 0 and alpha + beta > 0");
        }
        Ok(())
    }
}

/// Supplies perturbed, labeled inputs for the adversarial loss term. Called
/// once per optimizer step with the current network.
pub trait AdversarySource {
    fn generate(&mut self, net: &MlpNetwork) -> Result<Vec<(Vec<f64>, usize)>>;
}

/// Inputs with class indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    /// One split under the binary view (ambiguous counts as positive).
    pub fn binary(dataset: &EmbeddingDataset, split: Split) -> Self {
        let mut set = Self::default();
        for r in dataset.split_records(split) {
            set.inputs.push(r.vector.clone());
            set.labels.push(r.label.binary().index());
        }
        set
    }

    /// Records from `splits` under the three-way labels.
    pub fn three_way(dataset: &EmbeddingDataset, splits: &[Split]) -> Self {
        let mut set = Self::default();
        for split in splits {
            for r in dataset.split_records(*split) {
                set.inputs.push(r.vector.clone());
                set.labels.push(r.label.index());
            }
        }
        set
    }

    pub fn push(&mut self, x: Vec<f64>, label: usize) {
        self.inputs.push(x);
        self.labels.push(label);
    }

    pub fn extend_with(&mut self, points: Vec<Vec<f64>>, label: usize) {
        self.labels.extend(std::iter::repeat_n(label, points.len()));
        self.inputs.extend(points);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Mean cross-entropy and accuracy of `net` on this set.
    pub fn loss_and_accuracy(&self, net: &MlpNetwork, exec: Exec) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 0.0);
        }
        let per: Vec<(f64, bool)> = exec.map_range(self.len(), |i| {
            let logits = net.logits(&self.inputs[i]);
            (
                cross_entropy(&logits, self.labels[i]),
                argmax(&logits) == self.labels[i],
            )
        });
        let n = self.len() as f64;
        let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
        let acc = per.iter().filter(|p| p.1).count() as f64 / n;
        (loss, acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean weighted objective over the epoch's batches.
    pub objective: f64,
    /// Clean cross-entropy on the whole training set after the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: MlpNetwork,
    pub initial_loss: f64,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(self.initial_loss, |m| m.loss)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.accuracy)
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(net: &MlpNetwork, lr: f64) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut MlpNetwork, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let mut update = Gradients::zeros_like(net);
        for ((ul, gl), (ml, vl)) in update
            .layers
            .iter_mut()
            .zip(&g.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            let pairs = ul
                .weights
                .iter_mut()
                .zip(&gl.weights)
                .zip(ml.weights.iter_mut().zip(vl.weights.iter_mut()))
                .chain(
                    ul.bias
                        .iter_mut()
                        .zip(&gl.bias)
                        .zip(ml.bias.iter_mut().zip(vl.bias.iter_mut())),
                );
            for ((u, gv), (m, v)) in pairs {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gv;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gv * gv;
                let mh = *m / c1;
                let vh = *v / c2;
                *u = self.lr * mh / (vh.sqrt() + ADAM_EPSILON);
            }
        }
        net.apply_update(&update);
    }
}

/// Mini-batch Adam on `alpha · CE(clean) + beta · CE(adversarial)`.
///
/// The adversarial term is only evaluated when an adversary is attached and
/// `beta > 0`; otherwise the run is identical to one without adversary.
pub fn train(
    net: &MlpNetwork,
    data: &TrainingSet,
    config: &TrainConfig,
    mut adversary: Option<&mut dyn AdversarySource>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    for x in &data.inputs {
        net.check_input(x)?;
    }
    if let Some(l) = data.labels.iter().find(|l| **l >= net.output_dim()) {
        return Err(Error::BadSpec(format!(
            "label {l} out of range for {} outputs",
            net.output_dim()
        )));
    }

    let exec = Exec::default();
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&net, config.learning_rate);
    let (initial_loss, _) = data.loss_and_accuracy(&net, exec);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut objective_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (data.inputs[i].as_slice(), data.labels[i]))
                .collect();
            let (clean, mut grads) = net.gradients(&batch);
            grads.scale(config.alpha);
            let mut objective = config.alpha * clean;

            if config.beta > 0.0 {
                if let Some(adv) = adversary.as_deref_mut() {
                    let samples = adv.generate(&net)?;
                    if !samples.is_empty() {
                        let adv_batch: Vec<(&[f64], usize)> =
                            samples.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
                        let (adv_loss, adv_grads) = net.gradients(&adv_batch);
                        grads.add_scaled(&adv_grads, config.beta);
                        objective += config.beta * adv_loss;
                    }
                }
            }
            if !objective.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut net, &grads);
            objective_sum += objective;
            batches += 1;
        }
        if !net.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let (loss, accuracy) = data.loss_and_accuracy(&net, exec);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochMetrics {
            epoch,
            objective: objective_sum / batches as f64,
            loss,
            accuracy,
        });
    }
    Ok(TrainOutcome {
        network: net,
        initial_loss,
        history,
    })
}

/// Binary confusion counts indexed `[true][predicted]` by class index
/// (0 = positive, 1 = negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn get(&self, truth: BinaryLabel, predicted: BinaryLabel) -> usize {
        self.counts[truth.index()][predicted.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: usize,
    pub correct: usize,
    /// `correct / total`; 0 for an empty split.
    pub accuracy: f64,
    pub confusion: Confusion,
    /// `(points inside the region, correctly classified among them)`.
    pub in_region: Option<(usize, usize)>,
}

impl Evaluation {
    pub fn in_region_accuracy(&self) -> Option<f64> {
        self.in_region
            .and_then(|(n, c)| (n > 0).then(|| c as f64 / n as f64))
    }
}

/// Accuracy of a binary classifier on one split under the binary labels.
pub fn evaluate(
    net: &MlpNetwork,
    dataset: &EmbeddingDataset,
    split: Split,
    region: Option<&RegionSet>,
    exec: Exec,
) -> Evaluation {
    let records = dataset.split_records(split);
    let rows: Vec<(BinaryLabel, Option<BinaryLabel>, bool)> = exec.map(&records, |r| {
        let pred = BinaryLabel::from_index(net.predict(&r.vector));
        let inside = region.is_some_and(|s| s.box_containing(&r.vector).is_some());
        (r.label.binary(), pred, inside)
    });
    let mut confusion = Confusion::default();
    let mut correct = 0;
    let mut inside = (0, 0);
    for (truth, pred, hit) in &rows {
        let ok = Some(*truth) == *pred;
        if let Some(p) = pred {
            confusion.counts[truth.index()][p.index()] += 1;
        }
        correct += ok as usize;
        if *hit {
            inside.0 += 1;
            inside.1 += ok as usize;
        }
    }
    let total = rows.len();
    Evaluation {
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        confusion,
        in_region: region.map(|_| inside),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbeddingRecord, Label};
    use crate::geometry::{Hyperrectangle, RegionKind};
    use crate::network::{Activation, Dense, LayerSpec};
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = TrainingSet::default();
        for i in 0..n {
            let label = i % 2;
            let c = if label == 0 { -2.0 } else { 2.0 };
            set.push(
                vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                label,
            );
        }
        set
    }

    fn small_net(seed: u64) -> MlpNetwork {
        MlpNetwork::init(
            &[
                LayerSpec::new(2, 8, Activation::Relu),
                LayerSpec::new(8, 2, Activation::Softmax),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let data = blobs(200, 1);
        let config = TrainConfig { epochs: 50, ..Default::default() };
        let out = train(&small_net(2), &data, &config, None).unwrap();
        assert_eq!(out.final_accuracy(), 1.0);
        assert!(out.final_loss() < out.initial_loss);
        assert_eq!(out.history.len(), 50);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(64, 3);
        let config = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
        let a = train(&small_net(0), &data, &config, None).unwrap();
        let b = train(&small_net(0), &data, &config, None).unwrap();
        assert_eq!(a.network, b.network);
    }

    struct Counting(usize);
    impl AdversarySource for Counting {
        fn generate(&mut self, _: &MlpNetwork) -> Result<Vec<(Vec<f64>, usize)>> {
            self.0 += 1;
            Ok(vec![(vec![0.0, 0.0], 1)])
        }
    }

    #[test]
    fn zero_beta_ignores_adversary() {
        let data = blobs(64, 4);
        let config = TrainConfig { epochs: 2, beta: 0.0, ..Default::default() };
        let plain = train(&small_net(5), &data, &config, None).unwrap();
        let mut adv = Counting(0);
        let with = train(&small_net(5), &data, &config, Some(&mut adv)).unwrap();
        assert_eq!(plain.network, with.network);
        assert_eq!(adv.0, 0);

        let config = TrainConfig { beta: 1.0, ..config };
        let mut adv = Counting(0);
        let used = train(&small_net(5), &data, &config, Some(&mut adv)).unwrap();
        assert_eq!(adv.0, 4);
        assert_ne!(used.network, plain.network);
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = TrainingSet {
            inputs: vec![vec![1e300, 1e300]],
            labels: vec![0],
        };
        let net = MlpNetwork::from_layers(vec![Dense::new(
            LayerSpec::new(2, 2, Activation::Identity),
            vec![1e10, 1e10, -1e10, -1e10],
            vec![0.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(train(&net, &data, &config, None), Err(Error::Divergence { epoch: 0 })));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: 0.0, beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    fn rec(id: &str, x: f64, label: Label) -> EmbeddingRecord {
        EmbeddingRecord { id: id.into(), vector: vec![x], label, split: Split::Test }
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let ds = EmbeddingDataset::new(
            1,
            vec![rec("a", 0.0, Label::Positive), rec("b", 1.0, Label::Negative)],
        )
        .unwrap();
        let net = MlpNetwork::from_layers(vec![Dense::new(
            LayerSpec::new(1, 2, Activation::Softmax),
            vec![0.0, 0.0],
            vec![1.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        let e = evaluate(&net, &ds, Split::Test, None, Exec::Sequential);
        assert_eq!(e.accuracy, 0.5);
    }

    #[test]
    fn hand_enumerated_confusion() {
        // predicts positive iff x < 0: logits (−x, x)
        let net = MlpNetwork::from_layers(vec![Dense::new(
            LayerSpec::new(1, 2, Activation::Softmax),
            vec![-1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        let ds = EmbeddingDataset::new(
            1,
            vec![
                rec("1", -2.0, Label::Positive),  // TP
                rec("2", -1.0, Label::Ambiguous), // TP (merged)
                rec("3", 1.5, Label::Positive),   // FN
                rec("4", 2.0, Label::Negative),   // TN
                rec("5", 3.0, Label::Negative),   // TN
                rec("6", -0.5, Label::Negative),  // FP
            ],
        )
        .unwrap();
        let region = RegionSet::single(
            Hyperrectangle::new(vec![-3.0], vec![0.0]).unwrap(),
            RegionKind::Plain,
        );
        let e = evaluate(&net, &ds, Split::Test, Some(&region), Exec::Parallel);
        use BinaryLabel::*;
        assert_eq!(e.confusion.get(Positive, Positive), 2);
        assert_eq!(e.confusion.get(Positive, Negative), 1);
        assert_eq!(e.confusion.get(Negative, Negative), 2);
        assert_eq!(e.confusion.get(Negative, Positive), 1);
        assert_eq!(e.correct, 4);
        assert_eq!(e.in_region, Some((3, 2)));
    }
}
