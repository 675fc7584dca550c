use super::train::{train, TrainConfig, TrainingSet};
use super::{Activation, LayerSpec, MlpNetwork};
use crate::dataset::{EmbeddingDataset, Label, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// Fit and score on every record.
    AllData,
    /// Fit on Train, score on Test.
    TrainTest,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub mode: ProbeMode,
    /// Fit accuracy (all-data) or held-out accuracy (train/test).
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub network: MlpNetwork,
}

/// Single affine layer with softmax over the three-way labels, trained with
/// the same engine as the classifier.
pub fn linear_probe(
    dataset: &EmbeddingDataset,
    mode: ProbeMode,
    config: &TrainConfig,
) -> Result<ProbeReport> {
    let present = Label::ALL
        .iter()
        .filter(|l| dataset.records().iter().any(|r| r.label == **l))
        .count();
    if present < 2 {
        return Err(Error::BadSpec("linear probe needs at least two classes".into()));
    }
    let (fit, score) = match mode {
        ProbeMode::AllData => {
            let all = TrainingSet::three_way(dataset, &[Split::Train, Split::Test]);
            (all.clone(), all)
        }
        ProbeMode::TrainTest => (
            TrainingSet::three_way(dataset, &[Split::Train]),
            TrainingSet::three_way(dataset, &[Split::Test]),
        ),
    };
    let spec = [LayerSpec::new(dataset.dim(), Label::ALL.len(), Activation::Softmax)];
    let net = MlpNetwork::init(&spec, config.seed)?;
    let config = TrainConfig {
        alpha: 1.0,
        beta: 0.0,
        ..config.clone()
    };
    let outcome = train(&net, &fit, &config, None)?;
    let exec = Exec::default();
    let (_, train_accuracy) = fit.loss_and_accuracy(&outcome.network, exec);
    let (_, accuracy) = score.loss_and_accuracy(&outcome.network, exec);
    Ok(ProbeReport {
        mode,
        accuracy,
        train_accuracy,
        network: outcome.network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmbeddingRecord;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three clusters on a triangle, radius-1 jitter, 10 apart: linearly
    /// separable by construction.
    fn triangle(n: usize, shuffle_labels: bool) -> EmbeddingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [(0.0, 0.0), (10.0, 0.0), (5.0, 8.66)];
        let mut labels: Vec<Label> = (0..n).map(|i| Label::ALL[i % 3]).collect();
        let coords: Vec<Vec<f64>> = labels
            .iter()
            .map(|l| {
                let (cx, cy) = centers[l.index()];
                let r = rng.random_range(0.0..1.0f64);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                vec![cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect();
        if shuffle_labels {
            labels.shuffle(&mut rng);
        }
        let records = coords
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (vector, label))| EmbeddingRecord {
                id: format!("r{i:04}"),
                vector,
                label,
                split: if i % 4 == 0 { Split::Test } else { Split::Train },
            })
            .collect();
        EmbeddingDataset::new(2, records).unwrap()
    }

    #[test]
    fn separable_fixture_is_fit_exactly() {
        let ds = triangle(300, false);
        let cfg = TrainConfig { epochs: 100, learning_rate: 1e-2, ..Default::default() };
        let rep = linear_probe(&ds, ProbeMode::AllData, &cfg).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        let rep = linear_probe(&ds, ProbeMode::TrainTest, &cfg).unwrap();
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn shuffled_labels_are_near_chance() {
        let ds = triangle(300, true);
        let cfg = TrainConfig { epochs: 100, learning_rate: 1e-2, ..Default::default() };
        let rep = linear_probe(&ds, ProbeMode::AllData, &cfg).unwrap();
        assert!(rep.accuracy <= 0.6, "{}", rep.accuracy);
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = EmbeddingDataset::new(
            1,
            vec![EmbeddingRecord { id: "a".into(), vector: vec![0.0], label: Label::Negative, split: Split::Train }],
        )
        .unwrap();
        assert!(linear_probe(&ds, ProbeMode::AllData, &TrainConfig::default()).is_err());
    }
}
