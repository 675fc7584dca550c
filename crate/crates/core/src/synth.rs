//! Synthetic embedding datasets: one anisotropic Gaussian blob per class,
//! with controllable separation and label noise.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{EmbeddingDataset, EmbeddingRecord, Label, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_ambiguous: usize,
    /// Distance of the negative and ambiguous means from the positive mean,
    /// in units of `sigma`. The two offsets are orthogonal.
    pub separation: f64,
    /// Largest per-axis standard deviation.
    pub sigma: f64,
    /// Ratio between the largest and smallest axis standard deviation; axes
    /// are log-spaced in between and share one random rotation.
    pub anisotropy: f64,
    /// Probability that a record's label is replaced by one of the other two.
    pub label_noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            n_positive: 600,
            n_negative: 600,
            n_ambiguous: 300,
            separation: 6.0,
            sigma: 1.0,
            anisotropy: 4.0,
            label_noise: 0.05,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.to_string()));
        if self.dim < 2 {
            return bad("synthetic data needs at least two dimensions");
        }
        if self.n_positive + self.n_negative + self.n_ambiguous == 0 {
            return bad("synthetic data needs at least one record");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be finite and nonnegative");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.anisotropy >= 1.0 && self.anisotropy.is_finite()) {
            return bad("anisotropy must be at least 1");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label noise must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad("test fraction must be in [0, 1]");
        }
        Ok(())
    }
}

fn random_orthonormal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

pub fn generate(spec: &SynthSpec) -> Result<EmbeddingDataset> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = random_orthonormal(d, &mut rng);
    let offsets = random_orthonormal(d, &mut rng);
    let stds: Vec<f64> = (0..d)
        .map(|i| spec.sigma * spec.anisotropy.powf(-(i as f64) / (d - 1) as f64))
        .collect();
    let shift = spec.separation * spec.sigma;
    let mean = |label: Label| -> Vec<f64> {
        match label {
            Label::Positive => vec![0.0; d],
            Label::Negative => offsets.column(0).iter().map(|v| v * shift).collect(),
            Label::Ambiguous => offsets.column(1).iter().map(|v| v * shift).collect(),
        }
    };

    let mut records = Vec::new();
    for (label, count) in [
        (Label::Positive, spec.n_positive),
        (Label::Negative, spec.n_negative),
        (Label::Ambiguous, spec.n_ambiguous),
    ] {
        let mu = mean(label);
        for i in 0..count {
            let g: Vec<f64> = stds
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let vector = (0..d)
                .map(|r| {
                    let v = mu[r] + (0..d).map(|c| shape[(r, c)] * g[c]).sum::<f64>();
                    v as f32 as f64
                })
                .collect();
            let noisy = if rng.random::<f64>() < spec.label_noise {
                let others: Vec<Label> = Label::ALL.into_iter().filter(|l| *l != label).collect();
                others[rng.random_range(0..others.len())]
            } else {
                label
            };
            let split = if rng.random::<f64>() < spec.test_fraction {
                Split::Test
            } else {
                Split::Train
            };
            records.push(EmbeddingRecord {
                id: format!("{}-{i:06}", label.as_str().to_lowercase()),
                vector,
                label: noisy,
                split,
            });
        }
    }
    EmbeddingDataset::new(d, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{linear_probe, ProbeMode, TrainConfig};

    #[test]
    fn regeneration_is_byte_identical() {
        let spec = SynthSpec { n_positive: 50, n_negative: 40, n_ambiguous: 10, ..Default::default() };
        assert_eq!(generate(&spec).unwrap().to_bytes(), generate(&spec).unwrap().to_bytes());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().to_bytes(), generate(&other).unwrap().to_bytes());
    }

    #[test]
    fn counts_and_noise() {
        let spec = SynthSpec { label_noise: 0.0, ..Default::default() };
        let ds = generate(&spec).unwrap();
        let count = |l| ds.records().iter().filter(|r| r.label == l).count();
        assert_eq!((count(Label::Positive), count(Label::Negative), count(Label::Ambiguous)), (600, 600, 300));
        let noisy = generate(&SynthSpec { label_noise: 0.2, ..spec }).unwrap();
        let flipped = noisy
            .records()
            .iter()
            .filter(|r| !r.id.starts_with(&r.label.as_str().to_lowercase()))
            .count() as f64
            / noisy.len() as f64;
        assert!((flipped - 0.2).abs() < 0.03, "{flipped}");
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        let spec = SynthSpec {
            dim: 2,
            separation: 10.0,
            label_noise: 0.0,
            n_positive: 200,
            n_negative: 200,
            n_ambiguous: 100,
            ..Default::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = TrainConfig { epochs: 100, learning_rate: 1e-2, ..Default::default() };
        let rep = linear_probe(&ds, ProbeMode::AllData, &cfg).unwrap();
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec { dim: 1, ..Default::default() },
            SynthSpec { sigma: 0.0, ..Default::default() },
            SynthSpec { anisotropy: 0.5, ..Default::default() },
            SynthSpec { label_noise: 1.0, ..Default::default() },
            SynthSpec { n_positive: 0, n_negative: 0, n_ambiguous: 0, ..Default::default() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::BadSpec(_))));
        }
    }
}
