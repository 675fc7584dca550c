#![allow(dead_code)]

use embverify::geometry::Hyperrectangle;
use embverify::network::{Activation, Dense, LayerSpec, MlpNetwork};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Network with `1..=max_layers` layers of width `1..=max_width`, hidden
/// activations drawn from ReLU and identity, and uniform weights and biases
/// in [-1, 1].
pub fn random_net(
    rng: &mut ChaCha8Rng,
    input: usize,
    max_layers: usize,
    max_width: usize,
    classes: usize,
) -> MlpNetwork {
    let n = rng.random_range(1..=max_layers);
    let mut layers = Vec::with_capacity(n);
    let mut in_dim = input;
    for i in 0..n {
        let last = i + 1 == n;
        let (out_dim, act) = if last {
            (classes, Activation::Softmax)
        } else {
            let act = if rng.random_bool(0.8) { Activation::Relu } else { Activation::Identity };
            (rng.random_range(1..=max_width), act)
        };
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        layers.push(Dense::new(LayerSpec::new(in_dim, out_dim, act), weights, bias).unwrap());
        in_dim = out_dim;
    }
    MlpNetwork::from_layers(layers).unwrap()
}

/// Box with corners drawn from [-scale, scale] and widths up to `max_width`.
pub fn random_box(rng: &mut ChaCha8Rng, dim: usize, scale: f64, max_width: f64) -> Hyperrectangle {
    let lower: Vec<f64> = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
    let upper = lower.iter().map(|l| l + rng.random_range(0.0..max_width)).collect();
    Hyperrectangle::new(lower, upper).unwrap()
}

pub fn random_point_in(rng: &mut ChaCha8Rng, b: &Hyperrectangle) -> Vec<f64> {
    b.lower()
        .iter()
        .zip(b.upper())
        .map(|(l, u)| (l + rng.random::<f64>() * (u - l)).min(*u))
        .collect()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}
