use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Hyperrectangle, RegionSet};

/// Natural-log volume. Boxes with a zero-width side have log-volume `−∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogVolume(pub f64);

impl LogVolume {
    pub const ZERO_VOLUME: LogVolume = LogVolume(f64::NEG_INFINITY);

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn log10(self) -> f64 {
        self.0 / std::f64::consts::LN_10
    }

    pub fn is_degenerate(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Scientific notation `m × 10^e` even far below `f64` range.
    pub fn to_scientific(self) -> String {
        if self.is_degenerate() {
            return "0".into();
        }
        let l = self.log10();
        let e = l.floor();
        let m = 10f64.powf(l - e);
        format!("{m:.2}e{e:.0}")
    }
}

pub(crate) fn box_log_volume(b: &Hyperrectangle) -> LogVolume {
    let mut acc = 0.0;
    for w in b.widths() {
        if w <= 0.0 {
            return LogVolume::ZERO_VOLUME;
        }
        acc += w.ln();
    }
    LogVolume(acc)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Probability of drawing each box when sampling proportionally to volume.
/// Falls back to uniform weights when every box is degenerate.
pub fn box_selection_weights(set: &RegionSet) -> Vec<f64> {
    let logs: Vec<f64> = set.boxes().iter().map(|b| b.log_volume().ln()).collect();
    let total = log_sum_exp(&logs);
    if total == f64::NEG_INFINITY {
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    logs.iter().map(|l| (l - total).exp()).collect()
}

pub(crate) fn pick_weighted(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Volume summary of a region set. Rotations preserve volume, so values are
/// the same in input and rotated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionVolume {
    pub per_box: Vec<LogVolume>,
    /// Log of the summed box volumes.
    pub total: LogVolume,
    /// Set when several boxes exist: overlaps are counted more than once.
    pub may_overcount: bool,
}

pub fn log_volume(set: &RegionSet) -> RegionVolume {
    let per_box: Vec<LogVolume> = set.boxes().iter().map(|b| b.log_volume()).collect();
    let logs: Vec<f64> = per_box.iter().map(|v| v.ln()).collect();
    RegionVolume {
        total: LogVolume(log_sum_exp(&logs)),
        may_overcount: per_box.len() > 1,
        per_box,
    }
}

/// Log-volume of the l∞ ball of radius `eps` in `dim` dimensions:
/// `dim · ln(2ε)`.
pub fn log_volume_eps_ball(dim: usize, eps: f64) -> LogVolume {
    if eps <= 0.0 {
        return LogVolume::ZERO_VOLUME;
    }
    LogVolume(dim as f64 * (2.0 * eps).ln())
}

/// Monte Carlo estimate of the log-volume of the union of the boxes.
///
/// Draws boxes proportionally to volume and points uniformly inside them;
/// each draw contributes `1 / (number of boxes containing it)`.
pub fn estimate_union_log_volume(set: &RegionSet, samples: usize, seed: u64) -> LogVolume {
    let vol = log_volume(set);
    if vol.total.is_degenerate() || samples == 0 {
        return vol.total;
    }
    if set.boxes().len() == 1 {
        return vol.total;
    }
    let weights = box_selection_weights(set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let b = &set.boxes()[pick_weighted(&weights, rng.random::<f64>())];
        let z: Vec<f64> = b
            .lower()
            .iter()
            .zip(b.upper())
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect();
        let hits = set.boxes().iter().filter(|o| o.contains_point(&z)).count().max(1);
        acc += 1.0 / hits as f64;
    }
    LogVolume(vol.total.ln() + (acc / samples as f64).ln())
}
