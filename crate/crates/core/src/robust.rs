//! Region sampling for data augmentation and gradient attacks (FGSM, PGD)
//! feeding adversarial training.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::BinaryLabel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{box_selection_weights, pick_weighted, Hyperrectangle, RegionSet};
use crate::network::{AdversarySource, InputObjective, MlpNetwork};
use crate::verify::fold_rotation;

/// Draws per acceptance window in [`sample_complement`].
pub const REJECTION_WINDOW: usize = 100_000;
/// Minimum accepted draws per window before sampling gives up (0.1%).
pub const REJECTION_MIN_ACCEPTED: usize = 100;

/// Per-dimension attack radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonMode {
    /// Same radius in every dimension, ball around the start point.
    Fixed(f64),
    /// Radius `fraction × width` of the constraint box in each dimension.
    Adaptive(f64),
    /// No ball: steps scale with the box widths and iterates are clipped to
    /// the box.
    Clip,
}

impl fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonMode::Fixed(e) => write!(f, "fixed:{e}"),
            EpsilonMode::Adaptive(a) => write!(f, "adaptive:{a}"),
            EpsilonMode::Clip => f.write_str("clip"),
        }
    }
}

impl FromStr for EpsilonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadSpec(format!("unknown epsilon mode {s:?}"));
        if s == "clip" {
            return Ok(EpsilonMode::Clip);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind {
            "fixed" => Ok(EpsilonMode::Fixed(value)),
            "adaptive" => Ok(EpsilonMode::Adaptive(value)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub steps: usize,
    pub epsilon: EpsilonMode,
    /// Step size per dimension is `ε[i] × step_scale / steps`.
    pub step_scale: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            epsilon: EpsilonMode::Adaptive(0.05),
            step_scale: 2.5,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::BadSpec("attack needs at least one step".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::BadSpec("step scale must be positive".into()));
        }
        match self.epsilon {
            EpsilonMode::Fixed(e) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::BadSpec(format!("fixed epsilon {e} must be positive")))
            }
            EpsilonMode::Adaptive(a) if !(a > 0.0 && a <= 1.0) => {
                Err(Error::BadSpec(format!("adaptive fraction {a} must be in (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentConfig {
    pub n_positive: usize,
    pub n_negative: usize,
    pub seed: u64,
}

fn uniform_in(b: &Hyperrectangle, rng: &mut ChaCha8Rng) -> Vec<f64> {
    b.lower()
        .iter()
        .zip(b.upper())
        .map(|(l, u)| (l + rng.random::<f64>() * (u - l)).clamp(*l, *u))
        .collect()
}

/// `n` draws in region coordinates as `(box index, point)`.
fn draw_region_coords(set: &RegionSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, Vec<f64>)> {
    let weights = box_selection_weights(set);
    (0..n)
        .map(|_| {
            let b = pick_weighted(&weights, rng.random::<f64>());
            (b, uniform_in(&set.boxes()[b], rng))
        })
        .collect()
}

/// Uniform samples inside the region set, in input coordinates. Boxes are
/// chosen with probability proportional to their volume.
pub fn sample_inside(set: &RegionSet, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_region_coords(set, n, &mut rng)
        .into_iter()
        .map(|(_, z)| set.to_input_coords(&z))
        .collect()
}

/// Uniform samples from `envelope` minus the region set.
pub fn sample_complement(
    set: &RegionSet,
    envelope: &Hyperrectangle,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if envelope.dim() != set.dim() {
        return Err(Error::DimMismatch {
            expected: set.dim(),
            found: envelope.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0usize;
    let mut window_accepted = 0usize;
    while out.len() < n {
        let x = uniform_in(envelope, &mut rng);
        draws += 1;
        if set.box_containing(&x).is_none() {
            out.push(x);
            window_accepted += 1;
        }
        if draws.is_multiple_of(REJECTION_WINDOW) {
            if window_accepted < REJECTION_MIN_ACCEPTED {
                return Err(Error::RejectionExhausted {
                    accepted: out.len(),
                    draws,
                });
            }
            window_accepted = 0;
        }
    }
    Ok(out)
}

/// `(positives, negatives)` drawn for augmentation.
pub type Augmentation = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Positive samples inside the regions and negative samples from the
/// envelope outside them, for one-time dataset augmentation.
pub fn augment(
    set: &RegionSet,
    envelope: &Hyperrectangle,
    config: &AugmentConfig,
) -> Result<Augmentation> {
    let positives = sample_inside(set, config.n_positive, config.seed);
    let negatives = sample_complement(set, envelope, config.n_negative, config.seed ^ 0x9e37_79b9)?;
    Ok((positives, negatives))
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single signed-gradient step `x + ε ⊙ sign(∇ objective)`.
pub fn fgsm(net: &MlpNetwork, x: &[f64], objective: InputObjective, eps: &[f64]) -> Result<Vec<f64>> {
    net.check_input(x)?;
    if eps.len() != x.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            found: eps.len(),
        });
    }
    if eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::BadSpec("fgsm radii must be nonnegative".into()));
    }
    let g = net.input_gradient(x, objective);
    Ok(x.iter()
        .zip(eps)
        .zip(&g)
        .map(|((v, e), gi)| v + e * signum0(*gi))
        .collect())
}

/// Feasible set of one attack and the per-dimension radii that set the step.
fn attack_set(x: &[f64], constraint: &Hyperrectangle, mode: EpsilonMode) -> (Hyperrectangle, Vec<f64>) {
    let widths = constraint.widths();
    let eps: Vec<f64> = match mode {
        EpsilonMode::Fixed(e) => vec![e; x.len()],
        EpsilonMode::Adaptive(a) => widths.iter().map(|w| a * w).collect(),
        EpsilonMode::Clip => return (constraint.clone(), widths),
    };
    let lower = x
        .iter()
        .zip(&eps)
        .zip(constraint.lower())
        .map(|((v, e), l)| (v - e).max(*l))
        .collect();
    let upper = x
        .iter()
        .zip(&eps)
        .zip(constraint.upper())
        .map(|((v, e), u)| (v + e).min(*u))
        .collect();
    let feasible = Hyperrectangle::new(lower, upper).expect("start point lies in the constraint");
    (feasible, eps)
}

/// Projected signed-gradient ascent on `objective` from `x`.
///
/// Every iterate is projected into the constraint box intersected with the
/// ε-ball of the configured mode. The best iterate by objective value is
/// returned, so the result never scores below the start point.
pub fn pgd(
    net: &MlpNetwork,
    x: &[f64],
    objective: InputObjective,
    constraint: &Hyperrectangle,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    net.check_input(x)?;
    if !constraint.contains(x)? {
        return Err(Error::ConstraintViolation);
    }
    let (feasible, eps) = attack_set(x, constraint, config.epsilon);
    let scale = config.step_scale / config.steps as f64;
    let step: Vec<f64> = eps.iter().map(|e| e * scale).collect();

    let mut cur = x.to_vec();
    let mut best = cur.clone();
    let mut best_value = objective.value(&net.logits(x));
    for _ in 0..config.steps {
        let g = net.input_gradient(&cur, objective);
        for ((v, s), gi) in cur.iter_mut().zip(&step).zip(&g) {
            *v += s * signum0(*gi);
        }
        feasible.clamp(&mut cur);
        let value = objective.value(&net.logits(&cur));
        if value > best_value {
            best_value = value;
            best.clone_from(&cur);
        }
    }
    Ok(best)
}

/// The network seen from region coordinates: rotated sets prepend `x = Qz + c`.
pub(crate) fn region_network<'a>(net: &'a MlpNetwork, set: &RegionSet) -> Cow<'a, MlpNetwork> {
    match set.rotation() {
        Some(r) => Cow::Owned(fold_rotation(net, r)),
        None => Cow::Borrowed(net),
    }
}

/// Adversary that, on every training step, draws fresh samples inside the
/// region set and pushes them towards misclassification with PGD. All
/// outputs are labeled positive.
#[derive(Debug, Clone)]
pub struct RegionAdversary {
    set: RegionSet,
    config: AttackConfig,
    samples: usize,
    rng: ChaCha8Rng,
    exec: Exec,
}

impl RegionAdversary {
    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }
}

pub fn make_adversary(
    set: &RegionSet,
    config: &AttackConfig,
    samples: usize,
    seed: u64,
) -> Result<RegionAdversary> {
    config.validate()?;
    Ok(RegionAdversary {
        set: set.clone(),
        config: config.clone(),
        samples,
        rng: ChaCha8Rng::seed_from_u64(seed),
        exec: Exec::default(),
    })
}

impl AdversarySource for RegionAdversary {
    fn generate(&mut self, net: &MlpNetwork) -> Result<Vec<(Vec<f64>, usize)>> {
        if net.input_dim() != self.set.dim() {
            return Err(Error::DimMismatch {
                expected: net.input_dim(),
                found: self.set.dim(),
            });
        }
        let starts = draw_region_coords(&self.set, self.samples, &mut self.rng);
        let attacked = region_network(net, &self.set);
        let label = BinaryLabel::Positive.index();
        let objective = InputObjective::CrossEntropy(label);
        let (set, config) = (&self.set, &self.config);
        self.exec
            .map(&starts, |(b, z)| {
                let z = pgd(&attacked, z, objective, &set.boxes()[*b], config)?;
                Ok((set.to_input_coords(&z), label))
            })
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RegionKind, RotationTransform};
    use crate::network::{Activation, Dense, LayerSpec};

    fn unit_square() -> Hyperrectangle {
        Hyperrectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    /// Logits `(−x0, x0)`: cross-entropy for class 0 grows with x0.
    fn linear_net() -> MlpNetwork {
        MlpNetwork::from_layers(vec![Dense::new(
            LayerSpec::new(2, 2, Activation::Softmax),
            vec![-1.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0],
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn epsilon_mode_text() {
        for m in [EpsilonMode::Fixed(0.1), EpsilonMode::Adaptive(0.05), EpsilonMode::Clip] {
            assert_eq!(m.to_string().parse::<EpsilonMode>().unwrap(), m);
        }
        assert!("fixed".parse::<EpsilonMode>().is_err());
        assert!("ball:1".parse::<EpsilonMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig { steps: 0, ..Default::default() }.validate().is_err());
        let bad = |e| AttackConfig { epsilon: e, ..Default::default() }.validate().is_err();
        assert!(bad(EpsilonMode::Fixed(0.0)));
        assert!(bad(EpsilonMode::Adaptive(1.5)));
        assert!(!bad(EpsilonMode::Adaptive(1.0)));
    }

    #[test]
    fn degenerate_box_samples_its_point() {
        let set = RegionSet::single(Hyperrectangle::point(&[0.25, -3.0]).unwrap(), RegionKind::Plain);
        assert!(sample_inside(&set, 50, 1).iter().all(|x| x == &vec![0.25, -3.0]));
    }

    #[test]
    fn uniform_mean_in_unit_square() {
        let set = RegionSet::single(unit_square(), RegionKind::Plain);
        let xs = sample_inside(&set, 10_000, 3);
        for d in 0..2 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!((mean - 0.5).abs() < 0.02, "{mean}");
        }
        assert_eq!(xs, sample_inside(&set, 10_000, 3));
    }

    #[test]
    fn rotated_samples_stay_inside() {
        let t = std::f64::consts::FRAC_1_SQRT_2;
        let rot = RotationTransform::new(vec![t, -t, t, t], vec![1.0, 2.0]).unwrap();
        let set = RegionSet::new(
            Some(rot),
            vec![
                Hyperrectangle::new(vec![-1.0, -0.1], vec![1.0, 0.1]).unwrap(),
                Hyperrectangle::new(vec![3.0, 3.0], vec![4.0, 5.0]).unwrap(),
            ],
            RegionKind::Cluster(2),
        )
        .unwrap();
        let xs = sample_inside(&set, 2000, 0);
        assert!(xs.iter().all(|x| set.contains(x).unwrap()));
        // volumes 0.4 and 2: about 1/6 of samples land in the first box
        let first = xs.iter().filter(|x| set.box_containing(x) == Some(0)).count();
        assert!((first as f64 / 2000.0 - 1.0 / 6.0).abs() < 0.03);
    }

    #[test]
    fn complement_is_uniform_on_difference() {
        let envelope = Hyperrectangle::new(vec![0.0, 0.0], vec![4.0, 4.0]).unwrap();
        let inner = Hyperrectangle::new(vec![1.0, 1.0], vec![3.0, 2.0]).unwrap();
        let set = RegionSet::single(inner, RegionKind::Plain);
        let xs = sample_complement(&set, &envelope, 20_000, 5).unwrap();
        assert!(xs.iter().all(|x| !set.contains(x).unwrap()));
        // complement area 14; the strip x0 < 1 holds area 4 of it
        let strip = xs.iter().filter(|x| x[0] < 1.0).count() as f64 / xs.len() as f64;
        assert!((strip - 4.0 / 14.0).abs() < 0.01, "{strip}");
    }

    #[test]
    fn full_envelope_exhausts_rejection() {
        let set = RegionSet::single(unit_square(), RegionKind::Plain);
        let err = sample_complement(&set, &unit_square(), 1, 0).unwrap_err();
        assert!(matches!(err, Error::RejectionExhausted { accepted: 0, draws: REJECTION_WINDOW }));
        assert!(sample_complement(&set, &unit_square(), 0, 0).unwrap().is_empty());
    }

    #[test]
    fn fgsm_closed_form() {
        let net = linear_net();
        let x = [0.3, 0.7];
        assert_eq!(fgsm(&net, &x, InputObjective::CrossEntropy(0), &[0.0, 0.0]).unwrap(), x);
        // ∂CE₀/∂x = (p₁ − (p₀ − 1))·… sign is +1 on x0, gradient 0 on x1
        let out = fgsm(&net, &x, InputObjective::CrossEntropy(0), &[0.1, 0.1]).unwrap();
        assert_eq!(out, vec![0.3 + 0.1, 0.7]);
        let out = fgsm(&net, &x, InputObjective::CrossEntropy(1), &[0.1, 0.2]).unwrap();
        assert_eq!(out, vec![0.3 - 0.1, 0.7]);
    }

    #[test]
    fn one_step_fixed_pgd_is_fgsm() {
        let net = linear_net();
        let x = [0.3, 0.7];
        let config = AttackConfig { steps: 1, epsilon: EpsilonMode::Fixed(0.1), step_scale: 2.5 };
        let big = Hyperrectangle::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let p = pgd(&net, &x, InputObjective::CrossEntropy(0), &big, &config).unwrap();
        let f = fgsm(&net, &x, InputObjective::CrossEntropy(0), &[0.1, 0.1]).unwrap();
        assert_eq!(p, f);
    }

    #[test]
    fn pgd_rejects_outside_start() {
        let config = AttackConfig::default();
        let err = pgd(&linear_net(), &[2.0, 0.0], InputObjective::CrossEntropy(0), &unit_square(), &config);
        assert!(matches!(err, Err(Error::ConstraintViolation)));
    }

    #[test]
    fn adaptive_pgd_respects_per_dimension_radius() {
        let net = linear_net();
        let b = Hyperrectangle::new(vec![0.0, 0.0], vec![2.0, 10.0]).unwrap();
        let config = AttackConfig { steps: 10, epsilon: EpsilonMode::Adaptive(0.1), step_scale: 2.5 };
        let out = pgd(&net, &[1.0, 5.0], InputObjective::CrossEntropy(0), &b, &config).unwrap();
        assert!((out[0] - 1.2).abs() < 1e-12);
        assert_eq!(out[1], 5.0);
        let clip = AttackConfig { epsilon: EpsilonMode::Clip, ..config };
        let out = pgd(&net, &[1.0, 5.0], InputObjective::CrossEntropy(0), &b, &clip).unwrap();
        assert_eq!(out[0], 2.0);
    }

    #[test]
    fn adversary_outputs_are_positive_and_inside() {
        let net = MlpNetwork::init(
            &[LayerSpec::new(2, 6, Activation::Relu), LayerSpec::new(6, 2, Activation::Softmax)],
            3,
        )
        .unwrap();
        let t = std::f64::consts::FRAC_1_SQRT_2;
        let rot = RotationTransform::new(vec![t, -t, t, t], vec![0.5, 0.5]).unwrap();
        let set = RegionSet::new(
            Some(rot),
            vec![Hyperrectangle::new(vec![-0.5, -0.2], vec![0.5, 0.2]).unwrap()],
            RegionKind::Small,
        )
        .unwrap();
        let mut adv = make_adversary(&set, &AttackConfig::default(), 64, 1).unwrap();
        let first = adv.generate(&net).unwrap();
        assert_eq!(first.len(), 64);
        assert!(first.iter().all(|(x, l)| *l == 0 && set.contains(x).unwrap()));
        let mut seq = make_adversary(&set, &AttackConfig::default(), 64, 1).unwrap();
        seq.set_exec(Exec::Sequential);
        assert_eq!(seq.generate(&net).unwrap(), first);
    }
}
