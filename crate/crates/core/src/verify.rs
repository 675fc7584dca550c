//! Sound, incomplete verification by interval bound propagation, with
//! counterexample search for queries that fail to certify.
//!
//! The certified margin of a box is a lower bound on
//! `logit_target − logit_other` over the box. It is computed by propagating
//! intervals up to the penultimate layer and then bounding the single affine
//! functional `(w_target − w_other)·a + (b_target − b_other)` exactly, which
//! is never looser than subtracting the two output intervals. Consecutive
//! layers without ReLU are multiplied out first, so networks without ReLU are
//! bounded exactly.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::BinaryLabel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Hyperrectangle, RegionSet, RotationTransform};
use crate::network::{margin_of, Activation, Dense, InputObjective, LayerSpec, MlpNetwork};
use crate::robust::{pgd, region_network, AttackConfig, EpsilonMode};

/// Ulps of widening per accumulation in strict floating-point mode.
pub const STRICT_ULPS: f64 = 4.0;

/// Coordinatewise interval `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVector {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalVector {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::BadSpec("interval bounds must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::BadSpec("interval lower bound exceeds upper bound".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn is_subset_of(&self, other: &IntervalVector) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| other.lo[i] <= self.lo[i] && self.hi[i] <= other.hi[i])
    }
}

impl From<&Hyperrectangle> for IntervalVector {
    fn from(b: &Hyperrectangle) -> Self {
        Self {
            lo: b.lower().to_vec(),
            hi: b.upper().to_vec(),
        }
    }
}

/// Affine layer in verification form.
#[derive(Debug, Clone)]
struct Affine {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    relu: bool,
}

impl Affine {
    fn from_dense(d: &Dense) -> Self {
        Self {
            in_dim: d.in_dim(),
            out_dim: d.out_dim(),
            weights: d.weights().to_vec(),
            bias: d.bias().to_vec(),
            relu: d.activation() == Activation::Relu,
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// `next ∘ self` for a layer without ReLU.
    fn then(&self, next: &Affine) -> Affine {
        let mut weights = vec![0.0; next.out_dim * self.in_dim];
        let mut bias = next.bias.clone();
        for o in 0..next.out_dim {
            let out = &mut weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (k, w) in next.row(o).iter().enumerate() {
                for (acc, v) in out.iter_mut().zip(self.row(k)) {
                    *acc += w * v;
                }
                bias[o] += w * self.bias[k];
            }
        }
        Affine {
            in_dim: self.in_dim,
            out_dim: next.out_dim,
            weights,
            bias,
            relu: next.relu,
        }
    }

    /// Interval image of the pre-activation. Each bound accumulates in the
    /// same order as the forward pass and adds the bias last, so rounding
    /// can never move a forward value outside the interval.
    fn propagate(&self, lo: &[f64], hi: &[f64], strict: bool) -> (Vec<f64>, Vec<f64>) {
        let mut out_lo = Vec::with_capacity(self.out_dim);
        let mut out_hi = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let (mut l, mut h, mut mag) = (0.0, 0.0, 0.0);
            for ((w, a), b) in self.row(o).iter().zip(lo).zip(hi) {
                if *w >= 0.0 {
                    l += w * a;
                    h += w * b;
                } else {
                    l += w * b;
                    h += w * a;
                }
                if strict {
                    mag += w.abs() * a.abs().max(b.abs());
                }
            }
            l += self.bias[o];
            h += self.bias[o];
            if strict {
                let slack = rounding_slack(self.in_dim + 1, mag + self.bias[o].abs());
                l -= slack;
                h += slack;
            }
            if self.relu {
                l = l.max(0.0);
                h = h.max(0.0);
            }
            out_lo.push(l);
            out_hi.push(h);
        }
        (out_lo, out_hi)
    }
}

/// Widening that covers `accumulations` roundings of terms bounded in total
/// magnitude by `magnitude`, at [`STRICT_ULPS`] ulps each.
fn rounding_slack(accumulations: usize, magnitude: f64) -> f64 {
    let n = accumulations as f64;
    STRICT_ULPS * n * (f64::EPSILON * magnitude + f64::from_bits(1))
}

/// A network prepared for repeated margin queries.
#[derive(Debug, Clone)]
struct Prepared {
    layers: Vec<Affine>,
    strict: bool,
}

impl Prepared {
    fn new(net: &MlpNetwork, strict: bool) -> Self {
        let mut layers: Vec<Affine> = Vec::with_capacity(net.layers().len());
        for d in net.layers() {
            let next = Affine::from_dense(d);
            match layers.last_mut() {
                // Rounding in the product is not tracked, so strict mode
                // keeps layers separate.
                Some(prev) if !strict && !prev.relu => *prev = prev.then(&next),
                _ => layers.push(next),
            }
        }
        Self { layers, strict }
    }

    fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn check(&self, region: &IntervalVector) -> Result<()> {
        if region.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: region.dim(),
            });
        }
        Ok(())
    }

    /// Certified lower bound on `logit_target − max_{j≠target} logit_j`.
    fn margin(&self, region: &IntervalVector, target: usize) -> f64 {
        let (last, hidden) = self.layers.split_last().expect("network has layers");
        let (mut lo, mut hi) = (region.lo.clone(), region.hi.clone());
        for layer in hidden {
            (lo, hi) = layer.propagate(&lo, &hi, self.strict);
        }
        if last.relu {
            let (lo, hi) = last.propagate(&lo, &hi, self.strict);
            return (0..last.out_dim)
                .filter(|j| *j != target)
                .map(|j| lo[target] - hi[j])
                .fold(f64::INFINITY, f64::min);
        }
        let wt = last.row(target);
        let mut bound = f64::INFINITY;
        for j in (0..last.out_dim).filter(|j| *j != target) {
            let wj = last.row(j);
            let (mut acc, mut mag) = (0.0, 0.0);
            for i in 0..last.in_dim {
                let d = wt[i] - wj[i];
                acc += if d >= 0.0 { d * lo[i] } else { d * hi[i] };
                if self.strict {
                    mag += (wt[i].abs() + wj[i].abs()) * lo[i].abs().max(hi[i].abs());
                }
            }
            acc += last.bias[target] - last.bias[j];
            if self.strict {
                let m = mag + last.bias[target].abs() + last.bias[j].abs();
                acc -= rounding_slack(2 * (last.in_dim + 1), m);
            }
            bound = bound.min(acc);
        }
        bound
    }
}

/// Propagates `input` through every layer, returning intervals over the
/// logits (softmax is not applied).
pub fn ibp_forward(net: &MlpNetwork, input: &IntervalVector, strict: bool) -> Result<IntervalVector> {
    if input.dim() != net.input_dim() {
        return Err(Error::DimMismatch {
            expected: net.input_dim(),
            found: input.dim(),
        });
    }
    let (mut lo, mut hi) = (input.lo.clone(), input.hi.clone());
    for d in net.layers() {
        (lo, hi) = Affine::from_dense(d).propagate(&lo, &hi, strict);
    }
    Ok(IntervalVector { lo, hi })
}

/// Certified lower bound on the margin of `target` over `region`.
pub fn certified_margin(
    net: &MlpNetwork,
    region: &IntervalVector,
    target: BinaryLabel,
    strict: bool,
) -> Result<f64> {
    let prepared = Prepared::new(net, strict);
    prepared.check(region)?;
    Ok(prepared.margin(region, target.index()))
}

/// The network `z ↦ net(Qz + c)`: the rotation becomes an affine prefix
/// layer, which the verifier multiplies into the first layer.
pub fn fold_rotation(net: &MlpNetwork, rotation: &RotationTransform) -> MlpNetwork {
    let dim = rotation.dim();
    let prefix = Dense::new(
        LayerSpec::new(dim, dim, Activation::Identity),
        rotation.matrix().to_vec(),
        rotation.center().to_vec(),
    )
    .expect("rotation is square");
    let mut layers = vec![prefix];
    layers.extend(net.layers().iter().cloned());
    MlpNetwork::from_layers(layers).expect("rotation dimension matches network input")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Verified,
    /// A point inside the region that the network does not assign to the
    /// target class, in input coordinates.
    Falsified(Vec<f64>),
    /// Not certified and no counterexample found.
    Unknown,
}

impl Status {
    pub fn is_verified(&self) -> bool {
        matches!(self, Status::Verified)
    }

    pub fn counterexample(&self) -> Option<&[f64]> {
        match self {
            Status::Falsified(x) => Some(x),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Verified => "verified",
            Status::Falsified(_) => "falsified",
            Status::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub status: Status,
    /// Certified lower bound on the target's logit margin.
    pub margin: f64,
    /// Set when the falsification budget ran out.
    pub timed_out: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Widen every interval bound to cover floating-point rounding.
    pub strict_fp: bool,
    /// Search for counterexamples when certification fails.
    pub falsify: bool,
    pub attack: AttackConfig,
    pub restarts: usize,
    pub seed: u64,
    /// Wall-clock budget for falsifying one box.
    pub box_budget: Option<Duration>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            strict_fp: false,
            falsify: true,
            attack: AttackConfig {
                steps: 20,
                epsilon: EpsilonMode::Clip,
                step_scale: 2.5,
            },
            restarts: 10,
            seed: 0,
            box_budget: Some(Duration::from_secs(60)),
        }
    }
}

/// Multi-restart PGD on the misclassification objective inside `zbox`
/// (region coordinates of `attacked`). Candidates are mapped to input space
/// and accepted only when `inside` holds and `net` misclassifies them.
#[allow(clippy::too_many_arguments)]
fn search_counterexample(
    net: &MlpNetwork,
    attacked: &MlpNetwork,
    zbox: &Hyperrectangle,
    to_input: &dyn Fn(&[f64]) -> Vec<f64>,
    inside: &dyn Fn(&[f64]) -> bool,
    target: usize,
    attack: &AttackConfig,
    restarts: usize,
    seed: u64,
    deadline: Option<Instant>,
) -> Result<(Option<Vec<f64>>, bool)> {
    attack.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objective = InputObjective::Misclassification(target);
    for restart in 0..restarts {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok((None, true));
        }
        let start = if restart == 0 {
            zbox.center()
        } else {
            zbox.lower()
                .iter()
                .zip(zbox.upper())
                .map(|(l, u)| (l + rng.random::<f64>() * (u - l)).clamp(*l, *u))
                .collect()
        };
        let end = pgd(attacked, &start, objective, zbox, attack)?;
        for z in [start, end] {
            let x = to_input(&z);
            if inside(&x) && net.predict(&x) != target {
                return Ok((Some(x), false));
            }
        }
    }
    Ok((None, false))
}

/// Searches `region` for a point not classified as `target`.
pub fn falsify(
    net: &MlpNetwork,
    region: &Hyperrectangle,
    target: BinaryLabel,
    attack: &AttackConfig,
    restarts: usize,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    net.check_input(region.lower())?;
    let (found, _) = search_counterexample(
        net,
        net,
        region,
        &|z| z.to_vec(),
        &|x| region.contains_point(x),
        target.index(),
        attack,
        restarts,
        seed,
        None,
    )?;
    Ok(found)
}

/// Everything needed to verify the boxes of one region set.
struct SetContext<'a> {
    net: &'a MlpNetwork,
    set: &'a RegionSet,
    attacked: MlpNetwork,
    prepared: Prepared,
    target: usize,
    options: &'a VerifyOptions,
}

impl<'a> SetContext<'a> {
    fn new(net: &'a MlpNetwork, set: &'a RegionSet, target: BinaryLabel, options: &'a VerifyOptions) -> Result<Self> {
        if net.input_dim() != set.dim() {
            return Err(Error::DimMismatch {
                expected: net.input_dim(),
                found: set.dim(),
            });
        }
        let attacked = region_network(net, set).into_owned();
        let prepared = Prepared::new(&attacked, options.strict_fp);
        Ok(Self {
            net,
            set,
            attacked,
            prepared,
            target: target.index(),
            options,
        })
    }

    fn verify_box(&self, index: usize) -> Result<VerificationResult> {
        let started = Instant::now();
        let zbox = &self.set.boxes()[index];
        let margin = self.prepared.margin(&IntervalVector::from(zbox), self.target);
        let (status, timed_out) = if margin > 0.0 {
            (Status::Verified, false)
        } else if self.options.falsify {
            let deadline = self.options.box_budget.map(|b| started + b);
            let (found, timed_out) = search_counterexample(
                self.net,
                &self.attacked,
                zbox,
                &|z| self.set.to_input_coords(z),
                &|x| self.set.box_hit(zbox, &self.set.to_region_coords(x)),
                self.target,
                &self.options.attack,
                self.options.restarts,
                self.options.seed.wrapping_add(index as u64),
                deadline,
            )?;
            (found.map_or(Status::Unknown, Status::Falsified), timed_out)
        } else {
            (Status::Unknown, false)
        };
        Ok(VerificationResult {
            status,
            margin,
            timed_out,
            elapsed: started.elapsed(),
        })
    }
}

/// Certifies that every point of `region` is classified as `target`,
/// falling back to counterexample search when the bound is not positive.
pub fn verify_region(
    net: &MlpNetwork,
    region: &Hyperrectangle,
    target: BinaryLabel,
    options: &VerifyOptions,
) -> Result<VerificationResult> {
    let set = RegionSet::single(region.clone(), crate::geometry::RegionKind::Plain);
    SetContext::new(net, &set, target, options)?.verify_box(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetVerification {
    /// Verified iff every box is; Falsified with the first counterexample
    /// found in box order; otherwise Unknown. The margin is the smallest box
    /// margin and the elapsed time is summed.
    pub aggregate: VerificationResult,
    pub per_box: Vec<VerificationResult>,
}

/// Verifies each box of a region set. Rotated sets are checked in region
/// coordinates against the network with the rotation folded in.
pub fn verify_region_set(
    net: &MlpNetwork,
    set: &RegionSet,
    target: BinaryLabel,
    options: &VerifyOptions,
    exec: Exec,
) -> Result<SetVerification> {
    let ctx = SetContext::new(net, set, target, options)?;
    let per_box = exec
        .map_range(set.boxes().len(), |i| ctx.verify_box(i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let status = if per_box.iter().all(|r| r.status.is_verified()) {
        Status::Verified
    } else {
        per_box
            .iter()
            .find_map(|r| r.status.counterexample().map(|x| Status::Falsified(x.to_vec())))
            .unwrap_or(Status::Unknown)
    };
    let aggregate = VerificationResult {
        status,
        margin: per_box.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
        timed_out: per_box.iter().any(|r| r.timed_out),
        elapsed: per_box.iter().map(|r| r.elapsed).sum(),
    };
    Ok(SetVerification { aggregate, per_box })
}

fn epsilon_search_prepared(
    prepared: &Prepared,
    net: &MlpNetwork,
    x: &[f64],
    target: usize,
    eps_max: f64,
    tolerance: f64,
) -> Result<f64> {
    if !(tolerance > 0.0 && eps_max > tolerance && eps_max.is_finite()) {
        return Err(Error::BadSpec(format!(
            "epsilon search needs eps_max > tolerance > 0 (got {eps_max}, {tolerance})"
        )));
    }
    net.check_input(x)?;
    let margin = margin_of(&net.logits(x), target);
    let point_bound = prepared.margin(&IntervalVector::point(x)?, target);
    if !(margin > 0.0 && point_bound > 0.0) {
        return Err(Error::MisclassifiedPoint {
            margin: margin.min(point_bound),
        });
    }
    let verified = |eps: f64| -> Result<bool> {
        let ball = Hyperrectangle::ball(x, eps)?;
        Ok(prepared.margin(&IntervalVector::from(&ball), target) > 0.0)
    };
    if verified(eps_max)? {
        return Ok(eps_max);
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if verified(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest radius `ε ≤ eps_max` (to within `tolerance`) for which the l∞
/// ball around `x` certifies as `target`. Binary search is valid because
/// the certified margin can only shrink as the ball grows.
pub fn epsilon_search(
    net: &MlpNetwork,
    x: &[f64],
    target: BinaryLabel,
    eps_max: f64,
    tolerance: f64,
    strict: bool,
) -> Result<f64> {
    let prepared = Prepared::new(net, strict);
    epsilon_search_prepared(&prepared, net, x, target.index(), eps_max, tolerance)
}

/// [`epsilon_search`] over many points, sharing the prepared network.
pub fn epsilon_search_many(
    net: &MlpNetwork,
    points: &[Vec<f64>],
    target: BinaryLabel,
    eps_max: f64,
    tolerance: f64,
    strict: bool,
    exec: Exec,
) -> Vec<Result<f64>> {
    let prepared = Prepared::new(net, strict);
    exec.map(points, |x| {
        epsilon_search_prepared(&prepared, net, x, target.index(), eps_max, tolerance)
    })
}
