//! Axis-aligned regions around embedding classes.
//!
//! A [`RegionSet`] is one or more [`Hyperrectangle`]s, optionally expressed in
//! coordinates rotated onto the principal axes of the data
//! (`z = Qᵀ(x − c)`, see [`RotationTransform`]).

mod clusters;
mod containment;
mod kmeans;
mod rotation;
mod shrink;
mod volume;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDocument;

pub use clusters::{cluster_hypercubes, search_min_k, ClusterBoxes, MinKSearch};
pub use containment::{containment_report, ContainmentReport, ContainmentRow};
pub use kmeans::{kmeans, Clustering, KMEANS_MAX_ITERATIONS};
pub use rotation::{fit_rotation, RotationTransform};
pub use shrink::{shrink_to_exclude, shrink_delta};
pub(crate) use volume::pick_weighted;
pub use volume::{
    box_selection_weights, estimate_union_log_volume, log_volume, log_volume_eps_ball, LogVolume,
    RegionVolume,
};

/// Slack allowed when testing membership in rotated coordinates, where the
/// change of basis itself introduces rounding error.
pub const ROTATED_CONTAINMENT_TOLERANCE: f64 = 1e-9;

/// A closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperrectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::EmptyInput("hyperrectangle needs at least one dimension"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::BadSpec(format!("non-finite bound in dimension {i}")));
            }
            if l > u {
                return Err(Error::BadSpec(format!(
                    "lower bound {l} exceeds upper bound {u} in dimension {i}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The degenerate box `[p, p]`.
    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    /// The l∞ ball `{x : ‖x − center‖∞ ≤ eps}`.
    pub fn ball(center: &[f64], eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::BadSpec(format!("ball radius {eps} must be nonnegative")));
        }
        Self::new(
            center.iter().map(|c| c - eps).collect(),
            center.iter().map(|c| c + eps).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + 0.5 * (u - l))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_point(x))
    }

    /// Closed-box membership; `x` must have the box's dimension.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub(crate) fn contains_with_tolerance(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| {
            *l - tol * l.abs().max(1.0) <= *v && *v <= *u + tol * u.abs().max(1.0)
        })
    }

    pub fn is_subset_of(&self, other: &Hyperrectangle) -> bool {
        self.dim() == other.dim()
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .all(|(a, b)| a >= b)
            && self
                .upper
                .iter()
                .zip(&other.upper)
                .all(|(a, b)| a <= b)
    }

    /// Intersection with another box, `None` when empty.
    pub fn intersect(&self, other: &Hyperrectangle) -> Option<Hyperrectangle> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(a, b)| a.min(*b))
            .collect();
        Hyperrectangle::new(lower, upper).ok()
    }

    /// Projects `x` onto the box in place.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn log_volume(&self) -> LogVolume {
        volume::box_log_volume(self)
    }

    pub(crate) fn set_lower(&mut self, i: usize, v: f64) {
        debug_assert!(v <= self.upper[i]);
        self.lower[i] = v;
    }

    pub(crate) fn set_upper(&mut self, i: usize, v: f64) {
        debug_assert!(v >= self.lower[i]);
        self.upper[i] = v;
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Smallest box containing every point.
pub fn bounding_box(points: &[Vec<f64>]) -> Result<Hyperrectangle> {
    let first = points
        .first()
        .ok_or(Error::EmptyInput("bounding box of no points"))?;
    let mut lower = first.clone();
    let mut upper = first.clone();
    for p in &points[1..] {
        if p.len() != lower.len() {
            return Err(Error::DimMismatch {
                expected: lower.len(),
                found: p.len(),
            });
        }
        for (i, v) in p.iter().enumerate() {
            lower[i] = lower[i].min(*v);
            upper[i] = upper[i].max(*v);
        }
    }
    Hyperrectangle::new(lower, upper)
}

/// How a region set was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Plain,
    Small,
    Cluster(usize),
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionKind::Plain => f.write_str("plain"),
            RegionKind::Small => f.write_str("small"),
            RegionKind::Cluster(k) => write!(f, "cluster:{k}"),
        }
    }
}

impl FromStr for RegionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(RegionKind::Plain),
            "small" => Ok(RegionKind::Small),
            _ => match s.strip_prefix("cluster:") {
                Some(k) => k
                    .parse::<usize>()
                    .ok()
                    .filter(|k| *k > 0)
                    .map(RegionKind::Cluster)
                    .ok_or_else(|| format!("bad cluster count in {s:?}")),
                None => Err(format!("unknown region kind {s:?}")),
            },
        }
    }
}

/// Boxes (in rotated coordinates when a rotation is present) plus how they
/// were built.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    rotation: Option<RotationTransform>,
    boxes: Vec<Hyperrectangle>,
    kind: RegionKind,
}

impl RegionSet {
    pub fn new(
        rotation: Option<RotationTransform>,
        boxes: Vec<Hyperrectangle>,
        kind: RegionKind,
    ) -> Result<Self> {
        let dim = boxes
            .first()
            .ok_or(Error::EmptyInput("region set needs at least one box"))?
            .dim();
        for b in &boxes {
            if b.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: b.dim(),
                });
            }
        }
        if let Some(r) = &rotation {
            if r.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: r.dim(),
                });
            }
        }
        if let RegionKind::Cluster(k) = kind {
            if boxes.len() > k {
                return Err(Error::BadSpec(format!(
                    "{} boxes exceed cluster count {k}",
                    boxes.len()
                )));
            }
        }
        Ok(Self {
            rotation,
            boxes,
            kind,
        })
    }

    pub fn single(b: Hyperrectangle, kind: RegionKind) -> Self {
        Self {
            rotation: None,
            boxes: vec![b],
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn rotation(&self) -> Option<&RotationTransform> {
        self.rotation.as_ref()
    }

    pub fn boxes(&self) -> &[Hyperrectangle] {
        &self.boxes
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    /// Maps an input-space point into the coordinates the boxes live in.
    pub fn to_region_coords(&self, x: &[f64]) -> Vec<f64> {
        match &self.rotation {
            Some(r) => r.to_rotated(x),
            None => x.to_vec(),
        }
    }

    /// Maps a region-coordinate point back to input space.
    pub fn to_input_coords(&self, z: &[f64]) -> Vec<f64> {
        match &self.rotation {
            Some(r) => r.to_input(z),
            None => z.to_vec(),
        }
    }

    /// Whether `x` (input coordinates) lies in any box.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.box_containing(x).is_some())
    }

    /// Index of the first box containing `x` (input coordinates).
    pub fn box_containing(&self, x: &[f64]) -> Option<usize> {
        let z = self.to_region_coords(x);
        self.boxes.iter().position(|b| self.box_hit(b, &z))
    }

    /// Membership of a region-coordinate point in one box, using the same
    /// closure convention as [`RegionSet::contains`].
    pub fn box_hit(&self, b: &Hyperrectangle, z: &[f64]) -> bool {
        if self.rotation.is_some() {
            b.contains_with_tolerance(z, ROTATED_CONTAINMENT_TOLERANCE)
        } else {
            b.contains_point(z)
        }
    }

    /// Serializes into the key-value region document.
    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("format", "region-set/1");
        doc.set("kind", self.kind);
        doc.set("dim", self.dim());
        doc.set("rotated", self.rotation.is_some());
        if let Some(r) = &self.rotation {
            doc.set_floats("rotation.center", r.center());
            doc.set_floats("rotation.matrix", r.matrix());
        }
        doc.set("boxes", self.boxes.len());
        for (i, b) in self.boxes.iter().enumerate() {
            doc.set_floats(format!("box.{i}.lower"), b.lower());
            doc.set_floats(format!("box.{i}.upper"), b.upper());
        }
        doc
    }

    pub fn from_document(doc: &KvDocument) -> Result<Self> {
        let format = doc.require("format")?;
        if format != "region-set/1" {
            return Err(Error::Config {
                key: "format".into(),
                message: format!("expected region-set/1, found {format:?}"),
            });
        }
        let kind: RegionKind = doc.parse_value("kind")?;
        let dim: usize = doc.parse_value("dim")?;
        let rotated: bool = doc.parse_value("rotated")?;
        let rotation = if rotated {
            let center = doc.floats("rotation.center")?;
            let matrix = doc.floats("rotation.matrix")?;
            if center.len() != dim || matrix.len() != dim * dim {
                return Err(Error::Config {
                    key: "rotation.matrix".into(),
                    message: format!("expected {dim}x{dim} matrix and {dim}-vector center"),
                });
            }
            Some(RotationTransform::new(matrix, center)?)
        } else {
            None
        };
        let n: usize = doc.parse_value("boxes")?;
        let mut boxes = Vec::with_capacity(n);
        for i in 0..n {
            let lower = doc.floats(&format!("box.{i}.lower"))?;
            let upper = doc.floats(&format!("box.{i}.upper"))?;
            if lower.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: lower.len(),
                });
            }
            boxes.push(Hyperrectangle::new(lower, upper)?);
        }
        RegionSet::new(rotation, boxes, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounding_box_examples() {
        let b = bounding_box(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(b.lower(), &[0.0, 0.0]);
        assert_eq!(b.upper(), &[0.0, 0.0]);
        let b = bounding_box(&[vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        assert_eq!(b.lower(), &[0.0, -1.0]);
        assert_eq!(b.upper(), &[2.0, 1.0]);
        assert!(matches!(bounding_box(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bounding_box_contains_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let b = bounding_box(&pts).unwrap();
        for p in &pts {
            assert!(b.contains(p).unwrap());
        }
    }

    #[test]
    fn closed_box_membership() {
        let b = Hyperrectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(b.contains(&[0.5, 0.5]).unwrap());
        assert!(!b.contains(&[1.5, 0.5]).unwrap());
        assert!(b.contains(&[1.0, 1.0]).unwrap());
        assert!(matches!(b.contains(&[0.5]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn identity_rotation_matches_unrotated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Hyperrectangle::new(vec![-0.5, 0.0, 0.2], vec![0.5, 1.0, 0.7]).unwrap();
        let plain = RegionSet::single(b.clone(), RegionKind::Plain);
        let rotated = RegionSet::new(
            Some(RotationTransform::identity(3)),
            vec![b],
            RegionKind::Plain,
        )
        .unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.5)).collect();
            assert_eq!(plain.contains(&x).unwrap(), rotated.contains(&x).unwrap());
        }
    }

    #[test]
    fn region_document_round_trip() {
        let rot = fit_rotation(&[
            vec![0.0, 0.1],
            vec![1.0, 1.3],
            vec![2.0, 1.9],
            vec![0.5, 0.2],
        ])
        .unwrap();
        let set = RegionSet::new(
            Some(rot),
            vec![
                Hyperrectangle::new(vec![-1.0, -0.25], vec![1.0, 0.125]).unwrap(),
                Hyperrectangle::new(vec![0.0, 1e-320], vec![3.0, 1e-300]).unwrap(),
            ],
            RegionKind::Cluster(3),
        )
        .unwrap();
        let text = set.to_document().to_text("regions");
        let back = RegionSet::from_document(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn cluster_kind_bounds_box_count() {
        let b = Hyperrectangle::point(&[0.0]).unwrap();
        assert!(RegionSet::new(None, vec![b.clone(), b.clone()], RegionKind::Cluster(1)).is_err());
        assert!(RegionSet::new(None, vec![], RegionKind::Plain).is_err());
        assert_eq!("cluster:29".parse::<RegionKind>().unwrap(), RegionKind::Cluster(29));
    }
}
