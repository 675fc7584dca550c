use super::Hyperrectangle;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Gap left between a moved face and the negative it excludes.
pub fn shrink_delta(coord: f64) -> f64 {
    1e-9 * coord.abs().max(1.0)
}

#[derive(Debug, Clone, Copy)]
struct Move {
    lost: usize,
    dim: usize,
    upper_face: bool,
    negative: usize,
    value: f64,
}

impl Move {
    fn key(&self) -> (usize, usize, bool, usize) {
        (self.lost, self.dim, self.upper_face, self.negative)
    }
}

/// Greedily tightens `bbox` until it holds no negative point.
///
/// Each round considers, for every negative still inside, the `2 × dim`
/// single-face moves that just exclude it, and applies the one losing the
/// fewest currently retained positives. Ties go to the lowest dimension, then
/// the lower face, then the earliest negative.
pub fn shrink_to_exclude(
    bbox: &Hyperrectangle,
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
) -> Result<Hyperrectangle> {
    let d = bbox.dim();
    for p in positives.iter().chain(negatives) {
        if p.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: p.len(),
            });
        }
    }
    let exec = Exec::default();
    let mut b = bbox.clone();
    let mut retained: Vec<&Vec<f64>> = positives.iter().filter(|p| b.contains_point(p)).collect();

    loop {
        let inside: Vec<usize> = (0..negatives.len())
            .filter(|&j| b.contains_point(&negatives[j]))
            .collect();
        if inside.is_empty() {
            return Ok(b);
        }

        // retained positive coordinates, sorted per dimension
        let sorted: Vec<Vec<f64>> = exec.map_range(d, |i| {
            let mut col: Vec<f64> = retained.iter().map(|p| p[i]).collect();
            col.sort_by(f64::total_cmp);
            col
        });

        let per_negative: Vec<Option<Move>> = exec.map(&inside, |&j| {
            let neg = &negatives[j];
            let mut best: Option<Move> = None;
            for i in 0..d {
                let v = neg[i];
                let delta = shrink_delta(v);
                let col = &sorted[i];
                let lo = v + delta;
                if lo <= b.upper()[i] {
                    let lost = col.partition_point(|c| *c < lo);
                    consider(&mut best, Move { lost, dim: i, upper_face: false, negative: j, value: lo });
                }
                let hi = v - delta;
                if hi >= b.lower()[i] {
                    let lost = col.len() - col.partition_point(|c| *c <= hi);
                    consider(&mut best, Move { lost, dim: i, upper_face: true, negative: j, value: hi });
                }
            }
            best
        });

        let mut best: Option<Move> = None;
        for m in per_negative.into_iter().flatten() {
            consider(&mut best, m);
        }
        let m = best.ok_or_else(|| {
            Error::DegenerateInput("box is too thin to exclude a negative point".into())
        })?;
        if m.upper_face {
            b.set_upper(m.dim, m.value);
        } else {
            b.set_lower(m.dim, m.value);
        }
        retained.retain(|p| b.contains_point(p));
    }
}

fn consider(best: &mut Option<Move>, m: Move) {
    match best {
        Some(cur) if cur.key() <= m.key() => {}
        _ => *best = Some(m),
    }
}
