use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index of every input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids after each update step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices per cluster, in ascending order; empty clusters included.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.iter().enumerate() {
        let d = dist2(p, cent);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Deterministic for a given `seed` regardless of `exec`. Stops when the
/// assignment is stable or after [`KMEANS_MAX_ITERATIONS`] rounds. A cluster
/// left empty by an update is re-seeded at the point farthest from its own
/// centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, exec: Exec) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::BadSpec("k must be positive".into()));
    }
    if k > points.len() {
        return Err(Error::KTooLarge {
            k,
            points: points.len(),
        });
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: p.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng, exec);
    let assign = |cents: &[Vec<f64>]| exec.map(points, |p| nearest(p, cents));

    let mut assignments = assign(&centroids);
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITERATIONS {
        centroids = update_centroids(points, &assignments, &centroids);
        history.push(objective(points, &assignments, &centroids, exec));
        let next = assign(&centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        centroids = update_centroids(points, &assignments, &centroids);
        history.push(objective(points, &assignments, &centroids, exec));
    }
    Ok(Clustering {
        assignments,
        centroids,
        objective_history: history,
        converged,
    })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, exec: Exec) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut weights: Vec<f64> = exec.map(points, |p| dist2(p, &centroids[0]));

    while centroids.len() < k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centroid
            (0..n).find(|i| !chosen[*i]).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        let fresh: Vec<f64> = exec.map(points, |p| dist2(p, &c));
        for (w, f) in weights.iter_mut().zip(fresh) {
            *w = w.min(f);
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = old.len();
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect();

    let empty: Vec<usize> = (0..k).filter(|c| counts[*c] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(f64, usize)> = points
            .iter()
            .zip(assignments)
            .enumerate()
            .map(|(i, (p, &c))| (dist2(p, &centroids[c]), i))
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (c, (_, i)) in empty.into_iter().zip(far) {
            centroids[c] = points[i].clone();
        }
    }
    centroids
}

fn objective(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>], exec: Exec) -> f64 {
    let idx: Vec<usize> = (0..points.len()).collect();
    exec.map(&idx, |&i| dist2(&points[i], &centroids[assignments[i]]))
        .into_iter()
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![-2.0, 3.0]];
        let c = kmeans(&pts, 4, 3, Exec::Sequential).unwrap();
        let mut members = c.members();
        members.sort();
        assert_eq!(members, vec![vec![0], vec![1], vec![2], vec![3]]);
        for (i, &a) in c.assignments.iter().enumerate() {
            assert_eq!(c.centroids[a], pts[i]);
        }
        assert_eq!(c.objective(), 0.0);
    }

    #[test]
    fn errors() {
        let pts = vec![vec![0.0]];
        assert!(matches!(kmeans(&pts, 2, 0, Exec::Sequential), Err(Error::KTooLarge { .. })));
        assert!(matches!(kmeans(&pts, 0, 0, Exec::Sequential), Err(Error::BadSpec(_))));
    }

    /// Cost of the best 2-partition by exhaustive enumeration.
    fn brute_force_two_partition(pts: &[Vec<f64>]) -> (f64, Vec<usize>) {
        let n = pts.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut cost = 0.0;
            for c in 0..2 {
                let m: Vec<&Vec<f64>> = pts.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
                let d = pts[0].len();
                let mean: Vec<f64> = (0..d).map(|j| m.iter().map(|p| p[j]).sum::<f64>() / m.len() as f64).collect();
                cost += m.iter().map(|p| dist2(p, &mean)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, labels);
            }
        }
        best
    }

    #[test]
    fn two_blobs_match_optimal_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5u64 {
            let mut pts = Vec::new();
            for i in 0..10 {
                let off = if i < 5 { 0.0 } else { 10.0 };
                pts.push(vec![
                    off + rng.sample::<f64, _>(StandardNormal) * 0.5,
                    rng.sample::<f64, _>(StandardNormal) * 0.5,
                ]);
            }
            let (best_cost, best) = brute_force_two_partition(&pts);
            let c = kmeans(&pts, 2, seed, Exec::Parallel).unwrap();
            assert!((c.objective() - best_cost).abs() <= 1e-9 * best_cost.max(1.0));
            let same = c.assignments.iter().zip(&best).all(|(a, b)| a == b);
            let flipped = c.assignments.iter().zip(&best).all(|(a, b)| *a != *b);
            assert!(same || flipped);
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        for seed in 0..10 {
            let c = kmeans(&pts, 7, seed, Exec::default()).unwrap();
            for w in c.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn deterministic_across_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = kmeans(&pts, 5, 42, Exec::Sequential).unwrap();
        let b = kmeans(&pts, 5, 42, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
