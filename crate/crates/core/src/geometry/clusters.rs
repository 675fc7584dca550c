use super::{bounding_box, kmeans, Clustering, RegionKind, RegionSet, RotationTransform};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Per-cluster bounding boxes of the positive class.
#[derive(Debug, Clone)]
pub struct ClusterBoxes {
    pub regions: RegionSet,
    /// Negatives inside each box (a negative may be counted by several boxes).
    pub negatives_per_box: Vec<usize>,
    /// Negatives inside at least one box.
    pub negatives_inside: usize,
    pub clustering: Clustering,
}

/// Clusters `positives` with k-means (in rotated coordinates when `rotation`
/// is given) and boxes every nonempty cluster.
pub fn cluster_hypercubes(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    k: usize,
    seed: u64,
    rotation: Option<&RotationTransform>,
    exec: Exec,
) -> Result<ClusterBoxes> {
    let to_region = |x: &Vec<f64>| match rotation {
        Some(r) => r.to_rotated(x),
        None => x.clone(),
    };
    let z_pos: Vec<Vec<f64>> = exec.map(positives, to_region);
    let clustering = kmeans(&z_pos, k, seed, exec)?;
    let mut boxes = Vec::with_capacity(k);
    for members in clustering.members() {
        if members.is_empty() {
            continue;
        }
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| z_pos[i].clone()).collect();
        boxes.push(bounding_box(&pts)?);
    }
    let regions = RegionSet::new(rotation.cloned(), boxes, RegionKind::Cluster(k))?;

    let z_neg: Vec<Vec<f64>> = exec.map(negatives, to_region);
    let hits: Vec<Vec<bool>> = exec.map(&z_neg, |z| {
        regions.boxes().iter().map(|b| regions.box_hit(b, z)).collect()
    });
    let mut negatives_per_box = vec![0; regions.boxes().len()];
    let mut negatives_inside = 0;
    for h in &hits {
        for (count, hit) in negatives_per_box.iter_mut().zip(h) {
            *count += *hit as usize;
        }
        negatives_inside += h.iter().any(|x| *x) as usize;
    }
    Ok(ClusterBoxes {
        regions,
        negatives_per_box,
        negatives_inside,
        clustering,
    })
}

#[derive(Debug, Clone)]
pub struct MinKSearch {
    pub k: usize,
    pub boxes: ClusterBoxes,
    /// `(k, negatives inside)` for every k tried.
    pub trace: Vec<(usize, usize)>,
}

/// Smallest `k` in `1..=k_max` whose cluster boxes hold no negative.
pub fn search_min_k(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    k_max: usize,
    seed: u64,
    rotation: Option<&RotationTransform>,
    exec: Exec,
) -> Result<MinKSearch> {
    if k_max == 0 {
        return Err(Error::BadSpec("k_max must be at least 1".into()));
    }
    if positives.is_empty() {
        return Err(Error::EmptyInput("no positive points to cluster"));
    }
    let mut trace = Vec::new();
    let mut best = (0usize, usize::MAX);
    for k in 1..=k_max.min(positives.len()) {
        let boxes = cluster_hypercubes(positives, negatives, k, seed, rotation, exec)?;
        trace.push((k, boxes.negatives_inside));
        if boxes.negatives_inside == 0 {
            return Ok(MinKSearch { k, boxes, trace });
        }
        if boxes.negatives_inside < best.1 {
            best = (k, boxes.negatives_inside);
        }
    }
    Err(Error::NotFound {
        k_max,
        best_k: best.0,
        residual: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fit_rotation, Hyperrectangle};

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..5 {
            let t = i as f64 * 0.1;
            pts.push(vec![t, t * 0.5]);
            pts.push(vec![4.0 + t, 4.0 - t * 0.5]);
        }
        pts
    }

    #[test]
    fn k1_is_plain_bounding_box() {
        let pos = blobs();
        let out = cluster_hypercubes(&pos, &[], 1, 0, None, Exec::Sequential).unwrap();
        assert_eq!(out.regions.boxes(), &[bounding_box(&pos).unwrap()]);
    }

    #[test]
    fn separated_blobs_exclude_middle_negative() {
        let pos = blobs();
        let neg = vec![vec![2.0, 2.0]];
        let one = cluster_hypercubes(&pos, &neg, 1, 0, None, Exec::Sequential).unwrap();
        assert_eq!(one.negatives_inside, 1);
        let two = cluster_hypercubes(&pos, &neg, 2, 0, None, Exec::Sequential).unwrap();
        assert_eq!(two.regions.boxes().len(), 2);
        assert_eq!(two.negatives_inside, 0);
        // containment oracle: every positive lies in some box, negative in none
        for p in &pos {
            assert!(two.regions.contains(p).unwrap());
        }
        assert!(!two.regions.contains(&neg[0]).unwrap());
    }

    #[test]
    fn min_k_search() {
        let pos = blobs();
        let far = vec![vec![50.0, 50.0]];
        assert_eq!(search_min_k(&pos, &far, 10, 0, None, Exec::Sequential).unwrap().k, 1);
        let mid = vec![vec![2.0, 2.0]];
        let s = search_min_k(&pos, &mid, 10, 0, None, Exec::Sequential).unwrap();
        assert_eq!(s.k, 2);
        assert_eq!(s.boxes.negatives_inside, 0);
        assert_eq!(s.trace, vec![(1, 1), (2, 0)]);
        // a negative that coincides with a positive can never be excluded
        let stuck = vec![pos[0].clone()];
        match search_min_k(&pos, &stuck, 3, 0, None, Exec::Sequential) {
            Err(Error::NotFound { best_k, residual, .. }) => {
                assert_eq!(best_k, 1);
                assert_eq!(residual, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rotated_clusters_cover_their_points() {
        let pos = blobs();
        let rot = fit_rotation(&pos).unwrap();
        let out = cluster_hypercubes(&pos, &[], 2, 1, Some(&rot), Exec::Parallel).unwrap();
        for p in &pos {
            assert!(out.regions.contains(p).unwrap());
        }
        let _: &Hyperrectangle = &out.regions.boxes()[0];
    }
}
