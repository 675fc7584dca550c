use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

/// Orthogonal change of basis `z = Qᵀ(x − c)` onto the principal axes of a
/// point cloud. `Q` is stored row-major; its columns are the axes.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationTransform {
    matrix: Vec<f64>,
    center: Vec<f64>,
    dim: usize,
}

impl RotationTransform {
    /// Validates that `matrix` (row-major, `dim × dim`) is orthogonal.
    pub fn new(matrix: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || matrix.len() != dim * dim {
            return Err(Error::DimMismatch {
                expected: dim * dim,
                found: matrix.len(),
            });
        }
        if matrix.iter().chain(&center).any(|v| !v.is_finite()) {
            return Err(Error::BadSpec("rotation has non-finite entries".into()));
        }
        let t = Self {
            matrix,
            center,
            dim,
        };
        let err = t.orthogonality_error();
        if err > ORTHOGONALITY_TOLERANCE {
            return Err(Error::BadSpec(format!(
                "rotation matrix is not orthogonal (max |QᵀQ − I| = {err:e})"
            )));
        }
        Ok(t)
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            matrix,
            center: vec![0.0; dim],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `Q`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Entry `Q[row][col]`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim + col]
    }

    /// Column `col` of `Q` (one principal axis).
    pub fn axis(&self, col: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.entry(r, col)).collect()
    }

    /// `z = Qᵀ(x − c)`.
    pub fn to_rotated(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        let mut z = vec![0.0; d];
        for (i, (xi, ci)) in x.iter().zip(&self.center).enumerate() {
            let dx = xi - ci;
            let row = &self.matrix[i * d..(i + 1) * d];
            for (zj, q) in z.iter_mut().zip(row) {
                *zj += q * dx;
            }
        }
        z
    }

    /// `x = Qz + c`.
    pub fn to_input(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.dim);
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.matrix[i * d..(i + 1) * d];
                row.iter().zip(z).map(|(q, v)| q * v).sum::<f64>() + self.center[i]
            })
            .collect()
    }

    /// Largest entry of `|QᵀQ − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in a..d {
                let dot: f64 = (0..d).map(|r| self.entry(r, a) * self.entry(r, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix).determinant()
    }
}

/// Centers on the mean and rotates onto the eigenvectors of the sample
/// covariance, ordered by descending eigenvalue. Each eigenvector is signed so
/// that its largest-magnitude component is positive.
pub fn fit_rotation(points: &[Vec<f64>]) -> Result<RotationTransform> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "rotation fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Error::DegenerateInput("zero-dimensional points".into()));
    }
    for p in points {
        if p.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: p.len(),
            });
        }
    }
    let n = points.len();
    let mut center = vec![0.0; d];
    for p in points {
        for (c, v) in center.iter_mut().zip(p) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }

    let centered = DMatrix::from_fn(n, d, |r, c| points[r][c] - center[c]);
    let mut cov = centered.transpose() * &centered;
    cov /= (n - 1) as f64;
    // exact symmetry for the eigen solver
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut matrix = vec![0.0; d * d];
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..d {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            matrix[r * d + col] = sign * v[r];
        }
    }
    RotationTransform::new(matrix, center)
}
