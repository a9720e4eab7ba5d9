//! Point sets, transforms, subspaces and second-moment matrices.

use crate::{Error, Result, DEFAULT_TOL, ZERO_NORM};
use nalgebra::{DMatrix, DVector};

/// Multiset of nonzero points in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    d: usize,
    points: Vec<DVector<f64>>,
}

impl PointSet {
    pub fn new(d: usize, points: Vec<DVector<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("point set is empty".into()));
        }
        for (index, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite coordinate in point {index}")));
            }
            if p.norm() <= ZERO_NORM {
                return Err(Error::ZeroVector { index });
            }
        }
        Ok(Self { d, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new(d, rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.d, indices.iter().map(|&i| self.points[i].clone()).collect())
    }

    /// Applies a linear map to every point (e.g. a coordinate chart `L`).
    pub fn map(&self, l: &DMatrix<f64>) -> Result<Self> {
        if l.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: l.ncols(),
            });
        }
        Self::new(l.nrows(), self.points.iter().map(|p| l * p).collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().copied().collect()).collect()
    }

    /// Rank of the span of the points.
    pub fn rank(&self) -> usize {
        orthonormalize(self.d, &self.points).dim()
    }
}

/// Invertible square matrix acting through `f_A(x) = Ax/‖Ax‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    matrix: DMatrix<f64>,
}

/// Smallest accepted ratio `σ_min/σ_max` for [`Transform::new`].
pub const INVERTIBILITY_RATIO: f64 = 1e-12;

impl Transform {
    /// Checks squareness, finiteness and the singular value ratio.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let (smax, smin) = crate::eigen::singular_extremes(&matrix, 0)?;
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(ratio > INVERTIBILITY_RATIO) {
            return Err(Error::SingularTransform { ratio });
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix known to be invertible by construction.
    pub fn from_matrix_unchecked(matrix: DMatrix<f64>) -> Self {
        debug_assert!(matrix.is_square());
        Self { matrix }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            matrix: DMatrix::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// `f_A(x) = Ax/‖Ax‖`.
pub fn normalize_map(a: &Transform, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: x.len(),
        });
    }
    if !(x.norm() > ZERO_NORM) {
        return Err(Error::ZeroVector { index: 0 });
    }
    let y = a.apply(x);
    let norm = y.norm();
    if !(norm > ZERO_NORM) || !norm.is_finite() {
        return Err(Error::SingularTransform { ratio: 0.0 });
    }
    Ok(y / norm)
}

/// `f_A(x)` for every point of `x`, in order.
pub fn images(a: &Transform, x: &PointSet) -> Result<Vec<DVector<f64>>> {
    if a.dim() != x.d() {
        return Err(Error::DimensionMismatch {
            expected: x.d(),
            got: a.dim(),
        });
    }
    x.points()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            normalize_map(a, p).map_err(|e| match e {
                Error::ZeroVector { .. } => Error::ZeroVector { index },
                other => other,
            })
        })
        .collect()
}

/// Orthonormal basis of a subspace of R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient: usize,
    basis: Vec<DVector<f64>>,
}

impl Subspace {
    /// Validates that `basis` is orthonormal within [`DEFAULT_TOL`].
    pub fn new(ambient: usize, basis: Vec<DVector<f64>>) -> Result<Self> {
        if basis.len() > ambient {
            return Err(Error::InvalidInput(format!(
                "{} basis vectors in dimension {ambient}",
                basis.len()
            )));
        }
        for (i, b) in basis.iter().enumerate() {
            if b.len() != ambient {
                return Err(Error::DimensionMismatch {
                    expected: ambient,
                    got: b.len(),
                });
            }
            for (j, c) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if (b.dot(c) - target).abs() > DEFAULT_TOL {
                    return Err(Error::InvalidInput("basis is not orthonormal".into()));
                }
            }
        }
        Ok(Self { ambient, basis })
    }

    pub fn zero(ambient: usize) -> Self {
        Self {
            ambient,
            basis: Vec::new(),
        }
    }

    pub fn full(ambient: usize) -> Self {
        let basis = (0..ambient)
            .map(|i| DVector::from_fn(ambient, |r, _| f64::from(r == i)))
            .collect();
        Self { ambient, basis }
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// d×k matrix whose columns are the basis.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        if self.basis.is_empty() {
            return DMatrix::zeros(self.ambient, 0);
        }
        DMatrix::from_columns(&self.basis)
    }

    /// k×d matrix whose rows are the basis: an isometry from the subspace onto R^k.
    pub fn chart(&self) -> DMatrix<f64> {
        self.basis_matrix().transpose()
    }

    /// The orthogonal projector `I_V`.
    pub fn projector(&self) -> DMatrix<f64> {
        let b = self.basis_matrix();
        &b * b.transpose()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient);
        for b in &self.basis {
            out.axpy(b.dot(x), b, 1.0);
        }
        out
    }

    /// Component of `x` orthogonal to the subspace.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.project(x)
    }

    /// Whether `‖x − proj x‖ ≤ tol·‖x‖`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.residual(x).norm() <= tol * x.norm()
    }

    pub fn complement(&self) -> Subspace {
        let mut vectors = self.basis.clone();
        vectors.extend(Subspace::full(self.ambient).basis);
        let all = orthonormalize(self.ambient, &vectors);
        Subspace {
            ambient: self.ambient,
            basis: all.basis[self.dim()..].to_vec(),
        }
    }

    /// Subspace spanned by this one together with `other`.
    pub fn join(&self, other: &Subspace) -> Subspace {
        let mut vectors = self.basis.clone();
        vectors.extend(other.basis.iter().cloned());
        orthonormalize(self.ambient, &vectors)
    }

    /// Image of this subspace under an isometric embedding `e` (columns orthonormal).
    pub fn embed(&self, e: &DMatrix<f64>) -> Subspace {
        orthonormalize(e.nrows(), &self.basis.iter().map(|b| e * b).collect::<Vec<_>>())
    }
}

/// Relative residual below which Gram–Schmidt drops a vector.
pub const DROP_TOL: f64 = 1e-10;

/// Gram–Schmidt (two passes) with relative drop tolerance [`DROP_TOL`].
pub fn orthonormalize(ambient: usize, vectors: &[DVector<f64>]) -> Subspace {
    orthonormalize_with_tol(ambient, vectors, DROP_TOL)
}

pub fn orthonormalize_with_tol(ambient: usize, vectors: &[DVector<f64>], drop_tol: f64) -> Subspace {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        if basis.len() == ambient {
            break;
        }
        let scale = v.norm();
        if !(scale > ZERO_NORM) {
            continue;
        }
        let mut w = v / scale;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let r = w.norm();
        if r > drop_tol {
            basis.push(w / r);
        }
    }
    Subspace { ambient, basis }
}

/// `project(x, V)`.
pub fn project(x: &DVector<f64>, v: &Subspace) -> DVector<f64> {
    v.project(x)
}

/// Second-moment matrix together with the count it was divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub entries: DMatrix<f64>,
    pub normalizer: usize,
}

impl MomentMatrix {
    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// `‖M‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.norm_squared()
    }
}

/// `(1/n) Σ_{i∈subset} y_i y_iᵀ` for precomputed unit images `y_i`.
pub fn moment_of_images(images: &[DVector<f64>], subset: &[usize], normalizer: usize) -> MomentMatrix {
    let d = images.first().map_or(0, DVector::len);
    let mut m = DMatrix::zeros(d, d);
    for &i in subset {
        let y = &images[i];
        m.ger(1.0, y, y, 1.0);
    }
    m /= normalizer as f64;
    symmetrize(&mut m);
    MomentMatrix { entries: m, normalizer }
}

/// Moment of all images divided by their count.
pub fn full_moment_of_images(images: &[DVector<f64>]) -> MomentMatrix {
    let all: Vec<usize> = (0..images.len()).collect();
    moment_of_images(images, &all, images.len())
}

/// `M_A(X') = (1/n) Σ_{x∈X'} f_A(x) f_A(x)ᵀ`, always divided by `normalizer`.
pub fn second_moment(a: &Transform, x: &PointSet, subset: &[usize], normalizer: usize) -> Result<MomentMatrix> {
    if normalizer == 0 {
        return Err(Error::InvalidInput("normalizer must be positive".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= x.n()) {
        return Err(Error::InvalidInput(format!("subset index {bad} out of range")));
    }
    let imgs = images(a, x)?;
    Ok(moment_of_images(&imgs, subset, normalizer))
}

/// Second moment of the full set.
pub fn full_moment(a: &Transform, x: &PointSet) -> Result<MomentMatrix> {
    Ok(full_moment_of_images(&images(a, x)?))
}

/// `I_{V1} M I_{V2}` for the corresponding second moment.
pub fn block_moment(
    a: &Transform,
    x: &PointSet,
    subset: &[usize],
    normalizer: usize,
    v1: &Subspace,
    v2: &Subspace,
) -> Result<DMatrix<f64>> {
    let m = second_moment(a, x, subset, normalizer)?;
    Ok(v1.projector() * m.entries * v2.projector())
}

/// `Φ_X(A) = ‖M_A(X)‖_F²`.
pub fn potential(a: &Transform, x: &PointSet) -> Result<f64> {
    Ok(full_moment(a, x)?.frobenius_sq())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
