#![allow(dead_code)]

use forster_core::rng::rng_from;
use forster_core::synth::sphere_points;
use forster_core::PointSet;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Eigenvalues from nalgebra's dense solver, descending.
pub fn ref_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Eigenpairs from nalgebra, sorted by eigenvalue descending.
pub fn ref_eigenpairs(m: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let e = SymmetricEigen::new(m.clone());
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..m.nrows())
        .map(|i| (e.eigenvalues[i], e.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Singular values from nalgebra's SVD, descending.
pub fn ref_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn ref_kappa(a: &DMatrix<f64>) -> f64 {
    let s = ref_singular_values(a);
    s[0] / s[s.len() - 1]
}

pub fn gaussian_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-ish orthogonal matrix from the QR of a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian_matrix(d, d, rng).qr().q()
}

/// `Q diag(values) Qᵀ` with a random orthogonal `Q`.
pub fn psd_with_spectrum(values: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_orthogonal(values.len(), rng);
    let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// `U diag(sigmas) Vᵀ` with random orthogonal `U`, `V`.
pub fn matrix_with_singular_values(sigmas: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = sigmas.len();
    let u = random_orthogonal(d, rng);
    let v = random_orthogonal(d, rng);
    u * DMatrix::from_diagonal(&DVector::from_column_slice(sigmas)) * v.transpose()
}

pub fn sphere_set(d: usize, n: usize, seed: u64) -> PointSet {
    PointSet::new(d, sphere_points(d, n, &mut rng_from(seed))).unwrap()
}

pub fn rows(r: &[&[f64]]) -> PointSet {
    PointSet::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Largest principal-angle sine between the column spans of `a` and `b`
/// (both with orthonormal columns): `‖(I − bbᵀ)a‖₂`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let p = DMatrix::identity(a.nrows(), a.nrows()) - b * b.transpose();
    ref_singular_values(&(p * a)).first().copied().unwrap_or(0.0)
}

pub fn rank(vs: &[DVector<f64>], d: usize) -> usize {
    if vs.is_empty() {
        return 0;
    }
    DMatrix::from_columns(vs).rank(1e-9 * (d as f64))
}

/// Exhaustive check over every subspace spanned by a subset of the points:
/// is there a proper `W` with `|X∩W| > (n/d)·dim W`?
pub fn dense_subspace_exists(x: &PointSet) -> bool {
    dense_beyond(x, 1.0)
}

/// Is there a proper point-spanned `W` with `d·|X∩W| > slack·n·dim W`?
pub fn dense_beyond(x: &PointSet, slack: f64) -> bool {
    let (d, n) = (x.d(), x.n());
    let pts = x.points();
    let mut seen: Vec<Vec<usize>> = Vec::new();
    for mask in 1u32..(1 << n) {
        let chosen: Vec<DVector<f64>> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pts[i].clone()).collect();
        let basis = forster_core::linalg::orthonormalize(d, &chosen);
        let k = basis.dim();
        if k == 0 || k >= d {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| basis.contains(&pts[i], 1e-9)).collect();
        if seen.contains(&members) {
            continue;
        }
        if (members.len() * d) as f64 > slack * (n * k) as f64 {
            return true;
        }
        seen.push(members);
    }
    false
}

/// `(M_A(X)` blocks) helpers on precomputed unit images.
pub fn moment_of(imgs: &[DVector<f64>], subset: &[usize], n: usize) -> DMatrix<f64> {
    let d = imgs[0].len();
    let mut m = DMatrix::zeros(d, d);
    for &i in subset {
        m += &imgs[i] * imgs[i].transpose();
    }
    m / n as f64
}
