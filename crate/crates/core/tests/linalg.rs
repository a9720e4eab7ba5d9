mod common;

use common::*;
use forster_core::linalg::*;
use forster_core::rng::rng_from;
use forster_core::synth::{gaussian_vector, sphere_points};
use forster_core::{Error, PointSet, Subspace, Transform};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-9;

fn random_transform(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Transform {
    loop {
        let m = gaussian_matrix(d, d, rng);
        if let Ok(t) = Transform::new(m) {
            return t;
        }
    }
}

fn random_subspace(d: usize, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Subspace {
    orthonormalize(d, &(0..k).map(|_| gaussian_vector(d, rng)).collect::<Vec<_>>())
}

#[test]
fn normalize_map_by_hand() {
    let y = normalize_map(
        &Transform::new(dmatrix![1.0, 0.0; 0.0, 10.0]).unwrap(),
        &dvector![1.0, 1.0],
    )
    .unwrap();
    let s = 101f64.sqrt();
    assert!((y - dvector![1.0 / s, 10.0 / s]).amax() < 1e-15);
    let y = normalize_map(&Transform::identity(2), &dvector![3.0, 4.0]).unwrap();
    assert!((y - dvector![0.6, 0.8]).amax() < 1e-15);
    assert_eq!(
        normalize_map(&Transform::identity(2), &dvector![0.0, 0.0]),
        Err(Error::ZeroVector { index: 0 })
    );
}

#[test]
fn subset_moment_divides_by_full_count() {
    let x = rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    let m = second_moment(&Transform::identity(2), &x, &[2], 3).unwrap();
    let expected = dmatrix![0.5, 0.5; 0.5, 0.5] / 3.0;
    assert!((&m.entries - expected).amax() < 1e-15);
    assert_eq!(m.normalizer, 3);
    assert!((m.trace() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn potential_extremes() {
    for d in 1..6 {
        let x = PointSet::new(
            d,
            (0..d).map(|i| DVector::from_fn(d, |r, _| f64::from(r == i))).collect(),
        )
        .unwrap();
        assert!((potential(&Transform::identity(d), &x).unwrap() - 1.0 / d as f64).abs() < 1e-15);
    }
    let x = rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
    assert_eq!(potential(&Transform::identity(2), &x).unwrap(), 1.0);
}

#[test]
fn block_moment_edge_cases() {
    let x = rows(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]);
    let a = Transform::identity(3);
    let full = Subspace::full(3);
    let m = second_moment(&a, &x, &[0, 1], 2).unwrap();
    assert!((block_moment(&a, &x, &[0, 1], 2, &full, &full).unwrap() - &m.entries).amax() < 1e-15);
    let perp = orthonormalize(3, &[dvector![0.0, 1.0, 1.0]]);
    assert_eq!(
        block_moment(&a, &x, &[0, 1], 2, &perp, &full).unwrap(),
        DMatrix::zeros(3, 3)
    );
}

#[test]
fn orthonormalize_examples() {
    let s = orthonormalize(2, &[dvector![1.0, 0.0], dvector![1.0, 1.0]]);
    assert_eq!(s.dim(), 2);
    let s = orthonormalize(2, &[dvector![1.0, 0.0], dvector![2.0, 0.0]]);
    assert_eq!(s.dim(), 1);
    assert!(s.contains(&dvector![1.0, 0.0], TOL));
    assert_eq!(orthonormalize(3, &[]).dim(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_invariance(seed in any::<u64>(), d in 1usize..7, a in prop_oneof![-1e6..-1e-6f64, 1e-6..1e6f64]) {
        let mut rng = rng_from(seed);
        let t = random_transform(d, &mut rng);
        let x = gaussian_vector(d, &mut rng);
        let base = normalize_map(&t, &x).unwrap();
        let scaled = normalize_map(&Transform::new(t.matrix() * a).unwrap(), &x).unwrap();
        let moved = normalize_map(&t, &(&x * a)).unwrap();
        prop_assert!((&scaled - &base * a.signum()).amax() < TOL);
        prop_assert!((&moved - &base * a.signum()).amax() < TOL);
        prop_assert!((base.norm() - 1.0).abs() < TOL);
    }

    #[test]
    fn composition(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = rng_from(seed);
        let (a, b) = (random_transform(d, &mut rng), random_transform(d, &mut rng));
        let x = gaussian_vector(d, &mut rng);
        let ba = Transform::from_matrix_unchecked(b.matrix() * a.matrix());
        let lhs = normalize_map(&ba, &x).unwrap();
        let rhs = normalize_map(&b, &normalize_map(&a, &x).unwrap()).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-8);
    }

    #[test]
    fn dominating_perturbation(seed in any::<u64>(), d in 1usize..7, size in 0.0..3.0f64) {
        let mut rng = rng_from(seed);
        let a = random_transform(d, &mut rng);
        let g = gaussian_matrix(d, d, &mut rng);
        let c = &g * g.transpose() * (size / g.norm_squared().max(1e-300));
        let b = DMatrix::identity(d, d) + &c;
        let op_norm = ref_singular_values(&c)[0];
        let x = gaussian_vector(d, &mut rng);
        let ba = Transform::from_matrix_unchecked(&b * a.matrix());
        let drift = (normalize_map(&ba, &x).unwrap() - normalize_map(&a, &x).unwrap()).norm();
        prop_assert!(drift <= op_norm + TOL, "drift {} > ‖B−I‖ {}", drift, op_norm);
    }

    #[test]
    fn subspace_stretch(seed in any::<u64>(), d in 2usize..7, alpha in 1e-3..50.0f64) {
        let mut rng = rng_from(seed);
        let k = rng.random_range(1..d);
        let v = random_subspace(d, k, &mut rng);
        let vp = v.complement();
        let a = random_transform(d, &mut rng);
        let b = DMatrix::identity(d, d) + v.projector() * alpha;
        let ba = Transform::from_matrix_unchecked(&b * a.matrix());
        let x = gaussian_vector(d, &mut rng);
        let (f, g) = (normalize_map(&a, &x).unwrap(), normalize_map(&ba, &x).unwrap());
        let (pf, pg) = (v.project(&f), v.project(&g));
        let (qf, qg) = (vp.project(&f), vp.project(&g));
        let lambda = pg.norm() / pf.norm();
        let mu = qg.norm() / qf.norm();
        prop_assert!((&pg - &pf * lambda).amax() < 1e-8);
        prop_assert!((&qg - &qf * mu).amax() < 1e-8);
        prop_assert!(lambda >= 1.0 - TOL && lambda <= 1.0 + alpha + TOL);
        prop_assert!(mu >= 1.0 / (1.0 + alpha) - TOL && mu <= 1.0 + TOL);
    }

    #[test]
    fn projection_matches_least_squares(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = rng_from(seed);
        let k = rng.random_range(0..=d);
        let raw: Vec<DVector<f64>> = (0..k).map(|_| gaussian_vector(d, &mut rng)).collect();
        let v = orthonormalize(d, &raw);
        let x = gaussian_vector(d, &mut rng);
        let p = project(&x, &v);
        let expected = if k == 0 {
            DVector::zeros(d)
        } else {
            let b = DMatrix::from_columns(&raw);
            let coef = (b.transpose() * &b).cholesky().unwrap().solve(&(b.transpose() * &x));
            b * coef
        };
        prop_assert!((&p - &expected).amax() < 1e-8);
        for q in v.basis() {
            prop_assert!(q.dot(&(&x - &p)).abs() < TOL);
        }
        let r = v.complement().project(&x);
        prop_assert!((p.norm_squared() + r.norm_squared() - x.norm_squared()).abs() < TOL * x.norm_squared().max(1.0));
    }

    #[test]
    fn orthonormalize_spans_input(seed in any::<u64>(), d in 1usize..8, m in 0usize..10) {
        let mut rng = rng_from(seed);
        let raw: Vec<DVector<f64>> = (0..m)
            .map(|i| if i % 3 == 2 { gaussian_vector(d, &mut rng) * 0.0 + dvector_like(d, i) } else { gaussian_vector(d, &mut rng) })
            .collect();
        let s = orthonormalize(d, &raw);
        prop_assert_eq!(s.dim(), rank(&raw, d));
        for (i, a) in s.basis().iter().enumerate() {
            for (j, b) in s.basis().iter().enumerate() {
                prop_assert!((a.dot(b) - f64::from(i == j)).abs() < TOL);
            }
        }
        for x in &raw {
            prop_assert!(s.residual(x).norm() <= TOL * x.norm().max(1.0));
        }
    }

    #[test]
    fn block_moment_matches_projection_product(seed in any::<u64>(), d in 1usize..6, n in 1usize..12) {
        let mut rng = rng_from(seed);
        let x = PointSet::new(d, sphere_points(d, n, &mut rng)).unwrap();
        let a = random_transform(d, &mut rng);
        let subset: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
        let v1 = random_subspace(d, rng.random_range(0..=d), &mut rng);
        let v2 = random_subspace(d, rng.random_range(0..=d), &mut rng);
        let got = block_moment(&a, &x, &subset, n, &v1, &v2).unwrap();
        let mut expected = DMatrix::zeros(d, d);
        for &i in &subset {
            let y = a.matrix() * x.point(i);
            let y = &y / y.norm();
            expected += v1.project(&y) * v2.project(&y).transpose();
        }
        expected /= n as f64;
        prop_assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn moment_invariants(seed in any::<u64>(), d in 1usize..7, n in 1usize..30) {
        let mut rng = rng_from(seed);
        let x = PointSet::new(d, (0..n).map(|_| gaussian_vector(d, &mut rng)).collect()).unwrap();
        let a = random_transform(d, &mut rng);
        let m = full_moment(&a, &x).unwrap();
        prop_assert!((m.trace() - 1.0).abs() < TOL);
        prop_assert!(asymmetry(&m.entries) == 0.0);
        let ev = ref_eigenvalues(&m.entries);
        prop_assert!(*ev.last().unwrap() >= -TOL);
        let phi = potential(&a, &x).unwrap();
        let direct: f64 = ev.iter().map(|l| l * l).sum();
        prop_assert!((phi - direct).abs() < TOL);
        prop_assert!(phi >= 1.0 / d as f64 - TOL && phi <= 1.0 + TOL);
        let k = rng.random_range(0..=n);
        let sub = second_moment(&a, &x, &(0..k).collect::<Vec<_>>(), n).unwrap();
        prop_assert!((sub.trace() - k as f64 / n as f64).abs() < TOL);
    }

    #[test]
    fn small_potential_pins_eigenvalues(seed in any::<u64>(), d in 2usize..7, extra in 0usize..40) {
        let mut rng = rng_from(seed);
        let x = PointSet::new(d, sphere_points(d, 2 * d + extra, &mut rng)).unwrap();
        let m = full_moment(&Transform::identity(d), &x).unwrap();
        let df = d as f64;
        // the smallest ε with Φ ≤ 1/d + ε²/d²
        let eps = df * (m.frobenius_sq() - 1.0 / df).max(0.0).sqrt();
        for l in ref_eigenvalues(&m.entries) {
            prop_assert!((l - 1.0 / df).abs() <= eps / df + TOL);
        }
    }

    #[test]
    fn frobenius_gap_sandwich(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = rng_from(seed);
        let k = rng.random_range(1..=d);
        let mut spec: Vec<f64> = (0..d).map(|i| if i < k { rng.random_range(0.1..5.0) } else { 0.0 }).collect();
        spec.sort_by(|a, b| b.total_cmp(a));
        let q = random_orthogonal(d, &mut rng);
        let sqrt_diag = DMatrix::from_diagonal(&DVector::from_iterator(d, spec.iter().map(|v| v.sqrt())));
        let root = &q * sqrt_diag * q.transpose();
        let a = &root * &root;
        let s = psd_with_spectrum(&(0..d).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>(), &mut rng);
        let b = &root * s * &root;
        let b = (&b + b.transpose()) * 0.5;
        let tr = (&a - &b).trace();
        let diff = a.norm_squared() - b.norm_squared();
        let lb = ref_eigenvalues(&b);
        let la = ref_eigenvalues(&a);
        let slack = 1e-9 * (1.0 + a.norm_squared());
        prop_assert!(2.0 * tr * lb[k - 1] <= diff + slack);
        prop_assert!(diff <= 2.0 * tr * la[0] + slack);
    }
}

fn dvector_like(d: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(d, |r, _| if r == i % d { 2.0 } else { 0.0 })
}

#[test]
fn transform_rejects_singular() {
    assert!(matches!(
        Transform::new(dmatrix![1.0, 2.0; 2.0, 4.0]),
        Err(Error::SingularTransform { .. })
    ));
    assert!(matches!(
        Transform::new(dmatrix![1.0, 0.0; 0.0, 1e-13]),
        Err(Error::SingularTransform { .. })
    ));
}

#[test]
fn point_set_rejects_zero_and_ragged() {
    assert!(matches!(
        PointSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
        Err(Error::ZeroVector { index: 1 })
    ));
    assert!(PointSet::from_rows(&[vec![1.0, 0.0], vec![1.0]]).is_err());
    assert!(PointSet::from_rows(&[vec![1e-301]]).is_err());
}
