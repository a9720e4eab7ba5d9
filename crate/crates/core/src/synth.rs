//! Seeded synthetic instances.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::linalg::orthonormalize;
use crate::{Error, Result};

pub fn gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform point on the unit sphere.
pub fn sphere_point(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let g = gaussian_vector(d, rng);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

pub fn sphere_points(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..n).map(|_| sphere_point(d, rng)).collect()
}

/// Generator selected by a spec string.
#[derive(Debug, Clone, PartialEq)]
pub enum GenSpec {
    SphereUniform,
    Gaussian,
    /// `⌈fraction·n⌉` points in a random `k`-dimensional subspace.
    DenseSubspace {
        k: usize,
        fraction: f64,
    },
    /// Sphere points with `|w*·x| ≥ γ`, labeled `sign(w*·x)`.
    MarginHalfspace {
        gamma: f64,
        w_seed: u64,
    },
    /// Inner labeled spec with each label flipped independently with probability η.
    Rcn {
        eta: f64,
        inner: Box<GenSpec>,
    },
}

impl std::str::FromStr for GenSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadSpec(s.to_string());
        let (head, rest) = s.split_once(':').map_or((s, None), |(h, r)| (h, Some(r)));
        match head {
            "sphere-uniform" if rest.is_none() => Ok(GenSpec::SphereUniform),
            "gaussian" if rest.is_none() => Ok(GenSpec::Gaussian),
            "dense-subspace" => {
                let (k, f) = rest.and_then(|r| r.split_once(':')).ok_or_else(bad)?;
                let k: usize = k.parse().map_err(|_| bad())?;
                let fraction: f64 = f.parse().map_err(|_| bad())?;
                if k == 0 || !(0.0..=1.0).contains(&fraction) {
                    return Err(bad());
                }
                Ok(GenSpec::DenseSubspace { k, fraction })
            }
            "margin-halfspace" => {
                let rest = rest.ok_or_else(bad)?;
                let (g, w) = rest.split_once(':').map_or((rest, None), |(g, w)| (g, Some(w)));
                let gamma: f64 = g.parse().map_err(|_| bad())?;
                let w_seed = w.map_or(Ok(0), str::parse).map_err(|_| bad())?;
                if !(0.0..1.0).contains(&gamma) {
                    return Err(bad());
                }
                Ok(GenSpec::MarginHalfspace { gamma, w_seed })
            }
            "rcn" => {
                let (e, inner) = rest.and_then(|r| r.split_once(':')).ok_or_else(bad)?;
                let eta: f64 = e.parse().map_err(|_| bad())?;
                let inner: GenSpec = inner.parse()?;
                if !(0.0..=0.5).contains(&eta) || !inner.is_labeled() {
                    return Err(bad());
                }
                Ok(GenSpec::Rcn {
                    eta,
                    inner: Box::new(inner),
                })
            }
            _ => Err(bad()),
        }
    }
}

impl GenSpec {
    pub fn is_labeled(&self) -> bool {
        matches!(self, GenSpec::MarginHalfspace { .. } | GenSpec::Rcn { .. })
    }
}

/// Generated points, optional labels and the planted structure.
#[derive(Debug, Clone)]
pub struct Generated {
    pub points: Vec<DVector<f64>>,
    pub labels: Option<Vec<i8>>,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Truth {
    pub spec: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subspace_basis: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subspace_members: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped: Option<Vec<usize>>,
}

pub fn generate(spec: &GenSpec, spec_text: &str, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Generated> {
    if d == 0 || n == 0 {
        return Err(Error::BadSpec("n and d must be positive".into()));
    }
    let mut truth = Truth {
        spec: spec_text.to_string(),
        ..Truth::default()
    };
    match spec {
        GenSpec::SphereUniform => Ok(Generated {
            points: sphere_points(d, n, rng),
            labels: None,
            truth,
        }),
        GenSpec::Gaussian => {
            let points = (0..n)
                .map(|_| gaussian_vector(d, rng))
                .filter(|p| p.norm() > 0.0)
                .collect();
            Ok(Generated {
                points,
                labels: None,
                truth,
            })
        }
        GenSpec::DenseSubspace { k, fraction } => {
            if *k >= d {
                return Err(Error::BadSpec(format!("subspace dimension {k} must be below d = {d}")));
            }
            let basis = orthonormalize(d, &(0..*k).map(|_| gaussian_vector(d, rng)).collect::<Vec<_>>());
            let inside = ((fraction * n as f64).ceil() as usize).min(n);
            let mut points = Vec::with_capacity(n);
            for _ in 0..inside {
                let c = sphere_point(*k, rng);
                let p = basis
                    .basis()
                    .iter()
                    .zip(c.iter())
                    .fold(DVector::zeros(d), |acc, (b, ci)| acc + b * *ci);
                points.push(p);
            }
            points.extend(sphere_points(d, n - inside, rng));
            truth.subspace_basis = Some(basis.basis().iter().map(|b| b.iter().copied().collect()).collect());
            truth.subspace_members = Some((0..inside).collect());
            Ok(Generated {
                points,
                labels: None,
                truth,
            })
        }
        GenSpec::MarginHalfspace { gamma, w_seed } => {
            let w = sphere_point(d, &mut crate::rng::rng_from(*w_seed));
            let mut points = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            while points.len() < n {
                let x = sphere_point(d, rng);
                let m = w.dot(&x);
                if m.abs() >= *gamma {
                    labels.push(if m > 0.0 { 1 } else { -1 });
                    points.push(x);
                }
            }
            truth.w_star = Some(w.iter().copied().collect());
            truth.t_star = Some(0.0);
            Ok(Generated {
                points,
                labels: Some(labels),
                truth,
            })
        }
        GenSpec::Rcn { eta, inner } => {
            let mut g = generate(inner, spec_text, d, n, rng)?;
            let labels = g.labels.as_mut().expect("inner spec is labeled");
            let mut flipped = Vec::new();
            for (i, y) in labels.iter_mut().enumerate() {
                if rng.random::<f64>() < *eta {
                    *y = -*y;
                    flipped.push(i);
                }
            }
            g.truth.flipped = Some(flipped);
            Ok(g)
        }
    }
}
