//! Descent into dense subspaces until the points inside one are in
//! approximate radial isotropic position.

use nalgebra::DMatrix;

use crate::forster::{forster_transform, ForsterConfig, ForsterOutcome};
use crate::linalg::{PointSet, Subspace, Transform};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForsterDecomposition {
    pub v: Subspace,
    /// Rows are the basis of `V`; an isometry from `V` onto `R^{dim V}`.
    pub l: DMatrix<f64>,
    /// Transform on `R^{dim V}`.
    pub a: Transform,
    /// Indices of `X ∩ V`.
    pub members: Vec<usize>,
    pub depth: usize,
    /// Total improvement steps over all levels.
    pub iterations: usize,
}

impl ForsterDecomposition {
    /// `A·L`, mapping `R^d` to `R^{dim V}`.
    pub fn combined(&self) -> DMatrix<f64> {
        self.a.matrix() * &self.l
    }
}

/// Runs the transform on `X ∩ V` in coordinates of `V`, replacing `V` by the
/// returned dense subspace until a transform comes back.
pub fn forster_subspace(x: &PointSet, cfg: &ForsterConfig) -> Result<ForsterDecomposition> {
    let (d, n) = (x.d(), x.n());
    let mut v = Subspace::full(d);
    let mut members: Vec<usize> = (0..n).collect();
    let mut depth = 0;
    let mut iterations = 0;
    loop {
        let l = v.chart();
        let local = x.select(&members)?.map(&l)?;
        let level_cfg = ForsterConfig {
            seed: derive_seed(cfg.seed, depth as u64),
            ..cfg.clone()
        };
        let run = forster_transform(&local, &level_cfg)?;
        iterations += run.outcome.iterations();
        match run.outcome {
            ForsterOutcome::Transform { matrix, .. } => {
                return Ok(ForsterDecomposition {
                    v,
                    l,
                    a: matrix,
                    members,
                    depth,
                    iterations,
                });
            }
            ForsterOutcome::DenseSubspace {
                basis,
                members: local_members,
                ..
            } => {
                let next_v = basis.embed(&l.transpose());
                let next_members: Vec<usize> = local_members.iter().map(|&i| members[i]).collect();
                if next_members.is_empty() || next_v.dim() == 0 || next_v.dim() >= v.dim() {
                    return Err(Error::DegenerateInput(
                        "dense subspace did not shrink the search".into(),
                    ));
                }
                assert!(
                    next_members.len() * d >= n * next_v.dim(),
                    "dense subspace lost its share of the points"
                );
                v = next_v;
                members = next_members;
                depth += 1;
                assert!(depth <= d, "recursion deeper than the dimension");
            }
        }
    }
}
