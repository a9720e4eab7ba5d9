//! Condition-number reduction and entry rounding of a transform.
//!
//! Each reduction step picks a subspace `V` of small singular directions
//! and a subspace `W` spanned by data points with small images, then
//! shrinks `R = span(W ∪ V⊥) ∩ W⊥` by `δ`. Points keep their normalized
//! images up to a provable drift while the condition number drops by a
//! factor `O(δ)`. A final rescale-and-round gives an integer matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{decompose_operator, singular_extremes, EigenConfig, Gram};
use crate::linalg::{images, orthonormalize, PointSet, Subspace, Transform};
use crate::rng::derive_seed;
use crate::{Error, Result, MEMBERSHIP_TOL, ZERO_NORM};

/// Largest integer magnitude representable exactly in `f64`.
pub const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

/// Points `w_i` (by index into `X`) with stage-wise minimal ratios `p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEigenProfile {
    pub indices: Vec<usize>,
    pub w: Vec<DVector<f64>>,
    pub p: Vec<f64>,
}

/// Greedy set-restricted singular profile: at stage `i`, the point outside
/// `W_{i−1}` minimizing `‖A x'‖/‖x'‖` with `x'` its component orthogonal
/// to `W_{i−1}`. Ties go to the earlier point.
pub fn eigendecomposition_from_set(a: &DMatrix<f64>, x: &PointSet) -> Result<SetEigenProfile> {
    let d = x.d();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.ncols(),
        });
    }
    let mut span = Subspace::zero(d);
    let mut out = SetEigenProfile {
        indices: vec![],
        w: vec![],
        p: vec![],
    };
    for _ in 0..d {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in x.points().iter().enumerate() {
            let r = span.residual(p);
            let rn = r.norm();
            if rn <= MEMBERSHIP_TOL * p.norm() {
                continue;
            }
            let ratio = (a * &r).norm() / rn;
            if best.is_none_or(|(_, b)| ratio < b) {
                best = Some((i, ratio));
            }
        }
        let Some((i, ratio)) = best else {
            return Err(Error::DoesNotSpan { rank: out.w.len(), d });
        };
        out.indices.push(i);
        out.w.push(x.point(i).clone());
        out.p.push(ratio);
        span = orthonormalize(d, &out.w);
    }
    Ok(out)
}

/// Split at the largest singular value ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSplit {
    /// Small right-singular directions, after the split.
    pub v: Subspace,
    /// Conservative estimate of the ratio across the split.
    pub g_estimate: f64,
    /// Number of large directions.
    pub k: usize,
    /// Estimated singular values, descending.
    pub singular_values: Vec<f64>,
}

/// Finds `V` and `G` with `½·max σ_i/σ_{i+1} ≤ G ≤ σ_min(A^{(V⊥)})/σ_max(A^{(V)})`
/// from a multiplicative decomposition of `AᵀA`.
pub fn singular_gap_split(a: &DMatrix<f64>, cfg: &EigenConfig) -> Result<GapSplit> {
    let d = a.ncols();
    if d < 2 {
        return Err(Error::InvalidInput("singular gap split needs d ≥ 2".into()));
    }
    let e = decompose_operator(&Gram(a), cfg)?.sorted_desc();
    let sv: Vec<f64> = e.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut k = 1;
    let mut best = -1.0;
    for i in 0..d - 1 {
        let ratio = if sv[i + 1] > 0.0 {
            sv[i] / sv[i + 1]
        } else {
            f64::INFINITY
        };
        if ratio > best {
            best = ratio;
            k = i + 1;
        }
    }
    let shrink = ((1.0 - cfg.eta) / (1.0 + cfg.eta)).sqrt();
    let g_estimate = best * shrink;
    let v = Subspace::new(d, e.vectors[k..].to_vec())?;
    Ok(GapSplit {
        v,
        g_estimate,
        k,
        singular_values: sv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    /// Drift budget ζ for `max_x ‖f_A(x) − f_{A'}(x)‖`.
    pub zeta: f64,
    /// Condition threshold `N`; derived from `d` and ζ when unset.
    pub n_threshold: Option<f64>,
    /// Shrink factor δ; derived from the data scale when unset.
    pub delta_rescale: Option<f64>,
    pub max_rounds: usize,
    pub eigen: EigenConfig,
}

impl RoundConfig {
    pub fn new(zeta: f64, seed: u64) -> Self {
        Self {
            zeta,
            n_threshold: None,
            delta_rescale: None,
            max_rounds: 200,
            eigen: EigenConfig::practical(0.01, 0.01, seed),
        }
    }

    /// `min((d/ζ)⁶, 2^52·ζ/(4d))`: the second term keeps final entries exact in `f64`.
    pub fn resolved_threshold(&self, d: usize) -> f64 {
        self.n_threshold.unwrap_or_else(|| {
            let d = d as f64;
            (d / self.zeta).powi(6).min(MAX_EXACT_INT / 2.0 * self.zeta / (4.0 * d))
        })
    }
}

/// `⌈log2 max |coordinate|⌉`, at least 0.
pub fn bit_scale(x: &PointSet) -> i32 {
    let m = x.points().iter().map(|p| p.amax()).fold(0.0, f64::max);
    if m > 1.0 {
        m.log2().ceil() as i32
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReduceDiagnostics {
    pub m: usize,
    pub g: f64,
    pub delta: f64,
    /// `min_{x∉W} ‖proj_{W⊥} x‖/‖x‖`.
    pub rho: f64,
    /// `16/((g−1)ρδ)`.
    pub drift_bound: f64,
    pub dim_w: usize,
    pub dim_r: usize,
    pub dim_v: usize,
}

#[derive(Debug, Clone)]
pub struct ReduceStep {
    pub matrix: DMatrix<f64>,
    pub w: Subspace,
    pub r: Subspace,
    pub diagnostics: ReduceDiagnostics,
}

fn sigma_max_on(a: &DMatrix<f64>, s: &Subspace, seed: u64) -> Result<f64> {
    if s.dim() == 0 {
        return Ok(0.0);
    }
    Ok(singular_extremes(&(a * s.basis_matrix()), seed)?.0)
}

fn sigma_min_on(a: &DMatrix<f64>, s: &Subspace, seed: u64) -> Result<f64> {
    if s.dim() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(singular_extremes(&(a * s.basis_matrix()), seed)?.1)
}

/// One reduction step `A ← A·T`, `T = δI_R + I_W + I_{W⊥∩V}`.
pub fn reduce_condition_step(
    a: &DMatrix<f64>,
    x: &PointSet,
    v: &Subspace,
    g_est: f64,
    cfg: &RoundConfig,
) -> Result<ReduceStep> {
    let d = x.d();
    let seed = cfg.eigen.seed;
    let profile = eigendecomposition_from_set(a, x)?;
    let smax_v = sigma_max_on(a, v, seed)?;
    let m = (0..d)
        .find(|&m| profile.p[m] >= g_est.powf((m + 1) as f64 / d as f64) * smax_v / d as f64)
        .ok_or(Error::GapTooSmall { g: 0.0 })?;
    let w = orthonormalize(d, &profile.w[..m]);
    let v_perp = v.complement();
    let num = profile.p[m].min(sigma_min_on(a, &v_perp, seed)?);
    let den = sigma_max_on(a, &w, seed)?.max(smax_v);
    let g = if den > 0.0 { num / den } else { f64::INFINITY };
    if !(g > 10.0) {
        return Err(Error::GapTooSmall { g });
    }
    let delta = cfg
        .delta_rescale
        .unwrap_or_else(|| (2f64.powi(-bit_scale(x))).min(0.5))
        .max(8.0 / g);
    let r_vecs: Vec<DVector<f64>> = v_perp.basis().iter().map(|b| w.residual(b)).collect();
    let r = orthonormalize(d, &r_vecs);
    let t = DMatrix::identity(d, d) - r.projector() * (1.0 - delta);
    let rho = x
        .points()
        .iter()
        .filter(|p| !w.contains(p, MEMBERSHIP_TOL))
        .map(|p| w.residual(p).norm() / p.norm())
        .fold(f64::INFINITY, f64::min);
    let drift_bound = 16.0 / ((g - 1.0) * rho * delta);
    Ok(ReduceStep {
        matrix: a * t,
        diagnostics: ReduceDiagnostics {
            m,
            g,
            delta,
            rho,
            drift_bound,
            dim_w: w.dim(),
            dim_r: r.dim(),
            dim_v: v.dim(),
        },
        w,
        r,
    })
}

/// `max_x ‖f_A(x) − f_B(x)‖`.
pub fn max_drift(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &PointSet) -> Result<f64> {
    let fa = images(&Transform::from_matrix_unchecked(a.clone()), x)?;
    let fb = images(&Transform::from_matrix_unchecked(b.clone()), x)?;
    Ok(fa.iter().zip(&fb).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max))
}

/// `⌈s·A⌋` entrywise, or an error if an entry exceeds 2^53.
pub fn round_scaled(a: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    let out = a.map(|v| (v * s).round());
    let magnitude = out.amax();
    if !(magnitude <= MAX_EXACT_INT) {
        return Err(Error::EntryOverflow { magnitude });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    /// Integer-valued matrix.
    pub matrix: DMatrix<f64>,
    pub kappa_before: f64,
    pub kappa_after: f64,
    pub max_drift: f64,
    pub steps: Vec<ReduceDiagnostics>,
    /// Why the reduction loop stopped.
    pub stop_reason: String,
}

/// Reduces the condition number below `N` while the drift budget allows,
/// then rounds `d/(σ̄_d·ε_r)·A` to integers, with `ε_r` half the remaining budget.
pub fn round_transform(a: &Transform, x: &PointSet, cfg: &RoundConfig) -> Result<RoundResult> {
    let d = x.d();
    if a.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.dim(),
        });
    }
    if !(cfg.zeta > 0.0 && cfg.zeta < 1.0) {
        return Err(Error::InvalidInput("zeta must lie in (0,1)".into()));
    }
    let rank = x.rank();
    if rank < d {
        return Err(Error::DoesNotSpan { rank, d });
    }
    let n_threshold = cfg.resolved_threshold(d);
    let original = a.matrix().clone();
    let mut cur = original.clone();
    let mut used = 0.0;
    let mut steps = Vec::new();
    let kappa = |m: &DMatrix<f64>, round: usize| -> Result<f64> {
        let (hi, lo) = singular_extremes(m, derive_seed(cfg.eigen.seed, round as u64))?;
        Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
    };
    let kappa_before = kappa(&cur, 0)?;
    let mut kappa_now = kappa_before;
    let stop_reason;
    loop {
        if kappa_now < n_threshold {
            stop_reason = "below_threshold".to_string();
            break;
        }
        if steps.len() >= cfg.max_rounds {
            return Err(Error::MaxRoundsExceeded { rounds: cfg.max_rounds });
        }
        if d < 2 {
            stop_reason = "one_dimensional".to_string();
            break;
        }
        let ecfg = cfg
            .eigen
            .with_seed(derive_seed(cfg.eigen.seed, 1000 + steps.len() as u64));
        let split = singular_gap_split(&cur, &ecfg)?;
        let step = match reduce_condition_step(
            &cur,
            x,
            &split.v,
            split.g_estimate,
            &RoundConfig {
                eigen: ecfg.clone(),
                ..cfg.clone()
            },
        ) {
            Ok(s) => s,
            Err(Error::GapTooSmall { g }) => {
                stop_reason = format!("gap_too_small(g={g:e})");
                break;
            }
            Err(e) => return Err(e),
        };
        let mut next = step.matrix;
        let mut drift = max_drift(&cur, &next, x)?;
        if let Ok((_, lo)) = singular_extremes(&next, ecfg.seed) {
            if lo > 0.0 {
                let s = 1024.0 * d as f64 / (lo * cfg.zeta);
                if let Ok(r) = round_scaled(&next, s) {
                    let total = max_drift(&cur, &r, x)?;
                    if total <= drift + cfg.zeta / 1024.0 {
                        next = r;
                        drift = total;
                    }
                }
            }
        }
        if used + drift > cfg.zeta / 2.0 {
            stop_reason = "drift_budget".to_string();
            break;
        }
        used += drift;
        cur = next;
        steps.push(step.diagnostics);
        kappa_now = kappa(&cur, steps.len())?;
    }
    let (_, lo) = singular_extremes(&cur, derive_seed(cfg.eigen.seed, 7))?;
    if !(lo > ZERO_NORM) {
        return Err(Error::SingularTransform { ratio: 0.0 });
    }
    let eps_r = (cfg.zeta - used) / 2.0;
    let rounded = round_scaled(&cur, d as f64 / (lo * eps_r))?;
    let drift = max_drift(&original, &rounded, x)?;
    let kappa_after = kappa(&rounded, steps.len() + 1)?;
    Ok(RoundResult {
        matrix: rounded,
        kappa_before,
        kappa_after,
        max_drift: drift,
        steps,
        stop_reason,
    })
}
