//! Potential descent toward radial isotropic position.
//!
//! Each improvement step splits the spectrum of the current moment matrix at
//! its largest gap and rescales a subspace `V` by `1 + α`. Either the
//! potential `Φ = ‖M_A(X)‖_F²` strictly decreases, or the step finds a proper
//! subspace containing more than its share of the points, which rules out
//! any Forster transform.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{approx_eigendecomposition, verify_multiplicative, EigenApprox, EigenConfig, Mode};
use crate::linalg::{full_moment_of_images, images, moment_of_images, orthonormalize, PointSet, Subspace, Transform};
use crate::rng::{derive_path, derive_seed};
use crate::rounding::{round_transform, RoundConfig};
use crate::{Error, Result, DEFAULT_TOL, MEMBERSHIP_TOL};

/// Attempts per eigendecomposition before a step fails.
pub const EIGEN_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ForsterConfig {
    pub epsilon: f64,
    pub mode: Mode,
    /// The global constant `C` of the theory schedules.
    pub big_c: f64,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    /// Failure probability handed to each eigendecomposition.
    pub eigen_delta: f64,
    pub zeta: Option<f64>,
    pub max_iters: Option<usize>,
    /// Relative tolerance for subspace membership and `β = 0`.
    pub tau: f64,
    /// Probe budget of the practical-mode line search.
    pub probes: usize,
    /// Interleave [`round_transform`] after every accepted step.
    pub round: bool,
    pub seed: u64,
}

impl ForsterConfig {
    pub fn practical(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            mode: Mode::Practical,
            big_c: 1e4,
            gamma: None,
            eta: None,
            eigen_delta: 0.01,
            zeta: None,
            max_iters: None,
            tau: MEMBERSHIP_TOL,
            probes: 20,
            round: true,
            seed,
        }
    }

    pub fn theory(epsilon: f64, seed: u64) -> Self {
        Self {
            mode: Mode::Theory,
            ..Self::practical(epsilon, seed)
        }
    }

    pub fn with_mode(epsilon: f64, mode: Mode, seed: u64) -> Self {
        match mode {
            Mode::Theory => Self::theory(epsilon, seed),
            Mode::Practical => Self::practical(epsilon, seed),
        }
    }

    /// Constants for a set of `n` points in dimension `d`.
    pub fn resolve(&self, d: usize, n: usize) -> ResolvedParams {
        let (df, nf, e, c) = (d as f64, n as f64, self.epsilon, self.big_c);
        let progress = e.powi(5) / (c * df.powi(10) * nf.powi(5));
        let (gamma, eta, zeta, max_iters) = match self.mode {
            Mode::Theory => {
                let cap = 10.0 * ((1.0 - 1.0 / df) / progress).ceil();
                let cap = if cap.is_finite() && cap < usize::MAX as f64 {
                    cap as usize
                } else {
                    usize::MAX
                };
                (
                    e * e / (c * df.powi(4) * nf * nf),
                    (e.powi(4) / (c.powi(3) * df.powi(8) * nf.powi(4))).max(MIN_ETA),
                    0.5 * progress,
                    cap.max(1),
                )
            }
            Mode::Practical => (e * e / (df * df * nf), 1e-3, 1e-6, 100_000),
        };
        ResolvedParams {
            mode: self.mode,
            epsilon: e,
            big_c: c,
            gamma: self.gamma.unwrap_or(gamma),
            eta: self.eta.unwrap_or(eta),
            eigen_delta: self.eigen_delta,
            alpha_case1: e / (64.0 * nf * df.powi(3)),
            zeta: self.zeta.unwrap_or(zeta),
            max_iters: self.max_iters.unwrap_or(max_iters),
            tau: self.tau,
            probes: self.probes,
            target: 1.0 / df + e * e / (df * df),
        }
    }
}

/// Smallest multiplicative accuracy requested from the eigen solver; the
/// theory value drops below what `f64` can verify.
pub const MIN_ETA: f64 = 1e-10;

/// Every constant that shaped a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedParams {
    pub mode: Mode,
    pub epsilon: f64,
    pub big_c: f64,
    pub gamma: f64,
    pub eta: f64,
    pub eigen_delta: f64,
    pub alpha_case1: f64,
    pub zeta: f64,
    pub max_iters: usize,
    pub tau: f64,
    pub probes: usize,
    /// Loop guard `1/d + ε²/d²`.
    pub target: f64,
}

/// Spectral split at the largest consecutive gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub k: usize,
    pub w: Subspace,
    pub gap: f64,
    /// The decomposition sorted by `a_i‖q_i‖²` descending.
    pub sorted: EigenApprox,
}

/// Sorts by `a_i‖q_i‖²` descending and picks `k ∈ [1, d−1]` maximizing the
/// consecutive difference, smallest `k` on ties. `W = span(q_{k+1..d})`.
pub fn split_by_gap(e: &EigenApprox, require_gap: bool) -> Result<Split> {
    let d = e.values.len();
    if d < 2 {
        return Err(Error::InvalidInput("a spectral split needs d ≥ 2".into()));
    }
    let weight = |i: usize| e.values[i] * e.vectors[i].norm_squared();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| weight(j).total_cmp(&weight(i)));
    let w_sorted: Vec<f64> = order.iter().map(|&i| weight(i)).collect();
    let mut k = 1;
    let mut gap = f64::NEG_INFINITY;
    for i in 0..d - 1 {
        let g = w_sorted[i] - w_sorted[i + 1];
        if g > gap {
            gap = g;
            k = i + 1;
        }
    }
    if require_gap && gap <= DEFAULT_TOL {
        return Err(Error::AllEqual);
    }
    let vectors: Vec<DVector<f64>> = order.iter().map(|&i| e.vectors[i].clone()).collect();
    let w = orthonormalize(d, &vectors[k..]);
    let sorted = EigenApprox {
        values: w_sorted,
        vectors,
        ..e.clone()
    };
    Ok(Split { k, w, gap, sorted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCase {
    CaseI,
    CaseII,
    Certificate,
}

/// Diagnostic record of one improvement step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImproveStep {
    pub case: StepCase,
    pub k: usize,
    pub gap: f64,
    /// `max_x min(‖proj_W f‖, ‖proj_{W⊥} f‖)`.
    pub rho: f64,
    pub beta: Option<f64>,
    /// Schedule value of α for this case.
    pub alpha_base: Option<f64>,
    pub alpha: Option<f64>,
    pub potential_before: f64,
    pub potential_after: Option<f64>,
    pub big_set: Vec<usize>,
    pub dim_v: usize,
    pub probes: usize,
    pub eigen_attempts: usize,
    /// Eigen accuracy used; tighter than configured after a failed step.
    pub eta: f64,
    pub rounded: bool,
    pub rounding_note: Option<String>,
}

/// Proper subspace with more than its share of the points.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSubspace {
    pub basis: Subspace,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Improvement {
    Transform {
        transform: Transform,
        potential: f64,
        v: Subspace,
    },
    DenseSubspace(DenseSubspace),
}

/// Eigendecomposition verified at accuracy η, retried with fresh seeds.
pub fn verified_eigen(m: &DMatrix<f64>, eta: f64, delta: f64, mode: Mode, seed: u64) -> Result<(EigenApprox, usize)> {
    let mut worst = f64::INFINITY;
    for attempt in 0..EIGEN_ATTEMPTS {
        let s = derive_seed(seed, attempt as u64);
        let cfg = match mode {
            Mode::Practical => EigenConfig::practical(eta, delta, s),
            Mode::Theory => EigenConfig::theory(eta, delta, s),
        };
        match approx_eigendecomposition(m, &cfg) {
            Ok(e) => {
                let report = verify_multiplicative(m, &e, eta, 64, derive_seed(s, u64::MAX));
                if report.passed {
                    return Ok((e, attempt + 1));
                }
                worst = report.worst_ratio;
            }
            Err(Error::EigenNotConverged { worst_ratio, .. }) => worst = worst_ratio,
            Err(e) => return Err(e),
        }
    }
    Err(Error::EigenFailed {
        attempts: EIGEN_ATTEMPTS,
        worst_ratio: worst,
    })
}

/// Potential of the images after applying `I + αI_V`.
pub fn potential_after_scaling(imgs: &[DVector<f64>], v: &Subspace, alpha: f64) -> f64 {
    let scaled: Vec<DVector<f64>> = imgs
        .iter()
        .map(|y| {
            let z = y + v.project(y) * alpha;
            let n = z.norm();
            z / n
        })
        .collect();
    full_moment_of_images(&scaled).frobenius_sq()
}

/// Geometric search over `α = base·2^j`: climbs while the potential keeps
/// improving, otherwise halves until some α decreases it.
fn line_search(
    imgs: &[DVector<f64>],
    v: &Subspace,
    base: f64,
    phi0: f64,
    max_probes: usize,
) -> (Option<(f64, f64)>, usize) {
    let mut probes = 1;
    let phi_base = potential_after_scaling(imgs, v, base);
    if phi_base < phi0 {
        let mut best = (base, phi_base);
        let mut alpha = base;
        while probes < max_probes {
            alpha *= 2.0;
            let phi = potential_after_scaling(imgs, v, alpha);
            probes += 1;
            if phi < best.1 {
                best = (alpha, phi);
            } else {
                break;
            }
        }
        return (Some(best), probes);
    }
    let mut alpha = base;
    while probes < max_probes {
        alpha /= 2.0;
        let phi = potential_after_scaling(imgs, v, alpha);
        probes += 1;
        if phi < phi0 {
            return (Some((alpha, phi)), probes);
        }
    }
    (None, probes)
}

fn scaled_transform(a: &Transform, v: &Subspace, alpha: f64) -> Transform {
    let d = a.dim();
    let b = DMatrix::identity(d, d) + v.projector() * alpha;
    let mut m = b * a.matrix();
    let s = m.amax();
    if s > 0.0 {
        m /= s;
    }
    Transform::from_matrix_unchecked(m)
}

/// One improvement step. Requires `Φ > 1/d + ε²/d²`.
pub fn improve_transform(
    a: &Transform,
    x: &PointSet,
    params: &ResolvedParams,
    seed: u64,
) -> Result<(Improvement, ImproveStep)> {
    let (d, n) = (x.d(), x.n());
    let nf = n as f64;
    let imgs = images(a, x)?;
    let m = full_moment_of_images(&imgs);
    let phi = m.frobenius_sq();
    if !(phi > params.target) {
        return Err(Error::PreconditionViolated(format!(
            "potential {phi} is not above 1/d + ε²/d² = {}",
            params.target
        )));
    }
    let (e, mut attempts) = verified_eigen(
        &m.entries,
        params.eta,
        params.eigen_delta,
        params.mode,
        derive_seed(seed, 0),
    )?;
    let split = split_by_gap(&e, false)?;
    let w = &split.w;
    let w_perp = w.complement();
    let gamma = params.gamma;
    let parts: Vec<(f64, f64)> = imgs
        .iter()
        .map(|y| (w.project(y).norm(), w_perp.project(y).norm()))
        .collect();
    let rho = parts.iter().map(|&(p, q)| p.min(q)).fold(0.0, f64::max);
    let mut step = ImproveStep {
        case: StepCase::CaseI,
        k: split.k,
        gap: split.gap,
        rho,
        beta: None,
        alpha_base: None,
        alpha: None,
        potential_before: phi,
        potential_after: None,
        big_set: vec![],
        dim_v: 0,
        probes: 0,
        eigen_attempts: attempts,
        eta: params.eta,
        rounded: false,
        rounding_note: None,
    };

    let (v, base) = if rho >= gamma {
        (w.clone(), params.alpha_case1)
    } else {
        step.case = StepCase::CaseII;
        let big: Vec<usize> = (0..n).filter(|&i| parts[i].1 >= gamma).collect();
        let mb = moment_of_images(&imgs, &big, n);
        let (eb, more) = verified_eigen(
            &mb.entries,
            params.eta,
            params.eigen_delta,
            params.mode,
            derive_seed(seed, 1),
        )?;
        attempts += more;
        step.eigen_attempts = attempts;
        let order = eb.order_desc();
        let v = orthonormalize(
            d,
            &order[split.k..]
                .iter()
                .map(|&i| eb.vectors[i].clone())
                .collect::<Vec<_>>(),
        );
        let beta = big.iter().map(|&i| v.project(&imgs[i]).norm()).fold(0.0, f64::max);
        step.big_set = big;
        step.beta = Some(beta);
        if beta < params.tau {
            if let Some(cert) = certificate(x, &imgs, &v, params.tau) {
                step.case = StepCase::Certificate;
                step.dim_v = v.dim();
                return Ok((Improvement::DenseSubspace(cert), step));
            }
        }
        let beta_eff = beta.max(params.tau);
        let alpha = params.epsilon / (3.0 * beta_eff * (d * d) as f64 * nf) - 1.0;
        (v, if alpha > 0.0 { alpha } else { params.alpha_case1 })
    };
    step.alpha_base = Some(base);
    step.dim_v = v.dim();

    let (alpha, phi_new) = match params.mode {
        Mode::Theory => {
            step.probes = 1;
            (base, potential_after_scaling(&imgs, &v, base))
        }
        Mode::Practical => {
            let (best, probes) = line_search(&imgs, &v, base, phi, params.probes);
            step.probes = probes;
            match best {
                Some(b) => b,
                None => {
                    return Err(Error::NoDecrease {
                        potential: phi,
                        case: format!("{:?}", step.case),
                        probes,
                    })
                }
            }
        }
    };
    let transform = scaled_transform(a, &v, alpha);
    step.alpha = Some(alpha);
    step.potential_after = Some(phi_new);
    Ok((
        Improvement::Transform {
            transform,
            potential: phi_new,
            v,
        },
        step,
    ))
}

/// Turns `V⊥` (in transformed coordinates) into a verified dense subspace of
/// the original coordinates, or `None` if the count does not hold up.
fn certificate(x: &PointSet, imgs: &[DVector<f64>], v: &Subspace, tau: f64) -> Option<DenseSubspace> {
    let (d, n) = (x.d(), x.n());
    let candidates: Vec<usize> = (0..n).filter(|&i| v.project(&imgs[i]).norm() <= tau).collect();
    let basis = orthonormalize(d, &candidates.iter().map(|&i| x.point(i).clone()).collect::<Vec<_>>());
    let dim = basis.dim();
    if dim == 0 || dim >= d {
        return None;
    }
    let members: Vec<usize> = (0..n).filter(|&i| basis.contains(x.point(i), tau)).collect();
    (members.len() * d > n * dim).then_some(DenseSubspace { basis, members })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForsterOutcome {
    Transform {
        matrix: Transform,
        iterations: usize,
        final_potential: f64,
        potential_trace: Vec<f64>,
    },
    DenseSubspace {
        basis: Subspace,
        members: Vec<usize>,
        iterations: usize,
        potential_trace: Vec<f64>,
    },
}

impl ForsterOutcome {
    pub fn potential_trace(&self) -> &[f64] {
        match self {
            ForsterOutcome::Transform { potential_trace, .. }
            | ForsterOutcome::DenseSubspace { potential_trace, .. } => potential_trace,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            ForsterOutcome::Transform { iterations, .. } | ForsterOutcome::DenseSubspace { iterations, .. } => {
                *iterations
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForsterRun {
    pub outcome: ForsterOutcome,
    pub steps: Vec<ImproveStep>,
    pub params: ResolvedParams,
}

/// Improves from `A = I` until `Φ ≤ 1/d + ε²/d²` or a dense subspace turns up.
pub fn forster_transform(x: &PointSet, cfg: &ForsterConfig) -> Result<ForsterRun> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::InvalidInput("epsilon must lie in (0,1)".into()));
    }
    let (d, n) = (x.d(), x.n());
    let params = cfg.resolve(d, n);
    let spans = x.rank() == d;
    let mut a = Transform::identity(d);
    let mut phi = full_moment_of_images(&images(&a, x)?).frobenius_sq();
    let mut trace = vec![phi];
    let mut steps = Vec::new();
    let mut iter = 0;
    while phi > params.target {
        if iter >= params.max_iters {
            return Err(Error::IterationCapExceeded {
                cap: params.max_iters,
                potential_trace: trace,
            });
        }
        let (improvement, mut step) = refined_step(&a, x, &params, derive_path(cfg.seed, &[1, iter as u64]))?;
        iter += 1;
        let (candidate, phi_new) = match improvement {
            Improvement::DenseSubspace(DenseSubspace { basis, members }) => {
                steps.push(step);
                return Ok(ForsterRun {
                    outcome: ForsterOutcome::DenseSubspace {
                        basis,
                        members,
                        iterations: iter,
                        potential_trace: trace,
                    },
                    steps,
                    params,
                });
            }
            Improvement::Transform {
                transform, potential, ..
            } => (transform, potential),
        };
        if !(phi_new < phi) {
            return Err(Error::NoDecrease {
                potential: phi,
                case: format!("{:?}", step.case),
                probes: step.probes,
            });
        }
        let (next, phi_next) = if cfg.round {
            interleaved_round(
                &candidate,
                x,
                spans,
                params.zeta.min((phi - phi_new) / 8.0),
                phi,
                cfg.seed,
                iter,
                &mut step,
            )
        } else {
            step.rounding_note = Some("disabled".into());
            (candidate, phi_new)
        };
        a = next;
        phi = phi_next;
        trace.push(phi);
        steps.push(step);
    }
    Ok(ForsterRun {
        outcome: ForsterOutcome::Transform {
            matrix: a,
            iterations: iter,
            final_potential: phi,
            potential_trace: trace,
        },
        steps,
        params,
    })
}

/// Factor applied to η when a practical step finds no decreasing α.
const ETA_REFINE: f64 = 1e-3;

/// Practical mode retries a step that found no decrease with a tighter
/// eigen accuracy, since the cross terms left by a coarse `W` can swamp the
/// first-order gain on small gaps.
fn refined_step(a: &Transform, x: &PointSet, params: &ResolvedParams, seed: u64) -> Result<(Improvement, ImproveStep)> {
    let mut p = params.clone();
    loop {
        match improve_transform(a, x, &p, seed) {
            Err(Error::NoDecrease { .. }) if p.mode == Mode::Practical && p.eta > MIN_ETA => {
                p.eta = (p.eta * ETA_REFINE).max(MIN_ETA);
            }
            r => return r,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn interleaved_round(
    candidate: &Transform,
    x: &PointSet,
    spans: bool,
    zeta: f64,
    phi_prev: f64,
    seed: u64,
    iter: usize,
    step: &mut ImproveStep,
) -> (Transform, f64) {
    let phi_candidate = step.potential_after.unwrap_or(phi_prev);
    if !spans {
        step.rounding_note = Some("skipped: points do not span".into());
        return (candidate.clone(), phi_candidate);
    }
    match round_transform(
        candidate,
        x,
        &RoundConfig::new(zeta, derive_path(seed, &[2, iter as u64])),
    ) {
        Ok(r) => {
            let t = Transform::from_matrix_unchecked(r.matrix);
            match images(&t, x) {
                Ok(imgs) => {
                    let phi_r = full_moment_of_images(&imgs).frobenius_sq();
                    if phi_r < phi_prev {
                        step.rounded = true;
                        step.rounding_note = Some(format!("drift {:e}, {} reductions", r.max_drift, r.steps.len()));
                        return (t, phi_r);
                    }
                    step.rounding_note = Some("skipped: rounding undid the decrease".into());
                }
                Err(e) => step.rounding_note = Some(format!("skipped: {e}")),
            }
        }
        Err(e) => step.rounding_note = Some(format!("skipped: {e}")),
    }
    (candidate.clone(), phi_candidate)
}
