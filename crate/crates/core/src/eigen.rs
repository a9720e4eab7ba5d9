//! Randomized orthogonal iteration with a multiplicative error guarantee.
//!
//! Starting from a random integer matrix `R`, the columns of `M^t R` are
//! orthonormalized; the resulting `q_i` with Rayleigh coefficients
//! `a_i = q_iᵀ M q_i` give `M̂ = Σ a_i q_i q_iᵀ` satisfying
//! `|vᵀ(M − M̂)v| ≤ η·vᵀMv` for all `v` with high probability.
//! `M^t R` is never formed explicitly: each step multiplies by `M` and
//! re-orthonormalizes, which spans the same nested column spaces.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::asymmetry;
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Result, DEFAULT_TOL, ZERO_NORM};

/// Symmetric PSD operator given through products and quadratic forms.
pub trait PsdOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    /// `vᵀ M v`.
    fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply(v))
    }
    fn trace(&self) -> f64;
}

impl PsdOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }

    fn trace(&self) -> f64 {
        DMatrix::trace(self)
    }
}

/// `AᵀA` kept in factored form, so `vᵀAᵀAv = ‖Av‖²` stays accurate for
/// badly conditioned `A`.
pub struct Gram<'a>(pub &'a DMatrix<f64>);

impl PsdOperator for Gram<'_> {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(&(self.0 * v))
    }

    fn quad_form(&self, v: &DVector<f64>) -> f64 {
        (self.0 * v).norm_squared()
    }

    fn trace(&self) -> f64 {
        self.0.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Theory,
    Practical,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Multiplicative accuracy η.
    pub eta: f64,
    /// Failure probability δ.
    pub delta: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Range `N` of the random integer entries; derived from `d` and `δ` when unset.
    pub range_n: Option<u64>,
    /// Power count `t`; derived from the mode when unset.
    pub power_steps: Option<u64>,
    /// Hard cap on power steps.
    pub max_power_steps: u64,
    /// Random directions used by the practical-mode acceptance check.
    pub verify_trials: usize,
}

impl EigenConfig {
    pub fn practical(eta: f64, delta: f64, seed: u64) -> Self {
        Self {
            eta,
            delta,
            mode: Mode::Practical,
            seed,
            range_n: None,
            power_steps: None,
            max_power_steps: 1 << 30,
            verify_trials: 64,
        }
    }

    pub fn theory(eta: f64, delta: f64, seed: u64) -> Self {
        Self {
            mode: Mode::Theory,
            max_power_steps: 1 << 22,
            ..Self::practical(eta, delta, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// `N = max(⌈100d/δ⌉, 1000)` unless overridden.
    pub fn resolved_range(&self, d: usize) -> u64 {
        self.range_n
            .unwrap_or_else(|| ((100.0 * d as f64 / self.delta).ceil() as u64).max(1000))
    }

    /// `t = ⌈(d⁶/η²)·ln(d/δ)⌉` in theory mode; the practical starting point otherwise.
    pub fn resolved_steps(&self, d: usize) -> u64 {
        if let Some(t) = self.power_steps {
            return t.max(1);
        }
        match self.mode {
            Mode::Practical => PRACTICAL_START,
            Mode::Theory => {
                let d = d as f64;
                let t = d.powi(6) / (self.eta * self.eta) * (d / self.delta).ln().max(1.0);
                if t >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    (t.ceil() as u64).max(1)
                }
            }
        }
    }
}

const PRACTICAL_START: u64 = 64;

/// Orthonormal directions `q_i` with coefficients `a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenApprox {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    /// Power steps actually performed.
    pub power_steps: u64,
    /// Range of the random integer start matrix.
    pub range_n: u64,
}

impl EigenApprox {
    /// Builds from explicit pairs, normalizing each nonzero `q_i`.
    pub fn from_pairs(values: Vec<f64>, vectors: Vec<DVector<f64>>) -> Self {
        let vectors = vectors
            .into_iter()
            .map(|q| {
                let n = q.norm();
                if n > ZERO_NORM {
                    q / n
                } else {
                    q
                }
            })
            .collect();
        Self {
            values,
            vectors,
            power_steps: 0,
            range_n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, DVector::len)
    }

    /// `Σ a_i (q_i·v)²`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        self.values
            .iter()
            .zip(&self.vectors)
            .map(|(a, q)| a * q.dot(v).powi(2))
            .sum()
    }

    /// Indices ordered by `a_i` descending; equal values keep their order.
    pub fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&i, &j| self.values[j].total_cmp(&self.values[i]));
        idx
    }

    /// Copy with pairs sorted by `a_i` descending.
    pub fn sorted_desc(&self) -> Self {
        let order = self.order_desc();
        Self {
            values: order.iter().map(|&i| self.values[i]).collect(),
            vectors: order.iter().map(|&i| self.vectors[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// `M̂ = Σ a_i q_i q_iᵀ / ‖q_i‖²`.
pub fn reconstruct(e: &EigenApprox) -> DMatrix<f64> {
    let d = e.dim();
    let mut m = DMatrix::zeros(d, d);
    for (a, q) in e.values.iter().zip(&e.vectors) {
        let n2 = q.norm_squared();
        if n2 > 0.0 {
            m.ger(*a / n2, q, q, 1.0);
        }
    }
    m
}

/// Decomposes a dense symmetric PSD matrix.
pub fn approx_eigendecomposition(m: &DMatrix<f64>, cfg: &EigenConfig) -> Result<EigenApprox> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax();
    let asym = asymmetry(m);
    if asym > DEFAULT_TOL * scale.max(ZERO_NORM) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    decompose_operator(m, cfg)
}

/// Decomposes any [`PsdOperator`].
pub fn decompose_operator<M: PsdOperator + ?Sized>(op: &M, cfg: &EigenConfig) -> Result<EigenApprox> {
    let d = op.dim();
    let range_n = cfg.resolved_range(d);
    if d == 0 {
        return Ok(EigenApprox {
            values: vec![],
            vectors: vec![],
            power_steps: 0,
            range_n,
        });
    }
    let trace = op.trace();
    if trace < -DEFAULT_TOL || !trace.is_finite() {
        return Err(Error::NotPsd { value: trace });
    }
    let mut rng = rng_from(cfg.seed);
    let start = DMatrix::from_fn(d, d, |_, _| rng.random_range(1..=range_n) as f64);
    let (mut q, mut degenerate) = orthonormal_columns(&start);

    let cap = cfg.max_power_steps.max(1);
    let mut t: u64 = 0;
    let mut target = cfg.resolved_steps(d).min(cap);
    let mut prev_checkpoint: Option<DMatrix<f64>> = None;
    loop {
        while t < target {
            let z = apply_columns(op, &q);
            let (nq, nd) = orthonormal_columns(&z);
            q = nq;
            degenerate = nd;
            t += 1;
            if cfg.mode == Mode::Theory && t.is_multiple_of(16) && diagonal_certificate(op, &q, &degenerate, cfg.eta) {
                break;
            }
        }
        let e = rayleigh(op, &q, &degenerate, t, range_n)?;
        if cfg.mode == Mode::Theory {
            return Ok(e);
        }
        let report = verify_operator(op, &e, cfg.eta, cfg.verify_trials, derive_seed(cfg.seed, t));
        if report.passed {
            return Ok(e);
        }
        let stalled = prev_checkpoint.as_ref().is_some_and(|p| (p - &q).amax() <= 1e-15);
        if t >= cap || stalled {
            return Err(Error::EigenNotConverged {
                t,
                worst_ratio: report.worst_ratio,
            });
        }
        prev_checkpoint = Some(q.clone());
        target = t.saturating_mul(2).min(cap);
    }
}

fn apply_columns<M: PsdOperator + ?Sized>(op: &M, q: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = q.column_iter().map(|c| op.apply(&c.into_owned())).collect();
    DMatrix::from_columns(&cols)
}

/// Relative residual at which a Gram–Schmidt column is declared zero.
const COLUMN_DROP: f64 = 1e-12;

/// Gram–Schmidt on the columns of `z` in order. A column whose residual is
/// negligible is flagged degenerate and replaced by the coordinate axis with
/// the largest residual, so the result is always a full orthonormal basis.
fn orthonormal_columns(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let d = z.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for col in z.column_iter() {
        let w0 = col.into_owned();
        let scale = w0.norm();
        let residual = if scale > ZERO_NORM && scale.is_finite() {
            let mut w = w0 / scale;
            reorthogonalize(&mut w, &basis);
            let r = w.norm();
            (r > COLUMN_DROP).then(|| w / r)
        } else {
            None
        };
        match residual {
            Some(w) => {
                basis.push(w);
                degenerate.push(false);
            }
            None => {
                basis.push(best_axis_completion(d, &basis));
                degenerate.push(true);
            }
        }
    }
    (DMatrix::from_columns(&basis), degenerate)
}

fn reorthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(w);
            w.axpy(-c, b, 1.0);
        }
    }
}

fn best_axis_completion(d: usize, basis: &[DVector<f64>]) -> DVector<f64> {
    let mut best: Option<DVector<f64>> = None;
    let mut best_norm = -1.0;
    for i in 0..d {
        let mut w = DVector::from_fn(d, |r, _| f64::from(r == i));
        reorthogonalize(&mut w, basis);
        let n = w.norm();
        if n > best_norm {
            best_norm = n;
            best = Some(w / n);
        }
    }
    best.expect("dimension is positive")
}

fn rayleigh<M: PsdOperator + ?Sized>(
    op: &M,
    q: &DMatrix<f64>,
    degenerate: &[bool],
    t: u64,
    range_n: u64,
) -> Result<EigenApprox> {
    let floor = DEFAULT_TOL * op.trace().abs().max(ZERO_NORM);
    let mut values = Vec::with_capacity(q.ncols());
    let mut vectors = Vec::with_capacity(q.ncols());
    for (col, &deg) in q.column_iter().zip(degenerate) {
        let v = col.into_owned();
        let a = op.quad_form(&v);
        if a < -floor {
            return Err(Error::NotPsd { value: a });
        }
        values.push(if deg { 0.0 } else { a.max(0.0) });
        vectors.push(v);
    }
    Ok(EigenApprox {
        values,
        vectors,
        power_steps: t,
        range_n,
    })
}

/// Deterministic sufficient condition for the multiplicative guarantee:
/// in the `q` basis, `|B_ij| ≤ (η/2d)·sqrt(B_ii B_jj)` for `B = QᵀMQ`.
fn diagonal_certificate<M: PsdOperator + ?Sized>(op: &M, q: &DMatrix<f64>, degenerate: &[bool], eta: f64) -> bool {
    let d = q.ncols();
    let noise = 1e-14 * op.trace().abs();
    let mq = apply_columns(op, q);
    let b = q.tr_mul(&mq);
    let c = eta / (2.0 * d as f64);
    for i in 0..d {
        if degenerate[i] && b[(i, i)].abs() > noise {
            return false;
        }
        for j in (i + 1)..d {
            let off = 0.5 * (b[(i, j)] + b[(j, i)]).abs();
            if off > noise && off > c * (b[(i, i)].max(0.0) * b[(j, j)].max(0.0)).sqrt() {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub worst_ratio: f64,
    pub directions: usize,
}

/// Relative floor on `vᵀMv` (times the trace) guarding kernel directions.
pub const VERIFY_FLOOR: f64 = 1e-15;

/// Denominator floor for the relative check: directions whose quadratic
/// form is at the rounding level of the matrix entries cannot be resolved
/// to relative accuracy `eta`.
pub fn verify_floor(d: usize, trace: f64, eta: f64) -> f64 {
    let rounding = 16.0 * d as f64 * f64::EPSILON / eta;
    (VERIFY_FLOOR.max(rounding) * trace.abs()).max(ZERO_NORM)
}

/// Empirical check of `|vᵀ(M − M̂)v| ≤ η·vᵀMv` over random unit vectors,
/// the coordinate axes and the decomposition's own directions.
pub fn verify_multiplicative(m: &DMatrix<f64>, e: &EigenApprox, eta: f64, trials: usize, seed: u64) -> VerifyReport {
    verify_operator(m, e, eta, trials, seed)
}

pub fn verify_operator<M: PsdOperator + ?Sized>(
    op: &M,
    e: &EigenApprox,
    eta: f64,
    trials: usize,
    seed: u64,
) -> VerifyReport {
    let d = op.dim();
    let floor = verify_floor(d, op.trace(), eta);
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut check = |v: &DVector<f64>| {
        let exact = op.quad_form(v);
        let approx = e.quad_form(v);
        let ratio = (exact - approx).abs() / exact.max(floor);
        worst = worst.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
        count += 1;
    };
    for _ in 0..trials {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 0.0 {
            check(&(g / n));
        }
    }
    for i in 0..d {
        check(&DVector::from_fn(d, |r, _| f64::from(r == i)));
    }
    for q in &e.vectors {
        let n = q.norm();
        if n > ZERO_NORM {
            check(&(q / n));
        }
    }
    VerifyReport {
        passed: worst <= eta,
        worst_ratio: worst,
        directions: count,
    }
}

/// Estimates of `(σ_max(A), σ_min(A))` from a decomposition of `AᵀA`.
pub fn singular_extremes(a: &DMatrix<f64>, seed: u64) -> Result<(f64, f64)> {
    let e = decompose_operator(&Gram(a), &EigenConfig::practical(0.01, 0.01, seed))?;
    let (lo, hi) = e
        .values
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok((hi.max(0.0).sqrt(), lo.max(0.0).sqrt()))
}

/// `σ_max/σ_min` estimate; infinite for singular input.
pub fn condition_estimate(a: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let (hi, lo) = singular_extremes(a, seed)?;
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}
