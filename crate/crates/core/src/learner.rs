//! Halfspace learning through Forster-preconditioned partial classifiers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::forster_subspace;
use crate::eigen::Mode;
use crate::forster::ForsterConfig;
use crate::linalg::{PointSet, Subspace, Transform};
use crate::rng::{derive_seed, rng_from};
use crate::synth::sphere_point;
use crate::{Error, Result, MEMBERSHIP_TOL};

/// Points with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub points: PointSet,
    pub labels: Vec<i8>,
}

impl LabeledSet {
    pub fn new(points: PointSet, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != points.n() {
            return Err(Error::DimensionMismatch {
                expected: points.n(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::InvalidInput("labels must be +1 or -1".into()));
        }
        Ok(Self { points, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.points.d()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.points.select(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// `x ↦ (x, −1)`, turning threshold halfspaces into homogeneous ones.
pub fn homogenize(points: &[DVector<f64>], labels: &[i8]) -> Result<LabeledSet> {
    let d = points.first().map_or(0, DVector::len);
    let lifted = points
        .iter()
        .map(|x| {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            Ok(DVector::from_fn(d + 1, |i, _| if i < d { x[i] } else { -1.0 }))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledSet::new(PointSet::new(d + 1, lifted)?, labels.to_vec())
}

/// `|v·z| ≥ γ‖v‖‖z‖`.
pub fn has_margin(v: &DVector<f64>, z: &DVector<f64>, gamma: f64) -> bool {
    v.dot(z).abs() >= gamma * v.norm() * z.norm()
}

fn sign(t: f64) -> i8 {
    if t > 0.0 {
        1
    } else {
        -1
    }
}

/// Initial magnitude of each start is `PERCEPTRON_INIT·√d/γ`.
pub const PERCEPTRON_INIT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronResult {
    pub v: DVector<f64>,
    /// Index of the winning start: `2i` is `+e_i`, `2i+1` is `−e_i`.
    pub start: usize,
    /// Updates summed over all starts.
    pub total_updates: usize,
    /// `‖v‖²` of the winning start, initially and after each update.
    pub norm_trace: Vec<f64>,
}

/// Margin perceptron. Runs the `2d` starts `±(4√d/γ)e_i` in lockstep, one
/// update per start per round on the first point with margin at least `γ`
/// that is misclassified; the lowest-index start with no such point wins.
pub fn margin_perceptron(s: &LabeledSet, gamma: f64) -> Result<PerceptronResult> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput("margin must lie in (0,1)".into()));
    }
    let d = s.d();
    let scale = PERCEPTRON_INIT * (d as f64).sqrt() / gamma;
    let budget = (scale * scale / 2.0).ceil() as usize + 1;
    let unit: Vec<DVector<f64>> = s.points.points().iter().map(|x| x / x.norm()).collect();
    struct Start {
        v: DVector<f64>,
        updates: usize,
        exhausted: bool,
        trace: Vec<f64>,
    }
    let mut starts: Vec<Start> = (0..2 * d)
        .map(|k| {
            let mut v = DVector::zeros(d);
            v[k / 2] = if k % 2 == 0 { scale } else { -scale };
            Start {
                trace: vec![v.norm_squared()],
                v,
                updates: 0,
                exhausted: false,
            }
        })
        .collect();
    loop {
        let mut active = false;
        for k in 0..starts.len() {
            if starts[k].exhausted {
                continue;
            }
            let st = &starts[k];
            let violator = unit
                .iter()
                .zip(&s.labels)
                .position(|(x, &y)| has_margin(&st.v, x, gamma) && sign(st.v.dot(x)) != y);
            let Some(i) = violator else {
                let total_updates = starts.iter().map(|st| st.updates).sum();
                let st = &starts[k];
                return Ok(PerceptronResult {
                    v: st.v.clone(),
                    start: k,
                    total_updates,
                    norm_trace: st.trace.clone(),
                });
            };
            let st = &mut starts[k];
            if st.updates >= budget {
                st.exhausted = true;
                continue;
            }
            st.v.axpy(f64::from(s.labels[i]), &unit[i], 1.0);
            st.updates += 1;
            st.trace.push(st.v.norm_squared());
            active = true;
        }
        if !active {
            return Err(Error::NotSeparable { starts: starts.len() });
        }
    }
}

/// Classifier on the region `{x ∈ V : |v·ALx| ≥ threshold·‖v‖‖ALx‖}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialClassifier {
    pub v_space: Subspace,
    /// Rows form the basis of `V`.
    pub l: DMatrix<f64>,
    pub a: Transform,
    pub v: DVector<f64>,
    pub threshold: f64,
}

impl PartialClassifier {
    /// `A L x`.
    pub fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.matrix() * (&self.l * x)
    }

    /// `sign(v·ALx)` inside the region, 0 outside.
    pub fn classify(&self, x: &DVector<f64>) -> i8 {
        if !self.v_space.contains(x, MEMBERSHIP_TOL) {
            return 0;
        }
        let z = self.embed(x);
        if z.norm() == 0.0 || !has_margin(&self.v, &z, self.threshold) {
            return 0;
        }
        sign(self.v.dot(&z))
    }
}

#[derive(Debug, Clone)]
pub struct PartialRun {
    pub classifier: PartialClassifier,
    pub perceptron: PerceptronResult,
    pub members: Vec<usize>,
    pub depth: usize,
}

/// Forster decomposition with ε = 1/2, then the margin perceptron with
/// `γ = 1/(2√d_V)` on the transformed points inside `V`.
pub fn partial_classifier(s: &LabeledSet, forster: &ForsterConfig) -> Result<PartialRun> {
    let cfg = ForsterConfig {
        epsilon: 0.5,
        ..forster.clone()
    };
    let dec = forster_subspace(&s.points, &cfg)?;
    let dv = dec.v.dim();
    let threshold = 1.0 / (2.0 * (dv as f64).sqrt());
    let draft = PartialClassifier {
        v_space: dec.v.clone(),
        l: dec.l.clone(),
        a: dec.a.clone(),
        v: DVector::zeros(dv),
        threshold,
    };
    let z: Vec<DVector<f64>> = dec.members.iter().map(|&i| draft.embed(s.points.point(i))).collect();
    let labels = dec.members.iter().map(|&i| s.labels[i]).collect();
    let local = LabeledSet::new(PointSet::new(dv, z)?, labels)?;
    let perceptron = margin_perceptron(&local, threshold)?;
    Ok(PartialRun {
        classifier: PartialClassifier {
            v: perceptron.v.clone(),
            ..draft
        },
        perceptron,
        members: dec.members,
        depth: dec.depth,
    })
}

/// First-match list of partial classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionList {
    pub ambient_d: usize,
    pub stages: Vec<PartialClassifier>,
}

pub fn predict(f: &DecisionList, x: &DVector<f64>) -> i8 {
    f.stages.iter().map(|st| st.classify(x)).find(|&y| y != 0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error_rate: f64,
    pub abstain_rate: f64,
    /// Mistakes among the non-abstained predictions.
    pub coverage_mistake_rate: f64,
    pub n: usize,
}

pub fn evaluate(f: &DecisionList, points: &[DVector<f64>], labels: &[i8]) -> Evaluation {
    let (mut wrong, mut abstain) = (0usize, 0usize);
    for (x, &y) in points.iter().zip(labels) {
        match predict(f, x) {
            0 => abstain += 1,
            p if p != y => wrong += 1,
            _ => {}
        }
    }
    let n = labels.len();
    let covered = n - abstain;
    let rate = |k: usize, m: usize| if m == 0 { 0.0 } else { k as f64 / m as f64 };
    Evaluation {
        error_rate: rate(wrong, n),
        abstain_rate: rate(abstain, n),
        coverage_mistake_rate: rate(wrong, covered),
        n,
    }
}

/// Source of i.i.d. labeled examples.
pub trait ExampleOracle {
    fn dim(&self) -> usize;
    fn sample(&mut self, m: usize) -> (Vec<DVector<f64>>, Vec<i8>);
}

/// Uniform on the unit sphere, labeled by `sign(w*·x)`.
pub struct SphereOracle {
    pub w_star: DVector<f64>,
    rng: ChaCha8Rng,
}

impl SphereOracle {
    pub fn new(w_star: DVector<f64>, seed: u64) -> Self {
        Self {
            w_star,
            rng: rng_from(seed),
        }
    }

    /// Random `w*` from `w_seed`.
    pub fn random(d: usize, w_seed: u64, seed: u64) -> Self {
        Self::new(sphere_point(d, &mut rng_from(w_seed)), seed)
    }
}

impl ExampleOracle for SphereOracle {
    fn dim(&self) -> usize {
        self.w_star.len()
    }

    fn sample(&mut self, m: usize) -> (Vec<DVector<f64>>, Vec<i8>) {
        let d = self.dim();
        let pts: Vec<DVector<f64>> = (0..m).map(|_| sphere_point(d, &mut self.rng)).collect();
        let labels = pts.iter().map(|x| sign(self.w_star.dot(x))).collect();
        (pts, labels)
    }
}

/// Uniform resampling of a fixed labeled set.
pub struct EmpiricalOracle {
    pub points: Vec<DVector<f64>>,
    pub labels: Vec<i8>,
    rng: ChaCha8Rng,
}

impl EmpiricalOracle {
    pub fn new(points: Vec<DVector<f64>>, labels: Vec<i8>, seed: u64) -> Self {
        Self {
            points,
            labels,
            rng: rng_from(seed),
        }
    }
}

impl ExampleOracle for EmpiricalOracle {
    fn dim(&self) -> usize {
        self.points.first().map_or(0, DVector::len)
    }

    fn sample(&mut self, m: usize) -> (Vec<DVector<f64>>, Vec<i8>) {
        let n = self.points.len();
        let idx: Vec<usize> = (0..m).map(|_| self.rng.random_range(0..n)).collect();
        (
            idx.iter().map(|&i| self.points[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub mode: Mode,
    /// Constant in the round budget and the theory sample size.
    pub big_c: f64,
    /// Per-round sample size; required in practical mode.
    pub samples_per_round: Option<usize>,
    pub seed: u64,
}

impl LearnConfig {
    pub fn practical(epsilon: f64, delta: f64, samples_per_round: usize, seed: u64) -> Self {
        Self {
            epsilon,
            delta,
            mode: Mode::Practical,
            big_c: 10.0,
            samples_per_round: Some(samples_per_round),
            seed,
        }
    }

    /// `r = ⌈C√d·ln(1/ε)⌉`.
    pub fn rounds(&self, d: usize) -> usize {
        (self.big_c * (d as f64).sqrt() * (1.0 / self.epsilon).ln())
            .ceil()
            .max(1.0) as usize
    }

    /// `M = C·d⁴·ln(d/(εδ))/ε²` in theory mode, the configured value otherwise.
    pub fn samples(&self, d: usize) -> Result<usize> {
        match (self.mode, self.samples_per_round) {
            (Mode::Practical, Some(m)) => Ok(m),
            (Mode::Practical, None) => Err(Error::InvalidInput("practical mode needs samples_per_round".into())),
            (Mode::Theory, _) => {
                let df = d as f64;
                let e = self.epsilon;
                Ok((self.big_c * df.powi(4) * (df / (e * self.delta)).ln() / (e * e)).ceil() as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: usize,
    pub uncovered: usize,
    pub stage_added: bool,
    pub covered_fraction: Option<f64>,
    pub perceptron_updates: Option<usize>,
    pub subspace_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnRun {
    pub list: DecisionList,
    pub rounds: Vec<RoundRecord>,
    pub round_budget: usize,
    pub samples_per_round: usize,
}

/// Adds one partial classifier per round, trained on the fresh samples the
/// current list abstains on, until fewer than `εM/4` of them remain.
pub fn learn_halfspace<O: ExampleOracle>(oracle: &mut O, cfg: &LearnConfig) -> Result<LearnRun> {
    let d = oracle.dim();
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0 && cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidInput("epsilon and delta must lie in (0,1)".into()));
    }
    if cfg.mode == Mode::Theory && cfg.epsilon >= 1.0 / (20.0 * d as f64) {
        return Err(Error::PreconditionViolated("theory mode needs ε < 1/(20d)".into()));
    }
    let r = cfg.rounds(d);
    let m = cfg.samples(d)?;
    let mut list = DecisionList {
        ambient_d: d,
        stages: Vec::new(),
    };
    let mut rounds = Vec::new();
    for round in 0..r {
        let (pts, labels) = oracle.sample(m);
        let uncovered: Vec<usize> = (0..pts.len()).filter(|&i| predict(&list, &pts[i]) == 0).collect();
        let mut rec = RoundRecord {
            round,
            sampled: m,
            uncovered: uncovered.len(),
            stage_added: false,
            covered_fraction: None,
            perceptron_updates: None,
            subspace_dim: None,
        };
        if (uncovered.len() as f64) < cfg.epsilon * m as f64 / 4.0 {
            rounds.push(rec);
            return Ok(LearnRun {
                list,
                rounds,
                round_budget: r,
                samples_per_round: m,
            });
        }
        let s = LabeledSet::new(
            PointSet::new(d, uncovered.iter().map(|&i| pts[i].clone()).collect())?,
            uncovered.iter().map(|&i| labels[i]).collect(),
        )?;
        let fcfg = ForsterConfig::with_mode(0.5, cfg.mode, derive_seed(cfg.seed, round as u64));
        let run = partial_classifier(&s, &fcfg)?;
        let covered = s
            .points
            .points()
            .iter()
            .filter(|x| run.classifier.classify(x) != 0)
            .count();
        rec.stage_added = true;
        rec.covered_fraction = Some(covered as f64 / s.n() as f64);
        rec.perceptron_updates = Some(run.perceptron.total_updates);
        rec.subspace_dim = Some(run.classifier.v_space.dim());
        list.stages.push(run.classifier);
        rounds.push(rec);
    }
    Err(Error::RoundBudgetExceeded { rounds: r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageJson {
    #[serde(rename = "V_basis")]
    pub v_basis: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub threshold: f64,
}

/// Serialized form of a [`DecisionList`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub ambient_d: usize,
    pub stages: Vec<StageJson>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&DecisionList> for ModelJson {
    fn from(f: &DecisionList) -> Self {
        ModelJson {
            ambient_d: f.ambient_d,
            stages: f
                .stages
                .iter()
                .map(|s| StageJson {
                    v_basis: matrix_rows(&s.l),
                    a: matrix_rows(s.a.matrix()),
                    v: s.v.iter().copied().collect(),
                    threshold: s.threshold,
                })
                .collect(),
        }
    }
}

impl TryFrom<&ModelJson> for DecisionList {
    type Error = Error;

    fn try_from(m: &ModelJson) -> Result<Self> {
        let d = m.ambient_d;
        let stages = m
            .stages
            .iter()
            .map(|s| {
                let l = matrix_from_rows(&s.v_basis, d)?;
                let k = l.nrows();
                let v_space = Subspace::new(d, l.row_iter().map(|r| r.transpose()).collect())?;
                let a = Transform::new(matrix_from_rows(&s.a, k)?)?;
                if s.v.len() != k || a.dim() != k {
                    return Err(Error::Parse("stage dimensions disagree".into()));
                }
                Ok(PartialClassifier {
                    v_space,
                    l,
                    a,
                    v: DVector::from_vec(s.v.clone()),
                    threshold: s.threshold,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecisionList { ambient_d: d, stages })
    }
}
