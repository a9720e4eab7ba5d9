//! `forster`: point-set transforms, rounding and halfspace learning from the
//! command line. Every subcommand prints a JSON report; identical flags and
//! seed give byte-identical output.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use forster_core::decomposition::forster_subspace;
use forster_core::eigen::{approx_eigendecomposition, verify_multiplicative, EigenConfig, Mode};
use forster_core::forster::{forster_transform, ForsterConfig, ForsterOutcome};
use forster_core::io::{read_points, write_points};
use forster_core::learner::{
    evaluate, learn_halfspace, matrix_rows, DecisionList, EmpiricalOracle, ExampleOracle, LearnConfig, ModelJson,
};
use forster_core::rng::{derive_seed, rng_from};
use forster_core::rounding::{round_transform, RoundConfig};
use forster_core::synth::{gaussian_vector, generate, GenSpec};
use forster_core::{Error, PointSet, Subspace, Transform};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(
    name = "forster",
    version,
    about = "Approximate Forster transforms and halfspace learning"
)]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Include wall time in the report (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic point set and its ground truth.
    Gen(GenArgs),
    /// Compute an approximate Forster transform or a dense subspace.
    Transform(TransformArgs),
    /// Descend into dense subspaces until a transform exists.
    Decompose(TransformArgs),
    /// Reduce the condition number of a matrix and round it to integers.
    Round(RoundArgs),
    /// Learn a halfspace as a decision list of partial classifiers.
    Learn(LearnArgs),
    /// Evaluate a learned model on labeled points.
    Eval(EvalArgs),
    /// Check the eigendecomposition on a random PSD matrix.
    EigenBench(EigenArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// sphere-uniform, gaussian, dense-subspace:k:fraction,
    /// margin-halfspace:gamma[:w-seed] or rcn:eta:<labeled spec>.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    /// The input's last column is a label and is ignored.
    #[arg(long)]
    labeled: bool,
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
    #[arg(long, env = "FORSTER_MODE", default_value = "practical")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Skip the rounding pass after each accepted step.
    #[arg(long)]
    no_round: bool,
}

#[derive(Args, Debug)]
struct RoundArgs {
    /// JSON matrix: a list of rows, or an object with a `matrix` field.
    #[arg(long)]
    input_matrix: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    labeled: bool,
    #[arg(long, default_value_t = 1e-3)]
    zeta: f64,
    /// Condition threshold N.
    #[arg(long)]
    n_threshold: Option<f64>,
    /// Shrink factor per reduction step.
    #[arg(long)]
    delta_rescale: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// Labeled training points, resampled uniformly.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    train: Option<PathBuf>,
    /// `synthetic:<labeled spec>`, sampled fresh every round.
    #[arg(long)]
    oracle: Option<String>,
    /// Dimension for `--oracle`.
    #[arg(long, required_unless_present = "train")]
    d: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Per-round sample size M (practical mode).
    #[arg(long)]
    samples_per_round: Option<usize>,
    #[arg(long, env = "FORSTER_MODE", default_value = "practical")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled points.
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args, Debug)]
struct EigenArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Condition number of the generated matrix.
    #[arg(long, default_value_t = 1e6)]
    kappa: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Sampled directions for the check.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, env = "FORSTER_MODE", default_value = "practical")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Report written by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunReport {
    subcommand: String,
    status: String,
    seed: Option<u64>,
    config_echo: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
    #[serde(flatten)]
    payload: Map<String, Value>,
}

enum Failure {
    /// Bad flags or unreadable input: exit 2.
    Usage(String),
    /// The algorithm itself failed: exit 1 with a diagnostic report.
    Algorithm(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::BadSpec(_) => Failure::Usage(e.to_string()),
            e => Failure::Algorithm(e),
        }
    }
}

struct Run {
    name: &'static str,
    seed: Option<u64>,
    echo: Value,
}

impl Run {
    fn report(&self, status: &str, payload: Value) -> RunReport {
        let Value::Object(payload) = payload else {
            unreachable!("payloads are objects")
        };
        RunReport {
            subcommand: self.name.to_string(),
            status: status.to_string(),
            seed: self.seed,
            config_echo: self.echo.clone(),
            wall_time_s: None,
            payload,
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    matrix_rows(m)
}

fn basis_rows(s: &Subspace) -> Vec<Vec<f64>> {
    s.basis().iter().map(|b| b.iter().copied().collect()).collect()
}

fn load_points(path: &Path, labeled: bool) -> Result<(PointSet, Option<Vec<i8>>), Failure> {
    let f = read_points(path, labeled)?;
    Ok((f.points, f.labels))
}

fn load_labeled(path: &Path) -> Result<(PointSet, Vec<i8>), Failure> {
    let (p, l) = load_points(path, true)?;
    let l = l.ok_or_else(|| Failure::Usage(format!("{} has no labels", path.display())))?;
    Ok((p, l))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, Failure> {
    let v: Value =
        serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let v = match v {
        Value::Object(mut m) => m
            .remove("matrix")
            .ok_or_else(|| Failure::Usage("no `matrix` field".into()))?,
        v => v,
    };
    let r: Vec<Vec<f64>> = serde_json::from_value(v).map_err(|e| Failure::Usage(format!("matrix: {e}")))?;
    let ncols = r.first().map_or(0, Vec::len);
    if r.len() != ncols || ncols == 0 {
        return Err(Failure::Usage("matrix must be square and nonempty".into()));
    }
    Ok(forster_core::learner::matrix_from_rows(&r, ncols)?)
}

fn forster_config(a: &TransformArgs) -> ForsterConfig {
    ForsterConfig {
        max_iters: a.max_iters,
        round: !a.no_round,
        ..ForsterConfig::with_mode(a.epsilon, a.mode, a.seed)
    }
}

fn cmd_gen(a: &GenArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let spec: GenSpec = a.spec.parse()?;
    let truth_path = a.truth.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    run.echo = json!({"spec": a.spec, "d": a.d, "n": a.n, "out": a.out, "truth": truth_path});
    let g = generate(&spec, &a.spec, a.d, a.n, &mut rng_from(a.seed))?;
    let points = PointSet::new(a.d, g.points)?;
    write_points(&a.out, &points, g.labels.as_deref())?;
    let truth = serde_json::to_string_pretty(&g.truth).expect("truth serializes");
    fs::write(&truth_path, truth + "\n").map_err(|e| Failure::Usage(format!("{}: {e}", truth_path.display())))?;
    Ok(run.report(
        "ok",
        json!({"points": points.n(), "labeled": g.labels.is_some(), "truth": g.truth}),
    ))
}

fn cmd_transform(a: &TransformArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let (x, _) = load_points(&a.input, a.labeled)?;
    let cfg = forster_config(a);
    run.echo = json!({
        "input": a.input, "n": x.n(), "d": x.d(), "round": cfg.round,
        "params": cfg.resolve(x.d(), x.n()),
    });
    let r = forster_transform(&x, &cfg)?;
    let steps = serde_json::to_value(&r.steps).expect("steps serialize");
    Ok(match r.outcome {
        ForsterOutcome::Transform {
            matrix,
            iterations,
            final_potential,
            potential_trace,
        } => run.report(
            "transform",
            json!({
                "matrix": rows(matrix.matrix()), "iterations": iterations,
                "final_potential": final_potential, "potential_trace": potential_trace, "steps": steps,
            }),
        ),
        ForsterOutcome::DenseSubspace {
            basis,
            members,
            iterations,
            potential_trace,
        } => run.report(
            "dense_subspace",
            json!({
                "subspace_basis": basis_rows(&basis), "members": members, "iterations": iterations,
                "potential_trace": potential_trace, "steps": steps,
            }),
        ),
    })
}

fn cmd_decompose(a: &TransformArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let (x, _) = load_points(&a.input, a.labeled)?;
    let cfg = forster_config(a);
    run.echo = json!({
        "input": a.input, "n": x.n(), "d": x.d(), "round": cfg.round,
        "params": cfg.resolve(x.d(), x.n()),
    });
    let dec = forster_subspace(&x, &cfg)?;
    Ok(run.report(
        "decomposition",
        json!({
            "subspace_basis": rows(&dec.l), "members": dec.members, "matrix": rows(dec.a.matrix()),
            "combined": rows(&dec.combined()), "depth": dec.depth, "iterations": dec.iterations,
        }),
    ))
}

fn cmd_round(a: &RoundArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let m = read_matrix(&a.input_matrix)?;
    let (x, _) = load_points(&a.points, a.labeled)?;
    let cfg = RoundConfig {
        n_threshold: a.n_threshold,
        delta_rescale: a.delta_rescale,
        max_rounds: a.max_rounds,
        ..RoundConfig::new(a.zeta, a.seed)
    };
    run.echo = json!({
        "input_matrix": a.input_matrix, "points": a.points, "n": x.n(), "d": x.d(), "zeta": a.zeta,
        "n_threshold": cfg.resolved_threshold(x.d()), "delta_rescale": a.delta_rescale,
        "max_rounds": a.max_rounds, "eigen": cfg.eigen,
    });
    let r = round_transform(&Transform::new(m)?, &x, &cfg)?;
    Ok(run.report(
        "ok",
        json!({
            "matrix": rows(&r.matrix), "kappa_before": r.kappa_before, "kappa_after": r.kappa_after,
            "max_drift": r.max_drift, "rounds": r.steps, "stop_reason": r.stop_reason,
        }),
    ))
}

/// Fresh samples from a labeled generator spec.
struct SpecOracle {
    spec: GenSpec,
    text: String,
    d: usize,
    rng: ChaCha8Rng,
}

impl ExampleOracle for SpecOracle {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&mut self, m: usize) -> (Vec<DVector<f64>>, Vec<i8>) {
        let g = generate(&self.spec, &self.text, self.d, m, &mut self.rng).expect("spec validated up front");
        (g.points, g.labels.expect("labeled spec"))
    }
}

fn cmd_learn(a: &LearnArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let cfg = |m: usize| LearnConfig {
        mode: a.mode,
        samples_per_round: Some(m),
        ..LearnConfig::practical(a.epsilon, a.delta, m, a.seed)
    };
    let (learned, train) = if let Some(path) = &a.train {
        let (x, labels) = load_labeled(path)?;
        let c = cfg(a.samples_per_round.unwrap_or(x.n()));
        run.echo = json!({
            "train": path, "n": x.n(), "d": x.d(), "epsilon": a.epsilon, "delta": a.delta, "mode": a.mode,
            "samples_per_round": c.samples(x.d())?, "round_budget": c.rounds(x.d()), "big_c": c.big_c,
        });
        let mut oracle = EmpiricalOracle::new(x.points().to_vec(), labels.clone(), derive_seed(a.seed, 1));
        (learn_halfspace(&mut oracle, &c)?, Some((x, labels)))
    } else {
        let text = a.oracle.as_deref().expect("clap enforces one source");
        let spec_text = text
            .strip_prefix("synthetic:")
            .ok_or_else(|| Failure::Usage("--oracle must look like synthetic:<spec>".into()))?;
        let spec: GenSpec = spec_text.parse()?;
        if !spec.is_labeled() {
            return Err(Failure::Usage(format!("oracle spec {spec_text:?} has no labels")));
        }
        let d = a.d.expect("clap enforces --d");
        let c = cfg(a.samples_per_round.unwrap_or(20_000));
        run.echo = json!({
            "oracle": text, "d": d, "epsilon": a.epsilon, "delta": a.delta, "mode": a.mode,
            "samples_per_round": c.samples(d)?, "round_budget": c.rounds(d), "big_c": c.big_c,
        });
        let mut oracle = SpecOracle {
            spec,
            text: spec_text.to_string(),
            d,
            rng: rng_from(derive_seed(a.seed, 1)),
        };
        (learn_halfspace(&mut oracle, &c)?, None)
    };
    let model = ModelJson::from(&learned.list);
    if let Some(path) = &a.model_out {
        let text = serde_json::to_string_pretty(&model).expect("model serializes");
        fs::write(path, text + "\n").map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let mut payload = json!({
        "stages": learned.list.stages.len(), "rounds": learned.rounds,
        "round_budget": learned.round_budget, "samples_per_round": learned.samples_per_round,
    });
    if let Some((x, labels)) = train {
        payload["train_eval"] = json!(evaluate(&learned.list, x.points(), &labels));
    }
    if a.model_out.is_none() {
        payload["model"] = json!(model);
    }
    Ok(run.report("ok", payload))
}

fn cmd_eval(a: &EvalArgs, run: &mut Run) -> Result<RunReport, Failure> {
    let model: ModelJson = serde_json::from_str(&read_text(&a.model)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", a.model.display())))?;
    let list = DecisionList::try_from(&model)?;
    let (x, labels) = load_labeled(&a.test)?;
    run.echo = json!({"model": a.model, "test": a.test, "n": x.n(), "d": x.d(), "stages": list.stages.len()});
    if x.d() != list.ambient_d {
        return Err(Failure::Usage(format!(
            "test points have d = {}, model expects {}",
            x.d(),
            list.ambient_d
        )));
    }
    Ok(run.report("ok", json!(evaluate(&list, x.points(), &labels))))
}

fn cmd_eigen(a: &EigenArgs, run: &mut Run) -> Result<RunReport, Failure> {
    if a.d == 0 || !(a.kappa >= 1.0) {
        return Err(Failure::Usage("need d ≥ 1 and kappa ≥ 1".into()));
    }
    let cfg = match a.mode {
        Mode::Practical => EigenConfig::practical(a.eta, a.delta, derive_seed(a.seed, 1)),
        Mode::Theory => EigenConfig::theory(a.eta, a.delta, derive_seed(a.seed, 1)),
    };
    run.echo = json!({"d": a.d, "kappa": a.kappa, "trials": a.trials, "eigen": cfg});
    let mut rng = rng_from(a.seed);
    let g = DMatrix::from_columns(&(0..a.d).map(|_| gaussian_vector(a.d, &mut rng)).collect::<Vec<_>>());
    let q = g.qr().q();
    let spectrum = DVector::from_fn(a.d, |i, _| match i {
        0 => 1.0,
        i if i + 1 == a.d => 1.0 / a.kappa,
        _ => a.kappa.powf(-rng.random_range(0.0..1.0)),
    });
    let m = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let e = approx_eigendecomposition(&m, &cfg)?;
    let v = verify_multiplicative(&m, &e, a.eta, a.trials, derive_seed(a.seed, 2));
    Ok(run.report(
        if v.passed { "ok" } else { "failed" },
        json!({"worst_ratio": v.worst_ratio, "t_used": e.power_steps, "passed": v.passed, "directions": v.directions}),
    ))
}

fn emit(report: &RunReport, output: Option<&Path>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    match output {
        Some(p) => fs::write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, seed) = match &cli.command {
        Command::Gen(a) => ("gen", Some(a.seed)),
        Command::Transform(a) => ("transform", Some(a.seed)),
        Command::Decompose(a) => ("decompose", Some(a.seed)),
        Command::Round(a) => ("round", Some(a.seed)),
        Command::Learn(a) => ("learn", Some(a.seed)),
        Command::Eval(_) => ("eval", None),
        Command::EigenBench(a) => ("eigen-bench", Some(a.seed)),
    };
    let mut run = Run {
        name,
        seed,
        echo: Value::Null,
    };
    let t0 = Instant::now();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut run),
        Command::Transform(a) => cmd_transform(a, &mut run),
        Command::Decompose(a) => cmd_decompose(a, &mut run),
        Command::Round(a) => cmd_round(a, &mut run),
        Command::Learn(a) => cmd_learn(a, &mut run),
        Command::Eval(a) => cmd_eval(a, &mut run),
        Command::EigenBench(a) => cmd_eigen(a, &mut run),
    };
    let wall = t0.elapsed().as_secs_f64();
    let (mut report, code) = match result {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Algorithm(e)) => {
            eprintln!("error: {e}");
            let mut diag = json!({"kind": e.kind(), "message": e.to_string()});
            if let Error::IterationCapExceeded { potential_trace, .. } = &e {
                diag["potential_trace"] = json!(potential_trace);
            }
            (run.report("error", json!({ "error": diag })), ExitCode::from(1))
        }
    };
    if cli.timing {
        report.wall_time_s = Some(wall);
    }
    if let Err(e) = emit(&report, cli.output.as_deref()) {
        eprintln!("error: writing report: {e}");
        return ExitCode::from(2);
    }
    code
}
