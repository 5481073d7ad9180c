//! Command implementations behind the `descent-planner` binary.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | query parse error or bad usage |
//! | 2 | a HAVING constraint cannot be met |
//! | 3 | training diverged |
//! | 4 | I/O, dataset or other runtime error |

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use descent_planner::artifacts::{ModelFile, Report};
use descent_planner::costmodel::CostParameters;
use descent_planner::dataset::{
    synthesize_with, ColumnSpec, Dataset, DatasetFormat, SynthConfig, SynthTask, DEFAULT_PARTITION_BYTES,
};
use descent_planner::estimator::SpeculationConfig;
use descent_planner::executor::{predict, Executor, StopReason, TrainResult};
use descent_planner::operators::{DataUnit, Features};
use descent_planner::optimizer::{choose, ConstraintCheck, OptimizerConfig, OptimizerDecision};
use descent_planner::plans::assemble;
use descent_planner::querylang::{self, Registry, Statement, TrainingRequest};
use descent_planner::Error;
use serde::Serialize;

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const CONSTRAINT: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const FAILURE: i32 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Query(_) | Error::InvalidArgument(_) | Error::InvalidPlan { .. } => exit::USAGE,
            Error::NonFinite { .. } => exit::DIVERGED,
            _ => exit::FAILURE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<querylang::QueryError> for CliError {
    fn from(e: querylang::QueryError) -> Self {
        CliError::new(exit::USAGE, format!("query error: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(exit::FAILURE, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Options shared by `run` and `explain`.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub cost_params: Option<PathBuf>,
    pub calibrate: bool,
    pub speculation: SpeculationConfig,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub partition_bytes: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 42,
            cost_params: None,
            calibrate: false,
            speculation: SpeculationConfig::default(),
            report: None,
            out: None,
            threads: 1,
            partition_bytes: DEFAULT_PARTITION_BYTES,
        }
    }
}

/// A query argument is either a file holding the query or the query itself.
pub fn load_query(arg: &str) -> CliResult<String> {
    let p = Path::new(arg);
    if !arg.contains(';') && p.is_file() {
        std::fs::read_to_string(p).map_err(|e| CliError::new(exit::FAILURE, format!("{arg}: {e}")))
    } else {
        Ok(arg.to_string())
    }
}

fn optimizer_config(req: &TrainingRequest, s: &Settings) -> CliResult<OptimizerConfig> {
    let cost = match &s.cost_params {
        Some(p) => CostParameters::load(p)?,
        None => CostParameters::default(),
    };
    Ok(OptimizerConfig {
        pins: req.pins,
        cost,
        calibrate: s.calibrate,
        ..OptimizerConfig::default()
    })
}

fn format_extra(format: &DatasetFormat, extra: &mut BTreeMap<String, String>) {
    match format {
        DatasetFormat::LibsvmSparse => {
            extra.insert("input_format".into(), "libsvm".into());
        }
        DatasetFormat::DenseCsv { columns } => {
            extra.insert("input_format".into(), "dense".into());
            extra.insert("label_column".into(), columns.label.to_string());
            if let Some((a, b)) = columns.features {
                extra.insert("feature_columns".into(), format!("{a}-{b}"));
            }
        }
    }
}

/// The input format a model was trained on, as recorded in its header.
pub fn model_input_format(model: &ModelFile) -> DatasetFormat {
    if model.extra.get("input_format").map(String::as_str) == Some("libsvm") {
        return DatasetFormat::LibsvmSparse;
    }
    let label = model
        .extra
        .get("label_column")
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let features = model.extra.get("feature_columns").and_then(|v| {
        let (a, b) = v.split_once('-')?;
        Some((a.parse().ok()?, b.parse().ok()?))
    });
    DatasetFormat::DenseCsv {
        columns: ColumnSpec { label, features },
    }
}

/// Everything one RUN statement produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub decision: OptimizerDecision,
    pub train: Option<TrainResult>,
    pub model: Option<ModelFile>,
    pub report: Report,
}

/// Parses, optimizes and (unless `train` is false) executes one RUN query.
fn run_query(
    q: &querylang::RunQuery,
    text: &str,
    s: &Settings,
    train: bool,
    adjust: impl FnOnce(&mut TrainingRequest),
    out: &mut dyn Write,
) -> CliResult<RunOutcome> {
    let mut req = querylang::validate(q, &Registry::default())?;
    adjust(&mut req);
    let dataset = Dataset::ingest(&req.path, req.format, s.partition_bytes)?;
    let cfg = optimizer_config(&req, s)?;
    let decision = choose(
        &dataset,
        &req.gradient,
        &req.hyper,
        &s.speculation,
        &cfg,
        &req.constraints,
        s.seed,
    )?;
    let dataset_json = serde_json::json!({
        "path": req.path,
        "format": req.format,
        "stats": dataset.stats(),
    });
    let name = q.binding.clone().unwrap_or_else(|| "query".into());
    if !train || !decision.constraint.is_ok() {
        let report = Report::new(text.to_string(), s.seed, dataset_json, decision.clone(), None);
        return Ok(RunOutcome {
            name,
            decision,
            train: None,
            model: None,
            report,
        });
    }

    let pipeline = assemble(decision.chosen, req.gradient.clone(), req.hyper)?;
    let executor = Executor::new(s.threads)?;
    let budget = req
        .constraints
        .time
        .map(|t| t.saturating_sub(Duration::from_secs_f64(decision.speculation_seconds)));
    let result = executor.execute(&pipeline, &dataset, s.seed, budget)?;
    writeln!(
        out,
        "{name}: trained {} in {} iterations ({}), final delta {}",
        decision.chosen_plan,
        result.iterations_run,
        result.stop_reason.name(),
        result.final_delta().map_or("n/a".into(), |d| format!("{d:e}")),
    )?;
    let mut extra = BTreeMap::new();
    extra.insert("seed".into(), s.seed.to_string());
    extra.insert("stop_reason".into(), result.stop_reason.name().into());
    format_extra(&req.format, &mut extra);
    let model = ModelFile {
        task: key_of(&q.target),
        gradient: req.gradient.name().to_string(),
        plan: decision.chosen_plan.clone(),
        iterations: result.iterations_run,
        final_delta: result.final_delta(),
        extra,
        weights: result.weights.clone(),
    };
    let report = Report::new(text.to_string(), s.seed, dataset_json, decision.clone(), Some(&result));
    Ok(RunOutcome {
        name,
        decision,
        train: Some(result),
        model: Some(model),
        report,
    })
}

fn key_of(target: &str) -> String {
    target.trim_end_matches("()").to_ascii_lowercase()
}

fn constraint_error(d: &OptimizerDecision) -> Option<CliError> {
    match &d.constraint {
        ConstraintCheck::Ok => None,
        ConstraintCheck::Violated { constraint, detail } => Some(CliError::new(
            exit::CONSTRAINT,
            format!("constraint {constraint} cannot be satisfied: {detail}"),
        )),
    }
}

fn write_report(report: &Report, s: &Settings) -> CliResult<()> {
    if let Some(p) = &s.report {
        report.write(p)?;
    }
    Ok(())
}

/// Runs every statement of a query script. RUN trains, PERSIST writes a
/// trained model, PREDICT scores a test set against a model file or a
/// model trained earlier in the same script. `--out` receives the model of
/// the last RUN and `--report` its report.
pub fn cmd_run(query: &str, s: &Settings, out: &mut dyn Write) -> CliResult<Vec<RunOutcome>> {
    let statements = querylang::parse_script(query)?;
    if statements.is_empty() {
        return Err(CliError::new(exit::USAGE, "query is empty"));
    }
    let mut outcomes: Vec<RunOutcome> = Vec::new();
    for stmt in &statements {
        match stmt {
            Statement::Run(q) => {
                let o = run_query(q, &stmt.to_string(), s, true, |_| {}, out)?;
                if let Some(err) = constraint_error(&o.decision) {
                    write_report(&o.report, s)?;
                    return Err(err);
                }
                if let Some(t) = &o.train {
                    if let StopReason::Diverged(why) = &t.stop_reason {
                        write_report(&o.report, s)?;
                        return Err(CliError::new(exit::DIVERGED, format!("training diverged: {why}")));
                    }
                }
                outcomes.push(o);
            }
            Statement::Persist(p) => {
                let o =
                    outcomes.iter().rev().find(|o| o.name == p.query).ok_or_else(|| {
                        CliError::new(exit::USAGE, format!("PERSIST names unknown query {:?}", p.query))
                    })?;
                let model = o.model.as_ref().expect("trained run has a model");
                model.write(Path::new(&p.path))?;
                writeln!(out, "{}: model written to {}", p.query, p.path)?;
            }
            Statement::Predict(p) => {
                let model = match outcomes.iter().rev().find(|o| o.name == p.model) {
                    Some(o) => o.model.clone().expect("trained run has a model"),
                    None => ModelFile::read(Path::new(&p.model))?,
                };
                let format = if p.test.parser.is_some() || p.test.columns.is_some() {
                    querylang::dataset_format(std::slice::from_ref(&p.test))?.1
                } else {
                    model_input_format(&model)
                };
                let score = score(Path::new(&p.test.path), format, &model)?;
                let name = p.binding.as_deref().unwrap_or("prediction");
                writeln!(out, "{name}: {}", score.summary())?;
            }
        }
    }
    if let Some(last) = outcomes.last() {
        if let (Some(path), Some(model)) = (&s.out, &last.model) {
            model.write(path)?;
        }
        write_report(&last.report, s)?;
    }
    Ok(outcomes)
}

/// Options `explain` adds on top of [`Settings`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExplainOverrides {
    pub max_iter: Option<u64>,
    pub no_epsilon: bool,
}

/// Optimizes the first RUN of `query` and prints the plan table, cheapest first.
pub fn cmd_explain(
    query: &str,
    s: &Settings,
    overrides: ExplainOverrides,
    out: &mut dyn Write,
) -> CliResult<OptimizerDecision> {
    let statements = querylang::parse_script(query)?;
    let q = statements
        .iter()
        .find_map(|st| match st {
            Statement::Run(q) => Some(q),
            _ => None,
        })
        .ok_or_else(|| CliError::new(exit::USAGE, "explain needs a RUN statement"))?;
    let text = Statement::Run(q.clone()).to_string();
    let o = run_query(
        q,
        &text,
        s,
        false,
        |req| {
            if let Some(m) = overrides.max_iter {
                req.hyper.max_iter = m;
            }
            if overrides.no_epsilon {
                req.hyper.tolerance = None;
            }
        },
        out,
    )?;
    let d = &o.decision;
    writeln!(out, "{}", d.render_table())?;
    writeln!(
        out,
        "chosen: {}  (optimizer time {:.3} s{})",
        d.chosen_plan,
        d.speculation_seconds,
        if d.speculated { ", with speculation" } else { "" }
    )?;
    for e in &d.estimates {
        let fit = match (e.fit_a, e.fit_residual, e.fit_points) {
            (Some(a), Some(r), Some(n)) => format!("a={a:.6e} residual={r:.3e} points={n}"),
            _ => "no fit".into(),
        };
        let note = e.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
        writeln!(out, "  {:<16} T={:<8} {fit}{note}", e.algorithm, e.iterations)?;
    }
    write_report(&o.report, s)?;
    if let Some(err) = constraint_error(d) {
        return Err(err);
    }
    Ok(o.decision)
}

#[derive(Debug, Clone, Serialize)]
pub struct Score {
    pub n: usize,
    pub mse: f64,
    pub accuracy: Option<f64>,
    pub predictions: Vec<f64>,
}

impl Score {
    pub fn summary(&self) -> String {
        match self.accuracy {
            Some(a) => format!("n={} mse={:.6} accuracy={:.6}", self.n, self.mse, a),
            None => format!("n={} mse={:.6}", self.n, self.mse),
        }
    }
}

fn score(test: &Path, format: DatasetFormat, model: &ModelFile) -> CliResult<Score> {
    let ds = Dataset::ingest(test, format, DEFAULT_PARTITION_BYTES)?;
    let units = ds.parse_all()?;
    let classification = model.gradient != "linear-regression";
    let p = predict(&model.weights, &units, classification)?;
    Ok(Score {
        n: units.len(),
        mse: p.mse,
        accuracy: p.accuracy,
        predictions: p.predictions,
    })
}

/// Scores a test file with a model file. The test file is read in the
/// format recorded in the model unless `format` overrides it.
pub fn cmd_predict(
    test: &Path,
    model: &Path,
    format: Option<DatasetFormat>,
    predictions_out: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Score> {
    let m = ModelFile::read(model)?;
    let format = format.unwrap_or_else(|| model_input_format(&m));
    let sc = score(test, format, &m)?;
    writeln!(out, "mse {}", sc.mse)?;
    if let Some(a) = sc.accuracy {
        writeln!(out, "accuracy {a}")?;
    }
    if let Some(p) = predictions_out {
        let text: String = sc.predictions.iter().map(|v| format!("{v}\n")).collect();
        std::fs::write(p, text).map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", p.display())))?;
    }
    Ok(sc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Dense,
    Libsvm,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dense" | "csv" => Ok(OutputFormat::Dense),
            "libsvm" | "sparse" => Ok(OutputFormat::Libsvm),
            other => Err(format!("unknown format {other:?}; expected dense or libsvm")),
        }
    }
}

pub fn parse_task(s: &str) -> CliResult<SynthTask> {
    match s.to_ascii_lowercase().as_str() {
        "classification" | "svm" | "hinge" | "logistic" => Ok(SynthTask::Classification),
        "regression" | "linear" => Ok(SynthTask::Regression),
        other => Err(CliError::new(
            exit::USAGE,
            format!("unknown task {other:?}; expected classification or regression"),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct GenerateSpec {
    pub task: SynthTask,
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    pub seed: u64,
    pub density: f64,
    pub format: OutputFormat,
    /// Files are written as `<prefix>.train`, `<prefix>.test` and `<prefix>.truth.json`.
    pub prefix: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub truth: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

fn render(u: &DataUnit, format: OutputFormat, d: usize) -> String {
    let mut s = format!("{}", u.label);
    match (format, &u.features) {
        (OutputFormat::Dense, Features::Dense(x)) => {
            for v in x {
                s += &format!(",{v}");
            }
        }
        (OutputFormat::Dense, Features::Sparse { indices, values }) => {
            let mut x = vec![0.0; d];
            for (&i, &v) in indices.iter().zip(values) {
                x[i as usize] = v;
            }
            for v in x {
                s += &format!(",{v}");
            }
        }
        (OutputFormat::Libsvm, Features::Dense(x)) => {
            for (i, v) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                s += &format!(" {}:{v}", i + 1);
            }
        }
        (OutputFormat::Libsvm, Features::Sparse { indices, values }) => {
            for (&i, v) in indices.iter().zip(values) {
                s += &format!(" {}:{v}", i + 1);
            }
        }
    }
    s
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", path.display())))
}

/// Writes a synthetic dataset split 80/20 into train and test files, plus a
/// JSON sidecar with the generating weights and the noise-free test labels.
/// Records are i.i.d., so the first 80% form the training split.
pub fn cmd_generate(g: &GenerateSpec, out: &mut dyn Write) -> CliResult<GeneratedFiles> {
    let cfg = SynthConfig::new(g.task, g.n, g.d, g.noise, g.seed).density(g.density);
    let synth = synthesize_with(&cfg)?;
    let units = synth.dataset.parse_all()?;
    let n_train = g.n * 8 / 10;
    let lines: Vec<String> = units.iter().map(|u| render(u, g.format, g.d)).collect();
    let with_suffix = |suffix: &str| {
        let mut p = g.prefix.clone().into_os_string();
        p.push(suffix);
        PathBuf::from(p)
    };
    let files = GeneratedFiles {
        train: with_suffix(".train"),
        test: with_suffix(".test"),
        truth: with_suffix(".truth.json"),
        n_train,
        n_test: g.n - n_train,
    };
    let join = |ls: &[String]| ls.iter().map(|l| format!("{l}\n")).collect::<String>();
    write_file(&files.train, &join(&lines[..n_train]))?;
    write_file(&files.test, &join(&lines[n_train..]))?;
    let truth = serde_json::json!({
        "task": g.task,
        "n_train": files.n_train,
        "n_test": files.n_test,
        "d": g.d,
        "noise": g.noise,
        "density": g.density,
        "seed": g.seed,
        "w_true": synth.w_true,
        "test_noise_free_labels": &synth.noise_free_labels[n_train..],
    });
    write_file(
        &files.truth,
        &(serde_json::to_string_pretty(&truth).expect("plain JSON values") + "\n"),
    )?;
    writeln!(
        out,
        "wrote {} ({} records), {} ({} records), {}",
        files.train.display(),
        files.n_train,
        files.test.display(),
        files.n_test,
        files.truth.display()
    )?;
    Ok(files)
}
