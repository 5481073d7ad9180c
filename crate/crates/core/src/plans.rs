//! The plan space and pipeline assembly.
//!
//! A plan is an (algorithm, transform mode, sampler) triple. The optimizer's
//! default space has 11 plans: one for BGD and five each for MGD and SGD.
//! SVRG and BGD with backtracking line search are built only when asked for.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::operators::{
    full_gradient, keys, objective, step_size, Context, ConvergenceNorm, DataUnit, GradientFunction, OperatorKind,
    Value,
};
use crate::sampling::SamplingStrategy;
use crate::{Error, Result};

pub const DEFAULT_MGD_BATCH: usize = 1000;
pub const DEFAULT_SVRG_M: u64 = 100;
pub const DEFAULT_LS_SHRINK: f64 = 0.5;
pub const DEFAULT_ARMIJO_C: f64 = 1e-4;
pub const MAX_SHRINKS: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Bgd,
    Mgd,
    Sgd,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 3] = [AlgorithmKind::Bgd, AlgorithmKind::Mgd, AlgorithmKind::Sgd];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Bgd => "bgd",
            AlgorithmKind::Mgd => "mgd",
            AlgorithmKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearchMode {
    /// Shrink until `f(w) - f(w - a g) >= c a |g|^2`; `a` restarts at beta every iteration.
    #[default]
    Armijo,
    /// Shrink while `f(w) - f(w - a g) >= a i`, carrying `a` across iterations.
    Listing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum GDAlgorithm {
    Bgd,
    Mgd {
        batch: usize,
    },
    Sgd,
    Svrg {
        m: u64,
    },
    BgdLineSearch {
        shrink: f64,
        armijo_c: f64,
        mode: LineSearchMode,
    },
}

impl GDAlgorithm {
    pub fn kind(&self) -> Option<AlgorithmKind> {
        match self {
            GDAlgorithm::Bgd => Some(AlgorithmKind::Bgd),
            GDAlgorithm::Mgd { .. } => Some(AlgorithmKind::Mgd),
            GDAlgorithm::Sgd => Some(AlgorithmKind::Sgd),
            _ => None,
        }
    }

    pub fn from_kind(kind: AlgorithmKind, batch: usize) -> GDAlgorithm {
        match kind {
            AlgorithmKind::Bgd => GDAlgorithm::Bgd,
            AlgorithmKind::Mgd => GDAlgorithm::Mgd { batch },
            AlgorithmKind::Sgd => GDAlgorithm::Sgd,
        }
    }

    pub fn line_search() -> GDAlgorithm {
        GDAlgorithm::BgdLineSearch {
            shrink: DEFAULT_LS_SHRINK,
            armijo_c: DEFAULT_ARMIJO_C,
            mode: LineSearchMode::Armijo,
        }
    }

    /// Whether each iteration touches the whole dataset.
    pub fn is_full_batch(&self) -> bool {
        matches!(self, GDAlgorithm::Bgd | GDAlgorithm::BgdLineSearch { .. })
    }

    /// Units drawn per iteration, or `None` for full-batch algorithms.
    pub fn batch(&self) -> Option<usize> {
        match self {
            GDAlgorithm::Mgd { batch } => Some(*batch),
            GDAlgorithm::Sgd | GDAlgorithm::Svrg { .. } => Some(1),
            _ => None,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match *self {
            GDAlgorithm::Mgd { batch: 0 } => Err("MGD batch must be at least 1".into()),
            GDAlgorithm::Svrg { m } if m < 2 => Err("SVRG update frequency must be at least 2".into()),
            GDAlgorithm::BgdLineSearch { shrink, armijo_c, .. }
                if !(shrink > 0.0 && shrink < 1.0) || !(armijo_c > 0.0 && armijo_c < 1.0) =>
            {
                Err("line search needs 0 < shrink < 1 and 0 < c < 1".into())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for GDAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GDAlgorithm::Bgd => f.write_str("bgd"),
            GDAlgorithm::Sgd => f.write_str("sgd"),
            GDAlgorithm::Mgd { batch } if batch == DEFAULT_MGD_BATCH => f.write_str("mgd"),
            GDAlgorithm::Mgd { batch } => write!(f, "mgd({batch})"),
            GDAlgorithm::Svrg { m } if m == DEFAULT_SVRG_M => f.write_str("svrg"),
            GDAlgorithm::Svrg { m } => write!(f, "svrg({m})"),
            GDAlgorithm::BgdLineSearch { shrink, armijo_c, mode } => {
                f.write_str(match mode {
                    LineSearchMode::Armijo => "bgd-ls",
                    LineSearchMode::Listing => "bgd-ls-listing",
                })?;
                if shrink != DEFAULT_LS_SHRINK || armijo_c != DEFAULT_ARMIJO_C {
                    write!(f, "({shrink},{armijo_c})")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for GDAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        let (name, args) = match s.split_once('(') {
            Some((n, rest)) => (
                n.to_string(),
                Some(
                    rest.strip_suffix(')')
                        .ok_or_else(|| format!("unclosed '(' in {s:?}"))?
                        .to_string(),
                ),
            ),
            None => (s.clone(), None),
        };
        let args: Vec<&str> = args
            .as_deref()
            .map(|a| a.split(',').map(str::trim).filter(|x| !x.is_empty()).collect())
            .unwrap_or_default();
        let num = |i: usize| -> std::result::Result<Option<f64>, String> {
            args.get(i)
                .map(|a| a.parse::<f64>().map_err(|_| format!("bad parameter {a:?} in {s:?}")))
                .transpose()
        };
        let alg = match name.as_str() {
            "bgd" | "batch" => GDAlgorithm::Bgd,
            "sgd" | "stochastic" => GDAlgorithm::Sgd,
            "mgd" | "mini-batch" | "minibatch" => GDAlgorithm::Mgd {
                batch: num(0)?.map_or(DEFAULT_MGD_BATCH, |b| b as usize),
            },
            "svrg" => GDAlgorithm::Svrg {
                m: num(0)?.map_or(DEFAULT_SVRG_M, |m| m as u64),
            },
            "bgd-ls" | "line-search" | "linesearch" | "bgd-ls-listing" => GDAlgorithm::BgdLineSearch {
                shrink: num(0)?.unwrap_or(DEFAULT_LS_SHRINK),
                armijo_c: num(1)?.unwrap_or(DEFAULT_ARMIJO_C),
                mode: if name == "bgd-ls-listing" {
                    LineSearchMode::Listing
                } else {
                    LineSearchMode::Armijo
                },
            },
            _ => return Err(format!("unknown algorithm {name:?}")),
        };
        alg.check()?;
        Ok(alg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    Eager,
    Lazy,
}

impl TransformMode {
    pub fn name(self) -> &'static str {
        match self {
            TransformMode::Eager => "eager",
            TransformMode::Lazy => "lazy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GDPlan {
    pub algorithm: GDAlgorithm,
    pub mode: TransformMode,
    pub sampling: Option<SamplingStrategy>,
}

impl GDPlan {
    pub fn new(algorithm: GDAlgorithm, mode: TransformMode, sampling: Option<SamplingStrategy>) -> Result<GDPlan> {
        let plan = GDPlan {
            algorithm,
            mode,
            sampling,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn bgd() -> GDPlan {
        GDPlan {
            algorithm: GDAlgorithm::Bgd,
            mode: TransformMode::Eager,
            sampling: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reject = |reason: &str| {
            Err(Error::InvalidPlan {
                plan: self.to_string(),
                reason: reason.into(),
            })
        };
        if let Err(reason) = self.algorithm.check() {
            return reject(&reason);
        }
        if self.algorithm.is_full_batch() {
            if self.sampling.is_some() {
                return reject("full-batch algorithms do not sample");
            }
            if self.mode == TransformMode::Lazy {
                return reject("full-batch algorithms transform every unit up front");
            }
            return Ok(());
        }
        match (self.mode, self.sampling) {
            (_, None) => reject("stochastic algorithms need a sampler"),
            (TransformMode::Lazy, Some(SamplingStrategy::Bernoulli)) => {
                reject("Bernoulli sampling scans every unit, so lazy transformation saves nothing")
            }
            (TransformMode::Lazy, _) if matches!(self.algorithm, GDAlgorithm::Svrg { .. }) => {
                reject("SVRG needs every unit parsed for its full-gradient passes")
            }
            (_, Some(SamplingStrategy::Bernoulli)) if matches!(self.algorithm, GDAlgorithm::Svrg { .. }) => {
                reject("SVRG picks single units; use a partition sampler")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for GDPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.algorithm, self.mode.name())?;
        if let Some(s) = self.sampling {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

impl FromStr for GDPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<GDPlan> {
        let bad = |reason: String| Error::InvalidPlan {
            plan: s.to_string(),
            reason,
        };
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(bad("expected <algorithm>/<mode>[/<sampler>]".into()));
        }
        let algorithm: GDAlgorithm = parts[0].parse().map_err(bad)?;
        let mode = match parts[1] {
            "eager" => TransformMode::Eager,
            "lazy" => TransformMode::Lazy,
            other => return Err(bad(format!("unknown transform mode {other:?}"))),
        };
        let sampling = match parts.get(2) {
            Some(name) => {
                Some(SamplingStrategy::from_name(name).ok_or_else(|| bad(format!("unknown sampler {name:?}")))?)
            }
            None => None,
        };
        GDPlan::new(algorithm, mode, sampling)
    }
}

/// Every plan for the given algorithms, in a fixed order: BGD, then MGD, then
/// SGD; eager before lazy; samplers in [`SamplingStrategy::ALL`] order.
pub fn enumerate_plans(algorithms: &[AlgorithmKind], mgd_batch: usize) -> Vec<GDPlan> {
    let mut out = Vec::new();
    for kind in AlgorithmKind::ALL {
        if !algorithms.contains(&kind) {
            continue;
        }
        let algorithm = GDAlgorithm::from_kind(kind, mgd_batch);
        if kind == AlgorithmKind::Bgd {
            out.push(GDPlan::bgd());
            continue;
        }
        for mode in [TransformMode::Eager, TransformMode::Lazy] {
            for s in SamplingStrategy::ALL {
                let plan = GDPlan {
                    algorithm,
                    mode,
                    sampling: Some(s),
                };
                if plan.validate().is_ok() {
                    out.push(plan);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub step_beta: f64,
    /// `None` runs exactly `max_iter` iterations.
    pub tolerance: Option<f64>,
    pub max_iter: u64,
    pub lambda: f64,
    pub convergence: ConvergenceNorm,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            step_beta: 1.0,
            tolerance: Some(1e-3),
            max_iter: 1000,
            lambda: 0.0,
            convergence: ConvergenceNorm::L2,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_beta > 0.0 && self.step_beta.is_finite()) {
            return Err(Error::InvalidArgument("step beta must be positive".into()));
        }
        if self.tolerance.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("regularizer must be non-negative".into()));
        }
        Ok(())
    }
}

/// An executable plan: the operator sequence plus everything needed to run it.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub plan: GDPlan,
    pub gradient: GradientFunction,
    pub hyper: HyperParams,
    /// Runs once before the loop.
    pub prologue: Vec<OperatorKind>,
    /// Runs every iteration.
    pub body: Vec<OperatorKind>,
}

impl Pipeline {
    pub fn transform_in_loop(&self) -> bool {
        self.body.contains(&OperatorKind::Transform)
    }

    pub fn samples(&self) -> bool {
        self.body.contains(&OperatorKind::Sample)
    }
}

pub fn assemble(plan: GDPlan, gradient: GradientFunction, hyper: HyperParams) -> Result<Pipeline> {
    use OperatorKind::*;
    plan.validate()?;
    hyper.validate()?;
    let (prologue, body) = match (plan.mode, plan.sampling) {
        (TransformMode::Eager, None) => (vec![Transform, Stage], vec![Compute, Update, Converge, Loop]),
        (TransformMode::Eager, Some(_)) => (vec![Transform, Stage], vec![Sample, Compute, Update, Converge, Loop]),
        (TransformMode::Lazy, _) => (vec![Stage], vec![Sample, Transform, Compute, Update, Converge, Loop]),
    };
    Ok(Pipeline {
        plan,
        gradient,
        hyper,
        prologue,
        body,
    })
}

/// One SVRG iteration in flattened form.
///
/// When `t mod m == 1` the full branch runs: `weightsBar` is set to the
/// current weights (for `t > 1`), `mu` becomes the mean full gradient there
/// and the step is `-alpha mu`. Otherwise `unit` is the randomly picked point
/// and the step is `-alpha (grad_i(w) - grad_i(weightsBar) + mu)`.
/// Advances `ctx.iter` to `t` and returns the new weights.
pub fn svrg_step(
    t: u64,
    unit: Option<&DataUnit>,
    all_units: Option<&[DataUnit]>,
    ctx: &mut Context,
    gradient: &GradientFunction,
) -> Result<Vec<f64>> {
    let m = ctx
        .int(keys::M)
        .ok_or_else(|| Error::InvalidArgument("SVRG context lacks m".into()))?;
    let alpha = step_size(ctx.step_beta, t);
    let lambda = ctx.regularizer_lambda;
    let d = ctx.dim();
    let full_branch = t % m == 1 || ctx.vector(keys::MU).is_none();
    let direction = if full_branch {
        let units = all_units
            .ok_or_else(|| Error::InvalidArgument("SVRG full-gradient pass needs the whole dataset".into()))?;
        if t > 1 || ctx.vector(keys::WEIGHTS_BAR).is_none() {
            let w = ctx.weights.clone();
            ctx.put(keys::WEIGHTS_BAR, Value::Vector(w)).expect("extra key");
        }
        let wbar = ctx.vector(keys::WEIGHTS_BAR).expect("set above").to_vec();
        let mu = full_gradient(&wbar, units, gradient, lambda)?;
        ctx.put(keys::MU, Value::Vector(mu.clone())).expect("extra key");
        mu
    } else {
        let unit = unit.ok_or_else(|| Error::InvalidArgument("SVRG inner step needs a unit".into()))?;
        let wbar = ctx.vector(keys::WEIGHTS_BAR).expect("set by the full branch");
        let mu = ctx.vector(keys::MU).expect("set by the full branch");
        let mut g = mu.to_vec();
        gradient.accumulate(&ctx.weights, unit, 1.0, &mut g);
        gradient.accumulate(wbar, unit, -1.0, &mut g);
        for j in 0..d {
            g[j] += 2.0 * lambda * (ctx.weights[j] - wbar[j]);
        }
        g
    };
    let next: Vec<f64> = ctx.weights.iter().zip(&direction).map(|(w, g)| w - alpha * g).collect();
    if next.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            what: "weights",
            iteration: t,
        });
    }
    ctx.iter = t;
    ctx.step = alpha;
    Ok(next)
}

/// One BGD iteration with backtracking line search over `units`.
/// Advances `ctx.iter` and leaves the accepted step in `ctx.step`.
pub fn linesearch_step(
    ctx: &mut Context,
    units: &[DataUnit],
    gradient: &GradientFunction,
    shrink: f64,
    armijo_c: f64,
    mode: LineSearchMode,
) -> Result<Vec<f64>> {
    let lambda = ctx.regularizer_lambda;
    let w = ctx.weights.clone();
    let g = full_gradient(&w, units, gradient, lambda)?;
    let i = ctx.iter + 1;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration: i,
        });
    }
    let g2: f64 = g.iter().map(|x| x * x).sum();
    let f0 = objective(&w, units, gradient, lambda)?;
    let trial = |alpha: f64| -> Vec<f64> { w.iter().zip(&g).map(|(wj, gj)| wj - alpha * gj).collect() };
    ctx.iter = i;
    if g2 == 0.0 {
        return Ok(w);
    }
    let mut alpha = match mode {
        LineSearchMode::Armijo => ctx.step_beta,
        LineSearchMode::Listing => ctx.step,
    };
    let mut shrinks = 0u32;
    let mut step_iteration = 1u64;
    loop {
        let cand = trial(alpha);
        let diff = f0 - objective(&cand, units, gradient, lambda)?;
        let accept = match mode {
            LineSearchMode::Armijo => diff >= armijo_c * alpha * g2,
            LineSearchMode::Listing => !(diff >= alpha * step_iteration as f64),
        };
        if accept {
            ctx.step = alpha;
            ctx.put(keys::STEP_ITERATION, Value::Int(step_iteration))
                .expect("extra key");
            return Ok(cand);
        }
        shrinks += 1;
        if shrinks > MAX_SHRINKS {
            return Err(Error::LineSearchStalled { shrinks: MAX_SHRINKS });
        }
        alpha *= shrink;
        step_iteration += 1;
    }
}
