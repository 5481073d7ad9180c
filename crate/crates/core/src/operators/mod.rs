//! The seven GD operators and the loss library.
//!
//! Each function here is the reference semantics of one operator. The
//! executor calls them (or fused equivalents with identical arithmetic) in the
//! order fixed by an assembled plan.

pub mod context;
pub mod gradient;
pub mod unit;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use context::{keys, Context, Value};
pub use gradient::{log1p_exp, GradientFunction, GradientRegistry, PointLoss};
pub use unit::{DataUnit, Features};

use crate::dataset::{DatasetError, DatasetFormat, RawRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Transform,
    Stage,
    Compute,
    Update,
    Sample,
    Converge,
    Loop,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 7] = [
        OperatorKind::Transform,
        OperatorKind::Stage,
        OperatorKind::Compute,
        OperatorKind::Update,
        OperatorKind::Sample,
        OperatorKind::Converge,
        OperatorKind::Loop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Transform => "transform",
            OperatorKind::Stage => "stage",
            OperatorKind::Compute => "compute",
            OperatorKind::Update => "update",
            OperatorKind::Sample => "sample",
            OperatorKind::Converge => "converge",
            OperatorKind::Loop => "loop",
        }
    }

    pub fn from_name(s: &str) -> Option<OperatorKind> {
        OperatorKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How Converge measures the change between successive weight vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceNorm {
    #[default]
    L2,
    L1,
}

impl ConvergenceNorm {
    pub fn name(self) -> &'static str {
        match self {
            ConvergenceNorm::L2 => "l2",
            ConvergenceNorm::L1 => "l1",
        }
    }

    pub fn from_name(s: &str) -> Option<ConvergenceNorm> {
        match s.trim_end_matches("()").to_ascii_lowercase().as_str() {
            "l2" | "l2-norm" | "l2norm" => Some(ConvergenceNorm::L2),
            "l1" | "l1-norm" | "l1norm" => Some(ConvergenceNorm::L1),
            _ => None,
        }
    }
}

/// Transform: parses one raw record into a data unit of dimension `ctx.dim()`.
pub fn transform(record: &RawRecord, format: &DatasetFormat, ctx: &Context) -> Result<DataUnit> {
    transform_record(record, format, ctx.dim())
}

pub(crate) fn transform_record(record: &RawRecord, format: &DatasetFormat, d: usize) -> Result<DataUnit> {
    let unit = format
        .parse(&record.text, Some(d))
        .map_err(|e| DatasetError::BadRecord {
            partition_id: record.partition_id,
            offset: record.offset,
            column: e.column,
            reason: e.reason,
        })?;
    if let Features::Dense(x) = &unit.features {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
    }
    Ok(unit)
}

/// Stage: zero weights, `step = beta`, `iter = 0`. When units are passed, the
/// per-feature mean is stored under `feature_mean` for transforms that need it.
pub fn stage(d: usize, step_beta: f64, lambda: f64, init_units: Option<&[DataUnit]>) -> Context {
    let mut ctx = Context::new(d, step_beta, lambda);
    if let Some(units) = init_units.filter(|u| !u.is_empty()) {
        let mut mean = vec![0.0; d];
        for u in units {
            u.features.axpy(1.0, &mut mean);
        }
        let n = units.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        ctx.put(keys::FEATURE_MEAN, Value::Vector(mean))
            .expect("feature_mean is not a canonical key");
    }
    ctx
}

/// Compute: the loss gradient of one unit at the current weights.
pub fn compute(unit: &DataUnit, ctx: &Context, gradient: &GradientFunction) -> Result<Vec<f64>> {
    let d = ctx.dim();
    let need = unit.features.min_dim();
    let dense_len = match &unit.features {
        Features::Dense(x) => Some(x.len()),
        Features::Sparse { .. } => None,
    };
    if need > d || dense_len.is_some_and(|l| l != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dense_len.unwrap_or(need),
        });
    }
    let mut g = vec![0.0; d];
    gradient.accumulate(&ctx.weights, unit, 1.0, &mut g);
    Ok(g)
}

/// Elementwise sum of gradient contributions.
pub fn aggregate(contributions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = contributions.first().ok_or(Error::EmptyAggregate)?;
    let mut acc = first.clone();
    for c in &contributions[1..] {
        if c.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                found: c.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(c) {
            *a += x;
        }
    }
    Ok(acc)
}

/// `beta / sqrt(i)`
#[inline]
pub fn step_size(beta: f64, i: u64) -> f64 {
    beta / (i as f64).sqrt()
}

/// Update: takes one step along the mean gradient and returns the new weights.
///
/// Advances `ctx.iter` to `i` and sets `ctx.step` to `beta / sqrt(i)`. The
/// weights in `ctx` are left alone so Converge can compare old and new.
pub fn update(aggregated: &[f64], batch_size: usize, ctx: &mut Context) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if aggregated.len() != ctx.dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.dim(),
            found: aggregated.len(),
        });
    }
    let i = ctx.iter + 1;
    let alpha = step_size(ctx.step_beta, i);
    let inv_b = 1.0 / batch_size as f64;
    let lambda = ctx.regularizer_lambda;
    let mut next = Vec::with_capacity(ctx.dim());
    for (w, g) in ctx.weights.iter().zip(aggregated) {
        let ghat = g * inv_b + 2.0 * lambda * w;
        if !ghat.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                iteration: i,
            });
        }
        next.push(w - alpha * ghat);
    }
    if next.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            what: "weights",
            iteration: i,
        });
    }
    ctx.iter = i;
    ctx.step = alpha;
    Ok(next)
}

/// Converge: distance between `new_weights` and the weights held in `ctx`.
pub fn converge(new_weights: &[f64], ctx: &Context, norm: ConvergenceNorm) -> f64 {
    weight_delta(&ctx.weights, new_weights, norm)
}

pub fn weight_delta(old: &[f64], new: &[f64], norm: ConvergenceNorm) -> f64 {
    let diffs = old.iter().zip(new).map(|(a, b)| b - a);
    match norm {
        ConvergenceNorm::L2 => diffs.map(|x| x * x).sum::<f64>().sqrt(),
        ConvergenceNorm::L1 => diffs.map(f64::abs).sum(),
    }
}

/// Loop: `true` to run another iteration.
pub fn loop_decision(delta: f64, ctx: &Context, tolerance: Option<f64>, max_iter: u64) -> bool {
    let converged = tolerance.is_some_and(|tol| delta < tol);
    !(converged || ctx.iter >= max_iter)
}

/// Mean pointwise loss plus `lambda * |w|^2`.
pub fn objective(weights: &[f64], units: &[DataUnit], gradient: &GradientFunction, lambda: f64) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::InvalidArgument("objective of an empty unit list".into()));
    }
    let sum: f64 = units.iter().map(|u| gradient.loss(weights, u)).sum();
    Ok(sum / units.len() as f64 + lambda * weights.iter().map(|w| w * w).sum::<f64>())
}

/// Gradient of [`objective`]: mean loss gradient plus `2 lambda w`.
pub fn full_gradient(
    weights: &[f64],
    units: &[DataUnit],
    gradient: &GradientFunction,
    lambda: f64,
) -> Result<Vec<f64>> {
    if units.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let mut g = vec![0.0; weights.len()];
    for u in units {
        gradient.accumulate(weights, u, 1.0, &mut g);
    }
    let inv = 1.0 / units.len() as f64;
    for (gj, wj) in g.iter_mut().zip(weights) {
        *gj = *gj * inv + 2.0 * lambda * wj;
    }
    Ok(g)
}
