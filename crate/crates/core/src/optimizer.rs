//! Plan choice.
//!
//! One speculation per algorithm on a shared sample gives an iteration
//! estimate; the cost model turns it into a total time per plan; the cheapest
//! plan that satisfies the constraints wins.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::costmodel::{calibrate, plan_cost_per_run, CostParameters};
use crate::dataset::Dataset;
use crate::estimator::{draw_sample, estimate, speculate_on, speculation_plan, SpeculationConfig};
use crate::executor::TrainResult;
use crate::operators::GradientFunction;
use crate::plans::{
    enumerate_plans, AlgorithmKind, GDAlgorithm, GDPlan, HyperParams, TransformMode, DEFAULT_MGD_BATCH,
};
use crate::sampling::SamplingStrategy;
use crate::{Error, Result};

/// User constraints from a HAVING clause that the optimizer checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub time: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ConstraintCheck {
    Ok,
    Violated { constraint: String, detail: String },
}

impl ConstraintCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, ConstraintCheck::Ok)
    }
}

/// Parts of the plan fixed by the user.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pins {
    pub algorithm: Option<GDAlgorithm>,
    pub sampler: Option<SamplingStrategy>,
    pub mode: Option<TransformMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithms: Vec<AlgorithmKind>,
    pub mgd_batch: usize,
    pub pins: Pins,
    /// Base cost parameters; replaced by measured ones when `calibrate` is set.
    pub cost: CostParameters,
    pub calibrate: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithms: AlgorithmKind::ALL.to_vec(),
            mgd_batch: DEFAULT_MGD_BATCH,
            pins: Pins::default(),
            cost: CostParameters::default(),
            calibrate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmEstimate {
    pub algorithm: String,
    pub iterations: u64,
    pub fit_a: Option<f64>,
    pub fit_residual: Option<f64>,
    pub fit_points: Option<usize>,
    /// Iterations the speculation ran.
    pub speculation_iterations: u64,
    /// The speculation reached the target tolerance itself.
    pub observed: bool,
    pub low_confidence: bool,
    pub note: Option<String>,
    /// Plot-ready `(iteration, delta)` series.
    pub error_sequence: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub plan: String,
    pub estimated_iterations: u64,
    /// Per-iteration cost with run-level sampling spread over the iterations.
    pub cost_per_iteration: f64,
    pub setup_cost: f64,
    pub estimated_total: f64,
    pub fit_residual: Option<f64>,
    pub low_confidence: bool,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerDecision {
    pub chosen: GDPlan,
    pub chosen_plan: String,
    /// Rows in enumeration order.
    pub table: Vec<PlanRow>,
    pub estimates: Vec<AlgorithmEstimate>,
    pub speculation_seconds: f64,
    pub speculated: bool,
    pub constraint: ConstraintCheck,
    pub cost_parameters: CostParameters,
}

impl OptimizerDecision {
    pub fn row(&self, plan: &str) -> Option<&PlanRow> {
        self.table.iter().find(|r| r.plan == plan)
    }

    /// Rows by estimated total, cheapest first.
    pub fn sorted_rows(&self) -> Vec<&PlanRow> {
        let mut rows: Vec<&PlanRow> = self.table.iter().collect();
        rows.sort_by(|a, b| a.estimated_total.total_cmp(&b.estimated_total));
        rows
    }

    /// Aligned text table, sorted by estimated total.
    pub fn render_table(&self) -> String {
        let header = [
            "plan",
            "est. T",
            "est. cost/iter (s)",
            "est. total (s)",
            "fit residual",
            "note",
        ];
        let rows: Vec<[String; 6]> = self
            .sorted_rows()
            .into_iter()
            .map(|r| {
                let mut note = Vec::new();
                if r.plan == self.chosen_plan {
                    note.push("chosen");
                }
                if r.low_confidence {
                    note.push("low-confidence");
                }
                if !r.feasible {
                    note.push("infeasible");
                }
                [
                    r.plan.clone(),
                    r.estimated_iterations.to_string(),
                    format!("{:.6e}", r.cost_per_iteration),
                    format!("{:.6e}", r.estimated_total),
                    r.fit_residual.map_or("-".into(), |x| format!("{x:.3}")),
                    note.join(","),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header.map(String::from), &mut out);
        line(&widths.map(|w| "-".repeat(w)), &mut out);
        for r in &rows {
            line(r, &mut out);
        }
        out
    }
}

/// Candidate plans after applying the pins.
pub fn candidate_plans(cfg: &OptimizerConfig) -> Result<Vec<GDPlan>> {
    let pins = cfg.pins;
    let plans = match pins.algorithm {
        Some(alg @ (GDAlgorithm::Svrg { .. } | GDAlgorithm::BgdLineSearch { .. })) => {
            let sampling = if alg.is_full_batch() {
                None
            } else {
                Some(pins.sampler.unwrap_or(SamplingStrategy::RandomPartition))
            };
            vec![GDPlan::new(alg, TransformMode::Eager, sampling)?]
        }
        Some(alg) => {
            let kind = alg.kind().expect("plain algorithm");
            let batch = alg.batch().unwrap_or(cfg.mgd_batch);
            enumerate_plans(
                &[kind],
                if kind == AlgorithmKind::Mgd {
                    batch
                } else {
                    cfg.mgd_batch
                },
            )
        }
        None => enumerate_plans(&cfg.algorithms, cfg.mgd_batch),
    };
    let plans: Vec<GDPlan> = plans
        .into_iter()
        .filter(|p| pins.mode.is_none_or(|m| p.mode == m))
        .filter(|p| pins.sampler.is_none_or(|s| p.sampling.is_none_or(|ps| ps == s)))
        .collect();
    if plans.is_empty() {
        return Err(Error::InvalidPlan {
            plan: format!("{pins:?}"),
            reason: "no plan matches the requested algorithm, sampler and mode".into(),
        });
    }
    Ok(plans)
}

fn algorithm_key(plan: &GDPlan) -> String {
    plan.algorithm.to_string()
}

/// Picks the cheapest plan for training on `dataset`.
pub fn choose(
    dataset: &Dataset,
    gradient: &GradientFunction,
    hyper: &HyperParams,
    spec: &SpeculationConfig,
    cfg: &OptimizerConfig,
    constraints: &Constraints,
    seed: u64,
) -> Result<OptimizerDecision> {
    hyper.validate()?;
    let candidates = candidate_plans(cfg)?;
    let stats = *dataset.stats();
    let started = Instant::now();

    // One speculation per distinct algorithm, in candidate order.
    let mut algs: Vec<GDPlan> = Vec::new();
    for p in &candidates {
        if !algs.iter().any(|q| q.algorithm == p.algorithm) {
            algs.push(*p);
        }
    }
    let mut estimates = Vec::new();
    let mut runs: Vec<TrainResult> = Vec::new();
    let mut sample: Option<Dataset> = None;
    let speculated = hyper.tolerance.is_some();
    match hyper.tolerance {
        None => {
            for p in &algs {
                estimates.push(AlgorithmEstimate {
                    algorithm: algorithm_key(p),
                    iterations: hyper.max_iter,
                    fit_a: None,
                    fit_residual: None,
                    fit_points: None,
                    speculation_iterations: 0,
                    observed: false,
                    low_confidence: false,
                    note: Some("fixed iteration count".into()),
                    error_sequence: Vec::new(),
                });
            }
        }
        Some(eps_d) => {
            let s = draw_sample(dataset, spec.sample_size.min(stats.n).max(2), seed)?;
            for p in &algs {
                let plan = match p.algorithm.kind() {
                    Some(kind) => speculation_plan(kind, p.algorithm.batch().unwrap_or(cfg.mgd_batch), s.stats().n),
                    None => GDPlan {
                        mode: TransformMode::Eager,
                        ..*p
                    },
                };
                let est = speculate_on(plan, &s, gradient, spec, hyper, seed)
                    .and_then(|sp| estimate(&sp.sequence, eps_d, hyper.max_iter).map(|e| (sp, e)));
                estimates.push(match est {
                    Ok((sp, e)) => {
                        let row = AlgorithmEstimate {
                            algorithm: algorithm_key(p),
                            iterations: e.iterations,
                            fit_a: e.fit.map(|f| f.a),
                            fit_residual: e.fit.map(|f| f.residual),
                            fit_points: e.fit.map(|f| f.points_used),
                            speculation_iterations: sp.run.iterations_run,
                            observed: e.observed,
                            low_confidence: !e.observed && e.fit.is_some_and(|f| f.low_confidence),
                            note: None,
                            error_sequence: sp.sequence.points.clone(),
                        };
                        runs.push(sp.run);
                        row
                    }
                    Err(err) => AlgorithmEstimate {
                        algorithm: algorithm_key(p),
                        iterations: hyper.max_iter,
                        fit_a: None,
                        fit_residual: None,
                        fit_points: None,
                        speculation_iterations: 0,
                        observed: false,
                        low_confidence: true,
                        note: Some(err.to_string()),
                        error_sequence: Vec::new(),
                    },
                });
            }
            sample = Some(s);
        }
    }
    let speculation_seconds = started.elapsed().as_secs_f64();

    let mut params = match (&sample, cfg.calibrate) {
        (Some(s), true) if !runs.is_empty() => calibrate(s, &runs.iter().collect::<Vec<_>>(), &cfg.cost),
        _ => cfg.cost.clone(),
    };
    params.partition_bytes = stats.partition_bytes as f64;

    let mut table = Vec::with_capacity(candidates.len());
    for p in &candidates {
        let e = estimates
            .iter()
            .find(|e| e.algorithm == algorithm_key(p))
            .expect("one estimate per algorithm");
        let cost = plan_cost_per_run(p, e.iterations, &stats, &params)?;
        let feasible = constraints
            .time
            .is_none_or(|limit| cost.total + speculation_seconds <= limit.as_secs_f64());
        table.push(PlanRow {
            plan: p.to_string(),
            estimated_iterations: e.iterations,
            cost_per_iteration: cost.per_iteration_amortized(e.iterations),
            setup_cost: cost.setup,
            estimated_total: cost.total,
            fit_residual: e.fit_residual,
            low_confidence: e.low_confidence,
            feasible,
        });
    }

    let pick = |only_feasible: bool| {
        (0..table.len())
            .filter(|&i| !only_feasible || table[i].feasible)
            .min_by(|&a, &b| {
                let (x, y) = (&table[a], &table[b]);
                x.estimated_total
                    .total_cmp(&y.estimated_total)
                    .then(x.estimated_iterations.cmp(&y.estimated_iterations))
                    .then(a.cmp(&b))
            })
    };
    let idx = pick(true).or_else(|| pick(false)).expect("at least one candidate");
    let mut decision = OptimizerDecision {
        chosen: candidates[idx],
        chosen_plan: candidates[idx].to_string(),
        table,
        estimates,
        speculation_seconds,
        speculated,
        constraint: ConstraintCheck::Ok,
        cost_parameters: params,
    };
    decision.constraint = check_constraints(&decision, constraints);
    Ok(decision)
}

/// Compares the chosen plan's estimate plus speculation time with the time limit.
pub fn check_constraints(decision: &OptimizerDecision, constraints: &Constraints) -> ConstraintCheck {
    let Some(limit) = constraints.time else {
        return ConstraintCheck::Ok;
    };
    let Some(row) = decision.row(&decision.chosen_plan) else {
        return ConstraintCheck::Ok;
    };
    let needed = row.estimated_total + decision.speculation_seconds;
    if needed <= limit.as_secs_f64() {
        ConstraintCheck::Ok
    } else {
        ConstraintCheck::Violated {
            constraint: "time".into(),
            detail: format!(
                "the cheapest plan ({}) needs an estimated {needed:.3} s, over the time limit of {:.3} s",
                decision.chosen_plan,
                limit.as_secs_f64()
            ),
        }
    }
}
