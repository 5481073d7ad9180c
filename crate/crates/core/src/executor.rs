//! Runs assembled pipelines.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RecordId};
use crate::operators::{
    self, keys, loop_decision, stage, transform_record, Context, DataUnit, GradientFunction, Value,
};
use crate::plans::{linesearch_step, svrg_step, GDAlgorithm, Pipeline, TransformMode};
use crate::sampling::Sampler;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum StopReason {
    ToleranceReached,
    MaxIter,
    TimeBudget,
    Diverged(String),
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::ToleranceReached => "tolerance-reached",
            StopReason::MaxIter => "max-iter",
            StopReason::TimeBudget => "time-budget",
            StopReason::Diverged(_) => "diverged",
        }
    }
}

/// Wall time per phase. Loop bookkeeping is folded into `converge`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub transform: Duration,
    pub sample: Duration,
    pub compute: Duration,
    pub update: Duration,
    pub converge: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.transform + self.sample + self.compute + self.update + self.converge
    }
}

/// Data units each phase handled, used to turn phase times into per-unit costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseUnits {
    pub transform: u64,
    pub sample: u64,
    pub compute: u64,
    pub update: u64,
    pub converge: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub weights: Vec<f64>,
    pub iterations_run: u64,
    /// `(iteration, delta)` for every completed iteration.
    pub error_sequence: Vec<(u64, f64)>,
    pub wall_times: PhaseTimes,
    pub phase_units: PhaseUnits,
    pub stop_reason: StopReason,
    pub elapsed: Duration,
}

impl TrainResult {
    pub fn final_delta(&self) -> Option<f64> {
        self.error_sequence.last().map(|&(_, d)| d)
    }

    /// Per-run metrics record.
    pub fn metrics_json(&self) -> serde_json::Value {
        let secs = |d: Duration| d.as_secs_f64();
        serde_json::json!({
            "iterations_run": self.iterations_run,
            "stop_reason": self.stop_reason.name(),
            "final_delta": self.final_delta(),
            "elapsed_s": secs(self.elapsed),
            "phase_seconds": {
                "transform": secs(self.wall_times.transform),
                "sample": secs(self.wall_times.sample),
                "compute": secs(self.wall_times.compute),
                "update": secs(self.wall_times.update),
                "converge": secs(self.wall_times.converge),
            },
            "phase_units": self.phase_units,
        })
    }
}

/// Executes pipelines, optionally fanning Compute out over a thread pool.
pub struct Executor {
    threads: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::single()
    }
}

impl Executor {
    pub fn single() -> Executor {
        Executor { threads: 1, pool: None }
    }

    /// `threads == 0` uses every available core.
    pub fn new(threads: usize) -> Result<Executor> {
        let threads = if threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            threads
        };
        if threads == 1 {
            return Ok(Executor::single());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Executor {
            threads,
            pool: Some(pool),
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    fn par_map<T: Send + Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        match &self.pool {
            Some(pool) if items.len() > 1 => pool.install(|| items.par_iter().map(&f).collect()),
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn execute(
        &self,
        pipeline: &Pipeline,
        dataset: &Dataset,
        seed: u64,
        time_budget: Option<Duration>,
    ) -> Result<TrainResult> {
        Ok(Run::new(self, pipeline, dataset, seed)?.go(time_budget)?.0)
    }

    /// Like [`Executor::execute`], also returning the weights after every iteration.
    pub fn execute_traced(
        &self,
        pipeline: &Pipeline,
        dataset: &Dataset,
        seed: u64,
    ) -> Result<(TrainResult, Vec<Vec<f64>>)> {
        let mut run = Run::new(self, pipeline, dataset, seed)?;
        run.trace = Some(Vec::new());
        let (result, trace) = run.go(None)?;
        Ok((result, trace.unwrap_or_default()))
    }
}

/// Parsed units of an eager plan, stored flat with partition offsets.
struct Parsed {
    units: Vec<DataUnit>,
    starts: Vec<usize>,
}

impl Parsed {
    fn get(&self, id: RecordId) -> &DataUnit {
        &self.units[self.starts[id.partition as usize] + id.offset as usize]
    }

    fn partition(&self, p: usize) -> &[DataUnit] {
        &self.units[self.starts[p]..self.starts[p + 1]]
    }
}

struct Run<'a> {
    exec: &'a Executor,
    pipeline: &'a Pipeline,
    dataset: &'a Dataset,
    seed: u64,
    d: usize,
    sizes: Vec<usize>,
    times: PhaseTimes,
    counts: PhaseUnits,
    trace: Option<Vec<Vec<f64>>>,
}

impl<'a> Run<'a> {
    fn new(exec: &'a Executor, pipeline: &'a Pipeline, dataset: &'a Dataset, seed: u64) -> Result<Self> {
        Ok(Run {
            exec,
            pipeline,
            dataset,
            seed,
            d: dataset.stats().d,
            sizes: dataset.partitions().iter().map(|p| p.len()).collect(),
            times: PhaseTimes::default(),
            counts: PhaseUnits::default(),
            trace: None,
        })
    }

    fn parse_all(&mut self) -> Result<Parsed> {
        let t0 = Instant::now();
        let format = self.dataset.format();
        let d = self.d;
        let per_part: Vec<Result<Vec<DataUnit>>> = self.exec.par_map(self.dataset.partitions(), |p| {
            p.records.iter().map(|r| transform_record(r, &format, d)).collect()
        });
        let mut units = Vec::with_capacity(self.dataset.stats().n);
        let mut starts = vec![0];
        for part in per_part {
            units.extend(part?);
            starts.push(units.len());
        }
        self.times.transform += t0.elapsed();
        self.counts.transform += units.len() as u64;
        Ok(Parsed { units, starts })
    }

    fn go(mut self, time_budget: Option<Duration>) -> Result<(TrainResult, Option<Vec<Vec<f64>>>)> {
        let start = Instant::now();
        let pipeline = self.pipeline;
        let hyper = pipeline.hyper;
        let plan = pipeline.plan;
        let n = self.dataset.stats().n;
        let gradient = &pipeline.gradient;

        let parsed = match plan.mode {
            TransformMode::Eager => Some(self.parse_all()?),
            TransformMode::Lazy => None,
        };

        let mut ctx = stage(self.d, hyper.step_beta, hyper.lambda, None);
        if let GDAlgorithm::Svrg { m } = plan.algorithm {
            ctx.put(keys::M, Value::Int(m)).expect("extra key");
        }
        let mut sampler = match (plan.sampling, plan.algorithm.batch()) {
            (Some(s), Some(b)) => Some(Sampler::new(s, b.min(n), n, self.seed)?),
            _ => None,
        };

        let mut seq = Vec::new();
        let mut ids: Vec<RecordId> = Vec::new();
        let mut lazy_units: Vec<DataUnit> = Vec::new();
        let mut acc = vec![0.0; self.d];
        let stop = loop {
            if time_budget.is_some_and(|b| start.elapsed() >= b) {
                break StopReason::TimeBudget;
            }
            let i = ctx.iter + 1;

            let step = match plan.algorithm {
                GDAlgorithm::BgdLineSearch { shrink, armijo_c, mode } => {
                    let units = &parsed.as_ref().expect("full-batch plans are eager").units;
                    let t0 = Instant::now();
                    let r = linesearch_step(&mut ctx, units, gradient, shrink, armijo_c, mode);
                    self.times.compute += t0.elapsed();
                    self.counts.compute += n as u64;
                    r
                }
                GDAlgorithm::Svrg { m } => {
                    let parsed = parsed.as_ref().expect("SVRG plans are eager");
                    let full = i % m == 1 || ctx.vector(keys::MU).is_none();
                    let unit = if full {
                        None
                    } else {
                        let t0 = Instant::now();
                        sampler
                            .as_mut()
                            .expect("SVRG samples")
                            .sample(&self.sizes, i, &mut ids)?;
                        self.times.sample += t0.elapsed();
                        self.counts.sample += ids.len() as u64;
                        Some(parsed.get(ids[0]))
                    };
                    let t0 = Instant::now();
                    let r = svrg_step(i, unit, Some(&parsed.units), &mut ctx, gradient);
                    self.times.compute += t0.elapsed();
                    self.counts.compute += if full { n as u64 } else { 2 };
                    r
                }
                _ => {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let batch = match sampler.as_mut() {
                        None => {
                            let parsed = parsed.as_ref().expect("full-batch plans are eager");
                            let t0 = Instant::now();
                            self.full_sum(parsed, &ctx.weights, gradient, &mut acc);
                            self.times.compute += t0.elapsed();
                            self.counts.compute += n as u64;
                            n
                        }
                        Some(s) => {
                            let t0 = Instant::now();
                            s.sample(&self.sizes, i, &mut ids)?;
                            self.times.sample += t0.elapsed();
                            self.counts.sample += match s.strategy() {
                                crate::sampling::SamplingStrategy::Bernoulli => n as u64,
                                _ => ids.len() as u64,
                            };
                            let units: &[DataUnit] = match &parsed {
                                Some(_) => &[],
                                None => {
                                    let t0 = Instant::now();
                                    let format = self.dataset.format();
                                    lazy_units.clear();
                                    for &id in &ids {
                                        lazy_units.push(transform_record(self.dataset.record(id), &format, self.d)?);
                                    }
                                    self.times.transform += t0.elapsed();
                                    self.counts.transform += ids.len() as u64;
                                    &lazy_units
                                }
                            };
                            let t0 = Instant::now();
                            match &parsed {
                                Some(p) => {
                                    for &id in &ids {
                                        gradient.accumulate(&ctx.weights, p.get(id), 1.0, &mut acc);
                                    }
                                }
                                None => {
                                    for u in units {
                                        gradient.accumulate(&ctx.weights, u, 1.0, &mut acc);
                                    }
                                }
                            }
                            self.times.compute += t0.elapsed();
                            self.counts.compute += ids.len() as u64;
                            ids.len()
                        }
                    };
                    let t0 = Instant::now();
                    let r = operators::update(&acc, batch, &mut ctx);
                    self.times.update += t0.elapsed();
                    self.counts.update += 1;
                    r
                }
            };

            let next = match step {
                Ok(next) => next,
                Err(e @ Error::NonFinite { .. }) => break StopReason::Diverged(e.to_string()),
                Err(e) => return Err(e),
            };

            let t0 = Instant::now();
            let delta = operators::converge(&next, &ctx, hyper.convergence);
            ctx.weights = next;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(ctx.weights.clone());
            }
            seq.push((i, delta));
            let more = loop_decision(delta, &ctx, hyper.tolerance, hyper.max_iter);
            self.times.converge += t0.elapsed();
            self.counts.converge += 1;
            if !more {
                break if hyper.tolerance.is_some_and(|t| delta < t) {
                    StopReason::ToleranceReached
                } else {
                    StopReason::MaxIter
                };
            }
        };

        let result = TrainResult {
            iterations_run: seq.len() as u64,
            weights: ctx.weights,
            error_sequence: seq,
            wall_times: self.times,
            phase_units: self.counts,
            stop_reason: stop,
            elapsed: start.elapsed(),
        };
        Ok((result, self.trace))
    }

    /// Sum of all unit gradients, reduced in partition order.
    fn full_sum(&self, parsed: &Parsed, w: &[f64], gradient: &GradientFunction, acc: &mut [f64]) {
        let parts: Vec<usize> = (0..self.sizes.len()).collect();
        let d = self.d;
        let partials = self.exec.par_map(&parts, |&p| {
            let mut local = vec![0.0; d];
            for u in parsed.partition(p) {
                gradient.accumulate(w, u, 1.0, &mut local);
            }
            local
        });
        for local in partials {
            for (a, x) in acc.iter_mut().zip(&local) {
                *a += x;
            }
        }
    }
}

/// Plain BGD iterates straight from the operator functions, without the executor.
pub fn bgd_reference(
    units: &[DataUnit],
    gradient: &GradientFunction,
    beta: f64,
    iterations: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = units.iter().map(|u| u.features.min_dim()).max().unwrap_or(0);
    let mut ctx = Context::new(d, beta, 0.0);
    let mut out = Vec::new();
    for _ in 0..iterations {
        let mut acc = vec![0.0; d];
        for u in units {
            gradient.accumulate(&ctx.weights, u, 1.0, &mut acc);
        }
        ctx.weights = operators::update(&acc, units.len(), &mut ctx)?;
        out.push(ctx.weights.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predictions: Vec<f64>,
    pub mse: f64,
    /// Fraction of correct signs, classification only.
    pub accuracy: Option<f64>,
}

/// Classification predicts `sign(w . x)` with `sign(0) = +1`; regression predicts `w . x`.
pub fn predict(weights: &[f64], units: &[DataUnit], classification: bool) -> Result<Prediction> {
    let d = weights.len();
    let mut predictions = Vec::with_capacity(units.len());
    let mut se = 0.0;
    let mut correct = 0usize;
    for u in units {
        let dense_len = match &u.features {
            operators::Features::Dense(x) => Some(x.len()),
            operators::Features::Sparse { .. } => None,
        };
        let need = u.features.min_dim();
        if need > d || dense_len.is_some_and(|l| l != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: dense_len.unwrap_or(need),
            });
        }
        let s = u.dot(weights);
        let p = if classification {
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        } else {
            s
        };
        se += (p - u.label) * (p - u.label);
        if p == u.label {
            correct += 1;
        }
        predictions.push(p);
    }
    let n = units.len().max(1) as f64;
    Ok(Prediction {
        predictions,
        mse: se / n,
        accuracy: classification.then(|| correct as f64 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetFormat;
    use crate::plans::{assemble, GDPlan, HyperParams};

    fn ds(lines: &[&str], partition_bytes: usize) -> Dataset {
        Dataset::from_lines(lines.iter().copied(), DatasetFormat::default(), partition_bytes).unwrap()
    }

    #[test]
    fn infinite_tolerance_runs_once() {
        let data = ds(&["1,0.5,1", "-1,1,-0.5"], 1 << 20);
        let hyper = HyperParams {
            tolerance: Some(f64::INFINITY),
            ..HyperParams::default()
        };
        let p = assemble(GDPlan::bgd(), GradientFunction::SvmHinge, hyper).unwrap();
        let r = Executor::single().execute(&p, &data, 1, None).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert_eq!(r.stop_reason, StopReason::ToleranceReached);
    }

    #[test]
    fn zero_budget_runs_nothing() {
        let data = ds(&["1,0.5,1"], 1 << 20);
        let p = assemble(GDPlan::bgd(), GradientFunction::SvmHinge, HyperParams::default()).unwrap();
        let r = Executor::single().execute(&p, &data, 1, Some(Duration::ZERO)).unwrap();
        assert_eq!((r.iterations_run, r.stop_reason), (0, StopReason::TimeBudget));
    }

    #[test]
    fn copies_do_not_change_bgd() {
        let one = ds(&["2.5,0.5,-1"], 1 << 20);
        let four = ds(&["2.5,0.5,-1"; 4], 12);
        assert!(four.num_partitions() > 1);
        let hyper = HyperParams {
            tolerance: None,
            max_iter: 25,
            ..HyperParams::default()
        };
        let p = assemble(GDPlan::bgd(), GradientFunction::LinearRegression, hyper).unwrap();
        let a = Executor::single().execute(&p, &one, 1, None).unwrap();
        let b = Executor::new(3).unwrap().execute(&p, &four, 1, None).unwrap();
        assert_eq!(a.error_sequence, b.error_sequence);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn divergence_is_reported() {
        let data = ds(&["1e200,1e200"], 1 << 20);
        let hyper = HyperParams {
            step_beta: 1e100,
            ..HyperParams::default()
        };
        let p = assemble(GDPlan::bgd(), GradientFunction::LinearRegression, hyper).unwrap();
        let r = Executor::single().execute(&p, &data, 1, None).unwrap();
        assert_eq!(r.stop_reason.name(), "diverged");
    }

    #[test]
    fn predict_fixtures() {
        let p = predict(&[1.0, 0.0], &[DataUnit::dense(1.0, vec![2.0, 1.0])], true).unwrap();
        assert_eq!((p.predictions[0], p.mse), (1.0, 0.0));
        let p = predict(&[0.0, 0.0], &[DataUnit::dense(-1.0, vec![2.0, 1.0])], true).unwrap();
        assert_eq!((p.predictions[0], p.mse), (1.0, 4.0));
        let p = predict(&[2.0], &[DataUnit::dense(5.0, vec![3.0])], false).unwrap();
        assert_eq!((p.predictions[0], p.mse), (6.0, 1.0));
        let err = predict(&[2.0], &[DataUnit::dense(5.0, vec![3.0, 1.0])], false).unwrap_err();
        assert!(err.to_string().contains("expected 1") && err.to_string().contains("found 2"));
    }
}
