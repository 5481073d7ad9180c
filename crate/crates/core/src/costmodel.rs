//! Analytical cost model.
//!
//! Operator costs are sums of IO, CPU and network terms evaluated over a
//! partitioned input, and a plan's cost is its one-off setup plus `T` times its
//! per-iteration cost. `k` always means data units per partition here;
//! iterations are `i` / `T`.
//!
//! Configuration files use one `key = value` pair per line, `#` starts a
//! comment. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `page_bytes` | bytes per page |
//! | `packet_bytes` | bytes per network packet |
//! | `partition_bytes` | bytes per partition |
//! | `cap` | partitions processed in parallel |
//! | `page_io` | seconds to read one page |
//! | `seek` | seconds per seek |
//! | `network` | seconds per packet |
//! | `cpu.<op>` | seconds per data unit for `<op>`: `transform`, `stage`, `compute`, `update`, `sample`, `converge`, `loop`, `bernoulli`, `shuffle` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetStats};
use crate::executor::TrainResult;
use crate::operators::OperatorKind;
use crate::plans::{GDAlgorithm, GDPlan, TransformMode};
use crate::sampling::{Sampler, SamplingStrategy};
use crate::{Error, Result};

/// Per-unit CPU cost of a Bernoulli inclusion test.
pub const CPU_BERNOULLI: &str = "bernoulli";
/// Per-unit CPU cost of shuffling a partition.
pub const CPU_SHUFFLE: &str = "shuffle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParameters {
    pub page_bytes: f64,
    pub packet_bytes: f64,
    pub partition_bytes: f64,
    pub cap: usize,
    /// Seconds per page.
    pub page_io: f64,
    /// Seconds per seek.
    pub seek: f64,
    /// Seconds per packet.
    pub network: f64,
    /// Seconds per data unit, by operator name.
    pub cpu_u: BTreeMap<String, f64>,
}

impl Default for CostParameters {
    /// Rough in-memory figures for one core.
    fn default() -> Self {
        let cpu = [
            ("transform", 4e-7),
            ("stage", 1e-6),
            ("compute", 2e-8),
            ("update", 1e-7),
            ("sample", 3e-8),
            ("converge", 1e-7),
            ("loop", 0.0),
            (CPU_BERNOULLI, 5e-9),
            (CPU_SHUFFLE, 5e-9),
        ];
        CostParameters {
            page_bytes: 4096.0,
            packet_bytes: 1500.0,
            partition_bytes: crate::dataset::DEFAULT_PARTITION_BYTES as f64,
            cap: 1,
            page_io: 2e-7,
            seek: 5e-8,
            network: 0.0,
            cpu_u: cpu.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl CostParameters {
    pub fn cpu(&self, op: &str) -> Result<f64> {
        self.cpu_u
            .get(op)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no CPU cost for operator {op:?}")))
    }

    fn cpu_or_zero(&self, op: &str) -> f64 {
        self.cpu_u.get(op).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("page_bytes", self.page_bytes),
            ("packet_bytes", self.packet_bytes),
            ("partition_bytes", self.partition_bytes),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{k} must be positive")));
            }
        }
        if self.cap == 0 {
            return Err(Error::InvalidArgument("cap must be at least 1".into()));
        }
        let nonneg = [
            ("page_io", self.page_io),
            ("seek", self.seek),
            ("network", self.network),
        ];
        for (k, v) in nonneg
            .into_iter()
            .chain(self.cpu_u.iter().map(|(k, v)| (k.as_str(), *v)))
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{k} must be a non-negative number")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CostParameters> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Parses the `key = value` format; keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> std::result::Result<CostParameters, String> {
        let mut p = CostParameters::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
            let (k, v) = (k.trim(), v.trim());
            let num: f64 = v
                .parse()
                .map_err(|_| format!("line {}: {k}: not a number: {v:?}", no + 1))?;
            match k {
                "page_bytes" => p.page_bytes = num,
                "packet_bytes" => p.packet_bytes = num,
                "partition_bytes" => p.partition_bytes = num,
                "cap" if num >= 1.0 && num.fract() == 0.0 => p.cap = num as usize,
                "cap" => return Err(format!("line {}: cap must be a positive integer", no + 1)),
                "page_io" => p.page_io = num,
                "seek" => p.seek = num,
                "network" => p.network = num,
                _ => match k.strip_prefix("cpu.") {
                    Some(op) if !op.is_empty() => {
                        p.cpu_u.insert(op.to_string(), num);
                    }
                    _ => return Err(format!("line {}: unknown key {k:?}", no + 1)),
                },
            }
        }
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "page_bytes = {}", self.page_bytes);
        let _ = writeln!(s, "packet_bytes = {}", self.packet_bytes);
        let _ = writeln!(s, "partition_bytes = {}", self.partition_bytes);
        let _ = writeln!(s, "cap = {}", self.cap);
        let _ = writeln!(s, "page_io = {:e}", self.page_io);
        let _ = writeln!(s, "seek = {:e}", self.seek);
        let _ = writeln!(s, "network = {:e}", self.network);
        for (k, v) in &self.cpu_u {
            let _ = writeln!(s, "cpu.{k} = {v:e}");
        }
        s
    }
}

/// Partition layout of an input, recomputed on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedLayout {
    pub n: f64,
    pub size_bytes: f64,
    /// Partition size used in the formulas, never larger than the input.
    pub partition_bytes: f64,
    /// Units per partition.
    pub k: f64,
    /// Partitions, `ceil(|D| / |P|)`.
    pub p: f64,
    /// Waves, `p / cap`.
    pub w: f64,
    /// Partitions in the last wave.
    pub lwp: f64,
}

impl DerivedLayout {
    /// Layout of `n` units taking `size_bytes` bytes.
    pub fn new(n: f64, size_bytes: f64, params: &CostParameters) -> DerivedLayout {
        let part = params.partition_bytes.min(size_bytes).max(1.0);
        let k = (n * part / size_bytes.max(1.0)).ceil().min(n).max(1.0);
        Self::with_k(n, size_bytes, k, params)
    }

    /// Same as [`DerivedLayout::new`] with the units-per-partition count given.
    pub fn with_k(n: f64, size_bytes: f64, k: f64, params: &CostParameters) -> DerivedLayout {
        let part = params.partition_bytes.min(size_bytes).max(1.0);
        let p = (size_bytes / part).ceil().max(1.0);
        let w = p / params.cap as f64;
        let full = w.floor();
        let lwp = if full == 0.0 {
            n / k
        } else {
            (n % (k * params.cap as f64 * full)) / k
        };
        DerivedLayout {
            n,
            size_bytes,
            partition_bytes: part,
            k,
            p,
            w,
            lwp,
        }
    }

    pub fn of(stats: &DatasetStats, params: &CostParameters) -> DerivedLayout {
        Self::new(stats.n as f64, stats.size_bytes as f64, params)
    }

    /// Layout of `m` units with the per-unit size of `stats`.
    pub fn of_units(m: f64, stats: &DatasetStats, params: &CostParameters) -> DerivedLayout {
        Self::new(m, m * stats.record_bytes(), params)
    }

    /// Bytes taken by `units` data units.
    pub fn bytes(&self, units: f64) -> f64 {
        units * self.size_bytes / self.n
    }

    /// Full waves plus one partial wave when `lwp > 0`.
    pub fn waves(&self) -> (u64, f64) {
        (self.w.floor() as u64, self.lwp)
    }
}

pub fn c_io(layout: &DerivedLayout, params: &CostParameters) -> f64 {
    let full = layout.w.floor();
    let last_units = layout.lwp.min(1.0) * layout.k;
    full * (params.seek + layout.partition_bytes / params.page_bytes * params.page_io)
        + (params.seek + layout.bytes(last_units) / params.page_bytes * params.page_io)
}

pub fn c_cpu(layout: &DerivedLayout, cpu_u: f64) -> f64 {
    let full = layout.w.floor();
    full * layout.k * cpu_u + (layout.lwp.min(1.0) * layout.k).ceil() * cpu_u
}

pub fn c_nt(size_bytes: f64, params: &CostParameters) -> f64 {
    size_bytes / params.packet_bytes * params.network
}

/// Cost of one operator over an input with the given layout.
pub fn operator_cost(op: OperatorKind, layout: &DerivedLayout, params: &CostParameters) -> Result<f64> {
    let cpu = c_cpu(layout, params.cpu(op.name())?);
    Ok(match op {
        OperatorKind::Stage => cpu,
        OperatorKind::Update => c_io(layout, params) + cpu + c_nt(layout.size_bytes, params),
        _ => c_io(layout, params) + cpu,
    })
}

/// Update reads one aggregated vector and ships `m` units' worth of
/// contributions; aggregation itself happens inside Compute.
fn update_cost(m: f64, stats: &DatasetStats, params: &CostParameters) -> f64 {
    let one = DerivedLayout::of_units(1.0, stats, params);
    c_io(&one, params) + c_cpu(&one, params.cpu_or_zero("update")) + c_nt(m * stats.record_bytes(), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    /// Stage plus, for eager plans, Transform over the whole input.
    pub setup: f64,
    /// Cost of one iteration, excluding run-level sampling costs.
    pub per_iteration: f64,
    /// Sampling costs charged per run rather than per iteration (partition shuffles).
    pub run_sampling: f64,
    pub total: f64,
}

impl PlanCost {
    /// Everything except setup, spread over the iterations.
    pub fn per_iteration_amortized(&self, t: u64) -> f64 {
        self.per_iteration + self.run_sampling / t.max(1) as f64
    }
}

/// Per-iteration Sample cost and per-run sampling cost of one strategy.
fn sampling_cost(
    strategy: SamplingStrategy,
    b: f64,
    t: f64,
    stats: &DatasetStats,
    params: &CostParameters,
) -> (f64, f64) {
    let whole = DerivedLayout::of(stats, params);
    let per_draw = params.cpu_or_zero("sample");
    match strategy {
        SamplingStrategy::Bernoulli => (
            c_io(&whole, params) + c_cpu(&whole, params.cpu_or_zero(CPU_BERNOULLI)),
            0.0,
        ),
        SamplingStrategy::RandomPartition => {
            let unit_io = params.seek + stats.record_bytes() / params.page_bytes * params.page_io;
            (b * (unit_io + per_draw), 0.0)
        }
        SamplingStrategy::ShuffledPartition => {
            let part = DerivedLayout::of_units(whole.k, stats, params);
            let reads = (t * b / whole.k).ceil().max(1.0);
            let one_read = c_io(&part, params) + whole.k * params.cpu_or_zero(CPU_SHUFFLE);
            (b * per_draw, reads * one_read)
        }
    }
}

/// Cost of running `plan` for `t` iterations over `stats`.
pub fn plan_cost_per_run(plan: &GDPlan, t: u64, stats: &DatasetStats, params: &CostParameters) -> Result<PlanCost> {
    params.validate()?;
    let tf = t.max(1) as f64;
    let whole = DerivedLayout::of(stats, params);
    let one = DerivedLayout::of_units(1.0, stats, params);
    let stage = operator_cost(OperatorKind::Stage, &one, params)?;
    let transform_all = operator_cost(OperatorKind::Transform, &whole, params)?;
    let tail = operator_cost(OperatorKind::Converge, &one, params)? + operator_cost(OperatorKind::Loop, &one, params)?;
    let n = stats.n as f64;

    let (setup, per_iteration, run_sampling) = match plan.algorithm {
        GDAlgorithm::Bgd => {
            let compute = operator_cost(OperatorKind::Compute, &whole, params)?;
            (
                stage + transform_all,
                compute + update_cost(n, stats, params) + tail,
                0.0,
            )
        }
        GDAlgorithm::BgdLineSearch { .. } => {
            // The gradient pass plus at least two objective passes.
            let compute = 3.0 * operator_cost(OperatorKind::Compute, &whole, params)?;
            (
                stage + transform_all,
                compute + update_cost(n, stats, params) + tail,
                0.0,
            )
        }
        GDAlgorithm::Svrg { m } => {
            let two = DerivedLayout::of_units(2.0, stats, params);
            let inner = operator_cost(OperatorKind::Compute, &two, params)? + update_cost(1.0, stats, params) + tail;
            let full = operator_cost(OperatorKind::Compute, &whole, params)? + update_cost(n, stats, params) + tail;
            let (sp, _) = sampling_cost(SamplingStrategy::RandomPartition, 1.0, tf, stats, params);
            let full_share = 1.0 / m as f64;
            (
                stage + transform_all,
                full_share * full + (1.0 - full_share) * (inner + sp),
                0.0,
            )
        }
        GDAlgorithm::Mgd { .. } | GDAlgorithm::Sgd => {
            let b = plan.algorithm.batch().unwrap_or(1).min(stats.n) as f64;
            let strategy = plan.sampling.ok_or_else(|| Error::InvalidPlan {
                plan: plan.to_string(),
                reason: "stochastic plan without a sampler".into(),
            })?;
            let (sp, run_sp) = sampling_cost(strategy, b, tf, stats, params);
            let batch = DerivedLayout::of_units(b, stats, params);
            let core = operator_cost(OperatorKind::Compute, &batch, params)? + update_cost(b, stats, params) + tail;
            match plan.mode {
                TransformMode::Eager => (stage + transform_all, sp + core, run_sp),
                TransformMode::Lazy => (
                    stage,
                    sp + operator_cost(OperatorKind::Transform, &batch, params)? + core,
                    run_sp,
                ),
            }
        }
    };
    Ok(PlanCost {
        setup,
        per_iteration,
        run_sampling,
        total: setup + tf * per_iteration + run_sampling,
    })
}

/// IO constants measured on in-memory records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoBenchmark {
    pub page_io: f64,
    pub seek: f64,
    pub bernoulli: f64,
    pub shuffle: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Times sequential page reads, random record accesses, Bernoulli scans and
/// partition shuffles over the records of `sample`.
pub fn benchmark_io(sample: &Dataset, page_bytes: f64) -> IoBenchmark {
    let records: Vec<&[u8]> = sample.records().map(|r| r.text.as_bytes()).collect();
    let total: usize = records.iter().map(|r| r.len()).sum();
    let pages = (total as f64 / page_bytes).max(1.0);
    let repeats = 7;

    let page_io = median(
        (0..repeats)
            .map(|_| {
                let t0 = Instant::now();
                let mut acc = 0u64;
                for r in &records {
                    for chunk in r.chunks(8) {
                        acc = acc.wrapping_add(
                            chunk
                                .iter()
                                .fold(0u64, |a, &b| a.wrapping_mul(31).wrapping_add(b as u64)),
                        );
                    }
                }
                black_box(acc);
                t0.elapsed().as_secs_f64() / pages
            })
            .collect(),
    );

    let n = records.len();
    let seek = median(
        (0..repeats)
            .map(|rep| {
                let mut idx = (rep as usize * 7919) % n;
                let t0 = Instant::now();
                let mut acc = 0u64;
                for _ in 0..n {
                    acc = acc.wrapping_add(records[idx][0] as u64);
                    idx = (idx * 1_103_515_245 + 12_345 + acc as usize) % n;
                }
                black_box(acc);
                t0.elapsed().as_secs_f64() / n as f64
            })
            .collect(),
    );

    let sizes = [n.max(2)];
    let bernoulli = median(
        (0..repeats)
            .map(|rep| {
                let mut s = Sampler::new(SamplingStrategy::Bernoulli, 2, sizes[0], rep as u64).expect("valid batch");
                let mut out = Vec::new();
                let t0 = Instant::now();
                for i in 1..=4 {
                    let _ = s.sample(&sizes, i, &mut out);
                }
                t0.elapsed().as_secs_f64() / (4 * sizes[0]) as f64
            })
            .collect(),
    );
    let shuffle = median(
        (0..repeats)
            .map(|rep| {
                let mut s = Sampler::new(SamplingStrategy::ShuffledPartition, sizes[0], sizes[0], rep as u64)
                    .expect("valid batch");
                let mut out = Vec::new();
                let t0 = Instant::now();
                for i in 1..=4 {
                    let _ = s.sample(&sizes, i, &mut out);
                }
                t0.elapsed().as_secs_f64() / (4 * sizes[0]) as f64
            })
            .collect(),
    );
    IoBenchmark {
        page_io,
        seek,
        bernoulli,
        shuffle,
    }
}

/// CPU costs from executor metrics, IO costs from a benchmark. Operators with
/// no recorded units keep the values from `base`. Loop work is timed together
/// with Converge, so `loop` is set to zero.
pub fn calibrate_from(runs: &[&TrainResult], io: Option<&IoBenchmark>, base: &CostParameters) -> CostParameters {
    let mut p = base.clone();
    let mut sums: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for r in runs {
        let t = &r.wall_times;
        let u = &r.phase_units;
        for (name, secs, units) in [
            ("transform", t.transform, u.transform),
            ("sample", t.sample, u.sample),
            ("compute", t.compute, u.compute),
            ("update", t.update, u.update),
            ("converge", t.converge, u.converge),
        ] {
            let e = sums.entry(name).or_default();
            e.0 += secs.as_secs_f64();
            e.1 += units;
        }
    }
    for (name, (secs, units)) in sums {
        if units > 0 {
            p.cpu_u.insert(name.to_string(), secs / units as f64);
        }
    }
    p.cpu_u.insert("loop".into(), 0.0);
    if let Some(io) = io {
        p.page_io = io.page_io;
        p.seek = io.seek;
        p.cpu_u.insert(CPU_BERNOULLI.into(), io.bernoulli);
        p.cpu_u.insert(CPU_SHUFFLE.into(), io.shuffle);
    }
    p.network = 0.0;
    p
}

/// Calibrates against speculation runs on `sample`.
pub fn calibrate(sample: &Dataset, runs: &[&TrainResult], base: &CostParameters) -> CostParameters {
    if runs.iter().all(|r| r.iterations_run == 0) {
        return base.clone();
    }
    let io = benchmark_io(sample, base.page_bytes);
    calibrate_from(runs, Some(&io), base)
}
