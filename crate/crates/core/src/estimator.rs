//! Iteration estimates by speculation.
//!
//! Each algorithm is run briefly on a small uniform sample of the data. The
//! deltas it produces are fitted to `T(eps) = a / eps`, and the fit is read off
//! at the target tolerance.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::executor::{Executor, TrainResult};
use crate::operators::GradientFunction;
use crate::plans::{assemble, AlgorithmKind, GDAlgorithm, GDPlan, HyperParams, TransformMode};
use crate::sampling::{sample_without_replacement, SamplingStrategy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeculationConfig {
    pub tolerance: f64,
    pub budget: Duration,
    pub sample_size: usize,
}

impl Default for SpeculationConfig {
    fn default() -> Self {
        SpeculationConfig {
            tolerance: 0.05,
            budget: Duration::from_secs(60),
            sample_size: 1000,
        }
    }
}

/// `(iteration, delta)` pairs in iteration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSequence {
    pub points: Vec<(u64, f64)>,
}

impl ErrorSequence {
    pub fn new(points: Vec<(u64, f64)>) -> Self {
        ErrorSequence { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First iteration whose delta is at or below `eps`.
    pub fn first_at_or_below(&self, eps: f64) -> Option<u64> {
        self.points.iter().find(|&&(_, e)| e <= eps).map(|&(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    /// Root-mean-square of `i - a / eps_i` over the fitted points.
    pub residual: f64,
    pub points_used: usize,
    pub low_confidence: bool,
}

/// Least squares for `i = a / eps_i`:
/// `a = sum(i / eps_i) / sum(1 / eps_i^2)`.
/// Points with an infinite or zero delta carry no information about `a` and are skipped.
pub fn fit(seq: &ErrorSequence) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = seq
        .points
        .iter()
        .filter(|(_, e)| e.is_finite() && *e > 0.0)
        .map(|&(i, e)| (i as f64, e))
        .collect();
    if pts.is_empty() {
        return Err(Error::EstimationUnavailable {
            algorithm: "fit".into(),
            reason: "no finite, positive deltas to fit".into(),
        });
    }
    let num: f64 = pts.iter().map(|(i, e)| i / e).sum();
    let den: f64 = pts.iter().map(|(_, e)| 1.0 / (e * e)).sum();
    let a = (num / den).max(0.0);
    let residual = (pts.iter().map(|(i, e)| (i - a / e).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    let mean_i = pts.iter().map(|(i, _)| i).sum::<f64>() / pts.len() as f64;
    Ok(FitResult {
        a,
        residual,
        points_used: pts.len(),
        low_confidence: pts.len() < 2 || residual > mean_i,
    })
}

/// `ceil(a / eps_d)` clamped to `[1, max_iter]`.
pub fn estimate_iterations(fit: &FitResult, eps_d: f64, max_iter: u64) -> u64 {
    let raw = fit.a / eps_d;
    // The relative slack keeps a/eps that lands on an integer from rounding up.
    let t = (raw * (1.0 - 1e-12)).ceil();
    if t.is_nan() || t < 1.0 {
        1
    } else if t >= max_iter as f64 {
        max_iter
    } else {
        t as u64
    }
}

/// A uniform sample of `size` units drawn without replacement.
pub fn draw_sample(dataset: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size < 2 {
        return Err(Error::InvalidArgument(
            "speculation sample needs at least 2 units".into(),
        ));
    }
    let sizes: Vec<usize> = dataset.partitions().iter().map(|p| p.len()).collect();
    let ids = sample_without_replacement(&sizes, size.min(dataset.stats().n), seed);
    dataset.subset(&ids)
}

/// The plan used to speculate an algorithm on a sample of `sample_n` units.
pub fn speculation_plan(kind: AlgorithmKind, mgd_batch: usize, sample_n: usize) -> GDPlan {
    match kind {
        AlgorithmKind::Bgd => GDPlan::bgd(),
        _ => GDPlan {
            algorithm: GDAlgorithm::from_kind(kind, mgd_batch.min(sample_n)),
            mode: TransformMode::Eager,
            sampling: Some(SamplingStrategy::RandomPartition),
        },
    }
}

#[derive(Debug, Clone)]
pub struct Speculation {
    pub plan: GDPlan,
    pub sequence: ErrorSequence,
    pub run: TrainResult,
}

/// Runs `plan` on an already drawn sample until its delta reaches
/// `cfg.tolerance` or the budget runs out.
pub fn speculate_on(
    plan: GDPlan,
    sample: &Dataset,
    gradient: &GradientFunction,
    cfg: &SpeculationConfig,
    hyper: &HyperParams,
    seed: u64,
) -> Result<Speculation> {
    let spec_hyper = HyperParams {
        tolerance: Some(cfg.tolerance),
        ..*hyper
    };
    let pipeline = assemble(plan, gradient.clone(), spec_hyper)?;
    let run = Executor::single().execute(&pipeline, sample, seed, Some(cfg.budget))?;
    if run.iterations_run == 0 {
        return Err(Error::EstimationUnavailable {
            algorithm: plan.algorithm.to_string(),
            reason: format!("no iteration completed within {:?}", cfg.budget),
        });
    }
    Ok(Speculation {
        plan,
        sequence: ErrorSequence::new(run.error_sequence.clone()),
        run,
    })
}

/// Draws a sample of `cfg.sample_size` units from `dataset` and speculates on it.
pub fn speculate(
    plan: GDPlan,
    dataset: &Dataset,
    gradient: &GradientFunction,
    cfg: &SpeculationConfig,
    hyper: &HyperParams,
    seed: u64,
) -> Result<Speculation> {
    let sample = draw_sample(dataset, cfg.sample_size, seed)?;
    speculate_on(plan, &sample, gradient, cfg, hyper, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub iterations: u64,
    pub fit: Option<FitResult>,
    /// The speculation itself reached the target tolerance, so its count is used as is.
    pub observed: bool,
}

/// Iterations needed to reach `eps_d`. When the speculation already got
/// there, the observed iteration wins over the extrapolation.
pub fn estimate(seq: &ErrorSequence, eps_d: f64, max_iter: u64) -> Result<Estimate> {
    if let Some(i) = seq.first_at_or_below(eps_d) {
        return Ok(Estimate {
            iterations: i.clamp(1, max_iter),
            fit: fit(seq).ok(),
            observed: true,
        });
    }
    let f = fit(seq)?;
    Ok(Estimate {
        iterations: estimate_iterations(&f, eps_d, max_iter),
        fit: Some(f),
        observed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(a: f64, upto: u64) -> ErrorSequence {
        ErrorSequence::new((1..=upto).map(|i| (i, a / i as f64)).collect())
    }

    #[test]
    fn exact_model() {
        let f = fit(&exact(1.0, 20)).unwrap();
        assert!((f.a - 1.0).abs() < 1e-12 && f.residual < 1e-9);
        let f = fit(&exact(7.3, 30)).unwrap();
        assert!((f.a - 7.3).abs() < 1e-9);
    }

    #[test]
    fn three_point_fixture() {
        let seq = ErrorSequence::new(vec![(1, 0.5), (2, 0.25), (4, 0.125)]);
        assert_eq!(fit(&seq).unwrap().a, 0.5);
    }

    #[test]
    fn estimate_fixtures() {
        let f = |a| FitResult {
            a,
            residual: 0.0,
            points_used: 2,
            low_confidence: false,
        };
        assert_eq!(estimate_iterations(&f(10.0), 0.001, 100_000), 10_000);
        assert_eq!(estimate_iterations(&f(10.0), 0.001, 1000), 1000);
        assert_eq!(estimate_iterations(&f(0.0), 0.001, 1000), 1);
        let seq = exact(7.3, 40);
        let fitted = fit(&seq).unwrap();
        for i in [1u64, 7, 40] {
            assert_eq!(estimate_iterations(&fitted, 7.3 / i as f64, 1000), i);
        }
    }

    #[test]
    fn infinite_and_zero_points_are_skipped() {
        let mut seq = exact(2.0, 5);
        seq.points.insert(0, (0, f64::INFINITY));
        seq.points.push((6, 0.0));
        let f = fit(&seq).unwrap();
        assert_eq!(f.points_used, 5);
        assert!((f.a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn observed_beats_extrapolation() {
        let seq = ErrorSequence::new(vec![(1, 0.3), (2, 0.2), (3, 0.0)]);
        let e = estimate(&seq, 1e-3, 1000).unwrap();
        assert!(e.observed);
        assert_eq!(e.iterations, 3);
    }

    proptest! {
        #[test]
        fn scale_equivariant(
            eps in prop::collection::vec(1e-3..10.0f64, 2..20),
            c in 1e-2..1e2f64,
        ) {
            let seq = ErrorSequence::new(eps.iter().enumerate().map(|(i, &e)| (i as u64 + 1, e)).collect());
            let scaled = ErrorSequence::new(seq.points.iter().map(|&(i, e)| (i, e * c)).collect());
            let a = fit(&seq).unwrap().a;
            let b = fit(&scaled).unwrap().a;
            prop_assert!((b - c * a).abs() <= 1e-9 * (c * a).abs().max(1e-300));
        }

        #[test]
        fn monotone_in_tolerance(a in 0.0..100.0f64, e1 in 1e-5..1.0f64, e2 in 1e-5..1.0f64) {
            let f = FitResult { a, residual: 0.0, points_used: 3, low_confidence: false };
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(estimate_iterations(&f, lo, 1000) >= estimate_iterations(&f, hi, 1000));
        }
    }
}
