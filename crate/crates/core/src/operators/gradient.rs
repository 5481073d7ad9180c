use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::unit::DataUnit;

/// A pointwise loss of a linear model, written in terms of the margin
/// `s = w . x` and the label `y`. The gradient with respect to `w` is
/// `derivative(s, y) * x`.
pub trait PointLoss: Send + Sync {
    fn name(&self) -> &str;
    fn loss(&self, s: f64, y: f64) -> f64;
    fn derivative(&self, s: f64, y: f64) -> f64;
}

/// The gradient functions the system ships with, plus user-registered ones.
#[derive(Clone)]
pub enum GradientFunction {
    /// `2 (w.x - y) x`, loss `(w.x - y)^2`
    LinearRegression,
    /// `-y x / (1 + e^{y w.x})`, loss `log(1 + e^{-y w.x})`
    LogisticRegression,
    /// `-y x` when `y w.x < 1`, else 0; loss `max(0, 1 - y w.x)`
    SvmHinge,
    Custom(Arc<dyn PointLoss>),
}

impl fmt::Debug for GradientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GradientFunction({})", self.name())
    }
}

impl PartialEq for GradientFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl GradientFunction {
    pub fn name(&self) -> &str {
        match self {
            GradientFunction::LinearRegression => "linear-regression",
            GradientFunction::LogisticRegression => "logistic-regression",
            GradientFunction::SvmHinge => "svm-hinge",
            GradientFunction::Custom(l) => l.name(),
        }
    }

    /// True for losses whose labels are +-1.
    pub fn is_classification(&self) -> bool {
        !matches!(self, GradientFunction::LinearRegression)
    }

    #[inline]
    pub fn loss_at(&self, s: f64, y: f64) -> f64 {
        match self {
            GradientFunction::LinearRegression => (s - y) * (s - y),
            GradientFunction::LogisticRegression => log1p_exp(-y * s),
            GradientFunction::SvmHinge => (1.0 - y * s).max(0.0),
            GradientFunction::Custom(l) => l.loss(s, y),
        }
    }

    #[inline]
    pub fn derivative_at(&self, s: f64, y: f64) -> f64 {
        match self {
            GradientFunction::LinearRegression => 2.0 * (s - y),
            GradientFunction::LogisticRegression => -y / (1.0 + (y * s).exp()),
            GradientFunction::SvmHinge => {
                if y * s < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            GradientFunction::Custom(l) => l.derivative(s, y),
        }
    }

    pub fn loss(&self, w: &[f64], unit: &DataUnit) -> f64 {
        self.loss_at(unit.dot(w), unit.label)
    }

    /// `acc += scale * grad l(w, unit)`
    #[inline]
    pub fn accumulate(&self, w: &[f64], unit: &DataUnit, scale: f64, acc: &mut [f64]) {
        let c = self.derivative_at(unit.dot(w), unit.label);
        unit.features.axpy(scale * c, acc);
    }
}

/// `log(1 + e^z)` without overflow for large `|z|`.
#[inline]
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Names a query may use for a gradient function or task.
#[derive(Clone, Debug)]
pub struct GradientRegistry {
    entries: BTreeMap<String, GradientFunction>,
}

impl Default for GradientRegistry {
    fn default() -> Self {
        let mut r = GradientRegistry {
            entries: BTreeMap::new(),
        };
        for name in ["hinge", "svm", "svm-hinge"] {
            r.insert(name, GradientFunction::SvmHinge);
        }
        for name in ["logistic", "logistic-regression", "logr"] {
            r.insert(name, GradientFunction::LogisticRegression);
        }
        for name in ["linear", "linear-regression", "squared", "linr"] {
            r.insert(name, GradientFunction::LinearRegression);
        }
        r
    }
}

impl GradientRegistry {
    pub fn insert(&mut self, name: &str, g: GradientFunction) {
        self.entries.insert(normalize(name), g);
    }

    pub fn register(&mut self, loss: Arc<dyn PointLoss>) {
        let name = loss.name().to_string();
        self.insert(&name, GradientFunction::Custom(loss));
    }

    pub fn get(&self, name: &str) -> Option<&GradientFunction> {
        self.entries.get(&normalize(name))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn normalize(name: &str) -> String {
    name.trim_end_matches("()").to_ascii_lowercase().replace('_', "-")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_cases() {
        let g = GradientFunction::SvmHinge;
        let mut acc = vec![0.0; 2];
        g.accumulate(&[1.0, 0.0], &DataUnit::dense(1.0, vec![2.0, 0.0]), 1.0, &mut acc);
        assert_eq!(acc, vec![0.0, 0.0]);
        let mut acc = vec![0.0; 2];
        g.accumulate(&[0.0, 0.0], &DataUnit::dense(1.0, vec![2.0, 3.0]), 1.0, &mut acc);
        assert_eq!(acc, vec![-2.0, -3.0]);
    }

    #[test]
    fn stable_log_loss() {
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log1p_exp(1000.0), 1000.0);
        assert!(log1p_exp(-1000.0) >= 0.0 && log1p_exp(-1000.0) < 1e-300);
        let g = GradientFunction::LogisticRegression;
        assert!(g.loss_at(-800.0, 1.0).is_finite());
        assert!(g.derivative_at(-800.0, 1.0).is_finite());
        assert!(g.derivative_at(800.0, 1.0).is_finite());
    }

    #[test]
    fn registry_aliases() {
        let r = GradientRegistry::default();
        assert_eq!(r.get("hinge()"), Some(&GradientFunction::SvmHinge));
        assert_eq!(
            r.get("Logistic_Regression"),
            Some(&GradientFunction::LogisticRegression)
        );
        assert!(r.get("unknown").is_none());
    }
}
