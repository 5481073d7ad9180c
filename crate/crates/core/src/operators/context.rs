use std::collections::BTreeMap;

/// A value stored in the context under a non-canonical key.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(u64),
    Bool(bool),
    Vector(Vec<f64>),
}

/// Keyed store of algorithm globals.
///
/// The canonical keys (`weights`, `step`, `iter`, `step_beta`,
/// `regularizer_lambda`) live in typed fields so the hot loop never goes
/// through a map lookup; everything else (`weightsBar`, `mu`, `m`,
/// `step_iteration`, ...) lives in `extras`. [`Context::get`] and
/// [`Context::put`] accept either kind of key.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub weights: Vec<f64>,
    pub step: f64,
    pub iter: u64,
    pub step_beta: f64,
    pub regularizer_lambda: f64,
    extras: BTreeMap<String, Value>,
}

pub mod keys {
    pub const WEIGHTS: &str = "weights";
    pub const STEP: &str = "step";
    pub const ITER: &str = "iter";
    pub const STEP_BETA: &str = "step_beta";
    pub const LAMBDA: &str = "regularizer_lambda";
    pub const WEIGHTS_BAR: &str = "weightsBar";
    pub const MU: &str = "mu";
    pub const M: &str = "m";
    pub const IS_STEP_SIZE_ITER: &str = "isStepSizeIter";
    pub const STEP_ITERATION: &str = "step_iteration";
    pub const FEATURE_MEAN: &str = "feature_mean";
}

impl Context {
    pub fn new(d: usize, step_beta: f64, regularizer_lambda: f64) -> Self {
        Context {
            weights: vec![0.0; d],
            step: step_beta,
            iter: 0,
            step_beta,
            regularizer_lambda,
            extras: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        match key {
            keys::WEIGHTS => Some(Value::Vector(self.weights.clone())),
            keys::STEP => Some(Value::Real(self.step)),
            keys::ITER => Some(Value::Int(self.iter)),
            keys::STEP_BETA => Some(Value::Real(self.step_beta)),
            keys::LAMBDA => Some(Value::Real(self.regularizer_lambda)),
            _ => self.extras.get(key).cloned(),
        }
    }

    /// Stores a value. Canonical keys must carry the matching variant;
    /// a mismatch is reported as `Err` with the rejected value.
    pub fn put(&mut self, key: &str, value: Value) -> Result<(), Value> {
        match (key, value) {
            (keys::WEIGHTS, Value::Vector(v)) => self.weights = v,
            (keys::STEP, Value::Real(x)) => self.step = x,
            (keys::ITER, Value::Int(i)) => self.iter = i,
            (keys::STEP_BETA, Value::Real(x)) => self.step_beta = x,
            (keys::LAMBDA, Value::Real(x)) => self.regularizer_lambda = x,
            (keys::WEIGHTS | keys::STEP | keys::ITER | keys::STEP_BETA | keys::LAMBDA, v) => return Err(v),
            (k, v) => {
                self.extras.insert(k.to_string(), v);
            }
        }
        Ok(())
    }

    pub fn real(&self, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Real(x) => Some(x),
            Value::Int(i) => Some(i as f64),
            _ => None,
        }
    }

    pub fn int(&self, key: &str) -> Option<u64> {
        match self.extras.get(key)? {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn flag(&self, key: &str) -> Option<bool> {
        match self.extras.get(key)? {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Borrowing accessor for vector extras.
    pub fn vector(&self, key: &str) -> Option<&[f64]> {
        if key == keys::WEIGHTS {
            return Some(&self.weights);
        }
        match self.extras.get(key)? {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn vector_mut(&mut self, key: &str) -> Option<&mut Vec<f64>> {
        match self.extras.get_mut(key)? {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn extras(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.extras.iter().map(|(k, v)| (k.as_str(), v))
    }
}
