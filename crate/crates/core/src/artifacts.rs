//! Model files and JSON reports.
//!
//! A model file is plain text: a magic line, `key=value` header lines, a
//! `weights` line, then one weight per line with 17 significant digits.
//!
//! ```text
//! descent-planner-model 1
//! task=classification
//! gradient=svm-hinge
//! d=3
//! plan=sgd/eager/random-partition
//! iterations=412
//! final_delta=9.7e-4
//! weights
//! 1.2500000000000000e0
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::executor::TrainResult;
use crate::optimizer::OptimizerDecision;
use crate::{Error, Result};

const MODEL_MAGIC: &str = "descent-planner-model 1";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub task: String,
    pub gradient: String,
    pub plan: String,
    pub iterations: u64,
    pub final_delta: Option<f64>,
    /// Extra header keys, written in key order.
    pub extra: BTreeMap<String, String>,
    pub weights: Vec<f64>,
}

impl ModelFile {
    pub fn d(&self) -> usize {
        self.weights.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MODEL_MAGIC}\n");
        s += &format!("task={}\ngradient={}\nd={}\n", self.task, self.gradient, self.d());
        s += &format!("plan={}\niterations={}\n", self.plan, self.iterations);
        if let Some(fd) = self.final_delta {
            s += &format!("final_delta={fd:e}\n");
        }
        for (k, v) in &self.extra {
            s += &format!("{k}={v}\n");
        }
        s += "weights\n";
        for w in &self.weights {
            s += &format!("{w:.16e}\n");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<ModelFile> {
        let bad = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MODEL_MAGIC => {}
            _ => return Err(bad(format!("missing header line {MODEL_MAGIC:?}"))),
        }
        let mut header = BTreeMap::new();
        let mut in_weights = false;
        let mut weights = Vec::new();
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if in_weights {
                let w: f64 = line
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad weight {line:?}", no + 1)))?;
                weights.push(w);
            } else if line == "weights" {
                in_weights = true;
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| bad(format!("line {}: expected key=value", no + 1)))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        if !in_weights {
            return Err(bad("no weights section".into()));
        }
        let mut take = |k: &str| header.remove(k).ok_or_else(|| bad(format!("missing header key {k}")));
        let task = take("task")?;
        let gradient = take("gradient")?;
        let d: usize = take("d")?.parse().map_err(|_| bad("d is not an integer".into()))?;
        let plan = take("plan")?;
        let iterations = take("iterations")?
            .parse()
            .map_err(|_| bad("iterations is not an integer".into()))?;
        let final_delta = match header.remove("final_delta") {
            Some(v) => Some(v.parse().map_err(|_| bad("final_delta is not a number".into()))?),
            None => None,
        };
        if weights.len() != d {
            return Err(bad(format!("header says d={d} but {} weights follow", weights.len())));
        }
        Ok(ModelFile {
            task,
            gradient,
            plan,
            iterations,
            final_delta,
            extra: header,
            weights,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<ModelFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelFile::parse(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub query: String,
    pub seed: u64,
    pub dataset: serde_json::Value,
    pub decision: OptimizerDecision,
    /// Absent for `explain`.
    pub train: Option<serde_json::Value>,
    /// `(iteration, delta)` pairs of the executed plan.
    pub error_sequence: Vec<(u64, f64)>,
}

impl Report {
    pub fn new(
        query: String,
        seed: u64,
        dataset: serde_json::Value,
        decision: OptimizerDecision,
        train: Option<&TrainResult>,
    ) -> Report {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            query,
            seed,
            dataset,
            decision,
            train: train.map(TrainResult::metrics_json),
            error_sequence: train.map(|t| t.error_sequence.clone()).unwrap_or_default(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}
