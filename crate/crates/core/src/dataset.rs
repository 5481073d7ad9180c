//! Dataset ingest, partitioning and synthetic generators.
//!
//! A [`Dataset`] is a list of partitions of raw text records. Records are
//! never split across partitions; a partition is closed once it reaches the
//! configured byte size or holds `k` records, whichever comes first, where `k`
//! is the per-partition unit count derived from the dataset statistics.
//! Parsing a record into a [`DataUnit`] is the job of the Transform operator;
//! ingest only scans every record once to validate it and compute the stats.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::operators::unit::DataUnit;
use crate::seed::{self, stream};
use crate::{Error, Result};

/// 128 MiB, the usual HDFS block size.
pub const DEFAULT_PARTITION_BYTES: usize = 128 * 1024 * 1024;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("{path}: zero records")]
    ZeroRecords { path: String },

    #[error("line {line}: expected {expected} columns, found {found}")]
    InconsistentColumns { line: usize, expected: usize, found: usize },

    #[error("line {line}, column {column}: {reason}")]
    BadLine { line: usize, column: usize, reason: String },

    #[error("record {partition_id}/{offset}, column {column}: {reason}")]
    BadRecord {
        partition_id: usize,
        offset: usize,
        column: usize,
        reason: String,
    },

    #[error("invalid column spec: {0}")]
    ColumnSpec(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Position-free parse failure of one record; callers attach the position.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    /// 1-based column (dense) or token (sparse) number.
    pub column: usize,
    pub reason: String,
}

/// Which columns of a dense CSV record hold the label and the features.
/// Column numbers are 1-based; the feature range is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub label: usize,
    pub features: Option<(usize, usize)>,
}

impl Default for ColumnSpec {
    /// First column is the label, every other column is a feature.
    fn default() -> Self {
        ColumnSpec {
            label: 1,
            features: None,
        }
    }
}

impl ColumnSpec {
    fn feature_count(&self, columns: usize) -> usize {
        match self.features {
            Some((a, b)) => b + 1 - a,
            None => columns - 1,
        }
    }

    fn check(&self, columns: usize) -> std::result::Result<(), DatasetError> {
        if self.label == 0 || self.label > columns {
            return Err(DatasetError::ColumnSpec(format!(
                "label column {} outside 1..={columns}",
                self.label
            )));
        }
        match self.features {
            Some((a, b)) if a == 0 || a > b || b > columns => Err(DatasetError::ColumnSpec(format!(
                "feature range {a}-{b} outside 1..={columns}"
            ))),
            Some((a, b)) if (a..=b).contains(&self.label) => Err(DatasetError::ColumnSpec(format!(
                "label column {} inside feature range {a}-{b}",
                self.label
            ))),
            None if columns < 2 => Err(DatasetError::ColumnSpec(
                "a dense record needs a label and at least one feature".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetFormat {
    DenseCsv { columns: ColumnSpec },
    LibsvmSparse,
}

impl Default for DatasetFormat {
    fn default() -> Self {
        DatasetFormat::DenseCsv {
            columns: ColumnSpec::default(),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetFormat::DenseCsv { .. } => f.write_str("dense-csv"),
            DatasetFormat::LibsvmSparse => f.write_str("libsvm"),
        }
    }
}

impl DatasetFormat {
    /// Parses one record. `d` bounds sparse indices when known.
    pub fn parse(&self, text: &str, d: Option<usize>) -> std::result::Result<DataUnit, RecordError> {
        match self {
            DatasetFormat::DenseCsv { columns } => parse_dense(text, columns),
            DatasetFormat::LibsvmSparse => parse_libsvm(text, d),
        }
    }
}

fn parse_f64(tok: &str, column: usize) -> std::result::Result<f64, RecordError> {
    tok.trim().parse::<f64>().map_err(|_| RecordError {
        column,
        reason: format!("malformed number {:?}", tok.trim()),
    })
}

fn parse_dense(text: &str, spec: &ColumnSpec) -> std::result::Result<DataUnit, RecordError> {
    let cols: Vec<&str> = text.trim().split(',').collect();
    if spec.label > cols.len() {
        return Err(RecordError {
            column: spec.label,
            reason: format!("record has only {} columns", cols.len()),
        });
    }
    let label = parse_f64(cols[spec.label - 1], spec.label)?;
    let mut x = Vec::with_capacity(spec.feature_count(cols.len()));
    match spec.features {
        Some((a, b)) => {
            if b > cols.len() {
                return Err(RecordError {
                    column: b,
                    reason: format!("record has only {} columns", cols.len()),
                });
            }
            for c in a..=b {
                x.push(parse_f64(cols[c - 1], c)?);
            }
        }
        None => {
            for (i, tok) in cols.iter().enumerate() {
                if i + 1 != spec.label {
                    x.push(parse_f64(tok, i + 1)?);
                }
            }
        }
    }
    Ok(DataUnit::dense(label, x))
}

fn parse_libsvm(text: &str, d: Option<usize>) -> std::result::Result<DataUnit, RecordError> {
    let body = text.split('#').next().unwrap_or("");
    let mut toks = body.split_whitespace();
    let label = match toks.next() {
        Some(t) => parse_f64(t, 1)?,
        None => {
            return Err(RecordError {
                column: 1,
                reason: "empty record".into(),
            })
        }
    };
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (i, tok) in toks.enumerate() {
        let column = i + 2;
        let (idx, val) = tok.split_once(':').ok_or_else(|| RecordError {
            column,
            reason: format!("expected <index>:<value>, found {tok:?}"),
        })?;
        let idx: usize = idx.parse().map_err(|_| RecordError {
            column,
            reason: format!("malformed feature index {idx:?}"),
        })?;
        if idx == 0 {
            return Err(RecordError {
                column,
                reason: "feature indices are 1-based".into(),
            });
        }
        if let Some(d) = d {
            if idx > d {
                return Err(RecordError {
                    column,
                    reason: format!("feature index {idx} exceeds d={d}"),
                });
            }
        }
        let zero_based = (idx - 1) as u32;
        if indices.last().is_some_and(|&last| last >= zero_based) {
            return Err(RecordError {
                column,
                reason: "feature indices must be strictly increasing".into(),
            });
        }
        indices.push(zero_based);
        values.push(parse_f64(val, column)?);
    }
    Ok(DataUnit::sparse(label, indices, values))
}

/// One input line together with its position in the partition layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub partition_id: usize,
    pub offset: usize,
}

impl RawRecord {
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub records: Vec<RawRecord>,
    pub size_bytes: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Number of data units.
    pub n: usize,
    /// Number of features.
    pub d: usize,
    pub size_bytes: usize,
    /// Nonzeros over `n * d`.
    pub density: f64,
    /// Data units per partition, `ceil(n * partition_bytes / size_bytes)`.
    pub k: usize,
    pub partition_bytes: usize,
}

impl DatasetStats {
    pub fn record_bytes(&self) -> f64 {
        self.size_bytes as f64 / self.n as f64
    }
}

/// Address of a record inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordId {
    pub partition: u32,
    pub offset: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    partitions: Vec<Partition>,
    format: DatasetFormat,
    stats: DatasetStats,
}

impl Dataset {
    /// Reads a dataset file and splits it into partitions of about
    /// `partition_bytes` bytes.
    pub fn ingest(path: impl AsRef<Path>, format: DatasetFormat, partition_bytes: usize) -> Result<Dataset> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|e| {
            let line = e.as_bytes()[..e.utf8_error().valid_up_to()]
                .iter()
                .filter(|&&b| b == b'\n')
                .count()
                + 1;
            DatasetError::BadLine {
                line,
                column: 1,
                reason: "invalid UTF-8".into(),
            }
        })?;
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_string()))
            .collect::<Vec<_>>();
        if lines.is_empty() {
            return Err(DatasetError::ZeroRecords {
                path: path.display().to_string(),
            }
            .into());
        }
        Ok(Self::build(lines, format, partition_bytes, None)?)
    }

    /// Builds a dataset from in-memory lines, numbering them from 1.
    pub fn from_lines<I, S>(lines: I, format: DatasetFormat, partition_bytes: usize) -> Result<Dataset>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lines: Vec<(usize, String)> = lines
            .into_iter()
            .enumerate()
            .map(|(i, s)| (i + 1, s.into()))
            .filter(|(_, s)| !s.trim().is_empty())
            .collect();
        if lines.is_empty() {
            return Err(DatasetError::ZeroRecords {
                path: "<memory>".into(),
            }
            .into());
        }
        Ok(Self::build(lines, format, partition_bytes, None)?)
    }

    fn build(
        lines: Vec<(usize, String)>,
        format: DatasetFormat,
        partition_bytes: usize,
        fixed_d: Option<usize>,
    ) -> std::result::Result<Dataset, DatasetError> {
        if partition_bytes == 0 {
            return Err(DatasetError::Argument("partition_bytes must be positive".into()));
        }
        let n = lines.len();
        let mut size_bytes = 0usize;
        let mut nnz = 0usize;
        let mut d = 0usize;
        match format {
            DatasetFormat::DenseCsv { columns } => {
                let expected = lines[0].1.trim().split(',').count();
                columns.check(expected)?;
                d = columns.feature_count(expected);
                for (line, text) in &lines {
                    let found = text.trim().split(',').count();
                    if found != expected {
                        return Err(DatasetError::InconsistentColumns {
                            line: *line,
                            expected,
                            found,
                        });
                    }
                    let unit = parse_dense(text, &columns).map_err(|e| DatasetError::BadLine {
                        line: *line,
                        column: e.column,
                        reason: e.reason,
                    })?;
                    nnz += unit.features.nnz();
                    size_bytes += text.len();
                }
            }
            DatasetFormat::LibsvmSparse => {
                for (line, text) in &lines {
                    let unit = parse_libsvm(text, fixed_d).map_err(|e| DatasetError::BadLine {
                        line: *line,
                        column: e.column,
                        reason: e.reason,
                    })?;
                    nnz += unit.features.nnz();
                    d = d.max(unit.features.min_dim());
                    size_bytes += text.len();
                }
            }
        }
        if let Some(fd) = fixed_d {
            d = fd;
        }
        if d == 0 {
            return Err(DatasetError::Argument("dataset has no features".into()));
        }
        let density = (nnz.max(1) as f64 / (n as f64 * d as f64)).min(1.0);
        let k = (n as u128 * partition_bytes as u128).div_ceil(size_bytes.max(1) as u128) as usize;
        let stats = DatasetStats {
            n,
            d,
            size_bytes,
            density,
            k: k.max(1),
            partition_bytes,
        };

        let mut partitions = Vec::new();
        let mut current = Partition {
            records: Vec::new(),
            size_bytes: 0,
        };
        for (_, text) in lines {
            let len = text.len();
            current.records.push(RawRecord {
                text,
                partition_id: partitions.len(),
                offset: current.records.len(),
            });
            current.size_bytes += len;
            if current.size_bytes >= partition_bytes || current.records.len() >= stats.k {
                partitions.push(std::mem::replace(
                    &mut current,
                    Partition {
                        records: Vec::new(),
                        size_bytes: 0,
                    },
                ));
            }
        }
        if !current.is_empty() {
            partitions.push(current);
        }
        Ok(Dataset {
            partitions,
            format,
            stats,
        })
    }

    /// A new dataset holding copies of the given records, in the given order.
    /// The feature count is inherited so sparse samples keep the parent's `d`.
    pub fn subset(&self, ids: &[RecordId]) -> Result<Dataset> {
        if ids.is_empty() {
            return Err(DatasetError::ZeroRecords {
                path: "<subset>".into(),
            }
            .into());
        }
        let lines = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (i + 1, self.record(*id).text.clone()))
            .collect();
        Ok(Self::build(
            lines,
            self.format,
            self.stats.partition_bytes,
            Some(self.stats.d),
        )?)
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn format(&self) -> DatasetFormat {
        self.format
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    pub fn record(&self, id: RecordId) -> &RawRecord {
        &self.partitions[id.partition as usize].records[id.offset as usize]
    }

    pub fn records(&self) -> impl Iterator<Item = &RawRecord> {
        self.partitions.iter().flat_map(|p| p.records.iter())
    }

    pub fn record_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.partitions.iter().enumerate().flat_map(|(p, part)| {
            (0..part.len()).map(move |o| RecordId {
                partition: p as u32,
                offset: o as u32,
            })
        })
    }

    /// Global position of every record, in partition order.
    pub fn id_at(&self, mut index: usize) -> RecordId {
        for (p, part) in self.partitions.iter().enumerate() {
            if index < part.len() {
                return RecordId {
                    partition: p as u32,
                    offset: index as u32,
                };
            }
            index -= part.len();
        }
        panic!("record index out of range");
    }

    /// Writes the records back, one per line.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.stats.size_bytes + self.stats.n);
        for r in self.records() {
            out.push_str(&r.text);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Parses every record. Used by oracles and prediction, not by the executor.
    pub fn parse_all(&self) -> Result<Vec<DataUnit>> {
        self.records()
            .map(|r| {
                self.format.parse(&r.text, Some(self.stats.d)).map_err(|e| {
                    DatasetError::BadRecord {
                        partition_id: r.partition_id,
                        offset: r.offset,
                        column: e.column,
                        reason: e.reason,
                    }
                    .into()
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    /// Labels +-1 from a hyperplane through the origin.
    Classification,
    /// `y = w . x + noise`.
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub n: usize,
    pub d: usize,
    /// Classification: fraction of flipped labels. Regression: std-dev of the additive noise.
    pub noise: f64,
    pub seed: u64,
    /// Fraction of nonzero features; below 1 the records are written as LIBSVM.
    pub density: f64,
    pub partition_bytes: usize,
}

impl SynthConfig {
    pub fn new(task: SynthTask, n: usize, d: usize, noise: f64, seed: u64) -> Self {
        SynthConfig {
            task,
            n,
            d,
            noise,
            seed,
            density: 1.0,
            partition_bytes: DEFAULT_PARTITION_BYTES,
        }
    }

    pub fn density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn partition_bytes(mut self, bytes: usize) -> Self {
        self.partition_bytes = bytes;
        self
    }

    pub fn format(&self) -> DatasetFormat {
        if self.density < 1.0 {
            DatasetFormat::LibsvmSparse
        } else {
            DatasetFormat::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub w_true: Vec<f64>,
    /// Labels before noise was applied, in record order.
    pub noise_free_labels: Vec<f64>,
}

/// Dense synthetic dataset with default partitioning.
pub fn synthesize(task: SynthTask, n: usize, d: usize, noise: f64, seed: u64) -> Result<Synthetic> {
    synthesize_with(&SynthConfig::new(task, n, d, noise, seed))
}

/// Feature values are kept to six decimals so records stay short.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn synthesize_with(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.n == 0 || cfg.d == 0 {
        return Err(DatasetError::Argument("n and d must be at least 1".into()).into());
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(DatasetError::Argument("density must be in (0, 1]".into()).into());
    }
    if !(cfg.noise >= 0.0) {
        return Err(DatasetError::Argument("noise must be non-negative".into()).into());
    }
    let d = cfg.d;
    let rho = cfg.density;
    let sparse = rho < 1.0;
    let mut wrng = seed::rng(cfg.seed, &[stream::SYNTH, 0]);
    let mut w_true: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut wrng)).collect();
    if cfg.task == SynthTask::Classification {
        let norm = w_true.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        w_true.iter_mut().for_each(|v| *v /= norm);
    }
    // Feature scale keeps E|x|^2 near 1 whatever d and the density are.
    let scale = 1.0 / (d as f64 * rho).sqrt();
    // Half-width of the empty slab around the separating hyperplane.
    let gap = 0.5 / (d as f64).sqrt();

    let mut rng = seed::rng(cfg.seed, &[stream::SYNTH, 1]);
    let mut lines = Vec::with_capacity(cfg.n);
    let mut clean = Vec::with_capacity(cfg.n);
    let mut idx_buf = Vec::new();
    let mut x = vec![0.0; d];
    for i in 0..cfg.n {
        let draw_x = |rng: &mut rand_chacha::ChaCha8Rng, x: &mut Vec<f64>, idx: &mut Vec<usize>| {
            idx.clear();
            for (j, xj) in x.iter_mut().enumerate() {
                let keep = !sparse || j == i % d || rng.random::<f64>() < rho;
                if keep {
                    let g: f64 = StandardNormal.sample(rng);
                    *xj = round6(g * scale);
                    idx.push(j);
                } else {
                    *xj = 0.0;
                }
            }
        };
        let label: f64;
        match cfg.task {
            SynthTask::Classification if !sparse => {
                // Two half-Gaussian clouds on either side of the hyperplane w_true . x = 0.
                let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
                draw_x(&mut rng, &mut x, &mut idx_buf);
                let along: f64 = x.iter().zip(&w_true).map(|(a, b)| a * b).sum();
                let t: f64 = StandardNormal.sample(&mut rng);
                let offset = gap + (t * scale).abs();
                for (xj, wj) in x.iter_mut().zip(&w_true) {
                    *xj = round6(*xj - along * wj + y * offset * wj);
                }
                label = y;
            }
            SynthTask::Classification => {
                let mut s = 0.0;
                for _ in 0..64 {
                    draw_x(&mut rng, &mut x, &mut idx_buf);
                    s = x.iter().zip(&w_true).map(|(a, b)| a * b).sum();
                    if s.abs() >= gap * rho.sqrt() {
                        break;
                    }
                }
                label = if s < 0.0 { -1.0 } else { 1.0 };
            }
            SynthTask::Regression => {
                draw_x(&mut rng, &mut x, &mut idx_buf);
                label = x.iter().zip(&w_true).map(|(a, b)| a * b).sum();
            }
        }
        // Both draws happen for every unit so the stream does not depend on `noise`.
        let u: f64 = rng.random();
        let e: f64 = StandardNormal.sample(&mut rng);
        clean.push(label);
        let y = match cfg.task {
            SynthTask::Classification if u < cfg.noise => -label,
            SynthTask::Classification => label,
            SynthTask::Regression => label + cfg.noise * e,
        };
        let mut line = String::with_capacity(16 * (idx_buf.len() + 1));
        use std::fmt::Write;
        if sparse {
            let _ = write!(line, "{y}");
            for &j in &idx_buf {
                let _ = write!(line, " {}:{}", j + 1, x[j]);
            }
        } else {
            let _ = write!(line, "{y}");
            for v in &x {
                let _ = write!(line, ",{v}");
            }
        }
        lines.push((i + 1, line));
    }
    let fixed_d = if sparse { Some(d) } else { None };
    let dataset = Dataset::build(lines, cfg.format(), cfg.partition_bytes, fixed_d)?;
    Ok(Synthetic {
        dataset,
        w_true,
        noise_free_labels: clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(n: usize, len: usize) -> Vec<String> {
        (0..n)
            .map(|i| {
                let head = format!("{},{}", i % 2, i);
                format!("{head},{}", "1".repeat(len - head.len() - 1))
            })
            .collect()
    }

    #[test]
    fn three_lines_one_partition() {
        let ds = Dataset::from_lines(
            ["5.0,2.0,3.0", "1,2,3", "0,0,1"],
            DatasetFormat::default(),
            DEFAULT_PARTITION_BYTES,
        )
        .unwrap();
        assert_eq!(ds.num_partitions(), 1);
        assert_eq!(ds.stats().n, 3);
        assert_eq!(ds.stats().d, 2);
    }

    #[test]
    fn partition_count_follows_byte_size() {
        let ls = lines(400, 40);
        assert!(ls.iter().all(|l| l.len() == 40));
        let ds = Dataset::from_lines(ls, DatasetFormat::default(), 4096).unwrap();
        // ceil(16000 / 4096) = 4
        assert_eq!(ds.num_partitions(), 4);
        assert_eq!(ds.stats().size_bytes, 16000);
        assert_eq!(ds.stats().k, 103);
        for p in ds.partitions() {
            assert!(p.len() <= ds.stats().k);
            assert!(p.size_bytes < 4096 + 40);
            assert_eq!(p.size_bytes, p.records.iter().map(|r| r.byte_len()).sum::<usize>());
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "\n\n").unwrap();
        let err = Dataset::ingest(&path, DatasetFormat::default(), 1024).unwrap_err();
        assert!(err.to_string().contains("zero records"), "{err}");
    }

    #[test]
    fn inconsistent_columns_report_line() {
        let err = Dataset::from_lines(["1,2,3", "1,2", "1,2,3"], DatasetFormat::default(), 1024).unwrap_err();
        match err {
            Error::Dataset(DatasetError::InconsistentColumns { line, expected, found }) => {
                assert_eq!((line, expected, found), (2, 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn libsvm_d_is_max_index() {
        let ds = Dataset::from_lines(["+1 3:0.5 7:1.2", "-1 1:1 8:2"], DatasetFormat::LibsvmSparse, 1024).unwrap();
        assert_eq!(ds.stats().d, 8);
        assert!((ds.stats().density - 4.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn libsvm_rejects_unordered_indices() {
        let err = DatasetFormat::LibsvmSparse.parse("1 4:1 2:1", None).unwrap_err();
        assert_eq!(err.column, 3);
    }

    #[test]
    fn dense_column_ranges() {
        let fmt = DatasetFormat::DenseCsv {
            columns: ColumnSpec {
                label: 2,
                features: Some((4, 5)),
            },
        };
        let u = fmt.parse("9,1,8,2,3,7", None).unwrap();
        assert_eq!(u.label, 1.0);
        assert_eq!(u.features, crate::operators::Features::Dense(vec![2.0, 3.0]));
        let ds = Dataset::from_lines(["9,1,8,2,3,7"], fmt, 64).unwrap();
        assert_eq!(ds.stats().d, 2);
    }

    #[test]
    fn noise_one_flips_every_label() {
        let a = synthesize(SynthTask::Classification, 200, 3, 0.0, 11).unwrap();
        let b = synthesize(SynthTask::Classification, 200, 3, 1.0, 11).unwrap();
        let la = a.dataset.parse_all().unwrap();
        let lb = b.dataset.parse_all().unwrap();
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.label, -y.label);
            assert_eq!(x.features, y.features);
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cfg = SynthConfig::new(SynthTask::Regression, 50, 4, 0.1, 3).density(0.5);
        let a = synthesize_with(&cfg).unwrap();
        let b = synthesize_with(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.w_true, b.w_true);
        assert_eq!(a.dataset.format(), DatasetFormat::LibsvmSparse);
        assert_eq!(a.dataset.stats().d, 4);
    }

    #[test]
    fn subset_keeps_dimension() {
        let s = synthesize_with(&SynthConfig::new(SynthTask::Classification, 100, 30, 0.0, 5).density(0.1)).unwrap();
        let ids: Vec<_> = s.dataset.record_ids().take(3).collect();
        let sub = s.dataset.subset(&ids).unwrap();
        assert_eq!(sub.stats().d, 30);
        assert_eq!(sub.stats().n, 3);
    }
}
