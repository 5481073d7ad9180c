//! The query language.
//!
//! ```text
//! script    := { stmt }
//! stmt      := run | persist | predict
//! run       := [ident "="] "RUN" name "ON" dsref { "," dsref } [","] [having] [using] ";"
//! persist   := "PERSIST" ident "ON" path ";"
//! predict   := [ident "="] "PREDICT" "ON" dsref "WITH" path ";"
//! having    := "HAVING" hitem { "," hitem }
//! hitem     := "time" duration | "epsilon" number | "max_iter" int
//! using     := "USING" uitem { "," uitem }
//! uitem     := "algorithm" name | "convergence" name | "step" number | "sampler" name
//! dsref     := ( path | ident "(" path ")" ) [ ":" int [ "-" int ] ]
//! duration  := { int ( "h" | "m" | "s" ) }+
//! name      := ident [ "(" { any char but ")" } ")" ]
//! ```
//!
//! Keywords are case-insensitive. `HAVING` and `USING` may come in either
//! order, each at most once, and their items in any order. Paths containing
//! blanks or punctuation can be double-quoted. `--` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnSpec, DatasetFormat};
use crate::operators::{ConvergenceNorm, GradientFunction, GradientRegistry};
use crate::optimizer::{Constraints, Pins};
use crate::plans::{GDAlgorithm, HyperParams};
use crate::sampling::SamplingStrategy;

/// A position in the query text. `line` and `column` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {} (byte {})", self.line, self.column, self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("{pos}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        pos: Pos,
        expected: Vec<String>,
        found: String,
    },

    #[error("{pos}: duplicate {clause} clause")]
    Duplicate { pos: Pos, clause: String },

    #[error("{pos}: invalid {what}: {reason}")]
    InvalidValue { pos: Pos, what: String, reason: String },

    #[error("unknown {kind} {name:?}; expected one of: {}", known.join(", "))]
    Unknown {
        kind: String,
        name: String,
        known: Vec<String>,
    },

    #[error("{0}")]
    Unsupported(String),
}

impl QueryError {
    pub fn pos(&self) -> Option<Pos> {
        match self {
            QueryError::Syntax { pos, .. }
            | QueryError::Duplicate { pos, .. }
            | QueryError::InvalidValue { pos, .. } => Some(*pos),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSel {
    Single(usize),
    /// Inclusive, 1-based.
    Range(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    /// Parser named in `parser(path)` form, e.g. `libsvm`.
    pub parser: Option<String>,
    pub columns: Option<ColumnSel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Having {
    pub time: Option<Duration>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Using {
    pub algorithm: Option<String>,
    pub convergence: Option<String>,
    pub step: Option<f64>,
    pub sampler: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunQuery {
    pub binding: Option<String>,
    /// Task or gradient function name as written.
    pub target: String,
    pub datasets: Vec<DatasetRef>,
    pub having: Having,
    pub using: Using,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistStmt {
    pub query: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictStmt {
    pub binding: Option<String>,
    pub test: DatasetRef,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Statement {
    Run(RunQuery),
    Persist(PersistStmt),
    Predict(PredictStmt),
}

/// Parses exactly one statement.
pub fn parse(text: &str) -> Result<Statement, QueryError> {
    let mut p = Parser::new(text);
    let stmt = p.statement()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error(&["end of input"]));
    }
    Ok(stmt)
}

/// Parses a script of zero or more statements.
pub fn parse_script(text: &str) -> Result<Vec<Statement>, QueryError> {
    let mut p = Parser::new(text);
    let mut out = Vec::new();
    loop {
        p.skip_ws();
        if p.at_end() {
            return Ok(out);
        }
        out.push(p.statement()?);
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

const PATH_STOP: &[char] = &[',', ';', '(', ')', '"'];

const RESERVED: &[&str] = &["run", "on", "having", "using", "persist", "predict", "with"];

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn position(&self, offset: usize) -> Pos {
        let before = &self.src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before
            .rfind('\n')
            .map_or(before.chars().count(), |i| before[i + 1..].chars().count())
            + 1;
        Pos { offset, line, column }
    }

    fn found(&self) -> String {
        let tok: String = self
            .rest()
            .chars()
            .take_while(|c| !c.is_whitespace())
            .take(24)
            .collect();
        if tok.is_empty() {
            "end of input".into()
        } else {
            format!("{tok:?}")
        }
    }

    fn error(&self, expected: &[&str]) -> QueryError {
        QueryError::Syntax {
            pos: self.position(self.pos),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.found(),
        }
    }

    fn skip_ws(&mut self) {
        loop {
            let r = self.rest();
            let trimmed = r.trim_start();
            self.pos += r.len() - trimmed.len();
            if trimmed.starts_with("--") {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                return;
            }
        }
    }

    fn word_len(&self) -> usize {
        self.rest()
            .char_indices()
            .find(|&(_, c)| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
            .map_or(self.rest().len(), |(i, _)| i)
    }

    /// Looks at the next word without consuming it.
    fn peek_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        let len = self.word_len();
        len == kw.len() && self.rest()[..len].eq_ignore_ascii_case(kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[&kw.to_ascii_uppercase()]))
        }
    }

    fn eat_char(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect_char(&mut self, c: char) -> Result<(), QueryError> {
        if self.eat_char(c) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{c}'")]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        self.skip_ws();
        let starts_ok = self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        if !starts_ok {
            return Err(self.error(&[what]));
        }
        let len = self.word_len();
        let s = self.rest()[..len].to_string();
        if RESERVED.iter().any(|k| k.eq_ignore_ascii_case(&s)) {
            return Err(self.error(&[what]));
        }
        self.pos += len;
        Ok(s)
    }

    /// `ident` with an optional parenthesised argument list kept verbatim.
    fn name(&mut self, what: &str) -> Result<String, QueryError> {
        let mut s = self.ident(what)?;
        if self.peek() == Some('(') {
            let close = self.rest().find(')').ok_or_else(|| {
                let mut e = self.error(&["')'"]);
                if let QueryError::Syntax { found, .. } = &mut e {
                    *found = "end of input".into();
                }
                e
            })?;
            s.push_str(&self.rest()[..=close]);
            self.pos += close + 1;
        }
        Ok(s)
    }

    fn uint(&mut self, what: &str) -> Result<(u64, Pos), QueryError> {
        self.skip_ws();
        let start = self.pos;
        let len = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return Err(self.error(&[what]));
        }
        let digits = &self.rest()[..len];
        self.pos += len;
        let v = digits.parse::<u64>().map_err(|_| QueryError::InvalidValue {
            pos: self.position(start),
            what: what.into(),
            reason: "integer too large".into(),
        })?;
        Ok((v, self.position(start)))
    }

    fn number(&mut self, what: &str) -> Result<(f64, Pos), QueryError> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .char_indices()
            .find(|&(i, c)| {
                let prev = self.rest()[..i].chars().last();
                !(c.is_ascii_digit()
                    || c == '.'
                    || c == 'e'
                    || c == 'E'
                    || ((c == '-' || c == '+') && (i == 0 || matches!(prev, Some('e' | 'E')))))
            })
            .map_or(self.rest().len(), |(i, _)| i);
        let text = &self.rest()[..len];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos += len;
                Ok((v, self.position(start)))
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn duration(&mut self) -> Result<Duration, QueryError> {
        self.skip_ws();
        let start = self.pos;
        let mut secs: u64 = 0;
        let mut parts = 0;
        loop {
            let len = self.rest().bytes().take_while(u8::is_ascii_digit).count();
            if len == 0 {
                break;
            }
            let unit = self.rest()[len..].chars().next();
            let mult = match unit.map(|c| c.to_ascii_lowercase()) {
                Some('h') => 3600,
                Some('m') => 60,
                Some('s') => 1,
                _ => {
                    self.pos += len;
                    return Err(self.error(&["duration unit h, m or s"]));
                }
            };
            let v: u64 = self.rest()[..len].parse().map_err(|_| QueryError::InvalidValue {
                pos: self.position(start),
                what: "time".into(),
                reason: "number too large".into(),
            })?;
            secs = v
                .checked_mul(mult)
                .and_then(|x| secs.checked_add(x))
                .ok_or_else(|| QueryError::InvalidValue {
                    pos: self.position(start),
                    what: "time".into(),
                    reason: "duration too large".into(),
                })?;
            self.pos += len + 1;
            parts += 1;
        }
        if parts == 0 {
            return Err(self.error(&["duration such as 1h30m"]));
        }
        if self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            return Err(self.error(&["duration unit h, m or s"]));
        }
        Ok(Duration::from_secs(secs))
    }

    fn quoted(&mut self) -> Result<String, QueryError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.pos = self.src.len();
        Err(QueryError::Syntax {
            pos: self.position(start),
            expected: vec!["closing '\"'".into()],
            found: "end of input".into(),
        })
    }

    /// A bare or quoted path, without any column suffix.
    fn path(&mut self, stop_at_colon: bool) -> Result<String, QueryError> {
        self.skip_ws();
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let len = self
            .rest()
            .char_indices()
            .find(|&(_, c)| c.is_whitespace() || PATH_STOP.contains(&c) || (stop_at_colon && c == ':'))
            .map_or(self.rest().len(), |(i, _)| i);
        if len == 0 {
            return Err(self.error(&["path"]));
        }
        let s = self.rest()[..len].to_string();
        self.pos += len;
        Ok(s)
    }

    fn columns(&mut self) -> Result<ColumnSel, QueryError> {
        let (a, pa) = self.uint("column number")?;
        let a = a as usize;
        if a == 0 {
            return Err(QueryError::InvalidValue {
                pos: pa,
                what: "column".into(),
                reason: "columns are numbered from 1".into(),
            });
        }
        if self.peek() == Some('-') {
            self.pos += 1;
            let (b, pb) = self.uint("column number")?;
            let b = b as usize;
            if b < a {
                return Err(QueryError::InvalidValue {
                    pos: pb,
                    what: "column range".into(),
                    reason: format!("{a}-{b} is empty"),
                });
            }
            return Ok(ColumnSel::Range(a, b));
        }
        Ok(ColumnSel::Single(a))
    }

    fn dsref(&mut self) -> Result<DatasetRef, QueryError> {
        self.skip_ws();
        // `parser(path)` form
        let wl = self.word_len();
        let is_parser_call =
            wl > 0 && self.peek().is_some_and(|c| c.is_ascii_alphabetic()) && self.rest()[wl..].starts_with('(');
        let (path, parser) = if is_parser_call {
            let parser = self.rest()[..wl].to_ascii_lowercase();
            self.pos += wl + 1;
            let path = self.path(false)?;
            self.expect_char(')')?;
            (path, Some(parser))
        } else {
            // A trailing `:<digits>[-<digits>]` is a column spec, any other colon belongs to the path.
            let start = self.pos;
            let raw = self.path(false)?;
            if !self.src[start..].starts_with('"') {
                if let Some(idx) = column_suffix(&raw) {
                    self.pos = start + idx;
                    let path = raw[..idx].to_string();
                    self.pos += 1;
                    let cols = self.columns()?;
                    return Ok(DatasetRef {
                        path,
                        parser: None,
                        columns: Some(cols),
                    });
                }
            }
            (raw, None)
        };
        let columns = if self.peek() == Some(':') {
            self.pos += 1;
            Some(self.columns()?)
        } else {
            None
        };
        Ok(DatasetRef { path, parser, columns })
    }

    fn statement(&mut self) -> Result<Statement, QueryError> {
        self.skip_ws();
        let mut binding = None;
        let save = self.pos;
        if !self.peek_keyword("run") && !self.peek_keyword("persist") && !self.peek_keyword("predict") {
            if let Ok(name) = self.ident("RUN, PERSIST, PREDICT or a binding name") {
                if self.eat_char('=') {
                    binding = Some(name);
                } else {
                    self.pos = save;
                }
            }
        }
        if self.eat_keyword("run") {
            return self.run(binding);
        }
        if self.eat_keyword("predict") {
            self.expect_keyword("on")?;
            let test = self.dsref()?;
            self.expect_keyword("with")?;
            let model = self.path(false)?;
            self.expect_char(';')?;
            return Ok(Statement::Predict(PredictStmt { binding, test, model }));
        }
        if binding.is_none() && self.eat_keyword("persist") {
            let query = self.ident("query name")?;
            self.expect_keyword("on")?;
            let path = self.path(false)?;
            self.expect_char(';')?;
            return Ok(Statement::Persist(PersistStmt { query, path }));
        }
        let expected: &[&str] = if binding.is_some() {
            &["RUN", "PREDICT"]
        } else {
            &["RUN", "PERSIST", "PREDICT", "binding name"]
        };
        Err(self.error(expected))
    }

    fn run(&mut self, binding: Option<String>) -> Result<Statement, QueryError> {
        let target = self.name("task or gradient function")?;
        self.expect_keyword("on")?;
        let mut datasets = vec![self.dsref()?];
        while self.eat_char(',') {
            if self.peek_keyword("having") || self.peek_keyword("using") || self.peek() == Some(';') {
                break;
            }
            datasets.push(self.dsref()?);
        }
        let mut having: Option<Having> = None;
        let mut using: Option<Using> = None;
        loop {
            self.skip_ws();
            let at = self.position(self.pos);
            if self.eat_keyword("having") {
                if having.is_some() {
                    return Err(QueryError::Duplicate {
                        pos: at,
                        clause: "HAVING".into(),
                    });
                }
                having = Some(self.having()?);
            } else if self.eat_keyword("using") {
                if using.is_some() {
                    return Err(QueryError::Duplicate {
                        pos: at,
                        clause: "USING".into(),
                    });
                }
                using = Some(self.using()?);
            } else if self.eat_char(';') {
                break;
            } else {
                let mut exp = Vec::new();
                if having.is_none() {
                    exp.push("HAVING");
                }
                if using.is_none() {
                    exp.push("USING");
                }
                exp.push("';'");
                return Err(self.error(&exp));
            }
        }
        Ok(Statement::Run(RunQuery {
            binding,
            target,
            datasets,
            having: having.unwrap_or_default(),
            using: using.unwrap_or_default(),
        }))
    }

    fn having(&mut self) -> Result<Having, QueryError> {
        let mut h = Having::default();
        loop {
            self.skip_ws();
            let at = self.position(self.pos);
            let dup = |clause: &str| QueryError::Duplicate {
                pos: at,
                clause: clause.into(),
            };
            if self.eat_keyword("time") {
                if h.time.is_some() {
                    return Err(dup("time"));
                }
                h.time = Some(self.duration()?);
            } else if self.eat_keyword("epsilon") {
                if h.epsilon.is_some() {
                    return Err(dup("epsilon"));
                }
                let (v, pos) = self.number("number")?;
                if v <= 0.0 {
                    return Err(QueryError::InvalidValue {
                        pos,
                        what: "epsilon".into(),
                        reason: "must be positive".into(),
                    });
                }
                h.epsilon = Some(v);
            } else if self.eat_keyword("max_iter") {
                if h.max_iter.is_some() {
                    return Err(dup("max_iter"));
                }
                let (v, pos) = self.uint("integer")?;
                if v == 0 {
                    return Err(QueryError::InvalidValue {
                        pos,
                        what: "max_iter".into(),
                        reason: "must be at least 1".into(),
                    });
                }
                h.max_iter = Some(v);
            } else {
                return Err(self.error(&["time", "epsilon", "max_iter"]));
            }
            if !self.eat_char(',') {
                return Ok(h);
            }
        }
    }

    fn using(&mut self) -> Result<Using, QueryError> {
        let mut u = Using::default();
        loop {
            self.skip_ws();
            let at = self.position(self.pos);
            let dup = |clause: &str| QueryError::Duplicate {
                pos: at,
                clause: clause.into(),
            };
            if self.eat_keyword("algorithm") {
                if u.algorithm.is_some() {
                    return Err(dup("algorithm"));
                }
                u.algorithm = Some(self.name("algorithm name")?);
            } else if self.eat_keyword("convergence") {
                if u.convergence.is_some() {
                    return Err(dup("convergence"));
                }
                u.convergence = Some(self.name("convergence function")?);
            } else if self.eat_keyword("step") {
                if u.step.is_some() {
                    return Err(dup("step"));
                }
                let (v, pos) = self.number("number")?;
                if v <= 0.0 {
                    return Err(QueryError::InvalidValue {
                        pos,
                        what: "step".into(),
                        reason: "must be positive".into(),
                    });
                }
                u.step = Some(v);
            } else if self.eat_keyword("sampler") {
                if u.sampler.is_some() {
                    return Err(dup("sampler"));
                }
                u.sampler = Some(self.name("sampler name")?);
            } else {
                return Err(self.error(&["algorithm", "convergence", "step", "sampler"]));
            }
            if !self.eat_char(',') {
                return Ok(u);
            }
        }
    }
}

/// Byte index of the `:` that starts a trailing column spec, if any.
fn column_suffix(raw: &str) -> Option<usize> {
    let idx = raw.rfind(':')?;
    let tail = &raw[idx + 1..];
    let (a, b) = match tail.split_once('-') {
        Some((a, b)) => (a, Some(b)),
        None => (tail, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    (idx > 0 && digits(a) && b.is_none_or(digits)).then_some(idx)
}

fn fmt_path(p: &str) -> String {
    let plain = !p.is_empty()
        && !p
            .chars()
            .any(|c| c.is_whitespace() || PATH_STOP.contains(&c) || c == '\\')
        && column_suffix(p).is_none()
        && !p.starts_with("--");
    if plain {
        p.to_string()
    } else {
        format!("\"{}\"", p.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn fmt_duration(d: Duration) -> String {
    let s = d.as_secs();
    if s == 0 {
        return "0s".into();
    }
    let mut out = String::new();
    for (n, unit) in [(s / 3600, "h"), (s / 60 % 60, "m"), (s % 60, "s")] {
        if n > 0 {
            out.push_str(&format!("{n}{unit}"));
        }
    }
    out
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.parser {
            Some(parser) => write!(f, "{parser}({})", fmt_path(&self.path))?,
            None => f.write_str(&fmt_path(&self.path))?,
        }
        match self.columns {
            Some(ColumnSel::Single(c)) => write!(f, ":{c}"),
            Some(ColumnSel::Range(a, b)) => write!(f, ":{a}-{b}"),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Run(q) => {
                if let Some(b) = &q.binding {
                    write!(f, "{b} = ")?;
                }
                let ds: Vec<String> = q.datasets.iter().map(ToString::to_string).collect();
                write!(f, "RUN {} ON {}", q.target, ds.join(", "))?;
                let mut h = Vec::new();
                if let Some(t) = q.having.time {
                    h.push(format!("time {}", fmt_duration(t)));
                }
                if let Some(e) = q.having.epsilon {
                    h.push(format!("epsilon {e:?}"));
                }
                if let Some(m) = q.having.max_iter {
                    h.push(format!("max_iter {m}"));
                }
                if !h.is_empty() {
                    write!(f, " HAVING {}", h.join(", "))?;
                }
                let mut u = Vec::new();
                if let Some(a) = &q.using.algorithm {
                    u.push(format!("algorithm {a}"));
                }
                if let Some(c) = &q.using.convergence {
                    u.push(format!("convergence {c}"));
                }
                if let Some(s) = q.using.step {
                    u.push(format!("step {s:?}"));
                }
                if let Some(s) = &q.using.sampler {
                    u.push(format!("sampler {s}"));
                }
                if !u.is_empty() {
                    write!(f, " USING {}", u.join(", "))?;
                }
                f.write_str(";")
            }
            Statement::Persist(p) => write!(f, "PERSIST {} ON {};", p.query, fmt_path(&p.path)),
            Statement::Predict(p) => {
                if let Some(b) = &p.binding {
                    write!(f, "{b} = ")?;
                }
                write!(f, "PREDICT ON {} WITH {};", p.test, fmt_path(&p.model))
            }
        }
    }
}

/// Names a query may use, beyond the built-ins.
#[derive(Debug, Clone)]
pub struct Registry {
    pub gradients: GradientRegistry,
    tasks: BTreeMap<String, String>,
    samplers: BTreeMap<String, SamplingStrategy>,
    convergences: BTreeMap<String, ConvergenceNorm>,
}

impl Default for Registry {
    fn default() -> Self {
        let tasks = [
            ("classification", "svm-hinge"),
            ("regression", "linear-regression"),
            ("linear-regression", "linear-regression"),
            ("logistic-regression", "logistic-regression"),
        ];
        Registry {
            gradients: GradientRegistry::default(),
            tasks: tasks.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            samplers: SamplingStrategy::ALL
                .iter()
                .map(|s| (s.name().to_string(), *s))
                .collect(),
            convergences: [ConvergenceNorm::L2, ConvergenceNorm::L1]
                .iter()
                .map(|c| (c.name().to_string(), *c))
                .collect(),
        }
    }
}

fn key(name: &str) -> String {
    name.trim()
        .trim_end_matches("()")
        .to_ascii_lowercase()
        .replace('_', "-")
}

impl Registry {
    pub fn add_sampler(&mut self, name: &str, strategy: SamplingStrategy) {
        self.samplers.insert(key(name), strategy);
    }

    pub fn add_convergence(&mut self, name: &str, norm: ConvergenceNorm) {
        self.convergences.insert(key(name), norm);
    }

    pub fn add_task(&mut self, name: &str, gradient: &str) {
        self.tasks.insert(key(name), key(gradient));
    }

    fn gradient(&self, target: &str) -> Result<GradientFunction, QueryError> {
        let k = key(target);
        let name = self.tasks.get(&k).cloned().unwrap_or(k);
        self.gradients.get(&name).cloned().ok_or_else(|| {
            let mut known: Vec<String> = self.tasks.keys().cloned().collect();
            known.extend(self.gradients.names().map(String::from));
            known.sort();
            known.dedup();
            QueryError::Unknown {
                kind: "task or gradient function".into(),
                name: target.into(),
                known,
            }
        })
    }

    fn sampler(&self, name: &str) -> Result<SamplingStrategy, QueryError> {
        self.samplers
            .get(&key(name))
            .copied()
            .or_else(|| SamplingStrategy::from_name(name))
            .ok_or_else(|| QueryError::Unknown {
                kind: "sampler".into(),
                name: name.into(),
                known: SamplingStrategy::ALL.iter().map(|s| s.name().to_string()).collect(),
            })
    }

    fn convergence(&self, name: &str) -> Result<ConvergenceNorm, QueryError> {
        self.convergences
            .get(&key(name))
            .copied()
            .or_else(|| ConvergenceNorm::from_name(name))
            .ok_or_else(|| QueryError::Unknown {
                kind: "convergence function".into(),
                name: name.into(),
                known: vec!["l2".into(), "l1".into()],
            })
    }
}

/// A validated RUN query with defaults filled in.
#[derive(Debug, Clone)]
pub struct TrainingRequest {
    pub binding: Option<String>,
    pub gradient: GradientFunction,
    pub path: PathBuf,
    pub format: DatasetFormat,
    pub hyper: HyperParams,
    pub constraints: Constraints,
    pub pins: Pins,
}

/// The file and record format named by one or more dataset references.
pub fn dataset_format(refs: &[DatasetRef]) -> Result<(PathBuf, DatasetFormat), QueryError> {
    if refs.is_empty() {
        return Err(QueryError::Unsupported("no dataset given".into()));
    }
    let first = &refs[0];
    if let Some(other) = refs.iter().find(|r| r.path != first.path) {
        return Err(QueryError::Unsupported(format!(
            "all dataset references must name the same file, found {:?} and {:?}",
            first.path, other.path
        )));
    }
    let parser = first.parser.as_deref();
    if refs.iter().any(|r| r.parser.as_deref() != parser) {
        return Err(QueryError::Unsupported(
            "dataset references use different parsers".into(),
        ));
    }
    let path = PathBuf::from(&first.path);
    match parser {
        Some("libsvm") => {
            if refs.len() > 1 || first.columns.is_some() {
                return Err(QueryError::Unsupported("LIBSVM input takes no column spec".into()));
            }
            return Ok((path, DatasetFormat::LibsvmSparse));
        }
        Some("csv" | "dense") | None => {}
        Some(other) => {
            return Err(QueryError::Unknown {
                kind: "dataset parser".into(),
                name: other.into(),
                known: vec!["csv".into(), "libsvm".into()],
            })
        }
    }
    let mut label = None;
    let mut features = None;
    for r in refs {
        match r.columns {
            Some(ColumnSel::Single(c)) if label.is_none() => label = Some(c),
            Some(ColumnSel::Range(a, b)) if features.is_none() => features = Some((a, b)),
            None if refs.len() == 1 => {}
            _ => {
                return Err(QueryError::Unsupported(
                    "use at most one label column (path:N) and one feature range (path:A-B)".into(),
                ))
            }
        }
    }
    let columns = ColumnSpec {
        label: label.unwrap_or(1),
        features,
    };
    if let Some((a, b)) = features {
        if (a..=b).contains(&columns.label) {
            return Err(QueryError::Unsupported(format!(
                "label column {} lies inside the feature range {a}-{b}",
                columns.label
            )));
        }
    }
    Ok((path, DatasetFormat::DenseCsv { columns }))
}

/// Maps names to functions and fills in defaults: tolerance 1e-3, at most
/// 1000 iterations, step 1. A query that sets `max_iter` but no `epsilon`
/// runs exactly that many iterations.
pub fn validate(q: &RunQuery, registry: &Registry) -> Result<TrainingRequest, QueryError> {
    let gradient = registry.gradient(&q.target)?;
    let (path, format) = dataset_format(&q.datasets)?;
    let defaults = HyperParams::default();
    let tolerance = match (q.having.epsilon, q.having.max_iter) {
        (Some(e), _) => Some(e),
        (None, Some(_)) => None,
        (None, None) => defaults.tolerance,
    };
    let convergence = match &q.using.convergence {
        Some(c) => registry.convergence(c)?,
        None => defaults.convergence,
    };
    let hyper = HyperParams {
        step_beta: q.using.step.unwrap_or(defaults.step_beta),
        tolerance,
        max_iter: q.having.max_iter.unwrap_or(defaults.max_iter),
        convergence,
        ..defaults
    };
    let algorithm = match &q.using.algorithm {
        Some(a) => Some(a.parse::<GDAlgorithm>().map_err(|_| {
            QueryError::Unknown {
                kind: "algorithm".into(),
                name: a.clone(),
                known: ["bgd", "mgd", "sgd", "svrg", "bgd-ls", "bgd-ls-listing"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            }
        })?),
        None => None,
    };
    let sampler = q.using.sampler.as_deref().map(|s| registry.sampler(s)).transpose()?;
    Ok(TrainingRequest {
        binding: q.binding.clone(),
        gradient,
        path,
        format,
        hyper,
        constraints: Constraints { time: q.having.time },
        pins: Pins {
            algorithm,
            sampler,
            mode: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(s: &str) -> RunQuery {
        match parse(s).unwrap() {
            Statement::Run(q) => q,
            other => panic!("not a RUN: {other:?}"),
        }
    }

    #[test]
    fn durations() {
        let q = run("RUN classification ON a HAVING time 1h30m;");
        assert_eq!(q.having.time, Some(Duration::from_secs(5400)));
        assert_eq!(fmt_duration(Duration::from_secs(5400)), "1h30m");
        assert_eq!(fmt_duration(Duration::from_secs(3661)), "1h1m1s");
        assert_eq!(fmt_duration(Duration::from_secs(45)), "45s");
        assert!(parse("RUN c ON a HAVING time 10x;").is_err());
    }

    #[test]
    fn path_with_inner_colon() {
        let q = run("RUN c ON s3:bucket/file.txt:3;");
        assert_eq!(q.datasets[0].path, "s3:bucket/file.txt");
        assert_eq!(q.datasets[0].columns, Some(ColumnSel::Single(3)));
    }

    #[test]
    fn clause_order_is_free() {
        let a = run("RUN c ON a USING step 0.5 HAVING max_iter 10, epsilon 0.1;");
        let b = run("run c on a having epsilon 0.1, max_iter 10 using step 0.5;");
        assert_eq!(a, b);
    }

    #[test]
    fn quoted_paths_round_trip() {
        let q = parse("RUN c ON \"my data, v2.csv\":2;").unwrap();
        let again = parse(&q.to_string()).unwrap();
        assert_eq!(q, again);
    }

    #[test]
    fn libsvm_parser_form() {
        let q = run("RUN logistic ON libsvm(train.txt);");
        assert_eq!(q.datasets[0].parser.as_deref(), Some("libsvm"));
        let req = validate(&q, &Registry::default()).unwrap();
        assert_eq!(req.format, DatasetFormat::LibsvmSparse);
        assert_eq!(req.gradient, GradientFunction::LogisticRegression);
    }

    #[test]
    fn mixed_paths_rejected() {
        let q = run("RUN classification ON a.txt:1, b.txt:2-4;");
        assert!(matches!(
            validate(&q, &Registry::default()),
            Err(QueryError::Unsupported(_))
        ));
    }

    #[test]
    fn fixed_iterations_drop_tolerance() {
        let q = run("RUN regression ON a HAVING max_iter 50;");
        let req = validate(&q, &Registry::default()).unwrap();
        assert_eq!((req.hyper.tolerance, req.hyper.max_iter), (None, 50));
    }
}
