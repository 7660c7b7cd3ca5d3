//! Derivative-free global optimizers over box-bounded spaces.

pub mod bo;
pub mod direct;
pub mod gp;
pub mod local;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bo::{bo_minimize, ccd_init, BoOptions};
pub use direct::{direct_minimize, DIRECT_EPSILON};
pub use gp::{gp_fit, gp_fit_from, gp_with_hyperparameters, lcb, matern32, GpOptions, GpSurrogate};

/// Stand-in recorded for objective values that are NaN or infinite.
pub const NONFINITE_SENTINEL: f64 = 1e300;

pub const LOG_FORMAT: &str = "sbdo-evaluation-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Domain("bounds must have at least one dimension".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Domain(format!("bound {i}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (v - l) / (h - l))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *h);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFlag {
    pub name: String,
    /// `max(0, g - a)`; positive means violated.
    pub violation: f64,
}

/// Outcome of one objective call as seen by an optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    /// Whether the underlying objective ran, as opposed to returning a penalty.
    pub evaluated: bool,
    pub constraints: Vec<ConstraintFlag>,
    pub mahalanobis_sq: Option<f64>,
}

impl Evaluation {
    pub fn plain(value: f64) -> Self {
        Self {
            value,
            evaluated: true,
            constraints: Vec::new(),
            mahalanobis_sq: None,
        }
    }

    pub fn violated(&self) -> bool {
        self.constraints.iter().any(|c| c.violation > 0.0)
    }
}

pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Evaluation;
}

impl<F: FnMut(&[f64]) -> f64> Objective for F {
    fn evaluate(&mut self, x: &[f64]) -> Evaluation {
        Evaluation::plain(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluated: bool,
    pub constraints: Vec<ConstraintFlag>,
    pub mahalanobis_sq: Option<f64>,
    pub best_so_far: f64,
}

impl LogRecord {
    pub fn feasible(&self) -> bool {
        self.constraints.iter().all(|c| c.violation <= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub method: String,
    /// `full`, `latent` or `anomaly`.
    pub space: String,
    pub model: Option<String>,
    pub dim: usize,
    pub budget: usize,
    pub baseline_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl EvaluationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append an evaluation; non-finite values are replaced by the sentinel.
    pub fn push(&mut self, x: Vec<f64>, mut eval: Evaluation) -> &LogRecord {
        if !eval.value.is_finite() {
            eval.value = NONFINITE_SENTINEL;
        }
        if let Some(d) = eval.mahalanobis_sq {
            if !d.is_finite() {
                eval.mahalanobis_sq = Some(NONFINITE_SENTINEL);
            }
        }
        let best = self.best_value().map_or(eval.value, |b| b.min(eval.value));
        self.records.push(LogRecord {
            iteration: self.records.len(),
            x,
            f: eval.value,
            evaluated: eval.evaluated,
            constraints: eval.constraints,
            mahalanobis_sq: eval.mahalanobis_sq,
            best_so_far: best,
        });
        self.records.last().unwrap()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    /// First record attaining the minimum value.
    pub fn best(&self) -> Option<&LogRecord> {
        self.records
            .iter()
            .fold(None, |acc: Option<&LogRecord>, r| match acc {
                Some(b) if b.f <= r.f => Some(b),
                _ => Some(r),
            })
    }

    pub fn best_so_far_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut header = self.header.clone();
        header.format = LOG_FORMAT.into();
        header.version = LOG_VERSION;
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Parse a log file, naming the first malformed line (1-based).
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let malformed = |line: usize, reason: String| Error::MalformedLog {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| malformed(1, "empty log".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: LogHeader =
            serde_json::from_str(&first).map_err(|e| malformed(1, format!("bad header: {e}")))?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(malformed(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut records = Vec::new();
        let mut best = f64::INFINITY;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let r: LogRecord = serde_json::from_str(&line).map_err(|e| malformed(no, e.to_string()))?;
            if r.iteration != records.len() {
                return Err(malformed(
                    no,
                    format!("iteration {} out of sequence, expected {}", r.iteration, records.len()),
                ));
            }
            best = best.min(r.f);
            if r.best_so_far != best {
                return Err(malformed(no, format!("best_so_far {} inconsistent with {}", r.best_so_far, best)));
            }
            records.push(r);
        }
        Ok(Self { header, records })
    }
}

/// Result of a complete optimization run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub log: EvaluationLog,
}

impl OptimResult {
    fn from_log(log: EvaluationLog) -> Self {
        let best = log.best().expect("at least one evaluation");
        Self {
            best_x: best.x.clone(),
            best_f: best.f,
            log,
        }
    }
}

/// Budgeted evaluator shared by the optimizers; inputs arrive in unit coordinates.
pub(crate) struct Tracker<'a, O: Objective + ?Sized> {
    objective: &'a mut O,
    bounds: &'a BoxBounds,
    budget: usize,
    pub log: EvaluationLog,
}

impl<'a, O: Objective + ?Sized> Tracker<'a, O> {
    pub fn new(objective: &'a mut O, bounds: &'a BoxBounds, budget: usize) -> Self {
        Self {
            objective,
            bounds,
            budget,
            log: EvaluationLog::new(),
        }
    }

    pub fn exhausted(&self) -> bool {
        self.log.len() >= self.budget
    }

    /// Evaluate at unit point `u`; `None` once the budget is spent.
    pub fn eval_unit(&mut self, u: &[f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        let mut x = self.bounds.from_unit(u);
        self.bounds.clip(&mut x);
        let e = self.objective.evaluate(&x);
        Some(self.log.push(x, e).f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_validation_and_mapping() {
        assert!(BoxBounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxBounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let b = BoxBounds::new(vec![-1.0, 2.0], vec![1.0, 6.0]).unwrap();
        assert_eq!(b.from_unit(&[0.5, 0.25]), vec![0.0, 3.0]);
        assert_eq!(b.to_unit(&[1.0, 2.0]), vec![1.0, 0.0]);
        let mut x = vec![5.0, -5.0];
        b.clip(&mut x);
        assert_eq!(x, vec![1.0, 2.0]);
        assert!(b.contains(&x));
    }

    #[test]
    fn log_best_so_far_and_sentinel() {
        let mut log = EvaluationLog::new();
        for v in [3.0, f64::NAN, 1.0, 2.0, f64::INFINITY] {
            log.push(vec![v], Evaluation::plain(v));
        }
        assert_eq!(log.best_so_far_curve(), vec![3.0, 3.0, 1.0, 1.0, 1.0]);
        assert_eq!(log.records[1].f, NONFINITE_SENTINEL);
        assert_eq!(log.best().unwrap().iteration, 2);
    }

    #[test]
    fn jsonl_round_trip_and_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let mut log = EvaluationLog::new();
        log.header.label = "t".into();
        log.push(vec![0.1, 0.2], Evaluation::plain(4.0));
        log.push(
            vec![0.3, 0.4],
            Evaluation {
                value: 150.0,
                evaluated: false,
                constraints: vec![ConstraintFlag {
                    name: "beam".into(),
                    violation: 0.1,
                }],
                mahalanobis_sq: Some(2.5),
            },
        );
        log.write_jsonl(&p).unwrap();
        let back = EvaluationLog::read_jsonl(&p).unwrap();
        assert_eq!(back.records, log.records);
        assert_eq!(back.header.format, LOG_FORMAT);

        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{not json}\n");
        fs::write(&p, text).unwrap();
        match EvaluationLog::read_jsonl(&p) {
            Err(Error::MalformedLog { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected malformed log, got {other:?}"),
        }
    }
}
