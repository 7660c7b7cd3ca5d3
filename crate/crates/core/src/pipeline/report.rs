//! Comparison report over completed optimization runs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{read_json, run_log_path, write_csv, Pipeline, StageIo, ThresholdOutcome, MODEL, REFERENCE_PPCA, THRESHOLD};
use crate::density::GaussianDensity;
use crate::error::{Error, Result};
use crate::io::read_model;
use crate::latent::ModelKind;
use crate::optim::EvaluationLog;

pub const SUMMARY_CSV: &str = "report/summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHoc {
    pub phi_max: f64,
    /// Geometrically feasible evaluations scored.
    pub feasible: usize,
    pub exceeding: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub method: String,
    pub space: String,
    pub model: Option<String>,
    pub dim: usize,
    pub evaluations: usize,
    pub baseline: Option<f64>,
    pub best_f: f64,
    pub reduction_pct: Option<f64>,
    pub penalized: usize,
    pub posthoc: Option<PostHoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub rows: Vec<SummaryRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Labels of the runs to report on, in manifest order unless configured.
fn labels(p: &Pipeline) -> Result<Vec<String>> {
    if !p.config.report.runs.is_empty() {
        return Ok(p.config.report.runs.clone());
    }
    let rec = p
        .manifest
        .stages
        .get("optimize")
        .ok_or_else(|| Error::Config("stage `optimize` has not completed; run it first".into()))?;
    let out: Vec<String> = rec
        .outputs
        .keys()
        .filter_map(|k| k.strip_prefix("runs/")?.strip_suffix(".jsonl").map(String::from))
        .collect();
    if out.is_empty() {
        return Err(Error::Config("no optimization logs to report on".into()));
    }
    Ok(out)
}

pub(super) fn run(p: &mut Pipeline, io: &mut StageIo) -> Result<ReportOutcome> {
    let mut rows = Vec::new();
    for label in labels(p)? {
        let path = p.input(io, "optimize", &run_log_path(&label))?;
        let log = EvaluationLog::read_jsonl(&path)?;
        if log.is_empty() {
            return Err(Error::MalformedLog {
                path,
                line: 1,
                reason: "log has no evaluation records".into(),
            });
        }

        let curve: Vec<Vec<String>> = log
            .records
            .iter()
            .map(|r| {
                vec![
                    (r.iteration + 1).to_string(),
                    r.f.to_string(),
                    r.best_so_far.to_string(),
                    r.evaluated.to_string(),
                ]
            })
            .collect();
        let rel = format!("report/{label}.convergence.csv");
        io.output(&rel, write_csv(&p.dir, &rel, &["evaluation", "f", "best_so_far", "evaluated"], &curve)?);

        let h = &log.header;
        let posthoc = if h.space == "latent" && h.model.as_deref() == Some(ModelKind::Pca.name()) {
            Some(pca_posthoc(p, io, &label, &log)?)
        } else {
            None
        };
        let best_f = log.best_value().expect("non-empty log");
        rows.push(SummaryRow {
            label: label.clone(),
            method: h.method.clone(),
            space: h.space.clone(),
            model: h.model.clone(),
            dim: h.dim,
            evaluations: log.len(),
            baseline: h.baseline_value,
            best_f,
            reduction_pct: h.baseline_value.map(|b| super::reduction_pct(b, best_f)),
            penalized: log.records.iter().filter(|r| !r.evaluated).count(),
            posthoc,
        });
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.method.clone(),
                r.space.clone(),
                r.model.clone().unwrap_or_default(),
                r.dim.to_string(),
                r.evaluations.to_string(),
                opt(r.baseline),
                r.best_f.to_string(),
                opt(r.reduction_pct),
                r.penalized.to_string(),
                r.posthoc.as_ref().map(|q| q.feasible.to_string()).unwrap_or_default(),
                r.posthoc.as_ref().map(|q| q.exceeding.to_string()).unwrap_or_default(),
                opt(r.posthoc.as_ref().map(|q| q.fraction)),
            ]
        })
        .collect();
    let header = [
        "label",
        "method",
        "space",
        "model",
        "dim",
        "evaluations",
        "baseline",
        "best_f",
        "reduction_pct",
        "penalized",
        "posthoc_feasible",
        "posthoc_exceeding",
        "posthoc_fraction",
    ];
    io.output(SUMMARY_CSV, write_csv(&p.dir, SUMMARY_CSV, &header, &table)?);
    Ok(ReportOutcome { rows })
}

/// Score every geometrically feasible design of a PCA run with the reference PPCA density.
fn pca_posthoc(p: &Pipeline, io: &mut StageIo, label: &str, log: &EvaluationLog) -> Result<PostHoc> {
    let pca = read_model(&p.input(io, "fit", MODEL)?)?;
    let reference = read_model(&p.input(io, "fit", REFERENCE_PPCA)?)?;
    let t: ThresholdOutcome = read_json(&p.input(io, "threshold", THRESHOLD)?)?;
    let g = GaussianDensity::from_model(&reference)?;
    let phi = t.threshold.phi_max;
    let mut rows = Vec::new();
    let (mut feasible, mut exceeding) = (0usize, 0usize);
    for r in log.records.iter().filter(|r| r.feasible()) {
        if r.x.len() != pca.latent_dim() {
            return Err(Error::MalformedLog {
                path: p.dir.join(run_log_path(label)),
                line: r.iteration + 2,
                reason: format!("design has {} coordinates, model has {}", r.x.len(), pca.latent_dim()),
            });
        }
        let x = pca.decode(&DVector::from_column_slice(&r.x));
        let d2 = g.mahalanobis_sq(&x)?;
        let over = d2 > phi;
        feasible += 1;
        exceeding += over as usize;
        rows.push(vec![(r.iteration + 1).to_string(), d2.to_string(), over.to_string()]);
    }
    let rel = format!("report/{label}.posthoc.csv");
    io.output(&rel, write_csv(&p.dir, &rel, &["evaluation", "mahalanobis_sq", "exceeds"], &rows)?);
    Ok(PostHoc {
        phi_max: phi,
        feasible,
        exceeding,
        fraction: if feasible == 0 { 0.0 } else { exceeding as f64 / feasible as f64 },
    })
}
