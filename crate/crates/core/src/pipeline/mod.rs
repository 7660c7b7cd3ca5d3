//! End-to-end pipeline: sample, fit, threshold, optimize and report.
//!
//! Every stage reads its inputs from the output directory, checks them
//! against the hashes the upstream stage recorded in the manifest, and
//! records the hashes of what it writes.

pub mod config;
pub mod manifest;
pub mod report;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{
    chi_square_diagnostic, exceedance, histogram, quantile_r7, sample_marginal, sample_uniform_latent,
    threshold_phi_max, AnomalyThreshold, ChiSquareDiagnostic, GaussianDensity,
};
use crate::error::{Error, Result};
use crate::geometry::{sample_dataset, Geometry, SamplingStats};
use crate::io::{file_hash, read_matrix, read_model, sha256_hex, write_matrix, write_model};
use crate::latent::{
    latent_bounds, CenteredData, EmOptions, FaModel, LatentModel, ModelKind, PcaModel, PpcaModel, Spectrum,
};
use crate::optim::{bo_minimize, direct_minimize, BoxBounds, EvaluationLog, LogHeader, Objective, OptimResult};
use crate::problem::{FullSpace, HullProblem, LatentProblem};

pub use config::{FeasibilityRule, Method, RunConfig, RunSpec, Space};
pub use manifest::{DirLock, Manifest, StageRecord, StageStatus};
pub use report::{ReportOutcome, SummaryRow};

pub const DATASET: &str = "dataset.bin";
pub const DESIGNS: &str = "designs.bin";
pub const SAMPLE_META: &str = "sample.json";
pub const MODEL: &str = "model.bin";
/// PPCA fitted alongside a PCA model to score its designs after the fact.
pub const REFERENCE_PPCA: &str = "reference_ppca.bin";
pub const VARIANCE_CSV: &str = "variance.csv";
pub const FIT_META: &str = "fit.json";
pub const THRESHOLD: &str = "threshold.json";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const SCALE_SWEEP_CSV: &str = "scale_sweep.csv";

pub fn run_log_path(label: &str) -> String {
    format!("runs/{label}.jsonl")
}

/// Seed of a named stage: the first 8 bytes of `sha256(root_le || name)`.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub(crate) fn write_bytes(dir: &Path, rel: &str, bytes: &[u8]) -> Result<String> {
    let path = dir.join(rel);
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(bytes))
}

pub(crate) fn write_json<T: Serialize>(dir: &Path, rel: &str, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(dir, rel, text.as_bytes())
}

pub(crate) fn write_csv(dir: &Path, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("{rel}: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("{rel}: {e}")))?;
    write_bytes(dir, rel, &bytes)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub n: usize,
    pub dim: usize,
    pub variables: usize,
    pub seed: u64,
    pub accepted: usize,
    pub attempts: usize,
    pub acceptance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub kind: ModelKind,
    pub k: usize,
    /// `fixed`, `variance_threshold` or `max_k` (threshold never reached).
    pub selection: String,
    pub explained: f64,
    pub effective_rank: usize,
    pub log_likelihood: Option<f64>,
    pub em_iterations: Option<usize>,
    pub heywood_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub threshold: AnomalyThreshold,
    /// Model whose density scores the designs.
    pub density_model: ModelKind,
    pub latent_dim: usize,
    pub exceedance_reconstructed: f64,
    pub exceedance_uniform: f64,
    /// Reconstructions of fresh marginal draws against chi-square with K dof.
    pub chi2_fresh: ChiSquareDiagnostic,
    /// Reconstructions of the training designs against chi-square with K dof.
    pub chi2_training: ChiSquareDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub method: String,
    pub space: String,
    pub model: Option<String>,
    pub dim: usize,
    pub budget: usize,
    pub baseline: f64,
    pub best_f: f64,
    pub reduction_pct: f64,
    pub best_x: Vec<f64>,
    pub evaluated: usize,
    pub penalized: usize,
    pub phi_max: Option<f64>,
    /// Largest `d^2_M` among designs that reached the objective.
    pub max_evaluated_mahalanobis_sq: Option<f64>,
}

/// Percentage reduction of `best` relative to `baseline`.
pub fn reduction_pct(baseline: f64, best: f64) -> f64 {
    (baseline - best) / baseline * 100.0
}

/// An output directory opened for one command.
pub struct Pipeline {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub manifest: Manifest,
    _lock: DirLock,
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self> {
        let dir = config.output_dir.clone();
        let lock = DirLock::acquire(&dir)?;
        let config_hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let manifest = Manifest::load_or_new(&dir, config.seed, config_hash)?;
        Ok(Self {
            config,
            dir,
            manifest,
            _lock: lock,
        })
    }

    pub fn seed(&self, stage: &str) -> u64 {
        stage_seed(self.config.seed, stage)
    }

    pub fn problem(&self) -> Result<HullProblem> {
        let c = &self.config;
        HullProblem::new(
            c.hull.clone(),
            c.lattices(),
            c.problem.tolerances.clone(),
            c.problem.resistance.clone(),
            c.problem.penalty,
        )
    }

    /// Run `body` as stage `name`, recording inputs, outputs and timing.
    fn stage<T>(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut Self, &mut StageIo) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let mut io = StageIo::default();
        let out = body(self, &mut io);
        let rec = StageRecord {
            status: if out.is_ok() { StageStatus::Completed } else { StageStatus::Failed },
            inputs: io.inputs,
            outputs: io.outputs,
            elapsed_ms: start.elapsed().as_millis() as u64,
            message: out.as_ref().err().map(|e| e.to_string()),
        };
        self.manifest.record(name, rec);
        self.manifest.save(&self.dir)?;
        out
    }

    /// Check an upstream artifact and note it as an input.
    fn input(&self, io: &mut StageIo, stage: &str, artifact: &str) -> Result<PathBuf> {
        let h = self.manifest.verify(&self.dir, stage, artifact)?;
        io.inputs.insert(artifact.to_string(), h);
        Ok(self.dir.join(artifact))
    }

    pub fn sample(&mut self) -> Result<SampleOutcome> {
        self.sample_with(None)
    }

    /// Sampling with an explicit acceptance predicate (overrides the configured rule).
    pub fn sample_with(&mut self, predicate: Option<&(dyn Fn(&Geometry) -> bool + Sync)>) -> Result<SampleOutcome> {
        self.stage("sample", |p, io| {
            let problem = p.problem()?;
            let seed = p.seed("sample");
            let constraints = &problem.constraints;
            let by_rule = |g: &Geometry| constraints.evaluate(g).iter().all(|f| f.violation <= 0.0);
            let pred: Option<&(dyn Fn(&Geometry) -> bool + Sync)> = match (predicate, p.config.sample.feasibility) {
                (Some(f), _) => Some(f),
                (None, FeasibilityRule::Constraints) => Some(&by_rule),
                (None, FeasibilityRule::None) => None,
            };
            let ds = sample_dataset(&problem.baseline, &problem.lattices, p.config.sample.n, seed, pred)?;
            let SamplingStats { accepted, attempts } = ds.stats.clone();
            let out = SampleOutcome {
                n: ds.len(),
                dim: ds.dim(),
                variables: problem.num_variables(),
                seed,
                accepted,
                attempts,
                acceptance_ratio: ds.stats.acceptance_ratio(),
            };
            io.output(DATASET, write_matrix(&p.dir.join(DATASET), &ds.x)?);
            io.output(DESIGNS, write_matrix(&p.dir.join(DESIGNS), &ds.designs)?);
            io.output(SAMPLE_META, write_json(&p.dir, SAMPLE_META, &out)?);
            Ok(out)
        })
    }

    pub fn fit(&mut self) -> Result<FitOutcome> {
        self.stage("fit", |p, io| {
            let x = read_matrix(&p.input(io, "sample", DATASET)?)?;
            let mc = p.config.model.clone();
            let opts = EmOptions {
                max_iter: mc.em_max_iter,
                tol: mc.em_tol,
                seed: p.seed("fit"),
            };
            let data = CenteredData::new(&x)?;
            let spectrum = Spectrum::of(&data);
            let rank = spectrum.effective_rank;
            if let Some(k) = mc.k {
                if k > rank {
                    return Err(Error::RankDeficient {
                        requested: k,
                        effective_rank: rank,
                    });
                }
            }

            let mut fa_curve: BTreeMap<usize, f64> = BTreeMap::new();
            let mut fa_fit: Option<FaModel> = None;
            let (k, selection) = match (mc.k, mc.kind) {
                (Some(k), _) => (k, "fixed"),
                (None, ModelKind::Pca | ModelKind::Ppca) => {
                    let k = spectrum.select_k(mc.variance_threshold);
                    if k > rank {
                        return Err(Error::RankDeficient {
                            requested: k,
                            effective_rank: rank,
                        });
                    }
                    (k, "variance_threshold")
                }
                (None, ModelKind::Fa) => {
                    // FA explained variance is not nested across K, so refit for each candidate
                    let mut chosen = None;
                    for k in 1..=mc.max_k.min(rank) {
                        let m = FaModel::fit_em(&x, k, &opts)?;
                        let f = m.explained_variance_fraction(k);
                        fa_curve.insert(k, f);
                        fa_fit = Some(m);
                        if f >= mc.variance_threshold {
                            chosen = Some(k);
                            break;
                        }
                    }
                    match chosen {
                        Some(k) => (k, "variance_threshold"),
                        None => (fa_curve.keys().last().copied().unwrap_or(1), "max_k"),
                    }
                }
            };

            let model: LatentModel = match mc.kind {
                ModelKind::Pca => PcaModel::from_spectrum(&data, &spectrum, k)?.into(),
                ModelKind::Ppca => PpcaModel::from_spectrum(&data, &spectrum, k)?.into(),
                ModelKind::Fa => match fa_fit.filter(|m| m.latent_dim() == k) {
                    Some(m) => m.into(),
                    None => FaModel::fit_em(&x, k, &opts)?.into(),
                },
            };
            io.output(MODEL, write_model(&p.dir.join(MODEL), &model)?);
            if mc.kind == ModelKind::Pca {
                let reference: LatentModel = PpcaModel::from_spectrum(&data, &spectrum, k)?.into();
                io.output(REFERENCE_PPCA, write_model(&p.dir.join(REFERENCE_PPCA), &reference)?);
            }

            let curve = spectrum.explained_curve();
            let rows: Vec<Vec<String>> = spectrum
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let k = i + 1;
                    vec![
                        k.to_string(),
                        l.to_string(),
                        curve[k].to_string(),
                        fa_curve.get(&k).map(|f| f.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            io.output(
                VARIANCE_CSV,
                write_csv(&p.dir, VARIANCE_CSV, &["k", "eigenvalue", "explained", "fa_explained"], &rows)?,
            );
            let report = model.report();
            let out = FitOutcome {
                kind: mc.kind,
                k,
                selection: selection.into(),
                explained: model.explained_variance_fraction(k),
                effective_rank: rank,
                log_likelihood: report.map(|r| r.log_likelihood),
                em_iterations: report.map(|r| r.iterations),
                heywood_cases: report.map_or(0, |r| r.floored.len()),
            };
            io.output(FIT_META, write_json(&p.dir, FIT_META, &out)?);
            Ok(out)
        })
    }

    /// The model whose density scores designs: the fitted one, or the reference PPCA for PCA.
    fn density_model(&self, io: &mut StageIo) -> Result<(LatentModel, LatentModel)> {
        let model = read_model(&self.input(io, "fit", MODEL)?)?;
        let dm = if model.kind() == ModelKind::Pca {
            read_model(&self.input(io, "fit", REFERENCE_PPCA)?)?
        } else {
            model.clone()
        };
        Ok((model, dm))
    }

    pub fn threshold(&mut self) -> Result<ThresholdOutcome> {
        self.stage("threshold", |p, io| {
            let x = read_matrix(&p.input(io, "sample", DATASET)?)?;
            let (_, dm) = p.density_model(io)?;
            let tc = p.config.threshold.clone();
            let (t, recon) = threshold_phi_max(&dm, &x, tc.rule)?;
            let g = GaussianDensity::from_model(&dm)?;
            let bounds = latent_bounds(&dm, &x)?;
            let k = dm.latent_dim();

            let z = sample_uniform_latent(&bounds, tc.uniform_samples, 1.0, p.seed("threshold/uniform"));
            let uniform = g.mahalanobis_sq_rows(&dm.decode_rows(&z))?;
            let fresh = sample_marginal(&dm, tc.marginal_samples, p.seed("threshold/marginal"))?;
            let fresh_d = g.reconstruction_distances(&dm, &fresh)?;

            let mut all: Vec<f64> = recon.iter().chain(&uniform).copied().collect();
            all.sort_by(f64::total_cmp);
            let upper = quantile_r7(&all, 0.99).max(2.0 * t.phi_max);
            let hr = histogram(&recon, tc.bins, upper);
            let hu = histogram(&uniform, tc.bins, upper);
            let rows: Vec<Vec<String>> = hr
                .iter()
                .zip(&hu)
                .map(|(a, b)| vec![a.left.to_string(), a.right.to_string(), a.count.to_string(), b.count.to_string()])
                .collect();
            io.output(
                HISTOGRAM_CSV,
                write_csv(&p.dir, HISTOGRAM_CSV, &["left", "right", "reconstructed", "uniform_latent"], &rows)?,
            );

            let mut sweep = Vec::new();
            for (i, &s) in tc.scales.iter().enumerate() {
                let z = sample_uniform_latent(&bounds, tc.uniform_samples, s, p.seed(&format!("threshold/scale/{i}")));
                let mut d = g.mahalanobis_sq_rows(&dm.decode_rows(&z))?;
                let ex = exceedance(&d, t.phi_max);
                d.sort_by(f64::total_cmp);
                sweep.push(vec![s.to_string(), quantile_r7(&d, 0.5).to_string(), ex.to_string()]);
            }
            io.output(
                SCALE_SWEEP_CSV,
                write_csv(&p.dir, SCALE_SWEEP_CSV, &["scale", "median_mahalanobis_sq", "exceedance"], &sweep)?,
            );

            let out = ThresholdOutcome {
                exceedance_reconstructed: exceedance(&recon, t.phi_max),
                exceedance_uniform: exceedance(&uniform, t.phi_max),
                chi2_fresh: chi_square_diagnostic(&fresh_d, k),
                chi2_training: chi_square_diagnostic(&recon, k),
                threshold: t,
                density_model: dm.kind(),
                latent_dim: k,
            };
            io.output(THRESHOLD, write_json(&p.dir, THRESHOLD, &out)?);
            Ok(out)
        })
    }

    pub fn optimize(&mut self) -> Result<Vec<RunOutcome>> {
        self.stage("optimize", |p, io| {
            let problem = p.problem()?;
            let runs = p.config.optimize.runs.clone();
            let mut outs = Vec::with_capacity(runs.len());
            for spec in &runs {
                outs.push(p.optimize_one(&problem, spec, io)?);
            }
            Ok(outs)
        })
    }

    fn optimize_one(&self, problem: &HullProblem, spec: &RunSpec, io: &mut StageIo) -> Result<RunOutcome> {
        let c = &self.config;
        let budget = c.optimize.budget;
        let label = spec.label(c.model.kind);
        let seed = self.seed(&format!("optimize/{label}"));
        let baseline = problem.baseline_value();
        let minimize = |f: &mut dyn Objective, b: &BoxBounds| -> Result<OptimResult> {
            match spec.method {
                Method::Direct => direct_minimize(f, b, budget),
                Method::Bo => {
                    let opts = crate::optim::BoOptions {
                        seed,
                        ..c.optimize.bo.clone()
                    };
                    bo_minimize(f, b, budget, &opts)
                }
            }
        };

        let (result, model, phi_max, best_geometry) = match spec.space {
            Space::Full => {
                let bounds = BoxBounds::from_pairs(&problem.bounds())?;
                let r = minimize(&mut FullSpace(problem), &bounds)?;
                let g = problem.deform(&r.best_x)?;
                (r, None, None, g)
            }
            Space::Latent => {
                let x = read_matrix(&self.input(io, "sample", DATASET)?)?;
                let model = read_model(&self.input(io, "fit", MODEL)?)?;
                let threshold = if spec.anomaly {
                    let path = self.input(io, "threshold", THRESHOLD)?;
                    Some(read_json::<ThresholdOutcome>(&path)?.threshold)
                } else {
                    None
                };
                let bounds = BoxBounds::from_pairs(&latent_bounds(&model, &x)?)?;
                let mut lp = LatentProblem::new(problem, &model, threshold.as_ref())?;
                let r = minimize(&mut lp, &bounds)?;
                let g = Geometry::from_vector(&model.decode(&DVector::from_column_slice(&r.best_x)))?;
                (r, Some(model.kind().name().to_string()), threshold.map(|t| t.phi_max), g)
            }
        };

        let mut log: EvaluationLog = result.log;
        log.header = LogHeader {
            label: label.clone(),
            method: spec.method.name().into(),
            space: if spec.anomaly { "anomaly".into() } else { spec.space.name().into() },
            model,
            dim: result.best_x.len(),
            budget,
            baseline_value: Some(baseline),
            ..Default::default()
        };
        let rel = run_log_path(&label);
        io.output(&rel, write_bytes(&self.dir, &rel, log.to_jsonl()?.as_bytes())?);

        let rows: Vec<Vec<String>> = (0..best_geometry.num_points())
            .map(|k| best_geometry.point(k).iter().map(|v| v.to_string()).collect())
            .collect();
        let rel = format!("runs/{label}.best.csv");
        io.output(&rel, write_csv(&self.dir, &rel, &["x", "y", "z"], &rows)?);

        let evaluated: Vec<_> = log.records.iter().filter(|r| r.evaluated).collect();
        let out = RunOutcome {
            label: label.clone(),
            method: log.header.method.clone(),
            space: log.header.space.clone(),
            model: log.header.model.clone(),
            dim: log.header.dim,
            budget,
            baseline,
            best_f: result.best_f,
            reduction_pct: reduction_pct(baseline, result.best_f),
            best_x: result.best_x,
            evaluated: evaluated.len(),
            penalized: log.len() - evaluated.len(),
            phi_max,
            max_evaluated_mahalanobis_sq: evaluated
                .iter()
                .filter_map(|r| r.mahalanobis_sq)
                .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d)))),
        };
        let rel = format!("runs/{label}.summary.json");
        io.output(&rel, write_json(&self.dir, &rel, &out)?);
        Ok(out)
    }

    pub fn report(&mut self) -> Result<ReportOutcome> {
        self.stage("report", |p, io| report::run(p, io))
    }

    /// All stages in order.
    pub fn run_all(&mut self) -> Result<ReportOutcome> {
        self.sample()?;
        self.fit()?;
        self.threshold()?;
        self.optimize()?;
        self.report()
    }

    /// Hashes of every artifact written by completed stages.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        self.manifest
            .stages
            .values()
            .flat_map(|r| r.outputs.clone())
            .collect()
    }
}

#[derive(Debug, Default)]
pub(crate) struct StageIo {
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl StageIo {
    fn output(&mut self, rel: &str, hash: String) {
        self.outputs.insert(rel.to_string(), hash);
    }
}

/// Hash every file under `dir` except the manifest and lock (which carry timing).
pub fn directory_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for e in entries {
            let path = e.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("walk stays under root").to_string_lossy().replace('\\', "/");
            if rel == manifest::MANIFEST_FILE || rel == manifest::LOCK_FILE {
                continue;
            }
            out.insert(rel, file_hash(&path)?);
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
