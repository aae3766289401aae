//! Experiment orchestration: seeded replication sweeps over simulation
//! scenarios, leave-one-out cross-validation, and CSV/JSON report emission.
//!
//! Replications run concurrently but results are aggregated in replication
//! order, so every output is a pure function of the configuration.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    classify_multiclass, estimated_b, naive_lda_train, oracle_model, train, OracleParams,
    TrainedModel,
};
use crate::cov::CovEstimatorConfig;
use crate::error::{Error, Result};
use crate::matrix::{LabeledMatrixSample, MatrixPayload, RealMatrix};
use crate::npmle::NpmleConfig;
use crate::rng::derive_seed;
use crate::simgen::{make_dataset, ScenarioConfig, Sparsity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Npmlda,
    Naive,
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Npmlda => "npmlda",
            Method::Naive => "naive",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// Misclassification rate per replication, in replication order.
    pub rates: Vec<f64>,
    pub mean_rate: f64,
    /// Standard error of the mean rate.
    pub se: f64,
    /// Averaged estimated coefficient matrix over replications.
    pub avg_estimated_b: Option<MatrixPayload>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub size: String,
    pub theta: f64,
    pub replications: usize,
    pub methods: Vec<MethodReport>,
}

pub fn scenario_id(cfg: &ScenarioConfig) -> String {
    let sparsity = match cfg.pattern.sparsity {
        Sparsity::Sparse => "sparse",
        Sparsity::Dense => "dense",
    };
    format!(
        "model{}-{}-{:?}-theta{}",
        cfg.model, sparsity, cfg.pattern.size, cfg.pattern.theta
    )
    .to_lowercase()
}

fn misclassification_rate(model: &TrainedModel, test: &[LabeledMatrixSample]) -> Result<f64> {
    let mut errors = 0usize;
    for s in test {
        if classify_multiclass(model, &s.x)?.predicted != s.label {
            errors += 1;
        }
    }
    Ok(errors as f64 / test.len() as f64)
}

struct RepOutcome {
    rates: Vec<f64>,
    bs: Vec<Option<RealMatrix>>,
}

/// Runs one scenario: per replication generate → train each method →
/// evaluate on the held-out test split. Any replication failure aborts the
/// run with the failing replication and seed attached.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    methods: &[Method],
    cov_cfg: &CovEstimatorConfig,
    npmle_cfg: &NpmleConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let outcomes: Vec<RepOutcome> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| {
            run_replication(cfg, methods, cov_cfg, npmle_cfg, rep).map_err(|e| Error::Replication {
                replication: rep,
                seed: derive_seed(cfg.master_seed, rep, 0),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let rates: Vec<f64> = outcomes.iter().map(|o| o.rates[mi]).collect();
        let n = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let var = if rates.len() > 1 {
            rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let avg_b = outcomes[0].bs[mi].as_ref().map(|first| {
            let mut acc = first.clone();
            for o in &outcomes[1..] {
                acc += o.bs[mi].as_ref().unwrap();
            }
            MatrixPayload::from(&(acc / n))
        });
        reports.push(MethodReport {
            method,
            rates,
            mean_rate: mean,
            se: (var / n).sqrt(),
            avg_estimated_b: avg_b,
        });
    }
    Ok(EvalReport {
        scenario: scenario_id(cfg),
        size: format!("{:?}", cfg.pattern.size).to_lowercase(),
        theta: cfg.pattern.theta,
        replications: cfg.replications,
        methods: reports,
    })
}

fn run_replication(
    cfg: &ScenarioConfig,
    methods: &[Method],
    cov_cfg: &CovEstimatorConfig,
    npmle_cfg: &NpmleConfig,
    rep: u64,
) -> Result<RepOutcome> {
    let ds = make_dataset(cfg, rep)?;
    let mut rates = Vec::with_capacity(methods.len());
    let mut bs = Vec::with_capacity(methods.len());
    for &method in methods {
        let model = match method {
            Method::Npmlda => train(&ds.train, cov_cfg, npmle_cfg)?,
            Method::Naive => naive_lda_train(&ds.train, cov_cfg)?,
            Method::Oracle => oracle_model(&OracleParams {
                means: vec![ds.truth.m1.clone(), ds.truth.m2.clone()],
                u: ds.truth.u.clone(),
                v: ds.truth.v.clone(),
                priors: vec![0.5, 0.5],
            })?,
        };
        rates.push(misclassification_rate(&model, &ds.test)?);
        bs.push(if model.class_count == 2 {
            Some(estimated_b(&model)?)
        } else {
            None
        });
    }
    Ok(RepOutcome { rates, bs })
}

/// Leave-one-out cross-validation with the given training method.
pub fn loocv(
    samples: &[LabeledMatrixSample],
    cov_cfg: &CovEstimatorConfig,
    npmle_cfg: &NpmleConfig,
    method: Method,
) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::Config("LOOCV needs at least 3 samples".into()));
    }
    if method == Method::Oracle {
        return Err(Error::Config(
            "LOOCV needs an estimated method, not the oracle".into(),
        ));
    }
    let errors: Vec<bool> = (0..samples.len())
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let fold: Vec<LabeledMatrixSample> = samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.clone())
                .collect();
            let model = match method {
                Method::Npmlda => train(&fold, cov_cfg, npmle_cfg)?,
                Method::Naive => naive_lda_train(&fold, cov_cfg)?,
                Method::Oracle => unreachable!(),
            };
            Ok(classify_multiclass(&model, &samples[i].x)?.predicted != samples[i].label)
        })
        .collect::<Result<_>>()?;
    Ok(errors.iter().filter(|&&e| e).count() as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const REPORT_CSV_HEADER: &str = "scenario,method,size,theta,mean_rate,se,reps";

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for m in &r.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scenario,
                m.method.name(),
                r.size,
                r.theta,
                m.mean_rate,
                m.se,
                r.replications
            ));
        }
    }
    out
}

/// Writes a report in the requested format. For CSV, averaged estimated-B
/// matrices (when present) are emitted next to the main file as
/// `<stem>_<scenario>_<method>_B.csv` grids for external heatmap tools.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(reports)
                .map_err(|e| Error::Schema(format!("report serialization: {e}")))?;
            fs::write(path, json)?;
        }
        ReportFormat::Csv => {
            fs::write(path, report_csv(reports))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".into());
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            for r in reports {
                for m in &r.methods {
                    if let Some(b) = &m.avg_estimated_b {
                        let mut grid = String::new();
                        for i in 0..b.rows {
                            for j in 0..b.cols {
                                if j > 0 {
                                    grid.push(',');
                                }
                                grid.push_str(&format!("{}", b.data[i * b.cols + j]));
                            }
                            grid.push('\n');
                        }
                        let name = format!("{stem}_{}_{}_B.csv", r.scenario, m.method.name());
                        fs::write(dir.join(name), grid)?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn load_report(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("report file: {e}")))
}
