use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use npmlda_core::classifier::{classify_multiclass, naive_lda_train, train, TrainedModel};
use npmlda_core::cov::CovEstimatorConfig;
use npmlda_core::dataset::{load_dataset, save_dataset, DatasetFormat};
use npmlda_core::eeg::load_subject_dir;
use npmlda_core::harness::{
    emit_report, load_report, loocv, report_csv, run_experiment, EvalReport, Method, ReportFormat,
};
use npmlda_core::matrix::LabeledMatrixSample;
use npmlda_core::npmle::NpmleConfig;
use npmlda_core::simgen::{make_dataset, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "npmlda",
    about = "Matrix-valued discriminant analysis harness",
    version
)]
struct Cli {
    /// Worker threads for replications and folds (falls back to NPMLDA_JOBS,
    /// then to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Npmlda,
    Naive,
    Oracle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Npmlda => Method::Npmlda,
            MethodArg::Naive => Method::Naive,
            MethodArg::Oracle => Method::Oracle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Directory,
    Flat,
}

/// Experiment configuration file (TOML or JSON): a scenario plus estimator
/// settings; command-line flags override individual fields.
#[derive(Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    scenario: Option<ScenarioConfig>,
    methods: Option<Vec<Method>>,
    cov: Option<CovEstimatorConfig>,
    npmle: Option<NpmleConfig>,
}

#[derive(Args, Default)]
struct ConfigOverrides {
    /// TOML or JSON config file driving this subcommand
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: covariance estimator (gemini | flipflop-ridge | diagonal)
    #[arg(long)]
    cov_method: Option<String>,
    /// Override: NPMLE grid size
    #[arg(long)]
    grid_size: Option<usize>,
    /// Override: master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override: replication count
    #[arg(long)]
    replications: Option<usize>,
}

impl ConfigOverrides {
    fn load(&self) -> anyhow::Result<FileConfig> {
        let mut cfg = match &self.config {
            None => FileConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                if path.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).context("parsing JSON config")?
                } else {
                    toml::from_str(&text).context("parsing TOML config")?
                }
            }
        };
        if let Some(m) = &self.cov_method {
            let cov = cfg.cov.get_or_insert_with(CovEstimatorConfig::default);
            cov.method = serde_json::from_value(serde_json::Value::String(m.clone()))
                .with_context(|| format!("unknown covariance method {m:?}"))?;
        }
        if let Some(g) = self.grid_size {
            cfg.npmle.get_or_insert_with(NpmleConfig::default).grid_size = g;
        }
        if let Some(s) = self.seed {
            if let Some(sc) = cfg.scenario.as_mut() {
                sc.master_seed = s;
            }
        }
        if let Some(r) = self.replications {
            if let Some(sc) = cfg.scenario.as_mut() {
                sc.replications = r;
            }
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulation datasets to disk
    Simulate {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Output directory (one subdirectory per replication)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "directory")]
        format: FormatArg,
    },
    /// Train a model on a dataset and write the model file
    Train {
        /// Dataset path (directory form or flat CSV)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "npmlda")]
        method: MethodArg,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Classify a dataset with a trained model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV (defaults to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replication sweep over a simulation scenario
    Eval {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// JSON report output path
        #[arg(long)]
        out: PathBuf,
        /// Also emit the CSV report here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Leave-one-out cross-validation on a dataset
    Loocv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "npmlda")]
        method: MethodArg,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Preprocess raw EEG trial files into a dataset
    EegPrep {
        /// Directory of subject subdirectories, each holding trial files.
        /// Labels come from the 4th character of the subject name
        /// ('a' → class 1, 'c' → class 2).
        #[arg(long)]
        input: PathBuf,
        /// Output dataset path
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "directory")]
        format: FormatArg,
    },
    /// Convert a JSON report to CSV (plus estimated-B grids)
    Report {
        /// JSON report produced by `eval`
        #[arg(long = "in", value_name = "IN")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require_scenario(cfg: &FileConfig) -> anyhow::Result<ScenarioConfig> {
    cfg.scenario
        .clone()
        .context("config file must define a [scenario] section")
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let jobs = cli.jobs.or_else(|| {
        std::env::var("NPMLDA_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }

    match cli.command {
        Command::Simulate {
            overrides,
            out,
            format,
        } => {
            let cfg = overrides.load()?;
            let scenario = require_scenario(&cfg)?;
            std::fs::create_dir_all(&out)?;
            for rep in 0..scenario.replications as u64 {
                let ds = make_dataset(&scenario, rep)?;
                let rep_dir = out.join(format!("rep_{rep:03}"));
                std::fs::create_dir_all(&rep_dir)?;
                let write = |samples: &[LabeledMatrixSample], name: &str| -> anyhow::Result<()> {
                    let path = match format {
                        FormatArg::Directory => rep_dir.join(name),
                        FormatArg::Flat => rep_dir.join(format!("{name}.csv")),
                    };
                    let f = match format {
                        FormatArg::Directory => DatasetFormat::Directory,
                        FormatArg::Flat => DatasetFormat::Flat,
                    };
                    save_dataset(samples, &path, f, &[])?;
                    Ok(())
                };
                write(&ds.train, "train")?;
                write(&ds.test, "test")?;
            }
            eprintln!(
                "wrote {} replications to {}",
                scenario.replications,
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            method,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let samples = load_dataset(&data)?;
            let cov_cfg = cfg.cov.unwrap_or_default();
            let npmle_cfg = cfg.npmle.unwrap_or_default();
            let model = match method {
                MethodArg::Npmlda => train(&samples, &cov_cfg, &npmle_cfg)?,
                MethodArg::Naive => naive_lda_train(&samples, &cov_cfg)?,
                MethodArg::Oracle => bail!("the oracle has no trainable model; use `eval`"),
            };
            model.save(&out)?;
            eprintln!(
                "trained on {} samples; model written to {}",
                samples.len(),
                out.display()
            );
        }
        Command::Predict { model, data, out } => {
            let model = TrainedModel::load(&model)?;
            let samples = load_dataset(&data)?;
            let mut csv = String::from("index,true_label,predicted,delta\n");
            for (i, s) in samples.iter().enumerate() {
                let rep = classify_multiclass(&model, &s.x)?;
                csv.push_str(&format!(
                    "{i},{},{},{}\n",
                    s.label, rep.predicted, rep.delta
                ));
            }
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Eval {
            overrides,
            out,
            csv,
        } => {
            let cfg = overrides.load()?;
            let scenario = require_scenario(&cfg)?;
            let methods = cfg
                .methods
                .unwrap_or_else(|| vec![Method::Npmlda, Method::Naive, Method::Oracle]);
            let report = run_experiment(
                &scenario,
                &methods,
                &cfg.cov.unwrap_or_default(),
                &cfg.npmle.unwrap_or_default(),
            )?;
            emit_report(std::slice::from_ref(&report), ReportFormat::Json, &out)?;
            if let Some(csv_path) = csv {
                emit_report(std::slice::from_ref(&report), ReportFormat::Csv, &csv_path)?;
            }
            print!("{}", report_csv(std::slice::from_ref(&report)));
        }
        Command::Loocv {
            data,
            method,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let samples = load_dataset(&data)?;
            let rate = loocv(
                &samples,
                &cfg.cov.unwrap_or_default(),
                &cfg.npmle.unwrap_or_default(),
                Method::from(method),
            )?;
            println!("loocv_rate,{rate}");
        }
        Command::EegPrep { input, out, format } => {
            let mut subject_dirs: Vec<PathBuf> = std::fs::read_dir(&input)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            subject_dirs.sort();
            if subject_dirs.is_empty() {
                bail!("no subject directories under {}", input.display());
            }
            let mut samples = Vec::new();
            let mut skipped_trials = 0;
            for dir in &subject_dirs {
                let name = dir.file_name().unwrap().to_string_lossy();
                let label = match name.chars().nth(3) {
                    Some('a') => 1,
                    Some('c') => 2,
                    other => bail!(
                        "cannot infer label for subject {name:?} (4th char {other:?}; expected 'a' or 'c')"
                    ),
                };
                let loaded = load_subject_dir(dir)?;
                skipped_trials += loaded.trials_skipped;
                samples.push(LabeledMatrixSample::new(loaded.matrix, label)?);
            }
            let f = match format {
                FormatArg::Directory => DatasetFormat::Directory,
                FormatArg::Flat => DatasetFormat::Flat,
            };
            save_dataset(&samples, &out, f, &["alcoholic".into(), "control".into()])?;
            eprintln!(
                "preprocessed {} subjects ({skipped_trials} trials skipped) -> {}",
                samples.len(),
                out.display()
            );
        }
        Command::Report { input, out } => {
            let reports: Vec<EvalReport> = load_report(&input)?;
            emit_report(&reports, ReportFormat::Csv, &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // machine-readable single error line
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
