//! Training and prediction: covariance estimation, whitening, per-class
//! NPMLE shrinkage of the scaled means, and the discriminant rules (binary
//! sign rule, multiclass log-posterior argmax, and the oracle benchmark).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cov::{
    center_by_class, estimate_covariance, whiten, CovEstimatorConfig, KroneckerCovariance,
};
use crate::error::{Error, Result};
use crate::matrix::{unvec, LabeledMatrixSample, RealMatrix, SpdMatrix};
use crate::npmle::{
    fit_npmle, posterior_means, MixingDistribution, NpmleConfig, ScaledMeanObservations,
};

pub const MODEL_VERSION: u32 = 1;

/// Estimator configuration echoed into the model file, making every
/// prediction reproducible from the file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfigs {
    pub cov: CovEstimatorConfig,
    pub npmle: Option<NpmleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "K")]
    pub class_count: usize,
    pub priors: Vec<f64>,
    #[serde(flatten)]
    pub cov: KroneckerCovariance,
    /// Shrunken scaled mean vector per class, length pq each.
    pub scaled_means: Vec<Vec<f64>>,
    /// Fitted mixing distribution per class; absent for the naive baseline.
    pub mixing: Option<Vec<MixingDistribution>>,
    pub configs: ModelConfigs,
}

#[derive(Debug, Clone)]
pub struct DiscriminantReport {
    pub delta: f64,
    pub predicted: usize,
    /// Log posterior per class, normalized by log-sum-exp.
    pub per_class_log_posterior: Vec<f64>,
}

impl TrainedModel {
    pub fn check(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InsufficientClasses {
                found: self.class_count,
                min: 2,
            });
        }
        if self.priors.len() != self.class_count || self.scaled_means.len() != self.class_count {
            return Err(Error::Schema(
                "per-class field lengths do not match K".into(),
            ));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Schema(format!("priors sum to {total}")));
        }
        if self.priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::Schema("all priors must be positive".into()));
        }
        let pq = self.p * self.q;
        if self.scaled_means.iter().any(|m| m.len() != pq) {
            return Err(Error::Schema("scaled mean length != p*q".into()));
        }
        if self.cov.p() != self.p || self.cov.q() != self.q {
            return Err(Error::Schema(
                "covariance dimensions do not match (p, q)".into(),
            ));
        }
        self.cov.check()?;
        if let Some(mixing) = &self.mixing {
            if mixing.len() != self.class_count {
                return Err(Error::Schema("mixing distribution count != K".into()));
            }
            for g in mixing {
                g.check()?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)
            .map_err(|e| Error::Schema(format!("model serialization failed: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let model: TrainedModel = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Parse(format!("model file: {e}")))?;
        if model.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model version {}",
                model.version
            )));
        }
        model.check()?;
        Ok(model)
    }

    fn whiten_input(&self, x: &RealMatrix) -> Result<DVector<f64>> {
        if x.nrows() != self.p || x.ncols() != self.q {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} against a {}x{} model",
                x.nrows(),
                x.ncols(),
                self.p,
                self.q
            )));
        }
        whiten(x, &self.cov)
    }
}

/// Validates that labels are exactly 1..=K and returns K.
fn class_count(samples: &[LabeledMatrixSample]) -> Result<usize> {
    let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let k = labels.len();
    if k < 2 {
        return Err(Error::InsufficientClasses { found: k, min: 2 });
    }
    if labels != (1..=k).collect::<Vec<_>>() {
        return Err(Error::Schema(format!(
            "class labels must be 1..={k}, got {labels:?}"
        )));
    }
    Ok(k)
}

fn train_impl(
    samples: &[LabeledMatrixSample],
    cov_cfg: &CovEstimatorConfig,
    npmle_cfg: Option<&NpmleConfig>,
) -> Result<TrainedModel> {
    let k = class_count(samples)?;
    let (summaries, residuals) = center_by_class(samples)?;
    let cov = estimate_covariance(&residuals, cov_cfg)?;
    let (p, q) = (cov.p(), cov.q());
    let n_total: usize = summaries.iter().map(|c| c.count).sum();

    let mut priors = Vec::with_capacity(k);
    let mut scaled_means = Vec::with_capacity(k);
    let mut mixing = Vec::with_capacity(k);
    for c in &summaries {
        priors.push(c.count as f64 / n_total as f64);
        // whitening is linear, so the whitened class mean equals the mean
        // of the whitened samples
        let zbar = whiten(&c.mean, &cov)?.as_slice().to_vec();
        match npmle_cfg {
            Some(cfg) => {
                let obs = ScaledMeanObservations::new(zbar, c.count, c.label)?;
                let fit = fit_npmle(&obs, cfg)?;
                scaled_means.push(posterior_means(&obs, &fit.mixing)?);
                mixing.push(fit.mixing);
            }
            None => scaled_means.push(zbar),
        }
    }

    let model = TrainedModel {
        version: MODEL_VERSION,
        p,
        q,
        class_count: k,
        priors,
        cov,
        scaled_means,
        mixing: npmle_cfg.map(|_| mixing),
        configs: ModelConfigs {
            cov: cov_cfg.clone(),
            npmle: npmle_cfg.cloned(),
        },
    };
    model.check()?;
    Ok(model)
}

/// Full training pipeline: covariance estimation, whitening, per-class
/// NPMLE fit, and posterior-mean shrinkage of the scaled means.
pub fn train(
    samples: &[LabeledMatrixSample],
    cov_cfg: &CovEstimatorConfig,
    npmle_cfg: &NpmleConfig,
) -> Result<TrainedModel> {
    train_impl(samples, cov_cfg, Some(npmle_cfg))
}

/// Ablation baseline: identical pipeline but with raw (unshrunken) whitened
/// class means.
pub fn naive_lda_train(
    samples: &[LabeledMatrixSample],
    cov_cfg: &CovEstimatorConfig,
) -> Result<TrainedModel> {
    train_impl(samples, cov_cfg, None)
}

/// Binary discriminant: δ̂ = (w − (𝓜₁+𝓜₂)/2)ᵀ(𝓜₁−𝓜₂) − log(π₂/π₁),
/// class 1 iff δ̂ ≥ 0.
pub fn discriminant(model: &TrainedModel, x: &RealMatrix) -> Result<DiscriminantReport> {
    if model.class_count != 2 {
        return Err(Error::Config(format!(
            "binary discriminant needs K = 2, model has K = {}",
            model.class_count
        )));
    }
    let w = model.whiten_input(x)?;
    let m1 = DVector::from_column_slice(&model.scaled_means[0]);
    let m2 = DVector::from_column_slice(&model.scaled_means[1]);
    let diff = &m1 - &m2;
    let centered = &w - (&m1 + &m2) * 0.5;
    let delta = centered.dot(&diff) - (model.priors[1] / model.priors[0]).ln();
    let predicted = if delta >= 0.0 { 1 } else { 2 };
    let log_post = log_posteriors(model, &w);
    Ok(DiscriminantReport {
        delta,
        predicted,
        per_class_log_posterior: log_post,
    })
}

fn log_posteriors(model: &TrainedModel, w: &DVector<f64>) -> Vec<f64> {
    let mut lp: Vec<f64> = model
        .scaled_means
        .iter()
        .zip(&model.priors)
        .map(|(m, &pi)| {
            let mk = DVector::from_column_slice(m);
            pi.ln() - 0.5 * (w - mk).norm_squared()
        })
        .collect();
    let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + lp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in lp.iter_mut() {
        *v -= lse;
    }
    lp
}

/// Multiclass rule: argmax_k log π̂_k − ½‖w − 𝓜̂_k‖², ties to the smallest
/// class index. For K = 2 this agrees with the binary sign rule.
pub fn classify_multiclass(model: &TrainedModel, x: &RealMatrix) -> Result<DiscriminantReport> {
    let w = model.whiten_input(x)?;
    let lp = log_posteriors(model, &w);
    let mut predicted = 1;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[predicted - 1] {
            predicted = i + 1;
        }
    }
    let delta = if model.class_count == 2 {
        lp[0] - lp[1]
    } else {
        lp[predicted - 1]
    };
    Ok(DiscriminantReport {
        delta,
        predicted,
        per_class_log_posterior: lp,
    })
}

/// True generative parameters for the oracle benchmark.
#[derive(Debug, Clone)]
pub struct OracleParams {
    pub means: Vec<RealMatrix>,
    pub u: SpdMatrix,
    pub v: SpdMatrix,
    pub priors: Vec<f64>,
}

/// Builds a model directly from the true parameters (no estimation).
pub fn oracle_model(params: &OracleParams) -> Result<TrainedModel> {
    if params.means.len() < 2 || params.means.len() != params.priors.len() {
        return Err(Error::Config(
            "oracle needs K >= 2 means with matching priors".into(),
        ));
    }
    let cov = KroneckerCovariance::from_factors(params.u.clone(), params.v.clone())?;
    let (p, q) = (cov.p(), cov.q());
    let scaled_means = params
        .means
        .iter()
        .map(|m| Ok(whiten(m, &cov)?.as_slice().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let model = TrainedModel {
        version: MODEL_VERSION,
        p,
        q,
        class_count: params.means.len(),
        priors: params.priors.clone(),
        cov,
        scaled_means,
        mixing: None,
        configs: ModelConfigs {
            cov: CovEstimatorConfig {
                method: crate::cov::CovMethod::Known,
                ..Default::default()
            },
            npmle: None,
        },
    };
    model.check()?;
    Ok(model)
}

/// Bayes rule with the exact parameters; returns the predicted class.
pub fn oracle_classify(params: &OracleParams, x: &RealMatrix) -> Result<usize> {
    let model = oracle_model(params)?;
    Ok(classify_multiclass(&model, x)?.predicted)
}

/// Reconstructs the discriminant coefficient matrix
/// U^{-1/2}·unvec(𝓜̂₁ − 𝓜̂₂)·V^{-1/2} (binary models only).
pub fn estimated_b(model: &TrainedModel) -> Result<RealMatrix> {
    if model.class_count != 2 {
        return Err(Error::Config("estimated_b needs K = 2".into()));
    }
    let d = DVector::from_iterator(
        model.p * model.q,
        model.scaled_means[0]
            .iter()
            .zip(&model.scaled_means[1])
            .map(|(a, b)| a - b),
    );
    let m = unvec(&d, model.p, model.q)?;
    Ok(model.cov.u_inv_sqrt.as_matrix() * m * model.cov.v_inv_sqrt.as_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::CovMethod;
    use crate::matrix::{sample_matrix_normal, vec_mat};
    use crate::rng::derive_rng;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cross_matrix(p: usize, q: usize, theta: f64) -> RealMatrix {
        let mut m = DMatrix::zeros(p, q);
        for j in 0..q {
            m[(p / 2, j)] = theta;
        }
        for i in 0..p {
            m[(i, q / 2)] = theta;
        }
        m
    }

    fn two_class_data(n_k: usize, seed: u64) -> (Vec<LabeledMatrixSample>, RealMatrix) {
        let (p, q) = (8, 8);
        let u = SpdMatrix::new(DMatrix::identity(p, p) * 0.2).unwrap();
        let v = SpdMatrix::new(DMatrix::identity(q, q) * 0.2).unwrap();
        let m2 = cross_matrix(p, q, 1.0);
        let mut samples = Vec::new();
        for x in sample_matrix_normal(&DMatrix::zeros(p, q), &u, &v, seed, n_k).unwrap() {
            samples.push(LabeledMatrixSample::new(x, 1).unwrap());
        }
        for x in sample_matrix_normal(&m2, &u, &v, seed + 1, n_k).unwrap() {
            samples.push(LabeledMatrixSample::new(x, 2).unwrap());
        }
        (samples, m2)
    }

    fn fast_npmle() -> NpmleConfig {
        NpmleConfig {
            grid_size: 100,
            ..Default::default()
        }
    }

    fn random_model(seed: u64, k: usize) -> TrainedModel {
        let mut rng = derive_rng(seed, 0, 0);
        let pq = 6;
        let scaled_means = (0..k)
            .map(|_| {
                (0..pq)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        TrainedModel {
            version: MODEL_VERSION,
            p: 2,
            q: 3,
            class_count: k,
            priors: raw.iter().map(|x| x / total).collect(),
            cov: KroneckerCovariance::identity(2, 3),
            scaled_means,
            mixing: None,
            configs: ModelConfigs {
                cov: CovEstimatorConfig::default(),
                npmle: None,
            },
        }
    }

    #[test]
    fn train_recovers_null_class_mean() {
        let (samples, _) = two_class_data(200, 101);
        let model = train(&samples, &CovEstimatorConfig::default(), &fast_npmle()).unwrap();
        for &m in &model.scaled_means[0] {
            assert!(m.abs() < 0.15, "class-1 scaled mean coordinate {m}");
        }
    }

    #[test]
    fn train_is_permutation_invariant() {
        let (mut samples, _) = two_class_data(30, 103);
        let a = train(&samples, &CovEstimatorConfig::default(), &fast_npmle()).unwrap();
        samples.reverse();
        let b = train(&samples, &CovEstimatorConfig::default(), &fast_npmle()).unwrap();
        for (ma, mb) in a.scaled_means.iter().zip(&b.scaled_means) {
            for (x, y) in ma.iter().zip(mb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert_eq!(a.priors, b.priors);
    }

    #[test]
    fn train_rejects_single_class() {
        let x = DMatrix::zeros(2, 2);
        let samples = vec![
            LabeledMatrixSample::new(x.clone(), 1).unwrap(),
            LabeledMatrixSample::new(x, 1).unwrap(),
        ];
        assert!(matches!(
            train(&samples, &CovEstimatorConfig::default(), &fast_npmle()),
            Err(Error::InsufficientClasses { .. })
        ));
    }

    #[test]
    fn discriminant_tie_goes_to_class_one() {
        let mut model = random_model(1, 2);
        model.scaled_means[1] = model.scaled_means[0].clone();
        model.priors = vec![0.5, 0.5];
        let x = DMatrix::zeros(2, 3);
        let rep = discriminant(&model, &x).unwrap();
        assert_eq!(rep.delta, 0.0);
        assert_eq!(rep.predicted, 1);
    }

    #[test]
    fn discriminant_at_class_one_mean() {
        let mut model = random_model(2, 2);
        model.priors = vec![0.5, 0.5];
        let m1 = DVector::from_column_slice(&model.scaled_means[0]);
        let m2 = DVector::from_column_slice(&model.scaled_means[1]);
        let x = unvec(&m1, 2, 3).unwrap(); // identity covariance: whiten = vec
        let rep = discriminant(&model, &x).unwrap();
        let expect = 0.5 * (&m1 - &m2).norm_squared();
        assert!((rep.delta - expect).abs() < 1e-12);
        assert_eq!(rep.predicted, 1);
    }

    #[test]
    fn discriminant_matches_independent_evaluation() {
        let mut rng = derive_rng(31, 0, 0);
        for seed in 0..20u64 {
            let model = random_model(seed + 100, 2);
            let x = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rep = discriminant(&model, &x).unwrap();
            // independently coded evaluation
            let w = vec_mat(&x);
            let mut dot = 0.0;
            for j in 0..6 {
                let mid = 0.5 * (model.scaled_means[0][j] + model.scaled_means[1][j]);
                dot += (w[j] - mid) * (model.scaled_means[0][j] - model.scaled_means[1][j]);
            }
            dot -= (model.priors[1] / model.priors[0]).ln();
            assert!((rep.delta - dot).abs() < 1e-10);
        }
    }

    #[test]
    fn multiclass_agrees_with_binary() {
        let mut rng = derive_rng(37, 0, 0);
        let model = random_model(7, 2);
        for _ in 0..1000 {
            let x = DMatrix::from_fn(2, 3, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let bin = discriminant(&model, &x).unwrap();
            let multi = classify_multiclass(&model, &x).unwrap();
            assert_eq!(bin.predicted, multi.predicted);
        }
    }

    #[test]
    fn multiclass_tie_and_prior_dominance() {
        let mut model = random_model(9, 3);
        let m = model.scaled_means[0].clone();
        model.scaled_means = vec![m.clone(), m.clone(), m];
        model.priors = vec![1.0 / 3.0; 3];
        let x = DMatrix::zeros(2, 3);
        assert_eq!(classify_multiclass(&model, &x).unwrap().predicted, 1);
        model.priors = vec![0.99, 0.005, 0.005];
        let mut rng = derive_rng(41, 0, 0);
        for _ in 0..50 {
            let x = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            assert_eq!(classify_multiclass(&model, &x).unwrap().predicted, 1);
        }
    }

    #[test]
    fn multiclass_report_is_consistent() {
        let model = random_model(11, 4);
        let x = DMatrix::from_element(2, 3, 0.3);
        let rep = classify_multiclass(&model, &x).unwrap();
        let argmax = rep
            .per_class_log_posterior
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
            + 1;
        assert_eq!(rep.predicted, argmax);
        let total: f64 = rep.per_class_log_posterior.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_basic_geometry() {
        let p = SpdMatrix::identity(2);
        let m1 = DMatrix::from_element(2, 2, 2.0);
        let params = OracleParams {
            means: vec![m1.clone(), -m1.clone()],
            u: p.clone(),
            v: p,
            priors: vec![0.5, 0.5],
        };
        assert_eq!(oracle_classify(&params, &m1).unwrap(), 1);
        // symmetric setup, x = 0: tie goes to class 1
        assert_eq!(oracle_classify(&params, &DMatrix::zeros(2, 2)).unwrap(), 1);
    }

    #[test]
    fn oracle_matches_density_ratio() {
        let u = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4])).unwrap();
        let v = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.05, -0.05, 0.6])).unwrap();
        let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 0.3]);
        let m2 = DMatrix::from_row_slice(2, 2, &[-0.2, 0.8, 0.1, -0.4]);
        let params = OracleParams {
            means: vec![m1.clone(), m2.clone()],
            u: u.clone(),
            v: v.clone(),
            priors: vec![0.3, 0.7],
        };
        // assemble Sigma = V (x) U and compare exact Gaussian densities
        let mut sigma = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        sigma[(i * 2 + a, j * 2 + b)] =
                            v.as_matrix()[(i, j)] * u.as_matrix()[(a, b)];
                    }
                }
            }
        }
        let prec = sigma.try_inverse().unwrap();
        let mut rng = derive_rng(43, 0, 0);
        for _ in 0..200 {
            let x = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let quad = |m: &RealMatrix| {
                let d = vec_mat(&x) - vec_mat(m);
                (prec.clone() * &d).dot(&d)
            };
            let lr = 0.3_f64.ln() - 0.5 * quad(&m1) - (0.7_f64.ln() - 0.5 * quad(&m2));
            let expect = if lr >= 0.0 { 1 } else { 2 };
            assert_eq!(oracle_classify(&params, &x).unwrap(), expect);
        }
    }

    #[test]
    fn naive_means_are_raw_whitened_means() {
        let (samples, _) = two_class_data(50, 107);
        let cov_cfg = CovEstimatorConfig::default();
        let naive = naive_lda_train(&samples, &cov_cfg).unwrap();
        let (summaries, _) = center_by_class(&samples).unwrap();
        for (c, m) in summaries.iter().zip(&naive.scaled_means) {
            let zbar = whiten(&c.mean, &naive.cov).unwrap();
            for (a, b) in zbar.iter().zip(m) {
                assert_eq!(a, b);
            }
        }
        assert!(naive.mixing.is_none());
        // same covariance field as the NPMLE model on identical data/config
        let full = train(&samples, &cov_cfg, &fast_npmle()).unwrap();
        assert_eq!(
            naive.cov.u.as_matrix().as_slice(),
            full.cov.u.as_matrix().as_slice()
        );
    }

    #[test]
    fn estimated_b_identity_covariance() {
        let mut model = random_model(13, 2);
        let b = estimated_b(&model).unwrap();
        let expect = unvec(
            &DVector::from_iterator(
                6,
                model.scaled_means[0]
                    .iter()
                    .zip(&model.scaled_means[1])
                    .map(|(a, b)| a - b),
            ),
            2,
            3,
        )
        .unwrap();
        assert_eq!(b, expect);
        model.class_count = 3;
        model.priors = vec![0.4, 0.3, 0.3];
        model.scaled_means.push(vec![0.0; 6]);
        assert!(estimated_b(&model).is_err());
    }

    #[test]
    fn model_roundtrip_through_file() {
        let (samples, _) = two_class_data(30, 109);
        let model = train(&samples, &CovEstimatorConfig::default(), &fast_npmle()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(model.priors, loaded.priors);
        assert_eq!(model.scaled_means, loaded.scaled_means);
        assert_eq!(
            model.cov.u_inv_sqrt.as_matrix().as_slice(),
            loaded.cov.u_inv_sqrt.as_matrix().as_slice()
        );
        let x = DMatrix::from_element(8, 8, 0.2);
        assert_eq!(
            discriminant(&model, &x).unwrap().delta,
            discriminant(&loaded, &x).unwrap().delta
        );
    }

    #[test]
    fn prior_shift_flips_only_small_margin_inputs() {
        let model = random_model(17, 2);
        let mut shifted = model.clone();
        shifted.priors = vec![0.25, 0.75]; // tripled class-2 odds
        let shift = (3.0_f64).ln();
        let mut rng = derive_rng(47, 0, 0);
        for _ in 0..300 {
            let x = DMatrix::from_fn(2, 3, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let base = discriminant(&model, &x).unwrap();
            let after = discriminant(&shifted, &x).unwrap();
            let change = (model.priors[1] / model.priors[0]).ln() - shift;
            assert!((after.delta - (base.delta + change)).abs() < 1e-10);
            if base.predicted != after.predicted {
                assert!(base.delta.abs() <= change.abs() + 1e-10);
            }
        }
    }

    #[test]
    fn whitening_invariance_under_known_commuting_transform() {
        let (samples, _) = two_class_data(60, 113);
        // base: known identity-scaled covariance
        let u0 = SpdMatrix::new(DMatrix::identity(8, 8) * 0.2).unwrap();
        let v0 = SpdMatrix::new(DMatrix::identity(8, 8) * 0.2).unwrap();
        let base_cfg = CovEstimatorConfig {
            method: CovMethod::Known,
            known_u: Some(u0.clone()),
            known_v: Some(v0.clone()),
            ..Default::default()
        };
        // diagonal transform commuting with the base factors
        let a = DMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 + 0.3 * i as f64 } else { 0.0 });
        let b = DMatrix::from_fn(8, 8, |i, j| if i == j { 2.0 - 0.1 * i as f64 } else { 0.0 });
        let transformed: Vec<LabeledMatrixSample> = samples
            .iter()
            .map(|s| LabeledMatrixSample::new(&a * &s.x * &b, s.label).unwrap())
            .collect();
        let composed_cfg = CovEstimatorConfig {
            method: CovMethod::Known,
            known_u: Some(SpdMatrix::new(&a * u0.as_matrix() * &a).unwrap()),
            known_v: Some(SpdMatrix::new(&b * v0.as_matrix() * &b).unwrap()),
            ..Default::default()
        };
        let m_base = train(&samples, &base_cfg, &fast_npmle()).unwrap();
        let m_tr = train(&transformed, &composed_cfg, &fast_npmle()).unwrap();
        let mut rng = derive_rng(53, 0, 0);
        for _ in 0..100 {
            let x = DMatrix::from_fn(8, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d1 = discriminant(&m_base, &x).unwrap();
            let d2 = discriminant(&m_tr, &(&a * &x * &b)).unwrap();
            assert!(
                (d1.delta - d2.delta).abs() < 1e-8,
                "{} vs {}",
                d1.delta,
                d2.delta
            );
            assert_eq!(d1.predicted, d2.predicted);
        }
    }
}
