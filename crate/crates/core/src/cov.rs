//! Estimation of the Kronecker covariance factors (U, V) from class-centered
//! residuals, and whitening of samples by Σ^{-1/2} = V^{-1/2} ⊗ U^{-1/2}.
//!
//! Two estimators sit behind one interface: `flipflop-ridge` (alternating
//! closed-form MLE updates) and `gemini` (the same alternation with each
//! factor update passed through a graphical lasso on its correlation matrix,
//! giving sparse factor precisions). The Kronecker factorization is only
//! identified up to a scalar, pinned here by trace(U) = p.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::graphical_lasso;
use crate::matrix::{kron_vec_apply, LabeledMatrixSample, RealMatrix, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovMethod {
    Gemini,
    FlipflopRidge,
    Diagonal,
    Known,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CovEstimatorConfig {
    pub method: CovMethod,
    /// Graphical-lasso penalty for the row factor; None selects
    /// 0.5·sqrt(log p / (N q)).
    pub row_penalty: Option<f64>,
    /// Column-factor penalty; None selects 0.5·sqrt(log q / (N p)).
    pub col_penalty: Option<f64>,
    /// Ridge added to each factor update, relative to its mean eigenvalue.
    pub ridge: f64,
    pub max_iter: usize,
    /// Relative Frobenius-change tolerance on both factors.
    pub tol: f64,
    pub known_u: Option<SpdMatrix>,
    pub known_v: Option<SpdMatrix>,
}

impl Default for CovEstimatorConfig {
    fn default() -> Self {
        Self {
            method: CovMethod::FlipflopRidge,
            row_penalty: None,
            col_penalty: None,
            ridge: 1e-3,
            max_iter: 100,
            tol: 1e-6,
            known_u: None,
            known_v: None,
        }
    }
}

impl CovEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ridge < 0.0 {
            return Err(Error::Config("ridge must be nonnegative".into()));
        }
        if self.row_penalty.is_some_and(|x| x < 0.0) || self.col_penalty.is_some_and(|x| x < 0.0) {
            return Err(Error::Config("penalties must be nonnegative".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Row factor U, column factor V, and their inverse square roots; trace(U) = p.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KroneckerCovariance {
    pub u: SpdMatrix,
    pub v: SpdMatrix,
    pub u_inv_sqrt: SpdMatrix,
    pub v_inv_sqrt: SpdMatrix,
}

impl KroneckerCovariance {
    /// Normalizes trace(u) = p, then factorizes. Fails if either factor is
    /// numerically singular.
    pub fn from_factors(u: SpdMatrix, v: SpdMatrix) -> Result<Self> {
        let p = u.dim() as f64;
        let tr = u.as_matrix().trace();
        if tr <= 0.0 || tr.is_nan() {
            return Err(Error::NotPositiveDefinite("trace(U) <= 0".into()));
        }
        let c = p / tr;
        let u = SpdMatrix::new(u.as_matrix() * c)?;
        let v = SpdMatrix::new(v.as_matrix() / c)?;
        let u_inv_sqrt = u.inv_sqrt()?;
        let v_inv_sqrt = v.inv_sqrt()?;
        Ok(Self {
            u,
            v,
            u_inv_sqrt,
            v_inv_sqrt,
        })
    }

    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            u: SpdMatrix::identity(p),
            v: SpdMatrix::identity(q),
            u_inv_sqrt: SpdMatrix::identity(p),
            v_inv_sqrt: SpdMatrix::identity(q),
        }
    }

    pub fn p(&self) -> usize {
        self.u.dim()
    }

    pub fn q(&self) -> usize {
        self.v.dim()
    }

    /// Validates the invariants after deserialization.
    pub fn check(&self) -> Result<()> {
        let p = self.p();
        if (self.u.as_matrix().trace() - p as f64).abs() > 1e-6 * p as f64 {
            return Err(Error::Schema("trace(U) != p".into()));
        }
        for (f, inv, name) in [
            (&self.u, &self.u_inv_sqrt, "U"),
            (&self.v, &self.v_inv_sqrt, "V"),
        ] {
            let d = f.dim();
            let recon = inv.as_matrix() * f.as_matrix() * inv.as_matrix();
            let err = (recon - DMatrix::<f64>::identity(d, d)).norm() / (d as f64).sqrt();
            if err > 1e-8 {
                return Err(Error::Schema(format!(
                    "{name}_inv_sqrt does not invert {name} (error {err:.3e})"
                )));
            }
        }
        Ok(())
    }
}

pub struct ClassSummary {
    pub label: usize,
    pub mean: RealMatrix,
    pub count: usize,
}

/// Per-class means and pooled residuals r_i = x_i − mean(class(i)).
/// Class summaries come back sorted by label.
pub fn center_by_class(
    samples: &[LabeledMatrixSample],
) -> Result<(Vec<ClassSummary>, Vec<RealMatrix>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientClasses { found: 0, min: 1 });
    }
    let (p, q) = (samples[0].x.nrows(), samples[0].x.ncols());
    let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut summaries = Vec::new();
    for &label in &labels {
        let class: Vec<_> = samples.iter().filter(|s| s.label == label).collect();
        if class.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: label,
                count: class.len(),
                min: 2,
            });
        }
        let mut mean = DMatrix::zeros(p, q);
        for s in &class {
            if s.x.nrows() != p || s.x.ncols() != q {
                return Err(Error::ShapeMismatch(format!(
                    "sample shape {}x{} != {p}x{q}",
                    s.x.nrows(),
                    s.x.ncols()
                )));
            }
            mean += &s.x;
        }
        mean /= class.len() as f64;
        summaries.push(ClassSummary {
            label,
            mean,
            count: class.len(),
        });
    }
    let residuals = samples
        .iter()
        .map(|s| {
            let mean = &summaries.iter().find(|c| c.label == s.label).unwrap().mean;
            &s.x - mean
        })
        .collect();
    Ok((summaries, residuals))
}

fn add_relative_ridge(m: &mut RealMatrix, ridge: f64) {
    if ridge > 0.0 {
        let eps = ridge * m.trace() / m.nrows() as f64;
        for i in 0..m.nrows() {
            m[(i, i)] += eps;
        }
    }
}

/// (1/(N q)) Σ_i r_i W r_iᵀ for a symmetric weight W.
fn row_gram(residuals: &[RealMatrix], w: &RealMatrix) -> RealMatrix {
    let (p, q) = (residuals[0].nrows(), residuals[0].ncols());
    let mut acc = DMatrix::zeros(p, p);
    for r in residuals {
        acc += r * w * r.transpose();
    }
    acc / (residuals.len() * q) as f64
}

/// (1/(N p)) Σ_i r_iᵀ W r_i.
fn col_gram(residuals: &[RealMatrix], w: &RealMatrix) -> RealMatrix {
    let (p, q) = (residuals[0].nrows(), residuals[0].ncols());
    let mut acc = DMatrix::zeros(q, q);
    for r in residuals {
        acc += r.transpose() * w * r;
    }
    acc / (residuals.len() * p) as f64
}

/// Kronecker-structured Gaussian log-likelihood of residuals (up to an
/// additive constant); used to verify flip-flop monotonicity.
pub fn kronecker_loglik(residuals: &[RealMatrix], u: &SpdMatrix, v: &SpdMatrix) -> Result<f64> {
    let n = residuals.len() as f64;
    let (p, q) = (u.dim() as f64, v.dim() as f64);
    let u_inv = u.inverse()?;
    let v_inv = v.inverse()?;
    let logdet = |s: &SpdMatrix| {
        s.as_matrix()
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|l| l.ln())
            .sum::<f64>()
    };
    let mut quad = 0.0;
    for r in residuals {
        quad += (u_inv.as_matrix() * r * v_inv.as_matrix() * r.transpose()).trace();
    }
    Ok(-0.5 * (n * q * logdet(u) + n * p * logdet(v) + quad))
}

/// Passes a factor update through a graphical lasso on its correlation
/// matrix; with zero penalty the update is returned unchanged.
fn penalize_factor(t: RealMatrix, lambda: f64) -> Result<RealMatrix> {
    if lambda == 0.0 {
        return Ok(t);
    }
    let d = t.nrows();
    let diag: Vec<f64> = (0..d).map(|i| t[(i, i)]).collect();
    if diag.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotPositiveDefinite("factor update diagonal".into()));
    }
    let sd: Vec<f64> = diag.iter().map(|x| x.sqrt()).collect();
    let corr = DMatrix::from_fn(d, d, |i, j| t[(i, j)] / (sd[i] * sd[j]));
    let sol = graphical_lasso(&corr, lambda, 1e-6, 200)?;
    let prec = SpdMatrix::new((&sol.precision + sol.precision.transpose()) * 0.5)?;
    let cov_corr = prec.inverse()?;
    Ok(DMatrix::from_fn(d, d, |i, j| {
        cov_corr.as_matrix()[(i, j)] * sd[i] * sd[j]
    }))
}

struct AlternationPenalties {
    row: f64,
    col: f64,
}

/// Alternating factor estimation; `penalties` of zero gives the plain
/// flip-flop updates. Returns the per-iteration factor path for testing.
fn estimate_alternating(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
    penalties: AlternationPenalties,
) -> Result<(KroneckerCovariance, Vec<(SpdMatrix, SpdMatrix)>)> {
    cfg.validate()?;
    if residuals.is_empty() {
        return Err(Error::InsufficientClasses { found: 0, min: 1 });
    }
    let p = residuals[0].nrows();

    // init: V from identity-weighted column Gram
    let mut v_raw = col_gram(residuals, &DMatrix::identity(p, p));
    add_relative_ridge(&mut v_raw, cfg.ridge);
    let mut v = SpdMatrix::new(v_raw)
        .map_err(|_| Error::NotPositiveDefinite("initial column Gram".into()))?;
    v.inv_sqrt()
        .map_err(|_| Error::NotPositiveDefinite("initial column Gram".into()))?;
    let mut u = SpdMatrix::identity(p);
    let mut path = Vec::new();

    for iter in 0..cfg.max_iter {
        let v_inv = v.inverse()?;
        let mut u_raw = penalize_factor(row_gram(residuals, v_inv.as_matrix()), penalties.row)?;
        add_relative_ridge(&mut u_raw, cfg.ridge);
        let u_new = SpdMatrix::new((&u_raw + u_raw.transpose()) * 0.5)?;
        let u_inv = u_new.inverse()?;
        let mut v_raw = penalize_factor(col_gram(residuals, u_inv.as_matrix()), penalties.col)?;
        add_relative_ridge(&mut v_raw, cfg.ridge);
        let v_new = SpdMatrix::new((&v_raw + v_raw.transpose()) * 0.5)?;

        // pin the scale split: trace(U) = p
        let c = p as f64 / u_new.as_matrix().trace();
        let u_new = SpdMatrix::new(u_new.as_matrix() * c)?;
        let v_new = SpdMatrix::new(v_new.as_matrix() / c)?;

        let du = (u_new.as_matrix() - u.as_matrix()).norm() / u.as_matrix().norm().max(1e-300);
        let dv = (v_new.as_matrix() - v.as_matrix()).norm() / v.as_matrix().norm().max(1e-300);
        u = u_new;
        v = v_new;
        path.push((u.clone(), v.clone()));
        if iter > 0 && du < cfg.tol && dv < cfg.tol {
            return Ok((KroneckerCovariance::from_factors(u, v)?, path));
        }
    }
    Err(Error::NoConvergence {
        what: "covariance alternation".into(),
        iterations: cfg.max_iter,
    })
}

/// Flip-flop MLE with relative ridge regularization.
pub fn estimate_flipflop(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
) -> Result<KroneckerCovariance> {
    estimate_alternating(residuals, cfg, AlternationPenalties { row: 0.0, col: 0.0 })
        .map(|(c, _)| c)
}

/// Flip-flop with the per-iteration factor path, for objective checks.
pub fn estimate_flipflop_traced(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
) -> Result<(KroneckerCovariance, Vec<(SpdMatrix, SpdMatrix)>)> {
    estimate_alternating(residuals, cfg, AlternationPenalties { row: 0.0, col: 0.0 })
}

/// Penalized estimator: each alternation step runs a graphical lasso on the
/// factor's correlation matrix, yielding sparse factor precisions.
pub fn estimate_gemini(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
) -> Result<KroneckerCovariance> {
    if residuals.is_empty() {
        return Err(Error::InsufficientClasses { found: 0, min: 1 });
    }
    let n = residuals.len() as f64;
    let (p, q) = (residuals[0].nrows() as f64, residuals[0].ncols() as f64);
    let row = cfg.row_penalty.unwrap_or(0.5 * (p.ln() / (n * q)).sqrt());
    let col = cfg.col_penalty.unwrap_or(0.5 * (q.ln() / (n * p)).sqrt());
    estimate_alternating(residuals, cfg, AlternationPenalties { row, col }).map(|(c, _)| c)
}

/// Diagonal factor estimates (marginal variances only).
pub fn estimate_diagonal(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
) -> Result<KroneckerCovariance> {
    cfg.validate()?;
    if residuals.is_empty() {
        return Err(Error::InsufficientClasses { found: 0, min: 1 });
    }
    let (p, q) = (residuals[0].nrows(), residuals[0].ncols());
    let mut u_raw = row_gram(residuals, &DMatrix::identity(q, q));
    let mut v_raw = col_gram(residuals, &DMatrix::identity(p, p));
    add_relative_ridge(&mut u_raw, cfg.ridge);
    add_relative_ridge(&mut v_raw, cfg.ridge);
    let u = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_iterator(
        p,
        (0..p).map(|i| u_raw[(i, i)]),
    )))?;
    let v = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_iterator(
        q,
        (0..q).map(|i| v_raw[(i, i)]),
    )))?;
    KroneckerCovariance::from_factors(u, v)
}

/// Dispatch on the configured method.
pub fn estimate_covariance(
    residuals: &[RealMatrix],
    cfg: &CovEstimatorConfig,
) -> Result<KroneckerCovariance> {
    match cfg.method {
        CovMethod::FlipflopRidge => estimate_flipflop(residuals, cfg),
        CovMethod::Gemini => estimate_gemini(residuals, cfg),
        CovMethod::Diagonal => estimate_diagonal(residuals, cfg),
        CovMethod::Known => {
            let (u, v) = match (&cfg.known_u, &cfg.known_v) {
                (Some(u), Some(v)) => (u.clone(), v.clone()),
                _ => {
                    return Err(Error::Config(
                        "method 'known' requires known_u and known_v".into(),
                    ))
                }
            };
            KroneckerCovariance::from_factors(u, v)
        }
    }
}

/// Σ^{-1/2}·vec(x), computed as vec(U^{-1/2}·x·V^{-1/2}).
pub fn whiten(x: &RealMatrix, cov: &KroneckerCovariance) -> Result<DVector<f64>> {
    kron_vec_apply(cov.u_inv_sqrt.as_matrix(), cov.v_inv_sqrt.as_matrix(), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{sample_matrix_normal, vec_mat};
    use approx::assert_relative_eq;

    fn ar1_factor(d: usize, rho: f64) -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_fn(d, d, |i, j| {
            0.2 * rho.powi((i as i32 - j as i32).abs())
        }))
        .unwrap()
    }

    fn mn_residuals(u: &SpdMatrix, v: &SpdMatrix, n: usize, seed: u64) -> Vec<RealMatrix> {
        let zero = DMatrix::zeros(u.dim(), v.dim());
        sample_matrix_normal(&zero, u, v, seed, n).unwrap()
    }

    #[test]
    fn center_identical_samples_zero_residuals() {
        let x = DMatrix::from_element(2, 2, 3.0);
        let samples = vec![
            LabeledMatrixSample::new(x.clone(), 1).unwrap(),
            LabeledMatrixSample::new(x, 1).unwrap(),
        ];
        let (_, res) = center_by_class(&samples).unwrap();
        for r in res {
            assert!(r.amax() < 1e-12);
        }
    }

    #[test]
    fn center_scalar_example() {
        let samples = vec![
            LabeledMatrixSample::new(DMatrix::from_element(1, 1, 0.0), 1).unwrap(),
            LabeledMatrixSample::new(DMatrix::from_element(1, 1, 2.0), 1).unwrap(),
        ];
        let (means, res) = center_by_class(&samples).unwrap();
        assert_eq!(means[0].mean[(0, 0)], 1.0);
        assert_eq!(res[0][(0, 0)], -1.0);
        assert_eq!(res[1][(0, 0)], 1.0);
    }

    #[test]
    fn center_residual_sums_vanish_per_class() {
        let u = SpdMatrix::identity(3);
        let v = SpdMatrix::identity(2);
        let m1 = DMatrix::from_element(3, 2, 1.0);
        let m2 = DMatrix::from_element(3, 2, -2.0);
        let mut samples = Vec::new();
        for x in sample_matrix_normal(&m1, &u, &v, 1, 5).unwrap() {
            samples.push(LabeledMatrixSample::new(x, 1).unwrap());
        }
        for x in sample_matrix_normal(&m2, &u, &v, 2, 5).unwrap() {
            samples.push(LabeledMatrixSample::new(x, 2).unwrap());
        }
        let (_, res) = center_by_class(&samples).unwrap();
        let sum1: RealMatrix = res[..5].iter().sum();
        let sum2: RealMatrix = res[5..].iter().sum();
        assert!(sum1.amax() < 1e-10 && sum2.amax() < 1e-10);
    }

    #[test]
    fn center_rejects_singleton_class() {
        let samples = vec![
            LabeledMatrixSample::new(DMatrix::zeros(2, 2), 1).unwrap(),
            LabeledMatrixSample::new(DMatrix::zeros(2, 2), 1).unwrap(),
            LabeledMatrixSample::new(DMatrix::zeros(2, 2), 2).unwrap(),
        ];
        assert!(matches!(
            center_by_class(&samples),
            Err(Error::ClassTooSmall { class: 2, .. })
        ));
    }

    #[test]
    fn flipflop_recovers_identity_factors() {
        let u = SpdMatrix::new(DMatrix::identity(8, 8) * 0.2).unwrap();
        let v = SpdMatrix::new(DMatrix::identity(8, 8) * 0.2).unwrap();
        let res = mn_residuals(&u, &v, 500, 31);
        let cfg = CovEstimatorConfig {
            ridge: 0.0,
            ..Default::default()
        };
        let est = estimate_flipflop(&res, &cfg).unwrap();
        // trace(U)=8 normalization maps true U to I
        let err_u = (est.u.as_matrix() - DMatrix::<f64>::identity(8, 8)).norm()
            / DMatrix::<f64>::identity(8, 8).norm();
        assert!(err_u < 0.05, "err_u={err_u}");
        // product invariance: V ⊗ U should match truth (0.04 · I_64)
        let prod_diag_err: f64 = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .map(|(i, j)| (est.u.as_matrix()[(i, i)] * est.v.as_matrix()[(j, j)] - 0.04).abs())
            .fold(0.0, f64::max);
        assert!(prod_diag_err < 0.04 * 0.1, "prod err {prod_diag_err}");
    }

    #[test]
    fn flipflop_rejects_zero_residuals() {
        let res = vec![DMatrix::zeros(3, 3)];
        let cfg = CovEstimatorConfig {
            ridge: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            estimate_flipflop(&res, &cfg),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn flipflop_recovers_ar1_column_factor() {
        // Model 2 structure: U = I/5, V AR(1) with rho = 0.5
        let u = SpdMatrix::new(DMatrix::identity(8, 8) * 0.2).unwrap();
        let v = ar1_factor(8, 0.5);
        let res = mn_residuals(&u, &v, 500, 33);
        let est = estimate_flipflop(&res, &CovEstimatorConfig::default()).unwrap();
        let vm = est.v.as_matrix();
        for i in 0..8 {
            for j in 0..8 {
                let corr = vm[(i, j)] / (vm[(i, i)] * vm[(j, j)]).sqrt();
                let truth = 0.5_f64.powi((i as i32 - j as i32).abs());
                assert!((corr - truth).abs() < 0.05, "({i},{j}): {corr} vs {truth}");
            }
        }
    }

    #[test]
    fn flipflop_loglik_nondecreasing() {
        let u = ar1_factor(6, 0.3);
        let v = ar1_factor(5, 0.5);
        let res = mn_residuals(&u, &v, 200, 35);
        let cfg = CovEstimatorConfig {
            ridge: 0.0,
            ..Default::default()
        };
        let (_, path) = estimate_flipflop_traced(&res, &cfg).unwrap();
        let lls: Vec<f64> = path
            .iter()
            .map(|(u, v)| kronecker_loglik(&res, u, v).unwrap())
            .collect();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn scale_identifiability() {
        let u = ar1_factor(4, 0.3);
        let v = ar1_factor(4, 0.5);
        let res = mn_residuals(&u, &v, 300, 37);
        let cfg = CovEstimatorConfig {
            ridge: 0.0,
            tol: 1e-8,
            ..Default::default()
        };
        let est = estimate_flipflop(&res, &cfg).unwrap();
        let scaled: Vec<RealMatrix> = res.iter().map(|r| r * 2.0).collect();
        let est2 = estimate_flipflop(&scaled, &cfg).unwrap();
        // U is pinned by its trace; the scale lands entirely in V
        assert_relative_eq!(est.u.as_matrix(), est2.u.as_matrix(), max_relative = 1e-4);
        assert_relative_eq!(
            &(est.v.as_matrix() * 4.0),
            est2.v.as_matrix(),
            max_relative = 1e-4
        );
    }

    #[test]
    fn gemini_heavy_penalty_diagonal() {
        let u = SpdMatrix::new(DMatrix::identity(5, 5) * 0.2).unwrap();
        let v = SpdMatrix::new(DMatrix::identity(5, 5) * 0.2).unwrap();
        let res = mn_residuals(&u, &v, 100, 41);
        let cfg = CovEstimatorConfig {
            method: CovMethod::Gemini,
            row_penalty: Some(5.0),
            col_penalty: Some(5.0),
            ..Default::default()
        };
        let est = estimate_gemini(&res, &cfg).unwrap();
        for m in [est.u.as_matrix(), est.v.as_matrix()] {
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        assert!(m[(i, j)].abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gemini_zero_penalty_matches_flipflop() {
        let u = ar1_factor(4, 0.3);
        let v = ar1_factor(4, 0.5);
        let res = mn_residuals(&u, &v, 200, 43);
        let cfg = CovEstimatorConfig {
            row_penalty: Some(0.0),
            col_penalty: Some(0.0),
            ridge: 0.0,
            tol: 1e-9,
            max_iter: 500,
            ..Default::default()
        };
        let a = estimate_gemini(&res, &cfg).unwrap();
        let b = estimate_flipflop(&res, &cfg).unwrap();
        assert!((a.u.as_matrix() - b.u.as_matrix()).amax() < 1e-6);
        assert!((a.v.as_matrix() - b.v.as_matrix()).amax() < 1e-6);
    }

    #[test]
    fn gemini_whitens_doubly_dependent_data() {
        // Model 3 structure: both factors AR(1) with rho = 0.25
        let u = ar1_factor(8, 0.25);
        let v = ar1_factor(8, 0.25);
        let res = mn_residuals(&u, &v, 500, 47);
        let cfg = CovEstimatorConfig {
            method: CovMethod::Gemini,
            ..Default::default()
        };
        let est = estimate_gemini(&res, &cfg).unwrap();
        let mut sumsq = vec![0.0_f64; 64];
        for r in &res {
            let z = whiten(r, &est).unwrap();
            for (j, v) in z.iter().enumerate() {
                sumsq[j] += v * v;
            }
        }
        for (j, s) in sumsq.iter().enumerate() {
            let var = s / res.len() as f64;
            assert!((0.8..=1.2).contains(&var), "coord {j}: var {var}");
        }
    }

    #[test]
    fn whiten_identity_is_vec() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let cov = KroneckerCovariance::identity(2, 2);
        assert_eq!(whiten(&x, &cov).unwrap(), vec_mat(&x));
    }

    #[test]
    fn whiten_matches_explicit_kronecker() {
        let u = ar1_factor(2, 0.3);
        let v = ar1_factor(2, 0.6);
        let cov = KroneckerCovariance::from_factors(u, v).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 2.5]);
        let fast = whiten(&x, &cov).unwrap();
        // assemble V^{-1/2} ⊗ U^{-1/2} explicitly
        let (ui, vi) = (cov.u_inv_sqrt.as_matrix(), cov.v_inv_sqrt.as_matrix());
        let mut k = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        k[(i * 2 + a, j * 2 + b)] = vi[(i, j)] * ui[(a, b)];
                    }
                }
            }
        }
        let slow = k * vec_mat(&x);
        assert_relative_eq!(fast, slow, epsilon = 1e-10);
    }

    #[test]
    fn whitened_samples_have_unit_variance() {
        let u = ar1_factor(3, 0.4);
        let v = ar1_factor(3, 0.2);
        let cov = KroneckerCovariance::from_factors(u.clone(), v.clone()).unwrap();
        let zero = DMatrix::zeros(3, 3);
        let samples = sample_matrix_normal(&zero, &u, &v, 51, 10_000).unwrap();
        let mut sumsq = vec![0.0_f64; 9];
        for x in &samples {
            let z = whiten(x, &cov).unwrap();
            for (j, v) in z.iter().enumerate() {
                sumsq[j] += v * v;
            }
        }
        for s in sumsq {
            let var = s / samples.len() as f64;
            assert!((0.94..=1.06).contains(&var), "var {var}");
        }
    }

    #[test]
    fn whitened_moments_are_gaussian() {
        let u = ar1_factor(2, 0.5);
        let v = ar1_factor(2, 0.5);
        let cov = KroneckerCovariance::from_factors(u.clone(), v.clone()).unwrap();
        let zero = DMatrix::zeros(2, 2);
        let samples = sample_matrix_normal(&zero, &u, &v, 53, 25_000).unwrap();
        let mut pooled = Vec::with_capacity(samples.len() * 4);
        for x in &samples {
            pooled.extend(whiten(x, &cov).unwrap().iter().copied());
        }
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let m2 = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = pooled.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = pooled.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        assert!(skew.abs() < 0.1, "skew {skew}");
        assert!((kurt - 3.0).abs() < 0.2, "kurt {kurt}");
    }
}
