//! Simulation scenario generation: cross-pattern coefficient matrices B,
//! the three covariance models, means M₁ = 0 and M₂ = −U·B·V, and seeded
//! train/test sets.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sample_matrix_normal, LabeledMatrixSample, RealMatrix, SpdMatrix};
use crate::rng::{derive_rng, derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sparsity {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossSize {
    Small,
    Medium,
    Large,
}

impl CrossSize {
    /// Arm thickness as a fraction of the matrix side.
    fn thickness_fraction(self) -> f64 {
        match self {
            CrossSize::Small => 1.0 / 16.0,
            CrossSize::Medium => 1.0 / 8.0,
            CrossSize::Large => 1.0 / 4.0,
        }
    }
}

/// Geometry and amplitude of one coefficient matrix B.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSpec {
    pub sparsity: Sparsity,
    pub size: CrossSize,
    pub theta: f64,
    pub p: usize,
    pub q: usize,
    pub noise_seed: u64,
}

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta <= 0.0 {
            return Err(Error::Config("theta must be positive".into()));
        }
        if self.p == 0 || self.q == 0 {
            return Err(Error::Config("pattern dimensions must be positive".into()));
        }
        let (tr, tc) = self.thickness();
        if tr > self.p || tc > self.q {
            return Err(Error::PatternTooLarge {
                p: self.p,
                q: self.q,
            });
        }
        Ok(())
    }

    /// (row-arm thickness, column-arm thickness).
    fn thickness(&self) -> (usize, usize) {
        let d = self.size.thickness_fraction();
        let t = |n: usize| ((d * n as f64).round() as usize).max(1);
        (t(self.p), t(self.q))
    }
}

/// True where the cross pattern sits: a horizontal bar spanning all columns
/// and a vertical bar spanning all rows, centered at (⌈p/2⌉, ⌈q/2⌉).
pub fn cross_mask(spec: &PatternSpec) -> Result<DMatrix<bool>> {
    spec.validate()?;
    let (p, q) = (spec.p, spec.q);
    let (tr, tc) = spec.thickness();
    // 0-based center index of the 1-based ceil(p/2) cell
    let cr = p.div_ceil(2) - 1;
    let cc = q.div_ceil(2) - 1;
    let row_lo = cr - (tr - 1) / 2;
    let row_hi = row_lo + tr; // exclusive
    let col_lo = cc - (tc - 1) / 2;
    let col_hi = col_lo + tc;
    if row_hi > p || col_hi > q {
        return Err(Error::PatternTooLarge { p, q });
    }
    Ok(DMatrix::from_fn(p, q, |i, j| {
        (row_lo..row_hi).contains(&i) || (col_lo..col_hi).contains(&j)
    }))
}

/// Builds B: cross cells at theta over a zero (sparse) or Unif(0, 0.1)
/// (dense) background. Deterministic in `noise_seed`.
pub fn make_b(spec: &PatternSpec) -> Result<RealMatrix> {
    let mask = cross_mask(spec)?;
    let mut b = DMatrix::zeros(spec.p, spec.q);
    if spec.sparsity == Sparsity::Dense {
        let mut rng = derive_rng(spec.noise_seed, 0, stream::PATTERN_NOISE);
        for j in 0..spec.q {
            for i in 0..spec.p {
                if !mask[(i, j)] {
                    b[(i, j)] = rng.gen_range(0.0..0.1);
                }
            }
        }
    }
    for j in 0..spec.q {
        for i in 0..spec.p {
            if mask[(i, j)] {
                b[(i, j)] = spec.theta;
            }
        }
    }
    Ok(b)
}

/// Covariance factors of the three simulation models:
/// 1 — U = V = I/5; 2 — U = I/5, V_ij = 0.5^|i−j|/5;
/// 3 — U_ij = V_ij = 0.25^|i−j|/5.
pub fn make_model_cov(model: u8, p: usize, q: usize) -> Result<(SpdMatrix, SpdMatrix)> {
    let ar = |d: usize, rho: f64| {
        SpdMatrix::new(DMatrix::from_fn(d, d, |i, j| {
            0.2 * rho.powi((i as i32 - j as i32).abs())
        }))
    };
    match model {
        1 => Ok((ar(p, 0.0)?, ar(q, 0.0)?)),
        2 => Ok((ar(p, 0.0)?, ar(q, 0.5)?)),
        3 => Ok((ar(p, 0.25)?, ar(q, 0.25)?)),
        m => Err(Error::Config(format!(
            "unknown covariance model {m}; expected 1, 2, or 3"
        ))),
    }
}

/// One complete simulation scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: u8,
    pub pattern: PatternSpec,
    /// Training samples per class.
    pub n_train: usize,
    /// Test samples per class.
    pub n_test: usize,
    pub replications: usize,
    pub master_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.pattern.validate()?;
        make_model_cov(self.model, self.pattern.p, self.pattern.q)?;
        if self.n_train == 0 || self.n_test == 0 || self.replications == 0 {
            return Err(Error::Config("counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Full-scale preset matching the simulation design (p=q=64, n=300,
    /// 200 replications).
    pub fn full_scale(model: u8, sparsity: Sparsity, size: CrossSize, theta: f64) -> Self {
        Self {
            model,
            pattern: PatternSpec {
                sparsity,
                size,
                theta,
                p: 64,
                q: 64,
                noise_seed: 0,
            },
            n_train: 300,
            n_test: 300,
            replications: 200,
            master_seed: 0,
        }
    }

    /// Desk-scale preset (p=q=16, n=100, 20 replications).
    pub fn desk_scale(model: u8, sparsity: Sparsity, size: CrossSize, theta: f64) -> Self {
        Self {
            model,
            pattern: PatternSpec {
                sparsity,
                size,
                theta,
                p: 16,
                q: 16,
                noise_seed: 0,
            },
            n_train: 100,
            n_test: 100,
            replications: 20,
            master_seed: 0,
        }
    }
}

/// True generative parameters of one replication.
#[derive(Debug, Clone)]
pub struct Truth {
    pub m1: RealMatrix,
    pub m2: RealMatrix,
    pub u: SpdMatrix,
    pub v: SpdMatrix,
    pub b: RealMatrix,
}

pub struct Dataset {
    pub train: Vec<LabeledMatrixSample>,
    pub test: Vec<LabeledMatrixSample>,
    pub truth: Truth,
}

/// Generates one replication: group 1 ~ MN(0, U, V), group 2 ~ MN(−UBV, U, V),
/// with all randomness derived from (master_seed, replication).
pub fn make_dataset(cfg: &ScenarioConfig, replication: u64) -> Result<Dataset> {
    cfg.validate()?;
    let (u, v) = make_model_cov(cfg.model, cfg.pattern.p, cfg.pattern.q)?;
    let mut pattern = cfg.pattern.clone();
    pattern.noise_seed = derive_seed(cfg.master_seed, replication, stream::PATTERN_NOISE);
    let b = make_b(&pattern)?;
    let m1 = DMatrix::zeros(cfg.pattern.p, cfg.pattern.q);
    let m2 = -(u.as_matrix() * &b * v.as_matrix());

    let draw = |mean: &RealMatrix, n: usize, stream_id: u64, label: usize| -> Result<Vec<_>> {
        let seed = derive_seed(cfg.master_seed, replication, stream_id);
        sample_matrix_normal(mean, &u, &v, seed, n)?
            .into_iter()
            .map(|x| LabeledMatrixSample::new(x, label))
            .collect()
    };
    let mut train = draw(&m1, cfg.n_train, stream::TRAIN_CLASS_BASE, 1)?;
    train.extend(draw(&m2, cfg.n_train, stream::TRAIN_CLASS_BASE + 1, 2)?);
    let mut test = draw(&m1, cfg.n_test, stream::TEST_CLASS_BASE, 1)?;
    test.extend(draw(&m2, cfg.n_test, stream::TEST_CLASS_BASE + 1, 2)?);
    Ok(Dataset {
        train,
        test,
        truth: Truth { m1, m2, u, v, b },
    })
}
