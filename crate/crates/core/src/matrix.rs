//! Dense-matrix domain types and the vec/Kronecker algebra shared by the
//! whole crate, together with matrix-normal sampling.
//!
//! The only externally visible storage convention is the column-stacking
//! `vec` operator: `vec(X)[(j-1)p + i] = X[i, j]`. Under that convention a
//! matrix-normal law MN(M, U, V) is equivalent to vec(X) ~ N(vec(M), V ⊗ U).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;

pub type RealMatrix = DMatrix<f64>;

/// Relative symmetry tolerance for SPD construction.
const SYM_TOL: f64 = 1e-10;
/// Eigenvalue floor, relative to the largest eigenvalue.
const EIG_FLOOR: f64 = 1e-12;

/// One p×q observation with its class label (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrixSample {
    pub x: RealMatrix,
    pub label: usize,
}

impl LabeledMatrixSample {
    pub fn new(x: RealMatrix, label: usize) -> Result<Self> {
        if label == 0 {
            return Err(Error::Schema("labels are 1-based; got 0".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("sample with label {label}")));
        }
        Ok(Self { x, label })
    }
}

/// Column-stacking vectorization: output index (j-1)p + i holds entry (i, j).
pub fn vec_mat(x: &RealMatrix) -> DVector<f64> {
    // nalgebra stores column-major, so this is a straight copy.
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of `vec_mat`.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<RealMatrix> {
    if v.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "unvec: vector length {} != {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Computes (b ⊗ a)·vec(x) as vec(a·x·bᵀ) without materializing the
/// pq×pq Kronecker matrix.
pub fn kron_vec_apply(a: &RealMatrix, b: &RealMatrix, x: &RealMatrix) -> Result<DVector<f64>> {
    if a.ncols() != x.nrows() || b.ncols() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "kron_vec_apply: a is {}x{}, b is {}x{}, x is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(vec_mat(&(a * x * b.transpose())))
}

/// Symmetric positive definite matrix, validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixPayload", into = "MatrixPayload")]
pub struct SpdMatrix {
    mat: RealMatrix,
}

impl SpdMatrix {
    /// Checks finiteness and symmetry (1e-10 relative). Positive
    /// definiteness is checked when the matrix is factorized.
    pub fn new(mat: RealMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "SpdMatrix must be square and nonempty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("SpdMatrix entries".into()));
        }
        let scale = mat.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..mat.nrows() {
            for j in (i + 1)..mat.ncols() {
                if (mat[(i, j)] - mat[(j, i)]).abs() > SYM_TOL * scale {
                    return Err(Error::ShapeMismatch(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mat })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &RealMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.mat
    }

    fn eig_decompose(&self) -> Result<(RealMatrix, DVector<f64>)> {
        let eig = self.mat.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if max <= 0.0 || min <= EIG_FLOOR * max {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue range [{min:.3e}, {max:.3e}]"
            )));
        }
        Ok((eig.eigenvectors, eig.eigenvalues))
    }

    fn map_eigvals(&self, f: impl Fn(f64) -> f64) -> Result<SpdMatrix> {
        let (q, vals) = self.eig_decompose()?;
        let d = DMatrix::from_diagonal(&vals.map(f));
        let m = &q * d * q.transpose();
        // symmetrize against roundoff
        let m = (&m + m.transpose()) * 0.5;
        Ok(SpdMatrix { mat: m })
    }

    /// Symmetric inverse square root via eigendecomposition.
    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        self.map_eigvals(|l| 1.0 / l.sqrt())
    }

    /// Symmetric square root.
    pub fn sqrt(&self) -> Result<SpdMatrix> {
        self.map_eigvals(f64::sqrt)
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        self.map_eigvals(|l| 1.0 / l)
    }
}

/// Symmetric inverse square root: the result r satisfies r·s·r = I.
pub fn spd_inv_sqrt(s: &SpdMatrix) -> Result<SpdMatrix> {
    s.inv_sqrt()
}

/// Draws `n` samples X = mean + U^{1/2}·Z·V^{1/2} with Z i.i.d. standard
/// normal, so vec(X) ~ N(vec(mean), V ⊗ U). Deterministic for a fixed seed.
pub fn sample_matrix_normal(
    mean: &RealMatrix,
    u: &SpdMatrix,
    v: &SpdMatrix,
    seed: u64,
    n: usize,
) -> Result<Vec<RealMatrix>> {
    let (p, q) = (mean.nrows(), mean.ncols());
    if u.dim() != p || v.dim() != q {
        return Err(Error::ShapeMismatch(format!(
            "sample_matrix_normal: mean {p}x{q}, U dim {}, V dim {}",
            u.dim(),
            v.dim()
        )));
    }
    let u_sqrt = u.sqrt()?;
    let v_sqrt = v.sqrt()?;
    let mut rng = derive_rng(seed, 0, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        out.push(mean + u_sqrt.as_matrix() * z * v_sqrt.as_matrix());
    }
    Ok(out)
}

/// Row-major wire form for matrices in JSON files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixPayload {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&RealMatrix> for MatrixPayload {
    fn from(m: &RealMatrix) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixPayload {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixPayload> for RealMatrix {
    type Error = Error;

    fn try_from(p: MatrixPayload) -> Result<RealMatrix> {
        if p.data.len() != p.rows * p.cols {
            return Err(Error::Schema(format!(
                "matrix payload claims {}x{} but carries {} values",
                p.rows,
                p.cols,
                p.data.len()
            )));
        }
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("matrix payload".into()));
        }
        Ok(DMatrix::from_row_slice(p.rows, p.cols, &p.data))
    }
}

impl From<SpdMatrix> for MatrixPayload {
    fn from(s: SpdMatrix) -> Self {
        (&s.mat).into()
    }
}

impl TryFrom<MatrixPayload> for SpdMatrix {
    type Error = Error;

    fn try_from(p: MatrixPayload) -> Result<SpdMatrix> {
        SpdMatrix::new(RealMatrix::try_from(p)?)
    }
}
