//! Graphical lasso: L1-penalized sparse precision estimation via block
//! coordinate descent (Friedman-style, lasso regression per column).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{RealMatrix, SpdMatrix};

const INNER_TOL: f64 = 1e-8;
const INNER_MAX: usize = 1000;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub struct GlassoSolution {
    pub precision: RealMatrix,
    pub covariance: RealMatrix,
}

/// Solves max_Θ log det Θ − tr(SΘ) − ρ‖Θ‖_{1,off} for symmetric input `s`.
///
/// With ρ = 0 this reduces to the plain inverse. Off-diagonal precision
/// entries killed by the soft threshold come out exactly zero.
pub fn graphical_lasso(
    s: &RealMatrix,
    rho: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<GlassoSolution> {
    let d = s.nrows();
    if d != s.ncols() {
        return Err(Error::ShapeMismatch(
            "graphical_lasso needs a square matrix".into(),
        ));
    }
    if rho < 0.0 {
        return Err(Error::Config(
            "graphical lasso penalty must be nonnegative".into(),
        ));
    }
    if rho == 0.0 {
        let spd = SpdMatrix::new((s + s.transpose()) * 0.5)?;
        let prec = spd.inverse()?;
        return Ok(GlassoSolution {
            precision: prec.into_matrix(),
            covariance: spd.into_matrix(),
        });
    }
    if d == 1 {
        let w = s[(0, 0)];
        if w <= 0.0 {
            return Err(Error::NotPositiveDefinite("1x1 glasso input".into()));
        }
        return Ok(GlassoSolution {
            precision: DMatrix::from_element(1, 1, 1.0 / w),
            covariance: DMatrix::from_element(1, 1, w),
        });
    }

    let mut w = s.clone();
    for i in 0..d {
        w[(i, i)] += rho;
    }
    // betas[(k, j)] is the lasso coefficient of variable k in column j's
    // regression (diagonal unused)
    let mut betas: RealMatrix = DMatrix::zeros(d, d);

    let off_scale = {
        let mut m = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    m = m.max(s[(i, j)].abs());
                }
            }
        }
        m.max(1e-12)
    };

    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut max_delta = 0.0_f64;
        for j in 0..d {
            // lasso for column j against W11
            let mut beta: Vec<f64> = (0..d).map(|k| betas[(k, j)]).collect();
            for _ in 0..INNER_MAX {
                let mut inner_delta = 0.0_f64;
                for k in 0..d {
                    if k == j {
                        continue;
                    }
                    let mut num = s[(k, j)];
                    for l in 0..d {
                        if l != k && l != j {
                            num -= w[(k, l)] * beta[l];
                        }
                    }
                    let new = soft_threshold(num, rho) / w[(k, k)];
                    inner_delta = inner_delta.max((new - beta[k]).abs());
                    beta[k] = new;
                }
                if inner_delta < INNER_TOL {
                    break;
                }
            }
            for k in 0..d {
                if k == j {
                    continue;
                }
                let mut w12k = 0.0;
                for l in 0..d {
                    if l != j {
                        w12k += w[(k, l)] * beta[l];
                    }
                }
                max_delta = max_delta.max((w[(k, j)] - w12k).abs());
                w[(k, j)] = w12k;
                w[(j, k)] = w12k;
                betas[(k, j)] = beta[k];
            }
        }
        if max_delta < tol * off_scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "graphical lasso".into(),
            iterations: max_sweeps,
        });
    }

    // recover the precision matrix column by column
    let mut theta: RealMatrix = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut quad = 0.0;
        for k in 0..d {
            if k != j {
                quad += w[(k, j)] * betas[(k, j)];
            }
        }
        let tjj = 1.0 / (w[(j, j)] - quad);
        if !tjj.is_finite() || tjj <= 0.0 {
            return Err(Error::NotPositiveDefinite(
                "glasso precision diagonal".into(),
            ));
        }
        theta[(j, j)] = tjj;
        for k in 0..d {
            if k != j {
                theta[(k, j)] = -betas[(k, j)] * tjj;
            }
        }
    }
    // symmetrize; exact zeros stay zero because both halves are thresholded
    let theta = {
        let mut t = theta.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (theta[(i, j)] + theta[(j, i)]);
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        t
    };
    Ok(GlassoSolution {
        precision: theta,
        covariance: w,
    })
}
