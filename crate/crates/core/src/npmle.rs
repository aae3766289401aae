//! Nonparametric maximum likelihood estimation of the mixing distribution
//! for whitened per-class mean coordinates, and the posterior-mean shrinkage
//! estimator it induces.
//!
//! Each coordinate mean z̄_j is modeled as N(m_j, 1/n_k) with m_j ~ G; G is
//! estimated on a fixed atom grid by maximizing the marginal log-likelihood
//! Σ_j log Σ_ℓ ω_ℓ φ(z̄_j; ν_ℓ, 1/n_k). All density work happens in log
//! space with log-sum-exp.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;
/// Weights below this after convergence are truncated and renormalized.
const WEIGHT_FLOOR: f64 = 1e-12;
/// Parallel chunking for the per-observation E-step; fixed so that the
/// reduction order (and therefore the float result) is schedule-independent.
const CHUNK: usize = 256;

/// Whitened per-class coordinate means z̄ with their sample count.
#[derive(Debug, Clone)]
pub struct ScaledMeanObservations {
    pub zbar: Vec<f64>,
    pub n_k: usize,
    pub class: usize,
}

impl ScaledMeanObservations {
    pub fn new(zbar: Vec<f64>, n_k: usize, class: usize) -> Result<Self> {
        if n_k == 0 {
            return Err(Error::Config("n_k must be at least 1".into()));
        }
        if zbar.is_empty() {
            return Err(Error::Config("zbar must be nonempty".into()));
        }
        if zbar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("scaled mean observations".into()));
        }
        Ok(Self { zbar, n_k, class })
    }

    /// Noise standard deviation of each coordinate mean, 1/sqrt(n_k).
    pub fn sigma(&self) -> f64 {
        1.0 / (self.n_k as f64).sqrt()
    }
}

/// Discrete mixing distribution {(ν_ℓ, ω_ℓ)}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingDistribution {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MixingDistribution {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let g = Self { atoms, weights };
        g.check()?;
        Ok(g)
    }

    pub fn point_mass(atom: f64) -> Self {
        Self {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.atoms.len() != self.weights.len() || self.atoms.is_empty() {
            return Err(Error::Schema(
                "mixing distribution atom/weight length mismatch".into(),
            ));
        }
        if !self.atoms.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Schema(
                "mixing atoms must be strictly increasing".into(),
            ));
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Schema("mixing weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Schema(format!("mixing weights sum to {total}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NpmleSolver {
    Em,
    FrankWolfe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NpmleConfig {
    pub grid_size: usize,
    /// Grid extension beyond the data range, in units of 1/sqrt(n_k).
    pub grid_padding: f64,
    pub max_iter: usize,
    /// Relative log-likelihood change at which iteration stops.
    pub tol: f64,
    pub solver: NpmleSolver,
}

impl Default for NpmleConfig {
    fn default() -> Self {
        Self {
            grid_size: 300,
            grid_padding: 1.0,
            max_iter: 1000,
            tol: 1e-8,
            solver: NpmleSolver::Em,
        }
    }
}

impl NpmleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted mixing distribution plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct NpmleFit {
    pub mixing: MixingDistribution,
    pub loglik: f64,
    /// Marginal log-likelihood after each iteration, for monotonicity audits.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Equally spaced atoms spanning the data range extended by
/// grid_padding·(1/sqrt(n_k)) on each side.
pub fn build_grid(obs: &ScaledMeanObservations, cfg: &NpmleConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sigma = obs.sigma();
    let min = obs.zbar.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = obs.zbar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = min - cfg.grid_padding * sigma;
    let mut hi = max + cfg.grid_padding * sigma;
    if hi - lo < f64::EPSILON * (1.0 + lo.abs()) {
        // constant data with zero padding: symmetric grid one sigma wide
        lo = min - sigma;
        hi = max + sigma;
    }
    let step = (hi - lo) / (cfg.grid_size - 1) as f64;
    Ok((0..cfg.grid_size).map(|l| lo + step * l as f64).collect())
}

/// log N(z; nu, 1/n_k) density.
fn log_phi(z: f64, nu: f64, n_k: f64) -> f64 {
    0.5 * n_k.ln() - 0.5 * LN_2PI - 0.5 * n_k * (z - nu) * (z - nu)
}

/// J×L matrix of log densities, row-major by observation.
fn log_density_matrix(obs: &ScaledMeanObservations, atoms: &[f64]) -> Vec<f64> {
    let n_k = obs.n_k as f64;
    let l = atoms.len();
    let mut out = vec![0.0; obs.zbar.len() * l];
    out.par_chunks_mut(CHUNK * l)
        .zip(obs.zbar.par_chunks(CHUNK))
        .for_each(|(rows, zs)| {
            for (row, &z) in rows.chunks_mut(l).zip(zs) {
                for (cell, &nu) in row.iter_mut().zip(atoms) {
                    *cell = log_phi(z, nu, n_k);
                }
            }
        });
    out
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

struct EStep {
    loglik: f64,
    /// Unnormalized new weights (sum of responsibilities per atom).
    resp_sums: Vec<f64>,
}

/// One pass over observations: marginal log-likelihood and per-atom
/// responsibility sums. Chunked in fixed order so the result is exactly
/// reproducible under any thread schedule.
fn e_step(log_dens: &[f64], log_w: &[f64], j_count: usize) -> EStep {
    let l = log_w.len();
    let partials: Vec<(f64, Vec<f64>)> = (0..j_count)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|js| {
            let mut ll = 0.0;
            let mut sums = vec![0.0; l];
            let mut terms = vec![0.0; l];
            for &j in js {
                let row = &log_dens[j * l..(j + 1) * l];
                let mut m = f64::NEG_INFINITY;
                for k in 0..l {
                    terms[k] = row[k] + log_w[k];
                    m = m.max(terms[k]);
                }
                let mut denom = 0.0;
                for t in terms.iter_mut() {
                    *t = (*t - m).exp();
                    denom += *t;
                }
                ll += m + denom.ln();
                for k in 0..l {
                    sums[k] += terms[k] / denom;
                }
            }
            (ll, sums)
        })
        .collect();
    let mut loglik = 0.0;
    let mut resp_sums = vec![0.0; l];
    for (ll, sums) in partials {
        loglik += ll;
        for (a, b) in resp_sums.iter_mut().zip(sums) {
            *a += b;
        }
    }
    EStep { loglik, resp_sums }
}

fn marginal_loglik(log_dens: &[f64], log_w: &[f64], j_count: usize) -> f64 {
    e_step(log_dens, log_w, j_count).loglik
}

/// Drops atoms whose weight fell below the floor and renormalizes.
fn truncate_weights(atoms: &[f64], weights: &[f64]) -> MixingDistribution {
    let mut kept_atoms = Vec::new();
    let mut kept_w = Vec::new();
    for (&a, &w) in atoms.iter().zip(weights) {
        if w > WEIGHT_FLOOR {
            kept_atoms.push(a);
            kept_w.push(w);
        }
    }
    if kept_w.is_empty() {
        // all mass collapsed below the floor simultaneously; keep the argmax
        let best = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        return MixingDistribution::point_mass(atoms[best]);
    }
    let total: f64 = kept_w.iter().sum();
    for w in kept_w.iter_mut() {
        *w /= total;
    }
    MixingDistribution {
        atoms: kept_atoms,
        weights: kept_w,
    }
}

/// Fits the mixing distribution on the fixed grid from `build_grid`.
///
/// EM from uniform weights; each iteration provably does not decrease the
/// marginal log-likelihood. On hitting max_iter the best iterate is
/// returned with `converged = false`.
pub fn fit_npmle(obs: &ScaledMeanObservations, cfg: &NpmleConfig) -> Result<NpmleFit> {
    let atoms = build_grid(obs, cfg)?;
    fit_npmle_on_grid(obs, &atoms, cfg)
}

/// As `fit_npmle` but with caller-supplied atoms.
pub fn fit_npmle_on_grid(
    obs: &ScaledMeanObservations,
    atoms: &[f64],
    cfg: &NpmleConfig,
) -> Result<NpmleFit> {
    cfg.validate()?;
    if atoms.len() < 2 {
        return Err(Error::Config("need at least 2 atoms".into()));
    }
    let j_count = obs.zbar.len();
    let l = atoms.len();
    let log_dens = log_density_matrix(obs, atoms);
    let mut weights = vec![1.0 / l as f64; l];

    match cfg.solver {
        NpmleSolver::Em => {
            let mut prev_ll = f64::NEG_INFINITY;
            let mut iterations = 0;
            let mut converged = false;
            let mut loglik = prev_ll;
            let mut loglik_trace = Vec::new();
            for iter in 0..cfg.max_iter {
                let log_w: Vec<f64> = weights
                    .iter()
                    .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
                    .collect();
                let step = e_step(&log_dens, &log_w, j_count);
                loglik = step.loglik;
                loglik_trace.push(loglik);
                weights = step.resp_sums.iter().map(|s| s / j_count as f64).collect();
                iterations = iter + 1;
                if prev_ll.is_finite() {
                    let rel = (loglik - prev_ll).abs() / prev_ll.abs().max(1.0);
                    if rel < cfg.tol {
                        converged = true;
                        break;
                    }
                }
                prev_ll = loglik;
            }
            Ok(NpmleFit {
                mixing: truncate_weights(atoms, &weights),
                loglik,
                loglik_trace,
                iterations,
                converged,
            })
        }
        NpmleSolver::FrankWolfe => fit_frank_wolfe(&log_dens, atoms, j_count, cfg),
    }
}

/// Frank–Wolfe (vertex-direction) solver: each step mixes toward the atom
/// with the largest gradient, with a golden-section line search on the step
/// size. Only improving steps are accepted, so the objective is monotone.
fn fit_frank_wolfe(
    log_dens: &[f64],
    atoms: &[f64],
    j_count: usize,
    cfg: &NpmleConfig,
) -> Result<NpmleFit> {
    let l = atoms.len();
    let mut weights = vec![1.0 / l as f64; l];
    let to_logw = |w: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
            .collect()
    };
    let mut loglik = marginal_loglik(log_dens, &to_logw(&weights), j_count);
    let mut loglik_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..cfg.max_iter {
        // gradient over atoms: d_l = sum_j phi_l(z_j) / f(z_j)
        let log_w = to_logw(&weights);
        let mut grad = vec![0.0; l];
        for j in 0..j_count {
            let row = &log_dens[j * l..(j + 1) * l];
            let fj = log_sum_exp(row.iter().zip(&log_w).map(|(&d, &w)| d + w));
            for k in 0..l {
                grad[k] += (row[k] - fj).exp();
            }
        }
        let best = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let eval = |alpha: f64| -> f64 {
            let mixed: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(k, &w)| (1.0 - alpha) * w + if k == best { alpha } else { 0.0 })
                .collect();
            marginal_loglik(log_dens, &to_logw(&mixed), j_count)
        };
        // golden-section search on [0, 1]
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.0, 1.0);
        let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
        let (mut f1, mut f2) = (eval(x1), eval(x2));
        for _ in 0..40 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = eval(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = eval(x1);
            }
        }
        let alpha = 0.5 * (a + b);
        let candidate = eval(alpha);
        iterations = iter + 1;
        if candidate <= loglik {
            converged = true;
            break;
        }
        for (k, w) in weights.iter_mut().enumerate() {
            *w = (1.0 - alpha) * *w + if k == best { alpha } else { 0.0 };
        }
        // EM reweighting pass after the atom-insertion step; both moves are
        // monotone in the likelihood and the hybrid shares EM's fixed point.
        let step = e_step(log_dens, &to_logw(&weights), j_count);
        for (w, s) in weights.iter_mut().zip(&step.resp_sums) {
            *w = s / j_count as f64;
        }
        let polished = marginal_loglik(log_dens, &to_logw(&weights), j_count);
        loglik_trace.push(polished);
        let rel = (polished - loglik) / loglik.abs().max(1.0);
        loglik = polished;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(NpmleFit {
        mixing: truncate_weights(atoms, &weights),
        loglik,
        loglik_trace,
        iterations,
        converged,
    })
}

/// Tweedie-type posterior means: m̂_j = Σ_ℓ ν_ℓ ω_ℓ φ(z_j; ν_ℓ) / Σ_ℓ ω_ℓ φ(z_j; ν_ℓ).
pub fn posterior_means(obs: &ScaledMeanObservations, g: &MixingDistribution) -> Result<Vec<f64>> {
    g.check()?;
    let n_k = obs.n_k as f64;
    let log_w: Vec<f64> = g
        .weights
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    obs.zbar
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let terms: Vec<f64> = g
                .atoms
                .iter()
                .zip(&log_w)
                .map(|(&nu, &lw)| lw + log_phi(z, nu, n_k))
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(Error::DegenerateDensity(j));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (&nu, &t) in g.atoms.iter().zip(&terms) {
                let e = (t - m).exp();
                num += nu * e;
                den += e;
            }
            if den == 0.0 || !den.is_finite() {
                return Err(Error::DegenerateDensity(j));
            }
            Ok(num / den)
        })
        .collect()
}
