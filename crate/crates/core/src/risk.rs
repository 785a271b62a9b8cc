//! Stein's unbiased risk estimate and the divergence it needs.
//!
//! For `y = A(X0) + w`, `w ~ N(0, sigma^2 I_P)` and `mu(y) = A(X(y))`,
//!
//! ```text
//! SURE(y) = ||y - mu(y)||^2 - P sigma^2 + 2 sigma^2 div mu(y)
//! ```
//!
//! is unbiased for the prediction risk `E ||mu(y) - A(X0)||^2`. The
//! divergence is estimated from the solver's derivative tracks with
//! Gaussian probes, `div mu ~ (1/k) sum_i <A(xi_i), delta_i>`. The brute
//! force finite-difference divergence and a Monte-Carlo prediction risk are
//! provided as oracles.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linops::{LinearOperator, Matrix, ObsVector};
use crate::rng::{gaussian_vector, trial_rng};
use crate::solver::{solve, solve_from, FbConfig, FbState, SolveResult};

/// Singular values above this fraction of the largest one count toward the
/// rank.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Largest `P` for which [`divergence_exact_fd`] will run.
pub const FD_MAX_OBS: usize = 200;

/// One point of a risk curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SureReport {
    pub lambda: f64,
    /// `||y - mu(y)||^2`
    pub residual_sq: f64,
    pub divergence: f64,
    pub sure: f64,
    pub k_probes: usize,
    pub rank: usize,
    /// `||X(y) - X0||_F / ||X0||_F`, when the ground truth is known.
    pub rel_error: Option<f64>,
    /// `||A(X(y)) - A(X0)||^2`, when the ground truth is known.
    pub pred_error_sq: Option<f64>,
    pub iters: usize,
    pub converged: bool,
    pub num_obs: usize,
    pub sigma: f64,
}

impl SureReport {
    /// Builds the report for a finished solve. `probes` must be the
    /// directions the solver's derivative tracks were driven with.
    pub fn from_solution<L: LinearOperator + ?Sized>(
        lambda: f64,
        y: &ObsVector,
        op: &L,
        sigma: f64,
        result: &SolveResult,
        probes: &[ObsVector],
        truth: Option<&Matrix>,
    ) -> Result<Self> {
        let mu = op.apply(&result.x)?;
        let divergence = divergence_estimate(op, &result.xi, probes)?;
        let sure = sure_value(y, &mu, sigma, divergence)?;
        let (rel_error, pred_error_sq) = match truth {
            Some(x0) => {
                let norm = x0.norm();
                let rel = if norm > 0.0 {
                    (&result.x - x0).norm() / norm
                } else {
                    f64::NAN
                };
                (Some(rel), Some((&mu - op.apply(x0)?).norm_squared()))
            }
            None => (None, None),
        };
        Ok(Self {
            lambda,
            residual_sq: (y - &mu).norm_squared(),
            divergence,
            sure,
            k_probes: probes.len(),
            rank: numerical_rank(&result.spectrum),
            rel_error,
            pred_error_sq,
            iters: result.iters_run,
            converged: result.converged,
            num_obs: y.len(),
            sigma,
        })
    }

    /// `residual_sq - P sigma^2 + 2 sigma^2 divergence` from the stored
    /// fields.
    pub fn recomposed_sure(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.residual_sq - self.num_obs as f64 * s2 + 2.0 * s2 * self.divergence
    }
}

pub fn numerical_rank(spectrum: &DVector<f64>) -> usize {
    let top = spectrum.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    spectrum.iter().filter(|&&s| s > RANK_REL_TOL * top).count()
}

/// `(1/k) sum_i <A(xi_i), delta_i>`.
pub fn divergence_estimate<L: LinearOperator + ?Sized>(
    op: &L,
    xi: &[Matrix],
    probes: &[ObsVector],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Parameter(
            "divergence estimate needs at least one probe".into(),
        ));
    }
    if xi.len() != probes.len() {
        return Err(Error::Dimension(format!(
            "{} derivative tracks for {} probes",
            xi.len(),
            probes.len()
        )));
    }
    let mut total = 0.0;
    for (x, delta) in xi.iter().zip(probes) {
        let ax = op.apply(x)?;
        if ax.len() != delta.len() {
            return Err(Error::Dimension(format!(
                "probe has length {}, operator has {} observations",
                delta.len(),
                ax.len()
            )));
        }
        total += ax.dot(delta);
    }
    Ok(total / probes.len() as f64)
}

/// `||y - mu||^2 - P sigma^2 + 2 sigma^2 divergence`.
pub fn sure_value(y: &ObsVector, mu: &ObsVector, sigma: f64, divergence: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if y.len() != mu.len() {
        return Err(Error::Dimension(format!(
            "y has length {}, mu has length {}",
            y.len(),
            mu.len()
        )));
    }
    let s2 = sigma * sigma;
    Ok((y - mu).norm_squared() - y.len() as f64 * s2 + 2.0 * s2 * divergence)
}

/// Default finite-difference step: `1e-6 (1 + ||y||_inf)`.
pub fn default_fd_eps(y: &ObsVector) -> f64 {
    1e-6 * (1.0 + y.amax())
}

/// Brute-force divergence by central differences along every canonical
/// direction of `R^P`:
/// `sum_j (mu(y + eps e_j)_j - mu(y - eps e_j)_j) / (2 eps)`.
///
/// Every perturbed solve is warm-started from the solution at `y` and runs
/// to `cfg.fp_tol`; probes in `cfg` are ignored.
pub fn divergence_exact_fd<L: LinearOperator + ?Sized>(
    y: &ObsVector,
    op: &L,
    cfg: &FbConfig,
    eps: f64,
) -> Result<f64> {
    let p = op.num_obs();
    if p > FD_MAX_OBS {
        return Err(Error::SizeGuard {
            p,
            limit: FD_MAX_OBS,
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!(
            "step must be positive, got {eps}"
        )));
    }
    let cfg = FbConfig {
        num_probes: 0,
        ..cfg.clone()
    };
    let (rows, cols) = op.shape();
    let base = solve(y, &[], op, &cfg, &Matrix::zeros(rows, cols))?;

    let observe = |yy: &ObsVector, j: usize| -> Result<f64> {
        let res = solve_from(FbState::warm(base.x.clone(), vec![]), yy, &[], op, &cfg)?;
        Ok(op.apply(&res.x)?[j])
    };
    let terms: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut plus = y.clone();
            plus[j] += eps;
            let mut minus = y.clone();
            minus[j] -= eps;
            Ok((observe(&plus, j)? - observe(&minus, j)?) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Parameter(format!(
                "need at least two samples, got {}",
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            stderr: (var / n).sqrt(),
        })
    }
}

/// Noisy observations for Monte-Carlo trial `t`: `A(X0) + w_t`.
pub fn trial_observations<L: LinearOperator + ?Sized>(
    clean: &ObsVector,
    op: &L,
    sigma: f64,
    seed: u64,
    trial: u64,
) -> ObsVector {
    clean + gaussian_vector(&mut trial_rng(seed, trial), op.num_obs(), sigma)
}

/// Monte-Carlo prediction risk `E_w ||A(X(y)) - A(X0)||^2` over `trials`
/// independent noise draws on streams `2 + t`.
///
/// Trials may run concurrently; the reduction is always in trial order.
pub fn prediction_risk_mc<L: LinearOperator + ?Sized>(
    x0: &Matrix,
    op: &L,
    sigma: f64,
    cfg: &FbConfig,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if trials < 2 {
        return Err(Error::Parameter(format!(
            "need at least two trials, got {trials}"
        )));
    }
    let cfg = FbConfig {
        num_probes: 0,
        ..cfg.clone()
    };
    let clean = op.apply(x0)?;
    let (rows, cols) = op.shape();
    let samples: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let y = trial_observations(&clean, op, sigma, seed, t);
            let res = solve(&y, &[], op, &cfg, &Matrix::zeros(rows, cols))?;
            Ok((op.apply(&res.x)? - &clean).norm_squared())
        })
        .collect::<Result<_>>()?;
    McEstimate::from_samples(&samples)
}
