//! Forward-backward splitting for nuclear-norm regularized least squares,
//! differentiated with respect to the observations.
//!
//! One step maps `(X, xi_1..xi_k)` to
//!
//! ```text
//! Xi      = X + tau A*(y - A X)
//! X+      = Prox_{tau lambda ||.||_*}(Xi)
//! zeta_i  = xi_i + tau A*(delta_i - A xi_i)
//! xi_i+   = dProx(Xi)[zeta_i]
//! ```
//!
//! so that `xi_i` tracks the derivative of the iterate along the probe
//! direction `delta_i`. The SVD of `Xi` is shared by the prox and every
//! derivative evaluation.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linops::{LinearOperator, Matrix, ObsVector};
use crate::spectral::{nuclear_norm, thin_svd, SoftThreshold, SpectralDerivative, SpectralMap};

/// Matrices with at least this many entries spread probe updates over the
/// rayon pool.
const PARALLEL_PROBES_MIN_ENTRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FbConfig {
    /// Step size; `tau * ||A*A||` must stay below 2.
    pub tau: f64,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `||X+ - X||_F / max(1, ||X+||_F)` drops to this.
    pub fp_tol: f64,
    pub num_probes: usize,
}

impl FbConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            tau: 1.0,
            lambda,
            max_iters: 5000,
            fp_tol: 1e-8,
            num_probes: 0,
        }
    }

    pub fn with_probes(mut self, k: usize) -> Self {
        self.num_probes = k;
        self
    }

    pub fn with_tol(mut self, fp_tol: f64) -> Self {
        self.fp_tol = fp_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate<L: LinearOperator + ?Sized>(&self, op: &L) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Parameter(format!(
                "step size must be positive, got {}",
                self.tau
            )));
        }
        let norm = op.operator_norm_sq();
        if self.tau * norm >= 2.0 {
            return Err(Error::Parameter(format!(
                "step size {} violates tau * ||A*A|| < 2 (||A*A|| = {norm})",
                self.tau
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "regularization weight must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "fp_tol must be positive, got {}",
                self.fp_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterate `X^l` together with its derivatives `xi^l_i` along each probe.
#[derive(Debug, Clone)]
pub struct FbState {
    pub x: Matrix,
    pub xi: Vec<Matrix>,
    pub iter: usize,
    pub fp_residual: f64,
}

impl FbState {
    /// Start at `x` with zero derivatives, valid whenever `x` does not
    /// depend on the observations.
    pub fn new(x: Matrix, num_probes: usize) -> Self {
        let (r, c) = x.shape();
        Self {
            xi: vec![Matrix::zeros(r, c); num_probes],
            x,
            iter: 0,
            fp_residual: f64::INFINITY,
        }
    }

    pub fn zeros(rows: usize, cols: usize, num_probes: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols), num_probes)
    }

    /// Warm start from a previous solution and its derivatives.
    pub fn warm(x: Matrix, xi: Vec<Matrix>) -> Self {
        Self {
            x,
            xi,
            iter: 0,
            fp_residual: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Matrix,
    pub xi: Vec<Matrix>,
    pub iters_run: usize,
    pub converged: bool,
    /// Objective at the starting point followed by one value per step.
    pub objective_history: Vec<f64>,
    pub fp_residual: f64,
    /// Singular values of `x`, descending.
    pub spectrum: DVector<f64>,
}

/// `1/2 ||y - A X||^2 + lambda ||X||_*`.
pub fn objective<L: LinearOperator + ?Sized>(
    x: &Matrix,
    y: &ObsVector,
    op: &L,
    lambda: f64,
) -> Result<f64> {
    let r = residual(x, y, op)?;
    Ok(0.5 * r.norm_squared() + lambda * nuclear_norm(x)?)
}

fn residual<L: LinearOperator + ?Sized>(x: &Matrix, y: &ObsVector, op: &L) -> Result<ObsVector> {
    let ax = op.apply(x)?;
    if ax.len() != y.len() {
        return Err(Error::Dimension(format!(
            "operator has {} observations, y has length {}",
            ax.len(),
            y.len()
        )));
    }
    Ok(y - ax)
}

/// Forward (gradient) half of a step: `X + tau A*(y - A X)`.
pub fn gradient_step<L: LinearOperator + ?Sized>(
    x: &Matrix,
    y: &ObsVector,
    op: &L,
    tau: f64,
) -> Result<Matrix> {
    let r = residual(x, y, op)?;
    Ok(x + op.adjoint(&r)? * tau)
}

struct Step {
    state: FbState,
    /// Singular values of the new iterate.
    spectrum: DVector<f64>,
}

fn step<L: LinearOperator + ?Sized>(
    state: &FbState,
    y: &ObsVector,
    probes: &[ObsVector],
    op: &L,
    cfg: &FbConfig,
) -> Result<Step> {
    if probes.len() != state.xi.len() {
        return Err(Error::Dimension(format!(
            "{} probes for {} derivative tracks",
            probes.len(),
            state.xi.len()
        )));
    }
    let tau = cfg.tau;
    let point = gradient_step(&state.x, y, op, tau)?;
    let svd = thin_svd(&point)?;
    let map = SoftThreshold::new(tau * cfg.lambda)?;
    let shrunk = map.phi(svd.lambda.as_slice());

    let mut x = svd.v.clone();
    for (k, &s) in shrunk.iter().enumerate() {
        x.column_mut(k).scale_mut(s);
    }
    let x = x * svd.u.transpose();

    let xi = if probes.is_empty() {
        Vec::new()
    } else {
        let plan = SpectralDerivative::new(&svd, &map);
        let update = |(xi, delta): (&Matrix, &ObsVector)| -> Result<Matrix> {
            let r = delta - op.apply(xi)?;
            let zeta = xi + op.adjoint(&r)? * tau;
            plan.apply(&zeta)
        };
        if x.len() >= PARALLEL_PROBES_MIN_ENTRIES {
            state
                .xi
                .par_iter()
                .zip(probes.par_iter())
                .map(update)
                .collect::<Result<Vec<_>>>()?
        } else {
            state
                .xi
                .iter()
                .zip(probes)
                .map(update)
                .collect::<Result<Vec<_>>>()?
        }
    };

    let diff = (&x - &state.x).norm();
    let fp_residual = diff / x.norm().max(1.0);
    Ok(Step {
        state: FbState {
            x,
            xi,
            iter: state.iter + 1,
            fp_residual,
        },
        spectrum: DVector::from_vec(shrunk),
    })
}

/// One forward-backward step with its derivative recursion.
pub fn fb_step<L: LinearOperator + ?Sized>(
    state: &FbState,
    y: &ObsVector,
    probes: &[ObsVector],
    op: &L,
    cfg: &FbConfig,
) -> Result<FbState> {
    Ok(step(state, y, probes, op, cfg)?.state)
}

/// Runs [`fb_step`] from `x_init` (with zero derivatives) until the
/// fixed-point residual reaches `cfg.fp_tol` or `cfg.max_iters` steps.
pub fn solve<L: LinearOperator + ?Sized>(
    y: &ObsVector,
    probes: &[ObsVector],
    op: &L,
    cfg: &FbConfig,
    x_init: &Matrix,
) -> Result<SolveResult> {
    solve_from(
        FbState::new(x_init.clone(), probes.len()),
        y,
        probes,
        op,
        cfg,
    )
}

/// Same as [`solve`] but starting from an arbitrary state, e.g. the
/// solution and derivatives of a neighbouring `lambda`.
pub fn solve_from<L: LinearOperator + ?Sized>(
    init: FbState,
    y: &ObsVector,
    probes: &[ObsVector],
    op: &L,
    cfg: &FbConfig,
) -> Result<SolveResult> {
    cfg.validate(op)?;
    if probes.len() != cfg.num_probes {
        return Err(Error::Parameter(format!(
            "config expects {} probes, got {}",
            cfg.num_probes,
            probes.len()
        )));
    }
    if init.x.shape() != op.shape() {
        return Err(Error::Dimension(format!(
            "initial point is {}x{}, operator acts on {}x{}",
            init.x.nrows(),
            init.x.ncols(),
            op.shape().0,
            op.shape().1
        )));
    }
    if init.xi.iter().any(|m| m.shape() != init.x.shape()) {
        return Err(Error::Dimension(
            "derivative tracks must match the iterate shape".into(),
        ));
    }
    for probe in probes {
        if probe.len() != op.num_obs() {
            return Err(Error::Dimension(format!(
                "probe has length {}, operator has {} observations",
                probe.len(),
                op.num_obs()
            )));
        }
    }

    let mut history = vec![objective(&init.x, y, op, cfg.lambda)?];
    let mut state = init;
    state.iter = 0;
    let mut spectrum = None;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let next = step(&state, y, probes, op, cfg)?;
        let data = 0.5 * residual(&next.state.x, y, op)?.norm_squared();
        history.push(data + cfg.lambda * next.spectrum.sum());
        state = next.state;
        spectrum = Some(next.spectrum);
        if state.fp_residual <= cfg.fp_tol {
            converged = true;
            break;
        }
    }
    let spectrum = match spectrum {
        Some(s) => s,
        None => crate::spectral::singular_values(&state.x)?,
    };
    Ok(SolveResult {
        iters_run: state.iter,
        converged,
        objective_history: history,
        fp_residual: state.fp_residual,
        spectrum,
        x: state.x,
        xi: state.xi,
    })
}
