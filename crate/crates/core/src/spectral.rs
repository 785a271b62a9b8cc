//! Singular value decompositions, spectral functions and their derivatives.
//!
//! A matrix-valued spectral function acts on the singular values only:
//!
//! ```text
//! F(X) = V diag(Phi(Lambda)) U^T,      X = V diag(Lambda) U^T
//! ```
//!
//! Its directional derivative has the closed form
//!
//! ```text
//! D(X)[d] = V ( M[d_bar] + Gamma_S . P_S(d_bar) + Gamma_A . P_A(d_bar) ) U^T
//! d_bar   = V^T d U
//! ```
//!
//! where `M` carries the Jacobian of `Phi` on the diagonal, `P_S` / `P_A`
//! split `d_bar` into symmetric and antisymmetric parts (half weights outside
//! the leading `n x n` block), and `Gamma_S` / `Gamma_A` are divided
//! differences of `Phi`. [`spectral_deriv`] assembles every piece on the
//! full SVD and returns them for inspection; [`SpectralDerivative`] is the
//! same map evaluated on a thin SVD, which is what the solver uses.

use nalgebra::{DVector, SVD};

use crate::error::{Error, Result};
use crate::linops::Matrix;

/// Relative threshold under which two singular values count as equal.
pub const TIE_REL_TOL: f64 = 1e-9;

/// `1e-9 * max(1, Lambda_1)` for a descending spectrum.
pub fn tie_tolerance(lambda: &[f64]) -> f64 {
    TIE_REL_TOL * lambda.first().copied().unwrap_or(0.0).max(1.0)
}

/// Full SVD `X = V diag(lambda) U^T` with square orthogonal factors.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    /// `n1 x n1` left singular vectors.
    pub v: Matrix,
    /// `min(n1, n2)` singular values, descending.
    pub lambda: DVector<f64>,
    /// `n2 x n2` right singular vectors.
    pub u: Matrix,
}

/// Economy SVD: only the first `n = min(n1, n2)` singular vectors per side.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// `n1 x n`
    pub v: Matrix,
    pub lambda: DVector<f64>,
    /// `n2 x n`
    pub u: Matrix,
}

impl ThinSvd {
    pub fn recompose(&self) -> Matrix {
        scale_columns(&self.v, self.lambda.as_slice()) * self.u.transpose()
    }
}

impl SvdTriple {
    pub fn recompose(&self) -> Matrix {
        let n = self.lambda.len();
        let v = self.v.columns(0, n);
        let u = self.u.columns(0, n);
        scale_columns(&v.into_owned(), self.lambda.as_slice()) * u.transpose()
    }
}

fn check_finite(x: &Matrix) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{}x{} matrix has non-finite entries",
            x.nrows(),
            x.ncols()
        )))
    }
}

fn decompose(x: &Matrix, vectors: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    check_finite(x)?;
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("SVD of an empty matrix".into()));
    }
    let max_iters = 10_000 + 200 * rows.max(cols);
    SVD::try_new(x.clone(), vectors, vectors, 5.0 * f64::EPSILON, max_iters)
        .ok_or(Error::Decomposition { rows, cols })
}

/// Flip `col` so that its largest-magnitude entry (first one on ties) is
/// nonnegative. Returns whether it was flipped.
fn normalize_sign(m: &mut Matrix, col: usize) -> bool {
    let column = m.column(col);
    let mut best = 0;
    for (k, value) in column.iter().enumerate() {
        if value.abs() > column[best].abs() {
            best = k;
        }
    }
    if column[best] < 0.0 {
        m.column_mut(col).neg_mut();
        true
    } else {
        false
    }
}

/// Economy SVD with singular values sorted descending and the sign of each
/// singular pair fixed by the largest-magnitude entry of its left vector.
pub fn thin_svd(x: &Matrix) -> Result<ThinSvd> {
    let svd = decompose(x, true)?;
    let mut v = svd.u.expect("left vectors requested");
    let mut u = svd.v_t.expect("right vectors requested").transpose();
    let lambda = svd.singular_values.map(|s| s.max(0.0));
    for k in 0..lambda.len() {
        if normalize_sign(&mut v, k) {
            u.column_mut(k).neg_mut();
        }
    }
    Ok(ThinSvd { v, lambda, u })
}

/// Singular values only, descending.
pub fn singular_values(x: &Matrix) -> Result<DVector<f64>> {
    Ok(decompose(x, false)?.singular_values.map(|s| s.max(0.0)))
}

/// Extends an orthonormal `m x k` basis to an `m x m` orthogonal matrix.
/// The first `k` columns are returned unchanged.
fn complete_basis(basis: &Matrix) -> Matrix {
    let (m, k) = basis.shape();
    if k == m {
        return basis.clone();
    }
    let qr = nalgebra::linalg::QR::new(basis.clone());
    let mut q_t = Matrix::identity(m, m);
    qr.q_tr_mul(&mut q_t);
    let q = q_t.transpose();
    let mut out = Matrix::zeros(m, m);
    out.columns_mut(0, k).copy_from(basis);
    out.columns_mut(k, m - k).copy_from(&q.columns(k, m - k));
    for col in k..m {
        normalize_sign(&mut out, col);
    }
    out
}

/// Full SVD with square orthogonal factors.
///
/// The leading singular pairs follow the [`thin_svd`] sign convention; the
/// completing columns span the orthogonal complement and are sign-fixed the
/// same way.
pub fn full_svd(x: &Matrix) -> Result<SvdTriple> {
    let thin = thin_svd(x)?;
    Ok(SvdTriple {
        v: complete_basis(&thin.v),
        lambda: thin.lambda,
        u: complete_basis(&thin.u),
    })
}

fn scale_columns(m: &Matrix, scale: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (k, &s) in scale.iter().enumerate() {
        out.column_mut(k).scale_mut(s);
    }
    out
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 {
        Err(Error::Parameter(format!(
            "threshold must be nonnegative, got {gamma}"
        )))
    } else {
        Ok(())
    }
}

/// Component-wise soft-thresholding `max(0, 1 - gamma/|t_i|) t_i`, with
/// `t_i = 0` mapped to 0.
pub fn soft_threshold(t: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    Ok(t.iter().map(|&ti| shrink(ti, gamma)).collect())
}

#[inline]
fn shrink(t: f64, gamma: f64) -> f64 {
    if t.abs() <= gamma {
        0.0
    } else {
        t - gamma.copysign(t)
    }
}

/// Derivative of soft-thresholding at `t` in direction `d`: `d_i` on the
/// active set `|t_i| > gamma`, zero elsewhere (including the kink).
pub fn soft_threshold_deriv(t: &[f64], gamma: f64, d: &[f64]) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if t.len() != d.len() {
        return Err(Error::Dimension(format!(
            "point has length {}, direction has length {}",
            t.len(),
            d.len()
        )));
    }
    Ok(t.iter()
        .zip(d)
        .map(|(&ti, &di)| if ti.abs() <= gamma { 0.0 } else { di })
        .collect())
}

/// A symmetric map `Phi : R^n -> R^n` on singular values, together with its
/// directional derivative.
///
/// `phi` and `dphi` are only ever called on nonnegative, descending
/// spectra by this module; [`SpectralMap::phi_signed`] gives the odd
/// extension to arbitrary inputs.
pub trait SpectralMap: Sync {
    fn phi(&self, lambda: &[f64]) -> Vec<f64>;

    /// Directional derivative of `Phi` at `lambda` along `d`.
    fn dphi(&self, lambda: &[f64], d: &[f64]) -> Vec<f64>;

    /// Scalar potential `phi(lambda)` whose proximal map is `Phi`, if known.
    fn potential(&self, _lambda: &[f64]) -> Option<f64> {
        None
    }

    /// Jacobian of `Phi` at `lambda`, column `j` being `dphi(lambda, e_j)`.
    fn jacobian(&self, lambda: &[f64]) -> Matrix {
        let n = lambda.len();
        let mut jac = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.dphi(lambda, &e);
            jac.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        jac
    }

    /// `sign(lambda) . Phi(|lambda|)`.
    fn phi_signed(&self, lambda: &[f64]) -> Vec<f64> {
        let abs: Vec<f64> = lambda.iter().map(|l| l.abs()).collect();
        self.phi(&abs)
            .into_iter()
            .zip(lambda)
            .map(|(p, &l)| {
                if l < 0.0 {
                    -p
                } else if l == 0.0 {
                    0.0
                } else {
                    p
                }
            })
            .collect()
    }
}

/// `Phi = T_gamma`, the proximal map of `gamma ||.||_1`; lifts to the
/// proximal map of `gamma ||.||_*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftThreshold {
    gamma: f64,
}

impl SoftThreshold {
    pub fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl SpectralMap for SoftThreshold {
    fn phi(&self, lambda: &[f64]) -> Vec<f64> {
        lambda.iter().map(|&t| shrink(t, self.gamma)).collect()
    }

    fn dphi(&self, lambda: &[f64], d: &[f64]) -> Vec<f64> {
        soft_threshold_deriv(lambda, self.gamma, d).expect("lengths checked by caller")
    }

    fn potential(&self, lambda: &[f64]) -> Option<f64> {
        Some(self.gamma * lambda.iter().map(|l| l.abs()).sum::<f64>())
    }

    fn jacobian(&self, lambda: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_iterator(
            lambda.len(),
            lambda
                .iter()
                .map(|t| if t.abs() > self.gamma { 1.0 } else { 0.0 }),
        ))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl SpectralMap for Identity {
    fn phi(&self, lambda: &[f64]) -> Vec<f64> {
        lambda.to_vec()
    }

    fn dphi(&self, _lambda: &[f64], d: &[f64]) -> Vec<f64> {
        d.to_vec()
    }

    fn jacobian(&self, lambda: &[f64]) -> Matrix {
        Matrix::identity(lambda.len(), lambda.len())
    }
}

/// A scalar function applied to each singular value.
pub struct Elementwise<F, G> {
    f: F,
    df: G,
}

impl<F, G> Elementwise<F, G>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    pub fn new(f: F, df: G) -> Self {
        Self { f, df }
    }
}

impl<F, G> SpectralMap for Elementwise<F, G>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    fn phi(&self, lambda: &[f64]) -> Vec<f64> {
        lambda.iter().map(|&l| (self.f)(l)).collect()
    }

    fn dphi(&self, lambda: &[f64], d: &[f64]) -> Vec<f64> {
        lambda
            .iter()
            .zip(d)
            .map(|(&l, &di)| (self.df)(l) * di)
            .collect()
    }

    fn jacobian(&self, lambda: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_iterator(
            lambda.len(),
            lambda.iter().map(|&l| (self.df)(l)),
        ))
    }
}

/// `F(X) = V diag(Phi(Lambda)) U^T`.
pub fn spectral_apply<M: SpectralMap + ?Sized>(x: &Matrix, map: &M) -> Result<Matrix> {
    let svd = thin_svd(x)?;
    let phi = map.phi(svd.lambda.as_slice());
    Ok(scale_columns(&svd.v, &phi) * svd.u.transpose())
}

/// Proximal map of `gamma ||.||_*`: soft-thresholds the singular values.
pub fn prox_nuclear(x: &Matrix, gamma: f64) -> Result<Matrix> {
    spectral_apply(x, &SoftThreshold::new(gamma)?)
}

pub fn nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(singular_values(x)?.sum())
}

/// Spectrum and Jacobian of `Phi` extended by zeros past index `n`, used
/// to fill `Gamma_S` and `Gamma_A`.
struct DividedDifferences<'a> {
    lambda: &'a [f64],
    phi: &'a [f64],
    jac: &'a Matrix,
    tol: f64,
}

impl DividedDifferences<'_> {
    /// `(Gamma_S, Gamma_A)` at `(i, j)`.
    ///
    /// Indices past `n` carry `Lambda = Phi = 0`. Where the tie branch needs
    /// a Jacobian entry at such an index, the diagonal entry of the in-range
    /// index stands in for it (the padded value behaves like a zero singular
    /// value) and the cross term is zero.
    fn at(&self, i: usize, j: usize) -> (f64, f64) {
        if i == j {
            return (0.0, 0.0);
        }
        let n = self.lambda.len();
        let (li, fi) = if i < n {
            (self.lambda[i], self.phi[i])
        } else {
            (0.0, 0.0)
        };
        let (lj, fj) = if j < n {
            (self.lambda[j], self.phi[j])
        } else {
            (0.0, 0.0)
        };
        let tie = || match (i < n, j < n) {
            (true, true) => self.jac[(i, i)] - self.jac[(i, j)],
            (true, false) => self.jac[(i, i)],
            (false, _) => self.jac[(j, j)],
        };
        let gs = if (li - lj).abs() > self.tol {
            (fi - fj) / (li - lj)
        } else {
            tie()
        };
        let ga = if li > self.tol || lj > self.tol {
            (fi + fj) / (li + lj)
        } else {
            tie()
        };
        (gs, ga)
    }
}

/// Every intermediate of one [`spectral_deriv`] evaluation, all `n1 x n2`.
#[derive(Debug, Clone)]
pub struct SpectralDerivWorkspace {
    pub delta_bar: Matrix,
    pub sym_part: Matrix,
    pub antisym_part: Matrix,
    pub gamma_s: Matrix,
    pub gamma_a: Matrix,
    pub m_term: Matrix,
}

/// Directional derivative `D(X)[delta]` of `X -> V diag(Phi(Lambda)) U^T`,
/// assembled term by term on the full SVD.
pub fn spectral_deriv<M: SpectralMap + ?Sized>(
    x: &Matrix,
    map: &M,
    delta: &Matrix,
) -> Result<(Matrix, SpectralDerivWorkspace)> {
    if x.shape() != delta.shape() {
        return Err(Error::Dimension(format!(
            "point is {}x{}, direction is {}x{}",
            x.nrows(),
            x.ncols(),
            delta.nrows(),
            delta.ncols()
        )));
    }
    check_finite(delta)?;
    let (n1, n2) = x.shape();
    let svd = full_svd(x)?;
    let n = svd.lambda.len();
    let lambda = svd.lambda.as_slice();
    let phi = map.phi(lambda);
    let jac = map.jacobian(lambda);
    let diffs = DividedDifferences {
        lambda,
        phi: &phi,
        jac: &jac,
        tol: tie_tolerance(lambda),
    };

    let delta_bar = svd.v.transpose() * delta * &svd.u;
    let mut sym_part = Matrix::zeros(n1, n2);
    let mut antisym_part = Matrix::zeros(n1, n2);
    let mut gamma_s = Matrix::zeros(n1, n2);
    let mut gamma_a = Matrix::zeros(n1, n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let y = delta_bar[(i, j)];
            if i < n && j < n {
                let yt = delta_bar[(j, i)];
                sym_part[(i, j)] = 0.5 * (y + yt);
                antisym_part[(i, j)] = 0.5 * (y - yt);
            } else {
                sym_part[(i, j)] = 0.5 * y;
                antisym_part[(i, j)] = 0.5 * y;
            }
            let (gs, ga) = diffs.at(i, j);
            gamma_s[(i, j)] = gs;
            gamma_a[(i, j)] = ga;
        }
    }

    let diag: Vec<f64> = (0..n).map(|k| delta_bar[(k, k)]).collect();
    let dphi = map.dphi(lambda, &diag);
    let mut m_term = Matrix::zeros(n1, n2);
    for (k, value) in dphi.into_iter().enumerate() {
        m_term[(k, k)] = value;
    }

    let inner = &m_term + gamma_s.component_mul(&sym_part) + gamma_a.component_mul(&antisym_part);
    let out = &svd.v * inner * svd.u.transpose();
    Ok((
        out,
        SpectralDerivWorkspace {
            delta_bar,
            sym_part,
            antisym_part,
            gamma_s,
            gamma_a,
            m_term,
        },
    ))
}

/// `D(X)[.]` frozen at one point, evaluated on the thin SVD.
///
/// The blocks of `V^T delta U` past the leading `n x n` block only ever see
/// the coefficient `Phi_k / Lambda_k` (or its tie value), so the completing
/// singular vectors enter through the projector `I - V V^T` (or
/// `I - U U^T`) and are never formed.
#[derive(Debug, Clone)]
pub struct SpectralDerivative {
    v: Matrix,
    u: Matrix,
    jac: Matrix,
    gamma_s: Matrix,
    gamma_a: Matrix,
    outer: DVector<f64>,
}

impl SpectralDerivative {
    pub fn new<M: SpectralMap + ?Sized>(svd: &ThinSvd, map: &M) -> Self {
        let n = svd.lambda.len();
        let lambda = svd.lambda.as_slice();
        let phi = map.phi(lambda);
        let jac = map.jacobian(lambda);
        let diffs = DividedDifferences {
            lambda,
            phi: &phi,
            jac: &jac,
            tol: tie_tolerance(lambda),
        };
        let mut gamma_s = Matrix::zeros(n, n);
        let mut gamma_a = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                let (gs, ga) = diffs.at(i, j);
                gamma_s[(i, j)] = gs;
                gamma_a[(i, j)] = ga;
            }
        }
        let outer = DVector::from_fn(n, |k, _| {
            let (gs, ga) = diffs.at(n, k);
            0.5 * (gs + ga)
        });
        Self {
            v: svd.v.clone(),
            u: svd.u.clone(),
            jac,
            gamma_s,
            gamma_a,
            outer,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.v.nrows(), self.u.nrows())
    }

    pub fn apply(&self, delta: &Matrix) -> Result<Matrix> {
        let (n1, n2) = self.shape();
        if delta.shape() != (n1, n2) {
            return Err(Error::Dimension(format!(
                "derivative is at a {n1}x{n2} point, direction is {}x{}",
                delta.nrows(),
                delta.ncols()
            )));
        }
        let n = self.outer.len();
        let v_t = self.v.transpose();
        let u_t = self.u.transpose();

        if n1 >= n2 {
            let du = delta * &self.u;
            let bar = &v_t * &du;
            let mut out = &self.v * self.core(&bar) * &u_t;
            if n1 > n {
                let mut rest = du - &self.v * &bar;
                for k in 0..n {
                    rest.column_mut(k).scale_mut(self.outer[k]);
                }
                out += rest * &u_t;
            }
            Ok(out)
        } else {
            let vd = &v_t * delta;
            let bar = &vd * &self.u;
            let mut rest = vd - &bar * &u_t;
            for k in 0..n {
                rest.row_mut(k).scale_mut(self.outer[k]);
            }
            Ok(&self.v * (self.core(&bar) * &u_t + rest))
        }
    }

    fn core(&self, bar: &Matrix) -> Matrix {
        let n = bar.nrows();
        let diag = DVector::from_fn(n, |k, _| bar[(k, k)]);
        let m = &self.jac * diag;
        Matrix::from_fn(n, n, |i, j| {
            if i == j {
                m[i]
            } else {
                let (y, yt) = (bar[(i, j)], bar[(j, i)]);
                self.gamma_s[(i, j)] * 0.5 * (y + yt) + self.gamma_a[(i, j)] * 0.5 * (y - yt)
            }
        })
    }
}

/// First-order variation of the SVD of a square matrix.
#[derive(Debug, Clone)]
pub struct SvdDerivative {
    pub d_lambda: DVector<f64>,
    pub d_v: Matrix,
    pub d_u: Matrix,
    pub iota_v: Matrix,
    pub iota_u: Matrix,
}

/// Derivative of `X -> (V, Lambda, U)` along `delta` for square `X` with
/// distinct singular values.
///
/// `dV = V iota_V`, `dU = U iota_U`, with `iota_V`, `iota_U` antisymmetric
/// and obtained from the 2x2 systems coupling entries `(i, j)` and `(j, i)`
/// of `V^T delta U`.
pub fn svd_deriv(x: &Matrix, delta: &Matrix) -> Result<SvdDerivative> {
    let (n, m) = x.shape();
    if n != m {
        return Err(Error::Dimension(format!(
            "SVD derivative needs a square matrix, got {n}x{m}"
        )));
    }
    if delta.shape() != x.shape() {
        return Err(Error::Dimension(format!(
            "point is {n}x{n}, direction is {}x{}",
            delta.nrows(),
            delta.ncols()
        )));
    }
    let svd = full_svd(x)?;
    let lambda = svd.lambda.as_slice();
    let tol = 10.0 * tie_tolerance(lambda);
    for k in 1..n {
        if lambda[k - 1] - lambda[k] <= tol {
            return Err(Error::Degenerate {
                i: k - 1,
                j: k,
                tol,
            });
        }
    }

    let bar = svd.v.transpose() * delta * &svd.u;
    let d_lambda = DVector::from_fn(n, |k, _| bar[(k, k)]);
    let mut iota_v = Matrix::zeros(n, n);
    let mut iota_u = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i == j {
                continue;
            }
            let (li, lj) = (lambda[i], lambda[j]);
            let denom = lj * lj - li * li;
            iota_v[(i, j)] = (lj * bar[(i, j)] + li * bar[(j, i)]) / denom;
            iota_u[(i, j)] = (li * bar[(i, j)] + lj * bar[(j, i)]) / denom;
        }
    }
    Ok(SvdDerivative {
        d_lambda,
        d_v: &svd.v * &iota_v,
        d_u: &svd.u * &iota_u,
        iota_v,
        iota_u,
    })
}
