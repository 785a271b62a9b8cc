//! Matrix-completion experiments: synthetic instances, noise calibration,
//! lambda sweeps with SURE, and their CSV / SVG outputs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linops::{LinearOperator, MaskOperator, Matrix, ObsVector};
use crate::obsfile::{format_g17, read_observations};
use crate::risk::{McEstimate, SureReport};
use crate::rng::{
    gaussian_probes, gaussian_vector, haar_orthogonal, sample_entries, stream_rng, trial_rng,
    STREAM_INSTANCE, STREAM_NOISE, STREAM_PROBES,
};
use crate::solver::{solve_from, FbConfig, FbState};
use crate::spectral::singular_values;

pub const CSV_HEADER: [&str; 9] = [
    "lambda",
    "sure",
    "pred_error_sq",
    "rel_error",
    "rank",
    "divergence",
    "residual_sq",
    "iters",
    "converged",
];

/// Default grid, relative to `||A*(y)||_op`.
pub const DEFAULT_GRID_REL: (f64, f64) = (1e-3, 1e1);
pub const DEFAULT_GRID_COUNT: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    /// `Lambda_k = 1/k`, `k = 1..min(n1, n2)`.
    InverseK,
    /// Leading singular values; padded with zeros up to `min(n1, n2)`.
    Custom(Vec<f64>),
}

impl Spectrum {
    /// Whitespace-separated nonnegative values.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (k, tok) in text.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: format!("value #{}: {e}", k + 1),
            })?;
            values.push(v);
        }
        Ok(Spectrum::Custom(values))
    }

    pub fn values(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Spectrum::InverseK => Ok((1..=n).map(|k| 1.0 / k as f64).collect()),
            Spectrum::Custom(v) => {
                if v.len() > n {
                    return Err(Error::Parameter(format!(
                        "{} singular values given for min(n1, n2) = {n}",
                        v.len()
                    )));
                }
                if v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::Parameter(
                        "singular values must be finite and nonnegative".into(),
                    ));
                }
                let mut out = v.clone();
                out.resize(n, 0.0);
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Pick `sigma` so the least-squares estimate has this expected relative
    /// error.
    LsRelError(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min < self.max && self.max.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda grid needs 0 < min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.count < 2 {
            return Err(Error::Parameter(format!(
                "lambda grid needs at least 2 points, got {}",
                self.count
            )));
        }
        Ok(())
    }

    /// Log-spaced values, ascending, endpoints exact.
    pub fn values(&self) -> Vec<f64> {
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let last = self.count - 1;
        (0..self.count)
            .map(|k| match k {
                0 => self.min,
                k if k == last => self.max,
                k => (lo + (hi - lo) * k as f64 / last as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub obs_fraction: f64,
    pub spectrum: Spectrum,
    /// Required for synthetic instances. With `input` set, an explicit
    /// sigma overrides the file header.
    pub noise: Option<NoiseLevel>,
    /// `None` selects the default grid relative to `||A*(y)||_op`.
    pub grid: Option<LambdaGrid>,
    pub probes: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub fp_tol: f64,
    pub tau: Option<f64>,
    /// Cold-start every grid point and run them concurrently.
    pub parallel: bool,
    /// Observed-entry file to use instead of a synthetic instance.
    pub input: Option<PathBuf>,
    pub out_csv: Option<PathBuf>,
    pub out_svg: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rows: 200,
            cols: 40,
            obs_fraction: 0.25,
            spectrum: Spectrum::InverseK,
            noise: Some(NoiseLevel::LsRelError(0.9)),
            grid: None,
            probes: 4,
            seed: 0,
            max_iters: 5000,
            fp_tol: 1e-8,
            tau: None,
            parallel: false,
            input: None,
            out_csv: None,
            out_svg: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() {
            if self.rows == 0 || self.cols == 0 {
                return Err(Error::Parameter("rows and cols must be positive".into()));
            }
            if !(self.obs_fraction > 0.0 && self.obs_fraction <= 1.0) {
                return Err(Error::Parameter(format!(
                    "obs_fraction must lie in (0, 1], got {}",
                    self.obs_fraction
                )));
            }
            match self.noise {
                None => {
                    return Err(Error::Parameter(
                        "synthetic instances need either a target LS error or sigma".into(),
                    ))
                }
                Some(NoiseLevel::LsRelError(r)) if !(r > 0.0 && r < 1.0) => {
                    return Err(Error::Parameter(format!(
                        "target LS relative error must lie in (0, 1), got {r}"
                    )))
                }
                _ => {}
            }
        } else if let Some(NoiseLevel::LsRelError(_)) = self.noise {
            return Err(Error::Parameter(
                "LS-error calibration needs the ground truth; give sigma with --input".into(),
            ));
        }
        if let Some(NoiseLevel::Sigma(s)) = self.noise {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!(
                    "sigma must be nonnegative, got {s}"
                )));
            }
        }
        if let Some(grid) = &self.grid {
            grid.validate()?;
        }
        if self.probes == 0 {
            return Err(Error::Parameter("at least one probe is needed".into()));
        }
        if !(self.fp_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Parameter(
                "fp_tol and max_iters must be positive".into(),
            ));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    fn solver_template(&self) -> FbConfig {
        FbConfig {
            tau: self.tau.unwrap_or(1.0),
            lambda: 0.0,
            max_iters: self.max_iters,
            fp_tol: self.fp_tol,
            num_probes: self.probes,
        }
    }
}

/// A recovery problem; `x0` is known for synthetic instances only.
#[derive(Debug, Clone)]
pub struct Instance {
    pub x0: Option<Matrix>,
    pub op: MaskOperator,
    pub y: ObsVector,
    pub sigma: f64,
}

/// Ground truth with the given spectrum and Haar-random singular vectors.
pub fn synthesize_truth(
    rows: usize,
    cols: usize,
    spectrum: &Spectrum,
    seed: u64,
) -> Result<Matrix> {
    draw_truth(&mut stream_rng(seed, STREAM_INSTANCE), rows, cols, spectrum)
}

fn draw_truth<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    spectrum: &Spectrum,
) -> Result<Matrix> {
    let n = rows.min(cols);
    let values = spectrum.values(n)?;
    let v = haar_orthogonal(rng, rows);
    let u = haar_orthogonal(rng, cols);
    let mut left = v.columns(0, n).into_owned();
    for (k, s) in values.iter().enumerate() {
        left.column_mut(k).scale_mut(*s);
    }
    Ok(left * u.columns(0, n).transpose())
}

/// Draws `X0`, the mask, `sigma` and `y = A(X0) + w`.
///
/// The truth and the mask come from the instance stream, the noise from
/// stream 0.
pub fn synthesize_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    cfg.validate()?;
    let (rows, cols) = (cfg.rows, cfg.cols);
    let p = (cfg.obs_fraction * (rows * cols) as f64).floor() as usize;
    if p == 0 {
        return Err(Error::Parameter(format!(
            "obs_fraction {} observes no entry of a {rows}x{cols} matrix",
            cfg.obs_fraction
        )));
    }
    // Truth first, then the mask, on the same stream.
    let mut rng = stream_rng(cfg.seed, STREAM_INSTANCE);
    let x0 = draw_truth(&mut rng, rows, cols, &cfg.spectrum)?;
    let op = MaskOperator::new(rows, cols, sample_entries(&mut rng, rows, cols, p))?;

    let sigma = match cfg.noise.expect("validated") {
        NoiseLevel::Sigma(s) => s,
        NoiseLevel::LsRelError(rho) => calibrate_sigma(&x0, &op, rho)?,
    };
    let noise = gaussian_vector(&mut stream_rng(cfg.seed, STREAM_NOISE), p, sigma);
    let y = op.apply(&x0)? + noise;
    Ok(Instance {
        x0: Some(x0),
        op,
        y,
        sigma,
    })
}

/// Noise level at which the least-squares estimate `A*(y)` has expected
/// squared relative error `target^2`:
///
/// ```text
/// E ||A*(y) - X0||^2 = sum_unobserved X0^2 + P sigma^2
/// ```
pub fn calibrate_sigma(x0: &Matrix, op: &MaskOperator, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Parameter(format!(
            "target relative error must lie in (0, 1), got {target}"
        )));
    }
    if op.num_obs() == 0 {
        return Err(Error::Parameter("no observed entries".into()));
    }
    let total = x0.norm_squared();
    let observed: f64 = op.apply(x0)?.norm_squared();
    let unobserved = (total - observed).max(0.0);
    let budget = target * target * total - unobserved;
    // At the minimum the subtraction leaves only rounding error.
    if budget.abs() <= 1e-12 * total {
        return Ok(0.0);
    }
    if budget < 0.0 {
        return Err(Error::Calibration {
            target,
            min_rel_error: (unobserved / total).sqrt(),
        });
    }
    Ok((budget / op.num_obs() as f64).sqrt())
}

/// Monte-Carlo mean of `||A*(y) - X0||_F / ||X0||_F` over `trials` noise
/// draws on the trial streams.
pub fn ls_relative_error_mc(
    x0: &Matrix,
    op: &MaskOperator,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    let clean = op.apply(x0)?;
    let norm = x0.norm();
    let samples: Vec<f64> = (0..trials as u64)
        .map(|t| {
            let y = &clean + gaussian_vector(&mut trial_rng(seed, t), op.num_obs(), sigma);
            Ok((op.adjoint(&y)? - x0).norm() / norm)
        })
        .collect::<Result<_>>()?;
    McEstimate::from_samples(&samples)
}

/// `[1e-3, 1e1] * ||A*(y)||_op` with 30 log-spaced points.
pub fn default_grid(op: &MaskOperator, y: &ObsVector) -> Result<LambdaGrid> {
    let scale = singular_values(&op.adjoint(y)?)?[0];
    if !(scale > 0.0) {
        return Err(Error::Parameter(
            "observations are all zero; no default lambda grid".into(),
        ));
    }
    Ok(LambdaGrid {
        min: DEFAULT_GRID_REL.0 * scale,
        max: DEFAULT_GRID_REL.1 * scale,
        count: DEFAULT_GRID_COUNT,
    })
}

/// Solver and probe settings for a sweep over fixed `lambdas`.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub lambdas: Vec<f64>,
    pub solver: FbConfig,
    pub seed: u64,
    pub parallel: bool,
}

/// SURE (and, with a known truth, the oracle errors) along `lambdas`.
///
/// The `k` probes come from stream 1 and are shared by every grid point.
/// Sequential sweeps warm-start each point from the previous solution and
/// its derivative tracks; parallel sweeps start every point from zero.
/// A point that hits `max_iters` is reported with `converged = false`.
pub fn run_sweep(instance: &Instance, settings: &SweepSettings) -> Result<Vec<SureReport>> {
    if !(instance.sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "SURE needs a positive noise level, got sigma = {}",
            instance.sigma
        )));
    }
    let op = &instance.op;
    let k = settings.solver.num_probes;
    let probes = gaussian_probes(
        &mut stream_rng(settings.seed, STREAM_PROBES),
        op.num_obs(),
        k,
    );
    let (rows, cols) = op.shape();
    let at = |lambda: f64, init: FbState| -> Result<(SureReport, FbState)> {
        let cfg = FbConfig {
            lambda,
            ..settings.solver.clone()
        };
        let res = solve_from(init, &instance.y, &probes, op, &cfg)?;
        let report = SureReport::from_solution(
            lambda,
            &instance.y,
            op,
            instance.sigma,
            &res,
            &probes,
            instance.x0.as_ref(),
        )?;
        Ok((report, FbState::warm(res.x, res.xi)))
    };

    if settings.parallel {
        settings
            .lambdas
            .par_iter()
            .map(|&lambda| Ok(at(lambda, FbState::zeros(rows, cols, k))?.0))
            .collect()
    } else {
        let mut state = FbState::zeros(rows, cols, k);
        let mut reports = Vec::with_capacity(settings.lambdas.len());
        for &lambda in &settings.lambdas {
            let (report, next) = at(lambda, state)?;
            reports.push(report);
            state = next;
        }
        Ok(reports)
    }
}

/// Loads or synthesizes the instance described by `cfg`.
pub fn load_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    cfg.validate()?;
    match &cfg.input {
        Some(path) => {
            let file = File::open(path)?;
            let entries = read_observations(BufReader::new(file), &path.display().to_string())?;
            let sigma = match cfg.noise {
                Some(NoiseLevel::Sigma(s)) => s,
                _ => entries.sigma,
            };
            Ok(Instance {
                x0: None,
                op: entries.op,
                y: entries.y,
                sigma,
            })
        }
        None => synthesize_instance(cfg),
    }
}

/// End-to-end sweep: instance, grid, SURE per grid point, then the CSV and
/// SVG outputs requested in `cfg`.
pub fn lambda_sweep(cfg: &ExperimentConfig) -> Result<Vec<SureReport>> {
    let instance = load_instance(cfg)?;
    let grid = match cfg.grid {
        Some(g) => g,
        None => default_grid(&instance.op, &instance.y)?,
    };
    let settings = SweepSettings {
        lambdas: grid.values(),
        solver: cfg.solver_template(),
        seed: cfg.seed,
        parallel: cfg.parallel,
    };
    let reports = run_sweep(&instance, &settings)?;
    if let Some(path) = &cfg.out_csv {
        write_csv(BufWriter::new(File::create(path)?), &reports)?;
    }
    if let Some(path) = &cfg.out_svg {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(render_svg(&reports).as_bytes())?;
        out.flush()?;
    }
    Ok(reports)
}

/// Minimum-SURE report among converged rows; ties go to the larger lambda.
pub fn select_lambda(reports: &[SureReport]) -> Result<(f64, SureReport)> {
    let mut best: Option<&SureReport> = None;
    for r in reports.iter().filter(|r| r.converged && r.sure.is_finite()) {
        best = match best {
            None => Some(r),
            Some(b) if r.sure < b.sure || (r.sure == b.sure && r.lambda > b.lambda) => Some(r),
            keep => keep,
        };
    }
    let best = best.ok_or(Error::Selection)?;
    Ok((best.lambda, best.clone()))
}

fn opt_g17(v: Option<f64>) -> String {
    v.map(format_g17).unwrap_or_default()
}

pub fn write_csv<W: Write>(out: W, reports: &[SureReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            format_g17(r.lambda),
            format_g17(r.sure),
            opt_g17(r.pred_error_sq),
            opt_g17(r.rel_error),
            r.rank.to_string(),
            format_g17(r.divergence),
            format_g17(r.residual_sq),
            r.iters.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `values - min(values)`, ignoring non-finite entries for the minimum.
pub fn shift_to_zero(values: &[f64]) -> Vec<f64> {
    let min = values
        .iter()
        .cloned()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    values.iter().map(|v| v - min).collect()
}

/// Index of the smallest finite value (first one on ties).
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (k, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
}

/// Static line chart of SURE and the true prediction error against
/// `log10(lambda)`, each curve shifted so its minimum sits at zero.
pub fn render_svg(reports: &[SureReport]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;

    let xs: Vec<f64> = reports.iter().map(|r| r.lambda.log10()).collect();
    let sure = shift_to_zero(&reports.iter().map(|r| r.sure).collect::<Vec<_>>());
    let truth: Option<Vec<f64>> = reports
        .iter()
        .map(|r| r.pred_error_sq)
        .collect::<Option<Vec<_>>>()
        .map(|v| shift_to_zero(&v));

    let finite_max = |v: &[f64]| {
        v.iter()
            .cloned()
            .filter(|x| x.is_finite())
            .fold(0.0, f64::max)
    };
    let mut y_max = finite_max(&sure);
    if let Some(t) = &truth {
        y_max = y_max.max(finite_max(t));
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    let (x_min, x_max) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - y / y_max * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT},{TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    let first_decade = x_min.ceil() as i64;
    let last_decade = x_max.floor() as i64;
    for d in first_decade..=last_decade {
        let x = px(d as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#,
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 20.0
        );
    }
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3e}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">lambda</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );

    let mut curve = |values: &[f64], color: &str, label: &str, slot: usize| {
        let points: Vec<String> = xs
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(&x, &v)| format!("{:.2},{:.2}", px(x), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = TOP + 15.0 + 18.0 * slot as f64;
        let lx = W - RIGHT - 170.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            lx + 25.0,
            lx + 30.0,
            ly + 4.0
        );
    };
    curve(&sure, "#d62728", "SURE (shifted)", 0);
    if let Some(t) = &truth {
        curve(t, "#1f77b4", "prediction error (shifted)", 1);
    }
    svg.push_str("</svg>\n");
    svg
}
