//! `matsure`: sweep lambda on a matrix-completion problem, estimate the
//! prediction risk with SURE at every point, and report the selected lambda.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when the requested
//! least-squares error cannot be reached, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use matsure::experiment::{
    lambda_sweep, select_lambda, ExperimentConfig, LambdaGrid, NoiseLevel, Spectrum,
};
use matsure::Error;

#[derive(Debug, Parser)]
#[command(
    name = "matsure",
    version,
    about = "SURE-driven lambda selection for nuclear-norm matrix completion"
)]
#[command(group(ArgGroup::new("noise").args(["ls_rel_error", "sigma"])))]
struct Args {
    #[arg(long, default_value_t = 200)]
    rows: usize,

    #[arg(long, default_value_t = 40)]
    cols: usize,

    /// Fraction of entries observed.
    #[arg(long, default_value_t = 0.25)]
    obs_fraction: f64,

    /// `inverse_k`, or a file of whitespace-separated singular values.
    #[arg(long, default_value = "inverse_k")]
    spectrum: String,

    /// Calibrate sigma so the least-squares estimate has this relative error.
    #[arg(long)]
    ls_rel_error: Option<f64>,

    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,

    /// Smallest lambda (absolute). Defaults to 1e-3 * ||A*(y)||_op.
    #[arg(long, requires = "lambda_max")]
    lambda_min: Option<f64>,

    /// Largest lambda (absolute). Defaults to 1e1 * ||A*(y)||_op.
    #[arg(long, requires = "lambda_min")]
    lambda_max: Option<f64>,

    #[arg(long, default_value_t = 30)]
    lambda_count: usize,

    /// Number of Gaussian probes for the divergence estimate.
    #[arg(long, default_value_t = 4)]
    probes: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 5000)]
    max_iters: usize,

    #[arg(long, default_value_t = 1e-8)]
    fp_tol: f64,

    /// Step size (default 1).
    #[arg(long)]
    tau: Option<f64>,

    #[arg(long)]
    out_csv: PathBuf,

    #[arg(long)]
    out_svg: Option<PathBuf>,

    /// Observed-entry file; replaces the synthetic instance.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Cold-start grid points and run them concurrently.
    #[arg(long)]
    parallel: bool,
}

impl Args {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let spectrum = if self.spectrum == "inverse_k" {
            Spectrum::InverseK
        } else {
            Spectrum::from_file(&PathBuf::from(&self.spectrum))?
        };
        let noise = match (self.ls_rel_error, self.sigma) {
            (Some(r), None) => Some(NoiseLevel::LsRelError(r)),
            (None, Some(s)) => Some(NoiseLevel::Sigma(s)),
            (None, None) if self.input.is_none() => Some(NoiseLevel::LsRelError(0.9)),
            _ => None,
        };
        let grid = match (self.lambda_min, self.lambda_max) {
            (Some(min), Some(max)) => Some(LambdaGrid {
                min,
                max,
                count: self.lambda_count,
            }),
            _ => None,
        };
        let cfg = ExperimentConfig {
            rows: self.rows,
            cols: self.cols,
            obs_fraction: self.obs_fraction,
            spectrum,
            noise,
            grid,
            probes: self.probes,
            seed: self.seed,
            max_iters: self.max_iters,
            fp_tol: self.fp_tol,
            tau: self.tau,
            parallel: self.parallel,
            input: self.input,
            out_csv: Some(self.out_csv),
            out_svg: self.out_svg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Calibration { .. } => 3,
        Error::Parameter(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match args.into_config() {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    let reports = match lambda_sweep(&cfg) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(exit_code(&err));
        }
    };
    let unconverged = reports.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} grid point(s) hit max_iters");
    }
    match select_lambda(&reports) {
        Ok((lambda, best)) => {
            let mut line = format!(
                "selected lambda = {lambda:.6e}  sure = {:.6e}  rank = {}  divergence = {:.3}",
                best.sure, best.rank, best.divergence
            );
            if let Some(rel) = best.rel_error {
                line.push_str(&format!("  rel_error = {rel:.4}"));
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
