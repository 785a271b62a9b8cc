//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The full-scale replication takes hours; it runs only when
//! `MATSURE_FULL_SCALE` is set and is reported as SKIP otherwise.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use matsure::experiment::{
    argmin, lambda_sweep, ls_relative_error_mc, select_lambda, synthesize_instance, write_csv,
    ExperimentConfig, LambdaGrid, NoiseLevel,
};
use matsure::linops::{LinearOperator, Matrix, ObsVector};
use matsure::risk::{
    default_fd_eps, divergence_estimate, divergence_exact_fd, prediction_risk_mc, sure_value,
    trial_observations, McEstimate,
};
use matsure::rng::{
    gaussian_matrix, gaussian_probes, gaussian_vector, stream_rng, trial_rng, STREAM_PROBES,
};
use matsure::solver::{fb_step, gradient_step, solve, FbConfig, FbState};
use matsure::spectral::{
    full_svd, prox_nuclear, singular_values, spectral_apply, spectral_deriv, svd_deriv, thin_svd,
    Elementwise, Identity, SoftThreshold, SpectralDerivative, SpectralMap,
};

use common::{
    central_difference, gapped_matrix, rel_err, separated_threshold, small_problem, ScaledByEnergy,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
    gated: bool,
}

fn main() -> ExitCode {
    let full_scale = std::env::var_os("MATSURE_FULL_SCALE").is_some();
    let criteria = [
        Criterion {
            id: 1,
            name: "spectral derivative vs finite differences",
            budget: secs(5),
            run: spectral_derivative,
            gated: false,
        },
        Criterion {
            id: 2,
            name: "SVD derivative",
            budget: secs(5),
            run: svd_derivative,
            gated: false,
        },
        Criterion {
            id: 3,
            name: "divergence estimator",
            budget: secs(60),
            run: divergence_estimator,
            gated: false,
        },
        Criterion {
            id: 4,
            name: "SURE unbiasedness",
            budget: secs(600),
            run: sure_unbiasedness,
            gated: false,
        },
        Criterion {
            id: 5,
            name: "solver contract",
            budget: secs(60),
            run: solver_contract,
            gated: false,
        },
        Criterion {
            id: 6,
            name: "desk-scale lambda selection",
            budget: secs(600),
            run: desk_scale,
            gated: false,
        },
        Criterion {
            id: 7,
            name: "full-scale replication",
            budget: secs(4 * 3600),
            run: full_scale_run,
            gated: true,
        },
        Criterion {
            id: 8,
            name: "determinism",
            budget: secs(600),
            run: determinism,
            gated: false,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        if c.gated && !full_scale {
            println!(
                "criterion {} {:<42} SKIP  (set MATSURE_FULL_SCALE=1 to run)",
                c.id, c.name
            );
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= c.budget, o.detail),
            Err(e) => (false, format!("panicked: {}", panic_message(&e))),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {} {:<42} {}  {}  [{:.1}s / {}s]",
            c.id,
            c.name,
            if passed { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn spectral_derivative() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    let shapes = std::iter::repeat_n((8, 8), 10).chain(std::iter::repeat_n((8, 5), 10));
    for (rows, cols) in shapes {
        let x = gapped_matrix(&mut rng, rows, cols, 0.1);
        let map = SoftThreshold::new(separated_threshold(&mut rng, &x, 0.05)).unwrap();
        let delta = gaussian_matrix(&mut rng, rows, cols, 1.0);
        let fd = central_difference(|m| spectral_apply(m, &map).unwrap(), &x, &delta, 1e-5);
        let (full, _) = spectral_deriv(&x, &map, &delta).unwrap();
        let thin = SpectralDerivative::new(&thin_svd(&x).unwrap(), &map)
            .apply(&delta)
            .unwrap();
        worst = worst.max(rel_err(&full, &fd)).max(rel_err(&thin, &fd));
    }
    outcome(worst <= 1e-6, format!("max rel err {worst:.2e} (tol 1e-6)"))
}

fn svd_derivative() -> Outcome {
    let mut rng = stream_rng(102, 0);
    let h = 1e-5;
    let smooth = Elementwise::new(
        |l: f64| l.powi(3) / (1.0 + l * l),
        |l: f64| {
            let d = 1.0 + l * l;
            (3.0 * l * l * d - 2.0 * l.powi(4)) / (d * d)
        },
    );
    let maps: [&dyn SpectralMap; 3] = [&Identity, &ScaledByEnergy, &smooth];
    let (mut lam_err, mut asym, mut cross): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10 {
        let x = gapped_matrix(&mut rng, 6, 6, 0.1);
        let delta = gaussian_matrix(&mut rng, 6, 6, 1.0);
        let d = svd_deriv(&x, &delta).unwrap();

        let fd = (singular_values(&(&x + &delta * h)).unwrap()
            - singular_values(&(&x - &delta * h)).unwrap())
            / (2.0 * h);
        lam_err = lam_err.max((&d.d_lambda - &fd).norm() / fd.norm());

        for iota in [&d.iota_v, &d.iota_u] {
            asym = asym.max((iota + iota.transpose()).norm() / iota.norm().max(1.0));
        }

        let svd = full_svd(&x).unwrap();
        let lam = svd.lambda.as_slice();
        for map in maps {
            let phi = Matrix::from_diagonal(&ObsVector::from_vec(map.phi(lam)));
            let dphi =
                Matrix::from_diagonal(&ObsVector::from_vec(map.dphi(lam, d.d_lambda.as_slice())));
            let product = &d.d_v * &phi * svd.u.transpose()
                + &svd.v * dphi * svd.u.transpose()
                + &svd.v * &phi * d.d_u.transpose();
            let (assembled, _) = spectral_deriv(&x, map, &delta).unwrap();
            cross = cross.max(rel_err(&assembled, &product));
        }
    }
    let passed = lam_err <= 1e-6 && asym <= 1e-12 && cross <= 1e-8;
    outcome(
        passed,
        format!("dLambda {lam_err:.2e} (1e-6), antisym {asym:.2e} (1e-12), product rule {cross:.2e} (1e-8)"),
    )
}

/// 6x4 instance with 10 observations, at a lambda where the solution has
/// rank 2 and the divergence sits well inside `(0, P)`.
fn six_by_four() -> (common::SmallProblem, f64) {
    (small_problem(3, 6, 4, 1, 10, 0.1), 0.2)
}

fn divergence_estimator() -> Outcome {
    let (pr, lambda) = six_by_four();
    let p = pr.op.num_obs();
    let cfg = FbConfig::new(lambda)
        .with_tol(1e-13)
        .with_max_iters(100_000);
    let exact = divergence_exact_fd(&pr.y, &pr.op, &cfg, default_fd_eps(&pr.y)).unwrap();

    let k = 1000;
    let probes = gaussian_probes(&mut stream_rng(103, STREAM_PROBES), p, k);
    let res = solve(
        &pr.y,
        &probes,
        &pr.op,
        &cfg.clone().with_probes(k),
        &Matrix::zeros(6, 4),
    )
    .unwrap();
    let est = divergence_estimate(&pr.op, &res.xi, &probes).unwrap();
    let rel = (est - exact).abs() / exact;

    // Derivative tracks are independent of each other, so all repetitions
    // share one solve and are split afterwards.
    let variance = |k: usize, reps: usize, seed: u64| -> f64 {
        let probes: Vec<ObsVector> = (0..reps as u64)
            .flat_map(|r| gaussian_probes(&mut trial_rng(seed, r), p, k))
            .collect();
        let cfg = FbConfig::new(lambda)
            .with_tol(1e-10)
            .with_probes(probes.len());
        let res = solve(&pr.y, &probes, &pr.op, &cfg, &Matrix::zeros(6, 4)).unwrap();
        let samples: Vec<f64> = res
            .xi
            .chunks(k)
            .zip(probes.chunks(k))
            .map(|(xi, d)| divergence_estimate(&pr.op, xi, d).unwrap())
            .collect();
        let m = McEstimate::from_samples(&samples).unwrap();
        m.stderr * m.stderr * reps as f64
    };
    let ratio = variance(16, 400, 104) / variance(256, 100, 105);
    let scaled = ratio / 16.0;
    let passed = rel <= 0.05 && (0.4..=2.5).contains(&scaled);
    outcome(
        passed,
        format!(
            "exact {exact:.4}, k=1000 estimate {est:.4} (rel {rel:.3}, tol 0.05); var16/var256 = {ratio:.2} ({scaled:.2} x 16, range [0.4, 2.5])"
        ),
    )
}

fn sure_unbiasedness() -> Outcome {
    let pr = small_problem(4, 10, 8, 1, 30, 0.0);
    let sigma = 0.1;
    let trials = 500;
    let cfg = FbConfig::new(1.0).with_tol(1e-12).with_max_iters(200_000);
    let clean = pr.op.apply(&pr.x0).unwrap();

    let sures: Vec<f64> = (0..trials as u64)
        .map(|t| {
            let y = trial_observations(&clean, &pr.op, sigma, 106, t);
            let res = solve(&y, &[], &pr.op, &cfg, &Matrix::zeros(10, 8)).unwrap();
            let mu = pr.op.apply(&res.x).unwrap();
            let div = divergence_exact_fd(&y, &pr.op, &cfg, default_fd_eps(&y)).unwrap();
            sure_value(&y, &mu, sigma, div).unwrap()
        })
        .collect();
    let sure = McEstimate::from_samples(&sures).unwrap();
    let risk = prediction_risk_mc(&pr.x0, &pr.op, sigma, &cfg, trials, 107).unwrap();
    let se = (sure.stderr.powi(2) + risk.stderr.powi(2)).sqrt();
    let gap = (sure.mean - risk.mean).abs();
    outcome(
        gap <= 3.0 * se,
        format!(
            "mean SURE {:.5}, MC risk {:.5}, |diff| = {:.2} x combined stderr (tol 3)",
            sure.mean,
            risk.mean,
            gap / se
        ),
    )
}

fn solver_contract() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;

    // Monotone objective and fixed-point characterization.
    let problems = [
        (small_problem(3, 6, 4, 1, 10, 0.1), 0.2),
        (small_problem(8, 30, 20, 3, 200, 0.3), 2.0),
    ];
    let mut worst_rise: f64 = 0.0;
    let mut worst_fp: f64 = 0.0;
    for (pr, lambda) in &problems {
        let cfg = FbConfig::new(*lambda).with_max_iters(50_000);
        let res = solve(
            &pr.y,
            &[],
            &pr.op,
            &cfg,
            &Matrix::zeros(pr.x0.nrows(), pr.x0.ncols()),
        )
        .unwrap();
        passed &= res.converged;
        for w in res.objective_history.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        let fixed = prox_nuclear(
            &gradient_step(&res.x, &pr.y, &pr.op, cfg.tau).unwrap(),
            cfg.tau * lambda,
        )
        .unwrap();
        worst_fp = worst_fp.max((&res.x - fixed).norm() / (cfg.fp_tol * res.x.norm()));
    }
    passed &= worst_rise <= 1e-10 && worst_fp <= 10.0;
    notes.push(format!("max objective rise {worst_rise:.1e} (1e-10), fixed-point residual {worst_fp:.2} x fp_tol (10)"));

    // Derivative tracks against finite differences of the N-th iterate.
    let (pr, lambda) = six_by_four();
    let steps = 30;
    let h = 1e-6;
    let delta = gaussian_vector(&mut stream_rng(108, STREAM_PROBES), pr.op.num_obs(), 1.0);
    let cfg = FbConfig::new(lambda).with_probes(1);
    let plain = FbConfig::new(lambda);
    let run = |y: &ObsVector, probes: &[ObsVector], cfg: &FbConfig, margins: &mut f64| {
        let mut state = FbState::zeros(6, 4, probes.len());
        for _ in 0..steps {
            let xi = gradient_step(&state.x, y, &pr.op, cfg.tau).unwrap();
            for s in singular_values(&xi).unwrap().iter() {
                *margins = margins.min((s - cfg.tau * cfg.lambda).abs());
            }
            state = fb_step(&state, y, probes, &pr.op, cfg).unwrap();
        }
        state
    };
    let mut margin = f64::INFINITY;
    let tracked = run(&pr.y, std::slice::from_ref(&delta), &cfg, &mut margin);
    let mut ignored = f64::INFINITY;
    let plus = run(&(&pr.y + &delta * h), &[], &plain, &mut ignored);
    let minus = run(&(&pr.y - &delta * h), &[], &plain, &mut ignored);
    let fd = (plus.x - minus.x) / (2.0 * h);
    let err = rel_err(&tracked.xi[0], &fd);
    passed &= margin >= 1e-3 && err <= 1e-5;
    notes.push(format!(
        "{steps}-step derivative rel err {err:.2e} (1e-5), threshold margin {margin:.2e} (>= 1e-3)"
    ));

    outcome(passed, notes.join("; "))
}

fn desk_scale() -> Outcome {
    let cfg = ExperimentConfig::default();
    let inst = synthesize_instance(&cfg).unwrap();
    let x0 = inst.x0.as_ref().unwrap();
    let ls = ls_relative_error_mc(x0, &inst.op, inst.sigma, 200, cfg.seed).unwrap();
    let reports = lambda_sweep(&cfg).unwrap();
    let (lambda, best) = select_lambda(&reports).unwrap();
    let selected = reports.iter().position(|r| r.lambda == lambda).unwrap();
    let pred: Vec<f64> = reports.iter().map(|r| r.pred_error_sq.unwrap()).collect();
    let oracle = argmin(&pred).unwrap();
    let rel = best.rel_error.unwrap();
    let target = 0.9 / 1.5;

    let calibrated = (ls.mean - 0.9).abs() <= 0.01;
    let located = selected.abs_diff(oracle) <= 1;
    let improved = rel <= target;
    outcome(
        calibrated && located && improved,
        format!(
            "LS rel error {:.4} (0.9 +- 0.01); SURE argmin at grid index {selected}, prediction-error argmin at {oracle} (<= 1 step); rel_error at selected lambda {rel:.4} (<= {target:.2}), best on grid {:.4}",
            ls.mean,
            reports.iter().filter_map(|r| r.rel_error).fold(f64::INFINITY, f64::min)
        ),
    )
}

fn full_scale_run() -> Outcome {
    let cfg = ExperimentConfig {
        rows: 1000,
        cols: 100,
        obs_fraction: 0.25,
        noise: Some(NoiseLevel::LsRelError(0.9)),
        ..ExperimentConfig::default()
    };
    let reports = lambda_sweep(&cfg).unwrap();
    let (_, best) = select_lambda(&reports).unwrap();
    let rel = best.rel_error.unwrap();
    let passed = best.rank.abs_diff(55) <= 10 && (rel - 0.46).abs() <= 0.05;
    outcome(
        passed,
        format!(
            "selected rank {} (55 +- 10), rel_error {rel:.4} (0.46 +- 0.05)",
            best.rank
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        rows: 60,
        cols: 20,
        seed: 9,
        grid: Some(LambdaGrid {
            min: 1e-3,
            max: 3.0,
            count: 12,
        }),
        ..ExperimentConfig::default()
    };
    let mut identical = true;
    let mut notes = Vec::new();
    for parallel in [false, true] {
        let runs: Vec<Vec<u8>> = (0..2)
            .map(|r| {
                let path = dir.path().join(format!("sweep-{parallel}-{r}.csv"));
                let cfg = ExperimentConfig {
                    parallel,
                    out_csv: Some(path.clone()),
                    ..base.clone()
                };
                let reports = lambda_sweep(&cfg).unwrap();
                let mut buf = Vec::new();
                write_csv(&mut buf, &reports).unwrap();
                let file = std::fs::read(&path).unwrap();
                assert_eq!(buf, file);
                file
            })
            .collect();
        let same = runs[0] == runs[1];
        identical &= same;
        notes.push(format!(
            "{} sweep {} ({} bytes)",
            if parallel { "parallel" } else { "sequential" },
            if same { "byte-identical" } else { "differs" },
            runs[0].len()
        ));
    }
    outcome(identical, notes.join(", "))
}
