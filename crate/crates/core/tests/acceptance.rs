//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; extra arguments filter by name.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use voltjump_core::diagnostics::{
    holder_exponent, ks_exponential, lp_norm, lp_norm_pow, mean_and_se, slobodeckij_norm_pow, Rule,
};
use voltjump_core::engine::checks::martingale_process;
use voltjump_core::engine::euler::{simulate_euler, EulerMode, Volatility};
use voltjump_core::engine::{
    fubini_identity_check, pathwise_uniqueness_probe, simulate_general, simulate_pure_jump,
    EngineOptions, EulerCoefficients,
};
use voltjump_core::experiment::{self, ExperimentConfig, RunOptions};
use voltjump_core::factors::{
    convolve_driver, factor_convergence_experiment, simulate_direct_euler, simulate_factor_euler,
    ConvergenceSetup, FactorSystem,
};
use voltjump_core::generator::{convergence_slope, generator_convergence_report, ProbeBox};
use voltjump_core::hawkes::{
    scaling_limit_experiment, RootMode, ScalingExperiment, ScalingSchedule,
};
use voltjump_core::kernel::certificate::certificate_with;
use voltjump_core::kernel::{slobodeckij_certificate, CertificateMethod};
use voltjump_core::{
    Curve, Expr, Grid, GridFunction, JumpFamily, Kernel, MatrixExpr, Model, SeedSpec,
    SolutionSample, TestFunction, Triplet, VectorExpr,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn model(g0: &str, kernel: Kernel) -> Model {
    Model::new(Curve::parse(&[g0]).unwrap(), kernel).unwrap()
}

fn coefficients(drift: &str, sigma: &str) -> EulerCoefficients {
    EulerCoefficients::new(
        VectorExpr::parse(&[drift]).unwrap(),
        Volatility::Matrix(MatrixExpr(vec![vec![Expr::parse(sigma).unwrap()]])),
    )
}

/// `int_0^1 f(u, 1 - u) du` by double-exponential quadrature; `f` receives
/// both `u` and `1 - u` so endpoint singularities keep full precision.
fn tanh_sinh(f: impl Fn(f64, f64) -> f64, h: f64) -> f64 {
    let n = (4.0 / h).ceil() as i64;
    (-n..=n)
        .map(|j| {
            let t = j as f64 * h;
            let s = std::f64::consts::FRAC_PI_2 * t.sinh();
            let u = 1.0 / (1.0 + (-2.0 * s).exp());
            let v = 1.0 / (1.0 + (2.0 * s).exp());
            let w = std::f64::consts::PI * t.cosh() * u * v;
            if w == 0.0 || u == 0.0 || v == 0.0 {
                0.0
            } else {
                h * w * f(u, v)
            }
        })
        .sum()
}

// Closed-form certificate of t^{-1/4} with p = 2, eta = 0.2 on [0, 1].
fn certificate_values() -> Outcome {
    let k = Kernel::fractional(0.75).unwrap();
    let start = Instant::now();
    let closed = slobodeckij_certificate(&k, 2.0, 0.2, 1.0).unwrap();
    let quad = certificate_with(&k, 2.0, 0.2, 1.0, CertificateMethod::Quadrature).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    // 2 / (2 gamma - 2 eta - 1) * int_0^1 (u^{gamma - 1} - 1)^2 / (1 - u)^{1 + 2 eta} du
    let integrand = |u: f64, v: f64| {
        let bump = if u < 0.5 {
            u.powf(-0.25) - 1.0
        } else {
            (-0.25 * (-v).ln_1p()).exp_m1()
        };
        bump * bump / v.powf(1.4)
    };
    let coarse = 20.0 * tanh_sinh(integrand, 1.0 / 32.0);
    let oracle = 20.0 * tanh_sinh(integrand, 1.0 / 64.0);
    // 30-digit reference of the same integral.
    let frozen = 7.799_749_362_360_126;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();

    let checks = [
        (
            "closed-form first integral == 10",
            closed.value_singular_integral == 10.0,
        ),
        (
            "closed-form method",
            closed.method == CertificateMethod::ClosedForm,
        ),
        (
            "quadrature first integral",
            rel(quad.value_singular_integral, 10.0) <= 1e-6,
        ),
        (
            "oracle self-consistent",
            rel(coarse, oracle) <= 1e-8 && rel(oracle, frozen) <= 1e-8,
        ),
        (
            "closed-form second integral",
            rel(closed.value_slobodeckij_integral, oracle) <= 1e-4,
        ),
        (
            "quadrature second integral",
            rel(quad.value_slobodeckij_integral, oracle) <= 1e-4,
        ),
        ("runtime < 1 s", elapsed < 1.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "first={} (quadrature {:.12}), second={:.12} vs oracle {:.12}, {:.3}s{}",
            closed.value_singular_integral,
            quad.value_singular_integral,
            closed.value_slobodeckij_integral,
            oracle,
            elapsed,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

fn constant_intensity_exactness() -> Outcome {
    let m = model("0.5", Kernel::fractional(0.75).unwrap());
    let family = JumpFamily::poisson(2.0, &[1.0]);
    let grid = Grid::new(5.0, 50).unwrap();
    let opts = EngineOptions::default();
    let checkpoints = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];
    let runs: Vec<(Option<f64>, f64)> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            let s = simulate_pure_jump(&m, &family, &grid, SeedSpec::new(51, r), &opts).unwrap();
            let first = s.jump_path().unwrap().gaps().first().copied();
            (first, fubini_identity_check(&m, &s, &checkpoints).unwrap())
        })
        .collect();
    let gaps: Vec<f64> = runs.iter().filter_map(|r| r.0).collect();
    let worst = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let ks = ks_exponential(&gaps, 2.0);
    outcome(
        ks.p_value > 0.01 && worst <= 1e-8,
        format!(
            "KS D={:.5} p={:.3} on {} first gaps; worst integrated residual {worst:.2e}",
            ks.statistic, ks.p_value, ks.n
        ),
    )
}

fn generator_rates() -> Outcome {
    let f = TestFunction::bump(&[0.0], 6.0).unwrap();
    let probes = ProbeBox::grid(1, 1.0, &[0.0], 5.9, 59);
    let levels = [4, 8, 16, 32, 64];
    let drift = Triplet::scalar("1 + 0.5 * x1", "0", JumpFamily::empty()).unwrap();
    let diffusion = Triplet::scalar("0", "1 + 0.25 * x1 * x1", JumpFamily::empty()).unwrap();
    let start = Instant::now();
    let s1 = convergence_slope(
        &generator_convergence_report(&drift, &f, &levels, &probes).unwrap(),
        "drift",
    )
    .unwrap();
    let s2 = convergence_slope(
        &generator_convergence_report(&diffusion, &f, &levels, &probes).unwrap(),
        "diffusion",
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        (s1 + 1.0).abs() <= 0.2 && (s2 + 2.0).abs() <= 0.2 && elapsed < 60.0,
        format!("drift slope {s1:.3}, diffusion slope {s2:.3}, {elapsed:.1}s"),
    )
}

fn martingale_property() -> Outcome {
    let m = model("0.5", Kernel::fractional(0.75).unwrap());
    let triplet = Triplet::pure_jump(1, 1, JumpFamily::poisson(2.0, &[0.5]))
        .unwrap()
        .with_uncompensated_jumps();
    let grid = Grid::new(1.0, 20).unwrap();
    let opts = EngineOptions::default();
    let fs = [
        TestFunction::bump(&[0.0], 1.5).unwrap(),
        TestFunction::bump(&[1.0], 2.0).unwrap(),
        TestFunction::bump(&[0.75], 0.8).unwrap(),
    ];
    let checkpoints = [0.0, 0.25, 0.5, 0.75, 1.0];
    let samples: Vec<SolutionSample> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            voltjump_core::engine::simulate_exact(&m, &triplet, &grid, SeedSpec::new(52, r), &opts)
                .unwrap()
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for f in &fs {
        let paths: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| martingale_process(&m, &triplet, s, f, &checkpoints).unwrap())
            .collect();
        for i in 0..checkpoints.len() {
            for j in i + 1..checkpoints.len() {
                let incs: Vec<f64> = paths.iter().map(|p| p[j] - p[i]).collect();
                let (mean, se) = mean_and_se(&incs);
                worst = worst.max(if se > 0.0 { mean.abs() / se } else { 0.0 });
                pairs += 1;
            }
        }
    }
    outcome(
        worst <= 3.0,
        format!("largest |mean| / se over {pairs} (function, checkpoint pair) cases: {worst:.2}"),
    )
}

fn a_priori_bounds() -> Outcome {
    let kernel = Kernel::dampened_fractional(0.75, 1.0).unwrap();
    let m = model("0.5", kernel);
    let triplet = Triplet::scalar("0.5 - x1", "0.09", JumpFamily::poisson(1.0, &[0.2])).unwrap();
    let grid = Grid::new(1.0, 128).unwrap();
    let opts = EngineOptions::default();
    let g0 = GridFunction::from_fn(grid.step(), grid.points(), 1, |_, out| out[0] = 0.5);
    let mut rows = Vec::new();
    for level in [2u32, 8, 32] {
        let stats: Vec<(f64, f64)> = (0..400u64)
            .into_par_iter()
            .map(|r| {
                let s = simulate_general(&m, &triplet, level, &grid, SeedSpec::new(53, r), &opts)
                    .unwrap();
                let centered = s.x.sub(&g0).unwrap();
                (
                    lp_norm_pow(&s.x, 2.0, Rule::LeftPoint),
                    slobodeckij_norm_pow(&centered, 0.2, 2.0).unwrap(),
                )
            })
            .collect();
        let l2 = stats.iter().map(|s| s.0).sum::<f64>() / stats.len() as f64;
        let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
        rows.push((level, l2, w));
    }
    let spread = |f: fn(&(u32, f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (s_l2, s_w) = (spread(|r| r.1), spread(|r| r.2));
    let finite = rows.iter().all(|r| r.1.is_finite() && r.2.is_finite());
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("n={} L2^2={:.4} W^2={:.4}", r.0, r.1, r.2))
        .collect();
    outcome(
        finite && s_l2 < 2.0 && s_w < 2.0,
        format!("{}; max/min {s_l2:.3} and {s_w:.3}", table.join(", ")),
    )
}

fn uniqueness() -> Outcome {
    let kernel = Kernel::fractional(0.75).unwrap();
    let a = model("1", kernel.clone());
    let b = model("1.05", kernel);
    let coeffs = coefficients("0.5 - x1", "0.3").with_jumps(JumpFamily::poisson(2.0, &[0.1]), true);
    let grid = Grid::new(1.0, 200).unwrap();
    let mut same: f64 = 0.0;
    let mut ratio: f64 = 0.0;
    let mut within = true;
    for r in 0..20 {
        let seed = SeedSpec::new(54, r);
        let rep = pathwise_uniqueness_probe(&a, &a, &coeffs, &grid, seed, seed, Some(1.0)).unwrap();
        same = same.max(rep.l2_distance);
        let rep = pathwise_uniqueness_probe(&a, &b, &coeffs, &grid, seed, seed, Some(1.0)).unwrap();
        within &= rep.within_bound() == Some(true);
        ratio = ratio.max(rep.sup_distance / rep.sup_bound.unwrap_or(f64::NAN));
    }
    outcome(
        same <= 1e-14 && within,
        format!("identical-seed max L2 distance {same:.1e}; perturbed runs within bound: {within} (max sup ratio {ratio:.3})"),
    )
}

fn hawkes_scaling() -> Outcome {
    let exp = ScalingExperiment {
        g0: Curve::parse(&["0.2"]).unwrap(),
        kernel: Kernel::exponential(1.0, 250.0).unwrap(),
        intensity: VectorExpr::parse(&["x"]).unwrap(),
        schedule: ScalingSchedule {
            levels: vec![10, 50, 200],
            exponents: vec![1.0],
            limit: VectorExpr::parse(&["x"]).unwrap(),
            growth_constants: vec![1.0],
        },
        hawkes_growth_constant: 2.0,
        horizon: 1.0,
        steps: 100,
        reference_steps: 4000,
        checkpoints: vec![1.0],
        root_mode: RootMode::Clamp,
        probe_radius: 4.0,
        bootstrap: 200,
    };
    let start = Instant::now();
    let report = scaling_limit_experiment(
        &exp,
        2000,
        SeedSpec::new(2024, 0),
        &EngineOptions::default(),
    )
    .unwrap();
    let exact = report
        .schedule_check
        .levels
        .iter()
        .all(|l| l.convergence_error.iter().all(|e| *e == 0.0));
    let w1: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("n={} W1={:.5}±{:.5}", r.level, r.w1, r.w1_band))
        .collect();
    outcome(
        report.strictly_decreasing && exact && report.schedule_check.growth_ok,
        format!(
            "{}; drops beyond bands: {}; schedule errors zero: {exact}; {:.0}s",
            w1.join(", "),
            report.strictly_decreasing,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn factor_approximation() -> Outcome {
    let grid = Grid::new(1.0, 200).unwrap();
    let coeffs = coefficients("0.5 - x1", "0.3");
    let setup = ConvergenceSetup {
        target: Kernel::dampened_fractional(0.75, 1.0).unwrap(),
        g0: Curve::constant(&[1.0]),
        coefficients: coeffs.clone(),
        levels: vec![5, 10, 20, 40],
        grid,
        checkpoints: vec![0.5, 1.0],
        p: 2.0,
        eta: 0.2,
    };
    let report = factor_convergence_experiment(&setup, 100, SeedSpec::new(58, 0)).unwrap();
    let errors: Vec<String> = report
        .levels
        .iter()
        .map(|l| {
            format!(
                "n={} err={:.2e} gap={:.2e}",
                l.level, l.kernel_l2_error, l.path_gap
            )
        })
        .collect();

    // Single exponential: one factor is exact.
    let exp = Kernel::exponential(0.7, 3.0).unwrap();
    let single = ConvergenceSetup {
        target: exp.clone(),
        levels: vec![1],
        ..setup.clone()
    };
    let single = factor_convergence_experiment(&single, 20, SeedSpec::new(58, 1)).unwrap();
    let mut exact_gap = single.levels[0].path_gap;

    let m = Model::new(Curve::constant(&[1.0]), exp.clone()).unwrap();
    let jumpy = coeffs
        .clone()
        .with_jumps(JumpFamily::poisson(5.0, &[0.3]), true);
    for r in 0..20 {
        let seed = SeedSpec::new(58, 100 + r);
        let (f, path) = simulate_factor_euler(&m, &jumpy, &grid, seed).unwrap();
        let (d, _) = simulate_direct_euler(&m, &jumpy, &grid, seed).unwrap();
        exact_gap = exact_gap.max(lp_norm(&f.x.sub(&d.x).unwrap(), 2.0, Rule::Trapezoid));
        let mut system = FactorSystem::from_kernel(&exp, grid).unwrap();
        system.drive(&path).unwrap();
        let direct = convolve_driver(&m, &path).unwrap();
        let rebuilt = system.reconstruct(&m.g0);
        let sup = rebuilt
            .sub(&direct)
            .unwrap()
            .rows()
            .map(|v| v[0].abs())
            .fold(0.0, f64::max);
        exact_gap = exact_gap.max(sup);
    }
    outcome(
        report.kernel_error_strictly_decreasing && report.path_gap_decreasing && exact_gap <= 1e-10,
        format!(
            "{}; single-factor worst gap {exact_gap:.1e}",
            errors.join(", ")
        ),
    )
}

/// Mean dyadic estimate over paths of `X - g0` for the Brownian-driven
/// equation with `K = t^{gamma - 1}`.
fn mean_holder(gamma: f64, sigma: &str, jumps: Option<JumpFamily>, seed: u64) -> (f64, f64) {
    let kernel = if gamma == 1.0 {
        Kernel::constant(1.0)
    } else {
        Kernel::fractional(gamma)
    }
    .unwrap();
    let m = model("0", kernel);
    let mut coeffs = coefficients("0", sigma);
    if let Some(j) = jumps {
        coeffs = coeffs.with_jumps(j, false);
    }
    let grid = Grid::new(1.0, 2048).unwrap();
    let est: Vec<f64> = (0..64u64)
        .into_par_iter()
        .map(|r| {
            let s = simulate_euler(
                &m,
                &coeffs,
                &grid,
                SeedSpec::new(seed, r),
                EulerMode::Direct,
            )
            .unwrap();
            holder_exponent(&s.x, 8).unwrap().exponent
        })
        .collect();
    mean_and_se(&est)
}

fn regularity() -> Outcome {
    // Bias of the dyadic estimator on Brownian paths, whose exponent is 1/2.
    let (bm, _) = mean_holder(1.0, "1", None, 59);
    let bias = bm - 0.5;
    let mut lines = vec![format!("dyadic bias {bias:+.3}")];
    let mut pass = true;
    // (gamma, eta, p, guaranteed exponent): p = 2 without jumps gives any
    // beta < eta; eta p > 1 gives (eta p - 1) / p. The sharp exponent of the
    // Gaussian convolution is gamma - 1/2.
    for (gamma, eta, p, guaranteed) in [
        (0.75, 0.2, 2.0, 0.2),
        (1.25, 0.45, 4.0, (0.45 * 4.0 - 1.0) / 4.0),
    ] {
        let cert =
            slobodeckij_certificate(&Kernel::fractional(gamma).unwrap(), p, eta, 1.0).unwrap();
        let (est, se) = mean_holder(gamma, "1", None, 60);
        let calibrated = est - bias;
        let (lo, hi) = (guaranteed, gamma - 0.5);
        let ok = cert.is_finite() && calibrated >= lo - 0.05 && calibrated <= hi + 0.05;
        pass &= ok;
        lines.push(format!(
            "gamma={gamma} eta={eta} p={p}: {calibrated:.3}±{:.3} in [{lo:.3}, {hi:.3}]±0.05 {}",
            2.0 * se,
            if ok { "ok" } else { "out" }
        ));
    }
    let (jump, _) = mean_holder(0.75, "0", Some(JumpFamily::poisson(5.0, &[1.0])), 61);
    let near_zero = jump.abs() <= 0.1;
    pass &= near_zero;
    lines.push(format!("jump-driven gamma=0.75: {jump:.3}"));
    outcome(pass, lines.join("; "))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let mut checked = Vec::new();
    let mut mismatched = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    for path in paths {
        let cfg = ExperimentConfig::from_path(&path).unwrap();
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let runs: Vec<Vec<(String, Vec<u8>)>> = [1usize, 4]
            .iter()
            .map(|&threads| {
                let opts = RunOptions {
                    out_dir: tmp.path().join(format!("{name}-{threads}")),
                    replicates: Some(24),
                    threads: Some(threads),
                    ..Default::default()
                };
                let summary = experiment::run(&cfg, &opts).unwrap();
                csv_files(&summary.out_dir)
            })
            .collect();
        if runs[0].is_empty() || runs[0] != runs[1] {
            mismatched.push(name.clone());
        }
        checked.push(format!("{name} ({} csv)", runs[0].len()));
    }
    outcome(
        mismatched.is_empty() && checked.len() == 6,
        format!(
            "byte-identical reruns across 1 and 4 threads: {}{}",
            checked.join(", "),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!("; differing: {}", mismatched.join(", "))
            }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("certificate_closed_form", certificate_values),
        ("constant_intensity_exactness", constant_intensity_exactness),
        ("generator_convergence_rates", generator_rates),
        ("martingale_increments", martingale_property),
        ("a_priori_bounds", a_priori_bounds),
        ("pathwise_uniqueness", uniqueness),
        ("hawkes_scaling_limit", hawkes_scaling),
        ("factor_approximation", factor_approximation),
        ("holder_regularity", regularity),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {} ({:.1}s) {}",
            i + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
