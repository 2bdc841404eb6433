//! Pathwise and statistical checks on simulated samples.

use std::cell::RefCell;

use serde::Serialize;

use super::euler::{simulate_euler_reference, EulerCoefficients};
use super::memory::evaluate_direct;
use super::{Driver, Grid, Model, SolutionSample};
use crate::diagnostics::{lp_norm, mean_and_se, Rule};
use crate::error::{Error, Result};
use crate::generator::{apply_generator, TestFunction};
use crate::kernel::resolvent;
use crate::quad::{self, Tolerance};
use crate::seed::SeedSpec;
use crate::triplet::Triplet;

/// Statistics of `M^f_to - M^f_from` over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStat {
    pub from: f64,
    pub to: f64,
    pub mean: f64,
    pub std_error: f64,
    pub replicates: usize,
}

impl ResidualStat {
    /// `|mean| <= sigmas * std_error`; a batch of identical zeros passes.
    pub fn within(&self, sigmas: f64) -> bool {
        self.mean.abs() <= sigmas * self.std_error || self.mean == 0.0
    }
}

fn check_checkpoints(checkpoints: &[f64], horizon: f64) -> Result<()> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "checkpoints",
            "need an increasing, nonempty list",
        ));
    }
    if checkpoints[0] < 0.0 || *checkpoints.last().unwrap() > horizon * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "checkpoints",
            format!("must lie in [0, {horizon}]"),
        ));
    }
    Ok(())
}

/// `M^f_t = f(Z_t) - int_0^t Af(X_s, Z_s) ds` at each checkpoint.
///
/// Pure-jump drivers are integrated segment by segment between events with
/// `X_s` evaluated exactly; samples with a grid driver or a drift record use
/// left-point sums on the grid, with checkpoints rounded to the grid.
pub fn martingale_process(
    model: &Model,
    triplet: &Triplet,
    sample: &SolutionSample,
    f: &TestFunction,
    checkpoints: &[f64],
) -> Result<Vec<f64>> {
    check_checkpoints(checkpoints, sample.grid.horizon)?;
    let k = model.dims().1;
    if f.dim() != k {
        return Err(Error::invalid(
            "test function",
            format!("has dimension {}, driver has {k}", f.dim()),
        ));
    }
    match (&sample.driver, &sample.drift_record) {
        (Driver::Jumps(path), None) => {
            let events = &path.events;
            let err = RefCell::new(None);
            let seg = |a: f64, b: f64, applied: usize, z: &[f64]| -> f64 {
                if b <= a {
                    return 0.0;
                }
                let integrand = |s: f64| {
                    let x = evaluate_direct(model, &events[..applied], s);
                    match apply_generator(triplet, f, &x, z) {
                        Ok(v) => v,
                        Err(e) => {
                            err.borrow_mut().get_or_insert(e);
                            0.0
                        }
                    }
                };
                quad::integrate(integrand, a, b, Tolerance::new(1e-12, 1e-10)).value
            };
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut z = vec![0.0; k];
            let mut t = 0.0;
            let mut acc = 0.0;
            let mut next = 0;
            for &c in checkpoints {
                while next < events.len() && events[next].time <= c {
                    let te = events[next].time;
                    acc += seg(t, te, next, &z);
                    t = te;
                    z.iter_mut()
                        .zip(&events[next].jump)
                        .for_each(|(o, j)| *o += j);
                    next += 1;
                }
                acc += seg(t, c, next, &z);
                t = c;
                out.push(f.value(&z) - acc);
            }
            match err.into_inner() {
                Some(e) => Err(e),
                None => Ok(out),
            }
        }
        _ => {
            let z = sample.driver_on_grid();
            let h = sample.grid.step();
            let mut running = Vec::with_capacity(sample.grid.points());
            let mut acc = 0.0;
            for m in 0..sample.grid.points() {
                running.push(acc);
                if m < sample.grid.steps {
                    acc += h * apply_generator(triplet, f, sample.x.at(m), z.at(m))?;
                }
            }
            Ok(checkpoints
                .iter()
                .map(|&c| {
                    let m = ((c / h).round() as usize).min(sample.grid.steps);
                    f.value(z.at(m)) - running[m]
                })
                .collect())
        }
    }
}

/// Mean and standard error of `M^f` increments between consecutive
/// checkpoints; the martingale property predicts mean zero.
pub fn martingale_residuals(
    model: &Model,
    triplet: &Triplet,
    samples: &[SolutionSample],
    f: &TestFunction,
    checkpoints: &[f64],
) -> Result<Vec<ResidualStat>> {
    let paths = samples
        .iter()
        .map(|s| martingale_process(model, triplet, s, f, checkpoints))
        .collect::<Result<Vec<_>>>()?;
    Ok(checkpoints
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let incs: Vec<f64> = paths.iter().map(|p| p[i + 1] - p[i]).collect();
            let (mean, se) = mean_and_se(&incs);
            ResidualStat {
                from: w[0],
                to: w[1],
                mean,
                std_error: se,
                replicates: incs.len(),
            }
        })
        .collect())
}

/// Largest `|int_0^t X_s ds - int_0^t g0 - int_0^t K(t - s) Z_s ds|` over the
/// checkpoints. The left side integrates `X` segment by segment between
/// events; the right side integrates the piecewise-constant `Z` against the
/// kernel. Both use closed-form kernel antiderivatives where available.
pub fn fubini_identity_check(
    model: &Model,
    sample: &SolutionSample,
    checkpoints: &[f64],
) -> Result<f64> {
    check_checkpoints(checkpoints, sample.grid.horizon)?;
    let path = match (&sample.driver, &sample.drift_record) {
        (Driver::Jumps(p), None) => p,
        _ => {
            return Err(Error::Unsupported(
                "the integrated identity is checked for pure-jump drivers only".into(),
            ))
        }
    };
    let (d, k) = model.dims();
    let mut worst: f64 = 0.0;
    for &t in checkpoints {
        let events: Vec<_> = path.events.iter().take_while(|e| e.time < t).collect();
        // Segment boundaries 0 = s_0 < T_1 < ... < T_N < t.
        let mut bounds = Vec::with_capacity(events.len() + 2);
        bounds.push(0.0);
        bounds.extend(events.iter().map(|e| e.time).filter(|&s| s > 0.0));
        bounds.push(t);

        let mut lhs = vec![0.0; d];
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            for e in events.iter().take_while(|e| e.time <= a) {
                model
                    .kernel
                    .apply_cell_add(a - e.time, b - e.time, &e.jump, &mut lhs);
            }
        }
        let mut rhs = vec![0.0; d];
        let mut z = vec![0.0; k];
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            for e in events.iter().filter(|e| e.time == a) {
                z.iter_mut().zip(&e.jump).for_each(|(o, j)| *o += j);
            }
            model.kernel.apply_cell_add(t - b, t - a, &z, &mut rhs);
        }
        let g = model.g0.integral(0.0, t);
        for i in 0..d {
            let r = (g[i] + lhs[i]) - (g[i] + rhs[i]);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// `||X - Y||_{L^2(0, T)}` with left-point cells.
    pub l2_distance: f64,
    pub sup_distance: f64,
    /// Discrete Gronwall bound on `|X_m - Y_m|`, when it applies.
    pub sup_bound: Option<f64>,
    pub l2_bound: Option<f64>,
}

impl UniquenessReport {
    pub fn within_bound(&self) -> Option<bool> {
        Some(
            self.sup_distance <= self.sup_bound? * (1.0 + 1e-12)
                && self.l2_distance <= self.l2_bound? * (1.0 + 1e-12),
        )
    }
}

/// Runs the Euler scheme for `(model, seed)` and `(other, other_seed)` with
/// the same coefficients and compares the paths.
///
/// When both seeds agree, the noise does not depend on the state and the
/// drift is `L`-Lipschitz, the errors obey
/// `e_m <= delta_m + h sum_{i=1}^m L |w_i| e_{m-i}` with
/// `delta_m = |g0(t_m) - g0'(t_m)|`; the equality case is solved with the
/// resolvent of `k = (0, -L|w_1|, -L|w_2|, ...)` and reported as the bound.
pub fn pathwise_uniqueness_probe(
    model: &Model,
    other: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
    other_seed: SeedSpec,
    lipschitz: Option<f64>,
) -> Result<UniquenessReport> {
    if model.kernel != other.kernel {
        return Err(Error::invalid("other", "both runs must share the kernel"));
    }
    let x = simulate_euler_reference(model, coeffs, grid, seed)?;
    let y = simulate_euler_reference(other, coeffs, grid, other_seed)?;
    let diff = x.x.sub(&y.x)?;
    let l2_distance = lp_norm(&diff, 2.0, Rule::LeftPoint);
    let sup_distance = diff
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);

    let (sup_bound, l2_bound) = match lipschitz {
        Some(l) if seed == other_seed && coeffs.state_independent_noise() => {
            let h = grid.step();
            let mut kv = vec![0.0];
            kv.extend((1..=grid.steps).map(|i| {
                let w = model.kernel.cell_integral((i - 1) as f64 * h, i as f64 * h) / h;
                -l * w.norm()
            }));
            let g: Vec<f64> = (0..grid.points())
                .map(|m| {
                    let t = grid.time(m);
                    let (a, b) = (model.g0.eval(t), other.g0.eval(t));
                    a.iter()
                        .zip(&b)
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let bound = resolvent(&kv, h)?.gronwall_bound(&g);
            let sup = bound.iter().cloned().fold(0.0, f64::max);
            let l2 = (h * bound[..grid.steps].iter().map(|b| b * b).sum::<f64>()).sqrt();
            (Some(sup), Some(l2))
        }
        _ => (None, None),
    };
    Ok(UniquenessReport {
        l2_distance,
        sup_distance,
        sup_bound,
        l2_bound,
    })
}
