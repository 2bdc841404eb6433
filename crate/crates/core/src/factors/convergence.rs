//! Convergence of factor simulations as the fitted exponential sum approaches
//! a target kernel.
//!
//! Each replicate runs the target kernel by direct summation and every fitted
//! level through its factors, all on one grid and one random stream, so the
//! gaps measure the kernel error rather than Monte Carlo noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_direct_euler, simulate_factor_euler};
use crate::curve::Curve;
use crate::diagnostics::{lp_norm, mean_and_se, Rule};
use crate::engine::euler::EulerCoefficients;
use crate::engine::{Grid, Model};
use crate::error::{Error, Result};
use crate::kernel::{fit_exponential_sum, slobodeckij_certificate, Kernel, RegularityCertificate};
use crate::path::GridFunction;
use crate::seed::SeedSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSetup {
    pub target: Kernel,
    pub g0: Curve,
    pub coefficients: EulerCoefficients,
    /// Numbers of exponential terms.
    pub levels: Vec<usize>,
    pub grid: Grid,
    pub checkpoints: Vec<f64>,
    /// Exponents of the per-level regularity certificate.
    pub p: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGap {
    pub checkpoint: f64,
    pub component: usize,
    pub mean_gap: f64,
    pub var_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub terms: usize,
    pub kernel_l2_error: f64,
    pub certificate: Option<RegularityCertificate>,
    /// Why the level was not simulated.
    pub skipped: Option<String>,
    /// Mean over replicates of `||X^n - X^ref||_{L^2(0, T)}`.
    pub path_gap: f64,
    pub path_gap_se: f64,
    pub moments: Vec<MomentGap>,
    pub exploded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub target_certificate: RegularityCertificate,
    pub levels: Vec<LevelReport>,
    pub replicates: usize,
    pub reference_exploded: usize,
    pub kernel_error_strictly_decreasing: bool,
    pub path_gap_decreasing: bool,
}

impl ConvergenceReport {
    fn simulated(&self) -> impl Iterator<Item = &LevelReport> {
        self.levels.iter().filter(|l| l.skipped.is_none())
    }

    /// Columns `level, terms, kernel_l2_error, c_k_bound, path_gap,
    /// path_gap_se, checkpoint, component, mean_gap, var_gap`; one row per
    /// level, checkpoint and component.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "level",
            "terms",
            "kernel_l2_error",
            "c_k_bound",
            "path_gap",
            "path_gap_se",
            "checkpoint",
            "component",
            "mean_gap",
            "var_gap",
        ])?;
        for l in self.simulated() {
            let ck = l.certificate.as_ref().map_or(f64::NAN, |c| c.c_k_bound);
            for g in &l.moments {
                wtr.write_record([
                    l.level.to_string(),
                    l.terms.to_string(),
                    l.kernel_l2_error.to_string(),
                    ck.to_string(),
                    l.path_gap.to_string(),
                    l.path_gap_se.to_string(),
                    g.checkpoint.to_string(),
                    (g.component + 1).to_string(),
                    g.mean_gap.to_string(),
                    g.var_gap.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Prepared {
    level: usize,
    model: Option<Model>,
    report: LevelReport,
}

fn prepare(setup: &ConvergenceSetup, n: usize) -> Result<Prepared> {
    let horizon = setup.grid.horizon;
    let fit = fit_exponential_sum(&setup.target, n, horizon)?;
    let terms = fit.kernel.exponential_terms().map_or(0, |t| t.len());
    let mut report = LevelReport {
        level: n,
        terms,
        kernel_l2_error: fit.l2_error,
        certificate: None,
        skipped: None,
        path_gap: f64::NAN,
        path_gap_se: f64::NAN,
        moments: Vec::new(),
        exploded: 0,
    };
    match slobodeckij_certificate(&fit.kernel, setup.p, setup.eta, horizon) {
        Ok(c) if c.is_finite() => report.certificate = Some(c),
        Ok(c) => {
            report.skipped = Some(format!(
                "regularity certificate is not finite ({})",
                c.diagnostic.clone().unwrap_or_default()
            ));
            report.certificate = Some(c);
        }
        Err(e) => report.skipped = Some(format!("regularity certificate failed: {e}")),
    }
    let model = match report.skipped {
        None => Some(Model::new(setup.g0.clone(), fit.kernel)?),
        Some(_) => None,
    };
    Ok(Prepared {
        level: n,
        model,
        report,
    })
}

struct ReplicateOut {
    reference: GridFunction,
    reference_exploded: bool,
    /// Per simulated level: path and gap.
    levels: Vec<(GridFunction, f64, bool)>,
}

/// Runs the experiment. Levels whose certificate cannot be computed are kept
/// in the report with a diagnostic and no simulation.
pub fn factor_convergence_experiment(
    setup: &ConvergenceSetup,
    replicates: usize,
    seed: SeedSpec,
) -> Result<ConvergenceReport> {
    if replicates == 0 {
        return Err(Error::invalid("replicates", "must be positive"));
    }
    if setup.levels.is_empty() {
        return Err(Error::invalid("levels", "need at least one level"));
    }
    let horizon = setup.grid.horizon;
    if setup
        .checkpoints
        .iter()
        .any(|t| !(*t >= 0.0 && *t <= horizon))
    {
        return Err(Error::invalid(
            "checkpoints",
            format!("must lie in [0, {horizon}]"),
        ));
    }
    let target_certificate = slobodeckij_certificate(&setup.target, setup.p, setup.eta, horizon)?;
    let reference = Model::new(setup.g0.clone(), setup.target.clone())?;
    let (d, k) = reference.dims();
    setup.coefficients.validate(d, k)?;
    let mut prepared = setup
        .levels
        .iter()
        .map(|&n| prepare(setup, n))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<&Model> = prepared.iter().filter_map(|p| p.model.as_ref()).collect();

    let outs = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<ReplicateOut> {
            let s = seed.with_replicate(r);
            let (ref_sample, _) =
                simulate_direct_euler(&reference, &setup.coefficients, &setup.grid, s)?;
            let levels = models
                .iter()
                .map(|m| -> Result<_> {
                    let (sample, _) =
                        simulate_factor_euler(m, &setup.coefficients, &setup.grid, s)?;
                    let gap = lp_norm(&sample.x.sub(&ref_sample.x)?, 2.0, Rule::Trapezoid);
                    Ok((sample.x, gap, sample.flags.exploded))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateOut {
                reference: ref_sample.x,
                reference_exploded: ref_sample.flags.exploded,
                levels,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let h = setup.grid.step();
    let index = |t: f64| ((t / h).round() as usize).min(setup.grid.steps);
    let moments = |paths: &mut dyn Iterator<Item = &GridFunction>| -> Vec<Vec<(f64, f64)>> {
        let paths: Vec<&GridFunction> = paths.collect();
        setup
            .checkpoints
            .iter()
            .map(|&t| {
                let m = index(t);
                (0..d)
                    .map(|c| {
                        let v: Vec<f64> = paths.iter().map(|p| p.at(m)[c]).collect();
                        mean_var(&v)
                    })
                    .collect()
            })
            .collect()
    };
    let ref_moments = moments(&mut outs.iter().map(|o| &o.reference));

    for (slot, p) in prepared.iter_mut().filter(|p| p.model.is_some()).enumerate() {
        let gaps: Vec<f64> = outs.iter().map(|o| o.levels[slot].1).collect();
        let (mean, se) = mean_and_se(&gaps);
        p.report.path_gap = mean;
        p.report.path_gap_se = se;
        p.report.exploded = outs.iter().filter(|o| o.levels[slot].2).count();
        let lm = moments(&mut outs.iter().map(|o| &o.levels[slot].0));
        p.report.moments = setup
            .checkpoints
            .iter()
            .enumerate()
            .flat_map(|(i, &t)| {
                let (lm, rm) = (&lm[i], &ref_moments[i]);
                (0..d).map(move |c| MomentGap {
                    checkpoint: t,
                    component: c,
                    mean_gap: (lm[c].0 - rm[c].0).abs(),
                    var_gap: (lm[c].1 - rm[c].1).abs(),
                })
            })
            .collect();
    }
    debug_assert!(prepared.iter().all(|p| p.level == p.report.level));

    let levels: Vec<LevelReport> = prepared.into_iter().map(|p| p.report).collect();
    let errs: Vec<f64> = levels.iter().map(|l| l.kernel_l2_error).collect();
    let gaps: Vec<f64> = levels
        .iter()
        .filter(|l| l.skipped.is_none())
        .map(|l| l.path_gap)
        .collect();
    Ok(ConvergenceReport {
        target_certificate,
        replicates,
        reference_exploded: outs.iter().filter(|o| o.reference_exploded).count(),
        kernel_error_strictly_decreasing: errs.windows(2).all(|w| w[1] < w[0]),
        path_gap_decreasing: gaps.len() >= 2 && gaps.windows(2).all(|w| w[1] < w[0]),
        levels,
    })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::JumpFamily;

    fn setup(target: Kernel, drift: &str, sigma: &str, levels: Vec<usize>) -> ConvergenceSetup {
        ConvergenceSetup {
            target,
            g0: Curve::constant(&[1.0]),
            coefficients: EulerCoefficients::parse(&[drift], &[vec![sigma]]).unwrap(),
            levels,
            grid: Grid::new(1.0, 200).unwrap(),
            checkpoints: vec![0.5, 1.0],
            p: 2.0,
            eta: 0.2,
        }
    }

    #[test]
    fn exponential_target_is_reproduced() {
        let s = setup(
            Kernel::exponential_sum(&[(1.0, 2.0), (0.5, 20.0)]).unwrap(),
            "0.5 - x1",
            "0.3",
            vec![2, 3],
        );
        let r = factor_convergence_experiment(&s, 8, SeedSpec::new(4, 0)).unwrap();
        for l in &r.levels {
            assert_eq!(l.kernel_l2_error, 0.0);
            assert!(l.path_gap < 1e-12, "{}", l.path_gap);
            assert!(l
                .moments
                .iter()
                .all(|g| g.mean_gap < 1e-12 && g.var_gap < 1e-12));
        }
    }

    #[test]
    fn drift_only_gap_follows_kernel_error() {
        let s = setup(
            Kernel::dampened_fractional(0.75, 1.0).unwrap(),
            "2 - x1",
            "0",
            vec![5, 10, 20, 40],
        );
        let r = factor_convergence_experiment(&s, 2, SeedSpec::new(1, 0)).unwrap();
        assert!(
            r.kernel_error_strictly_decreasing,
            "{:?}",
            r.levels
                .iter()
                .map(|l| l.kernel_l2_error)
                .collect::<Vec<_>>()
        );
        assert!(
            r.path_gap_decreasing,
            "{:?}",
            r.levels.iter().map(|l| l.path_gap).collect::<Vec<_>>()
        );
        // Deterministic: no spread between replicates.
        assert!(r.levels.iter().all(|l| l.path_gap_se == 0.0));
        assert!(r
            .levels
            .iter()
            .all(|l| l.certificate.is_some() && l.skipped.is_none()));
    }

    #[test]
    fn stochastic_gap_decreases_with_coupled_noise() {
        let mut s = setup(
            Kernel::dampened_fractional(0.75, 1.0).unwrap(),
            "0.5 - x1",
            "0.3",
            vec![5, 20],
        );
        s.coefficients = s
            .coefficients
            .with_jumps(JumpFamily::poisson(3.0, &[0.2]), true);
        let r = factor_convergence_experiment(&s, 16, SeedSpec::new(2, 0)).unwrap();
        assert!(r.path_gap_decreasing);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2);
        assert!(text.starts_with("level,terms,kernel_l2_error"));
    }

    #[test]
    fn bad_inputs() {
        let s = setup(Kernel::exponential(1.0, 1.0).unwrap(), "0", "0", vec![]);
        assert!(factor_convergence_experiment(&s, 2, SeedSpec::new(1, 0)).is_err());
        let mut s = setup(Kernel::exponential(1.0, 1.0).unwrap(), "0", "0", vec![1]);
        s.checkpoints = vec![2.0];
        assert!(factor_convergence_experiment(&s, 2, SeedSpec::new(1, 0)).is_err());
    }
}
