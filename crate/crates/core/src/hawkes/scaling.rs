//! Rescaling experiment: at level `n` the Hawkes process runs with kernel
//! `K(s / n)`, initial curve `eps^{-1} g0(s / n)` and drift `b = -Lambda` on
//! `[0, n T]`; `X^n_t = eps Y_{n t}` is compared with a Volterra square-root
//! reference `X = g0 + K * dZ`, `d<Z_i> = Lambda_bar_i(X) dt`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rescale, simulate_hawkes, HawkesSpec};
use crate::curve::Curve;
use crate::diagnostics::{lp_norm, mean_and_se, wasserstein1, Rule};
use crate::engine::euler::Volatility;
use crate::engine::{simulate_euler_reference, EngineOptions, EulerCoefficients, Grid, Model};
use crate::error::{Error, Result};
use crate::expr::{Expr, MatrixExpr, VectorExpr};
use crate::kernel::Kernel;
use crate::seed::SeedSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSchedule {
    pub levels: Vec<u32>,
    /// `eps^n_i = n^{-a_i}`.
    pub exponents: Vec<f64>,
    /// `Lambda_bar`.
    pub limit: VectorExpr,
    /// `c_i` in `n eps_i^2 Lambda_i(x / eps) <= c_i (1 + |x|^2)`.
    pub growth_constants: Vec<f64>,
}

impl ScalingSchedule {
    /// `n^{a_i}`, the inverse of `eps^n_i`.
    pub fn inverse_eps(&self, n: u32) -> Vec<f64> {
        self.exponents.iter().map(|a| (n as f64).powf(*a)).collect()
    }

    pub fn eps(&self, n: u32) -> Vec<f64> {
        self.inverse_eps(n).iter().map(|s| 1.0 / s).collect()
    }

    /// `n eps_i^2 Lambda_i(x / eps)`, evaluated as `n Lambda_i(s x) / s_i^2`
    /// with `s = 1 / eps` so that dyadic probes stay exact for integer powers.
    pub fn rescaled_intensity(&self, intensity: &VectorExpr, n: u32, x: &[f64]) -> Vec<f64> {
        let s = self.inverse_eps(n);
        let y: Vec<f64> = x.iter().zip(&s).map(|(x, s)| x * s).collect();
        intensity
            .eval(&y)
            .iter()
            .zip(&s)
            .map(|(l, s)| n as f64 * l / (s * s))
            .collect()
    }

    fn validate(&self, d: usize, intensity: &VectorExpr) -> Result<()> {
        if self.levels.is_empty()
            || self.levels.windows(2).any(|w| w[1] <= w[0])
            || self.levels[0] == 0
        {
            return Err(Error::invalid(
                "levels",
                "need an increasing list of positive levels",
            ));
        }
        if self.exponents.len() != d
            || self.growth_constants.len() != d
            || self.limit.len() != d
            || intensity.len() != d
        {
            return Err(Error::invalid(
                "schedule",
                format!("exponents, growth constants and limits need {d} entries"),
            ));
        }
        Ok(())
    }
}

/// Points `j / per_unit` in `[0, radius]^d`. Powers of two for `per_unit`
/// keep them exactly representable.
pub fn dyadic_probes(d: usize, radius: f64, per_unit: usize) -> Vec<Vec<f64>> {
    let count = (radius * per_unit as f64).floor() as usize + 1;
    let axis: Vec<f64> = (0..count).map(|j| j as f64 / per_unit as f64).collect();
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub level: u32,
    /// `sup n eps_i^2 Lambda_i(x / eps) / (1 + |x|^2)` over the probes.
    pub growth_ratio: Vec<f64>,
    /// `sup |n eps_i^2 Lambda_i(x / eps) - Lambda_bar_i(x)|` over the probes.
    pub convergence_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub levels: Vec<LevelCheck>,
    pub growth_ok: bool,
    pub convergence_nonincreasing: bool,
}

impl ScheduleCheck {
    pub fn require(&self, schedule: &ScalingSchedule) -> Result<()> {
        if !self.growth_ok {
            let bad = self
                .levels
                .iter()
                .find(|l| {
                    l.growth_ratio
                        .iter()
                        .zip(&schedule.growth_constants)
                        .any(|(r, c)| r > c)
                })
                .expect("a violating level");
            return Err(Error::hypothesis(
                "rescaled intensity growth",
                format!(
                    "level {}: ratios {:?} exceed {:?}",
                    bad.level, bad.growth_ratio, schedule.growth_constants
                ),
            ));
        }
        if !self.convergence_nonincreasing {
            return Err(Error::hypothesis(
                "rescaled intensity convergence",
                format!(
                    "sup errors {:?} are not nonincreasing in n",
                    self.levels
                        .iter()
                        .map(|l| l.convergence_error.clone())
                        .collect::<Vec<_>>()
                ),
            ));
        }
        Ok(())
    }
}

pub fn check_schedule(
    intensity: &VectorExpr,
    schedule: &ScalingSchedule,
    probes: &[Vec<f64>],
) -> ScheduleCheck {
    let d = schedule.exponents.len();
    let levels: Vec<LevelCheck> = schedule
        .levels
        .iter()
        .map(|&n| {
            let mut growth_ratio = vec![0.0f64; d];
            let mut convergence_error = vec![0.0f64; d];
            for x in probes {
                let r = schedule.rescaled_intensity(intensity, n, x);
                let lim = schedule.limit.eval(x);
                let denom = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
                for i in 0..d {
                    growth_ratio[i] = growth_ratio[i].max(r[i] / denom);
                    let e = (r[i] - lim[i]).abs();
                    convergence_error[i] = if e.is_nan() {
                        f64::INFINITY
                    } else {
                        convergence_error[i].max(e)
                    };
                }
            }
            LevelCheck {
                level: n,
                growth_ratio,
                convergence_error,
            }
        })
        .collect();
    let growth_ok = levels.iter().all(|l| {
        l.growth_ratio
            .iter()
            .zip(&schedule.growth_constants)
            .all(|(r, c)| r <= c)
    });
    let convergence_nonincreasing = levels.windows(2).all(|w| {
        w[1].convergence_error
            .iter()
            .zip(&w[0].convergence_error)
            .all(|(b, a)| b <= a)
    });
    ScheduleCheck {
        levels,
        growth_ok,
        convergence_nonincreasing,
    }
}

/// How negative states enter the square root of the reference volatility.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMode {
    /// `sqrt(Lambda_bar(max(x, 0)))`.
    #[default]
    Clamp,
    /// `sqrt(Lambda_bar(|x|))`.
    Abs,
}

fn default_probe_radius() -> f64 {
    4.0
}

fn default_bootstrap() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingExperiment {
    /// Limit initial curve.
    pub g0: Curve,
    /// Limit kernel; must be an exponential sum with scalar weights.
    pub kernel: Kernel,
    /// `Lambda`, shared by every level.
    pub intensity: VectorExpr,
    pub schedule: ScalingSchedule,
    /// Growth constant of `|b| + |Lambda| <= c (1 + |y|)` with `b = -Lambda`.
    pub hawkes_growth_constant: f64,
    pub horizon: f64,
    /// Grid of `X^n` on `[0, horizon]`.
    pub steps: usize,
    pub reference_steps: usize,
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub root_mode: RootMode,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

/// One row per level, checkpoint and component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: u32,
    pub checkpoint: f64,
    pub component: usize,
    pub w1: f64,
    /// Two bootstrap standard errors of `w1`.
    pub w1_band: f64,
    /// `w1` of this level minus `w1` of the next one.
    pub drop_to_next: Option<f64>,
    /// Two bootstrap standard errors of `drop_to_next`.
    pub drop_band: Option<f64>,
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: u32,
    /// `|E ||X^n|| - E ||X||_ref|` with `L^2(0, T)` norms.
    pub l2_mean_gap: f64,
    pub l2_second_moment_gap: f64,
    pub mean_events: f64,
    pub exploded: usize,
    pub intensity_clamped: usize,
    /// `sup_t |eps g0^n(n t) - g0(t)|` on the grid.
    pub g0_rescaling_error: f64,
    /// `sup_t |K^n(n t) - K(t)|` on the grid (`t > 0`).
    pub kernel_rescaling_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub schedule_check: ScheduleCheck,
    pub rows: Vec<LevelRow>,
    pub levels: Vec<LevelSummary>,
    pub replicates: usize,
    /// Every consecutive drop exceeds its band.
    pub strictly_decreasing: bool,
    /// No consecutive increase exceeds its band.
    pub nonincreasing_within_bands: bool,
    pub reference: &'static str,
}

impl ScalingReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "level",
            "checkpoint",
            "component",
            "w1",
            "w1_band",
            "drop_to_next",
            "drop_band",
            "mean_gap",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            wtr.write_record([
                r.level.to_string(),
                r.checkpoint.to_string(),
                r.component.to_string(),
                r.w1.to_string(),
                r.w1_band.to_string(),
                opt(r.drop_to_next),
                opt(r.drop_band),
                r.mean_gap.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl ScalingExperiment {
    fn dims(&self) -> Result<usize> {
        let (d, k) = self.kernel.dims();
        if d != k {
            return Err(Error::invalid(
                "kernel",
                "the rescaling experiment needs d = k",
            ));
        }
        if self.kernel.exponential_terms().is_none() || !self.kernel.is_scalar_profile() {
            return Err(Error::Unsupported(
                "the rescaling experiment needs an exponential-sum kernel with scalar weights"
                    .into(),
            ));
        }
        if self.g0.dim() != d {
            return Err(Error::invalid("g0", format!("expected {d} components")));
        }
        Ok(d)
    }

    fn checkpoint_index(&self, steps: usize, c: f64) -> Result<usize> {
        let pos = c / self.horizon * steps as f64;
        let m = pos.round();
        if (pos - m).abs() > 1e-9 || m < 0.0 || m as usize > steps {
            return Err(Error::invalid(
                "checkpoints",
                format!(
                    "{c} is not a point of a {steps}-step grid on [0, {}]",
                    self.horizon
                ),
            ));
        }
        Ok(m as usize)
    }

    pub fn level_spec(&self, n: u32) -> Result<HawkesSpec> {
        let s = self.schedule.inverse_eps(n);
        HawkesSpec::new(
            self.g0.rescaled(&s, 1.0 / n as f64),
            self.kernel.time_dilated(n as f64)?,
            self.intensity.clone(),
            None,
            self.hawkes_growth_constant,
        )?
        .with_compensating_drift()
    }

    pub fn reference_coefficients(&self) -> Result<EulerCoefficients> {
        let d = self.schedule.limit.len();
        let wrap = match self.root_mode {
            RootMode::Clamp => "pos",
            RootMode::Abs => "abs",
        };
        let mut rows = vec![vec![Expr::constant(0.0); d]; d];
        for (i, lam) in self.schedule.limit.0.iter().enumerate() {
            let inner = lam.wrap_vars(wrap)?;
            rows[i][i] = Expr::parse(&format!("sqrt(pos({}))", inner.source()))?;
        }
        Ok(EulerCoefficients::new(
            VectorExpr::zeros(d),
            Volatility::Matrix(MatrixExpr(rows)),
        ))
    }
}

struct Batch {
    /// `[checkpoint][component][replicate]`.
    marginals: Vec<Vec<Vec<f64>>>,
    l2: Vec<f64>,
}

fn collect(samples: Vec<(Vec<f64>, f64)>, checkpoints: usize, d: usize) -> Batch {
    let mut marginals = vec![vec![Vec::with_capacity(samples.len()); d]; checkpoints];
    let mut l2 = Vec::with_capacity(samples.len());
    for (vals, norm) in samples {
        for c in 0..checkpoints {
            for i in 0..d {
                marginals[c][i].push(vals[c * d + i]);
            }
        }
        l2.push(norm);
    }
    Batch { marginals, l2 }
}

/// Runs the schedule checks, the reference batch and each level.
pub fn scaling_limit_experiment(
    exp: &ScalingExperiment,
    replicates: usize,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<ScalingReport> {
    let d = exp.dims()?;
    exp.schedule.validate(d, &exp.intensity)?;
    if replicates < 2 {
        return Err(Error::invalid("replicates", "need at least two"));
    }
    let probes = dyadic_probes(d, exp.probe_radius, 8);
    let schedule_check = check_schedule(&exp.intensity, &exp.schedule, &probes);
    schedule_check.require(&exp.schedule)?;

    let ref_idx = exp
        .checkpoints
        .iter()
        .map(|&c| exp.checkpoint_index(exp.reference_steps, c))
        .collect::<Result<Vec<_>>>()?;
    let lvl_idx = exp
        .checkpoints
        .iter()
        .map(|&c| exp.checkpoint_index(exp.steps, c))
        .collect::<Result<Vec<_>>>()?;

    // Reference.
    let ref_model = Model::new(exp.g0.clone(), exp.kernel.clone())?;
    let ref_coeffs = exp.reference_coefficients()?;
    let ref_grid = Grid::new(exp.horizon, exp.reference_steps)?;
    let ref_seed = seed.derive(u64::from_le_bytes(*b"referenc"));
    let reference = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = simulate_euler_reference(
                &ref_model,
                &ref_coeffs,
                &ref_grid,
                ref_seed.with_replicate(r),
            )?;
            let vals = ref_idx
                .iter()
                .flat_map(|&m| s.x.at(m).to_vec())
                .collect::<Vec<_>>();
            Ok((vals, lp_norm(&s.x, 2.0, Rule::LeftPoint)))
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = collect(reference, exp.checkpoints.len(), d);

    let mut batches = Vec::new();
    let mut summaries = Vec::new();
    for &n in &exp.schedule.levels {
        let spec = exp.level_spec(n)?;
        spec.check_probes(&probes)?;
        let eps = exp.schedule.eps(n);
        let grid = Grid::new(n as f64 * exp.horizon, exp.steps)?;
        let level_seed = seed.derive(n as u64);
        let runs = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let s = simulate_hawkes(&spec, &grid, level_seed.with_replicate(r), opts)?;
                let x = rescale(&s, n as f64, &eps, exp.horizon)?;
                let vals = lvl_idx
                    .iter()
                    .flat_map(|&m| x.x.at(m).to_vec())
                    .collect::<Vec<_>>();
                let flags = s.y.flags;
                Ok((
                    (vals, lp_norm(&x.x, 2.0, Rule::LeftPoint)),
                    (s.events().len(), flags),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (samples, meta): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let batch = collect(samples, exp.checkpoints.len(), d);
        let (m_lvl, _) = mean_and_se(&batch.l2);
        let (m_ref, _) = mean_and_se(&reference.l2);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;

        // Exact rescaling identities of the level inputs.
        let mut g0_err: f64 = 0.0;
        let mut k_err: f64 = 0.0;
        for m in 0..=exp.steps {
            let t = m as f64 * exp.horizon / exp.steps as f64;
            let lvl = spec.g0.eval(n as f64 * t);
            let lim = exp.g0.eval(t);
            for i in 0..d {
                g0_err = g0_err.max((eps[i] * lvl[i] - lim[i]).abs());
            }
            if t > 0.0 {
                k_err =
                    k_err.max((spec.kernel.profile(n as f64 * t) - exp.kernel.profile(t)).abs());
            }
        }
        summaries.push(LevelSummary {
            level: n,
            l2_mean_gap: (m_lvl - m_ref).abs(),
            l2_second_moment_gap: (sq(&batch.l2) - sq(&reference.l2)).abs(),
            mean_events: meta.iter().map(|m| m.0 as f64).sum::<f64>() / replicates as f64,
            exploded: meta.iter().filter(|m| m.1.exploded).count(),
            intensity_clamped: meta.iter().filter(|m| m.1.intensity_clamped).count(),
            g0_rescaling_error: g0_err,
            kernel_rescaling_error: k_err,
        });
        batches.push(batch);
    }

    // W1 per level with a joint bootstrap, so that the bands of the drops
    // account for the shared reference sample.
    let levels = &exp.schedule.levels;
    let mut rows = Vec::new();
    let mut strictly = true;
    let mut within = true;
    for (ci, &c) in exp.checkpoints.iter().enumerate() {
        for i in 0..d {
            let refs = &reference.marginals[ci][i];
            let w1: Vec<f64> = batches
                .iter()
                .map(|b| wasserstein1(&b.marginals[ci][i], refs))
                .collect::<Result<_>>()?;
            let mut boot = vec![Vec::with_capacity(exp.bootstrap); levels.len()];
            let mut rng = seed.derive(0xB007 + (ci * d + i) as u64).rng();
            let mut rs = vec![0.0; refs.len()];
            let mut ls = vec![0.0; replicates];
            for _ in 0..exp.bootstrap {
                for v in rs.iter_mut() {
                    *v = refs[rng.gen_range(0..refs.len())];
                }
                for (j, b) in batches.iter().enumerate() {
                    let src = &b.marginals[ci][i];
                    for v in ls.iter_mut() {
                        *v = src[rng.gen_range(0..src.len())];
                    }
                    boot[j].push(wasserstein1(&ls, &rs)?);
                }
            }
            let sd = |v: &[f64]| {
                let (_, se) = mean_and_se(v);
                se * (v.len() as f64).sqrt()
            };
            for j in 0..levels.len() {
                let (drop, band) = if j + 1 < levels.len() {
                    let diffs: Vec<f64> = boot[j]
                        .iter()
                        .zip(&boot[j + 1])
                        .map(|(a, b)| a - b)
                        .collect();
                    (Some(w1[j] - w1[j + 1]), Some(2.0 * sd(&diffs)))
                } else {
                    (None, None)
                };
                if let (Some(dv), Some(bv)) = (drop, band) {
                    strictly &= dv > bv;
                    within &= dv >= -bv;
                }
                let (m_lvl, _) = mean_and_se(&batches[j].marginals[ci][i]);
                let (m_ref, _) = mean_and_se(refs);
                rows.push(LevelRow {
                    level: levels[j],
                    checkpoint: c,
                    component: i + 1,
                    w1: w1[j],
                    w1_band: 2.0 * sd(&boot[j]),
                    drop_to_next: drop,
                    drop_band: band,
                    mean_gap: (m_lvl - m_ref).abs(),
                });
            }
        }
    }
    Ok(ScalingReport {
        schedule_check,
        rows,
        levels: summaries,
        replicates,
        strictly_decreasing: strictly,
        nonincreasing_within_bands: within,
        reference: "left-point Volterra Euler scheme for the square-root limit equation",
    })
}
