//! Generalized nonlinear Hawkes processes
//! `Y_t = g0(t) + int K(t - s) b(Y_s) ds + int K(t - s) dN_s`, where `N`
//! counts events with intensity `Lambda(Y_{t-})`, and their rescaling to
//! Volterra square-root diffusions.

mod scaling;

use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::engine::{
    simulate_pure_jump, simulate_with_drift, EngineOptions, Grid, JumpPath, Model, SolutionSample,
};
use crate::error::{Error, Result};
use crate::expr::VectorExpr;
use crate::kernel::Kernel;
use crate::path::GridFunction;
use crate::seed::SeedSpec;
use crate::triplet::JumpFamily;

pub use scaling::{
    check_schedule, dyadic_probes, scaling_limit_experiment, LevelCheck, LevelRow, RootMode,
    ScalingExperiment, ScalingReport, ScalingSchedule, ScheduleCheck,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesSpec {
    pub g0: Curve,
    pub kernel: Kernel,
    /// `Lambda: R^d -> R^k_+`.
    pub intensity: VectorExpr,
    /// `b: R^d -> R^k`; absent means zero.
    #[serde(default)]
    pub drift: Option<VectorExpr>,
    /// Constant `c` of `|b(y)| + |Lambda(y)| <= c (1 + |y|)`.
    pub growth_constant: f64,
}

impl HawkesSpec {
    pub fn new(
        g0: Curve,
        kernel: Kernel,
        intensity: VectorExpr,
        drift: Option<VectorExpr>,
        growth_constant: f64,
    ) -> Result<Self> {
        let spec = HawkesSpec {
            g0,
            kernel,
            intensity,
            drift,
            growth_constant,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `b = -Lambda`.
    pub fn with_compensating_drift(mut self) -> Result<Self> {
        let neg = self
            .intensity
            .0
            .iter()
            .map(|e| crate::expr::Expr::parse(&format!("-({})", e.source())))
            .collect::<Result<Vec<_>>>()?;
        self.drift = Some(VectorExpr(neg));
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = self.kernel.dims();
        if self.g0.dim() != d {
            return Err(Error::invalid("g0", format!("expected {d} components")));
        }
        if self.intensity.len() != k {
            return Err(Error::invalid(
                "intensity",
                format!("expected {k} components"),
            ));
        }
        if let Some(b) = &self.drift {
            if b.len() != k || b.arity() > d {
                return Err(Error::invalid(
                    "drift",
                    format!("expected {k} components in x1..x{d}"),
                ));
            }
        }
        if self.intensity.arity() > d {
            return Err(Error::invalid(
                "intensity",
                format!("may only use x1..x{d}"),
            ));
        }
        if !(self.growth_constant >= 0.0) {
            return Err(Error::invalid("growth_constant", "must be nonnegative"));
        }
        Ok(())
    }

    /// Nonnegativity of `Lambda` and the linear growth bound on the probes.
    pub fn check_probes(&self, probes: &[Vec<f64>]) -> Result<()> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for y in probes {
            let lam = self.intensity.eval(y);
            if let Some(v) = lam.iter().find(|v| **v < 0.0) {
                return Err(Error::hypothesis(
                    "nonnegative intensity",
                    format!("Lambda = {v} at y = {y:?}"),
                ));
            }
            let b = self.drift.as_ref().map_or(0.0, |b| norm(&b.eval(y)));
            let lhs = b + norm(&lam);
            let rhs = self.growth_constant * (1.0 + norm(y));
            if lhs > rhs * (1.0 + 1e-12) {
                return Err(Error::hypothesis(
                    "linear growth of drift and intensity",
                    format!("|b| + |Lambda| = {lhs} > {rhs} at y = {y:?}"),
                ));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.g0.clone(), self.kernel.clone())
    }

    pub fn family(&self) -> JumpFamily {
        JumpFamily::hawkes(self.intensity.clone())
    }
}

/// `Y` together with the counting process `N` and `M = N - int Lambda(Y) ds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesSample {
    pub y: SolutionSample,
    pub counts: GridFunction,
    pub compensated: GridFunction,
}

impl HawkesSample {
    pub fn events(&self) -> &JumpPath {
        self.y.jump_path().expect("event-driven sample")
    }
}

pub fn simulate_hawkes(
    spec: &HawkesSpec,
    grid: &Grid,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<HawkesSample> {
    spec.validate()?;
    let model = spec.model()?;
    let family = spec.family();
    let opts = EngineOptions {
        track_compensator: true,
        ..*opts
    };
    let y = match spec.drift.as_ref().filter(|b| !b.is_zero()) {
        None => simulate_pure_jump(&model, &family, grid, seed, &opts)?,
        Some(b) => {
            let drift = |x: &[f64], out: &mut [f64]| b.eval_into(x, out);
            simulate_with_drift(&model, &family, &drift, grid, seed, &opts)?
        }
    };
    let counts = y.jump_path().expect("event-driven sample").on_grid(grid);
    let comp = y.compensator.as_ref().expect("tracked");
    let compensated = counts.sub(comp)?;
    Ok(HawkesSample {
        y,
        counts,
        compensated,
    })
}

/// `X_t = eps Y_{n t}`, `Z_t = eps M_{n t}` on `[0, horizon]`, with event
/// times divided by `n` and jumps multiplied by `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledSample {
    pub x: GridFunction,
    pub z: GridFunction,
    pub events: JumpPath,
}

pub fn rescale(sample: &HawkesSample, n: f64, eps: &[f64], horizon: f64) -> Result<RescaledSample> {
    let grid = sample.y.grid;
    let (d, k) = (sample.y.x.dim, sample.counts.dim);
    if eps.len() != d || d != k {
        return Err(Error::invalid(
            "eps",
            format!("need {d} entries with d = k"),
        ));
    }
    let needed = n * horizon;
    if grid.horizon < needed * (1.0 - 1e-12) {
        return Err(Error::invalid(
            "horizon",
            format!(
                "sample covers [0, {}] but rescaling to [0, {horizon}] needs [0, {needed}]",
                grid.horizon
            ),
        ));
    }
    let h = grid.step();
    let steps = (needed / h).round() as usize;
    if ((steps as f64) * h - needed).abs() > 1e-9 * needed.max(1.0) || steps == 0 {
        return Err(Error::invalid(
            "horizon",
            format!("n T = {needed} is not a multiple of the sample step {h}"),
        ));
    }
    let scale = |g: &GridFunction| GridFunction {
        step: horizon / steps as f64,
        dim: g.dim,
        values: g.values[..(steps + 1) * g.dim]
            .chunks(g.dim)
            .flat_map(|r| r.iter().zip(eps).map(|(v, e)| v * e).collect::<Vec<_>>())
            .collect(),
    };
    let events = sample
        .events()
        .events
        .iter()
        .filter(|e| e.time <= needed)
        .map(|e| crate::engine::Event {
            time: e.time / n,
            jump: e.jump.iter().zip(eps).map(|(j, s)| j * s).collect(),
        })
        .collect();
    Ok(RescaledSample {
        x: scale(&sample.y.x),
        z: scale(&sample.compensated),
        events: JumpPath {
            dim: k,
            horizon,
            events,
        },
    })
}
