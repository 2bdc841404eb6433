//! Path simulation for `X = g0 + K * dZ`.
//!
//! Three schemes are available: the exact event-driven construction for
//! finite-activity drivers, the same construction applied to the level-`n`
//! pure-jump approximation of a general triplet, and a left-point Volterra
//! Euler scheme with integrated kernel weights.

pub mod checks;
pub mod euler;
mod memory;
pub mod pure_jump;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::path::GridFunction;
use crate::seed::SeedSpec;

pub use checks::{
    fubini_identity_check, martingale_residuals, pathwise_uniqueness_probe, ResidualStat,
    UniquenessReport,
};
pub use euler::{simulate_euler_reference, EulerCoefficients};
pub use memory::reconstruct;
pub use pure_jump::{simulate_exact, simulate_general, simulate_pure_jump, simulate_with_drift};

/// Uniform grid `t_m = m T / steps`, `m = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub horizon: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "must be positive"));
        }
        Ok(Grid { horizon, steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            m as f64 * self.step()
        }
    }
}

/// Initial curve and kernel of the equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub g0: Curve,
    pub kernel: Kernel,
}

impl Model {
    pub fn new(g0: Curve, kernel: Kernel) -> Result<Self> {
        if g0.dim() != kernel.dims().0 {
            return Err(Error::invalid(
                "g0",
                format!(
                    "has dimension {} but the kernel has {} rows",
                    g0.dim(),
                    kernel.dims().0
                ),
            ));
        }
        Ok(Model { g0, kernel })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.kernel.dims()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub jump: Vec<f64>,
}

/// A piecewise-constant driver given by its jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    pub dim: usize,
    pub horizon: f64,
    pub events: Vec<Event>,
}

impl JumpPath {
    pub fn new(dim: usize, horizon: f64, events: Vec<Event>) -> Result<Self> {
        if events.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::invalid(
                "events",
                "times must be strictly increasing",
            ));
        }
        if events
            .iter()
            .any(|e| e.jump.len() != dim || !(e.time >= 0.0 && e.time <= horizon))
        {
            return Err(Error::invalid(
                "events",
                "jump dimension or time out of range",
            ));
        }
        Ok(JumpPath {
            dim,
            horizon,
            events,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `Z_t = sum_{T_n <= t} J_n`.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for e in self.events.iter().take_while(|e| e.time <= t) {
            for (o, j) in z.iter_mut().zip(&e.jump) {
                *o += j;
            }
        }
        z
    }

    /// `Z_{t-} = sum_{T_n < t} J_n`.
    pub fn left_limit(&self, t: f64) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for e in self.events.iter().take_while(|e| e.time < t) {
            for (o, j) in z.iter_mut().zip(&e.jump) {
                *o += j;
            }
        }
        z
    }

    /// Right-continuous values on a grid.
    pub fn on_grid(&self, grid: &Grid) -> GridFunction {
        let mut z = vec![0.0; self.dim];
        let mut next = 0;
        let mut values = Vec::with_capacity(grid.points() * self.dim);
        for m in 0..grid.points() {
            let t = grid.time(m);
            while next < self.events.len() && self.events[next].time <= t {
                for (o, j) in z.iter_mut().zip(&self.events[next].jump) {
                    *o += j;
                }
                next += 1;
            }
            values.extend_from_slice(&z);
        }
        GridFunction {
            step: grid.step(),
            dim: self.dim,
            values,
        }
    }

    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.events
            .iter()
            .map(|e| {
                let g = e.time - prev;
                prev = e.time;
                g
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Scheme {
    ExactJump,
    ApproxLevel(u32),
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "path", rename_all = "snake_case")]
pub enum Driver {
    Jumps(JumpPath),
    /// Grid values of `Z`.
    Grid(GridFunction),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    /// The event cap was hit or the state became non-finite; the path is
    /// truncated at that point.
    pub exploded: bool,
    /// Some raw intensity was negative and counted as zero.
    pub intensity_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSample {
    pub scheme: Scheme,
    pub seed: SeedSpec,
    pub grid: Grid,
    pub x: GridFunction,
    pub driver: Driver,
    /// `int_0^t int z nu(X_s, dz) ds` on the grid, when tracked.
    pub compensator: Option<GridFunction>,
    /// `int_0^t b(X_s) ds` on the grid for schemes with an explicit drift.
    pub drift_record: Option<GridFunction>,
    pub flags: Flags,
}

impl SolutionSample {
    pub fn jump_path(&self) -> Option<&JumpPath> {
        match &self.driver {
            Driver::Jumps(p) => Some(p),
            Driver::Grid(_) => None,
        }
    }

    /// Grid values of `Z`.
    pub fn driver_on_grid(&self) -> GridFunction {
        match &self.driver {
            Driver::Jumps(p) => {
                let mut z = p.on_grid(&self.grid);
                if let Some(d) = &self.drift_record {
                    for (o, v) in z.values.iter_mut().zip(&d.values) {
                        *o += v;
                    }
                }
                z
            }
            Driver::Grid(g) => g.clone(),
        }
    }

    /// CSV with columns `t, x1..xd`. Floats use the shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.x.dim).map(|i| format!("x{i}")));
        wtr.write_record(&header)?;
        for (m, row) in self.x.rows().enumerate() {
            let mut rec = vec![self.grid.time(m).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON sidecar with the events, seed, scheme and flags.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme,
            "seed": self.seed,
            "grid": self.grid,
            "flags": self.flags,
            "events": self.jump_path().map(|p| &p.events),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub event_cap: usize,
    /// Absolute tolerance on event times found by clock inversion.
    pub clock_tol: f64,
    /// Local error tolerance of the factor integrator used with a drift.
    pub ode_tol: f64,
    pub track_compensator: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            event_cap: 1_000_000,
            clock_tol: 1e-10,
            ode_tol: 1e-9,
            track_compensator: false,
        }
    }
}
