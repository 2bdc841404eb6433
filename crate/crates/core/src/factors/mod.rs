//! Finite-dimensional factor representation for exponential-sum kernels.
//!
//! With `K(t) = sum_i C_i e^{-lambda_i t}` the solution is
//! `X_t = g0(t) + sum_i C_i Y^i_t` where `dY^i = -lambda_i Y^i dt + dZ`,
//! `Y^i_0 = 0`. Over a grid cell `[t_m, t_{m+1})` the factors are advanced by
//! `Y <- e^{-lambda h} Y + phi(lambda h) dC + sum_T e^{-lambda (t_{m+1} - T)} J_T`
//! where `dC` is the continuous part of the driver increment, spread uniformly
//! over the cell, and the jumps enter at their exact times. `phi` is the cell
//! average of `e^{-lambda s}`, so the result equals the direct convolution of
//! the same driver path with the cell-averaged kernel to roundoff.

pub mod convergence;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::engine::euler::EulerCoefficients;
use crate::engine::{
    pure_jump, Driver, EngineOptions, Event, Flags, Grid, JumpPath, Model, Scheme, SolutionSample,
};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::path::GridFunction;
use crate::seed::SeedSpec;
use crate::triplet::Triplet;

pub use convergence::{
    factor_convergence_experiment, ConvergenceReport, ConvergenceSetup, LevelReport, MomentGap,
};

/// A driver path on a grid: per-cell continuous increments plus jumps at
/// their times. A jump at `T` belongs to the cell with `t_m <= T < t_{m+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    pub grid: Grid,
    pub dim: usize,
    /// `steps * dim` continuous increments.
    pub continuous: Vec<f64>,
    pub events: Vec<Event>,
}

impl DriverPath {
    pub fn new(grid: Grid, dim: usize, continuous: Vec<f64>, events: Vec<Event>) -> Result<Self> {
        if continuous.len() != grid.steps * dim {
            return Err(Error::invalid(
                "continuous",
                format!(
                    "expected {} increments, got {}",
                    grid.steps * dim,
                    continuous.len()
                ),
            ));
        }
        JumpPath::new(dim, grid.horizon, events.clone())?;
        Ok(DriverPath {
            grid,
            dim,
            continuous,
            events,
        })
    }

    /// A pure-jump path.
    pub fn jumps(grid: Grid, path: &JumpPath) -> Result<Self> {
        Self::new(
            grid,
            path.dim,
            vec![0.0; grid.steps * path.dim],
            path.events.clone(),
        )
    }

    /// `Z` on the grid, right-continuous.
    pub fn on_grid(&self) -> GridFunction {
        let k = self.dim;
        let mut values = vec![0.0; self.grid.points() * k];
        let mut next = 0;
        for m in 0..self.grid.steps {
            let t = self.grid.time(m + 1);
            let (prev, cur) = values.split_at_mut((m + 1) * k);
            let cur = &mut cur[..k];
            cur.copy_from_slice(&prev[m * k..]);
            for (o, c) in cur.iter_mut().zip(&self.continuous[m * k..(m + 1) * k]) {
                *o += c;
            }
            while next < self.events.len() && self.events[next].time <= t {
                cur.iter_mut()
                    .zip(&self.events[next].jump)
                    .for_each(|(o, j)| *o += j);
                next += 1;
            }
        }
        GridFunction {
            step: self.grid.step(),
            dim: k,
            values,
        }
    }

    fn cell_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.grid.steps);
        let mut start = 0;
        for m in 0..self.grid.steps {
            let end_t = self.grid.time(m + 1);
            let mut end = start;
            while end < self.events.len() && self.events[end].time < end_t {
                end += 1;
            }
            out.push(start..end);
            start = end;
        }
        out
    }
}

/// Factor states on a grid for one exponential-sum kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSystem {
    pub rates: Vec<f64>,
    /// `d x k` weight per factor.
    pub weights: Vec<DMatrix<f64>>,
    pub grid: Grid,
    /// `Y^i` on the grid, one `k`-dimensional function per factor.
    pub states: Vec<GridFunction>,
}

impl FactorSystem {
    pub fn from_kernel(kernel: &Kernel, grid: Grid) -> Result<Self> {
        let terms = kernel.exponential_terms().ok_or_else(|| {
            Error::Unsupported(format!(
                "factor simulation needs an exponential-sum kernel, got {}; approximate it with fit_exponential_sum first",
                kernel.family_name()
            ))
        })?;
        let k = kernel.dims().1;
        Ok(FactorSystem {
            rates: terms.iter().map(|t| t.0).collect(),
            states: vec![
                GridFunction {
                    step: grid.step(),
                    dim: k,
                    values: vec![0.0; grid.points() * k],
                };
                terms.len()
            ],
            weights: terms.into_iter().map(|t| t.1).collect(),
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Runs the factors along a fixed driver path.
    pub fn drive(&mut self, path: &DriverPath) -> Result<()> {
        if path.grid != self.grid {
            return Err(Error::invalid(
                "driver",
                "grid differs from the factor grid",
            ));
        }
        let k = path.dim;
        let mut stepper = FactorStepper::new(
            self.rates.clone(),
            self.weights.clone(),
            self.grid.step(),
            k,
        );
        for (m, range) in path.cell_ranges().into_iter().enumerate() {
            stepper.step(
                self.grid.time(m + 1),
                &path.continuous[m * k..(m + 1) * k],
                &path.events[range],
            );
            self.record(m + 1, &stepper.states);
        }
        Ok(())
    }

    fn record(&mut self, m: usize, states: &[DVector<f64>]) {
        for (g, y) in self.states.iter_mut().zip(states) {
            let k = g.dim;
            g.values[m * k..(m + 1) * k].copy_from_slice(y.as_slice());
        }
    }

    /// `g0(t_m) + sum_i C_i Y^i(t_m)`.
    pub fn reconstruct(&self, g0: &crate::curve::Curve) -> GridFunction {
        let d = g0.dim();
        let mut values = vec![0.0; self.grid.points() * d];
        for (m, out) in values.chunks_mut(d).enumerate() {
            g0.eval_into(self.grid.time(m), out);
            for (w, y) in self.weights.iter().zip(&self.states) {
                let v = w * DVector::from_column_slice(y.at(m));
                out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o += v);
            }
        }
        GridFunction {
            step: self.grid.step(),
            dim: d,
            values,
        }
    }
}

/// Direct convolution of a driver path:
/// `X(t_m) = g0(t_m) + sum_{j<m} w_{m-j} dC_j + sum_{T < t_m} K(t_m - T) J_T`
/// with `w_l` the kernel's average over `[(l-1)h, lh]`.
pub fn convolve_driver(model: &Model, path: &DriverPath) -> Result<GridFunction> {
    let (d, k) = model.dims();
    if path.dim != k {
        return Err(Error::invalid(
            "driver",
            format!("has dimension {} but the kernel has {k} columns", path.dim),
        ));
    }
    let mut conv = Convolution::direct(model, &path.grid);
    let mut values = vec![0.0; path.grid.points() * d];
    model.g0.eval_into(0.0, &mut values[..d]);
    for (m, range) in path.cell_ranges().into_iter().enumerate() {
        let t = path.grid.time(m + 1);
        conv.push(t, &path.continuous[m * k..(m + 1) * k], &path.events[range]);
        let out = &mut values[(m + 1) * d..(m + 2) * d];
        model.g0.eval_into(t, out);
        conv.add_value(t, out);
    }
    Ok(GridFunction {
        step: path.grid.step(),
        dim: d,
        values,
    })
}

/// How the driver of a factor simulation is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorDriver {
    /// The exact event-driven engine; finite-activity triplets without a
    /// diffusion part. A drift is recorded on the grid and spread uniformly
    /// over each cell.
    Exact,
    /// Left-point coefficients on each cell, Brownian increments, and
    /// Poisson jumps placed at uniform times inside the cell.
    Euler,
}

/// Simulates `X = g0 + K * dZ` for an exponential-sum kernel through its
/// factors.
pub fn simulate_factor_system(
    model: &Model,
    triplet: &Triplet,
    grid: &Grid,
    seed: SeedSpec,
    driver: FactorDriver,
    opts: &EngineOptions,
) -> Result<(SolutionSample, FactorSystem)> {
    let mut system = FactorSystem::from_kernel(&model.kernel, *grid)?;
    match driver {
        FactorDriver::Exact => {
            let sample = pure_jump::simulate_exact(model, triplet, grid, seed, opts)?;
            let path = driver_of(&sample)?;
            system.drive(&path)?;
            let x = system.reconstruct(&model.g0);
            Ok((SolutionSample { x, ..sample }, system))
        }
        FactorDriver::Euler => {
            let coeffs = EulerCoefficients::from_triplet(triplet);
            let (sample, path) = simulate_factor_euler(model, &coeffs, grid, seed)?;
            system.drive(&path)?;
            Ok((sample, system))
        }
    }
}

/// The driver path of an exact-engine sample.
pub fn driver_of(sample: &SolutionSample) -> Result<DriverPath> {
    let jumps = sample
        .jump_path()
        .ok_or_else(|| Error::Unsupported("driver path of a grid-driven sample".into()))?;
    let k = jumps.dim;
    let continuous = match &sample.drift_record {
        Some(dr) => (0..sample.grid.steps)
            .flat_map(|m| (0..k).map(move |i| (m, i)))
            .map(|(m, i)| dr.at(m + 1)[i] - dr.at(m)[i])
            .collect(),
        None => vec![0.0; sample.grid.steps * k],
    };
    DriverPath::new(sample.grid, k, continuous, jumps.events.clone())
}

/// Euler-type simulation with exact jump times, through the factors of an
/// exponential-sum kernel.
pub fn simulate_factor_euler(
    model: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
) -> Result<(SolutionSample, DriverPath)> {
    let terms = model.kernel.exponential_terms().ok_or_else(|| {
        Error::Unsupported(format!(
            "factor simulation needs an exponential-sum kernel, got {}; approximate it with fit_exponential_sum first",
            model.kernel.family_name()
        ))
    })?;
    let k = model.dims().1;
    let conv = Convolution::Factor(FactorStepper::new(
        terms.iter().map(|t| t.0).collect(),
        terms.into_iter().map(|t| t.1).collect(),
        grid.step(),
        k,
    ));
    run_cells(model, coeffs, grid, seed, conv)
}

/// The same scheme and random stream as [`simulate_factor_euler`], with the
/// memory term summed directly. Works for any kernel; with identical seeds
/// both see the same noise as long as the jump intensity does not depend on
/// the state.
pub fn simulate_direct_euler(
    model: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
) -> Result<(SolutionSample, DriverPath)> {
    run_cells(model, coeffs, grid, seed, Convolution::direct(model, grid))
}

fn run_cells(
    model: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
    mut conv: Convolution,
) -> Result<(SolutionSample, DriverPath)> {
    let (d, k) = model.dims();
    coeffs.validate(d, k)?;
    let h = grid.step();
    let r = coeffs.noise_dim();
    let mut rng = seed.rng();
    let mut flags = Flags::default();
    let mut x = vec![0.0; grid.points() * d];
    let mut continuous = vec![0.0; grid.steps * k];
    let mut events: Vec<Event> = Vec::new();
    let mut b = vec![0.0; k];
    let mut dw = DVector::zeros(r);
    let mut jump = vec![0.0; k];
    let mut cell: Vec<Event> = Vec::new();
    model.g0.eval_into(0.0, &mut x[..d]);

    for m in 0..grid.steps {
        let xm = x[m * d..(m + 1) * d].to_vec();
        if flags.exploded || xm.iter().any(|v| !v.is_finite()) {
            flags.exploded = true;
            x[(m + 1) * d..].fill(f64::NAN);
            break;
        }
        let (t0, t1) = (grid.time(m), grid.time(m + 1));
        coeffs.drift.eval_into(&xm, &mut b);
        for v in dw.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = h.sqrt() * n;
        }
        let diff = coeffs.sigma(&xm)? * &dw;
        let dc = &mut continuous[m * k..(m + 1) * k];
        for i in 0..k {
            dc[i] = b[i] * h + diff[i];
        }
        cell.clear();
        if !coeffs.jumps.is_empty() {
            if coeffs.jumps.intensity_clamped(&xm) {
                flags.intensity_clamped = true;
            }
            let lam = coeffs.jumps.intensity(&xm);
            if lam > 0.0 {
                let count = Poisson::new(lam * h)
                    .map_err(|e| Error::Domain(format!("jump intensity {lam} at x = {xm:?}: {e}")))?
                    .sample(&mut rng) as u64;
                for _ in 0..count {
                    let u: f64 = rng.gen();
                    let time = (t0 + u * h).min(t1);
                    if coeffs.jumps.sample_jump(&xm, &mut rng, &mut jump) && time < t1 {
                        cell.push(Event {
                            time,
                            jump: jump.clone(),
                        });
                    }
                }
                cell.sort_by(|a, b| a.time.total_cmp(&b.time));
                cell.dedup_by(|a, b| a.time == b.time);
            }
            if coeffs.compensate {
                for (o, m1) in dc.iter_mut().zip(coeffs.jumps.first_moment(&xm, k)) {
                    *o -= m1 * h;
                }
            }
        }
        conv.push(t1, dc, &cell);
        let out = &mut x[(m + 1) * d..(m + 2) * d];
        model.g0.eval_into(t1, out);
        conv.add_value(t1, out);
        events.append(&mut cell);
    }

    let path = DriverPath {
        grid: *grid,
        dim: k,
        continuous,
        events,
    };
    let sample = SolutionSample {
        scheme: Scheme::Euler,
        seed,
        grid: *grid,
        x: GridFunction {
            step: h,
            dim: d,
            values: x,
        },
        driver: Driver::Grid(path.on_grid()),
        compensator: None,
        drift_record: None,
        flags,
    };
    Ok((sample, path))
}

struct FactorStepper {
    rates: Vec<f64>,
    weights: Vec<DMatrix<f64>>,
    decay: Vec<f64>,
    phi: Vec<f64>,
    states: Vec<DVector<f64>>,
}

impl FactorStepper {
    fn new(rates: Vec<f64>, weights: Vec<DMatrix<f64>>, h: f64, k: usize) -> Self {
        let decay = rates.iter().map(|l| (-l * h).exp()).collect();
        let phi = rates
            .iter()
            .map(|l| {
                let lh = l * h;
                if lh == 0.0 {
                    1.0
                } else {
                    -(-lh).exp_m1() / lh
                }
            })
            .collect();
        let states = vec![DVector::zeros(k); rates.len()];
        FactorStepper {
            rates,
            weights,
            decay,
            phi,
            states,
        }
    }

    fn step(&mut self, t_end: f64, continuous: &[f64], jumps: &[Event]) {
        for (i, y) in self.states.iter_mut().enumerate() {
            *y *= self.decay[i];
            for (v, c) in y.iter_mut().zip(continuous) {
                *v += self.phi[i] * c;
            }
            for e in jumps {
                let w = (-self.rates[i] * (t_end - e.time)).exp();
                for (v, j) in y.iter_mut().zip(&e.jump) {
                    *v += w * j;
                }
            }
        }
    }

    fn add_value(&self, out: &mut [f64]) {
        for (w, y) in self.weights.iter().zip(&self.states) {
            let v = w * y;
            out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o += v);
        }
    }
}

enum Convolution {
    Factor(FactorStepper),
    Direct {
        kernel: Kernel,
        weights: Vec<DMatrix<f64>>,
        continuous: Vec<DVector<f64>>,
        events: Vec<Event>,
    },
}

impl Convolution {
    fn direct(model: &Model, grid: &Grid) -> Convolution {
        let h = grid.step();
        Convolution::Direct {
            kernel: model.kernel.clone(),
            weights: (1..=grid.steps)
                .map(|l| model.kernel.cell_integral((l - 1) as f64 * h, l as f64 * h) / h)
                .collect(),
            continuous: Vec::with_capacity(grid.steps),
            events: Vec::new(),
        }
    }

    fn push(&mut self, t_end: f64, continuous: &[f64], jumps: &[Event]) {
        match self {
            Convolution::Factor(f) => f.step(t_end, continuous, jumps),
            Convolution::Direct {
                continuous: c,
                events,
                ..
            } => {
                c.push(DVector::from_column_slice(continuous));
                events.extend_from_slice(jumps);
            }
        }
    }

    fn add_value(&self, t: f64, out: &mut [f64]) {
        match self {
            Convolution::Factor(f) => f.add_value(out),
            Convolution::Direct {
                kernel,
                weights,
                continuous,
                events,
            } => {
                let m = continuous.len();
                for (j, dc) in continuous.iter().enumerate() {
                    let v = &weights[m - 1 - j] * dc;
                    out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o += v);
                }
                for e in events.iter().filter(|e| e.time < t) {
                    kernel.apply_add(t - e.time, &e.jump, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Curve;
    use crate::triplet::JumpFamily;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(1.0, 50).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    #[test]
    fn rate_zero_factor_is_running_sum() {
        let model = Model::new(
            Curve::parse(&["1 + t"]).unwrap(),
            Kernel::exponential(1.0, 0.0).unwrap(),
        )
        .unwrap();
        let triplet = Triplet::pure_jump(1, 1, JumpFamily::poisson(3.0, &[1.0]))
            .unwrap()
            .with_uncompensated_jumps();
        let (s, sys) = simulate_factor_system(
            &model,
            &triplet,
            &grid(),
            SeedSpec::new(5, 0),
            FactorDriver::Exact,
            &EngineOptions::default(),
        )
        .unwrap();
        assert_eq!(sys.len(), 1);
        let p = s.jump_path().unwrap();
        assert!(!p.is_empty());
        for m in 0..grid().points() {
            let t = grid().time(m);
            let n = p.left_limit(t)[0];
            assert!((s.x.at(m)[0] - (1.0 + t + n)).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn single_jump_decays_exactly() {
        let g = grid();
        let lam = 40.0;
        let model = Model::new(
            Curve::constant(&[0.5]),
            Kernel::exponential(1.0, lam).unwrap(),
        )
        .unwrap();
        let path = DriverPath::new(
            g,
            1,
            vec![0.0; g.steps],
            vec![Event {
                time: 0.3137,
                jump: vec![1.0],
            }],
        )
        .unwrap();
        let mut sys = FactorSystem::from_kernel(&model.kernel, g).unwrap();
        sys.drive(&path).unwrap();
        let x = sys.reconstruct(&model.g0);
        for m in 0..g.points() {
            let t = g.time(m);
            let want = if t > 0.3137 {
                (-lam * (t - 0.3137)).exp()
            } else {
                0.0
            };
            assert!((x.at(m)[0] - 0.5 - want).abs() < 1e-14, "m = {m}");
        }
    }

    #[test]
    fn zero_driver_leaves_g0() {
        let model = Model::new(
            Curve::parse(&["1 + t * t"]).unwrap(),
            Kernel::exponential_sum(&[(1.0, 2.0), (0.5, 30.0)]).unwrap(),
        )
        .unwrap();
        let (s, sys) = simulate_factor_system(
            &model,
            &Triplet::zero(1, 1),
            &grid(),
            SeedSpec::new(1, 0),
            FactorDriver::Euler,
            &EngineOptions::default(),
        )
        .unwrap();
        for m in 0..grid().points() {
            let t = grid().time(m);
            assert_eq!(s.x.at(m)[0], 1.0 + t * t);
        }
        assert!(sys
            .states
            .iter()
            .all(|y| y.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn non_exponential_kernel_is_rejected() {
        let model = Model::new(Curve::constant(&[0.0]), Kernel::fractional(0.75).unwrap()).unwrap();
        let err = simulate_factor_system(
            &model,
            &Triplet::zero(1, 1),
            &grid(),
            SeedSpec::new(1, 0),
            FactorDriver::Euler,
            &EngineOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("fit_exponential_sum"), "{err}");
    }

    #[test]
    fn exact_driver_matches_engine_path() {
        let model = Model::new(
            Curve::constant(&[0.2]),
            Kernel::exponential_sum(&[(0.7, 0.5), (0.3, 25.0), (0.1, 800.0)]).unwrap(),
        )
        .unwrap();
        let triplet = Triplet::pure_jump(
            1,
            1,
            JumpFamily::hawkes(crate::VectorExpr::parse(&["1 + x"]).unwrap()),
        )
        .unwrap()
        .with_uncompensated_jumps();
        let g = Grid::new(2.0, 400).unwrap();
        for rep in 0..5 {
            let seed = SeedSpec::new(9, rep);
            let engine =
                pure_jump::simulate_exact(&model, &triplet, &g, seed, &EngineOptions::default())
                    .unwrap();
            let (s, _) = simulate_factor_system(
                &model,
                &triplet,
                &g,
                seed,
                FactorDriver::Exact,
                &EngineOptions::default(),
            )
            .unwrap();
            for (a, b) in s.x.values.iter().zip(&engine.x.values) {
                assert!(rel(*a, *b) <= 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn euler_factor_and_direct_share_noise() {
        let model = Model::new(
            Curve::constant(&[1.0]),
            Kernel::exponential_sum(&[(1.0, 1.0), (0.5, 60.0)]).unwrap(),
        )
        .unwrap();
        let coeffs = EulerCoefficients::parse(&["0.5 - x1"], &[vec!["0.3"]])
            .unwrap()
            .with_jumps(JumpFamily::poisson(4.0, &[0.25]), true);
        let g = Grid::new(1.0, 200).unwrap();
        for rep in 0..4 {
            let seed = SeedSpec::new(3, rep);
            let (f, pf) = simulate_factor_euler(&model, &coeffs, &g, seed).unwrap();
            let (dsm, pd) = simulate_direct_euler(&model, &coeffs, &g, seed).unwrap();
            assert_eq!(pf.events, pd.events);
            for (a, b) in f.x.values.iter().zip(&dsm.x.values) {
                assert!(rel(*a, *b) <= 1e-10, "{a} vs {b}");
            }
            let again = convolve_driver(&model, &pf).unwrap();
            for (a, b) in f.x.values.iter().zip(&again.values) {
                assert!(rel(*a, *b) <= 1e-10);
            }
        }
    }

    #[test]
    fn driver_on_grid_counts_jumps_right_continuously() {
        let g = Grid::new(1.0, 4).unwrap();
        let p = DriverPath::new(
            g,
            1,
            vec![0.1, 0.1, 0.1, 0.1],
            vec![
                Event {
                    time: 0.25,
                    jump: vec![1.0],
                },
                Event {
                    time: 0.6,
                    jump: vec![2.0],
                },
            ],
        )
        .unwrap();
        let z = p.on_grid();
        let want = [0.0, 1.1, 1.2, 3.3, 3.4];
        for (a, b) in z.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(p.cell_ranges(), vec![0..0, 0..1, 1..2, 2..2]);
    }

    #[test]
    fn bounded_variation_between_events() {
        // One positive-weight factor and a positive drift: X - g0 is smooth
        // between jumps, so its grid variation there is at most the drift
        // mass plus the decay of the level reached.
        let model = Model::new(
            Curve::constant(&[0.0]),
            Kernel::exponential(1.0, 3.0).unwrap(),
        )
        .unwrap();
        let coeffs = EulerCoefficients::parse(&["1"], &[vec!["0"]])
            .unwrap()
            .with_jumps(JumpFamily::poisson(5.0, &[1.0]), false);
        let g = Grid::new(1.0, 1000).unwrap();
        let (s, p) = simulate_factor_euler(&model, &coeffs, &g, SeedSpec::new(2, 0)).unwrap();
        let jump_cells: std::collections::HashSet<usize> = p
            .events
            .iter()
            .map(|e| (e.time / g.step()).floor() as usize)
            .collect();
        let tv: f64 = (0..g.steps)
            .filter(|m| !jump_cells.contains(m))
            .map(|m| (s.x.at(m + 1)[0] - s.x.at(m)[0]).abs())
            .sum();
        let sup = s.x.values.iter().cloned().fold(0.0, f64::max);
        assert!(tv <= 1.0 + 3.0 * sup + 1e-9, "tv = {tv}");
    }

    fn arb_path() -> impl Strategy<Value = DriverPath> {
        (
            prop::collection::vec(-1.0..1.0f64, 20),
            prop::collection::btree_set(0u32..10_000, 0..6),
            prop::collection::vec(-2.0..2.0f64, 6),
        )
            .prop_map(|(cont, times, jumps)| {
                let g = Grid::new(1.0, 20).unwrap();
                let events = times
                    .into_iter()
                    .zip(jumps)
                    .map(|(t, j)| Event {
                        time: t as f64 / 10_000.0,
                        jump: vec![j],
                    })
                    .collect();
                DriverPath::new(g, 1, cont, events).unwrap()
            })
    }

    proptest! {
        #[test]
        fn reconstruction_equals_direct_convolution(path in arb_path(), c1 in -2.0..2.0f64, l2 in 0.0..200.0f64) {
            let model = Model::new(
                Curve::parse(&["t"]).unwrap(),
                Kernel::exponential_sum(&[(c1, 0.0), (1.0, l2)]).unwrap(),
            ).unwrap();
            let mut sys = FactorSystem::from_kernel(&model.kernel, path.grid).unwrap();
            sys.drive(&path).unwrap();
            let a = sys.reconstruct(&model.g0);
            let b = convolve_driver(&model, &path).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(rel(*x, *y) <= 1e-10);
            }
        }

        #[test]
        fn doubling_weights_doubles_memory(path in arb_path(), c1 in -2.0..2.0f64, l2 in 0.0..50.0f64) {
            let g0 = Curve::parse(&["1 - t"]).unwrap();
            let one = Kernel::exponential_sum(&[(c1, 0.5), (0.4, l2)]).unwrap();
            let two = Kernel::exponential_sum(&[(2.0 * c1, 0.5), (0.8, l2)]).unwrap();
            let run = |k: &Kernel| {
                let mut s = FactorSystem::from_kernel(k, path.grid).unwrap();
                s.drive(&path).unwrap();
                s.reconstruct(&g0)
            };
            let (a, b) = (run(&one), run(&two));
            for m in 0..path.grid.points() {
                let base = g0.eval(path.grid.time(m))[0];
                prop_assert!((2.0 * (a.at(m)[0] - base) - (b.at(m)[0] - base)).abs() <= 1e-12);
            }
        }
    }
}
