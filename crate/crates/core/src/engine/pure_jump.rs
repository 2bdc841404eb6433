//! Event-driven simulation of `X = g0 + K * dZ` for finite-activity drivers.
//!
//! Without a drift, `X` between events is an explicit function of the past
//! events. Event times invert the clock `int nu(X_s, R^k) ds` against unit
//! exponential draws; families with a constant rate bound are run on a
//! Poisson clock of that rate whose surplus draws are null events. With a
//! drift the kernel must be an exponential sum: the factors
//! `dY_i = -lambda_i Y_i dt + dZ` are integrated between events by an
//! integrating-factor Runge-Kutta scheme together with the clock.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1};

use super::memory::{Factors, Memory};
use super::{Driver, EngineOptions, Event, Flags, Grid, JumpPath, Model, Scheme, SolutionSample};
use crate::error::{Error, Result};
use crate::generator::approximate_triplet;
use crate::path::GridFunction;
use crate::quad::{self, Tolerance};
use crate::seed::SeedSpec;
use crate::triplet::{JumpFamily, Triplet};

/// A drift `b(x)` written into its second argument.
pub type DriftFn<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

fn check_family(model: &Model, family: &JumpFamily) -> Result<()> {
    let (d, k) = model.dims();
    family.validate(k)?;
    if family.arity() > d {
        return Err(Error::invalid(
            "jumps",
            format!("intensity depends on x{} but d = {d}", family.arity()),
        ));
    }
    Ok(())
}

/// Exact simulation with driver `Z = sum of jumps` of `family`.
pub fn simulate_pure_jump(
    model: &Model,
    family: &JumpFamily,
    grid: &Grid,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<SolutionSample> {
    check_family(model, family)?;
    let mut rng = seed.rng();
    let (events, flags) = if let Some(rate) = family.uniform_rate() {
        run_uniform(model, family, rate, grid.horizon, &mut rng, opts)
    } else {
        run_clock(model, family, grid.horizon, &mut rng, opts)?
    };
    let x = super::reconstruct(model, &events, grid);
    let compensator = if opts.track_compensator {
        Some(compensator_on_grid(model, family, &events, grid))
    } else {
        None
    };
    Ok(SolutionSample {
        scheme: Scheme::ExactJump,
        seed,
        grid: *grid,
        x: truncate_after_explosion(x, &events, flags),
        driver: Driver::Jumps(JumpPath {
            dim: model.dims().1,
            horizon: grid.horizon,
            events,
        }),
        compensator,
        drift_record: None,
        flags,
    })
}

/// Exact simulation with driver `Z = int b(X_s) ds + sum of jumps`; the
/// kernel must be a finite exponential sum.
pub fn simulate_with_drift(
    model: &Model,
    family: &JumpFamily,
    drift: DriftFn,
    grid: &Grid,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<SolutionSample> {
    check_family(model, family)?;
    let factors = Factors::new(model).ok_or_else(|| {
        Error::Unsupported(format!(
            "a drift with the {} kernel; use an exponential-sum kernel or the approximation scheme",
            model.kernel.family_name()
        ))
    })?;
    let mut rng = seed.rng();
    FactorOde::new(model, family, drift, factors, opts).run(grid, seed, &mut rng)
}

/// Exact simulation of a finite-activity triplet without diffusion. The
/// driver is `int b_0(X_s) ds + sum of jumps` with
/// `b_0 = b - int z nu(dz)`; a nonzero `b_0` needs an exponential-sum kernel.
pub fn simulate_exact(
    model: &Model,
    triplet: &Triplet,
    grid: &Grid,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<SolutionSample> {
    check_triplet(model, triplet)?;
    if triplet.has_diffusion() {
        return Err(Error::Unsupported(
            "exact simulation with a diffusion part; use the approximation or Euler scheme".into(),
        ));
    }
    let family = triplet.jumps();
    let plain_sum =
        triplet.drift().is_zero() && (triplet.jumps_uncompensated() || family.is_empty());
    if plain_sum {
        return simulate_pure_jump(model, family, grid, seed, opts);
    }
    let k = model.dims().1;
    let compensated = !triplet.jumps_uncompensated();
    let drift = move |x: &[f64], out: &mut [f64]| {
        triplet.drift().eval_into(x, out);
        if compensated {
            for (o, m) in out.iter_mut().zip(family.first_moment(x, k)) {
                *o -= m;
            }
        }
    };
    simulate_with_drift(model, family, &drift, grid, seed, opts)
}

/// Level-`n` approximation: the triplet is replaced by its pure-jump
/// approximation, which is then simulated exactly.
pub fn simulate_general(
    model: &Model,
    triplet: &Triplet,
    level: u32,
    grid: &Grid,
    seed: SeedSpec,
    opts: &EngineOptions,
) -> Result<SolutionSample> {
    check_triplet(model, triplet)?;
    let approx = approximate_triplet(triplet, level)?;
    let mut s = simulate_pure_jump(model, approx.jumps(), grid, seed, opts)?;
    s.scheme = Scheme::ApproxLevel(level);
    Ok(s)
}

fn check_triplet(model: &Model, triplet: &Triplet) -> Result<()> {
    let (d, k) = model.dims();
    if triplet.dims() != (d, k) {
        return Err(Error::invalid(
            "triplet",
            format!(
                "dims {:?} do not match the kernel's {:?}",
                triplet.dims(),
                (d, k)
            ),
        ));
    }
    Ok(())
}

fn truncate_after_explosion(mut x: GridFunction, events: &[Event], flags: Flags) -> GridFunction {
    if flags.exploded {
        let last = events.last().map_or(0.0, |e| e.time);
        let d = x.dim;
        for m in 0..x.len() {
            if x.time(m) > last {
                x.values[m * d..(m + 1) * d].fill(f64::NAN);
            }
        }
    }
    x
}

fn run_uniform<R: Rng>(
    model: &Model,
    family: &JumpFamily,
    rate: f64,
    horizon: f64,
    rng: &mut R,
    opts: &EngineOptions,
) -> (Vec<Event>, Flags) {
    let mut flags = Flags::default();
    let mut mem = Memory::new(model);
    if !(rate > 0.0 && rate.is_finite()) {
        return (Vec::new(), flags);
    }
    let (d, k) = model.dims();
    let mut x = vec![0.0; d];
    let mut jump = vec![0.0; k];
    let clock = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += clock.sample(rng);
        if t >= horizon {
            break;
        }
        mem.x_minus(t, &mut x);
        if x.iter().any(|v| !v.is_finite()) {
            flags.exploded = true;
            break;
        }
        if family.intensity_clamped(&x) {
            flags.intensity_clamped = true;
        }
        if family.sample_padded(&x, rate, rng, &mut jump) {
            if mem.events().len() >= opts.event_cap {
                flags.exploded = true;
                break;
            }
            mem.push(t, &jump);
        }
    }
    (mem.into_events(), flags)
}

struct Clock<'m, 'a> {
    mem: &'m Memory<'a>,
    family: &'m JumpFamily,
    x: RefCell<Vec<f64>>,
    clamped: RefCell<bool>,
}

impl Clock<'_, '_> {
    fn rate(&self, s: f64) -> f64 {
        let mut x = self.x.borrow_mut();
        self.mem.x_minus(s, &mut x);
        if self.family.intensity_clamped(&x) {
            *self.clamped.borrow_mut() = true;
        }
        self.family.intensity(&x)
    }
}

fn run_clock<R: Rng>(
    model: &Model,
    family: &JumpFamily,
    horizon: f64,
    rng: &mut R,
    opts: &EngineOptions,
) -> Result<(Vec<Event>, Flags)> {
    let mut flags = Flags::default();
    let mut mem = Memory::new(model);
    let (d, k) = model.dims();
    let mut x = vec![0.0; d];
    let mut jump = vec![0.0; k];
    // Right after an event a singular kernel makes the rate behave like s^alpha.
    let alpha = model.kernel.leading_exponent().min(0.0);
    let tol = Tolerance::new(1e-13, 1e-11);
    let mut seg_start = 0.0;
    'events: loop {
        let target: f64 = Exp1.sample(rng);
        let graded = alpha < 0.0 && !mem.events().is_empty();
        let next = {
            let clock = Clock {
                mem: &mem,
                family,
                x: RefCell::new(vec![0.0; d]),
                clamped: RefCell::new(false),
            };
            let integral = |lo: f64, hi: f64| -> f64 {
                if graded && lo == seg_start {
                    quad::integrate_graded(|s| clock.rate(lo + s), hi - lo, alpha, tol).value
                } else {
                    quad::integrate(|s| clock.rate(s), lo, hi, tol).value
                }
            };
            let mut cum = 0.0;
            let mut lo = seg_start;
            let mut h = (horizon - seg_start) / 16.0;
            let probe = clock.rate(seg_start + 1e-9 * horizon.max(1.0));
            if probe.is_finite() && probe > 0.0 {
                h = h.min(2.0 * target / probe);
            }
            let found = loop {
                if lo >= horizon {
                    break None;
                }
                let hi = (lo + h).min(horizon);
                let w = integral(lo, hi);
                if !w.is_finite() {
                    flags.exploded = true;
                    break None;
                }
                if cum + w < target {
                    cum += w;
                    lo = hi;
                    h *= 2.0;
                    continue;
                }
                let root = quad::solve_increasing(
                    |t| cum + integral(lo, t) - target,
                    |t| clock.rate(t),
                    lo,
                    hi,
                    opts.clock_tol,
                )
                .ok_or_else(|| {
                    Error::StepRefinement(format!("clock inversion failed on [{lo}, {hi}]"))
                })?;
                break Some(root);
            };
            if *clock.clamped.borrow() {
                flags.intensity_clamped = true;
            }
            found
        };
        let Some(t) = next else { break 'events };
        if t <= seg_start {
            return Err(Error::StepRefinement(format!(
                "event time {t} does not advance past {seg_start}"
            )));
        }
        mem.x_minus(t, &mut x);
        if family.sample_jump(&x, rng, &mut jump) {
            if mem.events().len() >= opts.event_cap {
                flags.exploded = true;
                break;
            }
            mem.push(t, &jump);
        }
        seg_start = t;
    }
    Ok((mem.into_events(), flags))
}

/// `int_0^t int z nu(X_s, dz) ds` on the grid by quadrature between events.
fn compensator_on_grid(
    model: &Model,
    family: &JumpFamily,
    events: &[Event],
    grid: &Grid,
) -> GridFunction {
    let (d, k) = model.dims();
    let alpha = model.kernel.leading_exponent().min(0.0);
    let tol = Tolerance::new(1e-13, 1e-11);
    let mut mem = Memory::new(model);
    let mut acc = vec![0.0; k];
    let mut values = Vec::with_capacity(grid.points() * k);
    values.extend_from_slice(&acc);
    let mut next = 0;
    let mut x = vec![0.0; d];
    let mut a = 0.0;
    let mut a_is_event = false;
    let mut integrate_piece = |mem: &Memory, a: f64, b: f64, after_event: bool, acc: &mut [f64]| {
        for (j, slot) in acc.iter_mut().enumerate() {
            let mut f = |s: f64| {
                mem.x_minus(s, &mut x);
                family.first_moment(&x, k)[j]
            };
            *slot += if after_event && alpha < 0.0 {
                quad::integrate_graded(|s| f(a + s), b - a, alpha, tol).value
            } else {
                quad::integrate(f, a, b, tol).value
            };
        }
    };
    for m in 1..grid.points() {
        let t = grid.time(m);
        while next < events.len() && events[next].time < t {
            let e = &events[next];
            integrate_piece(&mem, a, e.time, a_is_event, &mut acc);
            mem.push(e.time, &e.jump);
            a = e.time;
            a_is_event = true;
            next += 1;
        }
        integrate_piece(&mem, a, t, a_is_event, &mut acc);
        a = t;
        a_is_event = false;
        values.extend_from_slice(&acc);
    }
    GridFunction {
        step: grid.step(),
        dim: k,
        values,
    }
}

/// Factor system with drift, integrated by the Lawson (integrating factor)
/// RK4 scheme with step doubling. State layout:
/// `[Y_1, ..., Y_m, clock, compensator (k), drift integral (k)]`.
struct FactorOde<'a> {
    model: &'a Model,
    family: &'a JumpFamily,
    drift: DriftFn<'a>,
    weights: Vec<nalgebra::DMatrix<f64>>,
    rates: Vec<f64>,
    m: usize,
    k: usize,
    d: usize,
    opts: EngineOptions,
    clamped: std::cell::Cell<bool>,
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    x: Vec<f64>,
    b: Vec<f64>,
}

impl<'a> FactorOde<'a> {
    fn new(
        model: &'a Model,
        family: &'a JumpFamily,
        drift: DriftFn<'a>,
        factors: Factors,
        opts: &EngineOptions,
    ) -> Self {
        let (d, k) = model.dims();
        let m = factors.rates.len();
        let mut rates = Vec::with_capacity(m * k + 1 + 2 * k);
        for l in &factors.rates {
            rates.extend(std::iter::repeat_n(*l, k));
        }
        rates.resize(m * k + 1 + 2 * k, 0.0);
        FactorOde {
            model,
            family,
            drift,
            weights: factors.weights,
            rates,
            m,
            k,
            d,
            opts: *opts,
            clamped: std::cell::Cell::new(false),
        }
    }

    fn len(&self) -> usize {
        self.rates.len()
    }

    fn clock_index(&self) -> usize {
        self.m * self.k
    }

    fn x_of(&self, t: f64, u: &[f64], x: &mut [f64]) {
        self.model.g0.eval_into(t, x);
        for (i, w) in self.weights.iter().enumerate() {
            let y = &u[i * self.k..(i + 1) * self.k];
            for (r, o) in x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, yj) in y.iter().enumerate() {
                    acc += w[(r, j)] * yj;
                }
                *o += acc;
            }
        }
    }

    /// Nonlinear part of the vector field (the linear decay is integrated exactly).
    fn field(&self, t: f64, u: &[f64], out: &mut [f64], s: &mut Scratch) {
        self.x_of(t, u, &mut s.x);
        (self.drift)(&s.x, &mut s.b);
        let (m, k) = (self.m, self.k);
        for i in 0..m {
            out[i * k..(i + 1) * k].copy_from_slice(&s.b);
        }
        let c = self.clock_index();
        if self.family.intensity_clamped(&s.x) {
            self.clamped.set(true);
        }
        out[c] = self.family.intensity(&s.x);
        if self.opts.track_compensator {
            let fm = self.family.first_moment(&s.x, k);
            out[c + 1..c + 1 + k].copy_from_slice(&fm);
        } else {
            out[c + 1..c + 1 + k].fill(0.0);
        }
        out[c + 1 + k..c + 1 + 2 * k].copy_from_slice(&s.b);
    }

    fn step(&self, t: f64, u: &[f64], h: f64, out: &mut [f64], s: &mut Scratch) {
        let n = self.len();
        let mut k1 = std::mem::take(&mut s.k1);
        let mut k2 = std::mem::take(&mut s.k2);
        let mut k3 = std::mem::take(&mut s.k3);
        let mut k4 = std::mem::take(&mut s.k4);
        let mut tmp = std::mem::take(&mut s.tmp);
        self.field(t, u, &mut k1, s);
        for i in 0..n {
            let e2 = (-self.rates[i] * 0.5 * h).exp();
            tmp[i] = e2 * (u[i] + 0.5 * h * k1[i]);
        }
        self.field(t + 0.5 * h, &tmp, &mut k2, s);
        for i in 0..n {
            let e2 = (-self.rates[i] * 0.5 * h).exp();
            tmp[i] = e2 * u[i] + 0.5 * h * k2[i];
        }
        self.field(t + 0.5 * h, &tmp, &mut k3, s);
        for i in 0..n {
            let e1 = (-self.rates[i] * h).exp();
            let e2 = (-self.rates[i] * 0.5 * h).exp();
            tmp[i] = e1 * u[i] + h * e2 * k3[i];
        }
        self.field(t + h, &tmp, &mut k4, s);
        for i in 0..n {
            let e1 = (-self.rates[i] * h).exp();
            let e2 = (-self.rates[i] * 0.5 * h).exp();
            out[i] = e1 * u[i] + h / 6.0 * (e1 * k1[i] + 2.0 * e2 * (k2[i] + k3[i]) + k4[i]);
        }
        s.k1 = k1;
        s.k2 = k2;
        s.k3 = k3;
        s.k4 = k4;
        s.tmp = tmp;
    }

    fn scratch(&self) -> Scratch {
        let n = self.len();
        Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            x: vec![0.0; self.d],
            b: vec![0.0; self.k],
        }
    }

    fn run<R: Rng>(&self, grid: &Grid, seed: SeedSpec, rng: &mut R) -> Result<SolutionSample> {
        let (d, k, m) = (self.d, self.k, self.m);
        let n = self.len();
        let c = self.clock_index();
        let horizon = grid.horizon;
        let mut s = self.scratch();
        let mut u = vec![0.0; n];
        let mut full = vec![0.0; n];
        let mut half = vec![0.0; n];
        let mut half2 = vec![0.0; n];
        let mut x = vec![0.0; d];
        let mut jump = vec![0.0; k];
        let mut events = Vec::new();
        let mut flags = Flags::default();
        let mut xs = Vec::with_capacity(grid.points() * d);
        let mut comp = Vec::with_capacity(grid.points() * k);
        let mut drift_rec = Vec::with_capacity(grid.points() * k);
        let record = |t: f64,
                      u: &[f64],
                      xs: &mut Vec<f64>,
                      comp: &mut Vec<f64>,
                      dr: &mut Vec<f64>,
                      x: &mut [f64]| {
            self.x_of(t, u, x);
            xs.extend_from_slice(x);
            comp.extend_from_slice(&u[c + 1..c + 1 + k]);
            dr.extend_from_slice(&u[c + 1 + k..c + 1 + 2 * k]);
        };
        record(0.0, &u, &mut xs, &mut comp, &mut drift_rec, &mut x);
        let mut t = 0.0;
        let mut next_grid = 1;
        let mut target: f64 = Exp1.sample(rng);
        let mut h = grid.step();
        let tol = self.opts.ode_tol;
        let max_rate = self.rates.iter().cloned().fold(0.0, f64::max);
        'outer: while next_grid < grid.points() {
            let t_grid = grid.time(next_grid);
            let remaining = t_grid - t;
            if remaining <= 0.0 {
                record(t_grid, &u, &mut xs, &mut comp, &mut drift_rec, &mut x);
                next_grid += 1;
                continue;
            }
            // Keep the expected clock increment per step near the remaining target.
            let rate_now = {
                self.x_of(t, &u, &mut x);
                self.family.intensity(&x)
            };
            if rate_now.is_finite() && rate_now > 0.0 {
                h = h.min((target - u[c]).max(1e-3) / rate_now * 1.5);
            }
            let hs = h.min(remaining);
            // Step doubling.
            self.step(t, &u, hs, &mut full, &mut s);
            self.step(t, &u, 0.5 * hs, &mut half, &mut s);
            self.step(t + 0.5 * hs, &half, 0.5 * hs, &mut half2, &mut s);
            let mut err: f64 = 0.0;
            for i in 0..=c {
                err = err.max((full[i] - half2[i]).abs() / (1.0 + half2[i].abs()));
            }
            if !err.is_finite() || half2.iter().any(|v| !v.is_finite()) {
                flags.exploded = true;
                break 'outer;
            }
            let min_h = 1e-12 * horizon.max(1.0) / (1.0 + max_rate);
            if err > tol && hs > min_h {
                h = hs * (0.9 * (tol / err).powf(0.2)).max(0.1);
                continue;
            }
            let grow = if err == 0.0 {
                4.0
            } else {
                (0.9 * (tol / err).powf(0.2)).min(4.0)
            };
            if half2[c] >= target {
                // Locate the event inside (t, t + hs].
                let u0 = u.clone();
                let s_cell = RefCell::new(self.scratch());
                let out_cell = RefCell::new(vec![0.0; n]);
                let g = |tau: f64| {
                    if tau == 0.0 {
                        return u0[c] - target;
                    }
                    let mut out = out_cell.borrow_mut();
                    self.step(t, &u0, tau, &mut out, &mut s_cell.borrow_mut());
                    out[c] - target
                };
                let dg = |tau: f64| {
                    let mut out = out_cell.borrow_mut();
                    let mut sc = s_cell.borrow_mut();
                    self.step(t, &u0, tau, &mut out, &mut sc);
                    let mut xx = vec![0.0; d];
                    self.x_of(t + tau, &out, &mut xx);
                    self.family.intensity(&xx)
                };
                let tau = quad::solve_increasing(g, dg, 0.0, hs, self.opts.clock_tol).ok_or_else(
                    || Error::StepRefinement(format!("event location failed near t = {t}")),
                )?;
                self.step(t, &u0, tau, &mut u, &mut s);
                t += tau;
                self.x_of(t, &u, &mut x);
                if self.family.sample_jump(&x, rng, &mut jump) {
                    if events.len() >= self.opts.event_cap {
                        flags.exploded = true;
                        break 'outer;
                    }
                    for i in 0..m {
                        for (v, j) in u[i * k..(i + 1) * k].iter_mut().zip(&jump) {
                            *v += j;
                        }
                    }
                    events.push(Event {
                        time: t,
                        jump: jump.clone(),
                    });
                }
                u[c] = 0.0;
                target = Exp1.sample(rng);
                h = hs * grow;
                continue;
            }
            u.copy_from_slice(&half2);
            t += hs;
            if hs == remaining {
                t = t_grid;
            }
            h = hs * grow;
        }
        let recorded = xs.len() / d;
        xs.resize(grid.points() * d, f64::NAN);
        comp.resize(grid.points() * k, f64::NAN);
        drift_rec.resize(grid.points() * k, f64::NAN);
        debug_assert!(recorded <= grid.points());
        flags.intensity_clamped |= self.clamped.get();
        let step = grid.step();
        Ok(SolutionSample {
            scheme: Scheme::ExactJump,
            seed,
            grid: *grid,
            x: GridFunction {
                step,
                dim: d,
                values: xs,
            },
            driver: Driver::Jumps(JumpPath {
                dim: k,
                horizon,
                events,
            }),
            compensator: self.opts.track_compensator.then_some(GridFunction {
                step,
                dim: k,
                values: comp,
            }),
            drift_record: Some(GridFunction {
                step,
                dim: k,
                values: drift_rec,
            }),
            flags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Curve;
    use crate::diagnostics::ks_exponential;
    use crate::expr::VectorExpr;
    use crate::kernel::Kernel;

    fn scalar_model(g0: f64, kernel: Kernel) -> Model {
        Model::new(Curve::constant(&[g0]), kernel).unwrap()
    }

    #[test]
    fn zero_intensity_gives_g0() {
        let model = Model::new(
            Curve::parse(&["t"]).unwrap(),
            Kernel::fractional(0.75).unwrap(),
        )
        .unwrap();
        let fam = JumpFamily::poisson(0.0, &[1.0]);
        let grid = Grid::new(1.0, 10).unwrap();
        let s = simulate_pure_jump(
            &model,
            &fam,
            &grid,
            SeedSpec::new(1, 0),
            &EngineOptions::default(),
        )
        .unwrap();
        assert!(s.jump_path().unwrap().is_empty());
        for m in 0..grid.points() {
            assert_eq!(s.x.at(m)[0], grid.time(m));
        }
    }

    #[test]
    fn poisson_counting_path() {
        let model = scalar_model(0.0, Kernel::constant(1.0).unwrap());
        let fam = JumpFamily::poisson(2.0, &[1.0]);
        let grid = Grid::new(5.0, 50).unwrap();
        let mut first = Vec::new();
        let mut pooled = Vec::new();
        for r in 0..1000 {
            let s = simulate_pure_jump(
                &model,
                &fam,
                &grid,
                SeedSpec::new(9, r),
                &EngineOptions::default(),
            )
            .unwrap();
            let p = s.jump_path().unwrap();
            for m in 0..grid.points() {
                assert_eq!(s.x.at(m)[0], p.left_limit(grid.time(m))[0]);
            }
            let g = p.gaps();
            first.extend(g.first());
            pooled.extend(g);
        }
        assert!(ks_exponential(&first, 2.0).p_value > 0.01);
        // Gaps that end inside [0, T] are biased short: a pooled gap has
        // survival (1 - x/T) e^{-lambda x}.
        let pooled_cdf = |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                1.0 - (1.0 - x / 5.0).max(0.0) * (-2.0 * x).exp()
            }
        };
        assert!(crate::diagnostics::ks_test(&pooled, pooled_cdf).p_value > 0.01);
        assert!(ks_exponential(&pooled, 2.0).p_value < 0.01);
    }

    #[test]
    fn clock_inversion_matches_uniform_rate() {
        // A state-dependent intensity that happens to be constant forces the
        // clock-inversion path; its gaps must still be Exponential(2).
        let model = scalar_model(0.0, Kernel::fractional(0.75).unwrap());
        let fam = JumpFamily::FiniteMixture {
            components: vec![crate::triplet::JumpComponent {
                intensity: crate::expr::Expr::parse("2 + 0 * x").unwrap(),
                displacement: crate::triplet::Displacement::Fixed { value: vec![0.5] },
            }],
        };
        assert!(fam.uniform_rate().is_none());
        let grid = Grid::new(5.0, 10).unwrap();
        let mut gaps = Vec::new();
        for r in 0..300 {
            let s = simulate_pure_jump(
                &model,
                &fam,
                &grid,
                SeedSpec::new(3, r),
                &EngineOptions::default(),
            )
            .unwrap();
            gaps.extend(s.jump_path().unwrap().gaps().first());
        }
        assert!(ks_exponential(&gaps, 2.0).p_value > 0.01);
    }

    #[test]
    fn self_exciting_clock_inversion_runs() {
        let model = scalar_model(0.5, Kernel::fractional(0.75).unwrap());
        let fam = JumpFamily::hawkes(VectorExpr::parse(&["0.5 * x"]).unwrap());
        let grid = Grid::new(1.0, 20).unwrap();
        let opts = EngineOptions {
            track_compensator: true,
            ..Default::default()
        };
        let s = simulate_pure_jump(&model, &fam, &grid, SeedSpec::new(5, 0), &opts).unwrap();
        let a = simulate_pure_jump(&model, &fam, &grid, SeedSpec::new(5, 0), &opts).unwrap();
        assert_eq!(s, a);
        let c = s.compensator.unwrap();
        assert!(c.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn exponential_kernel_mean() {
        // E[X_t] = lambda (1 - e^{-t}) for K(t) = e^{-t}.
        let model = scalar_model(0.0, Kernel::exponential(1.0, 1.0).unwrap());
        let fam = JumpFamily::poisson(3.0, &[1.0]);
        let grid = Grid::new(2.0, 4).unwrap();
        let reps = 4000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for r in 0..reps {
            let s = simulate_pure_jump(
                &model,
                &fam,
                &grid,
                SeedSpec::new(11, r),
                &EngineOptions::default(),
            )
            .unwrap();
            let v = s.x.at(4)[0];
            sum += v;
            sq += v * v;
        }
        let mean = sum / reps as f64;
        let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        let exact = 3.0 * (1.0 - (-2.0f64).exp());
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "{mean} vs {exact} (se {se})"
        );
    }

    #[test]
    fn drift_only_factor_ode_is_accurate() {
        // X = 1 + int e^{-(t-s)} (-X_s) ds solves X' = -(X - 1) - X, X(0) = 1:
        // X(t) = 1/2 + e^{-2t}/2.
        let model = scalar_model(1.0, Kernel::exponential(1.0, 1.0).unwrap());
        let fam = JumpFamily::empty();
        let drift = |x: &[f64], out: &mut [f64]| out[0] = -x[0];
        let grid = Grid::new(2.0, 8).unwrap();
        let s = simulate_with_drift(
            &model,
            &fam,
            &drift,
            &grid,
            SeedSpec::new(0, 0),
            &EngineOptions::default(),
        )
        .unwrap();
        for m in 0..grid.points() {
            let t = grid.time(m);
            let exact = 0.5 + 0.5 * (-2.0 * t).exp();
            assert!((s.x.at(m)[0] - exact).abs() < 1e-8, "t = {t}");
        }
        assert!(simulate_with_drift(
            &scalar_model(1.0, Kernel::fractional(0.75).unwrap()),
            &fam,
            &drift,
            &grid,
            SeedSpec::new(0, 0),
            &EngineOptions::default()
        )
        .is_err());
    }

    #[test]
    fn compensated_hawkes_with_drift_runs_and_is_deterministic() {
        let model = scalar_model(5.0, Kernel::exponential(1.0, 0.5).unwrap());
        let fam = JumpFamily::hawkes(VectorExpr::parse(&["x"]).unwrap());
        let drift = |x: &[f64], out: &mut [f64]| out[0] = -x[0].max(0.0);
        let grid = Grid::new(3.0, 30).unwrap();
        let opts = EngineOptions {
            track_compensator: true,
            ..Default::default()
        };
        let a =
            simulate_with_drift(&model, &fam, &drift, &grid, SeedSpec::new(2, 7), &opts).unwrap();
        let b =
            simulate_with_drift(&model, &fam, &drift, &grid, SeedSpec::new(2, 7), &opts).unwrap();
        assert_eq!(a, b);
        assert!(!a.jump_path().unwrap().is_empty());
        // With b = -Lambda the drift record is minus the compensator.
        let c = a.compensator.as_ref().unwrap();
        let dr = a.drift_record.as_ref().unwrap();
        for (x, y) in c.values.iter().zip(&dr.values) {
            assert!((x + y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn general_pipeline_drift_only() {
        // b = 1, K = 1: level-n paths are (1/n) * Poisson(n t).
        let model = scalar_model(0.0, Kernel::constant(1.0).unwrap());
        let t = Triplet::scalar("1", "0", JumpFamily::empty()).unwrap();
        let grid = Grid::new(1.0, 4).unwrap();
        let s = simulate_general(
            &model,
            &t,
            50,
            &grid,
            SeedSpec::new(1, 1),
            &EngineOptions::default(),
        )
        .unwrap();
        assert_eq!(s.scheme, Scheme::ApproxLevel(50));
        let p = s.jump_path().unwrap();
        assert!(p.events.iter().all(|e| e.jump == vec![1.0 / 50.0]));
        let zero = Triplet::zero(1, 1);
        let s0 = simulate_general(
            &model,
            &zero,
            8,
            &grid,
            SeedSpec::new(1, 1),
            &EngineOptions::default(),
        )
        .unwrap();
        assert!(s0.x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_cap_flags_explosion() {
        let model = scalar_model(0.0, Kernel::constant(1.0).unwrap());
        let fam = JumpFamily::poisson(1000.0, &[1.0]);
        let grid = Grid::new(1.0, 4).unwrap();
        let opts = EngineOptions {
            event_cap: 10,
            ..Default::default()
        };
        let s = simulate_pure_jump(&model, &fam, &grid, SeedSpec::new(1, 0), &opts).unwrap();
        assert!(s.flags.exploded);
        assert_eq!(s.jump_path().unwrap().len(), 10);
        assert!(s.x.at(4)[0].is_nan());
    }
}
