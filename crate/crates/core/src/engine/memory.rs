//! Evaluation of `X(t-) = g0(t) + sum_{T_n < t} K(t - T_n) J_n` during a simulation.

use nalgebra::DMatrix;

use super::{Event, Grid, Model};
use crate::path::GridFunction;

/// Exponential-sum kernels keep one decaying state per rate instead of the
/// event list.
#[derive(Debug, Clone)]
pub(crate) struct Factors {
    pub rates: Vec<f64>,
    pub weights: Vec<DMatrix<f64>>,
    /// `Y_i` at `t_ref`, each of dimension `k`.
    pub states: Vec<Vec<f64>>,
    pub t_ref: f64,
}

impl Factors {
    pub fn new(model: &Model) -> Option<Self> {
        let terms = model.kernel.exponential_terms()?;
        let k = model.dims().1;
        Some(Factors {
            rates: terms.iter().map(|t| t.0).collect(),
            states: vec![vec![0.0; k]; terms.len()],
            weights: terms.into_iter().map(|t| t.1).collect(),
            t_ref: 0.0,
        })
    }

    /// `out += sum_i W_i Y_i(t)` with the states decayed from `t_ref` to `t`.
    pub fn add_value(&self, t: f64, out: &mut [f64]) {
        let dt = t - self.t_ref;
        for ((l, w), y) in self.rates.iter().zip(&self.weights).zip(&self.states) {
            let decay = (-l * dt).exp();
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, yj) in y.iter().enumerate() {
                    acc += w[(i, j)] * yj;
                }
                *o += decay * acc;
            }
        }
    }

    pub fn advance(&mut self, t: f64) {
        let dt = t - self.t_ref;
        if dt != 0.0 {
            for (l, y) in self.rates.iter().zip(self.states.iter_mut()) {
                let decay = (-l * dt).exp();
                y.iter_mut().for_each(|v| *v *= decay);
            }
        }
        self.t_ref = t;
    }

    pub fn add_jump(&mut self, jump: &[f64]) {
        for y in &mut self.states {
            for (v, j) in y.iter_mut().zip(jump) {
                *v += j;
            }
        }
    }
}

pub(crate) struct Memory<'a> {
    model: &'a Model,
    events: Vec<Event>,
    factors: Option<Factors>,
}

impl<'a> Memory<'a> {
    pub fn new(model: &'a Model) -> Self {
        Memory {
            model,
            events: Vec::new(),
            factors: Factors::new(model),
        }
    }

    /// `X(t-)` for `t` after every recorded event.
    pub fn x_minus(&self, t: f64, out: &mut [f64]) {
        self.model.g0.eval_into(t, out);
        match &self.factors {
            Some(f) => f.add_value(t, out),
            None => {
                for e in &self.events {
                    self.model.kernel.apply_add(t - e.time, &e.jump, out);
                }
            }
        }
    }

    pub fn push(&mut self, t: f64, jump: &[f64]) {
        if let Some(f) = &mut self.factors {
            f.advance(t);
            f.add_jump(jump);
        }
        self.events.push(Event {
            time: t,
            jump: jump.to_vec(),
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// `X(t_m) = g0(t_m) + sum_{T_n < t_m} K(t_m - T_n) J_n` on the grid. The
/// strict inequality keeps singular kernels away from zero.
pub fn reconstruct(model: &Model, events: &[Event], grid: &Grid) -> GridFunction {
    let d = model.dims().0;
    let mut values = vec![0.0; grid.points() * d];
    match Factors::new(model) {
        Some(mut f) => {
            let mut next = 0;
            for (m, out) in values.chunks_mut(d).enumerate() {
                let t = grid.time(m);
                while next < events.len() && events[next].time < t {
                    f.advance(events[next].time);
                    f.add_jump(&events[next].jump);
                    next += 1;
                }
                model.g0.eval_into(t, out);
                f.add_value(t, out);
            }
        }
        None => {
            for (m, out) in values.chunks_mut(d).enumerate() {
                let t = grid.time(m);
                model.g0.eval_into(t, out);
                for e in events.iter().take_while(|e| e.time < t) {
                    model.kernel.apply_add(t - e.time, &e.jump, out);
                }
            }
        }
    }
    GridFunction {
        step: grid.step(),
        dim: d,
        values,
    }
}

/// Direct evaluation of `X(t-)` from the event list, used as an oracle for
/// the factor path.
pub fn evaluate_direct(model: &Model, events: &[Event], t: f64) -> Vec<f64> {
    let mut out = model.g0.eval(t);
    for e in events.iter().take_while(|e| e.time < t) {
        model.kernel.apply_add(t - e.time, &e.jump, &mut out);
    }
    out
}
