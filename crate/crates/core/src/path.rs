//! Grid-sampled and piecewise-constant vector functions of time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values on the uniform grid `t_m = m * step`, `m = 0..len`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub step: f64,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(step: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("step", "must be positive and finite"));
        }
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "values",
                format!("length {} is not a multiple of dim {dim}", values.len()),
            ));
        }
        Ok(GridFunction { step, dim, values })
    }

    /// Samples `f` at `points` grid points.
    pub fn from_fn(
        step: f64,
        points: usize,
        dim: usize,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Self {
        let mut values = vec![0.0; points * dim];
        for (m, chunk) in values.chunks_mut(dim).enumerate() {
            f(m as f64 * step, chunk);
        }
        GridFunction { step, dim, values }
    }

    pub fn scalar(step: f64, values: Vec<f64>) -> Self {
        GridFunction {
            step,
            dim: 1,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.step
    }

    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn map(&self, mut f: impl FnMut(f64, &[f64], &mut [f64])) -> GridFunction {
        let mut out = vec![0.0; self.values.len()];
        for (m, (o, v)) in out.chunks_mut(self.dim).zip(self.rows()).enumerate() {
            f(m as f64 * self.step, v, o);
        }
        GridFunction {
            step: self.step,
            dim: self.dim,
            values: out,
        }
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.dim != other.dim || self.len() != other.len() || self.step != other.step {
            return Err(Error::invalid(
                "grid",
                "grid functions live on different grids",
            ));
        }
        Ok(GridFunction {
            step: self.step,
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// Right-continuous piecewise-constant function: `values` row `i` holds on
/// `[breaks[i], breaks[i + 1])`, the last row on `[breaks[last], inf)`, and the
/// function is zero before `breaks[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub dim: usize,
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn new(dim: usize, breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != breaks.len() * dim {
            return Err(Error::invalid(
                "values",
                "need one row of length dim per break",
            ));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("breaks", "must be strictly increasing"));
        }
        Ok(StepFunction {
            dim,
            breaks,
            values,
        })
    }

    pub fn constant(value: &[f64]) -> Self {
        StepFunction {
            dim: value.len(),
            breaks: vec![0.0],
            values: value.to_vec(),
        }
    }

    pub fn pieces(&self) -> usize {
        self.breaks.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> Option<&[f64]> {
        let i = self.breaks.partition_point(|&b| b <= t);
        (i > 0).then(|| self.row(i - 1))
    }
}

impl From<&GridFunction> for StepFunction {
    /// Left-point piecewise-constant interpolation of a grid function.
    fn from(g: &GridFunction) -> Self {
        StepFunction {
            dim: g.dim,
            breaks: (0..g.len()).map(|m| g.time(m)).collect(),
            values: g.values.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_right_continuous() {
        let s = StepFunction::new(1, vec![0.0, 1.0], vec![2.0, 5.0]).unwrap();
        assert_eq!(s.eval(-0.1), None);
        assert_eq!(s.eval(0.999), Some(&[2.0][..]));
        assert_eq!(s.eval(1.0), Some(&[5.0][..]));
        assert!(StepFunction::new(1, vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn grid_round_trip() {
        let g = GridFunction::from_fn(0.5, 3, 2, |t, o| {
            o[0] = t;
            o[1] = -t;
        });
        assert_eq!(g.len(), 3);
        assert_eq!(g.horizon(), 1.0);
        assert_eq!(g.component(1), vec![0.0, -0.5, -1.0]);
        let s = StepFunction::from(&g);
        assert_eq!(s.eval(0.7), Some(&[0.5, -0.5][..]));
    }
}
