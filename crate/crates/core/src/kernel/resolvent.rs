//! Resolvents of scalar Volterra kernels on a uniform grid.
//!
//! Convolutions are discretized as `(a * b)_m = h sum_{i=0}^{m} a_i b_{m-i}`.
//! With that product the resolvent equation `r = k - k * r` is solved exactly
//! on the grid by the implicit recursion
//! `r_m (1 + h k_0) = k_m - h sum_{i=1}^{m} k_i r_{m-i}`.

use serde::{Deserialize, Serialize};

use super::Kernel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventTable {
    pub step: f64,
    pub values: Vec<f64>,
    /// All values are `<= 0` up to roundoff.
    pub sign_check: bool,
}

/// Discrete convolution `h sum_{i=0}^{m} a_i b_{m-i}` for every `m`.
pub fn discrete_convolution(a: &[f64], b: &[f64], step: f64) -> Vec<f64> {
    let n = a.len().min(b.len());
    (0..n)
        .map(|m| step * (0..=m).map(|i| a[i] * b[m - i]).sum::<f64>())
        .collect()
}

/// Resolvent of the kernel sampled at `t_m = m * step`.
pub fn resolvent(kernel_values: &[f64], step: f64) -> Result<ResolventTable> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", "must be positive and finite"));
    }
    if kernel_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("kernel_values", "must be finite"));
    }
    let n = kernel_values.len();
    let mut r = Vec::with_capacity(n);
    if n == 0 {
        return Ok(ResolventTable {
            step,
            values: r,
            sign_check: true,
        });
    }
    let k = kernel_values;
    let pivot = 1.0 + step * k[0];
    if pivot <= 1e-8 {
        return Err(Error::StepRefinement(format!(
            "1 + h k(0) = {pivot:.3e} is not positive; reduce the step below {:.3e}",
            1.0 / k[0].abs()
        )));
    }
    for m in 0..n {
        let hist: f64 = (1..=m).map(|i| k[i] * r[m - i]).sum();
        let v = (k[m] - step * hist) / pivot;
        if !v.is_finite() {
            return Err(Error::StepRefinement(format!(
                "resolvent recursion overflowed at t = {}; refine the step",
                m as f64 * step
            )));
        }
        r.push(v);
    }
    let scale = r.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let sign_check = r.iter().all(|&v| v <= 1e-12 * scale);
    Ok(ResolventTable {
        step,
        values: r,
        sign_check,
    })
}

/// Resolvent of `c |K|` using cell averages `(1/h) int_{mh}^{(m+1)h} |K|`,
/// which stay finite for singular kernels.
pub fn resolvent_of(
    kernel: &Kernel,
    scale: f64,
    horizon: f64,
    step: f64,
) -> Result<ResolventTable> {
    resolvent(&cell_averages(kernel, horizon, step, scale), step)
}

/// `scale * (1/h) int_{mh}^{(m+1)h} |phi|` for `m = 0..=T/h`.
pub fn cell_averages(kernel: &Kernel, horizon: f64, step: f64, scale: f64) -> Vec<f64> {
    let points = (horizon / step).round() as usize + 1;
    (0..points)
        .map(|m| {
            let a = m as f64 * step;
            scale * kernel.profile_cell(a, a + step).abs() / step
        })
        .collect()
}

impl ResolventTable {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|m| m as f64 * self.step)
    }

    /// Residual `max_m |r_m - (k_m - (k * r)_m)|` of the discrete equation.
    pub fn residual(&self, kernel_values: &[f64]) -> f64 {
        let kr = discrete_convolution(kernel_values, &self.values, self.step);
        self.values
            .iter()
            .zip(kernel_values)
            .zip(&kr)
            .map(|((r, k), c)| (r - (k - c)).abs())
            .fold(0.0, f64::max)
    }

    /// Gronwall-type bound: if `f <= g - k * f` and this (nonpositive)
    /// resolvent belongs to `k`, then `f <= g - r * g`.
    pub fn gronwall_bound(&self, g: &[f64]) -> Vec<f64> {
        let rg = discrete_convolution(&self.values, g, self.step);
        g.iter().zip(rg).map(|(g, c)| g - c).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_kernel_has_zero_resolvent() {
        let r = resolvent(&[0.0; 11], 0.1).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        assert!(r.sign_check);
    }

    #[test]
    fn constant_kernel_closed_form() {
        let c = 2.0;
        let h = 0.01;
        let r = resolvent(&vec![c; 101], h).unwrap();
        for (m, v) in r.values.iter().enumerate() {
            assert_relative_eq!(
                *v,
                c * (1.0 + h * c).powi(-(m as i32 + 1)),
                max_relative = 1e-12
            );
        }
        assert!(!r.sign_check);
        assert!(r.residual(&vec![c; 101]) < 1e-13);
    }

    fn sup_error(c: f64, h: f64) -> f64 {
        let n = (1.0 / h).round() as usize + 1;
        let r = resolvent(&vec![c; n], h).unwrap();
        r.times()
            .zip(&r.values)
            .map(|(t, v)| (v - c * (-c * t).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn first_order_convergence_to_exponential() {
        for c in [1.5, -1.5] {
            let e1 = sup_error(c, 0.02);
            let e2 = sup_error(c, 0.01);
            let e3 = sup_error(c, 0.005);
            assert!(e1 / e2 > 1.8 && e2 / e3 > 1.8, "{e1} {e2} {e3}");
        }
    }

    #[test]
    fn negative_kernel_has_nonpositive_resolvent() {
        let r = resolvent(&vec![-1.0; 51], 0.02).unwrap();
        assert!(r.sign_check);
        assert_relative_eq!(
            *r.values.last().unwrap(),
            -(1.0f64).exp(),
            max_relative = 0.05
        );
    }

    #[test]
    fn coarse_step_requests_refinement() {
        match resolvent(&[-20.0; 5], 0.1) {
            Err(Error::StepRefinement(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gronwall_bound_dominates_solution() {
        // f = g - k * f solved exactly; the bound must reproduce it.
        let h = 0.01;
        let k = vec![-0.7; 101];
        let g: Vec<f64> = (0..101).map(|m| 1.0 + (m as f64 * h).sin()).collect();
        let r = resolvent(&k, h).unwrap();
        let mut f = Vec::with_capacity(101);
        for m in 0..101 {
            let hist: f64 = (1..=m).map(|i| k[i] * f[m - i]).sum::<f64>();
            f.push((g[m] - h * hist) / (1.0 + h * k[0]));
        }
        let b = r.gronwall_bound(&g);
        for (a, b) in f.iter().zip(&b) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }
}
