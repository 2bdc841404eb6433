//! Exponential-sum approximation of completely monotone kernels.
//!
//! For `t^(gamma-1)` with `1/2 < gamma < 1` we use the Laplace representation
//! `t^(gamma-1) = int_0^inf e^(-lambda t) mu(dlambda)` with
//! `mu(dlambda) = lambda^(-gamma) / Gamma(1 - gamma) dlambda`, split `[0, xi_n]`
//! into buckets `[xi_{i-1}, xi_i]` with `xi_0 = 0` and a geometric grid
//! `xi_1 = 0.1 / T, ..., xi_n = 10^(1.5 sqrt(n)) / T`, and put the bucket mass
//! at the bucket's `mu`-mean rate. The tail above `xi_n` is dropped. Dampening
//! by `e^(-beta t)` shifts every rate by `beta`.

use statrs::function::gamma::gamma;

use super::{ExpTerm, Kernel, KernelFamily, Weight};
use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

#[derive(Debug, Clone, PartialEq)]
pub struct FittedKernel {
    pub kernel: Kernel,
    /// `||K - K_n||_{L^2(0, T)}`.
    pub l2_error: f64,
}

/// Upper ends `xi_1 < ... < xi_n` of the Laplace-measure buckets.
pub fn geometric_nodes(n: usize, horizon: f64) -> Vec<f64> {
    let top = 10f64.powf(1.5 * (n as f64).sqrt()) / horizon;
    if n == 1 {
        return vec![top];
    }
    let first = 0.1 / horizon;
    let ratio = (top / first).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| first * ratio.powi(i as i32)).collect()
}

fn laplace_terms(gamma_: f64, beta: f64, n: usize, horizon: f64) -> Vec<(f64, f64)> {
    let a = 1.0 - gamma_;
    let norm = gamma(2.0 - gamma_);
    let mut lo = 0.0f64;
    geometric_nodes(n, horizon)
        .into_iter()
        .map(|hi| {
            let m0 = hi.powf(a) - lo.powf(a);
            let m1 = hi.powf(a + 1.0) - lo.powf(a + 1.0);
            let rate = a / (a + 1.0) * m1 / m0;
            lo = hi;
            (m0 / norm, rate + beta)
        })
        .collect()
}

/// Approximates `kernel` by an exponential sum with at most `n` terms.
pub fn fit_exponential_sum(kernel: &Kernel, n: usize, horizon: f64) -> Result<FittedKernel> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one term"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be positive and finite"));
    }
    let (d, k) = kernel.dims();
    let exact = |terms: Vec<ExpTerm>| -> Result<FittedKernel> {
        Ok(FittedKernel {
            kernel: Kernel::new(KernelFamily::ExponentialSum { terms }, d, k)?,
            l2_error: 0.0,
        })
    };
    let (gamma_, beta) =
        match kernel.family() {
            KernelFamily::ExponentialSum { terms } => {
                if terms.len() <= n {
                    return Ok(FittedKernel {
                        kernel: kernel.clone(),
                        l2_error: 0.0,
                    });
                }
                return Err(Error::Unsupported(format!(
                    "reducing a {}-term exponential sum to {n} terms",
                    terms.len()
                )));
            }
            KernelFamily::Constant { matrix } => {
                return exact(vec![ExpTerm {
                    weight: matrix.clone(),
                    rate: 0.0,
                }])
            }
            KernelFamily::Fractional { gamma } => (*gamma, 0.0),
            KernelFamily::DampenedFractional { gamma, beta } => (*gamma, *beta),
            KernelFamily::LipschitzTabulated { .. } => return Err(Error::Unsupported(
                "exponential-sum fit of a tabulated kernel (not known to be completely monotone)"
                    .into(),
            )),
        };
    if gamma_ == 1.0 {
        return exact(vec![ExpTerm {
            weight: Weight::Scalar(1.0),
            rate: beta,
        }]);
    }
    if gamma_ > 1.0 {
        return Err(Error::Unsupported(format!(
            "exponential-sum fit of t^(gamma-1) with gamma = {gamma_} > 1 (not completely monotone)"
        )));
    }
    let terms = laplace_terms(gamma_, beta, n, horizon)
        .into_iter()
        .map(|(c, rate)| ExpTerm {
            weight: Weight::Scalar(c),
            rate,
        })
        .collect();
    let fitted = Kernel::new(KernelFamily::ExponentialSum { terms }, d, k)?;
    let l2_error = l2_distance(kernel, &fitted, horizon);
    Ok(FittedKernel {
        kernel: fitted,
        l2_error,
    })
}

/// `||K_a - K_b||_{L^2(0, T)}` in the Frobenius norm.
pub fn l2_distance(a: &Kernel, b: &Kernel, horizon: f64) -> f64 {
    let alpha = 2.0 * a.singular_exponent().min(b.singular_exponent());
    if alpha <= -1.0 {
        return f64::INFINITY;
    }
    let scalar = a.is_scalar_profile() && b.is_scalar_profile() && a.dims() == b.dims();
    let id = (a.dims().0.min(a.dims().1) as f64).sqrt();
    let (mut ma, mut mb) = (
        nalgebra::DMatrix::zeros(a.dims().0, a.dims().1),
        nalgebra::DMatrix::zeros(b.dims().0, b.dims().1),
    );
    let tol = Tolerance {
        abs: 1e-16,
        rel: 1e-12,
        max_intervals: 5000,
    };
    quad::integrate_graded(
        |t| {
            if scalar {
                let diff = (a.profile(t) - b.profile(t)) * id;
                diff * diff
            } else {
                a.eval_unchecked(t, &mut ma);
                b.eval_unchecked(t, &mut mb);
                (&ma - &mb).norm_squared()
            }
        },
        horizon,
        alpha,
        tol,
    )
    .value
    .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_input_is_returned_unchanged() {
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let f = fit_exponential_sum(&k, 1, 1.0).unwrap();
        assert_eq!(f.kernel, k);
        assert_eq!(f.l2_error, 0.0);
        let two = Kernel::exponential_sum(&[(1.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!(fit_exponential_sum(&two, 1, 1.0).is_err());
    }

    #[test]
    fn unsupported_families() {
        assert!(fit_exponential_sum(&Kernel::fractional(1.2).unwrap(), 5, 1.0).is_err());
        let tab = Kernel::tabulated(vec![0.0, 1.0], vec![1.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            fit_exponential_sum(&tab, 5, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn laplace_weights_sum_to_measure_mass() {
        // Total mass of mu on [0, xi_n] is xi_n^(1-g) / Gamma(2-g).
        let g = 0.75;
        let terms = laplace_terms(g, 0.0, 7, 1.0);
        let top = *geometric_nodes(7, 1.0).last().unwrap();
        let total: f64 = terms.iter().map(|t| t.0).sum();
        assert_relative_eq!(
            total,
            top.powf(1.0 - g) / gamma(2.0 - g),
            max_relative = 1e-12
        );
        assert!(terms.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn error_decreases_with_terms() {
        for k in [
            Kernel::fractional(0.75).unwrap(),
            Kernel::dampened_fractional(0.75, 1.0).unwrap(),
        ] {
            let errs: Vec<f64> = [5, 10, 20, 40]
                .iter()
                .map(|&n| fit_exponential_sum(&k, n, 1.0).unwrap().l2_error)
                .collect();
            assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        }
    }
}
