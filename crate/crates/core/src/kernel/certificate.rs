//! Regularity certificates: the weighted singular integral
//! `int_0^T |K(t)|^p t^(-eta p) dt` and the Slobodeckij double integral
//! `int_0^T int_0^T |K(t) - K(s)|^p / |t - s|^(1 + eta p) ds dt`.

use serde::{Deserialize, Serialize};

use super::{Kernel, KernelFamily};
use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityCertificate {
    pub p: f64,
    pub eta: f64,
    pub horizon: f64,
    #[serde(with = "crate::io::float_repr")]
    pub value_singular_integral: f64,
    #[serde(with = "crate::io::float_repr")]
    pub value_slobodeckij_integral: f64,
    #[serde(with = "crate::io::float_repr")]
    pub c_k_bound: f64,
    pub method: CertificateMethod,
    #[serde(with = "crate::io::float_repr")]
    pub quadrature_error_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl RegularityCertificate {
    pub fn is_finite(&self) -> bool {
        self.value_singular_integral.is_finite() && self.value_slobodeckij_integral.is_finite()
    }
}

/// Computes the certificate, using closed forms for the fractional family.
pub fn slobodeckij_certificate(
    kernel: &Kernel,
    p: f64,
    eta: f64,
    horizon: f64,
) -> Result<RegularityCertificate> {
    let method = match kernel.family() {
        KernelFamily::Fractional { .. } => CertificateMethod::ClosedForm,
        _ => CertificateMethod::Quadrature,
    };
    certificate_with(kernel, p, eta, horizon, method)
}

/// Rounds `x` to 12 significant decimals when that moves it by at most a few
/// ulps. Exponents such as `p (gamma - 1 - eta) + 1` built from decimal
/// inputs otherwise miss their decimal value by the inputs' binary
/// representation error.
fn decimal_snap(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(12 - x.abs().log10().ceil() as i32);
    let r = (x * scale).round() / scale;
    if (r - x).abs() <= 8.0 * f64::EPSILON * x.abs() {
        r
    } else {
        x
    }
}

/// Computes the certificate with an explicit method.
pub fn certificate_with(
    kernel: &Kernel,
    p: f64,
    eta: f64,
    horizon: f64,
    method: CertificateMethod,
) -> Result<RegularityCertificate> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::invalid("p", "must be a finite number >= 2"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid("eta", "must lie in (0, 1)"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be positive and finite"));
    }
    if let Some(h) = kernel.horizon() {
        if horizon > h {
            return Err(Error::Domain(format!(
                "certificate horizon {horizon} beyond kernel horizon {h}"
            )));
        }
    }
    let sigma = kernel.leading_exponent();
    let mut diagnostics = Vec::new();

    // Exponent of t in |K(t)|^p t^{-eta p} and in the inner Slobodeckij integral.
    let e = p * (sigma - eta);
    let singular_ok = e > -1.0;
    if !singular_ok {
        diagnostics.push(format!(
            "|K(t)|^p t^(-eta p) behaves like t^{e:.6} near 0, not integrable (need eta < {} + 1/p)",
            sigma
        ));
    }
    let diag_ok = !(sigma < 0.0 && p * sigma <= -1.0);
    if !diag_ok {
        diagnostics.push(format!(
            "|K(t) - K(s)|^p behaves like s^{:.6} as s -> 0, not integrable",
            p * sigma
        ));
    }
    let slob_ok = singular_ok && diag_ok;

    let (i1, i2, err) = match method {
        CertificateMethod::ClosedForm => {
            let gamma = match kernel.family() {
                KernelFamily::Fractional { gamma } => *gamma,
                _ => {
                    return Err(Error::Unsupported(format!(
                        "closed-form certificate for {} kernels",
                        kernel.family_name()
                    )))
                }
            };
            let scale = (kernel.dims().0.min(kernel.dims().1) as f64).powf(0.5 * p);
            let s = gamma - 1.0;
            let tpow = |e: f64| {
                let a = decimal_snap(e + 1.0);
                horizon.powf(a) / a
            };
            let i1 = if singular_ok {
                scale * tpow(e)
            } else {
                f64::INFINITY
            };
            let (i2, err) = if !slob_ok {
                (f64::INFINITY, 0.0)
            } else if s == 0.0 {
                (0.0, 0.0)
            } else {
                let j = unit_integral(s, p, eta);
                (
                    scale * 2.0 * tpow(e) * j.value,
                    scale * 2.0 * tpow(e) * j.error,
                )
            };
            (i1, i2, err)
        }
        CertificateMethod::Quadrature => {
            let (i1, e1) = if singular_ok {
                let tol = Tolerance::new(1e-14, 1e-12);
                let r = quad::integrate_graded(
                    |t| kernel.norm(t).powf(p) * t.powf(-eta * p),
                    horizon,
                    e,
                    tol,
                );
                (r.value, r.error)
            } else {
                (f64::INFINITY, 0.0)
            };
            let (i2, e2) = if slob_ok {
                slobodeckij_quadrature(kernel, p, eta, horizon)
            } else {
                (f64::INFINITY, 0.0)
            };
            (i1, i2, e1 + e2)
        }
    };

    let c_k_bound = if i1.is_finite() && i2.is_finite() {
        i1 + i2 + err
    } else {
        f64::INFINITY
    };
    Ok(RegularityCertificate {
        p,
        eta,
        horizon,
        value_singular_integral: i1,
        value_slobodeckij_integral: i2,
        c_k_bound,
        method,
        quadrature_error_estimate: err,
        diagnostic: if diagnostics.is_empty() {
            None
        } else {
            Some(diagnostics.join("; "))
        },
    })
}

/// `int_0^1 |u^s - 1|^p / (1 - u)^(1 + eta p) du`.
pub fn unit_integral(s: f64, p: f64, eta: f64) -> quad::Integral {
    let left = if s < 0.0 { p * s } else { 0.0 };
    let right = p - 1.0 - eta * p;
    quad::integrate_two_sided(
        |u, w| {
            let diff = if u < 0.5 {
                u.powf(s) - 1.0
            } else {
                (s * (-w).ln_1p()).exp_m1()
            };
            diff.abs().powf(p) / w.powf(1.0 + eta * p)
        },
        1.0,
        left,
        right,
        Tolerance::new(1e-15, 1e-13),
    )
}

/// Nested graded quadrature of the double integral, using symmetry:
/// `2 int_0^T int_0^t |K(t) - K(s)|^p / (t - s)^(1 + eta p) ds dt`.
fn slobodeckij_quadrature(kernel: &Kernel, p: f64, eta: f64, horizon: f64) -> (f64, f64) {
    let sigma = kernel.leading_exponent();
    let left = if sigma < 0.0 { p * sigma } else { 0.0 };
    let right = p - 1.0 - eta * p;
    let outer_alpha = p * (sigma - eta);
    let inner_tol = Tolerance::new(1e-15, 1e-11);
    let outer = quad::integrate_graded(
        |t| {
            quad::integrate_two_sided(
                |s, w| kernel.diff_norm(t, s).powf(p) / w.powf(1.0 + eta * p),
                t,
                left,
                right,
                inner_tol,
            )
            .value
        },
        horizon,
        outer_alpha,
        Tolerance::new(1e-13, 1e-9),
    );
    (2.0 * outer.value, 2.0 * outer.error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_fractional_values() {
        let k = Kernel::fractional(0.75).unwrap();
        let c = slobodeckij_certificate(&k, 2.0, 0.2, 1.0).unwrap();
        assert_eq!(c.method, CertificateMethod::ClosedForm);
        assert_eq!(c.value_singular_integral, 10.0);
        assert_relative_eq!(
            c.value_slobodeckij_integral,
            7.799_749_362_360_126,
            max_relative = 1e-9
        );
        assert!(c.c_k_bound >= c.value_singular_integral + c.value_slobodeckij_integral);
        assert!(c.diagnostic.is_none());
    }

    #[test]
    fn decimal_snap_only_moves_by_ulps() {
        assert_eq!(decimal_snap(0.5 - 0.4), 0.1);
        assert_eq!(decimal_snap(1.0 / 3.0), 1.0 / 3.0);
        assert_eq!(decimal_snap(0.0), 0.0);
        assert_eq!(decimal_snap(-0.30000000000000004), -0.3);
    }

    #[test]
    fn constant_kernel_has_zero_slobodeckij_integral() {
        let k = Kernel::constant(1.0).unwrap();
        let c = slobodeckij_certificate(&k, 2.0, 0.2, 1.0).unwrap();
        assert_eq!(c.value_slobodeckij_integral, 0.0);
        assert_relative_eq!(c.value_singular_integral, 1.0 / 0.6, max_relative = 1e-10);
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let k = Kernel::fractional(0.75).unwrap();
        let c = slobodeckij_certificate(&k, 2.0, 0.25, 1.0).unwrap();
        assert!(!c.is_finite());
        assert_eq!(c.c_k_bound, f64::INFINITY);
        assert!(c.diagnostic.unwrap().contains("not integrable"));
        let json =
            serde_json::to_string(&slobodeckij_certificate(&k, 2.0, 0.3, 1.0).unwrap()).unwrap();
        assert!(json.contains("\"inf\""));
    }

    #[test]
    fn rejects_bad_parameters() {
        let k = Kernel::fractional(0.75).unwrap();
        assert!(slobodeckij_certificate(&k, 1.5, 0.2, 1.0).is_err());
        assert!(slobodeckij_certificate(&k, 2.0, 1.0, 1.0).is_err());
        assert!(slobodeckij_certificate(&k, 2.0, 0.2, 0.0).is_err());
        let d = Kernel::dampened_fractional(0.75, 1.0).unwrap();
        assert!(certificate_with(&d, 2.0, 0.2, 1.0, CertificateMethod::ClosedForm).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for &(gamma, eta, p, t) in &[
            (0.75, 0.2, 2.0, 1.0),
            (1.25, 0.45, 4.0, 2.0),
            (0.9, 0.1, 3.0, 0.5),
        ] {
            let k = Kernel::fractional(gamma).unwrap();
            let a = certificate_with(&k, p, eta, t, CertificateMethod::ClosedForm).unwrap();
            let b = certificate_with(&k, p, eta, t, CertificateMethod::Quadrature).unwrap();
            assert_relative_eq!(
                a.value_singular_integral,
                b.value_singular_integral,
                max_relative = 1e-6
            );
            assert_relative_eq!(
                a.value_slobodeckij_integral,
                b.value_slobodeckij_integral,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn lipschitz_kernel_double_integral() {
        // K(t) = t on [0, 1]: int int |t - s|^{1 - eta p} with p = 2, eta = 0.2
        // equals 2 / ((2 - 0.4) (3 - 0.4)).
        let k = Kernel::tabulated(vec![0.0, 1.0], vec![0.0, 1.0], 1.0).unwrap();
        let c = slobodeckij_certificate(&k, 2.0, 0.2, 1.0).unwrap();
        assert_relative_eq!(
            c.value_slobodeckij_integral,
            2.0 / (1.6 * 2.6),
            max_relative = 1e-8
        );
        assert_relative_eq!(c.value_singular_integral, 1.0 / 2.6, max_relative = 1e-10);
    }
}
