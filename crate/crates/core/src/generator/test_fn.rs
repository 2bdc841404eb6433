//! Smooth compactly supported test functions with analytic derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `exp(1 - 1 / (1 - |z - c|^2 / R^2))` inside the ball, 0 outside.
    Bump { center: Vec<f64>, radius: f64 },
    /// `(value + g.(z - c) + (z - c)' H (z - c) / 2) S(|z - c| / R)` with a
    /// smooth cutoff `S` equal to one on `|z - c| <= R / 2`.
    Quadratic {
        center: Vec<f64>,
        radius: f64,
        value: f64,
        gradient: Vec<f64>,
        hessian: Vec<Vec<f64>>,
    },
}

/// `f: R^k -> R` with sup-norm bounds on its first two derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub grad_sup: f64,
    /// Sup of the Frobenius norm of the Hessian.
    pub hess_sup: f64,
}

/// Value, gradient and Hessian at a point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

fn h(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        (-1.0 / v).exp()
    }
}

/// Smooth step `S(v) = h(v) / (h(v) + h(1 - v))` and its first two derivatives.
fn smooth_step(v: f64) -> (f64, f64, f64) {
    if v <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if v >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let w = 1.0 - v;
    let a = h(v);
    let b = h(w);
    let a1 = a / (v * v);
    let a2 = a * (1.0 / v.powi(4) - 2.0 / v.powi(3));
    // Derivatives of b(v) = h(1 - v) with respect to v.
    let b1 = -b / (w * w);
    let b2 = b * (1.0 / w.powi(4) - 2.0 / w.powi(3));
    let s = a + b;
    let n = a1 * b - a * b1;
    let n1 = a2 * b - a * b2;
    let d = s * s;
    let d1 = 2.0 * s * (a1 + b1);
    (a / s, n / d, (n1 * d - n * d1) / (d * d))
}

const PLATEAU: f64 = 0.5;

/// Radial cutoff `chi(r)`, one for `r <= 1/2`, zero for `r >= 1`.
fn cutoff(r: f64) -> (f64, f64, f64) {
    let scale = 1.0 / (1.0 - PLATEAU);
    let (s, s1, s2) = smooth_step((1.0 - r) * scale);
    (s, -s1 * scale, s2 * scale * scale)
}

impl TestFunctionKind {
    fn center(&self) -> &[f64] {
        match self {
            TestFunctionKind::Bump { center, .. } | TestFunctionKind::Quadratic { center, .. } => {
                center
            }
        }
    }

    fn radius(&self) -> f64 {
        match self {
            TestFunctionKind::Bump { radius, .. } | TestFunctionKind::Quadratic { radius, .. } => {
                *radius
            }
        }
    }

    fn jet(&self, z: &[f64]) -> Jet {
        let c = self.center();
        let k = c.len();
        let r_ = self.radius();
        let y = DVector::from_iterator(k, z.iter().zip(c).map(|(a, b)| a - b));
        let dist2 = y.norm_squared();
        let zero = || Jet {
            value: 0.0,
            grad: DVector::zeros(k),
            hess: DMatrix::zeros(k, k),
        };
        if dist2 >= r_ * r_ {
            return zero();
        }
        match self {
            TestFunctionKind::Bump { .. } => {
                let s = dist2 / (r_ * r_);
                let q = 1.0 - s;
                let f = (1.0 - 1.0 / q).exp();
                if f == 0.0 {
                    return zero();
                }
                let g1 = -1.0 / (q * q);
                let g2 = -2.0 / (q * q * q);
                let fs = f * g1;
                let fss = f * (g1 * g1 + g2);
                let ds = &y * (2.0 / (r_ * r_));
                let grad = &ds * fs;
                let hess =
                    &ds * ds.transpose() * fss + DMatrix::identity(k, k) * (fs * 2.0 / (r_ * r_));
                Jet {
                    value: f,
                    grad,
                    hess,
                }
            }
            TestFunctionKind::Quadratic {
                value,
                gradient,
                hessian,
                ..
            } => {
                let g = DVector::from_column_slice(gradient);
                let hm = DMatrix::from_fn(k, k, |i, j| hessian[i][j]);
                let hy = &hm * &y;
                let p = value + g.dot(&y) + 0.5 * y.dot(&hy);
                let dp = &g + &hy;
                let dist = dist2.sqrt();
                let (chi, chi1, chi2) = cutoff(dist / r_);
                if chi1 == 0.0 && chi2 == 0.0 {
                    return Jet {
                        value: p * chi,
                        grad: dp * chi,
                        hess: hm * chi,
                    };
                }
                let u = &y / dist;
                let dchi = &u * (chi1 / r_);
                let d2chi = &u * u.transpose() * (chi2 / (r_ * r_))
                    + (DMatrix::identity(k, k) - &u * u.transpose()) * (chi1 / (r_ * dist));
                let grad = &dp * chi + &dchi * p;
                let hess = hm * chi + &dp * dchi.transpose() + &dchi * dp.transpose() + d2chi * p;
                Jet {
                    value: p * chi,
                    grad,
                    hess,
                }
            }
        }
    }
}

impl TestFunction {
    pub fn new(kind: TestFunctionKind) -> Result<Self> {
        let k = kind.center().len();
        if k == 0 {
            return Err(Error::invalid("center", "must be nonempty"));
        }
        if !(kind.radius() > 0.0 && kind.radius().is_finite()) {
            return Err(Error::invalid("radius", "must be positive and finite"));
        }
        if let TestFunctionKind::Quadratic {
            gradient, hessian, ..
        } = &kind
        {
            if gradient.len() != k || hessian.len() != k || hessian.iter().any(|r| r.len() != k) {
                return Err(Error::invalid(
                    "quadratic",
                    format!("gradient and Hessian must have dimension {k}"),
                ));
            }
            let sym = (0..k).all(|i| (0..k).all(|j| hessian[i][j] == hessian[j][i]));
            if !sym {
                return Err(Error::invalid("hessian", "must be symmetric"));
            }
        }
        let mut f = TestFunction {
            kind,
            grad_sup: 0.0,
            hess_sup: 0.0,
        };
        let (g, hs) = f.probe_sup_norms();
        f.grad_sup = g;
        f.hess_sup = hs;
        Ok(f)
    }

    pub fn bump(center: &[f64], radius: f64) -> Result<Self> {
        Self::new(TestFunctionKind::Bump {
            center: center.to_vec(),
            radius,
        })
    }

    /// Equals `|z - c|^2 / 2 + gradient.(z - c) + value` on `|z - c| <= R / 2`.
    pub fn quadratic(
        center: &[f64],
        radius: f64,
        value: f64,
        gradient: &[f64],
        hessian_scale: f64,
    ) -> Result<Self> {
        let k = center.len();
        Self::new(TestFunctionKind::Quadratic {
            center: center.to_vec(),
            radius,
            value,
            gradient: gradient.to_vec(),
            hessian: (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| if i == j { hessian_scale } else { 0.0 })
                        .collect()
                })
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.center().len()
    }

    pub fn support_radius(&self) -> f64 {
        self.kind.radius()
    }

    pub fn center(&self) -> &[f64] {
        self.kind.center()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.kind.jet(z).value
    }

    pub fn jet(&self, z: &[f64]) -> Jet {
        self.kind.jet(z)
    }

    /// Sup norms by dense probing of the support ball, inflated by 1% to cover
    /// maxima between probes.
    fn probe_sup_norms(&self) -> (f64, f64) {
        let k = self.dim();
        let c = self.center().to_vec();
        let r = self.support_radius();
        let mut g: f64 = 0.0;
        let mut hs: f64 = 0.0;
        let mut visit = |z: &[f64]| {
            let j = self.jet(z);
            g = g.max(j.grad.norm());
            hs = hs.max(j.hess.norm());
        };
        let radial = 400;
        let dirs = directions(k);
        let mut z = vec![0.0; k];
        for dir in &dirs {
            for i in 0..=radial {
                let t = r * i as f64 / radial as f64;
                for ((zi, ci), di) in z.iter_mut().zip(&c).zip(dir) {
                    *zi = ci + t * di;
                }
                visit(&z);
            }
        }
        (g * 1.01, hs * 1.01)
    }

    /// Points on a sphere of radius `factor * R` around the center, used to
    /// confirm that the function vanishes outside its support.
    pub fn support_vanishes(&self, factor: f64) -> bool {
        let r = self.support_radius() * factor;
        directions(self.dim()).iter().all(|d| {
            let z: Vec<f64> = self
                .center()
                .iter()
                .zip(d)
                .map(|(c, u)| c + r * u)
                .collect();
            let j = self.jet(&z);
            j.value == 0.0 && j.grad.norm() == 0.0 && j.hess.norm() == 0.0
        })
    }
}

/// Unit directions: coordinate axes, their diagonals, and a Fibonacci-type
/// spread in two dimensions.
fn directions(k: usize) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let mut out = Vec::new();
    if k == 2 {
        for i in 0..64 {
            let a = std::f64::consts::TAU * i as f64 / 64.0;
            out.push(vec![a.cos(), a.sin()]);
        }
        return out;
    }
    for i in 0..k {
        for s in [-1.0, 1.0] {
            let mut v = vec![0.0; k];
            v[i] = s;
            out.push(v);
        }
        for j in i + 1..k {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; k];
                v[i] = si * std::f64::consts::FRAC_1_SQRT_2;
                v[j] = sj * std::f64::consts::FRAC_1_SQRT_2;
                out.push(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &TestFunction, z: &[f64]) {
        let k = z.len();
        let jet = f.jet(z);
        let eps = 1e-5;
        for i in 0..k {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += eps;
            zm[i] -= eps;
            let d = (f.value(&zp) - f.value(&zm)) / (2.0 * eps);
            assert!(
                (d - jet.grad[i]).abs() < 1e-7,
                "grad {i}: {d} vs {}",
                jet.grad[i]
            );
            let gp = f.jet(&zp).grad;
            let gm = f.jet(&zm).grad;
            for j in 0..k {
                let d2 = (gp[j] - gm[j]) / (2.0 * eps);
                assert!(
                    (d2 - jet.hess[(j, i)]).abs() < 1e-6,
                    "hess {j}{i}: {d2} vs {}",
                    jet.hess[(j, i)]
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = TestFunction::bump(&[0.5, -0.2], 2.0).unwrap();
        let q = TestFunction::quadratic(&[0.0, 0.0], 3.0, 1.0, &[0.5, -1.0], 1.0).unwrap();
        for z in [[0.1, 0.3], [1.2, -0.9], [-0.4, 1.6], [2.0, 1.2]] {
            fd_check(&b, &z);
            fd_check(&q, &z);
        }
        let q1 = TestFunction::quadratic(&[0.0], 2.0, 0.0, &[0.0], 2.0).unwrap();
        for z in [0.3, 0.8, 1.1, 1.7, -1.9] {
            fd_check(&q1, &[z]);
        }
    }

    #[test]
    fn quadratic_core_is_exact_near_center() {
        let q = TestFunction::quadratic(&[1.0], 4.0, 0.0, &[0.0], 2.0).unwrap();
        // f(z) = (z - 1)^2 for |z - 1| <= 2
        assert!((q.value(&[2.5]) - 2.25).abs() < 1e-15);
        assert!((q.jet(&[2.5]).hess[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn support_and_bounds() {
        let b = TestFunction::bump(&[0.0, 0.0], 1.5).unwrap();
        assert!(b.support_vanishes(1.0));
        assert!(b.support_vanishes(1.3));
        assert!(b.grad_sup > 0.0 && b.hess_sup > 0.0);
        // The bump's Hessian at the center is -2/R^2 I.
        assert!(b.hess_sup >= (2.0 / 2.25) * 2f64.sqrt());
    }
}
