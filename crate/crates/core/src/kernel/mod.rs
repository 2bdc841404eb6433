//! Convolution kernels `K: [0, inf) -> R^{d x k}`.

pub mod certificate;
pub mod convolve;
pub mod fit;
pub mod resolvent;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

pub use certificate::{slobodeckij_certificate, CertificateMethod, RegularityCertificate};
pub use convolve::convolve;
pub use fit::{fit_exponential_sum, l2_distance, FittedKernel};
pub use resolvent::{resolvent, ResolventTable};

/// Coefficient in front of a scalar profile: either `c I` or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Weight {
    fn to_matrix(&self, d: usize, k: usize) -> DMatrix<f64> {
        match self {
            Weight::Scalar(c) => DMatrix::from_fn(d, k, |i, j| if i == j { *c } else { 0.0 }),
            Weight::Matrix(m) => DMatrix::from_fn(d, k, |i, j| m[i][j]),
        }
    }

    fn check(&self, d: usize, k: usize) -> Result<()> {
        match self {
            Weight::Scalar(c) if c.is_finite() => Ok(()),
            Weight::Scalar(_) => Err(Error::invalid("weight", "must be finite")),
            Weight::Matrix(m) => {
                if m.len() != d || m.iter().any(|r| r.len() != k) {
                    return Err(Error::invalid(
                        "weight",
                        format!("expected a {d}x{k} matrix"),
                    ));
                }
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("weight", "entries must be finite"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub weight: Weight,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `t^(gamma - 1)`, without a Gamma-function prefactor.
    Fractional {
        gamma: f64,
    },
    /// `t^(gamma - 1) e^(-beta t)`.
    DampenedFractional {
        gamma: f64,
        beta: f64,
    },
    /// `sum_i c_i e^(-lambda_i t)`.
    ExponentialSum {
        terms: Vec<ExpTerm>,
    },
    /// Piecewise-linear interpolation of `values` on `grid`, held constant past
    /// the last node.
    LipschitzTabulated {
        grid: Vec<f64>,
        values: Vec<f64>,
        lipschitz_const: f64,
    },
    Constant {
        matrix: Weight,
    },
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    #[serde(flatten)]
    family: KernelFamily,
    dims: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    family: KernelFamily,
    d: usize,
    k: usize,
    horizon: Option<f64>,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        let mut kernel = Kernel::new(r.family, r.dims[0], r.dims[1])?;
        if let Some(h) = r.horizon {
            kernel = kernel.with_horizon(h)?;
        }
        Ok(kernel)
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            family: k.family,
            dims: [k.d, k.k],
            horizon: k.horizon,
        }
    }
}

impl Kernel {
    pub fn new(family: KernelFamily, d: usize, k: usize) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("dims", "must be positive"));
        }
        match &family {
            KernelFamily::Fractional { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.5) {
                    return Err(Error::invalid(
                        "gamma",
                        "fractional kernel needs gamma > 1/2",
                    ));
                }
            }
            KernelFamily::DampenedFractional { gamma, beta } => {
                if !(gamma.is_finite() && *gamma > 0.5) {
                    return Err(Error::invalid("gamma", "dampened kernel needs gamma > 1/2"));
                }
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(Error::invalid("beta", "must be finite and nonnegative"));
                }
            }
            KernelFamily::ExponentialSum { terms } => {
                for t in terms {
                    if !(t.rate.is_finite() && t.rate >= 0.0) {
                        return Err(Error::invalid("rate", "rates must be finite and >= 0"));
                    }
                    t.weight.check(d, k)?;
                }
            }
            KernelFamily::LipschitzTabulated {
                grid,
                values,
                lipschitz_const,
            } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return Err(Error::invalid(
                        "grid",
                        "grid and values must be nonempty and equally long",
                    ));
                }
                if grid[0] != 0.0 {
                    return Err(Error::invalid("grid", "must start at 0"));
                }
                if grid.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::invalid("grid", "must be strictly increasing"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("values", "must be finite"));
                }
                let slope = grid
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(g, v)| ((v[1] - v[0]) / (g[1] - g[0])).abs())
                    .fold(0.0, f64::max);
                if !(slope <= lipschitz_const * (1.0 + 1e-12)) {
                    return Err(Error::invalid(
                        "lipschitz_const",
                        format!(
                            "table has slope {slope} above declared constant {lipschitz_const}"
                        ),
                    ));
                }
            }
            KernelFamily::Constant { matrix } => matrix.check(d, k)?,
        }
        Ok(Kernel {
            family,
            d,
            k,
            horizon: None,
        })
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        self.horizon = Some(horizon);
        Ok(self)
    }

    pub fn fractional(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Fractional { gamma }, 1, 1)
    }

    pub fn dampened_fractional(gamma: f64, beta: f64) -> Result<Self> {
        Self::new(KernelFamily::DampenedFractional { gamma, beta }, 1, 1)
    }

    pub fn exponential(c: f64, rate: f64) -> Result<Self> {
        Self::exponential_sum(&[(c, rate)])
    }

    pub fn exponential_sum(terms: &[(f64, f64)]) -> Result<Self> {
        let terms = terms
            .iter()
            .map(|&(c, rate)| ExpTerm {
                weight: Weight::Scalar(c),
                rate,
            })
            .collect();
        Self::new(KernelFamily::ExponentialSum { terms }, 1, 1)
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(
            KernelFamily::Constant {
                matrix: Weight::Scalar(c),
            },
            1,
            1,
        )
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>, lipschitz_const: f64) -> Result<Self> {
        Self::new(
            KernelFamily::LipschitzTabulated {
                grid,
                values,
                lipschitz_const,
            },
            1,
            1,
        )
    }

    /// `s -> K(s / n)`, available for the families closed under dilation.
    pub fn time_dilated(&self, n: f64) -> Result<Kernel> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("dilation", "must be positive and finite"));
        }
        let family = match &self.family {
            KernelFamily::ExponentialSum { terms } => KernelFamily::ExponentialSum {
                terms: terms
                    .iter()
                    .map(|t| ExpTerm {
                        weight: t.weight.clone(),
                        rate: t.rate / n,
                    })
                    .collect(),
            },
            KernelFamily::Constant { .. } => self.family.clone(),
            KernelFamily::LipschitzTabulated {
                grid,
                values,
                lipschitz_const,
            } => KernelFamily::LipschitzTabulated {
                grid: grid.iter().map(|g| g * n).collect(),
                values: values.clone(),
                lipschitz_const: lipschitz_const / n,
            },
            _ => {
                return Err(Error::Unsupported(format!(
                    "time dilation of the {} kernel",
                    self.family_name()
                )))
            }
        };
        let mut out = Kernel::new(family, self.d, self.k)?;
        out.horizon = self.horizon.map(|h| h * n);
        Ok(out)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.k)
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            KernelFamily::Fractional { .. } => "fractional",
            KernelFamily::DampenedFractional { .. } => "dampened_fractional",
            KernelFamily::ExponentialSum { .. } => "exponential_sum",
            KernelFamily::LipschitzTabulated { .. } => "lipschitz_tabulated",
            KernelFamily::Constant { .. } => "constant",
        }
    }

    /// Exponent `s <= 0` with `|K(t)| ~ t^s` as `t -> 0`.
    pub fn singular_exponent(&self) -> f64 {
        match self.family {
            KernelFamily::Fractional { gamma } | KernelFamily::DampenedFractional { gamma, .. } => {
                (gamma - 1.0).min(0.0)
            }
            _ => 0.0,
        }
    }

    /// Exponent `s` with `|K(t)| ~ t^s` as `t -> 0` (0 when `K(0) != 0`).
    pub fn leading_exponent(&self) -> f64 {
        match &self.family {
            KernelFamily::Fractional { gamma } | KernelFamily::DampenedFractional { gamma, .. } => {
                gamma - 1.0
            }
            KernelFamily::LipschitzTabulated { values, .. } if values[0] == 0.0 => 1.0,
            _ => 0.0,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular_exponent() < 0.0
    }

    /// True when `K(t) = phi(t) I` for a scalar profile `phi`.
    pub fn is_scalar_profile(&self) -> bool {
        match &self.family {
            KernelFamily::ExponentialSum { terms } => {
                terms.iter().all(|t| matches!(t.weight, Weight::Scalar(_)))
            }
            KernelFamily::Constant { matrix } => matches!(matrix, Weight::Scalar(_)),
            _ => true,
        }
    }

    /// Exponential terms as (rate, d x k weight) pairs, if the kernel is a
    /// finite exponential sum (constants count as rate 0).
    pub fn exponential_terms(&self) -> Option<Vec<(f64, DMatrix<f64>)>> {
        match &self.family {
            KernelFamily::ExponentialSum { terms } => Some(
                terms
                    .iter()
                    .map(|t| (t.rate, t.weight.to_matrix(self.d, self.k)))
                    .collect(),
            ),
            KernelFamily::Constant { matrix } => {
                Some(vec![(0.0, matrix.to_matrix(self.d, self.k))])
            }
            KernelFamily::Fractional { gamma } if *gamma == 1.0 => {
                Some(vec![(0.0, Weight::Scalar(1.0).to_matrix(self.d, self.k))])
            }
            KernelFamily::DampenedFractional { gamma, beta } if *gamma == 1.0 => {
                Some(vec![(*beta, Weight::Scalar(1.0).to_matrix(self.d, self.k))])
            }
            _ => None,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!(
                "kernel evaluated at negative time {t}"
            )));
        }
        if t == 0.0 && self.is_singular() {
            return Err(Error::Domain(format!(
                "{} kernel is singular at t = 0 (behaves like t^{})",
                self.family_name(),
                self.singular_exponent()
            )));
        }
        if let Some(h) = self.horizon {
            if t > h {
                return Err(Error::Domain(format!("t = {t} beyond kernel horizon {h}")));
            }
        }
        Ok(())
    }

    /// Scalar profile `phi(t)`. Only meaningful for scalar-profile kernels;
    /// matrix-weighted families return the (0, 0) entry.
    pub fn profile(&self, t: f64) -> f64 {
        match &self.family {
            KernelFamily::Fractional { gamma } => pow_sigma(t, gamma - 1.0),
            KernelFamily::DampenedFractional { gamma, beta } => {
                pow_sigma(t, gamma - 1.0) * (-beta * t).exp()
            }
            KernelFamily::ExponentialSum { terms } => terms
                .iter()
                .map(|term| entry00(&term.weight) * (-term.rate * t).exp())
                .sum(),
            KernelFamily::LipschitzTabulated { grid, values, .. } => interp(grid, values, t),
            KernelFamily::Constant { matrix } => entry00(matrix),
        }
    }

    /// `phi(t) - phi(s)` computed without cancellation when `s` is close to `t`.
    pub fn profile_diff(&self, t: f64, s: f64) -> f64 {
        match &self.family {
            KernelFamily::Fractional { gamma } => power_diff(t, s, gamma - 1.0),
            KernelFamily::DampenedFractional { gamma, beta } => {
                // t^a e^{-bt} - s^a e^{-bs} = (t^a - s^a) e^{-bt} + s^a (e^{-bt} - e^{-bs})
                let a = gamma - 1.0;
                power_diff(t, s, a) * (-beta * t).exp()
                    + pow_sigma(s, a) * (-beta * s).exp() * (-beta * (t - s)).exp_m1()
            }
            KernelFamily::ExponentialSum { terms } => terms
                .iter()
                .map(|term| {
                    entry00(&term.weight) * (-term.rate * s).exp() * (-term.rate * (t - s)).exp_m1()
                })
                .sum(),
            _ => self.profile(t) - self.profile(s),
        }
    }

    /// `K(t)` as a `d x k` matrix.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let mut out = DMatrix::zeros(self.d, self.k);
        self.eval_unchecked(t, &mut out);
        Ok(out)
    }

    /// Writes `K(t)` into `out` without domain checks.
    pub fn eval_unchecked(&self, t: f64, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match &self.family {
            KernelFamily::ExponentialSum { terms } => {
                for term in terms {
                    add_weight(out, &term.weight, (-term.rate * t).exp());
                }
            }
            KernelFamily::Constant { matrix } => add_weight(out, matrix, 1.0),
            _ => add_weight(out, &Weight::Scalar(1.0), self.profile(t)),
        }
    }

    /// Frobenius norm of the identity-shaped `d x k` matrix.
    fn identity_norm(&self) -> f64 {
        (self.d.min(self.k) as f64).sqrt()
    }

    /// `|K(t)|` (Frobenius).
    pub fn norm(&self, t: f64) -> f64 {
        if self.is_scalar_profile() {
            return self.profile(t).abs() * self.identity_norm();
        }
        let mut m = DMatrix::zeros(self.d, self.k);
        self.eval_unchecked(t, &mut m);
        m.norm()
    }

    /// `|K(t) - K(s)|` (Frobenius).
    pub fn diff_norm(&self, t: f64, s: f64) -> f64 {
        if self.is_scalar_profile() {
            return self.profile_diff(t, s).abs() * self.identity_norm();
        }
        match &self.family {
            KernelFamily::ExponentialSum { terms } => {
                let mut m = DMatrix::zeros(self.d, self.k);
                for term in terms {
                    let f = (-term.rate * s).exp() * (-term.rate * (t - s)).exp_m1();
                    add_weight(&mut m, &term.weight, f);
                }
                m.norm()
            }
            // Constant matrices.
            _ => 0.0,
        }
    }

    /// `int_0^tau phi(u) du` for the scalar profile.
    pub fn profile_integral(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        match &self.family {
            KernelFamily::Fractional { gamma } => tau.powf(*gamma) / gamma,
            KernelFamily::DampenedFractional { gamma, beta } => {
                if *beta == 0.0 {
                    tau.powf(*gamma) / gamma
                } else {
                    lower_gamma_integral(*gamma, *beta, tau)
                }
            }
            KernelFamily::ExponentialSum { terms } => terms
                .iter()
                .map(|term| entry00(&term.weight) * exp_integral(term.rate, tau))
                .sum(),
            KernelFamily::LipschitzTabulated { grid, values, .. } => {
                tabulated_integral(grid, values, tau)
            }
            KernelFamily::Constant { matrix } => entry00(matrix) * tau,
        }
    }

    /// `int_a^b phi(u) du` for `0 <= a <= b`.
    pub fn profile_cell(&self, a: f64, b: f64) -> f64 {
        match &self.family {
            KernelFamily::Fractional { gamma } if a > 0.0 => {
                // b^g - a^g = a^g expm1(g ln(b/a)), accurate for thin cells.
                a.powf(*gamma) * (gamma * (b / a).ln()).exp_m1() / gamma
            }
            KernelFamily::ExponentialSum { terms } => terms
                .iter()
                .map(|term| {
                    let l = term.rate;
                    let w = entry00(&term.weight);
                    if l == 0.0 {
                        w * (b - a)
                    } else {
                        -w * (-l * a).exp() * (-l * (b - a)).exp_m1() / l
                    }
                })
                .sum(),
            _ => self.profile_integral(b) - self.profile_integral(a),
        }
    }

    /// `int_a^b K(u) du` as a `d x k` matrix.
    pub fn cell_integral(&self, a: f64, b: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.k);
        match &self.family {
            KernelFamily::ExponentialSum { terms } if !self.is_scalar_profile() => {
                for term in terms {
                    let l = term.rate;
                    let f = if l == 0.0 {
                        b - a
                    } else {
                        -(-l * a).exp() * (-l * (b - a)).exp_m1() / l
                    };
                    add_weight(&mut out, &term.weight, f);
                }
            }
            KernelFamily::Constant { matrix } => add_weight(&mut out, matrix, b - a),
            _ => add_weight(&mut out, &Weight::Scalar(1.0), self.profile_cell(a, b)),
        }
        out
    }

    /// `out += K(t) v` without domain checks.
    pub fn apply_add(&self, t: f64, v: &[f64], out: &mut [f64]) {
        if self.is_scalar_profile() {
            let phi = self.profile(t);
            for (o, x) in out.iter_mut().zip(v) {
                *o += phi * x;
            }
            return;
        }
        let mut m = DMatrix::zeros(self.d, self.k);
        self.eval_unchecked(t, &mut m);
        mat_vec_add(&m, v, out);
    }

    /// `out += (int_a^b K(u) du) v`.
    pub fn apply_cell_add(&self, a: f64, b: f64, v: &[f64], out: &mut [f64]) {
        if self.is_scalar_profile() {
            let w = self.profile_cell(a, b);
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
            return;
        }
        mat_vec_add(&self.cell_integral(a, b), v, out);
    }

    /// `(int_0^T |K|^p)^(1/p)`.
    pub fn lp_norm(&self, p: f64, horizon: f64) -> f64 {
        let alpha = p * self.singular_exponent();
        if alpha <= -1.0 {
            return f64::INFINITY;
        }
        quad::integrate_graded(
            |t| self.norm(t).powf(p),
            horizon,
            alpha,
            Tolerance::new(1e-14, 1e-11),
        )
        .value
        .powf(1.0 / p)
    }
}

fn entry00(w: &Weight) -> f64 {
    match w {
        Weight::Scalar(c) => *c,
        Weight::Matrix(m) => m[0][0],
    }
}

fn mat_vec_add(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum::<f64>();
    }
}

fn add_weight(out: &mut DMatrix<f64>, w: &Weight, factor: f64) {
    match w {
        Weight::Scalar(c) => {
            for i in 0..out.nrows().min(out.ncols()) {
                out[(i, i)] += c * factor;
            }
        }
        Weight::Matrix(m) => {
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out[(i, j)] += v * factor;
                }
            }
        }
    }
}

#[inline]
fn pow_sigma(t: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        t.powf(sigma)
    }
}

/// `t^a - s^a` without cancellation for `s` near `t`.
fn power_diff(t: f64, s: f64, a: f64) -> f64 {
    if a == 0.0 || t == s {
        return 0.0;
    }
    if s <= 0.0 || t <= 0.0 {
        return pow_sigma(t, a) - pow_sigma(s, a);
    }
    // t^a - s^a = s^a expm1(a ln(t/s)) = s^a expm1(a ln1p((t-s)/s))
    pow_sigma(s, a) * (a * ((t - s) / s).ln_1p()).exp_m1()
}

/// `int_0^tau e^{-l u} du`.
fn exp_integral(l: f64, tau: f64) -> f64 {
    if l == 0.0 {
        tau
    } else {
        -(-l * tau).exp_m1() / l
    }
}

/// `int_0^tau u^{g-1} e^{-b u} du = b^{-g} gamma_lower(g, b tau)`.
fn lower_gamma_integral(g: f64, b: f64, tau: f64) -> f64 {
    let x = b * tau;
    if x < 1e-3 {
        // Series: tau^g sum_n (-x)^n / (n! (g + n)).
        let mut term = 1.0;
        let mut sum = 1.0 / g;
        for n in 1..12 {
            term *= -x / n as f64;
            sum += term / (g + n as f64);
        }
        return tau.powf(g) * sum;
    }
    statrs::function::gamma::gamma_li(g, x) / b.powf(g)
}

fn interp(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let i = grid.partition_point(|&g| g <= t) - 1;
    let w = (t - grid[i]) / (grid[i + 1] - grid[i]);
    values[i] + w * (values[i + 1] - values[i])
}

fn tabulated_integral(grid: &[f64], values: &[f64], tau: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        if tau <= a {
            return acc;
        }
        let hi = tau.min(b);
        acc += 0.5 * (values[i] + interp(grid, values, hi)) * (hi - a);
        if tau <= b {
            return acc;
        }
    }
    acc + values[grid.len() - 1] * (tau - grid[grid.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fractional_evaluation() {
        let k = Kernel::fractional(1.0).unwrap();
        assert_eq!(k.eval(2.0).unwrap()[(0, 0)], 1.0);
        let k = Kernel::fractional(0.75).unwrap();
        assert_relative_eq!(
            k.eval(4.0).unwrap()[(0, 0)],
            0.707_106_781_186_547_5,
            max_relative = 1e-15
        );
    }

    #[test]
    fn singular_at_zero_is_domain_error() {
        let k = Kernel::fractional(0.75).unwrap();
        match k.eval(0.0) {
            Err(Error::Domain(msg)) => assert!(msg.contains("singular")),
            other => panic!("{other:?}"),
        }
        assert!(Kernel::fractional(1.5).unwrap().eval(0.0).is_ok());
        assert!(k.eval(-1.0).is_err());
    }

    #[test]
    fn rate_zero_exponential_is_constant() {
        let k = Kernel::exponential(1.0, 0.0).unwrap();
        for t in [0.0, 0.3, 7.0] {
            assert_eq!(k.eval(t).unwrap()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(Kernel::fractional(0.5).is_err());
        assert!(Kernel::exponential(1.0, -1.0).is_err());
        assert!(Kernel::exponential(1.0, f64::INFINITY).is_err());
        assert!(Kernel::tabulated(vec![0.1, 1.0], vec![0.0, 1.0], 2.0).is_err());
        assert!(Kernel::tabulated(vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0], 2.0).is_err());
        assert!(Kernel::tabulated(vec![0.0, 1.0], vec![0.0, 3.0], 2.0).is_err());
        let bad = KernelFamily::ExponentialSum {
            terms: vec![ExpTerm {
                weight: Weight::Matrix(vec![vec![1.0]]),
                rate: 1.0,
            }],
        };
        assert!(Kernel::new(bad, 2, 2).is_err());
    }

    #[test]
    fn antiderivatives_match_quadrature() {
        let kernels = [
            Kernel::fractional(0.75).unwrap(),
            Kernel::fractional(1.3).unwrap(),
            Kernel::dampened_fractional(0.75, 1.0).unwrap(),
            Kernel::dampened_fractional(0.6, 40.0).unwrap(),
            Kernel::exponential_sum(&[(1.0, 0.0), (2.0, 3.0)]).unwrap(),
            Kernel::tabulated(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 2.0], 4.0).unwrap(),
        ];
        for k in &kernels {
            for tau in [1e-4, 0.3, 1.0, 2.5] {
                let q = quad::integrate_graded(
                    |u| k.profile(u),
                    tau,
                    k.singular_exponent(),
                    Tolerance::new(1e-15, 1e-13),
                );
                assert_relative_eq!(k.profile_integral(tau), q.value, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn stable_differences() {
        let k = Kernel::dampened_fractional(0.75, 1.0).unwrap();
        let (t, s) = (0.5, 0.5 - 1e-9);
        let direct = k.profile(t) - k.profile(s);
        assert_relative_eq!(k.profile_diff(t, s), direct, max_relative = 1e-5);
        let f = Kernel::fractional(0.75).unwrap();
        assert_relative_eq!(
            f.profile_diff(2.0, 1.0),
            2f64.powf(-0.25) - 1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn matrix_weights() {
        let fam = KernelFamily::ExponentialSum {
            terms: vec![
                ExpTerm {
                    weight: Weight::Matrix(vec![vec![1.0, 2.0], vec![0.0, 1.0]]),
                    rate: 1.0,
                },
                ExpTerm {
                    weight: Weight::Scalar(0.5),
                    rate: 0.0,
                },
            ],
        };
        let k = Kernel::new(fam, 2, 2).unwrap();
        let m = k.eval(1.0).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(m[(0, 1)], 2.0 * e);
        assert_relative_eq!(m[(1, 1)], e + 0.5);
        let c = k.cell_integral(0.0, 1.0);
        assert_relative_eq!(c[(0, 1)], 2.0 * (1.0 - e), max_relative = 1e-14);
        assert_relative_eq!(k.diff_norm(1.0, 1.0), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let k = Kernel::dampened_fractional(0.75, 1.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(
            s,
            r#"{"family":"dampened_fractional","params":{"gamma":0.75,"beta":1.0},"dims":[1,1]}"#
        );
        let back: Kernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        let e: Kernel = serde_json::from_str(
            r#"{"family":"exponential_sum","params":{"terms":[{"weight":2.0,"rate":1.0}]},"dims":[1,1],"horizon":3.0}"#,
        )
        .unwrap();
        assert_eq!(e.horizon(), Some(3.0));
        assert!(e.eval(4.0).is_err());
        let bad = serde_json::from_str::<Kernel>(
            r#"{"family":"fractional","params":{"gamma":0.2},"dims":[1,1]}"#,
        );
        assert!(bad.is_err());
    }
}
