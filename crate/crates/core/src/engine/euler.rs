//! Left-point Volterra Euler scheme with integrated kernel weights:
//! `X_m = g0(t_m) + sum_{j<m} w_{m-j} dZ_j` where
//! `w_l = (1/h) int_{(l-1)h}^{lh} K(s) ds` and
//! `dZ_j = b(X_j) h + sigma(X_j) dW_j + (compensated) jumps in (t_j, t_{j+1}]`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Driver, Flags, Grid, Model, Scheme, SolutionSample};
use crate::error::{Error, Result};
use crate::expr::{MatrixExpr, VectorExpr};
use crate::path::GridFunction;
use crate::seed::SeedSpec;
use crate::triplet::growth::{family_jump_gap, LipschitzCoefficients};
use crate::triplet::{psd_sqrt, JumpFamily, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "expr", rename_all = "snake_case")]
pub enum Volatility {
    /// `sigma(x)` itself, `k x r`.
    Matrix(MatrixExpr),
    /// The symmetric root of a diffusion matrix `a(x)`, `k x k`.
    RootOf(MatrixExpr),
}

/// Coefficients `(b, sigma, jumps)` of the continuous-time form driven by a
/// Brownian motion and a finite-activity jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerCoefficients {
    pub drift: VectorExpr,
    pub volatility: Volatility,
    #[serde(default = "JumpFamily::empty")]
    pub jumps: JumpFamily,
    /// Subtract `int z nu(x, dz) h` from each step's jumps.
    #[serde(default = "default_compensate")]
    pub compensate: bool,
}

fn default_compensate() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EulerMode {
    /// Factor recursion for exponential-sum kernels, direct sums otherwise.
    Auto,
    Direct,
    Factor,
}

impl EulerCoefficients {
    pub fn new(drift: VectorExpr, volatility: Volatility) -> Self {
        EulerCoefficients {
            drift,
            volatility,
            jumps: JumpFamily::empty(),
            compensate: true,
        }
    }

    pub fn parse<S: AsRef<str>>(drift: &[S], sigma: &[Vec<S>]) -> Result<Self> {
        let rows = sigma
            .iter()
            .map(|r| VectorExpr::parse(r).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(
            VectorExpr::parse(drift)?,
            Volatility::Matrix(MatrixExpr(rows)),
        ))
    }

    pub fn with_jumps(mut self, jumps: JumpFamily, compensate: bool) -> Self {
        self.jumps = jumps;
        self.compensate = compensate;
        self
    }

    pub fn from_triplet(t: &Triplet) -> Self {
        EulerCoefficients {
            drift: t.drift().clone(),
            volatility: Volatility::RootOf(t.diffusion().clone()),
            jumps: t.jumps().clone(),
            compensate: !t.jumps_uncompensated(),
        }
    }

    /// Number of Brownian components.
    pub fn noise_dim(&self) -> usize {
        match &self.volatility {
            Volatility::Matrix(m) => m.cols(),
            Volatility::RootOf(a) => a.rows(),
        }
    }

    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.drift.len() != k {
            return Err(Error::invalid(
                "drift",
                format!("has {} components, expected {k}", self.drift.len()),
            ));
        }
        let (rows, cols, name) = match &self.volatility {
            Volatility::Matrix(m) => (m.rows(), m.cols(), "sigma"),
            Volatility::RootOf(a) => (a.rows(), a.cols(), "diffusion"),
        };
        let square_ok = matches!(self.volatility, Volatility::Matrix(_)) || rows == cols;
        let rect = match &self.volatility {
            Volatility::Matrix(m) | Volatility::RootOf(m) => m.is_rectangular(),
        };
        if rows != k || !square_ok || !rect || cols == 0 {
            return Err(Error::invalid(
                name,
                format!("must be {k} x r (square for a diffusion matrix)"),
            ));
        }
        let arity = match &self.volatility {
            Volatility::Matrix(m) | Volatility::RootOf(m) => m.arity(),
        }
        .max(self.drift.arity())
        .max(self.jumps.arity());
        if arity > d {
            return Err(Error::invalid(
                "coefficients",
                format!("depend on x{arity} but d = {d}"),
            ));
        }
        self.jumps.validate(k)
    }

    pub(crate) fn sigma(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.volatility {
            Volatility::Matrix(m) => Ok(m.eval(x)),
            Volatility::RootOf(a) => psd_sqrt(&a.eval(x)),
        }
    }

    /// `true` when neither `sigma` nor the jump measure depends on the state.
    pub fn state_independent_noise(&self) -> bool {
        let vol = match &self.volatility {
            Volatility::Matrix(m) | Volatility::RootOf(m) => m.arity(),
        };
        vol == 0 && self.jumps.arity() == 0
    }
}

/// Coefficients on a `d`-dimensional state, for Lipschitz probing.
pub struct EulerLipschitz<'a> {
    pub coeffs: &'a EulerCoefficients,
    pub d: usize,
}

impl LipschitzCoefficients for EulerLipschitz<'_> {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        self.coeffs.drift.eval(x)
    }
    fn sigma_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.coeffs.sigma(x)
    }
    fn jump_gap(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        family_jump_gap(&self.coeffs.jumps, x, y)
    }
}

pub fn simulate_euler_reference(
    model: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
) -> Result<SolutionSample> {
    simulate_euler(model, coeffs, grid, seed, EulerMode::Auto)
}

/// Both modes draw the same numbers in the same order, so for an
/// exponential-sum kernel they agree up to roundoff.
pub fn simulate_euler(
    model: &Model,
    coeffs: &EulerCoefficients,
    grid: &Grid,
    seed: SeedSpec,
    mode: EulerMode,
) -> Result<SolutionSample> {
    let (d, k) = model.dims();
    coeffs.validate(d, k)?;
    let m_steps = grid.steps;
    let h = grid.step();
    let terms = model.kernel.exponential_terms();
    let mut conv = match (mode, terms) {
        (EulerMode::Direct, _) | (EulerMode::Auto, None) => Conv::direct(model, grid),
        (EulerMode::Factor | EulerMode::Auto, Some(t)) => Conv::factor(t, h, k),
        (EulerMode::Factor, None) => {
            return Err(Error::Unsupported(format!(
                "factor recursion with the {} kernel",
                model.kernel.family_name()
            )))
        }
    };

    let r = coeffs.noise_dim();
    let mut rng = seed.rng();
    let mut flags = Flags::default();
    let mut x = vec![0.0; (m_steps + 1) * d];
    let mut z = vec![0.0; (m_steps + 1) * k];
    let mut drift_acc = vec![0.0; (m_steps + 1) * k];
    let mut dz = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut dw = DVector::zeros(r);
    let mut jump = vec![0.0; k];
    model.g0.eval_into(0.0, &mut x[..d]);

    for m in 0..m_steps {
        let xm = x[m * d..(m + 1) * d].to_vec();
        if flags.exploded || xm.iter().any(|v| !v.is_finite()) {
            flags.exploded = true;
            x[(m + 1) * d..].fill(f64::NAN);
            break;
        }
        coeffs.drift.eval_into(&xm, &mut b);
        for v in dw.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = h.sqrt() * n;
        }
        let sig = coeffs.sigma(&xm)?;
        let diff = sig * &dw;
        for i in 0..k {
            dz[i] = b[i] * h + diff[i];
        }
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
                    if coeffs.jumps.sample_jump(&xm, &mut rng, &mut jump) {
                        dz.iter_mut().zip(&jump).for_each(|(o, j)| *o += j);
                    }
                }
            }
            if coeffs.compensate {
                for (o, m1) in dz.iter_mut().zip(coeffs.jumps.first_moment(&xm, k)) {
                    *o -= m1 * h;
                }
            }
        }
        for i in 0..k {
            z[(m + 1) * k + i] = z[m * k + i] + dz[i];
            drift_acc[(m + 1) * k + i] = drift_acc[m * k + i] + b[i] * h;
        }
        conv.push(&dz);
        let out = &mut x[(m + 1) * d..(m + 2) * d];
        model.g0.eval_into(grid.time(m + 1), out);
        conv.add_value(out);
    }

    Ok(SolutionSample {
        scheme: Scheme::Euler,
        seed,
        grid: *grid,
        x: GridFunction {
            step: h,
            dim: d,
            values: x,
        },
        driver: Driver::Grid(GridFunction {
            step: h,
            dim: k,
            values: z,
        }),
        compensator: None,
        drift_record: Some(GridFunction {
            step: h,
            dim: k,
            values: drift_acc,
        }),
        flags,
    })
}

enum Conv {
    /// Weights `w_1..w_M` and the increments so far.
    Direct {
        weights: Vec<DMatrix<f64>>,
        incs: Vec<DVector<f64>>,
    },
    /// `Y_i <- e^{-lambda_i h} Y_i + phi_i dZ`, `X = g0 + sum C_i Y_i`.
    Factor {
        decay: Vec<f64>,
        phi: Vec<f64>,
        coeffs: Vec<DMatrix<f64>>,
        states: Vec<DVector<f64>>,
    },
}

impl Conv {
    fn direct(model: &Model, grid: &Grid) -> Conv {
        let h = grid.step();
        let weights = (1..=grid.steps)
            .map(|l| model.kernel.cell_integral((l - 1) as f64 * h, l as f64 * h) / h)
            .collect();
        Conv::Direct {
            weights,
            incs: Vec::with_capacity(grid.steps),
        }
    }

    fn factor(terms: Vec<(f64, DMatrix<f64>)>, h: f64, k: usize) -> Conv {
        let decay = terms.iter().map(|t| (-t.0 * h).exp()).collect();
        let phi = terms
            .iter()
            .map(|t| {
                let lh = t.0 * h;
                if lh == 0.0 {
                    1.0
                } else {
                    -(-lh).exp_m1() / lh
                }
            })
            .collect();
        let states = vec![DVector::zeros(k); terms.len()];
        Conv::Factor {
            decay,
            phi,
            coeffs: terms.into_iter().map(|t| t.1).collect(),
            states,
        }
    }

    fn push(&mut self, dz: &[f64]) {
        match self {
            Conv::Direct { incs, .. } => incs.push(DVector::from_column_slice(dz)),
            Conv::Factor {
                decay, phi, states, ..
            } => {
                for ((y, e), p) in states.iter_mut().zip(decay.iter()).zip(phi.iter()) {
                    for (yi, z) in y.iter_mut().zip(dz) {
                        *yi = e * *yi + p * z;
                    }
                }
            }
        }
    }

    /// Adds the convolution at the newest grid point.
    fn add_value(&self, out: &mut [f64]) {
        match self {
            Conv::Direct { weights, incs } => {
                let m = incs.len();
                for (j, inc) in incs.iter().enumerate() {
                    let v = &weights[m - j - 1] * inc;
                    out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o += v);
                }
            }
            Conv::Factor { coeffs, states, .. } => {
                for (c, y) in coeffs.iter().zip(states) {
                    let v = c * y;
                    out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o += v);
                }
            }
        }
    }
}

/// Draws `n` standard normals; exposed for tests that rebuild the noise.
#[cfg(test)]
fn normals<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
