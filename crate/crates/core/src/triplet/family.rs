use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, VectorExpr};
use crate::generator::Approximation;

/// Jump size law of a mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Displacement {
    Fixed {
        value: Vec<f64>,
    },
    StateDependent {
        value: VectorExpr,
    },
    /// Independent normal coordinates.
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

impl Displacement {
    fn dim(&self) -> usize {
        match self {
            Displacement::Fixed { value } => value.len(),
            Displacement::StateDependent { value } => value.len(),
            Displacement::Gaussian { mean, .. } => mean.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpComponent {
    pub intensity: Expr,
    pub displacement: Displacement,
}

impl JumpComponent {
    pub fn fixed(intensity: f64, jump: &[f64]) -> Self {
        JumpComponent {
            intensity: Expr::constant(intensity),
            displacement: Displacement::Fixed {
                value: jump.to_vec(),
            },
        }
    }
}

/// A point mass `mass * delta_jump`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub mass: f64,
    pub jump: Vec<f64>,
}

/// Value of an integral against the jump measure with its Monte Carlo
/// standard error (zero when computed exactly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment {
    pub value: f64,
    pub std_error: f64,
}

impl Moment {
    fn exact(value: f64) -> Self {
        Moment {
            value,
            std_error: 0.0,
        }
    }
}

const MC_SAMPLES: usize = 20_000;

/// State-dependent finite-activity jump measure `nu(x, dz)` on `R^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpFamily {
    FiniteMixture {
        components: Vec<JumpComponent>,
    },
    /// `sum_i Lambda_i(x)^+ delta_{e_i}`.
    HawkesBasis {
        intensity: VectorExpr,
    },
    /// Pure-jump approximation of a triplet at a fixed level.
    Approximation(Box<Approximation>),
}

impl JumpFamily {
    pub fn empty() -> Self {
        JumpFamily::FiniteMixture {
            components: Vec::new(),
        }
    }

    /// Single atom of constant intensity.
    pub fn poisson(rate: f64, jump: &[f64]) -> Self {
        JumpFamily::FiniteMixture {
            components: vec![JumpComponent::fixed(rate, jump)],
        }
    }

    pub fn hawkes(intensity: VectorExpr) -> Self {
        JumpFamily::HawkesBasis { intensity }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            JumpFamily::FiniteMixture { components } => {
                components.iter().all(|c| c.intensity.is_zero())
            }
            JumpFamily::HawkesBasis { intensity } => intensity.is_zero(),
            JumpFamily::Approximation(a) => a.is_empty(),
        }
    }

    pub(crate) fn arity(&self) -> usize {
        match self {
            JumpFamily::FiniteMixture { components } => components
                .iter()
                .map(|c| {
                    let disp = match &c.displacement {
                        Displacement::StateDependent { value } => value.arity(),
                        _ => 0,
                    };
                    c.intensity.arity().max(disp)
                })
                .max()
                .unwrap_or(0),
            JumpFamily::HawkesBasis { intensity } => intensity.arity(),
            JumpFamily::Approximation(a) => a.base().dims().0,
        }
    }

    pub(crate) fn validate(&self, k: usize) -> Result<()> {
        match self {
            JumpFamily::FiniteMixture { components } => {
                for c in components {
                    if c.displacement.dim() != k {
                        return Err(Error::invalid(
                            "displacement",
                            format!("expected dimension {k}"),
                        ));
                    }
                    match &c.displacement {
                        Displacement::Fixed { value } => {
                            if value.iter().any(|v| !v.is_finite()) {
                                return Err(Error::invalid("displacement", "must be finite"));
                            }
                            if value.iter().all(|&v| v == 0.0) && !c.intensity.is_zero() {
                                return Err(Error::invalid(
                                    "displacement",
                                    "jump measures carry no mass at the origin",
                                ));
                            }
                        }
                        Displacement::Gaussian { mean, std } => {
                            if std.len() != mean.len()
                                || std.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
                            {
                                return Err(Error::invalid(
                                    "std",
                                    "need one finite nonnegative std per coordinate",
                                ));
                            }
                        }
                        Displacement::StateDependent { .. } => {}
                    }
                    if let Some(c) = c.intensity.as_constant() {
                        if !(c >= 0.0 && c.is_finite()) {
                            return Err(Error::invalid(
                                "intensity",
                                "constant intensities must be finite and >= 0",
                            ));
                        }
                    }
                }
                Ok(())
            }
            JumpFamily::HawkesBasis { intensity } => {
                if intensity.len() != k {
                    return Err(Error::invalid(
                        "intensity",
                        format!("expected {k} components"),
                    ));
                }
                Ok(())
            }
            JumpFamily::Approximation(a) => {
                if a.base().dims().1 != k {
                    return Err(Error::invalid("approximation", "driver dimension mismatch"));
                }
                Ok(())
            }
        }
    }

    /// `nu(x, R^k)`. Negative raw intensities count as zero.
    pub fn intensity(&self, x: &[f64]) -> f64 {
        match self {
            JumpFamily::FiniteMixture { components } => components
                .iter()
                .map(|c| c.intensity.eval(x).max(0.0))
                .sum(),
            JumpFamily::HawkesBasis { intensity } => {
                intensity.0.iter().map(|e| e.eval(x).max(0.0)).sum()
            }
            JumpFamily::Approximation(a) => a.intensity(x),
        }
    }

    /// True if some raw intensity expression is negative at `x`.
    pub fn intensity_clamped(&self, x: &[f64]) -> bool {
        match self {
            JumpFamily::FiniteMixture { components } => {
                components.iter().any(|c| c.intensity.eval(x) < 0.0)
            }
            JumpFamily::HawkesBasis { intensity } => intensity.0.iter().any(|e| e.eval(x) < 0.0),
            JumpFamily::Approximation(_) => false,
        }
    }

    /// A constant `R` such that the family can be simulated by a rate-`R`
    /// Poisson clock whose surplus draws are null jumps.
    pub fn uniform_rate(&self) -> Option<f64> {
        match self {
            JumpFamily::FiniteMixture { components } => components
                .iter()
                .map(|c| c.intensity.as_constant().map(|v| v.max(0.0)))
                .sum(),
            JumpFamily::HawkesBasis { intensity } => intensity
                .0
                .iter()
                .map(|e| e.as_constant().map(|v| v.max(0.0)))
                .sum(),
            JumpFamily::Approximation(a) => a.uniform_rate(),
        }
    }

    pub fn has_gaussian(&self) -> bool {
        match self {
            JumpFamily::FiniteMixture { components } => components
                .iter()
                .any(|c| matches!(c.displacement, Displacement::Gaussian { .. })),
            _ => false,
        }
    }

    /// Point masses of `nu(x, .)`; fails for continuous jump laws.
    pub fn atoms(&self, x: &[f64], out: &mut Vec<Atom>) -> Result<()> {
        out.clear();
        match self {
            JumpFamily::FiniteMixture { components } => {
                for c in components {
                    let mass = c.intensity.eval(x).max(0.0);
                    let jump = match &c.displacement {
                        Displacement::Fixed { value } => value.clone(),
                        Displacement::StateDependent { value } => value.eval(x),
                        Displacement::Gaussian { .. } => {
                            return Err(Error::Unsupported("atoms of a Gaussian jump law".into()))
                        }
                    };
                    if mass > 0.0 && jump.iter().any(|&v| v != 0.0) {
                        out.push(Atom { mass, jump });
                    }
                }
            }
            JumpFamily::HawkesBasis { intensity } => {
                let k = intensity.len();
                for (i, e) in intensity.0.iter().enumerate() {
                    let mass = e.eval(x).max(0.0);
                    if mass > 0.0 {
                        let mut jump = vec![0.0; k];
                        jump[i] = 1.0;
                        out.push(Atom { mass, jump });
                    }
                }
            }
            JumpFamily::Approximation(a) => {
                for (_, atom) in a.atoms(x)? {
                    out.push(atom);
                }
            }
        }
        Ok(())
    }

    /// `int g(z) nu(x, dz)`; exact for atoms, Monte Carlo for Gaussian laws.
    pub fn integrate(&self, x: &[f64], mut g: impl FnMut(&[f64]) -> f64) -> Moment {
        if let JumpFamily::FiniteMixture { components } = self {
            if self.has_gaussian() {
                let mut value = 0.0;
                let mut var = 0.0;
                for (idx, c) in components.iter().enumerate() {
                    let mass = c.intensity.eval(x).max(0.0);
                    if mass == 0.0 {
                        continue;
                    }
                    match &c.displacement {
                        Displacement::Gaussian { mean, std } => {
                            let mut rng = ChaCha8Rng::seed_from_u64(0x6a75_6d70 ^ idx as u64);
                            let mut z = vec![0.0; mean.len()];
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for _ in 0..MC_SAMPLES {
                                for ((zi, m), s) in z.iter_mut().zip(mean).zip(std) {
                                    let n: f64 = StandardNormal.sample(&mut rng);
                                    *zi = m + s * n;
                                }
                                let v = g(&z);
                                s1 += v;
                                s2 += v * v;
                            }
                            let n = MC_SAMPLES as f64;
                            let mean_v = s1 / n;
                            let var_v = (s2 / n - mean_v * mean_v).max(0.0) / (n - 1.0);
                            value += mass * mean_v;
                            var += mass * mass * var_v;
                        }
                        Displacement::Fixed { value: j } => value += mass * g(j),
                        Displacement::StateDependent { value: j } => value += mass * g(&j.eval(x)),
                    }
                }
                return Moment {
                    value,
                    std_error: var.sqrt(),
                };
            }
        }
        let mut atoms = Vec::new();
        self.atoms(x, &mut atoms)
            .expect("non-Gaussian families are atomic");
        Moment::exact(atoms.iter().map(|a| a.mass * g(&a.jump)).sum())
    }

    /// `int |z|^q nu(x, dz)`.
    pub fn moment(&self, x: &[f64], q: f64) -> Moment {
        if let JumpFamily::HawkesBasis { .. } = self {
            return Moment::exact(self.intensity(x));
        }
        self.integrate(x, |z| norm(z).powf(q))
    }

    /// `int (1 ^ |z|^2) nu(x, dz)`.
    pub fn truncated_moment(&self, x: &[f64]) -> Moment {
        self.integrate(x, |z| norm_sq(z).min(1.0))
    }

    /// `int z nu(x, dz)`.
    pub fn first_moment(&self, x: &[f64], k: usize) -> Vec<f64> {
        if let JumpFamily::FiniteMixture { components } = self {
            let mut out = vec![0.0; k];
            for c in components {
                let mass = c.intensity.eval(x).max(0.0);
                let jump = match &c.displacement {
                    Displacement::Fixed { value } => value.clone(),
                    Displacement::StateDependent { value } => value.eval(x),
                    Displacement::Gaussian { mean, .. } => mean.clone(),
                };
                for (o, j) in out.iter_mut().zip(jump) {
                    *o += mass * j;
                }
            }
            return out;
        }
        let mut atoms = Vec::new();
        self.atoms(x, &mut atoms).expect("atomic family");
        let mut out = vec![0.0; k];
        for a in &atoms {
            for (o, j) in out.iter_mut().zip(&a.jump) {
                *o += a.mass * j;
            }
        }
        out
    }

    /// Draws a jump from `nu(x, .) / nu(x, R^k)` into `out`. Returns false when
    /// the measure is null at `x`.
    pub fn sample_jump<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, out: &mut [f64]) -> bool {
        let total = self.intensity(x);
        if !(total > 0.0) {
            return false;
        }
        let u = rng.gen::<f64>() * total;
        self.pick(x, u, rng, out)
    }

    /// Draws an event of a rate-`rate` clock: a jump with probability
    /// `nu(x, .) / rate`, otherwise a null event (returns false).
    pub fn sample_padded<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rate: f64,
        rng: &mut R,
        out: &mut [f64],
    ) -> bool {
        let u = rng.gen::<f64>() * rate;
        self.pick(x, u, rng, out)
    }

    // Walks the components with a uniform level `u` in [0, rate).
    fn pick<R: Rng + ?Sized>(&self, x: &[f64], mut u: f64, rng: &mut R, out: &mut [f64]) -> bool {
        match self {
            JumpFamily::FiniteMixture { components } => {
                for c in components {
                    let mass = c.intensity.eval(x).max(0.0);
                    if u < mass {
                        match &c.displacement {
                            Displacement::Fixed { value } => out.copy_from_slice(value),
                            Displacement::StateDependent { value } => value.eval_into(x, out),
                            Displacement::Gaussian { mean, std } => {
                                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                                    let n: f64 = StandardNormal.sample(rng);
                                    *o = m + s * n;
                                }
                            }
                        }
                        return out.iter().any(|&v| v != 0.0);
                    }
                    u -= mass;
                }
                false
            }
            JumpFamily::HawkesBasis { intensity } => {
                for (i, e) in intensity.0.iter().enumerate() {
                    let mass = e.eval(x).max(0.0);
                    if u < mass {
                        out.fill(0.0);
                        out[i] = 1.0;
                        return true;
                    }
                    u -= mass;
                }
                false
            }
            JumpFamily::Approximation(a) => a.pick(x, u, out),
        }
    }
}

pub(crate) fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    norm_sq(z).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mixture_moments() {
        let f = JumpFamily::poisson(3.5, &[1.0, 0.0]);
        assert_eq!(f.moment(&[0.0], 2.0).value, 3.5);
        let two = JumpFamily::FiniteMixture {
            components: vec![
                JumpComponent::fixed(1.0, &[2.0, 0.0]),
                JumpComponent::fixed(3.0, &[0.0, 1.0]),
            ],
        };
        assert_eq!(two.moment(&[0.0], 2.0).value, 7.0);
        assert_eq!(two.first_moment(&[0.0], 2), vec![2.0, 3.0]);
        assert_eq!(JumpFamily::empty().moment(&[1.0], 2.0).value, 0.0);
        assert_eq!(two.uniform_rate(), Some(4.0));
    }

    #[test]
    fn gaussian_moment_has_error_bar() {
        let f = JumpFamily::FiniteMixture {
            components: vec![JumpComponent {
                intensity: Expr::constant(2.0),
                displacement: Displacement::Gaussian {
                    mean: vec![0.5],
                    std: vec![1.0],
                },
            }],
        };
        let m = f.moment(&[0.0], 2.0);
        assert!(m.std_error > 0.0);
        assert!((m.value - 2.0 * 1.25).abs() < 4.0 * m.std_error, "{m:?}");
        assert!(f.atoms(&[0.0], &mut Vec::new()).is_err());
    }

    #[test]
    fn sampling_follows_masses() {
        let f = JumpFamily::FiniteMixture {
            components: vec![
                JumpComponent::fixed(1.0, &[1.0]),
                JumpComponent::fixed(3.0, &[-1.0]),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut out = [0.0];
        let n = 40_000;
        let neg = (0..n)
            .filter(|_| {
                assert!(f.sample_jump(&[0.0], &mut rng, &mut out));
                out[0] < 0.0
            })
            .count();
        let frac = neg as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
        // A padded clock at twice the rate yields null events half the time.
        let nulls = (0..n)
            .filter(|_| !f.sample_padded(&[0.0], 8.0, &mut rng, &mut out))
            .count();
        assert!((nulls as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn hawkes_clamps_negative_intensity() {
        let f = JumpFamily::hawkes(VectorExpr::parse(&["x1"]).unwrap());
        assert_eq!(f.intensity(&[-2.0]), 0.0);
        assert!(f.intensity_clamped(&[-2.0]));
        assert!(!f.sample_jump(&[-2.0], &mut ChaCha8Rng::seed_from_u64(1), &mut [0.0]));
    }

    proptest! {
        #[test]
        fn hawkes_moments_equal_total_intensity(x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, q in 2.0..6.0f64) {
            let f = JumpFamily::hawkes(VectorExpr::parse(&["x1^2 + 0.5", "pos(x2) * 3"]).unwrap());
            let x = [x1, x2];
            let total = f.intensity(&x);
            prop_assert!((f.moment(&x, q).value - total).abs() <= 1e-12 * (1.0 + total));
            prop_assert!((f.integrate(&x, |z| norm(z).powf(q)).value - total).abs() <= 1e-12 * (1.0 + total));
        }
    }
}
