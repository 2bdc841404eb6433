//! Empirical verification of growth and Lipschitz conditions on probe sets.

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::family::{norm, norm_sq, Displacement, JumpFamily};
use super::Triplet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthCondition {
    /// `|b| + |a| + int (1 ^ |z|^2) nu <= c (1 + |x|^p)`.
    GrowthBound,
    /// `|b|^2 + |a| + int |z|^2 nu + (int |z|^p nu)^(2/p) <= c (1 + |x|^2)`.
    LinearGrowth,
    /// `|b(x) - b(y)|^2 + |s(x) - s(y)|^2 + int |g(x, .) - g(y, .)|^2 <= c |x - y|^2`.
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub points: Vec<Vec<f64>>,
}

impl ProbeSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("probes", "probe set is empty"));
        }
        Ok(ProbeSet { points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Scaled lattice plus Gaussian-direction probes at radii `R/4, R/2, R`.
pub fn default_probes(d: usize, radius: f64, seed: u64) -> ProbeSet {
    let levels = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut points = Vec::new();
    if d <= 3 {
        let total = levels.len().pow(d as u32);
        for mut idx in 0..total {
            let mut p = Vec::with_capacity(d);
            for _ in 0..d {
                p.push(levels[idx % levels.len()] * radius);
                idx /= levels.len();
            }
            points.push(p);
        }
    } else {
        points.push(vec![0.0; d]);
        for i in 0..d {
            for &l in &levels {
                if l != 0.0 {
                    let mut p = vec![0.0; d];
                    p[i] = l * radius;
                    points.push(p);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in [0.25 * radius, 0.5 * radius, radius] {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v).max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|c| *c *= r / n);
            points.push(v);
        }
    }
    ProbeSet { points }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub condition: GrowthCondition,
    pub probe_points: usize,
    #[serde(with = "crate::io::float_repr")]
    pub max_ratio: f64,
    pub passed: bool,
    pub declared_constant: f64,
    /// Probe (or probe pair) attaining the maximal ratio.
    pub worst: Vec<Vec<f64>>,
    /// Probes where the left side was not finite.
    pub failures: Vec<Vec<f64>>,
}

/// Coefficients whose Lipschitz constant can be probed.
pub trait LipschitzCoefficients {
    fn state_dim(&self) -> usize;
    fn drift_at(&self, x: &[f64]) -> Vec<f64>;
    fn sigma_at(&self, x: &[f64]) -> Result<DMatrix<f64>>;
    /// `int |g(x, u) - g(y, u)|^2 F(du)` for the jump coefficient.
    fn jump_gap(&self, x: &[f64], y: &[f64]) -> Result<f64>;
}

/// Jump-coefficient gap for families with constant intensities, where the
/// coefficient is the displacement map itself.
pub(crate) fn family_jump_gap(f: &JumpFamily, x: &[f64], y: &[f64]) -> Result<f64> {
    let unsupported = || {
        Error::Unsupported("Lipschitz check of jump parts with state-dependent intensities".into())
    };
    match f {
        JumpFamily::FiniteMixture { components } => {
            let mut acc = 0.0;
            for c in components {
                let rate = c.intensity.as_constant().ok_or_else(unsupported)?;
                if let Displacement::StateDependent { value } = &c.displacement {
                    let gx = value.eval(x);
                    let gy = value.eval(y);
                    acc += rate
                        * gx.iter()
                            .zip(&gy)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                }
            }
            Ok(acc)
        }
        JumpFamily::HawkesBasis { .. } if f.uniform_rate().is_some() => Ok(0.0),
        _ => Err(unsupported()),
    }
}

impl LipschitzCoefficients for Triplet {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        self.b(x)
    }
    fn sigma_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.sigma(x)
    }
    fn jump_gap(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        family_jump_gap(&self.jumps, x, y)
    }
}

fn finalize(
    condition: GrowthCondition,
    declared_constant: f64,
    probe_points: usize,
    max_ratio: f64,
    worst: Vec<Vec<f64>>,
    failures: Vec<Vec<f64>>,
) -> GrowthReport {
    let max_ratio = if failures.is_empty() {
        max_ratio
    } else {
        f64::INFINITY
    };
    GrowthReport {
        condition,
        probe_points,
        max_ratio,
        // Relative slack for roundoff in the ratios.
        passed: failures.is_empty() && max_ratio <= declared_constant * (1.0 + 1e-12),
        declared_constant,
        worst,
        failures,
    }
}

/// Evaluates the chosen condition's left side over the probes and compares the
/// largest ratio with `declared_constant`.
pub fn check_growth(
    triplet: &Triplet,
    condition: GrowthCondition,
    declared_constant: f64,
    probes: &ProbeSet,
) -> Result<GrowthReport> {
    if probes.points.iter().any(|p| p.len() != triplet.d) {
        return Err(Error::invalid(
            "probes",
            format!("probe dimension must be {}", triplet.d),
        ));
    }
    if condition == GrowthCondition::Lipschitz {
        return check_lipschitz(triplet, declared_constant, probes);
    }
    let p = triplet.p;
    let mut max_ratio = 0.0f64;
    let mut worst = Vec::new();
    let mut failures = Vec::new();
    for x in &probes.points {
        let b = triplet.b(x);
        let a = triplet.a(x).norm();
        let nx2 = norm_sq(x);
        let (lhs, denom) = match condition {
            GrowthCondition::GrowthBound => {
                let m = triplet.jumps.truncated_moment(x).value;
                (norm(&b) + a + m, 1.0 + nx2.sqrt().powf(p))
            }
            GrowthCondition::LinearGrowth => {
                let m2 = triplet.jumps.moment(x, 2.0).value;
                let mp = triplet.jumps.moment(x, p).value;
                (norm_sq(&b) + a + m2 + mp.powf(2.0 / p), 1.0 + nx2)
            }
            GrowthCondition::Lipschitz => unreachable!(),
        };
        if !lhs.is_finite() {
            failures.push(x.clone());
            continue;
        }
        let ratio = lhs / denom;
        if ratio > max_ratio || worst.is_empty() {
            max_ratio = max_ratio.max(ratio);
            worst = vec![x.clone()];
        }
    }
    Ok(finalize(
        condition,
        declared_constant,
        probes.points.len(),
        max_ratio,
        worst,
        failures,
    ))
}

/// Lipschitz check over all probe pairs.
pub fn check_lipschitz<C: LipschitzCoefficients + ?Sized>(
    coeffs: &C,
    declared_constant: f64,
    probes: &ProbeSet,
) -> Result<GrowthReport> {
    if probes.points.iter().any(|p| p.len() != coeffs.state_dim()) {
        return Err(Error::invalid(
            "probes",
            format!("probe dimension must be {}", coeffs.state_dim()),
        ));
    }
    let data = probes
        .points
        .iter()
        .map(|x| Ok((coeffs.drift_at(x), coeffs.sigma_at(x)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut max_ratio = 0.0f64;
    let mut worst = Vec::new();
    let mut failures = Vec::new();
    for (i, x) in probes.points.iter().enumerate() {
        for (j, y) in probes.points.iter().enumerate().skip(i + 1) {
            let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 == 0.0 {
                continue;
            }
            let (bx, sx) = &data[i];
            let (by, sy) = &data[j];
            let db: f64 = bx.iter().zip(by).map(|(a, b)| (a - b) * (a - b)).sum();
            let ds = (sx - sy).norm_squared();
            let lhs = db + ds + coeffs.jump_gap(x, y)?;
            if !lhs.is_finite() {
                failures.push(x.clone());
                failures.push(y.clone());
                continue;
            }
            let ratio = lhs / dist2;
            if ratio > max_ratio || worst.is_empty() {
                max_ratio = max_ratio.max(ratio);
                worst = vec![x.clone(), y.clone()];
            }
        }
    }
    Ok(finalize(
        GrowthCondition::Lipschitz,
        declared_constant,
        probes.points.len(),
        max_ratio,
        worst,
        failures,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{MatrixExpr, VectorExpr};
    use proptest::prelude::*;

    fn hawkes_triplet(lambda: &[&str]) -> Triplet {
        let l = VectorExpr::parse(lambda).unwrap();
        let b = VectorExpr(
            l.0.iter()
                .map(|e| crate::Expr::parse(&format!("-({e})")).unwrap())
                .collect(),
        );
        let k = l.len();
        Triplet::new(k, k, b, MatrixExpr::zeros(k, k), JumpFamily::hawkes(l), 2.0).unwrap()
    }

    #[test]
    fn zero_triplet_passes_everything() {
        let t = Triplet::zero(2, 2);
        let probes = default_probes(2, 10.0, 1);
        for c in [
            GrowthCondition::GrowthBound,
            GrowthCondition::LinearGrowth,
            GrowthCondition::Lipschitz,
        ] {
            let r = check_growth(&t, c, 0.0, &probes).unwrap();
            assert!(r.passed);
            assert_eq!(r.max_ratio, 0.0);
        }
    }

    #[test]
    fn linear_hawkes_intensity_has_linear_growth() {
        let t = hawkes_triplet(&["x1"]);
        let probes = default_probes(1, 10.0, 3);
        let r = check_growth(&t, GrowthCondition::LinearGrowth, 2.0, &probes).unwrap();
        assert!(r.passed, "{r:?}");
        // Oracle: with b = -Lambda the left side is y^2 + 2 y^+.
        let expected = probes
            .points
            .iter()
            .map(|p| (p[0] * p[0] + 2.0 * p[0].max(0.0)) / (1.0 + p[0] * p[0]))
            .fold(0.0, f64::max);
        assert!((r.max_ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn quadratic_intensity_fails_linear_growth() {
        let t = hawkes_triplet(&["x1^2", "x2^2"]);
        let probes = ProbeSet::new(vec![vec![10.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let r = check_growth(&t, GrowthCondition::LinearGrowth, 2.0, &probes).unwrap();
        assert!(!r.passed);
        assert!((r.max_ratio - (1e4 + 200.0) / 101.0).abs() < 1e-9);
        assert_eq!(r.worst, vec![vec![10.0, 0.0]]);
    }

    #[test]
    fn lipschitz_of_linear_coefficients() {
        let t = Triplet::scalar("-2 * x + 1", "0.25", JumpFamily::empty()).unwrap();
        let r = check_growth(
            &t,
            GrowthCondition::Lipschitz,
            4.0,
            &default_probes(1, 5.0, 0),
        )
        .unwrap();
        assert!(r.passed);
        assert!((r.max_ratio - 4.0).abs() < 1e-12);
        let sq = Triplet::scalar("x^2", "0", JumpFamily::empty()).unwrap();
        assert!(
            !check_growth(
                &sq,
                GrowthCondition::Lipschitz,
                4.0,
                &default_probes(1, 5.0, 0)
            )
            .unwrap()
            .passed
        );
        let hawkes = hawkes_triplet(&["x1"]);
        assert!(check_growth(
            &hawkes,
            GrowthCondition::Lipschitz,
            4.0,
            &default_probes(1, 5.0, 0)
        )
        .is_err());
    }

    #[test]
    fn non_finite_moment_is_a_failure() {
        let t = Triplet::pure_jump(
            1,
            1,
            JumpFamily::hawkes(VectorExpr::parse(&["1 / x1"]).unwrap()),
        )
        .unwrap();
        let r = check_growth(
            &t,
            GrowthCondition::LinearGrowth,
            10.0,
            &ProbeSet::new(vec![vec![0.0]]).unwrap(),
        )
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures.len(), 1);
    }

    proptest! {
        #[test]
        fn passing_is_monotone_in_the_constant(c in 0.0..5.0f64, extra in 0.0..5.0f64, seed in 0u64..50) {
            let t = hawkes_triplet(&["pos(x1) + 0.5"]);
            let probes = default_probes(1, 4.0, seed);
            let lo = check_growth(&t, GrowthCondition::LinearGrowth, c, &probes).unwrap();
            let hi = check_growth(&t, GrowthCondition::LinearGrowth, c + extra, &probes).unwrap();
            prop_assert!(!lo.passed || hi.passed);
        }
    }
}
