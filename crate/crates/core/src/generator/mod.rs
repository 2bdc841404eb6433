//! The generator `Af(x, z) = b.grad f + tr(a D^2 f)/2 + int (f(z+w) - f(z) - w.grad f) nu(dw)`
//! and its pure-jump approximations.

pub mod approx;
pub mod test_fn;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::triplet::{JumpFamily, Triplet};

pub use approx::{cutoff_weight, Approximation, Part};
pub use test_fn::{Jet, TestFunction, TestFunctionKind};

/// `Af(x, z)` split by part. `jump_std_error` is nonzero only for Monte
/// Carlo integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorValue {
    pub drift: f64,
    pub diffusion: f64,
    pub jump: f64,
    pub jump_std_error: f64,
}

impl GeneratorValue {
    pub fn total(&self) -> f64 {
        self.drift + self.diffusion + self.jump
    }

    pub fn part(&self, p: Part) -> f64 {
        match p {
            Part::Drift => self.drift,
            Part::Diffusion => self.diffusion,
            Part::Jump => self.jump,
        }
    }
}

fn check_dims(t: &Triplet, f: &TestFunction, x: &[f64], z: &[f64]) -> Result<()> {
    let (d, k) = t.dims();
    if x.len() != d {
        return Err(Error::invalid(
            "x",
            format!("expected dimension {d}, got {}", x.len()),
        ));
    }
    if z.len() != k || f.dim() != k {
        return Err(Error::invalid("z", format!("expected dimension {k}")));
    }
    Ok(())
}

pub fn generator_parts(
    t: &Triplet,
    f: &TestFunction,
    x: &[f64],
    z: &[f64],
) -> Result<GeneratorValue> {
    check_dims(t, f, x, z)?;
    let jet = f.jet(z);
    if let JumpFamily::Approximation(ap) = t.jumps() {
        // Uncompensated form; the explicit drift of such a triplet is added on top.
        let mut out = GeneratorValue {
            drift: t
                .drift()
                .eval(x)
                .iter()
                .zip(jet.grad.iter())
                .map(|(b, g)| b * g)
                .sum(),
            diffusion: 0.0,
            jump: 0.0,
            jump_std_error: 0.0,
        };
        let mut zw = z.to_vec();
        for (part, a) in ap.atoms(x)? {
            for ((o, zi), w) in zw.iter_mut().zip(z).zip(&a.jump) {
                *o = zi + w;
            }
            let v = a.mass * (f.value(&zw) - jet.value);
            match part {
                Part::Drift => out.drift += v,
                Part::Diffusion => out.diffusion += v,
                Part::Jump => out.jump += v,
            }
        }
        return Ok(out);
    }
    let b = t.b(x);
    let drift = b.iter().zip(jet.grad.iter()).map(|(b, g)| b * g).sum();
    let diffusion = if t.has_diffusion() {
        let a = t.a(x);
        0.5 * a.component_mul(&jet.hess).sum()
    } else {
        0.0
    };
    let mut zw = z.to_vec();
    let m = t.jumps().integrate(x, |w| {
        for ((o, zi), wi) in zw.iter_mut().zip(z).zip(w) {
            *o = zi + wi;
        }
        let lin: f64 = w.iter().zip(jet.grad.iter()).map(|(a, b)| a * b).sum();
        f.value(&zw) - jet.value - lin
    });
    Ok(GeneratorValue {
        drift,
        diffusion,
        jump: m.value,
        jump_std_error: m.std_error,
    })
}

pub fn apply_generator(t: &Triplet, f: &TestFunction, x: &[f64], z: &[f64]) -> Result<f64> {
    generator_parts(t, f, x, z).map(|g| g.total())
}

/// The level-`n` pure-jump triplet `(b_n, 0, nu_n)` of `t`.
pub fn approximate_triplet(t: &Triplet, n: u32) -> Result<Triplet> {
    approximate_parts(t, n, &Part::ALL)
}

pub fn approximate_parts(t: &Triplet, n: u32, parts: &[Part]) -> Result<Triplet> {
    let (d, k) = t.dims();
    let ap = Approximation::new(t.clone(), n, parts)?;
    Triplet::pure_jump(d, k, JumpFamily::Approximation(Box::new(ap)))?.with_p(t.p())
}

/// `c_f = 2 (1 + c) (||grad f|| + ||D^2 f|| / 2)`, so that
/// `|Af(x, z)| <= c_f (1 + |x|^2)` whenever the linear-growth condition holds
/// with constant `c`.
pub fn generator_bound_constant(c_linear_growth: f64, f: &TestFunction) -> f64 {
    2.0 * (1.0 + c_linear_growth) * (f.grad_sup + 0.5 * f.hess_sup)
}

/// State points `x` and test-function arguments `z` at which to compare generators.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBox {
    pub states: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
}

impl ProbeBox {
    /// Tensor grids with `per_axis` points on `[-x_radius, x_radius]^d` and on
    /// the cube of half-width `z_radius` around `z_center`.
    pub fn grid(d: usize, x_radius: f64, z_center: &[f64], z_radius: f64, per_axis: usize) -> Self {
        ProbeBox {
            states: cube(&vec![0.0; d], x_radius, per_axis),
            points: cube(z_center, z_radius, per_axis),
        }
    }
}

fn cube(center: &[f64], radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let m = per_axis.max(1);
    let coord = |i: usize| {
        if m == 1 {
            0.0
        } else {
            -radius + 2.0 * radius * i as f64 / (m - 1) as f64
        }
    };
    let total = m.pow(center.len() as u32);
    (0..total)
        .map(|mut idx| {
            center
                .iter()
                .map(|c| {
                    let i = idx % m;
                    idx /= m;
                    c + coord(i)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: u32,
    /// `drift`, `diffusion`, `jump` or `total`.
    pub part: &'static str,
    pub sup_error: f64,
}

/// `sup |A_n f - A f|` over the probe box for each level, per part and in total.
pub fn generator_convergence_report(
    t: &Triplet,
    f: &TestFunction,
    levels: &[u32],
    probes: &ProbeBox,
) -> Result<Vec<ConvergenceRow>> {
    let mut exact = Vec::with_capacity(probes.states.len() * probes.points.len());
    for x in &probes.states {
        for z in &probes.points {
            exact.push(generator_parts(t, f, x, z)?);
        }
    }
    let parts: Vec<Part> = Part::ALL
        .into_iter()
        .filter(|p| match p {
            Part::Drift => t.has_drift(),
            Part::Diffusion => t.has_diffusion(),
            Part::Jump => !t.jumps().is_empty(),
        })
        .collect();
    let mut rows = Vec::new();
    for &n in levels {
        let tn = approximate_triplet(t, n)?;
        let mut sup = [0.0f64; 4];
        let mut idx = 0;
        for x in &probes.states {
            for z in &probes.points {
                let g = generator_parts(&tn, f, x, z)?;
                let e = &exact[idx];
                idx += 1;
                for (slot, p) in Part::ALL.iter().enumerate() {
                    sup[slot] = sup[slot].max((g.part(*p) - e.part(*p)).abs());
                }
                sup[3] = sup[3].max((g.total() - e.total()).abs());
            }
        }
        for p in &parts {
            let slot = Part::ALL.iter().position(|q| q == p).unwrap();
            rows.push(ConvergenceRow {
                level: n,
                part: p.name(),
                sup_error: sup[slot],
            });
        }
        rows.push(ConvergenceRow {
            level: n,
            part: "total",
            sup_error: sup[3],
        });
    }
    Ok(rows)
}

pub fn write_convergence_csv<W: std::io::Write>(rows: &[ConvergenceRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Least-squares slope of `log(error)` against `log(level)` for one part.
pub fn convergence_slope(rows: &[ConvergenceRow], part: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.part == part && r.sup_error > 0.0)
        .map(|r| ((r.level as f64).ln(), r.sup_error.ln()))
        .collect();
    crate::diagnostics::least_squares_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::{check_growth, default_probes, GrowthCondition};

    #[test]
    fn generator_of_brownian_motion_on_quadratic() {
        // f(z) = z^2 near 0: Af = 2 b z + a.
        let t = Triplet::scalar("0.5", "2", JumpFamily::empty()).unwrap();
        let f = TestFunction::quadratic(&[0.0], 10.0, 0.0, &[0.0], 2.0).unwrap();
        let v = apply_generator(&t, &f, &[0.0], &[1.0]).unwrap();
        assert!((v - (2.0 * 0.5 * 1.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn generator_of_poisson_on_quadratic() {
        // int (f(z+w) - f(z) - w f'(z)) nu(dw) = lambda w^2 for f = z^2.
        let t = Triplet::pure_jump(1, 1, JumpFamily::poisson(3.0, &[0.5])).unwrap();
        let f = TestFunction::quadratic(&[0.0], 10.0, 0.0, &[0.0], 2.0).unwrap();
        let v = apply_generator(&t, &f, &[0.0], &[0.2]).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn approximation_rates() {
        // A wide bump keeps the higher derivatives small relative to 1/n.
        let f = TestFunction::bump(&[0.0], 6.0).unwrap();
        let probes = ProbeBox::grid(1, 0.0, &[0.0], 5.9, 119);
        let levels = [4, 8, 16, 32, 64];
        let drift = Triplet::scalar("1", "0", JumpFamily::empty()).unwrap();
        let rows = generator_convergence_report(&drift, &f, &levels, &probes).unwrap();
        let slope = convergence_slope(&rows, "drift").unwrap();
        assert!((slope + 1.0).abs() < 0.2, "drift slope {slope}");
        // Taylor remainder: n * error -> sup |f''| / 2 along the probes.
        let f2 = probes
            .points
            .iter()
            .map(|z| f.jet(z).hess[(0, 0)].abs())
            .fold(0.0, f64::max);
        let last = rows.iter().rfind(|r| r.part == "drift").unwrap();
        assert!((64.0 * last.sup_error / (0.5 * f2) - 1.0).abs() < 0.1);
        let diffusion = Triplet::scalar("0", "1", JumpFamily::empty()).unwrap();
        let rows = generator_convergence_report(&diffusion, &f, &levels, &probes).unwrap();
        let slope = convergence_slope(&rows, "diffusion").unwrap();
        assert!((slope + 2.0).abs() < 0.2, "diffusion slope {slope}");
        let mut buf = Vec::new();
        write_convergence_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("level,part,sup_error"));
    }

    #[test]
    fn mixed_triplet_converges() {
        let t = Triplet::scalar(
            "1 + 0.5 * x",
            "1 + 0.25 * x^2",
            JumpFamily::poisson(1.0, &[0.3]),
        )
        .unwrap();
        let f = TestFunction::bump(&[0.0], 2.0).unwrap();
        let probes = ProbeBox::grid(1, 1.0, &[0.0], 1.5, 7);
        let rows = generator_convergence_report(&t, &f, &[4, 16, 64], &probes).unwrap();
        let tot: Vec<f64> = rows
            .iter()
            .filter(|r| r.part == "total")
            .map(|r| r.sup_error)
            .collect();
        assert!(tot.windows(2).all(|w| w[1] < w[0]), "{tot:?}");
    }

    #[test]
    fn bound_constant_dominates() {
        let t =
            Triplet::scalar("1 - x", "0.5 + 0.5 * x^2", JumpFamily::poisson(0.5, &[1.0])).unwrap();
        let probes = default_probes(1, 5.0, 3);
        let c = 4.0;
        assert!(
            check_growth(&t, GrowthCondition::LinearGrowth, c, &probes)
                .unwrap()
                .passed
        );
        let f = TestFunction::bump(&[0.3], 1.0).unwrap();
        let cf = generator_bound_constant(c, &f);
        for x in &probes.points {
            for z in [-0.5, 0.0, 0.3, 0.9, 1.2] {
                let v = apply_generator(&t, &f, x, &[z]).unwrap();
                assert!(v.abs() <= cf * (1.0 + x[0] * x[0]));
            }
        }
    }

    #[test]
    fn approximations_inherit_linear_growth() {
        let t =
            Triplet::scalar("1 - x", "0.5 + 0.5 * x^2", JumpFamily::poisson(0.5, &[1.0])).unwrap();
        let probes = default_probes(1, 5.0, 11);
        let c = 4.0;
        assert!(
            check_growth(&t, GrowthCondition::LinearGrowth, c, &probes)
                .unwrap()
                .passed
        );
        let c_n = (5.0 + 2.0 * 1f64.sqrt()) * c;
        for n in [1, 2, 4, 16, 64] {
            let tn = approximate_triplet(&t, n).unwrap();
            let r = check_growth(&tn, GrowthCondition::LinearGrowth, c_n, &probes).unwrap();
            assert!(r.passed, "level {n}: ratio {}", r.max_ratio);
        }
    }
}
