//! One-dimensional quadrature and root finding.
//!
//! The workhorse is a globally adaptive 7/15-point Gauss–Kronrod rule. Its
//! nodes are interior, so integrable endpoint singularities are never
//! evaluated. For integrands with a known algebraic endpoint behaviour
//! `f(s) ~ s^alpha` as `s -> 0`, [`integrate_graded`] maps `s = L v^q` with
//! `q (alpha + 1)` an integer, which removes the leading singular factor before
//! the adaptive rule sees it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_intervals: 2000,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-12, 1e-10)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = h * x;
        let s = f(c - dx) + f(c + dx);
        kron += w * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Integral {
    if a == b {
        return Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        };
    }
    let (value, error) = gk15(&mut f, a, b);
    let mut evaluations = 15;
    let mut total = value;
    let mut total_err = error;
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value, error });
    while total_err > tol.abs.max(tol.rel * total.abs()) && heap.len() < tol.max_intervals {
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        if !total.is_finite() {
            break;
        }
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // Interval no longer splittable in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, m);
        let (v2, e2) = gk15(&mut f, m, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Piece {
            a: worst.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: m,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to limit drift from the running updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    Integral {
        value,
        error,
        evaluations,
    }
}

/// Grading exponent `q >= 1` with `q (alpha + 1)` a positive integer.
pub fn grading_exponent(alpha: f64) -> f64 {
    assert!(
        alpha > -1.0,
        "grading needs an integrable endpoint exponent"
    );
    let s = alpha + 1.0;
    (s.ceil() / s).max(1.0)
}

/// Integrates `f` over `(0, len)` where `f(s)` behaves like `s^alpha` near 0.
pub fn integrate_graded<F: FnMut(f64) -> f64>(
    mut f: F,
    len: f64,
    alpha: f64,
    tol: Tolerance,
) -> Integral {
    if len <= 0.0 {
        return Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        };
    }
    let q = grading_exponent(alpha);
    if q == 1.0 {
        return integrate(f, 0.0, len, tol);
    }
    integrate(
        |v: f64| {
            let s = len * v.powf(q);
            f(s) * len * q * v.powf(q - 1.0)
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integrates `f(s, len - s)` over `(0, len)` with graded maps at both ends.
///
/// `f` receives the distance to each endpoint so that callers never form
/// `len - s` by cancellation near the right endpoint.
pub fn integrate_two_sided<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    len: f64,
    alpha_left: f64,
    alpha_right: f64,
    tol: Tolerance,
) -> Integral {
    let half = 0.5 * len;
    let half_tol = Tolerance {
        abs: 0.5 * tol.abs,
        ..tol
    };
    let left = integrate_graded(|s| f(s, len - s), half, alpha_left, half_tol);
    let right = integrate_graded(|w| f(len - w, w), half, alpha_right, half_tol);
    Integral {
        value: left.value + right.value,
        error: left.error + right.error,
        evaluations: left.evaluations + right.evaluations,
    }
}

/// Solves `g(x) = 0` for nondecreasing `g` on a bracket with `g(lo) <= 0 <= g(hi)`.
///
/// Safeguarded Newton: a Newton step is taken when `dg` is positive and the
/// iterate stays inside the bracket, bisection otherwise. Returns `None` if the
/// bracket is invalid.
pub fn solve_increasing<G, D>(mut g: G, mut dg: D, lo: f64, hi: f64, xtol: f64) -> Option<f64>
where
    G: FnMut(f64) -> f64,
    D: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (lo, hi);
    let glo = g(lo);
    let ghi = g(hi);
    if !(glo <= 0.0 && ghi >= 0.0) {
        return None;
    }
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }
    // Secant start from the bracket values.
    let mut x = lo + (hi - lo) * (-glo / (ghi - glo));
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return Some(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= xtol {
            return Some(0.5 * (lo + hi));
        }
        let d = dg(x);
        let newton = if d > 0.0 && d.is_finite() {
            x - gx / d
        } else {
            f64::NAN
        };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 0.25 * xtol {
            return Some(next);
        }
        x = next;
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, Tolerance::default());
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn graded_handles_inverse_square_root() {
        // int_0^1 s^{-1/2} ds = 2
        let r = integrate_graded(|s| s.powf(-0.5), 1.0, -0.5, Tolerance::default());
        assert!((r.value - 2.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn two_sided_beta_integral() {
        // B(0.25, 0.5) = Gamma(.25) Gamma(.5) / Gamma(.75)
        let exact = 3.625_609_908_221_908 * 1.772_453_850_905_516 / 1.225_416_702_465_177_7;
        let r = integrate_two_sided(
            |s, w| s.powf(-0.75) * w.powf(-0.5),
            1.0,
            -0.75,
            -0.5,
            Tolerance::default(),
        );
        assert!(
            (r.value - exact).abs() < 1e-9 * exact,
            "{} vs {}",
            r.value,
            exact
        );
    }

    #[test]
    fn grading_exponent_makes_integer_power() {
        for alpha in [-0.9, -0.5, -0.25, 0.0, 0.6, 1.0, 2.3] {
            let q = grading_exponent(alpha);
            let k = q * (alpha + 1.0);
            assert!(q >= 1.0);
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_bisection_finds_root() {
        let r = solve_increasing(|x| x.powi(3) - 2.0, |x| 3.0 * x * x, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(solve_increasing(|x| x + 5.0, |_| 1.0, 0.0, 1.0, 1e-12).is_none());
    }
}
