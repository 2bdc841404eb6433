//! Path regularity and distributional diagnostics.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::GridFunction;
use crate::seed::SeedSpec;

/// Quadrature rule for integrals of grid values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `h sum_{m < M} f(t_m)`; natural for piecewise-constant paths.
    LeftPoint,
    Trapezoid,
    /// Composite Simpson, with the 3/8 rule on the last three cells when the
    /// number of cells is odd.
    Simpson,
}

fn integrate_values(v: &[f64], h: f64, rule: Rule) -> f64 {
    let n = v.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    match rule {
        Rule::LeftPoint => h * v[..n].iter().sum::<f64>(),
        Rule::Trapezoid => h * (0.5 * (v[0] + v[n]) + v[1..n].iter().sum::<f64>()),
        Rule::Simpson => {
            if n == 1 {
                return integrate_values(v, h, Rule::Trapezoid);
            }
            let (even, tail) = if n.is_multiple_of(2) { (n, 0) } else { (n - 3, 3) };
            let mut s = 0.0;
            for i in (0..even).step_by(2) {
                s += h / 3.0 * (v[i] + 4.0 * v[i + 1] + v[i + 2]);
            }
            if tail == 3 {
                let i = even;
                s += 3.0 * h / 8.0 * (v[i] + 3.0 * v[i + 1] + 3.0 * v[i + 2] + v[i + 3]);
            }
            s
        }
    }
}

fn row_norm(r: &[f64]) -> f64 {
    if r.len() == 1 {
        r[0].abs()
    } else {
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `int_0^T |X_t|^p dt` (the p-th power of the norm).
pub fn lp_norm_pow(x: &GridFunction, p: f64, rule: Rule) -> f64 {
    let v: Vec<f64> = x.rows().map(|r| row_norm(r).powf(p)).collect();
    integrate_values(&v, x.step, rule)
}

pub fn lp_norm(x: &GridFunction, p: f64, rule: Rule) -> f64 {
    lp_norm_pow(x, p, rule).powf(1.0 / p)
}

/// Weight of the first off-diagonal in the Slobodeckij double sum. With
/// `alpha = p - 1 - eta p` it equals the exact integral of `|t - s|^alpha`
/// over the diagonal band of cells divided by the point values there, so the
/// band is exact for linear paths.
pub fn first_offdiagonal_weight(alpha: f64) -> f64 {
    (2f64.powf(alpha + 2.0) - 1.0) / ((alpha + 1.0) * (alpha + 2.0))
}

/// `sum_{i != j} w_{|i-j|} |X_i - X_j|^p / |t_i - t_j|^(1 + eta p) h^2` over
/// the cell values `X_0, ..., X_{M-1}` (left endpoints), where `w_1` is
/// [`first_offdiagonal_weight`] and `w_k = 1` otherwise. Diagonal cells are
/// excluded.
pub fn slobodeckij_seminorm_pow(x: &GridFunction, eta: f64, p: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid("eta", "must lie in (0, 1)"));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid("p", "must be >= 1"));
    }
    let cells = x.len().saturating_sub(1);
    let h = x.step;
    let alpha = p - 1.0 - eta * p;
    let w1 = first_offdiagonal_weight(alpha);
    let dim = x.dim;
    let mut total = 0.0;
    for lag in 1..cells {
        let weight = if lag == 1 { w1 } else { 1.0 };
        let denom = (lag as f64 * h).powf(1.0 + eta * p);
        let mut acc = 0.0;
        for i in 0..cells - lag {
            let a = x.at(i);
            let b = x.at(i + lag);
            let dist = if dim == 1 {
                (a[0] - b[0]).abs()
            } else {
                a.iter()
                    .zip(b)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt()
            };
            acc += if p == 2.0 { dist * dist } else { dist.powf(p) };
        }
        // Both orderings (i, j) and (j, i).
        total += 2.0 * weight * acc / denom;
    }
    Ok(total * h * h)
}

/// `||X||^p_{L^p} + [X]^p_{W^{eta,p}}` with left-point cells for both parts.
pub fn slobodeckij_norm_pow(x: &GridFunction, eta: f64, p: f64) -> Result<f64> {
    Ok(lp_norm_pow(x, p, Rule::LeftPoint) + slobodeckij_seminorm_pow(x, eta, p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_error = if pts.len() > 2 {
        let rss: f64 = pts
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        slope_std_error,
    })
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct `x`.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    linear_fit(pts).map(|f| f.slope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    /// Two standard errors of the regression slope.
    pub band: f64,
    pub levels: usize,
}

/// Regression of `log max_m |X_{m + 2^l} - X_m|` on `log(2^l h)` over the
/// dyadic lags `l = 0..levels`.
pub fn holder_exponent(x: &GridFunction, levels: usize) -> Result<HolderEstimate> {
    let cells = x.len().saturating_sub(1);
    let available = (usize::BITS - cells.leading_zeros()) as usize;
    // Lags up to half the grid.
    let usable = available.saturating_sub(1);
    if levels < 4 || levels > usable {
        return Err(Error::invalid(
            "levels",
            format!(
                "need at least 4 dyadic levels; the grid supports {usable}, {levels} requested"
            ),
        ));
    }
    let mut pts = Vec::with_capacity(levels);
    for l in 0..levels {
        let lag = 1usize << l;
        let mut best: f64 = 0.0;
        for m in 0..cells + 1 - lag {
            let a = x.at(m);
            let b = x.at(m + lag);
            let d = a
                .iter()
                .zip(b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        }
        if !best.is_finite() {
            return Err(Error::Domain("non-finite path values".into()));
        }
        if best > 0.0 {
            pts.push(((lag as f64 * x.step).ln(), best.ln()));
        }
    }
    if pts.len() < 2 {
        // A constant path is arbitrarily smooth; report the Lipschitz exponent.
        return Ok(HolderEstimate {
            exponent: 1.0,
            band: 0.0,
            levels,
        });
    }
    let fit = linear_fit(&pts).expect("distinct abscissae");
    Ok(HolderEstimate {
        exponent: fit.slope,
        band: 2.0 * fit.slope_std_error,
        levels,
    })
}

/// `int |F_a - F_b| dx` for the empirical distribution functions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "samples",
            "need at least one sample on each side",
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
    }
    Ok(total)
}

/// Bootstrap standard error of the two-sample W1 estimate.
pub fn wasserstein1_bootstrap_se(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: SeedSpec,
) -> Result<f64> {
    let mut rng = seed.rng();
    let mut vals = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..resamples {
        for v in ra.iter_mut() {
            *v = a[rng.gen_range(0..a.len())];
        }
        for v in rb.iter_mut() {
            *v = b[rng.gen_range(0..b.len())];
        }
        vals.push(wasserstein1(&ra, &rb)?);
    }
    Ok(mean_and_se(&vals).1 * (resamples as f64).sqrt())
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF, with the
/// asymptotic distribution and Stephens' finite-sample correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
        n,
    }
}

pub fn ks_exponential(samples: &[f64], rate: f64) -> KsResult {
    ks_test(
        samples,
        |x| if x <= 0.0 { 0.0 } else { -(-rate * x).exp_m1() },
    )
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}
