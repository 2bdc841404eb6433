//! Characteristic triplets `(b, a, nu)` with truncation `chi(z) = z`.

mod family;
pub mod growth;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, MatrixExpr, VectorExpr};

pub(crate) use family::norm as family_norm;
pub use family::{Atom, Displacement, JumpComponent, JumpFamily, Moment};
pub use growth::{
    check_growth, check_lipschitz, default_probes, GrowthCondition, GrowthReport, ProbeSet,
};

fn default_p() -> f64 {
    2.0
}

/// Drift `b: R^d -> R^k`, diffusion `a: R^d -> S_+^k` and a jump family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TripletRepr", into = "TripletRepr")]
pub struct Triplet {
    d: usize,
    k: usize,
    drift: VectorExpr,
    diffusion: MatrixExpr,
    jumps: JumpFamily,
    p: f64,
    uncompensated: bool,
}

#[derive(Serialize, Deserialize)]
struct TripletRepr {
    dims: [usize; 2],
    #[serde(default)]
    drift: Option<VectorExpr>,
    #[serde(default)]
    diffusion: Option<MatrixExpr>,
    #[serde(default)]
    jumps: Option<JumpFamily>,
    #[serde(default = "default_p")]
    p: f64,
    /// The driver's jumps are summed without compensation, so the drift
    /// carries an extra `int z nu(x, dz)`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    uncompensated: bool,
}

impl TryFrom<TripletRepr> for Triplet {
    type Error = Error;
    fn try_from(r: TripletRepr) -> Result<Self> {
        let [d, k] = r.dims;
        Triplet::new(
            d,
            k,
            r.drift.unwrap_or_else(|| VectorExpr::zeros(k)),
            r.diffusion.unwrap_or_else(|| MatrixExpr::zeros(k, k)),
            r.jumps.unwrap_or_else(JumpFamily::empty),
            r.p,
        )
        .map(|t| {
            if r.uncompensated {
                t.with_uncompensated_jumps()
            } else {
                t
            }
        })
    }
}

impl From<Triplet> for TripletRepr {
    fn from(t: Triplet) -> Self {
        TripletRepr {
            dims: [t.d, t.k],
            drift: Some(t.drift),
            diffusion: Some(t.diffusion),
            jumps: Some(t.jumps),
            p: t.p,
            uncompensated: t.uncompensated,
        }
    }
}

impl Triplet {
    pub fn new(
        d: usize,
        k: usize,
        drift: VectorExpr,
        diffusion: MatrixExpr,
        jumps: JumpFamily,
        p: f64,
    ) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("dims", "must be positive"));
        }
        if drift.len() != k {
            return Err(Error::invalid(
                "drift",
                format!("expected {k} components, got {}", drift.len()),
            ));
        }
        if diffusion.rows() != k || !diffusion.is_rectangular() || diffusion.cols() != k {
            return Err(Error::invalid(
                "diffusion",
                format!("expected a {k}x{k} matrix"),
            ));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::invalid("p", "must be finite and >= 2"));
        }
        let arity = drift.arity().max(diffusion.arity()).max(jumps.arity());
        if arity > d {
            return Err(Error::invalid(
                "expression",
                format!("references x{arity} but the state has dimension {d}"),
            ));
        }
        jumps.validate(k)?;
        Ok(Triplet {
            d,
            k,
            drift,
            diffusion,
            jumps,
            p,
            uncompensated: false,
        })
    }

    pub fn zero(d: usize, k: usize) -> Self {
        Triplet::new(
            d,
            k,
            VectorExpr::zeros(k),
            MatrixExpr::zeros(k, k),
            JumpFamily::empty(),
            2.0,
        )
        .expect("zero triplet is valid")
    }

    /// Scalar triplet (`d = k = 1`) from expression strings.
    pub fn scalar(drift: &str, diffusion: &str, jumps: JumpFamily) -> Result<Self> {
        Triplet::new(
            1,
            1,
            VectorExpr(vec![Expr::parse(drift)?]),
            MatrixExpr(vec![vec![Expr::parse(diffusion)?]]),
            jumps,
            2.0,
        )
    }

    pub fn pure_jump(d: usize, k: usize, jumps: JumpFamily) -> Result<Self> {
        Triplet::new(
            d,
            k,
            VectorExpr::zeros(k),
            MatrixExpr::zeros(k, k),
            jumps,
            2.0,
        )
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::invalid("p", "must be finite and >= 2"));
        }
        self.p = p;
        Ok(self)
    }

    /// Marks the jumps as uncompensated: the driver is `int b_0 ds + sum of jumps`
    /// where `b_0` is the declared drift.
    pub fn with_uncompensated_jumps(mut self) -> Self {
        self.uncompensated = true;
        self
    }

    /// True when `b` includes the first moment of the jump measure, so that a
    /// drift-free driver is the plain sum of its jumps.
    pub fn jumps_uncompensated(&self) -> bool {
        self.uncompensated || matches!(self.jumps, JumpFamily::Approximation(_))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.k)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn drift(&self) -> &VectorExpr {
        &self.drift
    }

    pub fn diffusion(&self) -> &MatrixExpr {
        &self.diffusion
    }

    pub fn jumps(&self) -> &JumpFamily {
        &self.jumps
    }

    pub fn has_drift(&self) -> bool {
        !self.drift.is_zero() || self.jumps_uncompensated() && !self.jumps.is_empty()
    }

    pub fn has_diffusion(&self) -> bool {
        !self.diffusion.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        !self.has_drift() && !self.has_diffusion() && self.jumps.is_empty()
    }

    /// Drift. With uncompensated jumps (always the case for an approximation
    /// family) this includes `int z nu(x, dz)`.
    pub fn b(&self, x: &[f64]) -> Vec<f64> {
        let mut b = self.drift.eval(x);
        if self.jumps_uncompensated() && !self.jumps.is_empty() {
            for (o, m) in b.iter_mut().zip(self.jumps.first_moment(x, self.k)) {
                *o += m;
            }
        }
        b
    }

    pub fn a(&self, x: &[f64]) -> DMatrix<f64> {
        self.diffusion.eval(x)
    }

    /// Checks that `a(x)` is symmetric positive semidefinite and returns its root.
    pub fn sigma(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        psd_sqrt(&self.a(x)).map_err(|e| match e {
            Error::Invalid { reason, .. } => {
                Error::invalid("diffusion", format!("{reason} at x = {x:?}"))
            }
            other => other,
        })
    }
}

/// Symmetric square root via the spectral decomposition. Eigenvalues in
/// `[-1e-12, 0)` (relative to the largest) are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid("matrix", "not square"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix", "has non-finite entries"));
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::invalid("matrix", "not symmetric"));
    }
    if n == 1 {
        let v = a[(0, 0)];
        if v < -1e-12 * scale {
            return Err(Error::invalid(
                "matrix",
                format!("not positive semidefinite (eigenvalue {v:e})"),
            ));
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if let Some(&min) = eig.eigenvalues.iter().min_by(|x, y| x.total_cmp(y)) {
        if min < -1e-12 * scale {
            return Err(Error::invalid(
                "matrix",
                format!("not positive semidefinite (eigenvalue {min:e})"),
            ));
        }
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}
