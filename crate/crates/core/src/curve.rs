//! Initial curves `g0: [0, T] -> R^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, VectorExpr};
use crate::quad::{self, Tolerance};

/// Components are expressions in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VectorExpr", into = "VectorExpr")]
pub struct Curve(VectorExpr);

impl TryFrom<VectorExpr> for Curve {
    type Error = Error;
    fn try_from(v: VectorExpr) -> Result<Self> {
        Curve::new(v)
    }
}

impl From<Curve> for VectorExpr {
    fn from(c: Curve) -> Self {
        c.0
    }
}

impl Curve {
    pub fn new(components: VectorExpr) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("g0", "needs at least one component"));
        }
        if components.arity() > 0 {
            return Err(Error::invalid("g0", "may only depend on t"));
        }
        Ok(Curve(components))
    }

    pub fn constant(value: &[f64]) -> Self {
        Curve(VectorExpr(
            value.iter().map(|&v| Expr::constant(v)).collect(),
        ))
    }

    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        Curve::new(VectorExpr::parse(items)?)
    }

    /// `t -> amplitude_i * g0_i(scale * t)`.
    pub fn rescaled(&self, amplitudes: &[f64], scale: f64) -> Curve {
        Curve(VectorExpr(
            self.0
                 .0
                .iter()
                .zip(amplitudes)
                .map(|(e, &a)| e.rescaled(a, scale))
                .collect(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &VectorExpr {
        &self.0
    }

    pub fn as_constant(&self) -> Option<Vec<f64>> {
        self.0
             .0
            .iter()
            .map(|e| if e.uses_time() { None } else { e.as_constant() })
            .collect()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.0 .0) {
            *o = e.eval_at(&[], t);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// `int_a^b g0(s) ds`, exact for constant curves.
    pub fn integral(&self, a: f64, b: f64) -> Vec<f64> {
        self.0
             .0
            .iter()
            .map(|e| match (e.uses_time(), e.as_constant()) {
                (false, Some(c)) => c * (b - a),
                _ => {
                    quad::integrate(|s| e.eval_at(&[], s), a, b, Tolerance::new(1e-14, 1e-13)).value
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_and_integral() {
        let c = Curve::parse(&["1 + t", "2"]).unwrap();
        assert_eq!(c.eval(0.5), vec![1.5, 2.0]);
        let i = c.integral(0.0, 2.0);
        assert!((i[0] - 4.0).abs() < 1e-13);
        assert_eq!(i[1], 4.0);
        assert_eq!(Curve::constant(&[3.0]).as_constant(), Some(vec![3.0]));
        assert!(c.as_constant().is_none());
        assert!(Curve::parse(&["x"]).is_err());
        let json: Curve = serde_json::from_str(r#"["exp(-t)", 1]"#).unwrap();
        assert_eq!(json.dim(), 2);
    }
}
