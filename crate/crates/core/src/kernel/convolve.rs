use super::Kernel;
use crate::error::{Error, Result};
use crate::path::{GridFunction, StepFunction};

/// Input path for [`convolve`].
#[derive(Debug, Clone, Copy)]
pub enum PathRef<'a> {
    Step(&'a StepFunction),
    /// Interpreted as left-point piecewise constant.
    Grid(&'a GridFunction),
}

impl<'a> From<&'a StepFunction> for PathRef<'a> {
    fn from(s: &'a StepFunction) -> Self {
        PathRef::Step(s)
    }
}

impl<'a> From<&'a GridFunction> for PathRef<'a> {
    fn from(g: &'a GridFunction) -> Self {
        PathRef::Grid(g)
    }
}

/// `t -> int_0^t K(t - s) path(s) ds` on the grid `0, h, ..., T`.
///
/// Each constant piece `[a, b)` contributes `int_{t-b}^{t-a} K(u) du v`,
/// evaluated from the kernel's exact antiderivative.
pub fn convolve<'a>(
    kernel: &Kernel,
    path: impl Into<PathRef<'a>>,
    horizon: f64,
    step: f64,
) -> Result<GridFunction> {
    if !(step > 0.0 && horizon >= 0.0) {
        return Err(Error::invalid("step", "need step > 0 and horizon >= 0"));
    }
    let owned;
    let path = match path.into() {
        PathRef::Step(s) => s,
        PathRef::Grid(g) => {
            owned = StepFunction::from(g);
            &owned
        }
    };
    let (d, k) = kernel.dims();
    if path.dim != k {
        return Err(Error::invalid(
            "path",
            format!("dimension {} does not match kernel columns {k}", path.dim),
        ));
    }
    let points = (horizon / step).round() as usize + 1;
    let mut out = vec![0.0; points * d];
    for m in 0..points {
        let t = m as f64 * step;
        let row = &mut out[m * d..(m + 1) * d];
        for i in 0..path.pieces() {
            let a = path.breaks[i];
            if a >= t {
                break;
            }
            let b = path
                .breaks
                .get(i + 1)
                .copied()
                .unwrap_or(f64::INFINITY)
                .min(t);
            let w = kernel.cell_integral(t - b, t - a);
            let v = path.row(i);
            for r in 0..d {
                row[r] += (0..k).map(|c| w[(r, c)] * v[c]).sum::<f64>();
            }
        }
    }
    GridFunction::new(step, d, out)
}
