//! Pure-jump approximation of a triplet at level `n` (mesh `1/n`).
//!
//! * drift: `n delta_{b/n}`
//! * diffusion: `n^2/2 (delta_{sigma_i/n} + delta_{-sigma_i/n})` for each
//!   column `sigma_i` of the symmetric root of `a`
//! * jumps: `phi_n(|z|) (nu(dz) + n nu(-n dz))` restricted to `1/n <= |z| <= n`
//!   up to the smooth ramps of `phi_n`, so that its first moment vanishes
//!
//! The first moment of the result is the implied drift `b`, and the
//! generator with truncation `chi(z) = z` is `int (f(z + w) - f(z)) nu_n(dw)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triplet::{Atom, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Drift,
    Diffusion,
    Jump,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Drift, Part::Diffusion, Part::Jump];

    pub fn name(self) -> &'static str {
        match self {
            Part::Drift => "drift",
            Part::Diffusion => "diffusion",
            Part::Jump => "jump",
        }
    }
}

/// Ramp `min(clamp(n r - 1, 0, 1), clamp(2 - 2 r / n, 0, 1))`: zero below
/// `1/n` and above `n`, one on `[2/n, n/2]`.
pub fn cutoff_weight(n: f64, r: f64) -> f64 {
    let lo = (n * r - 1.0).clamp(0.0, 1.0);
    let hi = (2.0 - 2.0 * r / n).clamp(0.0, 1.0);
    lo.min(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approximation {
    base: Box<Triplet>,
    level: u32,
    parts: Vec<Part>,
}

impl Approximation {
    pub fn new(base: Triplet, level: u32, parts: &[Part]) -> Result<Self> {
        if level == 0 {
            return Err(Error::invalid("level", "must be positive"));
        }
        if parts.contains(&Part::Jump) && base.jumps().has_gaussian() {
            return Err(Error::Unsupported(
                "pure-jump approximation of a Gaussian jump law (atoms are required)".into(),
            ));
        }
        let mut parts = parts.to_vec();
        parts.sort_by_key(|p| *p as u8);
        parts.dedup();
        Ok(Approximation {
            base: Box::new(base),
            level,
            parts,
        })
    }

    pub fn base(&self) -> &Triplet {
        &self.base
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    fn has(&self, p: Part) -> bool {
        self.parts.contains(&p)
    }

    fn n(&self) -> f64 {
        self.level as f64
    }

    pub fn is_empty(&self) -> bool {
        !(self.has(Part::Drift) && self.base.has_drift()
            || self.has(Part::Diffusion) && self.base.has_diffusion()
            || self.has(Part::Jump) && !self.base.jumps().is_empty())
    }

    /// All non-null atoms of `nu_n(x, .)` tagged by the part they come from.
    pub fn atoms(&self, x: &[f64]) -> Result<Vec<(Part, Atom)>> {
        let n = self.n();
        let k = self.base.dims().1;
        let mut out = Vec::new();
        if self.has(Part::Drift) && self.base.has_drift() {
            let b = self.base.b(x);
            if b.iter().any(|&v| v != 0.0) {
                out.push((
                    Part::Drift,
                    Atom {
                        mass: n,
                        jump: b.iter().map(|v| v / n).collect(),
                    },
                ));
            }
        }
        if self.has(Part::Diffusion) && self.base.has_diffusion() {
            let sigma = self.base.sigma(x)?;
            for i in 0..k {
                let col: Vec<f64> = sigma.column(i).iter().map(|v| v / n).collect();
                if col.iter().any(|&v| v != 0.0) {
                    let neg = col.iter().map(|v| -v).collect();
                    out.push((
                        Part::Diffusion,
                        Atom {
                            mass: 0.5 * n * n,
                            jump: col,
                        },
                    ));
                    out.push((
                        Part::Diffusion,
                        Atom {
                            mass: 0.5 * n * n,
                            jump: neg,
                        },
                    ));
                }
            }
        }
        if self.has(Part::Jump) && !self.base.jumps().is_empty() {
            let mut base_atoms = Vec::new();
            self.base.jumps().atoms(x, &mut base_atoms)?;
            for a in base_atoms {
                let w = cutoff_weight(n, crate::triplet::family_norm(&a.jump));
                if w == 0.0 {
                    continue;
                }
                let back = a.jump.iter().map(|v| -v / n).collect();
                out.push((
                    Part::Jump,
                    Atom {
                        mass: w * a.mass,
                        jump: a.jump,
                    },
                ));
                out.push((
                    Part::Jump,
                    Atom {
                        mass: w * a.mass * n,
                        jump: back,
                    },
                ));
            }
        }
        Ok(out)
    }

    /// `nu_n(x, R^k)`; zero where the diffusion root fails.
    pub fn intensity(&self, x: &[f64]) -> f64 {
        self.atoms(x)
            .map(|a| a.iter().map(|(_, a)| a.mass).sum())
            .unwrap_or(0.0)
    }

    /// A rate dominating `nu_n(x, R^k)` for every `x`, when one is available
    /// without evaluating the triplet.
    pub fn uniform_rate(&self) -> Option<f64> {
        let n = self.n();
        let k = self.base.dims().1 as f64;
        let mut rate = 0.0;
        if self.has(Part::Drift) && self.base.has_drift() {
            rate += n;
        }
        if self.has(Part::Diffusion) && self.base.has_diffusion() {
            rate += k * n * n;
        }
        if self.has(Part::Jump) && !self.base.jumps().is_empty() {
            // Constant rates with fixed displacements give constant masses.
            let base_rate = self.base.jumps().uniform_rate()?;
            rate += base_rate * (1.0 + n);
        }
        Some(rate)
    }

    /// Picks the atom at level `u` of the cumulative masses. Levels past the
    /// total (padding) give a null event.
    pub fn pick(&self, x: &[f64], mut u: f64, out: &mut [f64]) -> bool {
        let Ok(atoms) = self.atoms(x) else {
            return false;
        };
        for (_, a) in atoms {
            if u < a.mass {
                out.copy_from_slice(&a.jump);
                return true;
            }
            u -= a.mass;
        }
        false
    }

    /// `int w nu_n(x, dw)`, the drift of the approximating triplet.
    pub fn first_moment(&self, x: &[f64]) -> Vec<f64> {
        let k = self.base.dims().1;
        let mut m = vec![0.0; k];
        if let Ok(atoms) = self.atoms(x) {
            for (_, a) in atoms {
                for (o, j) in m.iter_mut().zip(&a.jump) {
                    *o += a.mass * j;
                }
            }
        }
        m
    }
}
