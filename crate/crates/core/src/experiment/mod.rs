//! JSON experiment configurations, the registry of experiment kinds and the
//! runner that turns a configuration into CSV files plus a JSON manifest.

mod run;

use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::engine::euler::EulerCoefficients;
use crate::engine::Grid;
use crate::error::{Error, Result};
use crate::generator::TestFunction;
use crate::hawkes::ScalingExperiment;
use crate::kernel::{CertificateMethod, Kernel};
use crate::triplet::{GrowthCondition, Triplet};

pub use run::{run, HypothesisRecord, Manifest, RunOptions, RunSummary, Status};

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment. `seed` and `replicates` can be overridden at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "params", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Simulate(SimulateParams),
    HawkesScale(ScalingExperiment),
    MarkovApprox(MarkovParams),
    KernelCheck(KernelCheckParams),
    UniquenessProbe(UniquenessParams),
    MartingaleCheck(MartingaleParams),
}

/// Path scheme for `simulate` and `martingale-check`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeChoice {
    /// Event-driven; finite-activity triplets without diffusion.
    #[default]
    Exact,
    /// The level-`n` pure-jump approximation, simulated exactly.
    Approximation { level: u32 },
    /// Left-point Volterra Euler.
    Euler,
    /// Factor recursion with exact jump times; exponential-sum kernels.
    Factor,
}

fn default_probe_radius() -> f64 {
    4.0
}

/// A growth or Lipschitz condition to verify on probes before running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthHypothesis {
    pub condition: GrowthCondition,
    pub constant: f64,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
}

fn default_max_paths() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub g0: Curve,
    pub kernel: Kernel,
    pub triplet: Triplet,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub scheme: SchemeChoice,
    /// Times for the marginal summary; the horizon when empty.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub hypotheses: Vec<GrowthHypothesis>,
    /// Paths written to `paths.csv`.
    #[serde(default = "default_max_paths")]
    pub max_paths: usize,
}

fn default_p() -> f64 {
    2.0
}

fn default_eta() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovParams {
    pub target: Kernel,
    pub g0: Curve,
    pub coefficients: EulerCoefficients,
    pub levels: Vec<usize>,
    pub horizon: f64,
    pub steps: usize,
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckParams {
    pub kernel: Kernel,
    pub p: f64,
    pub eta: f64,
    pub horizon: f64,
    #[serde(default)]
    pub method: Option<CertificateMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessParams {
    pub g0: Curve,
    /// Initial curve of the second run in the perturbed comparison.
    pub perturbed_g0: Option<Curve>,
    pub kernel: Kernel,
    pub coefficients: EulerCoefficients,
    pub horizon: f64,
    pub steps: usize,
    /// Lipschitz constant of the drift; enables the Gronwall bound and a
    /// probe check of the coefficients.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
}

fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleParams {
    pub g0: Curve,
    pub kernel: Kernel,
    pub triplet: Triplet,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub scheme: SchemeChoice,
    pub test_functions: Vec<TestFunction>,
    pub checkpoints: Vec<f64>,
    /// Residual means within this many standard errors pass.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

/// Registry entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExperimentKind {
    pub name: &'static str,
    pub summary: &'static str,
    pub required: &'static [&'static str],
    pub default_replicates: usize,
}

pub const REGISTRY: [ExperimentKind; 6] = [
    ExperimentKind {
        name: "simulate",
        summary: "simulate paths of X = g0 + K * dZ and summarize marginals",
        required: &["g0", "kernel", "triplet", "horizon", "steps"],
        default_replicates: 100,
    },
    ExperimentKind {
        name: "hawkes-scale",
        summary: "rescaled Hawkes levels against the Volterra square-root reference",
        required: &[
            "g0",
            "kernel",
            "intensity",
            "schedule",
            "hawkes_growth_constant",
            "horizon",
            "steps",
            "reference_steps",
            "checkpoints",
        ],
        default_replicates: 200,
    },
    ExperimentKind {
        name: "markov-approx",
        summary: "factor simulations for fitted exponential sums against a target kernel",
        required: &[
            "target",
            "g0",
            "coefficients",
            "levels",
            "horizon",
            "steps",
            "checkpoints",
        ],
        default_replicates: 100,
    },
    ExperimentKind {
        name: "kernel-check",
        summary: "regularity certificate of a kernel",
        required: &["kernel", "p", "eta", "horizon"],
        default_replicates: 1,
    },
    ExperimentKind {
        name: "uniqueness-probe",
        summary: "coupled Euler runs: identical seeds and perturbed initial curves",
        required: &["g0", "kernel", "coefficients", "horizon", "steps"],
        default_replicates: 20,
    },
    ExperimentKind {
        name: "martingale-check",
        summary: "martingale residuals of test functions along simulated paths",
        required: &[
            "g0",
            "kernel",
            "triplet",
            "horizon",
            "steps",
            "test_functions",
            "checkpoints",
        ],
        default_replicates: 1000,
    },
];

impl ExperimentSpec {
    pub fn kind(&self) -> &'static ExperimentKind {
        let name = match self {
            ExperimentSpec::Simulate(_) => "simulate",
            ExperimentSpec::HawkesScale(_) => "hawkes-scale",
            ExperimentSpec::MarkovApprox(_) => "markov-approx",
            ExperimentSpec::KernelCheck(_) => "kernel-check",
            ExperimentSpec::UniquenessProbe(_) => "uniqueness-probe",
            ExperimentSpec::MartingaleCheck(_) => "martingale-check",
        };
        REGISTRY
            .iter()
            .find(|k| k.name == name)
            .expect("registered")
    }
}

fn grid(horizon: f64, steps: usize) -> Result<Grid> {
    Grid::new(horizon, steps)
}

fn within(field: &str, times: &[f64], horizon: f64) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
        return Err(Error::invalid(field, format!("must lie in [0, {horizon}]")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors carry line and column; schema
    /// errors name the field.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if let Some(kind) = raw.get("experiment").and_then(|v| v.as_str()) {
            if !REGISTRY.iter().any(|k| k.name == kind) {
                let names: Vec<&str> = REGISTRY.iter().map(|k| k.name).collect();
                return Err(Error::invalid(
                    "experiment",
                    format!("unknown kind {kind:?}; expected one of {names:?}"),
                ));
            }
        }
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!(
                    "is {}, this build reads {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if self.replicates == Some(0) {
            return Err(Error::invalid("replicates", "must be positive"));
        }
        match &self.spec {
            ExperimentSpec::Simulate(p) => {
                grid(p.horizon, p.steps)?;
                within("params.checkpoints", &p.checkpoints, p.horizon)?;
                run::model(&p.g0, &p.kernel)?;
                check_dims("params.triplet", p.triplet.dims(), p.kernel.dims())
            }
            ExperimentSpec::HawkesScale(p) => {
                grid(p.horizon, p.steps)?;
                grid(p.horizon, p.reference_steps)?;
                within("params.checkpoints", &p.checkpoints, p.horizon)?;
                run::model(&p.g0, &p.kernel).map(|_| ())
            }
            ExperimentSpec::MarkovApprox(p) => {
                grid(p.horizon, p.steps)?;
                within("params.checkpoints", &p.checkpoints, p.horizon)?;
                if p.levels.is_empty() || p.levels.contains(&0) {
                    return Err(Error::invalid(
                        "params.levels",
                        "need a nonempty list of positive term counts",
                    ));
                }
                let (d, k) = run::model(&p.g0, &p.target)?.dims();
                p.coefficients.validate(d, k)
            }
            ExperimentSpec::KernelCheck(p) => {
                if !(p.horizon > 0.0 && p.horizon.is_finite()) {
                    return Err(Error::invalid(
                        "params.horizon",
                        "must be positive and finite",
                    ));
                }
                Ok(())
            }
            ExperimentSpec::UniquenessProbe(p) => {
                grid(p.horizon, p.steps)?;
                let (d, k) = run::model(&p.g0, &p.kernel)?.dims();
                if let Some(g) = &p.perturbed_g0 {
                    run::model(g, &p.kernel)?;
                }
                if p.lipschitz.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
                    return Err(Error::invalid(
                        "params.lipschitz",
                        "must be finite and nonnegative",
                    ));
                }
                p.coefficients.validate(d, k)
            }
            ExperimentSpec::MartingaleCheck(p) => {
                grid(p.horizon, p.steps)?;
                within("params.checkpoints", &p.checkpoints, p.horizon)?;
                if p.test_functions.is_empty() {
                    return Err(Error::invalid("params.test_functions", "need at least one"));
                }
                run::model(&p.g0, &p.kernel)?;
                check_dims("params.triplet", p.triplet.dims(), p.kernel.dims())
            }
        }
    }
}

fn check_dims(field: &str, got: (usize, usize), kernel: (usize, usize)) -> Result<()> {
    if got != kernel {
        return Err(Error::invalid(
            field,
            format!("dims {got:?} do not match the kernel's {kernel:?}"),
        ));
    }
    Ok(())
}
