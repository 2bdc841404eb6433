use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    ExperimentConfig, ExperimentSpec, KernelCheckParams, MarkovParams, MartingaleParams,
    SchemeChoice, SimulateParams, UniquenessParams, SCHEMA_VERSION,
};
use crate::curve::Curve;
use crate::diagnostics::mean_and_se;
use crate::engine::euler::{EulerCoefficients, EulerLipschitz};
use crate::engine::{
    martingale_residuals, pathwise_uniqueness_probe, pure_jump, simulate_euler_reference,
    EngineOptions, Grid, Model, SolutionSample,
};
use crate::error::{Error, Result};
use crate::factors::{
    factor_convergence_experiment, simulate_factor_system, ConvergenceSetup, FactorDriver,
};
use crate::hawkes::{check_schedule, dyadic_probes, scaling_limit_experiment, ScalingExperiment};
use crate::kernel::certificate::certificate_with;
use crate::kernel::{slobodeckij_certificate, Kernel};
use crate::seed::SeedSpec;
use crate::triplet::{check_growth, check_lipschitz, default_probes, Triplet};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub threads: Option<usize>,
    pub engine: EngineOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    HypothesisFailed,
    Exploded,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::HypothesisFailed => 3,
            Status::Exploded => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub replicates: usize,
    pub threads: Option<usize>,
    /// Seconds since the Unix epoch; the only field that changes between
    /// identical runs.
    pub created_unix: u64,
    pub status: Status,
    pub hypotheses: Vec<HypothesisRecord>,
    pub results: Value,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub status: Status,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

struct Ctx<'a> {
    dir: &'a Path,
    seed: u64,
    replicates: usize,
    engine: EngineOptions,
    outputs: Vec<String>,
    hypotheses: Vec<HypothesisRecord>,
    results: serde_json::Map<String, Value>,
    exploded: usize,
}

impl Ctx<'_> {
    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn hypothesis(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.hypotheses.push(HypothesisRecord {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(
            key.to_string(),
            serde_json::to_value(v).unwrap_or(Value::Null),
        );
    }

    fn failed(&self) -> bool {
        self.hypotheses.iter().any(|h| !h.passed)
    }

    fn seed(&self, r: usize) -> SeedSpec {
        SeedSpec::new(self.seed, r as u64)
    }
}

pub(super) fn model(g0: &Curve, kernel: &Kernel) -> Result<Model> {
    Model::new(g0.clone(), kernel.clone())
}

/// Validates `cfg`, runs it, and writes the CSV outputs and `manifest.json`
/// into `opts.out_dir`. Failed hypothesis checks and exploded paths are
/// reported through [`Status`]; configuration and runtime errors are returned.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let kind = cfg.spec.kind();
    let mut ctx = Ctx {
        dir: &opts.out_dir,
        seed: opts.seed.unwrap_or(cfg.seed),
        replicates: opts
            .replicates
            .or(cfg.replicates)
            .unwrap_or(kind.default_replicates),
        engine: opts.engine,
        outputs: Vec::new(),
        hypotheses: Vec::new(),
        results: serde_json::Map::new(),
        exploded: 0,
    };
    if ctx.replicates == 0 {
        return Err(Error::invalid("replicates", "must be positive"));
    }
    let outcome = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?
            .install(|| dispatch(&cfg.spec, &mut ctx)),
        None => dispatch(&cfg.spec, &mut ctx),
    };
    match outcome {
        Ok(()) => {}
        Err(Error::Hypothesis { condition, detail }) => ctx.hypothesis(condition, false, detail),
        Err(e) => return Err(e),
    }
    let status = if ctx.failed() {
        Status::HypothesisFailed
    } else if ctx.exploded > 0 {
        Status::Exploded
    } else {
        Status::Success
    };
    ctx.result("exploded", ctx.exploded);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        experiment: kind.name,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: ctx.seed,
        replicates: ctx.replicates,
        threads: opts.threads,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        status,
        hypotheses: ctx.hypotheses,
        results: Value::Object(ctx.results),
        outputs: ctx.outputs,
        config: cfg.clone(),
    };
    let f = BufWriter::new(File::create(opts.out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(RunSummary {
        status,
        manifest,
        out_dir: opts.out_dir.clone(),
    })
}

fn dispatch(spec: &ExperimentSpec, ctx: &mut Ctx) -> Result<()> {
    match spec {
        ExperimentSpec::Simulate(p) => simulate(p, ctx),
        ExperimentSpec::HawkesScale(p) => hawkes_scale(p, ctx),
        ExperimentSpec::MarkovApprox(p) => markov_approx(p, ctx),
        ExperimentSpec::KernelCheck(p) => kernel_check(p, ctx),
        ExperimentSpec::UniquenessProbe(p) => uniqueness_probe(p, ctx),
        ExperimentSpec::MartingaleCheck(p) => martingale_check(p, ctx),
    }
}

fn simulate_one(
    model: &Model,
    triplet: &Triplet,
    grid: &Grid,
    seed: SeedSpec,
    scheme: SchemeChoice,
    opts: &EngineOptions,
) -> Result<SolutionSample> {
    match scheme {
        SchemeChoice::Exact => pure_jump::simulate_exact(model, triplet, grid, seed, opts),
        SchemeChoice::Approximation { level } => {
            pure_jump::simulate_general(model, triplet, level, grid, seed, opts)
        }
        SchemeChoice::Euler => {
            simulate_euler_reference(model, &EulerCoefficients::from_triplet(triplet), grid, seed)
        }
        SchemeChoice::Factor => {
            simulate_factor_system(model, triplet, grid, seed, FactorDriver::Euler, opts)
                .map(|(s, _)| s)
        }
    }
}

fn simulate_batch(
    model: &Model,
    triplet: &Triplet,
    grid: &Grid,
    scheme: SchemeChoice,
    ctx: &Ctx,
) -> Result<Vec<SolutionSample>> {
    (0..ctx.replicates)
        .into_par_iter()
        .map(|r| simulate_one(model, triplet, grid, ctx.seed(r), scheme, &ctx.engine))
        .collect()
}

fn grid_index(grid: &Grid, t: f64) -> usize {
    ((t / grid.step()).round() as usize).min(grid.steps)
}

fn simulate(p: &SimulateParams, ctx: &mut Ctx) -> Result<()> {
    let model = model(&p.g0, &p.kernel)?;
    let grid = Grid::new(p.horizon, p.steps)?;
    let d = model.dims().0;
    for h in &p.hypotheses {
        let probes = default_probes(d, h.probe_radius, ctx.seed);
        let rep = check_growth(&p.triplet, h.condition, h.constant, &probes)?;
        let name = serde_json::to_value(h.condition)?
            .as_str()
            .unwrap_or_default()
            .replace('_', " ");
        ctx.hypothesis(
            name,
            rep.passed,
            format!(
                "max ratio {} against constant {} on {} probes",
                rep.max_ratio, h.constant, rep.probe_points
            ),
        );
    }
    if ctx.failed() {
        return Ok(());
    }
    let samples = simulate_batch(&model, &p.triplet, &grid, p.scheme, ctx)?;
    ctx.exploded = samples.iter().filter(|s| s.flags.exploded).count();
    ctx.result(
        "intensity_clamped",
        samples.iter().filter(|s| s.flags.intensity_clamped).count(),
    );

    let mut w = csv::Writer::from_writer(ctx.file("paths.csv")?);
    let mut header = vec!["replicate".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (r, s) in samples.iter().take(p.max_paths).enumerate() {
        for (m, row) in s.x.rows().enumerate() {
            let mut rec = vec![r.to_string(), grid.time(m).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let checkpoints = if p.checkpoints.is_empty() {
        vec![p.horizon]
    } else {
        p.checkpoints.clone()
    };
    let mut w = csv::Writer::from_writer(ctx.file("summary.csv")?);
    w.write_record(["checkpoint", "component", "mean", "std_error", "replicates"])?;
    for &t in &checkpoints {
        let m = grid_index(&grid, t);
        for c in 0..d {
            let v: Vec<f64> = samples
                .iter()
                .map(|s| s.x.at(m)[c])
                .filter(|v| v.is_finite())
                .collect();
            let (mean, se) = mean_and_se(&v);
            w.write_record([
                t.to_string(),
                (c + 1).to_string(),
                mean.to_string(),
                se.to_string(),
                v.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn hawkes_scale(p: &ScalingExperiment, ctx: &mut Ctx) -> Result<()> {
    let d = p.schedule.limit.len();
    let check = check_schedule(
        &p.intensity,
        &p.schedule,
        &dyadic_probes(d, p.probe_radius, 8),
    );
    let worst_growth = check
        .levels
        .iter()
        .flat_map(|l| l.growth_ratio.iter().copied())
        .fold(0.0, f64::max);
    let worst_conv = check
        .levels
        .iter()
        .flat_map(|l| l.convergence_error.iter().copied())
        .fold(0.0, f64::max);
    ctx.hypothesis(
        "rescaled intensity growth",
        check.growth_ok,
        format!(
            "largest ratio {worst_growth} against constants {:?}",
            p.schedule.growth_constants
        ),
    );
    ctx.hypothesis(
        "rescaled intensity convergence",
        check.convergence_nonincreasing,
        format!(
            "sup errors per level {:?}, largest {worst_conv}",
            check
                .levels
                .iter()
                .map(|l| l.convergence_error.clone())
                .collect::<Vec<_>>()
        ),
    );
    if ctx.failed() {
        return Ok(());
    }
    let report =
        scaling_limit_experiment(p, ctx.replicates, SeedSpec::new(ctx.seed, 0), &ctx.engine)?;
    report.write_csv(ctx.file("convergence.csv")?)?;
    let mut w = csv::Writer::from_writer(ctx.file("levels.csv")?);
    for l in &report.levels {
        w.serialize(l)?;
    }
    w.flush()?;
    ctx.exploded = report.levels.iter().map(|l| l.exploded).sum();
    ctx.result("strictly_decreasing", report.strictly_decreasing);
    ctx.result(
        "nonincreasing_within_bands",
        report.nonincreasing_within_bands,
    );
    ctx.result("reference", report.reference);
    Ok(())
}

fn markov_approx(p: &MarkovParams, ctx: &mut Ctx) -> Result<()> {
    let setup = ConvergenceSetup {
        target: p.target.clone(),
        g0: p.g0.clone(),
        coefficients: p.coefficients.clone(),
        levels: p.levels.clone(),
        grid: Grid::new(p.horizon, p.steps)?,
        checkpoints: p.checkpoints.clone(),
        p: p.p,
        eta: p.eta,
    };
    let report = factor_convergence_experiment(&setup, ctx.replicates, SeedSpec::new(ctx.seed, 0))?;
    let cert = &report.target_certificate;
    ctx.hypothesis(
        "kernel regularity",
        cert.is_finite(),
        format!(
            "target certificate: singular integral {}, double integral {}",
            cert.value_singular_integral, cert.value_slobodeckij_integral
        ),
    );
    report.write_csv(ctx.file("factor_convergence.csv")?)?;
    ctx.exploded =
        report.reference_exploded + report.levels.iter().map(|l| l.exploded).sum::<usize>();
    ctx.result(
        "kernel_error_strictly_decreasing",
        report.kernel_error_strictly_decreasing,
    );
    ctx.result("path_gap_decreasing", report.path_gap_decreasing);
    let skipped: Vec<Value> = report
        .levels
        .iter()
        .filter_map(|l| {
            l.skipped
                .as_ref()
                .map(|s| json!({"level": l.level, "reason": s}))
        })
        .collect();
    ctx.result("skipped_levels", skipped);
    Ok(())
}

fn kernel_check(p: &KernelCheckParams, ctx: &mut Ctx) -> Result<()> {
    let cert = match p.method {
        Some(m) => certificate_with(&p.kernel, p.p, p.eta, p.horizon, m)?,
        None => slobodeckij_certificate(&p.kernel, p.p, p.eta, p.horizon)?,
    };
    ctx.hypothesis(
        "kernel regularity",
        cert.is_finite(),
        cert.diagnostic
            .clone()
            .unwrap_or_else(|| "both integrals finite".into()),
    );
    let mut w = csv::Writer::from_writer(ctx.file("certificate.csv")?);
    w.write_record([
        "p",
        "eta",
        "horizon",
        "singular_integral",
        "slobodeckij_integral",
        "c_k_bound",
        "method",
        "quadrature_error_estimate",
    ])?;
    w.write_record([
        cert.p.to_string(),
        cert.eta.to_string(),
        cert.horizon.to_string(),
        cert.value_singular_integral.to_string(),
        cert.value_slobodeckij_integral.to_string(),
        cert.c_k_bound.to_string(),
        serde_json::to_value(cert.method)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        cert.quadrature_error_estimate.to_string(),
    ])?;
    w.flush()?;
    ctx.result("certificate", &cert);
    Ok(())
}

fn uniqueness_probe(p: &UniquenessParams, ctx: &mut Ctx) -> Result<()> {
    let base = model(&p.g0, &p.kernel)?;
    let grid = Grid::new(p.horizon, p.steps)?;
    let d = base.dims().0;
    if let Some(l) = p.lipschitz {
        let probes = default_probes(d, p.probe_radius, ctx.seed);
        let rep = check_lipschitz(
            &EulerLipschitz {
                coeffs: &p.coefficients,
                d,
            },
            l * l,
            &probes,
        )?;
        ctx.hypothesis(
            "lipschitz",
            rep.passed,
            format!(
                "max ratio {} against L^2 = {} on {} probes",
                rep.max_ratio,
                l * l,
                rep.probe_points
            ),
        );
        if ctx.failed() {
            return Ok(());
        }
    }
    let other = p
        .perturbed_g0
        .as_ref()
        .map(|g| model(g, &p.kernel))
        .transpose()?;
    let rows = (0..ctx.replicates)
        .into_par_iter()
        .map(|r| {
            let s = ctx.seed(r);
            let same =
                pathwise_uniqueness_probe(&base, &base, &p.coefficients, &grid, s, s, p.lipschitz)?;
            let pert = other
                .as_ref()
                .map(|o| {
                    pathwise_uniqueness_probe(&base, o, &p.coefficients, &grid, s, s, p.lipschitz)
                })
                .transpose()?;
            Ok((same, pert))
        })
        .collect::<Result<Vec<_>>>()?;

    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut w = csv::Writer::from_writer(ctx.file("uniqueness.csv")?);
    w.write_record([
        "replicate",
        "comparison",
        "l2_distance",
        "sup_distance",
        "sup_bound",
        "l2_bound",
    ])?;
    for (r, (same, pert)) in rows.iter().enumerate() {
        for (name, rep) in [("identical", Some(same)), ("perturbed", pert.as_ref())] {
            if let Some(rep) = rep {
                w.write_record([
                    r.to_string(),
                    name.to_string(),
                    rep.l2_distance.to_string(),
                    rep.sup_distance.to_string(),
                    opt(rep.sup_bound),
                    opt(rep.l2_bound),
                ])?;
            }
        }
    }
    w.flush()?;
    let max_identical = rows.iter().map(|(s, _)| s.l2_distance).fold(0.0, f64::max);
    let within: Vec<Option<bool>> = rows
        .iter()
        .filter_map(|(_, p)| p.as_ref().map(|p| p.within_bound()))
        .collect();
    ctx.result("max_identical_l2_distance", max_identical);
    ctx.result(
        "perturbed_within_bound",
        if within.is_empty() || within.iter().any(Option::is_none) {
            Value::Null
        } else {
            Value::Bool(within.iter().all(|w| *w == Some(true)))
        },
    );
    Ok(())
}

fn martingale_check(p: &MartingaleParams, ctx: &mut Ctx) -> Result<()> {
    let model = model(&p.g0, &p.kernel)?;
    let grid = Grid::new(p.horizon, p.steps)?;
    let samples = simulate_batch(&model, &p.triplet, &grid, p.scheme, ctx)?;
    ctx.exploded = samples.iter().filter(|s| s.flags.exploded).count();
    let mut w = csv::Writer::from_writer(ctx.file("martingale.csv")?);
    w.write_record([
        "function",
        "from",
        "to",
        "mean",
        "std_error",
        "replicates",
        "within",
    ])?;
    let mut all = true;
    for (i, f) in p.test_functions.iter().enumerate() {
        for s in martingale_residuals(&model, &p.triplet, &samples, f, &p.checkpoints)? {
            let ok = s.within(p.sigmas);
            all &= ok;
            w.write_record([
                (i + 1).to_string(),
                s.from.to_string(),
                s.to.to_string(),
                s.mean.to_string(),
                s.std_error.to_string(),
                s.replicates.to_string(),
                ok.to_string(),
            ])?;
        }
    }
    w.flush()?;
    ctx.result("all_within", all);
    Ok(())
}
