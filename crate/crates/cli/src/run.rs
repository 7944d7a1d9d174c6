//! Executes a validated run plan and writes its artifacts.

use crate::config::{
    BoxDef, ConstraintDef, CurvePlan, GenericModel, GravityDef, ParseError, Plan, PlanetParams, PotentialDef,
    RunConfig, SamplerKind, Scheme,
};
use crate::output::{Cell, Sink, Table};
use rsde_core::compat::{check_compatibility, Bounds, CompatOptions, RayBisectionSampler, Verdict};
use rsde_core::geometry::shapes::{Affine, Ball};
use rsde_core::geometry::ConstraintSet;
use rsde_core::gibbs::{
    sample_mcmc, sample_rejection, GibbsSpec, LinearPotential, McmcOptions, Potential, QuadraticPotential,
    RejectionOptions, ZeroPotential,
};
use rsde_core::linalg::Matrix;
use rsde_core::planet::{self, CurveOptions, EquilibriumSampler, GravityLaw, PlanetModel};
use rsde_core::sde::{
    reversibility_test, simulate_ensemble, BoundaryScheme, DynamicsSpec, PathRecord, ReversibilityOptions,
    RotationalDrift, SumDrift, TestVerdict,
};
use rsde_core::Error;
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_STATISTICAL: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("model invalid: {0}")]
    Model(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("statistical test failed: {0}")]
    Statistical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Parse(_) => EXIT_PARSE,
            RunError::Model(_) => EXIT_MODEL,
            RunError::Numerical(_) => EXIT_NUMERICAL,
            RunError::Statistical(_) => EXIT_STATISTICAL,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::StepFailure { .. }
            | Error::NonFinite { .. }
            | Error::NoFeasiblePoint { .. }
            | Error::AcceptanceTooLow { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Model(e.to_string()),
        }
    }
}

/// Runs the plan. Artifacts are written before any failing verdict is
/// returned, so a refuted or failed run still leaves its evidence on disk.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let started = Instant::now();
    let mut sink = Sink::new(config, started)?;
    let seed = config.seed;
    match &config.plan {
        Plan::CheckCompat {
            model,
            samples,
            act_tol,
            refute_tol,
        } => {
            let set = build_set(model)?;
            let bounds = required_bounds(model)?;
            let mut opts = CompatOptions {
                seed,
                hessian_box: Some(bounds.clone()),
                ..Default::default()
            };
            if let Some(t) = act_tol {
                opts.act_tol = *t;
            }
            if let Some(t) = refute_tol {
                opts.refute_tol = *t;
            }
            let report = check_compatibility(&set, &RayBisectionSampler::new(bounds), *samples, &opts);
            sink.report("compat", &report)?;
            match report.verdict {
                Verdict::CertifiedAtSamples => {}
                Verdict::Refuted => {
                    return Err(RunError::Model(format!(
                        "compatibility refuted: beta0 {} at worst point {:?} (active {:?})",
                        report.beta0_estimate, report.worst_point, report.worst_active
                    )))
                }
                Verdict::DegenerateInput => {
                    return Err(RunError::Model(format!(
                        "degenerate input after {} samples: {}",
                        report.samples_checked,
                        report.notes.join("; ")
                    )))
                }
            }
        }
        Plan::Simulate {
            model,
            horizon,
            dt,
            x0,
            paths,
            record_every,
        } => {
            let spec = build_dynamics(model)?;
            if x0.len() != model.dim {
                return Err(RunError::Model(format!("x0 has {} coordinates, the model {}", x0.len(), model.dim)));
            }
            let starts = vec![x0.clone(); *paths];
            let results = simulate_ensemble(&spec, &starts, *horizon, *dt, seed, 0, *record_every);
            let mut table = path_table(model.dim, &spec.set.ids().map(String::from).collect::<Vec<_>>());
            let mut summaries = Vec::new();
            let mut failure = None;
            for r in results {
                let (rec, error) = match r {
                    Ok(rec) => (rec, None),
                    Err(f) => (f.partial, Some(f.error)),
                };
                add_path_rows(&mut table, &rec, &rec.local_times);
                summaries.push(PathSummary {
                    path: rec.path,
                    steps_recorded: rec.states.len(),
                    diagnostics: rec.diagnostics.clone(),
                    error: error.as_ref().map(|e| e.to_string()),
                });
                if failure.is_none() {
                    failure = error;
                }
            }
            sink.table("paths", &table)?;
            sink.report("simulate", &summaries)?;
            if let Some(e) = failure {
                return Err(e.into());
            }
        }
        Plan::SampleGibbs {
            model,
            n,
            sampler,
            proposal_scale,
            thin,
            chains,
            burn_in,
        } => {
            let gibbs = build_gibbs(model)?;
            let (samples, report) = match sampler {
                SamplerKind::Rejection => {
                    if model.bounds.is_none() {
                        return Err(RunError::Model("the rejection sampler needs `bounds` in [model]".into()));
                    }
                    let r = sample_rejection(&gibbs, *n, &RejectionOptions::new(seed))?;
                    let report = SamplerSummary {
                        sampler: *sampler,
                        n: r.samples.len(),
                        acceptance_rate: r.acceptance_rate,
                        burn_in: None,
                        pilot_iat: None,
                    };
                    (r.samples, report)
                }
                SamplerKind::Mcmc => {
                    let mut o = McmcOptions::new(*n, proposal_scale.unwrap_or(0.1), seed);
                    o.thin = *thin;
                    o.chains = *chains;
                    o.burn_in = *burn_in;
                    let r = sample_mcmc(&gibbs, &o)?;
                    let report = SamplerSummary {
                        sampler: *sampler,
                        n: r.samples.len(),
                        acceptance_rate: r.acceptance_rate,
                        burn_in: Some(r.burn_in),
                        pilot_iat: r.pilot_iat,
                    };
                    (r.samples, report)
                }
            };
            let mut header = vec!["index".to_string()];
            header.extend((0..model.dim).map(|k| format!("x_{k}")));
            let mut table = Table::new(header);
            for (i, s) in samples.iter().enumerate() {
                let mut row = vec![Cell::Int(i as u64)];
                row.extend(s.iter().map(|&v| Cell::Float(v)));
                table.push(row);
            }
            sink.table("samples", &table)?;
            sink.report("sample-gibbs", &report)?;
        }
        Plan::Reversibility {
            model,
            paths,
            horizon,
            dt,
            alpha,
            bins,
            axes,
            min_paths,
        } => {
            let spec = build_dynamics(model)?;
            let gibbs = build_gibbs(model)?;
            if axes.iter().any(|&a| a >= model.dim) {
                return Err(RunError::Model(format!("axes {axes:?} out of range for dimension {}", model.dim)));
            }
            let mut o = ReversibilityOptions::new(*paths, *horizon, *dt, seed);
            o.alpha = *alpha;
            o.bins_per_axis = *bins;
            o.axes = (axes[0], axes[1]);
            o.min_paths = *min_paths;
            let report = reversibility_test(&spec, &gibbs, &o)?;
            sink.report("reversibility", &report)?;
            match report.verdict {
                TestVerdict::Pass => {}
                TestVerdict::Fail => {
                    return Err(RunError::Statistical(format!(
                        "swap symmetry p = {}, stationarity p = {} at alpha {}",
                        report.symmetry.p_value, report.stationarity.p_value, report.alpha
                    )))
                }
                TestVerdict::Inconclusive => {
                    return Err(RunError::Numerical(format!(
                        "inconclusive: {} of {} paths failed",
                        report.failed_paths, report.n_paths
                    )))
                }
            }
        }
        Plan::PlanetSimulate {
            planet,
            horizon,
            dt,
            x0,
            record_every,
        } => {
            let model = build_planet(planet)?;
            let spec = planet::build_dynamics(&model)?;
            let x0 = x0.clone().unwrap_or_else(|| model.spread_configuration());
            if x0.len() != model.dim() {
                return Err(RunError::Model(format!("x0 has {} coordinates, the model {}", x0.len(), model.dim())));
            }
            let (rec, error) = match simulate_ensemble(&spec, &[x0], *horizon, *dt, seed, 0, 1).remove(0) {
                Ok(rec) => (rec, None),
                Err(f) => (f.partial, Some(f.error)),
            };
            let every = *record_every;
            let keep = |k: usize| k.is_multiple_of(every) || k + 1 == rec.states.len();
            let mut thinned = rec.clone();
            thinned.times = rec.times.iter().enumerate().filter(|(k, _)| keep(*k)).map(|(_, t)| *t).collect();
            thinned.states = rec.states.iter().enumerate().filter(|(k, _)| keep(*k)).map(|(_, s)| s.clone()).collect();
            thinned.local_times =
                rec.local_times.iter().enumerate().filter(|(k, _)| keep(*k)).map(|(_, s)| s.clone()).collect();
            let mut table = path_table(model.dim(), &rec.ids);
            add_path_rows(&mut table, &thinned, &thinned.local_times);
            sink.table("paths", &table)?;

            let phys = planet::rescale_local_times(&rec, &model)?;
            let mut header = vec!["t".to_string()];
            let mut columns: Vec<&Vec<f64>> = Vec::new();
            for i in 0..model.n {
                header.push(format!("planet_{}", i + 1));
                columns.push(&phys.planet[i]);
                header.push(format!("upper_{}", i + 1));
                columns.push(&phys.upper[i]);
                header.push(format!("lower_{}", i + 1));
                columns.push(&phys.lower[i]);
            }
            for ((i, j), v) in &phys.pair {
                header.push(format!("pair_{i}_{j}"));
                columns.push(v);
            }
            let mut lt = Table::new(header);
            for (k, t) in phys.times.iter().enumerate().filter(|(k, _)| keep(*k)) {
                let mut row = vec![Cell::Float(*t)];
                row.extend(columns.iter().map(|c| Cell::Float(c[k])));
                lt.push(row);
            }
            sink.table("local-times", &lt)?;
            let summary = PathSummary {
                path: rec.path,
                steps_recorded: thinned.states.len(),
                diagnostics: rec.diagnostics.clone(),
                error: error.as_ref().map(|e| e.to_string()),
            };
            sink.report("planet-simulate", &summary)?;
            if let Some(e) = error {
                return Err(e.into());
            }
        }
        Plan::PlanetClusteringCurve { planet, curve } => {
            let model = build_planet(planet)?;
            let opts = curve_options(curve, seed, config.override_integrability);
            let points = planet::clustering_curve(&model, &curve.taus, curve.eps, curve.samples, &opts)?;
            sink.table("curve", &curve_table(&points))?;
            if let Some(hw) = curve.control_half_width {
                let control =
                    planet::clustering_control(&model, hw, &curve.taus, curve.eps, curve.samples, seed)?;
                sink.table("control", &curve_table(&control))?;
            }
        }
        Plan::PlanetCheckModel { planet, samples, eta } => {
            let model = build_planet(planet)?;
            let report = planet::check_model(&model, *samples, seed, *eta)?;
            sink.report("check-model", &report)?;
            let failed: Vec<&str> = report.hypotheses.iter().filter(|h| !h.holds).map(|h| h.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(RunError::Model(format!("hypotheses fail: {}", failed.join(", "))));
            }
            if report.compat.verdict == Verdict::Refuted {
                return Err(RunError::Model(format!(
                    "compatibility refuted at worst point {:?}",
                    report.compat.worst_point
                )));
            }
            if report.cone_failures > 0 {
                return Err(RunError::Model(format!("{} cone inequality failures", report.cone_failures)));
            }
        }
    }
    Ok(sink.written)
}

#[derive(Serialize)]
struct PathSummary {
    path: u64,
    steps_recorded: usize,
    diagnostics: rsde_core::sde::PathDiagnostics,
    error: Option<String>,
}

#[derive(Serialize)]
struct SamplerSummary {
    sampler: SamplerKind,
    n: usize,
    acceptance_rate: f64,
    burn_in: Option<usize>,
    pilot_iat: Option<f64>,
}

fn path_table(dim: usize, ids: &[String]) -> Table {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((0..dim).map(|k| format!("x_{k}")));
    header.extend(ids.iter().map(|id| format!("L_{id}")));
    Table::new(header)
}

fn add_path_rows(table: &mut Table, rec: &PathRecord<f64>, local_times: &[Vec<f64>]) {
    for ((t, x), l) in rec.times.iter().zip(&rec.states).zip(local_times) {
        let mut row = vec![Cell::Int(rec.path), Cell::Float(*t)];
        row.extend(x.iter().map(|&v| Cell::Float(v)));
        row.extend(l.iter().map(|&v| Cell::Float(v)));
        table.push(row);
    }
}

pub fn curve_table(points: &[planet::CurvePoint]) -> Table {
    let mut t = Table::new(["tau", "estimate", "ci_low", "ci_high", "n_samples"].map(String::from).to_vec());
    for p in points {
        t.push(vec![
            Cell::Float(p.tau),
            Cell::Float(p.estimate),
            Cell::Float(p.ci_low),
            Cell::Float(p.ci_high),
            Cell::Int(p.n_samples as u64),
        ]);
    }
    t
}

fn curve_options(curve: &CurvePlan, seed: u64, override_integrability: bool) -> CurveOptions {
    let mut o = CurveOptions::new(seed);
    o.eta = curve.eta;
    o.level = curve.level;
    o.override_integrability = override_integrability;
    o.sampler = match curve.sampler {
        SamplerKind::Rejection => EquilibriumSampler::Rejection,
        SamplerKind::Mcmc => EquilibriumSampler::Mcmc {
            thin: curve.thin,
            chains: curve.chains,
        },
    };
    o
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), RunError> {
    if got != want {
        return Err(RunError::Model(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

fn build_set(model: &GenericModel) -> Result<ConstraintSet<f64>, RunError> {
    let dim = model.dim;
    let mut set = ConstraintSet::new(dim);
    for c in &model.constraints {
        set = match c {
            ConstraintDef::Affine { id, normal, offset } => {
                check_len(&format!("normal of `{id}`"), normal.len(), dim)?;
                set.with(id.clone(), Affine::new(normal.clone(), *offset))?
            }
            ConstraintDef::BallInside { id, center, radius, axes } | ConstraintDef::BallOutside { id, center, radius, axes } => {
                let axes = axes.clone().unwrap_or_else(|| (0..dim).collect());
                if let Some(a) = axes.iter().find(|&&a| a >= dim) {
                    return Err(RunError::Model(format!("axis {a} of `{id}` out of range")));
                }
                check_len(&format!("center of `{id}`"), center.len(), axes.len())?;
                if !(*radius > 0.0) {
                    return Err(RunError::Model(format!("radius of `{id}` must be positive")));
                }
                let ball = if matches!(c, ConstraintDef::BallInside { .. }) {
                    Ball::inside(center.clone(), *radius, axes)
                } else {
                    Ball::outside(center.clone(), *radius, axes)
                };
                set.with(id.clone(), ball)?
            }
        };
    }
    Ok(set)
}

fn build_potential(model: &GenericModel) -> Result<Arc<dyn Potential<f64>>, RunError> {
    Ok(match &model.potential {
        PotentialDef::Zero => Arc::new(ZeroPotential),
        PotentialDef::Linear { coeffs } => {
            check_len("potential coeffs", coeffs.len(), model.dim)?;
            Arc::new(LinearPotential { coeffs: coeffs.clone() })
        }
        PotentialDef::Quadratic { stiffness, center } => {
            check_len("potential center", center.len(), model.dim)?;
            Arc::new(QuadraticPotential {
                stiffness: *stiffness,
                center: center.clone(),
            })
        }
    })
}

fn build_bounds(b: &BoxDef, dim: usize) -> Result<Bounds<f64>, RunError> {
    check_len("bounds.lower", b.lower.len(), dim)?;
    check_len("bounds.upper", b.upper.len(), dim)?;
    Ok(Bounds::new(b.lower.clone(), b.upper.clone())?)
}

fn required_bounds(model: &GenericModel) -> Result<Bounds<f64>, RunError> {
    let b = model
        .bounds
        .as_ref()
        .ok_or_else(|| RunError::Model("this command needs `bounds` in [model]".into()))?;
    build_bounds(b, model.dim)
}

/// Smallest value of Φ over the box.
fn phi_min(potential: &PotentialDef, b: &Bounds<f64>) -> f64 {
    match potential {
        PotentialDef::Zero => 0.0,
        PotentialDef::Linear { coeffs } => coeffs
            .iter()
            .zip(b.lower.iter().zip(&b.upper))
            .map(|(&c, (&l, &u))| (c * l).min(c * u))
            .sum(),
        PotentialDef::Quadratic { stiffness, center } => {
            let per_axis = center.iter().zip(b.lower.iter().zip(&b.upper));
            let d2: f64 = if *stiffness >= 0.0 {
                per_axis.map(|(&c, (&l, &u))| (c.clamp(l, u) - c).powi(2)).sum()
            } else {
                per_axis.map(|(&c, (&l, &u))| (l - c).powi(2).max((u - c).powi(2))).sum()
            };
            stiffness * d2
        }
    }
}

fn build_gibbs(model: &GenericModel) -> Result<GibbsSpec<f64>, RunError> {
    let set = build_set(model)?;
    let phi = build_potential(model)?;
    let mut g = GibbsSpec::new(set, phi);
    if let Some(b) = &model.bounds {
        let bounds = build_bounds(b, model.dim)?;
        let m = phi_min(&model.potential, &bounds);
        g = g.with_box(bounds, m);
    }
    Ok(g)
}

fn build_dynamics(model: &GenericModel) -> Result<DynamicsSpec<f64>, RunError> {
    let set = build_set(model)?;
    let phi = build_potential(model)?;
    let theta = match &model.theta {
        Some(rows) => {
            check_len("theta", rows.len(), model.dim)?;
            for r in rows {
                check_len("theta row", r.len(), model.dim)?;
            }
            Matrix::from_rows(rows)?
        }
        None => Matrix::identity(model.dim),
    };
    let mut spec = DynamicsSpec::gibbs(set, theta, phi)?.with_scheme(match model.scheme {
        Scheme::Projection => BoundaryScheme::Projection,
        Scheme::Bridge => BoundaryScheme::Bridge,
    });
    if let Some(r) = &model.rotation {
        check_len("rotation center", r.center.len(), model.dim)?;
        if r.axes.iter().any(|&a| a >= model.dim) || r.axes[0] == r.axes[1] {
            return Err(RunError::Model(format!("invalid rotation axes {:?}", r.axes)));
        }
        let rotation = Arc::new(RotationalDrift {
            center: r.center.clone(),
            axes: (r.axes[0], r.axes[1]),
            rate: r.rate,
        });
        spec.drift = Arc::new(SumDrift(vec![spec.drift.clone(), rotation]));
    }
    Ok(spec)
}

fn build_planet(p: &PlanetParams) -> Result<PlanetModel<f64>, RunError> {
    let gravity = match p.gravity {
        GravityDef::Log { c } => GravityLaw::Log { c },
        GravityDef::Zero => GravityLaw::Zero,
    };
    let model = PlanetModel::new(p.n, p.d, p.radius, p.r_minus, p.r_plus)
        .with_temperature(p.temperature)
        .with_elasticity(p.elasticity)
        .with_gravity(gravity);
    model.validate()?;
    Ok(model)
}
