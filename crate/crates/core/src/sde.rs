//! Reflected SDE
//!
//! dX = σ(X) dW + b(X) dt + Σ_f ΘΘᵀ∇f(X) dL_f
//!
//! discretized as an Euler–Maruyama prediction followed by a projected
//! Gauss–Seidel correction along the oblique directions ΘΘᵀ∇f. The
//! multiplier of each constraint is its local-time increment.

use crate::compat::transform_set;
use crate::error::{Error, Result};
use crate::geometry::ConstraintSet;
use crate::gibbs::{sample_mcmc, sample_rejection, GibbsSpec, McmcOptions, Potential, RejectionOptions};
use crate::linalg::{axpy, dist, dot, Matrix};
use crate::rng::{CounterRng, NoiseSource};
use crate::scalar::Scalar;
use crate::stats::{bowker, homogeneity, quantile, TestResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

pub trait VectorField<S: Scalar>: Send + Sync + Debug {
    fn eval(&self, x: &[S], out: &mut [S]);
}

pub trait MatrixField<S: Scalar>: Send + Sync + Debug {
    fn eval(&self, x: &[S]) -> Matrix<S>;
}

#[derive(Clone, Debug)]
pub enum Diffusion<S: Scalar> {
    Constant(Matrix<S>),
    Field(Arc<dyn MatrixField<S>>),
}

impl<S: Scalar> Diffusion<S> {
    fn at(&self, x: &[S]) -> std::borrow::Cow<'_, Matrix<S>> {
        match self {
            Diffusion::Constant(m) => std::borrow::Cow::Borrowed(m),
            Diffusion::Field(f) => std::borrow::Cow::Owned(f.eval(x)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDrift;

impl<S: Scalar> VectorField<S> for ZeroDrift {
    fn eval(&self, _: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
}

#[derive(Clone, Debug)]
pub struct ConstantDrift<S>(pub Vec<S>);

impl<S: Scalar> VectorField<S> for ConstantDrift<S> {
    fn eval(&self, _: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.0);
    }
}

/// b = −½ M ∇Φ; with M = ΘΘᵀ this is the drift of Theorem 2.
#[derive(Clone, Debug)]
pub struct GradientDrift<S: Scalar> {
    pub potential: Arc<dyn Potential<S>>,
    pub metric: Matrix<S>,
}

impl<S: Scalar> VectorField<S> for GradientDrift<S> {
    fn eval(&self, x: &[S], out: &mut [S]) {
        let mut g = vec![S::zero(); x.len()];
        self.potential.gradient(x, &mut g);
        self.metric.mul_vec(&g, out);
        out.iter_mut().for_each(|o| *o *= -S::half());
    }
}

/// Divergence-free rotation about `center` in the plane of `axes`.
#[derive(Clone, Debug)]
pub struct RotationalDrift<S> {
    pub center: Vec<S>,
    pub axes: (usize, usize),
    pub rate: S,
}

impl<S: Scalar> VectorField<S> for RotationalDrift<S> {
    fn eval(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        let (i, j) = self.axes;
        out[i] = -self.rate * (x[j] - self.center[j]);
        out[j] = self.rate * (x[i] - self.center[i]);
    }
}

#[derive(Clone, Debug)]
pub struct SumDrift<S: Scalar>(pub Vec<Arc<dyn VectorField<S>>>);

impl<S: Scalar> VectorField<S> for SumDrift<S> {
    fn eval(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        let mut tmp = vec![S::zero(); x.len()];
        for f in &self.0 {
            f.eval(x, &mut tmp);
            axpy(S::one(), &tmp, out);
        }
    }
}

#[derive(Clone)]
pub struct FnDrift<S: Scalar>(pub Arc<dyn Fn(&[S], &mut [S]) + Send + Sync>);

impl<S: Scalar> Debug for FnDrift<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnDrift")
    }
}

impl<S: Scalar> VectorField<S> for FnDrift<S> {
    fn eval(&self, x: &[S], out: &mut [S]) {
        (self.0)(x, out)
    }
}

/// y ↦ Θ⁻¹ b(Θy)
#[derive(Clone, Debug)]
pub struct TransformedDrift<S: Scalar> {
    pub inner: Arc<dyn VectorField<S>>,
    pub theta: Matrix<S>,
    pub theta_inv: Matrix<S>,
}

impl<S: Scalar> VectorField<S> for TransformedDrift<S> {
    fn eval(&self, y: &[S], out: &mut [S]) {
        let x = self.theta.apply(y);
        let mut b = vec![S::zero(); y.len()];
        self.inner.eval(&x, &mut b);
        self.theta_inv.mul_vec(&b, out);
    }
}

/// y ↦ Θ⁻¹ σ(Θy)
#[derive(Clone, Debug)]
pub struct TransformedDiffusion<S: Scalar> {
    pub inner: Arc<dyn MatrixField<S>>,
    pub theta: Matrix<S>,
    pub theta_inv: Matrix<S>,
}

impl<S: Scalar> MatrixField<S> for TransformedDiffusion<S> {
    fn eval(&self, y: &[S]) -> Matrix<S> {
        self.theta_inv.matmul(&self.inner.eval(&self.theta.apply(y)))
    }
}

/// How boundary interaction within a step is detected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryScheme {
    /// Correct only what is violated at the end of the step.
    #[default]
    Projection,
    /// Also account for excursions below zero inside the step: each
    /// constraint's linearized value is treated as a Brownian bridge and its
    /// sampled minimum sets the reflection target.
    Bridge,
}

#[derive(Clone, Debug)]
pub struct DynamicsSpec<S: Scalar> {
    pub set: ConstraintSet<S>,
    pub sigma: Diffusion<S>,
    pub drift: Arc<dyn VectorField<S>>,
    pub lipschitz_note: Option<String>,
    pub scheme: BoundaryScheme,
    pub max_sweeps: usize,
    /// Relative to each constraint's scale.
    pub feas_tol: S,
    pub act_tol: S,
}

impl<S: Scalar> DynamicsSpec<S> {
    pub fn new(set: ConstraintSet<S>, sigma: Diffusion<S>, drift: Arc<dyn VectorField<S>>) -> Result<Self> {
        if let Diffusion::Constant(m) = &sigma {
            if m.dim() != set.dim() {
                return Err(Error::DimensionMismatch {
                    expected: set.dim(),
                    got: m.dim(),
                });
            }
        }
        Ok(Self {
            set,
            sigma,
            drift,
            lipschitz_note: None,
            scheme: BoundaryScheme::Projection,
            max_sweeps: 50,
            feas_tol: S::feas_tol(),
            act_tol: S::act_tol(),
        })
    }

    /// Constant diffusion Θ and drift −½ΘΘᵀ∇Φ, reflecting along ΘΘᵀ∇f.
    pub fn gibbs(set: ConstraintSet<S>, theta: Matrix<S>, potential: Arc<dyn Potential<S>>) -> Result<Self> {
        let set = set.with_obliquity(theta.clone())?;
        let metric = set.obliquity().metric().clone();
        Self::new(
            set,
            Diffusion::Constant(theta),
            Arc::new(GradientDrift { potential, metric }),
        )
    }

    pub fn with_scheme(mut self, scheme: BoundaryScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// x + σ(x)√dt·noise + b(x)dt
    pub fn predict(&self, x: &[S], dt: S, noise: &[S]) -> Vec<S> {
        let d = x.len();
        let sig = self.sigma.at(x);
        let mut y = vec![S::zero(); d];
        sig.mul_vec(noise, &mut y);
        let sq = dt.sqrt();
        let mut b = vec![S::zero(); d];
        self.drift.eval(x, &mut b);
        for i in 0..d {
            y[i] = x[i] + sq * y[i] + dt * b[i];
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<S> {
    pub x: Vec<S>,
    /// Multiplier per constraint, declaration order.
    pub dl: Vec<S>,
    pub sweeps: usize,
}

impl<S: Scalar> StepOutcome<S> {
    pub fn dl_by_id(&self, set: &ConstraintSet<S>) -> std::collections::BTreeMap<String, S> {
        set.ids().map(String::from).zip(self.dl.iter().copied()).collect()
    }
}

/// Projected Gauss–Seidel onto {f ≥ target_f}. `targets` lists the
/// constraints with a positive target, sorted by index.
fn correct<S: Scalar>(spec: &DynamicsSpec<S>, x: &[S], y: Vec<S>, targets: &[(usize, S)]) -> Result<StepOutcome<S>> {
    let set = &spec.set;
    let entries = set.entries();
    let dim = set.dim();
    let pruned = set.pruner().is_some();
    let target = |i: usize| -> S {
        targets
            .binary_search_by_key(&i, |t| t.0)
            .map_or(S::zero(), |k| targets[k].1)
    };
    let mut reach = dist(x, &y) + S::c(1e-12);
    let mut g = vec![S::zero(); dim];
    let mut dir = vec![S::zero(); dim];

    loop {
        let cand: Vec<usize> = if pruned {
            let mut c = set.candidates(&y, reach);
            for &(i, _) in targets {
                if let Err(p) = c.binary_search(&i) {
                    c.insert(p, i);
                }
            }
            c
        } else {
            (0..entries.len()).collect()
        };
        let tol: Vec<S> = cand.iter().map(|&i| spec.feas_tol * entries[i].f.scale()).collect();
        let tgt: Vec<S> = cand.iter().map(|&i| target(i)).collect();
        let mut lambda = vec![S::zero(); cand.len()];
        let mut xi = y.clone();
        let mut max_disp = S::zero();
        let mut converged = false;
        let mut sweeps = 0;
        let mut gap = vec![S::zero(); cand.len()];

        while sweeps <= spec.max_sweeps {
            for (k, &i) in cand.iter().enumerate() {
                gap[k] = entries[i].f.value(&xi) - tgt[k];
            }
            let done = (0..cand.len())
                .all(|k| gap[k] >= -tol[k] && (lambda[k] == S::zero() || gap[k] <= tol[k]));
            if done {
                converged = true;
                break;
            }
            if sweeps == spec.max_sweeps {
                break;
            }
            sweeps += 1;
            let mut order: Vec<usize> = (0..cand.len())
                .filter(|&k| gap[k] < S::zero() || lambda[k] > S::zero())
                .collect();
            order.sort_by(|&a, &b| {
                let da = gap[a] / entries[cand[a]].f.scale();
                let db = gap[b] / entries[cand[b]].f.scale();
                da.partial_cmp(&db)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| entries[cand[a]].id.cmp(&entries[cand[b]].id))
            });
            for k in order {
                let f = &entries[cand[k]].f;
                let v = f.value(&xi) - tgt[k];
                f.gradient(&xi, &mut g);
                set.obliquity().reflect_direction(&g, &mut dir);
                let denom = dot(&g, &dir);
                if !(denom > S::zero()) {
                    return Err(Error::DegenerateGradient {
                        constraint: entries[cand[k]].id.clone(),
                        norm: dot(&g, &g).sqrt().f64(),
                        floor: f.grad_floor().f64(),
                    });
                }
                let next = (lambda[k] - v / denom).max(S::zero());
                let delta = next - lambda[k];
                if delta != S::zero() {
                    axpy(delta, &dir, &mut xi);
                    lambda[k] = next;
                    if pruned {
                        max_disp = max_disp.max(dist(&xi, &y));
                    }
                }
            }
        }

        if pruned && max_disp >= reach {
            reach = max_disp * S::two();
            continue;
        }
        if !converged {
            let (k, worst) = gap
                .iter()
                .enumerate()
                .map(|(k, &v)| (k, v / entries[cand[k]].f.scale()))
                .fold((0, S::infinity()), |b, c| if c.1 < b.1 { c } else { b });
            return Err(Error::StepFailure {
                constraint: entries[cand[k]].id.clone(),
                violation: worst.f64(),
                sweeps,
            });
        }
        let mut dl = vec![S::zero(); entries.len()];
        for (k, &i) in cand.iter().enumerate() {
            dl[i] = lambda[k];
        }
        return Ok(StepOutcome { x: xi, dl, sweeps });
    }
}

/// One projection step: predict, then correct what the prediction violates.
pub fn step<S: Scalar>(spec: &DynamicsSpec<S>, x: &[S], dt: S, noise: &[S]) -> Result<StepOutcome<S>> {
    spec.set.check_point(x)?;
    let y = spec.predict(x, dt, noise);
    correct(spec, x, y, &[])
}

/// Reflection targets from the sampled bridge minimum of each constraint.
/// `uniform(i)` must be uniform on (0, 1].
fn bridge_targets<S: Scalar>(
    spec: &DynamicsSpec<S>,
    x: &[S],
    y: &[S],
    dt: S,
    uniform: &dyn Fn(usize) -> f64,
) -> Vec<(usize, S)> {
    let dim = x.len();
    let sig = spec.sigma.at(x);
    let mut g = vec![S::zero(); dim];
    let mut sg = vec![S::zero(); dim];
    let mut out = Vec::new();
    for (i, e) in spec.set.entries().iter().enumerate() {
        let a = e.f.value(x);
        let b = e.f.value(y);
        e.f.gradient(x, &mut g);
        sig.tr_mul_vec(&g, &mut sg);
        let v = dot(&sg, &sg);
        let ln_u = S::c(uniform(i).ln());
        let disc = (b - a) * (b - a) - S::two() * v * dt * ln_u;
        let min = (a + b - disc.sqrt()) * S::half();
        if min < S::zero() {
            out.push((i, b - min));
        }
    }
    out
}

/// One step of the configured scheme; `uniform(i)` feeds the bridge minimum
/// of constraint `i` and is ignored by the projection scheme.
pub fn step_with_scheme<S: Scalar>(
    spec: &DynamicsSpec<S>,
    x: &[S],
    dt: S,
    noise: &[S],
    uniform: &dyn Fn(usize) -> f64,
) -> Result<StepOutcome<S>> {
    let y = spec.predict(x, dt, noise);
    let targets = match spec.scheme {
        BoundaryScheme::Projection => Vec::new(),
        BoundaryScheme::Bridge => bridge_targets(spec, x, &y, dt, uniform),
    };
    correct(spec, x, y, &targets)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    /// Steps where some dL_f > 0 although f > act_tol·scale at both ends.
    pub support_violations: usize,
    pub negative_increments: usize,
    /// Smallest f/scale over all grid states.
    pub min_relative_value: f64,
    pub max_sweeps: usize,
    /// Steps that needed the dt/2 retry.
    pub retries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord<S> {
    pub ids: Vec<String>,
    pub times: Vec<S>,
    pub states: Vec<Vec<S>>,
    /// Cumulative local times per recorded point, declaration order.
    pub local_times: Vec<Vec<S>>,
    pub seed: u64,
    pub path: u64,
    pub dt: S,
    pub record_every: usize,
    pub scheme: BoundaryScheme,
    pub diagnostics: PathDiagnostics,
}

impl<S: Scalar> PathRecord<S> {
    pub fn local_time(&self, id: &str) -> Option<Vec<S>> {
        let c = self.ids.iter().position(|i| i == id)?;
        Some(self.local_times.iter().map(|l| l[c]).collect())
    }

    pub fn last_state(&self) -> &[S] {
        self.states.last().expect("record holds the initial state")
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub path: u64,
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            path: 0,
            record_every: 1,
        }
    }
}

/// Failure after the retry budget, with everything recorded before it.
#[derive(Clone, Debug)]
pub struct SimulationFailure<S> {
    pub partial: PathRecord<S>,
    pub error: Error,
}

impl<S> From<SimulationFailure<S>> for Error {
    fn from(f: SimulationFailure<S>) -> Error {
        f.error
    }
}

pub fn step_count<S: Scalar>(horizon: S, dt: S) -> usize {
    let r = (horizon / dt).f64();
    (r - 1e-9).ceil().max(0.0) as usize
}

pub fn simulate<S: Scalar>(
    spec: &DynamicsSpec<S>,
    x0: &[S],
    horizon: S,
    dt: S,
    seed: u64,
    opts: &SimOptions,
) -> std::result::Result<PathRecord<S>, SimulationFailure<S>> {
    simulate_with_noise(spec, x0, horizon, dt, &CounterRng::new(seed), seed, opts)
}

pub fn simulate_with_noise<S: Scalar>(
    spec: &DynamicsSpec<S>,
    x0: &[S],
    horizon: S,
    dt: S,
    noise: &dyn NoiseSource<S>,
    seed: u64,
    opts: &SimOptions,
) -> std::result::Result<PathRecord<S>, SimulationFailure<S>> {
    let set = &spec.set;
    let dim = set.dim();
    let m = set.len();
    let every = opts.record_every.max(1);
    let mut rec = PathRecord {
        ids: set.ids().map(String::from).collect(),
        times: vec![S::zero()],
        states: vec![x0.to_vec()],
        local_times: vec![vec![S::zero(); m]],
        seed,
        path: opts.path,
        dt,
        record_every: every,
        scheme: spec.scheme,
        diagnostics: PathDiagnostics {
            min_relative_value: set.min_relative_value(x0).f64(),
            ..Default::default()
        },
    };
    let fail = |rec: PathRecord<S>, error: Error| SimulationFailure { partial: rec, error };
    if let Err(e) = set.check_point(x0) {
        return Err(fail(rec, e));
    }
    if !set.is_strictly_feasible(x0) {
        let (i, v) = set.min_value(x0);
        let error = Error::Infeasible {
            constraint: set.entries()[i].id.clone(),
            value: v.f64(),
        };
        return Err(fail(rec, error));
    }

    let steps = step_count(horizon, dt);
    let path = opts.path;
    let mut x = x0.to_vec();
    let mut l = vec![S::zero(); m];
    let mut z = vec![S::zero(); dim];
    let mut eta = vec![S::zero(); dim];
    let act: Vec<S> = set.entries().iter().map(|e| spec.act_tol * e.f.scale()).collect();
    let mut before = set.values(&x);
    let root2 = S::two().sqrt();

    for k in 0..steps {
        noise.normals(path, k as u64, &mut z);
        let u0 = |i: usize| noise.uniform(path, k as u64, 0, i);
        let out = match step_with_scheme(spec, &x, dt, &z, &u0) {
            Ok(o) => o,
            Err(Error::StepFailure { .. }) => {
                // Brownian midpoint: W(dt/2) = W(dt)/2 + √dt/2 · η
                noise.refinement(path, k as u64, 0, &mut eta);
                let n1: Vec<S> = z.iter().zip(&eta).map(|(&a, &b)| (a + b) / root2).collect();
                let n2: Vec<S> = z.iter().zip(&eta).map(|(&a, &b)| (a - b) / root2).collect();
                let h = dt * S::half();
                let u1 = |i: usize| noise.uniform(path, k as u64, 1, i);
                let u2 = |i: usize| noise.uniform(path, k as u64, 2, i);
                let first = step_with_scheme(spec, &x, h, &n1, &u1).map_err(|e| fail(rec.clone(), e))?;
                let second = step_with_scheme(spec, &first.x, h, &n2, &u2).map_err(|e| fail(rec.clone(), e))?;
                rec.diagnostics.retries += 1;
                StepOutcome {
                    x: second.x,
                    dl: first.dl.iter().zip(&second.dl).map(|(&a, &b)| a + b).collect(),
                    sweeps: first.sweeps.max(second.sweeps),
                }
            }
            Err(e) => return Err(fail(rec, e)),
        };
        let after = set.values(&out.x);
        for c in 0..m {
            let d = out.dl[c];
            if d < S::zero() {
                rec.diagnostics.negative_increments += 1;
            }
            if d > S::zero() && before[c] > act[c] && after[c] > act[c] {
                rec.diagnostics.support_violations += 1;
            }
            l[c] += d;
        }
        rec.diagnostics.max_sweeps = rec.diagnostics.max_sweeps.max(out.sweeps);
        rec.diagnostics.min_relative_value = rec
            .diagnostics
            .min_relative_value
            .min(set.min_relative_value(&out.x).f64());
        x = out.x;
        before = after;
        if (k + 1) % every == 0 || k + 1 == steps {
            rec.times.push(S::c((k + 1) as f64) * dt);
            rec.states.push(x.clone());
            rec.local_times.push(l.clone());
        }
    }
    Ok(rec)
}

/// Independent trajectories from `starts`, path `i` keyed by `first_path + i`.
/// The output order follows `starts` whatever the worker count.
pub fn simulate_ensemble<S: Scalar>(
    spec: &DynamicsSpec<S>,
    starts: &[Vec<S>],
    horizon: S,
    dt: S,
    seed: u64,
    first_path: u64,
    record_every: usize,
) -> Vec<std::result::Result<PathRecord<S>, SimulationFailure<S>>> {
    let rng = CounterRng::new(seed);
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let opts = SimOptions {
                path: first_path + i as u64,
                record_every,
            };
            simulate_with_noise(spec, x0, horizon, dt, &rng, seed, &opts)
        })
        .collect()
}

/// The Θ-transformed system with normal reflection: coefficients
/// Θ⁻¹σ(Θ·), Θ⁻¹b(Θ·) and constraints f(Θ·). Θ times its solution solves
/// the original system for the same noise.
pub fn transform_dynamics<S: Scalar>(spec: &DynamicsSpec<S>) -> Result<DynamicsSpec<S>> {
    let ob = spec.set.obliquity();
    let theta = ob.theta().clone();
    let theta_inv = ob.theta_inv().clone();
    let set = transform_set(&spec.set, &theta)?;
    let sigma = match &spec.sigma {
        Diffusion::Constant(m) => Diffusion::Constant(theta_inv.matmul(m)),
        Diffusion::Field(f) => Diffusion::Field(Arc::new(TransformedDiffusion {
            inner: f.clone(),
            theta: theta.clone(),
            theta_inv: theta_inv.clone(),
        })),
    };
    let drift: Arc<dyn VectorField<S>> = if ob.is_identity() {
        spec.drift.clone()
    } else {
        Arc::new(TransformedDrift {
            inner: spec.drift.clone(),
            theta,
            theta_inv,
        })
    };
    Ok(DynamicsSpec {
        set,
        sigma,
        drift,
        lipschitz_note: spec.lipschitz_note.clone(),
        scheme: spec.scheme,
        max_sweeps: spec.max_sweeps,
        feas_tol: spec.feas_tol,
        act_tol: spec.act_tol,
    })
}

/// sup over the common grid of |X_original − Θ·Y_transformed|.
pub fn pathwise_difference<S: Scalar>(original: &PathRecord<S>, transformed: &PathRecord<S>, theta: &Matrix<S>) -> S {
    original
        .states
        .iter()
        .zip(&transformed.states)
        .map(|(x, y)| dist(x, &theta.apply(y)))
        .fold(S::zero(), S::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeCheck {
    pub monotone: bool,
    pub starts_at_zero: bool,
    pub infeasible_states: usize,
    /// Grid support violations (only meaningful at `record_every == 1`).
    pub support_violations: usize,
}

impl LocalTimeCheck {
    pub fn ok(&self) -> bool {
        self.monotone && self.starts_at_zero && self.infeasible_states == 0 && self.support_violations == 0
    }
}

/// Recomputes the local-time contract from a recorded path.
pub fn check_local_times<S: Scalar>(spec: &DynamicsSpec<S>, rec: &PathRecord<S>) -> LocalTimeCheck {
    let set = &spec.set;
    let act: Vec<S> = set.entries().iter().map(|e| spec.act_tol * e.f.scale()).collect();
    let values: Vec<Vec<S>> = rec.states.iter().map(|x| set.values(x)).collect();
    let mut monotone = true;
    let mut support = 0;
    for k in 1..rec.local_times.len() {
        for c in 0..set.len() {
            let d = rec.local_times[k][c] - rec.local_times[k - 1][c];
            if d < S::zero() {
                monotone = false;
            }
            if d > S::zero() && values[k - 1][c] > act[c] && values[k][c] > act[c] {
                support += 1;
            }
        }
    }
    LocalTimeCheck {
        monotone,
        starts_at_zero: rec.local_times.first().is_some_and(|l| l.iter().all(|&v| v == S::zero())),
        infeasible_states: rec.states.iter().filter(|x| !set.is_feasible(x, spec.feas_tol)).count(),
        support_violations: support,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestVerdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct ReversibilityOptions {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub alpha: f64,
    pub bins_per_axis: usize,
    pub axes: (usize, usize),
    pub min_paths: usize,
}

impl ReversibilityOptions {
    pub fn new(n_paths: usize, horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            horizon,
            dt,
            seed,
            alpha: 0.01,
            bins_per_axis: 3,
            axes: (0, 1),
            min_paths: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityReport {
    /// Bowker symmetry of the (cell of X(0), cell of X(T)) table.
    pub symmetry: TestResult,
    /// X(T) against an independent draw from μ.
    pub stationarity: TestResult,
    pub verdict: TestVerdict,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub alpha: f64,
    pub table: Vec<Vec<u64>>,
}

fn initial_law<S: Scalar>(gibbs: &GibbsSpec<S>, n: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    if gibbs.envelope.is_some() {
        if let Ok(run) = sample_rejection(gibbs, n, &RejectionOptions::new(seed)) {
            return Ok(run.samples);
        }
    }
    let mut o = McmcOptions::new(n, S::c(0.5), seed);
    o.thin = 20;
    o.chains = 8;
    Ok(sample_mcmc(gibbs, &o)?.samples)
}

/// Draws X(0) ~ μ, simulates to T, and tests that (X(0), X(T)) and
/// (X(T), X(0)) share one law, on a quantile grid of two coordinates.
pub fn reversibility_test<S: Scalar>(
    spec: &DynamicsSpec<S>,
    gibbs: &GibbsSpec<S>,
    opts: &ReversibilityOptions,
) -> Result<ReversibilityReport> {
    let starts = initial_law(gibbs, opts.n_paths, opts.seed)?;
    let reference = initial_law(gibbs, opts.n_paths, opts.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let records = simulate_ensemble(
        spec,
        &starts,
        S::c(opts.horizon),
        S::c(opts.dt),
        opts.seed,
        0,
        usize::MAX,
    );
    let pairs: Vec<(Vec<S>, Vec<S>)> = records
        .into_iter()
        .filter_map(|r| r.ok())
        .map(|r| (r.states[0].clone(), r.last_state().to_vec()))
        .collect();
    let failed = opts.n_paths - pairs.len();
    let (a0, a1) = opts.axes;
    let nb = opts.bins_per_axis.max(1);
    let cuts = |axis: usize| -> Vec<f64> {
        let pooled: Vec<f64> = pairs
            .iter()
            .flat_map(|(x, y)| [x[axis].f64(), y[axis].f64()])
            .collect();
        if pooled.is_empty() {
            return Vec::new();
        }
        (1..nb).map(|q| quantile(&pooled, q as f64 / nb as f64)).collect()
    };
    let (c0, c1) = (cuts(a0), cuts(a1));
    let cell = |x: &[S]| -> usize {
        let b0 = c0.iter().filter(|&&c| x[a0].f64() > c).count();
        let b1 = c1.iter().filter(|&&c| x[a1].f64() > c).count();
        b0 * nb + b1
    };
    let k = nb * nb;
    let mut table = vec![vec![0u64; k]; k];
    let mut end = vec![0u64; k];
    for (x, y) in &pairs {
        table[cell(x)][cell(y)] += 1;
        end[cell(y)] += 1;
    }
    let mut refc = vec![0u64; k];
    for x in &reference {
        refc[cell(x)] += 1;
    }
    let symmetry = bowker(&table);
    let stationarity = homogeneity(&end, &refc);
    let verdict = if pairs.len() < opts.min_paths || symmetry.df == 0 {
        TestVerdict::Inconclusive
    } else if symmetry.passes(opts.alpha) && stationarity.passes(opts.alpha) {
        TestVerdict::Pass
    } else {
        TestVerdict::Fail
    };
    Ok(ReversibilityReport {
        symmetry,
        stationarity,
        verdict,
        n_paths: pairs.len(),
        failed_paths: failed,
        alpha: opts.alpha,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::Affine;
    use crate::rng::ZeroNoise;

    fn half_line(theta: f64) -> DynamicsSpec<f64> {
        let set = ConstraintSet::new(1)
            .with("x", Affine::new(vec![1.0], 0.0))
            .unwrap()
            .with_obliquity(Matrix::diagonal(&[theta]))
            .unwrap();
        DynamicsSpec::new(set, Diffusion::Constant(Matrix::diagonal(&[theta])), Arc::new(ZeroDrift)).unwrap()
    }

    #[test]
    fn interior_step_is_plain_euler() {
        let spec = half_line(1.0);
        let out = step(&spec, &[5.0], 0.01, &[1.0]).unwrap();
        assert_eq!(out.x, vec![5.0 + 0.1]);
        assert_eq!(out.dl, vec![0.0]);
    }

    #[test]
    fn half_line_projection() {
        let spec = half_line(1.0);
        // y = 0.1 + √0.16 · (−1) = −0.3
        let out = step(&spec, &[0.1], 0.16, &[-1.0]).unwrap();
        assert!(out.x[0].abs() < 1e-15);
        assert!((out.dl[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn oblique_half_line_scales_local_time() {
        let spec = half_line(2.0);
        // y = 0.1 + 2·0.4·(−1) = −0.7, pushed along Θ² = 4
        let out = step(&spec, &[0.1], 0.16, &[-1.0]).unwrap();
        assert!(out.x[0].abs() < 1e-15);
        assert!((out.dl[0] - 0.7 / 4.0).abs() < 1e-15);
    }

    /// min |z − y|² s.t. a_i·z + b_i ≥ 0 by enumerating active sets.
    fn qp_oracle(y: [f64; 2], cons: &[([f64; 2], f64)]) -> [f64; 2] {
        let mut best: Option<([f64; 2], f64)> = None;
        for mask in 0u32..(1 << cons.len()) {
            let act: Vec<_> = (0..cons.len()).filter(|i| mask >> i & 1 == 1).collect();
            let z = match act.len() {
                0 => y,
                1 => {
                    let (a, b) = cons[act[0]];
                    let t = -(a[0] * y[0] + a[1] * y[1] + b) / (a[0] * a[0] + a[1] * a[1]);
                    [y[0] + t * a[0], y[1] + t * a[1]]
                }
                2 => {
                    let (a, b) = cons[act[0]];
                    let (c, d) = cons[act[1]];
                    let det = a[0] * c[1] - a[1] * c[0];
                    if det.abs() < 1e-14 {
                        continue;
                    }
                    [(-b * c[1] + d * a[1]) / det, (-d * a[0] + b * c[0]) / det]
                }
                _ => continue,
            };
            if cons.iter().all(|(a, b)| a[0] * z[0] + a[1] * z[1] + b >= -1e-12) {
                let cost = (z[0] - y[0]).powi(2) + (z[1] - y[1]).powi(2);
                if best.is_none_or(|(_, c)| cost < c) {
                    best = Some((z, cost));
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn wedge_corner_matches_qp_oracle() {
        let s = 20f64.to_radians().sin();
        let c = 20f64.to_radians().cos();
        // wedge |z₂| ≤ z₁ tan 20°
        let cons = [([s, c], 0.0), ([s, -c], 0.0)];
        let set = ConstraintSet::new(2)
            .with("upper", Affine::new(cons[0].0.to_vec(), 0.0))
            .unwrap()
            .with("lower", Affine::new(cons[1].0.to_vec(), 0.0))
            .unwrap();
        let spec = DynamicsSpec::new(set, Diffusion::Constant(Matrix::identity(2)), Arc::new(ZeroDrift)).unwrap();
        for y in [[-0.3, 0.05], [-1.0, 0.0], [0.05, -0.4], [-0.2, -0.9]] {
            let x = [0.2, 0.0];
            let noise = [(y[0] - x[0]) / 0.1, (y[1] - x[1]) / 0.1];
            let out = step(&spec, &x, 0.01, &noise).unwrap();
            let oracle = qp_oracle(y, &cons);
            assert!(spec.set.is_feasible(&out.x, 1e-9));
            assert!(out.dl.iter().all(|&l| l >= 0.0));
            assert!(dist(&out.x, &oracle) < 1e-6, "{:?} vs {:?}", out.x, oracle);
        }
    }

    #[test]
    fn zero_noise_path_is_constant() {
        let spec = half_line(1.0);
        let rec = simulate_with_noise(&spec, &[0.5], 1.0, 0.01, &ZeroNoise, 0, &SimOptions::default()).unwrap();
        assert_eq!(rec.states.len(), 101);
        assert!(rec.states.iter().all(|x| x[0] == 0.5));
        assert!(rec.local_times.iter().all(|l| l[0] == 0.0));
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = half_line(1.0).with_scheme(BoundaryScheme::Bridge);
        let a = simulate(&spec, &[0.2], 2.0, 1e-3, 5, &SimOptions::default()).unwrap();
        let b = simulate(&spec, &[0.2], 2.0, 1e-3, 5, &SimOptions::default()).unwrap();
        assert_eq!(a, b);
        let chk = check_local_times(&half_line(1.0), &simulate(&half_line(1.0), &[0.2], 2.0, 1e-3, 5, &SimOptions::default()).unwrap());
        assert!(chk.ok(), "{chk:?}");
    }

    #[test]
    fn transformed_half_line_agrees_pathwise() {
        let spec = half_line(2.0);
        let t = transform_dynamics(&spec).unwrap();
        assert!(t.set.obliquity().is_identity());
        let a = simulate(&spec, &[0.3], 1.0, 1e-3, 9, &SimOptions::default()).unwrap();
        let b = simulate(&t, &[0.15], 1.0, 1e-3, 9, &SimOptions::default()).unwrap();
        let d = pathwise_difference(&a, &b, spec.set.obliquity().theta());
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let spec = half_line(1.0);
        let r = simulate(&spec, &[-0.1], 1.0, 0.1, 0, &SimOptions::default());
        assert!(matches!(r, Err(SimulationFailure { error: Error::Infeasible { .. }, .. })));
    }
}
