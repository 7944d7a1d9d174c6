//! Numerical certification of constraint compatibility by boundary sampling,
//! and the two stability transforms (linear change of variables, dropping an
//! ignored coordinate).
//!
//! The checker certifies at the sampled points only. It tracks the running
//! minimum of δ(0, Conv(x)) together with the point that attains it.

use crate::error::{Error, Result};
use crate::geometry::shapes::{Projected, Transformed};
use crate::geometry::{Constraint, ConstraintSet};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Scalar> Bounds<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("box lower bound must be below upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, half_width: S) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[S]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    pub fn diameter(&self) -> S {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (u - l) * (u - l))
            .sum::<S>()
            .sqrt()
    }

    pub fn uniform(&self, rng: &mut ChaCha8Rng) -> Vec<S> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| l + (u - l) * S::c(rng.random::<f64>()))
            .collect()
    }

    pub fn volume(&self) -> S {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(S::one(), |v, (&l, &u)| v * (u - l))
    }
}

pub(crate) fn random_unit<S: Scalar>(dim: usize, rng: &mut ChaCha8Rng) -> Vec<S> {
    loop {
        let v: Vec<S> = (0..dim)
            .map(|_| S::c(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let n = norm(&v);
        if n > S::c(1e-12) {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Produces boundary points: at least one constraint within `act_tol` of
/// zero, all others at least `-act_tol` (relative to their scale).
pub trait BoundarySampler<S: Scalar>: Sync {
    fn sample(&self, set: &ConstraintSet<S>, act_tol: S, rng: &mut ChaCha8Rng) -> Option<Vec<S>>;
}

/// Feasible-point search: random restarts in `bounds`, each followed by
/// descent on the squared constraint violation.
pub fn find_feasible_point<S: Scalar>(
    set: &ConstraintSet<S>,
    bounds: &Bounds<S>,
    margin: S,
    tries: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<S>> {
    for _ in 0..tries {
        let mut x = bounds.uniform(rng);
        if set.min_relative_value(&x) > margin {
            return Some(x);
        }
        if descend_to_feasible(set, &mut x, margin, 200) {
            return Some(x);
        }
    }
    None
}

fn violation<S: Scalar>(set: &ConstraintSet<S>, x: &[S], margin: S) -> S {
    set.entries()
        .iter()
        .map(|e| {
            let v = (e.f.value(x) / e.f.scale() - margin).min(S::zero());
            v * v
        })
        .sum()
}

fn descend_to_feasible<S: Scalar>(set: &ConstraintSet<S>, x: &mut Vec<S>, margin: S, iters: usize) -> bool {
    let dim = set.dim();
    let mut g = vec![S::zero(); dim];
    let mut grad = vec![S::zero(); dim];
    for _ in 0..iters {
        if set.min_relative_value(x) > margin {
            return true;
        }
        let v0 = violation(set, x, margin);
        grad.iter_mut().for_each(|c| *c = S::zero());
        for e in set.entries() {
            let r = e.f.value(x) / e.f.scale() - margin;
            if r < S::zero() {
                e.f.gradient(x, &mut g);
                let w = S::two() * r / e.f.scale();
                crate::linalg::axpy(w, &g, &mut grad);
            }
        }
        let gn = dot(&grad, &grad);
        if gn == S::zero() {
            return false;
        }
        // Gauss-Newton-like step with backtracking
        let mut step = v0 / gn;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<S> = x.iter().zip(&grad).map(|(&a, &b)| a - step * b).collect();
            if violation(set, &trial, margin) < v0 {
                *x = trial;
                improved = true;
                break;
            }
            step *= S::half();
        }
        if !improved {
            return false;
        }
    }
    set.min_relative_value(x) > margin
}

/// Random interior rays, bisection onto the first crossed face, then an
/// optional Gauss-Newton refinement that co-activates nearby constraints.
#[derive(Clone, Debug)]
pub struct RayBisectionSampler<S> {
    pub bounds: Bounds<S>,
    pub max_tries: usize,
    /// Probability of attempting to co-activate further constraints.
    pub corner_prob: f64,
    /// Maximum extra constraints to co-activate.
    pub max_extra: usize,
}

impl<S: Scalar> RayBisectionSampler<S> {
    pub fn new(bounds: Bounds<S>) -> Self {
        Self {
            bounds,
            max_tries: 200,
            corner_prob: 0.5,
            max_extra: 2,
        }
    }

    fn ray_to_boundary(&self, set: &ConstraintSet<S>, x0: &[S], act_tol: S, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
        let dim = set.dim();
        let u = random_unit::<S>(dim, rng);
        let at = |t: S| -> Vec<S> { x0.iter().zip(&u).map(|(&a, &b)| a + t * b).collect() };
        let phi = |t: S| set.min_relative_value(&at(t));
        let mut lo = S::zero();
        let mut hi = self.bounds.diameter() * S::c(1e-3);
        loop {
            let p = at(hi);
            if !self.bounds.contains(&p) {
                return None;
            }
            if phi(hi) <= S::zero() {
                break;
            }
            lo = hi;
            hi *= S::two();
        }
        let target = act_tol * S::half();
        for _ in 0..200 {
            let mid = (lo + hi) * S::half();
            if mid == lo || mid == hi {
                break;
            }
            let v = phi(mid);
            if v > S::zero() {
                lo = mid;
                if v <= target {
                    break;
                }
            } else {
                hi = mid;
            }
        }
        let x = at(lo);
        (phi(lo) <= act_tol).then_some(x)
    }

    /// Newton projection onto the joint zero set of `targets`; rejects moves
    /// that violate any other constraint.
    fn coactivate(&self, set: &ConstraintSet<S>, x: &[S], targets: &[usize], act_tol: S) -> Option<Vec<S>> {
        let dim = set.dim();
        let k = targets.len();
        let mut y = x.to_vec();
        let mut grads = vec![vec![S::zero(); dim]; k];
        for _ in 0..40 {
            let f: Vec<S> = targets.iter().map(|&i| set.entries()[i].f.value(&y)).collect();
            let done = targets
                .iter()
                .zip(&f)
                .all(|(&i, &v)| v.abs() <= act_tol * S::c(0.25) * set.entries()[i].f.scale());
            if done {
                let ok = set.entries().iter().enumerate().all(|(i, e)| {
                    targets.contains(&i) || e.f.value(&y) >= -act_tol * e.f.scale()
                }) && self.bounds.contains(&y);
                return ok.then_some(y);
            }
            for (g, &i) in grads.iter_mut().zip(targets) {
                set.entries()[i].f.gradient(&y, g);
            }
            let mut gram = Matrix::zeros(k);
            for a in 0..k {
                for b in 0..k {
                    gram[(a, b)] = dot(&grads[a], &grads[b]);
                }
            }
            let neg: Vec<S> = f.iter().map(|&v| -v).collect();
            let mult = gram.solve(&neg)?;
            for (g, &m) in grads.iter().zip(&mult) {
                crate::linalg::axpy(m, g, &mut y);
            }
            if y.iter().any(|c| !c.is_finite()) {
                return None;
            }
        }
        None
    }
}

impl<S: Scalar> BoundarySampler<S> for RayBisectionSampler<S> {
    fn sample(&self, set: &ConstraintSet<S>, act_tol: S, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
        for _ in 0..self.max_tries {
            let Some(x0) = find_feasible_point(set, &self.bounds, act_tol * S::c(10.0), 4, rng) else {
                continue;
            };
            let Some(mut x) = self.ray_to_boundary(set, &x0, act_tol, rng) else {
                continue;
            };
            if rng.random::<f64>() < self.corner_prob {
                let reach = self.bounds.diameter() * S::c(0.05);
                for _ in 0..self.max_extra {
                    let active = set.active_indices(&x, act_tol);
                    // nearest inactive constraint by first-order distance
                    let next = set
                        .entries()
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !active.contains(i))
                        .filter_map(|(i, e)| {
                            let mut g = vec![S::zero(); set.dim()];
                            e.f.gradient(&x, &mut g);
                            let gn = norm(&g);
                            (gn > S::zero()).then(|| (i, e.f.value(&x) / gn))
                        })
                        .filter(|&(_, d)| d <= reach)
                        .fold(None, |b: Option<(usize, S)>, c| match b {
                            Some(b) if b.1 <= c.1 => Some(b),
                            _ => Some(c),
                        });
                    let Some((g, _)) = next else { break };
                    let mut targets = active.clone();
                    targets.push(g);
                    match self.coactivate(set, &x, &targets, act_tol) {
                        Some(y) => x = y,
                        None => break,
                    }
                }
            }
            if !set.active_indices(&x, act_tol).is_empty() {
                return Some(x);
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedAtSamples,
    Refuted,
    DegenerateInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatReport<S> {
    pub beta0_estimate: S,
    pub grad_floor_observed: S,
    pub hessian_bound_declared: S,
    /// Largest finite-difference Hessian norm seen on the probe box.
    pub hessian_bound_observed: Option<S>,
    pub hessian_box: Option<Bounds<S>>,
    pub samples_checked: usize,
    pub worst_point: Option<Vec<S>>,
    pub worst_active: Vec<String>,
    pub verdict: Verdict,
    /// Activity is relaxed to `f <= act_tol * scale`.
    pub act_tol: S,
    pub refute_tol: S,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CompatOptions<S> {
    pub act_tol: S,
    pub refute_tol: S,
    pub seed: u64,
    /// Box on which declared Hessian bounds are spot-checked.
    pub hessian_box: Option<Bounds<S>>,
    pub hessian_probes: usize,
}

impl<S: Scalar> Default for CompatOptions<S> {
    fn default() -> Self {
        Self {
            act_tol: S::act_tol(),
            refute_tol: S::c(1e-6),
            seed: 0,
            hessian_box: None,
            hessian_probes: 64,
        }
    }
}

struct PointResult<S> {
    distance: S,
    min_grad: S,
    point: Vec<S>,
    active: Vec<String>,
}

fn fd_hessian_norm<S: Scalar>(f: &dyn Constraint<S>, x: &[S], h: S) -> S {
    let d = x.len();
    let mut hess = Matrix::zeros(d);
    let mut probe = x.to_vec();
    let mut gp = vec![S::zero(); d];
    let mut gm = vec![S::zero(); d];
    for k in 0..d {
        let orig = probe[k];
        probe[k] = orig + h;
        f.gradient(&probe, &mut gp);
        probe[k] = orig - h;
        f.gradient(&probe, &mut gm);
        probe[k] = orig;
        for i in 0..d {
            hess[(i, k)] = (gp[i] - gm[i]) / (S::two() * h);
        }
    }
    // symmetrise
    let t = hess.transpose();
    for i in 0..d {
        for j in 0..d {
            hess[(i, j)] = (hess[(i, j)] + t[(i, j)]) * S::half();
        }
    }
    hess.spectral_norm()
}

/// Sample `n_samples` boundary points and report the smallest distance from
/// the origin to the hull of active unit normals. Deterministic for a fixed
/// seed regardless of the number of worker threads.
pub fn check_compatibility<S: Scalar>(
    set: &ConstraintSet<S>,
    sampler: &dyn BoundarySampler<S>,
    n_samples: usize,
    opts: &CompatOptions<S>,
) -> CompatReport<S> {
    let rng = crate::rng::CounterRng::new(opts.seed);
    let hessian_bound_declared = set
        .entries()
        .iter()
        .map(|e| e.f.hessian_bound())
        .fold(S::zero(), S::max);
    let mut report = CompatReport {
        beta0_estimate: S::infinity(),
        grad_floor_observed: S::infinity(),
        hessian_bound_declared,
        hessian_bound_observed: None,
        hessian_box: opts.hessian_box.clone(),
        samples_checked: 0,
        worst_point: None,
        worst_active: Vec::new(),
        verdict: Verdict::CertifiedAtSamples,
        act_tol: opts.act_tol,
        refute_tol: opts.refute_tol,
        notes: vec!["activity relaxed to f <= act_tol * scale".into()],
    };

    let results: Vec<std::result::Result<PointResult<S>, String>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.stream(i as u64);
            let x = sampler
                .sample(set, opts.act_tol, &mut r)
                .ok_or_else(|| format!("sampler could not reach the boundary (sample {i})"))?;
            let (hull, active) = set
                .hull_distance(&x, opts.act_tol)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("sample {i} has no active constraint"))?;
            let mut g = vec![S::zero(); set.dim()];
            let min_grad = active
                .iter()
                .map(|&k| {
                    set.entries()[k].f.gradient(&x, &mut g);
                    norm(&g)
                })
                .fold(S::infinity(), S::min);
            Ok(PointResult {
                distance: hull.distance,
                min_grad,
                active: active.iter().map(|&k| set.entries()[k].id.clone()).collect(),
                point: x,
            })
        })
        .collect();

    // lexicographic (distance, index) reduction
    let mut worst: Option<(S, usize)> = None;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(p) => {
                report.samples_checked += 1;
                report.grad_floor_observed = report.grad_floor_observed.min(p.min_grad);
                if worst.is_none_or(|(d, _)| p.distance < d) {
                    worst = Some((p.distance, i));
                }
            }
            Err(msg) => {
                report.verdict = Verdict::DegenerateInput;
                if report.notes.len() < 8 {
                    report.notes.push(msg.clone());
                }
            }
        }
    }
    if let Some((d, i)) = worst {
        let p = results[i].as_ref().expect("worst is Ok");
        report.beta0_estimate = d;
        report.worst_point = Some(p.point.clone());
        report.worst_active = p.active.clone();
        if d <= opts.refute_tol && report.verdict != Verdict::DegenerateInput {
            report.verdict = Verdict::Refuted;
        }
    }

    if let Some(bx) = &opts.hessian_box {
        let mut r = rng.stream(u64::MAX);
        let h = S::c(1e-4).max(S::epsilon().sqrt());
        let mut observed = S::zero();
        for _ in 0..opts.hessian_probes {
            let x = bx.uniform(&mut r);
            for e in set.entries() {
                let hn = fd_hessian_norm(e.f.as_ref(), &x, h);
                observed = observed.max(hn);
                let declared = e.f.hessian_bound();
                if hn > declared * S::c(1.0 + 1e-3) + S::c(1e-5) {
                    report.verdict = Verdict::DegenerateInput;
                    report.notes.push(format!(
                        "constraint `{}` Hessian norm {} exceeds declared bound {}",
                        e.id, hn, declared
                    ));
                }
            }
        }
        report.hessian_bound_observed = Some(observed);
    }
    report
}

/// The boundary points [`check_compatibility`] examines for the same seed.
pub fn boundary_samples<S: Scalar>(
    set: &ConstraintSet<S>,
    sampler: &dyn BoundarySampler<S>,
    n_samples: usize,
    act_tol: S,
    seed: u64,
) -> Vec<Option<Vec<S>>> {
    let rng = crate::rng::CounterRng::new(seed);
    (0..n_samples)
        .into_par_iter()
        .map(|i| sampler.sample(set, act_tol, &mut rng.stream(i as u64)))
        .collect()
}

/// g(y) = f(Θy) for every f; obliquity of the result is the identity.
pub fn transform_set<S: Scalar>(set: &ConstraintSet<S>, theta: &Matrix<S>) -> Result<ConstraintSet<S>> {
    if theta.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: theta.dim(),
        });
    }
    let ob = crate::geometry::Obliquity::new(theta.clone())?;
    let inv_norm = ob.theta_inv().spectral_norm();
    let mut out = ConstraintSet::new(set.dim());
    for e in set.entries() {
        out.push(
            e.id.clone(),
            Arc::new(Transformed::new(e.f.clone(), theta.clone(), inv_norm)),
        )?;
    }
    Ok(out)
}

/// Drops a coordinate every constraint ignores; probes invariance at random
/// points of `probe_box` first.
pub fn project_set<S: Scalar>(
    set: &ConstraintSet<S>,
    dropped_coord: usize,
    probe_box: &Bounds<S>,
    probes: usize,
    seed: u64,
) -> Result<ConstraintSet<S>> {
    let dim = set.dim();
    if dropped_coord >= dim || dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot drop coordinate {dropped_coord} of a {dim}-dimensional set"
        )));
    }
    let mut rng = crate::rng::CounterRng::new(seed).stream(0);
    let tol = S::c(1e-9).max(S::epsilon() * S::c(64.0));
    for _ in 0..probes {
        let x = probe_box.uniform(&mut rng);
        let mut x0 = x.clone();
        x0[dropped_coord] = S::zero();
        for e in set.entries() {
            let difference = (e.f.value(&x) - e.f.value(&x0)).abs();
            if difference > tol {
                return Err(Error::NotInvariant {
                    constraint: e.id.clone(),
                    coord: dropped_coord,
                    difference: difference.f64(),
                });
            }
        }
    }
    let mut out = ConstraintSet::new(dim - 1);
    for e in set.entries() {
        out.push(e.id.clone(), Arc::new(Projected::new(e.f.clone(), dropped_coord)))?;
    }
    Ok(out)
}
