//! Hard spheres with fluctuating radii around an attracting planet.
//!
//! A configuration is `(x_1, x̆_1, …, x_n, x̆_n)` with `x_i ∈ R^d` the centre
//! and `x̆_i ∈ [r₋, r₊]` the radius of particle `i`. Constraints:
//!
//! * `planet_i`:  |x_i|² − (R + x̆_i)²
//! * `rmax_i`:    r₊ − x̆_i
//! * `rmin_i`:    x̆_i − r₋
//! * `pair_i_j`:  |x_i − x_j|² − (x̆_i + x̆_j)²
//!
//! Particle indices in ids are 1-based. The temperature τ scales the noise;
//! the obliquity is diag(τ,…,τ,τσ̆) repeated per particle.

use crate::compat::{check_compatibility, BoundarySampler, CompatOptions, CompatReport};
use crate::error::{Error, Result};
use crate::geometry::{CandidatePruner, Constraint, ConstraintSet};
use crate::gibbs::{
    check_integrability, sample_mcmc, sample_rejection, GibbsSpec, IntegrabilityReport, McmcOptions, Potential,
    ProposalEnvelope, RejectionOptions, ZeroPotential,
};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::sde::{Diffusion, DynamicsSpec, GradientDrift, PathRecord};
use crate::stats::wilson;
use petgraph::unionfind::UnionFind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Debug;
use std::sync::Arc;

/// Gravity potential G with its first two derivatives, on (0, ∞).
pub trait Gravity<S: Scalar>: Send + Sync + Debug {
    fn g(&self, rho: S) -> S;
    fn g1(&self, rho: S) -> S;
    fn g2(&self, rho: S) -> S;
}

#[derive(Clone, Debug)]
pub enum GravityLaw<S: Scalar> {
    /// G(ρ) = c ln ρ
    Log { c: S },
    /// G′ ≡ 0: no attraction (violates the model hypotheses).
    Zero,
    Custom(Arc<dyn Gravity<S>>),
}

impl<S: Scalar> GravityLaw<S> {
    pub fn g(&self, rho: S) -> S {
        match self {
            GravityLaw::Log { c } => *c * rho.ln(),
            GravityLaw::Zero => S::zero(),
            GravityLaw::Custom(f) => f.g(rho),
        }
    }
    pub fn g1(&self, rho: S) -> S {
        match self {
            GravityLaw::Log { c } => *c / rho,
            GravityLaw::Zero => S::zero(),
            GravityLaw::Custom(f) => f.g1(rho),
        }
    }
    pub fn g2(&self, rho: S) -> S {
        match self {
            GravityLaw::Log { c } => -*c / (rho * rho),
            GravityLaw::Zero => S::zero(),
            GravityLaw::Custom(f) => f.g2(rho),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanetModel<S: Scalar> {
    pub n: usize,
    pub d: usize,
    pub radius: S,
    pub r_minus: S,
    pub r_plus: S,
    pub elasticity: S,
    pub temperature: S,
    pub gravity: GravityLaw<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

impl<S: Scalar> PlanetModel<S> {
    pub fn new(n: usize, d: usize, radius: S, r_minus: S, r_plus: S) -> Self {
        Self {
            n,
            d,
            radius,
            r_minus,
            r_plus,
            elasticity: S::one(),
            temperature: S::one(),
            gravity: GravityLaw::Log { c: S::one() },
        }
    }

    pub fn with_temperature(mut self, tau: S) -> Self {
        self.temperature = tau;
        self
    }

    pub fn with_gravity(mut self, gravity: GravityLaw<S>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn with_elasticity(mut self, elasticity: S) -> Self {
        self.elasticity = elasticity;
        self
    }

    /// Ambient dimension n(d+1).
    pub fn dim(&self) -> usize {
        self.n * (self.d + 1)
    }

    /// Offset of particle `i` (0-based); its radius sits at offset + d.
    pub fn offset(&self, i: usize) -> usize {
        i * (self.d + 1)
    }

    pub fn position<'a>(&self, x: &'a [S], i: usize) -> &'a [S] {
        let o = self.offset(i);
        &x[o..o + self.d]
    }

    pub fn particle_radius(&self, x: &[S], i: usize) -> S {
        x[self.offset(i) + self.d]
    }

    pub fn constraint_count(&self) -> usize {
        3 * self.n + self.n * (self.n.saturating_sub(1)) / 2
    }

    /// Index of `pair_i_j` (0-based, i < j) in the constraint set.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        3 * self.n + i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Parameter validity (hard errors).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModel(m.into()));
        if self.n == 0 || self.d == 0 {
            return bad("n and d must be positive");
        }
        if !(self.radius > S::zero()) {
            return bad("planet radius must be positive");
        }
        if !(self.r_minus > S::zero() && self.r_minus < self.r_plus) {
            return bad("radius bounds must satisfy 0 < r_minus < r_plus");
        }
        if !(self.elasticity > S::zero()) {
            return bad("elasticity must be positive");
        }
        if !(self.temperature > S::zero()) {
            return bad("temperature must be positive");
        }
        Ok(())
    }

    fn probe_points(&self, lo: S, hi: S, count: usize) -> Vec<S> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..count)
            .map(|k| (a + (b - a) * S::c(k as f64 / (count - 1) as f64)).exp())
            .collect()
    }

    /// Estimate of ℓ = liminf ρG′(ρ): the minimum over a log-spaced tail probe.
    pub fn ell_probe(&self) -> S {
        let base = self.radius + self.r_plus;
        self.probe_points(base * S::c(10.0), base * S::c(1e4), 64)
            .into_iter()
            .map(|r| r * self.gravity.g1(r))
            .fold(S::infinity(), S::min)
    }

    /// G′ > 0, G″ ≤ 0 on the probe range and ρG′ bounded below on its tail.
    pub fn hypotheses(&self) -> Vec<HypothesisCheck> {
        let base = self.radius + self.r_plus;
        let probes = self.probe_points(self.radius, base * S::c(1e4), 256);
        let min_g1 = probes.iter().map(|&r| self.gravity.g1(r)).fold(S::infinity(), S::min);
        let max_g2 = probes.iter().map(|&r| self.gravity.g2(r)).fold(S::neg_infinity(), S::max);
        let ell = self.ell_probe();
        vec![
            HypothesisCheck {
                name: "G' > 0".into(),
                holds: min_g1 > S::zero(),
                detail: format!("min G' on probe range = {min_g1}"),
            },
            HypothesisCheck {
                name: "G'' <= 0".into(),
                holds: max_g2 <= S::zero(),
                detail: format!("max G'' on probe range = {max_g2}"),
            },
            HypothesisCheck {
                name: "liminf rho G'(rho) > 0".into(),
                holds: ell > S::zero(),
                detail: format!("min rho G'(rho) on probe tail = {ell}"),
            },
        ]
    }

    /// Finiteness of the Gibbs measure at the model temperature.
    pub fn integrability(&self, eta: f64) -> IntegrabilityReport {
        check_integrability(self.ell_probe().f64(), eta, self.d, self.temperature.f64())
    }

    /// Diagonal of Θ: (τ,…,τ,τσ̆) per particle.
    pub fn obliquity_diagonal(&self) -> Vec<S> {
        let tau = self.temperature;
        (0..self.n)
            .flat_map(|_| {
                std::iter::repeat_n(tau, self.d).chain(std::iter::once(tau * self.elasticity))
            })
            .collect()
    }

    pub fn obliquity(&self) -> Matrix<S> {
        Matrix::diagonal(&self.obliquity_diagonal())
    }

    /// Deterministic strictly feasible start: particles of mid radius spread
    /// on a ring well above the planet.
    pub fn spread_configuration(&self) -> Vec<S> {
        let mid = (self.r_minus + self.r_plus) * S::half();
        let spacing = S::c(3.0) * self.r_plus;
        let ring = (self.radius + S::c(3.0) * self.r_plus)
            .max(spacing * S::c(self.n as f64) / S::c(std::f64::consts::PI));
        let mut x = vec![S::zero(); self.dim()];
        for i in 0..self.n {
            let o = self.offset(i);
            let a = S::c(2.0 * std::f64::consts::PI * i as f64 / self.n as f64);
            x[o] = ring * a.cos();
            if self.d > 1 {
                x[o + 1] = ring * a.sin();
            }
            x[o + self.d] = mid;
        }
        x
    }
}

#[derive(Clone, Debug)]
struct PlanetContact<S> {
    off: usize,
    d: usize,
    radius: S,
    floor: S,
    scale: S,
}

impl<S: Scalar> Constraint<S> for PlanetContact<S> {
    fn value(&self, x: &[S]) -> S {
        let p = &x[self.off..self.off + self.d];
        let r = self.radius + x[self.off + self.d];
        dot(p, p) - r * r
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        for k in 0..self.d {
            out[self.off + k] = S::two() * x[self.off + k];
        }
        out[self.off + self.d] = -S::two() * (self.radius + x[self.off + self.d]);
    }
    fn hessian_bound(&self) -> S {
        S::two()
    }
    fn grad_floor(&self) -> S {
        self.floor
    }
    fn scale(&self) -> S {
        self.scale
    }
}

#[derive(Clone, Debug)]
struct RadiusBound<S> {
    at: usize,
    bound: S,
    upper: bool,
    scale: S,
}

impl<S: Scalar> Constraint<S> for RadiusBound<S> {
    fn value(&self, x: &[S]) -> S {
        if self.upper {
            self.bound - x[self.at]
        } else {
            x[self.at] - self.bound
        }
    }
    fn gradient(&self, _: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        out[self.at] = if self.upper { -S::one() } else { S::one() };
    }
    fn hessian_bound(&self) -> S {
        S::zero()
    }
    fn grad_floor(&self) -> S {
        S::one()
    }
    fn scale(&self) -> S {
        self.scale
    }
}

#[derive(Clone, Debug)]
struct PairContact<S> {
    oi: usize,
    oj: usize,
    d: usize,
    floor: S,
    scale: S,
}

impl<S: Scalar> Constraint<S> for PairContact<S> {
    fn value(&self, x: &[S]) -> S {
        let mut sq = S::zero();
        for k in 0..self.d {
            let t = x[self.oi + k] - x[self.oj + k];
            sq += t * t;
        }
        let s = x[self.oi + self.d] + x[self.oj + self.d];
        sq - s * s
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        for k in 0..self.d {
            let t = S::two() * (x[self.oi + k] - x[self.oj + k]);
            out[self.oi + k] = t;
            out[self.oj + k] = -t;
        }
        let s = -S::two() * (x[self.oi + self.d] + x[self.oj + self.d]);
        out[self.oi + self.d] = s;
        out[self.oj + self.d] = s;
    }
    fn hessian_bound(&self) -> S {
        S::c(4.0)
    }
    fn grad_floor(&self) -> S {
        self.floor
    }
    fn scale(&self) -> S {
        self.scale
    }
}

/// Uniform-grid neighbour search over particle centres. Exact for hard cores:
/// every pair that can touch within `reach` shares or neighbours a cell.
#[derive(Clone, Debug)]
pub struct PlanetPruner<S: Scalar> {
    n: usize,
    d: usize,
    radius: S,
    r_minus: S,
    r_plus: S,
    pad: S,
}

impl<S: Scalar> PlanetPruner<S> {
    pub fn new(model: &PlanetModel<S>) -> Self {
        let big = model.radius + model.r_plus;
        Self {
            n: model.n,
            d: model.d,
            radius: model.radius,
            r_minus: model.r_minus,
            r_plus: model.r_plus,
            // activity tolerances are relative to the constraint scales
            pad: S::act_tol() * S::c(100.0) * big * big / model.r_minus,
        }
    }
}

impl<S: Scalar> CandidatePruner<S> for PlanetPruner<S> {
    fn candidates(&self, x: &[S], reach: S) -> Vec<usize> {
        let (n, d) = (self.n, self.d);
        let reach = reach + self.pad;
        let root2 = S::two().sqrt();
        let pos = |i: usize| &x[i * (d + 1)..i * (d + 1) + d];
        let rad = |i: usize| x[i * (d + 1) + d];
        let mut out = Vec::new();
        for i in 0..n {
            if norm(pos(i)) - self.radius - rad(i) <= root2 * reach {
                out.push(3 * i);
            }
            if self.r_plus - rad(i) <= reach {
                out.push(3 * i + 1);
            }
            if rad(i) - self.r_minus <= reach {
                out.push(3 * i + 2);
            }
        }
        let cell = S::two() * self.r_plus + S::two() * reach;
        let key = |i: usize| -> Vec<i64> { pos(i).iter().map(|&c| (c / cell).floor().to_i64().unwrap_or(0)).collect() };
        let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..n {
            grid.entry(key(i)).or_default().push(i);
        }
        let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
            .map(|mut m| {
                (0..d)
                    .map(|_| {
                        let o = (m % 3) as i64 - 1;
                        m /= 3;
                        o
                    })
                    .collect()
            })
            .collect();
        for i in 0..n {
            let ki = key(i);
            for off in &offsets {
                let k: Vec<i64> = ki.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(list) = grid.get(&k) {
                    for &j in list {
                        if j > i {
                            let gap = crate::linalg::dist(pos(i), pos(j)) - rad(i) - rad(j);
                            if gap <= S::two() * reach {
                                out.push(3 * n + i * n - i * (i + 1) / 2 + (j - i - 1));
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Sweep budget of the planet correction step.
pub const PLANET_MAX_SWEEPS: usize = 1000;

/// Particle count above which pair constraints are pruned by a neighbour grid.
pub const PRUNE_ABOVE: usize = 64;

/// The 3n + n(n−1)/2 constraints, with Θ as obliquity.
pub fn build_constraints<S: Scalar>(model: &PlanetModel<S>) -> Result<ConstraintSet<S>> {
    model.validate()?;
    let (n, d) = (model.n, model.d);
    let big = model.radius + model.r_plus;
    let mut set = ConstraintSet::new(model.dim());
    for i in 0..n {
        let off = model.offset(i);
        set.push(
            format!("planet_{}", i + 1),
            Arc::new(PlanetContact {
                off,
                d,
                radius: model.radius,
                floor: S::two() * S::two().sqrt() * (model.radius + model.r_minus),
                scale: big * big,
            }),
        )?;
        set.push(
            format!("rmax_{}", i + 1),
            Arc::new(RadiusBound {
                at: off + d,
                bound: model.r_plus,
                upper: true,
                scale: model.r_plus,
            }),
        )?;
        set.push(
            format!("rmin_{}", i + 1),
            Arc::new(RadiusBound {
                at: off + d,
                bound: model.r_minus,
                upper: false,
                scale: model.r_plus,
            }),
        )?;
    }
    for i in 0..n {
        for j in i + 1..n {
            set.push(
                format!("pair_{}_{}", i + 1, j + 1),
                Arc::new(PairContact {
                    oi: model.offset(i),
                    oj: model.offset(j),
                    d,
                    floor: S::c(8.0) * model.r_minus,
                    scale: S::c(4.0) * model.r_plus * model.r_plus,
                }),
            )?;
        }
    }
    let mut set = set.with_obliquity(model.obliquity())?;
    if n > PRUNE_ABOVE {
        set = set.with_pruner(Arc::new(PlanetPruner::new(model)));
    }
    Ok(set)
}

/// Φ(x) = Σ G(|x_i|)/τ²
#[derive(Clone, Debug)]
pub struct PlanetPotential<S: Scalar> {
    pub n: usize,
    pub d: usize,
    pub temperature: S,
    pub gravity: GravityLaw<S>,
}

impl<S: Scalar> PlanetPotential<S> {
    pub fn new(model: &PlanetModel<S>) -> Self {
        Self {
            n: model.n,
            d: model.d,
            temperature: model.temperature,
            gravity: model.gravity.clone(),
        }
    }
}

impl<S: Scalar> Potential<S> for PlanetPotential<S> {
    fn value(&self, x: &[S]) -> S {
        let t2 = self.temperature * self.temperature;
        (0..self.n)
            .map(|i| {
                let o = i * (self.d + 1);
                self.gravity.g(norm(&x[o..o + self.d]))
            })
            .sum::<S>()
            / t2
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        let t2 = self.temperature * self.temperature;
        for i in 0..self.n {
            let o = i * (self.d + 1);
            let r = norm(&x[o..o + self.d]);
            if r > S::zero() {
                let w = self.gravity.g1(r) / (t2 * r);
                for k in 0..self.d {
                    out[o + k] = w * x[o + k];
                }
            }
        }
    }
}

/// Constant diffusion Θ, drift −½ΘΘᵀ∇Φ (so −½G′(|x_i|) x_i/|x_i| on each
/// position block and zero on radii), reflection along ΘΘᵀ∇f.
pub fn build_dynamics<S: Scalar>(model: &PlanetModel<S>) -> Result<DynamicsSpec<S>> {
    let set = build_constraints(model)?;
    let theta = model.obliquity();
    let metric = set.obliquity().metric().clone();
    let mut spec = DynamicsSpec::new(
        set,
        Diffusion::Constant(theta),
        Arc::new(GradientDrift {
            potential: Arc::new(PlanetPotential::new(model)),
            metric,
        }),
    )?;
    spec.lipschitz_note = Some("drift bounded and Lipschitz on the closed domain (|x_i| >= R + r_minus)".into());
    // Gauss–Seidel contracts like 1 − β₀² per sweep and β₀ ≈ 0.1 at
    // pair/radius-bound corners
    spec.max_sweeps = PLANET_MAX_SWEEPS;
    Ok(spec)
}

/// Physical local times of the particle system, cumulative per grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLocalTimes<S> {
    pub times: Vec<S>,
    /// L_ij keyed by 1-based (i, j), i < j.
    pub pair: BTreeMap<(usize, usize), Vec<S>>,
    pub planet: Vec<Vec<S>>,
    pub upper: Vec<Vec<S>>,
    pub lower: Vec<Vec<S>>,
}

/// L_ij = 2τ² Σ (X̆_i + X̆_j) dL_{f_ij}, L_i^R = 2τ² Σ (R + X̆_i) dL_{f_i^R},
/// L_i^± = τ²σ̆² L_{f_i^±}; radii taken at the end of each step, where the
/// correction acts.
pub fn rescale_local_times<S: Scalar>(path: &PathRecord<S>, model: &PlanetModel<S>) -> Result<PhysicalLocalTimes<S>> {
    let set_ids: Vec<String> = build_constraints(model)?.ids().map(String::from).collect();
    if path.ids != set_ids {
        return Err(Error::Mismatch("constraint ids differ from the model's".into()));
    }
    if path.record_every != 1 {
        return Err(Error::Mismatch("rescaling needs every step recorded".into()));
    }
    if path.states.first().map(|s| s.len()) != Some(model.dim()) {
        return Err(Error::Mismatch("state dimension differs from the model's".into()));
    }
    let n = model.n;
    let t2 = model.temperature * model.temperature;
    let ts2 = t2 * model.elasticity * model.elasticity;
    let steps = path.states.len();
    let zeros = || vec![S::zero(); steps];
    let mut out = PhysicalLocalTimes {
        times: path.times.clone(),
        pair: BTreeMap::new(),
        planet: vec![zeros(); n],
        upper: vec![zeros(); n],
        lower: vec![zeros(); n],
    };
    let mut pair: Vec<Vec<S>> = vec![zeros(); n * n.saturating_sub(1) / 2];
    for k in 1..steps {
        let dl = |c: usize| path.local_times[k][c] - path.local_times[k - 1][c];
        let x = &path.states[k];
        for i in 0..n {
            let ri = model.particle_radius(x, i);
            out.planet[i][k] = out.planet[i][k - 1] + S::two() * t2 * (model.radius + ri) * dl(3 * i);
            out.upper[i][k] = out.upper[i][k - 1] + ts2 * dl(3 * i + 1);
            out.lower[i][k] = out.lower[i][k - 1] + ts2 * dl(3 * i + 2);
            for j in i + 1..n {
                let c = model.pair_index(i, j);
                let p = c - 3 * n;
                let rj = model.particle_radius(x, j);
                pair[p][k] = pair[p][k - 1] + S::two() * t2 * (ri + rj) * dl(c);
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let p = model.pair_index(i, j) - 3 * n;
            out.pair.insert((i + 1, j + 1), std::mem::take(&mut pair[p]));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactGraph {
    /// 0-based pairs (i, j), i < j.
    pub edges: Vec<(usize, usize)>,
    pub planet_contacts: Vec<usize>,
    /// Connected components, each sorted, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub cluster_of: Vec<usize>,
}

fn clusters_from_edges(n: usize, edges: &[(usize, usize)]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut uf = UnionFind::<usize>::new(n);
    for &(i, j) in edges {
        uf.union(i, j);
    }
    let mut label: HashMap<usize, usize> = HashMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster_of = vec![0; n];
    for i in 0..n {
        let root = uf.find(i);
        let c = *label.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[c].push(i);
        cluster_of[i] = c;
    }
    (clusters, cluster_of)
}

/// Contacts within `act_tol` (a distance) and their connected components.
pub fn contact_graph<S: Scalar>(model: &PlanetModel<S>, x: &[S], act_tol: S) -> ContactGraph {
    let n = model.n;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let gap = crate::linalg::dist(model.position(x, i), model.position(x, j))
                - model.particle_radius(x, i)
                - model.particle_radius(x, j);
            if gap <= act_tol {
                edges.push((i, j));
            }
        }
    }
    let planet_contacts = (0..n)
        .filter(|&i| norm(model.position(x, i)) <= model.radius + model.particle_radius(x, i) + act_tol)
        .collect();
    let (clusters, cluster_of) = clusters_from_edges(n, &edges);
    ContactGraph {
        edges,
        planet_contacts,
        clusters,
        cluster_of,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub constraint: String,
    /// v·∇f/|∇f| at the point.
    pub value: f64,
    pub bound: f64,
    /// `true` for an equality (radius bounds), else a lower bound.
    pub equality: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeVector<S> {
    pub v: Vec<S>,
    pub checks: Vec<BoundCheck>,
    pub norm_sq: f64,
    pub norm_sq_bound: f64,
    pub norm_bound_holds: bool,
}

impl<S> ConeVector<S> {
    pub fn all_hold(&self) -> bool {
        self.norm_bound_holds && self.checks.iter().all(|c| c.holds)
    }

    /// Smallest v·∇f/(|v||∇f|) over the active constraints.
    pub fn beta(&self) -> f64 {
        let n = self.norm_sq.sqrt();
        self.checks.iter().map(|c| c.value / n).fold(f64::INFINITY, f64::min)
    }
}

/// The separating direction of the compatibility proof: every centre moves
/// away from its cluster's mean (or from the origin when the cluster touches
/// the planet), radii at a bound move r₋/2 inward. Activity is
/// `f <= act_tol * scale`.
pub fn cone_vector<S: Scalar>(model: &PlanetModel<S>, x: &[S], act_tol: S) -> Result<ConeVector<S>> {
    let set = build_constraints(model)?.without_pruner();
    set.check_point(x)?;
    let active = set.active_indices(x, act_tol);
    if active.is_empty() {
        return Err(Error::NoActiveConstraint);
    }
    let (n, d) = (model.n, model.d);
    let mut edges = Vec::new();
    let mut on_planet = vec![false; n];
    let mut at_min = vec![false; n];
    let mut at_max = vec![false; n];
    for &c in &active {
        if c < 3 * n {
            match c % 3 {
                0 => on_planet[c / 3] = true,
                1 => at_max[c / 3] = true,
                _ => at_min[c / 3] = true,
            }
        } else {
            let p = c - 3 * n;
            let (mut i, mut rest) = (0, p);
            while rest >= n - i - 1 {
                rest -= n - i - 1;
                i += 1;
            }
            edges.push((i, i + 1 + rest));
        }
    }
    let (clusters, cluster_of) = clusters_from_edges(n, &edges);
    let touches: Vec<bool> = clusters.iter().map(|c| c.iter().any(|&i| on_planet[i])).collect();

    let mut v = vec![S::zero(); model.dim()];
    let half_rm = model.r_minus * S::half();
    for i in 0..n {
        let o = model.offset(i);
        let c = cluster_of[i];
        for k in 0..d {
            v[o + k] = if touches[c] {
                x[o + k]
            } else {
                let mean = clusters[c].iter().map(|&j| x[model.offset(j) + k]).sum::<S>() / S::c(clusters[c].len() as f64);
                x[o + k] - mean
            };
        }
        v[o + d] = if at_min[i] {
            half_rm
        } else if at_max[i] {
            -half_rm
        } else {
            S::zero()
        };
    }

    let rel = 1e-9;
    let mut g = vec![S::zero(); model.dim()];
    let checks = active
        .iter()
        .map(|&c| {
            let e = &set.entries()[c];
            e.f.gradient(x, &mut g);
            let value = (dot(&v, &g) / norm(&g)).f64();
            let (bound, equality) = if c < 3 * n {
                match c % 3 {
                    0 => (model.radius.f64() / 2f64.sqrt(), false),
                    _ => (half_rm.f64(), true),
                }
            } else {
                (model.r_minus.f64() / 4.0, false)
            };
            let holds = if equality {
                (value - bound).abs() <= rel * bound.max(1.0)
            } else {
                value >= bound * (1.0 - rel)
            };
            BoundCheck {
                constraint: e.id.clone(),
                value,
                bound,
                equality,
                holds,
            }
        })
        .collect();

    let norm_sq = dot(&v, &v).f64();
    let (nf, rp, rm, big) = (
        n as f64,
        model.r_plus.f64(),
        model.r_minus.f64(),
        (model.radius + model.r_plus).f64(),
    );
    let free_sum: f64 = (0..n)
        .filter(|&i| !touches[cluster_of[i]])
        .map(|i| {
            let m = clusters[cluster_of[i]].len() as f64;
            (m - 1.0) * (2.0 * m - 1.0)
        })
        .sum();
    let norm_sq_bound = 2.0 * nf * big * big
        + 4.0 / 3.0 * rp * rp * (nf - 1.0) * nf * (2.0 * nf - 1.0)
        + 2.0 / 3.0 * rp * rp * free_sum
        + nf * rm * rm / 4.0;
    Ok(ConeVector {
        v,
        checks,
        norm_sq,
        norm_sq_bound,
        norm_bound_holds: norm_sq <= norm_sq_bound * (1.0 + rel),
    })
}

fn random_direction<S: Scalar>(d: usize, rng: &mut ChaCha8Rng) -> Vec<S> {
    loop {
        let v: Vec<S> = (0..d).map(|_| S::c(rng.sample::<f64, _>(StandardNormal))).collect();
        let n = norm(&v);
        if n > S::c(1e-12) {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Samples configurations with engineered contacts: each particle is placed
/// on the planet, against an earlier particle, in a planet/particle corner or
/// freely, with radii often at a bound. Placement is analytic, so contacts
/// hold to rounding.
#[derive(Clone, Debug)]
pub struct JammedSampler<S: Scalar> {
    pub model: PlanetModel<S>,
    pub max_tries: usize,
}

impl<S: Scalar> JammedSampler<S> {
    pub fn new(model: PlanetModel<S>) -> Self {
        Self { model, max_tries: 200 }
    }

    fn radius(&self, rng: &mut ChaCha8Rng) -> S {
        let m = &self.model;
        match rng.random_range(0..4) {
            0 => m.r_minus,
            1 => m.r_plus,
            _ => m.r_minus + (m.r_plus - m.r_minus) * S::c(rng.random::<f64>()),
        }
    }

    /// A point on {|y − a| = ra} ∩ {|y − b| = rb}, random on the (d−2)-sphere.
    fn two_sphere_point(a: &[S], ra: S, b: &[S], rb: S, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
        let d = a.len();
        let ab: Vec<S> = b.iter().zip(a).map(|(&p, &q)| p - q).collect();
        let l = norm(&ab);
        if l == S::zero() || l > ra + rb || l < (ra - rb).abs() {
            return None;
        }
        let t = (ra * ra - rb * rb + l * l) / (S::two() * l);
        let h2 = ra * ra - t * t;
        let h = h2.max(S::zero()).sqrt();
        let u: Vec<S> = ab.iter().map(|&c| c / l).collect();
        let mut w = random_direction::<S>(d, rng);
        let p = dot(&w, &u);
        w.iter_mut().zip(&u).for_each(|(wi, &ui)| *wi -= p * ui);
        let wn = norm(&w);
        if d > 1 && wn < S::c(1e-9) {
            return None;
        }
        Some(
            (0..d)
                .map(|k| a[k] + t * u[k] + if d > 1 { h * w[k] / wn } else { S::zero() })
                .collect(),
        )
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
        let m = &self.model;
        let (n, d) = (m.n, m.d);
        let origin = vec![S::zero(); d];
        let mut x = vec![S::zero(); m.dim()];
        for i in 0..n {
            let mut placed = false;
            for _ in 0..self.max_tries {
                let ri = self.radius(rng);
                let mode = if i == 0 { rng.random_range(0..2) * 3 } else { rng.random_range(0..4) };
                let j = if i > 0 { rng.random_range(0..i) } else { 0 };
                let xj = m.position(&x, j).to_vec();
                let rj = m.particle_radius(&x, j);
                let p: Option<Vec<S>> = match mode {
                    0 => {
                        let u = random_direction::<S>(d, rng);
                        Some(u.iter().map(|&c| c * (m.radius + ri)).collect())
                    }
                    1 => {
                        let u = random_direction::<S>(d, rng);
                        Some(xj.iter().zip(&u).map(|(&c, &w)| c + (ri + rj) * w).collect())
                    }
                    2 => Self::two_sphere_point(&origin, m.radius + ri, &xj, ri + rj, rng),
                    _ => {
                        let u = random_direction::<S>(d, rng);
                        let lift = m.radius + ri + S::c(4.0 * rng.random::<f64>()) * m.r_plus;
                        Some(u.iter().map(|&c| c * lift).collect())
                    }
                };
                let Some(p) = p else { continue };
                let o = m.offset(i);
                x[o..o + d].copy_from_slice(&p);
                x[o + d] = ri;
                let ok = norm(&p) >= m.radius + ri - S::c(1e-12)
                    && (0..i).all(|k| {
                        crate::linalg::dist(&p, m.position(&x, k)) >= ri + m.particle_radius(&x, k) - S::c(1e-12)
                    });
                if ok {
                    placed = true;
                    break;
                }
            }
            if !placed {
                return None;
            }
        }
        Some(x)
    }
}

impl<S: Scalar> BoundarySampler<S> for JammedSampler<S> {
    fn sample(&self, set: &ConstraintSet<S>, act_tol: S, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
        for _ in 0..self.max_tries {
            if let Some(x) = self.draw(rng) {
                let tol = act_tol;
                if set.is_feasible(&x, tol) && set.min_relative_value(&x) <= tol {
                    return Some(x);
                }
            }
        }
        None
    }
}

/// Options of the A_ε membership estimator.
#[derive(Clone, Debug)]
pub struct RadialOptions<S> {
    /// Random directions on the contact sphere; default 8 + 2d.
    pub starts: usize,
    pub descent_iters: usize,
    pub feas_tol: S,
}

impl<S: Scalar> RadialOptions<S> {
    pub fn for_dim(d: usize) -> Self {
        Self {
            starts: 8 + 2 * d,
            descent_iters: 200,
            feas_tol: S::c(1e-10),
        }
    }
}

struct Obstacles<S> {
    rho0: S,
    centres: Vec<Vec<S>>,
    radii: Vec<S>,
}

impl<S: Scalar> Obstacles<S> {
    fn feasible(&self, y: &[S], tol: S) -> bool {
        norm(y) >= self.rho0 - tol
            && self
                .centres
                .iter()
                .zip(&self.radii)
                .all(|(c, &r)| crate::linalg::dist(y, c) >= r - tol)
    }

    /// Pushes `y` out of every obstacle it penetrates (a few rounds).
    fn push_out(&self, y: &mut [S]) {
        for _ in 0..20 {
            let mut moved = false;
            let r = norm(y);
            if r < self.rho0 && r > S::zero() {
                let s = self.rho0 / r;
                y.iter_mut().for_each(|c| *c *= s);
                moved = true;
            }
            for (c, &rad) in self.centres.iter().zip(&self.radii) {
                let dv: Vec<S> = y.iter().zip(c).map(|(&a, &b)| a - b).collect();
                let l = norm(&dv);
                if l < rad && l > S::zero() {
                    for k in 0..y.len() {
                        y[k] = c[k] + dv[k] * rad / l;
                    }
                    moved = true;
                }
            }
            if !moved {
                return;
            }
        }
    }
}

/// Closest point to the origin of {|y − a| = ra} ∩ {|y − b| = rb}, plus the
/// farthest one (both points in the plane case).
fn sphere_intersections<S: Scalar>(a: &[S], ra: S, b: &[S], rb: S) -> Vec<Vec<S>> {
    let d = a.len();
    let ab: Vec<S> = b.iter().zip(a).map(|(&p, &q)| p - q).collect();
    let l = norm(&ab);
    if l == S::zero() || l > ra + rb || l < (ra - rb).abs() {
        return Vec::new();
    }
    let t = (ra * ra - rb * rb + l * l) / (S::two() * l);
    let h = (ra * ra - t * t).max(S::zero()).sqrt();
    let u: Vec<S> = ab.iter().map(|&c| c / l).collect();
    let centre: Vec<S> = (0..d).map(|k| a[k] + t * u[k]).collect();
    // direction within the intersection plane pointing away from the origin
    let p = dot(&centre, &u);
    let mut w: Vec<S> = (0..d).map(|k| centre[k] - p * u[k]).collect();
    let mut wn = norm(&w);
    if wn < S::c(1e-12) {
        if d < 2 {
            return vec![centre];
        }
        w = vec![S::zero(); d];
        let k = if u[0].abs() < S::c(0.9) { 0 } else { 1 };
        w[k] = S::one();
        let q = dot(&w, &u);
        w.iter_mut().zip(&u).for_each(|(wi, &ui)| *wi -= q * ui);
        wn = norm(&w);
    }
    if d < 2 {
        return vec![centre];
    }
    let near: Vec<S> = (0..d).map(|k| centre[k] - h * w[k] / wn).collect();
    let far: Vec<S> = (0..d).map(|k| centre[k] + h * w[k] / wn).collect();
    vec![near, far]
}

/// Upper estimate of inf |y_k| over positions y_k that keep the configuration
/// in the closed domain with every other particle and all radii fixed.
/// Candidates: points of the contact sphere |y| = R + x̆_k (radial and random
/// directions), the nearest point of each obstacle sphere, and pairwise
/// sphere intersections, each refined by projected descent.
pub fn min_radial_norm<S: Scalar>(
    model: &PlanetModel<S>,
    x: &[S],
    k: usize,
    opts: &RadialOptions<S>,
    rng: &mut ChaCha8Rng,
) -> S {
    let d = model.d;
    let xk = model.position(x, k).to_vec();
    let rk = model.particle_radius(x, k);
    let current = norm(&xk);
    let obs = Obstacles {
        rho0: model.radius + rk,
        centres: (0..model.n).filter(|&j| j != k).map(|j| model.position(x, j).to_vec()).collect(),
        radii: (0..model.n)
            .filter(|&j| j != k)
            .map(|j| rk + model.particle_radius(x, j))
            .collect(),
    };
    let tol = opts.feas_tol * (S::one() + obs.rho0);
    let rho0 = obs.rho0;

    let mut dirs: Vec<Vec<S>> = Vec::new();
    if current > S::zero() {
        dirs.push(xk.iter().map(|&c| c / current).collect());
    }
    for _ in 0..opts.starts {
        dirs.push(random_direction(d, rng));
    }
    for c in &obs.centres {
        let l = norm(c);
        if l > S::zero() {
            dirs.push(c.iter().map(|&v| -v / l).collect());
        }
    }
    let mut best = current;
    for u in &dirs {
        let y: Vec<S> = u.iter().map(|&c| c * rho0).collect();
        if obs.feasible(&y, tol) {
            return rho0.min(current);
        }
    }

    let mut cands: Vec<Vec<S>> = Vec::new();
    let origin = vec![S::zero(); d];
    for (c, &r) in obs.centres.iter().zip(&obs.radii) {
        let l = norm(c);
        if l > S::zero() {
            cands.push(c.iter().map(|&v| v - r * v / l).collect());
        }
        cands.extend(sphere_intersections(&origin, rho0, c, r));
    }
    for a in 0..obs.centres.len() {
        for b in a + 1..obs.centres.len() {
            cands.extend(sphere_intersections(&obs.centres[a], obs.radii[a], &obs.centres[b], obs.radii[b]));
        }
    }
    for u in &dirs {
        cands.push(u.iter().map(|&c| c * (rho0 + model.r_plus)).collect());
    }

    for mut y in cands {
        if obs.feasible(&y, tol) {
            best = best.min(norm(&y));
        }
        // projected descent on |y|
        let mut h = model.r_plus * S::half();
        obs.push_out(&mut y);
        if !obs.feasible(&y, tol) {
            continue;
        }
        let mut val = norm(&y);
        for _ in 0..opts.descent_iters {
            let r = norm(&y);
            if r == S::zero() {
                break;
            }
            let mut t: Vec<S> = y.iter().map(|&c| c - h * c / r).collect();
            obs.push_out(&mut t);
            let tv = norm(&t);
            if obs.feasible(&t, tol) && tv < val {
                y = t;
                val = tv;
            } else {
                h *= S::half();
                if h < S::c(1e-12) * rho0 {
                    break;
                }
            }
        }
        best = best.min(val);
    }
    best.min(current)
}

/// A_ε membership: some particle can be moved more than ε closer to the
/// origin with everything else fixed. One-sided: may miss members, never
/// adds any.
pub fn in_a_eps<S: Scalar>(model: &PlanetModel<S>, x: &[S], eps: S, opts: &RadialOptions<S>, rng: &mut ChaCha8Rng) -> bool {
    (0..model.n).any(|k| norm(model.position(x, k)) - min_radial_norm(model, x, k, opts, rng) > eps)
}

/// Exact envelope for G = c ln ρ: every radius from its marginal
/// ∝ (R + x̆)^{d−a} and every centre from ∝ |x|^{−a} outside the inflated
/// planet, a = c/τ². Only the pair constraints remain to be checked, so the
/// acceptance ratio is one on the product space.
#[derive(Clone, Debug)]
pub struct LogGravityEnvelope<S: Scalar> {
    model: PlanetModel<S>,
    a: S,
}

impl<S: Scalar> LogGravityEnvelope<S> {
    pub fn new(model: &PlanetModel<S>) -> Result<Self> {
        let GravityLaw::Log { c } = model.gravity else {
            return Err(Error::InvalidModel("the exact envelope needs logarithmic gravity".into()));
        };
        let a = c / (model.temperature * model.temperature);
        if !(a > S::c(model.d as f64)) {
            return Err(Error::IntegrabilityUnknown {
                temperature: model.temperature.f64(),
            });
        }
        Ok(Self { model: model.clone(), a })
    }

    /// Truncated exponential on [0, len] with the given rate.
    fn trunc_exp(rate: f64, len: f64, u: f64) -> f64 {
        if rate.abs() * len < 1e-12 {
            return u * len;
        }
        -(u * (-(rate * len)).exp_m1()).ln_1p() / rate
    }
}

impl<S: Scalar> ProposalEnvelope<S> for LogGravityEnvelope<S> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<S> {
        let m = &self.model;
        let d = m.d;
        let a = self.a.f64();
        let lo = (m.radius + m.r_minus).f64();
        let hi = (m.radius + m.r_plus).f64();
        let mut x = vec![S::zero(); m.dim()];
        for i in 0..m.n {
            // u = R + x̆ has density ∝ u^{d−a}: with u = lo·e^t, t has rate a − d − 1
            let t = Self::trunc_exp(a - d as f64 - 1.0, (hi / lo).ln(), rng.random::<f64>());
            let u = lo * t.exp();
            let ri = (u - m.radius.f64()).clamp(m.r_minus.f64(), m.r_plus.f64());
            // ρ has density ∝ ρ^{d−1−a} on [u, ∞): ρ = u·e^s, s ~ Exp(a − d)
            let s = -(1.0 - rng.random::<f64>()).ln() / (a - d as f64);
            let rho = u * s.exp();
            let dir = random_direction::<S>(d, rng);
            let o = m.offset(i);
            for k in 0..d {
                x[o + k] = dir[k] * S::c(rho);
            }
            x[o + d] = S::c(ri);
        }
        x
    }

    fn log_accept(&self, _: &[S], _: S) -> S {
        S::zero()
    }
}

/// Gibbs specification of μ_τ with per-block proposal scales.
pub fn gibbs_spec<S: Scalar>(model: &PlanetModel<S>) -> Result<GibbsSpec<S>> {
    let set = build_constraints(model)?;
    let mut scales = Vec::with_capacity(model.dim());
    for _ in 0..model.n {
        scales.extend(std::iter::repeat_n(S::one(), model.d));
        scales.push((model.r_plus - model.r_minus) / (model.radius + model.r_plus));
    }
    let mut spec = GibbsSpec::new(set, Arc::new(PlanetPotential::new(model))).with_proposal_scales(scales);
    if let Ok(env) = LogGravityEnvelope::new(model) {
        spec = spec.with_envelope(Arc::new(env));
    }
    Ok(spec)
}

/// Altitude gap |x_1| − R − x̆_1 and, for n ≥ 2, the pair gap
/// |x_1 − x_2| − x̆_1 − x̆_2.
pub fn altitude_and_gap<S: Scalar>(model: &PlanetModel<S>, x: &[S]) -> (f64, f64) {
    let alt = norm(model.position(x, 0)) - model.radius - model.particle_radius(x, 0);
    let gap = if model.n > 1 {
        crate::linalg::dist(model.position(x, 0), model.position(x, 1))
            - model.particle_radius(x, 0)
            - model.particle_radius(x, 1)
    } else {
        S::zero()
    };
    (alt.f64(), gap.f64())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumSampler {
    /// Exact rejection (logarithmic gravity only).
    Rejection,
    /// Random-walk Metropolis with the given thinning.
    Mcmc { thin: usize, chains: usize },
}

#[derive(Clone, Debug)]
pub struct CurveOptions {
    pub seed: u64,
    pub eta: f64,
    pub override_integrability: bool,
    pub sampler: EquilibriumSampler,
    pub level: f64,
}

impl CurveOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            eta: 0.1,
            override_integrability: false,
            sampler: EquilibriumSampler::Rejection,
            level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

fn equilibrium_samples<S: Scalar>(
    model: &PlanetModel<S>,
    n: usize,
    seed: u64,
    sampler: EquilibriumSampler,
) -> Result<Vec<Vec<S>>> {
    let spec = gibbs_spec(model)?;
    match sampler {
        EquilibriumSampler::Rejection => Ok(sample_rejection(&spec, n, &RejectionOptions::new(seed))?.samples),
        EquilibriumSampler::Mcmc { thin, chains } => {
            let step = model.r_plus * S::half() * model.temperature.min(S::one());
            let mut o = McmcOptions::new(n, step, seed);
            o.thin = thin.max(1);
            o.chains = chains.max(1);
            Ok(sample_mcmc(&spec, &o)?.samples)
        }
    }
}

fn membership_fraction<S: Scalar>(model: &PlanetModel<S>, samples: &[Vec<S>], eps: S, seed: u64) -> usize {
    let opts = RadialOptions::for_dim(model.d);
    let rng = CounterRng::new(seed);
    samples
        .par_iter()
        .enumerate()
        .filter(|(i, x)| in_a_eps(model, x, eps, &opts, &mut rng.stream(*i as u64)))
        .count()
}

/// Estimate of μ_τ(A_ε) with a Wilson interval for each temperature.
/// Temperature `t` (in list order) uses seed `seed + t`.
pub fn clustering_curve<S: Scalar>(
    template: &PlanetModel<S>,
    temperatures: &[S],
    eps: S,
    n_samples: usize,
    opts: &CurveOptions,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(temperatures.len());
    for (t, &tau) in temperatures.iter().enumerate() {
        let model = template.clone().with_temperature(tau);
        model.validate()?;
        let integ = model.integrability(opts.eta);
        if integ.verdict != crate::gibbs::Integrability::Finite && !opts.override_integrability {
            return Err(Error::IntegrabilityUnknown { temperature: tau.f64() });
        }
        let seed = opts.seed.wrapping_add(t as u64);
        let samples = equilibrium_samples(&model, n_samples, seed, opts.sampler)?;
        let hits = membership_fraction(&model, &samples, eps, seed ^ 0x5bd1_e995);
        let (lo, hi) = wilson(hits, samples.len(), opts.level);
        out.push(CurvePoint {
            tau: tau.f64(),
            estimate: hits as f64 / samples.len().max(1) as f64,
            ci_low: lo,
            ci_high: hi,
            n_samples: samples.len(),
        });
    }
    Ok(out)
}

/// Negative control: no gravity, centres confined to the box
/// [−half_width, half_width]^d. The law does not depend on τ, so no trend
/// is expected.
pub fn clustering_control<S: Scalar>(
    template: &PlanetModel<S>,
    half_width: S,
    temperatures: &[S],
    eps: S,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (t, &tau) in temperatures.iter().enumerate() {
        let model = template.clone().with_temperature(tau).with_gravity(GravityLaw::Zero);
        let mut set = build_constraints(&model)?;
        let dim = model.dim();
        let mut lower = vec![S::zero(); dim];
        let mut upper = vec![S::zero(); dim];
        for i in 0..model.n {
            let o = model.offset(i);
            for k in 0..model.d {
                let mut a = vec![S::zero(); dim];
                a[o + k] = S::one();
                set.push(format!("box_lo_{}_{}", i + 1, k + 1), Arc::new(crate::geometry::shapes::Affine::new(a.clone(), half_width)))?;
                a[o + k] = -S::one();
                set.push(format!("box_hi_{}_{}", i + 1, k + 1), Arc::new(crate::geometry::shapes::Affine::new(a, half_width)))?;
                lower[o + k] = -half_width;
                upper[o + k] = half_width;
            }
            lower[o + model.d] = model.r_minus;
            upper[o + model.d] = model.r_plus;
        }
        let bounds = crate::compat::Bounds::new(lower, upper)?;
        let spec = GibbsSpec::new(set, Arc::new(ZeroPotential)).with_box(bounds, S::zero());
        let s = seed.wrapping_add(t as u64);
        let samples = sample_rejection(&spec, n_samples, &RejectionOptions::new(s))?.samples;
        let hits = membership_fraction(&model, &samples, eps, s ^ 0x5bd1_e995);
        let (lo, hi) = wilson(hits, samples.len(), 0.95);
        out.push(CurvePoint {
            tau: tau.f64(),
            estimate: hits as f64 / samples.len().max(1) as f64,
            ci_low: lo,
            ci_high: hi,
            n_samples: samples.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub constraints: usize,
    pub dimension: usize,
    pub hypotheses: Vec<HypothesisCheck>,
    pub integrability: IntegrabilityReport,
    pub compat: CompatReport<f64>,
    pub cone_samples: usize,
    pub cone_failures: usize,
    pub min_cone_beta: f64,
}

/// Hypotheses, integrability, sampled compatibility and the proof's cone
/// inequalities on jammed boundary samples.
pub fn check_model(model: &PlanetModel<f64>, samples: usize, seed: u64, eta: f64) -> Result<ModelReport> {
    let set = build_constraints(model)?.without_pruner();
    let sampler = JammedSampler::new(model.clone());
    let copts = CompatOptions {
        seed,
        ..Default::default()
    };
    let compat = check_compatibility(&set, &sampler, samples, &copts);
    let points = crate::compat::boundary_samples(&set, &sampler, samples, copts.act_tol, seed);
    let cones: Vec<Option<ConeVector<f64>>> = points
        .par_iter()
        .map(|p| p.as_ref().and_then(|x| cone_vector(model, x, copts.act_tol).ok()))
        .collect();
    let checked: Vec<&ConeVector<f64>> = cones.iter().flatten().collect();
    Ok(ModelReport {
        constraints: set.len(),
        dimension: set.dim(),
        hypotheses: model.hypotheses(),
        integrability: model.integrability(eta),
        compat,
        cone_samples: checked.len(),
        cone_failures: checked.iter().filter(|c| !c.all_hold()).count(),
        min_cone_beta: checked.iter().map(|c| c.beta()).fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::finite_difference_gradient;
    use rand::SeedableRng;

    fn model(n: usize, d: usize) -> PlanetModel<f64> {
        PlanetModel::new(n, d, 1.0, 0.1, 0.2)
    }

    #[test]
    fn constraint_counts() {
        assert_eq!(build_constraints(&model(1, 2)).unwrap().len(), 3);
        assert_eq!(build_constraints(&model(3, 2)).unwrap().len(), 12);
        let m = model(5, 3);
        let set = build_constraints(&m).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(set.entries()[m.pair_index(i, j)].id, format!("pair_{}_{}", i + 1, j + 1));
            }
        }
    }

    #[test]
    fn planet_constraint_example() {
        let m = PlanetModel::new(1, 2, 1.0, 0.05, 0.2);
        let set = build_constraints(&m).unwrap();
        let ev = set.evaluate(&[1.1f64, 0.0, 0.1]).unwrap();
        assert!(ev[0].value.abs() < 1e-15);
        assert!((ev[0].gradient[0] - 2.2).abs() < 1e-15);
        assert_eq!(ev[0].gradient[1], 0.0);
        assert!((ev[0].gradient[2] + 2.2).abs() < 1e-15);
    }

    #[test]
    fn pair_gradient_norm_at_contact() {
        let m = PlanetModel::new(2, 2, 1.0, 0.05, 0.2);
        let set = build_constraints(&m).unwrap();
        let x = [3.0f64, 0.0, 0.1, 3.2, 0.0, 0.1];
        let c = m.pair_index(0, 1);
        let ev = set.evaluate(&x).unwrap();
        assert!(ev[c].value.abs() < 1e-12);
        assert!((norm(&ev[c].gradient) - 0.8).abs() < 1e-12);
        let fd = finite_difference_gradient(set.entries()[c].f.as_ref(), &x, 1e-5);
        for k in 0..6 {
            assert!((fd[k] - ev[c].gradient[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn drift_is_half_gravity_and_zero_on_radii() {
        let m = model(2, 2)
            .with_temperature(0.7)
            .with_gravity(GravityLaw::Log { c: 3.0 });
        let spec = build_dynamics(&m).unwrap();
        let x = [2.0, 1.0, 0.15, -0.5, 3.0, 0.12];
        let mut b = vec![0.0; 6];
        spec.drift.eval(&x, &mut b);
        for i in 0..2 {
            let p = m.position(&x, i);
            let r = norm(p);
            for k in 0..2 {
                let want = -0.5 * 3.0 / r * p[k] / r;
                assert!((b[3 * i + k] - want).abs() < 1e-14);
            }
            assert_eq!(b[3 * i + 2], 0.0);
        }
    }

    #[test]
    fn active_set_of_jammed_pair() {
        let m = PlanetModel::new(2, 2, 1.0, 0.1, 0.2);
        let set = build_constraints(&m).unwrap();
        let x = [1.1, 0.0, 0.1, 1.3, 0.0, 0.1];
        let a = set.active_set(&x, 1e-8).unwrap();
        for id in ["planet_1", "pair_1_2", "rmin_1", "rmin_2"] {
            assert!(a.contains(id), "{id}");
        }
        assert_eq!(a.len(), 4);
    }

    fn brute_clusters(n: usize, adj: &[Vec<bool>]) -> Vec<usize> {
        let mut reach = adj.to_vec();
        for i in 0..n {
            reach[i][i] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).map(|i| (0..n).find(|&j| reach[i][j]).unwrap()).collect()
    }

    #[test]
    fn contact_graph_matches_transitive_closure() {
        let m = model(7, 2);
        let sampler = JammedSampler::new(m.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let Some(x) = sampler.draw(&mut rng) else { continue };
            let g = contact_graph(&m, &x, 1e-9);
            let mut adj = vec![vec![false; 7]; 7];
            for &(i, j) in &g.edges {
                adj[i][j] = true;
                adj[j][i] = true;
            }
            let rep = brute_clusters(7, &adj);
            for i in 0..7 {
                for j in 0..7 {
                    assert_eq!(rep[i] == rep[j], g.cluster_of[i] == g.cluster_of[j]);
                }
            }
        }
    }

    #[test]
    fn chain_of_three_is_one_cluster() {
        let m = model(3, 2);
        let x = [5.0, 0.0, 0.1, 5.2, 0.0, 0.1, 5.4, 0.0, 0.1];
        let g = contact_graph(&m, &x, 1e-9);
        assert_eq!(g.clusters, vec![vec![0, 1, 2]]);
        assert!(g.planet_contacts.is_empty());
        let far = [5.0, 0.0, 0.1, -5.0, 0.0, 0.1, 0.0, 5.0, 0.1];
        assert_eq!(contact_graph(&m, &far, 1e-9).clusters.len(), 3);
    }

    #[test]
    fn cone_vector_single_contact() {
        let m = model(1, 2);
        let x = [1.1, 0.0, 0.1];
        let c = cone_vector(&m, &x, 1e-8).unwrap();
        assert_eq!(&c.v[..2], &[1.1, 0.0]);
        let planet = c.checks.iter().find(|b| b.constraint == "planet_1").unwrap();
        assert!((planet.value - (1.1 - 0.05) / 2f64.sqrt()).abs() < 1e-12);
        assert!(c.all_hold());
    }

    #[test]
    fn cone_vector_pair_away_from_planet() {
        let m = model(2, 2);
        let x = [3.0, 0.0, 0.15, 3.0, 0.3, 0.15];
        let c = cone_vector(&m, &x, 1e-8).unwrap();
        for k in 0..2 {
            assert!((c.v[k] - c.v[3 + k] - (x[k] - x[3 + k])).abs() < 1e-15);
        }
        assert!(c.all_hold());
        assert!(matches!(cone_vector(&m, &[3.0, 0.0, 0.15, -3.0, 0.0, 0.15], 1e-8), Err(Error::NoActiveConstraint)));
    }

    #[test]
    fn cone_vector_bounds_on_jammed_samples() {
        let m = model(5, 2);
        let sampler = JammedSampler::new(m.clone());
        let set = build_constraints(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        for _ in 0..300 {
            if let Some(x) = sampler.sample(&set, 1e-8, &mut rng) {
                let c = cone_vector(&m, &x, 1e-8).unwrap();
                assert!(c.all_hold(), "{:?}", c.checks);
                checked += 1;
            }
        }
        assert!(checked > 250);
    }

    #[test]
    fn min_radial_norm_unobstructed_and_at_contact() {
        let m = model(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = RadialOptions::for_dim(2);
        let r = min_radial_norm(&m, &[2.0, 1.0, 0.15], 0, &o, &mut rng);
        assert!((r - 1.15).abs() < 1e-6);
        let r = min_radial_norm(&m, &[0.0, 1.15, 0.15], 0, &o, &mut rng);
        assert_eq!(r, 1.15);
    }

    #[test]
    fn min_radial_norm_blocked_particle_matches_grid() {
        // particle 1 rests on the planet, particle 2 sits on top of it,
        // particle 3 is a neighbour of particle 1 on the planet
        let m = model(3, 2);
        let x = [1.1, 0.0, 0.1, 1.3, 0.0, 0.1, 1.1f64 * 0.3f64.cos(), 1.1 * 0.3f64.sin(), 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = min_radial_norm(&m, &x, 1, &RadialOptions::for_dim(2), &mut rng);
        assert!(est < 1.3);
        let mut grid = f64::INFINITY;
        let steps = 4000;
        for a in 0..steps {
            let th = 2.0 * std::f64::consts::PI * a as f64 / steps as f64;
            for r in 0..400 {
                let rho = 1.1 + 0.2 * r as f64 / 400.0;
                let y = [rho * th.cos(), rho * th.sin()];
                let ok = crate::linalg::dist(&y, &x[0..2]) >= 0.2 && crate::linalg::dist(&y, &x[6..8]) >= 0.2;
                if ok {
                    grid = grid.min(rho);
                    break;
                }
            }
        }
        // grid resolution in radius is 5e-4, in angle about 1.7e-3 of arc
        assert!(est <= grid + 1e-9, "{est} vs {grid}");
        assert!(est >= grid - 2e-3, "{est} vs {grid}");
    }

    #[test]
    fn pruned_candidates_cover_dense() {
        let m = model(80, 2);
        let pr = PlanetPruner::new(&m);
        let set = build_constraints(&m).unwrap();
        let dense = set.clone().without_pruner();
        let sampler = JammedSampler::new(m.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = loop {
            if let Some(x) = sampler.draw(&mut rng) {
                break x;
            }
        };
        for reach in [0.0, 1e-3, 0.05] {
            let cand = pr.candidates(&x, reach);
            for (c, e) in dense.entries().iter().enumerate() {
                if e.f.value(&x) <= 0.0 + 1e-12 {
                    assert!(cand.binary_search(&c).is_ok(), "{}", e.id);
                }
            }
        }
    }

    #[test]
    fn envelope_radius_marginal_matches_closed_form() {
        let m = model(1, 2).with_gravity(GravityLaw::Log { c: 3.0 }).with_temperature(0.5);
        let env = LogGravityEnvelope::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let radii: Vec<f64> = (0..20000).map(|_| env.draw(&mut rng)[2]).collect();
        // density of u = R + x̆ ∝ u^{d−a} = u^{−10} on [1.1, 1.2]
        let cdf = |r: f64| {
            let f = |u: f64| u.powf(-9.0);
            (f(1.1) - f(1.0 + r)) / (f(1.1) - f(1.2))
        };
        assert!(crate::stats::ks_one_sample(&radii, cdf) < 0.015);
    }

    #[test]
    fn integrability_examples() {
        let m = model(2, 2).with_gravity(GravityLaw::Log { c: 1.0 });
        assert_eq!(m.clone().with_temperature(0.5).integrability(0.1).verdict, crate::gibbs::Integrability::Finite);
        assert_eq!(m.with_temperature(1.5).integrability(0.1).verdict, crate::gibbs::Integrability::Unknown);
        let z = model(2, 2).with_gravity(GravityLaw::Zero);
        assert!(z.hypotheses().iter().any(|h| !h.holds));
        assert_eq!(z.integrability(0.1).verdict, crate::gibbs::Integrability::Unknown);
    }
}
