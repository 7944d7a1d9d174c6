//! Constraint evaluation, active sets and the min-norm point of the hull of
//! active unit normals.

pub mod hull;
pub mod shapes;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Debug;
use std::sync::Arc;

pub use hull::{cone_axis, min_norm_in_hull, ConeAxis, HullResult};

/// A point of the ambient space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigVector<S>(Vec<S>);

impl<S: Scalar> ConfigVector<S> {
    pub fn new(coords: Vec<S>) -> Result<Self> {
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![S::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }
}

impl<S> std::ops::Deref for ConfigVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

/// One smooth constraint `f`; the domain is where every `f > 0`.
pub trait Constraint<S: Scalar>: Send + Sync + Debug {
    fn value(&self, x: &[S]) -> S;

    /// Writes the full gradient into `out` (length = ambient dimension).
    fn gradient(&self, x: &[S], out: &mut [S]);

    /// Uniform bound on the operator norm of the Hessian.
    fn hessian_bound(&self) -> S;

    /// Lower bound on |∇f| on the vanishing set within the closed domain.
    fn grad_floor(&self) -> S;

    /// Typical magnitude of the value; tolerances are relative to it.
    fn scale(&self) -> S {
        S::one()
    }
}

/// Prunes the constraints that cannot vanish near a point. Must return a
/// superset of every constraint that takes a nonpositive value somewhere
/// within Euclidean distance `reach` of `x`, in increasing index order.
pub trait CandidatePruner<S: Scalar>: Send + Sync + Debug {
    fn candidates(&self, x: &[S], reach: S) -> Vec<usize>;
}

#[derive(Clone, Debug)]
pub struct ConstraintEntry<S: Scalar> {
    pub id: String,
    pub f: Arc<dyn Constraint<S>>,
}

/// Fixed obliquity matrix Θ with the reflection metric ΘΘᵀ precomputed.
#[derive(Clone, Debug)]
pub struct Obliquity<S: Scalar> {
    theta: Matrix<S>,
    theta_inv: Matrix<S>,
    metric: Matrix<S>,
    diagonal: bool,
    identity: bool,
}

impl<S: Scalar> Obliquity<S> {
    pub fn identity(dim: usize) -> Self {
        let id = Matrix::identity(dim);
        Self {
            theta: id.clone(),
            theta_inv: id.clone(),
            metric: id,
            diagonal: true,
            identity: true,
        }
    }

    pub fn new(theta: Matrix<S>) -> Result<Self> {
        let condition = theta.condition_number();
        let limit = S::one() / (S::epsilon() * S::c(1e3));
        match condition {
            Some(c) if c < limit && theta.determinant().abs() > S::zero() => {}
            other => {
                return Err(Error::SingularMatrix {
                    condition: other.map_or(f64::INFINITY, |c| c.f64()),
                })
            }
        }
        let theta_inv = theta.inverse().expect("checked invertible");
        let metric = theta.matmul(&theta.transpose());
        Ok(Self {
            diagonal: theta.is_diagonal(),
            identity: theta.is_identity(),
            theta,
            theta_inv,
            metric,
        })
    }

    pub fn theta(&self) -> &Matrix<S> {
        &self.theta
    }

    pub fn theta_inv(&self) -> &Matrix<S> {
        &self.theta_inv
    }

    /// ΘΘᵀ
    pub fn metric(&self) -> &Matrix<S> {
        &self.metric
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// out = ΘΘᵀ g
    pub fn reflect_direction(&self, g: &[S], out: &mut [S]) {
        if self.identity {
            out.copy_from_slice(g);
        } else if self.diagonal {
            for (i, (o, &gi)) in out.iter_mut().zip(g).enumerate() {
                *o = self.metric[(i, i)] * gi;
            }
        } else {
            self.metric.mul_vec(g, out);
        }
    }
}

/// The finite family of constraints defining the domain, plus Θ.
#[derive(Clone, Debug)]
pub struct ConstraintSet<S: Scalar> {
    dim: usize,
    entries: Vec<ConstraintEntry<S>>,
    obliquity: Obliquity<S>,
    pruner: Option<Arc<dyn CandidatePruner<S>>>,
}

/// One row of [`ConstraintSet::evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<S> {
    pub id: String,
    pub value: S,
    pub gradient: Vec<S>,
}

impl<S: Scalar> ConstraintSet<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            obliquity: Obliquity::identity(dim),
            pruner: None,
        }
    }

    pub fn with_obliquity(mut self, theta: Matrix<S>) -> Result<Self> {
        if theta.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: theta.dim(),
            });
        }
        self.obliquity = Obliquity::new(theta)?;
        Ok(self)
    }

    pub fn set_obliquity(&mut self, obliquity: Obliquity<S>) {
        self.obliquity = obliquity;
    }

    pub fn with_pruner(mut self, pruner: Arc<dyn CandidatePruner<S>>) -> Self {
        self.pruner = Some(pruner);
        self
    }

    pub fn without_pruner(mut self) -> Self {
        self.pruner = None;
        self
    }

    pub fn push(&mut self, id: impl Into<String>, f: Arc<dyn Constraint<S>>) -> Result<()> {
        let id = id.into();
        if self.entries.iter().any(|e| e.id == id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.push(ConstraintEntry { id, f });
        Ok(())
    }

    pub fn with(mut self, id: impl Into<String>, f: impl Constraint<S> + 'static) -> Result<Self> {
        self.push(id, Arc::new(f))?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ConstraintEntry<S>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn obliquity(&self) -> &Obliquity<S> {
        &self.obliquity
    }

    pub fn pruner(&self) -> Option<&Arc<dyn CandidatePruner<S>>> {
        self.pruner.as_ref()
    }

    pub fn check_point(&self, x: &[S]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    /// Constraint indices that may vanish within `reach` of `x`.
    pub fn candidates(&self, x: &[S], reach: S) -> Vec<usize> {
        match &self.pruner {
            Some(p) => p.candidates(x, reach),
            None => (0..self.entries.len()).collect(),
        }
    }

    /// Value and gradient of every constraint, in declaration order.
    pub fn evaluate(&self, x: &[S]) -> Result<Vec<Evaluation<S>>> {
        self.check_point(x)?;
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let mut gradient = vec![S::zero(); self.dim];
                e.f.gradient(x, &mut gradient);
                Evaluation {
                    id: e.id.clone(),
                    value: e.f.value(x),
                    gradient,
                }
            })
            .collect())
    }

    pub fn values(&self, x: &[S]) -> Vec<S> {
        self.entries.iter().map(|e| e.f.value(x)).collect()
    }

    /// Smallest constraint value and its index.
    pub fn min_value(&self, x: &[S]) -> (usize, S) {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.f.value(x)))
            .fold((usize::MAX, S::infinity()), |b, c| if c.1 < b.1 { c } else { b })
    }

    /// Smallest value scaled by each constraint's tolerance scale.
    pub fn min_relative_value(&self, x: &[S]) -> S {
        self.entries
            .iter()
            .map(|e| e.f.value(x) / e.f.scale())
            .fold(S::infinity(), S::min)
    }

    pub fn is_feasible(&self, x: &[S], tol_rel: S) -> bool {
        self.entries
            .iter()
            .all(|e| e.f.value(x) >= -tol_rel * e.f.scale())
    }

    pub fn is_strictly_feasible(&self, x: &[S]) -> bool {
        self.entries.iter().all(|e| e.f.value(x) > S::zero())
    }

    /// Indices of constraints with `f(x) <= act_tol * scale`.
    pub fn active_indices(&self, x: &[S], act_tol: S) -> Vec<usize> {
        self.candidates(x, act_tol)
            .into_iter()
            .filter(|&i| {
                let e = &self.entries[i];
                e.f.value(x) <= act_tol * e.f.scale()
            })
            .collect()
    }

    /// Ids of the constraints with `f(x) <= act_tol * scale`.
    pub fn active_set(&self, x: &[S], act_tol: S) -> Result<HashSet<String>> {
        self.check_point(x)?;
        if act_tol <= S::zero() {
            return Err(Error::InvalidArgument("act_tol must be positive".into()));
        }
        Ok(self
            .active_indices(x, act_tol)
            .into_iter()
            .map(|i| self.entries[i].id.clone())
            .collect())
    }

    /// Unit normals of the given constraints at `x`. Fails when a gradient is
    /// below half its declared floor.
    pub fn unit_normals(&self, x: &[S], indices: &[usize]) -> Result<Vec<Vec<S>>> {
        indices
            .iter()
            .map(|&i| {
                let e = &self.entries[i];
                let mut g = vec![S::zero(); self.dim];
                e.f.gradient(x, &mut g);
                let n = norm(&g);
                if n < e.f.grad_floor() * S::half() || n == S::zero() {
                    return Err(Error::DegenerateGradient {
                        constraint: e.id.clone(),
                        norm: n.f64(),
                        floor: e.f.grad_floor().f64(),
                    });
                }
                Ok(g.into_iter().map(|c| c / n).collect())
            })
            .collect()
    }

    /// δ(0, Conv(x)) over the act_tol-active constraints; `None` when no
    /// constraint is active.
    pub fn hull_distance(&self, x: &[S], act_tol: S) -> Result<Option<(HullResult<S>, Vec<usize>)>> {
        let active = self.active_indices(x, act_tol);
        if active.is_empty() {
            return Ok(None);
        }
        let normals = self.unit_normals(x, &active)?;
        let ids: Vec<String> = active.iter().map(|&i| self.entries[i].id.clone()).collect();
        let hull = min_norm_in_hull(&normals)?.with_ids(&ids);
        Ok(Some((hull, active)))
    }
}

/// Closure-backed constraint, for ad hoc domains in tests and examples.
#[derive(Clone)]
pub struct FnConstraint<S: Scalar> {
    value: Arc<dyn Fn(&[S]) -> S + Send + Sync>,
    gradient: Arc<dyn Fn(&[S], &mut [S]) + Send + Sync>,
    hessian_bound: S,
    grad_floor: S,
    scale: S,
}

impl<S: Scalar> FnConstraint<S> {
    pub fn new(
        value: impl Fn(&[S]) -> S + Send + Sync + 'static,
        gradient: impl Fn(&[S], &mut [S]) + Send + Sync + 'static,
        hessian_bound: S,
        grad_floor: S,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian_bound,
            grad_floor,
            scale: S::one(),
        }
    }

    pub fn with_scale(mut self, scale: S) -> Self {
        self.scale = scale;
        self
    }
}

impl<S: Scalar> Debug for FnConstraint<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnConstraint")
            .field("hessian_bound", &self.hessian_bound)
            .field("grad_floor", &self.grad_floor)
            .finish()
    }
}

impl<S: Scalar> Constraint<S> for FnConstraint<S> {
    fn value(&self, x: &[S]) -> S {
        (self.value)(x)
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        (self.gradient)(x, out)
    }
    fn hessian_bound(&self) -> S {
        self.hessian_bound
    }
    fn grad_floor(&self) -> S {
        self.grad_floor
    }
    fn scale(&self) -> S {
        self.scale
    }
}

/// Central finite-difference gradient, for checking analytic gradients.
pub fn finite_difference_gradient<S: Scalar>(f: &dyn Constraint<S>, x: &[S], h: S) -> Vec<S> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f.value(&probe);
            probe[k] = orig - h;
            let down = f.value(&probe);
            probe[k] = orig;
            (up - down) / (S::two() * h)
        })
        .collect()
}
