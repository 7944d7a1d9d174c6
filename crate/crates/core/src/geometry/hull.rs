//! Minimum-norm point of the convex hull of finitely many unit vectors.
//!
//! Wolfe's active-simplex method: keep a corral of affinely independent
//! points, project the origin onto their affine hull, and drop points whose
//! barycentric weight would turn negative. Terminates when the current point
//! `z` satisfies `z·u >= |z|² - tol` for every input `u`, which is exactly the
//! optimality condition over the simplex.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct HullResult<S> {
    pub min_norm_point: Vec<S>,
    pub distance: S,
    /// Convex weights, aligned with the input order.
    pub weights: Vec<S>,
    /// Labels for the weights (input positions unless relabelled).
    pub ids: Vec<String>,
    /// max over inputs of (|z|² − z·u), ≤ 0 up to rounding at an exact optimum.
    pub kkt_defect: S,
}

impl<S: Scalar> HullResult<S> {
    pub fn with_ids(mut self, ids: &[String]) -> Self {
        assert_eq!(ids.len(), self.weights.len());
        self.ids = ids.to_vec();
        self
    }

    pub fn coefficients(&self) -> BTreeMap<String, S> {
        self.ids.iter().cloned().zip(self.weights.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeAxis<S> {
    pub axis: Vec<S>,
    pub beta: S,
    /// Set when the origin lies in the hull: no cone exists and `axis` is
    /// an arbitrary unit vector.
    pub degenerate: bool,
}

fn validate<S: Scalar>(vectors: &[Vec<S>]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::EmptyInput)?;
    let dim = first.len();
    let tol = S::c(1e-9).max(S::epsilon() * S::c(64.0));
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let n = norm(v);
        if !n.is_finite() || (n - S::one()).abs() > tol {
            return Err(Error::NonUnitVector {
                index,
                norm: n.f64(),
            });
        }
    }
    Ok(dim)
}

/// Weights minimising |Σ v_i p_i| subject to Σ v_i = 1 (affine projection of
/// the origin).
fn affine_min<S: Scalar>(points: &[&[S]]) -> Option<Vec<S>> {
    let k = points.len();
    let mut m = Matrix::zeros(k + 1);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = dot(points[i], points[j]);
        }
        m[(i, k)] = S::one();
        m[(k, i)] = S::one();
    }
    let mut rhs = vec![S::zero(); k + 1];
    rhs[k] = S::one();
    let sol = m.solve(&rhs)?;
    let v: Vec<S> = sol[..k].to_vec();
    v.iter().all(|c| c.is_finite()).then_some(v)
}

fn combine<S: Scalar>(vectors: &[Vec<S>], corral: &[usize], w: &[S], dim: usize) -> Vec<S> {
    let mut x = vec![S::zero(); dim];
    for (&i, &wi) in corral.iter().zip(w) {
        crate::linalg::axpy(wi, &vectors[i], &mut x);
    }
    x
}

/// Minimum-norm point of Conv(vectors); inputs must be unit vectors.
/// The inputs are processed in lexicographic order, so the result does not
/// depend on how they are listed.
pub fn min_norm_in_hull<S: Scalar>(vectors: &[Vec<S>]) -> Result<HullResult<S>> {
    let dim = validate(vectors)?;
    let m = vectors.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        vectors[a]
            .iter()
            .zip(&vectors[b])
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<S>> = order.iter().map(|&i| vectors[i].clone()).collect();
    let vectors = &sorted[..];
    let stop = S::epsilon() * S::c(64.0);
    let w_floor = S::epsilon() * S::c(16.0);

    let mut corral = vec![0usize];
    let mut w = vec![S::one()];
    let mut x = vectors[0].clone();

    for _major in 0..(100 * m + 100) {
        let xx = dot(&x, &x);
        let (j, xp) = (0..m)
            .map(|i| (i, dot(&x, &vectors[i])))
            .fold((0, S::infinity()), |b, c| if c.1 < b.1 { c } else { b });
        if xp >= xx - stop || corral.contains(&j) {
            break;
        }
        corral.push(j);
        w.push(S::zero());

        loop {
            let pts: Vec<&[S]> = corral.iter().map(|&i| vectors[i].as_slice()).collect();
            let Some(v) = affine_min(&pts) else {
                // affinely dependent corral: numerical stall, keep the last iterate
                corral.pop();
                w.pop();
                break;
            };
            if v.iter().all(|&c| c > w_floor) {
                w = v;
                break;
            }
            let theta = w
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi <= w_floor)
                .map(|(&wi, &vi)| wi / (wi - vi))
                .fold(S::one(), S::min);
            for (wi, &vi) in w.iter_mut().zip(&v) {
                *wi = (S::one() - theta) * *wi + theta * vi;
            }
            let mut k = 0;
            while k < corral.len() {
                if w[k] <= w_floor {
                    corral.remove(k);
                    w.remove(k);
                } else {
                    k += 1;
                }
            }
            if corral.len() <= 1 {
                w = vec![S::one(); corral.len()];
                break;
            }
            let total: S = w.iter().copied().sum();
            w.iter_mut().for_each(|c| *c /= total);
        }
        x = combine(vectors, &corral, &w, dim);
    }

    let mut weights = vec![S::zero(); m];
    for (&i, &wi) in corral.iter().zip(&w) {
        weights[i] += wi.max(S::zero());
    }
    let total: S = weights.iter().copied().sum();
    weights.iter_mut().for_each(|c| *c /= total);
    let mut z = vec![S::zero(); dim];
    for (v, &c) in vectors.iter().zip(&weights) {
        crate::linalg::axpy(c, v, &mut z);
    }
    let zz = dot(&z, &z);
    let kkt_defect = vectors
        .iter()
        .map(|u| zz - dot(&z, u))
        .fold(S::neg_infinity(), S::max);
    let mut unsorted = vec![S::zero(); m];
    for (k, &i) in order.iter().enumerate() {
        unsorted[i] = weights[k];
    }
    Ok(HullResult {
        distance: zz.sqrt(),
        min_norm_point: z,
        weights: unsorted,
        ids: (0..m).map(|i| i.to_string()).collect(),
        kkt_defect,
    })
}

/// Axis and half-aperture cosine of the narrowest cone around the inputs:
/// `beta = max_{|v|=1} min_u v·u`, attained at `z/|z|`.
pub fn cone_axis<S: Scalar>(vectors: &[Vec<S>]) -> Result<ConeAxis<S>> {
    let hull = min_norm_in_hull(vectors)?;
    let dim = hull.min_norm_point.len();
    if hull.distance <= S::hull_tol() {
        let mut axis = vec![S::zero(); dim];
        axis[0] = S::one();
        return Ok(ConeAxis {
            axis,
            beta: S::zero(),
            degenerate: true,
        });
    }
    let axis: Vec<S> = hull
        .min_norm_point
        .iter()
        .map(|&c| c / hull.distance)
        .collect();
    let beta = vectors
        .iter()
        .map(|u| dot(&axis, u))
        .fold(S::infinity(), S::min);
    Ok(ConeAxis {
        axis,
        beta,
        degenerate: false,
    })
}
