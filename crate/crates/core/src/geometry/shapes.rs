//! Shipped constraint families.

use super::Constraint;
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;
use std::sync::Arc;

/// f(x) = a·x + b
#[derive(Clone, Debug)]
pub struct Affine<S> {
    normal: Vec<S>,
    offset: S,
    norm: S,
}

impl<S: Scalar> Affine<S> {
    pub fn new(normal: Vec<S>, offset: S) -> Self {
        let norm = crate::linalg::norm(&normal);
        Self {
            normal,
            offset,
            norm,
        }
    }
}

impl<S: Scalar> Constraint<S> for Affine<S> {
    fn value(&self, x: &[S]) -> S {
        dot(&self.normal, x) + self.offset
    }
    fn gradient(&self, _x: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.normal);
    }
    fn hessian_bound(&self) -> S {
        S::zero()
    }
    fn grad_floor(&self) -> S {
        self.norm
    }
}

/// Ball over a subset of coordinates (`axes`), a cylinder in the full space.
#[derive(Clone, Debug)]
pub struct Ball<S> {
    center: Vec<S>,
    radius: S,
    axes: Vec<usize>,
    inside: bool,
}

impl<S: Scalar> Ball<S> {
    /// f(x) = r² − |x_A − c|²: stay inside.
    pub fn inside(center: Vec<S>, radius: S, axes: Vec<usize>) -> Self {
        assert_eq!(center.len(), axes.len());
        Self {
            center,
            radius,
            axes,
            inside: true,
        }
    }

    /// f(x) = |x_A − c|² − r²: stay outside.
    pub fn outside(center: Vec<S>, radius: S, axes: Vec<usize>) -> Self {
        assert_eq!(center.len(), axes.len());
        Self {
            center,
            radius,
            axes,
            inside: false,
        }
    }

    fn sq(&self, x: &[S]) -> S {
        self.axes
            .iter()
            .zip(&self.center)
            .map(|(&a, &c)| (x[a] - c) * (x[a] - c))
            .sum()
    }

    fn sign(&self) -> S {
        if self.inside {
            -S::one()
        } else {
            S::one()
        }
    }
}

impl<S: Scalar> Constraint<S> for Ball<S> {
    fn value(&self, x: &[S]) -> S {
        self.sign() * (self.sq(x) - self.radius * self.radius)
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        let s = self.sign() * S::two();
        for (&a, &c) in self.axes.iter().zip(&self.center) {
            out[a] = s * (x[a] - c);
        }
    }
    fn hessian_bound(&self) -> S {
        S::two()
    }
    fn grad_floor(&self) -> S {
        S::two() * self.radius
    }
    fn scale(&self) -> S {
        self.radius * self.radius
    }
}

/// g(y) = f(Θy), ∇g(y) = Θᵀ∇f(Θy).
#[derive(Clone, Debug)]
pub struct Transformed<S: Scalar> {
    inner: Arc<dyn Constraint<S>>,
    theta: Matrix<S>,
    hessian_bound: S,
    grad_floor: S,
}

impl<S: Scalar> Transformed<S> {
    pub fn new(inner: Arc<dyn Constraint<S>>, theta: Matrix<S>, theta_inv_norm: S) -> Self {
        let tn = theta.spectral_norm();
        Self {
            hessian_bound: inner.hessian_bound() * tn * tn,
            grad_floor: inner.grad_floor() / theta_inv_norm,
            inner,
            theta,
        }
    }
}

impl<S: Scalar> Constraint<S> for Transformed<S> {
    fn value(&self, y: &[S]) -> S {
        self.inner.value(&self.theta.apply(y))
    }
    fn gradient(&self, y: &[S], out: &mut [S]) {
        let x = self.theta.apply(y);
        let mut g = vec![S::zero(); y.len()];
        self.inner.gradient(&x, &mut g);
        self.theta.tr_mul_vec(&g, out);
    }
    fn hessian_bound(&self) -> S {
        self.hessian_bound
    }
    fn grad_floor(&self) -> S {
        self.grad_floor
    }
    fn scale(&self) -> S {
        self.inner.scale()
    }
}

/// f̲(x̲) = f(x̲ with 0 inserted at `dropped`).
#[derive(Clone, Debug)]
pub struct Projected<S: Scalar> {
    inner: Arc<dyn Constraint<S>>,
    dropped: usize,
}

impl<S: Scalar> Projected<S> {
    pub fn new(inner: Arc<dyn Constraint<S>>, dropped: usize) -> Self {
        Self { inner, dropped }
    }

    fn lift(&self, x: &[S]) -> Vec<S> {
        let mut full = Vec::with_capacity(x.len() + 1);
        full.extend_from_slice(&x[..self.dropped]);
        full.push(S::zero());
        full.extend_from_slice(&x[self.dropped..]);
        full
    }
}

impl<S: Scalar> Constraint<S> for Projected<S> {
    fn value(&self, x: &[S]) -> S {
        self.inner.value(&self.lift(x))
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        let full = self.lift(x);
        let mut g = vec![S::zero(); full.len()];
        self.inner.gradient(&full, &mut g);
        g.remove(self.dropped);
        out.copy_from_slice(&g);
    }
    fn hessian_bound(&self) -> S {
        self.inner.hessian_bound()
    }
    fn grad_floor(&self) -> S {
        self.inner.grad_floor()
    }
    fn scale(&self) -> S {
        self.inner.scale()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::finite_difference_gradient;

    #[test]
    fn ball_gradients_match_finite_differences() {
        let b = Ball::<f64>::outside(vec![0.5, -1.0], 0.7, vec![0, 2]);
        let x = [1.3, 4.0, 0.2];
        let mut g = [0.0f64; 3];
        b.gradient(&x, &mut g);
        let fd = finite_difference_gradient(&b, &x, 1e-5);
        for k in 0..3 {
            assert!((g[k] - fd[k]).abs() <= 1e-6 * (1.0 + g[k].abs()));
        }
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn transformed_chain_rule() {
        let f: Arc<dyn Constraint<f64>> = Arc::new(Ball::inside(vec![0.0, 0.0], 2.0, vec![0, 1]));
        let theta = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0]]).unwrap();
        let inv = theta.inverse().unwrap().spectral_norm();
        let g = Transformed::new(f, theta, inv);
        let y = [0.3, -0.4];
        let mut grad = [0.0; 2];
        g.gradient(&y, &mut grad);
        let fd = finite_difference_gradient(&g, &y, 1e-5);
        for k in 0..2 {
            assert!((grad[k] - fd[k]).abs() < 1e-8);
        }
    }
}
