//! Small dense linear algebra: the ambient dimensions here are at most a few
//! hundred, so row-major `Vec` storage with partial-pivot LU is plenty.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// y += alpha * x
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn diagonal(diag: &[S]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn scaled_identity(n: usize, s: S) -> Self {
        Self::diagonal(&vec![s; n])
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<S>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| {
            (0..self.n).all(|j| self[(i, j)] == if i == j { S::one() } else { S::zero() })
        })
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self[(i, j)] == S::zero()))
    }

    pub fn diag(&self) -> Vec<S> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[S], out: &mut [S]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.n];
        self.mul_vec(x, &mut out);
        out
    }

    /// out = Aᵀ x
    pub fn tr_mul_vec(&self, x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        for (i, &xi) in x.iter().enumerate() {
            if xi == S::zero() {
                continue;
            }
            axpy(xi, &self.data[i * self.n..(i + 1) * self.n], out);
        }
    }

    fn lu(&self) -> Option<(Vec<S>, Vec<usize>, S)> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = S::one();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, S::zero()), |best, c| if c.1 > best.1 { c } else { best });
            if pivot == S::zero() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / d;
                a[i * n + k] = l;
                for j in k + 1..n {
                    let u = a[k * n + j];
                    a[i * n + j] -= l * u;
                }
            }
        }
        Some((a, perm, sign))
    }

    pub fn determinant(&self) -> S {
        match self.lu() {
            None => S::zero(),
            Some((a, _, sign)) => (0..self.n).fold(sign, |acc, i| acc * a[i * self.n + i]),
        }
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[S]) -> Option<Vec<S>> {
        let n = self.n;
        let (a, perm, _) = self.lu()?;
        let mut y: Vec<S> = perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = a[i * n + j];
                y[i] = y[i] - l * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = a[i * n + j];
                y[i] = y[i] - u * y[j];
            }
            y[i] /= a[i * n + i];
        }
        Some(y)
    }

    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        let mut out = Self::zeros(n);
        let mut e = vec![S::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = S::zero());
            e[j] = S::one();
            let col = self.solve(&e)?;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Some(out)
    }

    /// Operator 2-norm, by power iteration on AᵀA.
    pub fn spectral_norm(&self) -> S {
        let n = self.n;
        if n == 0 {
            return S::zero();
        }
        if self.is_diagonal() {
            return self.diag().into_iter().fold(S::zero(), |m, d| m.max(d.abs()));
        }
        let ata = self.transpose().matmul(self);
        // deterministic, non-symmetric start vector
        let mut v: Vec<S> = (0..n).map(|i| S::one() + S::c(i as f64 * 0.1)).collect();
        let mut lambda = S::zero();
        for _ in 0..500 {
            let w = ata.apply(&v);
            let nw = norm(&w);
            if nw == S::zero() {
                return S::zero();
            }
            let next = nw / norm(&v);
            v = w.into_iter().map(|x| x / nw).collect();
            if (next - lambda).abs() <= S::epsilon() * S::c(16.0) * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    /// Spectral condition number, `None` when singular.
    pub fn condition_number(&self) -> Option<S> {
        let inv = self.inverse()?;
        let c = self.spectral_norm() * inv.spectral_norm();
        c.is_finite().then_some(c)
    }
}

impl<S> std::ops::Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.n + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Matrix::<f64>::from_rows(&[vec![2.0, 1.0, 0.0], vec![0.5, 3.0, 1.0], vec![0.0, -1.0, 4.0]])
            .unwrap();
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-14);
            }
        }
        assert!((m.determinant() - (2.0 * 13.0 - 1.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_rotation_scaled() {
        let c = 0.3f64.cos();
        let s = 0.3f64.sin();
        let m = Matrix::<f64>::from_rows(&[vec![3.0 * c, -3.0 * s], vec![3.0 * s, 3.0 * c]]).unwrap();
        assert!((m.spectral_norm() - 3.0).abs() < 1e-12);
        assert!((m.condition_number().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(m.inverse().is_none() || m.condition_number().is_none_or(|c| c > 1e15));
        assert_eq!(m.determinant(), 0.0);
    }
}
