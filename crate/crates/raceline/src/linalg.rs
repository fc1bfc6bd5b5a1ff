//! Small dense linear algebra: just enough for the least-squares fit and the
//! CMA-ES covariance eigendecomposition. Sizes stay in the tens, so a plain
//! row-major matrix with Gaussian elimination and cyclic Jacobi is adequate.

use std::ops::{Index, IndexMut};

use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![T::zero(); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^T x
    pub fn mul_vec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (j, a) in row.iter().enumerate() {
                y[j] += *a * x[i];
            }
        }
        y
    }

    /// Solves A x = b in place by Gaussian elimination with partial pivoting.
    /// A must be square; returns the solution vector.
    pub fn solve(mut self, mut b: Vec<T>) -> Result<Vec<T>> {
        let n = self.rows;
        assert_eq!(self.cols, n);
        assert_eq!(b.len(), n);
        for col in 0..n {
            let mut piv = col;
            let mut best = self[(col, col)].abs();
            for r in col + 1..n {
                let v = self[(r, col)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > T::zero()) || !best.is_finite() {
                return Err(Error::IllConditioned(format!(
                    "zero pivot in column {col}"
                )));
            }
            if piv != col {
                for c in 0..n {
                    let tmp = self[(col, c)];
                    self[(col, c)] = self[(piv, c)];
                    self[(piv, c)] = tmp;
                }
                b.swap(col, piv);
            }
            let inv = T::one() / self[(col, col)];
            for r in col + 1..n {
                let f = self[(r, col)] * inv;
                if f == T::zero() {
                    continue;
                }
                for c in col..n {
                    let v = self[(col, c)];
                    self[(r, c)] = self[(r, c)] - f * v;
                }
                let bc = b[col];
                b[r] = b[r] - f * bc;
            }
        }
        for col in (0..n).rev() {
            let mut acc = b[col];
            for c in col + 1..n {
                acc = acc - self[(col, c)] * b[c];
            }
            b[col] = acc / self[(col, col)];
        }
        Ok(b)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors); eigenvectors are the columns of the
/// returned matrix, so A = V diag(w) V^T. Not sorted.
pub fn jacobi_eigen_sym<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut a = a.clone();
    // Work on the symmetrized copy so tiny asymmetries from accumulated
    // updates cannot stall convergence.
    for r in 0..n {
        for c in r + 1..n {
            let s = (a[(r, c)] + a[(c, r)]) * T::of(0.5);
            a[(r, c)] = s;
            a[(c, r)] = s;
        }
    }
    let mut v = Matrix::identity(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = T::zero();
        for r in 0..n {
            for c in r + 1..n {
                off += a[(r, c)] * a[(r, c)];
            }
        }
        if off <= T::epsilon() * T::epsilon() * T::from_usize_exact(n * n) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let tau = (aqq - app) / (T::of(2.0) * apq);
                // Stable rotation angle: t = sign(tau) / (|tau| + sqrt(1+tau^2))
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..n).map(|i| a[(i, i)]).collect();
    (w, v)
}
