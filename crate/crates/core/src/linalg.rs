//! Small dense symmetric positive-definite solves.
//!
//! The matched filter whitens band vectors against a band×band covariance
//! matrix (a few tens of rows), so a plain Cholesky factorization is all
//! that is needed. Solves go through the factor; the inverse is never
//! formed explicitly.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix. Returns `None` when the matrix is not
    /// positive definite (a non-positive pivot appears).
    pub fn factor(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Some(Self { lower: l })
    }

    /// Like [`Cholesky::factor`] but tolerates zero (not negative) pivots,
    /// for positive semidefinite matrices such as simulated background
    /// covariances. A zero pivot zeroes its column of the factor.
    pub fn factor_semidefinite(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
        let tol = scale * 1e-12;
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !s.is_finite() || s < -tol {
                        return None;
                    }
                    l[(i, i)] = if s <= tol { 0.0 } else { s.sqrt() };
                } else {
                    l[(i, j)] = if l[(j, j)] == 0.0 { 0.0 } else { s / l[(j, j)] };
                }
            }
        }
        Some(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solve `A x = b` via forward and back substitution.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// `L v`, used to draw correlated vectors from white noise.
    pub fn mul_lower(&self, v: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(v.len(), n);
        let l = &self.lower;
        let mut out = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += l[(i, k)] * v[k];
            }
            out[i] = s;
        }
        out
    }
}

pub fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}
