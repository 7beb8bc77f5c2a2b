//! Small dense symmetric linear algebra.
//!
//! The matrices this crate factorizes are tiny by numerical-linear-algebra
//! standards — M×M Grams (M is the endmember count) and T×T covariances — so
//! a textbook Cholesky and a cyclic Jacobi eigensolver cover every need
//! without pulling in a LAPACK backend.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factorizes `a = L·Lᵀ`. Returns `None` when a pivot is nonpositive or
    /// non-finite, i.e. when some leading principal minor is not positive.
    pub fn new(a: ArrayView2<'_, f64>) -> Option<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return None;
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[(i, i)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `a·x = b`.
    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_owned();
        // forward: L·y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        // backward: Lᵀ·x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves `a·X = B` column by column.
    pub fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }

    /// Dense inverse `a⁻¹`.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        self.solve_mat(Array2::<f64>::eye(n).view())
    }

    /// The factor itself (lower triangular), e.g. for drawing correlated
    /// Gaussian vectors.
    pub fn factor(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns `(values ascending, vectors as columns)`.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "sym_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    // off-diagonal Frobenius mass we drive to (relative) zero
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)].abs();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let (app, aqq) = (m[(p, p)], m[(q, q)]);
                // zero m[p,q]: tan 2θ = 2·a_pq / (a_pp − a_qq)
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp + s * mkq;
                    m[(k, q)] = -s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk + s * mqk;
                    m[(q, k)] = -s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp + s * vkq;
                    v[(k, q)] = -s * vkp + c * vkq;
                }
            }
        }
    }
    let mut vals: Vec<(f64, usize)> = (0..n).map(|i| (m[(i, i)], i)).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values = Array1::from_iter(vals.iter().map(|&(x, _)| x));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (j, &(_, src)) in vals.iter().enumerate() {
        vectors.column_mut(j).assign(&v.column(src));
    }
    (values, vectors)
}

/// Eigenvalues only (ascending).
pub fn sym_eigenvalues(a: ArrayView2<'_, f64>) -> Array1<f64> {
    sym_eigen(a).0
}

/// 2-norm condition number of a symmetric positive-definite matrix;
/// `f64::INFINITY` when the smallest eigenvalue is not strictly positive.
pub fn spd_condition(a: ArrayView2<'_, f64>) -> f64 {
    let vals = sym_eigenvalues(a);
    let min = vals[0];
    let max = vals[vals.len() - 1];
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral norm of a symmetric matrix: max |eigenvalue|.
pub fn sym_operator_norm(a: ArrayView2<'_, f64>) -> f64 {
    let vals = sym_eigenvalues(a);
    vals[0].abs().max(vals[vals.len() - 1].abs())
}

/// Quadratic form `dᵀ·P·d`.
pub fn quad_form(p: ArrayView2<'_, f64>, d: ArrayView1<'_, f64>) -> f64 {
    debug_assert_eq!(p.nrows(), d.len());
    let pd = p.dot(&d);
    d.dot(&pd)
}
