//! Small dense and sparse linear-algebra kernels used by the solvers.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Column access needed by coordinate descent.
pub trait Design {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `x_j^T v`
    fn col_dot(&self, j: usize, v: ArrayView1<'_, f64>) -> f64;
    /// `v += alpha * x_j`
    fn col_axpy(&self, j: usize, alpha: f64, v: &mut Array1<f64>);
    fn col_sq_norm(&self, j: usize) -> f64;
}

impl Design for Array2<f64> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }

    fn n_cols(&self) -> usize {
        self.ncols()
    }

    fn col_dot(&self, j: usize, v: ArrayView1<'_, f64>) -> f64 {
        self.column(j).dot(&v)
    }

    fn col_axpy(&self, j: usize, alpha: f64, v: &mut Array1<f64>) {
        v.scaled_add(alpha, &self.column(j));
    }

    fn col_sq_norm(&self, j: usize) -> f64 {
        let c = self.column(j);
        c.dot(&c)
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n_rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from per-column `(row, value)` lists. Rows within a column must be distinct.
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_by_key(|&(r, _)| r);
            for (r, v) in col {
                assert!(r < n_rows, "row index {r} out of bounds for {n_rows} rows");
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n_rows,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero `(row, value)` entries of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols()));
        for j in 0..self.n_cols() {
            for (r, v) in self.column(j) {
                out[[r, j]] = v;
            }
        }
        out
    }

    pub fn dot(&self, v: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_rows);
        for j in 0..self.n_cols() {
            self.col_axpy(j, v[j], &mut out);
        }
        out
    }
}

impl Design for CscMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    fn col_dot(&self, j: usize, v: ArrayView1<'_, f64>) -> f64 {
        self.column(j).map(|(r, x)| x * v[r]).sum()
    }

    fn col_axpy(&self, j: usize, alpha: f64, v: &mut Array1<f64>) {
        for (r, x) in self.column(j) {
            v[r] += alpha * x;
        }
    }

    fn col_sq_norm(&self, j: usize) -> f64 {
        self.column(j).map(|(_, x)| x * x).sum()
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch("cholesky needs a square matrix".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for m in 0..j {
                sum -= l[[i, m]] * l[[j, m]];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// `log det A` from its Cholesky factor.
pub fn log_det_cholesky(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solves `L L^T x = b`.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for m in 0..i {
            s -= l[[i, m]] * z[m];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for m in (i + 1)..n {
            s -= l[[m, i]] * z[m];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// `A^{-1}` for symmetric positive-definite `A`, via its Cholesky factor.
pub fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    let mut e = Array1::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        inv.column_mut(j).assign(&cholesky_solve(l, &e));
    }
    inv
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = m.diag().to_vec();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by power iteration
/// from a seeded random start. Stops once the Rayleigh quotient changes by less than
/// `rel_tol` relative, or after `max_iter` multiplications.
pub fn power_iteration(a: &Array2<f64>, max_iter: usize, rel_tol: f64, seed: u64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.5);
    v /= v.dot(&v).sqrt();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = a.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Largest eigenvalue of the Gram matrix `X^T X`.
///
/// Uses exact Jacobi eigenvalues for up to 100 columns and power iteration beyond.
pub fn gram_max_eigenvalue(x: &Array2<f64>, seed: u64) -> f64 {
    // X^T X and X X^T share nonzero eigenvalues; use the smaller one.
    let gram = if x.ncols() <= x.nrows() {
        x.t().dot(x)
    } else {
        x.dot(&x.t())
    };
    if gram.nrows() <= 100 {
        symmetric_eigenvalues(&gram).last().copied().unwrap_or(0.0).max(0.0)
    } else {
        power_iteration(&gram, 200, 1e-8, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_roundtrip_and_logdet() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 3.0, 0.5], [0.4, 0.5, 2.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        assert!((&back - &a).iter().all(|v| v.abs() < 1e-12));
        let eig = symmetric_eigenvalues(&a);
        let log_det: f64 = eig.iter().map(|v| v.ln()).sum();
        assert!((log_det_cholesky(&l) - log_det).abs() < 1e-10);
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, &b);
        assert!((&a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-12));
        let inv = cholesky_inverse(&l);
        let eye = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                assert!((eye[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(cholesky(&array![[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn eigenvalue_routes_agree() {
        let x = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((gram_max_eigenvalue(&x, 0) - 9.0).abs() < 1e-12);
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let exact = 2.0 + 2f64.sqrt();
        assert!((symmetric_eigenvalues(&a)[2] - exact).abs() < 1e-12);
        assert!((power_iteration(&a, 1000, 1e-14, 3) - exact).abs() < 1e-8);
    }

    #[test]
    fn sparse_matches_dense() {
        let dense = array![[1.0, 0.0, 2.0], [0.0, 0.0, -1.0], [3.0, 4.0, 0.0]];
        let sparse = CscMatrix::from_columns(
            3,
            vec![vec![(2, 3.0), (0, 1.0)], vec![(2, 4.0)], vec![(0, 2.0), (1, -1.0)]],
        );
        assert_eq!(sparse.to_dense(), dense);
        assert_eq!(sparse.nnz(), 5);
        let v = array![1.0, 2.0, 3.0];
        for j in 0..3 {
            assert_eq!(sparse.col_dot(j, v.view()), dense.col_dot(j, v.view()));
            assert_eq!(sparse.col_sq_norm(j), dense.col_sq_norm(j));
        }
        assert_eq!(sparse.dot(&v), dense.dot(&v));
    }
}
