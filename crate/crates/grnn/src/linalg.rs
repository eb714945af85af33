//! Small dense linear algebra kernels: a row-major matrix, a cyclic Jacobi
//! eigensolver for symmetric matrices, and an LU solve with partial pivoting.
//!
//! The sizes involved are modest (covariances of a few hundred bands,
//! propagation systems up to a couple thousand superpixels), so simple dense
//! routines are sufficient and keep results deterministic.

use crate::error::{GrnnError, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Row k holds the eigenvector for `values[k]`.
    pub vectors: Mat,
}

/// Cyclic Jacobi eigendecomposition for a symmetric `n x n` matrix.
///
/// Converges quadratically; sweeps stop once the off-diagonal Frobenius mass
/// falls below `1e-14` relative to the diagonal scale. Eigenvector signs are
/// fixed so that the entry of largest magnitude is positive.
pub fn sym_eigen(a: &Mat) -> SymEigen {
    assert_eq!(a.rows, a.cols, "sym_eigen needs a square matrix");
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);

    let scale: f64 = (0..n)
        .map(|i| m.at(i, i).abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.at(p, q).abs();
            }
        }
        if off <= tol * (n as f64) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= tol * 1e-4 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m.at(j, j)
            .partial_cmp(&m.at(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = Mat::zeros(n, n);
    for (row, &idx) in order.iter().enumerate() {
        values.push(m.at(idx, idx));
        for k in 0..n {
            *vectors.at_mut(row, k) = v.at(k, idx);
        }
        // sign convention: largest-magnitude entry positive
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for k in 0..n {
            let a = vectors.at(row, k).abs();
            if a > best_abs {
                best_abs = a;
                best = k;
            }
        }
        if vectors.at(row, best) < 0.0 {
            for k in 0..n {
                *vectors.at_mut(row, k) = -vectors.at(row, k);
            }
        }
    }

    SymEigen { values, vectors }
}

/// Solve `A X = B` in place via LU decomposition with partial pivoting.
///
/// `b` holds the right-hand sides as columns and is overwritten with the
/// solution. Fails on singular (to working precision) systems.
pub fn lu_solve(a: &Mat, b: &mut Mat) -> Result<()> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(a.rows, b.rows);
    let n = a.rows;
    let nrhs = b.cols;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let mut pivot = col;
        let mut max = lu.at(col, col).abs();
        for r in (col + 1)..n {
            let v = lu.at(r, col).abs();
            if v > max {
                max = v;
                pivot = r;
            }
        }
        if max < 1e-300 {
            return Err(GrnnError::Solve(format!(
                "singular system at column {col}"
            )));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = lu.at(col, k);
                *lu.at_mut(col, k) = lu.at(pivot, k);
                *lu.at_mut(pivot, k) = tmp;
            }
            perm.swap(col, pivot);
        }
        let inv = 1.0 / lu.at(col, col);
        for r in (col + 1)..n {
            let f = lu.at(r, col) * inv;
            *lu.at_mut(r, col) = f;
            for k in (col + 1)..n {
                *lu.at_mut(r, k) -= f * lu.at(col, k);
            }
        }
    }

    // apply row permutation to b
    let mut pb = Mat::zeros(n, nrhs);
    for r in 0..n {
        let src = perm[r];
        pb.row_mut(r).copy_from_slice(b.row(src));
    }

    // forward substitution (unit lower triangle)
    for r in 1..n {
        for k in 0..r {
            let f = lu.at(r, k);
            for j in 0..nrhs {
                *pb.at_mut(r, j) -= f * pb.at(k, j);
            }
        }
    }
    // back substitution
    for r in (0..n).rev() {
        for k in (r + 1)..n {
            let f = lu.at(r, k);
            for j in 0..nrhs {
                *pb.at_mut(r, j) -= f * pb.at(k, j);
            }
        }
        let inv = 1.0 / lu.at(r, r);
        for j in 0..nrhs {
            *pb.at_mut(r, j) *= inv;
        }
    }
    *b = pb;
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
