//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate gradient.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Square matrix in CSR layout with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists. Columns must be sorted and unique.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < n);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries `(column, value)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    /// `Ax` for a matrix whose rows sum to zero, evaluated as
    /// `Σ_{j≠i} A_ij (x_j - x_i)` so that large entries acting on nearly
    /// constant data do not cancel.
    pub fn mul_zero_row_sum(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(j, a)| a * (x[j] - x[i]))
                    .sum()
            })
            .collect()
    }

    /// `xᵀAx` for a symmetric matrix whose rows sum to zero, evaluated as
    /// `-Σ_{i<j} A_ij (x_i - x_j)²`.
    pub fn zero_row_sum_form(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                if j > i {
                    total -= a * (x[i] - x[j]).powi(2);
                }
            }
        }
        total
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Restriction to the index set `keep` (given in increasing order) with
    /// `slot[i]` the new index of `i`, or `usize::MAX` if dropped.
    pub fn submatrix(&self, keep: &[usize], slot: &[usize]) -> Self {
        let rows = keep
            .iter()
            .map(|&i| {
                self.row(i)
                    .filter(|&(j, _)| slot[j] != usize::MAX)
                    .map(|(j, v)| (slot[j], v))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(vᵀ diag(inv_diag) v)^½`.
pub fn jacobi_norm(v: &[f64], inv_diag: &[f64]) -> f64 {
    v.iter()
        .zip(inv_diag)
        .map(|(x, d)| x * x * d)
        .sum::<f64>()
        .sqrt()
}

/// Iteration count and final relative residual of a CG run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `A x = b` by Jacobi-preconditioned CG starting from `x`.
///
/// Residuals are measured in the Jacobi norm `‖r‖_D = (rᵀD⁻¹r)^½`, which
/// tracks the energy-norm error far better than `‖r‖₂` when the diagonal
/// spans many orders of magnitude. Stops when
/// `‖b - Ax‖_D <= tol · max(‖b‖_D, scale)`; `scale` guards the case of a
/// right-hand side that vanishes up to rounding.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    scale: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let reference = jacobi_norm(b, &inv_diag).max(scale);
    if reference == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = a.mul(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = rz.max(0.0).sqrt();
    let mut iterations = 0;
    while res > tol * reference {
        if iterations == max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res / reference,
            });
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence {
                iterations,
                residual: res / reference,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = rz.max(0.0).sqrt();
        iterations += 1;
    }
    Ok(CgStats {
        iterations,
        residual: res / reference,
    })
}

/// Extreme Ritz values `(min, max)` of `steps` Lanczos iterations from a
/// seeded random start.
pub fn lanczos_extremes(a: &CsrMatrix, steps: usize, seed: u64) -> (f64, f64) {
    let n = a.dim();
    let steps = steps.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q_norm = norm(&q);
    q.iter_mut().for_each(|v| *v /= q_norm);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut w = a.mul(&q);
        let alpha = dot(&w, &q);
        alphas.push(alpha);
        for (wi, qi) in w.iter_mut().zip(&q) {
            *wi -= alpha * qi;
        }
        if let Some(prev) = basis.last() {
            let b = betas[k - 1];
            for (wi, pi) in w.iter_mut().zip(prev) {
                *wi -= b * pi;
            }
        }
        basis.push(q.clone());
        // full reorthogonalization keeps the few Ritz values honest
        for v in &basis {
            let c = dot(&w, v);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
        let beta = norm(&w);
        if k + 1 == steps || beta <= 1e-14 * alpha.abs().max(1e-300) {
            break;
        }
        betas.push(beta);
        q = w.into_iter().map(|v| v / beta).collect();
    }
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
