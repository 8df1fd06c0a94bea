//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The tall orientation of the input is orthogonalized column-pair by
//! column-pair; accumulated rotations give the right factor and the final
//! column norms are the singular values. Accurate to working precision for
//! the small matrices used throughout the crate.

use serde::Serialize;

use super::{Matrix, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const ROTATION_TOL: f64 = 1e-14;

/// Non-increasing singular values together with the relative tolerance used
/// to count numeric rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
    rank_tolerance: f64,
}

impl SingularSpectrum {
    /// Sorts `values` non-increasing. Panics on negative or non-finite input.
    pub fn new(mut values: Vec<f64>, rank_tolerance: f64) -> Self {
        assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0), "invalid singular values");
        assert!(rank_tolerance > 0.0, "rank tolerance must be positive");
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values, rank_tolerance }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn with_tolerance(&self, tol: f64) -> Self {
        Self::new(self.values.clone(), tol)
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Count of values above `rank_tolerance × max`; zero for the zero matrix.
    pub fn rank(&self) -> usize {
        let max = self.max();
        if max == 0.0 {
            return 0;
        }
        let cut = self.rank_tolerance * max;
        self.values.iter().take_while(|&&v| v > cut).count()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `i`-th value (0-based), zero past the end.
    pub fn get(&self, i: usize) -> f64 {
        self.values.get(i).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left factor, `rows × p` with orthonormal columns.
    pub u: Matrix,
    pub s: SingularSpectrum,
    /// Right factor transposed, `p × cols` with orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// `U · diag(S) · Vt`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for j in 0..us.cols() {
            let sj = self.s.get(j);
            for i in 0..us.rows() {
                us[(i, j)] *= sj;
            }
        }
        &us * &self.vt
    }
}

/// Thin SVD with `p = min(rows, cols)` singular triplets.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a)?;
        Ok(SvdResult { u, s: SingularSpectrum::new(s, DEFAULT_RANK_TOL), vt: v.transpose() })
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose())?;
        Ok(SvdResult { u: v, s: SingularSpectrum::new(s, DEFAULT_RANK_TOL), vt: u.transpose() })
    }
}

pub fn singular_values(a: &Matrix) -> Result<SingularSpectrum> {
    Ok(svd(a)?.s)
}

/// Number of singular values above `tol × σ_max`.
pub fn numeric_rank(a: &Matrix, tol: f64) -> Result<usize> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(Error::Domain(format!("rank tolerance must be positive, got {tol}")));
    }
    Ok(singular_values(a)?.with_tolerance(tol).rank())
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.sum())
}

/// Returns `(U, σ, V)` for `a` with `rows >= cols`, sorted non-increasing.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() || gamma.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(f64, usize)> = w.iter().enumerate().map(|(j, c)| (dot(c, c).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &(s, j) in &order {
        sigma.push(s);
        v_cols.push(v[j].clone());
        if s > f64::MIN_POSITIVE * 1e10 {
            u_cols.push(w[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_orthonormal(&mut u_cols, m);

    Ok((from_cols(&u_cols, m), sigma, from_cols(&v_cols, n)))
}

/// Fills empty entries of `cols` with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], m: usize) {
    let mut basis = 0;
    for j in 0..cols.len() {
        if !cols[j].is_empty() {
            continue;
        }
        loop {
            let mut cand = vec![0.0; m];
            cand[basis % m] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d = dot(&cand, other);
                    cand.iter_mut().zip(other).for_each(|(x, y)| *x -= d * y);
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > 1e-6 {
                cand.iter_mut().for_each(|x| *x /= nrm);
                cols[j] = cand;
                break;
            }
            assert!(basis < 2 * m + cols.len(), "failed to complete orthonormal basis");
        }
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (xp, xq) = (&mut head[p], &mut tail[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, bq) = (*a, *b);
        *a = c * ap - s * bq;
        *b = s * ap + c * bq;
    }
}

fn from_cols(cols: &[Vec<f64>], rows: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
