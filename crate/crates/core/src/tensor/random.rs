use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Matrix;

/// Generator used for every random quantity in the crate: xoshiro256++
/// seeded through SplitMix64 (`seed_from_u64`).
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Independent stream for case `case` of a run seeded with `seed`.
pub fn case_rng(seed: u64, case: u64) -> Rng {
    // SplitMix64 finalizer over the pair keeps neighbouring seeds decorrelated.
    let mut z = seed ^ case.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seeded_rng(z ^ (z >> 31))
}

/// Matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(rows, cols, data).expect("normal samples are finite")
}

pub fn gaussian_vector(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Haar-distributed orthogonal matrix: Gram-Schmidt (applied twice) on the
/// columns of a Gaussian matrix, with column signs fixed so the implied
/// triangular factor has a positive diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    loop {
        let g = gaussian_matrix(n, n, &mut rng);
        if let Some(q) = orthonormalize_columns(&g) {
            return q;
        }
    }
}

fn orthonormalize_columns(g: &Matrix) -> Option<Matrix> {
    let (m, n) = g.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.col(j)).collect();
    for j in 0..n {
        let original_norm = norm(&cols[j]);
        let mut diag_sign = 1.0;
        for pass in 0..2 {
            for i in 0..j {
                let d = dot(&cols[i], &cols[j]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= d * y;
                }
            }
            if pass == 0 {
                diag_sign = dot(&cols[j], &g.col(j)).signum();
            }
        }
        let nrm = norm(&cols[j]);
        if nrm <= 1e-8 * original_norm.max(f64::MIN_POSITIVE) {
            return None;
        }
        let s = diag_sign / nrm;
        cols[j].iter_mut().for_each(|x| *x *= s);
    }
    let mut q = Matrix::zeros(m, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    Some(q)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
