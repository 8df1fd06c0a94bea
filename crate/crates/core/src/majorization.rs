//! Executable checks of the singular-value inequalities behind the lower
//! bound: the Gelfand product inequality, its weak-submajorization
//! consequence for convex gauges, and the per-layer chain that combines them.

use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::BlockDepth;
use crate::tensor::{gaussian_matrix, seeded_rng, singular_values, Matrix, Rng, SingularSpectrum, DEFAULT_RANK_TOL};
use crate::witness::{partial_products, penalty, LinearResNetParams};

/// Smallest denominator accepted in a singular-value ratio.
const MIN_RATIO_DENOM: f64 = 1e-300;
const SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct GelfandInstance {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    indices: Vec<usize>,
}

impl GelfandInstance {
    /// `a` is n0×n, `b` n×n, `c` n×n1; `indices` are 1-based, strictly
    /// increasing and at most n.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, indices: Vec<usize>) -> Result<Self> {
        let n = b.rows();
        if !b.is_square() || a.cols() != n || c.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?} do not chain",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        if indices.is_empty() || indices[0] == 0 || indices.windows(2).any(|w| w[0] >= w[1]) || indices[indices.len() - 1] > n {
            return Err(Error::Domain(format!("indices {indices:?} must be strictly increasing within [1, {n}]")));
        }
        Ok(Self { a, b, c, indices })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn with_a(&self, a: Matrix) -> Result<Self> {
        Self::new(a, self.b.clone(), self.c.clone(), self.indices.clone())
    }
}

/// Log of the i-th singular value (1-based), `-∞` when it is numerically zero.
fn log_sigma(s: &SingularSpectrum, i: usize) -> f64 {
    let v = s.get(i - 1);
    if i > s.rank() || v <= 0.0 {
        f64::NEG_INFINITY
    } else {
        v.ln()
    }
}

/// `Σ_j log(σ_{i_j}(ABC)/σ_{i_j}(B)) ≤ Σ_{j≤k} log(σ_j(A)σ_j(C))`.
pub fn gelfand_check(inst: &GelfandInstance) -> Result<InequalityOutcome> {
    let abc = &(&inst.a * &inst.b) * &inst.c;
    let s_abc = singular_values(&abc)?;
    let s_a = singular_values(&inst.a)?;
    let s_b = singular_values(&inst.b)?;
    let s_c = singular_values(&inst.c)?;

    let mut lhs = 0.0;
    for &i in &inst.indices {
        let sb = s_b.get(i - 1);
        if i > s_b.rank() || sb < MIN_RATIO_DENOM {
            return Err(Error::DegenerateIndex { index: i, value: sb });
        }
        lhs += log_sigma(&s_abc, i) - sb.ln();
    }
    let rhs: f64 = (1..=inst.indices.len()).map(|j| log_sigma(&s_a, j) + log_sigma(&s_c, j)).sum();
    let holds = lhs == f64::NEG_INFINITY || lhs <= rhs + SLACK * (1.0 + rhs.abs());
    Ok(InequalityOutcome { lhs, rhs, holds })
}

/// Convex nondecreasing gauges on `[0, ∞)` vanishing at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum ConvexGauge {
    /// `½t²`
    Square,
    /// `s·max(t−1, 0)`
    Hinge { scale: f64 },
    /// `λt`
    Linear { lambda: f64 },
    /// `λL·max(t−1, 0)²`
    HingeSq { lambda: f64, depth: usize },
}

impl ConvexGauge {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ConvexGauge::Square => 0.5 * t * t,
            ConvexGauge::Hinge { scale } => scale * (t - 1.0).max(0.0),
            ConvexGauge::Linear { lambda } => lambda * t,
            ConvexGauge::HingeSq { lambda, depth } => {
                let h = (t - 1.0).max(0.0);
                lambda * depth as f64 * h * h
            }
        }
    }

    /// `f̃` for the residual-block penalty: `λL·max(t−1,0)²` for depth-1
    /// blocks, `λ·max(t−1,0)` for depth-2 blocks.
    pub fn shifted_block_gauge(lambda: f64, depth: usize, block_depth: BlockDepth) -> Self {
        match block_depth {
            BlockDepth::One => ConvexGauge::HingeSq { lambda, depth },
            BlockDepth::Two => ConvexGauge::Hinge { scale: lambda },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvexGauge::Square => "square",
            ConvexGauge::Hinge { .. } => "hinge",
            ConvexGauge::Linear { .. } => "linear",
            ConvexGauge::HingeSq { .. } => "hinge_sq",
        }
    }
}

impl fmt::Display for ConvexGauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `Σ_{i≤r} g(σ_i(A)) ≥ Σ_{i≤r} g(σ_i(AB)/σ_i(B))` with `r = rank(AB)`.
pub fn submajorization_check(a: &Matrix, b: &Matrix, g: ConvexGauge) -> Result<InequalityOutcome> {
    let ab = a.matmul(b)?;
    let s_ab = singular_values(&ab)?;
    let s_a = singular_values(a)?;
    let s_b = singular_values(b)?;
    let r = s_ab.rank();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..r {
        let sb = s_b.get(i);
        if i >= s_b.rank() || sb < MIN_RATIO_DENOM {
            return Err(Error::DegenerateIndex { index: i + 1, value: sb });
        }
        lhs += g.eval(s_a.get(i));
        rhs += g.eval(s_ab.get(i) / sb);
    }
    let holds = lhs >= rhs - SLACK * (1.0 + lhs.abs());
    Ok(InequalityOutcome { lhs, rhs, holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainBound {
    pub bound: f64,
    pub penalty: f64,
    /// Number of tracked singular directions, `rank(f(θ))`.
    pub rank: usize,
}

impl ChainBound {
    pub fn holds(&self) -> bool {
        self.bound <= self.penalty + SLACK * (1.0 + self.penalty)
    }

    pub fn relative_gap(&self) -> f64 {
        (self.penalty - self.bound) / self.penalty.abs().max(f64::MIN_POSITIVE)
    }
}

fn ratio(num: &SingularSpectrum, den: &SingularSpectrum, j: usize, what: &str) -> Result<f64> {
    let d = den.get(j);
    if j >= den.rank() || d < MIN_RATIO_DENOM {
        return Err(Error::Degenerate(format!("σ_{} of {what} vanishes", j + 1)));
    }
    Ok(num.get(j) / d)
}

/// Right-hand side of the layerwise lower bound on the penalty,
///
/// `Σ_{j≤k} [½(σ_j(A)/σ_j(W_u V_L))² + ½(σ_j(W_u V_L)/σ_j(V_L))²
///           + Σ_i f̃(σ_j(V_i)/σ_j(V_{i−1}))]`,
///
/// with `A = f(θ)`, `k = rank(A)` and the partial products `V_i`.
pub fn layer_chain_bound(params: &LinearResNetParams, lambda: f64) -> Result<ChainBound> {
    let vs = partial_products(params);
    let v_l = vs.last().expect("non-empty");
    let u_v = params.w_u() * v_l;
    let a = &u_v * params.w_e();

    let s_a = singular_values(&a)?.with_tolerance(DEFAULT_RANK_TOL);
    let k = s_a.rank();
    if k == 0 {
        return Err(Error::Degenerate("network computes the zero map".into()));
    }
    let s_uv = singular_values(&u_v)?;
    let spectra = vs.iter().map(singular_values).collect::<Result<Vec<_>>>()?;
    let f_tilde = ConvexGauge::shifted_block_gauge(lambda, params.depth(), params.block_depth());

    let mut bound = 0.0;
    for j in 0..k {
        let r_e = ratio(&s_a, &s_uv, j, "W_u V_L")?;
        let r_u = ratio(&s_uv, &spectra[spectra.len() - 1], j, "V_L")?;
        bound += 0.5 * r_e * r_e + 0.5 * r_u * r_u;
        for w in spectra.windows(2) {
            bound += f_tilde.eval(ratio(&w[1], &w[0], j, "a partial product")?);
        }
    }
    Ok(ChainBound { bound, penalty: penalty(params, lambda), rank: k })
}

/// One fuzz observation, exported as `seed,lhs,rhs,margin,gauge`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzRow {
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed distance to violation; negative means the inequality failed.
    pub margin: f64,
    pub gauge: String,
    pub holds: bool,
}

pub fn write_fuzz_csv<W: std::io::Write>(rows: &[FuzzRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "lhs", "rhs", "margin", "gauge"])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            format!("{:.16e}", r.lhs),
            format!("{:.16e}", r.rhs),
            format!("{:.16e}", r.margin),
            r.gauge.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<fuzz>".into(), source: e })?;
    Ok(())
}

/// Gaussian matrix with log-normally scaled columns, for a wide spread of
/// singular values.
fn spread_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = gaussian_matrix(rows, cols, rng);
    let scales: Vec<f64> = (0..cols).map(|_| (1.5 * rng.random::<f64>() - 0.75).exp()).collect();
    let norm = (rows as f64).sqrt();
    for i in 0..rows {
        for (j, s) in scales.iter().enumerate() {
            m[(i, j)] *= s / norm;
        }
    }
    m
}

/// Random Gelfand instance with `n, n0, n1 ≤ 6` drawn from `seed`.
pub fn random_gelfand_instance(seed: u64) -> GelfandInstance {
    let mut rng = seeded_rng(seed);
    loop {
        let n = rng.random_range(1..=6);
        let n0 = rng.random_range(1..=6);
        let n1 = rng.random_range(1..=6);
        let k = rng.random_range(1..=n);
        let mut pool: Vec<usize> = (1..=n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        let mut indices = pool[..k].to_vec();
        indices.sort_unstable();
        let inst = GelfandInstance::new(
            spread_matrix(n0, n, &mut rng),
            spread_matrix(n, n, &mut rng),
            spread_matrix(n, n1, &mut rng),
            indices,
        )
        .expect("shapes chain");
        if gelfand_check(&inst).is_ok() {
            return inst;
        }
    }
}

/// Random conformable pair `(A, B)` with dimensions at most 6.
pub fn random_submajorization_pair(seed: u64) -> (Matrix, Matrix) {
    let mut rng = seeded_rng(seed);
    let n0 = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let n1 = rng.random_range(1..=6);
    (spread_matrix(n0, n, &mut rng), spread_matrix(n, n1, &mut rng))
}

/// The four gauges with parameters drawn from `seed`.
pub fn random_gauges(seed: u64) -> [ConvexGauge; 4] {
    let mut rng = seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let log_uniform = |rng: &mut Rng| (rng.random::<f64>() * 6.0 - 4.0).exp();
    [
        ConvexGauge::Square,
        ConvexGauge::Hinge { scale: log_uniform(&mut rng) },
        ConvexGauge::Linear { lambda: log_uniform(&mut rng) },
        ConvexGauge::HingeSq { lambda: log_uniform(&mut rng), depth: rng.random_range(1..=8) },
    ]
}

/// `count` Gelfand checks with case seeds `seed, seed+1, …`, in seed order.
pub fn gelfand_fuzz(seed: u64, count: usize) -> Vec<FuzzRow> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let out = gelfand_check(&random_gelfand_instance(s)).expect("instance sampled non-degenerate");
            FuzzRow { seed: s, lhs: out.lhs, rhs: out.rhs, margin: out.rhs - out.lhs, gauge: "gelfand".into(), holds: out.holds }
        })
        .collect()
}

/// `count` random pairs, each checked under all four gauges, in seed order.
/// Pairs whose ratio denominators degenerate are skipped.
pub fn submajorization_fuzz(seed: u64, count: usize) -> Vec<FuzzRow> {
    let per_case: Vec<Vec<FuzzRow>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let (a, b) = random_submajorization_pair(s);
            random_gauges(s)
                .iter()
                .filter_map(|&g| {
                    let out = submajorization_check(&a, &b, g).ok()?;
                    Some(FuzzRow { seed: s, lhs: out.lhs, rhs: out.rhs, margin: out.lhs - out.rhs, gauge: g.to_string(), holds: out.holds })
                })
                .collect()
        })
        .collect();
    per_case.into_iter().flatten().collect()
}
