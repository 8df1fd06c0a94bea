//! Minimum representation cost of a linear map by deep linear residual
//! networks, evaluated one singular value at a time.
//!
//! For depth-1 blocks the per-value cost is `min_α σ(1+α/L)^{-L} + λα²`
//! (`σe^{-α} + λα²` at infinite depth), solved by golden-section search. For
//! depth-2 blocks it has the closed form `σ` when `σ ≤ λ` and
//! `λ((L+1)(σ/λ)^{1/(L+1)} − L)` otherwise, with `λ(1 + ln(σ/λ))` as the
//! infinite-depth limit.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{singular_values, Matrix};

/// Number of residual blocks, or the infinite-depth limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Depth {
    Finite(usize),
    Infinite,
}

impl Depth {
    pub fn finite(self) -> Option<usize> {
        match self {
            Depth::Finite(l) => Some(l),
            Depth::Infinite => None,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Finite(l) => write!(f, "{l}"),
            Depth::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "Infinite" => Ok(Depth::Infinite),
            t => match t.parse::<usize>() {
                Ok(l) if l >= 1 => Ok(Depth::Finite(l)),
                _ => Err(Error::Domain(format!("depth must be a positive integer or `inf`, got `{s}`"))),
            },
        }
    }
}

impl Serialize for Depth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Depth::Finite(l) => s.serialize_u64(*l as u64),
            Depth::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Depth {
    /// Accepts a positive integer or the string `"inf"`.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(l) => l.to_string().parse(),
            Raw::Str(s) => s.parse(),
        }
        .map_err(D::Error::custom)
    }
}

/// One matrix per residual block (`I + W`) or two (`I + W₂W₁`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockDepth {
    One,
    Two,
}

impl BlockDepth {
    pub fn as_u8(self) -> u8 {
        match self {
            BlockDepth::One => 1,
            BlockDepth::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(BlockDepth::One),
            2 => Ok(BlockDepth::Two),
            _ => Err(Error::Domain(format!("block depth must be 1 or 2, got {v}"))),
        }
    }
}

impl Serialize for BlockDepth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for BlockDepth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        BlockDepth::from_u8(u8::deserialize(d)?).map_err(D::Error::custom)
    }
}

impl std::str::FromStr for BlockDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u8>()
            .map_err(|_| Error::Domain(format!("block depth must be 1 or 2, got `{s}`")))
            .and_then(BlockDepth::from_u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostParams {
    pub lambda: f64,
    pub depth: Depth,
    pub block_depth: BlockDepth,
    pub width: usize,
}

impl CostParams {
    pub fn new(lambda: f64, depth: Depth, block_depth: BlockDepth, width: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
        }
        if width == 0 {
            return Err(Error::Domain("width must be at least 1".into()));
        }
        if depth == Depth::Finite(0) {
            return Err(Error::Domain("depth must be at least 1".into()));
        }
        Ok(Self { lambda, depth, block_depth, width })
    }
}

/// Optimal value of the per-singular-value problem and its minimizer.
///
/// `alpha_star` is the residual scale in the parametrization of the cost
/// formula: for finite depth-1 it is the total `α` in `(1+α/L)^L`, for finite
/// depth-2 the per-block gain `(σ/λ)^{1/(L+1)} − 1`. At infinite depth it is
/// the total log-gain (`α` in `e^{-α}`), which for depth-2 is `ln(σ/λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCostResult {
    pub cost: f64,
    pub alpha_star: f64,
}

impl ScalarCostResult {
    const ZERO: Self = Self { cost: 0.0, alpha_star: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub total: f64,
    /// Singular values the cost was evaluated on, non-increasing.
    pub sigma: Vec<f64>,
    pub per_sigma: Vec<ScalarCostResult>,
    pub rank: usize,
    pub params: CostParams,
}

/// Width of the final golden-section bracket.
pub const GOLDEN_TOL: f64 = 1e-10;

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`, returning
/// the midpoint of the final bracket and its value.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Golden-section search on a strictly convex `f`, then bisection on the sign
/// of its derivative `df` around the result. Value comparisons alone stall
/// near `sqrt(ε)` relative accuracy in the argmin; the derivative does not.
pub fn minimize_convex(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let (x, _) = golden_section(&f, lo, hi, GOLDEN_TOL);
    let mut delta = 1e-6 * (1.0 + x.abs());
    let (mut a, mut b) = ((x - delta).max(lo), (x + delta).min(hi));
    while (df(a) > 0.0 && a > lo) || (df(b) < 0.0 && b < hi) {
        delta *= 4.0;
        a = (x - delta).max(lo);
        b = (x + delta).min(hi);
    }
    if df(a) >= 0.0 {
        return (a, f(a));
    }
    if df(b) <= 0.0 {
        return (b, f(b));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if df(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn check_inputs(sigma: f64, lambda: f64) {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and nonnegative, got {sigma}");
    assert!(lambda > 0.0 && lambda.is_finite(), "lambda must be positive, got {lambda}");
}

/// `min_{α≥0} σ/(1+α/L)^L + λα²`.
pub fn scalar_cost_depth1(sigma: f64, depth: usize, lambda: f64) -> ScalarCostResult {
    check_inputs(sigma, lambda);
    assert!(depth >= 1, "depth must be at least 1");
    if sigma == 0.0 {
        return ScalarCostResult::ZERO;
    }
    let l = depth as f64;
    let decay = |a: f64| (-l * (a / l).ln_1p()).exp();
    let objective = |a: f64| sigma * decay(a) + lambda * a * a;
    let slope = |a: f64| 2.0 * lambda * a - sigma * decay(a) / (1.0 + a / l);
    let (alpha_star, cost) = minimize_convex(objective, slope, 0.0, (sigma / lambda).sqrt());
    ScalarCostResult { cost, alpha_star }
}

/// `min_{α≥0} σe^{-α} + λα²`.
pub fn scalar_cost_depth1_inf(sigma: f64, lambda: f64) -> ScalarCostResult {
    check_inputs(sigma, lambda);
    if sigma == 0.0 {
        return ScalarCostResult::ZERO;
    }
    let objective = |a: f64| sigma * (-a).exp() + lambda * a * a;
    let slope = |a: f64| 2.0 * lambda * a - sigma * (-a).exp();
    let (alpha_star, cost) = minimize_convex(objective, slope, 0.0, (sigma / lambda).sqrt());
    ScalarCostResult { cost, alpha_star }
}

pub fn scalar_cost_depth2(sigma: f64, depth: usize, lambda: f64) -> ScalarCostResult {
    check_inputs(sigma, lambda);
    assert!(depth >= 1, "depth must be at least 1");
    if sigma <= lambda {
        return ScalarCostResult { cost: sigma, alpha_star: 0.0 };
    }
    let l = depth as f64;
    let gain = (sigma / lambda).powf(1.0 / (l + 1.0));
    ScalarCostResult { cost: lambda * ((l + 1.0) * gain - l), alpha_star: gain - 1.0 }
}

pub fn scalar_cost_depth2_inf(sigma: f64, lambda: f64) -> ScalarCostResult {
    check_inputs(sigma, lambda);
    if sigma <= lambda {
        return ScalarCostResult { cost: sigma, alpha_star: 0.0 };
    }
    let log_gain = (sigma / lambda).ln();
    ScalarCostResult { cost: lambda * (1.0 + log_gain), alpha_star: log_gain }
}

/// Per-singular-value cost for the architecture described by `params`.
pub fn scalar_cost(sigma: f64, params: &CostParams) -> ScalarCostResult {
    match (params.block_depth, params.depth) {
        (BlockDepth::One, Depth::Finite(l)) => scalar_cost_depth1(sigma, l, params.lambda),
        (BlockDepth::One, Depth::Infinite) => scalar_cost_depth1_inf(sigma, params.lambda),
        (BlockDepth::Two, Depth::Finite(l)) => scalar_cost_depth2(sigma, l, params.lambda),
        (BlockDepth::Two, Depth::Infinite) => scalar_cost_depth2_inf(sigma, params.lambda),
    }
}

/// Minimum cost of representing `a`: the sum of per-singular-value costs.
pub fn matrix_cost(a: &Matrix, params: &CostParams) -> Result<CostReport> {
    let spectrum = singular_values(a)?;
    let rank = spectrum.rank();
    if params.width < rank {
        return Err(Error::WidthTooSmall { width: params.width, rank });
    }
    let per_sigma: Vec<_> = spectrum.values().iter().map(|&s| scalar_cost(s, params)).collect();
    let total = per_sigma.iter().map(|r| r.cost).sum();
    Ok(CostReport { total, sigma: spectrum.values().to_vec(), per_sigma, rank, params: *params })
}

/// Normalizer of the small-λ asymptotics: `λ ln(1/λ)²` for depth-1 blocks,
/// `λ ln(1/λ)` for depth-2 blocks.
pub fn rank_normalizer(lambda: f64, block_depth: BlockDepth) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("rank ratio needs 0 < lambda < 1, got {lambda}")));
    }
    let log = (1.0 / lambda).ln();
    Ok(match block_depth {
        BlockDepth::One => lambda * log * log,
        BlockDepth::Two => lambda * log,
    })
}

/// Infinite-depth cost divided by its small-λ normalizer; tends to the rank
/// of `a` as λ → 0.
pub fn rank_ratio(a: &Matrix, lambda: f64, block_depth: BlockDepth) -> Result<f64> {
    let norm = rank_normalizer(lambda, block_depth)?;
    let spectrum = singular_values(a)?;
    let params = CostParams::new(lambda, Depth::Infinite, block_depth, spectrum.len().max(1))?;
    let cost: f64 = spectrum.values().iter().map(|&s| scalar_cost(s, &params).cost).sum();
    Ok(cost / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_matrix, nuclear_norm, random_orthogonal, seeded_rng};
    use proptest::prelude::*;

    /// Grid search on `[0, hi]` followed by bisection on the sign of a
    /// derivative; independent of the golden-section path.
    fn grid_then_bisect(obj: impl Fn(f64) -> f64, deriv: impl Fn(f64) -> f64, hi: f64, step: f64) -> (f64, f64) {
        let n = (hi / step).ceil() as usize;
        let (mut best_a, mut best_f) = (0.0, obj(0.0));
        for i in 1..=n {
            let a = i as f64 * step;
            let f = obj(a);
            if f < best_f {
                best_a = a;
                best_f = f;
            }
        }
        let (mut lo, mut hi) = ((best_a - step).max(0.0), best_a + step);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        (a, obj(a))
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2) + 1.0, 0.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-14);
        let (x, _) = minimize_convex(|x| (x - 0.3).powi(2) + 1.0, |x| 2.0 * (x - 0.3), 0.0, 2.0);
        assert!((x - 0.3).abs() < 1e-14);
        let (x, _) = minimize_convex(|x| x * x, |x| 2.0 * x, 0.0, 1.0);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn depth1_zero_sigma() {
        for l in [1, 5, 100] {
            assert_eq!(scalar_cost_depth1(0.0, l, 0.7), ScalarCostResult::ZERO);
        }
        assert_eq!(scalar_cost_depth1_inf(0.0, 3.0), ScalarCostResult::ZERO);
        assert_eq!(scalar_cost_depth2_inf(0.0, 3.0).cost, 0.0);
    }

    #[test]
    fn depth1_unit_instance_matches_grid_oracle() {
        // σ = 1, L = 1, λ = 1: stationarity is 2α(1+α)² = 1.
        let (a_ref, c_ref) = grid_then_bisect(
            |a| 1.0 / (1.0 + a) + a * a,
            |a| 2.0 * a * (1.0 + a).powi(2) - 1.0,
            1.0,
            1e-6,
        );
        let r = scalar_cost_depth1(1.0, 1, 1.0);
        assert!((r.alpha_star - a_ref).abs() < 1e-8, "{} vs {}", r.alpha_star, a_ref);
        assert!((r.cost - c_ref).abs() < 1e-12);
        assert!((r.cost - 0.859).abs() < 1e-3 && (r.alpha_star - 0.298).abs() < 1e-3);
    }

    #[test]
    fn depth1_infinite_matches_grid_oracle() {
        let (a_ref, c_ref) = grid_then_bisect(|a| (-a).exp() + a * a, |a| 2.0 * a - (-a).exp(), 1.0, 1e-6);
        let r = scalar_cost_depth1_inf(1.0, 1.0);
        assert!((r.alpha_star - a_ref).abs() < 1e-8);
        assert!((r.cost - c_ref).abs() < 1e-12);
        assert!((r.alpha_star - 0.3517).abs() < 1e-4 && (r.cost - 0.827).abs() < 1e-3);
        // Large depth converges to the limit.
        let far = scalar_cost_depth1(1.0, 1_000_000, 1.0);
        assert!((far.cost - r.cost).abs() < 1e-6);
    }

    #[test]
    fn depth1_l2_oracle() {
        let (_, c_ref) = grid_then_bisect(
            |a| 1.0 / (1.0 + a / 2.0).powi(2) + a * a,
            |a| 2.0 * a - (1.0 + a / 2.0).powi(-3),
            1.0,
            1e-6,
        );
        let r = scalar_cost_depth1(1.0, 2, 1.0);
        assert!((r.cost - c_ref).abs() < 1e-12);
        assert!((r.cost - 0.846).abs() < 1e-3);
    }

    #[test]
    fn depth2_examples() {
        assert_eq!(scalar_cost_depth2(0.5, 3, 1.0).cost, 0.5);
        let r = scalar_cost_depth2(2.0, 3, 1.0);
        assert!((r.cost - (4.0 * 2f64.powf(0.25) - 3.0)).abs() < 1e-14);
        assert!((r.cost - 1.75683).abs() < 1e-5);
        // Continuity at σ = λ.
        let at = scalar_cost_depth2(1.3, 4, 1.3).cost;
        let above = scalar_cost_depth2(1.3 * (1.0 + 1e-12), 4, 1.3).cost;
        assert!((at - 1.3).abs() < 1e-15 && (above - 1.3).abs() < 1e-10);
        // alpha_star is the per-block optimizer of σ/(1+α)^L + Lλα.
        let (s, l, lam) = (5.0, 3usize, 0.5);
        let r = scalar_cost_depth2(s, l, lam);
        let direct = s / (1.0 + r.alpha_star).powi(l as i32) + l as f64 * lam * r.alpha_star;
        assert!((direct - r.cost).abs() < 1e-12);
    }

    #[test]
    fn depth2_infinite_examples() {
        let r = scalar_cost_depth2_inf(std::f64::consts::E, 1.0);
        assert!((r.cost - 2.0).abs() < 1e-15);
        assert_eq!(scalar_cost_depth2_inf(0.3, 1.0).cost, 0.3);
    }

    #[test]
    fn matrix_cost_examples() {
        let p = CostParams::new(1.0, Depth::Finite(3), BlockDepth::Two, 3).unwrap();
        assert_eq!(matrix_cost(&Matrix::zeros(3, 2), &p).unwrap().total, 0.0);
        let d = Matrix::from_diag(&[3.0, 1.0]);
        for l in [1, 2, 7] {
            for lam in [3.0, 10.0] {
                let p = CostParams::new(lam, Depth::Finite(l), BlockDepth::Two, 2).unwrap();
                assert_eq!(matrix_cost(&d, &p).unwrap().total, 4.0);
            }
        }
        let p = CostParams::new(1.0, Depth::Finite(2), BlockDepth::One, 1).unwrap();
        assert!(matches!(matrix_cost(&d, &p), Err(Error::WidthTooSmall { width: 1, rank: 2 })));
    }

    #[test]
    fn matrix_cost_is_orthogonally_invariant() {
        let a = gaussian_matrix(4, 4, &mut seeded_rng(21));
        let b = &(&random_orthogonal(4, 1) * &a) * &random_orthogonal(4, 2).transpose();
        for bd in [BlockDepth::One, BlockDepth::Two] {
            for depth in [Depth::Finite(3), Depth::Infinite] {
                let p = CostParams::new(0.7, depth, bd, 4).unwrap();
                let ca = matrix_cost(&a, &p).unwrap().total;
                let cb = matrix_cost(&b, &p).unwrap().total;
                assert!((ca - cb).abs() <= 1e-8 * ca);
            }
        }
    }

    #[test]
    fn matrix_cost_is_additive_over_diagonal() {
        let sig = [2.5, 1.1, 0.2];
        let p = CostParams::new(0.4, Depth::Finite(5), BlockDepth::One, 3).unwrap();
        let direct: f64 = sig.iter().map(|&s| scalar_cost_depth1(s, 5, 0.4).cost).sum();
        let report = matrix_cost(&Matrix::from_diag(&sig), &p).unwrap();
        assert!((report.total - direct).abs() <= 1e-12 * direct);
        let summed: f64 = report.per_sigma.iter().map(|r| r.cost).sum();
        assert!((report.total - summed).abs() <= 1e-12 * report.total);
    }

    #[test]
    fn cost_never_exceeds_nuclear_norm() {
        let mut rng = seeded_rng(4);
        for _ in 0..50 {
            let a = gaussian_matrix(3, 4, &mut rng);
            let nuc = nuclear_norm(&a).unwrap();
            for bd in [BlockDepth::One, BlockDepth::Two] {
                let p = CostParams::new(0.3, Depth::Finite(4), bd, 4).unwrap();
                assert!(matrix_cost(&a, &p).unwrap().total <= nuc * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn rank_ratio_examples() {
        let r = rank_ratio(&Matrix::identity(2), 1e-6, BlockDepth::Two).unwrap();
        let l = 1e6f64.ln();
        assert!((r - 2.0 * (1.0 + l) / l).abs() < 1e-12);
        assert!((r - 2.1448).abs() < 1e-4);
        assert_eq!(rank_ratio(&Matrix::zeros(2, 2), 1e-3, BlockDepth::One).unwrap(), 0.0);
        let a = Matrix::from_diag(&[5.0]);
        let seq: Vec<f64> = [1e-3, 1e-5, 1e-7].iter().map(|&lam| rank_ratio(&a, lam, BlockDepth::Two).unwrap()).collect();
        assert!(seq[0] > seq[1] && seq[1] > seq[2] && seq[2] > 1.0);
        assert!(matches!(rank_ratio(&a, 1.0, BlockDepth::Two), Err(Error::Domain(_))));
        assert!(rank_ratio(&a, 2.0, BlockDepth::One).is_err());
    }

    #[test]
    fn depth1_limit_at_large_depth() {
        for &s in &[0.1, 1.0, 3.0, 10.0] {
            for &lam in &[0.1, 1.0, 10.0] {
                let f = scalar_cost_depth1(s, 10_000, lam).cost;
                let inf = scalar_cost_depth1_inf(s, lam).cost;
                assert!((f - inf).abs() < 1e-3 && f >= inf - 1e-8);
            }
        }
    }

    #[test]
    fn depth_parsing() {
        assert_eq!("inf".parse::<Depth>().unwrap(), Depth::Infinite);
        assert_eq!("12".parse::<Depth>().unwrap(), Depth::Finite(12));
        assert!("0".parse::<Depth>().is_err());
        assert!(CostParams::new(0.0, Depth::Infinite, BlockDepth::One, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn monotone_in_sigma_and_lambda(
            s1 in 0.0f64..10.0, ds in 0.0f64..5.0,
            lam1 in 0.01f64..100.0, dl in 0.0f64..50.0,
            l in 1usize..64,
        ) {
            let (s2, lam2) = (s1 + ds, lam1 + dl);
            let slack = 1e-10;
            prop_assert!(scalar_cost_depth1(s1, l, lam1).cost <= scalar_cost_depth1(s2, l, lam1).cost + slack);
            prop_assert!(scalar_cost_depth2(s1, l, lam1).cost <= scalar_cost_depth2(s2, l, lam1).cost + slack);
            prop_assert!(scalar_cost_depth1(s1, l, lam1).cost <= scalar_cost_depth1(s1, l, lam2).cost + slack);
            prop_assert!(scalar_cost_depth2(s1, l, lam1).cost <= scalar_cost_depth2(s1, l, lam2).cost + slack);
            prop_assert!(scalar_cost_depth1_inf(s1, lam1).cost <= scalar_cost_depth1_inf(s2, lam1).cost + slack);
            prop_assert!(scalar_cost_depth2_inf(s1, lam1).cost <= scalar_cost_depth2_inf(s1, lam2).cost + slack);
        }

        #[test]
        fn monotone_in_depth(s in 1e-6f64..=10.0, lam in 0.01f64..=100.0, l in 1usize..64) {
            let slack = 1e-10;
            let d1 = scalar_cost_depth1(s, l, lam);
            prop_assert!(scalar_cost_depth1(s, l + 1, lam).cost <= d1.cost + slack);
            prop_assert!(d1.cost >= scalar_cost_depth1_inf(s, lam).cost - 1e-8);
            let d2 = scalar_cost_depth2(s, l, lam);
            prop_assert!(scalar_cost_depth2(s, l + 1, lam).cost <= d2.cost + slack);
            prop_assert!(d2.cost >= scalar_cost_depth2_inf(s, lam).cost - 1e-8);
            prop_assert!(d1.cost >= 0.0 && d1.cost <= s + slack);
            prop_assert!(d2.cost >= 0.0 && d2.cost <= s + slack);
            prop_assert!(lam * d1.alpha_star * d1.alpha_star <= s + slack);
        }
    }
}
