//! Deep linear residual networks `W_u (I+B_1)···(I+B_L) W_e`, their weight
//! penalty, and explicit minimum-cost weight assignments.
//!
//! Block `i` contributes `I + W_i` (depth-1) or `I + W_{i,2}W_{i,1}`
//! (depth-2). `blocks[0]` is the leftmost factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serial::{missing, BlockJson, NetworkJson};
use crate::spectral::{matrix_cost, scalar_cost, BlockDepth, CostParams, Depth};
use crate::tensor::{svd, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub enum LinearBlock {
    Depth1 { w: Matrix },
    Depth2 { w1: Matrix, w2: Matrix },
}

impl LinearBlock {
    pub fn block_depth(&self) -> BlockDepth {
        match self {
            LinearBlock::Depth1 { .. } => BlockDepth::One,
            LinearBlock::Depth2 { .. } => BlockDepth::Two,
        }
    }

    /// The matrix the block adds to the skip connection.
    pub fn update(&self) -> Matrix {
        match self {
            LinearBlock::Depth1 { w } => w.clone(),
            LinearBlock::Depth2 { w1, w2 } => w2 * w1,
        }
    }

    /// `I + update`.
    pub fn residual(&self) -> Matrix {
        self.update().plus_identity()
    }

    fn weights(&self) -> Vec<&Matrix> {
        match self {
            LinearBlock::Depth1 { w } => vec![w],
            LinearBlock::Depth2 { w1, w2 } => vec![w1, w2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearResNetParams {
    w_u: Matrix,
    w_e: Matrix,
    blocks: Vec<LinearBlock>,
}

impl LinearResNetParams {
    /// Validates shapes: `w_u` is `d_out × n`, `w_e` is `n × d_in`, every
    /// block matrix is `n × n`, and all blocks share one variant.
    pub fn new(w_u: Matrix, w_e: Matrix, blocks: Vec<LinearBlock>) -> Result<Self> {
        let n = w_e.rows();
        if w_u.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "unembedding has {} columns but embedding has {} rows",
                w_u.cols(),
                n
            )));
        }
        let Some(first) = blocks.first() else {
            return Err(Error::DimensionMismatch("network needs at least one residual block".into()));
        };
        let variant = first.block_depth();
        for (i, b) in blocks.iter().enumerate() {
            if b.block_depth() != variant {
                return Err(Error::DimensionMismatch(format!("block {i} has a different variant than block 0")));
            }
            if b.weights().iter().any(|w| w.shape() != (n, n)) {
                return Err(Error::DimensionMismatch(format!("block {i} is not {n}x{n}")));
            }
        }
        Ok(Self { w_u, w_e, blocks })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(d_out: usize, d_in: usize, width: usize, depth: usize, block_depth: BlockDepth) -> Self {
        let block = match block_depth {
            BlockDepth::One => LinearBlock::Depth1 { w: Matrix::zeros(width, width) },
            BlockDepth::Two => LinearBlock::Depth2 { w1: Matrix::zeros(width, width), w2: Matrix::zeros(width, width) },
        };
        Self {
            w_u: Matrix::zeros(d_out, width),
            w_e: Matrix::zeros(width, d_in),
            blocks: vec![block; depth.max(1)],
        }
    }

    pub fn w_u(&self) -> &Matrix {
        &self.w_u
    }

    pub fn w_e(&self) -> &Matrix {
        &self.w_e
    }

    pub fn blocks(&self) -> &[LinearBlock] {
        &self.blocks
    }

    pub fn block_depth(&self) -> BlockDepth {
        self.blocks[0].block_depth()
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.w_e.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_e.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w_u.rows()
    }

    /// Flat parameter vector: `w_u`, `w_e`, then each block (`w`, or `w1`, `w2`).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w_u.as_slice());
        out.extend_from_slice(self.w_e.as_slice());
        for b in &self.blocks {
            for w in b.weights() {
                out.extend_from_slice(w.as_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        let n = self.width();
        let per_block = n * n * self.blocks.len() * self.block_depth().as_u8() as usize;
        self.w_u.as_slice().len() + self.w_e.as_slice().len() + per_block
    }

    /// Inverse of [`to_flat`](Self::to_flat) for parameters of the same shape.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut out = self.clone();
        let mut offset = 0;
        let mut fill = |m: &mut Matrix| {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        };
        fill(&mut out.w_u);
        fill(&mut out.w_e);
        for b in &mut out.blocks {
            match b {
                LinearBlock::Depth1 { w } => fill(w),
                LinearBlock::Depth2 { w1, w2 } => {
                    fill(w1);
                    fill(w2);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("network serializes")
    }
}

impl Serialize for LinearResNetParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                LinearBlock::Depth1 { w } => BlockJson { w: Some(w.clone()), ..Default::default() },
                LinearBlock::Depth2 { w1, w2 } => {
                    BlockJson { w1: Some(w1.clone()), w2: Some(w2.clone()), ..Default::default() }
                }
            })
            .collect();
        NetworkJson {
            w_u: self.w_u.clone(),
            w_e: self.w_e.clone(),
            b_u: None,
            b_e: None,
            blocks,
            block_depth: self.block_depth().as_u8(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearResNetParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let net = NetworkJson::deserialize(d)?;
        linear_from_json(net).map_err(D::Error::custom)
    }
}

fn linear_from_json(net: NetworkJson) -> Result<LinearResNetParams> {
    let bd = BlockDepth::from_u8(net.block_depth)?;
    let blocks = net
        .blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| match bd {
            BlockDepth::One => Ok(LinearBlock::Depth1 { w: b.w.ok_or_else(|| missing("w", i))? }),
            BlockDepth::Two => Ok(LinearBlock::Depth2 {
                w1: b.w1.ok_or_else(|| missing("w1", i))?,
                w2: b.w2.ok_or_else(|| missing("w2", i))?,
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    LinearResNetParams::new(net.w_u, net.w_e, blocks)
}

/// `[V_0, V_1, …, V_L]` with `V_0 = I` and `V_ℓ = V_{ℓ-1}(I + B_ℓ)`.
pub fn partial_products(params: &LinearResNetParams) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(params.depth() + 1);
    out.push(Matrix::identity(params.width()));
    for b in params.blocks() {
        let next = out.last().expect("non-empty") * &b.residual();
        out.push(next);
    }
    out
}

/// The linear map computed by the network.
pub fn forward_linear(params: &LinearResNetParams) -> Matrix {
    let chain = partial_products(params).pop().expect("non-empty");
    &(params.w_u() * &chain) * params.w_e()
}

/// `½‖W_u‖² + ½‖W_e‖² + λL Σ‖W_i‖²` for depth-1 blocks and
/// `½‖W_u‖² + ½‖W_e‖² + (λ/2) Σ‖W_{i,j}‖²` for depth-2 blocks.
pub fn penalty(params: &LinearResNetParams, lambda: f64) -> f64 {
    embedding_penalty(params) + block_penalty(params, lambda)
}

pub(crate) fn embedding_penalty(params: &LinearResNetParams) -> f64 {
    0.5 * (params.w_u().frobenius_sq() + params.w_e().frobenius_sq())
}

pub(crate) fn block_penalty(params: &LinearResNetParams, lambda: f64) -> f64 {
    let sum: f64 = params.blocks().iter().flat_map(|b| b.weights()).map(Matrix::frobenius_sq).sum();
    match params.block_depth() {
        BlockDepth::One => lambda * params.depth() as f64 * sum,
        BlockDepth::Two => 0.5 * lambda * sum,
    }
}

/// An explicit weight assignment together with what it computes and costs.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    pub params: LinearResNetParams,
    pub realized: Matrix,
    pub penalty: f64,
    pub formula_cost: f64,
}

impl WitnessReport {
    pub fn penalty_gap(&self) -> f64 {
        (self.penalty - self.formula_cost).abs() / (1.0 + self.formula_cost)
    }
}

/// Builds weights attaining the minimum cost of representing `a`.
///
/// With `A = U diag(σ) Vᵀ` and per-direction block scale `a_i`, the embedding
/// and unembedding carry `√(σ_i/(1+a_i)^L)` along the singular directions and
/// every block is `diag(a_i)` (depth-1) or `diag(√a_i)` twice (depth-2) in the
/// leading corner, zero elsewhere. For depth-1 the block scale is
/// `alpha_star / L`, converting from the `(1+α/L)^L` parametrization.
pub fn build_min_cost(a: &Matrix, params: &CostParams) -> Result<WitnessReport> {
    let Depth::Finite(depth) = params.depth else {
        return Err(Error::Domain("witness construction needs a finite depth".into()));
    };
    let report = matrix_cost(a, params)?;
    let dec = svd(a)?;
    let n = params.width;
    let (d_out, d_in) = a.shape();
    let l = depth as f64;

    let mut w_u = Matrix::zeros(d_out, n);
    let mut w_e = Matrix::zeros(n, d_in);
    let mut corner = vec![0.0; n];
    for (i, &sigma) in dec.s.values().iter().enumerate().take(n) {
        if sigma == 0.0 {
            continue;
        }
        let scale = block_scale(sigma, params, depth);
        let gain = (l * scale.ln_1p()).exp();
        let e = (sigma / gain).sqrt();
        for r in 0..d_out {
            w_u[(r, i)] = dec.u[(r, i)] * e;
        }
        for c in 0..d_in {
            w_e[(i, c)] = e * dec.vt[(i, c)];
        }
        corner[i] = scale;
    }
    let block = match params.block_depth {
        BlockDepth::One => LinearBlock::Depth1 { w: Matrix::from_diag(&corner) },
        BlockDepth::Two => {
            let root: Vec<f64> = corner.iter().map(|v| v.sqrt()).collect();
            LinearBlock::Depth2 { w1: Matrix::from_diag(&root), w2: Matrix::from_diag(&root) }
        }
    };
    let net = LinearResNetParams::new(w_u, w_e, vec![block; depth])?;
    Ok(WitnessReport {
        realized: forward_linear(&net),
        penalty: penalty(&net, params.lambda),
        formula_cost: report.total,
        params: net,
    })
}

/// Per-block diagonal entry `a` for a singular value: the minimizer of
/// `σ/(1+a)^L + L f(a)` with `f(t) = λLt²` (depth-1) or `f(t) = λt` (depth-2).
pub fn block_scale(sigma: f64, params: &CostParams, depth: usize) -> f64 {
    let r = scalar_cost(sigma, &CostParams { depth: Depth::Finite(depth), ..*params });
    match params.block_depth {
        BlockDepth::One => r.alpha_star / depth as f64,
        BlockDepth::Two => r.alpha_star,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::scalar_cost_depth1;
    use crate::tensor::{gaussian_matrix, nuclear_norm, seeded_rng, singular_values};

    fn cp(lambda: f64, depth: usize, bd: BlockDepth, width: usize) -> CostParams {
        CostParams::new(lambda, Depth::Finite(depth), bd, width).unwrap()
    }

    #[test]
    fn skip_connections_only() {
        let mut p = LinearResNetParams::zeros(3, 3, 3, 4, BlockDepth::Two);
        p.w_u = Matrix::identity(3);
        p.w_e = Matrix::identity(3);
        assert_eq!(forward_linear(&p), Matrix::identity(3));
        assert!(partial_products(&p).iter().all(|v| *v == Matrix::identity(3)));
    }

    #[test]
    fn single_scalar_block() {
        let one = Matrix::identity(1);
        let p = LinearResNetParams::new(one.clone(), one.clone(), vec![LinearBlock::Depth1 { w: one.clone() }]).unwrap();
        assert_eq!(forward_linear(&p), Matrix::from_diag(&[2.0]));
        let p = LinearResNetParams::new(one.clone(), one.clone(), vec![LinearBlock::Depth1 { w: one }]).unwrap();
        let v = partial_products(&p);
        assert_eq!(v, vec![Matrix::identity(1), Matrix::from_diag(&[2.0])]);
    }

    #[test]
    fn partial_products_identity_block() {
        let p = LinearResNetParams::new(
            Matrix::identity(2),
            Matrix::identity(2),
            vec![LinearBlock::Depth1 { w: Matrix::identity(2) }],
        )
        .unwrap();
        assert_eq!(partial_products(&p), vec![Matrix::identity(2), Matrix::identity(2).scale(2.0)]);
    }

    #[test]
    fn penalty_definitions() {
        assert_eq!(penalty(&LinearResNetParams::zeros(2, 2, 3, 4, BlockDepth::One), 1.0), 0.0);
        // ‖W_i‖² = 1 for both blocks, λ = 3, L = 2 → 3·2·(1+1) = 12.
        let w = Matrix::from_diag(&[1.0, 0.0]);
        let p = LinearResNetParams::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            vec![LinearBlock::Depth1 { w: w.clone() }, LinearBlock::Depth1 { w: w.clone() }],
        )
        .unwrap();
        assert_eq!(penalty(&p, 3.0), 12.0);
        let p2 = LinearResNetParams::new(
            Matrix::identity(2),
            Matrix::zeros(2, 2),
            vec![LinearBlock::Depth2 { w1: w.clone(), w2: w.scale(2.0) }],
        )
        .unwrap();
        assert_eq!(penalty(&p2, 3.0), 0.5 * 2.0 + 1.5 * (1.0 + 4.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = LinearResNetParams::new(Matrix::zeros(2, 3), Matrix::zeros(2, 2), vec![LinearBlock::Depth1 {
            w: Matrix::zeros(2, 2),
        }]);
        assert!(e.is_err());
        let mixed = vec![
            LinearBlock::Depth1 { w: Matrix::zeros(2, 2) },
            LinearBlock::Depth2 { w1: Matrix::zeros(2, 2), w2: Matrix::zeros(2, 2) },
        ];
        assert!(LinearResNetParams::new(Matrix::zeros(1, 2), Matrix::zeros(2, 1), mixed).is_err());
        assert!(LinearResNetParams::new(Matrix::zeros(1, 2), Matrix::zeros(2, 1), vec![]).is_err());
    }

    #[test]
    fn witness_for_zero_matrix() {
        let w = build_min_cost(&Matrix::zeros(2, 3), &cp(1.0, 3, BlockDepth::One, 4)).unwrap();
        assert_eq!(w.penalty, 0.0);
        assert!(w.params.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn witness_scalar_depth1() {
        let w = build_min_cost(&Matrix::from_diag(&[1.0]), &cp(1.0, 2, BlockDepth::One, 1)).unwrap();
        let expected = scalar_cost_depth1(1.0, 2, 1.0).cost;
        assert!((w.penalty - expected).abs() < 1e-12);
        assert!((w.penalty - 0.846).abs() < 1e-3);
        assert!((w.realized[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn witness_reparametrization_bridge() {
        // Per-block scale a relates to the closed form's α by a = α/L.
        let (sigma, l, lam) = (2.0, 4usize, 0.3);
        let p = cp(lam, l, BlockDepth::One, 1);
        let w = build_min_cost(&Matrix::from_diag(&[sigma]), &p).unwrap();
        let LinearBlock::Depth1 { w: blk } = &w.params.blocks()[0] else { unreachable!() };
        let alpha = scalar_cost_depth1(sigma, l, lam).alpha_star;
        assert!((blk[(0, 0)] - alpha / l as f64).abs() < 1e-15);
        let per_block_form = sigma / (1.0 + blk[(0, 0)]).powi(l as i32) + l as f64 * (lam * l as f64 * blk[(0, 0)].powi(2));
        assert!((per_block_form - w.formula_cost).abs() < 1e-12);
    }

    #[test]
    fn witness_depth2_large_lambda_uses_embeddings_only() {
        let w = build_min_cost(&Matrix::from_diag(&[3.0, 1.0]), &cp(10.0, 5, BlockDepth::Two, 2)).unwrap();
        assert!((w.penalty - 4.0).abs() < 1e-12);
        assert!(w.params.blocks().iter().all(|b| b.update().is_zero()));
    }

    #[test]
    fn witness_matches_formula_on_random_matrices() {
        let mut rng = seeded_rng(99);
        for case in 0..40 {
            let (m, k) = (1 + case % 4, 1 + (case / 4) % 4);
            let a = gaussian_matrix(m, k, &mut rng);
            let width = m.max(k) + case % 3;
            for bd in [BlockDepth::One, BlockDepth::Two] {
                for (l, lam) in [(1, 0.1), (2, 1.0), (8, 10.0), (4, 0.5)] {
                    let w = build_min_cost(&a, &cp(lam, l, bd, width)).unwrap();
                    let fe = w.realized.sub(&a).unwrap().frobenius_norm();
                    assert!(fe <= 1e-9 * (1.0 + a.frobenius_norm()), "forward error {fe:e}");
                    assert!(w.penalty_gap() <= 1e-9, "gap {}", w.penalty_gap());
                }
            }
        }
    }

    #[test]
    fn depth2_blocks_are_balanced() {
        let a = gaussian_matrix(3, 3, &mut seeded_rng(5)).scale(4.0);
        let w = build_min_cost(&a, &cp(0.2, 3, BlockDepth::Two, 3)).unwrap();
        for b in w.params.blocks() {
            let LinearBlock::Depth2 { w1, w2 } = b else { unreachable!() };
            let half = 0.5 * (w1.frobenius_sq() + w2.frobenius_sq());
            assert!((half - nuclear_norm(&(w2 * w1)).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn witness_partial_products_are_diagonal_gains() {
        let a = Matrix::from_diag(&[4.0, 2.0]);
        let (l, lam) = (3usize, 0.5);
        let p = cp(lam, l, BlockDepth::One, 3);
        let w = build_min_cost(&a, &p).unwrap();
        let vl = partial_products(&w.params).pop().unwrap();
        let s = singular_values(&vl).unwrap();
        for (j, &sig) in [4.0, 2.0].iter().enumerate() {
            let alpha = scalar_cost_depth1(sig, l, lam).alpha_star;
            let gain = (1.0 + alpha / l as f64).powi(l as i32);
            assert!((s.get(j) - gain).abs() < 1e-12);
        }
        assert!((s.get(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn witness_errors() {
        let a = Matrix::identity(3);
        assert!(matches!(build_min_cost(&a, &cp(1.0, 2, BlockDepth::One, 2)), Err(Error::WidthTooSmall { .. })));
        let inf = CostParams::new(1.0, Depth::Infinite, BlockDepth::Two, 3).unwrap();
        assert!(matches!(build_min_cost(&a, &inf), Err(Error::Domain(_))));
    }

    #[test]
    fn json_roundtrip() {
        let a = gaussian_matrix(2, 3, &mut seeded_rng(1));
        for bd in [BlockDepth::One, BlockDepth::Two] {
            let w = build_min_cost(&a, &cp(0.5, 3, bd, 3)).unwrap();
            let text = serde_json::to_string(&w.params).unwrap();
            let back: LinearResNetParams = serde_json::from_str(&text).unwrap();
            assert_eq!(back, w.params);
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["block_depth"], bd.as_u8());
            assert_eq!(v["w_u"]["rows"], 2);
            assert!(v.get("b_u").is_none());
        }
        let bad = r#"{"w_u":{"rows":1,"cols":1,"entries":[1]},"w_e":{"rows":1,"cols":1,"entries":[1]},"blocks":[{"w":{"rows":1,"cols":1,"entries":[0]}}],"block_depth":2}"#;
        assert!(serde_json::from_str::<LinearResNetParams>(bad).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let a = gaussian_matrix(2, 2, &mut seeded_rng(3));
        let w = build_min_cost(&a, &cp(0.5, 2, BlockDepth::Two, 3)).unwrap();
        assert_eq!(w.params.with_flat(&w.params.to_flat()), w.params);
        assert_eq!(w.params.to_flat().len(), w.params.num_params());
    }
}
