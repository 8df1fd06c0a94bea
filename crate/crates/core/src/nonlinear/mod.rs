//! ReLU residual networks `f_u ∘ (id + f_L) ∘ ⋯ ∘ (id + f_1) ∘ f_e`, plain
//! ReLU feedforward maps, exact activation-pattern Jacobians and the
//! Jacobian-rank lower bound on the weight penalty.

mod bottleneck;
mod domain;

pub use bottleneck::*;
pub use domain::DomainBox;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serial::{missing, BlockJson, NetworkJson};
use crate::spectral::{matrix_cost, BlockDepth, CostParams, Depth};
use crate::tensor::{gaussian_matrix, gaussian_vector, numeric_rank, seeded_rng, Matrix};

/// Preactivations closer to zero than this are treated as kinks.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinBlock {
    /// `z ↦ σ(Wz + b)`
    Depth1 { w: Matrix, b: Vec<f64> },
    /// `z ↦ W_2 σ(W_1 z + b_1) + b_2`
    Depth2 { w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64> },
}

impl NonlinBlock {
    pub fn block_depth(&self) -> BlockDepth {
        match self {
            NonlinBlock::Depth1 { .. } => BlockDepth::One,
            NonlinBlock::Depth2 { .. } => BlockDepth::Two,
        }
    }

    pub fn zeros(n: usize, block_depth: BlockDepth) -> Self {
        match block_depth {
            BlockDepth::One => NonlinBlock::Depth1 { w: Matrix::zeros(n, n), b: vec![0.0; n] },
            BlockDepth::Two => NonlinBlock::Depth2 {
                w1: Matrix::zeros(n, n),
                b1: vec![0.0; n],
                w2: Matrix::zeros(n, n),
                b2: vec![0.0; n],
            },
        }
    }

    fn weight_norm_sq(&self) -> f64 {
        match self {
            NonlinBlock::Depth1 { w, .. } => w.frobenius_sq(),
            NonlinBlock::Depth2 { w1, w2, .. } => w1.frobenius_sq() + w2.frobenius_sq(),
        }
    }

    /// Inner preactivation weights and biases.
    fn gate(&self) -> (&Matrix, &[f64]) {
        match self {
            NonlinBlock::Depth1 { w, b } => (w, b),
            NonlinBlock::Depth2 { w1, b1, .. } => (w1, b1),
        }
    }

    fn check(&self, n: usize, index: usize) -> Result<()> {
        let square = |m: &Matrix| m.shape() == (n, n);
        let ok = match self {
            NonlinBlock::Depth1 { w, b } => square(w) && b.len() == n,
            NonlinBlock::Depth2 { w1, b1, w2, b2 } => square(w1) && square(w2) && b1.len() == n && b2.len() == n,
        };
        let finite = match self {
            NonlinBlock::Depth1 { b, .. } => b.iter().all(|v| v.is_finite()),
            NonlinBlock::Depth2 { b1, b2, .. } => b1.iter().chain(b2).all(|v| v.is_finite()),
        };
        if !ok {
            return Err(Error::DimensionMismatch(format!("block {index} does not act on width {n}")));
        }
        if !finite {
            return Err(Error::NonFinite("block bias"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinResNetParams {
    w_u: Matrix,
    b_u: Vec<f64>,
    w_e: Matrix,
    b_e: Vec<f64>,
    blocks: Vec<NonlinBlock>,
}

impl NonlinResNetParams {
    pub fn new(w_u: Matrix, b_u: Vec<f64>, w_e: Matrix, b_e: Vec<f64>, blocks: Vec<NonlinBlock>) -> Result<Self> {
        let n = w_e.rows();
        if w_u.cols() != n || b_u.len() != w_u.rows() || b_e.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "W_u {:?}, b_u {}, W_e {:?}, b_e {} do not conform",
                w_u.shape(),
                b_u.len(),
                w_e.shape(),
                b_e.len()
            )));
        }
        if b_u.iter().chain(&b_e).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding bias"));
        }
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("a network needs at least one block".into()));
        }
        let bd = blocks[0].block_depth();
        for (i, b) in blocks.iter().enumerate() {
            if b.block_depth() != bd {
                return Err(Error::DimensionMismatch(format!("block {i} mixes block depths")));
            }
            b.check(n, i)?;
        }
        Ok(Self { w_u, b_u, w_e, b_e, blocks })
    }

    pub fn w_u(&self) -> &Matrix {
        &self.w_u
    }

    pub fn b_u(&self) -> &[f64] {
        &self.b_u
    }

    pub fn w_e(&self) -> &Matrix {
        &self.w_e
    }

    pub fn b_e(&self) -> &[f64] {
        &self.b_e
    }

    pub fn blocks(&self) -> &[NonlinBlock] {
        &self.blocks
    }

    /// Replaces block `i`, keeping the network valid.
    pub fn with_block(&self, i: usize, block: NonlinBlock) -> Result<Self> {
        let mut blocks = self.blocks.clone();
        *blocks.get_mut(i).ok_or_else(|| Error::Domain(format!("no block {i}")))? = block;
        Self::new(self.w_u.clone(), self.b_u.clone(), self.w_e.clone(), self.b_e.clone(), blocks)
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

    /// Runs the network, handing every block's inner preactivation vector to
    /// `visit`.
    fn run(&self, x: &[f64], mut visit: impl FnMut(usize, &[f64])) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch(format!("input has length {}, expected {}", x.len(), self.d_in())));
        }
        let mut z = affine(&self.w_e, x, &self.b_e);
        for (l, block) in self.blocks.iter().enumerate() {
            let (gw, gb) = block.gate();
            let pre = affine(gw, &z, gb);
            visit(l, &pre);
            let act: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
            match block {
                NonlinBlock::Depth1 { .. } => {
                    for (zi, a) in z.iter_mut().zip(&act) {
                        *zi += a;
                    }
                }
                NonlinBlock::Depth2 { w2, b2, .. } => {
                    for (zi, u) in z.iter_mut().zip(affine(w2, &act, b2)) {
                        *zi += u;
                    }
                }
            }
        }
        Ok(affine(&self.w_u, &z, &self.b_u))
    }
}

/// `Wx + b`.
fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b[i])
        .collect()
}

fn row_is_zero(w: &Matrix, i: usize) -> bool {
    w.row(i).iter().all(|&v| v == 0.0)
}

/// Active set of one layer; units whose weight row is zero are constant and
/// never count as kinks.
fn layer_pattern(w: &Matrix, pre: &[f64], layer: usize) -> Result<Vec<bool>> {
    pre.iter()
        .enumerate()
        .map(|(unit, &p)| {
            if row_is_zero(w, unit) {
                Ok(p > 0.0)
            } else if p.abs() < BOUNDARY_TOL {
                Err(Error::Boundary { layer, unit })
            } else {
                Ok(p > 0.0)
            }
        })
        .collect()
}

/// A finite piecewise-linear map with an exact Jacobian away from kinks.
pub trait PiecewiseLinear {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Fails with a boundary error at a kink.
    fn jacobian(&self, x: &[f64]) -> Result<Matrix>;
    /// Activation signs of every ReLU unit, in evaluation order.
    fn pattern(&self, x: &[f64]) -> Result<Vec<bool>>;
}

impl PiecewiseLinear for NonlinResNetParams {
    fn input_dim(&self) -> usize {
        self.d_in()
    }

    fn output_dim(&self) -> usize {
        self.d_out()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, |_, _| {})
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        jacobian_at(self, x)
    }

    fn pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        self.run(x, |_, pre| out.extend(pre.iter().map(|&p| p > 0.0)))?;
        Ok(out)
    }
}

pub fn forward_nonlin(params: &NonlinResNetParams, x: &[f64]) -> Result<Vec<f64>> {
    params.run(x, |_, _| {})
}

/// `½‖W_u‖² + ½‖W_e‖²` plus `λL Σ‖W_ℓ‖²` (depth-1) or `(λ/2) Σ‖W_{ℓ,j}‖²`
/// (depth-2). Biases are free.
pub fn penalty_nonlin(params: &NonlinResNetParams, lambda: f64) -> f64 {
    let blocks: f64 = params.blocks.iter().map(NonlinBlock::weight_norm_sq).sum();
    let weight = match params.block_depth() {
        BlockDepth::One => lambda * params.depth() as f64,
        BlockDepth::Two => 0.5 * lambda,
    };
    0.5 * (params.w_u.frobenius_sq() + params.w_e.frobenius_sq()) + weight * blocks
}

/// `W_u (I + W_{L,2}D_L W_{L,1}) ⋯ (I + W_{1,2}D_1 W_{1,1}) W_e`, with `D_ℓ`
/// the activation pattern at `x` (`W_{ℓ,2} = I` for depth-1 blocks).
pub fn jacobian_at(params: &NonlinResNetParams, x: &[f64]) -> Result<Matrix> {
    let mut pres = Vec::with_capacity(params.depth());
    params.run(x, |_, pre| pres.push(pre.to_vec()))?;
    let mut m = params.w_e.clone();
    for (l, (block, pre)) in params.blocks.iter().zip(&pres).enumerate() {
        let (gw, _) = block.gate();
        let active = layer_pattern(gw, pre, l)?;
        let mut inner = gw * &m;
        for (i, &on) in active.iter().enumerate() {
            if !on {
                for j in 0..inner.cols() {
                    inner[(i, j)] = 0.0;
                }
            }
        }
        let update = match block {
            NonlinBlock::Depth1 { .. } => inner,
            NonlinBlock::Depth2 { w2, .. } => w2 * &inner,
        };
        m = m.add(&update)?;
    }
    Ok(&params.w_u * &m)
}

/// One layer `x ↦ Wx + b` of a feedforward ReLU map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FplfLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Plain ReLU map `x ↦ W_p σ(⋯ σ(W_1 x + b_1) ⋯) + b_p`; the last layer is
/// affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FplfJson", into = "FplfJson")]
pub struct FplfSpec {
    layers: Vec<FplfLayer>,
}

#[derive(Serialize, Deserialize)]
struct FplfJson {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<FplfLayer>,
}

impl TryFrom<FplfJson> for FplfSpec {
    type Error = Error;

    fn try_from(j: FplfJson) -> Result<Self> {
        let spec = FplfSpec::new(j.layers)?;
        if spec.input_dim() != j.input_dim || spec.output_dim() != j.output_dim {
            return Err(Error::DimensionMismatch("declared dimensions disagree with the layers".into()));
        }
        Ok(spec)
    }
}

impl From<FplfSpec> for FplfJson {
    fn from(s: FplfSpec) -> Self {
        FplfJson { input_dim: s.input_dim(), output_dim: s.output_dim(), layers: s.layers }
    }
}

impl FplfSpec {
    pub fn new(layers: Vec<FplfLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("an FPLF needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.rows() {
                return Err(Error::DimensionMismatch(format!("layer {i}: bias length {} vs {} rows", l.b.len(), l.w.rows())));
            }
            if l.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("FPLF bias"));
            }
            if i > 0 && layers[i - 1].w.rows() != l.w.cols() {
                return Err(Error::DimensionMismatch(format!("layer {i} does not chain")));
            }
        }
        Ok(Self { layers })
    }

    /// The identity on `R^dim`, a single affine layer.
    pub fn identity(dim: usize) -> Self {
        Self { layers: vec![FplfLayer { w: Matrix::identity(dim), b: vec![0.0; dim] }] }
    }

    pub fn layers(&self) -> &[FplfLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.rows()
    }

    /// Same map with `shift` added to the output.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut layers = self.layers.clone();
        let last = layers.last_mut().expect("non-empty");
        for (b, s) in last.b.iter_mut().zip(shift) {
            *b += s;
        }
        Self { layers }
    }

    /// Same map precomposed with `y ↦ y − shift`.
    pub fn preshifted(&self, shift: &[f64]) -> Self {
        let mut layers = self.layers.clone();
        let first = &mut layers[0];
        let ws = first.w.mul_vec(shift).expect("shift matches input");
        for (b, d) in first.b.iter_mut().zip(ws) {
            *b -= d;
        }
        Self { layers }
    }

    fn run(&self, x: &[f64], mut visit: impl FnMut(usize, &[f64])) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!("input has length {}, expected {}", x.len(), self.input_dim())));
        }
        let mut z = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            z = affine(&l.w, &z, &l.b);
            if i < last {
                visit(i, &z);
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(z)
    }
}

impl PiecewiseLinear for FplfSpec {
    fn input_dim(&self) -> usize {
        FplfSpec::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        FplfSpec::output_dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, |_, _| {})
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let mut pres = Vec::new();
        self.run(x, |_, pre| pres.push(pre.to_vec()))?;
        let mut j = self.layers[0].w.clone();
        for (i, pre) in pres.iter().enumerate() {
            let active = layer_pattern(&self.layers[i].w, pre, i)?;
            for (r, &on) in active.iter().enumerate() {
                if !on {
                    for c in 0..j.cols() {
                        j[(r, c)] = 0.0;
                    }
                }
            }
            j = &self.layers[i + 1].w * &j;
        }
        Ok(j)
    }

    fn pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        self.run(x, |_, pre| out.extend(pre.iter().map(|&p| p > 0.0)))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JacobianRankReport {
    pub rank: usize,
    pub valid: usize,
    pub rejected: usize,
}

/// Largest numeric rank of the Jacobian over the non-kink sample points.
pub fn jacobian_rank(f: &dyn PiecewiseLinear, domain: &DomainBox, tol: f64) -> Result<JacobianRankReport> {
    let mut report = JacobianRankReport { rank: 0, valid: 0, rejected: 0 };
    for x in domain.samples() {
        match f.jacobian(x) {
            Ok(j) => {
                report.valid += 1;
                report.rank = report.rank.max(numeric_rank(&j, tol)?);
            }
            Err(Error::Boundary { .. }) => report.rejected += 1,
            Err(e) => return Err(e),
        }
    }
    if report.valid == 0 {
        return Err(Error::AllSamplesDegenerate { rejected: report.rejected });
    }
    Ok(report)
}

/// Relative gap `max|J − J_fd| / max(1, max|J|)` between the exact
/// Jacobian and central differences with step `h`, or `None` when the
/// stencil crosses a kink (the activation pattern changes).
pub fn jacobian_fd_gap(f: &dyn PiecewiseLinear, x: &[f64], h: f64) -> Result<Option<f64>> {
    let j = match f.jacobian(x) {
        Ok(j) => j,
        Err(Error::Boundary { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let base = f.pattern(x)?;
    let mut worst: f64 = 0.0;
    for c in 0..x.len() {
        let mut xp = x.to_vec();
        xp[c] += h;
        let mut xm = x.to_vec();
        xm[c] -= h;
        if f.pattern(&xp)? != base || f.pattern(&xm)? != base {
            return Ok(None);
        }
        let (yp, ym) = (f.eval(&xp)?, f.eval(&xm)?);
        for r in 0..yp.len() {
            worst = worst.max((j[(r, c)] - (yp[r] - ym[r]) / (2.0 * h)).abs());
        }
    }
    Ok(Some(worst / j.max_abs().max(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundReport {
    /// Largest linear minimum cost over the sampled Jacobians.
    pub max_linear_cost: f64,
    pub penalty: f64,
    pub holds: bool,
    pub valid: usize,
    pub rejected: usize,
}

/// Kink resamples allowed per domain sample.
const RESAMPLE_BUDGET: usize = 20;

/// Checks `penalty_nonlin(θ) ≥ max_x c^{lin}(J f(x; θ))` over the domain
/// samples; samples on a kink are redrawn uniformly from the box up to a
/// fixed budget.
pub fn jacobian_lower_bound_check(
    params: &NonlinResNetParams,
    lambda: f64,
    block_depth: BlockDepth,
    domain: &DomainBox,
) -> Result<LowerBoundReport> {
    if params.block_depth() != block_depth {
        return Err(Error::DimensionMismatch("block depth disagrees with the network".into()));
    }
    let cost_params = CostParams::new(lambda, Depth::Finite(params.depth()), block_depth, params.width())?;
    let mut rng = seeded_rng(domain.seed() ^ 0x005e_ed0f_f5e7);
    let mut max_cost: f64 = 0.0;
    let (mut valid, mut rejected) = (0, 0);
    for x in domain.samples() {
        let mut point = x.clone();
        for attempt in 0..=RESAMPLE_BUDGET {
            match jacobian_at(params, &point) {
                Ok(j) => {
                    valid += 1;
                    max_cost = max_cost.max(matrix_cost(&j, &cost_params)?.total);
                    break;
                }
                Err(Error::Boundary { .. }) => {
                    rejected += 1;
                    if attempt < RESAMPLE_BUDGET {
                        point = domain.uniform_point(&mut rng);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    if valid == 0 {
        return Err(Error::AllSamplesDegenerate { rejected });
    }
    let penalty = penalty_nonlin(params, lambda);
    Ok(LowerBoundReport {
        max_linear_cost: max_cost,
        penalty,
        holds: penalty >= max_cost - 1e-8 * (1.0 + penalty),
        valid,
        rejected,
    })
}

/// Random ReLU residual network with width ≤ 6, depth ≤ 6 and input/output
/// dimensions ≤ 4; weights and biases are Gaussian with a seed-drawn scale.
pub fn random_network(seed: u64, block_depth: BlockDepth) -> NonlinResNetParams {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(1..=6);
    let depth = rng.random_range(1..=6);
    let d_in = rng.random_range(1..=4);
    let d_out = rng.random_range(1..=4);
    let scale = 0.2 + 0.8 * rng.random::<f64>();
    let mat = |r, c, rng: &mut crate::tensor::Rng| gaussian_matrix(r, c, rng).scale(scale);
    let w_u = mat(d_out, n, &mut rng);
    let w_e = mat(n, d_in, &mut rng);
    let blocks = (0..depth)
        .map(|_| match block_depth {
            BlockDepth::One => NonlinBlock::Depth1 { w: mat(n, n, &mut rng), b: gaussian_vector(n, &mut rng) },
            BlockDepth::Two => NonlinBlock::Depth2 {
                w1: mat(n, n, &mut rng),
                b1: gaussian_vector(n, &mut rng),
                w2: mat(n, n, &mut rng),
                b2: gaussian_vector(n, &mut rng),
            },
        })
        .collect();
    let b_u = gaussian_vector(d_out, &mut rng);
    let b_e = gaussian_vector(n, &mut rng);
    NonlinResNetParams::new(w_u, b_u, w_e, b_e, blocks).expect("shapes conform")
}

impl Serialize for NonlinResNetParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                NonlinBlock::Depth1 { w, b } => BlockJson { w: Some(w.clone()), b: Some(b.clone()), ..Default::default() },
                NonlinBlock::Depth2 { w1, b1, w2, b2 } => BlockJson {
                    w1: Some(w1.clone()),
                    b1: Some(b1.clone()),
                    w2: Some(w2.clone()),
                    b2: Some(b2.clone()),
                    ..Default::default()
                },
            })
            .collect();
        NetworkJson {
            w_u: self.w_u.clone(),
            w_e: self.w_e.clone(),
            b_u: Some(self.b_u.clone()),
            b_e: Some(self.b_e.clone()),
            blocks,
            block_depth: self.block_depth().as_u8(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NonlinResNetParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let net = NetworkJson::deserialize(d)?;
        nonlin_from_json(net).map_err(D::Error::custom)
    }
}

fn nonlin_from_json(net: NetworkJson) -> Result<NonlinResNetParams> {
    let bd = BlockDepth::from_u8(net.block_depth)?;
    let blocks = net
        .blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| match bd {
            BlockDepth::One => Ok(NonlinBlock::Depth1 {
                w: b.w.ok_or_else(|| missing("w", i))?,
                b: b.b.ok_or_else(|| missing("b", i))?,
            }),
            BlockDepth::Two => Ok(NonlinBlock::Depth2 {
                w1: b.w1.ok_or_else(|| missing("w1", i))?,
                b1: b.b1.ok_or_else(|| missing("b1", i))?,
                w2: b.w2.ok_or_else(|| missing("w2", i))?,
                b2: b.b2.ok_or_else(|| missing("b2", i))?,
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let b_u = net.b_u.ok_or_else(|| Error::DimensionMismatch("missing field `b_u`".into()))?;
    let b_e = net.b_e.ok_or_else(|| Error::DimensionMismatch("missing field `b_e`".into()))?;
    NonlinResNetParams::new(net.w_u, b_u, net.w_e, b_e, blocks)
}

#[cfg(test)]
mod tests;
