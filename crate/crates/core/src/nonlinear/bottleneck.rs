//! Low-cost networks for `g = h_2 ∘ h_1` with `h_1 : Ω → R^k_{≥0}`: simulate
//! `h_1` at scale `1/α`, multiply the `k` bottleneck coordinates by `τ`
//! across the middle blocks, then simulate `h_2` at scale `1/β` and undo the
//! scale in the unembedding (`τβ = α`).
//!
//! Coordinates of the residual stream are laid out as disjoint slots:
//! `T` (the bottleneck, first `k` coordinates), the input slot `S_0`, one
//! slot per hidden layer of `h_1`, then one per hidden layer of `h_2`. Each
//! simulated layer reads one slot and writes the next, so earlier slots keep
//! their values and are simply never read again. The affine output layer of
//! `h_2` is folded into the unembedding.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{penalty_nonlin, DomainBox, FplfSpec, NonlinBlock, NonlinResNetParams, PiecewiseLinear};
use crate::error::{Error, Result};
use crate::spectral::BlockDepth;
use crate::tensor::Matrix;

/// Margin added to the sample minimum when shifting `h_1` nonnegative.
pub const SHIFT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Scales {
    /// `α = 1/√λ`, `β = √λ`, `τ = 1/λ`.
    pub fn for_lambda(lambda: f64) -> Self {
        Self { alpha: 1.0 / lambda.sqrt(), beta: lambda.sqrt(), tau: 1.0 / lambda }
    }
}

#[derive(Debug, Clone)]
pub struct BottleneckPlan {
    h1: FplfSpec,
    h2: FplfSpec,
    shift: Vec<f64>,
    domain: DomainBox,
    scales: Option<Scales>,
    replication: Option<usize>,
}

impl BottleneckPlan {
    /// Shifts `h1` so it is nonnegative on the domain samples (by the most
    /// negative sample value plus [`SHIFT_MARGIN`]) and precomposes `h2`
    /// with the inverse shift, so `h2 ∘ h1` is unchanged.
    pub fn new(h1: FplfSpec, h2: FplfSpec, domain: DomainBox) -> Result<Self> {
        if h1.output_dim() != h2.input_dim() {
            return Err(Error::InvalidPlan(format!(
                "h1 outputs {} coordinates but h2 takes {}",
                h1.output_dim(),
                h2.input_dim()
            )));
        }
        if domain.dim() != h1.input_dim() {
            return Err(Error::InvalidPlan(format!("domain has dimension {}, h1 takes {}", domain.dim(), h1.input_dim())));
        }
        let k = h1.output_dim();
        let mut lowest = vec![0.0f64; k];
        for x in domain.samples() {
            for (lo, v) in lowest.iter_mut().zip(h1.eval(x)?) {
                *lo = lo.min(v);
            }
        }
        let shift: Vec<f64> = lowest.iter().map(|lo| -lo + SHIFT_MARGIN).collect();
        Ok(Self { h1: h1.shifted(&shift), h2: h2.preshifted(&shift), shift, domain, scales: None, replication: None })
    }

    /// Explicit scales; requires `α, β > 0`, `τ ≥ 1` and `τβ = α`.
    pub fn with_scales(mut self, alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && tau >= 1.0) || !alpha.is_finite() || !tau.is_finite() {
            return Err(Error::InvalidPlan("scales need α, β > 0 and τ ≥ 1".into()));
        }
        if ((tau * beta - alpha) / alpha).abs() > 1e-12 {
            return Err(Error::InvalidPlan(format!("τβ = {} differs from α = {alpha}", tau * beta)));
        }
        self.scales = Some(Scales { alpha, beta, tau });
        Ok(self)
    }

    /// Fixed replication count for depth-1 constructions.
    pub fn with_replication(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidPlan("replication count must be at least 1".into()));
        }
        self.replication = Some(m);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.h1.output_dim()
    }

    /// `h_1` after the nonnegativity shift.
    pub fn h1(&self) -> &FplfSpec {
        &self.h1
    }

    /// `h_2` precomposed with the inverse shift.
    pub fn h2(&self) -> &FplfSpec {
        &self.h2
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// Simulated layers spent on `h_1`.
    pub fn l1(&self) -> usize {
        self.h1.depth()
    }

    /// Simulated layers spent on `h_2` (its affine output layer is free).
    pub fn l2(&self) -> usize {
        self.h2.depth() - 1
    }

    pub fn scales(&self, lambda: f64) -> Scales {
        self.scales.unwrap_or_else(|| Scales::for_lambda(lambda))
    }

    /// Explicit replication count, or `⌊L / log(1/λ)⌋` (at least 1).
    pub fn replication(&self, depth: usize, lambda: f64) -> usize {
        self.replication.unwrap_or_else(|| {
            let log = (1.0 / lambda).ln();
            if log > 0.0 {
                ((depth as f64 / log).floor() as usize).max(1)
            } else {
                1
            }
        })
    }

    fn layout(&self) -> Layout {
        let k = self.k();
        let mut next = k;
        let mut slot = |w: usize| {
            let r = next..next + w;
            next += w;
            r
        };
        let s0 = slot(self.h1.input_dim());
        let h1_hidden: Vec<Range<usize>> = self.h1.layers()[..self.l1() - 1].iter().map(|l| slot(l.w.rows())).collect();
        let h2_hidden: Vec<Range<usize>> = self.h2.layers()[..self.l2()].iter().map(|l| slot(l.w.rows())).collect();
        Layout { t: 0..k, s0, h1_hidden, h2_hidden, width: next }
    }

    /// Stream width the constructions need.
    pub fn required_width(&self) -> usize {
        self.layout().width
    }
}

impl PiecewiseLinear for BottleneckPlan {
    fn input_dim(&self) -> usize {
        self.h1.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.h2.output_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.h2.eval(&self.h1.eval(x)?)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let inner = self.h1.jacobian(x)?;
        Ok(&self.h2.jacobian(&self.h1.eval(x)?)? * &inner)
    }

    fn pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let mut p = self.h1.pattern(x)?;
        p.extend(self.h2.pattern(&self.h1.eval(x)?)?);
        Ok(p)
    }
}

struct Layout {
    t: Range<usize>,
    s0: Range<usize>,
    h1_hidden: Vec<Range<usize>>,
    h2_hidden: Vec<Range<usize>>,
    width: usize,
}

/// One simulated layer `dst += σ(V z_src + c)`.
struct SimLayer {
    src: Range<usize>,
    dst: Range<usize>,
    v: Matrix,
    c: Vec<f64>,
}

impl Layout {
    /// The ReLU layers of `h_1` (scaled by `1/α`) and `h_2` (scaled by `1/β`).
    fn sim_layers(&self, plan: &BottleneckPlan, scales: Scales) -> (Vec<SimLayer>, Vec<SimLayer>) {
        let mut h1_slots = vec![self.s0.clone()];
        h1_slots.extend(self.h1_hidden.iter().cloned());
        h1_slots.push(self.t.clone());
        let h1 = plan
            .h1
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| SimLayer {
                src: h1_slots[i].clone(),
                dst: h1_slots[i + 1].clone(),
                v: l.w.clone(),
                c: l.b.iter().map(|b| b / scales.alpha).collect(),
            })
            .collect();
        let mut h2_slots = vec![self.t.clone()];
        h2_slots.extend(self.h2_hidden.iter().cloned());
        let h2 = plan.h2.layers()[..plan.l2()]
            .iter()
            .enumerate()
            .map(|(i, l)| SimLayer {
                src: h2_slots[i].clone(),
                dst: h2_slots[i + 1].clone(),
                v: l.w.clone(),
                c: l.b.iter().map(|b| b / scales.beta).collect(),
            })
            .collect();
        (h1, h2)
    }

    /// Slot the unembedding reads: the last hidden slot of `h_2`, or `T`.
    fn readout(&self) -> Range<usize> {
        self.h2_hidden.last().cloned().unwrap_or_else(|| self.t.clone())
    }
}

/// Constructed network together with its layer budget and the norm mass of
/// the simulation blocks (the constant the asymptotic bound leaves
/// unspecified, measured rather than assumed).
#[derive(Debug, Clone, Serialize)]
pub struct BottleneckBuild {
    pub params: NonlinResNetParams,
    pub block_depth: BlockDepth,
    pub l1: usize,
    pub l_int: usize,
    pub l2: usize,
    pub replication: usize,
    pub scales: Scales,
    /// `Σ‖W‖²_F` over all non-middle blocks.
    pub simulation_norm_sq: f64,
    pub penalty: f64,
}

fn embeddings(plan: &BottleneckPlan, layout: &Layout, n: usize, scales: Scales) -> (Matrix, Vec<f64>, Matrix, Vec<f64>) {
    let d_in = plan.h1.input_dim();
    let mut w_e = Matrix::zeros(n, d_in);
    for (j, r) in layout.s0.clone().enumerate() {
        w_e[(r, j)] = 1.0 / scales.alpha;
    }
    let out = plan.h2.layers().last().expect("non-empty");
    let mut w_u = Matrix::zeros(out.w.rows(), n);
    for i in 0..out.w.rows() {
        for (j, c) in layout.readout().enumerate() {
            w_u[(i, c)] = scales.beta * out.w[(i, j)];
        }
    }
    (w_u, out.b.clone(), w_e, vec![0.0; n])
}

fn check_width(plan: &BottleneckPlan, n: usize) -> Result<Layout> {
    let layout = plan.layout();
    if n < layout.width {
        return Err(Error::InsufficientWidth { width: n, needed: layout.width });
    }
    Ok(layout)
}

fn embed_block(n: usize, sim: &SimLayer, depth2: bool, m: usize) -> NonlinBlock {
    if depth2 {
        // dst += s⁻¹σ(s(Vz + c)); s balances ‖sV‖² against ‖s⁻¹I‖².
        let norm_sq = sim.v.frobenius_sq();
        let s = if norm_sq > 0.0 { (sim.dst.len() as f64 / norm_sq).powf(0.25) } else { 1.0 };
        let mut w1 = Matrix::zeros(n, n);
        let mut b1 = vec![0.0; n];
        let mut w2 = Matrix::zeros(n, n);
        for (i, r) in sim.dst.clone().enumerate() {
            for (j, c) in sim.src.clone().enumerate() {
                w1[(r, c)] = s * sim.v[(i, j)];
            }
            b1[r] = s * sim.c[i];
            w2[(r, r)] = 1.0 / s;
        }
        NonlinBlock::Depth2 { w1, b1, w2, b2: vec![0.0; n] }
    } else {
        // One of m identical copies, each adding σ(Vz + c)/m.
        let inv = 1.0 / m as f64;
        let mut w = Matrix::zeros(n, n);
        let mut b = vec![0.0; n];
        for (i, r) in sim.dst.clone().enumerate() {
            for (j, c) in sim.src.clone().enumerate() {
                w[(r, c)] = inv * sim.v[(i, j)];
            }
            b[r] = inv * sim.c[i];
        }
        NonlinBlock::Depth1 { w, b }
    }
}

fn block_norm_sq(b: &NonlinBlock) -> f64 {
    match b {
        NonlinBlock::Depth1 { w, .. } => w.frobenius_sq(),
        NonlinBlock::Depth2 { w1, w2, .. } => w1.frobenius_sq() + w2.frobenius_sq(),
    }
}

/// Depth-2 construction: `L_1` blocks simulate `h_1`, `L_int = L − L_1 − L_2`
/// middle blocks with `W_{ℓ,1} = W_{ℓ,2} = √(τ^{1/L_int} − 1)` on `T` and
/// zero biases multiply `T` by `τ`, and `L_2` blocks simulate `h_2`.
pub fn build_bottleneck_depth2(plan: &BottleneckPlan, depth: usize, n: usize, lambda: f64) -> Result<BottleneckBuild> {
    check_lambda(lambda)?;
    let layout = check_width(plan, n)?;
    let (l1, l2) = (plan.l1(), plan.l2());
    if depth < l1 + l2 + 1 {
        return Err(Error::InsufficientBudget { depth, needed: l1 + l2 + 1 });
    }
    let l_int = depth - l1 - l2;
    let scales = plan.scales(lambda);
    let (h1, h2) = layout.sim_layers(plan, scales);

    let mut blocks: Vec<NonlinBlock> = h1.iter().map(|s| embed_block(n, s, true, 1)).collect();
    let tail: Vec<NonlinBlock> = h2.iter().map(|s| embed_block(n, s, true, 1)).collect();
    let simulation_norm_sq = blocks.iter().chain(&tail).map(block_norm_sq).sum();

    let g = (scales.tau.powf(1.0 / l_int as f64) - 1.0).max(0.0).sqrt();
    let mut mid = Matrix::zeros(n, n);
    for i in layout.t.clone() {
        mid[(i, i)] = g;
    }
    let middle = NonlinBlock::Depth2 { w1: mid.clone(), b1: vec![0.0; n], w2: mid, b2: vec![0.0; n] };
    blocks.extend(std::iter::repeat_n(middle, l_int));
    blocks.extend(tail);

    let (w_u, b_u, w_e, b_e) = embeddings(plan, &layout, n, scales);
    let params = NonlinResNetParams::new(w_u, b_u, w_e, b_e, blocks)?;
    Ok(BottleneckBuild {
        penalty: penalty_nonlin(&params, lambda),
        params,
        block_depth: BlockDepth::Two,
        l1,
        l_int,
        l2,
        replication: 1,
        scales,
        simulation_norm_sq,
    })
}

/// Depth-1 construction: every ReLU layer of `h_1` and `h_2` is split into
/// `m` identical blocks with weights `V/m` and biases `c/m`, whose outputs
/// add up to the original layer on a fresh slot; the `L_int = L − m(L_1+L_2)`
/// middle blocks have `[W_ℓ]_{T×T} = (τ^{1/L_int} − 1)I_k` and zero biases.
///
/// The result is checked on the plan's domain samples; any deviation from
/// `h_2 ∘ h_1` beyond rounding is reported as a replication mismatch.
pub fn build_bottleneck_depth1(plan: &BottleneckPlan, depth: usize, n: usize, lambda: f64) -> Result<BottleneckBuild> {
    check_lambda(lambda)?;
    let layout = check_width(plan, n)?;
    let (l1, l2) = (plan.l1(), plan.l2());
    let m = plan.replication(depth, lambda);
    let needed = m * (l1 + l2) + 1;
    if depth < needed {
        return Err(Error::InsufficientBudget { depth, needed });
    }
    let l_int = depth - m * (l1 + l2);
    let scales = plan.scales(lambda);
    let (h1, h2) = layout.sim_layers(plan, scales);

    let replicate = |sims: &[SimLayer]| -> Vec<NonlinBlock> {
        sims.iter().flat_map(|s| std::iter::repeat_n(embed_block(n, s, false, m), m)).collect()
    };
    let mut blocks = replicate(&h1);
    let tail = replicate(&h2);
    let simulation_norm_sq = blocks.iter().chain(&tail).map(block_norm_sq).sum();

    let g = (scales.tau.powf(1.0 / l_int as f64) - 1.0).max(0.0);
    let mut mid = Matrix::zeros(n, n);
    for i in layout.t.clone() {
        mid[(i, i)] = g;
    }
    blocks.extend(std::iter::repeat_n(NonlinBlock::Depth1 { w: mid, b: vec![0.0; n] }, l_int));
    blocks.extend(tail);

    let (w_u, b_u, w_e, b_e) = embeddings(plan, &layout, n, scales);
    let params = NonlinResNetParams::new(w_u, b_u, w_e, b_e, blocks)?;

    let report = verify_representation(&params, plan, plan.domain(), f64::INFINITY)?;
    let scale = plan
        .domain()
        .samples()
        .iter()
        .map(|x| plan.eval(x).map(|y| y.iter().fold(0.0f64, |a, v| a.max(v.abs()))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0f64, f64::max);
    if report.max_deviation > 1e-8 * scale {
        return Err(Error::ReplicationMismatch { deviation: report.max_deviation });
    }

    Ok(BottleneckBuild {
        penalty: penalty_nonlin(&params, lambda),
        params,
        block_depth: BlockDepth::One,
        l1,
        l_int,
        l2,
        replication: m,
        scales,
        simulation_norm_sq,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda must be positive, got {lambda}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub max_deviation: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Minimum number of samples a representation check accepts.
pub const MIN_VERIFY_SAMPLES: usize = 100;

/// Largest `‖f(x; θ) − g(x)‖_∞` over the domain samples; passes iff it is at
/// most `tol`.
pub fn verify_representation(
    params: &NonlinResNetParams,
    target: &dyn PiecewiseLinear,
    domain: &DomainBox,
    tol: f64,
) -> Result<RepresentationReport> {
    let samples = domain.samples();
    if samples.len() < MIN_VERIFY_SAMPLES {
        return Err(Error::InsufficientSamples { got: samples.len(), needed: MIN_VERIFY_SAMPLES });
    }
    let mut worst: f64 = 0.0;
    for x in samples {
        let (y, t) = (params.eval(x)?, target.eval(x)?);
        if y.len() != t.len() {
            return Err(Error::DimensionMismatch("network and target outputs differ in length".into()));
        }
        worst = y.iter().zip(&t).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    Ok(RepresentationReport { max_deviation: worst, samples: samples.len(), passed: worst <= tol })
}
