//! Numerical minimum-norm fitting, independent of the closed-form costs.
//!
//! [`min_norm_train`] minimizes `μ‖f(θ) − A‖²_F + penalty(θ)` by full-batch
//! gradient descent over an increasing schedule of `μ`, warm-starting each
//! stage, with gradients obtained by reverse accumulation through the chain
//! `W_u R_1 ⋯ R_L W_e`. [`brute_force_scalar`] solves the 1×1 problem by
//! exhaustive grid search plus coordinate descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{golden_section, BlockDepth, CostParams, Depth};
use crate::tensor::{case_rng, gaussian_matrix, numeric_rank, Matrix, Rng, DEFAULT_RANK_TOL};
use crate::witness::{forward_linear, penalty, LinearBlock, LinearResNetParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Target for `‖f(θ) − A‖_F / max(1, ‖A‖_F)`.
    pub fit_tolerance: f64,
    /// Base constraint weights; each is multiplied by `1 + ‖A‖_F⁻²`
    /// (by 1 when `A = 0`).
    pub penalty_schedule: Vec<f64>,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Record a trace row every this many iterations (and at stage ends).
    pub trace_every: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            fit_tolerance: 1e-6,
            penalty_schedule: vec![1e2, 1e4, 1e6, 1e8],
            max_iterations: 20_000,
            initial_step: 1e-3,
            seed: 0,
            restarts: 5,
            trace_every: 250,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        let increasing = self.penalty_schedule.windows(2).all(|w| w[0] < w[1]);
        if self.penalty_schedule.is_empty() || !increasing || self.penalty_schedule.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Domain("penalty schedule must be non-empty, positive and strictly increasing".into()));
        }
        if !(self.fit_tolerance > 0.0) || !(self.initial_step > 0.0) || self.restarts == 0 {
            return Err(Error::Domain("fit tolerance, initial step and restarts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub stage: usize,
    pub iteration: usize,
    pub objective: f64,
    pub fit_residual: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub params: LinearResNetParams,
    pub fit_residual: f64,
    pub penalty_value: f64,
    pub converged: bool,
    /// Restart index that produced this result.
    pub restart: usize,
    pub trace: Vec<TraceRow>,
}

/// Value and flat gradient of `μ‖f(θ) − A‖²_F + penalty(θ, λ)`.
pub fn staged_objective(params: &LinearResNetParams, a: &Matrix, lambda: f64, mu: f64) -> (f64, Vec<f64>) {
    let residuals: Vec<Matrix> = params.blocks().iter().map(LinearBlock::residual).collect();
    let l = residuals.len();

    // prefix[i] = W_u R_1 ⋯ R_i ; suffix[i] = R_{i+1} ⋯ R_L W_e (0-based blocks).
    let mut prefix = Vec::with_capacity(l + 1);
    prefix.push(params.w_u().clone());
    for r in &residuals {
        let next = prefix.last().unwrap() * r;
        prefix.push(next);
    }
    let mut suffix = vec![params.w_e().clone(); l + 1];
    for i in (0..l).rev() {
        suffix[i] = &residuals[i] * &suffix[i + 1];
    }

    let f = &prefix[l] * params.w_e();
    let diff = f.sub(a).expect("target shape matches network");
    let g = diff.scale(2.0 * mu);
    let value = mu * diff.frobenius_sq() + penalty(params, lambda);

    let mut grad = Vec::with_capacity(params.num_params());
    let d_wu = (&g * &suffix[0].transpose()).add(params.w_u()).unwrap();
    grad.extend_from_slice(d_wu.as_slice());
    let d_we = (&prefix[l].transpose() * &g).add(params.w_e()).unwrap();
    grad.extend_from_slice(d_we.as_slice());

    let depth_weight = 2.0 * lambda * l as f64;
    for (i, block) in params.blocks().iter().enumerate() {
        let d_r = &(&prefix[i].transpose() * &g) * &suffix[i + 1].transpose();
        match block {
            LinearBlock::Depth1 { w } => {
                let d = d_r.add(&w.scale(depth_weight)).unwrap();
                grad.extend_from_slice(d.as_slice());
            }
            LinearBlock::Depth2 { w1, w2 } => {
                let d1 = (&w2.transpose() * &d_r).add(&w1.scale(lambda)).unwrap();
                let d2 = (&d_r * &w1.transpose()).add(&w2.scale(lambda)).unwrap();
                grad.extend_from_slice(d1.as_slice());
                grad.extend_from_slice(d2.as_slice());
            }
        }
    }
    (value, grad)
}

fn objective_value(params: &LinearResNetParams, a: &Matrix, lambda: f64, mu: f64) -> f64 {
    let diff = forward_linear(params).sub(a).expect("target shape matches network");
    mu * diff.frobenius_sq() + penalty(params, lambda)
}

/// Largest relative discrepancy between the analytic gradient of the staged
/// objective and central differences (step `1e-6·(1+|θ_j|)`) over 20 random
/// coordinates, or all of them when there are fewer.
pub fn finite_difference_check(params: &LinearResNetParams, a: &Matrix, lambda: f64, mu: f64) -> f64 {
    use rand::Rng as _;
    let (_, grad) = staged_objective(params, a, lambda, mu);
    let flat = params.to_flat();
    let coords: Vec<usize> = if flat.len() <= 20 {
        (0..flat.len()).collect()
    } else {
        let mut rng = case_rng(flat.len() as u64, 0);
        (0..20).map(|_| rng.random_range(0..flat.len())).collect()
    };
    let mut worst: f64 = 0.0;
    for j in coords {
        let h = 1e-6 * (1.0 + flat[j].abs());
        let mut plus = flat.clone();
        plus[j] += h;
        let mut minus = flat.clone();
        minus[j] -= h;
        let fp = objective_value(&params.with_flat(&plus), a, lambda, mu);
        let fm = objective_value(&params.with_flat(&minus), a, lambda, mu);
        let fd = (fp - fm) / (2.0 * h);
        let scale = 1f64.max(grad[j].abs()).max(fd.abs());
        worst = worst.max((grad[j] - fd).abs() / scale);
    }
    worst
}

/// Relative fit residual `‖f(θ) − A‖_F / max(1, ‖A‖_F)`.
pub fn fit_residual(params: &LinearResNetParams, a: &Matrix) -> f64 {
    let diff = forward_linear(params).sub(a).expect("target shape matches network");
    diff.frobenius_norm() / a.frobenius_norm().max(1.0)
}

fn check_problem(a: &Matrix, cost_params: &CostParams) -> Result<usize> {
    let Depth::Finite(depth) = cost_params.depth else {
        return Err(Error::Domain("the oracle needs a finite depth".into()));
    };
    let rank = numeric_rank(a, DEFAULT_RANK_TOL)?;
    if cost_params.width < rank {
        return Err(Error::WidthTooSmall { width: cost_params.width, rank });
    }
    Ok(depth)
}

fn random_init(a: &Matrix, cost_params: &CostParams, depth: usize, rng: &mut Rng) -> LinearResNetParams {
    let n = cost_params.width;
    let w_u = gaussian_matrix(a.rows(), n, rng).scale(1e-2);
    let w_e = gaussian_matrix(n, a.cols(), rng).scale(1e-2);
    let blocks = (0..depth)
        .map(|_| match cost_params.block_depth {
            BlockDepth::One => LinearBlock::Depth1 { w: gaussian_matrix(n, n, rng).scale(1e-3) },
            BlockDepth::Two => LinearBlock::Depth2 {
                w1: gaussian_matrix(n, n, rng).scale(1e-3),
                w2: gaussian_matrix(n, n, rng).scale(1e-3),
            },
        })
        .collect();
    LinearResNetParams::new(w_u, w_e, blocks).expect("shapes conform")
}

/// Best of `config.restarts` penalty-continuation runs from small random
/// initializations. Restarts run in parallel; the winner is the converged
/// run with the lowest `(penalty, restart)`, or the best-fitting run when
/// none converged.
pub fn min_norm_train(a: &Matrix, cost_params: &CostParams, config: &OracleConfig) -> Result<TrainResult> {
    config.validate()?;
    let depth = check_problem(a, cost_params)?;
    let runs: Vec<TrainResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = case_rng(config.seed, r as u64);
            let init = random_init(a, cost_params, depth, &mut rng);
            let mut out = continuation(a, cost_params.lambda, config, init);
            out.restart = r;
            out
        })
        .collect();
    Ok(select_best(runs))
}

fn select_best(runs: Vec<TrainResult>) -> TrainResult {
    let best = if runs.iter().any(|r| r.converged) {
        runs.into_iter()
            .filter(|r| r.converged)
            .min_by(|x, y| x.penalty_value.total_cmp(&y.penalty_value).then(x.restart.cmp(&y.restart)))
    } else {
        runs.into_iter()
            .min_by(|x, y| x.fit_residual.total_cmp(&y.fit_residual).then(x.restart.cmp(&y.restart)))
    };
    best.expect("at least one restart")
}

/// Single continuation run warm-started at `init`.
pub fn min_norm_train_from(
    a: &Matrix,
    cost_params: &CostParams,
    config: &OracleConfig,
    init: &LinearResNetParams,
) -> Result<TrainResult> {
    config.validate()?;
    check_problem(a, cost_params)?;
    if init.block_depth() != cost_params.block_depth || init.width() != cost_params.width {
        return Err(Error::DimensionMismatch("initial parameters do not match the cost parameters".into()));
    }
    if (init.d_out(), init.d_in()) != a.shape() {
        return Err(Error::DimensionMismatch("initial parameters do not match the target shape".into()));
    }
    Ok(continuation(a, cost_params.lambda, config, init.clone()))
}

fn continuation(a: &Matrix, lambda: f64, config: &OracleConfig, init: LinearResNetParams) -> TrainResult {
    let norm_sq = a.frobenius_sq();
    let mu_scale = if norm_sq > 0.0 { 1.0 + 1.0 / norm_sq } else { 1.0 };
    let mut theta = init.to_flat();
    let mut trace = Vec::new();
    let mut step = config.initial_step;
    let mut net = init;

    for (stage, &base) in config.penalty_schedule.iter().enumerate() {
        let mu = base * mu_scale;
        step = descend(&mut theta, &mut net, a, lambda, mu, step / 100.0, config, stage, &mut trace);
        if fit_residual(&net, a) <= config.fit_tolerance {
            break;
        }
    }

    let fit = fit_residual(&net, a);
    TrainResult {
        penalty_value: penalty(&net, lambda),
        fit_residual: fit,
        converged: fit <= config.fit_tolerance,
        restart: 0,
        params: net,
        trace,
    }
}

/// Gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking. Returns the last accepted step length.
#[allow(clippy::too_many_arguments)]
fn descend(
    theta: &mut Vec<f64>,
    net: &mut LinearResNetParams,
    a: &Matrix,
    lambda: f64,
    mu: f64,
    initial_step: f64,
    config: &OracleConfig,
    stage: usize,
    trace: &mut Vec<TraceRow>,
) -> f64 {
    let (mut value, mut grad) = staged_objective(net, a, lambda, mu);
    let mut step = initial_step;
    let mut last_step = initial_step;
    let mut stalled = 0;
    let record = |trace: &mut Vec<TraceRow>, it: usize, value: f64, net: &LinearResNetParams| {
        trace.push(TraceRow {
            stage,
            iteration: it,
            objective: value,
            fit_residual: fit_residual(net, a),
            penalty: penalty(net, lambda),
        });
    };

    for it in 0..config.max_iterations {
        if config.trace_every > 0 && it % config.trace_every == 0 {
            record(trace, it, value, net);
        }
        let gnorm_sq: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm_sq.sqrt() <= 1e-9 * (1.0 + value) {
            break;
        }

        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(x, g)| x - t * g).collect();
            let trial_net = net.with_flat(&trial);
            let trial_value = objective_value(&trial_net, a, lambda, mu);
            if trial_value <= value - 1e-4 * t * gnorm_sq {
                accepted = Some((trial, trial_net));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_net)) = accepted else { break };

        let (next_value, next_grad) = staged_objective(&next_net, a, lambda, mu);
        let s: Vec<f64> = next.iter().zip(theta.iter()).map(|(x, y)| x - y).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(x, y)| x - y).collect();
        let sy: f64 = s.iter().zip(&y).map(|(p, q)| p * q).sum();
        let ss: f64 = s.iter().map(|p| p * p).sum();
        last_step = t;
        step = if sy > 0.0 { (ss / sy).min(1e6) } else { 2.0 * t };

        if value - next_value <= 1e-15 * value.abs() {
            stalled += 1;
        } else {
            stalled = 0;
        }
        *theta = next;
        *net = next_net;
        value = next_value;
        grad = next_grad;
        if stalled >= 20 {
            break;
        }
    }
    record(trace, usize::MAX, value, net);
    if let Some(row) = trace.last_mut() {
        row.iteration = config.max_iterations.min(row.iteration);
    }
    last_step
}

/// Trace as CSV with columns `stage,iteration,fit_residual,penalty`.
pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "iteration", "fit_residual", "penalty"])?;
    for r in trace {
        w.write_record([
            r.stage.to_string(),
            r.iteration.to_string(),
            format!("{:.16e}", r.fit_residual),
            format!("{:.16e}", r.penalty),
        ])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<trace>".into(), source: e })?;
    Ok(())
}

/// Best scalar network found by [`brute_force_scalar`].
#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub penalty: f64,
    pub w_u: f64,
    pub w_e: f64,
    /// Per-block scalars: `w_i` for depth-1, the block product `w_{i,2}w_{i,1}`
    /// for depth-2.
    pub blocks: Vec<f64>,
}

const MAX_GRID_POINTS: f64 = 5e7;

/// Minimum penalty of a 1×1 residual network computing `σ`, found by an
/// exhaustive grid over `(w_u, w_1, …, w_L) ∈ [0, 2max(1,σ)]^{L+1}` with
/// `w_e = σ / (w_u ∏(1+b_i))` eliminated, then cyclic coordinate descent.
///
/// A depth-2 block is searched through its product `m = w_2 w_1 ≥ 0`, whose
/// cheapest factorization costs `λm` (at `w_1 = w_2 = √m`).
pub fn brute_force_scalar(
    sigma: f64,
    depth: usize,
    lambda: f64,
    block_depth: BlockDepth,
    step: f64,
) -> Result<BruteForceResult> {
    if !(sigma >= 0.0) || !(lambda > 0.0) || !(step > 0.0) {
        return Err(Error::Domain("sigma ≥ 0, lambda > 0 and step > 0 required".into()));
    }
    if !(1..=4).contains(&depth) {
        return Err(Error::Domain(format!("brute force supports 1 ≤ L ≤ 4, got {depth}")));
    }
    if sigma == 0.0 {
        return Ok(BruteForceResult { penalty: 0.0, w_u: 0.0, w_e: 0.0, blocks: vec![0.0; depth] });
    }
    let bound = 2.0 * sigma.max(1.0);
    let per_axis = (bound / step).floor() as usize;
    if (per_axis as f64 + 1.0).powi(depth as i32 + 1) > MAX_GRID_POINTS {
        return Err(Error::Domain(format!("grid with step {step} is too fine for depth {depth}")));
    }
    let l = depth as f64;
    let block_cost = |b: f64| match block_depth {
        BlockDepth::One => lambda * l * b * b,
        BlockDepth::Two => lambda * b,
    };
    let eval = |x: &[f64]| -> f64 {
        let (w_u, blocks) = (x[0], &x[1..]);
        let gain: f64 = blocks.iter().map(|b| 1.0 + b).product();
        if !(gain > 0.0) || w_u <= 0.0 {
            return f64::INFINITY;
        }
        let w_e = sigma / (w_u * gain);
        0.5 * (w_u * w_u + w_e * w_e) + blocks.iter().map(|&b| block_cost(b)).sum::<f64>()
    };

    // Exhaustive grid: w_u on {step, …}, blocks on {0, step, …}.
    let mut idx = vec![0usize; depth + 1];
    idx[0] = 1;
    let mut best = (f64::INFINITY, vec![0.0; depth + 1]);
    let mut point = vec![0.0; depth + 1];
    loop {
        for (p, &i) in point.iter_mut().zip(&idx) {
            *p = i as f64 * step;
        }
        let v = eval(&point);
        if v < best.0 {
            best = (v, point.clone());
        }
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] <= per_axis {
                break;
            }
            idx[k] = if k == 0 { 1 } else { 0 };
            k += 1;
            if k > depth {
                break;
            }
        }
        if k > depth {
            break;
        }
    }

    let (mut value, mut x) = best;
    for _ in 0..5000 {
        let before = value;
        for k in 0..=depth {
            let lo = if k == 0 { 1e-12 } else { 0.0 };
            let (xk, _) = golden_section(
                |t| {
                    let mut y = x.clone();
                    y[k] = t;
                    eval(&y)
                },
                lo,
                bound,
                1e-12,
            );
            let mut y = x.clone();
            y[k] = xk;
            let v = eval(&y);
            if v <= value {
                x = y;
                value = v;
            }
        }
        if before - value <= 1e-15 * value {
            break;
        }
    }
    let gain: f64 = x[1..].iter().map(|b| 1.0 + b).product();
    Ok(BruteForceResult { penalty: value, w_u: x[0], w_e: sigma / (x[0] * gain), blocks: x[1..].to_vec() })
}
