//! Grid sweeps over `(block depth, L, λ)` and the seeded verification suites
//! behind the command-line front end. Every routine here is deterministic
//! for fixed inputs; work is spread over a rayon pool and collected in order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::majorization::{gelfand_fuzz, layer_chain_bound, submajorization_fuzz, FuzzRow};
use crate::nonlinear::{
    build_bottleneck_depth1, build_bottleneck_depth2, jacobian_fd_gap, jacobian_lower_bound_check, random_network,
    verify_representation, BottleneckPlan, DomainBox, FplfLayer, FplfSpec,
};
use crate::oracle::{min_norm_train, OracleConfig};
use crate::spectral::{matrix_cost, rank_ratio, BlockDepth, CostParams, Depth};
use crate::tensor::{case_rng, gaussian_matrix, nuclear_norm, seeded_rng, Matrix, Rng};
use crate::witness::build_min_cost;

/// Where a target matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    /// JSON file holding a matrix.
    File(PathBuf),
    /// Square diagonal matrix.
    Diag(Vec<f64>),
    /// `G_1 G_2` with Gaussian `G_1 ∈ R^{rows×rank}`, `G_2 ∈ R^{rank×cols}`.
    Random { seed: u64, rows: usize, cols: usize, rank: Option<usize> },
}

impl MatrixSource {
    pub fn resolve(&self) -> Result<Matrix> {
        match self {
            MatrixSource::File(path) => read_json(path),
            MatrixSource::Diag(d) => {
                if d.is_empty() {
                    return Err(Error::Domain("diagonal spectrum must be non-empty".into()));
                }
                Ok(Matrix::from_diag(d))
            }
            &MatrixSource::Random { seed, rows, cols, rank } => random_matrix(seed, rows, cols, rank),
        }
    }

    /// Short label identifying the matrix in CSV output.
    pub fn id(&self) -> String {
        match self {
            MatrixSource::File(p) => format!("file:{}", p.display()),
            MatrixSource::Diag(d) => {
                format!("diag:{}", d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
            }
            MatrixSource::Random { seed, rows, cols, rank } => match rank {
                Some(r) => format!("random:{seed}:{rows}x{cols}:r{r}"),
                None => format!("random:{seed}:{rows}x{cols}"),
            },
        }
    }
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize, rank: Option<usize>) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain("random matrix dimensions must be positive".into()));
    }
    let full = rows.min(cols);
    let r = rank.unwrap_or(full);
    if r > full {
        return Err(Error::Domain(format!("rank {r} exceeds min({rows}, {cols})")));
    }
    let mut rng = seeded_rng(seed);
    if r == full {
        return Ok(gaussian_matrix(rows, cols, &mut rng));
    }
    Ok(&gaussian_matrix(rows, r, &mut rng) * &gaussian_matrix(r, cols, &mut rng))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    NuclearRatio,
    RankRatio,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(Normalization::Raw),
            "nuclear_ratio" => Ok(Normalization::NuclearRatio),
            "rank_ratio" => Ok(Normalization::RankRatio),
            other => Err(Error::Domain(format!("unknown normalization `{other}`"))),
        }
    }
}

fn all_normalizations() -> Vec<Normalization> {
    vec![Normalization::Raw, Normalization::NuclearRatio, Normalization::RankRatio]
}

/// A `(block depth, L, λ)` grid over one target matrix. Columns for
/// normalizations that were not requested are left empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub source: MatrixSource,
    pub lambdas: Vec<f64>,
    pub depths: Vec<Depth>,
    #[serde(default = "both_block_depths")]
    pub block_depths: Vec<BlockDepth>,
    /// Network width; defaults to `max(rows, cols)`.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default = "all_normalizations")]
    pub normalizations: Vec<Normalization>,
    /// Also run the numerical oracle at finite depths.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub oracle_config: Option<OracleConfig>,
}

fn both_block_depths() -> Vec<BlockDepth> {
    vec![BlockDepth::One, BlockDepth::Two]
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.depths.is_empty() || self.block_depths.is_empty() {
            return Err(Error::Domain("sweep grids must be non-empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::Domain(format!("sweep lambdas must be positive, got {l}")));
        }
        Ok(())
    }
}

/// One sweep row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub block_depth: BlockDepth,
    pub depth: Depth,
    pub lambda: f64,
    pub sigma_list_id: String,
    pub cost: Option<f64>,
    pub nuclear_norm: Option<f64>,
    pub cost_over_nuclear: Option<f64>,
    pub rank: Option<usize>,
    pub rank_ratio: Option<f64>,
    pub oracle_cost: Option<f64>,
    pub oracle_converged: Option<bool>,
    /// `ok`, or the reason code of the error that emptied the row.
    pub status: String,
}

pub const SWEEP_HEADER: [&str; 12] = [
    "block_depth",
    "L_or_inf",
    "lambda",
    "sigma_list_id",
    "cost",
    "nuclear_norm",
    "cost_over_nuclear",
    "rank",
    "rank_ratio",
    "oracle_cost",
    "oracle_converged",
    "status",
];

/// Floats in CSV: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl ExperimentRecord {
    fn fields(&self) -> [String; 12] {
        [
            self.block_depth.as_u8().to_string(),
            self.depth.to_string(),
            fmt_float(self.lambda),
            self.sigma_list_id.clone(),
            opt_float(self.cost),
            opt_float(self.nuclear_norm),
            opt_float(self.cost_over_nuclear),
            self.rank.map(|r| r.to_string()).unwrap_or_default(),
            opt_float(self.rank_ratio),
            opt_float(self.oracle_cost),
            self.oracle_converged.map(|c| c.to_string()).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

/// Runs `f` on a pool of `jobs` threads (rayon's default when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Domain("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Domain(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Evaluates every grid point, ordered by block depth, then `L`, then `λ`
/// (each in the order given). Points whose preconditions fail become rows
/// with empty values and the error's reason code.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let a = spec.source.resolve()?;
    let nuclear = nuclear_norm(&a)?;
    let width = spec.width.unwrap_or(a.rows().max(a.cols()));
    let id = spec.source.id();
    let wants = |n: Normalization| spec.normalizations.contains(&n);
    let oracle_cfg = spec.oracle_config.clone().unwrap_or_default();

    let points: Vec<(BlockDepth, Depth, f64)> = spec
        .block_depths
        .iter()
        .flat_map(|&bd| spec.depths.iter().flat_map(move |&d| spec.lambdas.iter().map(move |&l| (bd, d, l))))
        .collect();

    let rows = points
        .into_par_iter()
        .map(|(bd, depth, lambda)| {
            let mut rec = ExperimentRecord {
                block_depth: bd,
                depth,
                lambda,
                sigma_list_id: id.clone(),
                cost: None,
                nuclear_norm: None,
                cost_over_nuclear: None,
                rank: None,
                rank_ratio: None,
                oracle_cost: None,
                oracle_converged: None,
                status: "ok".into(),
            };
            let report = match CostParams::new(lambda, depth, bd, width).and_then(|p| matrix_cost(&a, &p).map(|r| (p, r))) {
                Ok(r) => r,
                Err(e) => {
                    rec.status = e.code().into();
                    return rec;
                }
            };
            let (params, report) = report;
            rec.rank = Some(report.rank);
            if wants(Normalization::Raw) {
                rec.cost = Some(report.total);
                rec.nuclear_norm = Some(nuclear);
            }
            if wants(Normalization::NuclearRatio) && nuclear > 0.0 {
                rec.cost_over_nuclear = Some(report.total / nuclear);
            }
            if wants(Normalization::RankRatio) && depth == Depth::Infinite && lambda < 1.0 {
                rec.rank_ratio = rank_ratio(&a, lambda, bd).ok();
            }
            if spec.oracle && depth != Depth::Infinite {
                match min_norm_train(&a, &params, &oracle_cfg) {
                    Ok(r) => {
                        rec.oracle_cost = Some(r.penalty_value);
                        rec.oracle_converged = Some(r.converged);
                    }
                    Err(e) => rec.status = e.code().into(),
                }
            }
            rec
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::Io { path: "<sweep>".into(), source: e })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Witness,
    Oracle,
    Gelfand,
    Submajorization,
    Chain,
    NonlinearLower,
    NonlinearUpper,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Witness,
        Suite::Oracle,
        Suite::Gelfand,
        Suite::Submajorization,
        Suite::Chain,
        Suite::NonlinearLower,
        Suite::NonlinearUpper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Witness => "witness",
            Suite::Oracle => "oracle",
            Suite::Gelfand => "gelfand",
            Suite::Submajorization => "submajorization",
            Suite::Chain => "chain",
            Suite::NonlinearLower => "nonlinear-lower",
            Suite::NonlinearUpper => "nonlinear-upper",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::UnknownSuite(s.to_string()))
    }
}

/// Outcome of a verification suite. Every row uses the fuzz-report columns
/// `seed,lhs,rhs,margin,gauge`, where `gauge` names the check and a negative
/// margin marks a violation.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub count: usize,
    pub violations: usize,
    pub passed: bool,
    /// Suite-specific aggregates (convergence rate, worst gaps, …).
    pub stats: BTreeMap<String, f64>,
    #[serde(skip)]
    pub rows: Vec<FuzzRow>,
}

fn row(seed: u64, lhs: f64, rhs: f64, margin: f64, check: &str) -> FuzzRow {
    FuzzRow { seed, lhs, rhs, margin, gauge: check.into(), holds: margin >= 0.0 }
}

fn bd_tag(bd: BlockDepth) -> &'static str {
    match bd {
        BlockDepth::One => "d1",
        BlockDepth::Two => "d2",
    }
}

fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Instance `case` of the oracle agreement corpus: `n = 1 + case mod 3`,
/// rank cycling through `1..=n`, `L` through `{1,2,4,8}`, `λ` through
/// `{0.1, 1, 10}`, alternating block depths; entries drawn from `seed`.
pub fn oracle_instance(seed: u64, case: u64) -> (Matrix, CostParams) {
    const DEPTHS: [usize; 4] = [1, 2, 4, 8];
    const LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];
    let i = case as usize;
    let n = 1 + i % 3;
    let r = 1 + (i / 3) % n;
    let mut rng = case_rng(seed, case);
    let a = &gaussian_matrix(n, r, &mut rng) * &gaussian_matrix(r, n, &mut rng);
    let bd = if i.is_multiple_of(2) { BlockDepth::One } else { BlockDepth::Two };
    let params = CostParams::new(LAMBDAS[(i / 4) % 3], Depth::Finite(DEPTHS[i % 4]), bd, n).expect("valid grid");
    (a, params)
}

/// A `k = 1` plan `x ↦ ReLU(w·x + b)` on `[-1, 1]²` with unit `w` and
/// `|b| ≤ ½` drawn from `seed`: `h_1` is the affine map, `h_2` a ReLU.
pub fn relu_ridge_plan(seed: u64, samples: usize) -> Result<BottleneckPlan> {
    let mut rng = seeded_rng(seed);
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let bias = rng.random::<f64>() - 0.5;
    let h1 = FplfSpec::new(vec![FplfLayer { w: Matrix::from_rows(&[&[angle.cos(), angle.sin()]]), b: vec![bias] }])?;
    let h2 = FplfSpec::new(vec![
        FplfLayer { w: Matrix::identity(1), b: vec![0.0] },
        FplfLayer { w: Matrix::identity(1), b: vec![0.0] },
    ])?;
    let domain = DomainBox::new(vec![-1.0; 2], vec![1.0; 2], samples, seed)?;
    BottleneckPlan::new(h1, h2, domain)
}

/// JSON form of a bottleneck plan:
/// `{"h1": FPLF, "h2": FPLF, "domain": box, "scales"?: {alpha, beta, tau}, "replication"?: m}`.
#[derive(Debug, Clone, Deserialize)]
pub struct PlanFile {
    pub h1: FplfSpec,
    pub h2: FplfSpec,
    pub domain: DomainBox,
    #[serde(default)]
    pub scales: Option<crate::nonlinear::Scales>,
    #[serde(default)]
    pub replication: Option<usize>,
}

impl PlanFile {
    pub fn into_plan(self) -> Result<BottleneckPlan> {
        let mut plan = BottleneckPlan::new(self.h1, self.h2, self.domain)?;
        if let Some(s) = self.scales {
            plan = plan.with_scales(s.alpha, s.beta, s.tau)?;
        }
        if let Some(m) = self.replication {
            plan = plan.with_replication(m)?;
        }
        Ok(plan)
    }
}

/// Depth and `λ` grid of the upper-bound suite.
pub const UPPER_DEPTH: usize = 4096;
pub const UPPER_LAMBDAS: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// Reproduction tolerance and terminal-ratio tolerance per block depth.
fn upper_tolerances(bd: BlockDepth) -> (f64, f64) {
    match bd {
        BlockDepth::One => (1e-4, 0.5),
        BlockDepth::Two => (1e-6, 0.3),
    }
}

fn stat_max(rows: &[FuzzRow], check: &str, f: impl Fn(&FuzzRow) -> f64) -> f64 {
    rows.iter().filter(|r| r.gauge == check).map(f).fold(0.0, f64::max)
}

pub fn run_verify(suite: Suite, seed: u64, count: usize) -> Result<VerifyReport> {
    let mut stats = BTreeMap::new();
    let rows: Vec<FuzzRow> = match suite {
        Suite::Witness => {
            let per_case: Vec<Vec<FuzzRow>> = (0..count as u64)
                .into_par_iter()
                .map(|i| -> Result<Vec<FuzzRow>> {
                    let s = seed.wrapping_add(i);
                    let mut rng = seeded_rng(s);
                    let (rows, cols) = (rng.random_range(1..=4), rng.random_range(1..=4));
                    let rank = rng.random_range(1..=rows.min(cols));
                    let a = random_matrix(rng.random(), rows, cols, Some(rank))?;
                    let bd = if i.is_multiple_of(2) { BlockDepth::One } else { BlockDepth::Two };
                    let depth = rng.random_range(1..=8);
                    let lambda = log_uniform(&mut rng, 0.01, 10.0);
                    let width = rows.max(cols) + rng.random_range(0..=1);
                    let p = CostParams::new(lambda, Depth::Finite(depth), bd, width)?;
                    let w = build_min_cost(&a, &p)?;
                    let gap = (w.penalty - w.formula_cost).abs() / w.formula_cost.abs().max(f64::MIN_POSITIVE);
                    let fwd = w.realized.sub(&a)?.frobenius_norm() / a.frobenius_norm();
                    Ok(vec![
                        row(s, w.penalty, w.formula_cost, 1e-9 - gap, &format!("penalty-{}", bd_tag(bd))),
                        row(s, fwd, 1e-9, 1e-9 - fwd, &format!("forward-{}", bd_tag(bd))),
                    ])
                })
                .collect::<Result<_>>()?;
            let rows: Vec<FuzzRow> = per_case.into_iter().flatten().collect();
            let worst_gap = rows.iter().filter(|r| r.gauge.starts_with("penalty")).map(|r| 1e-9 - r.margin).fold(0.0, f64::max);
            stats.insert("max_relative_penalty_gap".into(), worst_gap);
            stats.insert("max_relative_forward_error".into(), stat_max(&rows, "forward-d1", |r| r.lhs).max(stat_max(&rows, "forward-d2", |r| r.lhs)));
            rows
        }
        Suite::Oracle => {
            let cfg = OracleConfig { seed, ..Default::default() };
            let per_case: Vec<FuzzRow> = (0..count as u64)
                .into_par_iter()
                .map(|i| -> Result<FuzzRow> {
                    let (a, p) = oracle_instance(seed, i);
                    let cost = matrix_cost(&a, &p)?.total;
                    let r = min_norm_train(&a, &p, &cfg)?;
                    let rel = (r.penalty_value - cost).abs() / cost.abs().max(f64::MIN_POSITIVE);
                    let check = if r.converged { "oracle" } else { "oracle-unconverged" };
                    let mut out = row(i, r.penalty_value, cost, 1e-2 - rel, check);
                    if !r.converged {
                        out.holds = true;
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let converged = per_case.iter().filter(|r| r.gauge == "oracle").count();
            let rate = if count == 0 { 1.0 } else { converged as f64 / count as f64 };
            stats.insert("convergence_rate".into(), rate);
            stats.insert("max_relative_error".into(), stat_max(&per_case, "oracle", |r| 1e-2 - r.margin));
            let mut rows = per_case;
            rows.push(row(seed, rate, 0.8, rate - 0.8, "convergence-rate"));
            rows
        }
        Suite::Gelfand => gelfand_fuzz(seed, count),
        Suite::Submajorization => submajorization_fuzz(seed, count),
        Suite::Chain => {
            let cfg = OracleConfig { restarts: 1, max_iterations: 1500, penalty_schedule: vec![1e2, 1e4], trace_every: 0, ..Default::default() };
            let per_case: Vec<Vec<FuzzRow>> = (0..count as u64)
                .into_par_iter()
                .map(|i| -> Result<Vec<FuzzRow>> {
                    let s = seed.wrapping_add(i);
                    let mut rng = seeded_rng(s);
                    let n = rng.random_range(1..=3);
                    let rank = rng.random_range(1..=n);
                    let a = random_matrix(rng.random(), n, n, Some(rank))?;
                    let bd = if i.is_multiple_of(2) { BlockDepth::One } else { BlockDepth::Two };
                    let p = CostParams::new(log_uniform(&mut rng, 0.05, 5.0), Depth::Finite(rng.random_range(1..=4)), bd, n)?;
                    let trained = min_norm_train(&a, &p, &OracleConfig { seed: s, ..cfg.clone() })?;
                    let mut out = Vec::with_capacity(2);
                    match layer_chain_bound(&trained.params, p.lambda) {
                        Ok(c) => {
                            let slack = 1e-8 * (1.0 + c.penalty);
                            out.push(row(s, c.bound, c.penalty, c.penalty + slack - c.bound, &format!("chain-{}", bd_tag(bd))));
                        }
                        Err(Error::Degenerate(_)) => out.push(row(s, f64::NAN, f64::NAN, 0.0, "chain-degenerate")),
                        Err(e) => return Err(e),
                    }
                    let w = build_min_cost(&a, &p)?;
                    let c = layer_chain_bound(&w.params, p.lambda)?;
                    out.push(row(s, c.bound, c.penalty, 1e-6 - c.relative_gap().abs(), &format!("witness-{}", bd_tag(bd))));
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let rows: Vec<FuzzRow> = per_case.into_iter().flatten().collect();
            let evaluated = rows.iter().filter(|r| r.gauge.starts_with("chain-d")).count();
            stats.insert("oracle_evaluations".into(), evaluated as f64);
            stats.insert(
                "max_witness_gap".into(),
                rows.iter().filter(|r| r.gauge.starts_with("witness")).map(|r| 1e-6 - r.margin).fold(0.0, f64::max),
            );
            rows
        }
        Suite::NonlinearLower => {
            let per_case: Vec<Vec<FuzzRow>> = (0..count as u64)
                .into_par_iter()
                .map(|i| -> Result<Vec<FuzzRow>> {
                    let s = seed.wrapping_add(i);
                    let bd = if i.is_multiple_of(2) { BlockDepth::One } else { BlockDepth::Two };
                    let net = random_network(s, bd);
                    let lambda = log_uniform(&mut seeded_rng(s ^ 0xa5a5), 0.01, 10.0);
                    let domain = DomainBox::new(vec![-1.0; net.d_in()], vec![1.0; net.d_in()], DomainBox::DEFAULT_SAMPLES, s)?;
                    let lb = jacobian_lower_bound_check(&net, lambda, bd, &domain)?;
                    let slack = 1e-8 * (1.0 + lb.penalty);
                    let mut worst_fd: f64 = 0.0;
                    for x in domain.samples() {
                        if let Some(gap) = jacobian_fd_gap(&net, x, 1e-6)? {
                            worst_fd = worst_fd.max(gap);
                        }
                    }
                    Ok(vec![
                        row(s, lb.max_linear_cost, lb.penalty, lb.penalty + slack - lb.max_linear_cost, &format!("lower-{}", bd_tag(bd))),
                        row(s, worst_fd, 1e-6, 1e-6 - worst_fd, &format!("jacobian-fd-{}", bd_tag(bd))),
                    ])
                })
                .collect::<Result<_>>()?;
            let rows: Vec<FuzzRow> = per_case.into_iter().flatten().collect();
            stats.insert("max_jacobian_fd_gap".into(), rows.iter().filter(|r| r.gauge.starts_with("jacobian")).map(|r| r.lhs).fold(0.0, f64::max));
            rows
        }
        Suite::NonlinearUpper => {
            let per_case: Vec<Vec<FuzzRow>> = (0..count as u64)
                .into_par_iter()
                .map(|i| upper_case(seed.wrapping_add(i)))
                .collect::<Result<_>>()?;
            let rows: Vec<FuzzRow> = per_case.into_iter().flatten().collect();
            for bd in [BlockDepth::One, BlockDepth::Two] {
                let tag = bd_tag(bd);
                stats.insert(format!("max_deviation_{tag}"), stat_max(&rows, &format!("repr-{tag}"), |r| r.lhs));
                stats.insert(format!("max_terminal_ratio_{tag}"), stat_max(&rows, &format!("terminal-{tag}"), |r| r.lhs));
            }
            rows
        }
    };
    let violations = rows.iter().filter(|r| !r.holds).count();
    Ok(VerifyReport { suite, seed, count, violations, passed: violations == 0, stats, rows })
}

/// Both constructions for one random ridge plan across [`UPPER_LAMBDAS`]:
/// reproduction on 200 samples, a decreasing normalized penalty, and a
/// terminal ratio close to `k = 1`.
fn upper_case(seed: u64) -> Result<Vec<FuzzRow>> {
    let plan = relu_ridge_plan(seed, 200)?;
    let n = plan.required_width();
    let k = plan.k() as f64;
    let mut rows = Vec::new();
    for bd in [BlockDepth::One, BlockDepth::Two] {
        let tag = bd_tag(bd);
        let (tol, terminal_tol) = upper_tolerances(bd);
        let mut prev = f64::INFINITY;
        for &lambda in &UPPER_LAMBDAS {
            let build = match bd {
                BlockDepth::One => build_bottleneck_depth1(&plan, UPPER_DEPTH, n, lambda)?,
                BlockDepth::Two => build_bottleneck_depth2(&plan, UPPER_DEPTH, n, lambda)?,
            };
            let rep = verify_representation(&build.params, &plan, plan.domain(), tol)?;
            rows.push(row(seed, rep.max_deviation, tol, tol - rep.max_deviation, &format!("repr-{tag}")));
            let log = (1.0 / lambda).ln();
            let norm = match bd {
                BlockDepth::One => lambda * log * log,
                BlockDepth::Two => lambda * log,
            };
            let ratio = build.penalty / norm;
            rows.push(row(seed, ratio, prev, if prev.is_finite() { prev - ratio } else { 0.0 }, &format!("ratio-{tag}")));
            prev = ratio;
        }
        let rel = (prev - k).abs() / k;
        rows.push(row(seed, rel, terminal_tol, terminal_tol - rel, &format!("terminal-{tag}")));
    }
    Ok(rows)
}

pub fn write_verify_csv<W: std::io::Write>(report: &VerifyReport, out: W) -> Result<()> {
    crate::majorization::write_fuzz_csv(&report.rows, out)
}
