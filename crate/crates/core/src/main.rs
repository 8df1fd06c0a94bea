use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use resbias::experiment::{
    read_json, run_sweep, run_verify, with_jobs, write_sweep_csv, write_verify_csv, MatrixSource, Normalization,
    PlanFile, Suite, SweepSpec,
};
use resbias::nonlinear::{
    build_bottleneck_depth1, build_bottleneck_depth2, jacobian_lower_bound_check, jacobian_rank,
    verify_representation, DomainBox, FplfSpec, NonlinResNetParams, PiecewiseLinear,
};
use resbias::oracle::{min_norm_train, write_trace_csv, OracleConfig};
use resbias::spectral::{matrix_cost, BlockDepth, CostParams, Depth};
use resbias::tensor::DEFAULT_RANK_TOL;
use resbias::witness::build_min_cost;
use resbias::{Error, Matrix, Result};

#[derive(Parser)]
#[command(name = "resbias", version, about = "Minimum-norm costs of linear and ReLU residual networks")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form minimum cost of a matrix, as JSON.
    Cost {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Explicit minimum-cost linear network, as JSON.
    Witness {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerical minimum-norm fit by penalty continuation.
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// Oracle settings as JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Write the optimization trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost over a (block depth, L, λ) grid, as CSV.
    Sweep(SweepArgs),
    /// Bottleneck network for a plan, as JSON.
    NonlinearBuild {
        /// Plan JSON: {"h1", "h2", "domain", "scales"?, "replication"?}.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "2")]
        block_depth: BlockDepth,
        /// Stream width (default: the smallest the plan allows).
        #[arg(long)]
        width: Option<usize>,
        /// Replication count for depth-1 blocks (default ⌊L/log(1/λ)⌋).
        #[arg(long)]
        replication: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks a ReLU network against a target on sampled domain points.
    NonlinearVerify {
        /// Network JSON, bare or as written by nonlinear-build.
        #[arg(long)]
        params: PathBuf,
        /// Plan JSON; its composition and domain are the target.
        #[arg(long, conflicts_with_all = ["target", "domain"])]
        plan: Option<PathBuf>,
        /// Target FPLF JSON (with --domain).
        #[arg(long, requires = "domain")]
        target: Option<PathBuf>,
        /// Domain box JSON: {"lower", "upper", "samples"?, "seed"?}.
        #[arg(long)]
        domain: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Also check the Jacobian lower bound at this λ.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Seeded property suite; exits nonzero on any violation.
    Verify {
        /// witness | oracle | gelfand | submajorization | chain | nonlinear-lower | nonlinear-upper
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: Option<usize>,
        /// Detail CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Diagonal entries, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    diag: Option<Vec<f64>>,
    /// Matrix JSON file.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Seed for a random Gaussian matrix (with --dims).
    #[arg(long)]
    random_seed: Option<u64>,
    /// Random matrix shape, ROWSxCOLS.
    #[arg(long)]
    dims: Option<String>,
    /// Rank of the random matrix.
    #[arg(long)]
    rank: Option<usize>,
}

impl SourceArgs {
    fn source(&self) -> Result<Option<MatrixSource>> {
        let given = [self.diag.is_some(), self.matrix.is_some(), self.random_seed.is_some() || self.dims.is_some()];
        match given.iter().filter(|&&g| g).count() {
            0 => return Ok(None),
            1 => {}
            _ => return Err(Error::Domain("give exactly one of --diag, --matrix, --random-seed/--dims".into())),
        }
        if let Some(d) = &self.diag {
            return Ok(Some(MatrixSource::Diag(d.clone())));
        }
        if let Some(p) = &self.matrix {
            return Ok(Some(MatrixSource::File(p.clone())));
        }
        let (rows, cols) = parse_dims(self.dims.as_deref().unwrap_or("3x3"))?;
        Ok(Some(MatrixSource::Random { seed: self.random_seed.unwrap_or(0), rows, cols, rank: self.rank }))
    }

    fn required(&self) -> Result<MatrixSource> {
        self.source()?.ok_or_else(|| Error::Domain("a matrix is required (--diag, --matrix or --random-seed)".into()))
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Domain(format!("--dims must look like 3x2, got `{s}`"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    lambda: f64,
    /// Number of residual blocks, or `inf`.
    #[arg(long)]
    depth: Depth,
    #[arg(long, default_value = "1")]
    block_depth: BlockDepth,
    /// Network width (default: max(rows, cols)).
    #[arg(long)]
    width: Option<usize>,
}

impl ParamArgs {
    fn cost_params(&self, a: &Matrix) -> Result<CostParams> {
        CostParams::new(self.lambda, self.depth, self.block_depth, self.width.unwrap_or(a.rows().max(a.cols())))
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Depths, comma separated; `inf` for the infinite-depth limit.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<Depth>>,
    #[arg(long, value_delimiter = ',')]
    block_depths: Option<Vec<BlockDepth>>,
    #[arg(long)]
    width: Option<usize>,
    /// Any of raw, nuclear_ratio, rank_ratio.
    #[arg(long, value_delimiter = ',')]
    normalizations: Option<Vec<Normalization>>,
    /// Also run the numerical oracle at finite depths.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn spec(&self) -> Result<SweepSpec> {
        let base: Option<SweepSpec> = self.config.as_deref().map(read_json).transpose()?;
        let source = match (self.source.source()?, &base) {
            (Some(s), _) => s,
            (None, Some(b)) => b.source.clone(),
            (None, None) => return Err(Error::Domain("sweep needs a matrix source or --config".into())),
        };
        Ok(SweepSpec {
            source,
            lambdas: pick(&self.lambdas, base.as_ref().map(|b| b.lambdas.clone()), "lambdas")?,
            depths: pick(&self.depths, base.as_ref().map(|b| b.depths.clone()), "depths")?,
            block_depths: self
                .block_depths
                .clone()
                .or(base.as_ref().map(|b| b.block_depths.clone()))
                .unwrap_or(vec![BlockDepth::One, BlockDepth::Two]),
            width: self.width.or(base.as_ref().and_then(|b| b.width)),
            normalizations: self
                .normalizations
                .clone()
                .or(base.as_ref().map(|b| b.normalizations.clone()))
                .unwrap_or(vec![Normalization::Raw, Normalization::NuclearRatio, Normalization::RankRatio]),
            oracle: self.oracle || base.as_ref().is_some_and(|b| b.oracle),
            oracle_config: base.and_then(|b| b.oracle_config),
        })
    }
}

/// Reads a network, either bare or wrapped in a `nonlinear-build` report.
fn read_network(path: &Path) -> Result<NonlinResNetParams> {
    let mut value: serde_json::Value = read_json(path)?;
    if let Some(inner) = value.get_mut("params") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value)?)
}

fn pick<T: Clone>(flag: &Option<Vec<T>>, from: Option<Vec<T>>, name: &str) -> Result<Vec<T>> {
    flag.clone().or(from).ok_or_else(|| Error::Domain(format!("sweep needs --{name} or a config")))
}

fn default_count(suite: Suite) -> usize {
    match suite {
        Suite::Witness => 200,
        Suite::Oracle => 20,
        Suite::Gelfand | Suite::Submajorization => 10_000,
        Suite::Chain | Suite::NonlinearLower => 500,
        Suite::NonlinearUpper => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn io_err(path: Option<&Path>) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.map_or("<stdout>".into(), |p| p.display().to_string()), source }
}

/// Writes pretty JSON to `out`, or to stdout.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(io_err(Some(p)))
        }
        None => writeln!(io::stdout().lock(), "{text}").map_err(io_err(None)),
    }
}

fn emit_csv(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w)?;
            w.flush().map_err(io_err(Some(p)))
        }
        None => write(&mut io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Cost { source, params } => {
            let a = source.required()?.resolve()?;
            let report = matrix_cost(&a, &params.cost_params(&a)?)?;
            emit_json(&report, None)?;
        }
        Command::Witness { source, params, out } => {
            let a = source.required()?.resolve()?;
            let report = build_min_cost(&a, &params.cost_params(&a)?)?;
            emit_json(&report, out.as_deref())?;
        }
        Command::Train { source, params, config, seed, restarts, trace, out } => {
            let a = source.required()?.resolve()?;
            let p = params.cost_params(&a)?;
            let mut cfg: OracleConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.restarts = restarts.unwrap_or(cfg.restarts);
            let result = with_jobs(jobs, || min_norm_train(&a, &p, &cfg))??;
            if let Some(path) = trace.as_deref() {
                emit_csv(Some(path), |w| write_trace_csv(&result.trace, w))?;
            }
            let formula = if p.depth == Depth::Infinite { None } else { Some(matrix_cost(&a, &p)?.total) };
            let summary = json!({
                "penalty": result.penalty_value,
                "fit_residual": result.fit_residual,
                "converged": result.converged,
                "restart": result.restart,
                "formula_cost": formula,
                "params": result.params,
            });
            emit_json(&summary, out.as_deref())?;
        }
        Command::Sweep(args) => {
            let spec = args.spec()?;
            let rows = with_jobs(jobs, || run_sweep(&spec))??;
            emit_csv(args.out.as_deref(), |w| write_sweep_csv(&rows, w))?;
        }
        Command::NonlinearBuild { plan, lambda, depth, block_depth, width, replication, out } => {
            let mut plan = read_json::<PlanFile>(&plan)?.into_plan()?;
            if let Some(m) = replication {
                plan = plan.with_replication(m)?;
            }
            let n = width.unwrap_or(plan.required_width());
            let build = match block_depth {
                BlockDepth::One => build_bottleneck_depth1(&plan, depth, n, lambda)?,
                BlockDepth::Two => build_bottleneck_depth2(&plan, depth, n, lambda)?,
            };
            emit_json(&build, out.as_deref())?;
        }
        Command::NonlinearVerify { params, plan, target, domain, tol, lambda } => {
            let net = read_network(&params)?;
            let (target, domain): (Box<dyn PiecewiseLinear>, DomainBox) = match (plan, target, domain) {
                (Some(p), _, _) => {
                    let plan = read_json::<PlanFile>(&p)?.into_plan()?;
                    let domain = plan.domain().clone();
                    (Box::new(plan), domain)
                }
                (None, Some(t), Some(d)) => (Box::new(read_json::<FplfSpec>(&t)?), read_json(&d)?),
                _ => return Err(Error::Domain("nonlinear-verify needs --plan, or --target with --domain".into())),
            };
            let rep = verify_representation(&net, target.as_ref(), &domain, tol)?;
            let rank = jacobian_rank(&net, &domain, DEFAULT_RANK_TOL).ok();
            let lower = lambda
                .map(|l| jacobian_lower_bound_check(&net, l, net.block_depth(), &domain))
                .transpose()?;
            let ok = rep.passed && lower.is_none_or(|r| r.holds);
            emit_json(&json!({ "representation": rep, "jacobian_rank": rank, "lower_bound": lower }), None)?;
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Verify { suite, seed, count, out } => {
            let suite: Suite = suite.parse()?;
            let count = count.unwrap_or(default_count(suite));
            let report = with_jobs(jobs, || run_verify(suite, seed, count))??;
            if let Some(path) = out.as_deref() {
                emit_csv(Some(path), |w| write_verify_csv(&report, w))?;
            }
            emit_json(&report, None)?;
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}
