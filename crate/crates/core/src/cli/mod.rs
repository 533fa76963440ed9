//! The `userdp` command line: `generate`, `estimate`, `experiment`, `audit`
//! and `sgd`.
//!
//! Exit codes: 0 on success (garbage outcomes included), 2 for I/O and parse
//! failures, 3 for invalid configuration.

pub mod audit;
pub mod experiment;
pub mod format;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::accounting::BudgetLedger;
use crate::amplify::{run_dp_estimate_2, AmplifyParams};
use crate::blockwise::{run_interpolated, BlockwiseParams, Engine};
use crate::error::{DpError, Result};
use crate::geometry::{dist_sq, Point, PointSet};
use crate::mechanism::{run_dp_estimate_1, EstimateOutcome, MechanismParams};
use crate::optimizer::{private_sgd, project, sgd_exact, BallDomain, ConvexProblem, QuadraticLoss, SgdConfig, SgdStep};
use crate::rng::seeded;
use crate::synthdata::{corrupt, generate, generate_discrete, AdversarySpec, DataSpec, Family, Strategy};
use crate::userlevel::{run_user, UserLevelParams};
use crate::VERSION;

use self::format::{io_err, read_dataset, read_sidecar, write_dataset, write_sidecar, DatasetFile, Sidecar};

pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

pub fn exit_code(e: &DpError) -> i32 {
    match e {
        DpError::Io { .. } | DpError::Parse(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "userdp", version, about = "User-level private mean estimation")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "UDP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its JSON sidecar.
    Generate(GenerateArgs),
    /// Run one estimator on a dataset file.
    Estimate(EstimateArgs),
    /// Run a grid sweep described by a JSON spec.
    Experiment(ExperimentArgs),
    /// Monte Carlo audit on the built-in neighbouring families.
    Audit(AuditArgs),
    /// Private projected SGD on the quadratic loss.
    Sgd(SgdArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    UniformBall,
    ScaledGaussianClipped,
    PointMass,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    FarCluster,
    Mirror,
    Scatter,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `DataSpec` JSON; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Comma-separated mean.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    /// Comma-separated category probabilities for the discrete family.
    #[arg(long, value_delimiter = ',')]
    pub probs: Option<Vec<f64>>,
    #[arg(long)]
    pub corrupt_fraction: Option<f64>,
    #[arg(long, value_enum, default_value = "far-cluster")]
    pub corrupt_strategy: StrategyArg,
    /// Far-cluster distance from the mean, in units of `r`.
    #[arg(long, default_value_t = 10.0)]
    pub corrupt_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineArg {
    /// Single rejection-sampling run on all samples.
    Item1,
    /// Amplified runs on all samples.
    Item2,
    /// Blockwise estimator on all samples.
    Blockwise,
    /// User-level estimator on user means.
    User,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "user")]
    pub engine: EngineArg,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub alpha: f64,
    /// Per-sample radius; defaults to the sidecar's `r`, else 1.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed block split for the blockwise and user engines.
    #[arg(long)]
    pub k: Option<usize>,
    /// Amplified per-block engine for the blockwise and user engines.
    #[arg(long)]
    pub amplified: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leading acceptance constant; values above 1/3 act as a broken mechanism.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub accept_constant: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SgdArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 1.0)]
    pub domain_radius: f64,
    /// Gradient norm bound `G`; defaults to `R + ‖μ‖ + r` from the sidecar.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include every iterate in the record.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(DpError::invalid("threads must be at least 1"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| DpError::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Sgd(a) => cmd_sgd(&a),
    })
}

fn emit(out: Option<&Path>, line: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{line}\n")).map_err(io_err(p)),
        None => {
            println!("{line}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| DpError::Parse(e.to_string()))
}

fn data_spec(a: &GenerateArgs) -> Result<DataSpec> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| DpError::Parse(format!("{}: {e}", p.display())))?
        }
        None => DataSpec { n: 100, m: 10, d: 4, r: 1.0, mu: Point::zeros(4), family: Family::UniformBall, rho: 0.0, seed: 0 },
    };
    let d_changed = a.d.is_some_and(|d| d != spec.d);
    spec.n = a.n.unwrap_or(spec.n);
    spec.m = a.m.unwrap_or(spec.m);
    spec.d = a.d.unwrap_or(spec.d);
    spec.r = a.r.unwrap_or(spec.r);
    spec.rho = a.rho.unwrap_or(spec.rho);
    spec.seed = a.seed.unwrap_or(spec.seed);
    if let Some(mu) = &a.mu {
        spec.mu = Point::new(mu.clone())?;
    } else if d_changed {
        spec.mu = Point::zeros(spec.d);
    }
    if let Some(f) = a.family {
        spec.family = match f {
            FamilyArg::UniformBall => Family::UniformBall,
            FamilyArg::ScaledGaussianClipped => Family::ScaledGaussianClipped,
            FamilyArg::PointMass => Family::PointMass,
            FamilyArg::Discrete => Family::Discrete { probabilities: vec![1.0 / spec.d as f64; spec.d] },
        };
    }
    if let Some(p) = &a.probs {
        spec.family = Family::Discrete { probabilities: p.clone() };
    }
    if let Family::Discrete { probabilities } = &spec.family {
        spec.mu = Point::new(probabilities.clone())?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let spec = data_spec(a)?;
    let mut sidecar =
        Sidecar { version: VERSION.to_string(), true_mean: spec.true_mean(), spec: spec.clone(), adversary: None, corrupted_users: vec![] };
    let file = if matches!(spec.family, Family::Discrete { .. }) {
        if a.corrupt_fraction.is_some() {
            return Err(DpError::invalid("corruption applies to real-valued families only"));
        }
        DatasetFile::Categorical(generate_discrete(&spec)?)
    } else {
        let ds = generate(&spec)?;
        match a.corrupt_fraction {
            Some(fraction) => {
                let strategy = match a.corrupt_strategy {
                    StrategyArg::FarCluster => {
                        let mut t = spec.mu.coords().to_vec();
                        t[0] += a.corrupt_distance * spec.r;
                        Strategy::FarCluster { target: Point::new(t)? }
                    }
                    StrategyArg::Mirror => Strategy::Mirror,
                    StrategyArg::Scatter => Strategy::Scatter,
                };
                let adv = AdversarySpec { fraction, strategy };
                let mut rng = seeded(crate::rng::derive_seed(spec.seed, u64::MAX, 3));
                let (bad, users) = corrupt(&ds, &adv, &mut rng)?;
                sidecar.adversary = Some(adv);
                sidecar.corrupted_users = users;
                DatasetFile::Real(bad)
            }
            None => DatasetFile::Real(ds),
        }
    };
    write_dataset(&a.out, &file)?;
    write_sidecar(&a.out, &sidecar)
}

/// Output of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub version: String,
    pub command: String,
    pub engine: EngineArg,
    pub seed: u64,
    pub data: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub r: f64,
    pub k: Option<usize>,
    pub amplified: bool,
    pub outcome: String,
    pub point: Option<Vec<f64>>,
    /// Distance to the sidecar's true mean.
    pub error_l2: Option<f64>,
    pub ledger: BudgetLedger,
    pub below_threshold: bool,
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let rec = estimate_record(a)?;
    emit(a.out.as_deref(), &to_json(&rec)?)
}

pub fn estimate_record(a: &EstimateArgs) -> Result<EstimateRecord> {
    // Budget errors come before any file access.
    MechanismParams::new(a.eps, a.delta, a.alpha, a.r.unwrap_or(1.0))?;
    let file = read_dataset(&a.data)?;
    let sidecar = read_sidecar(&a.data)?;
    let r = a.r.or(sidecar.as_ref().map(|s| s.spec.r)).unwrap_or(1.0);
    let ds = file.to_real();
    let (n, m, d) = (ds.n(), ds.m(), ds.d());
    let mut rng = seeded(a.seed);
    let samples = || PointSet::from_flat(ds.as_flat().to_vec(), d);
    let block = |radius: f64| -> Result<BlockwiseParams> {
        let mut p = BlockwiseParams::new(a.eps, a.delta, a.alpha, radius)?;
        p.k = a.k;
        if a.amplified {
            p.engine = Engine::amplified();
        }
        Ok(p)
    };
    let (outcome, ledger, k, below): (EstimateOutcome, BudgetLedger, Option<usize>, bool) = match a.engine {
        EngineArg::Item1 => {
            let p = MechanismParams::new(a.eps, a.delta, a.alpha, r)?;
            let run = run_dp_estimate_1(&samples()?, &p, &mut rng)?;
            let b = crate::accounting::PrivacyBudget::new(a.eps, a.delta)?;
            (run.outcome, BudgetLedger::identity(b), None, run.below_threshold)
        }
        EngineArg::Item2 => {
            let p = AmplifyParams::new(a.eps, a.delta, a.alpha, r)?;
            let run = run_dp_estimate_2(&samples()?, &p, &mut rng)?;
            (run.outcome, run.schedule.ledger, None, run.below_threshold)
        }
        EngineArg::Blockwise => {
            let run = run_interpolated(&samples()?, &block(r)?, &mut rng)?;
            (run.outcome, run.ledger, Some(run.plan.k), run.below_threshold)
        }
        EngineArg::User => {
            let mut p = UserLevelParams::new(a.eps, a.delta, a.alpha, r)?;
            p.blockwise = block(r)?;
            let run = run_user(&ds, &p, &mut rng)?;
            (run.outcome, run.blockwise.ledger, Some(run.blockwise.plan.k), run.blockwise.below_threshold)
        }
    };
    let error_l2 = match (&sidecar, outcome.point()) {
        (Some(s), Some(p)) if s.true_mean.len() == d => Some(dist_sq(p, &s.true_mean).sqrt()),
        _ => None,
    };
    Ok(EstimateRecord {
        version: VERSION.to_string(),
        command: "estimate".into(),
        engine: a.engine,
        seed: a.seed,
        data: a.data.display().to_string(),
        n,
        m,
        d,
        eps: a.eps,
        delta: a.delta,
        alpha: a.alpha,
        r,
        k,
        amplified: a.amplified,
        outcome: outcome.label().to_string(),
        point: outcome.point().map(|p| p.coords().to_vec()),
        error_l2,
        ledger,
        below_threshold: below,
    })
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut spec = experiment::ExperimentSpec::from_path(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(o) = &a.out {
        spec.output = o.clone();
    }
    spec.timing |= a.timing;
    let result = experiment::run_experiment(&spec)?;
    experiment::write_outputs(&spec, &result, &spec.output)?;
    let failed = result.records.iter().filter(|r| r.outcome == "failed").count();
    eprintln!("{} records written to {} ({failed} failed)", result.records.len(), spec.output.display());
    Ok(())
}

pub fn cmd_audit(a: &AuditArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(DpError::invalid("trials must be positive"));
    }
    let report = audit::run_audit(a.trials, a.seed, a.accept_constant)?;
    emit(a.out.as_deref(), &to_json(&report)?)
}

/// Output of `sgd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdRecord {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub data: String,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub t: usize,
    pub domain_radius: f64,
    pub lipschitz: f64,
    pub eta: f64,
    pub nu_hat: f64,
    pub oracle_failures: usize,
    pub meets_user_threshold: bool,
    pub final_theta: Vec<f64>,
    pub suboptimality: f64,
    pub baseline_suboptimality: f64,
    pub ledger: Option<BudgetLedger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<SgdStep>>,
}

pub fn cmd_sgd(a: &SgdArgs) -> Result<()> {
    let mut cfg = SgdConfig::new(a.eps, a.delta, a.t)?;
    cfg.alpha = a.alpha;
    let file = read_dataset(&a.data)?;
    let sidecar = read_sidecar(&a.data)?;
    let ds = file.to_real();
    let d = ds.d();
    let g = match (a.lipschitz, &sidecar) {
        (Some(g), _) => g,
        (None, Some(s)) => a.domain_radius + s.spec.mu.iter().map(|x| x * x).sum::<f64>().sqrt() + s.spec.r,
        (None, None) => return Err(DpError::invalid("--lipschitz is required without a sidecar")),
    };
    let domain = BallDomain { center: Point::zeros(d), radius: a.domain_radius };
    let sigma = sidecar.as_ref().map_or(1.0, |s| s.spec.r);
    let problem = ConvexProblem::new(QuadraticLoss, domain, g, 1.0, sigma)?;
    cfg.oracle = UserLevelParams::new(a.eps, a.delta, a.alpha, g)?;
    let trace = private_sgd(&problem, &ds, &cfg, &mut seeded(a.seed))?;
    let theta0 = problem.domain.center.clone();
    let baseline = sgd_exact(&problem, &ds, a.t, &theta0, Some(trace.eta))?;
    let zbar: Vec<f64> = problem.empirical_gradient(&ds, &vec![0.0; d]).iter().map(|x| -x).collect();
    let opt = project(&Point::new(zbar)?, &problem.domain);
    let best = problem.empirical_risk(&ds, &opt);
    let rec = SgdRecord {
        version: VERSION.to_string(),
        command: "sgd".into(),
        seed: a.seed,
        data: a.data.display().to_string(),
        eps: a.eps,
        delta: a.delta,
        alpha: a.alpha,
        t: a.t,
        domain_radius: a.domain_radius,
        lipschitz: g,
        eta: trace.eta,
        nu_hat: trace.nu_hat,
        oracle_failures: trace.oracle_failures,
        meets_user_threshold: trace.meets_user_threshold,
        final_theta: trace.final_theta.coords().to_vec(),
        suboptimality: problem.empirical_risk(&ds, &trace.final_theta) - best,
        baseline_suboptimality: problem.empirical_risk(&ds, &baseline.final_theta) - best,
        ledger: trace.ledger,
        iterates: a.trace.then_some(trace.iterates),
    };
    emit(a.out.as_deref(), &to_json(&rec)?)
}
