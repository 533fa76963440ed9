//! Grid sweeps: every grid point is run `trials` times and written as JSONL
//! records, a record CSV and per-point summary quantiles.
//!
//! Trial `t` uses the same data and mechanism seeds at every grid point, so
//! neighbouring grid points are paired.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::BudgetLedger;
use crate::blockwise::Engine;
use crate::cli::format::io_err;
use crate::error::{DpError, Result};
use crate::geometry::{dist_sq, Point};
use crate::mechanism::EstimateOutcome;
use crate::optimizer::{private_sgd, project, sgd_exact, BallDomain, ConvexProblem, QuadraticLoss, SgdConfig};
use crate::rng::{derive_seed, seeded};
use crate::synthdata::{corrupt, generate, generate_discrete_counts, AdversarySpec, DataSpec, Family, Strategy};
use crate::userlevel::{project_to_simplex, run_on_means, run_user, total_variation, UserLevelParams};
use crate::VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MeanEstimation,
    DistributionLearning,
    RobustnessSweep,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealFamily {
    #[default]
    UniformBall,
    ScaledGaussianClipped,
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    #[default]
    Uniform,
    /// All mass on the first category.
    PointMass,
    Custom(Vec<f64>),
}

impl Distribution {
    pub fn probabilities(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            Distribution::Uniform => Ok(vec![1.0 / d as f64; d]),
            Distribution::PointMass => Ok((0..d).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect()),
            Distribution::Custom(p) if p.len() == d => Ok(p.clone()),
            Distribution::Custom(p) => Err(DpError::DimensionMismatch { expected: d, got: p.len() }),
        }
    }
}

fn zeros() -> Vec<f64> {
    vec![0.0]
}
fn default_t() -> Vec<usize> {
    vec![100]
}
fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub d: Vec<usize>,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default = "zeros")]
    pub rho: Vec<f64>,
    /// Fraction of users replaced by the far-cluster adversary.
    #[serde(default = "zeros")]
    pub corruption: Vec<f64>,
    /// SGD step counts; ignored by the other kinds.
    #[serde(default = "default_t")]
    pub t: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub grid: Grid,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Per-sample radius.
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default)]
    pub family: RealFamily,
    /// `‖μ‖`; the true mean is `mean_norm·e₁`.
    #[serde(default)]
    pub mean_norm: f64,
    #[serde(default)]
    pub distribution: Distribution,
    /// Far-cluster target distance from `μ`, in units of `r`.
    #[serde(default = "ten")]
    pub corruption_distance: f64,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub amplified: bool,
    /// SGD domain radius `R`; the start point is `−(R/2)·e₁`.
    #[serde(default = "one")]
    pub domain_radius: f64,
    /// Adds wall time to each record; breaks byte-level reproducibility.
    #[serde(default)]
    pub timing: bool,
}

/// One point of the expanded grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub rho: f64,
    pub corruption: f64,
    pub t: usize,
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DpError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let lens = [g.n.len(), g.m.len(), g.d.len(), g.eps.len(), g.delta.len(), g.alpha.len(), g.rho.len(), g.corruption.len(), g.t.len()];
        if lens.contains(&0) {
            return Err(DpError::invalid("every grid axis needs at least one value"));
        }
        if self.trials == 0 {
            return Err(DpError::invalid("trials must be at least 1"));
        }
        if !(self.r > 0.0) || !(self.domain_radius > 0.0) || !(self.mean_norm >= 0.0) {
            return Err(DpError::invalid("r and domain_radius must be positive, mean_norm non-negative"));
        }
        if self.kind != ExperimentKind::Sgd {
            for &e in &g.eps {
                for &dl in &g.delta {
                    crate::mechanism::validate_budget(e, dl)?;
                }
            }
        }
        Ok(())
    }

    /// Row-major expansion, last axis fastest.
    pub fn points(&self) -> Vec<ConfigPoint> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n {
            for &m in &g.m {
                for &d in &g.d {
                    for &eps in &g.eps {
                        for &delta in &g.delta {
                            for &alpha in &g.alpha {
                                for &rho in &g.rho {
                                    for &corruption in &g.corruption {
                                        for &t in &g.t {
                                            out.push(ConfigPoint { n, m, d, eps, delta, alpha, rho, corruption, t });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn user_params(&self, c: &ConfigPoint, r: f64) -> Result<UserLevelParams> {
        let mut p = UserLevelParams::new(c.eps, c.delta, c.alpha, r)?;
        p.blockwise.k = self.k;
        if self.amplified {
            p.blockwise.engine = Engine::amplified();
        }
        Ok(p)
    }

    fn mu(&self, d: usize) -> Point {
        let mut v = vec![0.0; d];
        v[0] = self.mean_norm;
        Point::new(v).expect("finite mean")
    }
}

/// One trial at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub version: String,
    pub kind: ExperimentKind,
    pub grid_index: usize,
    pub trial: usize,
    pub data_seed: u64,
    pub mechanism_seed: u64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub rho: f64,
    pub corruption: f64,
    pub t: Option<usize>,
    /// `accepted`, `garbage1`, `garbage2` or `failed`.
    pub outcome: String,
    pub error_l2: Option<f64>,
    pub error_tv: Option<f64>,
    pub error_tv_raw: Option<f64>,
    pub suboptimality: Option<f64>,
    pub baseline_suboptimality: Option<f64>,
    pub k: Option<usize>,
    pub ledger_eps: Option<f64>,
    pub ledger_delta: Option<f64>,
    pub ledger_calls: Option<u64>,
    pub message: Option<String>,
    pub wall_ms: Option<f64>,
}

/// Quantiles of one grid point's records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub grid_index: usize,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub rho: f64,
    pub corruption: f64,
    pub t: usize,
    pub trials: usize,
    pub accepted: usize,
    pub failed: usize,
    pub error_l2_q10: Option<f64>,
    pub error_l2_median: Option<f64>,
    pub error_l2_q90: Option<f64>,
    pub error_tv_median: Option<f64>,
    pub error_tv_raw_median: Option<f64>,
    pub suboptimality_median: Option<f64>,
    pub baseline_suboptimality_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<Record>,
    pub summaries: Vec<Summary>,
}

/// Linear-interpolation quantile of unsorted values; `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Default)]
struct Measured {
    outcome: String,
    error_l2: Option<f64>,
    error_tv: Option<f64>,
    error_tv_raw: Option<f64>,
    suboptimality: Option<f64>,
    baseline_suboptimality: Option<f64>,
    k: Option<usize>,
    ledger: Option<BudgetLedger>,
}

fn outcome_measure(outcome: &EstimateOutcome, truth: &[f64]) -> Measured {
    Measured {
        outcome: outcome.label().to_string(),
        error_l2: outcome.point().map(|p| dist_sq(p, truth).sqrt()),
        ..Default::default()
    }
}

fn run_mean(spec: &ExperimentSpec, c: &ConfigPoint, seeds: (u64, u64, u64)) -> Result<Measured> {
    let family = match spec.family {
        RealFamily::UniformBall => Family::UniformBall,
        RealFamily::ScaledGaussianClipped => Family::ScaledGaussianClipped,
        RealFamily::PointMass => Family::PointMass,
    };
    let mu = spec.mu(c.d);
    let ds = generate(&DataSpec { n: c.n, m: c.m, d: c.d, r: spec.r, mu: mu.clone(), family, rho: c.rho, seed: seeds.0 })?;
    let ds = if c.corruption > 0.0 {
        let mut target = mu.coords().to_vec();
        target[0] += spec.corruption_distance * spec.r;
        let adv = AdversarySpec { fraction: c.corruption, strategy: Strategy::FarCluster { target: Point::new(target)? } };
        corrupt(&ds, &adv, &mut seeded(seeds.2))?.0
    } else {
        ds
    };
    let run = run_user(&ds, &spec.user_params(c, spec.r)?, &mut seeded(seeds.1))?;
    let mut m = outcome_measure(&run.outcome, &mu);
    m.k = Some(run.blockwise.plan.k);
    m.ledger = Some(run.blockwise.ledger);
    Ok(m)
}

fn run_distribution(spec: &ExperimentSpec, c: &ConfigPoint, seeds: (u64, u64, u64)) -> Result<Measured> {
    let p = spec.distribution.probabilities(c.d)?;
    let counts = generate_discrete_counts(&DataSpec {
        n: c.n,
        m: c.m,
        d: c.d,
        r: 1.0,
        mu: Point::new(p.clone())?,
        family: Family::Discrete { probabilities: p.clone() },
        rho: 0.0,
        seed: seeds.0,
    })?;
    let run = run_on_means(&counts.user_mean_set(), c.m, &spec.user_params(c, 1.0)?, &mut seeded(seeds.1))?;
    let mut m = outcome_measure(&run.outcome, &p);
    if let Some(raw) = run.outcome.point() {
        m.error_tv_raw = Some(total_variation(raw, &p));
        m.error_tv = Some(total_variation(&project_to_simplex(raw), &p));
    }
    m.k = Some(run.blockwise.plan.k);
    m.ledger = Some(run.blockwise.ledger);
    Ok(m)
}

fn run_sgd(spec: &ExperimentSpec, c: &ConfigPoint, seeds: (u64, u64, u64)) -> Result<Measured> {
    let mu = spec.mu(c.d);
    let family = match spec.family {
        RealFamily::ScaledGaussianClipped => Family::ScaledGaussianClipped,
        _ => Family::UniformBall,
    };
    let ds = generate(&DataSpec { n: c.n, m: c.m, d: c.d, r: spec.r, mu: mu.clone(), family, rho: c.rho, seed: seeds.0 })?;
    let big_r = spec.domain_radius;
    let domain = BallDomain { center: Point::zeros(c.d), radius: big_r };
    let g = big_r + spec.mean_norm + spec.r;
    let problem = ConvexProblem::new(QuadraticLoss, domain, g, 1.0, spec.r)?;
    let mut theta0 = vec![0.0; c.d];
    theta0[0] = -0.5 * big_r;
    let theta0 = Point::new(theta0)?;

    let mut cfg = SgdConfig::new(c.eps, c.delta, c.t)?;
    cfg.alpha = c.alpha;
    cfg.theta0 = Some(theta0.clone());
    cfg.oracle = spec.user_params(c, g)?;
    let trace = private_sgd(&problem, &ds, &cfg, &mut seeded(seeds.1))?;
    let baseline = sgd_exact(&problem, &ds, c.t, &theta0, Some(trace.eta))?;

    let zbar: Vec<f64> = problem.empirical_gradient(&ds, &vec![0.0; c.d]).iter().map(|x| -x).collect();
    let opt = project(&Point::new(zbar)?, &problem.domain);
    let best = problem.empirical_risk(&ds, &opt);
    Ok(Measured {
        outcome: "accepted".into(),
        error_l2: Some(dist_sq(&trace.final_theta, &opt).sqrt()),
        suboptimality: Some(problem.empirical_risk(&ds, &trace.final_theta) - best),
        baseline_suboptimality: Some(problem.empirical_risk(&ds, &baseline.final_theta) - best),
        k: cfg.oracle.blockwise.k,
        ledger: trace.ledger,
        ..Default::default()
    })
}

/// Runs every (grid point, trial) pair; failures become `failed` records.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let points = spec.points();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|g| (0..spec.trials).map(move |t| (g, t))).collect();
    let records: Vec<Record> = jobs
        .par_iter()
        .map(|&(g, trial)| {
            let c = &points[g];
            let seeds = (
                derive_seed(spec.seed, trial as u64, 0),
                derive_seed(spec.seed, trial as u64, 1),
                derive_seed(spec.seed, trial as u64, 2),
            );
            let start = Instant::now();
            let measured = match spec.kind {
                ExperimentKind::MeanEstimation | ExperimentKind::RobustnessSweep => run_mean(spec, c, seeds),
                ExperimentKind::DistributionLearning => run_distribution(spec, c, seeds),
                ExperimentKind::Sgd => run_sgd(spec, c, seeds),
            };
            let wall = spec.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            let (m, message) = match measured {
                Ok(m) => (m, None),
                Err(e) => (Measured { outcome: "failed".into(), ..Default::default() }, Some(e.to_string())),
            };
            Record {
                version: VERSION.to_string(),
                kind: spec.kind,
                grid_index: g,
                trial,
                data_seed: seeds.0,
                mechanism_seed: seeds.1,
                n: c.n,
                m: c.m,
                d: c.d,
                eps: c.eps,
                delta: c.delta,
                alpha: c.alpha,
                rho: c.rho,
                corruption: c.corruption,
                t: (spec.kind == ExperimentKind::Sgd).then_some(c.t),
                outcome: m.outcome,
                error_l2: m.error_l2,
                error_tv: m.error_tv,
                error_tv_raw: m.error_tv_raw,
                suboptimality: m.suboptimality,
                baseline_suboptimality: m.baseline_suboptimality,
                k: m.k,
                ledger_eps: m.ledger.as_ref().map(|l| l.total.eps),
                ledger_delta: m.ledger.as_ref().map(|l| l.total.delta),
                ledger_calls: m.ledger.as_ref().map(|l| l.calls),
                message,
                wall_ms: wall,
            }
        })
        .collect();
    let summaries = points.iter().enumerate().map(|(g, c)| summarize(g, c, &records)).collect();
    Ok(ExperimentResult { records, summaries })
}

fn summarize(g: usize, c: &ConfigPoint, records: &[Record]) -> Summary {
    let rs: Vec<&Record> = records.iter().filter(|r| r.grid_index == g).collect();
    let col = |f: fn(&Record) -> Option<f64>| rs.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
    let l2 = col(|r| r.error_l2);
    Summary {
        grid_index: g,
        n: c.n,
        m: c.m,
        d: c.d,
        eps: c.eps,
        delta: c.delta,
        alpha: c.alpha,
        rho: c.rho,
        corruption: c.corruption,
        t: c.t,
        trials: rs.len(),
        accepted: rs.iter().filter(|r| r.outcome == "accepted").count(),
        failed: rs.iter().filter(|r| r.outcome == "failed").count(),
        error_l2_q10: quantile(&l2, 0.1),
        error_l2_median: quantile(&l2, 0.5),
        error_l2_q90: quantile(&l2, 0.9),
        error_tv_median: quantile(&col(|r| r.error_tv), 0.5),
        error_tv_raw_median: quantile(&col(|r| r.error_tv_raw), 0.5),
        suboptimality_median: quantile(&col(|r| r.suboptimality), 0.5),
        baseline_suboptimality_median: quantile(&col(|r| r.baseline_suboptimality), 0.5),
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| DpError::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| DpError::Parse(e.to_string()))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| DpError::Parse(e.to_string()))
}

/// Writes `spec.json`, `records.jsonl`, `records.csv`, `summary.csv` and
/// `summary.json` under `dir`.
pub fn write_outputs(spec: &ExperimentSpec, result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let header = serde_json::json!({ "version": VERSION, "spec": spec });
    let files: [(&str, Vec<u8>); 5] = [
        ("spec.json", pretty(&header)?.into_bytes()),
        ("records.jsonl", {
            let mut s = String::new();
            for r in &result.records {
                s.push_str(&serde_json::to_string(r).map_err(|e| DpError::Parse(e.to_string()))?);
                s.push('\n');
            }
            s.into_bytes()
        }),
        ("records.csv", csv_bytes(&result.records)?),
        ("summary.csv", csv_bytes(&result.summaries)?),
        ("summary.json", pretty(&result.summaries)?.into_bytes()),
    ];
    for (name, bytes) in files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Reads `records.jsonl` back.
pub fn read_records(dir: &Path) -> Result<Vec<Record>> {
    let p = dir.join("records.jsonl");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| DpError::Parse(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec(kind: ExperimentKind, out: PathBuf) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            grid: Grid {
                n: vec![300],
                m: vec![4],
                d: vec![4],
                eps: vec![0.5],
                delta: vec![1e-3],
                alpha: vec![0.1],
                rho: vec![0.0],
                corruption: vec![0.0],
                t: vec![10],
            },
            trials: 1,
            seed: 9,
            output: out,
            r: 1.0,
            family: RealFamily::UniformBall,
            mean_norm: 0.0,
            distribution: Distribution::Uniform,
            corruption_distance: 10.0,
            k: None,
            amplified: false,
            domain_radius: 1.0,
            timing: false,
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[4.0, 1.0, 2.0, 3.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0], 0.0), Some(1.0));
        assert_eq!(quantile(&[1.0, 2.0], 1.0), Some(2.0));
    }

    #[test]
    fn single_point_single_trial() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(ExperimentKind::MeanEstimation, dir.path().to_path_buf());
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.summaries.len(), 1);
        write_outputs(&spec, &res, dir.path()).unwrap();
        assert_eq!(read_records(dir.path()).unwrap(), res.records);
    }

    #[test]
    fn record_count_is_grid_times_trials() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(ExperimentKind::DistributionLearning, dir.path().to_path_buf());
        spec.grid.m = vec![4, 16];
        spec.grid.eps = vec![0.5, 1.0];
        spec.trials = 3;
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.records.len(), 12);
        let order: Vec<(usize, usize)> = res.records.iter().map(|r| (r.grid_index, r.trial)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        for s in &res.summaries {
            let l2: Vec<f64> =
                res.records.iter().filter(|r| r.grid_index == s.grid_index).filter_map(|r| r.error_l2).collect();
            assert_eq!(s.error_l2_median, quantile(&l2, 0.5));
        }
    }

    #[test]
    fn failures_do_not_abort() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(ExperimentKind::RobustnessSweep, dir.path().to_path_buf());
        spec.grid.corruption = vec![0.0, 0.6];
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.records[1].outcome, "failed");
        assert!(res.records[1].message.as_deref().unwrap().contains("fraction"));
    }

    #[test]
    fn rejects_empty_axes_and_zero_trials() {
        let mut spec = small_spec(ExperimentKind::MeanEstimation, PathBuf::from("x"));
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = small_spec(ExperimentKind::MeanEstimation, PathBuf::from("x"));
        spec.grid.n.clear();
        assert!(spec.validate().is_err());
    }
}
