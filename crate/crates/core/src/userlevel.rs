//! User-level estimation: average each user's samples, then run the blockwise
//! estimator on the user means with radius `10·r/√m`. Changing one user's
//! whole sample block changes one mean, so item-level privacy on the means is
//! user-level privacy on the data.
//!
//! Also hosts discrete distribution learning through one-hot user means.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockwise::{run_interpolated, BlockwiseParams, BlockwiseRun};
use crate::error::{DpError, Result};
use crate::geometry::{Point, PointSet};
use crate::mechanism::EstimateOutcome;

/// `n` users with `m` samples each in `ℝ^d`, stored `[user][sample][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    data: Vec<f64>,
    n: usize,
    m: usize,
    d: usize,
}

impl UserDataset {
    pub fn new(n: usize, m: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return Err(DpError::EmptyInput("user dataset needs n, m, d >= 1"));
        }
        let expected = n.checked_mul(m).and_then(|x| x.checked_mul(d)).ok_or_else(|| DpError::invalid("dataset too large"))?;
        if data.len() != expected {
            return Err(DpError::DimensionMismatch { expected, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(DpError::NonFinite("user dataset"));
        }
        Ok(UserDataset { data, n, m, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// All `m·d` values of user `i`.
    pub fn user(&self, i: usize) -> &[f64] {
        let w = self.m * self.d;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn user_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.m * self.d;
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn sample(&self, i: usize, j: usize) -> &[f64] {
        &self.user(i)[j * self.d..(j + 1) * self.d]
    }

    pub fn user_mean(&self, i: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for s in self.user(i).chunks_exact(self.d) {
            mean.iter_mut().zip(s).for_each(|(a, x)| *a += x);
        }
        let m = self.m as f64;
        mean.iter_mut().for_each(|a| *a /= m);
        mean
    }

    pub(crate) fn user_mean_set(&self) -> PointSet {
        let flat: Vec<f64> = (0..self.n).into_par_iter().flat_map_iter(|i| self.user_mean(i)).collect();
        PointSet::from_flat(flat, self.d).expect("means of finite data are finite")
    }
}

pub fn user_means(dataset: &UserDataset) -> Vec<Point> {
    dataset.user_mean_set().to_points()
}

/// `n × m` category labels in `1..=d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSamples {
    data: Vec<u32>,
    n: usize,
    m: usize,
    d: usize,
}

impl DiscreteSamples {
    pub fn new(n: usize, m: usize, d: usize, data: Vec<u32>) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return Err(DpError::EmptyInput("discrete samples need n, m, d >= 1"));
        }
        if data.len() != n * m {
            return Err(DpError::DimensionMismatch { expected: n * m, got: data.len() });
        }
        if let Some(bad) = data.iter().find(|&&c| c == 0 || c as usize > d) {
            return Err(DpError::invalid(format!("category {bad} outside 1..={d}")));
        }
        Ok(DiscreteSamples { data, n, m, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn as_flat(&self) -> &[u32] {
        &self.data
    }

    pub fn to_counts(&self) -> DiscreteCounts {
        let mut counts = vec![0u64; self.n * self.d];
        for (i, row) in self.data.chunks_exact(self.m).enumerate() {
            for &c in row {
                counts[i * self.d + c as usize - 1] += 1;
            }
        }
        DiscreteCounts { counts, n: self.n, m: self.m, d: self.d }
    }

    /// Real-valued one-hot view, `n × m × d`.
    pub fn one_hot(&self) -> UserDataset {
        let mut data = vec![0.0; self.n * self.m * self.d];
        for (k, &c) in self.data.iter().enumerate() {
            data[k * self.d + c as usize - 1] = 1.0;
        }
        UserDataset { data, n: self.n, m: self.m, d: self.d }
    }
}

/// Per-user category counts; the sufficient statistic of [`DiscreteSamples`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCounts {
    counts: Vec<u64>,
    n: usize,
    m: usize,
    d: usize,
}

impl DiscreteCounts {
    /// `counts` is `n × d`; every row must sum to `m`.
    pub fn new(n: usize, m: usize, d: usize, counts: Vec<u64>) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return Err(DpError::EmptyInput("discrete counts need n, m, d >= 1"));
        }
        if counts.len() != n * d {
            return Err(DpError::DimensionMismatch { expected: n * d, got: counts.len() });
        }
        if let Some(i) = counts.chunks_exact(d).position(|row| row.iter().sum::<u64>() != m as u64) {
            return Err(DpError::invalid(format!("counts of user {i} do not sum to m = {m}")));
        }
        Ok(DiscreteCounts { counts, n, m, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }

    /// User means of the one-hot encoding.
    pub(crate) fn user_mean_set(&self) -> PointSet {
        let m = self.m as f64;
        let flat = self.counts.iter().map(|&c| c as f64 / m).collect();
        PointSet::from_flat(flat, self.d).expect("frequencies are finite")
    }
}

pub const DEFAULT_USER_RADIUS_CONSTANT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLevelParams {
    /// Item-level configuration; `base.radius` holds the per-sample radius `r`.
    pub blockwise: BlockwiseParams,
    /// Constant in the user-mean radius `c·r/√m`.
    pub radius_constant: f64,
}

impl UserLevelParams {
    pub fn new(eps: f64, delta: f64, alpha: f64, radius: f64) -> Result<Self> {
        Ok(UserLevelParams {
            blockwise: BlockwiseParams::new(eps, delta, alpha, radius)?,
            radius_constant: DEFAULT_USER_RADIUS_CONSTANT,
        })
    }

    pub fn item_radius(&self, m: usize) -> f64 {
        self.radius_constant * self.blockwise.base.radius / (m as f64).sqrt()
    }
}

/// The two analytic error expressions with unit constants, plus the user
/// count range they assume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    /// `r·√(d/m)`.
    pub sample_bound: f64,
    /// `r·√d·ln(d/δ)·√ln(1/δ)·√ln(dn/α) / (ε·n·√m)`.
    pub interpolation_bound: f64,
    /// `C·(1/ε)·ln(1/(αδ))`.
    pub min_users: f64,
    /// `√d·(1/ε)·ln(1/δ)`.
    pub max_users: f64,
}

pub fn error_bounds(n: usize, m: usize, d: usize, r: f64, eps: f64, delta: f64, alpha: f64, c: f64) -> ErrorBounds {
    let (nf, mf, df) = (n as f64, m as f64, d as f64);
    let l_delta = (1.0 / delta).ln();
    ErrorBounds {
        sample_bound: r * (df / mf).sqrt(),
        interpolation_bound: r * df.sqrt() * (df / delta).ln() * l_delta.sqrt() * (df * nf / alpha).ln().sqrt()
            / (eps * nf * mf.sqrt()),
        min_users: c / eps * (1.0 / (alpha * delta)).ln(),
        max_users: df.sqrt() / eps * l_delta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRun {
    pub outcome: EstimateOutcome,
    pub item_radius: f64,
    pub blockwise: BlockwiseRun,
    pub bounds: ErrorBounds,
    /// `n` lies outside `[min_users, max_users]`.
    pub outside_user_range: bool,
}

pub fn run_on_means<R: Rng + ?Sized>(means: &PointSet, m: usize, params: &UserLevelParams, rng: &mut R) -> Result<UserRun> {
    if !(params.radius_constant > 0.0) || !params.radius_constant.is_finite() {
        return Err(DpError::invalid("user radius constant must be positive"));
    }
    let item_radius = params.item_radius(m);
    let mut bw = params.blockwise.clone();
    bw.base.radius = item_radius;
    let run = run_interpolated(means, &bw, rng)?;
    let b = &params.blockwise.base;
    let bounds = error_bounds(means.len(), m, means.dim(), b.radius, b.eps, b.delta, b.alpha, b.threshold_constant);
    let n = means.len() as f64;
    Ok(UserRun {
        outcome: run.outcome.clone(),
        item_radius,
        outside_user_range: n < bounds.min_users || n > bounds.max_users,
        blockwise: run,
        bounds,
    })
}

pub fn run_user<R: Rng + ?Sized>(dataset: &UserDataset, params: &UserLevelParams, rng: &mut R) -> Result<UserRun> {
    run_on_means(&dataset.user_mean_set(), dataset.m(), params, rng)
}

pub fn dp_estimate_user<R: Rng + ?Sized>(
    dataset: &UserDataset,
    r: f64,
    alpha: f64,
    eps: f64,
    delta: f64,
    rng: &mut R,
) -> Result<EstimateOutcome> {
    let params = UserLevelParams::new(eps, delta, alpha, r)?;
    Ok(run_user(dataset, &params, rng)?.outcome)
}

/// Distribution estimate with its run diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRun {
    pub probabilities: Vec<f64>,
    pub projected: bool,
    pub run: UserRun,
}

/// Parameters for discrete learning: radius is fixed at 1 for one-hot data.
pub fn discrete_params(eps: f64, delta: f64, alpha: f64) -> Result<UserLevelParams> {
    UserLevelParams::new(eps, delta, alpha, 1.0)
}

pub fn run_discrete_counts<R: Rng + ?Sized>(
    counts: &DiscreteCounts,
    params: &UserLevelParams,
    project: bool,
    rng: &mut R,
) -> Result<DiscreteRun> {
    let run = run_on_means(&counts.user_mean_set(), counts.m(), params, rng)?;
    let raw = match &run.outcome {
        EstimateOutcome::Accepted(p) => p.coords().to_vec(),
        other => {
            return Err(DpError::GarbageOutcome(format!("distribution estimate returned {}", other.label())));
        }
    };
    let probabilities = if project { project_to_simplex(&raw) } else { raw };
    Ok(DiscreteRun { probabilities, projected: project, run })
}

pub fn learn_discrete_distribution<R: Rng + ?Sized>(
    samples: &DiscreteSamples,
    alpha: f64,
    eps: f64,
    delta: f64,
    rng: &mut R,
    project: bool,
) -> Result<Vec<f64>> {
    let params = discrete_params(eps, delta, alpha)?;
    Ok(run_discrete_counts(&samples.to_counts(), &params, project, rng)?.probabilities)
}

/// Euclidean projection onto `{p : p ≥ 0, Σp = 1}` by sorting.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
