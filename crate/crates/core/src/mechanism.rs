//! The rejection-sampling exponential mechanism with garbage buckets.
//!
//! One round picks an index `i ∈ [n+1]`. For `i ≤ n` a point `p` is drawn
//! uniformly from `B(x_i, r√d)` and accepted with probability
//! `c·(n/f(p))·e^{ε(min(f(p), 2n/3) − 2n/3)}`. Index `n+1` yields the first
//! garbage bucket with probability `1/3`. After a geometric number of
//! rejected rounds the second garbage bucket is returned.
//!
//! [`reference_density`] integrates the ideal target distribution on a grid
//! for `d ≤ 2`; it is the oracle for the sampler's conditional law.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::geometry::{sample_ball_into, Point, PointSet};
use crate::rng::open01;

/// Result of a full mechanism run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "point", rename_all = "snake_case")]
pub enum EstimateOutcome {
    Accepted(Point),
    Garbage1,
    Garbage2,
}

impl EstimateOutcome {
    pub fn point(&self) -> Option<&Point> {
        match self {
            EstimateOutcome::Accepted(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_garbage(&self) -> bool {
        !matches!(self, EstimateOutcome::Accepted(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            EstimateOutcome::Accepted(_) => "accepted",
            EstimateOutcome::Garbage1 => "garbage1",
            EstimateOutcome::Garbage2 => "garbage2",
        }
    }
}

/// Result of one rejection-sampling round.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    AcceptedPoint(Point),
    AcceptedG1,
    Rejected,
}

pub const DEFAULT_THRESHOLD_CONSTANT: f64 = 12.0;
const ONE_THIRD: f64 = 1.0 / 3.0;

/// Privacy, failure and concentration parameters of one mechanism call.
///
/// The point count is not stored; it is read from the data at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    /// Concentration radius `r`; balls have radius `r·√d`.
    pub radius: f64,
    /// Constant `C` of the sample-size threshold.
    pub threshold_constant: f64,
    /// Leading constant of the acceptance probability.
    pub accept_constant: f64,
    /// Probability of returning the first garbage bucket once index `n+1` is drawn.
    pub garbage_accept: f64,
    /// Multiplier on `e^{10√(ln n)}/α` when sizing the retry budget.
    pub retry_constant: f64,
    /// Hard cap on rounds; reaching it yields the second garbage bucket.
    pub max_rounds: Option<u64>,
}

impl MechanismParams {
    pub fn new(eps: f64, delta: f64, alpha: f64, radius: f64) -> Result<Self> {
        let p = MechanismParams {
            eps,
            delta,
            alpha,
            radius,
            threshold_constant: DEFAULT_THRESHOLD_CONSTANT,
            accept_constant: ONE_THIRD,
            garbage_accept: ONE_THIRD,
            retry_constant: 1.0,
            max_rounds: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_budget(self.eps, self.delta)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DpError::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(DpError::invalid(format!("radius must be positive and finite, got {}", self.radius)));
        }
        for (name, v) in [("accept_constant", self.accept_constant), ("garbage_accept", self.garbage_accept)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DpError::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.threshold_constant >= 0.0) || !(self.retry_constant > 0.0) {
            return Err(DpError::invalid("threshold and retry constants must be non-negative and positive"));
        }
        if self.max_rounds == Some(0) {
            return Err(DpError::invalid("max_rounds must be at least 1"));
        }
        Ok(())
    }

    /// Smallest `n` for which the accuracy guarantee applies.
    pub fn min_points(&self) -> f64 {
        self.threshold_constant / self.eps * (1.0 / (self.alpha * self.eps * self.delta)).ln()
    }

    pub fn below_threshold(&self, n: usize) -> bool {
        (n as f64) < self.min_points()
    }

    /// True when every parameter lies in the proven regime `(0, 1/3]`.
    pub fn in_proven_regime(&self) -> bool {
        self.eps <= ONE_THIRD && self.delta <= ONE_THIRD && self.alpha <= ONE_THIRD
    }

    /// Retry budget `N = ⌈retry_constant·e^{10√(ln n)}/α⌉`, saturating.
    pub fn retry_budget(&self, n: usize) -> u64 {
        let ln_n = (n.max(1) as f64).ln();
        let log_n = (self.retry_constant.ln() + 10.0 * ln_n.sqrt() - self.alpha.ln()).min(63.0 * std::f64::consts::LN_2);
        let n_f = log_n.exp().ceil();
        if n_f >= u64::MAX as f64 {
            u64::MAX
        } else {
            (n_f as u64).max(1)
        }
    }
}

/// Shared `(ε, δ)` validity check: `ε` positive and finite, `δ ∈ (0, 1)`, `ε ≥ δ`.
pub(crate) fn validate_budget(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DpError::invalid(format!("eps must be positive and finite, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if eps < delta {
        return Err(DpError::invalid(format!("eps ({eps}) must be at least delta ({delta})")));
    }
    Ok(())
}

/// `c·(n/fp)·e^{ε(min(fp, 2n/3) − 2n/3)}` clamped to `[0, 1]`.
pub fn acceptance_probability_with(accept_constant: f64, fp: usize, n: usize, eps: f64) -> Result<f64> {
    if fp == 0 || fp > n {
        return Err(DpError::invalid(format!("cover count {fp} must lie in [1, {n}]")));
    }
    if accept_constant == 0.0 {
        return Ok(0.0);
    }
    let (fp, n) = (fp as f64, n as f64);
    let two_thirds = 2.0 * n / 3.0;
    let a = if fp >= two_thirds {
        accept_constant * n / fp
    } else {
        (accept_constant.ln() + n.ln() - fp.ln() + eps * (fp - two_thirds)).exp()
    };
    Ok(a.clamp(0.0, 1.0))
}

pub fn acceptance_probability(fp: usize, n: usize, eps: f64) -> Result<f64> {
    acceptance_probability_with(ONE_THIRD, fp, n, eps)
}

/// `P(i = n+1) = 1/(1 + (δ/4)·e^{ε·2n/3})` without forming the raw weights.
pub fn garbage_index_probability(n: usize, eps: f64, delta: f64) -> f64 {
    let t = (delta / 4.0).ln() + eps * 2.0 * n as f64 / 3.0;
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Draw from Geometric(1/N) on `{1, 2, …}`.
pub fn sample_retry_count<R: Rng + ?Sized>(n_budget: u64, rng: &mut R) -> u64 {
    if n_budget <= 1 {
        return 1;
    }
    let u = open01(rng);
    let denom = (-1.0 / n_budget as f64).ln_1p();
    let x = 1.0 + (u.ln() / denom).floor();
    // `as` saturates for out-of-range floats.
    (x as u64).max(1)
}

/// Probability that every round rejects: `(1−q)/((N−1)q + 1)`.
pub fn garbage2_probability(q: f64, n_budget: u64) -> f64 {
    (1.0 - q) / ((n_budget as f64 - 1.0) * q + 1.0)
}

/// Prepared sampler over a fixed data set; reuses its scratch buffer.
pub struct RejectionSampler<'a> {
    points: &'a PointSet,
    params: &'a MechanismParams,
    p_garbage: f64,
    ball_sq: f64,
    ball_radius: f64,
    scratch: Vec<f64>,
}

impl<'a> RejectionSampler<'a> {
    pub fn new(points: &'a PointSet, params: &'a MechanismParams) -> Result<Self> {
        params.validate()?;
        if points.is_empty() {
            return Err(DpError::EmptyInput("points"));
        }
        let n = points.len();
        let ball_radius = params.radius * (points.dim() as f64).sqrt();
        Ok(RejectionSampler {
            points,
            params,
            p_garbage: garbage_index_probability(n, params.eps, params.delta),
            ball_sq: ball_radius * ball_radius,
            ball_radius,
            scratch: vec![0.0; points.dim()],
        })
    }

    /// One round. Returns `Some(true)` for an accepted point left in the
    /// scratch buffer, `Some(false)` for the first garbage bucket, `None`
    /// for a rejection.
    fn round_raw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<bool> {
        let n = self.points.len();
        if rng.random::<f64>() < self.p_garbage {
            return (rng.random::<f64>() < self.params.garbage_accept).then_some(false);
        }
        let i = rng.random_range(0..n);
        sample_ball_into(self.points.row(i), self.ball_radius, rng, &mut self.scratch);
        // p lies in B_i by construction, so f ≥ 1.
        let f = self.points.count_within_sq(&self.scratch, self.ball_sq).max(1);
        let a = acceptance_probability_with(self.params.accept_constant, f, n, self.params.eps)
            .unwrap_or(0.0);
        (rng.random::<f64>() < a).then_some(true)
    }

    pub fn round<R: Rng + ?Sized>(&mut self, rng: &mut R) -> RoundOutcome {
        match self.round_raw(rng) {
            Some(true) => RoundOutcome::AcceptedPoint(Point::from_raw(self.scratch.clone())),
            Some(false) => RoundOutcome::AcceptedG1,
            None => RoundOutcome::Rejected,
        }
    }

    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MechanismRun {
        let n = self.points.len();
        let retry_budget = self.params.retry_budget(n);
        let drawn = sample_retry_count(retry_budget, rng);
        let limit = self.params.max_rounds.map_or(drawn, |cap| drawn.min(cap));
        let mut rounds = 0;
        let mut outcome = EstimateOutcome::Garbage2;
        while rounds < limit {
            rounds += 1;
            match self.round_raw(rng) {
                Some(true) => {
                    outcome = EstimateOutcome::Accepted(Point::from_raw(self.scratch.clone()));
                    break;
                }
                Some(false) => {
                    outcome = EstimateOutcome::Garbage1;
                    break;
                }
                None => {}
            }
        }
        MechanismRun {
            outcome,
            rounds,
            drawn_rounds: drawn,
            retry_budget,
            capped: limit < drawn && rounds == limit,
            below_threshold: self.params.below_threshold(n),
            outside_regime: !self.params.in_proven_regime(),
        }
    }
}

/// Outcome plus diagnostics of one mechanism run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRun {
    pub outcome: EstimateOutcome,
    /// Rounds actually executed.
    pub rounds: u64,
    /// Geometric draw `X` bounding the rounds.
    pub drawn_rounds: u64,
    /// `N`, the mean of the geometric draw.
    pub retry_budget: u64,
    /// The `max_rounds` cap cut the run short.
    pub capped: bool,
    /// `n` is below the accuracy threshold; privacy still holds.
    pub below_threshold: bool,
    /// Some parameter exceeds `1/3`.
    pub outside_regime: bool,
}

pub fn single_round<R: Rng + ?Sized>(points: &[Point], params: &MechanismParams, rng: &mut R) -> Result<RoundOutcome> {
    let set = PointSet::from_points(points)?;
    Ok(RejectionSampler::new(&set, params)?.round(rng))
}

pub fn run_dp_estimate_1<R: Rng + ?Sized>(points: &PointSet, params: &MechanismParams, rng: &mut R) -> Result<MechanismRun> {
    Ok(RejectionSampler::new(points, params)?.run(rng))
}

pub fn dp_estimate_1<R: Rng + ?Sized>(points: &[Point], params: &MechanismParams, rng: &mut R) -> Result<EstimateOutcome> {
    let set = PointSet::from_points(points)?;
    Ok(run_dp_estimate_1(&set, params, rng)?.outcome)
}

/// Monte Carlo estimate of the single-round acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptEstimate {
    pub q: f64,
    pub std_err: f64,
    pub trials: u64,
}

pub fn estimate_accept_prob<R: Rng + ?Sized>(
    points: &[Point],
    params: &MechanismParams,
    trials: u64,
    rng: &mut R,
) -> Result<AcceptEstimate> {
    let set = PointSet::from_points(points)?;
    estimate_accept_prob_set(&set, params, trials, rng)
}

pub fn estimate_accept_prob_set<R: Rng + ?Sized>(
    points: &PointSet,
    params: &MechanismParams,
    trials: u64,
    rng: &mut R,
) -> Result<AcceptEstimate> {
    if trials == 0 {
        return Err(DpError::invalid("trials must be positive"));
    }
    let mut sampler = RejectionSampler::new(points, params)?;
    let hits = (0..trials).filter(|_| sampler.round_raw(rng).is_some()).count();
    let q = hits as f64 / trials as f64;
    Ok(AcceptEstimate { q, std_err: (q * (1.0 - q) / trials as f64).sqrt(), trials })
}

/// Regular grid over a box in `d ∈ {1, 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells_per_axis: usize,
    /// Midpoint sub-cells per axis inside each output cell.
    pub subdivisions: usize,
}

impl GridSpec {
    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells_per_axis as f64
    }

    /// Flat row-major index of the cell containing `p`, if any.
    pub fn cell_index(&self, p: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (axis, &x) in p.iter().enumerate() {
            let t = (x - self.lo[axis]) / self.cell_width(axis);
            if !(t >= 0.0) || t > self.cells_per_axis as f64 {
                return None;
            }
            let c = (t.floor() as usize).min(self.cells_per_axis - 1);
            idx = idx * self.cells_per_axis + c;
        }
        Some(idx)
    }
}

/// Normalized ideal distribution: per-cell mass plus the garbage point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDensity {
    pub grid: GridSpec,
    pub cell_mass: Vec<f64>,
    pub garbage_mass: f64,
}

const MIN_SUBCELLS_PER_BALL: f64 = 1000.0;

pub fn reference_density(points: &[Point], params: &MechanismParams, grid: &GridSpec) -> Result<ReferenceDensity> {
    params.validate()?;
    let set = PointSet::from_points(points)?;
    let d = set.dim();
    if d > 2 {
        return Err(DpError::invalid(format!("reference density supports d <= 2, got {d}")));
    }
    if grid.lo.len() != d || grid.hi.len() != d {
        return Err(DpError::DimensionMismatch { expected: d, got: grid.lo.len().min(grid.hi.len()) });
    }
    if grid.cells_per_axis == 0 || grid.subdivisions == 0 {
        return Err(DpError::invalid("grid needs at least one cell and one subdivision"));
    }
    let n = set.len();
    let ball = params.radius * (d as f64).sqrt();
    let ball_volume = if d == 1 { 2.0 * ball } else { std::f64::consts::PI * ball * ball };
    for x in set.rows() {
        for axis in 0..d {
            if x[axis] - ball < grid.lo[axis] || x[axis] + ball > grid.hi[axis] {
                return Err(DpError::GridCoverage(format!(
                    "ball around {:?} exceeds [{}, {}] on axis {axis}",
                    x, grid.lo[axis], grid.hi[axis]
                )));
            }
        }
    }
    let sub_w: Vec<f64> = (0..d).map(|a| grid.cell_width(a) / grid.subdivisions as f64).collect();
    let sub_volume: f64 = sub_w.iter().product();
    if ball_volume / sub_volume < MIN_SUBCELLS_PER_BALL {
        return Err(DpError::GridCoverage(format!(
            "only {:.0} sub-cells per ball, need {MIN_SUBCELLS_PER_BALL}",
            ball_volume / sub_volume
        )));
    }

    // Weights are relative to e^{ε·2n/3}, the largest density value.
    let two_thirds = 2.0 * n as f64 / 3.0;
    let ball_sq = ball * ball;
    let fine = grid.cells_per_axis * grid.subdivisions;
    let cells = grid.cells_per_axis.pow(d as u32);
    let mut mass = vec![0.0; cells];
    let mut p = vec![0.0; d];
    for flat in 0..fine.pow(d as u32) {
        let mut rem = flat;
        let mut cell = 0;
        for axis in (0..d).rev() {
            let k = rem % fine;
            rem /= fine;
            p[axis] = grid.lo[axis] + (k as f64 + 0.5) * sub_w[axis];
        }
        for axis in 0..d {
            let k = ((p[axis] - grid.lo[axis]) / sub_w[axis]) as usize;
            cell = cell * grid.cells_per_axis + (k / grid.subdivisions).min(grid.cells_per_axis - 1);
        }
        let f = set.count_within_sq(&p, ball_sq);
        if f > 0 {
            mass[cell] += (params.eps * ((f as f64).min(two_thirds) - two_thirds)).exp() * sub_volume;
        }
    }
    let garbage = 4.0 / params.delta * ball_volume * (-params.eps * two_thirds).exp();
    let total: f64 = mass.iter().sum::<f64>() + garbage;
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(ReferenceDensity { grid: grid.clone(), cell_mass: mass, garbage_mass: garbage / total })
}
