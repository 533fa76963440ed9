//! Projected SGD over a Euclidean ball, driven by a gradient oracle.
//!
//! The loop is split into Query (ask the oracle for `g_t` at `θ_t`), Update
//! (`θ_{t+1} = Π(θ_t − η·g_t)`) and Aggregate (average of all iterates). The
//! private oracle averages each user's per-sample gradients and runs the
//! user-level estimator on those means.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{block_ledger, max_step_eps, strong_compose, BudgetLedger, PrivacyBudget};
use crate::blockwise::choose_k_with;
use crate::error::{DpError, Result};
use crate::geometry::{clip_to_ball, dist_sq, Point, PointSet};
use crate::mechanism::EstimateOutcome;
use crate::userlevel::{run_on_means, UserDataset, UserLevelParams};

/// Per-sample loss `ℓ(θ; z)` with `θ ∈ ℝ^dim` and `z` a dataset sample.
pub trait Loss: Sync {
    fn value(&self, theta: &[f64], z: &[f64]) -> f64;
    /// Adds `∇_θ ℓ(θ; z)` into `out`.
    fn add_gradient(&self, theta: &[f64], z: &[f64], out: &mut [f64]);
}

/// `½‖θ − z‖²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLoss;

impl Loss for QuadraticLoss {
    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        0.5 * dist_sq(theta, z)
    }
    fn add_gradient(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        for ((o, t), x) in out.iter_mut().zip(theta).zip(z) {
            *o += t - x;
        }
    }
}

/// `⟨θ, z⟩`; the gradient does not depend on `θ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearLoss;

impl Loss for LinearLoss {
    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        theta.iter().zip(z).map(|(a, b)| a * b).sum()
    }
    fn add_gradient(&self, _theta: &[f64], z: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(z).for_each(|(o, x)| *o += x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallDomain {
    pub center: Point,
    pub radius: f64,
}

impl BallDomain {
    pub fn contains(&self, theta: &[f64]) -> bool {
        let s = dist_sq(theta, &self.center);
        s <= self.radius * self.radius && s.sqrt() <= self.radius
    }
}

pub fn project(theta: &Point, domain: &BallDomain) -> Point {
    let mut x = theta.coords().to_vec();
    clip_to_ball(&domain.center, domain.radius, &mut x);
    Point::new(x).expect("projection of a finite point is finite")
}

#[derive(Debug, Clone)]
pub struct ConvexProblem<L> {
    pub loss: L,
    pub domain: BallDomain,
    /// Lipschitz constant `G`; per-sample gradients have norm at most `G`.
    pub lipschitz: f64,
    /// Smoothness `H`.
    pub smoothness: f64,
    /// Sub-Gaussian proxy `σ`, reported only.
    pub subgaussian: f64,
    /// Strong convexity, reported only.
    pub strong_convexity: Option<f64>,
}

impl<L: Loss> ConvexProblem<L> {
    pub fn new(loss: L, domain: BallDomain, lipschitz: f64, smoothness: f64, subgaussian: f64) -> Result<Self> {
        for (name, v) in [("radius", domain.radius), ("G", lipschitz), ("H", smoothness), ("sigma", subgaussian)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DpError::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(ConvexProblem { loss, domain, lipschitz, smoothness, subgaussian, strong_convexity: None })
    }

    pub fn dim(&self) -> usize {
        self.domain.center.dim()
    }

    fn check(&self, dataset: &UserDataset) -> Result<()> {
        if dataset.d() != self.dim() {
            return Err(DpError::DimensionMismatch { expected: self.dim(), got: dataset.d() });
        }
        Ok(())
    }

    pub fn empirical_risk(&self, dataset: &UserDataset, theta: &[f64]) -> f64 {
        let total: f64 = dataset.as_flat().par_chunks(dataset.d()).map(|z| self.loss.value(theta, z)).sum();
        total / (dataset.n() * dataset.m()) as f64
    }

    /// `∇𝓛(θ; X)`, the mean per-sample gradient.
    pub fn empirical_gradient(&self, dataset: &UserDataset, theta: &[f64]) -> Vec<f64> {
        let means = self.user_gradient_means(dataset, theta);
        let mut g = vec![0.0; self.dim()];
        for row in means.rows() {
            g.iter_mut().zip(row).for_each(|(a, x)| *a += x);
        }
        g.iter_mut().for_each(|a| *a /= dataset.n() as f64);
        g
    }

    /// Row `i` is the average gradient over user `i`'s samples.
    pub fn user_gradient_means(&self, dataset: &UserDataset, theta: &[f64]) -> PointSet {
        let (m, d) = (dataset.m(), self.dim());
        let flat: Vec<f64> = (0..dataset.n())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut g = vec![0.0; d];
                for z in dataset.user(i).chunks_exact(dataset.d()) {
                    self.loss.add_gradient(theta, z, &mut g);
                }
                g.iter_mut().for_each(|x| *x /= m as f64);
                g
            })
            .collect();
        PointSet::from_flat(flat, d).expect("finite gradients")
    }
}

/// Source of gradient estimates.
pub trait GradientOracle {
    fn query(&mut self, theta: &Point) -> Result<Point>;
}

pub struct ExactOracle<'a, L> {
    pub problem: &'a ConvexProblem<L>,
    pub dataset: &'a UserDataset,
}

impl<L: Loss> GradientOracle for ExactOracle<'_, L> {
    fn query(&mut self, theta: &Point) -> Result<Point> {
        Point::new(self.problem.empirical_gradient(self.dataset, theta))
    }
}

/// One private gradient estimate at `theta` under `params`. The per-sample
/// radius handed to the user-level estimator is the Lipschitz bound `G`.
pub fn private_gradient_oracle<L: Loss, R: Rng + ?Sized>(
    problem: &ConvexProblem<L>,
    dataset: &UserDataset,
    theta: &Point,
    params: &UserLevelParams,
    rng: &mut R,
) -> Result<Point> {
    problem.check(dataset)?;
    let means = problem.user_gradient_means(dataset, theta);
    let mut p = params.clone();
    p.blockwise.base.radius = problem.lipschitz;
    match run_on_means(&means, dataset.m(), &p, rng)?.outcome {
        EstimateOutcome::Accepted(g) => Ok(g),
        other => Err(DpError::OracleFailure(format!("mean estimate returned {}", other.label()))),
    }
}

pub struct PrivateOracle<'a, L, R: ?Sized> {
    pub problem: &'a ConvexProblem<L>,
    pub dataset: &'a UserDataset,
    pub params: UserLevelParams,
    pub rng: &'a mut R,
}

impl<L: Loss, R: Rng + ?Sized> GradientOracle for PrivateOracle<'_, L, R> {
    fn query(&mut self, theta: &Point) -> Result<Point> {
        private_gradient_oracle(self.problem, self.dataset, theta, &self.params, self.rng)
    }
}

/// Update: `Π(θ − η·g)`.
pub fn update(theta: &Point, g: &Point, eta: f64, domain: &BallDomain) -> Point {
    let stepped: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, x)| t - eta * x).collect();
    project(&Point::new(stepped).expect("finite step"), domain)
}

/// Aggregate: the average of all iterates.
pub fn aggregate(iterates: &[SgdStep]) -> Point {
    let d = iterates[0].theta.dim();
    let mut avg = vec![0.0; d];
    for s in iterates {
        avg.iter_mut().zip(s.theta.iter()).for_each(|(a, x)| *a += x);
    }
    avg.iter_mut().for_each(|a| *a /= iterates.len() as f64);
    Point::new(avg).expect("finite average")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdStep {
    pub theta: Point,
    /// The gradient queried at `theta`; absent for the last iterate and
    /// for failed oracle calls.
    pub gradient: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    /// `θ_0 … θ_T`.
    pub iterates: Vec<SgdStep>,
    pub t: usize,
    pub eta: f64,
    pub final_theta: Point,
    pub oracle_failures: usize,
    /// Measured oracle deviation from the pilot calls; zero for exact runs.
    pub nu_hat: f64,
    pub ledger: Option<BudgetLedger>,
    /// `n ≥ √T/ε` with unit constants.
    pub meets_user_threshold: bool,
}

/// Runs `t` projected steps from `theta0`. Failed queries leave `θ` in place;
/// more than `max_failures` aborts.
pub fn run_projected_sgd<O: GradientOracle>(
    oracle: &mut O,
    domain: &BallDomain,
    eta: f64,
    t: usize,
    theta0: &Point,
    max_failures: usize,
) -> Result<(Vec<SgdStep>, usize)> {
    let mut theta = project(theta0, domain);
    let mut steps = Vec::with_capacity(t + 1);
    let mut failures = 0;
    for _ in 0..t {
        let (g, next) = match oracle.query(&theta) {
            Ok(g) => {
                let next = update(&theta, &g, eta, domain);
                (Some(g), next)
            }
            Err(DpError::OracleFailure(_)) => {
                failures += 1;
                if failures > max_failures {
                    return Err(DpError::OracleFailure(format!(
                        "{failures} oracle calls returned garbage, more than the allowed {max_failures} of {t}"
                    )));
                }
                (None, theta.clone())
            }
            Err(e) => return Err(e),
        };
        steps.push(SgdStep { theta, gradient: g });
        theta = next;
    }
    steps.push(SgdStep { theta, gradient: None });
    Ok((steps, failures))
}

/// Exact-gradient run; `eta` defaults to `1/H`.
pub fn sgd_exact<L: Loss>(
    problem: &ConvexProblem<L>,
    dataset: &UserDataset,
    t: usize,
    theta0: &Point,
    eta: Option<f64>,
) -> Result<SgdTrace> {
    problem.check(dataset)?;
    if t == 0 {
        return Err(DpError::invalid("T must be at least 1"));
    }
    let eta = eta.unwrap_or(1.0 / problem.smoothness);
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(DpError::invalid(format!("step size must be positive, got {eta}")));
    }
    let mut oracle = ExactOracle { problem, dataset };
    let (iterates, _) = run_projected_sgd(&mut oracle, &problem.domain, eta, t, theta0, 0)?;
    Ok(SgdTrace {
        final_theta: aggregate(&iterates),
        iterates,
        t,
        eta,
        oracle_failures: 0,
        nu_hat: 0.0,
        ledger: None,
        meets_user_threshold: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub total: PrivacyBudget,
    pub t: usize,
    /// Failure probability of each oracle call.
    pub alpha: f64,
    pub pilot_calls: usize,
    /// Defaults to the domain center.
    pub theta0: Option<Point>,
    /// Tuning for the user-level estimator; its budget fields are replaced
    /// by the per-call schedule.
    pub oracle: UserLevelParams,
}

impl SgdConfig {
    pub fn new(eps: f64, delta: f64, t: usize) -> Result<Self> {
        Ok(SgdConfig {
            total: PrivacyBudget::new(eps, delta)?,
            t,
            alpha: 0.1,
            pilot_calls: 10,
            theta0: None,
            oracle: UserLevelParams::new(eps, delta, 0.1, 1.0)?,
        })
    }

    /// Per-call budget and ledger: strong composition over `T + pilot`
    /// calls with slack `δ/2`. With `k > 1` blocks each call composes
    /// internally, so the per-call `ε` is lowered until the total fits.
    pub fn schedule(&self, k: usize) -> Result<(PrivacyBudget, BudgetLedger)> {
        let calls = (self.t + self.pilot_calls) as u64;
        let slack = self.total.delta / 2.0;
        let call_delta = self.total.delta / (2.0 * calls as f64);
        if k <= 1 {
            let per = PrivacyBudget { eps: max_step_eps(self.total.eps, calls, slack)?, delta: call_delta };
            return Ok((per, BudgetLedger::strong(per, calls, slack)?));
        }
        // The block ledger adds its own slack equal to the per-call delta.
        let delta = call_delta / 2.0;
        let total = |e: f64| -> Result<f64> {
            let inner = block_ledger(e, delta, k as u64)?.total;
            Ok(strong_compose(inner.eps, inner.delta, calls, slack)?.eps)
        };
        let (mut lo, mut hi) = (delta, self.total.eps);
        if total(lo)? > self.total.eps {
            return Err(DpError::invalid("budget too small for this many oracle calls"));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid)? <= self.total.eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let per = PrivacyBudget { eps: lo, delta };
        let inner = block_ledger(lo, delta, k as u64)?.total;
        Ok((per, BudgetLedger::strong(inner, calls, slack)?))
    }
}

pub fn private_sgd<L: Loss, R: Rng + ?Sized>(
    problem: &ConvexProblem<L>,
    dataset: &UserDataset,
    config: &SgdConfig,
    rng: &mut R,
) -> Result<SgdTrace> {
    problem.check(dataset)?;
    if config.t == 0 || config.pilot_calls < 2 {
        return Err(DpError::invalid("T must be at least 1 and the pilot needs two calls"));
    }
    let mut params = config.oracle.clone();
    // Pin k from the single-block schedule so every call uses the same split.
    let k = match params.blockwise.k {
        Some(k) => k,
        None => {
            let (per1, _) = config.schedule(1)?;
            let c = params.blockwise.base.threshold_constant;
            match choose_k_with(dataset.n(), problem.dim(), per1.eps, per1.delta, c) {
                Ok(k) => k,
                Err(DpError::BelowThreshold { .. }) => 1,
                Err(e) => return Err(e),
            }
        }
    };
    let (per, ledger) = config.schedule(k)?;
    params.blockwise.k = Some(k);
    params.blockwise.base.eps = per.eps;
    params.blockwise.base.delta = per.delta;
    params.blockwise.base.alpha = config.alpha;
    params.blockwise.base.radius = problem.lipschitz;
    params.blockwise.base.validate()?;

    let theta0 = config.theta0.clone().unwrap_or_else(|| problem.domain.center.clone());
    let theta0 = project(&theta0, &problem.domain);
    let max_failures = config.t / 10;
    let mut oracle = PrivateOracle { problem, dataset, params, rng };

    let mut pilot = Vec::with_capacity(config.pilot_calls);
    for _ in 0..config.pilot_calls {
        match oracle.query(&theta0) {
            Ok(g) => pilot.push(g),
            Err(DpError::OracleFailure(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if pilot.len() < 2 {
        return Err(DpError::OracleFailure(format!(
            "only {} of {} pilot calls succeeded",
            pilot.len(),
            config.pilot_calls
        )));
    }
    let d = problem.dim();
    let mut center = vec![0.0; d];
    for g in &pilot {
        center.iter_mut().zip(g.iter()).for_each(|(a, x)| *a += x / pilot.len() as f64);
    }
    let nu_hat = (pilot.iter().map(|g| dist_sq(g, &center)).sum::<f64>() / (pilot.len() - 1) as f64).sqrt();

    let mut eta = 1.0 / problem.smoothness;
    if nu_hat > 0.0 {
        eta = eta.min(problem.domain.radius / (nu_hat * (config.t as f64).sqrt()));
    }
    let (iterates, failures) = run_projected_sgd(&mut oracle, &problem.domain, eta, config.t, &theta0, max_failures)?;
    Ok(SgdTrace {
        final_theta: aggregate(&iterates),
        iterates,
        t: config.t,
        eta,
        oracle_failures: failures,
        nu_hat,
        ledger: Some(ledger),
        meets_user_threshold: dataset.n() as f64 >= (config.t as f64).sqrt() / config.total.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;
    use crate::rng::seeded;
    use crate::synthdata::{generate, DataSpec, Family};

    fn domain(d: usize, r: f64) -> BallDomain {
        BallDomain { center: Point::zeros(d), radius: r }
    }

    fn quad_problem(d: usize) -> ConvexProblem<QuadraticLoss> {
        ConvexProblem::new(QuadraticLoss, domain(d, 1.0), 2.0, 1.0, 1.0).unwrap()
    }

    fn data(n: usize, m: usize, d: usize, r: f64, seed: u64) -> UserDataset {
        let mu = Point::new((0..d).map(|i| if i == 0 { 0.4 } else { 0.0 }).collect()).unwrap();
        generate(&DataSpec { n, m, d, r, mu, family: Family::UniformBall, rho: 0.0, seed }).unwrap()
    }

    #[test]
    fn projection_examples() {
        let dom = domain(2, 1.0);
        let inside = Point::new(vec![0.3, -0.2]).unwrap();
        assert_eq!(project(&inside, &dom), inside);
        assert_eq!(project(&Point::new(vec![2.0, 0.0]).unwrap(), &dom).coords(), &[1.0, 0.0]);
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let p = Point::new(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).unwrap();
            let once = project(&p, &dom);
            assert!(dom.contains(&once));
            assert_eq!(project(&once, &dom), once);
        }
    }

    #[test]
    fn exact_sgd_trends() {
        let d = 4;
        let problem = quad_problem(d);
        let ds = data(30, 5, d, 0.2, 2);
        let theta0 = Point::new(vec![-0.5, 0.5, 0.0, 0.0]).unwrap();
        let opt = problem.empirical_gradient(&ds, &[0.0; 4]).iter().map(|g| -g).collect::<Vec<_>>();
        let best = problem.empirical_risk(&ds, &opt);
        let mut prev = f64::INFINITY;
        for t in [25, 50, 100, 200] {
            let tr = sgd_exact(&problem, &ds, t, &theta0, None).unwrap();
            let sub = problem.empirical_risk(&ds, &tr.final_theta) - best;
            assert!(sub <= prev && sub <= problem.smoothness * 1.0 / t as f64, "t={t} sub={sub}");
            prev = sub;
        }
        let one = sgd_exact(&problem, &ds, 1, &theta0, None).unwrap();
        assert_eq!(one.iterates.len(), 2);
    }

    #[test]
    fn linear_oracle_is_theta_independent() {
        let d = 8;
        let problem = ConvexProblem::new(LinearLoss, domain(d, 1.0), 1.0, 1.0, 1.0).unwrap();
        let ds = data(800, 10, d, 1.0, 3);
        let a = problem.empirical_gradient(&ds, &[0.0; 8]);
        let b = problem.empirical_gradient(&ds, &[0.5; 8]);
        assert_eq!(a, b);
        let params = UserLevelParams::new(1.0, 1e-3, 0.1, 1.0).unwrap();
        let mut rng = seeded(4);
        let g1 = private_gradient_oracle(&problem, &ds, &Point::zeros(d), &params, &mut rng).unwrap();
        let g2 = private_gradient_oracle(&problem, &ds, &Point::new(vec![0.5; 8]).unwrap(), &params, &mut rng).unwrap();
        // Both estimate the same vector; each within the mechanism's radius.
        let r_item = 10.0 / 10f64.sqrt();
        let bound = 2.0 * 2.0 * r_item * (8.0 * 800.0 / 0.1f64).ln().sqrt() * (d as f64).sqrt();
        assert!(dist_sq(&g1, &a).sqrt() <= bound && dist_sq(&g2, &a).sqrt() <= bound);
    }

    #[test]
    fn private_sgd_stays_in_domain_and_budget() {
        let d = 4;
        let problem = quad_problem(d);
        let ds = data(600, 50, d, 0.2, 5);
        let mut cfg = SgdConfig::new(20.0, 1e-3, 20).unwrap();
        cfg.theta0 = Some(Point::new(vec![-0.5, 0.5, 0.0, 0.0]).unwrap());
        let tr = private_sgd(&problem, &ds, &cfg, &mut seeded(6)).unwrap();
        assert_eq!(tr.iterates.len(), 21);
        assert!(tr.iterates.iter().all(|s| problem.domain.contains(&s.theta)));
        assert!(problem.domain.contains(&tr.final_theta));
        assert!(tr.ledger.unwrap().within(&cfg.total, 1.05));
        assert!(norm(&tr.final_theta) <= 1.0);
    }

    #[test]
    fn block_schedule_fits_budget() {
        let cfg = SgdConfig::new(10.0, 1e-3, 50).unwrap();
        for k in [1, 2, 4] {
            let (per, ledger) = cfg.schedule(k).unwrap();
            assert!(per.eps > 0.0);
            assert!(ledger.total.eps <= 10.0 * (1.0 + 1e-9) && ledger.total.delta <= 1e-3 * (1.0 + 1e-9), "k={k} {ledger:?}");
        }
    }

    #[test]
    fn private_sgd_aborts_on_garbage() {
        let d = 2;
        let problem = quad_problem(d);
        let ds = data(100, 4, d, 0.2, 7);
        let mut cfg = SgdConfig::new(5.0, 1e-3, 10).unwrap();
        cfg.oracle.blockwise.base.accept_constant = 0.0;
        cfg.oracle.blockwise.base.garbage_accept = 0.0;
        cfg.oracle.blockwise.base.max_rounds = Some(1);
        assert!(matches!(private_sgd(&problem, &ds, &cfg, &mut seeded(8)), Err(DpError::OracleFailure(_))));
    }
}
