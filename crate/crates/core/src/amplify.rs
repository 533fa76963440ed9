//! Failure-probability amplification: `k_runs` independent mechanism runs at
//! a reduced budget, aggregated by the coordinate-wise median of the runs
//! that produced a point.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{schedule_amplify, AmplifySchedule, DEFAULT_RUN_CONSTANT};
use crate::error::Result;
use crate::geometry::{coordinate_median_rows, Point, PointSet};
use crate::mechanism::{run_dp_estimate_1, EstimateOutcome, MechanismParams};
use crate::rng::{derive_seed, seeded};

/// Per-run failure parameter of each inner run.
pub const RUN_ALPHA: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifyParams {
    /// Overall budget, failure probability and radius. Per-run values are
    /// derived from it; its tuning constants carry over to every run.
    pub base: MechanismParams,
    /// `c_k` in `k_runs = ⌈c_k·ln(1/α)⌉`.
    pub run_constant: f64,
}

impl AmplifyParams {
    pub fn new(eps: f64, delta: f64, alpha: f64, radius: f64) -> Result<Self> {
        Ok(AmplifyParams { base: MechanismParams::new(eps, delta, alpha, radius)?, run_constant: DEFAULT_RUN_CONSTANT })
    }

    pub fn schedule(&self) -> Result<AmplifySchedule> {
        schedule_amplify(self.base.eps, self.base.delta, self.base.alpha, self.run_constant)
    }

    /// Parameters handed to each inner run.
    pub fn run_params(&self) -> Result<(MechanismParams, AmplifySchedule)> {
        self.base.validate()?;
        let s = self.schedule()?;
        let mut p = self.base.clone();
        p.eps = s.per_run.eps;
        p.delta = s.per_run.delta;
        p.alpha = RUN_ALPHA;
        p.validate()?;
        Ok((p, s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifyRun {
    pub outcome: EstimateOutcome,
    pub schedule: AmplifySchedule,
    /// Runs that ended in a garbage bucket and were left out of the median.
    pub discarded: u64,
    pub below_threshold: bool,
}

pub fn run_dp_estimate_2<R: Rng + ?Sized>(points: &PointSet, params: &AmplifyParams, rng: &mut R) -> Result<AmplifyRun> {
    let (run_params, schedule) = params.run_params()?;
    let base_seed = rng.next_u64();
    let runs: Vec<EstimateOutcome> = (0..schedule.runs)
        .into_par_iter()
        .map(|j| {
            let mut child = seeded(derive_seed(base_seed, j, 0));
            run_dp_estimate_1(points, &run_params, &mut child).map(|r| r.outcome)
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&[f64]> = runs.iter().filter_map(|o| o.point().map(|p| p.coords())).collect();
    let discarded = schedule.runs - kept.len() as u64;
    let outcome = if kept.is_empty() {
        EstimateOutcome::Garbage2
    } else {
        EstimateOutcome::Accepted(Point::new(coordinate_median_rows(kept, points.dim()))?)
    };
    Ok(AmplifyRun { outcome, schedule, discarded, below_threshold: run_params.below_threshold(points.len()) })
}

pub fn dp_estimate_2<R: Rng + ?Sized>(points: &[Point], params: &AmplifyParams, rng: &mut R) -> Result<EstimateOutcome> {
    let set = PointSet::from_points(points)?;
    Ok(run_dp_estimate_2(&set, params, rng)?.outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;
    use crate::rng::seeded;

    #[test]
    fn identical_inputs_give_that_point() {
        // Radius tiny relative to spacing: every accepted point sits within
        // r√d of the common location.
        let x = Point::new(vec![3.0, -1.0]).unwrap();
        let data = vec![x.clone(); 3000];
        let params = AmplifyParams::new(1.0, 1e-3, 0.1, 1e-9).unwrap();
        let out = dp_estimate_2(&data, &params, &mut seeded(1)).unwrap();
        let p = out.point().expect("accepted");
        assert!(crate::geometry::dist_sq(p, &x).sqrt() <= 2e-9);
    }

    #[test]
    fn all_garbage_falls_back_to_g2() {
        let data = vec![Point::zeros(2); 10];
        let mut params = AmplifyParams::new(0.5, 1e-3, 0.1, 1.0).unwrap();
        params.base.accept_constant = 0.0;
        params.base.garbage_accept = 0.0;
        params.base.max_rounds = Some(2);
        let set = PointSet::from_points(&data).unwrap();
        let run = run_dp_estimate_2(&set, &params, &mut seeded(2)).unwrap();
        assert_eq!(run.outcome, EstimateOutcome::Garbage2);
        assert_eq!(run.discarded, run.schedule.runs);
    }

    #[test]
    fn concentrated_accuracy() {
        let (d, n, alpha) = (16, 1500, 0.1);
        let data = vec![Point::zeros(d); n];
        let params = AmplifyParams::new(1.0 / 3.0, 1e-3, alpha, 1.0).unwrap();
        let set = PointSet::from_points(&data).unwrap();
        let mut rng = seeded(3);
        let trials = 60;
        let bound = 1.0 + (d as f64).sqrt();
        let good = (0..trials)
            .filter(|_| {
                run_dp_estimate_2(&set, &params, &mut rng).unwrap().outcome.point().is_some_and(|p| norm(p) <= bound)
            })
            .count();
        assert!(good as f64 >= (1.0 - alpha) * trials as f64, "good {good}/{trials}");
    }

    #[test]
    fn deterministic() {
        let data: Vec<Point> = (0..200).map(|i| Point::new(vec![(i % 7) as f64 * 0.1]).unwrap()).collect();
        let params = AmplifyParams::new(0.5, 1e-3, 0.2, 1.0).unwrap();
        let a = dp_estimate_2(&data, &params, &mut seeded(5)).unwrap();
        let b = dp_estimate_2(&data, &params, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }
}
