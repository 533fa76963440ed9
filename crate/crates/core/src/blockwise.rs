//! Blockwise estimation: rotate by `(1/√d)·H·D`, split the rotated space into
//! `k²` equal blocks, estimate each block privately, concatenate and rotate
//! back.
//!
//! `k` trades sample size for accuracy: each block sees a radius about `1/k`
//! of the original and lives in `d/k²` dimensions, at the price of `k²`-fold
//! composition.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{block_ledger, schedule_blocks, BudgetLedger, DEFAULT_RUN_CONSTANT};
use crate::amplify::{run_dp_estimate_2, AmplifyParams};
use crate::error::{DpError, Result};
use crate::geometry::{make_rotation, Point, PointSet, RotationPlan};
use crate::mechanism::{run_dp_estimate_1, EstimateOutcome, MechanismParams, DEFAULT_THRESHOLD_CONSTANT};
use crate::rng::{derive_seed, seeded};

/// Per-block engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "engine")]
pub enum Engine {
    /// One rejection-sampling run per block.
    Single,
    /// Median of `⌈run_constant·ln(1/α)⌉` runs per block.
    Amplified { run_constant: f64 },
}

impl Engine {
    pub fn amplified() -> Self {
        Engine::Amplified { run_constant: DEFAULT_RUN_CONSTANT }
    }
}

pub const DEFAULT_BLOCK_RADIUS_CONSTANT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseParams {
    /// Overall budget, failure probability and item radius `r`. Its tuning
    /// constants are reused for every block.
    pub base: MechanismParams,
    /// `c_b` in the per-block radius.
    pub block_radius_constant: f64,
    pub engine: Engine,
    /// Fixes `k` instead of choosing it from `n`; must be a power of two.
    pub k: Option<usize>,
}

impl BlockwiseParams {
    pub fn new(eps: f64, delta: f64, alpha: f64, radius: f64) -> Result<Self> {
        Ok(BlockwiseParams {
            base: MechanismParams::new(eps, delta, alpha, radius)?,
            block_radius_constant: DEFAULT_BLOCK_RADIUS_CONSTANT,
            engine: Engine::Single,
            k: None,
        })
    }
}

/// Split of the padded space and the per-block parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub k: usize,
    pub block_count: usize,
    pub block_dim: usize,
    pub d_pad: usize,
    pub eps_block: f64,
    pub delta_block: f64,
    pub alpha_block: f64,
    pub radius_block: f64,
}

/// `C·(k/ε)·ln(k/δ)·√ln(1/δ)`, the sample size that supports `k`.
pub fn k_requirement(k: usize, eps: f64, delta: f64, threshold_constant: f64) -> f64 {
    let k = k as f64;
    threshold_constant * k / eps * (k / delta).ln() * (1.0 / delta).ln().sqrt()
}

/// Largest power of two `k ≤ √d_pad` whose requirement `n` meets.
pub fn choose_k_with(n: usize, d: usize, eps: f64, delta: f64, threshold_constant: f64) -> Result<usize> {
    crate::mechanism::validate_budget(eps, delta)?;
    if d == 0 {
        return Err(DpError::invalid("dimension must be at least 1"));
    }
    let required = threshold_constant / eps * (1.0 / delta).ln();
    if (n as f64) < required {
        return Err(DpError::BelowThreshold { n, required });
    }
    let d_pad = d.next_power_of_two();
    let mut k = 1;
    while (2 * k) * (2 * k) <= d_pad && n as f64 >= k_requirement(2 * k, eps, delta, threshold_constant) {
        k *= 2;
    }
    Ok(k)
}

pub fn choose_k(n: usize, d: usize, eps: f64, delta: f64) -> Result<usize> {
    choose_k_with(n, d, eps, delta, DEFAULT_THRESHOLD_CONSTANT)
}

/// Builds the block plan for `n` points in dimension `d` and a fixed `k`.
pub fn plan_blocks(params: &BlockwiseParams, n: usize, d: usize, k: usize) -> Result<BlockPlan> {
    let d_pad = d.next_power_of_two();
    if !k.is_power_of_two() || k * k > d_pad {
        return Err(DpError::invalid(format!("k = {k} must be a power of two with k² <= {d_pad}")));
    }
    let b = &params.base;
    let per = schedule_blocks(b.eps, b.delta, k as u64)?;
    let block_count = k * k;
    let log_term = ((d_pad * n) as f64 / b.alpha).ln().max(1.0);
    Ok(BlockPlan {
        k,
        block_count,
        block_dim: d_pad / block_count,
        d_pad,
        eps_block: per.eps,
        delta_block: per.delta,
        alpha_block: b.alpha / block_count as f64,
        radius_block: params.block_radius_constant * b.radius * log_term.sqrt() / k as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseRun {
    pub outcome: EstimateOutcome,
    pub plan: BlockPlan,
    pub ledger: BudgetLedger,
    pub garbage_blocks: usize,
    /// Some block ran with fewer points than its accuracy threshold.
    pub below_threshold: bool,
    /// `n` was too small for the `k` rule and `k = 1` was used instead.
    pub k_fallback: bool,
}

pub fn run_interpolated<R: Rng + ?Sized>(points: &PointSet, params: &BlockwiseParams, rng: &mut R) -> Result<BlockwiseRun> {
    params.base.validate()?;
    if !(params.block_radius_constant > 0.0) || !params.block_radius_constant.is_finite() {
        return Err(DpError::invalid("block radius constant must be positive"));
    }
    // The rotation is fixed before any data is read.
    let rotation = make_rotation(points.dim(), rng.next_u64())?;
    let block_seed = rng.next_u64();
    let (n, d) = (points.len(), points.dim());
    let b = &params.base;
    let (k, k_fallback) = match params.k {
        Some(k) => (k, false),
        None => match choose_k_with(n, d, b.eps, b.delta, b.threshold_constant) {
            Ok(k) => (k, false),
            Err(DpError::BelowThreshold { .. }) => (1, true),
            Err(e) => return Err(e),
        },
    };
    let plan = plan_blocks(params, n, d, k)?;
    let ledger = block_ledger(b.eps, b.delta, k as u64)?;

    let mut block_params = b.clone();
    block_params.eps = plan.eps_block;
    block_params.delta = plan.delta_block;
    block_params.alpha = plan.alpha_block;
    block_params.radius = plan.radius_block;
    block_params.validate()?;

    let blocks = split_blocks(&rotate_all(&rotation, points), plan.d_pad, plan.block_dim)?;
    let outcomes: Vec<(EstimateOutcome, bool)> = blocks
        .par_iter()
        .enumerate()
        .map(|(s, block)| {
            let mut child = seeded(derive_seed(block_seed, s as u64, 0));
            match params.engine {
                Engine::Single => {
                    let run = run_dp_estimate_1(block, &block_params, &mut child)?;
                    Ok((run.outcome, run.below_threshold))
                }
                Engine::Amplified { run_constant } => {
                    let ap = AmplifyParams { base: block_params.clone(), run_constant };
                    let run = run_dp_estimate_2(block, &ap, &mut child)?;
                    Ok((run.outcome, run.below_threshold))
                }
            }
        })
        .collect::<Result<_>>()?;

    let garbage_blocks = outcomes.iter().filter(|(o, _)| o.is_garbage()).count();
    let below_threshold = outcomes.iter().any(|(_, w)| *w);
    let outcome = if garbage_blocks > 0 {
        EstimateOutcome::Garbage2
    } else {
        let mut joined = Vec::with_capacity(plan.d_pad);
        for (o, _) in &outcomes {
            joined.extend_from_slice(o.point().expect("non-garbage"));
        }
        EstimateOutcome::Accepted(rotation.unrotate(&Point::new(joined)?)?)
    };
    Ok(BlockwiseRun { outcome, plan, ledger, garbage_blocks, below_threshold, k_fallback })
}

pub fn dp_estimate_interpolated<R: Rng + ?Sized>(
    points: &[Point],
    params: &BlockwiseParams,
    rng: &mut R,
) -> Result<EstimateOutcome> {
    let set = PointSet::from_points(points)?;
    Ok(run_interpolated(&set, params, rng)?.outcome)
}

fn rotate_all(rotation: &RotationPlan, points: &PointSet) -> Vec<f64> {
    let d_pad = rotation.d_pad();
    let mut out = vec![0.0; points.len() * d_pad];
    out.par_chunks_mut(d_pad)
        .zip(points.as_flat().par_chunks(points.dim()))
        .for_each(|(o, x)| rotation.rotate_into(x, o));
    out
}

/// Column slices `[s·b, (s+1)·b)` of the row-major `n × d_pad` matrix.
pub fn split_blocks(rotated: &[f64], d_pad: usize, block_dim: usize) -> Result<Vec<PointSet>> {
    if block_dim == 0 || d_pad % block_dim != 0 || rotated.len() % d_pad != 0 {
        return Err(DpError::invalid(format!("cannot split width {d_pad} into blocks of {block_dim}")));
    }
    (0..d_pad / block_dim)
        .map(|s| {
            let cols = s * block_dim..(s + 1) * block_dim;
            let data = rotated.chunks_exact(d_pad).flat_map(|row| row[cols.clone()].iter().copied()).collect();
            PointSet::from_flat(data, block_dim)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;
    use crate::rng::seeded;

    #[test]
    fn choose_k_examples() {
        let (eps, delta): (f64, f64) = (0.5, 1e-6);
        let min = DEFAULT_THRESHOLD_CONSTANT / eps * (1.0 / delta).ln();
        assert_eq!(choose_k(min.ceil() as usize, 1024, eps, delta).unwrap(), 1);
        assert!(matches!(choose_k(min as usize - 1, 1024, eps, delta), Err(DpError::BelowThreshold { .. })));

        // Brute-force scan over powers of two.
        let scan = |n: usize, d: usize, c: f64| {
            let d_pad = (d as u64).next_power_of_two() as usize;
            (0..)
                .map(|j| 1usize << j)
                .take_while(|k| k * k <= d_pad)
                .filter(|&k| k == 1 || n as f64 >= k_requirement(k, eps, delta, c))
                .max()
                .unwrap()
        };
        assert_eq!(choose_k(2000, 1024, eps, delta).unwrap(), scan(2000, 1024, 12.0));
        assert_eq!(choose_k_with(2000, 1024, eps, delta, 1.0).unwrap(), scan(2000, 1024, 1.0));
        assert_eq!(choose_k_with(2000, 1024, eps, delta, 1.0).unwrap(), 16);
        for n in [400, 1000, 5000, 20_000, 100_000, 1_000_000] {
            for d in [1, 3, 64, 100, 1024] {
                assert_eq!(choose_k(n, d, eps, delta).unwrap(), scan(n, d, 12.0), "n={n} d={d}");
            }
        }
        // Top of the regime clamps at √d_pad.
        assert_eq!(choose_k(10_000_000, 64, eps, delta).unwrap(), 8);
        assert_eq!(choose_k(10_000_000, 100, eps, delta).unwrap(), 8);
        assert_eq!(choose_k(10_000_000, 128, eps, delta).unwrap(), 8);
    }

    #[test]
    fn plan_dimensions() {
        let p = BlockwiseParams::new(0.5, 1e-6, 0.1, 1.0).unwrap();
        let plan = plan_blocks(&p, 1000, 100, 4).unwrap();
        assert_eq!((plan.d_pad, plan.block_count, plan.block_dim), (128, 16, 8));
        assert!((plan.alpha_block - 0.1 / 16.0).abs() < 1e-15);
        assert!((plan.eps_block - 0.5 / (4.0 * 1e6f64.ln().sqrt())).abs() < 1e-12);
        assert!(plan_blocks(&p, 1000, 100, 3).is_err());
        assert!(plan_blocks(&p, 1000, 100, 16).is_err());
    }

    #[test]
    fn block_partition_is_exact() {
        let mut rng = seeded(1);
        let (n, d_pad) = (7, 16);
        let rotated: Vec<f64> = (0..n * d_pad).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in [1, 4, 16] {
            let blocks = split_blocks(&rotated, d_pad, b).unwrap();
            assert_eq!(blocks.len(), d_pad / b);
            for i in 0..n {
                let joined: Vec<f64> = blocks.iter().flat_map(|s| s.row(i).to_vec()).collect();
                assert_eq!(joined, rotated[i * d_pad..(i + 1) * d_pad]);
            }
        }
    }

    #[test]
    fn identical_points_recovered() {
        let d = 64;
        let x = Point::new((0..d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let data = vec![x.clone(); 4000];
        let params = BlockwiseParams::new(1.0 / 3.0, 1e-3, 0.1, 0.01).unwrap();
        let set = PointSet::from_points(&data).unwrap();
        let mut rng = seeded(2);
        for _ in 0..20 {
            let run = run_interpolated(&set, &params, &mut rng).unwrap();
            assert!(run.plan.k > 1);
            let p = run.outcome.point().expect("accepted");
            let err = crate::geometry::dist_sq(p, &x).sqrt();
            // Each block lands within its ball radius of the block center.
            assert!(err <= 2.0 * run.plan.radius_block * (d as f64).sqrt(), "{err}");
        }
    }

    #[test]
    fn garbage_block_poisons_result() {
        let data = vec![Point::zeros(16); 500];
        let mut params = BlockwiseParams::new(0.5, 1e-3, 0.1, 1.0).unwrap();
        params.k = Some(2);
        params.base.accept_constant = 0.0;
        params.base.garbage_accept = 0.0;
        params.base.max_rounds = Some(1);
        let set = PointSet::from_points(&data).unwrap();
        let run = run_interpolated(&set, &params, &mut seeded(3)).unwrap();
        assert_eq!(run.outcome, EstimateOutcome::Garbage2);
        assert_eq!(run.garbage_blocks, 4);
    }

    #[test]
    fn fallback_when_n_small() {
        let data = vec![Point::zeros(4); 10];
        let params = BlockwiseParams::new(0.5, 1e-3, 0.1, 1.0).unwrap();
        let set = PointSet::from_points(&data).unwrap();
        let run = run_interpolated(&set, &params, &mut seeded(4)).unwrap();
        assert!(run.k_fallback && run.plan.k == 1);
    }

    #[test]
    fn amplified_engine_runs() {
        let data = vec![Point::zeros(16); 12_000];
        let mut params = BlockwiseParams::new(1.0 / 3.0, 1e-3, 0.1, 0.1).unwrap();
        params.engine = Engine::amplified();
        params.k = Some(2);
        let set = PointSet::from_points(&data).unwrap();
        let run = run_interpolated(&set, &params, &mut seeded(5)).unwrap();
        let p = run.outcome.point().expect("accepted");
        assert!(norm(p) <= 2.0 * run.plan.radius_block * 4.0);
    }

    #[test]
    fn deterministic() {
        let data: Vec<Point> = (0..600).map(|i| Point::new(vec![(i % 5) as f64 * 0.01; 8]).unwrap()).collect();
        let params = BlockwiseParams::new(0.5, 1e-3, 0.1, 0.1).unwrap();
        let a = dp_estimate_interpolated(&data, &params, &mut seeded(6)).unwrap();
        let b = dp_estimate_interpolated(&data, &params, &mut seeded(6)).unwrap();
        assert_eq!(a, b);
    }
}
