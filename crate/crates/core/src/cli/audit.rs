//! Monte Carlo privacy audit on neighbouring one-dimensional datasets.
//!
//! For a pair `(D, D')` differing in one point, the single-round acceptance
//! probabilities must satisfy `e^{−ε}q − δ/N ≤ q' ≤ e^{ε}q + δ/N`, and the
//! privacy argument for the retry loop assumes `q, q' ≤ 1/2`. Both are
//! checked with a `3σ` allowance, where `σ` is the standard error of
//! `q − q'`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::PointSet;
use crate::mechanism::{
    estimate_accept_prob_set, garbage2_probability, run_dp_estimate_1, EstimateOutcome, MechanismParams,
};
use crate::rng::{derive_seed, seeded};
use crate::VERSION;

/// Below this many trials the report carries the insufficient-trials flag.
pub const MIN_AUDIT_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFamily {
    pub name: String,
    pub params: MechanismParams,
    pub dataset: PointSet,
    pub neighbor: PointSet,
}

fn line(xs: Vec<f64>) -> PointSet {
    PointSet::from_flat(xs, 1).expect("finite audit points")
}

/// Family A moves one of 40 coincident points far away (ε = 0.5, δ = 0.01).
/// Family B has 134 of 200 points coincident, just above `2n/3`, and moves
/// one of them out (ε = 0.05, δ = 0.01). Both use α = 0.1 and r = 1.
pub fn builtin_families(accept_constant: f64) -> Vec<AuditFamily> {
    let mut a = MechanismParams::new(0.5, 0.01, 0.1, 1.0).expect("valid family parameters");
    a.accept_constant = accept_constant;
    let mut b = MechanismParams::new(0.05, 0.01, 0.1, 1.0).expect("valid family parameters");
    b.accept_constant = accept_constant;

    let a_data = vec![0.0; 40];
    let mut a_nb = a_data.clone();
    a_nb[0] = 100.0;

    let b_data: Vec<f64> = (0..200).map(|i| if i < 134 { 0.0 } else { 10.0 * (i - 133) as f64 }).collect();
    let mut b_nb = b_data.clone();
    b_nb[0] = -100.0;

    vec![
        AuditFamily { name: "A".into(), params: a, dataset: line(a_data), neighbor: line(a_nb) },
        AuditFamily { name: "B".into(), params: b, dataset: line(b_data), neighbor: line(b_nb) },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    pub name: String,
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub accept_constant: f64,
    pub trials: u64,
    pub q: f64,
    pub q_se: f64,
    pub q_prime: f64,
    pub q_prime_se: f64,
    /// `N`, the mean retry count.
    pub retry_budget: u64,
    pub lower: f64,
    pub upper: f64,
    pub ratio_pass: bool,
    /// `q` and `q'` are at most `1/2` within `3σ`.
    pub premise_pass: bool,
    pub pass: bool,
    /// Empirical rate of the second garbage bucket on `D`.
    pub g2_rate: f64,
    pub g2_se: f64,
    /// `(1 − q)/((N − 1)q + 1)` at the measured `q`.
    pub g2_closed_form: f64,
}

pub fn audit_pair<R: Rng + ?Sized>(
    name: &str,
    dataset: &PointSet,
    neighbor: &PointSet,
    params: &MechanismParams,
    trials: u64,
    rng: &mut R,
) -> Result<PairAudit> {
    let n = dataset.len();
    let a = estimate_accept_prob_set(dataset, params, trials, rng)?;
    let b = estimate_accept_prob_set(neighbor, params, trials, rng)?;
    let big_n = params.retry_budget(n);
    let sigma = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
    let slack = params.delta / big_n as f64 + 3.0 * sigma;
    let lower = (-params.eps).exp() * a.q - slack;
    let upper = params.eps.exp() * a.q + slack;
    let ratio_pass = lower <= b.q && b.q <= upper;
    let premise_pass = a.q <= 0.5 + 3.0 * a.std_err && b.q <= 0.5 + 3.0 * b.std_err;

    let mut g2 = 0u64;
    for _ in 0..trials {
        if run_dp_estimate_1(dataset, params, rng)?.outcome == EstimateOutcome::Garbage2 {
            g2 += 1;
        }
    }
    let g2_rate = g2 as f64 / trials as f64;
    Ok(PairAudit {
        name: name.to_string(),
        n,
        eps: params.eps,
        delta: params.delta,
        alpha: params.alpha,
        accept_constant: params.accept_constant,
        trials,
        q: a.q,
        q_se: a.std_err,
        q_prime: b.q,
        q_prime_se: b.std_err,
        retry_budget: big_n,
        lower,
        upper,
        ratio_pass,
        premise_pass,
        pass: ratio_pass && premise_pass,
        g2_rate,
        g2_se: (g2_rate * (1.0 - g2_rate) / trials as f64).sqrt(),
        g2_closed_form: garbage2_probability(a.q, big_n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub version: String,
    pub seed: u64,
    pub trials: u64,
    pub insufficient_trials: bool,
    pub families: Vec<PairAudit>,
    pub pass: bool,
}

/// Audits every built-in family; family `j` uses its own derived seed.
pub fn run_audit(trials: u64, seed: u64, accept_constant: f64) -> Result<AuditReport> {
    let families = builtin_families(accept_constant)
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let mut rng = seeded(derive_seed(seed, j as u64, 0));
            audit_pair(&f.name, &f.dataset, &f.neighbor, &f.params, trials, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditReport {
        version: VERSION.to_string(),
        seed,
        trials,
        insufficient_trials: trials < MIN_AUDIT_TRIALS,
        pass: families.iter().all(|f| f.pass),
        families,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_passes() {
        let fam = &builtin_families(1.0 / 3.0)[0];
        let r = audit_pair("same", &fam.dataset, &fam.dataset, &fam.params, 20_000, &mut seeded(1)).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.q - r.q_prime).abs() <= 3.0 * (r.q_se.powi(2) + r.q_prime_se.powi(2)).sqrt());
    }

    #[test]
    fn insufficient_trials_flag() {
        let rep = run_audit(2_000, 3, 1.0 / 3.0).unwrap();
        assert!(rep.insufficient_trials);
        assert_eq!(rep.families.len(), 2);
    }
}
