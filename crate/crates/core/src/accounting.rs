//! Privacy-budget arithmetic: weak and strong composition and the sub-budget
//! schedules used by the amplified, blockwise and SGD estimators.
//!
//! Every sub-budget formula in the crate is defined here. Logarithms are
//! natural.

use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::mechanism::validate_budget;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub eps: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(DpError::invalid(format!("eps must be finite and >= 0, got {eps}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(DpError::invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(PrivacyBudget { eps, delta })
    }

    /// True if `self ≤ slack·other` component-wise.
    pub fn within(&self, other: &PrivacyBudget, slack: f64) -> bool {
        self.eps <= slack * other.eps && self.delta <= slack * other.delta
    }
}

pub fn weak_compose(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    if budgets.is_empty() {
        return Err(DpError::EmptyInput("budgets"));
    }
    Ok(PrivacyBudget {
        eps: budgets.iter().map(|b| b.eps).sum(),
        delta: budgets.iter().map(|b| b.delta).sum(),
    })
}

/// `(√(2k ln(1/δ'))·ε + kε(e^ε − 1), kδ + δ')`.
pub fn strong_compose(eps: f64, delta: f64, k: u64, delta_prime: f64) -> Result<PrivacyBudget> {
    if k == 0 {
        return Err(DpError::invalid("composition count must be at least 1"));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(DpError::invalid(format!("delta_prime must lie in (0, 1), got {delta_prime}")));
    }
    if !(eps >= 0.0) || !eps.is_finite() || !(delta >= 0.0) {
        return Err(DpError::invalid("per-step budget must be finite and non-negative"));
    }
    let k = k as f64;
    Ok(PrivacyBudget {
        eps: (2.0 * k * (1.0 / delta_prime).ln()).sqrt() * eps + k * eps * eps.exp_m1(),
        delta: k * delta + delta_prime,
    })
}

/// Largest per-step `ε` whose `k`-fold strong composition stays within `target`.
pub fn max_step_eps(target: f64, k: u64, delta_prime: f64) -> Result<f64> {
    let total = |e: f64| strong_compose(e, 0.0, k, delta_prime).map(|b| b.eps);
    let (mut lo, mut hi) = (0.0, target);
    if total(hi)? <= target {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// How per-call budgets combine into the reported total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// A single call; no composition.
    Identity,
    Weak,
    Strong,
}

/// Post-hoc record of what a mechanism spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub per_call: PrivacyBudget,
    pub calls: u64,
    pub composition: Composition,
    /// The `δ'` term of strong composition, zero otherwise.
    pub slack_delta: f64,
    pub total: PrivacyBudget,
}

impl BudgetLedger {
    pub fn identity(b: PrivacyBudget) -> Self {
        BudgetLedger { per_call: b, calls: 1, composition: Composition::Identity, slack_delta: 0.0, total: b }
    }

    pub fn strong(per_call: PrivacyBudget, calls: u64, slack_delta: f64) -> Result<Self> {
        let total = strong_compose(per_call.eps, per_call.delta, calls, slack_delta)?;
        Ok(BudgetLedger { per_call, calls, composition: Composition::Strong, slack_delta, total })
    }

    pub fn weak(per_call: PrivacyBudget, calls: u64) -> Self {
        let c = calls as f64;
        let total = PrivacyBudget { eps: c * per_call.eps, delta: c * per_call.delta };
        BudgetLedger { per_call, calls, composition: Composition::Weak, slack_delta: 0.0, total }
    }

    pub fn within(&self, budget: &PrivacyBudget, slack: f64) -> bool {
        self.total.within(budget, slack)
    }
}

pub const DEFAULT_RUN_CONSTANT: f64 = 18.0;

/// Per-run budget from the amplification formula with unit constants:
/// `ε/min(L_α, √(L_α·L_δ))` and `δ/L_α` where `L_x = ln(1/x)`.
pub fn sub_budget(eps: f64, delta: f64, alpha: f64) -> Result<PrivacyBudget> {
    validate_budget(eps, delta)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DpError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (la, ld) = ((1.0 / alpha).ln(), (1.0 / delta).ln());
    // The formula is a reduction; near α → 1 it would inflate the budget.
    let div = la.min((la * ld).sqrt()).max(1.0);
    Ok(PrivacyBudget { eps: eps / div, delta: delta / la.max(1.0) })
}

/// `⌈c_k·ln(1/α)⌉`, at least 1.
pub fn amplify_runs(alpha: f64, run_constant: f64) -> u64 {
    ((run_constant * (1.0 / alpha).ln()).ceil() as u64).max(1)
}

/// Budget plan for the amplified estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifySchedule {
    pub per_run: PrivacyBudget,
    pub runs: u64,
    pub ledger: BudgetLedger,
}

/// Per-run budgets for `k_runs` amplification runs.
///
/// Starts from [`sub_budget`] and shrinks it until the strong composition of
/// all runs, with slack `δ/2`, fits inside `(eps, delta)`.
pub fn schedule_amplify(eps: f64, delta: f64, alpha: f64, run_constant: f64) -> Result<AmplifySchedule> {
    let base = sub_budget(eps, delta, alpha)?;
    if !(run_constant > 0.0) || !run_constant.is_finite() {
        return Err(DpError::invalid("run constant must be positive"));
    }
    let runs = amplify_runs(alpha, run_constant);
    if runs == 1 {
        let per_run = PrivacyBudget { eps, delta };
        return Ok(AmplifySchedule { per_run, runs, ledger: BudgetLedger::identity(per_run) });
    }
    let slack = delta / 2.0;
    let run_delta = base.delta.min(delta / (2.0 * runs as f64));
    let run_eps = base.eps.min(max_step_eps(eps, runs, slack)?);
    let per_run = PrivacyBudget { eps: run_eps, delta: run_delta };
    let ledger = BudgetLedger::strong(per_run, runs, slack)?;
    Ok(AmplifySchedule { per_run, runs, ledger })
}

/// Per-block budget `(ε/(k√ln(1/δ)), δ/k²)`; `k = 1` leaves the budget unchanged.
pub fn schedule_blocks(eps: f64, delta: f64, k: u64) -> Result<PrivacyBudget> {
    validate_budget(eps, delta)?;
    if k == 0 {
        return Err(DpError::invalid("k must be at least 1"));
    }
    if k == 1 {
        return Ok(PrivacyBudget { eps, delta });
    }
    let kf = k as f64;
    Ok(PrivacyBudget { eps: eps / (kf * (1.0 / delta).ln().sqrt()), delta: delta / (kf * kf) })
}

/// Ledger for `k²` blocks: identity when `k = 1`, strong composition with
/// slack `δ` otherwise.
pub fn block_ledger(eps: f64, delta: f64, k: u64) -> Result<BudgetLedger> {
    let per = schedule_blocks(eps, delta, k)?;
    if k == 1 {
        return Ok(BudgetLedger::identity(per));
    }
    BudgetLedger::strong(per, k * k, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(eps: f64, delta: f64) -> PrivacyBudget {
        PrivacyBudget::new(eps, delta).unwrap()
    }

    #[test]
    fn weak_examples() {
        assert_eq!(weak_compose(&[b(0.0, 0.0); 3]).unwrap(), b(0.0, 0.0));
        let s = weak_compose(&[b(0.1, 0.001), b(0.2, 0.002)]).unwrap();
        assert!((s.eps - 0.3).abs() < 1e-15 && (s.delta - 0.003).abs() < 1e-15);
        assert_eq!(weak_compose(&[b(0.4, 0.01)]).unwrap(), b(0.4, 0.01));
        assert!(weak_compose(&[]).is_err());
    }

    #[test]
    fn strong_examples() {
        let s = strong_compose(0.1, 0.001, 4, 0.001).unwrap();
        let oracle = (8.0 * 1000f64.ln()).sqrt() * 0.1 + 0.4 * (0.1f64.exp() - 1.0);
        assert!((s.eps - oracle).abs() < 1e-12);
        assert!((s.eps - 0.785_452_805).abs() < 1e-6);
        assert!((s.delta - 0.005).abs() < 1e-15);
        let z = strong_compose(0.0, 0.01, 5, 0.001).unwrap();
        assert_eq!(z.eps, 0.0);
        assert!((z.delta - 0.051).abs() < 1e-15);
        assert!(strong_compose(0.1, 0.0, 3, 0.0).is_err());
        assert!(strong_compose(0.1, 0.0, 0, 0.1).is_err());
        let one = strong_compose(0.2, 0.0, 1, 1e-9).unwrap();
        assert!((one.eps - ((2.0 * 1e9f64.ln()).sqrt() * 0.2 + 0.2 * 0.2f64.exp_m1())).abs() < 1e-12);
    }

    #[test]
    fn strong_beats_weak_in_advantage_regime() {
        let s = strong_compose(0.01, 0.0, 100, 1e-6).unwrap();
        assert!(s.eps < 100.0 * 0.01);
    }

    #[test]
    fn sub_budget_examples() {
        let s = sub_budget(0.5, 1e-6, 0.01).unwrap();
        assert!((s.eps - 0.5 / 100f64.ln()).abs() < 1e-12);
        assert!((s.eps - 0.1086).abs() < 1e-4);
        assert!((s.delta - 2.17e-7).abs() < 1e-9);
        let s = sub_budget(0.3, 0.05, 0.05).unwrap();
        assert!((s.eps - 0.3 / 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn block_examples() {
        assert_eq!(schedule_blocks(0.5, 1e-6, 1).unwrap(), b(0.5, 1e-6));
        let s = schedule_blocks(0.5, 1e-6, 4).unwrap();
        assert!((s.eps - 0.0336).abs() < 1e-4);
        assert!((s.delta - 1e-6 / 16.0).abs() < 1e-20);
        assert_eq!(block_ledger(0.5, 1e-6, 1).unwrap().total, b(0.5, 1e-6));
    }

    #[test]
    fn max_step_inverts_composition() {
        let e = max_step_eps(0.5, 40, 1e-4).unwrap();
        let t = strong_compose(e, 0.0, 40, 1e-4).unwrap().eps;
        assert!(t <= 0.5 && t > 0.5 * (1.0 - 1e-9));
    }

    const EPS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];
    const DELTA: [f64; 5] = [1e-9, 1e-6, 1e-4, 1e-3, 0.01];

    #[test]
    fn block_schedule_round_trip_grid() {
        for eps in EPS {
            for delta in DELTA {
                for k in [1u64, 2, 4, 8, 16] {
                    let l = block_ledger(eps, delta, k).unwrap();
                    assert!(l.within(&b(eps, delta), 4.0), "eps={eps} delta={delta} k={k}: {l:?}");
                }
            }
        }
    }

    #[test]
    fn amplify_schedule_grid() {
        for eps in EPS {
            for delta in DELTA {
                for alpha in [0.01, 0.05, 0.1, 0.2, 1.0 / 3.0] {
                    let s = schedule_amplify(eps, delta, alpha, DEFAULT_RUN_CONSTANT).unwrap();
                    assert!(s.ledger.within(&b(eps, delta), 1.05), "{eps} {delta} {alpha}: {s:?}");
                    assert!(s.per_run.eps > 0.0 && s.per_run.delta > 0.0);
                    let f = sub_budget(eps, delta, alpha).unwrap();
                    assert!(s.per_run.eps <= f.eps && s.per_run.delta <= f.delta);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn strong_monotone(
            eps in 0.0f64..2.0, de in 0.0f64..1.0,
            delta in 0.0f64..0.01, dd in 0.0f64..0.01,
            k in 1u64..200, dk in 0u64..50,
            dp in 1e-9f64..0.5,
        ) {
            let base = strong_compose(eps, delta, k, dp).unwrap();
            let e2 = strong_compose(eps + de, delta, k, dp).unwrap();
            let d2 = strong_compose(eps, delta + dd, k, dp).unwrap();
            let k2 = strong_compose(eps, delta, k + dk, dp).unwrap();
            prop_assert!(e2.eps >= base.eps && e2.delta == base.delta);
            prop_assert!(d2.delta >= base.delta && d2.eps == base.eps);
            prop_assert!(k2.eps >= base.eps && k2.delta >= base.delta);
            // A larger δ' lowers ε only through the log term.
            let p2 = strong_compose(eps, delta, k, (dp * 1.5).min(0.99)).unwrap();
            prop_assert!(p2.eps <= base.eps);
        }

        #[test]
        fn weak_singleton_identity(eps in 0.0f64..10.0, delta in 0.0f64..0.99) {
            prop_assert_eq!(weak_compose(&[b(eps, delta)]).unwrap(), b(eps, delta));
        }

        #[test]
        fn amplify_schedule_within_budget(
            eps in 0.01f64..1.0, log_delta in -12.0f64..-2.0, alpha in 0.001f64..0.34,
        ) {
            let delta = 10f64.powf(log_delta);
            prop_assume!(eps >= delta);
            let s = schedule_amplify(eps, delta, alpha, DEFAULT_RUN_CONSTANT).unwrap();
            prop_assert!(s.ledger.within(&b(eps, delta), 1.05));
        }
    }
}
