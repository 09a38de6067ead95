//! Reward recovery by finite-state linear-programming inverse RL.
//!
//! With the demonstrated policy `pi` and its transition matrix `P_pi`, the
//! value of a state reward `R` is `V = (I - gamma P_pi)^-1 R`. The expert's
//! choice in state `s` is optimal iff `(P_pi(s) - P_a(s)) V >= 0` for every
//! alternative action `a`. Among all such rewards with `|R| <= r_max` the LP
//! picks the one maximizing
//!
//! ```text
//! sum_s min_a (P_pi(s) - P_a(s)) V  -  l1_penalty * ||R||_1
//! ```
//!
//! and a second LP keeps that optimum while minimizing `||R||_1`, so ties go
//! to the sparsest reward.

use std::collections::{BTreeMap, BTreeSet};

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ActionId, TransitionModel};
use crate::error::{Error, Result};
use crate::state::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlConfig {
    pub gamma: f64,
    pub r_max: f64,
    pub l1_penalty: f64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self { gamma: 0.9, r_max: 1.0, l1_penalty: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimate {
    /// `R(s)`, lifted by the caller to `R(s, a) = R(s)`.
    pub state_reward: Vec<f64>,
    /// No constraint could discriminate between rewards; `state_reward` is zero.
    pub degenerate: bool,
    /// Number of optimality constraints in the LP.
    pub constraints: usize,
}

/// Majority action per state over `(state, action)` observations; ties go
/// to the lowest action id.
pub fn demonstrated_policy(pairs: impl IntoIterator<Item = (StateId, ActionId)>) -> BTreeMap<StateId, ActionId> {
    let mut votes: BTreeMap<StateId, BTreeMap<ActionId, usize>> = BTreeMap::new();
    for (s, a) in pairs {
        *votes.entry(s).or_default().entry(a).or_default() += 1;
    }
    votes
        .into_iter()
        .map(|(s, counts)| {
            let best = counts
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(&a, _)| a)
                .expect("non-empty vote");
            (s, best)
        })
        .collect()
}

/// Recovers a state reward under which `expert` is optimal.
///
/// States in `end_states`, and states with no demonstrated action, are
/// absorbing under the expert policy and contribute no constraints.
pub fn learn_reward(
    transitions: &TransitionModel,
    expert: &BTreeMap<StateId, ActionId>,
    end_states: &BTreeSet<StateId>,
    cfg: &IrlConfig,
) -> Result<RewardEstimate> {
    let n = transitions.num_states();
    let num_actions = transitions.num_actions();
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid("reward learning needs gamma in [0, 1)"));
    }
    if !(cfg.r_max > 0.0) || !(cfg.l1_penalty >= 0.0) {
        return Err(Error::invalid("r_max must be positive and l1_penalty nonnegative"));
    }
    let degenerate = |constraints| RewardEstimate { state_reward: vec![0.0; n], degenerate: true, constraints };
    if n <= 1 {
        return Ok(degenerate(0));
    }

    let acting: BTreeMap<StateId, ActionId> = expert
        .iter()
        .filter(|(s, _)| !end_states.contains(s))
        .map(|(&s, &a)| (s, a))
        .collect();

    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..n {
        match acting.get(&s) {
            Some(&a) => {
                for (next, p) in transitions.row(s, a) {
                    p_pi[(s, next)] += p;
                }
            }
            None => p_pi[(s, s)] = 1.0,
        }
    }
    let system = DMatrix::identity(n, n) - p_pi.scale(cfg.gamma);
    let value_map = system
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Lp("I - gamma P_pi is singular".into()))?;

    // One row per (state, alternative action): (P_pi(s) - P_a(s)) (I - gamma P_pi)^-1.
    let mut rows: Vec<(StateId, Vec<f64>)> = Vec::new();
    for (&s, &demo) in &acting {
        for a in (0..num_actions).filter(|&a| a != demo) {
            let mut diff = p_pi.row(s).clone_owned();
            for (next, p) in transitions.row(s, a) {
                diff[next] -= p;
            }
            if diff.iter().all(|d| d.abs() < 1e-12) {
                continue;
            }
            let coeffs = diff * &value_map;
            rows.push((s, coeffs.iter().copied().collect()));
        }
    }
    if rows.is_empty() {
        return Ok(degenerate(0));
    }

    let build = |direction, reward_obj: f64, margin_obj: f64, penalty_obj: f64| {
        let mut lp = Problem::new(direction);
        let r: Vec<_> = (0..n).map(|_| lp.add_var(reward_obj, (-cfg.r_max, cfg.r_max))).collect();
        let u: Vec<_> = (0..n).map(|_| lp.add_var(penalty_obj, (0.0, cfg.r_max))).collect();
        let constrained: BTreeSet<StateId> = rows.iter().map(|(s, _)| *s).collect();
        let t: BTreeMap<StateId, _> = constrained
            .iter()
            .map(|&s| (s, lp.add_var(margin_obj, (f64::NEG_INFINITY, f64::INFINITY))))
            .collect();
        for (s, coeffs) in &rows {
            let terms: Vec<_> = r.iter().copied().zip(coeffs.iter().copied()).collect();
            lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, 0.0);
            let mut with_margin = terms;
            with_margin.push((t[s], -1.0));
            lp.add_constraint(with_margin.as_slice(), ComparisonOp::Ge, 0.0);
        }
        for i in 0..n {
            lp.add_constraint([(u[i], 1.0), (r[i], -1.0)], ComparisonOp::Ge, 0.0);
            lp.add_constraint([(u[i], 1.0), (r[i], 1.0)], ComparisonOp::Ge, 0.0);
        }
        (lp, r, u, t)
    };

    let (lp, _, _, _) = build(OptimizationDirection::Maximize, 0.0, 1.0, -cfg.l1_penalty);
    let best = lp.solve().map_err(|e| Error::Lp(e.to_string()))?.objective();

    // Second stage: stay at the optimum, minimize ||R||_1.
    let (mut lp, r, u, t) = build(OptimizationDirection::Minimize, 0.0, 0.0, 1.0);
    let mut primary: Vec<_> = t.values().map(|&v| (v, 1.0)).collect();
    primary.extend(u.iter().map(|&v| (v, -cfg.l1_penalty)));
    let slack = 1e-10 * best.abs().max(cfg.r_max);
    lp.add_constraint(primary.as_slice(), ComparisonOp::Ge, best - slack);
    let solution = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;

    let state_reward = r
        .iter()
        .map(|&v| {
            let x = solution[v];
            if x.abs() < 1e-12 * cfg.r_max {
                0.0
            } else {
                x
            }
        })
        .collect();
    Ok(RewardEstimate { state_reward, degenerate: false, constraints: rows.len() })
}
