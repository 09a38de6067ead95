use std::collections::BTreeMap;

use super::{Action, ActionId, MdpModel};
use crate::error::{Error, Result};
use crate::state::StateId;

const MAX_SWEEPS: usize = 1_000_000;

/// Greedy policy with the value function it was extracted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// Defined on every state with at least one observed action.
    pub actions: BTreeMap<StateId, ActionId>,
    /// `V(s)` for every state.
    pub values: Vec<f64>,
    pub sweeps: usize,
}

impl Policy {
    pub fn get(&self, s: StateId) -> Option<ActionId> {
        self.actions.get(&s).copied()
    }
}

fn q_value(mdp: &MdpModel, values: &[f64], s: StateId, a: ActionId) -> f64 {
    let future: f64 = mdp.row(s, a).iter().map(|&(n, p)| p * values[n]).sum();
    mdp.reward[s][a] + mdp.gamma * future
}

/// Bellman optimality iteration until the sup-norm change drops below `tol`.
///
/// Every action is a candidate in every state; pairs without observations
/// act as self-loops. Ties prefer observed actions, then the lowest id.
pub fn value_iteration(mdp: &MdpModel, tol: f64) -> Result<Policy> {
    mdp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = mdp.num_states;
    let num_actions = mdp.num_actions();
    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    if num_actions > 0 {
        loop {
            sweeps += 1;
            let next: Vec<f64> = (0..n)
                .map(|s| (0..num_actions).map(|a| q_value(mdp, &values, s, a)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let delta = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            values = next;
            if delta < tol {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(Error::InvalidModel(format!(
                    "value iteration did not converge in {MAX_SWEEPS} sweeps (gamma = {})",
                    mdp.gamma
                )));
            }
        }
    }

    let mut actions = BTreeMap::new();
    for s in 0..n {
        if mdp.transitions.observed_actions(s).is_empty() {
            continue;
        }
        let qs: Vec<f64> = (0..num_actions).map(|a| q_value(mdp, &values, s, a)).collect();
        let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * best.abs().max(1.0);
        let ties = (0..num_actions).filter(|&a| qs[a] >= best - slack);
        let choice = ties
            .min_by_key(|&a| (!mdp.transitions.is_observed(s, a), a))
            .expect("at least one action");
        actions.insert(s, choice);
    }
    Ok(Policy { actions, values, sweeps })
}

/// Result of [`select_action`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub action: ActionId,
    /// Set when the requested state was outside the policy domain and the
    /// action of this nearby state was used instead.
    pub fallback_from: Option<StateId>,
}

/// Looks up the action for `s`.
///
/// When `s` has no policy entry and `masses` (group masses of the window
/// that produced `s`) is given, the known state with the largest mass is
/// used instead. Without masses an unknown state is an error.
pub fn select_action(
    policy: &Policy,
    actions: &[Action],
    s: StateId,
    masses: Option<&[f64]>,
) -> Result<ActionChoice> {
    let choice = match (policy.get(s), masses) {
        (Some(a), _) => ActionChoice { action: a, fallback_from: None },
        (None, Some(masses)) => {
            let nearest = policy
                .actions
                .keys()
                .copied()
                .filter(|&k| k < masses.len())
                .fold(None::<StateId>, |best, k| match best {
                    Some(b) if masses[b] >= masses[k] => Some(b),
                    _ => Some(k),
                })
                .ok_or(Error::UnknownState(s))?;
            log::debug!("state {s} has no policy entry, using state {nearest}");
            ActionChoice { action: policy.actions[&nearest], fallback_from: Some(nearest) }
        }
        (None, None) => return Err(Error::UnknownState(s)),
    };
    if choice.action >= actions.len() {
        return Err(Error::InvalidModel(format!("policy refers to unknown action {}", choice.action)));
    }
    Ok(choice)
}
