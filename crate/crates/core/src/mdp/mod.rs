//! Decision making over learned states.
//!
//! The action space, transition model and reward are all estimated from
//! demonstration streams; the policy comes from value iteration on the
//! resulting model.

mod actions;
mod planning;
mod reward;
mod transitions;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use actions::{learn_actions, replay_actions};
pub use planning::{select_action, value_iteration, ActionChoice, Policy};
pub use reward::{demonstrated_policy, learn_reward, IrlConfig, RewardEstimate};
pub use transitions::{learn_transitions, TransitionCounts, TransitionModel};

use crate::error::{Error, Result};
use crate::state::StateId;

/// Dense action index in first-seen order.
pub type ActionId = usize;

/// Primitive robot motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomMovement {
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
}

impl AtomMovement {
    pub const ALL: [AtomMovement; 4] =
        [AtomMovement::Forward, AtomMovement::Backward, AtomMovement::TurnLeft, AtomMovement::TurnRight];

    /// Wire name, as used in demonstration files and the service protocol.
    pub fn as_str(self) -> &'static str {
        match self {
            AtomMovement::Forward => "forward",
            AtomMovement::Backward => "backward",
            AtomMovement::TurnLeft => "turn_left",
            AtomMovement::TurnRight => "turn_right",
        }
    }
}

impl fmt::Display for AtomMovement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AtomMovement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AtomMovement::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown atom movement {s:?}")))
    }
}

/// A fixed-length sequence of atom movements.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub id: ActionId,
    pub atoms: Vec<AtomMovement>,
}

/// Learned `(S, A, T, R, gamma)`.
///
/// States are the dense ids `0..num_states` of the learned state space.
/// `reward[s][a]` is the immediate reward; unobserved `(s, a)` pairs are
/// self-loops in [`TransitionModel::row`].
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    pub num_states: usize,
    pub actions: Vec<Action>,
    pub transitions: TransitionModel,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl MdpModel {
    /// A model with zero reward.
    pub fn new(num_states: usize, actions: Vec<Action>, transitions: TransitionModel, gamma: f64) -> Result<Self> {
        let reward = vec![vec![0.0; actions.len()]; num_states];
        let model = Self { num_states, actions, transitions, reward, gamma };
        model.validate()?;
        Ok(model)
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Lifts a per-state reward to `R(s, a) = R(s)`.
    pub fn set_state_reward(&mut self, state_reward: &[f64]) -> Result<()> {
        if state_reward.len() != self.num_states {
            return Err(Error::invalid("reward length differs from the number of states"));
        }
        self.reward = state_reward.iter().map(|&r| vec![r; self.actions.len()]).collect();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.transitions.num_states() != self.num_states
            || self.transitions.num_actions() != self.actions.len()
        {
            return Err(Error::InvalidModel("transition model dimensions disagree".into()));
        }
        if self.reward.len() != self.num_states || self.reward.iter().any(|r| r.len() != self.actions.len()) {
            return Err(Error::InvalidModel("reward table dimensions disagree".into()));
        }
        if let Some(((s, a), _)) = self.transitions.observed().find(|(_, row)| {
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            (total - 1.0).abs() > 1e-9 || row.iter().any(|&(_, p)| p < 0.0)
        }) {
            return Err(Error::InvalidModel(format!("T({s}, {a}, .) is not a distribution")));
        }
        Ok(())
    }

    /// Next-state distribution of `(s, a)`.
    pub fn row(&self, s: StateId, a: ActionId) -> Vec<(StateId, f64)> {
        self.transitions.row(s, a)
    }
}
