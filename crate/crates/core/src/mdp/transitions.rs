use std::collections::BTreeMap;

use super::ActionId;
use crate::error::{Error, Result};
use crate::state::StateId;

/// Observed `(action, next state)` pairs keyed by source state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pub map: BTreeMap<StateId, Vec<(ActionId, StateId)>>,
}

impl TransitionCounts {
    /// Appends the observations of another, independent episode.
    pub fn merge(&mut self, other: &TransitionCounts) {
        for (s, pairs) in &other.map {
            self.map.entry(*s).or_default().extend_from_slice(pairs);
        }
    }

    /// `T(s, a, s') = #(a, s') / #(a)` within `STM[s]`.
    pub fn probabilities(&self) -> BTreeMap<(StateId, ActionId), Vec<(StateId, f64)>> {
        let mut out = BTreeMap::new();
        for (&s, pairs) in &self.map {
            let mut per_action: BTreeMap<ActionId, BTreeMap<StateId, usize>> = BTreeMap::new();
            for &(a, next) in pairs {
                *per_action.entry(a).or_default().entry(next).or_default() += 1;
            }
            for (a, nexts) in per_action {
                let total: usize = nexts.values().sum();
                let row = nexts.into_iter().map(|(n, c)| (n, c as f64 / total as f64)).collect();
                out.insert((s, a), row);
            }
        }
        out
    }

    pub fn to_model(&self, num_states: usize, num_actions: usize) -> Result<TransitionModel> {
        TransitionModel::from_rows(num_states, num_actions, self.probabilities())
    }
}

/// Builds the transition map from a state stream and the action stream that
/// connects it: action `a[i]` taken in `s[i]` led to `s[i + 1]`.
pub fn learn_transitions(s_stream: &[StateId], a_stream: &[ActionId]) -> Result<TransitionCounts> {
    if s_stream.is_empty() && a_stream.is_empty() {
        return Ok(TransitionCounts::default());
    }
    if a_stream.len() + 1 != s_stream.len() {
        return Err(Error::invalid(format!(
            "action stream must be one shorter than the state stream ({} vs {})",
            a_stream.len(),
            s_stream.len()
        )));
    }
    let mut counts = TransitionCounts::default();
    for (i, &a) in a_stream.iter().enumerate() {
        counts.map.entry(s_stream[i]).or_default().push((a, s_stream[i + 1]));
    }
    Ok(counts)
}

/// Sparse transition probabilities over observed `(s, a)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    num_states: usize,
    num_actions: usize,
    rows: BTreeMap<(StateId, ActionId), Vec<(StateId, f64)>>,
}

impl TransitionModel {
    pub fn from_rows(
        num_states: usize,
        num_actions: usize,
        rows: impl IntoIterator<Item = ((StateId, ActionId), Vec<(StateId, f64)>)>,
    ) -> Result<Self> {
        let rows: BTreeMap<_, _> = rows.into_iter().collect();
        for (&(s, a), row) in &rows {
            if s >= num_states || a >= num_actions || row.iter().any(|&(n, _)| n >= num_states) {
                return Err(Error::InvalidModel(format!("transition ({s}, {a}) references unknown ids")));
            }
        }
        Ok(Self { num_states, num_actions, rows })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn observed(&self) -> impl Iterator<Item = (&(StateId, ActionId), &Vec<(StateId, f64)>)> {
        self.rows.iter()
    }

    pub fn is_observed(&self, s: StateId, a: ActionId) -> bool {
        self.rows.contains_key(&(s, a))
    }

    /// Actions with at least one recorded transition out of `s`.
    pub fn observed_actions(&self, s: StateId) -> Vec<ActionId> {
        self.rows.range((s, 0)..(s + 1, 0)).map(|(&(_, a), _)| a).collect()
    }

    /// `T(s, a, .)`; an unobserved pair is a certain self-loop.
    pub fn row(&self, s: StateId, a: ActionId) -> Vec<(StateId, f64)> {
        self.rows.get(&(s, a)).cloned().unwrap_or_else(|| vec![(s, 1.0)])
    }

    pub fn prob(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.row(s, a).iter().filter(|&&(n, _)| n == next).map(|&(_, p)| p).sum()
    }

    pub fn dense_row(&self, s: StateId, a: ActionId) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for (n, p) in self.row(s, a) {
            out[n] += p;
        }
        out
    }

    /// Number of `(s, a)` pairs without observations, which planning treats
    /// as self-loops.
    pub fn unobserved_pairs(&self) -> usize {
        self.num_states * self.num_actions - self.rows.len()
    }
}
