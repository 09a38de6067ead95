use std::collections::HashMap;

use super::{Action, ActionId, AtomMovement};

/// Splits the kinematic stream into non-overlapping windows of `l` atoms.
///
/// Distinct windows form the action space, numbered in first-seen order; the
/// returned action stream holds one id per window. A trailing partial window
/// is dropped.
pub fn learn_actions(k_stream: &[AtomMovement], l: usize) -> (Vec<Action>, Vec<ActionId>) {
    assert!(l >= 1, "action length must be at least 1");
    let mut actions: Vec<Action> = Vec::new();
    let mut index: HashMap<&[AtomMovement], ActionId> = HashMap::new();
    let mut a_stream = Vec::with_capacity(k_stream.len() / l);
    for window in k_stream.chunks_exact(l) {
        let id = *index.entry(window).or_insert_with(|| {
            actions.push(Action { id: actions.len(), atoms: window.to_vec() });
            actions.len() - 1
        });
        a_stream.push(id);
    }
    (actions, a_stream)
}

/// Expands an action stream back into atoms.
pub fn replay_actions(actions: &[Action], a_stream: &[ActionId]) -> Vec<AtomMovement> {
    a_stream.iter().flat_map(|&id| actions[id].atoms.iter().copied()).collect()
}
