//! Training: demonstrations in, executable model out.
//!
//! Every demonstration is an independent episode. Its frames are cut into
//! observation windows aligned with its actions:
//!
//! - a bootstrap window of `l` copies of the start frame (what the robot
//!   sees while it waits for its first decision), then
//! - window `j` = the `l` frames observed while executing action `j`.
//!
//! The state of the bootstrap window is followed by action 0, the state of
//! window `j` by action `j + 1`. Trailing atoms that do not fill an action
//! are dropped. States are learned online over all windows of all demos;
//! afterwards every window is re-identified against the final template
//! database, so transitions are counted on one consistent labelling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::demo::Demonstration;
use crate::error::{Error, Result};
use crate::features::{encode, FeatureVector, Frame, ModalityConfig};
use crate::mdp::{
    demonstrated_policy, learn_actions, learn_reward, learn_transitions, select_action, value_iteration, Action,
    ActionChoice, ActionId, AtomMovement, IrlConfig, MdpModel, Policy, TransitionCounts,
};
use crate::sim::Controller;
use crate::state::{argmax, window_from_features, MatchConfig, StateId, StateSpace};

/// Value iteration stopping tolerance used by [`train`].
pub const VALUE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Observations per window and atoms per action.
    pub seq_len: usize,
    pub modality: ModalityConfig,
    pub matching: MatchConfig,
    pub irl: IrlConfig,
}

impl TrainConfig {
    pub fn for_seq_len(seq_len: usize) -> Self {
        Self {
            seq_len,
            modality: ModalityConfig::default(),
            matching: MatchConfig::for_seq_len(seq_len),
            irl: IrlConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::invalid("sequence length must be at least 1"));
        }
        self.modality.validate()?;
        self.matching.validate()
    }
}

/// Everything needed to identify states and act.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub space: StateSpace,
    pub mdp: MdpModel,
    pub policy: Policy,
    /// Learned `R(s)`; `mdp.reward` is its lift to `R(s, a)`.
    pub state_reward: Vec<f64>,
    /// No optimality constraint was available, so the reward is zero.
    pub reward_degenerate: bool,
    /// Last state of each demonstration.
    pub end_states: BTreeSet<StateId>,
    /// Place label of the window that created each state, when the demos
    /// carry labels.
    pub state_labels: Vec<Option<String>>,
}

impl TrainedModel {
    pub fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    pub fn actions(&self) -> &[Action] {
        &self.mdp.actions
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn encode_window(&self, frames: &[Frame]) -> Result<Vec<FeatureVector>> {
        frames.iter().map(|f| encode(f, &self.config.modality)).collect()
    }

    /// Group mass of a window of `l` frames against every state.
    pub fn masses(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        if frames.len() != self.seq_len() {
            return Err(Error::invalid(format!(
                "window has {} frames, model uses {}",
                frames.len(),
                self.seq_len()
            )));
        }
        let window = window_from_features(&self.encode_window(frames)?)?;
        self.space.masses(&window, &self.config.matching)
    }

    /// Execution-time identification: the state with the largest mass.
    pub fn identify(&self, frames: &[Frame]) -> Result<(StateId, Vec<f64>)> {
        let masses = self.masses(frames)?;
        let s = argmax(&masses).expect("non-empty state space");
        Ok((s, masses))
    }

    /// Identifies the window and picks the policy action, falling back to the
    /// heaviest known state when the identified one has no policy entry.
    pub fn decide(&self, frames: &[Frame]) -> Result<Decision> {
        let (state, masses) = self.identify(frames)?;
        let choice = select_action(&self.policy, self.actions(), state, Some(&masses))?;
        Ok(Decision { state, choice })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub state: StateId,
    pub choice: ActionChoice,
}

/// Runs a trained model inside [`crate::sim::run_episode`].
#[derive(Debug)]
pub struct PolicyController<'a> {
    model: &'a TrainedModel,
    /// Every decision taken, in order.
    pub decisions: Vec<Decision>,
}

impl<'a> PolicyController<'a> {
    pub fn new(model: &'a TrainedModel) -> Self {
        Self { model, decisions: Vec::new() }
    }
}

impl Controller for PolicyController<'_> {
    fn window_len(&self) -> usize {
        self.model.seq_len()
    }

    fn decide(&mut self, window: &[Frame]) -> Result<Vec<AtomMovement>> {
        if self.model.policy.actions.is_empty() {
            return Ok(Vec::new());
        }
        let decision = self.model.decide(window)?;
        if let Some(from) = decision.choice.fallback_from {
            log::info!("state {} outside the policy, acting as state {from}", decision.state);
        }
        let atoms = self.model.actions()[decision.choice.action].atoms.clone();
        self.decisions.push(decision);
        Ok(atoms)
    }
}

/// A demonstration cut into windows and actions.
struct Episode {
    windows: Vec<Vec<FeatureVector>>,
    labels: Vec<Option<String>>,
    atoms: Vec<AtomMovement>,
}

fn split_episode(demo: &Demonstration, cfg: &TrainConfig) -> Result<Episode> {
    demo.validate()?;
    let l = cfg.seq_len;
    let features: Vec<FeatureVector> = demo.frames.iter().map(|f| encode(f, &cfg.modality)).collect::<Result<_>>()?;
    let num_actions = demo.k_stream.len() / l;

    let mut windows = vec![vec![features[0].clone(); l]];
    windows.extend((0..num_actions).map(|j| features[1 + j * l..1 + (j + 1) * l].to_vec()));

    let label_of = |range: std::ops::Range<usize>| {
        demo.labels.as_ref().map(|labels| majority(range.map(|i| labels[i].as_str())))
    };
    let mut labels = vec![label_of(0..1)];
    labels.extend((0..num_actions).map(|j| label_of(1 + j * l..1 + (j + 1) * l)));

    Ok(Episode { windows, labels, atoms: demo.k_stream[..num_actions * l].to_vec() })
}

/// Most frequent label; ties go to the lexicographically smallest.
fn majority<'s>(labels: impl Iterator<Item = &'s str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|&(_, c)| c == best).map(|(l, _)| l.to_string()).unwrap_or_default()
}

/// Learns states, actions, transitions, reward and policy.
pub fn train(demos: &[Demonstration], cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::invalid("training needs at least one demonstration"));
    }
    let l = cfg.seq_len;
    let episodes: Vec<Episode> = demos.iter().map(|d| split_episode(d, cfg)).collect::<Result<_>>()?;

    // State space, online over every window.
    let m = cfg.modality.feature_len();
    let mut space = StateSpace::new(m, l)?;
    let mut state_labels = Vec::new();
    for ep in &episodes {
        for (window, label) in ep.windows.iter().zip(&ep.labels) {
            let before = space.len();
            space.learn_window(&window_from_features(window)?, &cfg.matching)?;
            if space.len() > before {
                state_labels.push(label.clone());
            }
        }
    }
    log::info!("learned {} states from {} demonstrations", space.len(), demos.len());

    // Consistent labelling against the final database.
    let mut s_streams = Vec::with_capacity(episodes.len());
    for ep in &episodes {
        let stream = ep
            .windows
            .iter()
            .map(|w| {
                let masses = space.masses(&window_from_features(w)?, &cfg.matching)?;
                Ok(argmax(&masses).expect("non-empty state space"))
            })
            .collect::<Result<Vec<StateId>>>()?;
        s_streams.push(stream);
    }

    // Actions over all demos; each demo contributes whole actions only.
    let all_atoms: Vec<AtomMovement> = episodes.iter().flat_map(|ep| ep.atoms.iter().copied()).collect();
    let (actions, a_all) = learn_actions(&all_atoms, l);
    let mut a_streams = Vec::with_capacity(episodes.len());
    let mut offset = 0;
    for ep in &episodes {
        let n = ep.atoms.len() / l;
        a_streams.push(a_all[offset..offset + n].to_vec());
        offset += n;
    }

    let mut counts = TransitionCounts::default();
    for (s, a) in s_streams.iter().zip(&a_streams) {
        counts.merge(&learn_transitions(s, a)?);
    }
    let transitions = counts.to_model(space.len(), actions.len())?;
    if transitions.unobserved_pairs() > 0 {
        log::debug!("{} state-action pairs unobserved, treated as self-loops", transitions.unobserved_pairs());
    }

    let expert: BTreeMap<StateId, ActionId> =
        demonstrated_policy(s_streams.iter().zip(&a_streams).flat_map(|(s, a)| s.iter().copied().zip(a.iter().copied())));
    let end_states: BTreeSet<StateId> = s_streams.iter().filter_map(|s| s.last().copied()).collect();
    // A demo's last state can be a waypoint of another demo; only states the
    // expert never acts in are treated as terminal.
    let terminal: BTreeSet<StateId> = end_states.iter().copied().filter(|s| !expert.contains_key(s)).collect();
    let reward = learn_reward(&transitions, &expert, &terminal, &cfg.irl)?;
    if reward.degenerate {
        log::warn!("demonstrations do not constrain the reward; using R = 0");
    }

    let mut mdp = MdpModel::new(space.len(), actions, transitions, cfg.irl.gamma)?;
    mdp.set_state_reward(&reward.state_reward)?;
    let policy = value_iteration(&mdp, VALUE_TOLERANCE)?;

    Ok(TrainedModel {
        config: *cfg,
        space,
        mdp,
        policy,
        state_reward: reward.state_reward,
        reward_degenerate: reward.degenerate,
        end_states,
        state_labels,
    })
}
