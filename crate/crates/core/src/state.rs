//! State template database, online state-space learning and identification.
//!
//! Every state is represented by exactly one template sequence. A window of
//! observations is matched against the database by solving the sparse
//! matching problem; the evidence for template `j` is its group mass
//! `sum_i ||w_i^j||_1`. During learning a window whose group masses all stay
//! at or below `tau` becomes a new state; at execution time the state with
//! the largest mass is taken unconditionally.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::solver::{solve, QuerySequence, SolverConfig, TemplateMatrix, WeightMatrix};

/// Dense state index, equal to the template sequence index.
pub type StateId = usize;

/// Ordered states identified for consecutive observation windows.
pub type StateStream = Vec<StateId>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Group-mass threshold below which a template does not match.
    pub tau: f64,
    pub solver: SolverConfig,
}

impl MatchConfig {
    /// Defaults for windows of `seq_len` observations: `tau = 0.75 * seq_len`.
    pub fn for_seq_len(seq_len: usize) -> Self {
        Self { tau: 0.75 * seq_len as f64, solver: SolverConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("tau must be nonnegative"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    templates: TemplateMatrix,
}

impl StateSpace {
    pub fn new(feature_len: usize, seq_len: usize) -> Result<Self> {
        Ok(Self { templates: TemplateMatrix::empty(feature_len, seq_len)? })
    }

    pub fn from_templates(templates: TemplateMatrix) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &TemplateMatrix {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.num_seqs()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.templates.seq_len()
    }

    pub fn states(&self) -> std::ops::Range<StateId> {
        0..self.len()
    }

    /// Template sequence index representing `state`.
    pub fn seq_of_state(&self, state: StateId) -> usize {
        state
    }

    /// Unconditionally adds `window` as a new state.
    pub fn enroll(&mut self, window: &QuerySequence) -> Result<StateId> {
        self.templates.push_sequence(&window.data)?;
        Ok(self.len() - 1)
    }

    /// Matches one window during learning, inserting it as a new state when
    /// no template passes the `tau` test.
    pub fn learn_window(&mut self, window: &QuerySequence, cfg: &MatchConfig) -> Result<StateId> {
        if self.is_empty() {
            return self.enroll(window);
        }
        let (w, _) = solve(&self.templates, window, &cfg.solver)?;
        match match_state(&w, cfg) {
            Some(state) => Ok(state),
            None => self.enroll(window),
        }
    }

    /// Runs online learning over a feature stream, consuming non-overlapping
    /// windows of `seq_len` frames; a trailing partial window is ignored.
    pub fn learn(&mut self, frames: &[FeatureVector], cfg: &MatchConfig) -> Result<StateStream> {
        cfg.validate()?;
        let l = self.seq_len();
        frames
            .chunks_exact(l)
            .map(|chunk| {
                let window = window_from_features(chunk)?;
                self.learn_window(&window, cfg)
            })
            .collect()
    }

    /// Group masses of `window` against every template sequence.
    pub fn masses(&self, window: &QuerySequence, cfg: &MatchConfig) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::Precondition("state space is empty".into()));
        }
        let (w, _) = solve(&self.templates, window, &cfg.solver)?;
        Ok(group_masses(&w))
    }
}

/// Stacks feature vectors into an m x l query window.
pub fn window_from_features(frames: &[FeatureVector]) -> Result<QuerySequence> {
    let m = frames.first().map_or(0, FeatureVector::len);
    if frames.iter().any(|f| f.len() != m) {
        return Err(Error::invalid("feature vectors in a window differ in length"));
    }
    Ok(QuerySequence::new(DMatrix::from_fn(m, frames.len(), |r, c| frames[c].values[r])))
}

/// `sum_i ||w_i^j||_1` for template group `j`.
pub fn group_mass(w: &WeightMatrix, j: usize) -> Result<f64> {
    if j >= w.num_groups() {
        return Err(Error::invalid(format!("group {j} out of range ({} groups)", w.num_groups())));
    }
    let rows = w.group_range(j);
    Ok(w.data.rows(rows.start, rows.len()).iter().map(|v| v.abs()).sum())
}

pub fn group_masses(w: &WeightMatrix) -> Vec<f64> {
    (0..w.num_groups()).map(|j| group_mass(w, j).expect("index in range")).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// `None` when every group mass is at most `tau`, else the argmax state.
pub fn match_state(w: &WeightMatrix, cfg: &MatchConfig) -> Option<StateId> {
    let masses = group_masses(w);
    if masses.iter().all(|&m| m <= cfg.tau) {
        return None;
    }
    argmax(&masses)
}

/// Learns a state space from scratch over one feature stream.
pub fn learn_state_space(
    frames: &[FeatureVector],
    seq_len: usize,
    cfg: &MatchConfig,
) -> Result<(StateSpace, StateStream)> {
    let m = frames.first().map_or(0, FeatureVector::len);
    let mut space = StateSpace::new(m, seq_len)?;
    let stream = space.learn(frames, cfg)?;
    Ok((space, stream))
}

/// Execution-phase identification: the state with the largest group mass.
pub fn identify(y: &QuerySequence, space: &StateSpace, cfg: &MatchConfig) -> Result<StateId> {
    let masses = space.masses(y, cfg)?;
    Ok(argmax(&masses).expect("non-empty state space"))
}
