//! Model files.
//!
//! Layout:
//!
//! ```text
//! SMAL-MODEL <version>\n
//! <JSON header on one line>\n
//! <binary section>
//! ```
//!
//! The header carries the configs, the action table, the transition
//! probabilities, the reward, the policy, state labels and a descriptor per
//! dense matrix (`name`, `rows`, `cols`, byte `offset` into the binary
//! section), plus the length and SHA-256 of the binary section. Matrices are
//! stored column-major as little-endian IEEE-754 `f64`. Equal models produce
//! equal bytes.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::{TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionId, MdpModel, Policy, TransitionModel};
use crate::solver::TemplateMatrix;
use crate::state::{StateId, StateSpace};

pub const MODEL_MAGIC: &str = "SMAL-MODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    num_states: usize,
    actions: Vec<Action>,
    transitions: Vec<TransitionRow>,
    state_reward: Vec<f64>,
    reward_degenerate: bool,
    policy: Vec<(StateId, ActionId)>,
    values: Vec<f64>,
    sweeps: usize,
    end_states: BTreeSet<StateId>,
    state_labels: Vec<Option<String>>,
    matrices: Vec<MatrixEntry>,
    binary_len: usize,
    binary_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRow {
    state: StateId,
    action: ActionId,
    next: Vec<(StateId, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let templates = model.space.templates().data();
    let mut binary = Vec::with_capacity(templates.len() * 8);
    for v in templates.iter() {
        binary.extend_from_slice(&v.to_le_bytes());
    }
    let header = Header {
        config: model.config,
        num_states: model.num_states(),
        actions: model.actions().to_vec(),
        transitions: model
            .mdp
            .transitions
            .observed()
            .map(|(&(state, action), next)| TransitionRow { state, action, next: next.clone() })
            .collect(),
        state_reward: model.state_reward.clone(),
        reward_degenerate: model.reward_degenerate,
        policy: model.policy.actions.iter().map(|(&s, &a)| (s, a)).collect(),
        values: model.policy.values.clone(),
        sweeps: model.policy.sweeps,
        end_states: model.end_states.clone(),
        state_labels: model.state_labels.clone(),
        matrices: vec![MatrixEntry {
            name: "templates".into(),
            rows: templates.nrows(),
            cols: templates.ncols(),
            offset: 0,
        }],
        binary_len: binary.len(),
        binary_sha256: hex(&Sha256::digest(&binary)),
    };
    let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION}\n").into_bytes();
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    out.extend_from_slice(&binary);
    Ok(out)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    model_from_bytes(&std::fs::read(path)?, path)
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

/// Parses a model; `path` is only used in error messages.
pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let corrupt = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };

    let (magic, rest) = split_line(bytes).ok_or_else(|| corrupt("missing magic line".into()))?;
    let magic = std::str::from_utf8(magic).map_err(|_| corrupt("magic line is not text".into()))?;
    let version = match magic.split_once(' ') {
        Some((MODEL_MAGIC, v)) => v.parse::<u32>().map_err(|_| corrupt(format!("bad version {v:?}")))?,
        _ => return Err(corrupt("not a model file".into())),
    };
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: MODEL_VERSION });
    }
    let (header, binary) = split_line(rest).ok_or_else(|| corrupt("header is cut off".into()))?;
    let header: Header = serde_json::from_slice(header).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if binary.len() != header.binary_len {
        return Err(corrupt(format!(
            "binary section has {} bytes, header says {}",
            binary.len(),
            header.binary_len
        )));
    }
    if hex(&Sha256::digest(binary)) != header.binary_sha256 {
        return Err(corrupt("binary section checksum mismatch".into()));
    }

    let entry = header
        .matrices
        .iter()
        .find(|e| e.name == "templates")
        .ok_or_else(|| corrupt("no template matrix".into()))?;
    let end = entry.rows * entry.cols * 8 + entry.offset;
    if end > binary.len() {
        return Err(corrupt("template matrix extends past the binary section".into()));
    }
    let values: Vec<f64> = binary[entry.offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let data = DMatrix::from_vec(entry.rows, entry.cols, values);

    let cfg = header.config;
    cfg.validate()?;
    let invalid = |msg: &str| Error::InvalidModel(msg.to_string());
    if entry.rows != cfg.modality.feature_len() {
        return Err(invalid("template feature length disagrees with the modality config"));
    }
    let space = StateSpace::from_templates(TemplateMatrix::new(data, cfg.seq_len)?);
    if space.len() != header.num_states {
        return Err(invalid("template count disagrees with the number of states"));
    }
    if header.actions.iter().enumerate().any(|(i, a)| a.id != i || a.atoms.len() != cfg.seq_len) {
        return Err(invalid("action table is not dense or has wrong action lengths"));
    }
    let n = header.num_states;
    if header.state_reward.len() != n || header.values.len() != n || header.state_labels.len() != n {
        return Err(invalid("per-state tables have the wrong length"));
    }
    let transitions = TransitionModel::from_rows(
        n,
        header.actions.len(),
        header.transitions.into_iter().map(|r| ((r.state, r.action), r.next)),
    )?;
    let mut mdp = MdpModel { num_states: n, actions: header.actions, transitions, reward: Vec::new(), gamma: cfg.irl.gamma };
    mdp.set_state_reward(&header.state_reward)?;
    mdp.validate()?;
    if header.policy.iter().any(|&(s, a)| s >= n || a >= mdp.num_actions()) {
        return Err(invalid("policy refers to unknown states or actions"));
    }
    let policy = Policy { actions: header.policy.into_iter().collect(), values: header.values, sweeps: header.sweeps };

    Ok(TrainedModel {
        config: cfg,
        space,
        mdp,
        policy,
        state_reward: header.state_reward,
        reward_degenerate: header.reward_degenerate,
        end_states: header.end_states,
        state_labels: header.state_labels,
    })
}
