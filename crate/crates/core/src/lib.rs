//! Learning robot policies from windows of multimodal observations.
//!
//! The crate learns a discrete state space from windows of multimodal
//! observations using a structured-sparse matching problem, learns an MDP
//! with a recovered reward from expert demonstrations and runs the
//! resulting policy in a deterministic grid-world rescue simulator.
//!
//! Module map:
//! - [`features`]: frames to normalized multimodal feature vectors.
//! - [`solver`]: the l2,1 / S1 regularized matching objective and its
//!   iteratively reweighted solver.
//! - [`state`]: template database, online state-space learning and
//!   state identification.
//! - [`mdp`]: action space, transition model, reward recovery and planning.
//! - [`sim`]: grid world, renderer, scripted expert and episode runner.
//! - [`pipeline`]: demonstrations, training, model files and recognition
//!   evaluation.
//! - [`service`]: the teleoperation websocket service.

pub mod error;
pub mod features;
pub mod mdp;
pub mod pipeline;
pub mod service;
pub mod sim;
pub mod solver;
pub mod state;

pub use error::{Error, Result};
