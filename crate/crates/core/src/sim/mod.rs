//! Deterministic grid-world search-and-rescue simulator.

mod episode;
mod expert;
mod render;
mod world;

pub use episode::{run_episode, Controller, EpisodeResult};
pub use expert::{expert_path_len, scripted_expert};
pub use render::{render, FRAME_SIZE, VIEW_DEPTH};
pub use world::{Heading, Pose, SimWorld};
