use serde::Serialize;

use super::render::render;
use super::world::{Pose, SimWorld};
use crate::error::Result;
use crate::features::Frame;
use crate::mdp::AtomMovement;

/// Maps the latest observation window to the atoms to execute next.
pub trait Controller {
    /// Frames per observation window.
    fn window_len(&self) -> usize;

    fn decide(&mut self, window: &[Frame]) -> Result<Vec<AtomMovement>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    /// The robot reached the victim cell.
    pub success: bool,
    /// Atoms executed.
    pub steps: usize,
    /// Budget consumed: one tick per atom plus one per initial observation.
    pub ticks: usize,
    pub collision_count: usize,
    /// Pose after every executed atom, starting with the initial pose.
    pub trajectory: Vec<Pose>,
}

/// Runs the robot until it reaches the victim or `budget` ticks are spent.
///
/// The robot first observes its start pose for one window (`l` frames, one
/// per tick), then repeatedly executes the decided action, rendering a frame
/// after every atom, and decides again once `l` new frames are in.
pub fn run_episode(world: &mut SimWorld, controller: &mut dyn Controller, budget: usize) -> Result<EpisodeResult> {
    let l = controller.window_len().max(1);
    let collisions_before = world.collision_count;
    let mut result = EpisodeResult {
        success: world.at_victim(),
        steps: 0,
        ticks: 0,
        collision_count: 0,
        trajectory: vec![world.robot],
    };
    if result.success {
        return Ok(result);
    }

    let mut window = Vec::with_capacity(l);
    while window.len() < l {
        if result.ticks >= budget {
            return Ok(result);
        }
        window.push(render(world));
        result.ticks += 1;
    }

    'outer: loop {
        let atoms = controller.decide(&window)?;
        if atoms.is_empty() {
            // Nothing to do: wait a tick and look again.
            if result.ticks >= budget {
                break;
            }
            result.ticks += 1;
            continue;
        }
        window.clear();
        for atom in atoms {
            if result.ticks >= budget {
                break 'outer;
            }
            world.step(atom);
            result.ticks += 1;
            result.steps += 1;
            result.trajectory.push(world.robot);
            if world.at_victim() {
                result.success = true;
                break 'outer;
            }
            window.push(render(world));
        }
        // Keep the latest `l` frames when an action is shorter or longer
        // than the window.
        if window.len() > l {
            window.drain(..window.len() - l);
        }
        while window.len() < l {
            if result.ticks >= budget {
                break 'outer;
            }
            window.push(render(world));
            result.ticks += 1;
        }
    }
    result.collision_count = world.collision_count - collisions_before;
    Ok(result)
}
