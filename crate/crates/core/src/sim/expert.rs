use std::collections::VecDeque;

use super::world::{Pose, SimWorld};
use crate::error::{Error, Result};
use crate::mdp::AtomMovement;

const MOVES: [AtomMovement; 3] = [AtomMovement::Forward, AtomMovement::TurnLeft, AtomMovement::TurnRight];

fn apply(world: &SimWorld, pose: Pose, atom: AtomMovement) -> Option<Pose> {
    match atom {
        AtomMovement::TurnLeft => Some(Pose { heading: pose.heading.left(), ..pose }),
        AtomMovement::TurnRight => Some(Pose { heading: pose.heading.right(), ..pose }),
        AtomMovement::Forward => {
            let (dx, dy) = pose.heading.delta();
            let (nx, ny) = (pose.x as i64 + dx, pose.y as i64 + dy);
            world.is_free(nx, ny).then(|| Pose { x: nx as usize, y: ny as usize, ..pose })
        }
        AtomMovement::Backward => None,
    }
}

/// Shortest collision-free atom sequence from the robot's pose to the victim
/// cell, by breadth-first search over (cell, heading) with unit cost per
/// forward move or quarter turn. Expansion order (forward, left, right)
/// fixes which of several optimal paths is returned.
pub fn scripted_expert(world: &SimWorld) -> Result<Vec<AtomMovement>> {
    let idx = |p: Pose| (p.y * world.width() + p.x) * 4 + p.heading.index();
    let mut parent: Vec<Option<(Pose, AtomMovement)>> = vec![None; world.width() * world.height() * 4];
    let mut seen = vec![false; parent.len()];
    let start = world.robot;
    let mut queue = VecDeque::from([start]);
    seen[idx(start)] = true;
    while let Some(pose) = queue.pop_front() {
        if pose.cell() == world.victim() {
            let mut atoms = Vec::new();
            let mut cur = pose;
            while let Some((prev, atom)) = parent[idx(cur)] {
                atoms.push(atom);
                cur = prev;
            }
            atoms.reverse();
            return Ok(atoms);
        }
        for atom in MOVES {
            if let Some(next) = apply(world, pose, atom) {
                if !seen[idx(next)] {
                    seen[idx(next)] = true;
                    parent[idx(next)] = Some((pose, atom));
                    queue.push_back(next);
                }
            }
        }
    }
    Err(Error::NoPath)
}

/// Length of the expert path, counted in atoms.
pub fn expert_path_len(world: &SimWorld) -> Result<usize> {
    scripted_expert(world).map(|p| p.len())
}
