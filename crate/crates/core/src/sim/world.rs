use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::AtomMovement;

/// Cells of texture margin kept around the grid so out-of-bounds wall cells
/// in view also have stable textures.
pub(crate) const MARGIN: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub fn left(self) -> Self {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Self {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    /// Unit step in grid coordinates (y grows southwards).
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        };
        f.write_str(c)
    }
}

impl FromStr for Heading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" | "n" => Ok(Heading::N),
            "E" | "e" => Ok(Heading::E),
            "S" | "s" => Ok(Heading::S),
            "W" | "w" => Ok(Heading::W),
            other => Err(Error::WorldFormat(format!("unknown heading {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: usize, y: usize, heading: Heading) -> Self {
        Self { x, y, heading }
    }

    pub fn cell(&self) -> (usize, usize) {
        (self.x, self.y)
    }
}

/// Grid world with a robot, a victim and per-cell texture seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    /// Texture seeds over the grid plus `MARGIN` cells on every side.
    textures: Vec<u64>,
    pub robot: Pose,
    start: Pose,
    victim: (usize, usize),
    seed: u64,
    aliasing: f64,
    pub step_count: usize,
    pub collision_count: usize,
}

impl SimWorld {
    /// Builds a world. `aliasing` is the fraction of cells (grid and margin)
    /// that share one common texture seed; the rest get distinct seeds.
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        robot: Pose,
        victim: (usize, usize),
        seed: u64,
        aliasing: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 || walls.len() != width * height {
            return Err(Error::WorldFormat("grid dimensions do not match the wall map".into()));
        }
        if !(0.0..=1.0).contains(&aliasing) {
            return Err(Error::WorldFormat(format!("aliasing {aliasing} outside [0, 1]")));
        }
        let mut world = Self {
            width,
            height,
            walls,
            textures: Vec::new(),
            robot,
            start: robot,
            victim,
            seed,
            aliasing,
            step_count: 0,
            collision_count: 0,
        };
        for (what, (x, y)) in [("robot", robot.cell()), ("victim", victim)] {
            if !world.is_free(x as i64, y as i64) {
                return Err(Error::WorldFormat(format!("{what} at ({x}, {y}) is not on a free cell")));
            }
        }
        world.textures = world.assign_textures();
        Ok(world)
    }

    fn assign_textures(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (pw, ph) = self.padded_dims();
        (0..pw * ph)
            .map(|_| {
                let shared = rng.gen::<f64>() < self.aliasing;
                let unique = rng.gen::<u64>() | 1;
                if shared {
                    0
                } else {
                    unique
                }
            })
            .collect()
    }

    fn padded_dims(&self) -> (usize, usize) {
        (self.width + 2 * MARGIN as usize, self.height + 2 * MARGIN as usize)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn victim(&self) -> (usize, usize) {
        self.victim
    }

    pub fn start(&self) -> Pose {
        self.start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn aliasing(&self) -> f64 {
        self.aliasing
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, x: i64, y: i64) -> bool {
        !self.in_bounds(x, y) || self.walls[y as usize * self.width + x as usize]
    }

    pub fn is_free(&self, x: i64, y: i64) -> bool {
        !self.is_wall(x, y)
    }

    /// Texture seed of any cell within the margin; farther cells reuse the
    /// shared seed.
    pub fn texture(&self, x: i64, y: i64) -> u64 {
        let (pw, ph) = self.padded_dims();
        let (px, py) = (x + MARGIN, y + MARGIN);
        if px < 0 || py < 0 || px as usize >= pw || py as usize >= ph {
            return 0;
        }
        self.textures[py as usize * pw + px as usize]
    }

    /// Overrides one cell's texture seed.
    pub fn set_texture(&mut self, x: i64, y: i64, seed: u64) {
        let (pw, ph) = self.padded_dims();
        let (px, py) = (x + MARGIN, y + MARGIN);
        if px >= 0 && py >= 0 && (px as usize) < pw && (py as usize) < ph {
            self.textures[py as usize * pw + px as usize] = seed;
        }
    }

    pub fn at_victim(&self) -> bool {
        self.robot.cell() == self.victim
    }

    /// Moves the robot (and the reset pose) to `pose`, clearing counters.
    pub fn with_start(mut self, pose: Pose) -> Result<Self> {
        if !self.is_free(pose.x as i64, pose.y as i64) {
            return Err(Error::WorldFormat(format!("start ({}, {}) is not free", pose.x, pose.y)));
        }
        self.start = pose;
        self.reset();
        Ok(self)
    }

    /// Back to the start pose with zeroed counters.
    pub fn reset(&mut self) {
        self.robot = self.start;
        self.step_count = 0;
        self.collision_count = 0;
    }

    /// Applies one atom movement. A blocked translation leaves the pose
    /// unchanged and counts a collision.
    pub fn step(&mut self, atom: AtomMovement) {
        let pose = self.robot;
        match atom {
            AtomMovement::TurnLeft => self.robot.heading = pose.heading.left(),
            AtomMovement::TurnRight => self.robot.heading = pose.heading.right(),
            AtomMovement::Forward | AtomMovement::Backward => {
                let (dx, dy) = pose.heading.delta();
                let sign = if atom == AtomMovement::Forward { 1 } else { -1 };
                let (nx, ny) = (pose.x as i64 + sign * dx, pose.y as i64 + sign * dy);
                if self.is_wall(nx, ny) {
                    self.collision_count += 1;
                } else {
                    self.robot.x = nx as usize;
                    self.robot.y = ny as usize;
                }
            }
        }
        self.step_count += 1;
    }

    /// Parses the plain-text world format (see the crate README).
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid: Vec<&str> = Vec::new();
        let mut heading = None;
        let mut seed = 0u64;
        let mut aliasing = 0.0;
        for raw in text.lines() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("heading") => heading = Some(words.next().unwrap_or("").parse::<Heading>()?),
                Some("seed") => {
                    seed = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| Error::WorldFormat(format!("bad seed line {line:?}")))?
                }
                Some("aliasing") => {
                    aliasing = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| Error::WorldFormat(format!("bad aliasing line {line:?}")))?
                }
                Some(w) if w.starts_with("//") => {}
                _ => {
                    if heading.is_some() {
                        return Err(Error::WorldFormat(format!("grid row after settings: {line:?}")));
                    }
                    grid.push(line.trim());
                }
            }
        }
        let height = grid.len();
        let width = grid.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::WorldFormat("empty grid".into()));
        }
        let mut walls = Vec::with_capacity(width * height);
        let mut robot = None;
        let mut victim = None;
        for (y, row) in grid.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::WorldFormat(format!("row {y} has a different width")));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'R' => {
                        if robot.replace((x, y)).is_some() {
                            return Err(Error::WorldFormat("more than one robot".into()));
                        }
                        walls.push(false);
                    }
                    'V' => {
                        if victim.replace((x, y)).is_some() {
                            return Err(Error::WorldFormat("more than one victim".into()));
                        }
                        walls.push(false);
                    }
                    other => return Err(Error::WorldFormat(format!("unknown cell {other:?}"))),
                }
            }
        }
        let (rx, ry) = robot.ok_or_else(|| Error::WorldFormat("missing robot 'R'".into()))?;
        let victim = victim.ok_or_else(|| Error::WorldFormat("missing victim 'V'".into()))?;
        let heading = heading.ok_or_else(|| Error::WorldFormat("missing heading line".into()))?;
        Self::new(width, height, walls, Pose::new(rx, ry, heading), victim, seed, aliasing)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the text format, with the robot at its start pose.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if (x, y) == self.start.cell() {
                    'R'
                } else if (x, y) == self.victim {
                    'V'
                } else if self.walls[y * self.width + x] {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out.push_str(&format!("heading {}\nseed {}\naliasing {}\n", self.start.heading, self.seed, self.aliasing));
        out
    }
}
