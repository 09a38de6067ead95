//! First-person renderer.
//!
//! The camera sees a 3x3 patch of cells ahead of the robot: three depths
//! (near band at the bottom of the image, far band at the top) by three
//! lateral offsets. Each visible cell is painted with a procedural pattern
//! derived from its texture seed; walls occlude everything behind them in
//! their column. Colors are 8-bit palette values so frames survive PNG
//! round trips bit-exactly.

use super::world::SimWorld;
use crate::features::Frame;

pub const FRAME_SIZE: usize = 32;
pub const VIEW_DEPTH: usize = 3;

// Far-to-near row bands and left/center/right column bands.
const ROW_BANDS: [(usize, usize); VIEW_DEPTH] = [(0, 8), (8, 18), (18, 32)];
const COL_BANDS: [(usize, usize); 3] = [(0, 10), (10, 22), (22, 32)];

// Saturated, mutually distinct colors keep unrelated views far apart in
// feature space; pure red is reserved for the victim.
const FLOOR_PALETTE: [[u8; 3]; 12] = [
    [230, 0, 120],
    [30, 200, 40],
    [30, 60, 230],
    [240, 220, 20],
    [200, 40, 220],
    [20, 210, 220],
    [245, 245, 245],
    [250, 130, 20],
    [120, 40, 200],
    [40, 120, 40],
    [25, 25, 25],
    [140, 140, 140],
];

const WALL_PALETTE: [[u8; 3]; 12] = [
    [90, 10, 10],
    [10, 70, 10],
    [10, 20, 90],
    [80, 70, 0],
    [70, 0, 70],
    [0, 70, 80],
    [60, 60, 60],
    [100, 50, 0],
    [40, 0, 60],
    [0, 40, 20],
    [5, 5, 5],
    [110, 110, 110],
];

const VICTIM: [u8; 3] = [235, 20, 20];
const VICTIM_MARK: [u8; 3] = [255, 255, 255];

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pattern color at local pixel `(u, v)` of a cell with texture `seed`.
fn texel(seed: u64, wall: bool, u: usize, v: usize) -> [u8; 3] {
    let h = mix(seed ^ if wall { 0xA5A5 } else { 0 });
    let palette = if wall { &WALL_PALETTE } else { &FLOOR_PALETTE };
    let a = (h % 12) as usize;
    let b = (a + 1 + ((h >> 8) % 11) as usize) % 12;
    let period = 2 + ((h >> 24) % 3) as usize;
    let first = match (h >> 16) % 5 {
        0 => true,
        1 => (v / period) % 2 == 0,
        2 => (u / period) % 2 == 0,
        3 => (u / period + v / period) % 2 == 0,
        _ => ((u + v) / period) % 2 == 0,
    };
    if first {
        palette[a]
    } else {
        palette[b]
    }
}

/// The victim is a marked red figure in the middle half of its cell.
fn victim_texel(u: usize, v: usize, w: usize, h: usize) -> Option<[u8; 3]> {
    let inside = (w / 4..w - w / 4).contains(&u) && (h / 4..h - h / 4).contains(&v);
    match inside {
        false => None,
        true if u == w / 2 || v == h / 2 => Some(VICTIM_MARK),
        true => Some(VICTIM),
    }
}

/// Renders the robot's current view.
pub fn render(world: &SimWorld) -> Frame {
    let pose = world.robot;
    let (fx, fy) = pose.heading.delta();
    let (rx, ry) = pose.heading.right().delta();
    let mut rgb = vec![0u8; FRAME_SIZE * FRAME_SIZE * 3];

    for (col, &(x0, x1)) in COL_BANDS.iter().enumerate() {
        let offset = col as i64 - 1;
        // What fills the band at each depth, nearest first.
        let mut occluder: Option<(i64, i64)> = None;
        for depth in 1..=VIEW_DEPTH {
            let d = depth as i64;
            let cx = pose.x as i64 + d * fx + offset * rx;
            let cy = pose.y as i64 + d * fy + offset * ry;
            let (sx, sy, wall) = match occluder {
                Some((ox, oy)) => (ox, oy, true),
                None if world.is_wall(cx, cy) => {
                    occluder = Some((cx, cy));
                    (cx, cy, true)
                }
                None => (cx, cy, false),
            };
            let victim = !wall && world.in_bounds(sx, sy) && (sx as usize, sy as usize) == world.victim();
            let seed = world.texture(sx, sy);
            let (y0, y1) = ROW_BANDS[VIEW_DEPTH - depth];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (u, v) = (x - x0, y - y0);
                    let figure = if victim { victim_texel(u, v, x1 - x0, y1 - y0) } else { None };
                    let c = figure.unwrap_or_else(|| texel(seed, wall, u, v));
                    let i = (y * FRAME_SIZE + x) * 3;
                    rgb[i..i + 3].copy_from_slice(&c);
                }
            }
        }
    }
    Frame::from_rgb8(FRAME_SIZE, FRAME_SIZE, &rgb).expect("renderer produces a full frame")
}
