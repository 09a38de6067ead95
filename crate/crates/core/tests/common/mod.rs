//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smal::mdp::{Action, AtomMovement, MdpModel, TransitionModel};
use smal::sim::{Pose, SimWorld};
use smal::solver::{QuerySequence, SolverConfig, TemplateMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    m
}

/// Random unit-column templates (`k` sequences of `l`) and a query that is a
/// noisy copy of one template sequence.
pub fn random_instance(rng: &mut ChaCha8Rng, m: usize, k: usize, l: usize) -> (TemplateMatrix, QuerySequence) {
    let x = unit_columns(DMatrix::from_fn(m, k * l, |_, _| rng.gen_range(-1.0..1.0)));
    let src = rng.gen_range(0..k);
    let noise = DMatrix::from_fn(m, l, |_, _| rng.gen_range(-0.3..0.3));
    let y = unit_columns(x.columns(src * l, l).into_owned() + noise);
    (TemplateMatrix::new(x, l).unwrap(), QuerySequence::new(y))
}

/// Random templates and an unrelated random query.
pub fn random_unrelated(rng: &mut ChaCha8Rng, m: usize, k: usize, l: usize) -> (TemplateMatrix, QuerySequence) {
    let x = unit_columns(DMatrix::from_fn(m, k * l, |_, _| rng.gen_range(-1.0..1.0)));
    let y = unit_columns(DMatrix::from_fn(m, l, |_, _| rng.gen_range(-1.0..1.0)));
    (TemplateMatrix::new(x, l).unwrap(), QuerySequence::new(y))
}

fn huber(t: f64, eps: f64) -> f64 {
    if t >= eps {
        t
    } else {
        0.5 * (t * t / eps + eps)
    }
}

/// The smoothed objective, written out term by term from the matrices.
pub fn oracle_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, l: usize, cfg: &SolverConfig) -> f64 {
    let eps = cfg.epsilon;
    let r = x * w - y;
    let mut f = 0.0;
    for i in 0..r.ncols() {
        f += huber(r.column(i).norm(), eps);
    }
    for j in 0..w.nrows() {
        f += cfg.lambda1 * huber(w.row(j).norm(), eps);
    }
    for i in 0..w.ncols() {
        for g in 0..w.nrows() / l {
            f += cfg.lambda2 * huber(w.view((g * l, i), (l, 1)).norm(), eps);
        }
    }
    f
}

fn oracle_gradient(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, l: usize, cfg: &SolverConfig) -> DMatrix<f64> {
    let eps = cfg.epsilon;
    let r = x * w - y;
    let mut scaled = r.clone();
    for (i, mut c) in scaled.column_iter_mut().enumerate() {
        c /= r.column(i).norm().max(eps);
    }
    let mut g = x.transpose() * scaled;
    for j in 0..w.nrows() {
        let n = w.row(j).norm().max(eps);
        let row = w.row(j) * (cfg.lambda1 / n);
        let mut target = g.row_mut(j);
        target += row;
    }
    for i in 0..w.ncols() {
        for grp in 0..w.nrows() / l {
            let slice = w.view((grp * l, i), (l, 1));
            let n = slice.norm().max(eps);
            let add = slice * (cfg.lambda2 / n);
            let mut target = g.view_mut((grp * l, i), (l, 1));
            target += add;
        }
    }
    g
}

/// Best smoothed-objective value found by `steps` projected-subgradient
/// steps from zero, with normalized steps of length `a0 / sqrt(t + 1)` and
/// `a0 = 0.05 ||Y||_F`. The problem is unconstrained, so the projection is
/// the identity.
pub fn subgradient_oracle(x: &TemplateMatrix, y: &QuerySequence, cfg: &SolverConfig, steps: usize) -> f64 {
    let (xm, ym, l) = (x.data(), &y.data, x.seq_len());
    let mut w = DMatrix::zeros(xm.ncols(), ym.ncols());
    let mut best = oracle_objective(xm, ym, &w, l, cfg);
    let a0 = 0.05 * ym.norm().max(1e-12);
    for t in 0..steps {
        let g = oracle_gradient(xm, ym, &w, l, cfg);
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        w -= g * (a0 / ((t + 1) as f64).sqrt() / gn);
        best = best.min(oracle_objective(xm, ym, &w, l, cfg));
    }
    best
}

pub fn acts(n: usize) -> Vec<Action> {
    (0..n).map(|id| Action { id, atoms: vec![AtomMovement::ALL[id % 4]] }).collect()
}

/// A random MDP with every (s, a) pair observed.
pub fn random_mdp(rng: &mut ChaCha8Rng, n: usize, num_actions: usize, gamma: f64) -> MdpModel {
    let mut rows = Vec::new();
    for s in 0..n {
        for a in 0..num_actions {
            let weights: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            let total: f64 = weights.iter().sum();
            let row: Vec<(usize, f64)> = if total == 0.0 {
                vec![(rng.gen_range(0..n), 1.0)]
            } else {
                weights.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p / total)).collect()
            };
            rows.push(((s, a), row));
        }
    }
    let t = TransitionModel::from_rows(n, num_actions, rows).unwrap();
    let mut mdp = MdpModel::new(n, acts(num_actions), t, gamma).unwrap();
    mdp.reward = (0..n).map(|_| (0..num_actions).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    mdp
}

/// Exact value of a stationary policy: `(I - gamma P_pi)^-1 r_pi`.
pub fn policy_value(mdp: &MdpModel, pi: &[usize]) -> DVector<f64> {
    let n = mdp.num_states;
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for (next, prob) in mdp.row(s, pi[s]) {
            p[(s, next)] += prob;
        }
        r[s] = mdp.reward[s][pi[s]];
    }
    (DMatrix::identity(n, n) - p * mdp.gamma).lu().solve(&r).expect("gamma < 1 keeps the system regular")
}

/// The stationary policy with the largest total value, by enumeration of
/// all `|A|^|S|` policies.
pub fn brute_force_policy(mdp: &MdpModel) -> (Vec<usize>, DVector<f64>) {
    let n = mdp.num_states;
    let na = mdp.num_actions();
    let mut best: Option<(Vec<usize>, DVector<f64>)> = None;
    for code in 0..na.pow(n as u32) {
        let pi: Vec<usize> = (0..n).map(|s| code / na.pow(s as u32) % na).collect();
        let v = policy_value(mdp, &pi);
        if best.as_ref().map_or(true, |(_, bv)| v.sum() > bv.sum()) {
            best = Some((pi, v));
        }
    }
    best.expect("at least one policy")
}

/// Length of the shortest sequence of forward moves and quarter turns from
/// the robot's pose to the victim cell, by breadth-first search over
/// (cell, heading). Collisions are pruned.
pub fn bfs_path_len(world: &SimWorld) -> Option<usize> {
    let start = world.robot;
    let mut dist: HashMap<Pose, usize> = HashMap::from([(start, 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let d = dist[&p];
        if p.cell() == world.victim() {
            return Some(d);
        }
        for atom in [AtomMovement::Forward, AtomMovement::TurnLeft, AtomMovement::TurnRight] {
            let mut w = world.clone();
            w.robot = p;
            w.step(atom);
            if w.collision_count > world.collision_count {
                continue;
            }
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w.robot) {
                e.insert(d + 1);
                queue.push_back(w.robot);
            }
        }
    }
    None
}
