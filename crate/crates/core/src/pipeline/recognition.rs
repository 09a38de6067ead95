//! Place recognition evaluation.
//!
//! A query file is a labeled demonstration. It is cut into non-overlapping
//! windows of the model's sequence length, starting at its first frame;
//! each window's true place is the majority label of its frames. The model
//! answers with the label of its heaviest state and a confidence score, the
//! share of the total group mass held by that state. Sweeping a threshold
//! over the scores gives a precision-recall curve.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::demo::{DemoMeta, Demonstration};
use super::train::{TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::features::Frame;
use crate::mdp::{value_iteration, AtomMovement, MdpModel, TransitionModel};
use crate::sim::{render, Heading, SimWorld};
use crate::state::{argmax, window_from_features, StateSpace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub truth: String,
    pub predicted: Option<String>,
    /// Mass share of the winning state, in `[0, 1]`.
    pub score: f64,
}

impl QueryOutcome {
    pub fn correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.truth.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Labeled windows of `l` frames from a query demonstration.
pub fn query_windows(query: &Demonstration, l: usize) -> Result<Vec<(Vec<Frame>, String)>> {
    let labels = query
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("query from {:?} has no labels", query.meta.world)))?;
    Ok(query
        .frames
        .chunks_exact(l)
        .zip(labels.chunks_exact(l))
        .map(|(frames, labels)| {
            let mut names: Vec<&str> = labels.iter().map(String::as_str).collect();
            names.sort_unstable();
            let mut best = (names[0], 0);
            let mut i = 0;
            while i < names.len() {
                let run = names[i..].iter().take_while(|&&n| n == names[i]).count();
                if run > best.1 {
                    best = (names[i], run);
                }
                i += run;
            }
            (frames.to_vec(), best.0.to_string())
        })
        .collect())
}

/// Answers one window.
pub fn recognize(model: &TrainedModel, frames: &[Frame]) -> Result<(usize, f64)> {
    let masses = model.masses(frames)?;
    let state = argmax(&masses).expect("non-empty state space");
    let total: f64 = masses.iter().sum();
    let score = if total > 0.0 { masses[state] / total } else { 0.0 };
    Ok((state, score))
}

/// Runs every query window through the model, in parallel over windows.
pub fn evaluate(model: &TrainedModel, queries: &[Demonstration]) -> Result<Vec<QueryOutcome>> {
    let l = model.seq_len();
    let mut windows = Vec::new();
    for q in queries {
        windows.extend(query_windows(q, l)?);
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(windows.len().max(1));
    let chunk = windows.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<QueryOutcome>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(frames, truth)| {
                            let (state, score) = recognize(model, frames)?;
                            Ok(QueryOutcome {
                                truth: truth.clone(),
                                predicted: model.state_labels[state].clone(),
                                score,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("recognition worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(windows.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Share of correct top-1 answers.
pub fn accuracy(outcomes: &[QueryOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.correct()).count() as f64 / outcomes.len() as f64
}

/// One point per distinct score, from the strictest threshold down.
///
/// At threshold `t` the answers with `score >= t` are accepted; precision is
/// the correct share of the accepted answers, recall the number of correct
/// accepted answers over all queries.
pub fn precision_recall(outcomes: &[QueryOutcome]) -> Vec<PrPoint> {
    let mut sorted: Vec<&QueryOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let total = outcomes.len() as f64;
    let mut points = Vec::new();
    let (mut accepted, mut correct) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            accepted += 1;
            correct += usize::from(sorted[i].correct());
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: correct as f64 / accepted as f64,
            recall: correct as f64 / total,
        });
    }
    points
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
    }
    out
}

/// A model holding one state per window of the given labeled sequences and
/// no actions: the reference database for recognition experiments.
pub fn template_model(sequences: &[Demonstration], cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut space = StateSpace::new(cfg.modality.feature_len(), cfg.seq_len)?;
    let mut state_labels = Vec::new();
    for seq in sequences {
        for (frames, label) in query_windows(seq, cfg.seq_len)? {
            let features = frames.iter().map(|f| crate::features::encode(f, &cfg.modality)).collect::<Result<Vec<_>>>()?;
            space.enroll(&window_from_features(&features)?)?;
            state_labels.push(Some(label));
        }
    }
    let n = space.len();
    let mdp = MdpModel::new(n, Vec::new(), TransitionModel::from_rows(n, 0, [])?, cfg.irl.gamma)?;
    let policy = value_iteration(&mdp, super::train::VALUE_TOLERANCE)?;
    Ok(TrainedModel {
        config: *cfg,
        space,
        mdp,
        policy,
        state_reward: vec![0.0; n],
        reward_degenerate: true,
        end_states: BTreeSet::new(),
        state_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    /// Distinct places.
    pub scenes: usize,
    /// Frames per place.
    pub seq_len: usize,
    /// Frames of every place that also appear in a partner place.
    pub aliased_per_scene: usize,
    pub queries_per_scene: usize,
    /// Maximum per-channel noise added to query frames, in 8-bit steps.
    pub noise: u8,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { scenes: 20, seq_len: 6, aliased_per_scene: 2, queries_per_scene: 10, noise: 12, seed: 1 }
    }
}

/// Reference sequences and noisy labeled queries with perceptual aliasing.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenes: Vec<Demonstration>,
    pub queries: Vec<Demonstration>,
}

impl Corpus {
    /// Fraction of reference frames that also occur in another place.
    pub fn aliased_fraction(&self) -> f64 {
        let frames: Vec<(usize, &Frame)> =
            self.scenes.iter().enumerate().flat_map(|(i, s)| s.frames.iter().map(move |f| (i, f))).collect();
        let aliased = frames
            .iter()
            .filter(|(i, f)| frames.iter().any(|(j, g)| j != i && g == f))
            .count();
        aliased as f64 / frames.len().max(1) as f64
    }
}

fn scene_label(i: usize) -> String {
    format!("place-{i:02}")
}

/// Walks `len - 1` cells down an open textured corridor, far enough from
/// the victim never to see it.
fn corridor_walk(seed: u64, len: usize) -> Result<Vec<Frame>> {
    let rows = len + 6;
    let mut text = String::new();
    for y in 0..rows {
        text.push_str(if y == 0 { ".V.\n" } else if y == rows - 1 { ".R.\n" } else { "...\n" });
    }
    text.push_str(&format!("heading N\nseed {seed}\n"));
    let mut world = SimWorld::parse(&text)?;
    let mut frames = vec![render(&world)];
    for _ in 1..len {
        world.step(AtomMovement::Forward);
        frames.push(render(&world));
    }
    Ok(frames)
}

fn add_noise(frame: &Frame, noise: u8, rng: &mut ChaCha8Rng) -> Result<Frame> {
    let n = i16::from(noise);
    let rgb: Vec<u8> = frame
        .to_rgb8()
        .into_iter()
        .map(|c| (i16::from(c) + rng.gen_range(-n..=n)).clamp(0, 255) as u8)
        .collect();
    Frame::from_rgb8(frame.width(), frame.height(), &rgb)
}

fn labeled(frames: Vec<Frame>, label: &str, name: String, seed: u64) -> Demonstration {
    let n = frames.len();
    Demonstration {
        frames,
        k_stream: vec![AtomMovement::Forward; n - 1],
        labels: Some(vec![label.to_string(); n]),
        meta: DemoMeta { world: name, seed, timestamp: 0, truncated: false, start: (1, 0, Heading::N) },
    }
}

/// Generates an aliased corpus.
///
/// Every place is a forward walk through its own randomly textured
/// corridor. Places are paired, and `aliased_per_scene` frames of each odd
/// place are replaced by frames of its even partner, so those frames are
/// identical in two different places. Queries re-observe a place with
/// per-pixel noise.
pub fn aliased_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.scenes < 2 || cfg.seq_len < 2 || cfg.aliased_per_scene > cfg.seq_len {
        return Err(Error::invalid("corpus needs at least two places of two frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut places: Vec<Vec<Frame>> = (0..cfg.scenes)
        .map(|_| corridor_walk(rng.gen(), cfg.seq_len))
        .collect::<Result<_>>()?;
    for pair in 0..cfg.scenes / 2 {
        let (even, odd) = (2 * pair, 2 * pair + 1);
        let mut slots: Vec<usize> = (0..cfg.seq_len).collect();
        for i in 0..cfg.aliased_per_scene {
            let j = rng.gen_range(i..slots.len());
            slots.swap(i, j);
        }
        let mut sources: Vec<usize> = (0..cfg.seq_len).collect();
        for i in 0..cfg.aliased_per_scene {
            let j = rng.gen_range(i..sources.len());
            sources.swap(i, j);
        }
        for i in 0..cfg.aliased_per_scene {
            places[odd][slots[i]] = places[even][sources[i]].clone();
        }
    }

    let scenes = places
        .iter()
        .enumerate()
        .map(|(i, frames)| labeled(frames.clone(), &scene_label(i), format!("corpus/{}", scene_label(i)), cfg.seed))
        .collect();
    let mut queries = Vec::new();
    for (i, frames) in places.iter().enumerate() {
        for q in 0..cfg.queries_per_scene {
            let noisy = frames.iter().map(|f| add_noise(f, cfg.noise, &mut rng)).collect::<Result<Vec<_>>>()?;
            queries.push(labeled(noisy, &scene_label(i), format!("corpus/{}-q{q:02}", scene_label(i)), cfg.seed));
        }
    }
    Ok(Corpus { scenes, queries })
}
