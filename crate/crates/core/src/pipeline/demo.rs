//! Demonstrations and their on-disk form.
//!
//! A demonstration file is JSON Lines. The first line is a header:
//!
//! ```text
//! {"format":"smal-demo","version":1,"world":"maps/a.world","seed":7,
//!  "timestamp":1760000000,"truncated":false,"start":[1,1,"E"],"frame_size":[32,32]}
//! ```
//!
//! followed by one record per step. Step 0 is the observation before any
//! movement and has `"atom":null`; step `i` holds the atom executed `i`-th
//! and the frame observed after it. Frames are base64 PNG. An optional
//! `"label"` names the place a frame was taken at (used by recognition
//! evaluation).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Frame;
use crate::mdp::AtomMovement;
use crate::sim::{render, scripted_expert, Heading, SimWorld};

pub const DEMO_FORMAT: &str = "smal-demo";
pub const DEMO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    /// World file (or a free-form description) the demo was recorded in.
    pub world: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// The recording ended early, e.g. the operator disconnected.
    pub truncated: bool,
    pub start: (usize, usize, Heading),
}

impl DemoMeta {
    pub fn for_world(world: &SimWorld, name: impl Into<String>) -> Self {
        let start = world.robot;
        Self {
            world: name.into(),
            seed: world.seed(),
            timestamp: now(),
            truncated: false,
            start: (start.x, start.y, start.heading),
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Synchronized frame and atom streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// `frames[0]` precedes the first atom, `frames[i]` follows atom `i - 1`.
    pub frames: Vec<Frame>,
    pub k_stream: Vec<AtomMovement>,
    /// Optional place label per frame.
    pub labels: Option<Vec<String>>,
    pub meta: DemoMeta,
}

impl Demonstration {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.k_stream.len() + 1 {
            return Err(Error::invalid(format!(
                "demonstration has {} frames for {} atoms",
                self.frames.len(),
                self.k_stream.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.frames.len() {
                return Err(Error::invalid("one label per frame required"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        self.validate()?;
        let first = self.frames.first().expect("validated demo has a frame");
        let header = FileHeader {
            format: DEMO_FORMAT.into(),
            version: DEMO_VERSION,
            meta: self.meta.clone(),
            frame_size: (first.width(), first.height()),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for (step, frame) in self.frames.iter().enumerate() {
            let record = StepRecord {
                step,
                atom: step.checked_sub(1).map(|i| self.k_stream[i]),
                png_base64: BASE64.encode(frame.to_png()?),
                label: self.labels.as_ref().map(|l| l[step].clone()),
            };
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path)?), path)
    }

    pub fn read_from(input: impl BufRead, path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| corrupt("empty file".into()))??;
        let header: FileHeader =
            serde_json::from_str(&header_line).map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format != DEMO_FORMAT {
            return Err(corrupt(format!("not a demonstration file (format {:?})", header.format)));
        }
        if header.version != DEMO_VERSION {
            return Err(Error::VersionMismatch { found: header.version, expected: DEMO_VERSION });
        }
        let mut frames = Vec::new();
        let mut k_stream = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(format!("step {}: {e}", frames.len())))?;
            if record.step != frames.len() {
                return Err(corrupt(format!("expected step {}, found {}", frames.len(), record.step)));
            }
            match (record.step, record.atom) {
                (0, None) => {}
                (0, Some(_)) => return Err(corrupt("step 0 must not carry an atom".into())),
                (_, Some(atom)) => k_stream.push(atom),
                (s, None) => return Err(corrupt(format!("step {s} has no atom"))),
            }
            let png = BASE64.decode(&record.png_base64).map_err(|e| corrupt(format!("step {}: {e}", record.step)))?;
            let frame = Frame::from_png(&png).map_err(|e| corrupt(format!("step {}: {e}", record.step)))?;
            if (frame.width(), frame.height()) != header.frame_size {
                return Err(corrupt(format!("step {} has a different frame size", record.step)));
            }
            frames.push(frame);
            labels.push(record.label);
        }
        if frames.is_empty() {
            return Err(corrupt("no steps".into()));
        }
        let labels = if labels.iter().all(Option::is_some) {
            Some(labels.into_iter().map(Option::unwrap).collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(corrupt("labels present on some steps only".into()));
        };
        Ok(Self { frames, k_stream, labels, meta: header.meta })
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: DemoMeta,
    frame_size: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    step: usize,
    atom: Option<AtomMovement>,
    png_base64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Records a live session atom by atom.
#[derive(Debug, Clone)]
pub struct Recorder {
    demo: Demonstration,
}

impl Recorder {
    /// Starts recording at the world's current pose.
    pub fn start(world: &SimWorld, name: impl Into<String>) -> Self {
        let demo = Demonstration {
            frames: vec![render(world)],
            k_stream: Vec::new(),
            labels: None,
            meta: DemoMeta::for_world(world, name),
        };
        Self { demo }
    }

    /// Logs an atom that was just applied to `world`.
    pub fn record(&mut self, atom: AtomMovement, world: &SimWorld) {
        self.demo.k_stream.push(atom);
        self.demo.frames.push(render(world));
    }

    pub fn len(&self) -> usize {
        self.demo.k_stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demo.k_stream.is_empty()
    }

    /// Ends the recording; `truncated` marks an interrupted session.
    pub fn finish(mut self, truncated: bool) -> Demonstration {
        self.demo.meta.truncated = truncated;
        self.demo
    }
}

/// Options for [`record_scripted`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScriptedOptions {
    /// Left turns appended after reaching the victim, as an operator
    /// looking around the victim cell would.
    pub scan_turns: usize,
}

/// Drives `world` (from its current pose) along the scripted expert's
/// shortest path and records what the robot sees.
pub fn record_scripted(world: &mut SimWorld, name: impl Into<String>, opts: ScriptedOptions) -> Result<Demonstration> {
    let mut atoms = scripted_expert(world)?;
    atoms.extend(std::iter::repeat(AtomMovement::TurnLeft).take(opts.scan_turns));
    let mut rec = Recorder::start(world, name);
    for atom in atoms {
        world.step(atom);
        rec.record(atom, world);
    }
    Ok(rec.finish(false))
}

/// Demonstration files (`*.jsonl`) in `dir`, sorted by file name.
pub fn demo_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_demos(dir: impl AsRef<Path>) -> Result<Vec<Demonstration>> {
    demo_files(dir)?.iter().map(Demonstration::load).collect()
}
