//! Random-walk data collection and the `.tsd` dataset file.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "SLOWTSD\0"
//! version      u32       1
//! layout       u8        layout code
//! target       u8        1 if the target cube was rendered
//! reserved     u16       0
//! seed         u64
//! T            u64       number of steps
//! H, W, C      3 × u32   frame shape (60, 80, 3)
//! n_bound      u64
//! boundaries   n_bound × u64
//! frames       T·H·W·C bytes
//! poses        T × 3 × f64   (x, y, heading)
//! actions      T × u8
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::{Action, NavEnv, Pose};
use super::layout::{Layout, LayoutKind};
use super::render::{render_into, Frame, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_LEN, FRAME_WIDTH};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLOWTSD\0";
pub const TSD_VERSION: u32 = 1;

/// Recorded observations with poses, actions and episode starts.
///
/// `actions[t]` is the action chosen after observing frame `t`. Boundaries
/// are the indices at which a new episode starts (never 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub layout: LayoutKind,
    pub seed: u64,
    pub target_present: bool,
    frames: Vec<u8>,
    poses: Vec<Pose>,
    actions: Vec<Action>,
    boundaries: Vec<usize>,
}

impl TimeSeriesDataset {
    pub fn new(
        layout: LayoutKind,
        seed: u64,
        target_present: bool,
        frames: Vec<u8>,
        poses: Vec<Pose>,
        actions: Vec<Action>,
        boundaries: Vec<usize>,
    ) -> Result<Self> {
        let t = poses.len();
        if frames.len() != t * FRAME_LEN {
            return Err(Error::DimensionMismatch {
                what: "dataset frame bytes",
                expected: t * FRAME_LEN,
                found: frames.len(),
            });
        }
        if actions.len() != t {
            return Err(Error::DimensionMismatch {
                what: "dataset actions",
                expected: t,
                found: actions.len(),
            });
        }
        let mut prev = 0;
        for &b in &boundaries {
            if b <= prev || b >= t {
                return Err(Error::BoundaryOutOfRange {
                    boundary: b,
                    len: t,
                });
            }
            prev = b;
        }
        Ok(Self {
            layout,
            seed,
            target_present,
            frames,
            poses,
            actions,
            boundaries,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.frames[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }

    pub fn frame_owned(&self, t: usize) -> Frame {
        Frame::from_bytes(self.frame(t).to_vec()).expect("stored frames have frame size")
    }

    pub fn frames(&self) -> &[u8] {
        &self.frames
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_ids(&self) -> Vec<u8> {
        self.actions.iter().map(|a| a.id()).collect()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Steps `range`, with boundaries shifted accordingly.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let (a, b) = (range.start, range.end);
        assert!(a < b && b <= self.len(), "dataset slice out of range");
        Self {
            layout: self.layout,
            seed: self.seed,
            target_present: self.target_present,
            frames: self.frames[a * FRAME_LEN..b * FRAME_LEN].to_vec(),
            poses: self.poses[a..b].to_vec(),
            actions: self.actions[a..b].to_vec(),
            boundaries: self
                .boundaries
                .iter()
                .filter(|&&x| x > a && x < b)
                .map(|&x| x - a)
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(TSD_VERSION)?;
        w.write_u8(self.layout.code())?;
        w.write_u8(self.target_present as u8)?;
        w.write_u16::<LittleEndian>(0)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        for d in [FRAME_HEIGHT, FRAME_WIDTH, FRAME_CHANNELS] {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u64::<LittleEndian>(self.boundaries.len() as u64)?;
        for &b in &self.boundaries {
            w.write_u64::<LittleEndian>(b as u64)?;
        }
        w.write_all(&self.frames)?;
        for p in &self.poses {
            w.write_f64::<LittleEndian>(p.x)?;
            w.write_f64::<LittleEndian>(p.y)?;
            w.write_f64::<LittleEndian>(p.heading)?;
        }
        let ids: Vec<u8> = self.action_ids();
        w.write_all(&ids)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not a dataset file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != TSD_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: TSD_VERSION,
            });
        }
        let code = r.read_u8()?;
        let layout = LayoutKind::from_code(code)
            .ok_or_else(|| Error::Corrupt(format!("unknown layout code {code}")))?;
        let target_present = match r.read_u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Corrupt(format!("bad target flag {v}"))),
        };
        let _reserved = r.read_u16::<LittleEndian>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let t = r.read_u64::<LittleEndian>()? as usize;
        let shape = [
            r.read_u32::<LittleEndian>()? as usize,
            r.read_u32::<LittleEndian>()? as usize,
            r.read_u32::<LittleEndian>()? as usize,
        ];
        if shape != [FRAME_HEIGHT, FRAME_WIDTH, FRAME_CHANNELS] {
            return Err(Error::Corrupt(format!("unexpected frame shape {shape:?}")));
        }
        let nb = r.read_u64::<LittleEndian>()? as usize;
        if nb > t {
            return Err(Error::Corrupt("more boundaries than steps".into()));
        }
        let mut boundaries = Vec::with_capacity(nb);
        for _ in 0..nb {
            boundaries.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let frame_bytes = t
            .checked_mul(FRAME_LEN)
            .ok_or_else(|| Error::Corrupt("step count overflows".into()))?;
        let mut frames = Vec::new();
        r.take(frame_bytes as u64).read_to_end(&mut frames)?;
        if frames.len() != frame_bytes {
            return Err(Error::Corrupt("unexpected end of file".into()));
        }
        let mut poses = Vec::with_capacity(t);
        for _ in 0..t {
            let x = r.read_f64::<LittleEndian>()?;
            let y = r.read_f64::<LittleEndian>()?;
            let heading = r.read_f64::<LittleEndian>()?;
            poses.push(Pose { x, y, heading });
        }
        let mut ids = vec![0u8; t];
        r.read_exact(&mut ids)?;
        let actions = ids
            .into_iter()
            .map(Action::from_id)
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::Corrupt("bad action id".into()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after dataset".into()));
        }
        Self::new(
            layout,
            seed,
            target_present,
            frames,
            poses,
            actions,
            boundaries,
        )
        .map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// Poses and actions of a uniform random walk, without rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub targets: Vec<Option<super::geometry::Vec2>>,
    pub boundaries: Vec<usize>,
}

/// Uniform random actions with a reset every `reset_every` steps. Resets
/// place the agent uniformly over the whole free area with a random heading;
/// with `target_present` the target follows the layout's placement rule.
pub fn random_walk(
    layout: &Arc<Layout>,
    n_steps: usize,
    reset_every: usize,
    seed: u64,
    target_present: bool,
) -> Walk {
    let reset_every = reset_every.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = if target_present {
        NavEnv::new(Arc::clone(layout), rng.gen())
    } else {
        NavEnv::empty(Arc::clone(layout), rng.gen())
    };
    let agent_r = layout.config().agent_radius;
    let respawn = |env: &mut NavEnv, rng: &mut ChaCha8Rng| {
        env.reset_state();
        let p = layout.sample_in(rng, layout.boundary(), agent_r);
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let target = env.target();
        env.set_state(Pose::new(p.x, p.y, heading), target)
            .expect("sampled spawn is free");
    };
    respawn(&mut env, &mut rng);

    let mut walk = Walk {
        poses: Vec::with_capacity(n_steps),
        actions: Vec::with_capacity(n_steps),
        targets: Vec::with_capacity(n_steps),
        boundaries: Vec::new(),
    };
    for t in 0..n_steps {
        walk.poses.push(env.pose());
        walk.targets.push(env.target());
        let action = Action::ALL[rng.gen_range(0..Action::COUNT)];
        walk.actions.push(action);
        if (t + 1) % reset_every == 0 {
            if t + 1 < n_steps {
                walk.boundaries.push(t + 1);
            }
            respawn(&mut env, &mut rng);
        } else {
            // Contact with the target is ignored while collecting.
            env.apply_motion(action);
        }
    }
    walk
}

/// Random-walk dataset with rendered frames.
pub fn collect_random(
    layout: &Arc<Layout>,
    n_steps: usize,
    reset_every: usize,
    seed: u64,
    target_present: bool,
) -> TimeSeriesDataset {
    let walk = random_walk(layout, n_steps, reset_every, seed, target_present);
    let mut frames = vec![0u8; n_steps * FRAME_LEN];
    for (t, chunk) in frames.chunks_exact_mut(FRAME_LEN).enumerate() {
        render_into(layout, walk.poses[t], walk.targets[t], chunk);
    }
    TimeSeriesDataset::new(
        layout.kind(),
        seed,
        target_present,
        frames,
        walk.poses,
        walk.actions,
        walk.boundaries,
    )
    .expect("walk produces consistent records")
}

/// Occupancy of a `bins × bins` grid over the layout's bounding box: returns
/// `(visited free bins, free bins)`. A bin is free if its center is.
pub fn occupancy(layout: &Layout, poses: &[Pose], bins: usize) -> (usize, usize) {
    let (lo, hi) = layout.bounds();
    let (w, h) = ((hi.x - lo.x) / bins as f64, (hi.y - lo.y) / bins as f64);
    let mut visited = vec![false; bins * bins];
    for p in poses {
        let i = (((p.x - lo.x) / w) as usize).min(bins - 1);
        let j = (((p.y - lo.y) / h) as usize).min(bins - 1);
        visited[j * bins + i] = true;
    }
    let mut free = 0;
    let mut hit = 0;
    for j in 0..bins {
        for i in 0..bins {
            let c = super::geometry::Vec2::new(
                lo.x + (i as f64 + 0.5) * w,
                lo.y + (j as f64 + 0.5) * h,
            );
            if layout.is_free(c) {
                free += 1;
                hit += visited[j * bins + i] as usize;
            }
        }
    }
    (hit, free)
}
