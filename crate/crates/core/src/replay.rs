//! FIFO transition store with uniform sampling and sample-time augmentation.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, RngCore};

use miniurban::{Observation, FRAME_STACK, NUM_WAYPOINTS};
use rlad_tensor::Tensor;

use crate::encoders::{augment, ObsBatch, AUG_PAD};
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f32; 2],
    pub reward: f32,
    pub next_obs: Observation,
    /// Ended by a failure; the bootstrap is cut.
    pub terminal: bool,
    /// Ended by the time limit; the bootstrap is kept.
    pub truncated: bool,
    /// Traffic-light class of `obs`.
    pub label: u8,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if !self.reward.is_finite() {
            return Err(Error::Data(format!("non-finite reward {}", self.reward)));
        }
        if self.label as usize >= crate::agent::NUM_LIGHT_CLASSES {
            return Err(Error::Data(format!(
                "traffic-light label {} out of range",
                self.label
            )));
        }
        if self.terminal && self.truncated {
            return Err(Error::Data(
                "transition is both terminal and truncated".into(),
            ));
        }
        if self.action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Data("non-finite action".into()));
        }
        if self.obs.resolution != self.next_obs.resolution {
            return Err(Error::Data(
                "observation resolutions differ within a transition".into(),
            ));
        }
        Ok(())
    }
}

/// A sampled minibatch, images scaled to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: ObsBatch,
    pub next_obs: ObsBatch,
    /// `[B, 2]`.
    pub actions: Tensor,
    pub rewards: Vec<f32>,
    /// `0` for terminal transitions, `1` otherwise.
    pub not_done: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Stacks transitions without augmentation.
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let obs: Vec<_> = items.iter().map(|t| &t.obs).collect();
        let next: Vec<_> = items.iter().map(|t| &t.next_obs).collect();
        Self {
            obs: ObsBatch::from_observations(&obs),
            next_obs: ObsBatch::from_observations(&next),
            actions: Tensor::from_parts(
                &[items.len(), 2],
                items.iter().flat_map(|t| t.action).collect(),
            ),
            rewards: items.iter().map(|t| t.reward).collect(),
            not_done: items
                .iter()
                .map(|t| if t.terminal { 0.0 } else { 1.0 })
                .collect(),
            labels: items.iter().map(|t| t.label as usize).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, count: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        if self.items.len() < count.max(1) {
            return Err(Error::NotReady {
                have: self.items.len(),
                need: count.max(1),
            });
        }
        Ok((0..count)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    /// Samples `count` transitions. With an augmentation stream, current and
    /// next images get independent random shifts drawn from it.
    pub fn sample(
        &self,
        count: usize,
        rng: &mut dyn RngCore,
        augment_rng: Option<&mut dyn RngCore>,
    ) -> Result<Batch> {
        let idx = self.sample_indices(count, rng)?;
        let items: Vec<_> = idx.iter().map(|&i| &self.items[i]).collect();
        let mut batch = Batch::from_transitions(&items);
        if let Some(aug) = augment_rng {
            batch.obs.images = augment(&batch.obs.images, AUG_PAD, aug);
            batch.next_obs.images = augment(&batch.next_obs.images, AUG_PAD, aug);
        }
        Ok(batch)
    }
}

const SPILL_MAGIC: &[u8; 8] = b"RLADRPL\0";
pub const SPILL_VERSION: u32 = 1;

/// Header of the on-disk transition log. All integers little-endian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpillHeader {
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub frame_stack: u32,
    pub waypoints: u32,
}

/// Writes transitions as a header followed by fixed-size records.
pub fn write_spill<'a>(
    mut w: impl Write,
    resolution: usize,
    items: impl IntoIterator<Item = &'a Transition>,
) -> Result<u64> {
    w.write_all(SPILL_MAGIC)?;
    for v in [
        SPILL_VERSION,
        resolution as u32,
        resolution as u32,
        FRAME_STACK as u32,
        NUM_WAYPOINTS as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut n = 0;
    for t in items {
        if t.obs.resolution != resolution {
            return Err(Error::Data(format!(
                "transition at {} px in a {resolution} px log",
                t.obs.resolution
            )));
        }
        write_obs(&mut w, &t.obs)?;
        for a in t.action {
            w.write_all(&a.to_le_bytes())?;
        }
        w.write_all(&t.reward.to_le_bytes())?;
        w.write_all(&[t.terminal as u8 | (t.truncated as u8) << 1, t.label])?;
        write_obs(&mut w, &t.next_obs)?;
        n += 1;
    }
    Ok(n)
}

fn write_obs(w: &mut impl Write, o: &Observation) -> Result<()> {
    for f in &o.frames {
        w.write_all(f)?;
    }
    for v in o.waypoints.iter().chain(&o.measurements).flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a log produced by [`write_spill`].
pub fn read_spill(mut r: impl Read) -> Result<(SpillHeader, Vec<Transition>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SPILL_MAGIC {
        return Err(Error::Data("not a transition log".into()));
    }
    let mut u = [0u32; 5];
    for v in &mut u {
        *v = read_u32(&mut r)?;
    }
    let header = SpillHeader {
        version: u[0],
        height: u[1],
        width: u[2],
        frame_stack: u[3],
        waypoints: u[4],
    };
    if header.version != SPILL_VERSION {
        return Err(Error::Data(format!(
            "transition log version {} (supported: {SPILL_VERSION})",
            header.version
        )));
    }
    if header.height != header.width
        || header.frame_stack as usize != FRAME_STACK
        || header.waypoints as usize != NUM_WAYPOINTS
    {
        return Err(Error::Data(format!(
            "incompatible transition log layout {header:?}"
        )));
    }
    let res = header.height as usize;
    let mut items = Vec::new();
    loop {
        let obs = match read_obs(&mut r, res) {
            Ok(o) => o,
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        };
        let action = [read_f32(&mut r)?, read_f32(&mut r)?];
        let reward = read_f32(&mut r)?;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let next_obs = read_obs(&mut r, res)?;
        let t = Transition {
            obs,
            action,
            reward,
            next_obs,
            terminal: flags[0] & 1 != 0,
            truncated: flags[0] & 2 != 0,
            label: flags[1],
        };
        t.validate()?;
        items.push(t);
    }
    Ok((header, items))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_obs(r: &mut impl Read, res: usize) -> Result<Observation> {
    let mut frames: Vec<miniurban::Frame> = Vec::with_capacity(FRAME_STACK);
    for _ in 0..FRAME_STACK {
        let mut buf = vec![0u8; 3 * res * res];
        r.read_exact(&mut buf)?;
        frames.push(Arc::from(buf));
    }
    let mut waypoints = [[0.0f32; 2]; NUM_WAYPOINTS];
    for p in &mut waypoints {
        *p = [read_f32(r)?, read_f32(r)?];
    }
    let mut measurements = [[0.0f32; 2]; FRAME_STACK];
    for m in &mut measurements {
        *m = [read_f32(r)?, read_f32(r)?];
    }
    Ok(Observation {
        resolution: res,
        frames: frames.try_into().expect("frame count"),
        waypoints,
        measurements,
    })
}
