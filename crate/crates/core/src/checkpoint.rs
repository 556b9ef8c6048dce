//! Versioned binary agent checkpoints.
//!
//! Layout (little-endian): magic, format version, agent config as JSON,
//! update counter, every parameter by name, then the moments of each
//! optimizer keyed by parameter name. Writing is deterministic, so
//! save → load → save reproduces the file byte for byte.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rlad_tensor::{Module, Moments, Tensor};

use crate::agent::{Agent, AgentConfig, Optimizers};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RLADCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(agent: &Agent, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(agent, &mut w)?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn write(agent: &Agent, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_bytes(w, &serde_json::to_vec(&agent.config)?)?;
    w.write_all(&agent.updates.to_le_bytes())?;
    let params = agent.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in &params {
        write_bytes(w, name.as_bytes())?;
        write_tensor(w, &p.value)?;
    }
    let groups = agent.optimizer_groups();
    w.write_all(&(groups.len() as u32).to_le_bytes())?;
    for (opt_name, adam, members) in &groups {
        write_bytes(w, opt_name.as_bytes())?;
        let with_state: Vec<_> = members
            .iter()
            .filter_map(|(n, p)| adam.moments(p).map(|m| (n, m)))
            .collect();
        w.write_all(&(with_state.len() as u32).to_le_bytes())?;
        for (name, m) in with_state {
            write_bytes(w, name.as_bytes())?;
            w.write_all(&m.steps.to_le_bytes())?;
            write_tensor(w, &m.m)?;
            write_tensor(w, &m.v)?;
        }
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Agent> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read(&mut r)
}

/// Loads a checkpoint and checks that its agent config matches `expected` in
/// every field that fixes the parameter shapes.
pub fn load_matching(path: impl AsRef<Path>, expected: &AgentConfig) -> Result<Agent> {
    let agent = load(path)?;
    check_compatible(&agent.config, expected)?;
    Ok(agent)
}

pub fn check_compatible(found: &AgentConfig, expected: &AgentConfig) -> Result<()> {
    let mismatch = |field: &str, a: String, b: String| {
        Err(Error::Config(format!(
            "checkpoint field `{field}` is {a} but the run config has {b}"
        )))
    };
    if found.resolution != expected.resolution {
        return mismatch(
            "resolution",
            found.resolution.to_string(),
            expected.resolution.to_string(),
        );
    }
    if found.hidden != expected.hidden {
        return mismatch(
            "hidden",
            found.hidden.to_string(),
            expected.hidden.to_string(),
        );
    }
    if found.waypoint_encoder != expected.waypoint_encoder {
        return mismatch(
            "waypoint_encoder",
            format!("{:?}", found.waypoint_encoder),
            format!("{:?}", expected.waypoint_encoder),
        );
    }
    Ok(())
}

pub fn read(r: &mut impl Read) -> Result<Agent> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not an agent checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let config: AgentConfig = serde_json::from_slice(&read_bytes(r)?)?;
    // Every value is overwritten below; the seed only fixes the build order.
    let mut agent = Agent::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    agent.updates = read_u64(r)?;

    let n = read_u32(r)? as usize;
    let mut stored = HashMap::with_capacity(n);
    for _ in 0..n {
        let name = read_string(r)?;
        let t = read_tensor(r)?;
        stored.insert(name, t);
    }
    for (name, p) in agent.named_params_mut() {
        let t = stored.remove(&name).ok_or_else(|| {
            Error::Checkpoint(format!("parameter `{name}` missing from checkpoint"))
        })?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?} in the checkpoint, expected {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!(
            "unexpected parameter `{extra}` in checkpoint"
        )));
    }

    let groups = read_u32(r)? as usize;
    for _ in 0..groups {
        let opt_name = read_string(r)?;
        if !Optimizers::NAMES.contains(&opt_name.as_str()) {
            return Err(Error::Checkpoint(format!("unknown optimizer `{opt_name}`")));
        }
        let entries = read_u32(r)? as usize;
        let mut moments = Vec::with_capacity(entries);
        for _ in 0..entries {
            let name = read_string(r)?;
            let steps = read_u64(r)?;
            let m = read_tensor(r)?;
            let v = read_tensor(r)?;
            moments.push((name, Moments { m, v, steps }));
        }
        let params: HashMap<String, _> = agent
            .named_params()
            .into_iter()
            .map(|(n, p)| (n, (p.id(), p.value.shape().to_vec())))
            .collect();
        let adam = agent.optimizer_mut(&opt_name).expect("checked above");
        for (name, m) in moments {
            let p = params.get(&name).ok_or_else(|| {
                Error::Checkpoint(format!("optimizer state for unknown parameter `{name}`"))
            })?;
            if m.m.shape() != p.1.as_slice() || m.v.shape() != p.1.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state for `{name}` has the wrong shape"
                )));
            }
            adam.set_moments_by_id(p.0, m);
        }
    }
    Ok(agent)
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&[t.shape().len() as u8])?;
    for d in t.shape() {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * t.numel());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible record length {n}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(read_bytes(r)?).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let mut shape = Vec::with_capacity(nd[0] as usize);
    for _ in 0..nd[0] {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    if numel > 1 << 28 {
        return Err(Error::Checkpoint(format!(
            "implausible tensor shape {shape:?}"
        )));
    }
    let mut buf = vec![0u8; 4 * numel];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_parts(&shape, data))
}
