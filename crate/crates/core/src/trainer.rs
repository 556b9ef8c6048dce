//! Training loop: collection with action repeat, one agent update per
//! collected step after warmup, periodic evaluation and checkpoints.
//!
//! A run directory holds `config.toml`, `metrics.jsonl` (deterministic given
//! the config), `progress.jsonl` (wall-clock), and `checkpoints/`.

use std::fs;
use std::io::{LineWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use miniurban::{MiniUrban, ScenarioConfig, DT};

use crate::agent::{Agent, AgentConfig, UpdateMetrics};
use crate::bench::{run_episode, EpisodeResult, EpisodeSettings};
use crate::checkpoint;
use crate::control::{policy_to_command, Pid, PidGains};
use crate::encoders::WaypointEncoderKind;
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Environment steps, counting every repeated step.
    pub total_steps: u64,
    /// Uniform-random steps collected before learning starts.
    pub warmup_steps: u64,
    pub action_repeat: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub augment: bool,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Evaluation episode `i` uses seed `eval_seed + i`.
    pub eval_seed: u64,
    /// Also evaluate the untrained policy at step 0.
    pub eval_at_start: bool,
    /// Environment steps between averaged update records.
    pub log_interval: u64,
    pub agent: AgentConfig,
    pub pid: PidGains,
    pub env: ScenarioConfig,
    /// Evaluation scenario; the training one when absent.
    pub eval_env: Option<ScenarioConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 1_000_000,
            warmup_steps: 1000,
            action_repeat: 2,
            batch_size: 256,
            replay_capacity: crate::replay::DEFAULT_CAPACITY,
            augment: true,
            eval_interval: 20_000,
            eval_episodes: 10,
            eval_seed: 1_000_000,
            eval_at_start: false,
            log_interval: 1000,
            agent: AgentConfig::default(),
            pid: PidGains::default(),
            env: ScenarioConfig::default(),
            eval_env: None,
        }
    }
}

/// Component switches compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Flattened waypoints through an MLP instead of the sequence convolution.
    NoWayconv1d,
    NoAuxLoss,
    NoAlix,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoWayconv1d,
        Variant::NoAuxLoss,
        Variant::NoAlix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWayconv1d => "no-wayconv1d",
            Variant::NoAuxLoss => "no-aux-loss",
            Variant::NoAlix => "no-alix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected full, no-wayconv1d, no-aux-loss or no-alix)"
                ))
            })
    }

    pub fn apply(self, config: &mut RunConfig) {
        match self {
            Variant::Full => {}
            Variant::NoWayconv1d => config.agent.waypoint_encoder = WaypointEncoderKind::FlatMlp,
            Variant::NoAuxLoss => config.agent.use_aux_loss = false,
            Variant::NoAlix => config.agent.alix.enabled = false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn eval_scenario(&self) -> &ScenarioConfig {
        self.eval_env.as_ref().unwrap_or(&self.env)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.agent.validate()?;
        self.env.validate()?;
        if let Some(e) = &self.eval_env {
            e.validate()?;
        }
        for (name, v) in [
            ("total_steps", self.total_steps),
            ("eval_interval", self.eval_interval),
            ("log_interval", self.log_interval),
            ("action_repeat", self.action_repeat as u64),
            ("batch_size", self.batch_size as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("eval_episodes", self.eval_episodes as u64),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.eval_interval.is_multiple_of(self.action_repeat as u64) {
            return bad(format!(
                "eval_interval {} is not a multiple of action_repeat {}",
                self.eval_interval, self.action_repeat
            ));
        }
        for (name, s) in [("env", &self.env), ("eval_env", self.eval_scenario())] {
            if s.resolution != self.agent.resolution {
                return bad(format!(
                    "{name}.resolution {} differs from agent.resolution {}",
                    s.resolution, self.agent.resolution
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Episode,
    Update,
    Eval,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    pub step: u64,
    pub updates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<UpdateMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_return: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_success_rate: Option<f64>,
}

impl MetricsRecord {
    fn new(kind: RecordKind, step: u64, updates: u64) -> Self {
        Self {
            kind,
            step,
            updates,
            episode: None,
            episode_return: None,
            episode_length: None,
            termination: None,
            losses: None,
            eval_return: None,
            eval_success_rate: None,
        }
    }
}

/// Reads a metrics file.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// Deterministic-policy evaluation, no learning; the agent is not modified.
pub fn evaluate(
    agent: &Agent,
    scenario: &ScenarioConfig,
    seeds: &[u64],
    action_repeat: usize,
    pid: PidGains,
) -> Result<EvalSummary> {
    if agent.config.resolution != scenario.resolution {
        return Err(Error::Config(format!(
            "checkpoint field `resolution` is {} but the scenario renders at {}",
            agent.config.resolution, scenario.resolution
        )));
    }
    let mut env = MiniUrban::new(scenario.clone())?;
    let settings = EpisodeSettings {
        action_repeat,
        pid,
        stop_at_target: !scenario.renew_targets,
    };
    // Only consumed when A-LIX is configured to stay on at evaluation.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let episodes = seeds
        .iter()
        .map(|&s| run_episode(agent, &mut env, scenario, s, "eval", settings, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mean_return =
        episodes.iter().map(|e| e.episode_return).sum::<f64>() / episodes.len().max(1) as f64;
    Ok(EvalSummary {
        mean_return,
        episodes,
    })
}

/// Independent random streams of one run.
struct Streams {
    episodes: ChaCha8Rng,
    explore: ChaCha8Rng,
    sample: ChaCha8Rng,
    augment: ChaCha8Rng,
    update: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub episodes: u64,
    /// `(step, mean return)` per evaluation.
    pub evals: Vec<(u64, f64)>,
    pub wall_clock_s: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub agent: Agent,
    pub replay: ReplayBuffer,
    env: MiniUrban,
    streams: Streams,
    out: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let agent = Agent::new(config.agent.clone(), &mut stream(config.seed, 0))?;
        let env = MiniUrban::new(config.env.clone())?;
        let s = config.seed;
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity),
            streams: Streams {
                episodes: stream(s, 1),
                explore: stream(s, 2),
                sample: stream(s, 3),
                augment: stream(s, 4),
                update: stream(s, 5),
            },
            agent,
            env,
            config,
            out: None,
        })
    }

    /// Writes run artifacts under `dir`. A directory that already holds a
    /// different config is refused.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let cfg_path = dir.join("config.toml");
        if cfg_path.exists() {
            let existing = RunConfig::load(&cfg_path)?;
            if existing != self.config {
                return Err(Error::Config(format!(
                    "{} already holds a run with a different config",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::write(&cfg_path, self.config.to_toml())?;
        self.out = Some(dir);
        Ok(self)
    }

    fn eval_seeds(&self) -> Vec<u64> {
        (0..self.config.eval_episodes as u64)
            .map(|i| self.config.eval_seed + i)
            .collect()
    }

    pub fn run(&mut self) -> Result<TrainSummary> {
        let start = Instant::now();
        let cfg = self.config.clone();
        let mut metrics = match &self.out {
            Some(d) => Some(LineWriter::new(fs::File::create(d.join("metrics.jsonl"))?)),
            None => None,
        };
        let mut progress = match &self.out {
            Some(d) => Some(LineWriter::new(fs::File::create(d.join("progress.jsonl"))?)),
            None => None,
        };
        let mut emit = |rec: &MetricsRecord| -> Result<()> {
            if let Some(w) = metrics.as_mut() {
                serde_json::to_writer(&mut *w, rec)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        };

        let mut step = 0u64;
        let mut episodes = 0u64;
        let mut next_eval = if cfg.eval_at_start {
            0
        } else {
            cfg.eval_interval
        };
        let mut next_log = cfg.warmup_steps + cfg.log_interval;
        let mut evals = Vec::new();
        let mut best: Option<f64> = None;
        let mut pending: Vec<UpdateMetrics> = Vec::new();

        let mut pid = Pid::new(cfg.pid);
        let mut obs = self.env.reset(self.streams.episodes.random())?;
        let mut label = self.env.traffic_light_label().class_index() as u8;
        let (mut ep_return, mut ep_len) = (0.0f64, 0u64);

        while step < cfg.total_steps {
            let action = if step < cfg.warmup_steps {
                let r = &mut self.streams.explore;
                [r.random_range(-1.0f32..=1.0), r.random_range(-1.0f32..=1.0)]
            } else {
                self.agent.act(&obs, false, &mut self.streams.explore)?
            };
            let mut reward = 0.0f64;
            let mut done = false;
            let mut info = None;
            let mut next = obs.clone();
            for _ in 0..cfg.action_repeat {
                let speed = self.env.world().map_or(0.0, |w| w.ego.speed);
                let cmd = policy_to_command(action, speed, DT, &mut pid);
                let (o, r, d, i) = self.env.step(cmd)?;
                next = o;
                reward += r;
                step += 1;
                ep_len += 1;
                info = Some(i);
                if d {
                    done = true;
                    break;
                }
            }
            let info = info.expect("at least one step");
            let failure = info.termination.is_some_and(|t| t.is_failure());
            self.replay.push(Transition {
                obs,
                action,
                reward: reward as f32,
                next_obs: next.clone(),
                terminal: failure,
                truncated: done && !failure,
                label,
            })?;
            ep_return += reward;
            obs = next;
            label = info.light_label.class_index() as u8;

            if step >= cfg.warmup_steps && self.replay.len() >= cfg.batch_size {
                let batch = self.replay.sample(
                    cfg.batch_size,
                    &mut self.streams.sample,
                    cfg.augment
                        .then_some(&mut self.streams.augment as &mut dyn RngCore),
                )?;
                pending.push(self.agent.update_step(&batch, &mut self.streams.update)?);
            }
            if step >= next_log {
                if let Some(avg) = average(&pending) {
                    let mut rec = MetricsRecord::new(RecordKind::Update, step, self.agent.updates);
                    rec.losses = Some(avg);
                    emit(&rec)?;
                }
                pending.clear();
                next_log += cfg.log_interval;
            }

            if done {
                let mut rec = MetricsRecord::new(RecordKind::Episode, step, self.agent.updates);
                rec.episode = Some(episodes);
                rec.episode_return = Some(ep_return);
                rec.episode_length = Some(ep_len);
                rec.termination = info.termination.map(|t| t.name().to_string());
                emit(&rec)?;
                episodes += 1;
                ep_return = 0.0;
                ep_len = 0;
                pid.reset();
                obs = self.env.reset(self.streams.episodes.random())?;
                label = self.env.traffic_light_label().class_index() as u8;
            }

            while step >= next_eval {
                let summary = evaluate(
                    &self.agent,
                    cfg.eval_scenario(),
                    &self.eval_seeds(),
                    cfg.action_repeat,
                    cfg.pid,
                )?;
                let successes = summary.episodes.iter().filter(|e| e.success).count();
                let mut rec = MetricsRecord::new(RecordKind::Eval, next_eval, self.agent.updates);
                rec.eval_return = Some(summary.mean_return);
                rec.eval_success_rate =
                    Some(100.0 * successes as f64 / summary.episodes.len().max(1) as f64);
                emit(&rec)?;
                log::info!(
                    "step {next_eval}: eval return {:.2} ({} updates, {:.0} s)",
                    summary.mean_return,
                    self.agent.updates,
                    start.elapsed().as_secs_f64()
                );
                if let Some(w) = progress.as_mut() {
                    writeln!(
                        w,
                        "{}",
                        serde_json::json!({"step": next_eval, "wall_clock_s": start.elapsed().as_secs_f64()})
                    )?;
                }
                if let Some(dir) = &self.out {
                    let name = format!("step_{next_eval:09}.ckpt");
                    checkpoint::save(&self.agent, dir.join("checkpoints").join(&name))?;
                    if best.is_none_or(|b| summary.mean_return > b) {
                        best = Some(summary.mean_return);
                        link_best(dir, &name)?;
                    }
                }
                evals.push((next_eval, summary.mean_return));
                next_eval += cfg.eval_interval;
            }
        }
        Ok(TrainSummary {
            steps: step,
            updates: self.agent.updates,
            episodes,
            evals,
            wall_clock_s: start.elapsed().as_secs_f64(),
        })
    }
}

fn link_best(dir: &Path, name: &str) -> Result<()> {
    let link = dir.join("best.ckpt");
    if link.symlink_metadata().is_ok() {
        fs::remove_file(&link)?;
    }
    #[cfg(unix)]
    std::os::unix::fs::symlink(Path::new("checkpoints").join(name), &link)?;
    #[cfg(not(unix))]
    fs::copy(dir.join("checkpoints").join(name), &link).map(|_| ())?;
    Ok(())
}

fn average(items: &[UpdateMetrics]) -> Option<UpdateMetrics> {
    let n = items.len();
    if n == 0 {
        return None;
    }
    let mean = |f: fn(&UpdateMetrics) -> f32| items.iter().map(f).sum::<f32>() / n as f32;
    let aux: Vec<f32> = items.iter().filter_map(|m| m.aux_loss).collect();
    Some(UpdateMetrics {
        critic_loss: mean(|m| m.critic_loss),
        actor_loss: mean(|m| m.actor_loss),
        alpha_loss: mean(|m| m.alpha_loss),
        aux_loss: (!aux.is_empty()).then(|| aux.iter().sum::<f32>() / aux.len() as f32),
        alpha: items[n - 1].alpha,
        entropy: mean(|m| m.entropy),
        q_mean: mean(|m| m.q_mean),
    })
}

/// Trains under `config`, writing artifacts to `out`.
pub fn train(config: RunConfig, out: impl Into<PathBuf>) -> Result<TrainSummary> {
    Trainer::new(config)?.with_output(out)?.run()
}
