//! Soft actor-critic with a shared observation encoder, twin critics with EMA
//! targets, a learned temperature and an auxiliary traffic-light head.
//!
//! Gradient routing per update:
//!
//! | loss        | moves                                  |
//! |-------------|----------------------------------------|
//! | critic      | both critics, image/waypoint/measurement encoders |
//! | actor       | actor only (latent detached, critics frozen) |
//! | temperature | `log_alpha` only                       |
//! | auxiliary   | decoder and image encoder              |

use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use rlad_tensor::{
    scoped, scoped_mut, Adam, AdamConfig, Graph, Mlp, Module, Param, Reduction, Tensor, Var,
};

use crate::encoders::{AlixConfig, Encoders, ObsBatch, WaypointEncoderKind, IMAGE_LATENT, LATENT};
use crate::error::{Error, Result};
use crate::replay::Batch;

pub const ACTION_DIM: usize = 2;
pub const NUM_LIGHT_CLASSES: usize = 3;
const HALF_LN_2PI: f32 = 0.918_938_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxReduction {
    Sum,
    Mean,
}

impl From<AuxReduction> for Reduction {
    fn from(r: AuxReduction) -> Self {
        match r {
            AuxReduction::Sum => Reduction::Sum,
            AuxReduction::Mean => Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub resolution: usize,
    pub hidden: usize,
    pub log_std_min: f32,
    pub log_std_max: f32,
    pub init_temperature: f32,
    pub target_entropy: f32,
    pub gamma: f32,
    pub tau: f32,
    pub lr: f32,
    pub alix: AlixConfig,
    pub use_aux_loss: bool,
    pub aux_reduction: AuxReduction,
    pub waypoint_encoder: WaypointEncoderKind,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            hidden: 1024,
            log_std_min: -10.0,
            log_std_max: 2.0,
            init_temperature: 0.1,
            target_entropy: -(ACTION_DIM as f32),
            gamma: 0.99,
            tau: 0.01,
            lr: 1e-3,
            alix: AlixConfig::default(),
            use_aux_loss: true,
            aux_reduction: AuxReduction::Sum,
            waypoint_encoder: WaypointEncoderKind::Wayconv1d,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        if !(self.init_temperature > 0.0) {
            return bad("init_temperature must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.alix.smoothness >= 0.0) {
            return bad("alix.smoothness must be non-negative");
        }
        crate::encoders::conv_plan(self.resolution).map(|_| ())
    }

    fn alix_smoothness(&self, train: bool) -> Option<f32> {
        let a = self.alix;
        (a.enabled && (train || a.at_eval)).then_some(a.smoothness)
    }
}

/// Gaussian policy head producing the mean and a bounded log-std.
#[derive(Clone, Debug)]
pub struct Actor {
    pub mlp: Mlp,
    pub log_std_min: f32,
    pub log_std_max: f32,
}

/// Graph handles of one reparameterized policy sample.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    pub mean: Var,
    pub log_std: Var,
    pub action: Var,
    /// `[B, 1]`.
    pub log_prob: Var,
}

impl Actor {
    pub fn new(hidden: usize, log_std_min: f32, log_std_max: f32, rng: &mut dyn RngCore) -> Self {
        Self {
            mlp: Mlp::new(&[LATENT, hidden, hidden, 2 * ACTION_DIM], rng),
            log_std_min,
            log_std_max,
        }
    }

    /// Mean and log-std; the raw log-std is squashed by tanh into the bounds.
    pub fn forward(&self, g: &mut Graph, h: Var) -> (Var, Var) {
        let out = self.mlp.forward(g, h);
        let mean = g.slice_last(out, 0, ACTION_DIM);
        let raw = g.slice_last(out, ACTION_DIM, ACTION_DIM);
        let t = g.tanh(raw);
        let half = 0.5 * (self.log_std_max - self.log_std_min);
        let t = g.mul_scalar(t, half);
        let log_std = g.add_scalar(t, self.log_std_min + half);
        (mean, log_std)
    }

    /// `a = tanh(mean + std * eps)` with its log-density, `eps` being `[B, 2]`
    /// standard normal noise.
    pub fn sample(&self, g: &mut Graph, h: Var, eps: &Tensor) -> PolicySample {
        let (mean, log_std) = self.forward(g, h);
        let std = g.exp(log_std);
        let e = g.input(eps.clone());
        let noise = g.mul(std, e);
        let u = g.add(mean, noise);
        let action = g.tanh(u);

        // Gaussian part: -eps^2/2 - log std - ln(2 pi)/2 per dimension.
        let rows = eps.rows();
        let quad: Vec<f32> = eps
            .data()
            .chunks(ACTION_DIM)
            .map(|r| r.iter().map(|e| -0.5 * e * e - HALF_LN_2PI).sum())
            .collect();
        let quad = g.input(Tensor::from_parts(&[rows, 1], quad));
        let sum_log_std = g.sum_last(log_std);
        let gauss = g.sub(quad, sum_log_std);

        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)), stable for large |u|.
        let m2u = g.mul_scalar(u, -2.0);
        let sp = g.softplus(m2u);
        let s = g.add(u, sp);
        let s = g.neg(s);
        let s = g.add_scalar(s, std::f32::consts::LN_2);
        let s = g.mul_scalar(s, 2.0);
        let correction = g.sum_last(s);
        let log_prob = g.sub(gauss, correction);
        PolicySample {
            mean,
            log_std,
            action,
            log_prob,
        }
    }
}

impl Module for Actor {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.mlp.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.mlp.named_params_mut()
    }
}

/// `Q(h, a)` as an MLP on the concatenation.
pub fn q_value(g: &mut Graph, critic: &Mlp, h: Var, a: Var) -> Var {
    let x = g.concat_last(&[h, a]);
    critic.forward(g, x)
}

/// Standard normal `[rows, 2]` noise.
pub fn gaussian_noise(rows: usize, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..rows * ACTION_DIM)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Tensor::from_parts(&[rows, ACTION_DIM], data)
}

/// One-step soft Bellman target.
pub fn td_target(
    reward: f32,
    not_done: f32,
    gamma: f32,
    min_target_q: f32,
    alpha: f32,
    log_prob: f32,
) -> f32 {
    reward + not_done * gamma * (min_target_q - alpha * log_prob)
}

/// Sum over both critics of the mean squared Bellman residual.
pub fn critic_loss(g: &mut Graph, q1: Var, q2: Var, y: Var) -> Var {
    let mut terms = [q1, q2].map(|q| {
        let d = g.sub(q, y);
        let d = g.square(d);
        g.mean_all(d)
    });
    let [a, b] = &mut terms;
    g.add(*a, *b)
}

/// `mean(alpha * log_prob - min(q1, q2))`.
pub fn actor_loss(g: &mut Graph, q1: Var, q2: Var, log_prob: Var, alpha: f32) -> Var {
    let min_q = g.minimum(q1, q2);
    let ent = g.mul_scalar(log_prob, alpha);
    let d = g.sub(ent, min_q);
    g.mean_all(d)
}

/// `-alpha * mean(log_prob + target_entropy)` with `log_prob` detached.
pub fn temperature_loss(
    g: &mut Graph,
    log_alpha: Var,
    log_prob: &Tensor,
    target_entropy: f32,
) -> Var {
    let alpha = g.exp(log_alpha);
    let shifted: Vec<f32> = log_prob.data().iter().map(|l| l + target_entropy).collect();
    let t = g.input(Tensor::from_parts(log_prob.shape(), shifted));
    let s = g.scale(t, alpha);
    let m = g.mean_all(s);
    g.neg(m)
}

/// Cross-entropy of the light-state logits.
pub fn aux_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    reduction: AuxReduction,
) -> Result<Var> {
    if let Some(bad) = labels.iter().find(|&&l| l >= NUM_LIGHT_CLASSES) {
        return Err(Error::Data(format!(
            "traffic-light label {bad} outside 0..{NUM_LIGHT_CLASSES}"
        )));
    }
    Ok(g.cross_entropy(logits, labels, reduction.into()))
}

/// `target <- (1 - tau) target + tau source`, elementwise.
pub fn ema<T: Float>(target: &mut [T], source: &[T], tau: T) {
    assert_eq!(target.len(), source.len(), "ema: length mismatch");
    let keep = T::one() - tau;
    for (t, s) in target.iter_mut().zip(source) {
        *t = keep * *t + tau * *s;
    }
}

#[derive(Clone, Debug)]
pub struct Optimizers {
    /// Critics and all three encoders.
    pub critic: Adam,
    pub actor: Adam,
    pub alpha: Adam,
    /// Traffic-light decoder and image encoder.
    pub aux: Adam,
}

impl Optimizers {
    pub const NAMES: [&'static str; 4] = ["critic", "actor", "alpha", "aux"];

    fn new(lr: f32) -> Self {
        let adam = || {
            Adam::new(AdamConfig {
                lr,
                ..AdamConfig::default()
            })
        };
        Self {
            critic: adam(),
            actor: adam(),
            alpha: adam(),
            aux: adam(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub critic_loss: f32,
    pub actor_loss: f32,
    pub alpha_loss: f32,
    pub aux_loss: Option<f32>,
    pub alpha: f32,
    pub entropy: f32,
    pub q_mean: f32,
}

/// Result of a critic update.
#[derive(Clone, Debug)]
pub struct CriticStep {
    pub loss: f32,
    pub q_mean: f32,
    /// `[B, 304]` latent of the current observations, for the actor update.
    pub latent: Tensor,
    pub targets: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct ActorStep {
    pub loss: f32,
    /// `[B, 1]`.
    pub log_probs: Tensor,
}

/// An optimizer with the named parameters it updates.
pub type OptimizerGroup<'a> = (&'static str, &'a Adam, Vec<(String, &'a Param)>);

#[derive(Clone, Debug)]

pub struct Agent {
    pub config: AgentConfig,
    pub encoders: Encoders,
    pub actor: Actor,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub log_alpha: Param,
    pub decoder: Mlp,
    pub optim: Optimizers,
    pub updates: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let encoders = Encoders::new(config.resolution, config.waypoint_encoder, rng)?;
        let actor = Actor::new(config.hidden, config.log_std_min, config.log_std_max, rng);
        let dims = [LATENT + ACTION_DIM, config.hidden, config.hidden, 1];
        let critics = [Mlp::new(&dims, rng), Mlp::new(&dims, rng)];
        let critic_targets = critics.clone();
        let decoder = Mlp::new(&[IMAGE_LATENT, 256, NUM_LIGHT_CLASSES], rng);
        let log_alpha = Param::new(Tensor::scalar(config.init_temperature.ln()));
        Ok(Self {
            optim: Optimizers::new(config.lr),
            config,
            encoders,
            actor,
            critics,
            critic_targets,
            log_alpha,
            decoder,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f32 {
        self.log_alpha.value.item().exp()
    }

    /// Policy action in `(-1, 1)^2` for one observation. Deterministic mode
    /// returns `tanh(mean)`.
    pub fn act(
        &self,
        obs: &miniurban::Observation,
        deterministic: bool,
        rng: &mut dyn RngCore,
    ) -> Result<[f32; 2]> {
        let batch = ObsBatch::from_observations(&[obs]);
        let a = self.act_batch(&batch, deterministic, rng)?;
        Ok([a.data()[0], a.data()[1]])
    }

    pub fn act_batch(
        &self,
        obs: &ObsBatch,
        deterministic: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let alix = self.config.alix_smoothness(false);
        let latent = self.encoders.encode(
            &mut g,
            obs,
            alix.map(|s| (s, &mut *rng as &mut dyn RngCore)),
        )?;
        let out = if deterministic {
            let (mean, _) = self.actor.forward(&mut g, latent.fused);
            g.tanh(mean)
        } else {
            let eps = gaussian_noise(obs.len(), rng);
            self.actor.sample(&mut g, latent.fused, &eps).action
        };
        Ok(g.value(out).clone())
    }

    /// Soft Bellman targets from the EMA critics at the next observations.
    pub fn compute_targets(
        &self,
        batch: &Batch,
        eps: &Tensor,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f32>> {
        let mut g = Graph::no_grad();
        let alix = self.config.alix_smoothness(true);
        let next = self
            .encoders
            .encode(&mut g, &batch.next_obs, alix.map(|s| (s, rng)))?;
        let sample = self.actor.sample(&mut g, next.fused, eps);
        let q1 = q_value(&mut g, &self.critic_targets[0], next.fused, sample.action);
        let q2 = q_value(&mut g, &self.critic_targets[1], next.fused, sample.action);
        let alpha = self.alpha();
        let (q1, q2, lp) = (
            g.value(q1).data(),
            g.value(q2).data(),
            g.value(sample.log_prob).data(),
        );
        Ok((0..batch.len())
            .map(|i| {
                td_target(
                    batch.rewards[i],
                    batch.not_done[i],
                    self.config.gamma,
                    q1[i].min(q2[i]),
                    alpha,
                    lp[i],
                )
            })
            .collect())
    }

    /// Critic regression toward fixed targets; updates critics and encoders.
    pub fn critic_update_with_targets(
        &mut self,
        batch: &Batch,
        targets: &[f32],
        rng: &mut dyn RngCore,
    ) -> Result<CriticStep> {
        let b = batch.len();
        let mut g = Graph::new();
        let alix = self.config.alix_smoothness(true);
        let latent = self
            .encoders
            .encode(&mut g, &batch.obs, alix.map(|s| (s, rng)))?;
        let a = g.input(batch.actions.clone());
        let q1 = q_value(&mut g, &self.critics[0], latent.fused, a);
        let q2 = q_value(&mut g, &self.critics[1], latent.fused, a);
        let y = g.input(Tensor::from_parts(&[b, 1], targets.to_vec()));
        let loss = critic_loss(&mut g, q1, q2, y);
        let grads = g.backward(loss);
        let q_mean = (g
            .value(q1)
            .data()
            .iter()
            .chain(g.value(q2).data())
            .sum::<f32>())
            / (2 * b) as f32;
        let Self {
            critics,
            encoders,
            optim,
            ..
        } = self;
        let params = critics
            .iter_mut()
            .flat_map(|c| c.named_params_mut())
            .chain(encoders.named_params_mut())
            .map(|(_, p)| p);
        optim.critic.step(params, &grads);
        Ok(CriticStep {
            loss: g.value(loss).item(),
            q_mean,
            latent: g.value(latent.fused).clone(),
            targets: targets.to_vec(),
        })
    }

    pub fn critic_update(&mut self, batch: &Batch, rng: &mut dyn RngCore) -> Result<CriticStep> {
        let eps = gaussian_noise(batch.len(), rng);
        let targets = self.compute_targets(batch, &eps, rng)?;
        self.critic_update_with_targets(batch, &targets, rng)
    }

    /// Policy improvement on a detached latent; only the actor moves.
    pub fn actor_update_with_noise(&mut self, latent: &Tensor, eps: &Tensor) -> Result<ActorStep> {
        let mut g = Graph::new();
        let h = g.input(latent.clone());
        let sample = self.actor.sample(&mut g, h, eps);
        let critics = &self.critics;
        let (q1, q2) = g.frozen(|g| {
            (
                q_value(g, &critics[0], h, sample.action),
                q_value(g, &critics[1], h, sample.action),
            )
        });
        let loss = actor_loss(&mut g, q1, q2, sample.log_prob, self.alpha());
        let grads = g.backward(loss);
        self.optim.actor.step(
            self.actor.named_params_mut().into_iter().map(|(_, p)| p),
            &grads,
        );
        Ok(ActorStep {
            loss: g.value(loss).item(),
            log_probs: g.value(sample.log_prob).clone(),
        })
    }

    pub fn actor_update(&mut self, latent: &Tensor, rng: &mut dyn RngCore) -> Result<ActorStep> {
        let eps = gaussian_noise(latent.rows(), rng);
        self.actor_update_with_noise(latent, &eps)
    }

    /// Returns the loss value.
    pub fn temperature_update(&mut self, log_probs: &Tensor) -> f32 {
        let mut g = Graph::new();
        let la = g.param(&self.log_alpha);
        let loss = temperature_loss(&mut g, la, log_probs, self.config.target_entropy);
        let grads = g.backward(loss);
        self.optim.alpha.step([&mut self.log_alpha], &grads);
        g.value(loss).item()
    }

    /// Traffic-light classification through the image encoder.
    pub fn aux_update(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<f32> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let alix = self.config.alix_smoothness(true);
        let i = self
            .encoders
            .image
            .forward(&mut g, x, alix.map(|s| (s, rng)))?;
        let logits = self.decoder.forward(&mut g, i);
        let loss = aux_loss(&mut g, logits, labels, self.config.aux_reduction)?;
        let grads = g.backward(loss);
        let Self {
            decoder,
            encoders,
            optim,
            ..
        } = self;
        let params = decoder
            .named_params_mut()
            .into_iter()
            .chain(encoders.image.named_params_mut())
            .map(|(_, p)| p);
        optim.aux.step(params, &grads);
        Ok(g.value(loss).item())
    }

    /// Moves the EMA critics toward the live ones.
    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        for (live, target) in self.critics.iter().zip(self.critic_targets.iter_mut()) {
            for ((_, s), (name, t)) in live
                .named_params()
                .into_iter()
                .zip(target.named_params_mut())
            {
                if s.value.shape() != t.value.shape() {
                    return Err(Error::Shape(format!(
                        "target parameter {name} differs in shape from the live critic"
                    )));
                }
                ema(t.value.data_mut(), s.value.data(), tau);
            }
        }
        Ok(())
    }

    /// Critic, actor, temperature and auxiliary updates, then the EMA step.
    pub fn update_step(&mut self, batch: &Batch, rng: &mut dyn RngCore) -> Result<UpdateMetrics> {
        let critic = self.critic_update(batch, rng)?;
        let actor = self.actor_update(&critic.latent, rng)?;
        let alpha_loss = self.temperature_update(&actor.log_probs);
        let aux_loss = if self.config.use_aux_loss {
            Some(self.aux_update(&batch.obs.images, &batch.labels, rng)?)
        } else {
            None
        };
        self.soft_update_targets()?;
        self.updates += 1;
        let n = actor.log_probs.numel() as f32;
        Ok(UpdateMetrics {
            critic_loss: critic.loss,
            actor_loss: actor.loss,
            alpha_loss,
            aux_loss,
            alpha: self.alpha(),
            entropy: -actor.log_probs.data().iter().sum::<f32>() / n,
            q_mean: critic.q_mean,
        })
    }

    /// Named parameter groups, used to inspect which networks an update moved.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<&Param>)> {
        let e = &self.encoders;
        vec![
            ("image_encoder", e.image.params()),
            ("waypoint_encoder", e.waypoints.params()),
            ("measurement_encoder", e.measurements.params()),
            ("actor", self.actor.params()),
            ("critic1", self.critics[0].params()),
            ("critic2", self.critics[1].params()),
            ("target_critic1", self.critic_targets[0].params()),
            ("target_critic2", self.critic_targets[1].params()),
            ("log_alpha", vec![&self.log_alpha]),
            ("decoder", self.decoder.params()),
        ]
    }

    /// Parameter names owned by each optimizer, in a stable order.
    pub fn optimizer_groups(&self) -> [OptimizerGroup<'_>; 4] {
        let all = self.named_params();
        let pick = |prefixes: &[&str]| -> Vec<(String, &Param)> {
            all.iter()
                .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
                .map(|(n, p)| (n.clone(), *p))
                .collect()
        };
        [
            (
                "critic",
                &self.optim.critic,
                pick(&["encoders.", "critic1.", "critic2."]),
            ),
            ("actor", &self.optim.actor, pick(&["actor."])),
            ("alpha", &self.optim.alpha, pick(&["log_alpha"])),
            (
                "aux",
                &self.optim.aux,
                pick(&["decoder.", "encoders.image."]),
            ),
        ]
    }

    pub fn optimizer_mut(&mut self, name: &str) -> Option<&mut Adam> {
        match name {
            "critic" => Some(&mut self.optim.critic),
            "actor" => Some(&mut self.optim.actor),
            "alpha" => Some(&mut self.optim.alpha),
            "aux" => Some(&mut self.optim.aux),
            _ => None,
        }
    }
}

impl Module for Agent {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = scoped("encoders", self.encoders.named_params());
        out.extend(scoped("actor", self.actor.named_params()));
        for (i, c) in self.critics.iter().enumerate() {
            out.extend(scoped(&format!("critic{}", i + 1), c.named_params()));
        }
        for (i, c) in self.critic_targets.iter().enumerate() {
            out.extend(scoped(&format!("target_critic{}", i + 1), c.named_params()));
        }
        out.push(("log_alpha".into(), &self.log_alpha));
        out.extend(scoped("decoder", self.decoder.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = scoped_mut("encoders", self.encoders.named_params_mut());
        out.extend(scoped_mut("actor", self.actor.named_params_mut()));
        for (i, c) in self.critics.iter_mut().enumerate() {
            out.extend(scoped_mut(
                &format!("critic{}", i + 1),
                c.named_params_mut(),
            ));
        }
        for (i, c) in self.critic_targets.iter_mut().enumerate() {
            out.extend(scoped_mut(
                &format!("target_critic{}", i + 1),
                c.named_params_mut(),
            ));
        }
        out.push(("log_alpha".into(), &mut self.log_alpha));
        out.extend(scoped_mut("decoder", self.decoder.named_params_mut()));
        out
    }
}
