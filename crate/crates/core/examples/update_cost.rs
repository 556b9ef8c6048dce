//! Times agent updates on synthetic transitions.
//!
//! `cargo run --release -p rlad --example update_cost -- <resolution> <batch> <hidden>`

use std::time::Instant;

use miniurban::{MiniUrban, ScenarioConfig, VehicleCommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlad::{Agent, AgentConfig, ReplayBuffer, Transition};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let res = args.first().copied().unwrap_or(64);
    let batch = args.get(1).copied().unwrap_or(32);
    let hidden = args.get(2).copied().unwrap_or(1024);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut env = MiniUrban::new(ScenarioConfig {
        resolution: res,
        ..ScenarioConfig::default()
    })?;
    let mut obs = env.reset(0)?;
    let mut replay = ReplayBuffer::new(1000);
    for _ in 0..200 {
        let (next, r, done, info) = env.step(VehicleCommand::new(0.5, 0.0, 0.0))?;
        replay.push(Transition {
            obs: obs.clone(),
            action: [0.0, 0.5],
            reward: r as f32,
            next_obs: next.clone(),
            terminal: done,
            truncated: false,
            label: info.light_label.class_index() as u8,
        })?;
        obs = if done { env.reset(1)? } else { next };
    }
    let mut agent = Agent::new(
        AgentConfig {
            resolution: res,
            hidden,
            ..AgentConfig::default()
        },
        &mut rng,
    )?;
    let n = args.get(3).copied().unwrap_or(10);
    let t0 = Instant::now();
    let mut sample_time = 0.0;
    for _ in 0..n {
        let s = Instant::now();
        let b = replay.sample(batch, &mut rng, None)?;
        sample_time += s.elapsed().as_secs_f64();
        agent.update_step(&b, &mut rng)?;
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    let b = replay.sample(batch, &mut rng, None)?;
    let mut t = [0.0f64; 5];
    for _ in 0..n {
        let s = Instant::now();
        let eps = rlad::agent::gaussian_noise(batch, &mut rng);
        let y = agent.compute_targets(&b, &eps, &mut rng)?;
        t[0] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let c = agent.critic_update_with_targets(&b, &y, &mut rng)?;
        t[1] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let a = agent.actor_update(&c.latent, &mut rng)?;
        agent.temperature_update(&a.log_probs);
        t[2] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        agent.aux_update(&b.obs.images, &b.labels, &mut rng)?;
        t[3] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        agent.soft_update_targets()?;
        t[4] += s.elapsed().as_secs_f64();
    }
    let ms: Vec<String> = t
        .iter()
        .map(|v| format!("{:.1}", v / n as f64 * 1e3))
        .collect();
    println!(
        "target / critic / actor+alpha / aux / ema (ms): {}",
        ms.join(" / ")
    );
    for alix in [false, true] {
        let s = Instant::now();
        for _ in 0..n {
            let mut g = rlad_tensor::Graph::no_grad();
            let x = g.input(b.obs.images.clone());
            let opt = if alix {
                Some((0.5f32, &mut rng as &mut dyn rand::RngCore))
            } else {
                None
            };
            agent
                .encoders
                .image
                .forward_traced(&mut g, x, opt, &mut |_| {})?;
        }
        println!(
            "image forward alix={alix}: {:.1} ms",
            s.elapsed().as_secs_f64() / n as f64 * 1e3
        );
    }
    println!(
        "res {res} batch {batch} hidden {hidden}: {:.1} ms/update (sampling {:.1} ms)",
        dt * 1e3,
        sample_time / n as f64 * 1e3
    );
    Ok(())
}
