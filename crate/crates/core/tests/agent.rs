mod common;

use proptest::prelude::*;
use rlad::agent::{
    aux_loss, critic_loss, ema, td_target, temperature_loss, AuxReduction, ACTION_DIM,
};
use rlad::replay::{Batch, ReplayBuffer};
use rlad::{AgentConfig, Error};
use rlad_tensor::{Graph, Tensor};

use common::{random_obs, random_transition, rng, small_agent, small_config};

fn batch(n: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let items: Vec<_> = (0..n).map(|_| random_transition(64, &mut r)).collect();
    let refs: Vec<_> = items.iter().collect();
    Batch::from_transitions(&refs)
}

#[test]
fn invalid_configs_are_rejected() {
    let cases = [
        AgentConfig {
            hidden: 0,
            ..small_config()
        },
        AgentConfig {
            gamma: 1.0,
            ..small_config()
        },
        AgentConfig {
            tau: 0.0,
            ..small_config()
        },
        AgentConfig {
            log_std_min: 3.0,
            ..small_config()
        },
        AgentConfig {
            resolution: 100,
            ..small_config()
        },
    ];
    for c in cases {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn deterministic_action_is_repeatable_and_bounded() {
    let agent = small_agent(0);
    let o = random_obs(64, &mut rng(1));
    let a = agent.act(&o, true, &mut rng(2)).unwrap();
    let b = agent.act(&o, true, &mut rng(3)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.abs() < 1.0));
}

#[test]
fn td_target_cuts_bootstrap_on_terminal() {
    assert_eq!(td_target(0.5, 0.0, 0.99, 10.0, 0.1, -1.0), 0.5);
    let y = td_target(0.5, 1.0, 0.9, 2.0, 0.5, -1.0);
    assert!((y - (0.5 + 0.9 * 2.5)).abs() < 1e-6);
}

#[test]
fn critic_loss_sums_both_mse_terms() {
    let mut g = Graph::new();
    let q1 = g.input(Tensor::from_parts(&[2, 1], vec![1.0, 2.0]));
    let q2 = g.input(Tensor::from_parts(&[2, 1], vec![0.0, 4.0]));
    let y = g.input(Tensor::from_parts(&[2, 1], vec![1.0, 1.0]));
    let l = critic_loss(&mut g, q1, q2, y);
    // (0 + 1) / 2 + (1 + 9) / 2
    assert!((g.value(l).item() - 5.5).abs() < 1e-6);
}

#[test]
fn temperature_loss_pushes_alpha_toward_target_entropy() {
    // Entropy below target (log_prob + target > 0) should increase alpha.
    let mut g = Graph::new();
    let la = g.input_with_grad(Tensor::scalar(0.1f32.ln()));
    let lp = Tensor::from_parts(&[2, 1], vec![1.0, 0.0]);
    let loss = temperature_loss(&mut g, la, &lp, -0.2);
    let grads = g.backward(loss);
    assert!(grads.wrt(la).unwrap().item() < 0.0);
}

#[test]
fn aux_loss_rejects_out_of_range_labels() {
    let mut g = Graph::new();
    let logits = g.input(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        aux_loss(&mut g, logits, &[0, 3], AuxReduction::Sum),
        Err(Error::Data(_))
    ));
}

#[test]
fn aux_loss_reductions_differ_by_batch_size() {
    let mut g = Graph::new();
    let logits = g.input(Tensor::from_parts(
        &[4, 3],
        (0..12).map(|i| (i as f32 * 0.7).cos()).collect(),
    ));
    let s = aux_loss(&mut g, logits, &[0, 1, 2, 1], AuxReduction::Sum).unwrap();
    let m = aux_loss(&mut g, logits, &[0, 1, 2, 1], AuxReduction::Mean).unwrap();
    assert!((g.value(s).item() - 4.0 * g.value(m).item()).abs() < 1e-5);
}

#[test]
fn update_step_reports_finite_metrics_and_counts_updates() {
    let mut agent = small_agent(10);
    let b = batch(4, 11);
    let mut r = rng(12);
    for _ in 0..3 {
        let m = agent.update_step(&b, &mut r).unwrap();
        assert!(m.critic_loss.is_finite() && m.actor_loss.is_finite() && m.alpha_loss.is_finite());
        assert!(m.aux_loss.is_some_and(f32::is_finite));
        assert!(m.alpha > 0.0);
    }
    assert_eq!(agent.updates, 3);
}

#[test]
fn disabling_the_aux_loss_leaves_the_decoder_alone() {
    let mut agent = rlad::Agent::new(
        AgentConfig {
            use_aux_loss: false,
            ..small_config()
        },
        &mut rng(13),
    )
    .unwrap();
    let before = agent.decoder.clone();
    let m = agent.update_step(&batch(4, 14), &mut rng(15)).unwrap();
    assert!(m.aux_loss.is_none());
    for (a, b) in before.layers.iter().zip(&agent.decoder.layers) {
        assert_eq!(a.weight.value, b.weight.value);
    }
}

#[test]
fn soft_update_moves_targets_toward_critics() {
    let mut agent = small_agent(20);
    agent.update_step(&batch(4, 21), &mut rng(22)).unwrap();
    let dist = |a: &rlad::Agent| -> f32 {
        a.critics[0].layers[0]
            .weight
            .value
            .data()
            .iter()
            .zip(a.critic_targets[0].layers[0].weight.value.data())
            .map(|(x, y)| (x - y).abs())
            .sum()
    };
    let d0 = dist(&agent);
    assert!(d0 > 0.0);
    agent.soft_update_targets().unwrap();
    assert!(dist(&agent) < d0);
}

#[test]
fn training_from_replay_samples_works_end_to_end() {
    let mut r = rng(30);
    let mut replay = ReplayBuffer::new(16);
    for _ in 0..8 {
        replay.push(random_transition(64, &mut r)).unwrap();
    }
    let mut agent = small_agent(31);
    let b = replay.sample(4, &mut r, Some(&mut rng(32))).unwrap();
    assert_eq!(b.actions.shape(), &[4, ACTION_DIM]);
    agent.update_step(&b, &mut r).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ema_stays_between_target_and_source(t in -10.0f64..10.0, s in -10.0f64..10.0, tau in 0.0f64..=1.0) {
        let mut x = [t];
        ema(&mut x, &[s], tau);
        prop_assert!(x[0] >= t.min(s) - 1e-12 && x[0] <= t.max(s) + 1e-12);
    }

    #[test]
    fn stochastic_actions_lie_in_the_open_box(seed in 0u64..200) {
        let agent = small_agent(seed % 4);
        let o = random_obs(64, &mut rng(seed));
        let a = agent.act(&o, false, &mut rng(seed + 1)).unwrap();
        prop_assert!(a.iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
    }
}
