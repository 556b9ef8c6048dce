mod common;

use miniurban::ScenarioConfig;
use rlad::trainer::{evaluate, read_metrics, train, RecordKind, RunConfig, Trainer, Variant};
use rlad::{Error, ErrorKind};

use common::small_config;

fn tiny_run() -> RunConfig {
    let env = ScenarioConfig {
        resolution: 64,
        timeout_steps: 40,
        ..ScenarioConfig::default()
    };
    RunConfig {
        seed: 3,
        total_steps: 60,
        warmup_steps: 20,
        batch_size: 4,
        replay_capacity: 64,
        eval_interval: 30,
        eval_episodes: 1,
        eval_at_start: true,
        log_interval: 10,
        agent: small_config(),
        eval_env: Some(ScenarioConfig {
            timeout_steps: 10,
            ..env.clone()
        }),
        env,
        ..RunConfig::default()
    }
}

#[test]
fn config_round_trips_through_toml() {
    let c = tiny_run();
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
}

#[test]
fn bad_configs_are_config_errors() {
    let unknown = "seed = 1\nbogus = 2\n";
    assert!(matches!(
        RunConfig::from_toml(unknown),
        Err(Error::Config(_))
    ));
    let mut c = tiny_run();
    c.agent.resolution = 128;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = tiny_run();
    c.eval_interval = 31;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = tiny_run();
    c.batch_size = 0;
    assert_eq!(c.validate().unwrap_err().kind(), ErrorKind::Config);
}

#[test]
fn variants_toggle_one_component_each() {
    let base = tiny_run();
    let mut seen = Vec::new();
    for v in Variant::ALL {
        let mut c = base.clone();
        v.apply(&mut c);
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
        seen.push((
            c.agent.waypoint_encoder,
            c.agent.use_aux_loss,
            c.agent.alix.enabled,
        ));
    }
    assert_eq!(seen[0], (base.agent.waypoint_encoder, true, true));
    assert_ne!(seen[1].0, seen[0].0);
    assert!(!seen[2].1 && seen[2].2);
    assert!(seen[3].1 && !seen[3].2);
    assert!(matches!(
        Variant::parse("no-everything"),
        Err(Error::Config(_))
    ));
}

#[test]
fn run_writes_metrics_checkpoints_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(tiny_run(), dir.path()).unwrap();
    assert_eq!(summary.steps, 60);
    assert!(summary.updates > 0);
    assert_eq!(
        summary.evals.iter().map(|e| e.0).collect::<Vec<_>>(),
        vec![0, 30, 60]
    );

    let records = read_metrics(dir.path().join("metrics.jsonl")).unwrap();
    let evals: Vec<_> = records
        .iter()
        .filter(|r| r.kind == RecordKind::Eval)
        .collect();
    assert_eq!(evals.len(), 3);
    assert!(records
        .iter()
        .any(|r| r.kind == RecordKind::Update && r.losses.is_some()));
    assert!(records
        .windows(2)
        .all(|w| w[0].step <= w[1].step || w[1].kind == RecordKind::Eval));

    assert!(dir.path().join("config.toml").exists());
    assert!(dir.path().join("checkpoints/step_000000060.ckpt").exists());
    assert!(dir.path().join("best.ckpt").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(tiny_run(), a.path()).unwrap();
    train(tiny_run(), b.path()).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn reusing_a_run_dir_with_another_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    train(tiny_run(), dir.path()).unwrap();
    let mut other = tiny_run();
    other.seed = 4;
    let err = Trainer::new(other)
        .unwrap()
        .with_output(dir.path())
        .err()
        .unwrap();
    assert_eq!(err.kind(), ErrorKind::Config);
}

#[test]
fn evaluation_needs_a_matching_resolution() {
    let t = Trainer::new(tiny_run()).unwrap();
    let scenario = ScenarioConfig {
        resolution: 128,
        ..ScenarioConfig::default()
    };
    let err = evaluate(&t.agent, &scenario, &[0], 2, Default::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
