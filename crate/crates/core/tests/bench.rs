mod common;

use proptest::prelude::*;
use rlad::bench::{
    compare_reports, BenchmarkReport, EpisodeResult, Suite, TaskReport, COLUMN_HEADERS,
};
use rlad::Error;

fn episode(task: &str, success: bool, km: f64, ped: u32, blocked: u32) -> EpisodeResult {
    EpisodeResult {
        task: task.into(),
        seed: 0,
        palette: "clear-noon".into(),
        success,
        route_completion: if success { 1.0 } else { 0.5 },
        distance_km: km,
        episode_return: 0.0,
        steps: 10,
        termination: None,
        collision_pedestrian: ped,
        collision_vehicle: 0,
        collision_layout: 0,
        red_light: 0,
        blocked,
    }
}

#[test]
fn task_report_aggregates_rates_and_per_km_counts() {
    let eps = [
        episode("t", true, 0.2, 0, 0),
        episode("t", false, 0.3, 1, 1),
    ];
    let refs: Vec<_> = eps.iter().collect();
    let r = TaskReport::from_results("t", &refs);
    assert_eq!(r.episodes, 2);
    assert_eq!(r.success_rate, 50.0);
    assert_eq!(r.route_completion, 75.0);
    assert!((r.collision_pedestrian.unwrap() - 2.0).abs() < 1e-12);
    assert!((r.blocked.unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(r.collision_vehicle, Some(0.0));
}

#[test]
fn per_km_is_undefined_without_distance() {
    let eps = [episode("t", false, 0.0, 1, 0)];
    let refs: Vec<_> = eps.iter().collect();
    let r = TaskReport::from_results("t", &refs);
    assert_eq!(r.collision_pedestrian, None);
    assert!(
        BenchmarkReport::from_results("s", &["t".into()], eps.to_vec())
            .to_table()
            .contains('-')
    );
}

#[test]
fn report_has_the_seven_columns() {
    let r = BenchmarkReport::from_results(
        "s",
        &["a".into(), "b".into()],
        vec![episode("a", true, 1.0, 0, 0)],
    );
    let names: Vec<_> = r.tasks[0].columns().iter().map(|c| c.0).collect();
    assert_eq!(
        names,
        [
            "success_rate",
            "route_completion",
            "collision_pedestrian_per_km",
            "collision_vehicle_per_km",
            "collision_layout_per_km",
            "red_light_per_km",
            "blocked_per_km"
        ]
    );
    let table = r.to_table();
    for h in COLUMN_HEADERS {
        assert!(table.contains(h));
    }
    assert_eq!(r.tasks[1].episodes, 0);
}

#[test]
fn comparison_marks_best_and_ties() {
    let tasks = vec!["t".to_string()];
    let a = BenchmarkReport::from_results("s", &tasks, vec![episode("t", true, 1.0, 0, 0)]);
    let b = BenchmarkReport::from_results("s", &tasks, vec![episode("t", false, 1.0, 2, 0)]);
    let cmp = compare_reports(&[("a".into(), a.clone()), ("b".into(), b)]).unwrap();
    assert!(cmp.best[0][0][0] && !cmp.best[0][1][0]);
    assert!(cmp.best[0][0][2] && !cmp.best[0][1][2]);
    // Both have zero vehicle collisions: a tie.
    assert!(cmp.best[0][0][3] && cmp.best[0][1][3]);
    assert!(cmp.to_table().contains('*'));

    let other = BenchmarkReport::from_results("other", &tasks, vec![]);
    assert!(matches!(
        compare_reports(&[("a".into(), a), ("o".into(), other)]),
        Err(Error::Data(_))
    ));
}

#[test]
fn standard_suite_is_valid_and_round_trips() {
    let s = Suite::standard(3);
    s.validate().unwrap();
    assert_eq!(s.tasks.len(), 6);
    assert!(s.tasks.iter().all(|t| t.seeds.len() == 3));
    assert_eq!(Suite::from_toml(&s.to_toml()).unwrap(), s);
    let sc = s.scenario(&s.tasks[4], 1, 64);
    assert_eq!(sc.map, "town-b");
    assert_eq!(sc.density, "regular");
    assert!(!sc.renew_targets);
}

#[test]
fn malformed_suites_are_rejected() {
    let mut s = Suite::standard(2);
    s.tasks[0].palettes.clear();
    assert!(matches!(s.validate(), Err(Error::Config(_))));
    assert!(matches!(
        Suite::from_toml("name = \"x\"\ntasks = []\n"),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn rates_stay_in_percent_range(flags in prop::collection::vec((any::<bool>(), 0.0f64..2.0, 0u32..3), 1..20)) {
        let eps: Vec<_> = flags.iter().map(|&(s, km, p)| episode("t", s, km, p, 0)).collect();
        let refs: Vec<_> = eps.iter().collect();
        let r = TaskReport::from_results("t", &refs);
        prop_assert!((0.0..=100.0).contains(&r.success_rate));
        prop_assert!((0.0..=100.0).contains(&r.route_completion));
        if let Some(v) = r.collision_pedestrian {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }
}
