use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rlad::plot::{curves, render, render_png, t_interval};
use rlad::Error;

fn fake_run(dir: &Path, evals: &[(u64, f64)]) {
    fs::create_dir_all(dir).unwrap();
    let lines: Vec<String> = evals
        .iter()
        .map(|(s, r)| format!(r#"{{"kind":"eval","step":{s},"updates":0,"eval_return":{r}}}"#))
        .collect();
    fs::write(dir.join("metrics.jsonl"), lines.join("\n") + "\n").unwrap();
}

#[test]
fn t_interval_matches_tabulated_quantiles() {
    // Two values 1, 3: sd sqrt(2), se 1, t(0.95, 1 dof) = 6.313752.
    let (m, h) = t_interval(&[1.0, 3.0], 0.90);
    assert_eq!(m, 2.0);
    assert!((h - 6.313_752).abs() < 1e-5);
    // Three values 1, 2, 3: sd 1, se 1/sqrt(3), t(0.95, 2) = 2.919986.
    let (_, h) = t_interval(&[1.0, 2.0, 3.0], 0.90);
    assert!((h - 2.919_986 / 3f64.sqrt()).abs() < 1e-5);
    assert_eq!(t_interval(&[5.0], 0.90), (5.0, 0.0));
}

#[test]
fn curves_group_by_label_and_keep_common_steps() {
    let d = tempfile::tempdir().unwrap();
    fake_run(&d.path().join("a1"), &[(0, 1.0), (10, 2.0), (20, 3.0)]);
    fake_run(&d.path().join("a2"), &[(0, 3.0), (10, 4.0)]);
    fake_run(&d.path().join("b1"), &[(0, 0.0), (10, 1.0)]);
    let runs = vec![
        ("a".to_string(), d.path().join("a1")),
        ("a".to_string(), d.path().join("a2")),
        ("b".to_string(), d.path().join("b1")),
    ];
    let cs = curves(&runs).unwrap();
    assert_eq!(cs.len(), 2);
    assert_eq!(cs[0].label, "a");
    assert_eq!(
        cs[0].points.iter().map(|p| p.step).collect::<Vec<_>>(),
        vec![0, 10]
    );
    assert_eq!(cs[0].points[0].mean, 2.0);
    assert_eq!(cs[0].points[0].seeds, 2);
    assert_eq!(cs[1].points[1].lo, cs[1].points[1].hi);

    let img = render(&cs, "test").unwrap();
    assert_eq!((img.width(), img.height()), (960, 600));
    let out = d.path().join("p.png");
    render_png(&cs, "test", &out).unwrap();
    assert!(fs::metadata(out).unwrap().len() > 0);
}

#[test]
fn runs_without_evals_are_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    fake_run(&d.path().join("x"), &[]);
    let err = curves(&[("x".into(), d.path().join("x"))]).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

proptest! {
    #[test]
    fn interval_contains_the_mean_and_widens_with_confidence(v in prop::collection::vec(-100.0f64..100.0, 2..10)) {
        let (m, h90) = t_interval(&v, 0.90);
        let (_, h99) = t_interval(&v, 0.99);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((m - mean).abs() < 1e-9);
        prop_assert!(h90 >= 0.0 && h99 >= h90);
    }
}
