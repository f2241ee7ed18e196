use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drsf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn bounds_from_generated_samples_are_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = drsf(dir.path(), &["samples", "--seed", "4", "--out", "s"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        entries(&dir.path().join("s")),
        ["current.csv", "substation.csv", "voltage.csv"]
    );

    let out = drsf(
        dir.path(),
        &[
            "bounds", "--samples", "s/voltage.csv", "--alpha", "0.1", "--epsilon", "0.01",
            "--out", "b.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    let v = &b["voltage"];
    assert!(v["certified_prob"].as_f64().unwrap() >= 0.9);
    assert_eq!(v["lower"].as_array().unwrap().len(), 33);
}

#[test]
fn missing_config_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = drsf(
        dir.path(),
        &["simulate", "--config", "missing.json", "--out", "r.json", "--csv", "r.csv"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert!(entries(dir.path()).is_empty());
}

#[test]
fn unknown_flags_and_bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&drsf(dir.path(), &["simulate", "--bogus"])), 2);
    assert_eq!(code(&drsf(dir.path(), &["bounds"])), 2);
    assert_eq!(
        code(&drsf(dir.path(), &["simulate", "--sigma", "-1", "--horizon", "1"])),
        2
    );
    assert_eq!(
        code(&drsf(dir.path(), &["filter", "--action", "[0.1, 0.2]"])),
        2
    );
    assert_eq!(
        code(&drsf(dir.path(), &["filter", "--network", "only_one.csv", "--action", "[]"])),
        2
    );
    assert_eq!(code(&drsf(dir.path(), &["--help"])), 0);
}

#[test]
fn empty_robust_set_is_a_domain_error_unless_falling_back() {
    let dir = tempfile::tempdir().unwrap();
    // At this radius the robust margins are wider than the voltage band.
    let out = drsf(dir.path(), &["samples", "--seed", "2", "--n-samples", "20", "--out", "s"]);
    assert_eq!(code(&out), 0);
    let out = drsf(
        dir.path(),
        &[
            "bounds", "--samples", "s/voltage.csv", "--samples", "s/current.csv", "--samples",
            "s/substation.csv", "--epsilon", "0.05", "--out", "b.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let q = "[0.1,0.1,0.1,0.1,0.1,0.1]";
    let strict = drsf(
        dir.path(),
        &["filter", "--bounds", "b.json", "--action", q, "--strict", "--out", "f.json"],
    );
    assert_eq!(code(&strict), 1, "{}", String::from_utf8_lossy(&strict.stderr));
    assert!(!dir.path().join("f.json").exists());

    let lax = drsf(dir.path(), &["filter", "--bounds", "b.json", "--action", q, "--out", "f.json"]);
    assert_eq!(code(&lax), 0, "{}", String::from_utf8_lossy(&lax.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
    assert_eq!(r["fallback"], true);
    assert_eq!(r["q_safe"].as_array().unwrap().len(), 6);
    assert!(r["exactness_gap"].as_f64().unwrap() <= 1e-5);
    assert!(r["solve_time"].as_f64().unwrap() > 0.0);
}

#[test]
fn filter_leaves_a_safe_proposal_alone() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.json"), "[0, 0, 0, 0, 0, 0]").unwrap();
    let out = drsf(dir.path(), &["filter", "--load", "0.5", "--pv", "0.5", "--action", "q.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["fallback"], false);
    assert!(r["deviation"].as_f64().unwrap() < 1e-6);
}

/// Per-step CSV without the wall-clock column.
fn without_timing(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn seed_determines_simulation_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let out = drsf(
            dir.path(),
            &[
                "simulate", "--seed", seed, "--horizon", "3", "--scenarios", "2", "--jobs", "2",
                "--csv", name, "--out", "r.json",
            ],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        without_timing(&fs::read_to_string(dir.path().join(name)).unwrap())
    };
    let a = run("9", "a.csv");
    assert_eq!(a.len(), 1 + 2 * 3);
    assert!(a[0].starts_with("scenario,step,violations_v"));
    assert_eq!(a, run("9", "b.csv"));
    assert_ne!(a, run("10", "c.csv"));
}

#[test]
fn sweep_writes_one_row_per_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = drsf(
        dir.path(),
        &[
            "sweep", "--epsilons", "0,0.05", "--horizon", "6", "--n-samples", "20", "--seed",
            "1", "--out", "sweep.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert!(text.starts_with("epsilon,voltage_violation_probability,"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[1][0], 0.05);
    // Wider radius, wider voltage box.
    assert!(rows[1][6] > rows[0][6]);
    assert!(rows[1][1] <= rows[0][1]);
}

#[test]
fn bench_reports_timing_and_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let out = drsf(dir.path(), &["bench", "--repeats", "3", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["results"].as_array().unwrap().len(), 3);
    assert!(r["max_ms"].as_f64().unwrap() >= r["mean_ms"].as_f64().unwrap());
    assert!(r["max_exactness_gap"].as_f64().unwrap() <= 1e-5);
}
