use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn msglmb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msglmb"))
        .args(args)
        .env("MSGLMB_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = msglmb(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Desk seed whose truth holds several objects.
const DESK_SEED: &str = "4";

fn simulate(dir: &Path, preset: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("sim_{preset}_{seed}"));
    ok(&["simulate", "--preset", preset, "--seed", seed, "--out", s(&out)]);
    out
}

fn track(sim: &Path, out: &Path, extra: &[&str]) {
    let scenario = sim.join("scenario.json");
    let measurements = sim.join("measurements.json");
    let mut args = vec![
        "track",
        "--scenario",
        s(&scenario),
        "--measurements",
        s(&measurements),
        "--out",
        s(out),
        "--gibbs-iters",
        "30",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Evaluation rows as `(scan, [ospa_total, ospa_loc, ospa_card, ospa2_total, ...])`.
fn evaluation(path: &Path) -> Vec<(usize, Vec<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scan,ospa_total,ospa_loc,ospa_card,ospa2_total,ospa2_loc,ospa2_card"
    );
    lines
        .map(|l| {
            let mut f = l.split(',');
            let scan = f.next().unwrap().parse().unwrap();
            (scan, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "desk", "7");
    let b = dir.path().join("again");
    ok(&["simulate", "--preset", "desk", "--seed", "7", "--out", s(&b)]);
    for f in ["scenario.json", "truth.csv", "measurements.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = simulate(dir.path(), "desk", "8");
    assert_ne!(fs::read(a.join("measurements.json")).unwrap(), fs::read(c.join("measurements.json")).unwrap());
}

#[test]
fn missing_scenario_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", "1");
    let mut json: Value = serde_json::from_str(&fs::read_to_string(sim.join("scenario.json")).unwrap()).unwrap();
    json.as_object_mut().unwrap().remove("R");
    let broken = dir.path().join("broken.json");
    fs::write(&broken, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let out = msglmb(&["simulate", "--scenario", s(&broken), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`R`"), "{err}");
}

#[test]
fn v_v_2018_preset_block_holds_its_parameters() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "v-v-2018", "0");
    let json: Value = serde_json::from_str(&fs::read_to_string(sim.join("scenario.json")).unwrap()).unwrap();
    let p = &json["preset"];
    assert_eq!(p["name"], "v-v-2018");
    assert_eq!(p["scans"], 100);
    assert_eq!(p["sampling_period"], 1.0);
    assert_eq!(p["sigma_nu"], 5.0);
    assert_eq!(p["sigma_epsilon"], 10.0);
    assert_eq!(p["P_S"], 0.99);
    assert_eq!(p["P_D"], 0.77);
    assert_eq!(p["lambda_c"], 1.65e-5);
    assert_eq!(p["region"], serde_json::json!([[-1000.0, 1000.0], [-1000.0, 1000.0]]));
    assert!((p["mean_clutter_per_scan"].as_f64().unwrap() - 66.0).abs() < 1e-9);
    assert_eq!(p["r_b"], 0.04);
    assert_eq!(
        p["m_b"],
        serde_json::json!([[0.0, 0.0, 100.0, 0.0], [-100.0, 0.0, -100.0, 0.0], [100.0, 0.0, -100.0, 0.0]])
    );
    assert_eq!(p["P_B_diag_std"], serde_json::json!([10.0, 10.0, 10.0, 10.0]));
    assert_eq!(json["births"].as_array().unwrap().len(), 300);
}

#[test]
fn filter_tracks_the_desk_scenario_reproducibly() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        track(&sim, out, &["--mode", "filter", "--components", "200", "--seed", "3"]);
    }
    let tracks = fs::read_to_string(a.join("tracks.csv")).unwrap();
    assert!(tracks.starts_with("label,scan,x1,x2,x3,x4\n"));
    assert!(tracks.lines().count() > 1, "no track rows");
    for f in ["tracks.csv", "tracks.json", "density.json", "diagnostics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn smoothing_modes_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    for mode in ["smooth-recursive", "smooth-batch"] {
        let (a, b) = (dir.path().join(format!("{mode}-a")), dir.path().join(format!("{mode}-b")));
        track(&sim, &a, &["--mode", mode, "--components", "50", "--chains", "3"]);
        track(&sim, &b, &["--mode", mode, "--components", "50", "--chains", "3", "--jobs", "2"]);
        for f in ["tracks.csv", "density.json", "diagnostics.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{mode} {f}");
        }
    }
}

#[test]
fn single_component_budget_dumps_one_component() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    let out = dir.path().join("one");
    track(&sim, &out, &["--mode", "smooth-recursive", "--components", "1"]);
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("density.json")).unwrap()).unwrap();
    let components = json["components"].as_array().unwrap();
    assert_eq!(components.len(), 1);
    assert!((components[0]["weight"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn evaluating_truth_against_itself_gives_zeros() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    let truth = sim.join("truth.csv");
    let out = dir.path().join("eval.csv");
    let run = ok(&["evaluate", "--truth", s(&truth), "--estimate", s(&truth), "--out", s(&out)]);
    let rows = evaluation(&out);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|(_, v)| v.iter().all(|x| *x == 0.0)));
    let log = String::from_utf8_lossy(&run.stderr);
    assert!(log.contains("c=100 p=1, OSPA² window 10"), "{log}");
}

#[test]
fn empty_estimate_costs_the_cutoff_wherever_truth_exists() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    let truth = sim.join("truth.csv");
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("eval.csv");
    ok(&["evaluate", "--truth", s(&truth), "--estimate", s(&empty), "--scans", "20", "--out", s(&out)]);
    let occupied: std::collections::BTreeSet<usize> = fs::read_to_string(&truth)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!occupied.is_empty());
    let rows = evaluation(&out);
    assert_eq!(rows.len(), 20);
    for (scan, v) in rows {
        let expected = if occupied.contains(&scan) { 100.0 } else { 0.0 };
        assert_eq!(v[0], expected, "scan {scan}");
        assert_eq!(v[2], expected, "scan {scan}");
    }
}

#[test]
fn bad_metric_parameters_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "desk", DESK_SEED);
    let truth = sim.join("truth.csv");
    let out = msglmb(&["evaluate", "--truth", s(&truth), "--estimate", s(&truth), "--window", "0", "--out", s(&dir.path().join("e.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn montecarlo_writes_runs_and_mean() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("mc");
    ok(&[
        "montecarlo", "--preset", "desk", "--mode", "filter", "--components", "50", "--gibbs-iters", "20", "--runs", "2", "--seed", "4",
        "--out", s(&out),
    ]);
    for run in ["run_000", "run_001"] {
        for f in ["tracks.csv", "truth.csv", "measurements.json", "evaluation.csv"] {
            assert!(out.join(run).join(f).exists(), "{run}/{f}");
        }
    }
    assert_eq!(evaluation(&out.join("mean.csv")).len(), 20);
}
