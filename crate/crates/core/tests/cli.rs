use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msloc::channel::{noiseless_rss, RssObservation};
use msloc::eval::match_sources;
use msloc::mle::SolveReport;
use msloc::scenario::{Point2, Roi, Scenario, Source};

fn msloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = msloc(&["simulate", "--seed", "3", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(dir.path().join("scenario.json")).unwrap();
    let scenario: Scenario = serde_json::from_str(&text).unwrap();
    scenario.validate().unwrap();
    assert_eq!(scenario.sensors.len(), 150);
    assert_eq!(scenario.sources.len(), 3);
    assert_eq!(scenario.seed, 3);
    // Round trip is lossless.
    let again = serde_json::to_string_pretty(&scenario).unwrap() + "\n";
    assert_eq!(again, text);

    let obs: RssObservation =
        serde_json::from_str(&fs::read_to_string(dir.path().join("observation.json")).unwrap())
            .unwrap();
    assert_eq!(obs.len(), 150);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(msloc(&["simulate", "--seed", "7", "--out", path(d.path())]).status.success());
    }
    for f in ["scenario.json", "observation.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn single_source_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"seed\": 1,\n  \"sources\": 1\n}\n").unwrap();
    let out = msloc(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("sources"), "{err}");
}

#[test]
fn zero_trials_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = msloc(&["sweep", "--trials", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let out = msloc(&["simulate", "--out", path(&file)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_scenario_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("scenario.json");
    let obs = dir.path().join("observation.json");
    fs::write(&sc, "{\"roi\": [1, 2]").unwrap();
    fs::write(&obs, "[1.0]").unwrap();
    let out = msloc(&[
        "solve",
        "--scenario",
        path(&sc),
        "--observation",
        path(&obs),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.json"));
}

// Equal powers: with unequal ones the adaptive threshold keeps only the
// strongest grid point.
fn on_grid_scenario(sigma_s: f64) -> Scenario {
    // Sensors on a jittered 12 x 12 lattice plus six extra points.
    let mut sensors = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            let jitter = ((i * 7 + j * 13) % 11) as f64 * 9.0;
            sensors.push(Point2::new(60.0 + i as f64 * 165.0 + jitter, 40.0 + j as f64 * 170.0 + jitter / 2.0));
        }
    }
    for t in 0..6 {
        sensors.push(Point2::new(150.0 + 300.0 * t as f64, 1000.0 + 37.0 * t as f64));
    }
    Scenario {
        roi: Roi { l: 2000.0, w: 2000.0 },
        sensors,
        sources: vec![
            Source { position: Point2::new(400.0, 600.0), power: 4000.0 },
            Source { position: Point2::new(1400.0, 400.0), power: 4000.0 },
            Source { position: Point2::new(1000.0, 1600.0), power: 4000.0 },
        ],
        alpha: 2.5,
        sigma_s,
        p_low: 2000.0,
        p_high: 4000.0,
        seed: 0,
    }
}

#[test]
fn noiseless_on_grid_solve_lands_within_one_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = on_grid_scenario(0.0);
    let sc = dir.path().join("scenario.json");
    let obs = dir.path().join("observation.json");
    fs::write(&sc, serde_json::to_string(&scenario).unwrap()).unwrap();
    fs::write(&obs, serde_json::to_string(&noiseless_rss(&scenario)).unwrap()).unwrap();
    let out = msloc(&[
        "solve",
        "--scenario",
        path(&sc),
        "--observation",
        path(&obs),
        "--out",
        path(dir.path()),
        "--debug-csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: SolveReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let truth: Vec<Point2> = scenario.sources.iter().map(|s| s.position).collect();
    let est: Vec<Point2> = report.theta.sources().iter().map(|s| s.position).collect();
    let m = match_sources(&truth, &est).unwrap();
    assert!(m.errors.iter().all(|&e| e <= 200.0), "{:?}", m.errors);

    let csv = fs::read_to_string(dir.path().join("srwac_debug.csv")).unwrap();
    assert_eq!(csv.lines().count(), 122);
    assert_eq!(csv.lines().next().unwrap(), "grid_index,u,v,s_star,retained,cluster");
}

#[test]
fn shadowed_solve_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msloc(&["simulate", "--seed", "5", "--sigma", "4", "--out", path(dir.path())])
        .status
        .success());
    let out = msloc(&[
        "solve",
        "--scenario",
        path(&dir.path().join("scenario.json")),
        "--observation",
        path(&dir.path().join("observation.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: SolveReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.theta.k(), 3);
    assert!(report.trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn sensor_sweep_reports_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = msloc(&[
        "sweep",
        "--sigma",
        "6",
        "--sensors",
        "60,90,120,150,180",
        "--trials",
        "2",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rho: Vec<f64> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let expected = [1.5e-5, 2.25e-5, 3e-5, 3.75e-5, 4.5e-5];
    assert_eq!(rho.len(), 5);
    for (r, e) in rho.iter().zip(expected) {
        assert!((r - e).abs() < 1e-15, "{r} vs {e}");
    }
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 5 * 2);
    let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 5 * 200);
}
