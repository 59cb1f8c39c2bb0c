use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thermal-cbf"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_pgm(path: &Path, n: usize, occupied: impl Fn(usize, usize) -> bool) {
    let mut text = format!("P2\n# fixture\n{n} {n}\n255\n");
    for i in 0..n {
        let row: Vec<&str> = (0..n).map(|j| if occupied(i, j) { "0" } else { "255" }).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

/// 7x7 map with a 2x2 obstacle at rows/cols 2..=3 (0 = black = occupied).
fn write_fixture(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("fixture.pgm");
    write_pgm(&path, 7, |i, j| (2..4).contains(&i) && (2..4).contains(&j));
    path
}

fn synth_args<'a>(map: &'a str, out: &'a str, stats: &'a str) -> Vec<&'a str> {
    vec!["synth", "--map", map, "--cell-size", "1", "--delta", "1.2", "--out", out, "--stats", stats]
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_fixture(dir.path());
    let (out, stats) = (dir.path().join("h.csv"), dir.path().join("h.json"));
    let o = run(&synth_args(s(&map), s(&out), s(&stats)));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let json = read_json(&stats);
    assert_eq!(json["converged"], true);
    assert_eq!(json["n_unknowns"], 8);
    assert_eq!(json["height"], 7);

    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    for (i, j) in [(1, 2), (1, 3), (2, 1), (2, 4), (3, 1), (3, 4), (4, 2), (4, 3)] {
        assert!((rows[i][j] - 1.0 / 3.0).abs() < 1e-8);
    }
    assert_eq!(rows[2][2], -1.0);
    assert_eq!(rows[0][0], 1.0);
}

#[test]
fn synth_flag_order_is_irrelevant() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_fixture(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let stats = dir.path().join("s.json");
    assert_eq!(code(&run(&synth_args(s(&map), s(&a), s(&stats)))), 0);
    let o = run(&[
        "synth", "--stats", s(&stats), "--out", s(&b), "--delta", "1.2", "--cell-size", "1", "--map", s(&map),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_missing_map_is_usage_error() {
    let o = run(&["synth", "--out", "x.csv", "--stats", "x.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn synth_malformed_map() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("bad.pgm");
    std::fs::write(&map, "P2\n3 3\n255\n0 0\n").unwrap();
    let o = run(&synth_args(s(&map), s(&dir.path().join("h.csv")), s(&dir.path().join("h.json"))));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn synth_forced_non_convergence_still_writes_stats() {
    let dir = tempfile::tempdir().unwrap();
    // An L-shaped obstacle, so the solution is not a multiple of the rhs.
    let map = dir.path().join("l.pgm");
    write_pgm(&map, 9, |i, j| (i, j) == (3, 3) || (i, j) == (3, 4) || (i, j) == (4, 3));
    let (out, stats) = (dir.path().join("h.csv"), dir.path().join("h.json"));
    let mut args = synth_args(s(&map), s(&out), s(&stats));
    args[6] = "2.5";
    args.extend(["--tol", "1e-30", "--max-iters", "1"]);
    let o = run(&args);
    assert_eq!(code(&o), 3);
    let json = read_json(&stats);
    assert_eq!(json["converged"], false);
    assert_eq!(json["iterations"], 1);
    assert!(out.exists());
}

#[test]
fn synth_dumps_system() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_fixture(dir.path());
    let prefix = dir.path().join("sys");
    let mut args = synth_args(s(&map), "", "");
    let (out, stats) = (dir.path().join("h.csv"), dir.path().join("h.json"));
    args[8] = s(&out);
    args[10] = s(&stats);
    args.extend(["--dump-system", s(&prefix)]);
    assert_eq!(code(&run(&args)), 0);
    let mtx = std::fs::read_to_string(dir.path().join("sys.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
    let rhs = std::fs::read_to_string(dir.path().join("sys.rhs")).unwrap();
    assert_eq!(rhs.lines().count(), 8);
}

const SMALL_SCENARIO: &str = r#"{
  "arena": {"width": 2.0, "height": 2.0},
  "obstacles": [{"type": "circle", "center": [1.0, 1.03], "radius": 0.12}],
  "start": {"x": 0.4, "y": 1.0, "theta": 0.0},
  "goals": [[1.6, 1.0]],
  "sense": {"height": 60, "width": 60, "cell_size": 0.02},
  "synthesis": {"robot_radius_m": 0.1},
  "model": {"type": "unicycle", "r": 0.05},
  "max_steps": 3000
}"#;

fn write_scenario(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_small_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), SMALL_SCENARIO);
    let out = dir.path().join("ep");
    let o = run(&["simulate", "--scenario", s(&scn), "--out-dir", s(&out), "--dump-fields"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "h_log.csv", "timings.csv", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m = read_json(&out.join("metrics.json"));
    assert_eq!(m["collisions"], 0);
    assert_eq!(m["goals_reached"], 1);
    let stdout: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, m);
    assert!(std::fs::read_dir(out.join("fields")).unwrap().count() > 0);
}

#[test]
fn simulate_seed_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), SMALL_SCENARIO);
    let traj = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate", "--scenario", s(&scn), "--out-dir", s(&out), "--seed", "17", "--randomize", "3", "--max-steps",
            "150",
        ]);
        assert!([0, 4].contains(&code(&o)));
        std::fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_eq!(traj("a"), traj("b"));
}

#[test]
fn simulate_start_inside_obstacle() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_SCENARIO.replace(r#""x": 0.4, "y": 1.0"#, r#""x": 1.0, "y": 1.0"#);
    let scn = write_scenario(dir.path(), &text);
    let o = run(&["simulate", "--scenario", s(&scn), "--out-dir", s(&dir.path().join("ep"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_invalid_json() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), "{\"arena\": 3}");
    let o = run(&["simulate", "--scenario", s(&scn), "--out-dir", s(&dir.path().join("ep"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_unfinished_episode_exits_4_with_logs() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), SMALL_SCENARIO);
    let out = dir.path().join("ep");
    let o = run(&["simulate", "--scenario", s(&scn), "--out-dir", s(&out), "--max-steps", "10"]);
    assert_eq!(code(&o), 4);
    let m = read_json(&out.join("metrics.json"));
    assert_eq!(m["termination"], "max_steps");
    assert_eq!(std::fs::read_to_string(out.join("h_log.csv")).unwrap().lines().count(), 11);
}

#[test]
fn simulate_bundled_paperlike() {
    let scn = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paperlike.json");
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", s(&scn), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let m = read_json(&dir.path().join("metrics.json"));
    assert_eq!(m["goals_reached"], 3);
    assert!(m["min_h"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_small() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--size", "60", "--obstacles", "2", "--trials", "3", "--seed", "4", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(dir.path().join("bench_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    assert!(rows.lines().nth(1).unwrap().starts_with("0,60,gmres,"));
    let summary = read_json(&dir.path().join("bench_summary.json"));
    assert_eq!(summary["trials"], 3);
    assert_eq!(summary["reference"]["total_ms"], 9.31);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reference 6962.60"));
}

#[test]
fn bench_zero_trials() {
    assert_eq!(code(&run(&["bench", "--trials", "0"])), 2);
}

#[test]
fn verify_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let report = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&["verify", "--trials", "6", "--max-n", "120", "--seed", "8", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 5);
        std::fs::read(out).unwrap()
    };
    assert_eq!(report("a.json"), report("b.json"));
}

#[test]
fn verify_injected_assembly_bug() {
    let dir = tempfile::tempdir().unwrap();
    let replay = dir.path().join("replay.json");
    let o = run(&[
        "verify", "--trials", "3", "--max-n", "80", "--seed", "1", "--inject-fault", "assembly_rhs", "--out",
        s(&dir.path().join("r.json")), "--replay", s(&replay),
    ]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL harmonic_residual"));
    let cases = read_json(&replay);
    let first = &cases.as_array().unwrap()[0];
    assert_eq!(first["check"], "harmonic_residual");
    assert_eq!(first["seed"], 1);
}

#[test]
fn log_level_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_fixture(dir.path());
    let o = bin()
        .env("THERMAL_CBF_LOG", "debug")
        .args(synth_args(s(&map), s(&dir.path().join("h.csv")), s(&dir.path().join("h.json"))))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
