use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scd_stability::report::ReportDocument;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn scdstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scdstab"))
        .args(args)
        .env("STAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scdstab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn analyze_writes_a_report_that_round_trips() {
    let json = scratch("analyze.json");
    let p = problem("strict_complementarity.json");
    let out = scdstab(&["analyze", p.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("aubin") && stdout.contains("localization derivative"));

    let text = std::fs::read_to_string(&json).unwrap();
    let doc = ReportDocument::from_json(&text).unwrap();
    assert_eq!(doc.to_json() + "\n", text);
    for key in ["aubin", "sll", "tilt_stable", "full_stability"] {
        assert_eq!(doc.verdicts[key].as_str(), "yes", "{key}");
    }
    assert_eq!(doc.jacobian, Some(vec![vec![0.0, -1.0], vec![1.0, 1.0]]));
    assert_eq!(doc.seed, None);
}

#[test]
fn refuted_properties_are_reported_as_no() {
    let json = scratch("negative.json");
    let p = problem("negative_curvature.json");
    let out = scdstab(&["analyze", p.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let doc = ReportDocument::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc.verdicts["aubin"].as_str(), "no");
    assert!(doc.certificates.contains_key("strong_vs"));
}

#[test]
fn solve_follows_the_localization() {
    // active constraint: x = -b, y* = 1 + a* + b
    let json = scratch("solve.json");
    let p = problem("strict_complementarity.json");
    let out = scdstab(&[
        "solve",
        p.to_str().unwrap(),
        "--a-star",
        "0.1",
        "--b",
        "-0.05",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = ReportDocument::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let sol = doc.solution.unwrap();
    assert!((sol.point.x[0] - 0.05).abs() < 1e-10);
    assert!((sol.point.ystar[0] - 1.05).abs() < 1e-10);
    assert!(sol.point.residual <= 1e-10);
}

#[test]
fn probe_defaults_to_seed_zero_and_is_reproducible() {
    let p = problem("strict_complementarity.json");
    let run = |name: &str| {
        let json = scratch(name);
        let out = scdstab(&[
            "probe",
            p.to_str().unwrap(),
            "--samples",
            "30",
            "--check-derivative",
            "--json",
            json.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(json).unwrap()
    };
    let first = run("probe1.json");
    assert_eq!(first, run("probe2.json"));
    let doc = ReportDocument::from_json(&first).unwrap();
    assert_eq!(doc.seed, Some(0));
    let probe = doc.probe.unwrap();
    let kappa = probe.lipschitz.unwrap().kappa_hat;
    // the localization is linear with norm of [[0,-1],[1,1]] = golden ratio
    assert!((kappa - 1.618034).abs() < 1e-4, "{kappa}");
    assert!(probe.derivative.unwrap().max_rel_error < 1e-4);
}

#[test]
fn usage_errors_exit_with_one() {
    let p = problem("strict_complementarity.json");
    let p = p.to_str().unwrap();
    assert_eq!(code(&scdstab(&[])), 1);
    assert_eq!(code(&scdstab(&["frobnicate", p])), 1);
    assert_eq!(code(&scdstab(&["solve", p, "--a-star", "1,2"])), 1);
    assert_eq!(code(&scdstab(&["solve", p, "--b", "abc"])), 1);
    assert_eq!(code(&scdstab(&["--help"])), 0);
}

#[test]
fn invalid_files_exit_with_two() {
    assert_eq!(code(&scdstab(&["analyze", "/nonexistent/problem.json"])), 2);
    let bad = scratch("bad.json");
    std::fs::write(&bad, r#"{"n": 1, "m": 1, "f": "x1^", "F": ["x1"], "g": {"kind": "l1", "weights": [1]}, "point": {"x": [0], "y_star": [0]}}"#).unwrap();
    let out = scdstab(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(code(&scdstab(&["analyze", bad.to_str().unwrap()])), 2);
}

#[test]
fn unsolvable_perturbation_exits_with_four() {
    // KKT points need a* >= b: x = -a* or x = -b with y* = a* - b
    let p = problem("negative_curvature.json");
    let out = scdstab(&["solve", p.to_str().unwrap(), "--a-star", "-0.01"]);
    assert_eq!(code(&out), 4);
}
