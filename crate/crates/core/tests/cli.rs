mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use common::*;
use gdmp::bodies::{cube, truncated_cube, StarSpec};
use gdmp::io::{self, MeasureDoc};
use gdmp::sphere_quad::QUAD_REL_TOL;
use serde_json::Value;

fn weights(path: &Path) -> Vec<f64> {
    io::read_document::<MeasureDoc>(path).unwrap().weights
}

fn json(path: &Path) -> Value {
    io::read_document(path).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_polytope(dir.path(), "cube.json", &cube(3, 1.0));
    write_star(dir.path(), "ball.json", 3, ball_spec());
    write_star(dir.path(), "ellipsoid.json", 3, ellipsoid_spec());
    dir
}

#[test]
fn cube_at_q3_has_six_atoms_of_four_thirds() {
    let dir = setup();
    let out = gdmp_in(dir.path(), &["curvature", "--body", "cube.json", "--star", "ball.json", "--q", "3"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let w = weights(&dir.path().join("measure.json"));
    assert_eq!(w.len(), 6);
    for v in w {
        assert!(rel(v, 4.0 / 3.0) < QUAD_REL_TOL, "{v}");
    }
}

#[test]
fn curvature_at_q_equal_n_ignores_the_star_body() {
    let dir = setup();
    let d = dir.path();
    for (star, out_dir) in [("ball.json", "a"), ("ellipsoid.json", "b")] {
        let k = "k.json";
        write_polytope(d, k, &truncated_cube(1.3));
        let out = gdmp_in(d, &["curvature", "--body", k, "--star", star, "--q", "3", "--out-dir", out_dir]);
        assert_eq!(code(&out), 0, "{}", describe(&out));
    }
    let (a, b) = (weights(&d.join("a/measure.json")), weights(&d.join("b/measure.json")));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn cube_at_q0_gets_normal_cone_areas_over_three() {
    let dir = setup();
    let out = gdmp_in(dir.path(), &["curvature", "--body", "cube.json", "--star", "ball.json", "--q", "0"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    for v in weights(&dir.path().join("measure.json")) {
        assert!(rel(v, 4.0 * PI / 6.0 / 3.0) < 1e-6, "{v}");
    }
}

#[test]
fn solve_ball_instance_converges() {
    let dir = setup();
    let d = dir.path();
    write_polytope(d, "k.json", &truncated_cube(1.3));
    let out = gdmp_in(d, &["curvature", "--body", "k.json", "--star", "ball.json", "--q", "0.8"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let out = gdmp_in(d, &["solve", "--measure", "measure.json", "--star", "ball.json", "--q", "0.8", "--out-dir", "out"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let report = json(&d.join("out/report.json"));
    assert_eq!(report["report"]["status"], "converged");
    assert!(report["report"]["residual"]["residual"].as_f64().unwrap() <= 1e-2);
    let trace = fs::read_to_string(d.join("out/trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);

    // the solution feeds straight back into verify
    let out = gdmp_in(
        d,
        &["verify", "--body", "out/solution.json", "--measure", "measure.json", "--star", "ball.json", "--q", "0.8"],
    );
    assert_eq!(code(&out), 0, "{}", describe(&out));
    assert_eq!(json(&d.join("verify.json"))["pass"], true);
}

#[test]
fn q0_solve_reports_mass_balance_gap() {
    let dir = setup();
    let d = dir.path();
    write_measure(d, "mu.json", &cross_measure(3, 1.0));
    let out = gdmp_in(d, &["solve", "--measure", "mu.json", "--star", "ball.json", "--q", "0"]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
    let balance = &json(&d.join("report.json"))["report"]["preconditions"]["mass_balance"];
    let gap = balance["gap"].as_f64().unwrap_or(f64::NAN);
    // gap is relative to Vol(Q)
    assert!(rel(gap.abs(), 1.0 - 3.0 / (4.0 * PI)) < 1e-3, "{balance}");
}

#[test]
fn check_exit_codes() {
    let dir = setup();
    let d = dir.path();
    write_measure(d, "uniform.json", &cross_measure(3, 1.0));
    write_measure(d, "line.json", &line_heavy_measure(0.3));
    write_measure(d, "slack.json", &line_heavy_measure(0.25 - 5e-13));
    for (file, want) in [("uniform.json", 0), ("line.json", 2), ("slack.json", 4)] {
        let out = gdmp_in(d, &["check", "--measure", file, "--q", "2"]);
        assert_eq!(code(&out), want, "{file}: {}", describe(&out));
        let verdict = json(&d.join("preconditions.json"))["report"]["verdict"].clone();
        assert_eq!(verdict, ["pass", "pass", "fail", "fail", "indeterminate"][want as usize]);
    }
}

#[test]
fn estimate_identity_at_alpha_n_is_sphere_area() {
    let dir = tempfile::tempdir().unwrap();
    let out = gdmp_in(dir.path(), &["estimate", "--alpha", "3", "--diag", "1,1,1"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let ratio = json(&dir.path().join("estimate.json"))["row"]["ratio"].as_f64().unwrap();
    assert!(rel(ratio, 4.0 * PI) < 1e-3, "{ratio}");
    let csv = fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "alpha,m,spread,entries,integral,estimate,ratio,case,route,quad_error"
    );
}

#[test]
fn estimate_sweep_reports_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = gdmp_in(dir.path(), &["estimate", "--alpha", "1", "--diag", "10,1,1", "--spreads", "1,10,100,1000"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let doc = json(&dir.path().join("estimate.json"));
    let band = doc["sweep"]["band"].as_f64().unwrap();
    assert!(band >= 1.0 && band <= 10.0, "{band}");
    let csv = fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 4);
}

#[test]
fn selftest_passes_and_names_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = gdmp_in(dir.path(), &["selftest"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let out = gdmp_in(dir.path(), &["selftest", "--inject-fault", "weight-sum"]);
    assert_ne!(code(&out), 0);
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("weight-sum invariant"), "{text}");
}

#[test]
fn input_errors_exit_1_with_diagnostic() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.json"), "{\"schema\": \"gdmp.measure/1\", \"dim\": 3, \"atomz\": []}").unwrap();
    let out = gdmp_in(d, &["check", "--measure", "bad.json", "--q", "2"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("atomz") && err.contains("line 1"), "{err}");

    let out = gdmp_in(d, &["check", "--measure", "missing.json", "--q", "2"]);
    assert_eq!(code(&out), 1);
    let out = gdmp_in(d, &["curvature", "--body", "cube.json", "--star", "ball.json", "--q", "1", "--grid-kind", "hex"]);
    assert_eq!(code(&out), 1);
    write_star(d, "flat.json", 2, StarSpec::Ball { radius: 1.0 });
    let out = gdmp_in(d, &["curvature", "--body", "cube.json", "--star", "flat.json", "--q", "1"]);
    assert_eq!(code(&out), 1, "{}", describe(&out));
}

#[test]
fn written_documents_recanonicalize_to_the_same_bytes() {
    let dir = setup();
    let d = dir.path();
    let runs: [&[&str]; 3] = [
        &["curvature", "--body", "cube.json", "--star", "ellipsoid.json", "--q", "0.8", "--grid-resolution", "32"],
        &["check", "--measure", "measure.json", "--q", "0.8"],
        &["solve", "--measure", "measure.json", "--star", "ellipsoid.json", "--q", "0.8", "--grid-resolution", "32"],
    ];
    for args in runs {
        let out = gdmp_in(d, args);
        assert_eq!(code(&out), 0, "{}", describe(&out));
    }
    for name in ["measure.json", "preconditions.json", "report.json", "solution.json"] {
        let bytes = fs::read(d.join(name)).unwrap();
        let value: Value = io::parse_document(std::str::from_utf8(&bytes).unwrap(), name).unwrap();
        let again = io::pretty_bytes(&value).unwrap();
        let (a, b) = (String::from_utf8_lossy(&bytes), String::from_utf8_lossy(&again));
        if let Some((x, y)) = a.lines().zip(b.lines()).find(|(x, y)| x != y) {
            panic!("{name}: {x} became {y}");
        }
        assert_eq!(again, bytes, "{name}");
    }
}
