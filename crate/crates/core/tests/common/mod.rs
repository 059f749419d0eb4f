#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use gdmp::bodies::{cube, StarBody, StarSpec, SupportPolytope};
use gdmp::dual_measures::DiscreteMeasure;
use gdmp::io::{self, MeasureDoc, PolytopeDoc, StarBodyDoc};
use gdmp::sphere_quad::UnitVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = UnitVector::normalize(&v) {
            return u;
        }
    }
}

/// Cube normals plus `extra` random normals; supports in [0.6, 1.6].
/// With `even`, the extra normals come in antipodal pairs with equal support.
pub fn random_polytope(rng: &mut ChaCha8Rng, n: usize, extra: usize, even: bool) -> SupportPolytope {
    let mut normals = cube(n, 1.0).normals();
    let mut support: Vec<f64> = Vec::new();
    for _ in 0..n {
        let h = rng.random_range(0.6..1.6);
        support.push(h);
        support.push(if even { h } else { rng.random_range(0.6..1.6) });
    }
    for _ in 0..extra {
        let u = random_unit(rng, n);
        let h = rng.random_range(0.6..1.6);
        if even {
            normals.push(u.negated());
            support.push(h);
        }
        normals.push(u);
        support.push(h);
    }
    SupportPolytope::new(normals, support).expect("bounded polytope with the origin inside")
}

pub fn ellipsoid(axes: &[f64]) -> StarBody {
    StarBody::ellipsoid(axes.to_vec(), None).unwrap()
}

pub fn ball(n: usize) -> StarBody {
    StarBody::ball(n, 1.0).unwrap()
}

/// Uniform measure on the signed basis vectors.
pub fn cross_measure(n: usize, total: f64) -> DiscreteMeasure {
    DiscreteMeasure::uniform(cube(n, 1.0).normals(), total).unwrap()
}

/// Cross measure in R^3 with weight `line` on each of +-e1 and the rest
/// spread evenly over +-e2, +-e3.
pub fn line_heavy_measure(line: f64) -> DiscreteMeasure {
    let rest = (1.0 - 2.0 * line) / 4.0;
    cross_measure(3, 1.0)
        .with_weights(vec![line, line, rest, rest, rest, rest])
        .unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Runs the binary with `dir` as working directory so that relative paths
/// in its output do not depend on where the test runs.
pub fn gdmp_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdmp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("gdmp binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn describe(out: &Output) -> String {
    format!(
        "exit {}; stdout: {}; stderr: {}",
        code(out),
        String::from_utf8_lossy(&out.stdout).trim(),
        String::from_utf8_lossy(&out.stderr).trim()
    )
}

pub fn write_polytope(dir: &Path, name: &str, k: &SupportPolytope) {
    io::write_document(&dir.join(name), &PolytopeDoc::from_polytope(k)).unwrap();
}

pub fn write_measure(dir: &Path, name: &str, mu: &DiscreteMeasure) {
    io::write_document(&dir.join(name), &MeasureDoc::from_measure(mu)).unwrap();
}

pub fn write_star(dir: &Path, name: &str, dim: usize, spec: StarSpec) {
    io::write_document(&dir.join(name), &StarBodyDoc::new(dim, spec)).unwrap();
}

pub fn ball_spec() -> StarSpec {
    StarSpec::Ball { radius: 1.0 }
}

pub fn ellipsoid_spec() -> StarSpec {
    StarSpec::Ellipsoid {
        semi_axes: vec![1.0, 2.0, 3.0],
        rotation: None,
    }
}
