//! Acceptance suite. Each criterion prints one PASS/FAIL line to stderr
//! (visible without `--nocapture`); the test fails if any criterion does.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use gdmp::asymptotics::{
    dimension_reduce_check, ellipsoid_dual_volume_estimate, power_reduce_check, ratio_sweep, sweep_diagonal,
    DiagonalSpec,
};
use gdmp::bodies::{cube, fibonacci_polytope, truncated_cube, StarBody, SupportPolytope};
use gdmp::dual_measures::{dual_curvature_measure, dual_entropy, dual_mixed_volume, DiscreteMeasure};
use gdmp::io::{self, ConfigDoc, PolytopeDoc};
use gdmp::measure_checks::subspace_mass_sup;
use gdmp::solver::{gradient, minimize_on_grid, objective_J, objective_Jtilde, SolveConfig};
use gdmp::sphere_quad::{
    ball_volume, build_grid, distance_to_span, log_abs_coordinate_integral, orthonormal_span, GridKind,
    SphereGrid, UnitVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid(n: usize, resolution: usize, kind: GridKind) -> SphereGrid {
    build_grid(n, resolution, kind, None).unwrap()
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn band(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

// 1

const CLOSURE_BOUND: f64 = 2e-2;
const CLOSURE_TIME: Duration = Duration::from_secs(60);

fn closure() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let bodies = [("cube", cube(3, 1.0)), ("truncated cube", truncated_cube(1.3))];
    let stars = [("ball", ball_spec()), ("ellipsoid(1,2,3)", ellipsoid_spec())];
    let grid_flags = ["--grid-kind", "cubed", "--grid-resolution", "256"];
    let (mut worst_support, mut worst_residual, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    let mut count = 0;
    for (bi, (bname, k0)) in bodies.iter().enumerate() {
        for (si, (sname, spec)) in stars.iter().enumerate() {
            for q in [-1.0, 0.0, 0.8, 2.0] {
                let label = format!("{bname}, {sname}, q = {q}");
                let sub = dir.path().join(format!("{bi}-{si}-{q}"));
                fs::create_dir(&sub).map_err(e)?;
                write_polytope(&sub, "body.json", k0);
                write_star(&sub, "star.json", 3, spec.clone());
                let qs = q.to_string();
                let mut args = vec!["curvature", "--body", "body.json", "--star", "star.json", "--q", &qs];
                args.extend(grid_flags);
                let out = gdmp_in(&sub, &args);
                ensure(code(&out) == 0, || format!("{label}: curvature failed: {}", describe(&out)))?;

                let mut args = vec!["solve", "--measure", "measure.json", "--star", "star.json", "--q", &qs];
                args.extend(grid_flags);
                args.extend(["--out-dir", "out"]);
                let start = Instant::now();
                let out = gdmp_in(&sub, &args);
                let took = start.elapsed();
                ensure(code(&out) == 0, || format!("{label}: solve failed: {}", describe(&out)))?;
                ensure(took <= CLOSURE_TIME, || format!("{label}: solve took {took:?}"))?;

                let h = io::read_document::<PolytopeDoc>(&sub.join("out/solution.json"))
                    .map_err(e)?
                    .support;
                let report: serde_json::Value = io::read_document(&sub.join("out/report.json")).map_err(e)?;
                let residual = report["report"]["residual"]["residual"]
                    .as_f64()
                    .ok_or_else(|| format!("{label}: report has no residual"))?;
                // q = 0 determines the body only up to scale
                let c = if q == 0.0 {
                    let mean_log: f64 =
                        h.iter().zip(k0.support()).map(|(a, b)| (a / b).ln()).sum::<f64>() / h.len() as f64;
                    mean_log.exp()
                } else {
                    1.0
                };
                let err = h.iter().zip(k0.support()).map(|(a, b)| rel(*a, c * b)).fold(0.0, f64::max);
                ensure(err <= CLOSURE_BOUND, || format!("{label}: support off by {err:.3e}"))?;
                ensure(residual <= CLOSURE_BOUND, || format!("{label}: residual {residual:.3e}"))?;
                worst_support = worst_support.max(err);
                worst_residual = worst_residual.max(residual);
                slowest = slowest.max(took);
                count += 1;
            }
        }
    }
    Ok(format!(
        "{count} instances; worst support error {worst_support:.2e}, worst residual {worst_residual:.2e}, slowest {:.1} s",
        slowest.as_secs_f64()
    ))
}

// 2

fn vertex_atoms() -> Vec<UnitVector> {
    (0..8u32)
        .map(|code| {
            let v: Vec<f64> = (0..3).map(|i| if code >> i & 1 == 0 { 1.0 } else { -1.0 }).collect();
            UnitVector::normalize(&v).unwrap()
        })
        .collect()
}

fn ball_fixed_points() -> Outcome {
    let g = grid(3, 256, GridKind::Cubed);
    let b = ball(3);
    let tilt = [0.3, -0.5, 0.8];
    let mut worst = 0.0f64;
    for (name, atoms) in [("octahedral", cube(3, 1.0).normals()), ("cube vertex", vertex_atoms())] {
        // even, non-constant start
        let start: Vec<f64> = atoms
            .iter()
            .map(|a| 1.0 + 0.15 * a.iter().zip(tilt).map(|(x, t)| x * t).sum::<f64>().abs())
            .collect();
        for q in [-1.0, 0.5, 2.0, 0.0] {
            let total = if q == 0.0 { ball_volume(3) } else { 4.0 };
            let mu = DiscreteMeasure::uniform(atoms.clone(), total).map_err(e)?;
            let cfg = SolveConfig {
                q,
                initial_support: Some(start.clone()),
                ..SolveConfig::default()
            };
            let r = minimize_on_grid(&mu, &b, &cfg, &g).map_err(e)?;
            let h = r.solution.ok_or_else(|| format!("{name}, q = {q}: no solution ({:?})", r.status))?;
            let spread = h.iter().map(|v| rel(*v, h[0])).fold(0.0, f64::max);
            ensure(spread <= 1e-3, || format!("{name}, q = {q}: support numbers {h:?}"))?;
            worst = worst.max(spread);
        }
    }
    Ok(format!("8 instances; largest relative spread {worst:.2e}"))
}

// 3

const EXACT: f64 = 1e-10;

fn exact_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases: [(usize, SphereGrid, StarBody); 3] = [
        (2, grid(2, 720, GridKind::Product), ellipsoid(&[1.0, 2.0])),
        (3, grid(3, 64, GridKind::Cubed), ellipsoid(&[1.0, 2.0, 3.0])),
        (4, grid(4, 12, GridKind::Cubed), ellipsoid(&[1.0, 1.5, 2.0, 3.0])),
    ];
    let lambda = 2.5;
    let mut worst = 0.0f64;
    let mut track = |err: f64, what: &str| -> Result<(), String> {
        worst = worst.max(err);
        ensure(err <= EXACT, || format!("{what}: relative error {err:.3e}"))
    };
    for (n, g, qb) in &cases {
        let n = *n;
        for trial in 0..4 {
            let k = random_polytope(&mut rng, n, 4, trial % 2 == 0);
            let big = k.scaled(lambda);
            let tag = format!("n = {n}, trial {trial}");
            for q in [-1.0, 0.8, 2.0] {
                let v = dual_mixed_volume(&k, qb, q, g).map_err(e)?.value;
                let vb = dual_mixed_volume(&big, qb, q, g).map_err(e)?.value;
                track(rel(vb, lambda.powf(q) * v), &format!("{tag}, q = {q}, dual volume scaling"))?;

                let c = dual_curvature_measure(&k, qb, q, g).map_err(e)?;
                let cb = dual_curvature_measure(&big, qb, q, g).map_err(e)?;
                for (a, b) in c.weights().iter().zip(cb.weights()) {
                    if *a == 0.0 {
                        ensure(*b == 0.0, || format!("{tag}, q = {q}: empty atom gained mass"))?;
                    } else {
                        track(rel(*b, lambda.powf(q) * a), &format!("{tag}, q = {q}, curvature scaling"))?;
                    }
                }
                track(rel(c.total(), v), &format!("{tag}, q = {q}, mass partition"))?;

                // J at a measure unrelated to k
                let mu = c.with_weights(c.weights().iter().enumerate().map(|(i, _)| 1.0 + (i % 3) as f64).collect())
                    .map_err(e)?;
                let j = objective_J(k.support(), &mu, qb, q, g).map_err(e)?;
                let jb = objective_J(big.support(), &mu, qb, q, g).map_err(e)?;
                track((j - jb).abs() / j.abs().max(1.0), &format!("{tag}, q = {q}, J homogeneity"))?;
            }
            let mu = cross_measure(n, 1.0);
            let kc = cube(n, 1.0).with_support(k.support()[..2 * n].to_vec());
            let j = objective_Jtilde(kc.support(), &mu, qb, g).map_err(e)?;
            let jb = objective_Jtilde(kc.scaled(lambda).support(), &mu, qb, g).map_err(e)?;
            track((j - jb).abs() / j.abs().max(1.0), &format!("{tag}, J-tilde homogeneity"))?;

            let nq = n as f64;
            let a = dual_curvature_measure(&k, &ball(n), nq, g).map_err(e)?;
            let b = dual_curvature_measure(&k, qb, nq, g).map_err(e)?;
            for (x, y) in a.weights().iter().zip(b.weights()) {
                if *x == 0.0 {
                    ensure(*y == 0.0, || format!("{tag}: q = n atoms differ in support"))?;
                } else {
                    track(rel(*y, *x), &format!("{tag}, independence of Q at q = n"))?;
                }
            }
        }
    }
    Ok(format!("12 polytopes in n = 2, 3, 4; largest relative error {worst:.2e}"))
}

// 4

fn variational_formula() -> Outcome {
    let g = grid(3, 128, GridKind::Cubed);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qs = [-1.0, 0.0, 0.5, 0.8, 2.0];
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let q = qs[trial % qs.len()];
        let k = random_polytope(&mut rng, 3, 3, true);
        let qb = if trial % 2 == 0 { ball(3) } else { ellipsoid(&[1.0, 2.0, 3.0]) };
        // even weights far from the curvature measure of k
        let partners = k.partners().ok_or("random even polytope lost its pairing")?.to_vec();
        let mut w = vec![0.0; k.len()];
        for i in 0..k.len() {
            if w[i] == 0.0 {
                let v = rng.random_range(0.5..2.0);
                w[i] = v;
                w[partners[i]] = v;
            }
        }
        let mut total = 1.0;
        if q == 0.0 {
            total = qb.volume(&g).map_err(e)? / w.iter().sum::<f64>();
        }
        let mu = DiscreteMeasure::new(k.normals(), w.iter().map(|x| x * total).collect()).map_err(e)?;
        let h = k.support().to_vec();
        let objective = |h: &[f64]| {
            if q == 0.0 {
                objective_Jtilde(h, &mu, &qb, &g)
            } else {
                objective_J(h, &mu, &qb, q, &g)
            }
        };
        let grad = gradient(&h, &mu, &qb, q, &g).map_err(e)?;
        for i in 0..h.len() {
            let step = 1e-6 * h[i];
            let (mut up, mut down) = (h.clone(), h.clone());
            up[i] += step;
            down[i] -= step;
            let fd = (objective(&up).map_err(e)? - objective(&down).map_err(e)?) / (2.0 * step);
            let err = rel(grad[i], fd);
            ensure(err <= 1e-3, || {
                format!("trial {trial}, q = {q}, component {i}: analytic {} vs difference {fd}", grad[i])
            })?;
            worst = worst.max(err);
        }
    }
    Ok(format!("10 instances; largest componentwise relative error {worst:.2e}"))
}

// 5

const SPREADS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
const BAND: f64 = 10.0;

fn integral_estimates() -> Outcome {
    let cubed = grid(3, 128, GridKind::Cubed);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_identity = 0.0f64;
    for case in 0..20 {
        let entries: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(0.0..1.0))).collect();
        let b = DiagonalSpec::from_unsorted(entries).map_err(e)?;
        let gamma = rng.random_range(0.2..2.8);
        let (lhs, rhs) = power_reduce_check(&b, gamma, &cubed).map_err(e)?;
        let err = rel(lhs, rhs);
        ensure(err <= 1e-3, || format!("power reduction case {case}, gamma = {gamma}: {lhs} vs {rhs}"))?;
        worst_identity = worst_identity.max(err);
    }

    let product = grid(3, 128, GridKind::Product);
    let mut ratio_bands = Vec::new();
    for alpha in [0.5, 1.0, 1.5, 2.0, 3.0, 3.5] {
        let sweep = ratio_sweep(alpha, 3, &SPREADS, &product, 5).map_err(e)?;
        ensure(sweep.band <= BAND, || format!("ratio sweep alpha = {alpha}: band {:.3}", sweep.band))?;
        ratio_bands.push(format!("{alpha}:{:.2}", sweep.band));
    }

    let circle = grid(2, 4096, GridKind::Product);
    let mut reduce_bands = Vec::new();
    for beta in [0.5, 1.0, 1.5, 2.0] {
        let mut srng = ChaCha8Rng::seed_from_u64(5);
        let mut ratios = Vec::new();
        for spread in SPREADS {
            let b = sweep_diagonal(3, spread, &mut srng).map_err(e)?;
            let lower = if beta < 1.0 { None } else if beta < 2.0 { Some(&circle) } else { Some(&product) };
            let (lhs, rhs) = dimension_reduce_check(&b, beta, &product, lower).map_err(e)?;
            ratios.push(lhs / rhs);
        }
        let bd = band(&ratios);
        ensure(bd <= BAND, || format!("dimension reduction beta = {beta}: ratios {ratios:?}"))?;
        reduce_bands.push(format!("{beta}:{bd:.2}"));
    }
    Ok(format!(
        "power reduction worst {worst_identity:.2e}; ratio bands {}; dimension-reducing bands {}",
        ratio_bands.join(" "),
        reduce_bands.join(" ")
    ))
}

// 6

/// diag(b) applied to a polytope circumscribing the unit ball.
fn ellipsoid_polytope(b: &[f64]) -> Result<SupportPolytope, String> {
    let p = fibonacci_polytope(100, 1.0).map_err(e)?;
    let mut normals = Vec::new();
    let mut support = Vec::new();
    for (x, h) in p.normals().iter().zip(p.support()) {
        let y: Vec<f64> = x.iter().zip(b).map(|(xi, bi)| xi / bi).collect();
        let len = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        normals.push(UnitVector::normalize(&y).map_err(e)?);
        support.push(h / len);
    }
    SupportPolytope::new(normals, support).map_err(e)
}

fn estimate_inequalities() -> Outcome {
    let g = grid(3, 256, GridKind::Cubed);
    let b1 = ball(3);
    let mut ellipsoid_bands = Vec::new();
    let stretches: [f64; 4] = [1.0, 4.0, 16.0, 64.0];
    let bodies: Vec<(Vec<f64>, SupportPolytope)> = stretches
        .iter()
        .map(|s| {
            let axes = vec![1.0, s.sqrt(), *s];
            ellipsoid_polytope(&axes).map(|k| (axes, k))
        })
        .collect::<Result<_, _>>()?;
    for q in [1.5, 2.0, 3.0, 4.0] {
        let mut ratios = Vec::new();
        for (axes, k) in &bodies {
            let v = dual_mixed_volume(k, &b1, q, &g).map_err(e)?.value;
            let (est, _) = ellipsoid_dual_volume_estimate(axes, q).map_err(e)?;
            ratios.push(v / est);
        }
        let bd = band(&ratios);
        ensure(bd <= BAND, || format!("ellipsoid estimate q = {q}: ratios {ratios:?}"))?;
        ellipsoid_bands.push(format!("{q}:{bd:.2}"));
    }

    let g = grid(3, 128, GridKind::Cubed);
    let qb = ellipsoid(&[1.0, 2.0, 3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let polytopes: Vec<SupportPolytope> = (0..20).map(|_| random_polytope(&mut rng, 3, 6, false)).collect();
    let mut negative_bands = Vec::new();
    for q in [-0.5, -1.0, -2.0] {
        let mut ratios = Vec::new();
        for k in &polytopes {
            let (rho, _) = k.radial_on_grid(&g).map_err(e)?;
            let r = rho.iter().cloned().fold(f64::INFINITY, f64::min);
            ratios.push(dual_mixed_volume(k, &qb, q, &g).map_err(e)?.value / r.powf(q));
        }
        let bd = band(&ratios);
        ensure(bd <= BAND, || format!("q < 0 estimate q = {q}: ratios {ratios:?}"))?;
        negative_bands.push(format!("{q}:{bd:.2}"));
    }

    let mut min_gap = f64::INFINITY;
    for trial in 0..20 {
        let k = random_polytope(&mut rng, 3, 4, true);
        let qb = if trial % 2 == 0 { ball(3) } else { ellipsoid(&[1.0, 2.0, 3.0]) };
        // for a polytope, min rho_K is the smallest support number
        let r = k.support().iter().cloned().fold(f64::INFINITY, f64::min);
        let rho_q = qb.tabulate(&g).map_err(e)?;
        let vol = g.integrate_values(&rho_q.iter().map(|p| p.powi(3) / 3.0).collect::<Vec<_>>()).map_err(e)?;
        let max_rho = qb.radial_bounds().1;
        let self_term = g
            .integrate_values(&rho_q.iter().map(|p| p.powi(3) * p.ln()).collect::<Vec<_>>())
            .map_err(e)?;
        let bound = vol * r.ln() + max_rho.powi(3) * log_abs_coordinate_integral(3) / 3.0 - self_term / 3.0;
        let entropy = dual_entropy(&k, &qb, &g).map_err(e)?;
        let gap = bound - entropy;
        ensure(gap >= -1e-9 * bound.abs().max(1.0), || {
            format!("entropy bound trial {trial}: entropy {entropy} exceeds {bound}")
        })?;
        min_gap = min_gap.min(gap);
    }
    Ok(format!(
        "ellipsoid bands {}; q < 0 bands {}; entropy bound smallest gap {min_gap:.3}",
        ellipsoid_bands.join(" "),
        negative_bands.join(" ")
    ))
}

// 7

/// Largest mass over all atom subsets of rank at most `i`, by depth-first
/// search over include/exclude decisions.
fn oracle_sup(atoms: &[UnitVector], weights: &[f64], i: usize) -> f64 {
    fn dfs(atoms: &[UnitVector], weights: &[f64], i: usize, idx: usize, basis: &mut Vec<Vec<f64>>, mass: f64) -> f64 {
        if idx == atoms.len() {
            return mass;
        }
        let a: &[f64] = &atoms[idx];
        let mut best = dfs(atoms, weights, i, idx + 1, basis, mass);
        if distance_to_span(a, basis) <= 1e-9 {
            best = best.max(dfs(atoms, weights, i, idx + 1, basis, mass + weights[idx]));
        } else if basis.len() < i {
            basis.push(a.to_vec());
            let b = orthonormal_span(basis, 1e-12);
            let saved = std::mem::replace(basis, b);
            best = best.max(dfs(atoms, weights, i, idx + 1, basis, mass + weights[idx]));
            *basis = saved;
            basis.pop();
        }
        best
    }
    let total: f64 = weights.iter().sum();
    dfs(atoms, weights, i, 0, &mut Vec::new(), 0.0) / total
}

fn structured_atoms(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<UnitVector> {
    let plane = [random_unit(rng, n), random_unit(rng, n)];
    let line = random_unit(rng, n);
    let mut atoms: Vec<UnitVector> = Vec::new();
    while atoms.len() < count {
        let a = match rng.random_range(0..4) {
            0 => random_unit(rng, n),
            1 => {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let v: Vec<f64> = plane[0].iter().zip(plane[1].iter()).map(|(x, y)| a * x + b * y).collect();
                UnitVector::normalize(&v).unwrap()
            }
            2 => line.clone(),
            _ => line.negated(),
        };
        if !atoms.contains(&a) {
            atoms.push(a);
        }
    }
    atoms
}

fn precondition_checkers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0;
    for trial in 0..40 {
        let n = if trial % 4 == 3 { 4 } else { 3 };
        let count = rng.random_range(3..=20);
        let atoms = if trial % 5 == 0 {
            (0..count).map(|_| random_unit(&mut rng, n)).collect()
        } else {
            structured_atoms(&mut rng, n, count)
        };
        let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
        let mu = DiscreteMeasure::new(atoms.clone(), weights.clone()).map_err(e)?;
        for i in 1..n {
            let got = subspace_mass_sup(&mu, i, u128::MAX).map_err(e)?.fraction;
            let want = oracle_sup(&atoms, &weights, i);
            ensure((got - want).abs() <= 1e-12, || {
                format!("trial {trial}, i = {i}: sup fraction {got} vs oracle {want}")
            })?;
            compared += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(e)?;
    let d = dir.path();
    write_measure(d, "uniform.json", &cross_measure(3, 1.0));
    write_measure(d, "line.json", &line_heavy_measure(0.3));
    write_measure(d, "slack.json", &line_heavy_measure(0.25 - 5e-13));
    write_measure(d, "unbalanced.json", &cross_measure(3, 1.0));
    write_star(d, "ball.json", 3, ball_spec());
    for (file, want) in [("uniform.json", 0), ("line.json", 2), ("slack.json", 4)] {
        let out = gdmp_in(d, &["check", "--measure", file, "--q", "2"]);
        ensure(code(&out) == want, || format!("check {file}: expected exit {want}, {}", describe(&out)))?;
    }
    let out = gdmp_in(d, &["solve", "--measure", "line.json", "--star", "ball.json", "--q", "2", "--out-dir", "line"]);
    ensure(code(&out) == 2, || format!("solve on the line measure: {}", describe(&out)))?;
    let report: serde_json::Value = io::read_document(&d.join("line/report.json")).map_err(e)?;
    let witness = &report["report"]["preconditions"]["subspace_mass"][0]["witness"];
    ensure(*witness == serde_json::json!([0, 1]), || format!("line measure witness {witness}"))?;
    let out = gdmp_in(d, &["solve", "--measure", "unbalanced.json", "--star", "ball.json", "--q", "0", "--out-dir", "q0"]);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    ensure(code(&out) == 2 && stdout.contains("mass"), || {
        format!("q = 0 solve with |mu| != Vol(Q): {}", describe(&out))
    })?;
    Ok(format!("{compared} sup fractions match the oracle; check exits 0/2/4; solve refusals exit 2"))
}

// 8

fn monotonicity() -> Outcome {
    let g = grid(3, 128, GridKind::Cubed);
    let qb = ellipsoid(&[1.0, 2.0, 3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut smallest = f64::INFINITY;
    for pair in 0..20 {
        let inner = random_polytope(&mut rng, 3, 5, pair % 2 == 0);
        let grown: Vec<f64> = inner.support().iter().map(|h| h + rng.random_range(0.0..0.3)).collect();
        let outer = inner.with_support(grown);
        let v = |k: &SupportPolytope, q: f64| dual_mixed_volume(k, &qb, q, &g).map(|d| d.value);
        let (a2, b2) = (v(&inner, 2.0).map_err(e)?, v(&outer, 2.0).map_err(e)?);
        let (a1, b1) = (v(&inner, -1.0).map_err(e)?, v(&outer, -1.0).map_err(e)?);
        ensure(a2 <= b2, || format!("pair {pair}: q = 2 volumes {a2} > {b2}"))?;
        ensure(a1 >= b1, || format!("pair {pair}: q = -1 volumes {a1} < {b1}"))?;
        smallest = smallest.min((b2 - a2) / a2).min((a1 - b1) / a1);
    }
    Ok(format!("20 nested pairs; smallest relative increment {smallest:.2e}"))
}

// 9

fn run_all_commands(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    write_polytope(dir, "body.json", &truncated_cube(1.3));
    write_star(dir, "star.json", 3, ellipsoid_spec());
    let cfg = SolveConfig {
        q: 0.8,
        starts: 3,
        seed: 11,
        grid_resolution: 64,
        ..SolveConfig::default()
    };
    io::write_document(&dir.join("config.json"), &ConfigDoc::new(3, cfg)).map_err(e)?;
    let commands: [&[&str]; 7] = [
        &["curvature", "--body", "body.json", "--star", "star.json", "--q", "0.8", "--grid-resolution", "64", "--out-dir", "cubed"],
        &[
            "curvature", "--body", "body.json", "--star", "star.json", "--q", "0.8", "--grid-kind", "monte_carlo",
            "--grid-resolution", "128", "--seed", "7", "--out-dir", "mc",
        ],
        &["solve", "--measure", "cubed/measure.json", "--star", "star.json", "--config", "config.json", "--out-dir", "solve"],
        &["check", "--measure", "cubed/measure.json", "--q", "0.8", "--star", "star.json", "--out-dir", "check"],
        &[
            "verify", "--body", "solve/solution.json", "--measure", "cubed/measure.json", "--star", "star.json", "--q", "0.8",
            "--grid-resolution", "64", "--out-dir", "verify",
        ],
        &[
            "estimate", "--alpha", "1.5", "--diag", "10,3,1", "--spreads", "1,10,100,1000", "--grid-kind", "product",
            "--grid-resolution", "64", "--out-dir", "estimate",
        ],
        &["selftest"],
    ];
    let mut outputs = Vec::new();
    for args in commands {
        let out = gdmp_in(dir, args);
        ensure(code(&out) == 0, || format!("{}: {}", args[0], describe(&out)))?;
        outputs.push((format!("{} stdout", args.join(" ")), out.stdout));
    }
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files).map_err(e)?;
    files.sort();
    for rel_path in files {
        let bytes = fs::read(dir.join(&rel_path)).map_err(e)?;
        outputs.push((rel_path, bytes));
    }
    Ok(outputs)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap().display().to_string());
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(e)?;
    let b = tempfile::tempdir().map_err(e)?;
    let first = run_all_commands(a.path())?;
    let second = run_all_commands(b.path())?;
    ensure(first.len() == second.len(), || "runs produced different file sets".into())?;
    for ((name, x), (other, y)) in first.iter().zip(&second) {
        ensure(name == other, || format!("runs produced different file sets: {name} vs {other}"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("7 commands, {} outputs byte-identical across runs", first.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("forward/backward closure", closure),
        ("ball fixed points", ball_fixed_points),
        ("exact identities", exact_identities),
        ("variational formula", variational_formula),
        ("integral estimates, power and dimension reduction", integral_estimates),
        ("estimate inequalities", estimate_inequalities),
        ("precondition checkers", precondition_checkers),
        ("monotonicity", monotonicity),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("PASS  {} {name} ({secs:.1} s): {detail}", i + 1),
            Err(why) => format!("FAIL  {} {name} ({secs:.1} s): {why}", i + 1),
        };
        writeln!(std::io::stderr(), "{line}").unwrap();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
