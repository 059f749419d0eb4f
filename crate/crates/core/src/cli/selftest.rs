//! Invariant suite at reduced resolution.

use crate::asymptotics::{power_reduce_check, DiagonalSpec};
use crate::bodies::{cube, truncated_cube, StarBody, SupportPolytope};
use crate::dual_measures::{dual_curvature_measure, dual_mixed_volume, DiscreteMeasure};
use crate::error::Result;
use crate::io;
use crate::measure_checks::{check_preconditions, CheckOptions, Verdict};
use crate::solver::{gradient, minimize_on_grid, objective_J, SolveConfig, SolveStatus};
use crate::sphere_quad::{build_grid, GridKind, SphereGrid, UnitVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales every quadrature weight by 1.02.
    WeightSum,
}

impl Fault {
    pub fn name(self) -> &'static str {
        match self {
            Fault::WeightSum => "weight-sum",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failure.is_none())
    }

    pub fn first_failure(&self) -> Option<&'static str> {
        self.checks.iter().find(|c| c.failure.is_some()).map(|c| c.name)
    }
}

type Outcome = std::result::Result<(), String>;

struct Suite {
    fault: Option<Fault>,
}

impl Suite {
    fn grid(&self, n: usize, resolution: usize, kind: GridKind) -> Result<SphereGrid> {
        let mut g = build_grid(n, resolution, kind, None)?;
        if self.fault == Some(Fault::WeightSum) {
            g.scale_weights_for_fault_injection(1.02);
        }
        Ok(g)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn octahedral(total: f64) -> DiscreteMeasure {
    let mut atoms = Vec::new();
    for i in 0..3 {
        atoms.push(UnitVector::basis(3, i));
        atoms.push(UnitVector::basis(3, i).negated());
    }
    DiscreteMeasure::uniform(atoms, total).expect("octahedral atoms are valid")
}

fn ellipsoid() -> StarBody {
    StarBody::ellipsoid(vec![1.0, 2.0, 3.0], None).expect("valid ellipsoid")
}

fn lopsided_cube() -> SupportPolytope {
    cube(3, 1.0).with_support(vec![1.0, 1.1, 0.9, 1.05, 0.95, 1.2])
}

fn grid_invariants(s: &Suite) -> Outcome {
    for (n, res, kind) in [
        (2, 64, GridKind::Product),
        (3, 64, GridKind::Product),
        (3, 64, GridKind::Cubed),
        (4, 16, GridKind::Cubed),
    ] {
        let g = s.grid(n, res, kind).map_err(|e| e.to_string())?;
        g.check_invariants(1e-3).map_err(|e| format!("{kind} grid, n = {n}: {e}"))?;
    }
    Ok(())
}

fn scaling_laws(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let k = lopsided_cube();
    let qb = ellipsoid();
    for q in [-1.0, 0.8, 2.0] {
        let v = dual_mixed_volume(&k, &qb, q, &g).map_err(|e| e.to_string())?.value;
        let v7 = dual_mixed_volume(&k.scaled(7.0), &qb, q, &g).map_err(|e| e.to_string())?.value;
        let err = rel(v7, 7f64.powf(q) * v);
        ensure(err <= 1e-10, || format!("q = {q}: relative error {err:e}"))?;
    }
    Ok(())
}

fn mass_partition(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let k = truncated_cube(1.3);
    let qb = ellipsoid();
    for q in [-1.0, 0.8, 2.0] {
        let v = dual_mixed_volume(&k, &qb, q, &g).map_err(|e| e.to_string())?.value;
        let mu = dual_curvature_measure(&k, &qb, q, &g).map_err(|e| e.to_string())?;
        let err = rel(mu.total(), v);
        ensure(err <= 1e-10, || format!("q = {q}: relative error {err:e}"))?;
    }
    Ok(())
}

fn q_equals_n(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let k = lopsided_cube();
    let a = dual_curvature_measure(&k, &StarBody::ball(3, 1.0).map_err(|e| e.to_string())?, 3.0, &g)
        .map_err(|e| e.to_string())?;
    let b = dual_curvature_measure(&k, &ellipsoid(), 3.0, &g).map_err(|e| e.to_string())?;
    for (x, y) in a.weights().iter().zip(b.weights()) {
        ensure(rel(*x, *y) <= 1e-10, || format!("atoms differ: {x} vs {y}"))?;
    }
    Ok(())
}

fn variational_formula(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let qb = ellipsoid();
    let q = 0.8;
    let mu = dual_curvature_measure(&truncated_cube(1.3), &qb, q, &g).map_err(|e| e.to_string())?;
    let mut h = truncated_cube(1.3).support().to_vec();
    h.iter_mut().enumerate().for_each(|(i, v)| *v *= 1.0 + 0.03 * ((i as f64) * 1.3).sin());
    let grad = gradient(&h, &mu, &qb, q, &g).map_err(|e| e.to_string())?;
    let scale = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..h.len() {
        let step = 1e-6 * h[i];
        let (mut up, mut down) = (h.clone(), h.clone());
        up[i] += step;
        down[i] -= step;
        let fd = (objective_J(&up, &mu, &qb, q, &g).map_err(|e| e.to_string())?
            - objective_J(&down, &mu, &qb, q, &g).map_err(|e| e.to_string())?)
            / (2.0 * step);
        let err = (fd - grad[i]).abs() / grad[i].abs().max(1e-3 * scale);
        ensure(err <= 1e-3, || format!("component {i}: analytic {} vs difference {fd}", grad[i]))?;
    }
    Ok(())
}

fn ball_fixed_point(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let ball = StarBody::ball(3, 1.0).map_err(|e| e.to_string())?;
    let cfg = SolveConfig {
        q: 2.0,
        initial_support: Some(vec![1.0, 1.0, 1.2, 1.2, 0.8, 0.8]),
        ..SolveConfig::default()
    };
    let r = minimize_on_grid(&octahedral(6.0), &ball, &cfg, &g).map_err(|e| e.to_string())?;
    let h = r.solution.ok_or("no solution")?;
    let spread = h.iter().map(|v| rel(*v, h[0])).fold(0.0, f64::max);
    ensure(spread <= 1e-3, || format!("support numbers {h:?}"))
}

fn closure(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let ball = StarBody::ball(3, 1.0).map_err(|e| e.to_string())?;
    let k0 = truncated_cube(1.3);
    let q = -1.0;
    let mu = dual_curvature_measure(&k0, &ball, q, &g).map_err(|e| e.to_string())?;
    let cfg = SolveConfig {
        q,
        ..SolveConfig::default()
    };
    let r = minimize_on_grid(&mu, &ball, &cfg, &g).map_err(|e| e.to_string())?;
    ensure(r.status == SolveStatus::Converged, || format!("status {:?}", r.status))?;
    let h = r.solution.ok_or("no solution")?;
    let err = h.iter().zip(k0.support()).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
    ensure(err <= 2e-2, || format!("recovered support off by {err:e}"))
}

fn power_reduction(s: &Suite) -> Outcome {
    let g = s.grid(3, 64, GridKind::Cubed).map_err(|e| e.to_string())?;
    let b = DiagonalSpec::new(vec![3.0, 2.0, 1.0]).map_err(|e| e.to_string())?;
    for gamma in [0.5, 1.5, 2.5] {
        let (lhs, rhs) = power_reduce_check(&b, gamma, &g).map_err(|e| e.to_string())?;
        ensure(rel(lhs, rhs) <= 1e-3, || format!("gamma = {gamma}: {lhs} vs {rhs}"))?;
    }
    Ok(())
}

fn precondition_verdicts(_: &Suite) -> Outcome {
    let opts = CheckOptions::default();
    let uniform = octahedral(6.0);
    let v = check_preconditions(&uniform, None, 2.0, None, &opts).map_err(|e| e.to_string())?.verdict;
    ensure(v == Verdict::Pass, || format!("uniform measure: {v:?}"))?;
    let line = uniform
        .with_weights(vec![0.3, 0.3, 0.1, 0.1, 0.1, 0.1])
        .map_err(|e| e.to_string())?;
    let v = check_preconditions(&line, None, 2.0, None, &opts).map_err(|e| e.to_string())?.verdict;
    ensure(v == Verdict::Fail, || format!("0.6-mass line: {v:?}"))
}

fn determinism(s: &Suite) -> Outcome {
    let g = s.grid(3, 32, GridKind::Cubed).map_err(|e| e.to_string())?;
    let qb = ellipsoid();
    let mu = dual_curvature_measure(&truncated_cube(1.3), &qb, 0.8, &g).map_err(|e| e.to_string())?;
    let cfg = SolveConfig {
        q: 0.8,
        starts: 3,
        seed: 11,
        ..SolveConfig::default()
    };
    let digest = || -> Result<String> { io::digest(&minimize_on_grid(&mu, &qb, &cfg, &g)?) };
    let a = digest().map_err(|e| e.to_string())?;
    let b = digest().map_err(|e| e.to_string())?;
    ensure(a == b, || format!("report digests differ: {a} vs {b}"))
}

/// Runs every invariant in order; grid invariants come first so that a
/// corrupted grid is named by the invariant it breaks.
pub fn run_selftest(fault: Option<Fault>) -> SelftestReport {
    let suite = Suite { fault };
    let checks: [(&'static str, fn(&Suite) -> Outcome); 10] = [
        ("weight-sum invariant", grid_invariants),
        ("dual volume scaling law", scaling_laws),
        ("mass partition", mass_partition),
        ("independence of Q at q = n", q_equals_n),
        ("variational formula", variational_formula),
        ("ball fixed point", ball_fixed_point),
        ("forward/backward closure", closure),
        ("power-reducing identity", power_reduction),
        ("precondition verdicts", precondition_verdicts),
        ("determinism", determinism),
    ];
    SelftestReport {
        checks: checks
            .into_iter()
            .map(|(name, f)| Check {
                name,
                failure: f(&suite).err(),
            })
            .collect(),
    }
}
