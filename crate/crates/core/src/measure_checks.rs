//! Decidable forms of the existence hypotheses on a discrete measure:
//! evenness, closed-hemisphere and great-subsphere concentration, the
//! subspace mass inequality and the mass balance for q = 0.

use serde::{Deserialize, Serialize};

use crate::bodies::{refine_max_on_sphere, StarBody};
use crate::dual_measures::DiscreteMeasure;
use crate::error::{invalid, GdmpError, Result};
use crate::sphere_quad::{
    build_grid, distance_to_span, dot, orthonormal_span, rank_of_atoms, GridKind, SphereGrid,
    UnitVector,
};

/// Hemisphere margins at or above this count as contained.
pub const HEMISPHERE_WITNESS_TOL: f64 = 1e-10;
/// Margins in `(-HEMISPHERE_BAND, HEMISPHERE_WITNESS_TOL)` are undecided.
pub const HEMISPHERE_BAND: f64 = 1e-6;
/// Slack band of the subspace mass inequality treated as undecided.
pub const SLACK_BAND: f64 = 1e-9;
/// Distance from a subspace below which an atom counts as lying in it.
pub const SUBSPACE_MEMBER_TOL: f64 = 1e-8;
pub const RANK_TOL: f64 = 1e-10;
pub const DEFAULT_SUBSET_BUDGET: u128 = 5_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl Verdict {
    fn combine(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Indeterminate, _) | (_, Verdict::Indeterminate) => Verdict::Indeterminate,
            _ => Verdict::Pass,
        }
    }
}

/// Outcome of the search for `v` maximizing `min_i v . x_i`.
#[derive(Clone, Debug, PartialEq)]
pub enum HemisphereStatus {
    Concentrated { witness: UnitVector, margin: f64 },
    Free { margin: f64 },
    Indeterminate { best: UnitVector, margin: f64 },
}

impl HemisphereStatus {
    pub fn margin(&self) -> f64 {
        match self {
            HemisphereStatus::Concentrated { margin, .. }
            | HemisphereStatus::Free { margin }
            | HemisphereStatus::Indeterminate { margin, .. } => *margin,
        }
    }
}

fn scan_resolution(n: usize) -> usize {
    match n {
        2 => 256,
        3 => 24,
        4 => 12,
        _ => 8,
    }
}

/// Unit normals to hyperplanes spanned by `n - 1` of the given lines, plus
/// the complement of the span when the lines are rank deficient. Returns
/// `None` when enumeration would exceed `budget` subsets.
fn hyperplane_normals(lines: &[Vec<f64>], n: usize, budget: u128) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let span = orthonormal_span(lines, RANK_TOL);
    if span.len() < n {
        out.extend(complement(&span, n));
    }
    if lines.len() < n - 1 || binomial(lines.len(), n - 1) > budget {
        return if span.len() < n { Some(out) } else { None };
    }
    for subset in Combinations::new(lines.len(), n - 1) {
        let vs: Vec<&Vec<f64>> = subset.iter().map(|&i| &lines[i]).collect();
        let basis = orthonormal_span(&vs, RANK_TOL);
        if basis.len() == n - 1 {
            out.extend(complement(&basis, n));
        }
    }
    Some(out)
}

fn complement(basis: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut seeds: Vec<Vec<f64>> = basis.to_vec();
    for i in 0..n {
        seeds.push(UnitVector::basis(n, i).into_inner());
    }
    orthonormal_span(&seeds, 1e-8).split_off(basis.len())
}

/// Deterministic decision procedure for closed-hemisphere concentration:
/// coarse scan of directions, local refinement of the best candidates, and
/// near the boundary an exact polish over normals of hyperplanes spanned by
/// atoms (where the optimum sits when it is zero).
pub fn hemisphere_status<V: AsRef<[f64]>>(atoms: &[V]) -> HemisphereStatus {
    let n = atoms[0].as_ref().len();
    let margin = |v: &[f64]| {
        atoms
            .iter()
            .map(|x| dot(v, x.as_ref()))
            .fold(f64::INFINITY, f64::min)
    };

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let scan = build_grid(n, scan_resolution(n), GridKind::Product, None).expect("valid scan grid");
    candidates.extend(scan.nodes().map(|u| u.to_vec()));
    candidates.extend(atoms.iter().map(|x| x.as_ref().to_vec()));
    let mut mean = vec![0.0; n];
    for x in atoms {
        for (m, c) in mean.iter_mut().zip(x.as_ref()) {
            *m += c;
        }
    }
    if let Ok(u) = UnitVector::normalize(&mean) {
        candidates.push(u.into_inner());
    }

    let mut scored: Vec<(f64, Vec<f64>)> = candidates.into_iter().map(|v| (margin(&v), v)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    for (_, start) in scored.iter().take(4) {
        let (v, m) = refine_max_on_sphere(margin, start, 0.5, 16);
        if m > best.0 {
            best = (m, v);
        }
    }

    if best.0 > -0.25 && best.0 < HEMISPHERE_WITNESS_TOL {
        let lines = distinct_lines(atoms);
        let dirs: Vec<Vec<f64>> = lines.iter().map(|l| l.direction.clone()).collect();
        if let Some(normals) = hyperplane_normals(&dirs, n, DEFAULT_SUBSET_BUDGET) {
            for v in normals {
                for sign in [1.0, -1.0] {
                    let s: Vec<f64> = v.iter().map(|c| sign * c).collect();
                    let m = margin(&s);
                    if m > best.0 {
                        best = (m, s);
                    }
                }
            }
        }
    }

    let (m, v) = best;
    let unit = UnitVector::normalize(&v).expect("candidate directions are nonzero");
    if m >= HEMISPHERE_WITNESS_TOL {
        HemisphereStatus::Concentrated {
            witness: unit,
            margin: m,
        }
    } else if m > -HEMISPHERE_BAND {
        HemisphereStatus::Indeterminate { best: unit, margin: m }
    } else {
        HemisphereStatus::Free { margin: m }
    }
}

pub fn hemisphere_concentrated(mu: &DiscreteMeasure) -> HemisphereStatus {
    hemisphere_status(mu.atoms())
}

pub fn check_even(mu: &DiscreteMeasure, tol: f64) -> bool {
    mu.is_even(tol)
}

pub fn great_subsphere_concentrated(mu: &DiscreteMeasure) -> bool {
    rank_of_atoms(mu.atoms(), RANK_TOL) < mu.dim()
}

struct Line {
    direction: Vec<f64>,
    members: Vec<usize>,
}

/// Groups atoms that are equal or opposite (within 1e-10) into lines.
fn distinct_lines<V: AsRef<[f64]>>(atoms: &[V]) -> Vec<Line> {
    let mut lines: Vec<Line> = Vec::new();
    for (i, x) in atoms.iter().enumerate() {
        let x = x.as_ref();
        let found = lines.iter_mut().find(|l| {
            let same = l.direction.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-10);
            let opposite = l.direction.iter().zip(x).all(|(a, b)| (a + b).abs() <= 1e-10);
            same || opposite
        });
        match found {
            Some(l) => l.members.push(i),
            None => lines.push(Line {
                direction: x.to_vec(),
                members: vec![i],
            }),
        }
    }
    lines
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Lexicographic k-subsets of 0..n.
pub(crate) struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceMass {
    pub fraction: f64,
    /// Atom indices lying in the maximizing subspace.
    pub witness: Vec<usize>,
    /// The maximizing subspace contains every atom.
    pub full: bool,
}

/// Largest fraction of mass on a proper `i`-dimensional subspace. Exact for
/// discrete measures: candidate subspaces are spans of `i` atom lines.
pub fn subspace_mass_sup(mu: &DiscreteMeasure, i: usize, budget: u128) -> Result<SubspaceMass> {
    let n = mu.dim();
    if i == 0 || i >= n {
        return Err(invalid(format!("subspace dimension must be in 1..{n}, got {i}")));
    }
    let lines = distinct_lines(mu.atoms());
    let line_mass: Vec<f64> = lines
        .iter()
        .map(|l| l.members.iter().map(|&a| mu.weights()[a]).sum())
        .collect();
    let total = mu.total();
    if lines.len() <= i {
        return Ok(SubspaceMass {
            fraction: 1.0,
            witness: (0..mu.len()).collect(),
            full: true,
        });
    }
    let needed = binomial(lines.len(), i);
    if needed > budget {
        return Err(GdmpError::SubsetBudget { needed, budget });
    }
    let mut best_mass = f64::NEG_INFINITY;
    let mut best_members: Vec<usize> = Vec::new();
    for subset in Combinations::new(lines.len(), i) {
        let dirs: Vec<&Vec<f64>> = subset.iter().map(|&s| &lines[s].direction).collect();
        let basis = orthonormal_span(&dirs, RANK_TOL);
        let inside: Vec<usize> = (0..lines.len())
            .filter(|&l| distance_to_span(&lines[l].direction, &basis) <= SUBSPACE_MEMBER_TOL)
            .collect();
        let mass: f64 = inside.iter().map(|&l| line_mass[l]).sum();
        if mass > best_mass {
            best_mass = mass;
            best_members = inside;
        }
    }
    let full = best_members.len() == lines.len();
    let mut witness: Vec<usize> = best_members
        .iter()
        .flat_map(|&l| lines[l].members.iter().copied())
        .collect();
    witness.sort_unstable();
    Ok(SubspaceMass {
        fraction: if full { 1.0 } else { (best_mass / total).min(1.0) },
        witness,
        full,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceMassEntry {
    pub dim: usize,
    pub sup_fraction: f64,
    pub threshold: f64,
    pub slack: f64,
    pub witness: Vec<usize>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceMassReport {
    pub applicable: bool,
    pub entries: Vec<SubspaceMassEntry>,
    pub verdict: Verdict,
}

/// Compares each sup fraction with `min(i/q, 1)`. Strict inequality is
/// required; slack within [`SLACK_BAND`] of zero is undecided unless the
/// witness subspace holds every atom (then it is an exact failure).
pub fn check_subspace_mass_inequality(
    mu: &DiscreteMeasure,
    q: f64,
    budget: u128,
) -> Result<SubspaceMassReport> {
    if !(q > 0.0) {
        return Err(invalid(format!("subspace mass inequality needs q > 0, got {q}")));
    }
    if !mu.even() {
        return Ok(SubspaceMassReport {
            applicable: false,
            entries: Vec::new(),
            verdict: Verdict::Fail,
        });
    }
    let mut entries = Vec::new();
    let mut verdict = Verdict::Pass;
    for i in 1..mu.dim() {
        let sup = subspace_mass_sup(mu, i, budget)?;
        let threshold = (i as f64 / q).min(1.0);
        let slack = threshold - sup.fraction;
        let v = if sup.full && threshold >= 1.0 {
            Verdict::Fail
        } else if slack > SLACK_BAND {
            Verdict::Pass
        } else if slack < -SLACK_BAND {
            Verdict::Fail
        } else {
            Verdict::Indeterminate
        };
        verdict = verdict.combine(v);
        entries.push(SubspaceMassEntry {
            dim: i,
            sup_fraction: sup.fraction,
            threshold,
            slack,
            witness: sup.witness,
            verdict: v,
        });
    }
    Ok(SubspaceMassReport {
        applicable: true,
        entries,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassBalance {
    pub total: f64,
    pub vol_q: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `| |mu| - Vol(Q) | / Vol(Q)` against `tol`, with Vol(Q) by quadrature.
pub fn check_mass_balance(
    mu: &DiscreteMeasure,
    q_body: &StarBody,
    grid: &SphereGrid,
    tol: f64,
) -> Result<MassBalance> {
    let vol_q = q_body.volume(grid)?;
    let total = mu.total();
    let gap = (total - vol_q).abs() / vol_q;
    Ok(MassBalance {
        total,
        vol_q,
        gap,
        tolerance: tol,
        pass: gap <= tol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// q < 0: closed-hemisphere condition.
    Negative,
    /// q = 0: even data, no great subsphere, mass balance.
    Zero,
    /// 0 < q < n: even data and the subspace mass inequality.
    Intermediate,
    /// q >= n: no existence result; runs only on override.
    Beyond,
}

impl Regime {
    pub fn of(q: f64, n: usize) -> Regime {
        if q < 0.0 {
            Regime::Negative
        } else if q == 0.0 {
            Regime::Zero
        } else if q < n as f64 {
            Regime::Intermediate
        } else {
            Regime::Beyond
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub even_tolerance: f64,
    pub mass_balance_tolerance: f64,
    pub subset_budget: u128,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            even_tolerance: 1e-9,
            mass_balance_tolerance: 1e-3,
            subset_budget: DEFAULT_SUBSET_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HemisphereReport {
    pub status: String,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub dim: usize,
    pub q: f64,
    pub regime: Regime,
    pub even: bool,
    pub hemisphere_free: bool,
    pub hemisphere: HemisphereReport,
    pub great_subsphere_free: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub star_even: Option<bool>,
    pub subspace_mass: Vec<SubspaceMassEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_balance: Option<MassBalance>,
    pub verdict: Verdict,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

/// Runs the checks relevant to the regime of `q` and combines them.
pub fn check_preconditions(
    mu: &DiscreteMeasure,
    q_body: Option<&StarBody>,
    q: f64,
    grid: Option<&SphereGrid>,
    opts: &CheckOptions,
) -> Result<PreconditionReport> {
    let n = mu.dim();
    if let Some(b) = q_body {
        if b.dim() != n {
            return Err(GdmpError::DimensionMismatch {
                expected: n,
                found: b.dim(),
            });
        }
    }
    if !q.is_finite() {
        return Err(invalid(format!("q must be finite, got {q}")));
    }
    let regime = Regime::of(q, n);
    let even = check_even(mu, opts.even_tolerance);
    let hemi = hemisphere_concentrated(mu);
    let hemisphere = match &hemi {
        HemisphereStatus::Concentrated { witness, margin } => HemisphereReport {
            status: "concentrated".into(),
            margin: *margin,
            witness: Some(witness.to_vec()),
        },
        HemisphereStatus::Free { margin } => HemisphereReport {
            status: "free".into(),
            margin: *margin,
            witness: None,
        },
        HemisphereStatus::Indeterminate { best, margin } => HemisphereReport {
            status: "indeterminate".into(),
            margin: *margin,
            witness: Some(best.to_vec()),
        },
    };
    let great_subsphere_free = !great_subsphere_concentrated(mu);
    let star_even = q_body.map(|b| b.even());

    let mut verdict = Verdict::Pass;
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let mut fail = |verdict: &mut Verdict, msg: String| {
        *verdict = verdict.combine(Verdict::Fail);
        failures.push(msg);
    };

    let mut subspace_mass = Vec::new();
    let mut mass_balance = None;
    match regime {
        Regime::Negative => match &hemi {
            HemisphereStatus::Free { .. } => {}
            HemisphereStatus::Concentrated { witness, .. } => fail(
                &mut verdict,
                format!(
                    "measure is concentrated in the closed hemisphere around {:?}",
                    &witness[..]
                ),
            ),
            HemisphereStatus::Indeterminate { best, margin } => {
                verdict = verdict.combine(Verdict::Indeterminate);
                notes.push(format!(
                    "hemisphere test undecided near {:?} (margin {margin:e})",
                    &best[..]
                ));
            }
        },
        Regime::Zero | Regime::Intermediate | Regime::Beyond => {
            if regime == Regime::Beyond {
                fail(
                    &mut verdict,
                    format!("q = {q} is at least the dimension {n}; no existence result applies"),
                );
            }
            if !even {
                fail(&mut verdict, "measure is not even".into());
            }
            if star_even == Some(false) {
                fail(&mut verdict, "star body is not origin-symmetric".into());
            }
            if regime == Regime::Zero {
                if !great_subsphere_free {
                    fail(&mut verdict, "measure is concentrated on a great subsphere".into());
                }
                match (q_body, grid) {
                    (Some(b), Some(g)) => {
                        let mb = check_mass_balance(mu, b, g, opts.mass_balance_tolerance)?;
                        if !mb.pass {
                            fail(
                                &mut verdict,
                                format!(
                                    "mass balance violated: total {} vs Vol(Q) {} (relative gap {:.3e})",
                                    mb.total, mb.vol_q, mb.gap
                                ),
                            );
                        }
                        mass_balance = Some(mb);
                    }
                    _ => {
                        verdict = verdict.combine(Verdict::Indeterminate);
                        notes.push("mass balance not evaluated: no star body given".into());
                    }
                }
            } else if even {
                let report = check_subspace_mass_inequality(mu, q, opts.subset_budget)?;
                for e in &report.entries {
                    match e.verdict {
                        Verdict::Fail => fail(
                            &mut verdict,
                            format!(
                                "subspace mass inequality fails in dimension {}: fraction {} >= {} on the span of atoms {:?}",
                                e.dim, e.sup_fraction, e.threshold, e.witness
                            ),
                        ),
                        Verdict::Indeterminate => {
                            verdict = verdict.combine(Verdict::Indeterminate);
                            notes.push(format!(
                                "subspace mass slack {:e} in dimension {} is within the refusal band; atoms {:?}",
                                e.slack, e.dim, e.witness
                            ));
                        }
                        Verdict::Pass => {}
                    }
                }
                subspace_mass = report.entries;
            }
        }
    }

    Ok(PreconditionReport {
        dim: n,
        q,
        regime,
        even,
        hemisphere_free: matches!(hemi, HemisphereStatus::Free { .. }),
        hemisphere,
        great_subsphere_free,
        star_even,
        subspace_mass,
        mass_balance,
        verdict,
        failures,
        notes,
    })
}
