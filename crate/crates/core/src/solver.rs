//! Discrete variational solver. Candidate bodies are Wulff shapes over the
//! atoms of the target measure; the degree-zero objective is minimized over
//! log support numbers and the minimizer is rescaled onto the measure.

use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bodies::{radial_min, StarBody, SupportPolytope};
use crate::dual_measures::{dual_curvature_measure, node_factors, nonfinite, DiscreteMeasure};
use crate::error::{invalid, GdmpError, Result};
use crate::measure_checks::{check_preconditions, CheckOptions, PreconditionReport, Regime, Verdict};
use crate::sphere_quad::{GridDescriptor, GridKind, NeumaierSum, SphereGrid};

/// Nodes per worker below which quadrature runs on the calling thread.
const PAR_CHUNK: usize = 4096;
/// Atoms closer than this are the same atom when comparing measures.
const MATCH_TOL: f64 = 1e-9;
const BB_MIN: f64 = 1e-4;
const BB_MAX: f64 = 1e4;
/// Relative support distance separating two basins.
const BASIN_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepControl {
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Curvature pairs kept for quasi-Newton directions; 0 gives plain
    /// gradient steps with Barzilai-Borwein lengths.
    pub memory: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
            memory: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MaxHOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Constant,
    /// `h_i` proportional to `alpha_i^(1/n)`.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub q: f64,
    pub grid_resolution: usize,
    pub grid_kind: GridKind,
    pub max_iters: usize,
    /// Bound on the sup norm of the gradient in `h` (with max h = 1).
    pub tolerance: f64,
    pub step: StepControl,
    pub h_min: f64,
    pub normalization: Normalization,
    pub enforce_even: bool,
    pub seed: u64,
    pub initialization: Initialization,
    /// Explicit starting support numbers; overrides `initialization`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_support: Option<Vec<f64>>,
    pub starts: usize,
    /// Stop when the objective drops by less than `stall_ftol * max(1, |J|)`
    /// over `stall_window` iterations.
    pub stall_window: usize,
    pub stall_ftol: f64,
    pub override_regime: bool,
    /// Soft-minimum temperatures (in log radius) of the warm-start stages,
    /// run in order before the exact objective; empty disables them.
    pub smoothing: Vec<f64>,
    pub smoothing_iters: usize,
    /// Residual above which a finished run does not count as converged.
    pub residual_bound: f64,
    pub checks: CheckOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            q: 1.0,
            grid_resolution: 128,
            grid_kind: GridKind::Cubed,
            max_iters: 2000,
            tolerance: 1e-7,
            step: StepControl::default(),
            h_min: 1e-6,
            normalization: Normalization::MaxHOne,
            enforce_even: false,
            seed: 0,
            initialization: Initialization::Constant,
            initial_support: None,
            starts: 1,
            stall_window: 50,
            stall_ftol: 1e-13,
            override_regime: false,
            smoothing: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            smoothing_iters: 300,
            residual_bound: 2e-2,
            checks: CheckOptions::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.step;
        if !self.q.is_finite() {
            return Err(invalid(format!("q must be finite, got {}", self.q)));
        }
        if !(self.h_min > 0.0 && self.h_min < 1.0) {
            return Err(invalid(format!("h_min must lie in (0, 1), got {}", self.h_min)));
        }
        if !(s.backtrack > 0.0 && s.backtrack < 1.0) {
            return Err(invalid(format!("backtracking factor must lie in (0, 1), got {}", s.backtrack)));
        }
        if !(s.sufficient_decrease > 0.0 && s.sufficient_decrease <= 0.5) {
            return Err(invalid(format!(
                "sufficient-decrease constant must lie in (0, 0.5], got {}",
                s.sufficient_decrease
            )));
        }
        if !(s.initial_step > 0.0 && s.initial_step.is_finite()) {
            return Err(invalid("initial step must be positive"));
        }
        if let Some(t) = self.smoothing.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(invalid(format!("smoothing temperatures must be positive, got {t}")));
        }
        if !(self.tolerance >= 0.0) || self.starts == 0 || self.stall_window == 0 {
            return Err(invalid("tolerance must be non-negative and starts, stall_window positive"));
        }
        Ok(())
    }

    pub fn grid_descriptor(&self, dim: usize) -> GridDescriptor {
        GridDescriptor {
            dim,
            kind: self.grid_kind,
            resolution: self.grid_resolution,
            seed: (self.grid_kind == GridKind::MonteCarlo).then_some(self.seed),
        }
    }
}

/// Fills `out[k] = f(k)` over worker threads; results do not depend on the
/// thread count.
fn par_fill<T: Send, F: Fn(usize) -> T + Sync>(out: &mut [T], f: F) {
    let workers = thread::available_parallelism().map_or(1, |p| p.get());
    let chunk = out.len().div_ceil(workers).max(PAR_CHUNK);
    if chunk >= out.len() {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = f(k);
        }
        return;
    }
    thread::scope(|scope| {
        for (c, part) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = f(c * chunk + j);
                }
            });
        }
    });
}

/// Maps fixed-size node ranges in parallel and returns the results in range
/// order, so reductions over them do not depend on the thread count.
fn par_chunks<T: Send, F: Fn(std::ops::Range<usize>) -> T + Sync>(len: usize, f: F) -> Vec<T> {
    let ranges: Vec<_> = (0..len).step_by(PAR_CHUNK).map(|s| s..(s + PAR_CHUNK).min(len)).collect();
    let workers = thread::available_parallelism().map_or(1, |p| p.get()).min(ranges.len());
    if workers <= 1 {
        return ranges.into_iter().map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..ranges.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let f = &f;
        let ranges = &ranges;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..ranges.len())
                        .step_by(workers)
                        .map(|c| (c, f(ranges[c].clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, v) in h.join().expect("quadrature worker panicked") {
                out[c] = Some(v);
            }
        }
    });
    out.into_iter().map(|v| v.expect("every chunk computed")).collect()
}

/// Quadrature data for one (measure, Q, q, grid) combination.
pub(crate) struct Problem<'a> {
    grid: &'a SphereGrid,
    polytope: SupportPolytope,
    alpha: Vec<f64>,
    total: f64,
    q: f64,
    factors: Vec<f64>,
    /// `log rho_Q` per node, only for q = 0.
    log_rho_q: Option<Vec<f64>>,
    /// `Vol(Q)` on the grid, only for q = 0.
    vol_q: f64,
}

pub(crate) struct Evaluation {
    /// Dual volume for q != 0, dual entropy for q = 0.
    pub value: f64,
    pub objective: f64,
    /// Derivative in `log h_i`.
    pub grad_log: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(mu: &DiscreteMeasure, q_body: &StarBody, q: f64, grid: &'a SphereGrid) -> Result<Self> {
        let n = mu.dim();
        for found in [q_body.dim(), grid.dim()] {
            if found != n {
                return Err(GdmpError::DimensionMismatch { expected: n, found });
            }
        }
        let polytope = SupportPolytope::new(mu.atoms().to_vec(), vec![1.0; mu.len()])?;
        let factors = node_factors(q_body, q, grid)?;
        let (log_rho_q, vol_q) = if q == 0.0 {
            let logs = q_body.tabulate(grid)?.iter().map(|r| r.ln()).collect();
            let mut acc = NeumaierSum::default();
            factors.iter().for_each(|f| acc.add(*f));
            (Some(logs), acc.value())
        } else {
            (None, f64::NAN)
        };
        Ok(Problem {
            grid,
            polytope,
            alpha: mu.weights().to_vec(),
            total: mu.total(),
            q,
            factors,
            log_rho_q,
            vol_q,
        })
    }

    fn check_support(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.alpha.len() {
            return Err(GdmpError::DimensionMismatch {
                expected: self.alpha.len(),
                found: h.len(),
            });
        }
        if let Some(i) = h.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(format!("support number {i} must be positive, got {}", h[i])));
        }
        Ok(())
    }

    pub fn evaluate(&self, h: &[f64]) -> Result<Evaluation> {
        self.check_support(h)?;
        let normals = self.polytope.normals_flat();
        let grid = self.grid;
        let q = self.q;
        let mut node_vals = vec![(0.0, usize::MAX); grid.len()];
        par_fill(&mut node_vals, |k| match radial_min(normals, h, grid.node(k)) {
            None => (f64::NAN, usize::MAX),
            Some((r, i)) => {
                let v = match &self.log_rho_q {
                    Some(l) => self.factors[k] * (r.ln() - l[k]),
                    None => self.factors[k] * r.powf(q),
                };
                (v, i)
            }
        });
        let mut total = NeumaierSum::default();
        let mut bins = vec![NeumaierSum::default(); h.len()];
        for (k, &(v, i)) in node_vals.iter().enumerate() {
            if i == usize::MAX {
                return Err(GdmpError::Unbounded(grid.node(k).to_vec()));
            }
            if !v.is_finite() {
                return Err(nonfinite(grid, k, v));
            }
            total.add(v);
            // for q = 0 the bins carry the entropy derivative, i.e. the factors
            bins[i].add(if q == 0.0 { self.factors[k] } else { v });
        }
        let bins: Vec<f64> = bins.iter().map(|b| b.value()).collect();
        Ok(self.finish(h, total.value(), &bins))
    }

    /// Objective with the radial minimum replaced by a soft minimum of
    /// temperature `tau` in log radius; smooth in `h`, and equal to the
    /// exact objective as `tau -> 0`.
    pub fn evaluate_smoothed(&self, h: &[f64], tau: f64) -> Result<Evaluation> {
        self.check_support(h)?;
        let n = self.grid.dim();
        let normals = self.polytope.normals_flat();
        let grid = self.grid;
        let q = self.q;
        let log_h: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let cutoff = 40.0 * tau;
        let parts = par_chunks(grid.len(), |range| -> Result<(NeumaierSum, Vec<NeumaierSum>)> {
            let mut total = NeumaierSum::default();
            let mut bins = vec![NeumaierSum::default(); h.len()];
            let mut cand: Vec<(usize, f64)> = Vec::with_capacity(h.len());
            for k in range {
                let u = grid.node(k);
                cand.clear();
                let mut lmin = f64::INFINITY;
                for (i, x) in normals.chunks_exact(n).enumerate() {
                    let d = crate::sphere_quad::dot(u, x);
                    if d > 0.0 {
                        let l = log_h[i] - d.ln();
                        lmin = lmin.min(l);
                        cand.push((i, l));
                    }
                }
                if cand.is_empty() {
                    return Err(GdmpError::Unbounded(u.to_vec()));
                }
                cand.retain(|&(_, l)| l - lmin <= cutoff);
                let mut z = 0.0;
                for c in cand.iter_mut() {
                    c.1 = (-(c.1 - lmin) / tau).exp();
                    z += c.1;
                }
                let log_rho = lmin - tau * z.ln();
                let v = match &self.log_rho_q {
                    Some(l) => self.factors[k] * (log_rho - l[k]),
                    None => self.factors[k] * (q * log_rho).exp(),
                };
                if !v.is_finite() {
                    return Err(nonfinite(grid, k, v));
                }
                total.add(v);
                let mass = if q == 0.0 { self.factors[k] } else { v };
                for &(i, p) in &cand {
                    bins[i].add(mass * p / z);
                }
            }
            Ok((total, bins))
        });
        let mut total = NeumaierSum::default();
        let mut bins = vec![NeumaierSum::default(); h.len()];
        for part in parts {
            let (t, b) = part?;
            total.add(t.value());
            for (acc, v) in bins.iter_mut().zip(&b) {
                acc.add(v.value());
            }
        }
        let bins: Vec<f64> = bins.iter().map(|b| b.value()).collect();
        Ok(self.finish(h, total.value(), &bins))
    }

    fn finish(&self, h: &[f64], value: f64, bins: &[f64]) -> Evaluation {
        let q = self.q;
        let mut log_term = NeumaierSum::default();
        for (a, v) in self.alpha.iter().zip(h) {
            log_term.add(a * v.ln());
        }
        let log_term = log_term.value() / self.total;
        let (objective, denom) = if q == 0.0 {
            (log_term - value / self.vol_q, self.vol_q)
        } else {
            (log_term - value.ln() / q, value)
        };
        let grad_log = self
            .alpha
            .iter()
            .zip(bins)
            .map(|(a, c)| a / self.total - c / denom)
            .collect();
        Evaluation {
            value,
            objective,
            grad_log,
        }
    }

    fn evaluate_at(&self, h: &[f64], tau: Option<f64>) -> Result<Evaluation> {
        match tau {
            Some(t) => self.evaluate_smoothed(h, t),
            None => self.evaluate(h),
        }
    }

    pub fn polytope(&self, h: Vec<f64>) -> SupportPolytope {
        self.polytope.with_support(h)
    }
}

/// `(1/|mu|) sum alpha_i log h_i - (1/q) log V_q(K_h, Q)` for q != 0.
#[allow(non_snake_case)]
pub fn objective_J(h: &[f64], mu: &DiscreteMeasure, q_body: &StarBody, q: f64, grid: &SphereGrid) -> Result<f64> {
    if q == 0.0 {
        return Err(invalid("objective_J needs q != 0; use objective_Jtilde"));
    }
    Ok(Problem::new(mu, q_body, q, grid)?.evaluate(h)?.objective)
}

/// `(1/|mu|) sum alpha_i log h_i - E(K_h, Q) / Vol(Q)`, the q = 0 objective.
#[allow(non_snake_case)]
pub fn objective_Jtilde(h: &[f64], mu: &DiscreteMeasure, q_body: &StarBody, grid: &SphereGrid) -> Result<f64> {
    Ok(Problem::new(mu, q_body, 0.0, grid)?.evaluate(h)?.objective)
}

/// Derivative of the objective (J for q != 0, J-tilde for q = 0) in each
/// support number.
pub fn gradient(h: &[f64], mu: &DiscreteMeasure, q_body: &StarBody, q: f64, grid: &SphereGrid) -> Result<Vec<f64>> {
    let e = Problem::new(mu, q_body, q, grid)?.evaluate(h)?;
    Ok(e.grad_log.iter().zip(h).map(|(g, v)| g / v).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Atom-matched L1 distance over |mu|.
    pub residual: f64,
    /// Achieved minus target weight per atom.
    pub per_atom: Vec<f64>,
    pub achieved_total: f64,
}

/// Compares the curvature measure of `k` with `mu`; `k`'s normals must be
/// `mu`'s atoms in order.
pub fn verify_solution(
    k: &SupportPolytope,
    q_body: &StarBody,
    q: f64,
    mu: &DiscreteMeasure,
    grid: &SphereGrid,
) -> Result<ResidualReport> {
    if k.len() != mu.len() {
        return Err(invalid(format!("polytope has {} facets but the measure {} atoms", k.len(), mu.len())));
    }
    let same = mu
        .atoms()
        .iter()
        .enumerate()
        .all(|(i, a)| a.iter().zip(k.normal(i)).all(|(x, y)| (x - y).abs() <= MATCH_TOL));
    if !same {
        return Err(invalid("polytope normals must be the measure's atoms in order"));
    }
    let achieved = dual_curvature_measure(k, q_body, q, grid)?;
    let tv = crate::dual_measures::total_variation_distance(&achieved, mu, MATCH_TOL)?;
    Ok(ResidualReport {
        residual: tv / mu.total(),
        per_atom: achieved.weights().iter().zip(mu.weights()).map(|(a, t)| a - t).collect(),
        achieved_total: achieved.total(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    RefusedPreconditions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    /// Objective decrease over the stall window fell below `stall_ftol`.
    Stalled,
    MaxIters,
    LineSearchFailure,
    NotRun,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub step: Vec<f64>,
}

impl Trace {
    /// CSV with header `iter,J,grad_norm,step`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,J,grad_norm,step\n");
        for i in 0..self.objective.len() {
            s.push_str(&format!(
                "{i},{:.16e},{:.16e},{:.16e}\n",
                self.objective[i], self.grad_norm[i], self.step[i]
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    pub starts: Vec<usize>,
    pub objective: f64,
    pub residual: f64,
    /// Support numbers after the final scaling.
    pub support: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub stop_reason: StopReason,
    pub q: f64,
    pub regime: Regime,
    pub grid: GridDescriptor,
    pub iterations: usize,
    /// Support numbers of the solution after scaling, at `mu`'s atoms.
    pub solution: Option<Vec<f64>>,
    /// Minimizer normalized to max h = 1.
    pub normalized: Option<Vec<f64>>,
    pub scale: f64,
    pub objective: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Exact-objective descent; non-increasing.
    pub trace: Trace,
    /// Warm-start stages that preceded `trace`.
    pub smoothing: Vec<SmoothingStage>,
    /// Index into `smoothing` of the reported endpoint; `None` when the
    /// exact-descent endpoint had the smallest residual.
    pub selected_stage: Option<usize>,
    pub residual: Option<ResidualReport>,
    /// `max h / min rho` of the solution on the grid.
    pub elongation: Option<f64>,
    pub floor_hits: usize,
    pub basins: Vec<Basin>,
    pub preconditions: PreconditionReport,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl SolveReport {
    /// The solution as a polytope over `mu`'s atoms.
    pub fn polytope(&self, mu: &DiscreteMeasure) -> Result<Option<SupportPolytope>> {
        self.solution
            .as_ref()
            .map(|h| SupportPolytope::new(mu.atoms().to_vec(), h.clone()))
            .transpose()
    }
}

/// Maps optimization variables to facets: one variable per antipodal pair
/// when evenness is enforced, one per facet otherwise.
struct Layout {
    var_of: Vec<usize>,
    vars: usize,
}

impl Layout {
    fn new(mu: &DiscreteMeasure, enforce_even: bool) -> Result<Self> {
        if !enforce_even {
            return Ok(Layout {
                var_of: (0..mu.len()).collect(),
                vars: mu.len(),
            });
        }
        let partner = match mu.partners() {
            Some(p) if mu.even() => p,
            _ => return Err(invalid("enforce_even needs an even measure")),
        };
        let mut var_of = vec![usize::MAX; mu.len()];
        let mut vars = 0;
        for i in 0..mu.len() {
            if var_of[i] == usize::MAX {
                var_of[i] = vars;
                var_of[partner[i]] = vars;
                vars += 1;
            }
        }
        Ok(Layout { var_of, vars })
    }

    fn expand(&self, y: &[f64]) -> Vec<f64> {
        self.var_of.iter().map(|&v| y[v].exp()).collect()
    }

    fn reduce(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vars];
        for (i, &v) in self.var_of.iter().enumerate() {
            out[v] += g[i];
        }
        out
    }
}

struct Run {
    y: Vec<f64>,
    objective: f64,
    trace: Trace,
    stop: StopReason,
    iterations: usize,
    floor_hits: usize,
    diagnostics: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shifts so that max = 0 (max h = 1) and applies the floor; returns the
/// number of clamped variables.
fn normalize_log(y: &mut [f64], log_floor: f64) -> usize {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut hits = 0;
    for v in y.iter_mut() {
        *v -= m;
        if *v < log_floor {
            *v = log_floor;
            hits += 1;
        }
    }
    hits
}

fn sup_grad_h(grad_log: &[f64], h: &[f64]) -> f64 {
    grad_log.iter().zip(h).map(|(g, v)| (g / v).abs()).fold(0.0, f64::max)
}

/// Quasi-Newton direction from the stored pairs (two-loop recursion);
/// plain steepest descent when the memory is empty.
fn lbfgs_direction(g: &[f64], pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut coef = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let a = dot(s, &d) / dot(s, y);
        d.iter_mut().zip(y).for_each(|(v, yy)| *v -= a * yy);
        coef.push(a);
    }
    if let Some((s, y)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        d.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), a) in pairs.iter().zip(coef.iter().rev()) {
        let b = dot(y, &d) / dot(s, y);
        d.iter_mut().zip(s).for_each(|(v, ss)| *v += (a - b) * ss);
    }
    d
}

fn descend(
    problem: &Problem,
    layout: &Layout,
    mut y: Vec<f64>,
    cfg: &SolveConfig,
    tau: Option<f64>,
    max_iters: usize,
) -> Result<Run> {
    let step_cfg = cfg.step;
    let log_floor = cfg.h_min.ln();
    let mut floor_hits = normalize_log(&mut y, log_floor);
    let mut diagnostics = Vec::new();
    let mut h = layout.expand(&y);
    let mut e = problem.evaluate_at(&h, tau)?;
    let mut g = layout.reduce(&e.grad_log);
    let mut trace = Trace::default();
    let mut grad_norm = sup_grad_h(&e.grad_log, &h);
    trace.objective.push(e.objective);
    trace.grad_norm.push(grad_norm);
    trace.step.push(0.0);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut bb = step_cfg.initial_step;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;
    while grad_norm > cfg.tolerance {
        if iterations >= max_iters {
            break;
        }
        let mut accepted = None;
        let mut trial_t = 0.0;
        // quasi-Newton first; on failure retry once along the gradient
        for quasi in [true, false] {
            if !quasi && pairs.is_empty() {
                break;
            }
            let mut d = if quasi { lbfgs_direction(&g, &pairs) } else { g.iter().map(|v| -v).collect() };
            let mut slope = dot(&g, &d);
            if slope >= 0.0 {
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
            trial_t = if quasi && !pairs.is_empty() { 1.0 } else { bb };
            for _ in 0..=step_cfg.max_backtracks {
                let mut y_new: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + trial_t * b).collect();
                let hits = normalize_log(&mut y_new, log_floor);
                let h_new = layout.expand(&y_new);
                let e_new = problem.evaluate_at(&h_new, tau)?;
                if e_new.objective <= e.objective + step_cfg.sufficient_decrease * trial_t * slope {
                    accepted = Some((y_new, h_new, e_new, hits));
                    break;
                }
                trial_t *= step_cfg.backtrack;
            }
            if accepted.is_some() {
                break;
            }
            pairs.clear();
        }
        let Some((y_new, h_new, e_new, hits)) = accepted else {
            stop = StopReason::LineSearchFailure;
            diagnostics.push(format!(
                "line search found no sufficient decrease at iteration {iterations} (last step {trial_t:e})"
            ));
            break;
        };
        if hits > 0 {
            floor_hits += hits;
            diagnostics.push(format!("{hits} support numbers clamped to h_min at iteration {iterations}"));
        }
        let g_new = layout.reduce(&e_new.grad_log);
        // curvature pair from the mean-free displacement; the shift from
        // renormalization is invisible to the objective
        let mut s: Vec<f64> = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter_mut().for_each(|v| *v -= mean);
        let dg: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &dg);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&dg, &dg).sqrt() && sy > 0.0 {
            bb = (dot(&s, &s) / sy).clamp(BB_MIN, BB_MAX);
            if step_cfg.memory > 0 {
                if pairs.len() == step_cfg.memory {
                    pairs.remove(0);
                }
                pairs.push((s, dg));
            }
        } else {
            bb = step_cfg.initial_step;
        }
        y = y_new;
        h = h_new;
        e = e_new;
        g = g_new;
        grad_norm = sup_grad_h(&e.grad_log, &h);
        iterations += 1;
        trace.objective.push(e.objective);
        trace.grad_norm.push(grad_norm);
        trace.step.push(trial_t);
        if iterations >= cfg.stall_window {
            let past = trace.objective[iterations - cfg.stall_window];
            if past - e.objective <= cfg.stall_ftol * e.objective.abs().max(1.0) {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    if grad_norm <= cfg.tolerance {
        stop = StopReason::GradientTolerance;
    }
    Ok(Run {
        y,
        objective: e.objective,
        trace,
        stop,
        iterations,
        floor_hits,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingStage {
    pub tau: f64,
    pub iterations: usize,
    pub objective: f64,
    pub stop: StopReason,
    /// Normalized support numbers at the end of the stage.
    pub support: Vec<f64>,
}

/// Result of one start: the exact-descent run, the warm-start stages, and
/// the candidate endpoint with the smallest measure residual.
struct Outcome {
    run: Run,
    stages: Vec<SmoothingStage>,
    /// `None` when the exact-descent endpoint was kept.
    selected_stage: Option<usize>,
    h: Vec<f64>,
    scale: f64,
    residual: ResidualReport,
    objective: f64,
    converged: bool,
}

/// Smoothed warm-start stages followed by descent on the exact objective.
/// With point binning the exact objective is concave within each binning
/// cell for q > 0 (linear for q = 0), so its minimizer can sit a grid cell
/// away from the measure solution; every stage endpoint is therefore scored
/// by its residual and the best one is reported.
fn staged_descent(
    problem: &Problem,
    layout: &Layout,
    mut y: Vec<f64>,
    cfg: &SolveConfig,
    q_body: &StarBody,
    mu: &DiscreteMeasure,
    grid: &SphereGrid,
) -> Result<Outcome> {
    let mut stages = Vec::new();
    let mut candidates = Vec::new();
    for &tau in &cfg.smoothing {
        let run = descend(problem, layout, y, cfg, Some(tau), cfg.smoothing_iters)?;
        let h = layout.expand(&run.y);
        stages.push(SmoothingStage {
            tau,
            iterations: run.iterations,
            objective: run.objective,
            stop: run.stop,
            support: h.clone(),
        });
        candidates.push((Some(stages.len() - 1), h, run.stop));
        y = run.y;
    }
    let run = descend(problem, layout, y, cfg, None, cfg.max_iters)?;
    candidates.push((None, layout.expand(&run.y), run.stop));

    let mut best: Option<(Option<usize>, Vec<f64>, f64, ResidualReport, bool)> = None;
    for (stage, h, stop) in candidates {
        let c = scale_for(problem, &h, cfg.q, mu.total())?;
        let scaled: Vec<f64> = h.iter().map(|v| c * v).collect();
        let residual = verify_solution(&problem.polytope(scaled), q_body, cfg.q, mu, grid)?;
        // ties go to the later (less smoothed) candidate
        if best.as_ref().is_none_or(|b| residual.residual <= b.3.residual) {
            let finished = matches!(stop, StopReason::GradientTolerance | StopReason::Stalled);
            best = Some((stage, h, c, residual, finished));
        }
    }
    let (selected_stage, h, scale, residual, finished) = best.expect("at least the exact candidate");
    let objective = problem.evaluate(&h)?.objective;
    let converged = finished && residual.residual <= cfg.residual_bound;
    Ok(Outcome {
        run,
        stages,
        selected_stage,
        h,
        scale,
        residual,
        objective,
        converged,
    })
}

fn initial_point(mu: &DiscreteMeasure, layout: &Layout, cfg: &SolveConfig, start: usize) -> Result<Vec<f64>> {
    let n = mu.dim() as f64;
    let mut x = vec![0.0; layout.vars];
    if let Some(h0) = &cfg.initial_support {
        if h0.len() != mu.len() {
            return Err(invalid(format!("initial support has {} entries, measure {} atoms", h0.len(), mu.len())));
        }
        if let Some(i) = h0.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(format!("initial support number {i} must be positive")));
        }
        for (i, &v) in layout.var_of.iter().enumerate() {
            x[v] = h0[i].ln();
        }
    } else if cfg.initialization == Initialization::WarmStart {
        let floor = mu.weights().iter().cloned().filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
        for (i, &v) in layout.var_of.iter().enumerate() {
            x[v] = mu.weights()[i].max(floor).ln() / n;
        }
    }
    if start > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(start as u64));
        let normal = Normal::new(0.0, 0.3).expect("valid normal");
        x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(x)
}

fn scale_for(problem: &Problem, h: &[f64], q: f64, total: f64) -> Result<f64> {
    if q == 0.0 {
        return Ok(1.0);
    }
    let e = problem.evaluate(h)?;
    Ok((total / e.value).powf(1.0 / q))
}

/// Runs the precondition gate, the descent (possibly multi-start) and the
/// final scaling.
pub fn minimize(mu: &DiscreteMeasure, q_body: &StarBody, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let descriptor = cfg.grid_descriptor(mu.dim());
    let grid = descriptor.build()?;
    minimize_on_grid(mu, q_body, cfg, &grid)
}

/// As [`minimize`] with a caller-built grid (which must be the grid any
/// radial-grid Q was tabulated on).
pub fn minimize_on_grid(mu: &DiscreteMeasure, q_body: &StarBody, cfg: &SolveConfig, grid: &SphereGrid) -> Result<SolveReport> {
    cfg.validate()?;
    let q = cfg.q;
    let n = mu.dim();
    let preconditions = check_preconditions(mu, Some(q_body), q, Some(grid), &cfg.checks)?;
    let regime = preconditions.regime;
    let mut report = SolveReport {
        status: SolveStatus::RefusedPreconditions,
        stop_reason: StopReason::NotRun,
        q,
        regime,
        grid: grid.descriptor().clone(),
        iterations: 0,
        solution: None,
        normalized: None,
        scale: 1.0,
        objective: None,
        grad_norm: None,
        trace: Trace::default(),
        smoothing: Vec::new(),
        selected_stage: None,
        residual: None,
        elongation: None,
        floor_hits: 0,
        basins: Vec::new(),
        preconditions: preconditions.clone(),
        warnings: Vec::new(),
        diagnostics: Vec::new(),
    };
    if preconditions.verdict != Verdict::Pass {
        if !cfg.override_regime {
            return Ok(report);
        }
        report.warnings.push(format!(
            "preconditions {:?} for q = {q}, n = {n}; running under override: {}",
            preconditions.verdict,
            preconditions.failures.join("; ")
        ));
    }
    if regime == Regime::Beyond && preconditions.verdict == Verdict::Pass {
        report.warnings.push(format!("q = {q} >= n = {n}: outside every existence result"));
    }
    // non-even layouts are unstable for q >= 0 (the pair balance is a flat
    // direction of the discrete objective), so even data always uses pairs
    let even = cfg.enforce_even || (q >= 0.0 && mu.even() && mu.partners().is_some());
    let layout = Layout::new(mu, even)?;
    let problem = Problem::new(mu, q_body, q, grid)?;
    let starts: Vec<Vec<f64>> = (0..cfg.starts).map(|s| initial_point(mu, &layout, cfg, s)).collect::<Result<_>>()?;
    let outcomes: Vec<Result<Outcome>> = if starts.len() == 1 {
        vec![staged_descent(&problem, &layout, starts[0].clone(), cfg, q_body, mu, grid)]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = starts
                .iter()
                .map(|y0| {
                    let (problem, layout) = (&problem, &layout);
                    scope.spawn(move || staged_descent(problem, layout, y0.clone(), cfg, q_body, mu, grid))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
        })
    };
    let outcomes: Vec<Outcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut basins: Vec<(Vec<f64>, Basin)> = Vec::new();
    for (s, out) in outcomes.iter().enumerate() {
        if let Some((_, b)) = basins.iter_mut().find(|(hb, _)| {
            hb.iter().zip(&out.h).all(|(a, b)| (a - b).abs() <= BASIN_TOL * a.max(*b))
        }) {
            b.starts.push(s);
            continue;
        }
        basins.push((
            out.h.clone(),
            Basin {
                starts: vec![s],
                objective: out.objective,
                residual: out.residual.residual,
                support: out.h.iter().map(|v| out.scale * v).collect(),
            },
        ));
    }
    let best = (0..outcomes.len())
        .min_by(|&a, &b| outcomes[a].objective.total_cmp(&outcomes[b].objective))
        .expect("at least one start");
    let out = &outcomes[best];
    let run = &out.run;
    let solution: Vec<f64> = out.h.iter().map(|v| out.scale * v).collect();
    let polytope = problem.polytope(solution.clone());
    let (rho, _) = polytope.radial_on_grid(grid)?;
    let min_rho = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_h = solution.iter().cloned().fold(0.0, f64::max);

    report.status = if out.converged { SolveStatus::Converged } else { SolveStatus::MaxIter };
    if matches!(run.stop, StopReason::GradientTolerance | StopReason::Stalled) && !out.converged {
        report.diagnostics.push(format!(
            "descent stopped ({:?}) but residual {:.3e} exceeds the bound {:.3e}",
            run.stop, out.residual.residual, cfg.residual_bound
        ));
    }
    if let Some(i) = out.selected_stage {
        report.diagnostics.push(format!(
            "reported the smoothing stage tau = {:e} endpoint (residual below the exact-descent endpoint)",
            out.stages[i].tau
        ));
    }
    if run.floor_hits > 0 {
        report
            .diagnostics
            .push(format!("support floor h_min = {:e} was hit {} times", cfg.h_min, run.floor_hits));
    }
    report.diagnostics.extend(run.diagnostics.iter().cloned());
    if basins.len() > 1 {
        report.diagnostics.push(format!("{} distinct basins across {} starts", basins.len(), outcomes.len()));
    }
    report.stop_reason = run.stop;
    report.iterations = run.iterations;
    report.normalized = Some(out.h.clone());
    report.solution = Some(solution);
    report.scale = out.scale;
    report.objective = Some(out.objective);
    report.grad_norm = Some(sup_grad_h(&problem.evaluate(&out.h)?.grad_log, &out.h));
    report.trace = run.trace.clone();
    report.smoothing = out.stages.clone();
    report.selected_stage = out.selected_stage;
    report.residual = Some(out.residual.clone());
    report.elongation = Some(max_h / min_rho);
    report.floor_hits = run.floor_hits;
    report.basins = basins.into_iter().map(|(_, b)| b).collect();
    Ok(report)
}
