//! Integrals of `|Ax|^(-alpha)` over the sphere for diagonal `A`, the
//! closed-form estimate of their size, and the two exact/approximate
//! reductions used with it (power reduction and dimension reduction).
//!
//! Only diagonal matrices are accepted: the integrals are invariant under
//! orthogonal conjugation, so callers rotate coordinates first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GdmpError, Result};
use crate::sphere_quad::{GridDescriptor, SphereGrid};

/// Largest condition number a sweep accepts at desk-scale resolutions.
pub const MAX_SPREAD: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiagonalSpec {
    entries: Vec<f64>,
}

impl DiagonalSpec {
    /// Entries must be positive and sorted descending.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid("diagonal needs at least one entry"));
        }
        if entries.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid(format!("diagonal entries must be positive, got {entries:?}")));
        }
        if entries.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid(format!(
                "diagonal entries must be sorted descending, got {entries:?}"
            )));
        }
        Ok(DiagonalSpec { entries })
    }

    /// Sorts descending before validating.
    pub fn from_unsorted(mut entries: Vec<f64>) -> Result<Self> {
        entries.sort_by(|a, b| b.total_cmp(a));
        Self::new(entries)
    }

    pub fn identity(m: usize) -> Self {
        DiagonalSpec {
            entries: vec![1.0; m],
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn det(&self) -> f64 {
        self.entries.iter().product()
    }

    pub fn spread(&self) -> f64 {
        self.entries[0] / self.entries[self.m() - 1]
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        DiagonalSpec {
            entries: self.entries.iter().map(|s| s * lambda).collect(),
        }
    }

    /// The leading `l` entries.
    pub fn leading(&self, l: usize) -> Self {
        DiagonalSpec {
            entries: self.entries[..l].to_vec(),
        }
    }

    pub fn inverse(&self) -> Self {
        DiagonalSpec {
            entries: self.entries.iter().rev().map(|s| 1.0 / s).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for DiagonalSpec {
    type Error = GdmpError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DiagonalSpec::new(v)
    }
}

impl From<DiagonalSpec> for Vec<f64> {
    fn from(d: DiagonalSpec) -> Vec<f64> {
        d.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    AlphaGeN,
    NonintegerLtN,
    IntegerLtN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateCase {
    pub case: CaseKind,
    pub ceil_alpha: usize,
    pub floor_beta: usize,
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-12
}

/// Three-case estimate of `int |Ax|^(-alpha) dx` up to constants depending
/// only on the dimension and alpha.
pub fn closed_form_estimate(a: &DiagonalSpec, alpha: f64) -> Result<(f64, EstimateCase)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    let s = a.entries();
    let m = s.len();
    let prod = |k: usize| s[..k].iter().product::<f64>();
    let case = |c| EstimateCase {
        case: c,
        ceil_alpha: alpha.ceil() as usize,
        floor_beta: alpha.floor() as usize,
    };
    if alpha >= m as f64 {
        let v = 1.0 / (prod(m) * s[m - 1].powf(alpha - m as f64));
        Ok((v, case(CaseKind::AlphaGeN)))
    } else if is_integer(alpha) {
        let k = alpha.round() as usize;
        let v = (1.0 + (s[k - 1] / s[k]).ln()) / prod(k);
        Ok((v, case(CaseKind::IntegerLtN)))
    } else {
        let c = alpha.ceil() as usize;
        let v = 1.0 / (prod(c) * s[c - 1].powf(alpha - c as f64));
        Ok((v, case(CaseKind::NonintegerLtN)))
    }
}

/// `|Ax|^2` for diagonal `A`.
fn norm_sq(s: &[f64], x: &[f64]) -> f64 {
    s.iter().zip(x).map(|(a, b)| (a * b) * (a * b)).sum()
}

fn check_grid(a: &DiagonalSpec, grid: &SphereGrid) -> Result<()> {
    if grid.dim() != a.m() {
        return Err(GdmpError::DimensionMismatch {
            expected: a.m(),
            found: grid.dim(),
        });
    }
    Ok(())
}

/// Quadrature of `|Ax|^(-alpha)`.
pub fn integral_norm_power(a: &DiagonalSpec, alpha: f64, grid: &SphereGrid) -> Result<f64> {
    check_grid(a, grid)?;
    let s = a.entries();
    grid.integrate(|x| norm_sq(s, x).powf(-alpha / 2.0))
}

/// The same integral through the change of variables `x = A^-1 y / |A^-1 y|`:
/// `(1/det A) int |A^-1 y|^(alpha - m) dy`.
pub fn integral_norm_power_reflected(a: &DiagonalSpec, alpha: f64, grid: &SphereGrid) -> Result<f64> {
    check_grid(a, grid)?;
    let m = a.m() as f64;
    let s = a.entries();
    // A^-1 with the reciprocal of the largest entry on the first axis
    let inv: Vec<f64> = s.iter().map(|v| 1.0 / v).collect();
    Ok(grid.integrate(|y| norm_sq(&inv, y).powf((alpha - m) / 2.0))? / a.det())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    Reflected,
}

/// Route with the better-conditioned integrand: for small alpha the direct
/// integrand is nearly flat; otherwise its peak along the smallest axis is
/// sharp and the reflected integrand is better resolved.
pub fn preferred_route(alpha: f64) -> Route {
    if alpha < 1.0 {
        Route::Direct
    } else {
        Route::Reflected
    }
}

pub fn integral_by_route(a: &DiagonalSpec, alpha: f64, grid: &SphereGrid, route: Route) -> Result<f64> {
    match route {
        Route::Direct => integral_norm_power(a, alpha, grid),
        Route::Reflected => integral_norm_power_reflected(a, alpha, grid),
    }
}

/// The same grid family at half the resolution (at least 4).
pub fn coarser(grid: &SphereGrid) -> Result<SphereGrid> {
    let d = grid.descriptor();
    GridDescriptor {
        resolution: (d.resolution / 2).max(4),
        ..d.clone()
    }
    .build()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub m: usize,
    pub spread: f64,
    pub entries: Vec<f64>,
    pub integral: f64,
    pub estimate: f64,
    pub ratio: f64,
    pub case: CaseKind,
    pub route: Route,
    /// `|I(r) - I(r/2)| / I(r)`: a conservative estimate of the quadrature error.
    pub quad_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`.
    pub band: f64,
    pub grid: GridDescriptor,
}

/// Diagonal with condition number `spread`: first entry `spread`, last entry
/// 1, interior entries log-uniform (seeded) and sorted.
pub fn sweep_diagonal(m: usize, spread: f64, rng: &mut ChaCha8Rng) -> Result<DiagonalSpec> {
    let mut e = vec![spread];
    for _ in 1..m.saturating_sub(1) {
        let t: f64 = rng.random();
        e.push(spread.powf(t));
    }
    if m > 1 {
        e.push(1.0);
    }
    DiagonalSpec::from_unsorted(e)
}

/// Integral, estimate and ratio for one diagonal; `coarse` gives the
/// quadrature error estimate.
pub fn sweep_row(a: &DiagonalSpec, alpha: f64, grid: &SphereGrid, coarse: &SphereGrid) -> Result<SweepRow> {
    let route = preferred_route(alpha);
    let integral = integral_by_route(a, alpha, grid, route)?;
    let rough = integral_by_route(a, alpha, coarse, route)?;
    let (estimate, case) = closed_form_estimate(a, alpha)?;
    Ok(SweepRow {
        alpha,
        m: a.m(),
        spread: a.spread(),
        entries: a.entries().to_vec(),
        integral,
        estimate,
        ratio: integral / estimate,
        case: case.case,
        route,
        quad_error: (integral - rough).abs() / integral,
    })
}

/// Integral over the estimate across diagonals of the given condition numbers.
pub fn ratio_sweep(
    alpha: f64,
    m: usize,
    spreads: &[f64],
    grid: &SphereGrid,
    seed: u64,
) -> Result<SweepReport> {
    if grid.dim() != m {
        return Err(GdmpError::DimensionMismatch {
            expected: m,
            found: grid.dim(),
        });
    }
    if let Some(s) = spreads.iter().find(|s| !(**s >= 1.0 && **s <= MAX_SPREAD)) {
        return Err(invalid(format!(
            "spreads must lie in [1, {MAX_SPREAD:e}], got {s}"
        )));
    }
    let coarse = coarser(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &spread in spreads {
        let a = sweep_diagonal(m, spread, &mut rng)?;
        rows.push(sweep_row(&a, alpha, grid, &coarse)?);
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(SweepReport {
        rows,
        min_ratio,
        max_ratio,
        band: max_ratio / min_ratio,
        grid: grid.descriptor().clone(),
    })
}

/// Both sides of `int |Bx|^-g = (1/det B) int |B^-1 x|^(g - m)` on one grid.
pub fn power_reduce_check(b: &DiagonalSpec, gamma: f64, grid: &SphereGrid) -> Result<(f64, f64)> {
    let lhs = integral_norm_power(b, gamma, grid)?;
    let rhs = integral_norm_power_reflected(b, gamma, grid)?;
    Ok((lhs, rhs))
}

/// Both sides of the dimension-reducing comparison: the integral of
/// `|Bx|^-beta` over S^{m-1} and over S^l with the leading `l + 1 = 1 +
/// floor(beta)` entries. For `l = 0` the right side is the exact two-point
/// sum `2 s1^-beta` and `grid_l` is not used.
pub fn dimension_reduce_check(
    b: &DiagonalSpec,
    beta: f64,
    grid_m: &SphereGrid,
    grid_l: Option<&SphereGrid>,
) -> Result<(f64, f64)> {
    let m = b.m();
    if !(beta > 0.0 && beta < m as f64) {
        return Err(invalid(format!("beta must lie in (0, {m}), got {beta}")));
    }
    let l = 1 + beta.floor() as usize;
    let lhs = integral_by_route(b, beta, grid_m, preferred_route(beta))?;
    let lead = b.leading(l);
    let rhs = if l == 1 {
        2.0 * lead.entries()[0].powf(-beta)
    } else {
        let g = grid_l.ok_or_else(|| invalid(format!("dimension reduction needs a grid on S^{}", l - 1)))?;
        if g.dim() != l {
            return Err(GdmpError::DimensionMismatch {
                expected: l,
                found: g.dim(),
            });
        }
        integral_by_route(&lead, beta, g, preferred_route(beta))?
    };
    Ok((lhs, rhs))
}

/// Size of the q-th dual volume of an ellipsoid with semi-axes `b` (any
/// order): the estimate for `A = diag(1/b)` at `alpha = q`.
pub fn ellipsoid_dual_volume_estimate(semi_axes: &[f64], q: f64) -> Result<(f64, EstimateCase)> {
    let a = DiagonalSpec::from_unsorted(semi_axes.iter().map(|b| 1.0 / b).collect())?;
    closed_form_estimate(&a, q)
}
