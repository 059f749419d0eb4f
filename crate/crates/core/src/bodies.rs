//! Star bodies and convex polytopes in support form.
//!
//! A polytope is `{xi : xi . x_i <= h_i}` over a fixed list of unit normals;
//! its radial function is `min over {i : u . x_i > 0} of h_i / (u . x_i)`.
//! Every radial evaluation in the crate goes through [`radial_min`] so that
//! facet binning agrees bit for bit across modules.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GdmpError, Result};
use crate::measure_checks::{hemisphere_status, HemisphereStatus};
use crate::sphere_quad::{dot, norm, GridDescriptor, SphereGrid, UnitVector};

/// Parameters of a star body as they appear in documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "parameters", rename_all = "snake_case")]
pub enum StarSpec {
    Ball {
        radius: f64,
    },
    Ellipsoid {
        semi_axes: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation: Option<Vec<Vec<f64>>>,
    },
    RadialGrid {
        grid: GridDescriptor,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct StarBody {
    dim: usize,
    spec: StarSpec,
    even: bool,
    // rows of A P for the ellipsoid, A = diag(1 / b)
    gauge: Vec<Vec<f64>>,
    grid: Option<Arc<SphereGrid>>,
}

impl StarBody {
    pub fn ball(n: usize, radius: f64) -> Result<Self> {
        Self::from_spec(n, StarSpec::Ball { radius })
    }

    pub fn ellipsoid(semi_axes: Vec<f64>, rotation: Option<Vec<Vec<f64>>>) -> Result<Self> {
        Self::from_spec(
            semi_axes.len(),
            StarSpec::Ellipsoid {
                semi_axes,
                rotation,
            },
        )
    }

    pub fn radial_grid(grid: Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let spec = StarSpec::RadialGrid {
            grid: grid.descriptor().clone(),
            values,
        };
        Self::build(n, spec, Some(grid))
    }

    pub fn from_spec(dim: usize, spec: StarSpec) -> Result<Self> {
        Self::build(dim, spec, None)
    }

    fn build(dim: usize, spec: StarSpec, grid: Option<Arc<SphereGrid>>) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("star body dimension must be >= 2, got {dim}")));
        }
        let mut gauge = Vec::new();
        let mut grid_out = None;
        let even = match &spec {
            StarSpec::Ball { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(invalid(format!("ball radius must be positive, got {radius}")));
                }
                true
            }
            StarSpec::Ellipsoid {
                semi_axes,
                rotation,
            } => {
                if semi_axes.len() != dim {
                    return Err(GdmpError::DimensionMismatch {
                        expected: dim,
                        found: semi_axes.len(),
                    });
                }
                if semi_axes.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                    return Err(invalid(format!(
                        "ellipsoid semi-axes must be positive, got {semi_axes:?}"
                    )));
                }
                if semi_axes.windows(2).any(|w| w[0] > w[1]) {
                    return Err(invalid(format!(
                        "ellipsoid semi-axes must be sorted ascending, got {semi_axes:?}"
                    )));
                }
                let p = match rotation {
                    Some(p) => {
                        check_orthogonal(p, dim)?;
                        p.clone()
                    }
                    None => (0..dim)
                        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect(),
                };
                gauge = p
                    .iter()
                    .zip(semi_axes)
                    .map(|(row, b)| row.iter().map(|c| c / b).collect())
                    .collect();
                true
            }
            StarSpec::RadialGrid { grid: desc, values } => {
                if desc.dim != dim {
                    return Err(GdmpError::DimensionMismatch {
                        expected: dim,
                        found: desc.dim,
                    });
                }
                let g = match grid {
                    Some(g) if g.descriptor() == desc => g,
                    _ => Arc::new(desc.build()?),
                };
                if values.len() != g.len() {
                    return Err(invalid(format!(
                        "radial grid needs {} values, got {}",
                        g.len(),
                        values.len()
                    )));
                }
                if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(invalid(format!(
                        "radial value at node {k} must be finite and positive"
                    )));
                }
                let even = (0..g.len()).all(|k| {
                    let (a, b) = (values[k], values[g.antipode(k)]);
                    (a - b).abs() <= 1e-10 * a.max(b)
                });
                grid_out = Some(g);
                even
            }
        };
        Ok(StarBody {
            dim,
            spec,
            even,
            gauge,
            grid: grid_out,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &StarSpec {
        &self.spec
    }

    pub fn even(&self) -> bool {
        self.even
    }

    /// Radial function at a unit direction. Sampled bodies only answer at
    /// their own grid nodes.
    pub fn radial(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(GdmpError::DimensionMismatch {
                expected: self.dim,
                found: u.len(),
            });
        }
        match &self.spec {
            StarSpec::Ball { radius } => Ok(*radius),
            StarSpec::Ellipsoid { .. } => Ok(self.ellipsoid_radial(u)),
            StarSpec::RadialGrid { values, .. } => {
                let g = self.grid.as_ref().expect("radial grid body owns its grid");
                g.locate(u)
                    .map(|k| values[k])
                    .ok_or_else(|| GdmpError::OffGrid(u.to_vec()))
            }
        }
    }

    fn ellipsoid_radial(&self, u: &[f64]) -> f64 {
        let s: f64 = self
            .gauge
            .iter()
            .map(|row| {
                let c = dot(row, u);
                c * c
            })
            .sum();
        1.0 / s.sqrt()
    }

    /// Radial values at every node of `grid`.
    pub fn tabulate(&self, grid: &SphereGrid) -> Result<Vec<f64>> {
        if grid.dim() != self.dim {
            return Err(GdmpError::DimensionMismatch {
                expected: self.dim,
                found: grid.dim(),
            });
        }
        match &self.spec {
            StarSpec::Ball { radius } => Ok(vec![*radius; grid.len()]),
            StarSpec::Ellipsoid { .. } => Ok(grid.nodes().map(|u| self.ellipsoid_radial(u)).collect()),
            StarSpec::RadialGrid { grid: desc, values } => {
                if desc != grid.descriptor() {
                    return Err(invalid(format!(
                        "radial grid body sampled on {desc:?} cannot be integrated on {:?}",
                        grid.descriptor()
                    )));
                }
                Ok(values.clone())
            }
        }
    }

    /// `|y| / rho(y / |y|)`, and 0 at the origin.
    pub fn minkowski_functional(&self, y: &[f64]) -> Result<f64> {
        let len = norm(y);
        if len == 0.0 {
            return Ok(0.0);
        }
        let u: Vec<f64> = y.iter().map(|c| c / len).collect();
        Ok(len / self.radial(&u)?)
    }

    /// `(1/n) * integral of rho^n`.
    pub fn volume(&self, grid: &SphereGrid) -> Result<f64> {
        let rho = self.tabulate(grid)?;
        let n = self.dim as i32;
        let mut k = 0;
        Ok(grid.integrate(|_| {
            let v = rho[k].powi(n);
            k += 1;
            v
        })? / self.dim as f64)
    }

    /// Lower and upper bounds on the radial function: exact for balls and
    /// ellipsoids, the sampled extremes otherwise.
    pub fn radial_bounds(&self) -> (f64, f64) {
        match &self.spec {
            StarSpec::Ball { radius } => (*radius, *radius),
            StarSpec::Ellipsoid { semi_axes, .. } => (semi_axes[0], semi_axes[self.dim - 1]),
            StarSpec::RadialGrid { values, .. } => values
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v))),
        }
    }
}

fn check_orthogonal(p: &[Vec<f64>], n: usize) -> Result<()> {
    if p.len() != n || p.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("rotation must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| p[k][i] * p[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            if (s - target).abs() > 1e-10 {
                return Err(invalid(format!(
                    "rotation is not orthogonal: (P^T P)[{i}][{j}] = {s}"
                )));
            }
        }
    }
    Ok(())
}

/// Radial function of a support-form polytope with its attaining facet.
/// Ties go to the smallest index; `None` when no normal faces `u`.
#[inline]
pub fn radial_min(normals: &[f64], h: &[f64], u: &[f64]) -> Option<(f64, usize)> {
    let n = u.len();
    let mut best = f64::INFINITY;
    let mut facet = usize::MAX;
    for (i, x) in normals.chunks_exact(n).enumerate() {
        let d = dot(u, x);
        if d > 0.0 {
            let r = h[i] / d;
            if r < best {
                best = r;
                facet = i;
            }
        }
    }
    (facet != usize::MAX).then_some((best, facet))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyPoint {
    pub direction: Vec<f64>,
    pub radius: f64,
    pub facet: usize,
}

#[derive(Clone, Debug)]
pub struct SupportPolytope {
    dim: usize,
    normals: Arc<Vec<f64>>,
    support: Vec<f64>,
    partner: Option<Arc<Vec<usize>>>,
}

/// Pairs each normal with its negation (exact up to 1e-12), if all have one.
fn antipodal_partners(normals: &[f64], n: usize) -> Option<Vec<usize>> {
    let count = normals.len() / n;
    let mut partner = vec![usize::MAX; count];
    for i in 0..count {
        if partner[i] != usize::MAX {
            continue;
        }
        let xi = &normals[i * n..(i + 1) * n];
        let j = (0..count).find(|&j| {
            j != i
                && partner[j] == usize::MAX
                && normals[j * n..(j + 1) * n]
                    .iter()
                    .zip(xi)
                    .all(|(a, b)| (a + b).abs() <= 1e-12)
        })?;
        partner[i] = j;
        partner[j] = i;
    }
    Some(partner)
}

impl SupportPolytope {
    /// Validated constructor: distinct normals, positive support numbers,
    /// and normals not contained in any closed hemisphere.
    pub fn new(normals: Vec<UnitVector>, support: Vec<f64>) -> Result<Self> {
        let n = normals.first().map(|x| x.dim()).ok_or_else(|| invalid("polytope needs normals"))?;
        if normals.iter().any(|x| x.dim() != n) {
            return Err(invalid("polytope normals have mixed dimensions"));
        }
        if support.len() != normals.len() {
            return Err(invalid(format!(
                "{} normals but {} support numbers",
                normals.len(),
                support.len()
            )));
        }
        if let Some(i) = support.iter().position(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(invalid(format!(
                "support number {i} must be positive, got {}",
                support[i]
            )));
        }
        check_distinct(&normals)?;
        match hemisphere_status(&normals) {
            HemisphereStatus::Free { .. } => {}
            HemisphereStatus::Concentrated { witness, .. } => {
                return Err(invalid(format!(
                    "normals lie in the closed hemisphere around {:?}; the polytope is unbounded",
                    &witness[..]
                )))
            }
            HemisphereStatus::Indeterminate { best, margin } => {
                return Err(invalid(format!(
                    "normals are on the hemisphere boundary near {:?} (margin {margin:e}); boundedness undecided",
                    &best[..]
                )))
            }
        }
        let flat: Vec<f64> = normals.iter().flat_map(|x| x.iter().copied()).collect();
        let partner = antipodal_partners(&flat, n).map(Arc::new);
        Ok(SupportPolytope {
            dim: n,
            normals: Arc::new(flat),
            support,
            partner,
        })
    }

    /// Same normals, new support numbers; skips validation of the normals.
    pub fn with_support(&self, support: Vec<f64>) -> Self {
        assert_eq!(support.len(), self.len());
        debug_assert!(support.iter().all(|h| *h > 0.0));
        SupportPolytope {
            dim: self.dim,
            normals: Arc::clone(&self.normals),
            support,
            partner: self.partner.clone(),
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        self.with_support(self.support.iter().map(|h| lambda * h).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normals_flat(&self) -> &[f64] {
        &self.normals
    }

    pub fn normals(&self) -> Vec<UnitVector> {
        self.normals
            .chunks_exact(self.dim)
            .map(|x| UnitVector::new(x.to_vec()).expect("stored normals are unit"))
            .collect()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Index of the normal opposite to each normal, when the normal set is symmetric.
    pub fn partners(&self) -> Option<&[usize]> {
        self.partner.as_deref().map(|p| p.as_slice())
    }

    /// Symmetric normals with equal support numbers on antipodal pairs.
    pub fn even(&self) -> bool {
        match self.partners() {
            Some(p) => p.iter().enumerate().all(|(i, &j)| {
                let (a, b) = (self.support[i], self.support[j]);
                (a - b).abs() <= 1e-12 * a.max(b)
            }),
            None => false,
        }
    }

    pub fn radial(&self, u: &[f64]) -> Result<BodyPoint> {
        if u.len() != self.dim {
            return Err(GdmpError::DimensionMismatch {
                expected: self.dim,
                found: u.len(),
            });
        }
        radial_min(&self.normals, &self.support, u)
            .map(|(radius, facet)| BodyPoint {
                direction: u.to_vec(),
                radius,
                facet,
            })
            .ok_or_else(|| GdmpError::Unbounded(u.to_vec()))
    }

    /// Radial values and attaining facets at every grid node.
    pub fn radial_on_grid(&self, grid: &SphereGrid) -> Result<(Vec<f64>, Vec<usize>)> {
        if grid.dim() != self.dim {
            return Err(GdmpError::DimensionMismatch {
                expected: self.dim,
                found: grid.dim(),
            });
        }
        let mut rho = Vec::with_capacity(grid.len());
        let mut facet = Vec::with_capacity(grid.len());
        for u in grid.nodes() {
            let (r, f) = radial_min(&self.normals, &self.support, u)
                .ok_or_else(|| GdmpError::Unbounded(u.to_vec()))?;
            rho.push(r);
            facet.push(f);
        }
        Ok((rho, facet))
    }

    /// Support function of the body at `x`: grid maximum of `rho(u) u . x`
    /// followed by golden-section refinement around the best node.
    pub fn support_of_wulff(&self, x: &[f64], grid: &SphereGrid) -> Result<f64> {
        let (rho, _) = self.radial_on_grid(grid)?;
        self.support_from_table(x, grid, &rho)
    }

    pub(crate) fn support_from_table(&self, x: &[f64], grid: &SphereGrid, rho: &[f64]) -> Result<f64> {
        let (best_k, best) = grid
            .nodes()
            .zip(rho)
            .map(|(u, r)| r * dot(u, x))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        let f = |u: &[f64]| {
            radial_min(&self.normals, &self.support, u).map_or(f64::NEG_INFINITY, |(r, _)| r * dot(u, x))
        };
        let radius = grid_spacing(grid);
        let (_, refined) = refine_max_on_sphere(f, grid.node(best_k), radius, 12);
        Ok(best.max(refined))
    }

    /// Whether facet `i` attains the radial minimum at some grid node.
    pub fn facet_active(&self, i: usize, grid: &SphereGrid) -> Result<bool> {
        let (_, facet) = self.radial_on_grid(grid)?;
        Ok(facet.contains(&i))
    }
}

fn check_distinct(normals: &[UnitVector]) -> Result<()> {
    for i in 0..normals.len() {
        for j in 0..i {
            let d: f64 = normals[i]
                .iter()
                .zip(normals[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= 1e-8 {
                return Err(invalid(format!("normals {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// Typical angular spacing of a grid's nodes.
pub(crate) fn grid_spacing(grid: &SphereGrid) -> f64 {
    let n = grid.dim() as f64;
    let cell = crate::sphere_quad::sphere_area(grid.dim()) / grid.len() as f64;
    2.0 * cell.powf(1.0 / (n - 1.0))
}

/// Local maximization of `f` on the sphere near `start`: repeated sweeps of
/// golden-section searches along great circles in a rotating set of tangent
/// directions, halving the search radius after each sweep.
pub(crate) fn refine_max_on_sphere<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    radius: f64,
    sweeps: usize,
) -> (Vec<f64>, f64) {
    const STEPS: usize = 32;
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let n = start.len();
    let mut u = start.to_vec();
    let mut best = f(&u);
    let mut delta = radius;
    let along = |u: &[f64], t: &[f64], theta: f64| -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        let v: Vec<f64> = u.iter().zip(t).map(|(a, b)| c * a + s * b).collect();
        let len = norm(&v);
        v.into_iter().map(|x| x / len).collect()
    };
    for sweep in 0..sweeps {
        for t in tangent_directions(&u, sweep) {
            let (mut a, mut b) = (-delta, delta);
            let mut c = b - invphi * (b - a);
            let mut d = a + invphi * (b - a);
            let mut fc = f(&along(&u, &t, c));
            let mut fd = f(&along(&u, &t, d));
            for _ in 0..STEPS {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - invphi * (b - a);
                    fc = f(&along(&u, &t, c));
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + invphi * (b - a);
                    fd = f(&along(&u, &t, d));
                }
            }
            let theta = 0.5 * (a + b);
            let cand = along(&u, &t, theta);
            let fv = f(&cand);
            if fv > best {
                best = fv;
                u = cand;
            }
        }
        if n == 2 {
            delta *= 0.5;
        } else {
            delta *= 0.7;
        }
    }
    (u, best)
}

/// Orthonormal tangent basis at `u` plus the diagonals of consecutive basis
/// pairs, rotated by a sweep-dependent angle so successive sweeps probe
/// different directions.
fn tangent_directions(u: &[f64], sweep: usize) -> Vec<Vec<f64>> {
    let n = u.len();
    let mut seeds: Vec<Vec<f64>> = vec![u.to_vec()];
    for i in 0..n {
        seeds.push(UnitVector::basis(n, i).into_inner());
    }
    let mut tangent: Vec<Vec<f64>> = crate::sphere_quad::orthonormal_span(&seeds, 1e-8)
        .into_iter()
        .skip(1)
        .collect();
    if tangent.len() < 2 {
        return tangent;
    }
    let (s, c) = (sweep as f64 * 0.618_033_988_749_895 * std::f64::consts::PI).sin_cos();
    for i in 0..tangent.len() - 1 {
        let (a, b) = (tangent[i].clone(), tangent[i + 1].clone());
        tangent[i] = a.iter().zip(&b).map(|(x, y)| c * x + s * y).collect();
        tangent[i + 1] = a.iter().zip(&b).map(|(x, y)| -s * x + c * y).collect();
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut dirs = tangent.clone();
    for w in tangent.windows(2) {
        dirs.push(w[0].iter().zip(&w[1]).map(|(x, y)| h * (x + y)).collect());
        dirs.push(w[0].iter().zip(&w[1]).map(|(x, y)| h * (x - y)).collect());
    }
    dirs
}

/// The cube `[-h, h]^n` with normals ordered `e1, -e1, e2, -e2, ...`.
pub fn cube(n: usize, h: f64) -> SupportPolytope {
    let mut normals = Vec::new();
    for i in 0..n {
        normals.push(UnitVector::basis(n, i));
        normals.push(UnitVector::basis(n, i).negated());
    }
    SupportPolytope::new(normals, vec![h; 2 * n]).expect("cube is a valid polytope")
}

/// Unit cube in R^3 with its eight corners cut by planes at distance `depth`
/// along the diagonals `(+-1, +-1, +-1)/sqrt 3`.
pub fn truncated_cube(depth: f64) -> SupportPolytope {
    let c = cube(3, 1.0);
    let mut normals = c.normals();
    let mut support = c.support().to_vec();
    for code in 0..8u32 {
        let v: Vec<f64> = (0..3).map(|i| if code >> i & 1 == 0 { 1.0 } else { -1.0 }).collect();
        normals.push(UnitVector::normalize(&v).expect("nonzero"));
        support.push(depth);
    }
    SupportPolytope::new(normals, support).expect("truncated cube is a valid polytope")
}

/// Polytope circumscribing the ball of radius `h`, with one facet per node
/// of a product grid of the given resolution.
pub fn grid_polytope(n: usize, resolution: usize, h: f64) -> Result<SupportPolytope> {
    let g = crate::sphere_quad::build_grid(n, resolution, crate::sphere_quad::GridKind::Product, None)?;
    let normals: Vec<UnitVector> = g.nodes().map(|u| UnitVector::normalize(u)).collect::<Result<_>>()?;
    let count = normals.len();
    SupportPolytope::new(normals, vec![h; count])
}

/// Polytope circumscribing the ball of radius `h` in R^3 whose `2 * pairs`
/// normals are a Fibonacci lattice on the upper hemisphere and its negation.
pub fn fibonacci_polytope(pairs: usize, h: f64) -> Result<SupportPolytope> {
    let golden = std::f64::consts::PI * (1.0 + 5f64.sqrt());
    let mut upper = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let t = i as f64 + 0.5;
        let z = 1.0 - t / pairs as f64;
        let r = (1.0 - z * z).sqrt();
        let (s, c) = (golden * t).sin_cos();
        upper.push(UnitVector::normalize(&[r * c, r * s, z])?);
    }
    let mut normals: Vec<UnitVector> = upper.iter().map(|u| u.negated()).collect();
    normals.splice(0..0, upper);
    SupportPolytope::new(normals, vec![h; 2 * pairs])
}
