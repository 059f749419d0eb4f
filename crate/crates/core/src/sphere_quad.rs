//! Deterministic quadrature on the unit sphere S^{n-1}.
//!
//! Product grids are midpoint tensor grids in hyperspherical coordinates
//! (`x1 = cos t1`, ..., `x_{n-1} = s cos phi`, `x_n = s sin phi`) whose
//! weights are the exact cell areas. The coordinate tables are built
//! mirror-symmetrically, so every coordinate sign flip (and the antipodal
//! map) permutes nodes exactly and preserves weights bit for bit.
//!
//! Cubed grids project a midpoint grid on each face of the cube [-1,1]^n
//! onto the sphere. They are invariant under every signed coordinate
//! permutation, which product grids (with their distinguished polar axis)
//! are not.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{invalid, GdmpError, Result};

/// Tolerance on |u| - 1 for anything claiming to be a unit vector.
pub const NORM_TOL: f64 = 1e-12;
/// Relative accuracy targeted by default grid resolutions.
pub const QUAD_REL_TOL: f64 = 1e-3;
pub const MAX_DIM: usize = 8;
/// Upper bound on `resolution^(n-1)` accepted by [`build_grid`].
pub const MAX_NODES: f64 = 3.2e7;

/// Surface area of S^{n-1} in R^n.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(n - 2) / (n - 2) as f64,
    }
}

/// Volume of the unit ball in R^n.
pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Integral over the open hemisphere `{u1 > 0}` of `u1^p`, for `p > -1`.
pub fn hemisphere_power_integral(n: usize, p: f64) -> f64 {
    if n == 1 {
        return 1.0;
    }
    // area(S^{n-2}) * int_0^1 t^p (1 - t^2)^((n-3)/2) dt
    sphere_area(n - 1) * 0.5 * beta((p + 1.0) / 2.0, (n as f64 - 1.0) / 2.0)
}

/// Integral over S^{n-1} of `-log|u1|`.
pub fn log_abs_coordinate_integral(n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    // int_{-1}^{1} -log|t| (1 - t^2)^a dt = (1/2) B(1/2, a+1) (psi(a + 3/2) - psi(1/2))
    let a = (n as f64 - 3.0) / 2.0;
    let one_dim = 0.5 * beta(0.5, a + 1.0) * (digamma(a + 1.5) - digamma(0.5));
    sphere_area(n - 1) * one_dim
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid(format!("not a finite vector: {coords:?}")));
        }
        let norm = norm(&coords);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!(
                "vector {coords:?} has norm {norm}, expected 1 within {NORM_TOL:e}"
            )));
        }
        Ok(UnitVector(coords))
    }

    pub fn normalize(coords: &[f64]) -> Result<Self> {
        let len = norm(coords);
        if !(len.is_finite() && len > 0.0) {
            return Err(invalid(format!("cannot normalize {coords:?}")));
        }
        Ok(UnitVector(coords.iter().map(|c| c / len).collect()))
    }

    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Self {
        UnitVector(self.0.iter().map(|c| -c).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for UnitVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = GdmpError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Vec<f64> {
        u.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Product,
    MonteCarlo,
    Cubed,
}

impl FromStr for GridKind {
    type Err = GdmpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(GridKind::Product),
            "monte_carlo" | "monte-carlo" => Ok(GridKind::MonteCarlo),
            "cubed" => Ok(GridKind::Cubed),
            other => Err(invalid(format!(
                "unknown grid kind '{other}' (expected product, monte_carlo or cubed)"
            ))),
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridKind::Product => "product",
            GridKind::MonteCarlo => "monte_carlo",
            GridKind::Cubed => "cubed",
        })
    }
}

/// Everything needed to regenerate a grid; nodes are never serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub dim: usize,
    pub kind: GridKind,
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GridDescriptor {
    pub fn build(&self) -> Result<SphereGrid> {
        build_grid(self.dim, self.resolution, self.kind, self.seed)
    }
}

/// Default grid for a dimension: product grids up to n = 4, Monte Carlo above.
pub fn default_descriptor(n: usize) -> GridDescriptor {
    let (kind, resolution, seed) = match n {
        2 => (GridKind::Product, 720, None),
        3 => (GridKind::Product, 192, None),
        4 => (GridKind::Product, 40, None),
        _ => (GridKind::MonteCarlo, 12, Some(0)),
    };
    GridDescriptor {
        dim: n,
        kind,
        resolution,
        seed,
    }
}

#[derive(Clone, Debug)]
pub struct SphereGrid {
    descriptor: GridDescriptor,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    antipode: Vec<usize>,
}

/// Builds a symmetric grid on S^{n-1}.
///
/// Product grids round `resolution` up to a multiple of 4 azimuthal cells and
/// use half as many cells for each polar angle, giving `R * (R/2)^(n-2)` nodes.
/// Monte Carlo grids draw `resolution^(n-1) / 2` antithetic pairs.
/// Cubed grids use `m = ceil(resolution / 4)` cells per face edge, giving
/// `2n * m^(n-1)` nodes (the equator carries `4m` nodes, as on a product grid
/// of the same resolution).
pub fn build_grid(
    n: usize,
    resolution: usize,
    kind: GridKind,
    seed: Option<u64>,
) -> Result<SphereGrid> {
    if !(2..=MAX_DIM).contains(&n) {
        return Err(invalid(format!(
            "grid dimension must be in 2..={MAX_DIM}, got {n}"
        )));
    }
    if resolution < 4 {
        return Err(invalid(format!(
            "grid resolution must be at least 4, got {resolution}"
        )));
    }
    // every kind has on the order of resolution^(n-1) nodes
    if (resolution as f64).powi(n as i32 - 1) > MAX_NODES {
        return Err(invalid(format!(
            "grid resolution {resolution} gives more than {MAX_NODES:e} nodes in dimension {n}"
        )));
    }
    let descriptor = GridDescriptor {
        dim: n,
        kind,
        resolution,
        seed,
    };
    match kind {
        GridKind::Product => Ok(product_grid(descriptor)),
        GridKind::Cubed => Ok(cubed_grid(descriptor)),
        GridKind::MonteCarlo => {
            let seed = seed.ok_or_else(|| invalid("monte_carlo grids require a seed"))?;
            Ok(monte_carlo_grid(descriptor, seed))
        }
    }
}

/// Integral of sin^p over [a, b] by the standard reduction formula.
fn sin_power_integral(p: usize, a: f64, b: f64) -> f64 {
    let mut even = b - a;
    let mut odd = a.cos() - b.cos();
    if p == 0 {
        return even;
    }
    if p == 1 {
        return odd;
    }
    let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
    let mut k = 2;
    while k <= p {
        let kf = k as f64;
        let bracket = sb.powi(k as i32 - 1) * cb - sa.powi(k as i32 - 1) * ca;
        let next = -bracket / kf + (kf - 1.0) / kf * if k % 2 == 0 { even } else { odd };
        if k % 2 == 0 {
            even = next;
        } else {
            odd = next;
        }
        k += 1;
    }
    if p % 2 == 0 {
        even
    } else {
        odd
    }
}

fn product_grid(descriptor: GridDescriptor) -> SphereGrid {
    let n = descriptor.dim;
    let r = descriptor.resolution.div_ceil(4) * 4;
    let m = r / 2;
    let quarter = r / 4;

    let dphi = 2.0 * PI / r as f64;
    let mut cphi = vec![0.0; r];
    let mut sphi = vec![0.0; r];
    for k in 0..r / 2 {
        if k < quarter {
            let phi = (k as f64 + 0.5) * dphi;
            cphi[k] = phi.cos();
            sphi[k] = phi.sin();
        } else {
            let mirror = r / 2 - 1 - k;
            cphi[k] = -cphi[mirror];
            sphi[k] = sphi[mirror];
        }
    }
    for k in r / 2..r {
        cphi[k] = -cphi[k - r / 2];
        sphi[k] = -sphi[k - r / 2];
    }

    let dtheta = PI / m as f64;
    let mut ctheta = vec![0.0; m];
    let mut stheta = vec![0.0; m];
    // cell[p][j] = integral of sin^p over polar cell j
    let mut cell = vec![vec![0.0; m]; n.saturating_sub(1)];
    for j in 0..m {
        if j < m / 2 {
            let t = (j as f64 + 0.5) * dtheta;
            ctheta[j] = t.cos();
            stheta[j] = t.sin();
            let (a, b) = (j as f64 * dtheta, (j + 1) as f64 * dtheta);
            for (p, row) in cell.iter_mut().enumerate() {
                row[j] = sin_power_integral(p, a, b);
            }
        } else {
            let mirror = m - 1 - j;
            ctheta[j] = -ctheta[mirror];
            stheta[j] = stheta[mirror];
            for row in cell.iter_mut() {
                row[j] = row[mirror];
            }
        }
    }

    let polar = n - 2;
    let count = r * m.pow(polar as u32);
    let mut nodes = Vec::with_capacity(count * n);
    let mut weights = Vec::with_capacity(count);
    let mut antipode = Vec::with_capacity(count);
    let mut idx = vec![0usize; polar];
    for _ in 0..m.pow(polar as u32) {
        let mut prefix = 1.0;
        let mut w = dphi;
        let mut anti_base = 0usize;
        let mut coords = Vec::with_capacity(n);
        for (p, &j) in idx.iter().enumerate() {
            coords.push(prefix * ctheta[j]);
            prefix *= stheta[j];
            w *= cell[n - 2 - p][j];
            anti_base = anti_base * m + (m - 1 - j);
        }
        for k in 0..r {
            nodes.extend_from_slice(&coords);
            nodes.push(prefix * cphi[k]);
            nodes.push(prefix * sphi[k]);
            weights.push(w);
            antipode.push(anti_base * r + (k + r / 2) % r);
        }
        for p in (0..polar).rev() {
            idx[p] += 1;
            if idx[p] < m {
                break;
            }
            idx[p] = 0;
        }
    }
    SphereGrid {
        descriptor,
        nodes,
        weights,
        antipode,
    }
}

/// Solid angle of the projection of the face cell `[x1,x2] x [y1,y2]` (n = 3).
fn face_cell_solid_angle(x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
    let f = |x: f64, y: f64| (x * y / (1.0 + x * x + y * y).sqrt()).atan();
    f(x2, y2) - f(x1, y2) - f(x2, y1) + f(x1, y1)
}

/// Weight of a face cell given its canonical (folded, sorted) indices.
fn cubed_cell_weight(canon: &[usize], edges: &[f64]) -> f64 {
    let m = edges.len() - 1;
    // a folded index j stands for its mirror cell m-1-j on the positive side
    let span = |j: usize| (edges[m - 1 - j], edges[m - j]);
    match canon.len() {
        1 => {
            let (a, b) = span(canon[0]);
            b.atan() - a.atan()
        }
        2 => {
            let (a, b) = span(canon[0]);
            let (c, d) = span(canon[1]);
            face_cell_solid_angle(a, b, c, d)
        }
        k => {
            // 3-point Gauss-Legendre per axis for the Jacobian (1+|t|^2)^(-n/2)
            let gx = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
            let gw = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
            let n = k + 1;
            let spans: Vec<(f64, f64)> = canon.iter().map(|&j| span(j)).collect();
            let mut acc = NeumaierSum::default();
            let mut idx = vec![0usize; k];
            loop {
                let mut r2 = 1.0;
                let mut w = 1.0;
                for (&i, &(lo, hi)) in idx.iter().zip(&spans) {
                    let half = 0.5 * (hi - lo);
                    let t = 0.5 * (hi + lo) + half * gx[i];
                    r2 += t * t;
                    w *= half * gw[i];
                }
                acc.add(w * r2.powf(-(n as f64) / 2.0));
                let mut p = 0;
                while p < k {
                    idx[p] += 1;
                    if idx[p] < 3 {
                        break;
                    }
                    idx[p] = 0;
                    p += 1;
                }
                if p == k {
                    break;
                }
            }
            acc.value()
        }
    }
}

fn cubed_grid(descriptor: GridDescriptor) -> SphereGrid {
    let n = descriptor.dim;
    let m = descriptor.resolution.div_ceil(4);
    let k = n - 1;
    let h = 2.0 / m as f64;
    // mirrored edge and center tables: edges[m - i] = -edges[i]
    let mut edges = vec![0.0; m + 1];
    let mut centers = vec![0.0; m];
    for i in 0..=m / 2 {
        edges[i] = -1.0 + i as f64 * h;
        edges[m - i] = -edges[i];
    }
    if m % 2 == 0 {
        edges[m / 2] = 0.0;
    }
    for j in 0..m.div_ceil(2) {
        centers[j] = -1.0 + (j as f64 + 0.5) * h;
        centers[m - 1 - j] = -centers[j];
    }
    if m % 2 == 1 {
        centers[m / 2] = 0.0;
    }
    let per_face = m.pow(k as u32);
    let count = 2 * n * per_face;
    let mut nodes = Vec::with_capacity(count * n);
    let mut weights = Vec::with_capacity(count);
    let mut antipode = Vec::with_capacity(count);
    let mut cache = std::collections::HashMap::new();
    for face in 0..2 * n {
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let mut idx = vec![0usize; k];
        for _ in 0..per_face {
            // canonical form: folded to the positive half, sorted
            let mut canon: Vec<usize> = idx.iter().map(|&j| j.min(m - 1 - j)).collect();
            canon.sort_unstable();
            let w = *cache
                .entry(canon.clone())
                .or_insert_with(|| cubed_cell_weight(&canon, &edges));
            // |v|^2 summed in canonical order so permuted nodes agree bitwise
            let mut r2 = 1.0;
            for &j in canon.iter().rev() {
                let t = centers[m - 1 - j];
                r2 += t * t;
            }
            let inv = 1.0 / r2.sqrt();
            let mut it = idx.iter();
            for c in 0..n {
                if c == axis {
                    nodes.push(sign * inv);
                } else {
                    nodes.push(centers[*it.next().expect("face index")] * inv);
                }
            }
            weights.push(w);
            let mut anti = 0usize;
            for &j in &idx {
                anti = anti * m + (m - 1 - j);
            }
            antipode.push((face ^ 1) * per_face + anti);
            for p in (0..k).rev() {
                idx[p] += 1;
                if idx[p] < m {
                    break;
                }
                idx[p] = 0;
            }
        }
    }
    SphereGrid {
        descriptor,
        nodes,
        weights,
        antipode,
    }
}

fn monte_carlo_grid(descriptor: GridDescriptor, seed: u64) -> SphereGrid {
    let n = descriptor.dim;
    let pairs = (descriptor.resolution.pow(n as u32 - 1) / 2).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(2 * pairs * n);
    let mut v = vec![0.0; n];
    for _ in 0..pairs {
        let len = loop {
            for c in v.iter_mut() {
                *c = StandardNormal.sample(&mut rng);
            }
            let len = norm(&v);
            if len > 1e-8 {
                break len;
            }
        };
        nodes.extend(v.iter().map(|c| c / len));
        nodes.extend(v.iter().map(|c| -c / len));
    }
    let count = 2 * pairs;
    let w = sphere_area(n) / count as f64;
    SphereGrid {
        descriptor,
        nodes,
        weights: vec![w; count],
        antipode: (0..count).map(|k| k ^ 1).collect(),
    }
}

impl SphereGrid {
    pub fn descriptor(&self) -> &GridDescriptor {
        &self.descriptor
    }

    pub fn dim(&self) -> usize {
        self.descriptor.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let n = self.dim();
        &self.nodes[k * n..(k + 1) * n]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the node at -u.
    pub fn antipode(&self, k: usize) -> usize {
        self.antipode[k]
    }

    /// Grids built here are always closed under negation with equal weights.
    pub fn symmetric(&self) -> bool {
        true
    }

    pub fn weight_sum(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for &w in &self.weights {
            acc.add(w);
        }
        acc.value()
    }

    /// Index of the node equal to `u` (within 1e-12), if any.
    pub fn locate(&self, u: &[f64]) -> Option<usize> {
        if u.len() != self.dim() {
            return None;
        }
        self.nodes()
            .position(|x| x.iter().zip(u).all(|(a, b)| (a - b).abs() <= 1e-12))
    }

    /// Sum of `weight_k * f(node_k)` in node order with compensation.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = NeumaierSum::default();
        for (k, (u, &w)) in self.nodes().zip(&self.weights).enumerate() {
            let v = f(u);
            if !v.is_finite() {
                return Err(GdmpError::NonFinite {
                    node: k,
                    direction: u.to_vec(),
                    value: v,
                });
            }
            acc.add(w * v);
        }
        Ok(acc.value())
    }

    /// `integrate` for integrand values already tabulated per node.
    pub fn integrate_values(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(invalid(format!(
                "expected {} node values, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut k = 0;
        self.integrate(|_| {
            let v = values[k];
            k += 1;
            v
        })
    }

    /// Checks the structural invariants, naming the first one that fails.
    pub fn check_invariants(&self, rel_tol: f64) -> std::result::Result<(), String> {
        for (k, u) in self.nodes().enumerate() {
            if (norm(u) - 1.0).abs() > NORM_TOL {
                return Err(format!("node-norm invariant violated at node {k}"));
            }
        }
        if let Some(k) = self.weights.iter().position(|w| !(*w > 0.0)) {
            return Err(format!("weight-positivity invariant violated at node {k}"));
        }
        let area = sphere_area(self.dim());
        let sum = self.weight_sum();
        if ((sum - area) / area).abs() > rel_tol {
            return Err(format!(
                "weight-sum invariant violated: sum {sum} vs area {area}"
            ));
        }
        for k in 0..self.len() {
            let a = self.antipode[k];
            let paired = self
                .node(k)
                .iter()
                .zip(self.node(a))
                .all(|(x, y)| *x == -*y);
            if !paired || self.weights[a] != self.weights[k] {
                return Err(format!("antipodal-symmetry invariant violated at node {k}"));
            }
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn scale_weights_for_fault_injection(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
    }
}

/// Orthonormal basis of the span of `vectors`, by Gram-Schmidt that always
/// takes the remaining vector with the largest residual; residuals at or
/// below `tol` are treated as dependent.
pub fn orthonormal_span<V: AsRef<[f64]>>(vectors: &[V], tol: f64) -> Vec<Vec<f64>> {
    let mut residual: Vec<Vec<f64>> = vectors.iter().map(|v| v.as_ref().to_vec()).collect();
    let dim = residual.first().map_or(0, |v| v.len());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < dim {
        let Some((pivot, len)) = residual
            .iter()
            .map(|r| norm(r))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if len <= tol {
            break;
        }
        let q: Vec<f64> = residual[pivot].iter().map(|c| c / len).collect();
        for r in residual.iter_mut() {
            let c = dot(r, &q);
            for (ri, qi) in r.iter_mut().zip(&q) {
                *ri -= c * qi;
            }
        }
        basis.push(q);
    }
    basis
}

pub fn rank_of_atoms<V: AsRef<[f64]>>(vectors: &[V], tol: f64) -> usize {
    orthonormal_span(vectors, tol).len()
}

/// Euclidean distance from `v` to the span of an orthonormal `basis`.
pub fn distance_to_span(v: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r = v.to_vec();
    for q in basis {
        let c = dot(&r, q);
        for (ri, qi) in r.iter_mut().zip(q) {
            *ri -= c * qi;
        }
    }
    norm(&r)
}
