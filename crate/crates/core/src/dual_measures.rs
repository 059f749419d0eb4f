//! Dual mixed volume, dual mixed entropy and the generalized dual
//! curvature measure of a support-form polytope.
//!
//! All three are quadratures over one grid. The curvature measure regroups
//! the dual-volume sum by the facet that attains each node's radial minimum,
//! so its total mass is the dual volume up to summation order.

use serde::{Deserialize, Serialize};

use crate::bodies::{StarBody, SupportPolytope};
use crate::error::{invalid, GdmpError, Result};
use crate::sphere_quad::{GridDescriptor, NeumaierSum, SphereGrid, UnitVector};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<UnitVector>,
    weights: Vec<f64>,
    partner: Option<Vec<usize>>,
}

impl DiscreteMeasure {
    /// Atoms must be distinct unit vectors of one dimension; weights positive.
    pub fn new(atoms: Vec<UnitVector>, weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid(format!(
                "weight {i} must be finite and positive, got {}",
                weights[i]
            )));
        }
        Self::with_zero_weights(atoms, weights)
    }

    /// As [`DiscreteMeasure::new`] but admits zero weights (inactive facets of
    /// a computed curvature measure).
    pub fn with_zero_weights(atoms: Vec<UnitVector>, weights: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map(|a| a.dim()).ok_or_else(|| invalid("measure has no atoms"))?;
        if atoms.iter().any(|a| a.dim() != dim) {
            return Err(invalid("measure atoms have mixed dimensions"));
        }
        if atoms.len() != weights.len() {
            return Err(invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("weight {i} is negative or non-finite")));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(invalid("measure has zero total mass"));
        }
        for i in 0..atoms.len() {
            for j in 0..i {
                let d: f64 = atoms[i]
                    .iter()
                    .zip(atoms[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d <= 1e-8 {
                    return Err(invalid(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        let partner = antipodal_pairs(&atoms);
        Ok(DiscreteMeasure {
            dim,
            atoms,
            weights,
            partner,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[UnitVector] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for &w in &self.weights {
            acc.add(w);
        }
        acc.value()
    }

    /// Index of each atom's negation, when every atom has one.
    pub fn partners(&self) -> Option<&[usize]> {
        self.partner.as_deref()
    }

    /// Antipodally paired atoms with weights equal within `tol` (relative).
    pub fn is_even(&self, tol: f64) -> bool {
        match &self.partner {
            Some(p) => p.iter().enumerate().all(|(i, &j)| {
                let (a, b) = (self.weights[i], self.weights[j]);
                (a - b).abs() <= tol * a.max(b)
            }),
            None => false,
        }
    }

    pub fn even(&self) -> bool {
        self.is_even(1e-12)
    }

    /// Indices of atoms carrying no mass.
    pub fn zero_atoms(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] == 0.0).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DiscreteMeasure {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    /// Same atoms, new weights (not revalidated beyond length and sign).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(invalid("weight count does not match atom count"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        Ok(DiscreteMeasure {
            weights,
            ..self.clone()
        })
    }

    /// Uniform weights on the given atoms, summing to `total`.
    pub fn uniform(atoms: Vec<UnitVector>, total: f64) -> Result<Self> {
        let w = total / atoms.len() as f64;
        let count = atoms.len();
        Self::new(atoms, vec![w; count])
    }
}

fn antipodal_pairs(atoms: &[UnitVector]) -> Option<Vec<usize>> {
    let count = atoms.len();
    let mut partner = vec![usize::MAX; count];
    for i in 0..count {
        if partner[i] != usize::MAX {
            continue;
        }
        let j = (0..count).find(|&j| {
            j != i
                && partner[j] == usize::MAX
                && atoms[j].iter().zip(atoms[i].iter()).all(|(a, b)| (a + b).abs() <= 1e-12)
        })?;
        partner[i] = j;
        partner[j] = i;
    }
    Some(partner)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVolumeValue {
    pub value: f64,
    pub q: f64,
    pub grid: GridDescriptor,
}

fn check_dims(k: &SupportPolytope, q_body: &StarBody, grid: &SphereGrid) -> Result<()> {
    for found in [q_body.dim(), grid.dim()] {
        if found != k.dim() {
            return Err(GdmpError::DimensionMismatch {
                expected: k.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Per-node factors `w_k * rho_Q(u_k)^(n-q) / n`; the dual-volume integrand
/// at node k is this factor times `rho_K(u_k)^q`.
pub(crate) fn node_factors(q_body: &StarBody, q: f64, grid: &SphereGrid) -> Result<Vec<f64>> {
    let n = grid.dim() as f64;
    let rho_q = q_body.tabulate(grid)?;
    let factors: Vec<f64> = grid
        .weights()
        .iter()
        .zip(&rho_q)
        .map(|(w, r)| w * r.powf(n - q) / n)
        .collect();
    if let Some(k) = factors.iter().position(|f| !f.is_finite()) {
        return Err(GdmpError::NonFinite {
            node: k,
            direction: grid.node(k).to_vec(),
            value: factors[k],
        });
    }
    Ok(factors)
}

pub(crate) fn nonfinite(grid: &SphereGrid, k: usize, value: f64) -> GdmpError {
    GdmpError::NonFinite {
        node: k,
        direction: grid.node(k).to_vec(),
        value,
    }
}

/// `(1/n) * integral of rho_K^q rho_Q^(n-q)`.
pub fn dual_mixed_volume(
    k: &SupportPolytope,
    q_body: &StarBody,
    q: f64,
    grid: &SphereGrid,
) -> Result<DualVolumeValue> {
    check_dims(k, q_body, grid)?;
    let factors = node_factors(q_body, q, grid)?;
    let (rho, _) = k.radial_on_grid(grid)?;
    let mut acc = NeumaierSum::default();
    for (idx, (f, r)) in factors.iter().zip(&rho).enumerate() {
        let v = f * r.powf(q);
        if !v.is_finite() {
            return Err(nonfinite(grid, idx, v));
        }
        acc.add(v);
    }
    Ok(DualVolumeValue {
        value: acc.value(),
        q,
        grid: grid.descriptor().clone(),
    })
}

/// `(1/n) * integral of log(rho_K / rho_Q) rho_Q^n`.
pub fn dual_entropy(k: &SupportPolytope, q_body: &StarBody, grid: &SphereGrid) -> Result<f64> {
    check_dims(k, q_body, grid)?;
    let factors = node_factors(q_body, 0.0, grid)?;
    let rho_q = q_body.tabulate(grid)?;
    let (rho, _) = k.radial_on_grid(grid)?;
    let mut acc = NeumaierSum::default();
    for idx in 0..grid.len() {
        let v = factors[idx] * (rho[idx].ln() - rho_q[idx].ln());
        if !v.is_finite() {
            return Err(nonfinite(grid, idx, v));
        }
        acc.add(v);
    }
    Ok(acc.value())
}

/// The curvature measure on K's normals: atom i collects the dual-volume
/// integrand over the nodes whose radial minimum is attained by facet i.
/// Facets attaining no node keep their atom with weight 0.
pub fn dual_curvature_measure(
    k: &SupportPolytope,
    q_body: &StarBody,
    q: f64,
    grid: &SphereGrid,
) -> Result<DiscreteMeasure> {
    check_dims(k, q_body, grid)?;
    let factors = node_factors(q_body, q, grid)?;
    let (rho, facet) = k.radial_on_grid(grid)?;
    let mut bins = vec![NeumaierSum::default(); k.len()];
    for idx in 0..grid.len() {
        let v = factors[idx] * rho[idx].powf(q);
        if !v.is_finite() {
            return Err(nonfinite(grid, idx, v));
        }
        bins[facet[idx]].add(v);
    }
    DiscreteMeasure::with_zero_weights(k.normals(), bins.iter().map(|b| b.value()).collect())
}

/// Atom-matched L1 distance. Atoms closer than `tol` (Euclidean, which is the
/// angle to first order) are matched; unmatched atoms count in full.
pub fn total_variation_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tol: f64,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(GdmpError::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let close = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() <= tol
    };
    let mut used = vec![false; nu.len()];
    let mut acc = NeumaierSum::default();
    for (i, a) in mu.atoms().iter().enumerate() {
        let mut hits = nu
            .atoms()
            .iter()
            .enumerate()
            .filter(|(_, b)| close(a, b))
            .map(|(j, _)| j);
        match (hits.next(), hits.next()) {
            (Some(_), Some(_)) => {
                return Err(GdmpError::AmbiguousMatch(format!(
                    "atom {i} of the first measure is within {tol:e} of several atoms"
                )))
            }
            (Some(j), None) => {
                if used[j] {
                    return Err(GdmpError::AmbiguousMatch(format!(
                        "atom {j} of the second measure matches several atoms"
                    )));
                }
                used[j] = true;
                acc.add((mu.weights()[i] - nu.weights()[j]).abs());
            }
            (None, _) => acc.add(mu.weights()[i]),
        }
    }
    for (j, w) in nu.weights().iter().enumerate() {
        if !used[j] {
            acc.add(*w);
        }
    }
    Ok(acc.value())
}
