mod common;

use std::sync::OnceLock;

use common::*;
use gdmp::bodies::StarBody;
use gdmp::dual_measures::{dual_curvature_measure, dual_mixed_volume, DiscreteMeasure};
use gdmp::io::{self, MeasureDoc, PolytopeDoc};
use gdmp::measure_checks::subspace_mass_sup;
use gdmp::solver::objective_J;
use gdmp::sphere_quad::{build_grid, orthonormal_span, GridKind, SphereGrid, UnitVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid3() -> &'static SphereGrid {
    static G: OnceLock<SphereGrid> = OnceLock::new();
    G.get_or_init(|| build_grid(3, 32, GridKind::Cubed, None).unwrap())
}

fn star(rng: &mut ChaCha8Rng) -> StarBody {
    let mut axes: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..3.0)).collect();
    axes.sort_by(f64::total_cmp);
    StarBody::ellipsoid(axes, None).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, count: usize) -> DiscreteMeasure {
    let atoms: Vec<UnitVector> = (0..count).map(|_| random_unit(rng, n)).collect();
    let weights = (0..count).map(|_| rng.random_range(1e-3..10.0)).collect();
    DiscreteMeasure::new(atoms, weights).unwrap()
}

fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    loop {
        let vs: Vec<UnitVector> = (0..n).map(|_| random_unit(rng, n)).collect();
        let basis = orthonormal_span(&vs, 1e-6);
        if basis.len() == n {
            return basis;
        }
    }
}

fn rotate(r: &[Vec<f64>], u: &[f64]) -> UnitVector {
    let v: Vec<f64> = r.iter().map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum()).collect();
    UnitVector::normalize(&v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn measure_documents_round_trip(seed in any::<u64>(), n in 2usize..5, count in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_measure(&mut rng, n, count);
        let doc = MeasureDoc::from_measure(&mu);
        let bytes = io::pretty_bytes(&doc).unwrap();
        let back: MeasureDoc = io::parse_document(std::str::from_utf8(&bytes).unwrap(), "measure").unwrap();
        let again = MeasureDoc::from_measure(&back.into_measure().unwrap());
        prop_assert_eq!(io::pretty_bytes(&again).unwrap(), bytes);
        prop_assert_eq!(io::digest(&again).unwrap(), io::digest(&doc).unwrap());
    }

    #[test]
    fn polytope_documents_round_trip(seed in any::<u64>(), n in 2usize..5, extra in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_polytope(&mut rng, n, extra, seed % 2 == 0);
        let doc = PolytopeDoc::from_polytope(&k);
        let text = String::from_utf8(io::pretty_bytes(&doc).unwrap()).unwrap();
        let back = io::parse_document::<PolytopeDoc>(&text, "polytope").unwrap().into_polytope().unwrap();
        prop_assert_eq!(back.support(), k.support());
        prop_assert_eq!(back.normals_flat(), k.normals_flat());
    }

    #[test]
    fn dual_volume_scales_as_lambda_to_q(seed in any::<u64>(), lambda in 0.1f64..10.0, q in -3.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_polytope(&mut rng, 3, 4, false);
        let qb = star(&mut rng);
        let v = dual_mixed_volume(&k, &qb, q, grid3()).unwrap().value;
        let vl = dual_mixed_volume(&k.scaled(lambda), &qb, q, grid3()).unwrap().value;
        prop_assert!(rel(vl, lambda.powf(q) * v) <= 1e-10);
    }

    #[test]
    fn curvature_atoms_partition_the_dual_volume(seed in any::<u64>(), q in -3.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_polytope(&mut rng, 3, 6, seed % 2 == 0);
        let qb = star(&mut rng);
        let v = dual_mixed_volume(&k, &qb, q, grid3()).unwrap().value;
        let mu = dual_curvature_measure(&k, &qb, q, grid3()).unwrap();
        prop_assert!(rel(mu.total(), v) <= 1e-10);
        prop_assert!(mu.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn objective_is_scale_invariant(seed in any::<u64>(), lambda in 0.1f64..10.0, q in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_polytope(&mut rng, 3, 3, false);
        let qb = star(&mut rng);
        let q = if seed % 2 == 0 { -q } else { q };
        let mu = DiscreteMeasure::new(k.normals(), (0..k.len()).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let j = objective_J(k.support(), &mu, &qb, q, grid3()).unwrap();
        let jl = objective_J(k.scaled(lambda).support(), &mu, &qb, q, grid3()).unwrap();
        prop_assert!((j - jl).abs() <= 1e-10 * j.abs().max(1.0));
    }

    #[test]
    fn dual_volume_is_monotone_in_support(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_polytope(&mut rng, 3, 4, false);
        let qb = star(&mut rng);
        let bigger = k.with_support(k.support().iter().map(|h| h + rng.random_range(0.0..0.5)).collect());
        for (q, grows) in [(2.0, true), (0.5, true), (-1.0, false)] {
            let a = dual_mixed_volume(&k, &qb, q, grid3()).unwrap().value;
            let b = dual_mixed_volume(&bigger, &qb, q, grid3()).unwrap().value;
            let ordered = if grows { a <= b } else { a >= b };
            prop_assert!(ordered, "q = {}: {} vs {}", q, a, b);
        }
    }

    #[test]
    fn subspace_mass_is_rotation_invariant(seed in any::<u64>(), n in 3usize..5, count in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = random_measure(&mut rng, n, count);
        let r = random_rotation(&mut rng, n);
        let turned = DiscreteMeasure::new(
            mu.atoms().iter().map(|a| rotate(&r, a)).collect(),
            mu.weights().to_vec(),
        ).unwrap();
        let mut last = 0.0;
        for i in 1..n {
            let a = subspace_mass_sup(&mu, i, u128::MAX).unwrap();
            let b = subspace_mass_sup(&turned, i, u128::MAX).unwrap();
            prop_assert!((a.fraction - b.fraction).abs() <= 1e-9);
            prop_assert!(a.fraction > 0.0 && a.fraction <= 1.0);
            prop_assert!(a.fraction >= last);
            last = a.fraction;
        }
    }
}
