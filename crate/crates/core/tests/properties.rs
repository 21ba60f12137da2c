//! Randomized invariants over small generated measures.

use std::collections::BTreeSet;

use lpnd_core::aoi::s_identities;
use lpnd_core::czo::{paraproduct, paraproduct_checks, t1_battery_on, CZKernel, KernelKind, T1Params};
use lpnd_core::geometry::delta;
use lpnd_core::lattice::{verify_generation_invariants, EntryClass};
use lpnd_core::linalg::action_norm;
use lpnd_core::lp::{
    build_decomposition, carleson_check, cube_battery, lp_identities, maximal_ops, paraproduct_densities,
    random_band_family, rbmo_norm,
};
use lpnd_core::measure::{growth_constant, is_doubling};
use lpnd_core::pipeline::{measure_inputs, tune, Tuned, TuningConfig};
use lpnd_core::{Cube, DiscreteMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distinct grid points in `[0,1]^dim` with positive weights.
fn measure_strategy(dim: usize, min: usize, max: usize) -> impl Strategy<Value = DiscreteMeasure> {
    let grid = 64u32;
    (
        prop::collection::btree_set(prop::collection::vec(0..grid, dim), min..max),
        prop::collection::vec(0.2f64..2.0, max),
        prop::bool::ANY,
    )
        .prop_map(move |(pts, ws, full_n): (BTreeSet<Vec<u32>>, Vec<f64>, bool)| {
            let points: Vec<Vec<f64>> = pts
                .into_iter()
                .map(|p| p.into_iter().map(|c| c as f64 / grid as f64).collect())
                .collect();
            let weights = ws[..points.len()].iter().map(|w| w / points.len() as f64).collect();
            let n = if full_n { dim as f64 } else { 1.0 };
            DiscreteMeasure::new(dim, n, points, weights, None, "random").unwrap()
        })
}

fn any_measure(min: usize, max: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop_oneof![measure_strategy(1, min, max), measure_strategy(2, min, max)]
}

fn pipeline(mu: &DiscreteMeasure) -> Tuned {
    let cfg = TuningConfig {
        max_rounds: 2,
        ..TuningConfig::default()
    };
    let inputs = measure_inputs(mu, &cfg).unwrap();
    tune(mu, &inputs, &cfg).unwrap()
}

fn random_cube(mu: &DiscreteMeasure, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let i = rng.random_range(0..mu.len());
    let side = mu.resolution() * rng.random_range(0.5f64..40.0);
    (mu.point(i).to_vec(), side)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn growth_bound_holds_on_random_balls(mu in any_measure(2, 40), seed in 0u64..1000) {
        let c0 = growth_constant(&mu).unwrap().c0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let x = mu.point(rng.random_range(0..mu.len()));
            let r = mu.resolution() * rng.random_range(1.0f64..200.0);
            prop_assert!(mu.ball_mass(x, r) <= c0 * r.powf(mu.n()) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn growth_constant_scales_with_weights(mu in any_measure(2, 30), lambda in 0.1f64..10.0) {
        let c0 = growth_constant(&mu).unwrap().c0;
        let pts: Vec<Vec<f64>> = (0..mu.len()).map(|i| mu.point(i).to_vec()).collect();
        let ws = mu.weights().iter().map(|w| w * lambda).collect();
        let scaled = DiscreteMeasure::new(mu.dim(), mu.n(), pts, ws, Some(mu.resolution()), "scaled").unwrap();
        let c1 = growth_constant(&scaled).unwrap().c0;
        prop_assert!((c1 - lambda * c0).abs() <= 1e-12 * c1);
    }

    #[test]
    fn doubling_is_monotone_in_beta(mu in any_measure(2, 40), seed in 0u64..1000, extra in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z, side) = random_cube(&mu, &mut rng);
        let q = Cube::standard(z, side).unwrap();
        let beta = 2f64.powi(mu.dim() as i32 + 1);
        if is_doubling(&mu, &q, 2.0, beta).unwrap() {
            prop_assert!(is_doubling(&mu, &q, 2.0, beta + extra).unwrap());
        }
    }

    #[test]
    fn box_partition_masses_sum_to_total(mu in measure_strategy(1, 2, 40), cuts in 1usize..12) {
        // cuts on the half-grid never hit an atom, so closed cubes partition the support
        let h = 1.0 / 128.0;
        let mut edges = vec![-h];
        for c in 1..cuts {
            edges.push((2.0 * ((c * 64 / cuts) as f64) - 1.0) * h);
        }
        edges.push(1.0 + h);
        edges.dedup();
        let sum: f64 = edges
            .windows(2)
            .map(|e| mu.cube_mass(&Cube::standard(vec![(e[0] + e[1]) / 2.0], e[1] - e[0]).unwrap()))
            .sum();
        prop_assert!((sum - mu.total_mass()).abs() <= 1e-12);
    }

    #[test]
    fn delta_is_additive_on_concentric_cubes(mu in any_measure(3, 40), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z, a) = random_cube(&mu, &mut rng);
        let b = a * rng.random_range(1.0f64..5.0);
        let c = b * rng.random_range(1.0f64..5.0);
        let cube = |s| Cube::standard(z.clone(), s).unwrap();
        let pr = delta(&mu, &cube(a), &cube(c)).unwrap().value;
        let pq = delta(&mu, &cube(a), &cube(b)).unwrap().value;
        let qr = delta(&mu, &cube(b), &cube(c)).unwrap().value;
        prop_assert!((pr - pq - qr).abs() <= 1e-12 * pr.max(1.0));
    }

    #[test]
    fn delta_of_dilations_is_bounded(mu in any_measure(2, 40), seed in 0u64..1000) {
        let c0 = growth_constant(&mu).unwrap().c0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z, side) = random_cube(&mu, &mut rng);
        for rho in [1.5, 2.0, 4.0] {
            let q = Cube::standard(z.clone(), side).unwrap();
            let d = delta(&mu, &q, &q.dilate(rho)).unwrap().value;
            prop_assert!(d <= c0 * 2f64.powf(mu.n()) * rho.powf(mu.n()) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn delta_is_monotone_along_concentric_scans(mu in any_measure(2, 40), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z, big) = random_cube(&mu, &mut rng);
        let big = big * 8.0;
        let outer = Cube::standard(z.clone(), big).unwrap();
        let mut prev_in = f64::INFINITY;
        let mut prev_out = 0.0;
        for t in 1..=16 {
            let l = big * t as f64 / 16.0;
            let inner = delta(&mu, &Cube::standard(z.clone(), l).unwrap(), &outer).unwrap().value;
            prop_assert!(inner <= prev_in * (1.0 + 1e-12));
            prev_in = inner;
            let grown = delta(&mu, &outer, &Cube::standard(z.clone(), big + l).unwrap()).unwrap().value;
            prop_assert!(grown + 1e-12 >= prev_out);
            prev_out = grown;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generations_nest_and_classes_progress(mu in any_measure(8, 40)) {
        let t = pipeline(&mu);
        let lat = &t.lattice;
        for i in 0..mu.len() {
            let mut prev_side = f64::INFINITY;
            let mut prev_rank = 0;
            for k in lat.generations() {
                let e = lat.entry(i, k);
                prop_assert!(e.side.0 <= prev_side);
                prev_side = e.side.0;
                let rank = match e.class {
                    EntryClass::Initial => 0,
                    EntryClass::Transit => 1,
                    EntryClass::Stopping => 2,
                };
                prop_assert!(rank >= prev_rank);
                prev_rank = rank;
            }
        }
        prop_assert!(verify_generation_invariants(&mu, lat).pass);
    }

    #[test]
    fn aoi_and_lp_identities_hold(mu in any_measure(8, 40)) {
        let t = pipeline(&mu);
        for op in t.family.ops.iter().filter(|o| !o.zero) {
            let id = s_identities(op);
            prop_assert!(id.row_sum_error <= 1e-9);
            prop_assert!(id.asymmetry <= 1e-9);
            prop_assert!(op.s.kernel.iter().all(|v| *v >= 0.0));
        }
        if t.family.ops.iter().any(|o| !o.zero) {
            let d = build_decomposition(&t.family, 6, 0).unwrap();
            let id = lp_identities(&d);
            prop_assert!(id.telescoping_error <= 1e-10);
            prop_assert!(id.in_band_row_sum <= 1e-9);
            prop_assert!(id.asymmetry <= 1e-9);
        }
    }

    #[test]
    fn antisymmetric_pairings_vanish(mu in measure_strategy(2, 8, 40)) {
        let t = pipeline(&mu);
        prop_assume!(t.lattice.transit_count() > 0);
        let battery = cube_battery(&mu, &t.lattice, 40, 0).unwrap();
        for kind in [KernelKind::CauchyRe, KernelKind::CauchyIm] {
            let k = CZKernel::builtin(kind, mu.n());
            let (_, b) = t1_battery_on(&mu, &battery, &k, &T1Params::defaults(&mu)).unwrap();
            prop_assert!(b.rows.iter().all(|r| r.weak <= 1e-12));
        }
    }

    #[test]
    fn rbmo_estimate_is_a_seminorm(mu in any_measure(8, 40), seed in 0u64..1000, c in -5.0f64..5.0, lambda in -4.0f64..4.0) {
        let t = pipeline(&mu);
        prop_assume!(t.lattice.transit_count() > 0);
        let battery = cube_battery(&mu, &t.lattice, 60, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = |v: &[f64]| rbmo_norm(&mu, v, &battery).unwrap().norm;
        let nf = norm(&f);
        let ng = norm(&g);
        prop_assert!(norm(&vec![c; mu.len()]) <= 1e-12);
        let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
        prop_assert!((norm(&shifted) - nf).abs() <= 1e-9 * nf.max(1.0));
        let scaled: Vec<f64> = f.iter().map(|v| v * lambda).collect();
        prop_assert!((norm(&scaled) - lambda.abs() * nf).abs() <= 1e-9 * nf.max(1.0));
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        prop_assert!(norm(&sum) <= (nf + ng) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn maximal_operators_are_positive_and_monotone(mu in any_measure(8, 40), seed in 0u64..1000) {
        let t = pipeline(&mu);
        prop_assume!(t.family.ops.iter().any(|o| !o.zero));
        let d = build_decomposition(&t.family, 6, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let g: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let a = maximal_ops(&mu, &t.lattice, &d, &f);
        let b = maximal_ops(&mu, &t.lattice, &d, &fg);
        for i in 0..mu.len() {
            prop_assert!(a.m2[i] >= 0.0 && a.ms[i] >= 0.0);
            prop_assert!(b.m2[i] + 1e-12 >= a.m2[i]);
            prop_assert!(b.ms[i] + 1e-12 >= a.ms[i]);
        }
        let one = maximal_ops(&mu, &t.lattice, &d, &vec![1.0; mu.len()]);
        prop_assert!(one.m2.iter().all(|v| *v <= 1.0 + 1e-12));
    }

    #[test]
    fn carleson_ratio_is_scale_invariant(mu in any_measure(8, 40), lambda in 0.1f64..10.0) {
        let t = pipeline(&mu);
        prop_assume!(t.family.ops.iter().any(|o| !o.zero));
        let d = build_decomposition(&t.family, 6, 0).unwrap();
        let g: Vec<f64> = (0..mu.len()).map(|i| (mu.resolution() + mu.point(i)[0]).ln()).collect();
        let a = paraproduct_densities(&d, &g);
        let scaled: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x * lambda).collect()).collect();
        let fam = random_band_family(&d, 10, 0);
        let c1 = carleson_check(&mu, &t.lattice, &d, &a, &fam);
        let c2 = carleson_check(&mu, &t.lattice, &d, &scaled, &fam);
        prop_assert!((c2.c9 - lambda * c1.c9).abs() <= 1e-9 * c2.c9.max(1e-300));
        prop_assert!((c2.max_ratio - c1.max_ratio).abs() <= 1e-9 * c1.max_ratio.max(1e-12));
        prop_assert!(c1.max_ratio <= c1.sup_ratio * (1.0 + 1e-6) || c1.trivial);
    }

    #[test]
    fn paraproduct_annihilates_one_on_the_adjoint_side(mu in any_measure(8, 40), seed in 0u64..100) {
        let t = pipeline(&mu);
        prop_assume!(t.family.ops.iter().any(|o| !o.zero));
        let d = build_decomposition(&t.family, 6, 0).unwrap();
        prop_assume!(d.certified);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = paraproduct(&d, &b, 4).unwrap();
        let c = paraproduct_checks(&d, &u, &b, seed).unwrap();
        prop_assert!(c.adjoint_one <= 1e-8);
        let zero = paraproduct(&d, &vec![0.0; mu.len()], 4).unwrap();
        prop_assert_eq!(action_norm(&zero.action, mu.weights(), 0).unwrap(), 0.0);
    }
}
