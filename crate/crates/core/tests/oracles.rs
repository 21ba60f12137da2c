//! Worked examples checked against frozen values and against brute-force
//! implementations written independently of the library.

use lpnd_core::czo::{CZKernel, KernelKind, TruncatedOperator};
use lpnd_core::geometry::{delta, enclosing_cube};
use lpnd_core::lp::build_decomposition;
use lpnd_core::measure::{
    generate_example, growth_constant, is_doubling, worst_doubling_ratio, ExampleKind, EXAMPLE_NAMES,
};
use lpnd_core::pipeline::{measure_inputs, tune, TuningConfig};
use lpnd_core::{Cube, DiscreteMeasure};

fn three_atoms() -> DiscreteMeasure {
    DiscreteMeasure::new(1, 1.0, vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0; 3], None, "three").unwrap()
}

fn example(name: &str, atoms: usize) -> DiscreteMeasure {
    generate_example(&ExampleKind::from_name(name, atoms, 7).unwrap()).unwrap().measure
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn brute_cube_mass(mu: &DiscreteMeasure, center: &[f64], side: f64) -> f64 {
    (0..mu.len()).filter(|&i| sup(mu.point(i), center) <= side / 2.0).map(|i| mu.weight(i)).sum()
}

/// Sup of `mu(B(x,r))/r^n` and `mu(Q(x,2r))/(2r)^n` over atoms and the
/// radii where either profile jumps.
fn brute_growth(mu: &DiscreteMeasure) -> f64 {
    let n = mu.n();
    let res = mu.resolution();
    let mut best = 0.0_f64;
    for i in 0..mu.len() {
        let x = mu.point(i);
        let mut radii = vec![res];
        for j in 0..mu.len() {
            radii.push(euclid(x, mu.point(j)));
            radii.push(sup(x, mu.point(j)));
        }
        for r in radii.into_iter().filter(|r| *r >= res) {
            let ball: f64 = (0..mu.len()).filter(|&j| euclid(x, mu.point(j)) <= r).map(|j| mu.weight(j)).sum();
            best = best.max(ball / r.powf(n));
            best = best.max(brute_cube_mass(mu, x, 2.0 * r) / (2.0 * r).powf(n));
        }
    }
    best
}

/// `delta` from its definition: two annulus sums around each center.
fn brute_delta(mu: &DiscreteMeasure, zq: &[f64], lq: f64, zr: &[f64], lr: f64) -> f64 {
    let side = |z: &[f64], l: f64, other: &[f64], lo: f64| l.max(2.0 * sup(z, other) + lo);
    let one = |z: &[f64], l: f64, other: &[f64], lo: f64| {
        let outer = side(z, l, other, lo) / 2.0;
        (0..mu.len())
            .filter(|&i| {
                let s = sup(mu.point(i), z);
                s > l / 2.0 && s <= outer
            })
            .map(|i| mu.weight(i) / euclid(mu.point(i), z).powf(mu.n()))
            .sum::<f64>()
    };
    one(zq, lq, zr, lr).max(one(zr, lr, zq, lq))
}

#[test]
fn ball_mass_of_three_atoms() {
    let mu = three_atoms();
    assert_eq!(mu.ball_mass(&[0.0], 1.5), 2.0);
    assert_eq!(mu.ball_mass(&[0.0], 1.0), 2.0);
    assert_eq!(mu.ball_mass(&[0.5], 0.4), 0.0);
}

#[test]
fn cube_mass_of_three_atoms() {
    let mu = three_atoms();
    assert_eq!(mu.cube_mass(&Cube::standard(vec![0.0], 1.0).unwrap()), 1.0);
    assert_eq!(mu.cube_mass(&Cube::Whole), 3.0);
    assert_eq!(mu.cube_mass(&Cube::Point { center: vec![1.0] }), 1.0);
}

#[test]
fn growth_constant_of_three_atoms_is_three() {
    let mu = three_atoms();
    let g = growth_constant(&mu).unwrap();
    assert_eq!(g.c0, 3.0);
    assert_eq!(brute_growth(&mu), 3.0);
}

#[test]
fn growth_constant_matches_brute_force_on_examples() {
    for name in EXAMPLE_NAMES {
        let mu = example(name, 64);
        let lib = growth_constant(&mu).unwrap().c0;
        let brute = brute_growth(&mu);
        assert!((lib - brute).abs() <= 1e-12 * brute, "{name}: {lib} vs {brute}");
    }
}

#[test]
fn growth_constant_of_uniform_interval_is_three() {
    // closed ball of radius one spacing holds three atoms of mass h each
    let mu = example("uniform_interval", 100);
    assert!((growth_constant(&mu).unwrap().c0 - 3.0).abs() < 1e-12);
}

#[test]
fn doubling_examples_on_three_atoms() {
    let mu = three_atoms();
    let q = Cube::standard(vec![1.0], 2.2).unwrap();
    assert_eq!(brute_cube_mass(&mu, &[1.0], 2.2), 3.0);
    assert_eq!(brute_cube_mass(&mu, &[1.0], 4.4), 3.0);
    assert!(is_doubling(&mu, &q, 2.0, 4.0).unwrap());
    let q = Cube::standard(vec![0.0], 1.0).unwrap();
    assert_eq!(brute_cube_mass(&mu, &[0.0], 2.0), 2.0);
    assert!(is_doubling(&mu, &q, 2.0, 4.0).unwrap());
    assert!(is_doubling(&mu, &Cube::Point { center: vec![2.0] }, 2.0, 4.0).unwrap());
}

#[test]
fn comb_with_five_levels_has_non_doubling_witness() {
    let kind = ExampleKind::Comb {
        levels: 5,
        ratio: 0.25,
        first_level_atoms: 256,
    };
    let mu = generate_example(&kind).unwrap().measure;
    let w = worst_doubling_ratio(&mu);
    let z = w.cube.center().unwrap().to_vec();
    let side = w.cube.side();
    let ratio = brute_cube_mass(&mu, &z, 2.0 * side) / brute_cube_mass(&mu, &z, side);
    assert!(ratio > 4.0, "{ratio}");
    assert!((ratio - w.ratio).abs() < 1e-12);
}

#[test]
fn cantor_level_four_layout() {
    let mu = generate_example(&ExampleKind::CantorQuarterPlanar { level: 4 }).unwrap().measure;
    assert_eq!(mu.len(), 256);
    assert!(mu.weights().iter().all(|w| (w - 4f64.powi(-4)).abs() < 1e-15));
}

#[test]
fn enclosing_cube_examples() {
    let q = Cube::standard(vec![0.0], 1.0).unwrap();
    let r = Cube::standard(vec![2.0], 1.0).unwrap();
    assert_eq!(enclosing_cube(&q, &r).unwrap(), Cube::standard(vec![0.0], 5.0).unwrap());
    let p = Cube::Point { center: vec![0.0] };
    let p1 = Cube::Point { center: vec![1.0] };
    assert_eq!(enclosing_cube(&p, &p1).unwrap(), Cube::standard(vec![0.0], 2.0).unwrap());
    let big = Cube::standard(vec![0.0], 5.0).unwrap();
    assert_eq!(enclosing_cube(&big, &q).unwrap(), big);
}

#[test]
fn delta_of_three_atoms_is_one_and_a_half() {
    let mu = three_atoms();
    let q = Cube::standard(vec![0.0], 1.0).unwrap();
    let r = Cube::standard(vec![0.0], 5.0).unwrap();
    assert_eq!(delta(&mu, &q, &r).unwrap().value, 1.5);
    assert_eq!(brute_delta(&mu, &[0.0], 1.0, &[0.0], 5.0), 1.5);
    assert_eq!(delta(&mu, &q, &q).unwrap().value, 0.0);
}

#[test]
fn delta_matches_brute_force_on_examples() {
    for name in EXAMPLE_NAMES {
        let mu = example(name, 64);
        for i in (0..mu.len()).step_by(7) {
            for j in (0..mu.len()).step_by(11) {
                let (lq, lr) = (0.05 + 0.01 * i as f64, 0.03 + 0.02 * j as f64);
                let q = Cube::standard(mu.point(i).to_vec(), lq).unwrap();
                let r = Cube::standard(mu.point(j).to_vec(), lr).unwrap();
                let lib = delta(&mu, &q, &r).unwrap().value;
                let brute = brute_delta(&mu, mu.point(i), lq, mu.point(j), lr);
                assert!((lib - brute).abs() <= 1e-12 * brute.max(1.0), "{name} {i} {j}: {lib} vs {brute}");
            }
        }
    }
}

#[test]
fn dilation_bound_holds_on_every_example() {
    // delta(Q, 2Q) <= C0 4^n
    for name in EXAMPLE_NAMES {
        let mu = example(name, 128);
        let c0 = brute_growth(&mu);
        let bound = c0 * 4f64.powf(mu.n());
        let res = mu.resolution();
        for i in (0..mu.len()).step_by(5) {
            let mut l = res;
            while l < 4.0 * mu.diameter() {
                let d = brute_delta(&mu, mu.point(i), l, mu.point(i), 2.0 * l);
                assert!(d <= bound, "{name} atom {i} side {l}: {d} > {bound}");
                l *= 1.7;
            }
        }
    }
}

#[test]
fn almost_identity_is_certified_at_one_half() {
    // ||I_band - Phi_N||_{2,2} <= 1/2 at the chosen N, by an independent
    // power iteration on the symmetrized matrix
    for name in ["uniform_interval", "comb"] {
        let mu = example(name, 96);
        let cfg = TuningConfig::default();
        let inputs = measure_inputs(&mu, &cfg).unwrap();
        let t = tune(&mu, &inputs, &cfg).unwrap();
        let d = build_decomposition(&t.family, 10, 1).unwrap();
        assert!(d.certified, "{name}");
        let r = d.residual(d.n);
        let w = mu.weights();
        let n = w.len();
        // B = W^{1/2} R W^{-1/2} is symmetric when R is self-adjoint in L^2(mu)
        let b: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| w[i].sqrt() * r[[i, j]] / w[j].sqrt()).collect())
            .collect();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let mut est = 0.0;
        for _ in 0..3000 {
            let u: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i][j] * v[j]).sum()).collect();
            let bt: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[j][i] * u[j]).sum()).collect();
            let norm = bt.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                est = 0.0;
                break;
            }
            est = norm.sqrt() / v.iter().map(|x| x * x).sum::<f64>().sqrt().sqrt();
            v = bt.iter().map(|x| x / norm).collect();
        }
        assert!(est <= 0.5 + 1e-6, "{name}: {est}");
    }
}

#[test]
fn antisymmetric_pairing_matches_direct_sum() {
    let mu = example("lipschitz_graph_arclength", 80);
    let k = CZKernel::builtin(KernelKind::CauchyRe, mu.n());
    let t = TruncatedOperator::new(&mu, &k, 0.05, false).unwrap();
    let a = t.matrix.action_matrix();
    let w = mu.weights();
    // <T chi_Q, chi_Q> summed directly over a cube around atom 40
    let z = mu.point(40).to_vec();
    let inside: Vec<usize> = (0..mu.len()).filter(|&i| sup(mu.point(i), &z) <= 0.2).collect();
    let direct: f64 = inside
        .iter()
        .flat_map(|&i| inside.iter().map(move |&j| (i, j)))
        .filter(|&(i, j)| i != j && euclid(mu.point(i), mu.point(j)) > 0.05)
        .map(|(i, j)| w[i] * w[j] * k.eval(mu.point(i), mu.point(j)))
        .sum();
    let lib: f64 = inside.iter().map(|&i| w[i] * inside.iter().map(|&j| a[[i, j]]).sum::<f64>()).sum();
    assert!(direct.abs() <= 1e-12 && lib.abs() <= 1e-12, "{direct} {lib}");
}
