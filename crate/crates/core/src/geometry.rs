//! Enclosing cubes, the coefficient `delta(Q, R)` and searches for doubling
//! cubes with a prescribed coefficient.
//!
//! `delta(Q, R)` is the larger of two annulus sums: the mass of `Q_R \ Q`
//! weighted by `|x - z_Q|^{-n}` and the same with the roles swapped. Each sum
//! only involves one center, so sorting atoms by sup-distance from that center
//! and keeping prefix sums answers concentric queries in logarithmic time.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{default_doubling, euclid_dist, growth_constant, sup_dist, Cube, DiscreteMeasure};
use crate::report::VerificationReport;

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
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

/// Smallest cube concentric with `q` containing both `q` and `r`.
pub fn enclosing_cube(q: &Cube, r: &Cube) -> Result<Cube> {
    let zq = match q {
        Cube::Whole => {
            return Err(Error::InvalidArgument(
                "enclosing cube of the whole space is undefined".into(),
            ))
        }
        other => other.center().unwrap(),
    };
    let reach = match r {
        Cube::Whole => return Ok(Cube::Whole),
        other => sup_dist(zq, other.center().unwrap()) + other.half_side(),
    };
    Ok(Cube::with_side(zq, q.side().max(2.0 * reach)))
}

/// Sum of `w / |x - center|^n` over atoms with `inner < |x - center|_inf <= outer`,
/// evaluated directly.
fn annulus_direct(mu: &DiscreteMeasure, center: &[f64], inner: f64, outer: f64) -> f64 {
    let n = mu.n();
    let mut acc = CompensatedSum::default();
    for i in 0..mu.len() {
        let p = mu.point(i);
        let s = sup_dist(p, center);
        if s > inner && s <= outer {
            acc.add(mu.weight(i) / euclid_dist(p, center).powf(n));
        }
    }
    acc.value()
}

/// One of the two annulus sums defining `delta`: over `Q_R \ Q` about `z_Q`.
fn one_sided(mu: &DiscreteMeasure, q: &Cube, r: &Cube) -> Result<f64> {
    if q.is_whole() {
        return Ok(0.0);
    }
    let enc = enclosing_cube(q, r)?;
    Ok(annulus_direct(
        mu,
        q.center().unwrap(),
        q.half_side(),
        enc.half_side(),
    ))
}

/// Value of `delta(Q, R)` with the larger of the two annulus sums identified.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaValue {
    pub value: f64,
    /// Sum over `Q_R \ Q` about the center of `Q`.
    pub forward: f64,
    /// Sum over `R_Q \ R` about the center of `R`.
    pub backward: f64,
}

/// `delta(Q, R)` by direct compensated summation.
pub fn delta(mu: &DiscreteMeasure, q: &Cube, r: &Cube) -> Result<DeltaValue> {
    if q == r {
        return Ok(DeltaValue {
            value: 0.0,
            forward: 0.0,
            backward: 0.0,
        });
    }
    let forward = one_sided(mu, q, r)?;
    let backward = one_sided(mu, r, q)?;
    Ok(DeltaValue {
        value: forward.max(backward),
        forward,
        backward,
    })
}

/// Quasi-distance `1 + delta(Q, R)`.
pub fn quasi_distance(mu: &DiscreteMeasure, q: &Cube, r: &Cube) -> Result<f64> {
    Ok(1.0 + delta(mu, q, r)?.value)
}

/// Atoms sorted by sup-distance from a fixed center, with prefix sums of
/// mass and of `w / |x - center|^n`. The atom at the center contributes no kernel term.
#[derive(Clone, Debug)]
pub struct CenterProfile {
    center: Vec<f64>,
    dist: Vec<f64>,
    cum_mass: Vec<f64>,
    cum_kernel: Vec<f64>,
}

impl CenterProfile {
    pub fn new(mu: &DiscreteMeasure, center: &[f64]) -> Self {
        let n = mu.n();
        let mut rows: Vec<(f64, f64, f64)> = (0..mu.len())
            .map(|i| {
                let p = mu.point(i);
                let s = sup_dist(p, center);
                let k = if s > 0.0 {
                    mu.weight(i) / euclid_dist(p, center).powf(n)
                } else {
                    0.0
                };
                (s, mu.weight(i), k)
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut dist = Vec::with_capacity(rows.len() + 1);
        let mut cum_mass = Vec::with_capacity(rows.len() + 1);
        let mut cum_kernel = Vec::with_capacity(rows.len() + 1);
        dist.push(f64::NEG_INFINITY);
        cum_mass.push(0.0);
        cum_kernel.push(0.0);
        let (mut m, mut k) = (CompensatedSum::default(), CompensatedSum::default());
        for (s, w, kk) in rows {
            m.add(w);
            k.add(kk);
            dist.push(s);
            cum_mass.push(m.value());
            cum_kernel.push(k.value());
        }
        CenterProfile {
            center: center.to_vec(),
            dist,
            cum_mass,
            cum_kernel,
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Index into the prefix arrays of the last atom with sup-distance `<= h`.
    #[inline]
    fn upto(&self, h: f64) -> usize {
        self.dist.partition_point(|&d| d <= h) - 1
    }

    /// Mass of the closed cube of half-side `h` about the center.
    pub fn mass_within(&self, h: f64) -> f64 {
        self.cum_mass[self.upto(h)]
    }

    /// Kernel sum over `inner < |x - center|_inf <= outer`; `outer` may be infinite.
    pub fn annulus(&self, inner: f64, outer: f64) -> f64 {
        if outer <= inner {
            return 0.0;
        }
        self.cum_kernel[self.upto(outer)] - self.cum_kernel[self.upto(inner)]
    }

    /// Kernel sum outside the closed cube of half-side `h`.
    pub fn tail(&self, h: f64) -> f64 {
        self.annulus(h, f64::INFINITY)
    }

    /// Largest sup-distance to an atom.
    pub fn reach(&self) -> f64 {
        *self.dist.last().unwrap()
    }

    /// Doubling test for the concentric cube of side `side`; zero-mass cubes are not doubling.
    pub fn is_doubling(&self, side: f64, dim: usize) -> bool {
        if side.is_infinite() {
            return true;
        }
        let m = self.mass_within(side / 2.0);
        if m <= 0.0 {
            return false;
        }
        if side == 0.0 {
            return true;
        }
        self.mass_within(side) <= default_doubling(dim).1 * m
    }
}

/// One probed side in a doubling search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanStep {
    pub side: f64,
    pub delta: f64,
    pub doubling: bool,
}

/// Result of a search for a doubling cube with a prescribed coefficient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoublingSearch {
    pub cube: Cube,
    pub target: f64,
    pub achieved: f64,
    pub deviation: f64,
    /// Inner search: the point itself already satisfies the target.
    pub stopping: bool,
    /// Outer search: the target exceeds the coefficient to the whole space.
    pub initial: bool,
    pub scan_trace: Vec<ScanStep>,
}

/// Geometric grid from `hi` downward by `2^{-1/q}` while `>= lo`.
fn descending_grid(hi: f64, lo: f64, q: u32) -> Vec<f64> {
    let step = 2f64.powf(-1.0 / q as f64);
    let mut out = Vec::new();
    let mut s = hi;
    while s >= lo && out.len() < 100_000 {
        out.push(s);
        s *= step;
    }
    out
}

/// Picks the doubling entry closest to `target`; ties go to the smaller side.
fn pick_best(steps: &[ScanStep], target: f64) -> Option<&ScanStep> {
    steps.iter().filter(|s| s.doubling).min_by(|a, b| {
        (a.delta - target)
            .abs()
            .total_cmp(&(b.delta - target).abs())
            .then(a.side.total_cmp(&b.side))
    })
}

/// Doubling cube `Q` centered at `x` with `Q ⊂ 2 R0` and `delta(Q, 2 R0)` as close
/// as possible to `target`. Sides are scanned on a `2^{1/q}` grid from
/// `l(2 R0)` down to a quarter of the resolution.
pub fn find_doubling_inner(
    mu: &DiscreteMeasure,
    x: &[f64],
    r0: &Cube,
    target: f64,
    grid_q: u32,
) -> Result<DoublingSearch> {
    let prof = CenterProfile::new(mu, x);
    inner_search(mu, &prof, r0, target, grid_q, true)
}

pub(crate) fn inner_search(
    mu: &DiscreteMeasure,
    prof: &CenterProfile,
    r0: &Cube,
    target: f64,
    grid_q: u32,
    trace: bool,
) -> Result<DoublingSearch> {
    let x = prof.center();
    let big = r0.dilate(2.0);
    if !big.contains_point(x) {
        return Err(Error::InvalidArgument("point lies outside 2 R0".into()));
    }
    // half-side of Q_{2R0} for Q concentric with x of half-side h is max(h, reach)
    let reach = match &big {
        Cube::Whole => f64::INFINITY,
        c => sup_dist(x, c.center().unwrap()) + c.half_side(),
    };
    let point_delta = prof.annulus(0.0, reach);
    if point_delta <= target {
        return Ok(DoublingSearch {
            cube: Cube::Point { center: x.to_vec() },
            target,
            achieved: point_delta,
            deviation: 0.0,
            stopping: true,
            initial: false,
            scan_trace: Vec::new(),
        });
    }
    let top = match &big {
        Cube::Whole => 4.0 * prof.reach().max(mu.resolution()),
        c => c.side(),
    };
    let mut steps = Vec::new();
    for side in descending_grid(top, mu.resolution() / 4.0, grid_q) {
        let q = Cube::with_side(x, side);
        if !q.is_subset_of(&big) {
            continue;
        }
        steps.push(ScanStep {
            side,
            delta: prof.annulus(side / 2.0, reach),
            doubling: prof.is_doubling(side, mu.dim()),
        });
    }
    let best = pick_best(&steps, target).ok_or(Error::NoDoublingCube {
        scanned: steps.len(),
    })?;
    Ok(DoublingSearch {
        cube: Cube::with_side(x, best.side),
        target,
        achieved: best.delta,
        deviation: (best.delta - target).abs(),
        stopping: false,
        initial: false,
        scan_trace: if trace { steps.clone() } else { Vec::new() },
    })
}

/// Doubling cube `S ⊇ R0`, concentric with `R0`, with `l(S) >= 2 l(R0)` and
/// `delta(R0, S)` as close as possible to `target`. Returns the whole space
/// when `target >= delta(R0, R^d)`.
pub fn find_doubling_outer(
    mu: &DiscreteMeasure,
    r0: &Cube,
    target: f64,
    grid_q: u32,
) -> Result<DoublingSearch> {
    let z = r0.center().ok_or_else(|| {
        Error::InvalidArgument("outer search needs a bounded starting cube".into())
    })?;
    let prof = CenterProfile::new(mu, z);
    let lo = (2.0 * r0.side()).max(mu.resolution() / 4.0);
    outer_search(mu, &prof, r0.side(), lo, target, grid_q, true)
}

/// Concentric upward scan about the profile center from side `lo`.
pub(crate) fn outer_search(
    mu: &DiscreteMeasure,
    prof: &CenterProfile,
    base_side: f64,
    lo: f64,
    target: f64,
    grid_q: u32,
    trace: bool,
) -> Result<DoublingSearch> {
    let h0 = base_side / 2.0;
    let to_whole = prof.tail(h0);
    if target >= to_whole {
        return Ok(DoublingSearch {
            cube: Cube::Whole,
            target,
            achieved: to_whole,
            deviation: target - to_whole,
            stopping: false,
            initial: true,
            scan_trace: Vec::new(),
        });
    }
    let step = 2f64.powf(1.0 / grid_q as f64);
    let mut steps = Vec::new();
    let mut side = lo;
    loop {
        let d = prof.annulus(h0, side / 2.0);
        steps.push(ScanStep {
            side,
            delta: d,
            doubling: prof.is_doubling(side, mu.dim()),
        });
        if side / 2.0 >= prof.reach() || steps.len() > 100_000 {
            break;
        }
        side *= step;
    }
    let best = pick_best(&steps, target).ok_or(Error::NoDoublingCube {
        scanned: steps.len(),
    })?;
    Ok(DoublingSearch {
        cube: Cube::with_side(prof.center(), best.side),
        target,
        achieved: best.delta,
        deviation: (best.delta - target).abs(),
        stopping: false,
        initial: false,
        scan_trace: if trace { steps.clone() } else { Vec::new() },
    })
}

/// Measured constants from [`verify_delta_properties`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaConstants {
    pub c0: f64,
    /// Largest deviation from additivity over non-concentric nested triples.
    pub eps0: f64,
    /// Largest `delta(P,R) - delta(P,Q) - delta(Q,R)` over nested triples.
    pub c6: f64,
    /// Largest `delta(Q, R) / (1 + ln(l(R)/l(Q)))` over nested pairs.
    pub c_log: f64,
    /// Largest concentric additivity residual.
    pub concentric_residual: f64,
    /// Largest `delta(Q, rho Q) / (C0 (2 rho)^n)` over the dilation battery.
    pub dilation_ratio: f64,
}

/// Samples cubes centered at atoms and checks the basic inequalities for `delta`.
pub fn verify_delta_properties(
    mu: &DiscreteMeasure,
    samples: usize,
    seed: u64,
) -> Result<(VerificationReport, DeltaConstants)> {
    let c0 = growth_constant(mu)?.c0;
    let n = mu.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = mu.resolution();
    let diam = mu.diameter().max(res);
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    idx.shuffle(&mut rng);
    let take = samples.min(mu.len()).max(1);

    let random_side = |rng: &mut ChaCha8Rng| -> f64 {
        let lo = (res / 2.0).ln();
        let hi = (2.0 * diam).ln();
        rng.random_range(lo..hi).exp()
    };

    let mut dilation_ratio = 0.0_f64;
    let mut dil_witness = serde_json::Value::Null;
    let mut conc = 0.0_f64;
    let mut conc_witness = serde_json::Value::Null;
    let mut eps0 = 0.0_f64;
    let mut c6 = 0.0_f64;
    let mut c_log = 0.0_f64;
    for &i in idx.iter().take(take) {
        let x = mu.point(i).to_vec();
        let s = random_side(&mut rng);
        let q = Cube::with_side(&x, s);
        for rho in [1.5, 2.0, 4.0] {
            let d = delta(mu, &q, &q.dilate(rho))?.value;
            let r = d / (c0 * (2.0 * rho).powf(n));
            if r > dilation_ratio {
                dilation_ratio = r;
                dil_witness = serde_json::json!({"center": x, "side": s, "rho": rho, "delta": d});
            }
        }
        // concentric triple
        let mut sides = [s, random_side(&mut rng), random_side(&mut rng)];
        sides.sort_by(f64::total_cmp);
        let [a, b, c] = sides.map(|t| Cube::with_side(&x, t));
        let resid =
            (delta(mu, &a, &c)?.value - delta(mu, &a, &b)?.value - delta(mu, &b, &c)?.value).abs();
        if resid > conc {
            conc = resid;
            conc_witness = serde_json::json!({"center": x, "sides": sides});
        }
        let dac = delta(mu, &a, &c)?.value;
        if sides[2] > sides[0] {
            c_log = c_log.max(dac / (1.0 + (sides[2] / sides[0]).ln()));
        }
        // non-concentric nested triple: P about x, Q about a nearby atom, R about another
        let j = idx[rng.random_range(0..mu.len())];
        let k = idx[rng.random_range(0..mu.len())];
        let p = Cube::with_side(&x, sides[0]);
        let qc = mu.point(j).to_vec();
        let qs = 2.0 * (sup_dist(&qc, &x) + sides[0] / 2.0) * rng.random_range(1.0..2.0);
        let qq = Cube::with_side(&qc, qs);
        let rc = mu.point(k).to_vec();
        let rs = 2.0 * (sup_dist(&rc, &qc) + qs / 2.0) * rng.random_range(1.0..2.0);
        let rr = Cube::with_side(&rc, rs);
        let d_pr = delta(mu, &p, &rr)?.value;
        let d_pq = delta(mu, &p, &qq)?.value;
        let d_qr = delta(mu, &qq, &rr)?.value;
        eps0 = eps0.max((d_pr - d_pq - d_qr).abs());
        c6 = c6.max(d_pr - d_pq - d_qr);
    }
    let consts = DeltaConstants {
        c0,
        eps0,
        c6: c6.max(0.0),
        c_log,
        concentric_residual: conc,
        dilation_ratio,
    };
    let pass = dilation_ratio <= 1.0 && conc <= 1e-12;
    let mut measured = BTreeMap::new();
    measured.insert("c0".into(), c0);
    measured.insert("eps0".into(), eps0);
    measured.insert("c6".into(), consts.c6);
    measured.insert("c_log".into(), c_log);
    measured.insert("concentric_residual".into(), conc);
    measured.insert("dilation_ratio".into(), dilation_ratio);
    let mut tol = BTreeMap::new();
    tol.insert("concentric_residual".into(), 1e-12);
    tol.insert("dilation_ratio".into(), 1.0);
    let report = VerificationReport::new(
        "delta_properties",
        measured,
        serde_json::json!({"dilation": dil_witness, "concentric": conc_witness}),
        pass,
        tol,
    );
    Ok((report, consts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_atoms() -> DiscreteMeasure {
        DiscreteMeasure::new(
            1,
            1.0,
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0; 3],
            Some(1.0),
            "three",
        )
        .unwrap()
    }

    #[test]
    fn enclosing_examples() {
        let q = Cube::with_side(&[0.0], 0.0);
        let r = Cube::with_side(&[1.0], 0.0);
        assert_eq!(enclosing_cube(&q, &r).unwrap(), Cube::with_side(&[0.0], 2.0));
        let q = Cube::with_side(&[0.0], 1.0);
        let r = Cube::with_side(&[2.0], 1.0);
        assert_eq!(enclosing_cube(&q, &r).unwrap(), Cube::with_side(&[0.0], 5.0));
        assert_eq!(enclosing_cube(&q, &Cube::Whole).unwrap(), Cube::Whole);
        assert!(enclosing_cube(&Cube::Whole, &q).is_err());
    }

    #[test]
    fn delta_worked_example() {
        let mu = three_atoms();
        let q = Cube::with_side(&[0.0], 1.0);
        let r = Cube::with_side(&[0.0], 5.0);
        let d = delta(&mu, &q, &r).unwrap();
        assert!((d.value - 1.5).abs() < 1e-15);
        assert_eq!(d.backward, 0.0);
        assert_eq!(delta(&mu, &q, &q).unwrap().value, 0.0);
    }

    #[test]
    fn delta_to_whole_space() {
        let mu = three_atoms();
        let q = Cube::with_side(&[0.0], 1.0);
        let d = delta(&mu, &q, &Cube::Whole).unwrap();
        assert!((d.value - 1.5).abs() < 1e-15);
        assert_eq!(d.backward, 0.0);
    }

    #[test]
    fn profile_matches_direct() {
        let mu = three_atoms();
        let prof = CenterProfile::new(&mu, &[0.0]);
        assert_eq!(prof.mass_within(1.0), 2.0);
        assert!((prof.annulus(0.5, 2.5) - 1.5).abs() < 1e-15);
        assert!((prof.tail(0.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn inner_search_stops_when_point_suffices() {
        let mu = three_atoms();
        let r0 = Cube::with_side(&[1.0], 2.0);
        let s = find_doubling_inner(&mu, &[1.0], &r0, 100.0, 8).unwrap();
        assert!(s.stopping);
        assert!(s.cube.is_point());
    }

    #[test]
    fn outer_search_reaches_whole_space() {
        let mu = three_atoms();
        let r0 = Cube::with_side(&[0.0], 0.5);
        let s = find_doubling_outer(&mu, &r0, 10.0, 8).unwrap();
        assert!(s.initial);
        assert!(s.cube.is_whole());
        let s = find_doubling_outer(&mu, &r0, 1.0, 8).unwrap();
        assert!(!s.initial);
        assert!(s.scan_trace.len() > 1);
    }

    #[test]
    fn compensated_sum_cancels() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16] {
            s.add(x);
        }
        assert_eq!(s.value(), 1.0);
    }
}
