//! Approximations of the identity built from the generation lattice.
//!
//! Each atom `y` and generation `k` carries a bump `psi_{y,k}`: a capped
//! power `|x - y|^{-n}` cut off by a linear ramp between `Q2hat` and
//! `2 Q2hat`. Normalizing `phi = psi / alpha2` and symmetrizing gives the
//! operators `S_k` with `S_k 1 = 1` and symmetric kernels.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EntryClass, GenerationEntry, GenerationLattice, Side};
use crate::linalg::OperatorMatrix;
use crate::measure::{euclid_dist, sup_dist, Cube, DiscreteMeasure};
use crate::report::{constants, VerificationReport};

/// Geometry of one bump `psi_{y,k}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub center: usize,
    pub q1: Side,
    pub q2hat: Side,
    pub q3: Side,
    /// Height on `Q1/2`, `(2/l)^n` lowered to `4/l^n` when `2^n > 4`.
    pub cap: f64,
    pub n: f64,
    /// `psi ≡ 0`.
    pub degenerate: bool,
}

impl BumpProfile {
    pub fn from_entry(e: &GenerationEntry, n: f64) -> BumpProfile {
        let degenerate =
            e.class == EntryClass::Initial || e.aux.q2hat.is_point() || e.aux.q1.is_whole();
        let l = e.aux.q1.0;
        let cap = if l > 0.0 && l.is_finite() {
            (2.0 / l).powf(n).min(4.0 / l.powf(n))
        } else {
            0.0
        };
        BumpProfile {
            center: e.point_index,
            q1: e.aux.q1,
            q2hat: e.aux.q2hat,
            q3: e.aux.q3,
            cap,
            n,
            degenerate,
        }
    }

    /// Radial part: the cap inside `|x - y| <= l(Q1)/2`, `t^{-n}` beyond.
    /// At `x = y` with a point `Q1` the value is taken to be zero.
    fn radial(&self, t: f64) -> f64 {
        if t <= self.q1.half() {
            if self.q1.is_point() {
                0.0
            } else {
                self.cap
            }
        } else {
            t.powf(-self.n)
        }
    }

    /// Cutoff: 1 on `Q2hat`, 0 outside `2 Q2hat`, linear in the sup-distance between.
    fn ramp(&self, s: f64) -> f64 {
        if self.q2hat.is_whole() {
            return 1.0;
        }
        let h = self.q2hat.half();
        if s <= h {
            1.0
        } else if s >= 2.0 * h {
            0.0
        } else {
            (2.0 * h - s) / h
        }
    }

    /// `psi(x)` for a bump centered at `y`.
    pub fn eval(&self, y: &[f64], x: &[f64]) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        self.radial(euclid_dist(x, y)) * self.ramp(sup_dist(x, y))
    }
}

/// All bump profiles of generation `k`.
pub fn profiles(mu: &DiscreteMeasure, lattice: &GenerationLattice, k: i32) -> Vec<BumpProfile> {
    (0..mu.len())
        .map(|i| BumpProfile::from_entry(&lattice.entry_or_edge(i, k), mu.n()))
        .collect()
}

/// `psi_{y,k}(x)` for atoms `y = x_j`.
pub fn psi_eval(mu: &DiscreteMeasure, profile: &BumpProfile, x: &[f64]) -> f64 {
    profile.eval(mu.point(profile.center), x)
}

/// Matrix `P[i][j] = phi_{x_j,k}(x_i)`.
fn phi_matrix(mu: &DiscreteMeasure, profs: &[BumpProfile], alpha2: f64) -> Array2<f64> {
    let n = mu.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = mu.point(i);
            profs
                .iter()
                .map(|p| p.eval(mu.point(p.center), x) / alpha2)
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// `S~_k`: kernel `phi_{y,k}(x)` plus the multiplier `max(0, 1/4 - int phi_{y,k}(x) dmu(y))`.
pub fn build_s_tilde(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    k: i32,
) -> OperatorMatrix {
    let profs = profiles(mu, lattice, k);
    let kernel = phi_matrix(mu, &profs, lattice.config.alpha2);
    let w = Array1::from(mu.weights().to_vec());
    let mass = kernel.dot(&w);
    let diag = mass.mapv(|s| (0.25 - s).max(0.0));
    OperatorMatrix::from_parts(kernel, diag, mu.weights())
}

/// `S_k` together with the normalizers.
#[derive(Clone, Debug)]
pub struct SOperator {
    pub k: i32,
    pub s: OperatorMatrix,
    pub s_tilde: OperatorMatrix,
    /// `S~_k 1`.
    pub s_tilde_one: Vec<f64>,
    pub m: Vec<f64>,
    pub w: Vec<f64>,
    /// `S_k = 0` because some cube of generation `k` is the whole space.
    pub zero: bool,
}

/// `S_k = M S~ W S~* M` with `m = 1/S~1` and `w = 1/S~*(m)`; zero when some
/// entry of generation `k` is initial.
pub fn build_s(mu: &DiscreteMeasure, lattice: &GenerationLattice, k: i32) -> Result<SOperator> {
    let wts = mu.weights();
    if lattice.any_initial(k) {
        return Ok(SOperator {
            k,
            s: OperatorMatrix::zeros(wts),
            s_tilde: OperatorMatrix::zeros(wts),
            s_tilde_one: vec![0.0; wts.len()],
            m: vec![0.0; wts.len()],
            w: vec![0.0; wts.len()],
            zero: true,
        });
    }
    let st = build_s_tilde(mu, lattice, k);
    let one = st.apply_one();
    if let Some(i) = one.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Numerical(format!(
            "S~1 vanishes at atom {i} in generation {k}"
        )));
    }
    let m = one.mapv(|v| 1.0 / v);
    let adj = st.adjoint();
    let sm = adj.apply_vec(&m);
    if let Some(i) = sm.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Numerical(format!(
            "S~*(1/S~1) is invalid at atom {i} in generation {k}"
        )));
    }
    // S~*(m) vanishes only where the column of S~ is identically zero, and
    // then the value of w there never reaches S_k
    let w = sm.mapv(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let mm = OperatorMatrix::multiplier(wts, m.as_slice().unwrap());
    let ww = OperatorMatrix::multiplier(wts, w.as_slice().unwrap());
    let s = mm.compose(&st).compose(&ww).compose(&adj).compose(&mm);
    // the product is symmetric in exact arithmetic; remove rounding asymmetry
    let sym = (&s.kernel + &s.kernel.t()) * 0.5;
    let s = OperatorMatrix::from_parts(sym, s.diag, wts);
    Ok(SOperator {
        k,
        s,
        s_tilde_one: one.to_vec(),
        s_tilde: st,
        m: m.to_vec(),
        w: w.to_vec(),
        zero: false,
    })
}

/// `S_k` for every generation of the lattice band.
#[derive(Clone, Debug)]
pub struct AoiFamily {
    pub k_min: i32,
    pub k_max: i32,
    pub ops: Vec<SOperator>,
}

impl AoiFamily {
    pub fn get(&self, k: i32) -> Option<&SOperator> {
        if k < self.k_min || k > self.k_max {
            return None;
        }
        self.ops.get((k - self.k_min) as usize)
    }

    pub fn generations(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    /// First generation with `S_k != 0`.
    pub fn first_nonzero(&self) -> Option<i32> {
        self.ops.iter().find(|o| !o.zero).map(|o| o.k)
    }
}

pub fn build_family(mu: &DiscreteMeasure, lattice: &GenerationLattice) -> Result<AoiFamily> {
    let ops = lattice
        .generations()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| build_s(mu, lattice, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(AoiFamily {
        k_min: lattice.k_min,
        k_max: lattice.k_max,
        ops,
    })
}

/// Identity checks on one `S_k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SIdentities {
    pub k: i32,
    pub row_sum_error: f64,
    pub asymmetry: f64,
    pub s_tilde_one_min: f64,
    pub s_tilde_one_max: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub bound_violations: usize,
}

pub fn s_identities(op: &SOperator) -> SIdentities {
    let fold = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    if op.zero {
        return SIdentities {
            k: op.k,
            row_sum_error: 0.0,
            asymmetry: 0.0,
            s_tilde_one_min: f64::NAN,
            s_tilde_one_max: f64::NAN,
            m_min: f64::NAN,
            m_max: f64::NAN,
            w_min: f64::NAN,
            w_max: f64::NAN,
            bound_violations: 0,
        };
    }
    let one = op.s.apply_one();
    let row_sum_error = one.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let (a, b) = fold(&op.s_tilde_one);
    let (mlo, mhi) = fold(&op.m);
    let (wlo, whi) = fold(&op.w);
    let tol = 1e-12;
    let bound_violations = op
        .s_tilde_one
        .iter()
        .zip(&op.m)
        .zip(&op.w)
        .filter(|((s, m), w)| {
            **s < 0.25 - tol
                || **s > 1.5 + tol
                || **m < 2.0 / 3.0 - tol
                || **m > 4.0 + tol
                || **w < -tol
                || **w > 6.0 + tol
        })
        .count();
    SIdentities {
        k: op.k,
        row_sum_error,
        asymmetry: op.s.asymmetry(),
        s_tilde_one_min: a,
        s_tilde_one_max: b,
        m_min: mlo,
        m_max: mhi,
        w_min: wlo,
        w_max: whi,
        bound_violations,
    }
}

/// Normalization errors of the bumps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiNorms {
    pub k: i32,
    /// `max | ||psi_y||_1 - alpha2 |` over non-degenerate bumps.
    pub eps2: f64,
    /// Largest deviation of `int phi_{z,k}` and `int phi_{y,k}(z) dmu(y)` from 1:
    /// from above at every atom, from below at atoms lying in some transit cube.
    pub eps3: f64,
    pub upper_max: f64,
    pub lower_min: f64,
    pub profiles: usize,
    pub witness: Option<usize>,
}

pub fn verify_phi_norms(mu: &DiscreteMeasure, lattice: &GenerationLattice, k: i32) -> PhiNorms {
    let profs = profiles(mu, lattice, k);
    let alpha2 = lattice.config.alpha2;
    let p = phi_matrix(mu, &profs, alpha2);
    let w = Array1::from(mu.weights().to_vec());
    // column j integrated over x: ||phi_{x_j}||_1; row i integrated over y
    let col = p.t().dot(&w);
    let row = p.dot(&w);
    let n = mu.len();
    let in_transit: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n).any(|j| {
                let e = lattice.entry_or_edge(j, k);
                e.class == EntryClass::Transit
                    && e.side.cube(mu.point(j)).contains_point(mu.point(i))
            })
        })
        .collect();
    let mut eps2 = 0.0_f64;
    let mut eps3 = 0.0_f64;
    let mut upper = 0.0_f64;
    let mut lower = f64::INFINITY;
    let mut count = 0;
    let mut witness = None;
    for j in 0..n {
        let pr = &profs[j];
        let nondeg = !pr.degenerate && pr.q1.is_standard();
        if nondeg {
            count += 1;
            eps2 = eps2.max((col[j] * alpha2 - alpha2).abs());
        }
        for v in [col[j], row[j]] {
            upper = upper.max(v);
            let mut dev = (v - 1.0).max(0.0);
            if in_transit[j] {
                lower = lower.min(v);
                dev = dev.max(1.0 - v);
            }
            if dev > eps3 {
                eps3 = dev;
                witness = Some(j);
            }
        }
    }
    PhiNorms {
        k,
        eps2,
        eps3,
        upper_max: upper,
        lower_min: lower,
        profiles: count,
        witness,
    }
}

/// Pointwise checks of the bump clauses over all atom pairs: the size
/// bound, the equality region, the support in `Q3`, and the measured
/// Lipschitz constant `C7` from finite differences.
pub fn verify_psi_clauses(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    k: i32,
) -> VerificationReport {
    let profs = profiles(mu, lattice, k);
    let n = mu.n();
    let res: Vec<(usize, usize, usize, f64)> = profs
        .par_iter()
        .filter(|p| !p.degenerate)
        .map(|p| {
            let y = mu.point(p.center);
            let (mut size, mut eq, mut supp) = (0, 0, 0);
            let mut c7 = 0.0_f64;
            let l1 = p.q1.0;
            for i in 0..mu.len() {
                let x = mu.point(i);
                let v = p.eval(y, x);
                let t = euclid_dist(x, y);
                let bound = if l1 > 0.0 { 4.0 / l1.powf(n) } else { f64::INFINITY }
                    .min(if t > 0.0 { t.powf(-n) } else { f64::INFINITY });
                if v > bound * (1.0 + 1e-12) {
                    size += 1;
                }
                let q1 = p.q1.cube(y);
                let q2h = p.q2hat.cube(y);
                if q2h.contains_point(x) && !q1.contains_point(x) && t > 0.0 {
                    if (v - t.powf(-n)).abs() > 1e-12 * t.powf(-n) {
                        eq += 1;
                    }
                }
                if v > 0.0 && !p.q3.cube(y).contains_point(x) {
                    supp += 1;
                }
            }
            // finite differences along each axis on a small stencil
            let scale = if l1 > 0.0 { l1 } else { mu.resolution() };
            let h = 1e-4 * scale;
            for i in 0..mu.len() {
                let x = mu.point(i).to_vec();
                let t = euclid_dist(&x, y);
                let bound = if l1 > 0.0 { 1.0 / l1.powf(n + 1.0) } else { f64::INFINITY }
                    .min(if t > 0.0 { t.powf(-n - 1.0) } else { f64::INFINITY });
                if !bound.is_finite() {
                    continue;
                }
                for d in 0..x.len() {
                    let mut xp = x.clone();
                    xp[d] += h;
                    let g = (p.eval(y, &xp) - p.eval(y, &x)).abs() / h;
                    c7 = c7.max(g / bound);
                }
            }
            (size, eq, supp, c7)
        })
        .collect();
    let size: usize = res.iter().map(|r| r.0).sum();
    let eq: usize = res.iter().map(|r| r.1).sum();
    let supp: usize = res.iter().map(|r| r.2).sum();
    let c7 = res.iter().map(|r| r.3).fold(0.0, f64::max);
    VerificationReport::new(
        "psi_clauses",
        constants([
            ("size_violations", size as f64),
            ("equality_violations", eq as f64),
            ("support_violations", supp as f64),
            ("c7", c7),
            ("profiles", res.len() as f64),
        ]),
        serde_json::json!({"k": k}),
        size == 0 && eq == 0 && supp == 0,
        constants([("violations", 0.0)]),
    )
}

/// Kernel localization, size and regularity constants for one generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelBounds {
    pub k: i32,
    /// Nonzero `s_k(x, y)` with `y` outside `Q_{x,k-1}` and `Q_{x,k}` transit.
    pub support_violations: usize,
    pub negative_entries: usize,
    /// Smallest `C` in `s_k(x,y) <= C / (l(Q_x) + l(Q_y) + |x-y|)^n`.
    pub c_size: f64,
    /// Smallest `C` in the Lipschitz estimate in `x` over pairs in a common cube.
    pub c_reg: f64,
}

pub fn verify_kernel_bounds(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    op: &SOperator,
) -> KernelBounds {
    let k = op.k;
    let n = mu.len();
    let nn = mu.n();
    let mut out = KernelBounds {
        k,
        support_violations: 0,
        negative_entries: 0,
        c_size: 0.0,
        c_reg: 0.0,
    };
    if op.zero {
        return out;
    }
    let entries: Vec<GenerationEntry> = (0..n).map(|i| lattice.entry_or_edge(i, k)).collect();
    let prev: Vec<Side> = (0..n)
        .map(|i| lattice.entry_or_edge(i, k - 1).side)
        .collect();
    let kern = &op.s.kernel;
    let transit = |i: usize| entries[i].class == EntryClass::Transit;
    for x in 0..n {
        for y in 0..n {
            let v = kern[[x, y]];
            if v < -1e-15 {
                out.negative_entries += 1;
            }
            if transit(x) && v.abs() > 1e-14 && !prev[x].cube(mu.point(x)).contains_point(mu.point(y))
            {
                out.support_violations += 1;
            }
            if transit(x) && transit(y) {
                let den = entries[x].side.0 + entries[y].side.0 + euclid_dist(mu.point(x), mu.point(y));
                out.c_size = out.c_size.max(v * den.powf(nn));
            }
        }
    }
    // regularity: x, x' in a common transit cube Q_{x0,k}
    for x0 in 0..n {
        if !transit(x0) {
            continue;
        }
        let q0 = entries[x0].side.cube(mu.point(x0));
        let members: Vec<usize> = (0..n)
            .filter(|&i| transit(i) && q0.contains_point(mu.point(i)))
            .take(16)
            .collect();
        for (a, &x) in members.iter().enumerate() {
            for &xp in &members[a + 1..] {
                let dx = euclid_dist(mu.point(x), mu.point(xp));
                if dx == 0.0 {
                    continue;
                }
                for y in 0..n {
                    if !transit(y) {
                        continue;
                    }
                    let diff = (kern[[x, y]] - kern[[xp, y]]).abs();
                    let den = entries[x].side.0
                        + entries[y].side.0
                        + euclid_dist(mu.point(x), mu.point(y));
                    let c = diff * den.powf(nn) * entries[x0].side.0 / dx;
                    out.c_reg = out.c_reg.max(c);
                }
            }
        }
    }
    out
}

/// Checks that `phi_{y,k}(x) = 0` whenever `y` lies outside `Q3hathat_{x,k}`
/// for transit `Q_{x,k}`; returns the number of violations.
pub fn verify_phi_localization(mu: &DiscreteMeasure, lattice: &GenerationLattice, k: i32) -> usize {
    let profs = profiles(mu, lattice, k);
    let n = mu.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let e = lattice.entry_or_edge(i, k);
            if e.class != EntryClass::Transit {
                return 0;
            }
            let big: Cube = e.aux.q3hathat.cube(mu.point(i));
            (0..n)
                .filter(|&j| {
                    !big.contains_point(mu.point(j))
                        && profs[j].eval(mu.point(j), mu.point(i)) > 0.0
                })
                .count()
        })
        .sum()
}
