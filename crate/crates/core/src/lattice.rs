//! Generations of doubling cubes `Q_{x,k}` centered at the atoms, their
//! auxiliary cubes, and checks of the structural properties (nesting,
//! regularity, geometric decay of sides).
//!
//! With the whole space as reference, a transit cube of generation `k` is a
//! doubling cube with `delta(Q, R^d)` close to `kA`. Since every cube in the
//! construction is centered at an atom, all the coefficients involved reduce
//! to differences of the tail sum `t_x(h)`, the kernel mass outside the cube
//! of half-side `h` about `x`. Each atom gets one candidate list of doubling
//! sides on a shared geometric grid, and every search picks from it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{find_doubling_inner, find_doubling_outer, CenterProfile};
use crate::measure::{sup_dist, Cube, DiscreteMeasure};
use crate::report::{constants, VerificationReport};

/// A side length where `0` is a point and `inf` the whole space. Serialized
/// as a number, or the string `"whole"` for infinity.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Side(pub f64);

impl Serialize for Side {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("whole")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Side {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Side(x)),
            Raw::Str(s) if s == "whole" => Ok(Side(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad side `{s}`"))),
        }
    }
}

impl Side {
    pub const POINT: Side = Side(0.0);
    pub const WHOLE: Side = Side(f64::INFINITY);

    pub fn is_point(self) -> bool {
        self.0 == 0.0
    }

    pub fn is_whole(self) -> bool {
        self.0.is_infinite()
    }

    pub fn is_standard(self) -> bool {
        self.0 > 0.0 && self.0.is_finite()
    }

    pub fn half(self) -> f64 {
        self.0 / 2.0
    }

    pub fn cube(self, center: &[f64]) -> Cube {
        Cube::with_side(center, self.0)
    }
}

/// How the constants `sigma, alpha1, alpha2, A` are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ConstantPolicy {
    /// `sigma = 100 eps0 + 100 eps1 + 12^{n+1} C0`, then each constant is a
    /// multiple (at least 4) of the previous one.
    ClosedForm { m1: f64, m2: f64, m_a: f64 },
    /// `sigma` from the measured dilation coefficient `max delta(Q, 2Q)` over
    /// atom-centered doubling cubes, scaled by `sigma_factor`.
    Measured {
        sigma_factor: f64,
        m1: f64,
        m2: f64,
        m_a: f64,
    },
    /// Explicit values.
    Fixed {
        sigma: f64,
        alpha1: f64,
        alpha2: f64,
        a: f64,
    },
}

impl Default for ConstantPolicy {
    /// The closed-form `sigma` exceeds `delta(x, R^d)` on every reference
    /// measure of a few hundred atoms, which leaves no transit cube at all;
    /// the measured dilation scale keeps several generations populated.
    fn default() -> Self {
        ConstantPolicy::Measured {
            sigma_factor: 0.02,
            m1: 4.0,
            m2: 4.0,
            m_a: 4.0,
        }
    }
}

impl ConstantPolicy {
    /// The closed-form policy with the given multipliers.
    pub fn closed_form(m: f64) -> Self {
        ConstantPolicy::ClosedForm { m1: m, m2: m, m_a: m }
    }
}

/// Which cube serves as the outermost reference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum ReferenceScheme {
    /// `delta(Q, R^d) = kA` (finite total mass).
    #[default]
    WholeSpace,
    /// Concentric chain `R_0 ⊂ R_{-1} ⊂ ...` with `delta(R_0, R_{-j}) = jA`.
    Chain { r0: Cube },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub a: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub c0: f64,
    /// Value of the closed-form `sigma` for reference, whatever the policy.
    pub closed_form_sigma: f64,
    /// Explicit `[k_min, k_max]`; chosen from the data when absent.
    pub k_range: Option<(i32, i32)>,
    pub grid_q: u32,
    pub reference: ReferenceScheme,
    pub policy: ConstantPolicy,
}

impl LatticeConfig {
    /// Derives the constants from measured `c0, eps0, eps1` and a policy.
    /// `eps1` is raised to `eps0` when smaller.
    pub fn derive(
        n: f64,
        c0: f64,
        eps0: f64,
        eps1: f64,
        dilation: f64,
        policy: ConstantPolicy,
        grid_q: u32,
    ) -> Result<LatticeConfig> {
        let eps1 = eps1.max(eps0);
        let closed_form_sigma = 100.0 * eps0 + 100.0 * eps1 + 12f64.powf(n + 1.0) * c0;
        let (sigma, alpha1, alpha2, a) = match policy {
            ConstantPolicy::ClosedForm { m1, m2, m_a } => {
                if m1 < 4.0 || m2 < 4.0 || m_a < 4.0 {
                    return Err(Error::Config("multipliers must be at least 4".into()));
                }
                let s = closed_form_sigma;
                (s, m1 * s, m2 * m1 * s, m_a * m2 * m1 * s)
            }
            ConstantPolicy::Measured {
                sigma_factor,
                m1,
                m2,
                m_a,
            } => {
                if m1 < 4.0 || m2 < 4.0 || m_a < 4.0 {
                    return Err(Error::Config("multipliers must be at least 4".into()));
                }
                let s = sigma_factor * dilation;
                (s, m1 * s, m2 * m1 * s, m_a * m2 * m1 * s)
            }
            ConstantPolicy::Fixed {
                sigma,
                alpha1,
                alpha2,
                a,
            } => (sigma, alpha1, alpha2, a),
        };
        let cfg = LatticeConfig {
            a,
            alpha1,
            alpha2,
            sigma,
            eps0,
            eps1,
            c0,
            closed_form_sigma,
            k_range: None,
            grid_q,
            reference: ReferenceScheme::WholeSpace,
            policy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.alpha1, self.alpha2, self.sigma];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("constants must be positive and finite".into()));
        }
        if !(self.sigma < self.alpha1 && self.alpha1 < self.alpha2 && self.alpha2 < self.a) {
            return Err(Error::Config(format!(
                "need sigma < alpha1 < alpha2 < A, got {} {} {} {}",
                self.sigma, self.alpha1, self.alpha2, self.a
            )));
        }
        if self.grid_q == 0 {
            return Err(Error::Config("grid_q must be positive".into()));
        }
        if let Some((lo, hi)) = self.k_range {
            if lo > hi {
                return Err(Error::Config("empty k range".into()));
            }
        }
        Ok(())
    }

    /// Outward targets for `Q1, Q1hat, Q2, Q2hat, Q3` relative to `Q_{x,k}`.
    fn outward_targets(&self) -> [f64; 5] {
        let (a1, a2, s) = (self.alpha1, self.alpha2, self.sigma);
        [a1, a1 + s, a1 + a2, a1 + a2 + s, a1 + a2 + 2.0 * s]
    }

    /// Inward targets for the same five cubes relative to `Q_{x,k-1}`.
    fn inward_targets(&self) -> [f64; 5] {
        self.outward_targets().map(|t| self.a - t)
    }

    /// Inward targets for `Q1check, Q1checkcheck, Q3hathat` relative to `Q_{x,k-1}`.
    fn check_targets(&self) -> [f64; 3] {
        let (a, a1, a2, s) = (self.a, self.alpha1, self.alpha2, self.sigma);
        [a - a1 + s, a - a1 + 2.0 * s, a - a1 - a2 - 3.0 * s]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryClass {
    Initial,
    Transit,
    Stopping,
}

/// The eight auxiliary cubes, all centered at the entry's atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxSides {
    pub q1: Side,
    pub q1hat: Side,
    pub q2: Side,
    pub q2hat: Side,
    pub q3: Side,
    pub q1check: Side,
    pub q1checkcheck: Side,
    pub q3hathat: Side,
}

impl AuxSides {
    fn uniform(s: Side) -> Self {
        AuxSides {
            q1: s,
            q1hat: s,
            q2: s,
            q2hat: s,
            q3: s,
            q1check: s,
            q1checkcheck: s,
            q3hathat: s,
        }
    }

    fn from_arrays(main: [Side; 5], check: [Side; 3]) -> Self {
        AuxSides {
            q1: main[0],
            q1hat: main[1],
            q2: main[2],
            q2hat: main[3],
            q3: main[4],
            q1check: check[0],
            q1checkcheck: check[1],
            q3hathat: check[2],
        }
    }
}

/// Achieved coefficients of the auxiliary cubes against their reference
/// cube (`Q_{x,k}` for outward searches, `Q_{x,k-1}` for inward ones).
/// `NaN` marks a degenerate cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxDeltas {
    pub q1: f64,
    pub q1hat: f64,
    pub q2: f64,
    pub q2hat: f64,
    pub q3: f64,
    pub q1check: f64,
    pub q1checkcheck: f64,
    pub q3hathat: f64,
}

impl AuxDeltas {
    fn from_arrays(main: [f64; 5], check: [f64; 3]) -> Self {
        AuxDeltas {
            q1: main[0],
            q1hat: main[1],
            q2: main[2],
            q2hat: main[3],
            q3: main[4],
            q1check: check[0],
            q1checkcheck: check[1],
            q3hathat: check[2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationEntry {
    pub point_index: usize,
    pub k: i32,
    pub class: EntryClass,
    pub side: Side,
    /// `delta(Q_{x,k}, R^d)` for transit entries.
    pub achieved: f64,
    /// `|achieved - kA|` for transit entries, zero otherwise.
    pub deviation: f64,
    pub aux: AuxSides,
    #[serde(skip)]
    pub aux_deltas: Option<AuxDeltas>,
}

/// Doubling candidates for one atom: sides in decreasing order and the
/// matching tail sums (increasing).
#[derive(Clone, Debug)]
pub struct PointScan {
    pub sides: Vec<f64>,
    pub tails: Vec<f64>,
    /// `delta(x, R^d)`.
    pub to_whole: f64,
}

impl PointScan {
    fn build(mu: &DiscreteMeasure, i: usize, grid: &[f64]) -> PointScan {
        let prof = CenterProfile::new(mu, mu.point(i));
        let mut sides = Vec::new();
        let mut tails = Vec::new();
        for &s in grid {
            if prof.is_doubling(s, mu.dim()) {
                sides.push(s);
                tails.push(prof.tail(s / 2.0));
            }
        }
        PointScan {
            sides,
            tails,
            to_whole: prof.tail(0.0),
        }
    }

    /// Tail sum for a side (0 for the whole space, `to_whole` for a point).
    pub fn tail_of(&self, side: Side) -> f64 {
        if side.is_whole() {
            0.0
        } else if side.is_point() {
            self.to_whole
        } else {
            match self.sides.iter().position(|&s| s == side.0) {
                Some(p) => self.tails[p],
                None => f64::NAN,
            }
        }
    }

    /// Candidate with tail closest to `t` among sides in `[lo, hi]`; ties
    /// go to the smaller side.
    fn nearest(&self, t: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (&s, &tl) in self.sides.iter().zip(&self.tails) {
            if s < lo || s > hi {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bt)) => {
                    let (d, bd) = ((tl - t).abs(), (bt - t).abs());
                    d < bd || (d == bd && s < bs)
                }
            };
            if better {
                best = Some((s, tl));
            }
        }
        best
    }

    /// Half of the largest gap in the achievable tails: the worst deviation
    /// a search can incur for a target inside their range.
    pub fn half_max_gap(&self) -> f64 {
        let mut t = self.tails.clone();
        t.push(self.to_whole);
        t.sort_by(f64::total_cmp);
        t.windows(2)
            .map(|w| (w[1] - w[0]) / 2.0)
            .fold(0.0, f64::max)
    }
}

/// All generations `k_min..=k_max` for every atom.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationLattice {
    pub config: LatticeConfig,
    pub k_min: i32,
    pub k_max: i32,
    pub n_points: usize,
    /// Row `k - k_min`, column point index.
    pub entries: Vec<Vec<GenerationEntry>>,
    /// `delta(x, R^d)` per atom.
    pub to_whole: Vec<f64>,
}

impl GenerationLattice {
    pub fn entry(&self, i: usize, k: i32) -> &GenerationEntry {
        &self.entries[(k - self.k_min) as usize][i]
    }

    /// Entry at generation `k`, clamping outside the stored range: below it
    /// every cube is the whole space and above it every atom has collapsed.
    pub fn entry_or_edge(&self, i: usize, k: i32) -> GenerationEntry {
        if k < self.k_min {
            let mut e = self.entry(i, self.k_min).clone();
            e.k = k;
            e
        } else if k > self.k_max {
            let mut e = self.entry(i, self.k_max).clone();
            e.k = k;
            if e.class != EntryClass::Stopping {
                e.class = EntryClass::Stopping;
                e.side = Side::POINT;
            }
            e.aux = AuxSides::uniform(Side::POINT);
            e
        } else {
            self.entry(i, k).clone()
        }
    }

    pub fn generations(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    pub fn row(&self, k: i32) -> &[GenerationEntry] {
        &self.entries[(k - self.k_min) as usize]
    }

    pub fn any_initial(&self, k: i32) -> bool {
        if k < self.k_min {
            return true;
        }
        if k > self.k_max {
            return false;
        }
        self.row(k).iter().any(|e| e.class == EntryClass::Initial)
    }

    pub fn fraction_stopping(&self, k: i32) -> f64 {
        let r = self.row(k);
        r.iter().filter(|e| e.class == EntryClass::Stopping).count() as f64 / r.len() as f64
    }

    pub fn max_transit_deviation(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .filter(|e| e.class == EntryClass::Transit)
            .map(|e| e.deviation)
            .fold(0.0, f64::max)
    }

    pub fn transit_count(&self) -> usize {
        self.entries
            .iter()
            .flatten()
            .filter(|e| e.class == EntryClass::Transit)
            .count()
    }
}

/// Shared side grid: powers `2^{-j/q}` of a dyadic top side large enough to
/// contain the support from any atom, down to a quarter of the resolution.
pub fn side_grid(mu: &DiscreteMeasure, grid_q: u32) -> Vec<f64> {
    let mut reach = 0.0_f64;
    for i in 0..mu.len() {
        for j in (i + 1)..mu.len() {
            reach = reach.max(sup_dist(mu.point(i), mu.point(j)));
        }
    }
    let top = 2f64.powi((4.0 * reach.max(mu.resolution())).log2().ceil() as i32);
    let lo = mu.resolution() / 4.0;
    let mut out = Vec::new();
    let mut j = 0;
    loop {
        let s = top * 2f64.powf(-(j as f64) / grid_q as f64);
        if s < lo {
            break;
        }
        out.push(s);
        j += 1;
    }
    out
}

/// Candidate scans for every atom.
pub fn scan_points(mu: &DiscreteMeasure, grid_q: u32) -> Vec<PointScan> {
    let grid = side_grid(mu, grid_q);
    (0..mu.len())
        .into_par_iter()
        .map(|i| PointScan::build(mu, i, &grid))
        .collect()
}

/// Measured search precision: the worst deviation any coefficient search on
/// the shared grid can incur.
pub fn measured_eps1(scans: &[PointScan]) -> f64 {
    scans.iter().map(PointScan::half_max_gap).fold(0.0, f64::max)
}

/// Largest `delta(Q, 2Q)` over atom-centered doubling candidates.
pub fn measured_dilation(mu: &DiscreteMeasure, grid_q: u32) -> f64 {
    let grid = side_grid(mu, grid_q);
    (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let prof = CenterProfile::new(mu, mu.point(i));
            grid.iter()
                .filter(|&&s| prof.is_doubling(s, mu.dim()))
                .map(|&s| prof.annulus(s / 2.0, s))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Outward search: side `>= base` with `delta(Q_base, C)` close to `target`.
fn outward(scan: &PointScan, base: Side, base_tail: f64, target: f64) -> (Side, f64) {
    if target > base_tail {
        return (Side::WHOLE, base_tail);
    }
    match scan.nearest(base_tail - target, base.0, f64::INFINITY) {
        Some((s, t)) => (Side(s), base_tail - t),
        None => (Side::WHOLE, base_tail),
    }
}

/// Inward search: side `<= reference` with `delta(C, Q_ref)` close to
/// `target`; a point when `delta(x, Q_ref) <= target`.
fn inward(scan: &PointScan, reference: Side, target: f64) -> (Side, f64) {
    if reference.is_point() {
        return (Side::POINT, f64::NAN);
    }
    let ref_tail = scan.tail_of(reference);
    let room = scan.to_whole - ref_tail;
    if room <= target {
        return (Side::POINT, room);
    }
    match scan.nearest(ref_tail + target, 0.0, reference.0) {
        Some((s, t)) => (Side(s), t - ref_tail),
        None => (Side::POINT, room),
    }
}

fn aux_for(
    cfg: &LatticeConfig,
    scan: &PointScan,
    class: EntryClass,
    side: Side,
    prev: &GenerationEntry,
) -> (AuxSides, Option<AuxDeltas>) {
    match class {
        EntryClass::Initial => (AuxSides::uniform(Side::WHOLE), None),
        EntryClass::Stopping if prev.class == EntryClass::Stopping => {
            (AuxSides::uniform(Side::POINT), None)
        }
        _ => {
            let checks = cfg.check_targets().map(|t| inward(scan, prev.side, t));
            let main: [(Side, f64); 5] = if class == EntryClass::Transit {
                let base_tail = scan.tail_of(side);
                cfg.outward_targets()
                    .map(|t| outward(scan, side, base_tail, t))
            } else {
                cfg.inward_targets().map(|t| inward(scan, prev.side, t))
            };
            (
                AuxSides::from_arrays(main.map(|m| m.0), checks.map(|c| c.0)),
                Some(AuxDeltas::from_arrays(
                    main.map(|m| m.1),
                    checks.map(|c| c.1),
                )),
            )
        }
    }
}

fn initial_entry(i: usize, k: i32) -> GenerationEntry {
    GenerationEntry {
        point_index: i,
        k,
        class: EntryClass::Initial,
        side: Side::WHOLE,
        achieved: 0.0,
        deviation: 0.0,
        aux: AuxSides::uniform(Side::WHOLE),
        aux_deltas: None,
    }
}

/// Main cube of generation `k` at one atom under the whole-space reference.
fn classify_whole(cfg: &LatticeConfig, scan: &PointScan, k: i32) -> (EntryClass, Side, f64) {
    if k <= 0 {
        return (EntryClass::Initial, Side::WHOLE, 0.0);
    }
    let target = k as f64 * cfg.a;
    if scan.to_whole <= target {
        return (EntryClass::Stopping, Side::POINT, scan.to_whole);
    }
    match scan.nearest(target, 0.0, f64::INFINITY) {
        Some((s, t)) => (EntryClass::Transit, Side(s), t),
        None => (EntryClass::Stopping, Side::POINT, scan.to_whole),
    }
}

/// Default generation band: from one below the last all-initial generation
/// to the first generation where at least 99% of the atoms have stopped.
fn default_k_range(cfg: &LatticeConfig, to_whole: &[f64]) -> (i32, i32) {
    let n = to_whole.len();
    let mut k = 1;
    loop {
        let stopped = to_whole
            .iter()
            .filter(|&&t| t <= k as f64 * cfg.a)
            .count();
        if stopped as f64 >= 0.99 * n as f64 || k > 10_000 {
            break;
        }
        k += 1;
    }
    (-1, k)
}

/// Builds the lattice. Generations are processed in increasing order since
/// the auxiliary cubes of a stopping entry depend on the previous generation.
pub fn build_lattice(mu: &DiscreteMeasure, cfg: &LatticeConfig) -> Result<GenerationLattice> {
    cfg.validate()?;
    let scans = scan_points(mu, cfg.grid_q);
    build_lattice_with(mu, cfg, &scans)
}

/// Same as [`build_lattice`] with precomputed candidate scans.
pub fn build_lattice_with(
    mu: &DiscreteMeasure,
    cfg: &LatticeConfig,
    scans: &[PointScan],
) -> Result<GenerationLattice> {
    cfg.validate()?;
    let to_whole: Vec<f64> = scans.iter().map(|s| s.to_whole).collect();
    let (k_min, k_max) = cfg.k_range.unwrap_or_else(|| default_k_range(cfg, &to_whole));
    let chain = match &cfg.reference {
        ReferenceScheme::WholeSpace => None,
        ReferenceScheme::Chain { r0 } => Some(ReferenceChain::new(mu, r0, cfg, k_max)?),
    };
    let n = mu.len();
    let mut rows: Vec<Vec<GenerationEntry>> = Vec::new();
    // the generation just below the band: everything is the whole space there
    // under the whole-space reference, or computed from the chain otherwise
    let mut prev: Vec<GenerationEntry> = (0..n).map(|i| initial_entry(i, k_min - 1)).collect();
    if let Some(ch) = &chain {
        prev = (0..n)
            .map(|i| ch.main_entry(mu, cfg, i, k_min - 1))
            .collect::<Result<_>>()?;
    }
    for k in k_min..=k_max {
        let row: Vec<GenerationEntry> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<GenerationEntry> {
                let scan = &scans[i];
                let mut e = match &chain {
                    None => {
                        let (class, side, achieved) = classify_whole(cfg, scan, k);
                        let deviation = if class == EntryClass::Transit {
                            (achieved - k as f64 * cfg.a).abs()
                        } else {
                            0.0
                        };
                        GenerationEntry {
                            point_index: i,
                            k,
                            class,
                            side,
                            achieved,
                            deviation,
                            aux: AuxSides::uniform(Side::WHOLE),
                            aux_deltas: None,
                        }
                    }
                    Some(ch) => ch.main_entry(mu, cfg, i, k)?,
                };
                // collapse persists
                if prev[i].class == EntryClass::Stopping {
                    e.class = EntryClass::Stopping;
                    e.side = Side::POINT;
                    e.deviation = 0.0;
                }
                let (aux, deltas) = aux_for(cfg, scan, e.class, e.side, &prev[i]);
                e.aux = aux;
                e.aux_deltas = deltas;
                Ok(e)
            })
            .collect::<Result<_>>()?;
        prev = row.clone();
        rows.push(row);
    }
    Ok(GenerationLattice {
        config: cfg.clone(),
        k_min,
        k_max,
        n_points: n,
        entries: rows,
        to_whole,
    })
}

/// Reference cubes `R_{-j}` concentric with a doubling `R_0`.
struct ReferenceChain {
    cubes: Vec<Cube>,
}

impl ReferenceChain {
    fn new(mu: &DiscreteMeasure, r0: &Cube, cfg: &LatticeConfig, k_max: i32) -> Result<Self> {
        if !matches!(r0, Cube::Standard { .. }) {
            return Err(Error::Config("reference cube must be standard".into()));
        }
        let mut cubes = vec![r0.clone()];
        let jmax = (k_max.unsigned_abs() as usize + 64).min(4096);
        for j in 1..=jmax {
            let s = find_doubling_outer(mu, r0, j as f64 * cfg.a, cfg.grid_q)?;
            let whole = s.cube.is_whole();
            cubes.push(s.cube);
            if whole {
                break;
            }
        }
        Ok(ReferenceChain { cubes })
    }

    /// Uses the first `R_{-j}` with `x ∈ R_{-j}/2` and `j + k >= 1`. Without
    /// such a bounded reference the entry is the whole space.
    fn main_entry(
        &self,
        mu: &DiscreteMeasure,
        cfg: &LatticeConfig,
        i: usize,
        k: i32,
    ) -> Result<GenerationEntry> {
        let x = mu.point(i);
        for (j, r) in self.cubes.iter().enumerate() {
            if r.is_whole() {
                break;
            }
            if (j as i32) + k < 1 || !r.dilate(0.5).contains_point(x) {
                continue;
            }
            let target = (j as i32 + k) as f64 * cfg.a;
            let s = find_doubling_inner(mu, x, &r.dilate(0.5), target, cfg.grid_q)?;
            let (class, side) = if s.stopping {
                (EntryClass::Stopping, Side::POINT)
            } else {
                (EntryClass::Transit, Side(s.cube.side()))
            };
            return Ok(GenerationEntry {
                point_index: i,
                k,
                class,
                side,
                achieved: s.achieved,
                deviation: if s.stopping { 0.0 } else { s.deviation },
                aux: AuxSides::uniform(Side::WHOLE),
                aux_deltas: None,
            });
        }
        Ok(initial_entry(i, k))
    }
}

/// Sides of the nesting chain of an entry, innermost first, followed by `Q_{x,k-1}`.
fn chain_sides(e: &GenerationEntry, prev: Side) -> [Side; 7] {
    [
        e.side, e.aux.q1, e.aux.q1hat, e.aux.q2, e.aux.q2hat, e.aux.q3, prev,
    ]
}

/// Checks `Q ⊂ Q1 ⊂ Q1hat ⊂ Q2 ⊂ Q2hat ⊂ Q3 ⊂ Q_{x,k-1}` and `2 Q2hat ⊂ Q3`
/// for every transit entry. All these cubes share a center, so inclusion is
/// a comparison of sides.
pub fn verify_nesting(lattice: &GenerationLattice) -> VerificationReport {
    let mut checked = 0usize;
    let mut chain_fail = 0usize;
    let mut double_fail = 0usize;
    let mut chain_witness = serde_json::Value::Null;
    let mut double_witness = serde_json::Value::Null;
    for k in lattice.generations() {
        for e in lattice.row(k) {
            if e.class != EntryClass::Transit {
                continue;
            }
            checked += 1;
            let prev = lattice.entry_or_edge(e.point_index, k - 1).side;
            let c = chain_sides(e, prev);
            let describe = || {
                serde_json::json!({
                    "point_index": e.point_index, "k": k,
                    "sides": c.to_vec(),
                })
            };
            if c.windows(2).any(|w| w[0].0 > w[1].0) {
                chain_fail += 1;
                if chain_witness.is_null() {
                    chain_witness = describe();
                }
            }
            if 2.0 * e.aux.q2hat.0 > e.aux.q3.0 {
                double_fail += 1;
                if double_witness.is_null() {
                    double_witness = describe();
                }
            }
        }
    }
    let witness = serde_json::json!({"chain": chain_witness, "double": double_witness});
    VerificationReport::new(
        "nesting",
        constants([
            ("transit_entries", checked as f64),
            ("chain_violations", chain_fail as f64),
            ("double_violations", double_fail as f64),
        ]),
        witness,
        chain_fail == 0 && double_fail == 0,
        constants([("violations", 0.0)]),
    )
}

/// Results of the regularity scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityStats {
    pub pairs_a: usize,
    pub fail_a: usize,
    pub pairs_b: usize,
    pub fail_b: usize,
    pub pairs_c: usize,
    pub fail_c: usize,
    /// Pairs with `2Q_{x,k} ∩ 2Q_{y,k+m} ≠ ∅` used for the decay exponent.
    pub decay_pairs: usize,
    /// Largest `eta` with `l(Q_{y,k+m}) <= 2^{-eta m} l(Q_{x,k})` over those
    /// pairs; `None` when there are none.
    pub eta_hat: Option<f64>,
}

/// Intersection-implies-inclusion checks for `Q1`, `Q2` and the main cubes,
/// plus the geometric decay exponent of sides across generations.
///
/// When the number of ordered pairs per generation exceeds `sample_pairs`, a
/// seeded random subset of that size is examined instead.
pub fn verify_regularity(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    sample_pairs: usize,
    seed: u64,
) -> (VerificationReport, RegularityStats) {
    let n = lattice.n_points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = RegularityStats {
        pairs_a: 0,
        fail_a: 0,
        pairs_b: 0,
        fail_b: 0,
        pairs_c: 0,
        fail_c: 0,
        decay_pairs: 0,
        eta_hat: None,
    };
    let mut witness = serde_json::Value::Null;
    let pairs: Vec<(usize, usize)> = if n * (n - 1) <= sample_pairs {
        (0..n)
            .flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y)))
            .collect()
    } else {
        (0..sample_pairs)
            .map(|_| {
                let x = rng.random_range(0..n);
                let mut y = rng.random_range(0..n - 1);
                if y >= x {
                    y += 1;
                }
                (x, y)
            })
            .collect()
    };
    let cube = |i: usize, s: Side| s.cube(mu.point(i));
    for k in lattice.generations() {
        for &(x, y) in &pairs {
            let (ex, ey) = (lattice.entry(x, k), lattice.entry(y, k));
            if ex.class == EntryClass::Initial {
                continue;
            }
            let tests = [
                (ex.aux.q1, ey.aux.q1, ey.aux.q1hat, 0),
                (ex.aux.q2, ey.aux.q2, ey.aux.q2hat, 1),
                (
                    ex.side,
                    ey.side,
                    lattice.entry_or_edge(y, k - 1).side,
                    2,
                ),
            ];
            for (sx, sy, big, which) in tests {
                // point cubes at distinct atoms never meet
                if sx.is_point() && sy.is_point() {
                    continue;
                }
                let (cx, cy) = (cube(x, sx), cube(y, sy));
                if !cx.intersects(&cy) {
                    continue;
                }
                let ok = cx.is_subset_of(&cube(y, big));
                let (p, f) = match which {
                    0 => (&mut st.pairs_a, &mut st.fail_a),
                    1 => (&mut st.pairs_b, &mut st.fail_b),
                    _ => (&mut st.pairs_c, &mut st.fail_c),
                };
                *p += 1;
                if !ok {
                    *f += 1;
                    if witness.is_null() {
                        let property = ["a", "b", "c"][which];
                        witness = serde_json::json!({
                            "property": property, "k": k,
                            "x": x, "y": y, "side_x": sx.0, "side_y": sy.0, "outer_y": big.0,
                        });
                    }
                }
            }
        }
    }
    // decay exponent over pairs of transit cubes in different generations
    let mut eta = f64::INFINITY;
    let same: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for k in lattice.generations() {
        for m in 1..=(lattice.k_max - k) {
            for &(x, y) in pairs.iter().chain(&same) {
                for (a, b) in [(x, y), (y, x)] {
                    let (ea, eb) = (lattice.entry(a, k), lattice.entry(b, k + m));
                    if !(ea.side.is_standard() && eb.side.is_standard()) {
                        continue;
                    }
                    let (qa, qb) = (cube(a, Side(2.0 * ea.side.0)), cube(b, Side(2.0 * eb.side.0)));
                    if !qa.intersects(&qb) {
                        continue;
                    }
                    st.decay_pairs += 1;
                    eta = eta.min((ea.side.0 / eb.side.0).log2() / m as f64);
                }
            }
        }
    }
    st.eta_hat = (st.decay_pairs > 0).then_some(eta);
    let pass = st.fail_a == 0
        && st.fail_b == 0
        && st.fail_c == 0
        && st.eta_hat.is_some_and(|e| e > 0.0);
    let report = VerificationReport::new(
        "regularity",
        constants([
            ("pairs_a", st.pairs_a as f64),
            ("violations_a", st.fail_a as f64),
            ("pairs_b", st.pairs_b as f64),
            ("violations_b", st.fail_b as f64),
            ("pairs_c", st.pairs_c as f64),
            ("violations_c", st.fail_c as f64),
            ("decay_pairs", st.decay_pairs as f64),
            ("eta_hat", st.eta_hat.unwrap_or(f64::NAN)),
        ]),
        witness,
        pass,
        constants([("violations", 0.0), ("eta_hat_min", 0.0)]),
    );
    (report, st)
}

/// Per-entry invariants: transit deviations within `2 eps1`, monotone sides,
/// class order `Initial -> Transit -> Stopping`, and doubling transit cubes.
pub fn verify_generation_invariants(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
) -> VerificationReport {
    let eps1 = lattice.config.eps1;
    let mut dev_fail = 0usize;
    let mut mono_fail = 0usize;
    let mut order_fail = 0usize;
    let mut dbl_fail = 0usize;
    let mut min_ratio = f64::INFINITY;
    let rank = |c: EntryClass| match c {
        EntryClass::Initial => 0,
        EntryClass::Transit => 1,
        EntryClass::Stopping => 2,
    };
    let (_, beta) = crate::measure::default_doubling(mu.dim());
    for i in 0..lattice.n_points {
        for k in lattice.generations() {
            let e = lattice.entry(i, k);
            if e.class == EntryClass::Transit {
                if e.deviation > 2.0 * eps1 + 1e-12 {
                    dev_fail += 1;
                }
                let q = e.side.cube(mu.point(i));
                if mu.cube_mass(&q.dilate(2.0)) > beta * mu.cube_mass(&q) {
                    dbl_fail += 1;
                }
            }
            if k > lattice.k_min {
                let p = lattice.entry(i, k - 1);
                if e.side.0 > p.side.0 {
                    mono_fail += 1;
                }
                if rank(e.class) < rank(p.class) {
                    order_fail += 1;
                }
                if e.side.is_standard() && p.side.is_standard() {
                    min_ratio = min_ratio.min(p.side.0 / e.side.0);
                }
            }
        }
    }
    let mut measured = BTreeMap::new();
    measured.insert("max_transit_deviation".into(), lattice.max_transit_deviation());
    measured.insert("eps1".into(), eps1);
    measured.insert("deviation_violations".into(), dev_fail as f64);
    measured.insert("monotonicity_violations".into(), mono_fail as f64);
    measured.insert("class_order_violations".into(), order_fail as f64);
    measured.insert("doubling_violations".into(), dbl_fail as f64);
    measured.insert("min_consecutive_side_ratio".into(), min_ratio);
    VerificationReport::new(
        "generations",
        measured,
        serde_json::Value::Null,
        dev_fail + mono_fail + order_fail + dbl_fail == 0,
        constants([("deviation_factor", 2.0)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_example, ExampleKind};

    fn interval(n: usize) -> DiscreteMeasure {
        generate_example(&ExampleKind::UniformInterval { atoms: n })
            .unwrap()
            .measure
    }

    fn small_config(mu: &DiscreteMeasure) -> LatticeConfig {
        let scans = scan_points(mu, 8);
        LatticeConfig::derive(
            mu.n(),
            3.0,
            0.0,
            measured_eps1(&scans),
            1.0,
            ConstantPolicy::Fixed {
                sigma: 0.3,
                alpha1: 0.6,
                alpha2: 1.5,
                a: 3.0,
            },
            8,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_policy_multiplier_floor() {
        let p = ConstantPolicy::ClosedForm {
            m1: 3.0,
            m2: 10.0,
            m_a: 10.0,
        };
        assert!(LatticeConfig::derive(1.0, 3.0, 0.0, 0.0, 1.0, p, 8).is_err());
        let c = LatticeConfig::derive(1.0, 3.0, 0.01, 0.02, 1.0, ConstantPolicy::closed_form(10.0), 8)
            .unwrap();
        assert!((c.sigma - (1.0 + 2.0 + 144.0 * 3.0)).abs() < 1e-9);
        assert!((c.a - 1000.0 * c.sigma).abs() < 1e-6 * c.a);
        let m = LatticeConfig::derive(1.0, 3.0, 0.0, 0.0, 2.0, ConstantPolicy::default(), 8)
            .unwrap();
        assert!((m.sigma - 0.04).abs() < 1e-12);
        assert!((m.a - 64.0 * m.sigma).abs() < 1e-12);
    }

    #[test]
    fn ordering_enforced() {
        let p = ConstantPolicy::Fixed {
            sigma: 1.0,
            alpha1: 0.5,
            alpha2: 2.0,
            a: 3.0,
        };
        assert!(LatticeConfig::derive(1.0, 1.0, 0.0, 0.0, 1.0, p, 8).is_err());
    }

    #[test]
    fn classes_and_collapse() {
        let mu = interval(64);
        let cfg = small_config(&mu);
        let lat = build_lattice(&mu, &cfg).unwrap();
        for i in 0..mu.len() {
            assert_eq!(lat.entry(i, lat.k_min).class, EntryClass::Initial);
            assert_eq!(lat.entry(i, 0).class, EntryClass::Initial);
            let last = lat.entry(i, lat.k_max);
            if last.class == EntryClass::Stopping {
                assert!(last.side.is_point());
            }
            let mut stopped = false;
            for k in lat.generations() {
                let e = lat.entry(i, k);
                if stopped {
                    assert_eq!(e.class, EntryClass::Stopping);
                }
                stopped |= e.class == EntryClass::Stopping;
            }
        }
        assert!(lat.fraction_stopping(lat.k_max) >= 0.99);
        let rep = verify_generation_invariants(&mu, &lat);
        assert!(rep.pass, "{}", rep.to_json());
    }

    #[test]
    fn nesting_holds_for_transit_entries() {
        let mu = interval(128);
        let mut cfg = small_config(&mu);
        cfg.a = 5.0;
        let lat = build_lattice(&mu, &cfg).unwrap();
        assert!(lat.transit_count() > 0);
        let rep = verify_nesting(&lat);
        assert_eq!(rep.measured_constants["chain_violations"], 0.0, "{}", rep.to_json());
    }

    #[test]
    fn stopping_after_stopping_is_degenerate() {
        let mu = interval(64);
        let lat = build_lattice(&mu, &small_config(&mu)).unwrap();
        let k = lat.k_max;
        for i in 0..mu.len() {
            if lat.entry(i, k - 1).class == EntryClass::Stopping {
                assert_eq!(lat.entry(i, k).aux, AuxSides::uniform(Side::POINT));
            }
        }
    }

    #[test]
    fn side_round_trip() {
        let s = serde_json::to_string(&[Side(1.5), Side::WHOLE, Side::POINT]).unwrap();
        assert_eq!(s, "[1.5,\"whole\",0.0]");
        let back: Vec<Side> = serde_json::from_str(&s).unwrap();
        assert!(back[1].is_whole());
    }

    #[test]
    fn chain_reference_branch() {
        // a wide support: reference chain about a central atom
        let mu = interval(64);
        let c = mu.point(32).to_vec();
        let mut cfg = small_config(&mu);
        cfg.reference = ReferenceScheme::Chain {
            r0: Cube::with_side(&c, 0.1),
        };
        cfg.k_range = Some((-1, 3));
        let lat = build_lattice(&mu, &cfg).unwrap();
        let mut transit = 0;
        for i in 0..mu.len() {
            let mut last = f64::INFINITY;
            for k in lat.generations() {
                let e = lat.entry(i, k);
                if e.class == EntryClass::Transit {
                    transit += 1;
                    assert!(e.deviation <= 2.0 * cfg.eps1 + 1e-9);
                }
                if e.class != EntryClass::Initial {
                    assert!(e.side.0 <= last + 1e-12);
                    last = e.side.0;
                }
            }
        }
        assert!(transit > 0);
    }
}
