//! Littlewood-Paley pieces `D_k = S_k - S_{k-1}`, the almost-identity
//! `Phi_N = sum_k D_k^N D_k`, their norms and decay, quasi-orthogonality,
//! square functions, RBMO estimates, the discrete Carleson estimate and
//! maximal operators.
//!
//! Everything lives on the finite band `[k_min, k_max]` of the lattice.
//! `S_{k_min - 1} = 0`, so `sum_k D_k = S_{k_max}`, which plays the role of
//! the identity.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi::AoiFamily;
use crate::error::{Error, Result};
use crate::geometry::{delta, CenterProfile};
use crate::lattice::{EntryClass, GenerationLattice};
use crate::linalg::{action_norm, inner, linear_fit, operator_norm, Chain, LinearFit, OperatorMatrix};
use crate::measure::{euclid_dist, sup_dist, Cube, DiscreteMeasure};

/// Tolerance below which a row sum or norm counts as zero.
const ZERO_TOL: f64 = 1e-9;

pub struct LpDecomposition {
    pub k_min: i32,
    pub k_max: i32,
    pub weights: Vec<f64>,
    /// `D_k` for `k` in the band.
    pub d: Vec<OperatorMatrix>,
    /// `S_k` action matrices for `k` in the band.
    pub s_action: Vec<Array2<f64>>,
    /// `S_{k_max}` as an action matrix.
    pub i_band: Array2<f64>,
    /// `layers[t] = sum_j (D_{j+t} D_j + D_j D_{j+t})` (action matrices;
    /// `layers[0] = sum_j D_j^2`). `Phi_N` is the sum of the first `N+1`.
    layers: Vec<Array2<f64>>,
    /// `||E_t||` for `t` in `-(K-1)..=(K-1)`.
    pub e_norms: Vec<(i32, f64)>,
    /// Chosen `N`.
    pub n: usize,
    /// `||I_band - Phi_N|| <= 1/2` at the chosen `N`.
    pub certified: bool,
    /// `(N, ||I_band - Phi_N||)` for `N = 1..=N_max`.
    pub norm_curve: Vec<(usize, f64)>,
    /// Generations where `D_k 1 != 0`.
    pub exceptional: Vec<i32>,
}

impl LpDecomposition {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn generations(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    fn idx(&self, k: i32) -> Option<usize> {
        (k >= self.k_min && k <= self.k_max).then(|| (k - self.k_min) as usize)
    }

    pub fn d(&self, k: i32) -> Option<&OperatorMatrix> {
        self.idx(k).map(|i| &self.d[i])
    }

    pub fn s(&self, k: i32) -> Option<&Array2<f64>> {
        self.idx(k).map(|i| &self.s_action[i])
    }

    /// Generations with a nonzero `D_k`.
    pub fn active(&self) -> Vec<i32> {
        self.generations()
            .filter(|&k| !self.d(k).unwrap().is_zero())
            .collect()
    }

    /// `D_k^N = sum_{|j-k| <= N} D_j` as an action matrix.
    pub fn d_n(&self, k: i32, n: usize) -> Array2<f64> {
        let size = self.len();
        let mut acc = Array2::zeros((size, size));
        for j in (k - n as i32)..=(k + n as i32) {
            if let Some(d) = self.d(j) {
                acc += &d.action_matrix();
            }
        }
        acc
    }

    /// `Phi_N` as an action matrix.
    pub fn phi(&self, n: usize) -> Array2<f64> {
        let size = self.len();
        let mut acc = Array2::zeros((size, size));
        for layer in self.layers.iter().take(n + 1) {
            acc += layer;
        }
        acc
    }

    /// `I_band - Phi_N` as an action matrix.
    pub fn residual(&self, n: usize) -> Array2<f64> {
        &self.i_band - &self.phi(n)
    }

    /// `D_k f` for every band generation.
    pub fn apply_all(&self, f: &[f64]) -> Vec<Vec<f64>> {
        use crate::linalg::LinearOp;
        self.d.par_iter().map(|d| d.apply(f)).collect()
    }

    /// `S_{k_max} f`.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        self.i_band.dot(&ndarray::ArrayView1::from(f)).to_vec()
    }

    pub fn summary(&self) -> LpSummary {
        LpSummary {
            k_min: self.k_min,
            k_max: self.k_max,
            n: self.n,
            certified: self.certified,
            i_minus_phi_norm: self
                .norm_curve
                .iter()
                .find(|(n, _)| *n == self.n)
                .map(|p| p.1)
                .unwrap_or(f64::NAN),
            norm_curve: self.norm_curve.clone(),
            e_norms: self.e_norms.clone(),
            exceptional: self.exceptional.clone(),
            active: self.active(),
        }
    }
}

/// Serializable description of a decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LpSummary {
    pub k_min: i32,
    pub k_max: i32,
    pub n: usize,
    pub certified: bool,
    pub i_minus_phi_norm: f64,
    pub norm_curve: Vec<(usize, f64)>,
    pub e_norms: Vec<(i32, f64)>,
    pub exceptional: Vec<i32>,
    pub active: Vec<i32>,
}

/// Assembles `D_k` over the band and picks the smallest `N <= n_max` with
/// `||I_band - Phi_N|| <= 1/2`. When none qualifies, `N = n_max` and
/// `certified` is false.
pub fn build_decomposition(family: &AoiFamily, n_max: usize, seed: u64) -> Result<LpDecomposition> {
    if family.ops.is_empty() {
        return Err(Error::InvalidArgument("empty generation band".into()));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("N_max must be positive".into()));
    }
    let w = family.ops[0].s.weights.to_vec();
    let size = w.len();
    let mut d = Vec::with_capacity(family.ops.len());
    let mut prev = OperatorMatrix::zeros(&w);
    for op in &family.ops {
        d.push(op.s.sub(&prev));
        prev = op.s.clone();
    }
    let s_action: Vec<Array2<f64>> = family.ops.par_iter().map(|o| o.s.action_matrix()).collect();
    let i_band = s_action.last().unwrap().clone();
    let acts: Vec<Array2<f64>> = d.par_iter().map(|x| x.action_matrix()).collect();
    let kk = acts.len();
    let zero: Vec<bool> = d.iter().map(|x| x.is_zero()).collect();

    // E_t = sum_j D_{j+t} D_j; layers[t] = E_t + E_{-t}
    let products = |t: usize, forward: bool| -> Array2<f64> {
        (0..kk.saturating_sub(t))
            .into_par_iter()
            .filter(|&j| !zero[j] && !zero[j + t])
            .map(|j| {
                if forward {
                    acts[j + t].dot(&acts[j])
                } else {
                    acts[j].dot(&acts[j + t])
                }
            })
            .reduce(|| Array2::zeros((size, size)), |a, b| a + b)
    };
    let mut layers = Vec::with_capacity(kk);
    let mut e_norms = Vec::new();
    for t in 0..kk {
        let plus = products(t, true);
        let np = action_norm(&plus, &w, seed ^ (t as u64 * 2 + 1))?;
        if t == 0 {
            e_norms.push((0, np));
            layers.push(plus);
        } else {
            let minus = products(t, false);
            let nm = action_norm(&minus, &w, seed ^ (t as u64 * 2 + 2))?;
            e_norms.push((t as i32, np));
            e_norms.push((-(t as i32), nm));
            layers.push(plus + minus);
        }
    }
    e_norms.sort_by_key(|p| p.0);

    let exceptional: Vec<i32> = d
        .iter()
        .zip(family.generations())
        .filter(|(x, _)| x.apply_one().iter().any(|v| v.abs() > ZERO_TOL))
        .map(|(_, k)| k)
        .collect();

    let mut decomp = LpDecomposition {
        k_min: family.k_min,
        k_max: family.k_max,
        weights: w,
        d,
        s_action,
        i_band,
        layers,
        e_norms,
        n: n_max,
        certified: false,
        norm_curve: Vec::new(),
        exceptional,
    };
    let curve: Vec<(usize, f64)> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let r = decomp.residual(n);
            action_norm(&r, &decomp.weights, seed ^ 0x5eed ^ n as u64).map(|v| (n, v))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(&(n, _)) = curve.iter().find(|(_, v)| *v <= 0.5) {
        decomp.n = n;
        decomp.certified = true;
    }
    decomp.norm_curve = curve;
    Ok(decomp)
}

/// Exact identities of the decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LpIdentities {
    /// `max |sum_k D_k - S_{k_max}|` over action entries.
    pub telescoping_error: f64,
    /// Largest `|D_k 1|` over generations other than the exceptional ones.
    pub in_band_row_sum: f64,
    /// Largest kernel asymmetry `|d_k(x,y) - d_k(y,x)|`.
    pub asymmetry: f64,
    pub exceptional: Vec<i32>,
}

pub fn lp_identities(decomp: &LpDecomposition) -> LpIdentities {
    let size = decomp.len();
    let mut sum = Array2::<f64>::zeros((size, size));
    for d in &decomp.d {
        sum += &d.action_matrix();
    }
    let telescoping_error = (&sum - &decomp.i_band)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let in_band_row_sum = decomp
        .generations()
        .filter(|k| !decomp.exceptional.contains(k))
        .map(|k| {
            decomp
                .d(k)
                .unwrap()
                .apply_one()
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        })
        .fold(0.0, f64::max);
    let asymmetry = decomp.d.iter().map(|d| d.asymmetry()).fold(0.0, f64::max);
    LpIdentities {
        telescoping_error,
        in_band_row_sum,
        asymmetry,
        exceptional: decomp.exceptional.clone(),
    }
}

/// A geometric decay fit of `log2` norms against a separation index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    /// Raw samples `(j, k, norm)`.
    pub samples: Vec<(i32, i32, f64)>,
    /// Largest norm at each separation `|j - k|`, zero envelopes dropped.
    pub envelope: Vec<(usize, f64)>,
    /// Separations where every sample vanished.
    pub vanishing: Vec<usize>,
    pub fit: Option<LinearFit>,
    /// `-slope` of the fit, the measured decay exponent.
    pub rate: f64,
}

impl DecayFit {
    pub fn from_samples(samples: Vec<(i32, i32, f64)>) -> DecayFit {
        let top = samples.iter().map(|s| s.2).fold(0.0, f64::max);
        let mut env: std::collections::BTreeMap<usize, f64> = Default::default();
        for &(j, k, v) in &samples {
            let e = env.entry(j.abs_diff(k) as usize).or_insert(0.0);
            *e = e.max(v);
        }
        let floor = top * 1e-13;
        let (envelope, vanishing): (Vec<_>, Vec<_>) =
            env.into_iter().partition(|&(_, v)| v > floor && v > 0.0);
        let x: Vec<f64> = envelope.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = envelope.iter().map(|p| p.1.log2()).collect();
        let fit = linear_fit(&x, &y);
        DecayFit {
            samples,
            rate: fit.map(|f| -f.slope).unwrap_or(f64::NAN),
            envelope,
            vanishing: vanishing.into_iter().map(|p| p.0).collect(),
            fit,
        }
    }

    /// Slope negative with `R^2` at least `r2`.
    pub fn decays(&self, r2: f64) -> bool {
        self.fit
            .map(|f| f.slope < 0.0 && f.r_squared >= r2)
            .unwrap_or(false)
    }
}

/// `||D_j D_k||` for all active pairs `j <= k`, fitted against `|j - k|`.
pub fn decay_fit(decomp: &LpDecomposition, seed: u64) -> Result<DecayFit> {
    let act = decomp.active();
    let pairs: Vec<(i32, i32)> = act
        .iter()
        .flat_map(|&j| act.iter().filter(move |&&k| k >= j).map(move |&k| (j, k)))
        .collect();
    let samples = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(j, k))| {
            let chain = Chain {
                factors: vec![decomp.d(j).unwrap(), decomp.d(k).unwrap()],
            };
            operator_norm(&chain, seed.wrapping_add(i as u64), 1e-8, 5_000).map(|v| (j, k, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayFit::from_samples(samples))
}

/// Smallest `C` with `||E_t|| <= C max(|t|,1) 2^{-|t| rate}`.
pub fn e_envelope_constant(decomp: &LpDecomposition, rate: f64) -> f64 {
    decomp
        .e_norms
        .iter()
        .map(|&(t, v)| v * 2f64.powf(t.abs() as f64 * rate) / (t.unsigned_abs().max(1) as f64))
        .fold(0.0, f64::max)
}

/// Seeded Gaussian test functions projected onto the band.
pub fn random_band_family(decomp: &LpDecomposition, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            (0..decomp.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    raw.par_iter().map(|g| decomp.project(g)).collect()
}

/// `||f||_{L^2(mu)}^2`.
fn energy(w: &[f64], f: &[f64]) -> f64 {
    inner(w, f, f)
}

/// `sum_k ||D_k f||^2 / ||f||^2`, `None` for a zero `f`.
pub fn lp_ratio(decomp: &LpDecomposition, f: &[f64]) -> Option<f64> {
    let w = &decomp.weights;
    let nf = energy(w, f);
    if nf <= 0.0 {
        return None;
    }
    let s: f64 = decomp.apply_all(f).iter().map(|g| energy(w, g)).sum();
    Some(s / nf)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuasiOrthogonality {
    pub count: usize,
    pub skipped: usize,
    pub min: f64,
    pub max: f64,
    pub ratios: Vec<f64>,
}

impl QuasiOrthogonality {
    pub fn spread(&self) -> f64 {
        self.max / self.min
    }
}

pub fn quasi_orthogonality(decomp: &LpDecomposition, family: &[Vec<f64>]) -> QuasiOrthogonality {
    let vals: Vec<Option<f64>> = family.iter().map(|f| lp_ratio(decomp, f)).collect();
    let ratios: Vec<f64> = vals.iter().flatten().copied().collect();
    QuasiOrthogonality {
        count: ratios.len(),
        skipped: vals.len() - ratios.len(),
        min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratios,
    }
}

/// Per-generation energies `||D_k f||^2`.
pub fn energy_table(decomp: &LpDecomposition, f: &[f64]) -> Vec<(i32, f64)> {
    decomp
        .generations()
        .zip(decomp.apply_all(f))
        .map(|(k, g)| (k, energy(&decomp.weights, &g)))
        .collect()
}

/// Fraction of the energy of `D_{k0} g` carried by generations farther
/// than `3N` from `k0`.
pub fn off_diagonal_fraction(decomp: &LpDecomposition, k0: i32, g: &[f64]) -> Option<f64> {
    use crate::linalg::LinearOp;
    let f = decomp.d(k0)?.apply(g);
    let table = energy_table(decomp, &f);
    let total: f64 = table.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return None;
    }
    let far: f64 = table
        .iter()
        .filter(|(k, _)| k.abs_diff(k0) as usize > 3 * decomp.n)
        .map(|p| p.1)
        .sum();
    Some(far / total)
}

/// Weighted `l^p` norm.
pub fn lp_norm(w: &[f64], f: &[f64], p: f64) -> f64 {
    w.iter()
        .zip(f)
        .map(|(w, v)| w * v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// `(||f||_p, ||(sum_k |D_k f|^2)^{1/2}||_p)`.
pub fn square_function_lp(decomp: &LpDecomposition, f: &[f64], p: f64) -> Result<(f64, f64)> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in (1, inf)")));
    }
    let parts = decomp.apply_all(f);
    let sq: Vec<f64> = (0..decomp.len())
        .map(|i| parts.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt())
        .collect();
    Ok((lp_norm(&decomp.weights, f, p), lp_norm(&decomp.weights, &sq, p)))
}

/// A deterministic family of doubling cubes and nested doubling pairs.
#[derive(Clone, Debug)]
pub struct CubeBattery {
    pub cubes: Vec<Cube>,
    pub members: Vec<Vec<usize>>,
    pub mass: Vec<f64>,
    /// `(inner, outer, delta(inner, outer))`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl CubeBattery {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }
}

fn members_of(mu: &DiscreteMeasure, q: &Cube) -> Vec<usize> {
    (0..mu.len()).filter(|&i| q.contains_point(mu.point(i))).collect()
}

/// Transit lattice cubes, their doubling dilations and concentric nested
/// pairs, plus `extra_pairs` sampled non-concentric nested pairs.
pub fn cube_battery(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    extra_pairs: usize,
    seed: u64,
) -> Result<CubeBattery> {
    use rand::Rng;
    let mut per_center: Vec<Vec<f64>> = vec![Vec::new(); mu.len()];
    for k in lattice.generations() {
        for e in lattice.row(k) {
            if e.class == EntryClass::Transit {
                per_center[e.point_index].push(e.side.0);
            }
        }
    }
    let mut cubes = Vec::new();
    let mut centers = Vec::new();
    let mut by_center: Vec<Vec<(f64, usize)>> = vec![Vec::new(); mu.len()];
    for (x, sides) in per_center.iter_mut().enumerate() {
        let prof = CenterProfile::new(mu, mu.point(x));
        let mut cand: Vec<f64> = Vec::new();
        for &s in sides.iter() {
            cand.push(s);
            for r in [1.25, 1.5, 2.0, 3.0] {
                if prof.is_doubling(s * r, mu.dim()) {
                    cand.push(s * r);
                }
            }
        }
        cand.sort_by(f64::total_cmp);
        cand.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        for s in cand {
            by_center[x].push((s, cubes.len()));
            cubes.push(Cube::with_side(mu.point(x), s));
            centers.push(x);
        }
    }
    if cubes.is_empty() {
        return Err(Error::InvalidArgument(
            "the lattice has no transit cubes to build a battery from".into(),
        ));
    }
    let members: Vec<Vec<usize>> = cubes.par_iter().map(|q| members_of(mu, q)).collect();
    let mass: Vec<f64> = members
        .iter()
        .map(|m| m.iter().map(|&i| mu.weight(i)).sum())
        .collect();
    let mut pairs = Vec::new();
    for (x, list) in by_center.iter().enumerate() {
        let prof = CenterProfile::new(mu, mu.point(x));
        for (a, &(sa, ia)) in list.iter().enumerate() {
            for &(sb, ib) in &list[a + 1..] {
                let d = prof.tail(sa / 2.0) - prof.tail(sb / 2.0);
                pairs.push((ia, ib, d.max(0.0)));
            }
        }
    }
    // non-concentric nested pairs
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tries = 0;
    let mut found = 0;
    while found < extra_pairs && tries < extra_pairs * 50 {
        tries += 1;
        let a = rng.random_range(0..cubes.len());
        let b = rng.random_range(0..cubes.len());
        if a == b || centers[a] == centers[b] || mass[a] <= 0.0 {
            continue;
        }
        if cubes[a].is_subset_of(&cubes[b]) {
            let d = delta(mu, &cubes[a], &cubes[b])?.value;
            pairs.push((a, b, d));
            found += 1;
        }
    }
    Ok(CubeBattery {
        cubes,
        members,
        mass,
        pairs,
    })
}

/// Sampled RBMO seminorm: the larger of the mean oscillation over doubling
/// cubes and the mean transitions over nested doubling pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RbmoEstimate {
    pub norm: f64,
    pub oscillation_part: f64,
    pub transition_part: f64,
    pub oscillation_witness: Option<Cube>,
    pub transition_witness: Option<(Cube, Cube)>,
}

fn mean_on(mu: &DiscreteMeasure, members: &[usize], mass: f64, f: &[f64]) -> f64 {
    members.iter().map(|&i| mu.weight(i) * f[i]).sum::<f64>() / mass
}

pub fn rbmo_norm(mu: &DiscreteMeasure, f: &[f64], battery: &CubeBattery) -> Result<RbmoEstimate> {
    if battery.is_empty() {
        return Err(Error::InvalidArgument("empty cube battery".into()));
    }
    let means: Vec<f64> = (0..battery.len())
        .map(|q| {
            if battery.mass[q] > 0.0 {
                mean_on(mu, &battery.members[q], battery.mass[q], f)
            } else {
                0.0
            }
        })
        .collect();
    let mut osc = (0.0_f64, None);
    for q in 0..battery.len() {
        if battery.mass[q] <= 0.0 {
            continue;
        }
        let v = battery.members[q]
            .iter()
            .map(|&i| mu.weight(i) * (f[i] - means[q]).abs())
            .sum::<f64>()
            / battery.mass[q];
        if v > osc.0 {
            osc = (v, Some(q));
        }
    }
    let mut tr = (0.0_f64, None);
    for &(a, b, d) in &battery.pairs {
        if battery.mass[a] <= 0.0 {
            continue;
        }
        let v = (means[a] - means[b]).abs() / (1.0 + d);
        if v > tr.0 {
            tr = (v, Some((a, b)));
        }
    }
    Ok(RbmoEstimate {
        norm: osc.0.max(tr.0),
        oscillation_part: osc.0,
        transition_part: tr.0,
        oscillation_witness: osc.1.map(|q| battery.cubes[q].clone()),
        transition_witness: tr
            .1
            .map(|(a, b)| (battery.cubes[a].clone(), battery.cubes[b].clone())),
    })
}

/// `log(resolution + |x - x0|)`, a standard unbounded RBMO function.
pub fn log_distance(mu: &DiscreteMeasure, x0: &[f64]) -> Vec<f64> {
    (0..mu.len())
        .map(|i| (mu.resolution() + euclid_dist(mu.point(i), x0)).ln())
        .collect()
}

/// Largest `sum_{j >= k - n0} ||D_j f||^2_{L^2(mu|Q)} / (||f||_*^2 mu(Q))`
/// over transit cubes `Q = Q_{x,k}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RbmoSquare {
    pub n0: usize,
    pub max_ratio: f64,
    pub cubes: usize,
    pub witness: Option<(usize, i32)>,
}

pub fn verify_rbmo_square(
    mu: &DiscreteMeasure,
    decomp: &LpDecomposition,
    lattice: &GenerationLattice,
    f: &[f64],
    rbmo: f64,
    n0: usize,
) -> RbmoSquare {
    let parts = decomp.apply_all(f);
    let cells: Vec<(usize, i32)> = lattice
        .generations()
        .flat_map(|k| {
            lattice
                .row(k)
                .iter()
                .filter(|e| e.class == EntryClass::Transit)
                .map(move |e| (e.point_index, k))
        })
        .collect();
    let best = cells
        .par_iter()
        .map(|&(x, k)| {
            let q = lattice.entry(x, k).side.cube(mu.point(x));
            let mem = members_of(mu, &q);
            let mass: f64 = mem.iter().map(|&i| mu.weight(i)).sum();
            let mut num = 0.0;
            for (j, g) in decomp.generations().zip(&parts) {
                if j >= k - n0 as i32 {
                    num += mem.iter().map(|&i| mu.weight(i) * g[i] * g[i]).sum::<f64>();
                }
            }
            let den = rbmo * rbmo * mass;
            let r = if num == 0.0 { 0.0 } else { num / den };
            (r, (x, k))
        })
        .reduce(
            || (0.0, (usize::MAX, 0)),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    RbmoSquare {
        n0,
        max_ratio: best.0,
        cubes: cells.len(),
        witness: (best.1 .0 != usize::MAX).then_some(best.1),
    }
}

/// Densities `a_k = (D_k^N g)^2` for every band generation.
pub fn paraproduct_densities(decomp: &LpDecomposition, g: &[f64]) -> Vec<Vec<f64>> {
    let gv = ndarray::ArrayView1::from(g);
    decomp
        .generations()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k| decomp.d_n(k, decomp.n).dot(&gv).mapv(|v| v * v).to_vec())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlesonCheck {
    /// `max_Q sum_{j >= k-2} nu_j(Q) / mu(Q)` over transit `Q = Q_{x,k}`.
    pub c9: f64,
    /// `max_f sum_k ||S_k f||^2_{L^2(nu_k)} / (C9 ||f||^2)` over the family.
    pub max_ratio: f64,
    /// The same supremum over all `f`: the top eigenvalue of
    /// `sum_k S_k^* a_k S_k` on `L^2(mu)`, divided by `C9`.
    pub sup_ratio: f64,
    pub trivial: bool,
    pub c9_witness: Option<(usize, i32)>,
}

/// Carleson packing constant of the densities `a` and the resulting
/// embedding ratio over `f_family`.
pub fn carleson_check(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    decomp: &LpDecomposition,
    a: &[Vec<f64>],
    f_family: &[Vec<f64>],
) -> CarlesonCheck {
    let ks: Vec<i32> = decomp.generations().collect();
    let mut c9 = (0.0_f64, None);
    for k in lattice.generations() {
        for e in lattice.row(k) {
            if e.class != EntryClass::Transit {
                continue;
            }
            let q = e.side.cube(mu.point(e.point_index));
            let mem = members_of(mu, &q);
            let mass: f64 = mem.iter().map(|&i| mu.weight(i)).sum();
            let nu: f64 = ks
                .iter()
                .zip(a)
                .filter(|(&j, _)| j >= k - 2)
                .map(|(_, ak)| mem.iter().map(|&i| mu.weight(i) * ak[i]).sum::<f64>())
                .sum();
            let r = nu / mass;
            if r > c9.0 {
                c9 = (r, Some((e.point_index, k)));
            }
        }
    }
    if c9.0 == 0.0 {
        return CarlesonCheck {
            c9: 0.0,
            max_ratio: 0.0,
            sup_ratio: 0.0,
            trivial: true,
            c9_witness: None,
        };
    }
    let w = mu.weights();
    let max_ratio = f_family
        .par_iter()
        .map(|f| {
            let fv = ndarray::ArrayView1::from(f.as_slice());
            let nf = energy(w, f);
            if nf == 0.0 {
                return 0.0;
            }
            let lhs: f64 = decomp
                .s_action
                .iter()
                .zip(a)
                .map(|(s, ak)| {
                    let sf = s.dot(&fv);
                    (0..w.len()).map(|i| w[i] * ak[i] * sf[i] * sf[i]).sum::<f64>()
                })
                .sum();
            lhs / (c9.0 * nf)
        })
        .reduce(|| 0.0, f64::max);
    // S_k^* a_k S_k has action matrix W^{-1} S_k^T W a_k S_k
    let n = w.len();
    let mut gram = Array2::<f64>::zeros((n, n));
    for (s, ak) in decomp.s_action.iter().zip(a) {
        let mut left = s.t().to_owned();
        for (j, mut col) in left.columns_mut().into_iter().enumerate() {
            col *= w[j] * ak[j];
        }
        gram += &left.dot(s);
    }
    for (i, mut row) in gram.rows_mut().into_iter().enumerate() {
        row /= w[i];
    }
    let top = action_norm(&gram, w, 0).unwrap_or(f64::NAN);
    CarlesonCheck {
        c9: c9.0,
        max_ratio,
        sup_ratio: top / c9.0,
        trivial: false,
        c9_witness: c9.1,
    }
}

/// `M_(2) f` and `M_S f` at every atom.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalValues {
    pub m2: Vec<f64>,
    pub ms: Vec<f64>,
    /// `max M_S f / M_(2) f` over atoms where `M_(2) f > 0`.
    pub ratio: f64,
    pub witness: Option<usize>,
}

/// Battery approximations of the two maximal operators. Cubes for `M_(2)`:
/// lattice cubes dilated by `1, 1.5, 2, 4`, and cubes at every atom with
/// sides on a `sqrt 2` grid from the resolution to twice the diameter.
pub fn maximal_ops(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    decomp: &LpDecomposition,
    f: &[f64],
) -> MaximalValues {
    let n = mu.len();
    let absf: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let top = 2.0 * mu.diameter().max(mu.resolution());
    let mut grid = Vec::new();
    let mut s = mu.resolution();
    while s <= 2.0 * top {
        grid.push(s);
        s *= std::f64::consts::SQRT_2;
    }
    let m2 = (0..n)
        .into_par_iter()
        .map(|x| {
            let c = mu.point(x);
            let mut order: Vec<(f64, usize)> =
                (0..n).map(|i| (sup_dist(c, mu.point(i)), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut sides = grid.clone();
            for k in lattice.generations() {
                let e = lattice.entry(x, k);
                if e.side.is_standard() {
                    for r in [1.0, 1.5, 2.0, 4.0] {
                        sides.push(e.side.0 * r);
                    }
                }
            }
            sides.sort_by(f64::total_cmp);
            let mut local = vec![0.0_f64; n];
            let mut int = 0.0;
            let mut p = 0;
            let mut mass2 = 0.0;
            let mut p2 = 0;
            for side in sides {
                let h = side / 2.0;
                while p < n && order[p].0 <= h {
                    int += mu.weight(order[p].1) * absf[order[p].1];
                    p += 1;
                }
                while p2 < n && order[p2].0 <= 2.0 * h {
                    mass2 += mu.weight(order[p2].1);
                    p2 += 1;
                }
                if mass2 > 0.0 {
                    let v = int / mass2;
                    for &(_, i) in &order[..p] {
                        local[i] = local[i].max(v);
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0.0; n],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        );
    let fv = ndarray::ArrayView1::from(f);
    let sf: Vec<Array1<f64>> = decomp.s_action.iter().map(|s| s.dot(&fv)).collect();
    let ms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best = 0.0_f64;
            for (k, sk) in decomp.generations().zip(&sf) {
                for z in 0..n {
                    let e = lattice.entry_or_edge(z, k);
                    let inside = if e.side.is_whole() {
                        true
                    } else if e.side.is_standard() {
                        sup_dist(mu.point(x), mu.point(z)) < e.side.half()
                    } else {
                        false
                    };
                    if inside {
                        best = best.max(sk[z].abs());
                    }
                }
            }
            best
        })
        .collect();
    let mut ratio = 0.0_f64;
    let mut witness = None;
    for i in 0..n {
        if m2[i] > 0.0 {
            let r = ms[i] / m2[i];
            if r > ratio {
                ratio = r;
                witness = Some(i);
            }
        }
    }
    MaximalValues {
        m2,
        ms,
        ratio,
        witness,
    }
}
