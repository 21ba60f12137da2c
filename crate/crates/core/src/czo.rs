//! Calderón–Zygmund kernels on atomic measures: truncations, the T(1)
//! test battery, almost-orthogonality of `D_k T D_j`, Hörmander constants
//! of kernel matrices and the paraproduct `U_{m,b}`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EntryClass, GenerationLattice};
use crate::linalg::{action_norm, norm_l2, ActionOp, LinearOp, OperatorMatrix};
use crate::lp::{cube_battery, lp_norm, rbmo_norm, CubeBattery, DecayFit, LpDecomposition};
use crate::measure::{euclid_dist, Cube, DiscreteMeasure};
use crate::report::{constants, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// `Re 1/(z - w)` with points read as complex numbers.
    CauchyRe,
    /// `Im 1/(z - w)`.
    CauchyIm,
    /// Component `component` of `(x - y)/|x - y|^{n+1}`.
    Riesz { component: usize },
    /// `1/(1 + |x - y|^n)`: bounded, symmetric.
    TestBounded,
    /// `|x - y|^{-n}`: size and smoothness hold, cancellation does not.
    Singular,
}

impl KernelKind {
    pub fn from_name(name: &str) -> Result<KernelKind> {
        Ok(match name {
            "cauchy-re" | "cauchy_re" => KernelKind::CauchyRe,
            "cauchy-im" | "cauchy_im" => KernelKind::CauchyIm,
            "riesz" | "riesz-0" => KernelKind::Riesz { component: 0 },
            "riesz-1" => KernelKind::Riesz { component: 1 },
            "test-bounded" | "test_bounded" => KernelKind::TestBounded,
            "singular" => KernelKind::Singular,
            _ => return Err(Error::InvalidArgument(format!("unknown kernel `{name}`"))),
        })
    }

    pub fn is_antisymmetric(self) -> bool {
        matches!(
            self,
            KernelKind::CauchyRe | KernelKind::CauchyIm | KernelKind::Riesz { .. }
        )
    }
}

/// A kernel with its declared size and smoothness constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CZKernel {
    pub kind: KernelKind,
    /// Homogeneity exponent.
    pub n: f64,
    pub c1: f64,
    pub delta: f64,
    pub c2: f64,
}

impl CZKernel {
    /// Built-in kernel with constants from the mean value theorem on the
    /// region `|x - x'| <= |x - y|/2`. Cauchy kernels are one-dimensional.
    pub fn builtin(kind: KernelKind, n: f64) -> CZKernel {
        let n = match kind {
            KernelKind::CauchyRe | KernelKind::CauchyIm => 1.0,
            _ => n,
        };
        let lip = 2f64.powf(n + 1.0);
        let (c1, c2) = match kind {
            KernelKind::CauchyRe | KernelKind::CauchyIm => (1.0, 4.0),
            KernelKind::Riesz { .. } => (1.0, 2.0 * (n + 2.0) * lip),
            KernelKind::TestBounded | KernelKind::Singular => (1.0, 2.0 * n * lip),
        };
        CZKernel {
            kind,
            n,
            c1,
            delta: 1.0,
            c2,
        }
    }

    /// `k(x, y)` for `x != y`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d0 = x[0] - y[0];
        let d1 = if x.len() > 1 { x[1] - y[1] } else { 0.0 };
        let rest: f64 = x.iter().zip(y).skip(2).map(|(a, b)| (a - b) * (a - b)).sum();
        let r2 = d0 * d0 + d1 * d1 + rest;
        match self.kind {
            KernelKind::CauchyRe => d0 / r2,
            KernelKind::CauchyIm => -d1 / r2,
            KernelKind::Riesz { component } => {
                let dc = x.get(component).copied().unwrap_or(0.0)
                    - y.get(component).copied().unwrap_or(0.0);
                dc / r2.sqrt().powf(self.n + 1.0)
            }
            KernelKind::TestBounded => 1.0 / (1.0 + r2.sqrt().powf(self.n)),
            KernelKind::Singular => r2.sqrt().powf(-self.n),
        }
    }
}

/// Measured size and smoothness constants on sampled configurations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelConstants {
    pub c1: f64,
    pub c2: f64,
    pub samples: usize,
}

/// Samples atom pairs `(x, y)` and perturbations `x'` with
/// `|x - x'| <= |x - y|/2`.
pub fn measure_kernel_constants(
    mu: &DiscreteMeasure,
    kernel: &CZKernel,
    samples: usize,
    seed: u64,
) -> (VerificationReport, KernelConstants) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mu.len();
    let dim = mu.dim();
    let mut c1 = 0.0_f64;
    let mut c2 = 0.0_f64;
    let mut taken = 0;
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let (x, y) = (mu.point(i), mu.point(j));
        let r = euclid_dist(x, y);
        c1 = c1.max(kernel.eval(x, y).abs() * r.powf(kernel.n));
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dn == 0.0 {
            continue;
        }
        let h = rng.random_range(0.0..=0.5) * r;
        if h == 0.0 {
            continue;
        }
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + h * d / dn).collect();
        let diff = (kernel.eval(x, y) - kernel.eval(&xp, y)).abs()
            + (kernel.eval(y, x) - kernel.eval(y, &xp)).abs();
        c2 = c2.max(diff * r.powf(kernel.n + kernel.delta) / h.powf(kernel.delta));
        taken += 1;
    }
    let pass = c1 <= kernel.c1 * (1.0 + 1e-9) && c2 <= kernel.c2 * (1.0 + 1e-9);
    let rep = VerificationReport::new(
        "kernel_size_smoothness",
        constants([
            ("C1_measured", c1),
            ("C2_measured", c2),
            ("C1_declared", kernel.c1),
            ("C2_declared", kernel.c2),
            ("samples", taken as f64),
        ]),
        serde_json::to_value(kernel).unwrap_or_default(),
        pass,
        constants([("relative", 1e-9)]),
    );
    (
        rep,
        KernelConstants {
            c1,
            c2,
            samples: taken,
        },
    )
}

/// Cutoff applied to `|x - y|/eps`: hard, or the smoothstep ramp on `[1/2, 1]`.
pub fn cutoff(t: f64, regularized: bool) -> f64 {
    if regularized {
        let s = (2.0 * t - 1.0).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    } else if t > 1.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub kernel: CZKernel,
    pub epsilon: f64,
    pub regularized: bool,
    pub matrix: OperatorMatrix,
}

impl TruncatedOperator {
    pub fn new(
        mu: &DiscreteMeasure,
        kernel: &CZKernel,
        epsilon: f64,
        regularized: bool,
    ) -> Result<TruncatedOperator> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("truncation {epsilon} must be positive")));
        }
        let n = mu.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            return 0.0;
                        }
                        let (x, y) = (mu.point(i), mu.point(j));
                        let c = cutoff(euclid_dist(x, y) / epsilon, regularized);
                        if c == 0.0 {
                            0.0
                        } else {
                            c * kernel.eval(x, y)
                        }
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let k = Array2::from_shape_vec((n, n), flat)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(TruncatedOperator {
            kernel: kernel.clone(),
            epsilon,
            regularized,
            matrix: OperatorMatrix::from_parts(k, Array1::zeros(n), mu.weights()),
        })
    }

    /// `T_eps` applied to the indicator of `members`.
    fn apply_indicator(&self, members: &[usize]) -> Vec<f64> {
        let k = &self.matrix.kernel;
        let w = &self.matrix.weights;
        (0..k.nrows())
            .map(|i| members.iter().map(|&j| k[[i, j]] * w[j]).sum())
            .collect()
    }

    /// `<T chi_Q, chi_Q>` summed over unordered pairs, so an antisymmetric
    /// kernel cancels exactly.
    fn self_pairing(&self, members: &[usize]) -> f64 {
        let k = &self.matrix.kernel;
        let w = &self.matrix.weights;
        let mut s = 0.0;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                s += w[i] * w[j] * (k[[i, j]] + k[[j, i]]);
            }
        }
        s
    }
}

/// Centered maximal function over closed Euclidean balls at each atom.
pub fn centered_maximal(mu: &DiscreteMeasure, f: &[f64]) -> Vec<f64> {
    let n = mu.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<(f64, usize)> =
                (0..n).map(|j| (euclid_dist(mu.point(i), mu.point(j)), j)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut int, mut mass, mut best) = (0.0, 0.0, 0.0_f64);
            let mut p = 0;
            while p < n {
                let r = order[p].0;
                while p < n && order[p].0 <= r {
                    let j = order[p].1;
                    int += mu.weight(j) * f[j].abs();
                    mass += mu.weight(j);
                    p += 1;
                }
                best = best.max(int / mass);
            }
            best
        })
        .collect()
}

/// `max |T_eps f - T~_eps f| / M f` over atoms and test functions, with the
/// bound `C1 C0 2^n` that the annulus `eps/2 < |x - y| <= eps` allows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationGap {
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn truncation_gap(
    mu: &DiscreteMeasure,
    kernel: &CZKernel,
    epsilon: f64,
    c0: f64,
    family: &[Vec<f64>],
) -> Result<TruncationGap> {
    let hard = TruncatedOperator::new(mu, kernel, epsilon, false)?;
    let smooth = TruncatedOperator::new(mu, kernel, epsilon, true)?;
    let diff = hard.matrix.sub(&smooth.matrix);
    let mut max_ratio = 0.0_f64;
    for f in family {
        let g = diff.apply(f);
        let m = centered_maximal(mu, f);
        for (gi, mi) in g.iter().zip(&m) {
            if *mi > 0.0 {
                max_ratio = max_ratio.max(gi.abs() / mi);
            } else if gi.abs() > 0.0 {
                max_ratio = f64::INFINITY;
            }
        }
    }
    let bound = kernel.c1 * c0 * 2f64.powf(kernel.n);
    Ok(TruncationGap {
        max_ratio,
        bound,
        pass: max_ratio <= bound,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct T1Params {
    pub p_list: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub eps_list: Vec<f64>,
    pub regularized: bool,
    /// Sampled non-concentric nested pairs added to the cube battery.
    pub extra_pairs: usize,
}

impl T1Params {
    /// `rho = gamma = 2`, `p = 2` plus `n/(n-1)` when `n > 1`, and the
    /// truncation grid `resolution * 2^i` up to a quarter of the diameter.
    pub fn defaults(mu: &DiscreteMeasure) -> T1Params {
        let n = mu.n();
        let mut p_list = vec![2.0];
        if n > 1.0 {
            p_list.push(n / (n - 1.0));
        }
        T1Params {
            p_list,
            rho: 2.0,
            gamma: 2.0,
            eps_list: eps_grid(mu),
            regularized: false,
            extra_pairs: 200,
        }
    }
}

pub fn eps_grid(mu: &DiscreteMeasure) -> Vec<f64> {
    let top = mu.diameter() / 4.0;
    let mut out = vec![mu.resolution()];
    let mut e = mu.resolution() * 2.0;
    while e <= top {
        out.push(e);
        e *= 2.0;
    }
    out
}

/// Suprema over the cube battery at one truncation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct T1Row {
    pub epsilon: f64,
    /// `max |<T chi_Q, chi_Q>| / mu(rho Q)`.
    pub weak: f64,
    /// `max ||T chi_Q||_p / mu(gamma Q)^{1/p}`, one per `p`.
    pub lp: Vec<(f64, f64)>,
    pub rbmo_t1: f64,
    pub rbmo_tstar1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct T1Battery {
    pub rows: Vec<T1Row>,
    pub cubes: usize,
    /// Per family: `(name, max/median, median/min)` over the truncations.
    pub spreads: Vec<(String, f64, f64)>,
    /// Every family stays within a factor 2 of its median.
    pub uniform: bool,
    /// The weak ratio increases as `eps` decreases.
    pub weak_monotone_growth: bool,
    /// Weak ratio at the smallest over the largest truncation.
    pub weak_growth: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// `(max/median, median/min)`, both 1 for an identically zero family.
fn spread(v: &[f64]) -> (f64, f64) {
    let med = median(v);
    let hi = v.iter().copied().fold(0.0, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        return (1.0, 1.0);
    }
    if med == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    (hi / med, if lo > 0.0 { med / lo } else { f64::INFINITY })
}

pub fn t1_battery(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    kernel: &CZKernel,
    params: &T1Params,
    seed: u64,
) -> Result<(VerificationReport, T1Battery)> {
    if params.eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty truncation grid".into()));
    }
    let battery = cube_battery(mu, lattice, params.extra_pairs, seed)?;
    t1_battery_on(mu, &battery, kernel, params)
}

/// [`t1_battery`] on a prebuilt cube battery.
pub fn t1_battery_on(
    mu: &DiscreteMeasure,
    battery: &CubeBattery,
    kernel: &CZKernel,
    params: &T1Params,
) -> Result<(VerificationReport, T1Battery)> {
    let rho_mass: Vec<f64> = battery.cubes.iter().map(|q| mu.cube_mass(&q.dilate(params.rho))).collect();
    let gamma_mass: Vec<f64> =
        battery.cubes.iter().map(|q| mu.cube_mass(&q.dilate(params.gamma))).collect();
    let ones = vec![1.0; mu.len()];
    let mut rows = Vec::with_capacity(params.eps_list.len());
    for &eps in &params.eps_list {
        let t = TruncatedOperator::new(mu, kernel, eps, params.regularized)?;
        let per_cube: Vec<(f64, Vec<f64>)> = (0..battery.len())
            .into_par_iter()
            .map(|q| {
                let mem = &battery.members[q];
                let weak = t.self_pairing(mem).abs() / rho_mass[q];
                let tq = t.apply_indicator(mem);
                let lp = params
                    .p_list
                    .iter()
                    .map(|&p| lp_norm(mu.weights(), &tq, p) / gamma_mass[q].powf(1.0 / p))
                    .collect();
                (weak, lp)
            })
            .collect();
        let weak = per_cube.iter().map(|c| c.0).fold(0.0, f64::max);
        let lp = params
            .p_list
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, per_cube.iter().map(|c| c.1[i]).fold(0.0, f64::max)))
            .collect();
        let t1 = t.matrix.apply(&ones);
        let ts1 = t.matrix.adjoint().apply(&ones);
        rows.push(T1Row {
            epsilon: eps,
            weak,
            lp,
            rbmo_t1: rbmo_norm(mu, &t1, battery)?.norm,
            rbmo_tstar1: rbmo_norm(mu, &ts1, battery)?.norm,
        });
    }
    let mut families: Vec<(String, Vec<f64>)> = vec![
        ("weak".into(), rows.iter().map(|r| r.weak).collect()),
        ("rbmo_T1".into(), rows.iter().map(|r| r.rbmo_t1).collect()),
        ("rbmo_Tstar1".into(), rows.iter().map(|r| r.rbmo_tstar1).collect()),
    ];
    for (i, &p) in params.p_list.iter().enumerate() {
        families.push((format!("L{p}"), rows.iter().map(|r| r.lp[i].1).collect()));
    }
    let spreads: Vec<(String, f64, f64)> = families
        .iter()
        .map(|(name, v)| {
            let (a, b) = spread(v);
            (name.clone(), a, b)
        })
        .collect();
    let uniform = spreads.iter().all(|s| s.1 <= 2.0 && s.2 <= 2.0);
    // rows are ordered by increasing eps
    let mut by_eps: Vec<&T1Row> = rows.iter().collect();
    by_eps.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let weak_monotone_growth = by_eps.windows(2).all(|w| w[0].weak >= w[1].weak);
    let (small, large) = (by_eps[0].weak, by_eps[by_eps.len() - 1].weak);
    let weak_growth = if large > 0.0 {
        small / large
    } else if small > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let out = T1Battery {
        rows,
        cubes: battery.len(),
        spreads,
        uniform,
        weak_monotone_growth,
        weak_growth,
    };
    let mut c = constants([
        ("cubes", out.cubes as f64),
        ("rho", params.rho),
        ("gamma", params.gamma),
        ("weak_growth", out.weak_growth),
    ]);
    for (name, v) in &families {
        c.insert(format!("sup_{name}"), v.iter().copied().fold(0.0, f64::max));
    }
    for (name, a, b) in &out.spreads {
        c.insert(format!("spread_{name}"), a.max(*b));
    }
    let rep = VerificationReport::new(
        "t1_battery",
        c,
        serde_json::to_value(&out.rows).unwrap_or_default(),
        out.uniform,
        constants([("uniformity_factor", 2.0)]),
    );
    Ok((rep, out))
}

/// `||D_k T D_j||` over the active band, fitted against `|j - k|`, with the
/// smallest constants for the pointwise forms of the pairing estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairingDecay {
    pub fit: DecayFit,
    /// Fitted exponent in base 2.
    pub nu_hat: f64,
    /// Smallest constant for the separated form on the sample.
    pub c_separated: f64,
    /// Smallest constant for the overlapping form on the sample.
    pub c_overlapping: f64,
    /// Samples with a nonzero kernel where the bound form vanishes.
    pub uncovered: usize,
    pub samples: usize,
}

pub fn pairing_decay(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    decomp: &LpDecomposition,
    t: &OperatorMatrix,
    samples: usize,
    seed: u64,
) -> Result<(VerificationReport, PairingDecay)> {
    let act = decomp.active();
    let w = decomp.weights.clone();
    let ta = t.action_matrix();
    let dact: Vec<(i32, Array2<f64>)> =
        act.iter().map(|&k| (k, decomp.d(k).unwrap().action_matrix())).collect();
    let pairs: Vec<(usize, usize)> = (0..dact.len())
        .flat_map(|a| (0..dact.len()).map(move |b| (a, b)))
        .collect();
    let mats: Vec<((i32, i32), Array2<f64>)> = pairs
        .par_iter()
        .map(|&(a, b)| ((dact[a].0, dact[b].0), dact[b].1.dot(&ta).dot(&dact[a].1)))
        .collect();
    let samples_norm = mats
        .par_iter()
        .enumerate()
        .map(|(i, ((j, k), m))| action_norm(m, &w, seed.wrapping_add(i as u64)).map(|v| (*j, *k, v)))
        .collect::<Result<Vec<_>>>()?;
    let fit = DecayFit::from_samples(samples_norm);
    let nu_hat = fit.rate;
    let nu = if nu_hat.is_finite() { nu_hat.max(0.0) } else { 0.0 };

    let n = mu.n();
    let half_delta = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1f1);
    let (mut ca, mut cb, mut uncovered, mut taken) = (0.0_f64, 0.0_f64, 0, 0);
    let side = |x: usize, k: i32| lattice.entry_or_edge(x, k).side;
    let cube = |x: usize, k: i32| side(x, k).cube(mu.point(x));
    for _ in 0..samples.min(if mats.is_empty() { 0 } else { usize::MAX }) {
        let (jk, m) = &mats[rng.random_range(0..mats.len())];
        let (j, k) = *jk;
        let xi = rng.random_range(0..mu.len());
        let yi = rng.random_range(0..mu.len());
        let val = (m[[xi, yi]] / w[yi]).abs();
        taken += 1;
        let scale = 2f64.powf(nu * (j - k).abs() as f64);
        let (x, y) = (mu.point(xi), mu.point(yi));
        let r = euclid_dist(x, y);
        let separated = !cube(xi, j - 3).dilate(2.0).intersects(&cube(yi, k - 3).dilate(2.0));
        let bound = if separated {
            let (lx, ly) = (side(xi, j - 2).0, side(yi, k - 2).0);
            lx.min(ly).powf(half_delta) / (lx + ly + r).powf(n + half_delta)
        } else {
            let mut b = 0.0;
            if cube(xi, j - 7).contains_point(y) {
                let d = side(xi, j).0 + r;
                b += if d == 0.0 { f64::INFINITY } else { d.powf(-n) };
            }
            if cube(yi, k - 7).contains_point(x) {
                let d = side(yi, k).0 + r;
                b += if d == 0.0 { f64::INFINITY } else { d.powf(-n) };
            }
            b
        };
        if val == 0.0 {
            continue;
        }
        if !(bound > 0.0) || !bound.is_finite() {
            if bound == 0.0 {
                uncovered += 1;
            }
            continue;
        }
        let c = val * scale / bound;
        if separated {
            ca = ca.max(c);
        } else {
            cb = cb.max(c);
        }
    }
    let out = PairingDecay {
        nu_hat,
        c_separated: ca,
        c_overlapping: cb,
        uncovered,
        samples: taken,
        fit,
    };
    let r2 = out.fit.fit.map(|f| f.r_squared).unwrap_or(f64::NAN);
    let pass = out.fit.decays(0.8) && out.nu_hat > 0.0;
    let rep = VerificationReport::new(
        "pairing_decay",
        constants([
            ("nu_hat", out.nu_hat),
            ("r_squared", r2),
            ("separations", out.fit.envelope.len() as f64),
            ("C_separated", out.c_separated),
            ("C_overlapping", out.c_overlapping),
            ("uncovered", out.uncovered as f64),
            ("samples", out.samples as f64),
        ]),
        serde_json::to_value(&out.fit.envelope).unwrap_or_default(),
        pass,
        constants([("r_squared_min", 0.8)]),
    );
    Ok((rep, out))
}

/// Off-diagonal kernel `a(x_i, x_j) = A_ij / w_j` of an action matrix.
fn kernel_of(a: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let mut k = a.clone();
    for ((i, j), v) in k.indexed_iter_mut() {
        *v = if i == j { 0.0 } else { *v / w[j] };
    }
    k
}

/// Size constant, Hörmander constant and `L^2` norm of a kernel matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HormanderConstants {
    pub c1: f64,
    pub c2_prime: f64,
    pub norm: f64,
}

impl HormanderConstants {
    pub fn hczo(&self) -> f64 {
        self.norm + self.c1 + self.c2_prime
    }
}

/// Constants of the operator with action matrix `a`; the diagonal only
/// enters the norm.
pub fn hormander_constants(mu: &DiscreteMeasure, a: &Array2<f64>, seed: u64) -> Result<HormanderConstants> {
    let w = mu.weights();
    let k = kernel_of(a, w);
    let n = mu.len();
    let dim_n = mu.n();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclid_dist(mu.point(i), mu.point(j))).collect())
        .collect();
    let c1 = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| k[[i, j]].abs() * dist[i][j].powf(dim_n))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let c2_prime = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            for ip in 0..n {
                if ip == i {
                    continue;
                }
                let t = 2.0 * dist[i][ip];
                let mut s = 0.0;
                for y in 0..n {
                    if dist[i][y] >= t {
                        s += w[y] * ((k[[i, y]] - k[[ip, y]]).abs() + (k[[y, i]] - k[[y, ip]]).abs());
                    }
                }
                best = best.max(s);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(HormanderConstants {
        c1,
        c2_prime,
        norm: action_norm(a, w, seed)?,
    })
}

/// Constants of `I_band - Phi_N` for each `N` in `ns`, with the check that
/// all three are non-increasing in `N`.
pub fn hormander_check(
    mu: &DiscreteMeasure,
    decomp: &LpDecomposition,
    ns: &[usize],
    seed: u64,
) -> Result<(VerificationReport, Vec<(usize, HormanderConstants)>)> {
    let rows = ns
        .iter()
        .map(|&n| hormander_constants(mu, &decomp.residual(n), seed ^ n as u64).map(|c| (n, c)))
        .collect::<Result<Vec<_>>>()?;
    let tol = |a: f64| 1e-9 * a.abs() + 1e-12;
    let pick: [fn(&HormanderConstants) -> f64; 3] = [|c| c.c1, |c| c.c2_prime, |c| c.norm];
    let monotone = pick.iter().all(|f| {
        rows.windows(2)
            .all(|p| f(&p[1].1) <= f(&p[0].1) + tol(f(&p[0].1)))
    });
    let mut c = std::collections::BTreeMap::new();
    for (n, h) in &rows {
        c.insert(format!("C1_N{n}"), h.c1);
        c.insert(format!("C2prime_N{n}"), h.c2_prime);
        c.insert(format!("norm_N{n}"), h.norm);
    }
    let rep = VerificationReport::new(
        "hormander_i_minus_phi",
        c,
        serde_json::Value::Null,
        monotone,
        constants([("relative", 1e-9)]),
    );
    Ok((rep, rows))
}

/// Neumann tail target for `Phi_N^{-1}`.
pub const NEUMANN_TAIL: f64 = 1e-8;

/// `Phi_N^{-1} b = sum_i (I_band - Phi_N)^i b`, with as many terms as the
/// certificate `||I_band - Phi_N|| <= 1/2` needs for a tail below 1e-8.
pub fn phi_inverse(decomp: &LpDecomposition, b: &[f64]) -> Result<(Vec<f64>, usize)> {
    if !decomp.certified {
        return Err(Error::Numerical(
            "Neumann series for Phi_N^-1 has no norm certificate".into(),
        ));
    }
    let r = decomp.residual(decomp.n);
    let mut terms = 0;
    while 2f64.powi(-(terms as i32 + 1)) > NEUMANN_TAIL {
        terms += 1;
    }
    let mut term = Array1::from(b.to_vec());
    let mut acc = term.clone();
    for _ in 0..terms {
        term = r.dot(&term);
        acc += &term;
        if norm_l2(&decomp.weights, term.as_slice().unwrap()) == 0.0 {
            break;
        }
    }
    Ok((acc.to_vec(), terms))
}

#[derive(Clone, Debug)]
pub struct Paraproduct {
    pub m: i32,
    /// Action matrix.
    pub action: Array2<f64>,
    pub generations: Vec<i32>,
    pub neumann_terms: usize,
}

impl Paraproduct {
    pub fn operator(&self, w: &[f64]) -> OperatorMatrix {
        let k = kernel_of(&self.action, w);
        let diag = Array1::from_iter((0..w.len()).map(|i| self.action[[i, i]]));
        OperatorMatrix::from_parts(k, diag, w)
    }
}

/// `U_{m,b} = sum_k D_k P_k S_k` over `k` in `[-m, m]` and the band, where
/// `P_k` multiplies by `D_k^N Phi_N^{-1} b`. Generations with `D_k 1 != 0`
/// are left out so that `U*(1) = 0`.
pub fn paraproduct(decomp: &LpDecomposition, b: &[f64], m: i32) -> Result<Paraproduct> {
    let (inv, terms) = phi_inverse(decomp, b)?;
    let inv = Array1::from(inv);
    let gens: Vec<i32> = decomp
        .active()
        .into_iter()
        .filter(|k| k.abs() <= m && !decomp.exceptional.contains(k))
        .collect();
    let size = decomp.len();
    let action = gens
        .par_iter()
        .map(|&k| {
            let p = decomp.d_n(k, decomp.n).dot(&inv);
            let d = decomp.d(k).unwrap().action_matrix();
            let s = decomp.s(k).unwrap();
            let ps = s * &p.view().insert_axis(ndarray::Axis(1));
            d.dot(&ps)
        })
        .reduce(|| Array2::zeros((size, size)), |a, b| a + b);
    Ok(Paraproduct {
        m,
        action,
        generations: gens,
        neumann_terms: terms,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParaproductChecks {
    pub m: i32,
    pub norm: f64,
    /// `||U*(1)||_{L^2}`.
    pub adjoint_one: f64,
    /// `||U(1) - S_{k_max} b||_{L^2}`.
    pub one_gap: f64,
}

pub fn paraproduct_checks(decomp: &LpDecomposition, u: &Paraproduct, b: &[f64], seed: u64) -> Result<ParaproductChecks> {
    let w = &decomp.weights;
    let op = ActionOp { m: &u.action, w };
    let ones = vec![1.0; w.len()];
    let u1 = op.apply(&ones);
    let pb = decomp.project(b);
    let gap: Vec<f64> = u1.iter().zip(&pb).map(|(a, b)| a - b).collect();
    Ok(ParaproductChecks {
        m: u.m,
        norm: action_norm(&u.action, w, seed)?,
        adjoint_one: norm_l2(w, &op.apply_adjoint(&ones)),
        one_gap: norm_l2(w, &gap),
    })
}

/// Smallest constants for the size and the lattice-adapted smoothness of a
/// paraproduct kernel; the smoothness triples need `y` in
/// `Q_{x,j} \ Q_{x,j+1}` and `x'` in `Q_{x,h}` with `j <= h - gap`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParaproductKernel {
    pub c10: f64,
    pub c11: f64,
    pub triples: usize,
}

pub fn paraproduct_kernel_check(
    mu: &DiscreteMeasure,
    lattice: &GenerationLattice,
    u: &Paraproduct,
    gap: i32,
) -> ParaproductKernel {
    let w = mu.weights();
    let k = kernel_of(&u.action, w);
    let n = mu.len();
    let dn = mu.n();
    let c10 = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| k[[i, j]].abs() * euclid_dist(mu.point(i), mu.point(j)).powf(dn))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let gens: Vec<i32> = lattice.generations().collect();
    let (c11, triples) = (0..n)
        .into_par_iter()
        .map(|xi| {
            let x = mu.point(xi);
            let mut best = 0.0_f64;
            let mut count = 0;
            for &h in &gens {
                let qh = lattice.entry(xi, h);
                if qh.class != EntryClass::Transit {
                    continue;
                }
                let qh = qh.side.cube(x);
                for xp in (0..n).filter(|&p| p != xi && qh.contains_point(mu.point(p))) {
                    let dxx = euclid_dist(x, mu.point(xp));
                    for j in gens.iter().copied().filter(|&j| j <= h - gap) {
                        let outer = lattice.entry_or_edge(xi, j).side.cube(x);
                        let inner = lattice.entry_or_edge(xi, j + 1).side.cube(x);
                        let l4 = lattice.entry_or_edge(xi, j + 4).side.0;
                        for y in 0..n {
                            let py = mu.point(y);
                            if !outer.contains_point(py) || inner.contains_point(py) {
                                continue;
                            }
                            count += 1;
                            let diff = (k[[xi, y]] - k[[xp, y]]).abs() + (k[[y, xi]] - k[[y, xp]]).abs();
                            let r = euclid_dist(x, py);
                            best = best.max(diff * l4 * r.powf(dn) / dxx);
                        }
                    }
                }
            }
            (best, count)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    ParaproductKernel { c10, c11, triples }
}

/// Separated-support pairing: smallest `C` with
/// `|<T phi, psi>| <= C l(Q)^delta / dist(Q,R)^{n+delta} ||phi||_1 ||psi||_1`
/// for mean-zero `phi` on `Q` and `psi = chi_R`, over sampled battery pairs
/// with `dist(Q, R) > l(Q)/2`.
pub fn separated_pairing(
    mu: &DiscreteMeasure,
    battery: &CubeBattery,
    t: &OperatorMatrix,
    kernel_delta: f64,
    samples: usize,
    seed: u64,
) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = mu.weights();
    let (mut best, mut used) = (0.0_f64, 0);
    if battery.len() < 2 {
        return (0.0, 0);
    }
    for _ in 0..samples * 20 {
        if used >= samples {
            break;
        }
        let a = rng.random_range(0..battery.len());
        let b = rng.random_range(0..battery.len());
        let (q, r) = (&battery.cubes[a], &battery.cubes[b]);
        let dist = cube_gap(q, r);
        if battery.members[a].len() < 2 || battery.members[b].is_empty() || dist <= q.side() / 2.0 {
            continue;
        }
        let mem = &battery.members[a];
        let mut phi = vec![0.0; mu.len()];
        for &i in mem {
            phi[i] = rng.random_range(-1.0..1.0);
        }
        let mean: f64 = mem.iter().map(|&i| w[i] * phi[i]).sum::<f64>() / battery.mass[a];
        for &i in mem {
            phi[i] -= mean;
        }
        let l1: f64 = mem.iter().map(|&i| w[i] * phi[i].abs()).sum();
        if l1 == 0.0 {
            continue;
        }
        let tphi = t.apply(&phi);
        let pairing: f64 = battery.members[b].iter().map(|&i| w[i] * tphi[i]).sum();
        let c = pairing.abs() * dist.powf(mu.n() + kernel_delta)
            / (q.side().powf(kernel_delta) * l1 * battery.mass[b]);
        best = best.max(c);
        used += 1;
    }
    (best, used)
}

/// Sup-norm distance between two standard cubes.
fn cube_gap(q: &Cube, r: &Cube) -> f64 {
    match (q.center(), r.center()) {
        (Some(a), Some(b)) => a
            .iter()
            .zip(b)
            .map(|(x, y)| ((x - y).abs() - q.half_side() - r.half_side()).max(0.0))
            .fold(0.0, f64::max),
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_example, ExampleKind};

    fn interval(atoms: usize) -> DiscreteMeasure {
        generate_example(&ExampleKind::from_name("uniform_interval", atoms, 1).unwrap())
            .unwrap()
            .measure
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.5, true), 0.0);
        assert_eq!(cutoff(0.3, true), 0.0);
        assert_eq!(cutoff(1.0, true), 1.0);
        assert_eq!(cutoff(2.0, true), 1.0);
        assert!((cutoff(0.75, true) - 0.5).abs() < 1e-15);
        assert_eq!(cutoff(1.0, false), 0.0);
        assert_eq!(cutoff(1.0 + 1e-12, false), 1.0);
    }

    #[test]
    fn cauchy_values() {
        let k = CZKernel::builtin(KernelKind::CauchyRe, 1.0);
        // 1/(1 + i) = (1 - i)/2
        assert!((k.eval(&[1.0, 1.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
        let ki = CZKernel::builtin(KernelKind::CauchyIm, 1.0);
        assert!((ki.eval(&[1.0, 1.0], &[0.0, 0.0]) + 0.5).abs() < 1e-15);
        assert_eq!(k.eval(&[0.3], &[0.1]), -k.eval(&[0.1], &[0.3]));
    }

    #[test]
    fn builtin_constants_hold_on_samples() {
        let mu = interval(64);
        for kind in [
            KernelKind::CauchyRe,
            KernelKind::Riesz { component: 0 },
            KernelKind::TestBounded,
            KernelKind::Singular,
        ] {
            let k = CZKernel::builtin(kind, mu.n());
            let (rep, c) = measure_kernel_constants(&mu, &k, 2000, 3);
            assert!(rep.pass, "{kind:?}: {}", rep.to_json());
            assert!(c.samples > 100);
        }
    }

    #[test]
    fn antisymmetric_pairing_vanishes() {
        let mu = interval(40);
        let k = CZKernel::builtin(KernelKind::CauchyRe, 1.0);
        let t = TruncatedOperator::new(&mu, &k, mu.resolution() * 1.5, false).unwrap();
        let all: Vec<usize> = (0..mu.len()).collect();
        assert_eq!(t.self_pairing(&all), 0.0);
        assert_eq!(t.self_pairing(&all[3..17]), 0.0);
    }

    #[test]
    fn hard_truncation_drops_near_pairs() {
        let mu = interval(20);
        let k = CZKernel::builtin(KernelKind::Singular, 1.0);
        let eps = 2.5 * mu.resolution();
        let t = TruncatedOperator::new(&mu, &k, eps, false).unwrap();
        for i in 0..mu.len() {
            for j in 0..mu.len() {
                let d = euclid_dist(mu.point(i), mu.point(j));
                assert_eq!(t.matrix.kernel[[i, j]] == 0.0, d <= eps);
            }
        }
    }

    #[test]
    fn zero_kernel_has_zero_constants() {
        let mu = interval(16);
        let a = Array2::zeros((16, 16));
        let h = hormander_constants(&mu, &a, 1).unwrap();
        assert_eq!(h.hczo(), 0.0);
    }

    #[test]
    fn maximal_function_of_constant() {
        let mu = interval(30);
        let m = centered_maximal(&mu, &vec![2.0; 30]);
        assert!(m.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn truncation_gap_within_bound() {
        let mu = interval(64);
        let k = CZKernel::builtin(KernelKind::CauchyRe, 1.0);
        let c0 = crate::measure::growth_constant(&mu).unwrap().c0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fam: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let g = truncation_gap(&mu, &k, 4.0 * mu.resolution(), c0, &fam).unwrap();
        assert!(g.pass, "{g:?}");
        assert!(g.max_ratio > 0.0);
    }
}
