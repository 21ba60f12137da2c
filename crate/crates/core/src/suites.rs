//! Verification suites run in dependency order
//! (measure, geometry, lattice, aoi, lp, czo) with their plot tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aoi::{s_identities, verify_kernel_bounds, verify_phi_localization, verify_phi_norms, verify_psi_clauses};
use crate::czo::{
    hormander_check, measure_kernel_constants, pairing_decay, paraproduct, paraproduct_checks,
    paraproduct_kernel_check, separated_pairing, t1_battery_on, truncation_gap, CZKernel, KernelKind,
    T1Params, TruncatedOperator,
};
use crate::error::{Error, Result};
use crate::lattice::{verify_generation_invariants, verify_nesting, verify_regularity};
use crate::lp::{
    build_decomposition, carleson_check, cube_battery, decay_fit, e_envelope_constant, energy_table,
    log_distance, lp_identities, lp_ratio, maximal_ops, off_diagonal_fraction, paraproduct_densities,
    quasi_orthogonality, random_band_family, rbmo_norm, square_function_lp, verify_rbmo_square,
    CubeBattery, LpDecomposition,
};
use crate::measure::{euclid_dist, growth_constant, worst_doubling_ratio, DiscreteMeasure};
use crate::pipeline::{measure_inputs, tune, MeasuredInputs, Tuned, TuningConfig, EPS3_TARGET};
use crate::report::{constants, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Delta,
    Lattice,
    Aoi,
    Lp,
    Carleson,
    T1,
    Paraproduct,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Delta,
        Suite::Lattice,
        Suite::Aoi,
        Suite::Lp,
        Suite::Carleson,
        Suite::T1,
        Suite::Paraproduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Delta => "delta",
            Suite::Lattice => "lattice",
            Suite::Aoi => "aoi",
            Suite::Lp => "lp",
            Suite::Carleson => "carleson",
            Suite::T1 => "t1",
            Suite::Paraproduct => "paraproduct",
        }
    }

    /// Parses one suite name, or `all`.
    pub fn parse_list(name: &str) -> Result<Vec<Suite>> {
        if name == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        Suite::ALL
            .iter()
            .find(|s| s.name() == name)
            .map(|s| vec![*s])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{name}`")))
    }

    fn needs_lattice(self) -> bool {
        self != Suite::Delta
    }

    fn needs_decomposition(self) -> bool {
        matches!(self, Suite::Lp | Suite::Carleson | Suite::T1 | Suite::Paraproduct)
    }
}

/// Everything the suites need besides the measure. Tolerances of exact
/// identities are fixed and not part of the configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub tuning: TuningConfig,
    pub n_max: usize,
    pub regularity_pairs: usize,
    pub family_size: usize,
    pub battery_pairs: usize,
    pub kernel: KernelKind,
    pub rho: f64,
    pub gamma: f64,
    /// Exponents for the `T chi_Q` test; default `{2}` plus `n/(n-1)` if `n > 1`.
    pub p_list: Option<Vec<f64>>,
    /// Truncations; default `resolution * 2^i` up to a quarter of the diameter.
    pub eps_grid: Option<Vec<f64>>,
    pub regularized: bool,
    pub paraproduct_m: Vec<i32>,
    pub square_exponents: Vec<f64>,
    pub samples: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            tuning: TuningConfig::default(),
            n_max: 10,
            regularity_pairs: 40_000,
            family_size: 100,
            battery_pairs: 200,
            kernel: KernelKind::CauchyRe,
            rho: 2.0,
            gamma: 2.0,
            p_list: None,
            eps_grid: None,
            regularized: false,
            paraproduct_m: vec![2, 4, 8],
            square_exponents: vec![1.5, 2.0, 3.0],
            samples: 2000,
        }
    }
}

impl SuiteConfig {
    pub fn seed(&self) -> u64 {
        self.tuning.seed
    }

    pub fn t1_params(&self, mu: &DiscreteMeasure) -> T1Params {
        let mut p = T1Params::defaults(mu);
        p.rho = self.rho;
        p.gamma = self.gamma;
        p.regularized = self.regularized;
        p.extra_pairs = self.battery_pairs;
        if let Some(l) = &self.p_list {
            p.p_list = l.clone();
        }
        if let Some(e) = &self.eps_grid {
            p.eps_list = e.clone();
        }
        p
    }
}

/// Named numeric table, written as CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Table {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Numerical(e.to_string()))?;
        w.write_record(&self.header).map_err(|e| Error::Numerical(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Numerical(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct SuiteOutput {
    pub suite: Suite,
    pub reports: Vec<VerificationReport>,
    pub tables: Vec<Table>,
}

impl SuiteOutput {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&VerificationReport> {
        self.reports.iter().find(|r| !r.pass)
    }
}

/// Shared state: measured inputs, the tuned lattice and the decomposition.
pub struct Context<'a> {
    pub mu: &'a DiscreteMeasure,
    pub cfg: SuiteConfig,
    pub inputs: MeasuredInputs,
    pub tuned: Option<Tuned>,
    pub decomp: Option<LpDecomposition>,
    pub battery: Option<CubeBattery>,
}

impl<'a> Context<'a> {
    /// Computes whatever `suites` depend on.
    pub fn prepare(mu: &'a DiscreteMeasure, cfg: SuiteConfig, suites: &[Suite]) -> Result<Context<'a>> {
        let inputs = measure_inputs(mu, &cfg.tuning)?;
        let mut ctx = Context {
            mu,
            cfg,
            inputs,
            tuned: None,
            decomp: None,
            battery: None,
        };
        if suites.iter().any(|s| s.needs_lattice()) {
            let t = tune(mu, &ctx.inputs, &ctx.cfg.tuning)?;
            if suites.iter().any(|s| s.needs_decomposition()) {
                ctx.decomp = Some(build_decomposition(&t.family, ctx.cfg.n_max, ctx.cfg.seed())?);
                ctx.battery = Some(cube_battery(mu, &t.lattice, ctx.cfg.battery_pairs, ctx.cfg.seed())?);
            }
            ctx.tuned = Some(t);
        }
        Ok(ctx)
    }

    fn tuned(&self) -> &Tuned {
        self.tuned.as_ref().expect("lattice prepared")
    }

    fn decomp(&self) -> &LpDecomposition {
        self.decomp.as_ref().expect("decomposition prepared")
    }

    fn battery(&self) -> &CubeBattery {
        self.battery.as_ref().expect("battery prepared")
    }

    /// The log-distance test function about the atom nearest the barycenter.
    pub fn log_test_function(&self) -> Vec<f64> {
        log_distance(self.mu, self.mu.point(central_atom(self.mu)))
    }

    pub fn run(&self, suite: Suite) -> Result<SuiteOutput> {
        let (reports, tables) = match suite {
            Suite::Delta => self.delta()?,
            Suite::Lattice => self.lattice()?,
            Suite::Aoi => self.aoi()?,
            Suite::Lp => self.lp()?,
            Suite::Carleson => self.carleson()?,
            Suite::T1 => self.t1()?,
            Suite::Paraproduct => self.paraproduct()?,
        };
        Ok(SuiteOutput {
            suite,
            reports,
            tables,
        })
    }

    fn delta(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let g = growth_constant(self.mu)?;
        let w = worst_doubling_ratio(self.mu);
        let growth = VerificationReport::new(
            "growth",
            constants([
                ("C0", g.c0),
                ("n", self.mu.n()),
                ("witness_radius", g.witness_radius),
                ("worst_doubling_ratio", w.ratio),
                ("non_doubling", w.violates as u8 as f64),
            ]),
            serde_json::json!({"growth_atom": g.witness_atom, "doubling_cube": w.cube}),
            g.c0.is_finite(),
            BTreeMap::new(),
        );
        let mut dil = Table::new("dilation", &["eps1", "dilation", "c_log", "c6"]);
        dil.rows.push(vec![
            self.inputs.eps1,
            self.inputs.dilation,
            self.inputs.delta.c_log,
            self.inputs.delta.c6,
        ]);
        Ok((vec![growth, self.inputs.delta_report.clone()], vec![dil]))
    }

    fn lattice(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let t = self.tuned();
        let lat = &t.lattice;
        let (reg, _) = verify_regularity(self.mu, lat, self.cfg.regularity_pairs, self.cfg.seed());
        let reports = vec![
            t.report(),
            verify_nesting(lat),
            reg,
            verify_generation_invariants(self.mu, lat),
        ];
        let mut rounds = Table::new(
            "tuning_rounds",
            &["round", "sigma", "alpha1", "alpha2", "A", "transit", "nesting_violations", "eps3"],
        );
        for r in &t.rounds {
            rounds.rows.push(vec![
                r.round as f64,
                r.sigma,
                r.alpha1,
                r.alpha2,
                r.a,
                r.transit as f64,
                r.nesting_violations as f64,
                r.eps3,
            ]);
        }
        let mut classes = Table::new("generation_classes", &["k", "initial", "transit", "stopping"]);
        for k in lat.generations() {
            let row = lat.row(k);
            let count = |c| row.iter().filter(|e| e.class == c).count() as f64;
            use crate::lattice::EntryClass::*;
            classes.rows.push(vec![k as f64, count(Initial), count(Transit), count(Stopping)]);
        }
        Ok((reports, vec![rounds, classes]))
    }

    fn aoi(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let t = self.tuned();
        let lat = &t.lattice;
        let mut table = Table::new(
            "aoi_generations",
            &[
                "k", "row_sum_error", "asymmetry", "s_tilde_one_min", "s_tilde_one_max", "m_min", "m_max",
                "w_min", "w_max", "bound_violations", "eps3", "c_size", "c_reg",
            ],
        );
        let (mut rs, mut asym, mut viol, mut eps3) = (0.0_f64, 0.0_f64, 0usize, 0.0_f64);
        let (mut st_lo, mut st_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut supp, mut neg, mut c_size, mut c_reg, mut loc) = (0usize, 0usize, 0.0_f64, 0.0_f64, 0usize);
        let mut psi: Vec<VerificationReport> = Vec::new();
        let mut nonzero = 0;
        for op in &t.family.ops {
            if op.zero {
                continue;
            }
            nonzero += 1;
            let id = s_identities(op);
            let pn = verify_phi_norms(self.mu, lat, op.k);
            let kb = verify_kernel_bounds(self.mu, lat, op);
            rs = rs.max(id.row_sum_error);
            asym = asym.max(id.asymmetry);
            viol += id.bound_violations;
            st_lo = st_lo.min(id.s_tilde_one_min);
            st_hi = st_hi.max(id.s_tilde_one_max);
            eps3 = eps3.max(pn.eps3);
            supp += kb.support_violations;
            neg += kb.negative_entries;
            c_size = c_size.max(kb.c_size);
            c_reg = c_reg.max(kb.c_reg);
            loc += verify_phi_localization(self.mu, lat, op.k);
            psi.push(verify_psi_clauses(self.mu, lat, op.k));
            table.rows.push(vec![
                op.k as f64,
                id.row_sum_error,
                id.asymmetry,
                id.s_tilde_one_min,
                id.s_tilde_one_max,
                id.m_min,
                id.m_max,
                id.w_min,
                id.w_max,
                id.bound_violations as f64,
                pn.eps3,
                kb.c_size,
                kb.c_reg,
            ]);
        }
        let identities = VerificationReport::new(
            "s_identities",
            constants([
                ("generations", nonzero as f64),
                ("row_sum_error", rs),
                ("asymmetry", asym),
            ]),
            serde_json::Value::Null,
            nonzero > 0 && rs <= 1e-9 && asym <= 1e-9,
            constants([("row_sum", 1e-9), ("symmetry", 1e-9)]),
        );
        let bounds = VerificationReport::new(
            "normalization_bounds",
            constants([
                ("bound_violations", viol as f64),
                ("s_tilde_one_min", st_lo),
                ("s_tilde_one_max", st_hi),
                ("eps3", eps3),
            ]),
            serde_json::Value::Null,
            nonzero > 0 && viol == 0 && eps3 <= EPS3_TARGET,
            constants([
                ("s_tilde_one_lower", 0.25),
                ("s_tilde_one_upper", 1.5),
                ("m_lower", 2.0 / 3.0),
                ("m_upper", 4.0),
                ("w_upper", 6.0),
                ("eps3", EPS3_TARGET),
            ]),
        );
        let kernel = VerificationReport::new(
            "kernel_bounds",
            constants([
                ("support_violations", supp as f64),
                ("negative_entries", neg as f64),
                ("c_size", c_size),
                ("c_reg", c_reg),
                ("phi_localization_violations", loc as f64),
            ]),
            serde_json::Value::Null,
            supp == 0 && neg == 0 && loc == 0 && c_size.is_finite() && c_reg.is_finite(),
            constants([("violations", 0.0)]),
        );
        let psi_pass = psi.iter().all(|r| r.pass);
        let mut psi_c = BTreeMap::new();
        for r in &psi {
            for (k, v) in &r.measured_constants {
                let e = psi_c.entry(k.clone()).or_insert(0.0_f64);
                if k == "c7" {
                    *e = e.max(*v);
                } else {
                    *e += v;
                }
            }
        }
        let psi_rep = VerificationReport::new(
            "psi_clauses",
            psi_c,
            serde_json::to_value(psi.iter().filter(|r| !r.pass).map(|r| &r.worst_witness).collect::<Vec<_>>())
                .unwrap_or_default(),
            psi_pass,
            constants([("violations", 0.0)]),
        );
        Ok((vec![identities, bounds, kernel, psi_rep], vec![table]))
    }

    fn lp(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let d = self.decomp();
        let seed = self.cfg.seed();
        let id = lp_identities(d);
        let identities = VerificationReport::new(
            "lp_identities",
            constants([
                ("telescoping_error", id.telescoping_error),
                ("in_band_row_sum", id.in_band_row_sum),
                ("asymmetry", id.asymmetry),
                ("exceptional_generations", id.exceptional.len() as f64),
            ]),
            serde_json::json!({"exceptional": id.exceptional}),
            id.telescoping_error <= 1e-10
                && id.in_band_row_sum <= 1e-9
                && id.asymmetry <= 1e-9
                && id.exceptional.len() <= 1,
            constants([("telescoping", 1e-10), ("row_sum", 1e-9), ("symmetry", 1e-9)]),
        );
        let s = d.summary();
        let almost = VerificationReport::new(
            "almost_identity",
            constants([
                ("N", s.n as f64),
                ("i_minus_phi_norm", s.i_minus_phi_norm),
                ("certified", s.certified as u8 as f64),
            ]),
            serde_json::to_value(&s).unwrap_or_default(),
            s.certified,
            constants([("norm", 0.5)]),
        );
        let fit = decay_fit(d, seed)?;
        let r2 = fit.fit.map(|f| f.r_squared).unwrap_or(f64::NAN);
        let decay = VerificationReport::new(
            "dk_decay",
            constants([
                ("eta_hat", fit.rate),
                ("r_squared", r2),
                ("separations", fit.envelope.len() as f64),
                ("e_envelope_constant", e_envelope_constant(d, fit.rate.max(0.0))),
            ]),
            serde_json::to_value(&fit.envelope).unwrap_or_default(),
            fit.envelope.len() >= 3 && fit.decays(0.8),
            constants([("r_squared_min", 0.8), ("separations_min", 3.0)]),
        );
        let fam = random_band_family(d, 2 * self.cfg.family_size, seed);
        let q1 = quasi_orthogonality(d, &fam[..self.cfg.family_size]);
        let q2 = quasi_orthogonality(d, &fam);
        let change = ((q2.min - q1.min).abs() / q1.min).max((q2.max - q1.max).abs() / q1.max);
        let quasi = VerificationReport::new(
            "quasi_orthogonality",
            constants([
                ("min", q1.min),
                ("max", q1.max),
                ("min_doubled", q2.min),
                ("max_doubled", q2.max),
                ("endpoint_change", change),
                ("skipped", q2.skipped as f64),
            ]),
            serde_json::Value::Null,
            q1.count > 0 && q1.min > 0.0 && q1.max.is_finite() && change < 0.2,
            constants([("endpoint_change", 0.2)]),
        );
        let mut sq_table = Table::new("square_function", &["p", "min_ratio", "max_ratio"]);
        let mut p2_err = 0.0_f64;
        for &p in &self.cfg.square_exponents {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0_f64;
            for f in fam.iter().take(self.cfg.family_size) {
                let (a, b) = square_function_lp(d, f, p)?;
                if a > 0.0 {
                    lo = lo.min(b / a);
                    hi = hi.max(b / a);
                    if p == 2.0 {
                        if let Some(r) = lp_ratio(d, f) {
                            p2_err = p2_err.max(((b / a).powi(2) - r).abs());
                        }
                    }
                }
            }
            sq_table.rows.push(vec![p, lo, hi]);
        }
        let act = d.active();
        let k0 = act.get(act.len() / 2).copied().unwrap_or(d.k_min);
        let off = off_diagonal_fraction(d, k0, &fam[0]).unwrap_or(0.0);
        let square = VerificationReport::new(
            "square_function",
            constants([("p2_identity_error", p2_err), ("off_diagonal_fraction", off), ("k0", k0 as f64)]),
            serde_json::to_value(&sq_table.rows).unwrap_or_default(),
            p2_err <= 1e-9 && off < 0.1 && sq_table.rows.iter().all(|r| r[1] > 0.0 && r[2].is_finite()),
            constants([("p2_identity", 1e-9), ("off_diagonal", 0.1)]),
        );
        let mut decay_t = Table::new("dk_decay", &["j", "k", "norm"]);
        decay_t.rows = fit.samples.iter().map(|&(j, k, v)| vec![j as f64, k as f64, v]).collect();
        let mut curve = Table::new("norm_vs_n", &["N", "i_minus_phi_norm"]);
        curve.rows = d.norm_curve.iter().map(|&(n, v)| vec![n as f64, v]).collect();
        let mut hist = Table::new("quasi_orthogonality", &["index", "ratio"]);
        hist.rows = q2.ratios.iter().enumerate().map(|(i, &r)| vec![i as f64, r]).collect();
        let mut e = Table::new("e_norms", &["t", "norm"]);
        e.rows = d.e_norms.iter().map(|&(t, v)| vec![t as f64, v]).collect();
        Ok((
            vec![identities, almost, decay, quasi, square],
            vec![decay_t, curve, hist, e, sq_table],
        ))
    }

    fn carleson(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let d = self.decomp();
        let lat = &self.tuned().lattice;
        let bat = self.battery();
        let g = self.log_test_function();
        let est = rbmo_norm(self.mu, &g, bat)?;
        let ones = vec![1.0; self.mu.len()];
        let shifted: Vec<f64> = g.iter().map(|v| v + 3.5).collect();
        let const_norm = rbmo_norm(self.mu, &ones, bat)?.norm;
        let shift_gap = (rbmo_norm(self.mu, &shifted, bat)?.norm - est.norm).abs();
        let rbmo = VerificationReport::new(
            "rbmo_norm",
            constants([
                ("norm", est.norm),
                ("oscillation_part", est.oscillation_part),
                ("transition_part", est.transition_part),
                ("constant_norm", const_norm),
                ("shift_gap", shift_gap),
                ("battery_cubes", bat.len() as f64),
                ("battery_pairs", bat.pairs.len() as f64),
            ]),
            serde_json::to_value(&est).unwrap_or_default(),
            est.norm > 0.0 && est.norm.is_finite() && const_norm <= 1e-12 && shift_gap <= 1e-9 * est.norm,
            constants([("seminorm", 1e-9)]),
        );
        let sq0 = verify_rbmo_square(self.mu, d, lat, &g, est.norm, 0);
        let sq2 = verify_rbmo_square(self.mu, d, lat, &g, est.norm, 2);
        let square = VerificationReport::new(
            "rbmo_square_sum",
            constants([
                ("ratio_n0_0", sq0.max_ratio),
                ("ratio_n0_2", sq2.max_ratio),
                ("cubes", sq0.cubes as f64),
            ]),
            serde_json::json!({"n0_0": sq0.witness, "n0_2": sq2.witness}),
            sq2.max_ratio.is_finite() && sq2.max_ratio >= sq0.max_ratio,
            BTreeMap::new(),
        );
        let a = paraproduct_densities(d, &g);
        let fam = random_band_family(d, self.cfg.family_size, self.cfg.seed() ^ 0xca7);
        let c = carleson_check(self.mu, lat, d, &a, &fam);
        let carl = VerificationReport::new(
            "carleson",
            constants([
                ("c9", c.c9),
                ("c9_over_rbmo_sq", c.c9 / (est.norm * est.norm)),
                ("max_ratio", c.max_ratio),
                ("sup_ratio", c.sup_ratio),
                ("trivial", c.trivial as u8 as f64),
            ]),
            serde_json::json!({"c9": c.c9_witness}),
            !c.trivial && c.sup_ratio.is_finite() && c.max_ratio <= c.sup_ratio * (1.0 + 1e-6),
            BTreeMap::new(),
        );
        // maximal operators on the family, a heavy atom and the constant
        let mut heavy = vec![0.0; self.mu.len()];
        let hi = (0..self.mu.len())
            .max_by(|&i, &j| self.mu.weight(i).total_cmp(&self.mu.weight(j)))
            .unwrap_or(0);
        heavy[hi] = 1.0 / self.mu.weight(hi);
        let mut ratio = 0.0_f64;
        let mut m2_one = 0.0_f64;
        let mut mt = Table::new("maximal_ratio", &["test", "ratio"]);
        for (i, f) in fam.iter().take(10).chain([&heavy, &ones]).enumerate() {
            let m = maximal_ops(self.mu, lat, d, f);
            ratio = ratio.max(m.ratio);
            if std::ptr::eq(f, &ones) {
                m2_one = m.m2.iter().copied().fold(0.0, f64::max);
            }
            mt.rows.push(vec![i as f64, m.ratio]);
        }
        let maximal = VerificationReport::new(
            "maximal_operators",
            constants([("ms_over_m2", ratio), ("m2_of_one", m2_one)]),
            serde_json::Value::Null,
            ratio.is_finite() && m2_one <= 1.0 + 1e-12,
            BTreeMap::new(),
        );
        Ok((vec![rbmo, square, carl, maximal], vec![mt]))
    }

    fn t1(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let mu = self.mu;
        let seed = self.cfg.seed();
        let kernel = CZKernel::builtin(self.cfg.kernel, mu.n());
        let (krep, kc) = measure_kernel_constants(mu, &kernel, self.cfg.samples * 5, seed);
        let params = self.cfg.t1_params(mu);
        let (trep, battery) = t1_battery_on(mu, self.battery(), &kernel, &params)?;
        let fam = random_band_family(self.decomp(), 10, seed ^ 0x71);
        let eps_mid = params.eps_list[params.eps_list.len() / 2];
        let gap = truncation_gap(mu, &kernel, eps_mid, self.inputs.delta.c0, &fam)?;
        let gap_rep = VerificationReport::new(
            "truncation_gap",
            constants([("max_ratio", gap.max_ratio), ("bound", gap.bound), ("epsilon", eps_mid)]),
            serde_json::Value::Null,
            gap.pass,
            BTreeMap::new(),
        );
        let smooth = TruncatedOperator::new(mu, &kernel, mu.resolution(), true)?;
        let (prep, _) = pairing_decay(mu, &self.tuned().lattice, self.decomp(), &smooth.matrix, self.cfg.samples, seed)?;
        let (hrep, hrows) = hormander_check(mu, self.decomp(), &[1, 2, 3, 4, 5, 6], seed)?;
        let (c_sep, used) = separated_pairing(mu, self.battery(), &smooth.matrix, kernel.delta, 500, seed);
        let sep = VerificationReport::new(
            "separated_pairing",
            constants([("constant", c_sep), ("pairs", used as f64), ("measured_c1", kc.c1), ("measured_c2", kc.c2)]),
            serde_json::Value::Null,
            c_sep.is_finite(),
            BTreeMap::new(),
        );
        let mut header = vec!["epsilon", "weak", "rbmo_t1", "rbmo_tstar1"];
        let names: Vec<String> = params.p_list.iter().map(|p| format!("lp_{p}")).collect();
        header.extend(names.iter().map(|s| s.as_str()));
        let mut rows = Table::new("t1_battery", &header);
        for r in &battery.rows {
            let mut v = vec![r.epsilon, r.weak, r.rbmo_t1, r.rbmo_tstar1];
            v.extend(r.lp.iter().map(|x| x.1));
            rows.rows.push(v);
        }
        let mut h = Table::new("hormander", &["N", "C1", "C2prime", "norm"]);
        h.rows = hrows.iter().map(|(n, c)| vec![*n as f64, c.c1, c.c2_prime, c.norm]).collect();
        Ok((vec![krep, trep, gap_rep, prep, hrep, sep], vec![rows, h]))
    }

    fn paraproduct(&self) -> Result<(Vec<VerificationReport>, Vec<Table>)> {
        let d = self.decomp();
        let g = self.log_test_function();
        let b_norm = rbmo_norm(self.mu, &g, self.battery())?.norm;
        let mut t = Table::new("paraproduct", &["m", "norm_over_rbmo", "adjoint_one", "one_gap", "c10", "c11", "triples"]);
        let mut kernel_c = Vec::new();
        for &m in &self.cfg.paraproduct_m {
            let u = paraproduct(d, &g, m)?;
            let c = paraproduct_checks(d, &u, &g, self.cfg.seed())?;
            let kc = paraproduct_kernel_check(self.mu, &self.tuned().lattice, &u, 10);
            t.rows.push(vec![
                m as f64,
                c.norm / b_norm,
                c.adjoint_one,
                c.one_gap,
                kc.c10,
                kc.c11,
                kc.triples as f64,
            ]);
            kernel_c.push(kc);
        }
        let ratios: Vec<f64> = t.rows.iter().map(|r| r[1]).collect();
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let variation = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        let adj = t.rows.iter().map(|r| r[2]).fold(0.0, f64::max);
        let gaps: Vec<f64> = t.rows.iter().map(|r| r[3]).collect();
        let monotone = gaps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
            && gaps.last() < gaps.first();
        let rep = VerificationReport::new(
            "paraproduct",
            constants([
                ("rbmo_norm", b_norm),
                ("ratio_variation", variation),
                ("adjoint_one", adj),
                ("one_gap_first", gaps.first().copied().unwrap_or(f64::NAN)),
                ("one_gap_last", gaps.last().copied().unwrap_or(f64::NAN)),
            ]),
            serde_json::to_value(&t.rows).unwrap_or_default(),
            variation < 0.3 && adj <= 1e-8 && monotone,
            constants([("ratio_variation", 0.3), ("adjoint_one", 1e-8)]),
        );
        let c10 = kernel_c.iter().map(|k| k.c10).fold(0.0, f64::max);
        let c11 = kernel_c.iter().map(|k| k.c11).fold(0.0, f64::max);
        let triples = kernel_c.iter().map(|k| k.triples).max().unwrap_or(0);
        let krep = VerificationReport::new(
            "paraproduct_kernel",
            constants([("c10", c10), ("c11", c11), ("triples", triples as f64)]),
            serde_json::json!({"vacuous_smoothness": triples == 0}),
            c10.is_finite() && c11.is_finite(),
            BTreeMap::new(),
        );
        Ok((vec![rep, krep], vec![t]))
    }
}

/// Atom closest to the center of mass, lowest index on ties.
pub fn central_atom(mu: &DiscreteMeasure) -> usize {
    let total = mu.total_mass();
    let bary: Vec<f64> = (0..mu.dim())
        .map(|c| (0..mu.len()).map(|i| mu.weight(i) * mu.point(i)[c]).sum::<f64>() / total)
        .collect();
    (0..mu.len())
        .min_by(|&i, &j| euclid_dist(mu.point(i), &bary).total_cmp(&euclid_dist(mu.point(j), &bary)))
        .unwrap_or(0)
}

/// Energy table of `f` over the band, for `lp-analyze`.
pub fn energy_rows(decomp: &LpDecomposition, f: &[f64]) -> Table {
    let mut t = Table::new("energy", &["k", "energy"]);
    t.rows = energy_table(decomp, f).into_iter().map(|(k, e)| vec![k as f64, e]).collect();
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_example, ExampleKind};

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse_list(s.name()).unwrap(), vec![s]);
        }
        assert_eq!(Suite::parse_list("all").unwrap().len(), 7);
        assert!(Suite::parse_list("nope").is_err());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let c: SuiteConfig = serde_json::from_str(r#"{"rho": 3.0}"#).unwrap();
        assert_eq!(c.rho, 3.0);
        assert_eq!(c.n_max, 10);
    }

    #[test]
    fn small_measure_runs_every_suite() {
        let mu = generate_example(&ExampleKind::from_name("uniform_interval", 48, 1).unwrap())
            .unwrap()
            .measure;
        let cfg = SuiteConfig {
            family_size: 10,
            regularity_pairs: 500,
            samples: 200,
            ..SuiteConfig::default()
        };
        let ctx = Context::prepare(&mu, cfg, &Suite::ALL).unwrap();
        for s in Suite::ALL {
            let out = ctx.run(s).unwrap();
            assert!(!out.reports.is_empty(), "{}", s.name());
            for r in &out.reports {
                assert!(!r.lemma.is_empty());
            }
        }
    }
}
