use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use lpnd_core::czo::KernelKind;
use lpnd_core::lp::random_band_family;
use lpnd_core::measure::{generate_example, growth_constant, worst_doubling_ratio, ExampleKind};
use lpnd_core::report::config_hash;
use lpnd_core::suites::{energy_rows, Context, Suite, SuiteOutput, Table};
use lpnd_core::{Cube, DiscreteMeasure, VerificationReport};
use serde::Serialize;

use crate::config::{example_name, load_measure, MeasureSource, RunConfig};
use crate::{Cli, Command, MeasureArgs};

/// Resolved configuration plus where to write.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

#[derive(Serialize)]
struct Provenance<'a> {
    measure: &'a Option<MeasureSource>,
    config: &'a RunConfig,
    command: &'a str,
}

impl Run {
    fn hash(&self, command: &str) -> String {
        config_hash(&Provenance {
            measure: &self.cfg.measure,
            config: &self.cfg,
            command,
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.suites.seed()
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn write_report(&self, dir: &Path, r: &VerificationReport, hash: &str) -> Result<()> {
        let r = r.clone().with_provenance(hash, self.seed());
        let path = dir.join(format!("{}.json", r.lemma));
        fs::write(&path, r.to_json() + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn write_tables(&self, dir: &Path, tables: &[Table]) -> Result<()> {
        for t in tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        Ok(())
    }

    /// Writes a suite's output and prints one line per report.
    fn emit(&self, out: &SuiteOutput, hash: &str) -> Result<()> {
        let dir = self.dir(out.suite.name())?;
        for r in &out.reports {
            self.write_report(&dir, r, hash)?;
            println!(
                "{} {}/{}",
                if r.pass { "PASS" } else { "FAIL" },
                out.suite.name(),
                r.lemma
            );
        }
        self.write_tables(&dir, &out.tables)
    }

    fn measure(&mut self, args: &MeasureArgs) -> Result<DiscreteMeasure> {
        if let Some(path) = &args.measure {
            self.cfg.measure = Some(MeasureSource::File {
                path: path.clone(),
                n: args.n,
                resolution: args.resolution,
            });
        } else if let Some(name) = &args.example {
            let kind = ExampleKind::from_name(example_name(name)?, args.atoms, self.seed())?;
            self.cfg.measure = Some(MeasureSource::Example(kind));
        }
        match &self.cfg.measure {
            Some(src) => load_measure(src),
            None => bail!("no measure given; use --measure FILE, --example NAME or a config file"),
        }
    }
}

pub fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.suites.tuning.seed = s;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut run = Run { cfg, out };
    match cli.command {
        Command::GenMeasure {
            kind,
            atoms,
            levels,
            level,
            output,
        } => gen_measure(&run, &kind, atoms, levels, level, output),
        Command::CheckGrowth(m) => single(&mut run, &m, Suite::Delta, "check-growth"),
        Command::BuildLattice(m) => build_lattice(&mut run, &m),
        Command::BuildAoi(m) => single(&mut run, &m, Suite::Aoi, "build-aoi"),
        Command::Verify {
            measure,
            suite,
            kernel,
            kernel_file,
        } => {
            if let Some(k) = kernel {
                run.cfg.suites.kernel = parse_kernel(&k, kernel_file.as_deref())?;
            }
            verify(&mut run, &measure, &suite)
        }
        Command::LpAnalyze { measure, f } => lp_analyze(&mut run, &measure, &f),
        Command::TOne {
            measure,
            kernel,
            kernel_file,
            rho,
            gamma,
            p,
            eps_grid,
            report,
        } => {
            let s = &mut run.cfg.suites;
            s.kernel = parse_kernel(&kernel, kernel_file.as_deref())?;
            if let Some(r) = rho {
                s.rho = r;
            }
            if let Some(g) = gamma {
                s.gamma = g;
            }
            if !p.is_empty() {
                s.p_list = Some(p);
            }
            if !eps_grid.is_empty() {
                s.eps_grid = Some(eps_grid);
            }
            t_one(&mut run, &measure, report)
        }
    }
}

/// Built-in name, or `file` with a JSON description such as
/// `{"kind": "riesz", "component": 1}`.
fn parse_kernel(name: &str, file: Option<&Path>) -> Result<KernelKind> {
    if name == "file" {
        let Some(path) = file else {
            bail!("--kernel file needs --kernel-file PATH");
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing kernel {}", path.display()));
    }
    Ok(KernelKind::from_name(name)?)
}

fn gen_measure(
    run: &Run,
    kind: &str,
    atoms: Option<usize>,
    levels: Option<u32>,
    level: Option<u32>,
    output: Option<PathBuf>,
) -> Result<bool> {
    let name = example_name(kind)?;
    let ex = match name {
        "cantor_quarter_planar" => ExampleKind::CantorQuarterPlanar {
            level: level.unwrap_or(4),
        },
        "comb" if levels.is_some() => {
            let l = levels.unwrap_or_default();
            ExampleKind::Comb {
                levels: l,
                ratio: 0.25,
                first_level_atoms: 4usize.saturating_pow(l.saturating_sub(1)).max(2),
            }
        }
        _ => ExampleKind::from_name(name, atoms.unwrap_or(200), run.seed())?,
    };
    let g = generate_example(&ex)?;
    let mu = &g.measure;
    let path = match output {
        Some(p) => p,
        None => run.dir("")?.join(format!("{name}.json")),
    };
    fs::write(&path, serde_json::to_string_pretty(mu)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    let c0 = growth_constant(mu)?;
    let w = g.witness.unwrap_or_else(|| worst_doubling_ratio(mu));
    println!("wrote {} ({} atoms, d={}, n={})", path.display(), mu.len(), mu.dim(), mu.n());
    println!("growth constant C0 = {:.6} at atom {} radius {:.3e}", c0.c0, c0.witness_atom, c0.witness_radius);
    println!(
        "{}: mu(2Q)/mu(Q) = {:.3} on {:?}",
        if w.violates { "non-doubling witness" } else { "doubling, worst ratio" },
        w.ratio,
        w.cube
    );
    Ok(true)
}

fn single(run: &mut Run, m: &MeasureArgs, suite: Suite, command: &str) -> Result<bool> {
    let mu = run.measure(m)?;
    let ctx = Context::prepare(&mu, run.cfg.suites.clone(), &[suite])?;
    let out = ctx.run(suite)?;
    run.emit(&out, &run.hash(command))?;
    Ok(report_outcome(&[out]))
}

fn build_lattice(run: &mut Run, m: &MeasureArgs) -> Result<bool> {
    let mu = run.measure(m)?;
    let ctx = Context::prepare(&mu, run.cfg.suites.clone(), &[Suite::Lattice])?;
    let out = ctx.run(Suite::Lattice)?;
    let hash = run.hash("build-lattice");
    run.emit(&out, &hash)?;
    let tuned = ctx.tuned.as_ref().expect("lattice prepared");
    let path = run.dir("lattice")?.join("lattice.json");
    fs::write(&path, serde_json::to_string(&tuned.lattice)?)?;
    println!("wrote {}", path.display());
    Ok(report_outcome(&[out]))
}

fn verify(run: &mut Run, m: &MeasureArgs, suite: &str) -> Result<bool> {
    let suites = Suite::parse_list(suite)?;
    let mu = run.measure(m)?;
    let ctx = Context::prepare(&mu, run.cfg.suites.clone(), &suites)?;
    let hash = run.hash("verify");
    let mut outs = Vec::new();
    for s in suites {
        let out = ctx.run(s)?;
        run.emit(&out, &hash)?;
        outs.push(out);
    }
    Ok(report_outcome(&outs))
}

fn lp_analyze(run: &mut Run, m: &MeasureArgs, f_spec: &str) -> Result<bool> {
    let spec = parse_f(f_spec)?;
    let mu = run.measure(m)?;
    let ctx = Context::prepare(&mu, run.cfg.suites.clone(), &[Suite::Lp])?;
    let out = ctx.run(Suite::Lp)?;
    let hash = run.hash("lp-analyze");
    run.emit(&out, &hash)?;
    let decomp = ctx.decomp.as_ref().expect("decomposition prepared");
    let f = test_function(&ctx, &spec)?;
    let dir = run.dir("lp")?;
    energy_rows(decomp, &f).write_csv(&dir.join("energy.csv"))?;
    let ratio = lpnd_core::lp::lp_ratio(decomp, &f);
    let mut sq = Table::new("square_function_f", &["p", "f_norm", "square_norm"]);
    for &p in &run.cfg.suites.square_exponents {
        let (a, b) = lpnd_core::lp::square_function_lp(decomp, &f, p)?;
        sq.rows.push(vec![p, a, b]);
    }
    sq.write_csv(&dir.join("square_function_f.csv"))?;
    let summary = serde_json::json!({
        "f": f_spec,
        "ratio": ratio,
        "decomposition": decomp.summary(),
        "config_hash": hash,
        "seed": run.seed(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    match ratio {
        Some(r) => println!("r(f) = {r:.6}"),
        None => println!("r(f) undefined: f vanishes on the band"),
    }
    Ok(report_outcome(&[out]))
}

/// Test function for `lp-analyze`.
enum FSpec {
    Constant,
    LogDistance,
    Random(u64),
    Indicator(usize, f64),
}

/// `constant`, `random:SEED`, `indicator:ATOM:SIDE` or `log-distance`.
fn parse_f(spec: &str) -> Result<FSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    Ok(match parts.as_slice() {
        ["constant"] => FSpec::Constant,
        ["log-distance"] => FSpec::LogDistance,
        ["random", seed] => FSpec::Random(seed.parse().context("random seed")?),
        ["indicator", atom, side] => FSpec::Indicator(
            atom.parse().context("indicator atom")?,
            side.parse().context("indicator side")?,
        ),
        _ => bail!("unknown f spec `{spec}`"),
    })
}

fn test_function(ctx: &Context<'_>, spec: &FSpec) -> Result<Vec<f64>> {
    let mu = ctx.mu;
    Ok(match *spec {
        FSpec::Constant => vec![1.0; mu.len()],
        FSpec::LogDistance => ctx.log_test_function(),
        FSpec::Random(seed) => {
            let decomp = ctx.decomp.as_ref().expect("decomposition prepared");
            random_band_family(decomp, 1, seed).remove(0)
        }
        FSpec::Indicator(atom, side) => {
            if atom >= mu.len() {
                bail!("atom {atom} out of range");
            }
            let q = Cube::with_side(mu.point(atom), side);
            (0..mu.len())
                .map(|i| if q.contains_point(mu.point(i)) { 1.0 } else { 0.0 })
                .collect()
        }
    })
}

fn t_one(run: &mut Run, m: &MeasureArgs, report: Option<PathBuf>) -> Result<bool> {
    let mu = run.measure(m)?;
    let ctx = Context::prepare(&mu, run.cfg.suites.clone(), &[Suite::T1])?;
    let out = ctx.run(Suite::T1)?;
    let hash = run.hash("t-one");
    run.emit(&out, &hash)?;
    if let Some(path) = report {
        let battery = out
            .reports
            .iter()
            .find(|r| r.lemma == "t1_battery")
            .expect("battery report present")
            .clone()
            .with_provenance(&hash, run.seed());
        fs::write(&path, battery.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report_outcome(&[out]))
}

fn report_outcome(outs: &[SuiteOutput]) -> bool {
    let failing = outs.iter().find_map(|o| o.first_failure().map(|r| (o.suite, r)));
    match failing {
        Some((s, r)) => {
            eprintln!("first failing report: {}/{}", s.name(), r.lemma);
            false
        }
        None => true,
    }
}
