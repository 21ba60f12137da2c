use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lpnd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpnd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_measure_uniform_interval_has_n_one() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["gen-measure", "uniform-interval", "--atoms", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&d.path().join("out/uniform_interval.json"));
    assert_eq!(m["n"].as_f64(), Some(1.0));
    assert_eq!(m["weights"].as_array().unwrap().len(), 200);
    assert!(stdout(&o).contains("growth constant"));
}

#[test]
fn gen_measure_comb_prints_non_doubling_witness() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["gen-measure", "comb", "--levels", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("non-doubling witness"), "{}", stdout(&o));
    assert!(d.path().join("out/comb.json").exists());
}

#[test]
fn gen_measure_cantor_level_four_has_256_atoms() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["gen-measure", "cantor", "--level", "4", "-o", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&d.path().join("c.json"));
    assert_eq!(m["points"].as_array().unwrap().len(), 256);
    assert_eq!(m["dim"].as_u64(), Some(2));
}

#[test]
fn unknown_measure_kind_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["gen-measure", "moon"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown measure kind"));
}

#[test]
fn verify_delta_passes_and_is_byte_stable() {
    let d = tempfile::tempdir().unwrap();
    let g = lpnd(d.path(), &["gen-measure", "uniform-interval", "--atoms", "200"]);
    assert!(g.status.success());
    let run = |out: &str| {
        lpnd(
            d.path(),
            &["verify", "--suite", "delta", "--measure", "out/uniform_interval.json", "--seed", "3", "--out", out],
        )
    };
    let a = run("a");
    assert!(a.status.success(), "{}{}", stdout(&a), stderr(&a));
    assert!(stdout(&a).contains("PASS delta/delta_properties"));
    let b = run("b");
    assert!(b.status.success());
    for name in ["growth.json", "delta_properties.json"] {
        let ra = fs::read(d.path().join("a/delta").join(name)).unwrap();
        let rb = fs::read(d.path().join("b/delta").join(name)).unwrap();
        assert_eq!(ra, rb, "{name} differs between reruns");
        let v: Value = serde_json::from_slice(&ra).unwrap();
        assert_eq!(v["seed"].as_u64(), Some(3));
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
        assert!(v["measured_constants"].is_object() && v["tolerances"].is_object());
    }
}

#[test]
fn csv_measure_needs_growth_exponent() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("m.csv"), "x,w\n0.0,0.5\n1.0,0.5\n").unwrap();
    let o = lpnd(d.path(), &["check-growth", "--measure", "m.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lpnd(d.path(), &["check-growth", "--measure", "m.csv", "--n", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("out/delta/growth.json").exists());
}

#[test]
fn t1_suite_separates_cauchy_from_singular_kernel() {
    let d = tempfile::tempdir().unwrap();
    let base = ["verify", "--suite", "t1", "--example", "lipschitz", "--atoms", "128"];
    let mut good = base.to_vec();
    good.extend(["--kernel", "cauchy-re", "--out", "good"]);
    let o = lpnd(d.path(), &good);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));

    let mut bad = base.to_vec();
    bad.extend(["--kernel", "singular", "--out", "bad"]);
    let o = lpnd(d.path(), &bad);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("first failing report: t1/t1_battery"), "{}", stderr(&o));
    let r = read_json(&d.path().join("bad/t1/t1_battery.json"));
    assert_eq!(r["pass"], Value::Bool(false));
    assert!(!r["worst_witness"].is_null());
}

#[test]
fn kernel_from_file_and_report_path() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("k.json"), r#"{"kind": "cauchy_im"}"#).unwrap();
    let o = lpnd(
        d.path(),
        &[
            "t-one", "--example", "lipschitz", "--atoms", "96", "--kernel", "file", "--kernel-file", "k.json",
            "--rho", "3", "--eps-grid", "0.02,0.04,0.08", "--report", "battery.json",
        ],
    );
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let r = read_json(&d.path().join("battery.json"));
    assert_eq!(r["lemma"], "t1_battery");
    assert!(r["config_hash"].is_string());
}

#[test]
fn lp_analyze_constant_has_one_nonzero_energy() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["lp-analyze", "--example", "comb", "--atoms", "96", "--f", "constant"]);
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("out/lp/energy.csv")).unwrap();
    let energies: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let big = energies.iter().filter(|e| **e > 1e-12).count();
    assert_eq!(big, 1, "{energies:?}");
}

#[test]
fn lp_analyze_random_ratio_is_inside_recorded_interval() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["lp-analyze", "--example", "comb", "--atoms", "96", "--f", "random:7"]);
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let s = read_json(&d.path().join("out/lp/summary.json"));
    let r = s["ratio"].as_f64().unwrap();
    let q = read_json(&d.path().join("out/lp/quasi_orthogonality.json"));
    let c = &q["measured_constants"];
    let lo = c["min_doubled"].as_f64().unwrap().min(c["min"].as_f64().unwrap());
    let hi = c["max_doubled"].as_f64().unwrap().max(c["max"].as_f64().unwrap());
    assert!(lo <= r && r <= hi, "{r} not in [{lo}, {hi}]");
}

#[test]
fn lp_analyze_rejects_unknown_f() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["lp-analyze", "--example", "comb", "--atoms", "32", "--f", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown f spec"));
}

#[test]
fn build_lattice_writes_lattice_and_rounds() {
    let d = tempfile::tempdir().unwrap();
    let o = lpnd(d.path(), &["build-lattice", "--example", "uniform-interval", "--atoms", "64"]);
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    assert!(d.path().join("out/lattice/lattice.json").exists());
    let rounds = fs::read_to_string(d.path().join("out/lattice/tuning_rounds.csv")).unwrap();
    assert!(rounds.starts_with("round,sigma"));
}

#[test]
fn config_file_sets_measure_and_seed_flag_overrides() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("run.json"),
        r#"{"measure": {"example": {"kind": "uniform_interval", "atoms": 50}}, "out": "cfgout"}"#,
    )
    .unwrap();
    let o = lpnd(d.path(), &["--config", "run.json", "--seed", "11", "check-growth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("cfgout/delta/growth.json"));
    assert_eq!(r["seed"].as_u64(), Some(11));
}
