use std::path::Path;
use std::process::{Command, Output};

use coalesce::commands::{cmd_constants, cmd_fit, cmd_negdep, NegdepOptions, Species};
use coalesce::config::ExperimentSpec;
use coalesce::io::{write_csv, SeriesRow, SERIES_COLUMNS};
use coalesce_core::dynamics::ModelParams;
use coalesce_core::estimator::Window;
use coalesce_core::negdep::{na_covariance_test, tail_product_test, Monotone, SampleMatrix, TestConfig};
use coalesce_core::rng::{stream, Purpose};
use coalesce_core::stats::Verdict;
use coalesce_core::walk::GammaMethod;
use rand::Rng;

fn coalesce(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coalesce")).current_dir(dir).args(args).output().unwrap()
}

const TINY: &[&str] = &["--set", "side=8", "--set", "replicas=2", "--set", "n_points=5", "--set", "t0=0.1", "--set", "ratio=1.5"];

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["simulate"];
        args.extend_from_slice(TINY);
        let o = format!("output={out}");
        args.extend_from_slice(&["--set", &o]);
        let r = coalesce(dir.path(), &args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = std::fs::read(dir.path().join("a/series.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/series.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 6);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "output=first", "--set", "seed=77"]);
    assert!(coalesce(dir.path(), &args).status.success());
    // The manifest is itself a config file; only the output directory differs.
    let r = coalesce(dir.path(), &["simulate", "--config", "first/manifest.txt", "--set", "output=second"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read(dir.path().join("first/series.csv")).unwrap(), std::fs::read(dir.path().join("second/series.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Guard: L=8 in d=3 allows t up to 2/3.
    assert_eq!(coalesce(p, &["simulate", "--set", "side=8", "--set", "t0=1"]).status.code(), Some(3));
    assert_eq!(coalesce(p, &["simulate", "--set", "replicas=0"]).status.code(), Some(2));
    assert_eq!(coalesce(p, &["simulate", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(coalesce(p, &["simulate", "--set", "d_a=-1"]).status.code(), Some(2));
    assert_eq!(coalesce(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(coalesce(p, &["constants", "--dim", "2", "--out", "c2.txt"]).status.code(), Some(4));
    assert!(!p.join("c2.txt").exists());

    assert!(coalesce(p, &["constants", "--out", "c.txt"]).status.success());
    assert!(coalesce(p, &["rate-eq", "--points", "4"]).status.success());
    let r = coalesce(p, &["fit", "--series", "rate_eq.csv", "--constants", "c.txt"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing columns"));
}

#[test]
fn constants_file_records_instant_limits() {
    let dir = tempfile::tempdir().unwrap();
    let r = coalesce(dir.path(), &["constants", "--d-b", "1", "--lambda-a", "instant", "--lambda-b", "instant", "--out", "c.txt"]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(dir.path().join("c.txt")).unwrap();
    let get = |k: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{k} ="))).unwrap();
        line.split('=').nth(1).unwrap().split('±').next().unwrap().trim().parse().unwrap()
    };
    // Survival of a coincident pair vanishes; the effective rates stay finite.
    assert_eq!(get("p_a"), 0.0);
    assert_eq!(get("p_b"), 0.0);
    assert!((get("theta") - 2.0).abs() < 1e-12);
    assert!((get("k_a") - get("gamma")).abs() < 1e-12);
    assert!((get("k_b") - 2.0 * get("gamma")).abs() < 1e-12);
}

#[test]
fn fit_recovers_synthetic_constant() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let constants = dir.path().join("c.txt");
    let c = 2.5;
    let rows: Vec<SeriesRow> = (0..20)
        .map(|i| {
            let t = 10.0 * 1.3f64.powi(i);
            SeriesRow {
                t,
                xi_hat: c / t,
                xi_err: 1e-4 * c / t,
                eta_hat: 0.8 * t.powf(-1.5),
                eta_err: 1e-4 * 0.8 * t.powf(-1.5),
                p_occ_a: c / t,
                p_occ_b: 0.8 * t.powf(-1.5),
                n_replicas: 1,
            }
        })
        .collect();
    write_csv(&series, &rows, SERIES_COLUMNS).unwrap();
    cmd_constants(3, &ModelParams::finite(1.0, 0.0, 1.0, 1.0), GammaMethod::default(), 1, Some(&constants)).unwrap();
    let fits = cmd_fit(&series, &constants, Species::Both, Window::Range(10.0, 1000.0), None).unwrap();
    let a = &fits.iter().find(|(n, _)| n == "a").unwrap().1;
    let b = &fits.iter().find(|(n, _)| n == "b").unwrap().1;
    assert!((a.amplitude.value - c).abs() < 1e-6 * c, "{:?}", a.amplitude);
    assert!((a.exponent.value - 1.0).abs() < 1e-6);
    assert!((b.exponent.value - 1.5).abs() < 1e-6, "{:?}", b.exponent);
}

#[test]
fn negdep_mixture_sweep_passes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec { output: dir.path().join("nd"), ..Default::default() };
    let opts = NegdepOptions { times: vec![], occupancy: false, mz: None, mixture_max: Some(64), colour: None, cfg: TestConfig::default() };
    let reports = cmd_negdep(&spec, &opts).unwrap();
    assert_eq!(reports.len(), 64);
    assert!(reports.iter().all(|r| r.verdict == Verdict::Consistent));
    assert!(dir.path().join("nd/negdep.csv").exists());
}

#[test]
fn positive_dependence_is_flagged() {
    // Two columns sharing a common Poisson-like load: strongly positively associated.
    let mut rng = stream(5, 0, Purpose::Analysis);
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let common = f64::from(rng.random_range(0..4u32));
            vec![common + f64::from(rng.random_range(0..2u32)), common + f64::from(rng.random_range(0..2u32))]
        })
        .collect();
    let m = SampleMatrix::from_rows(&rows).unwrap();
    let r = na_covariance_test(&m, &[0], &[1], Monotone::Sum, Monotone::Sum, TestConfig::default(), &mut rng).unwrap();
    assert_eq!(r.verdict, Verdict::Violation);
    let col: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 0.0 } else { 3.0 }).collect();
    // Half the sites empty, half holding three: P[X>=2] = 1/2 > P[X>=1]^2 = 1/4.
    assert_eq!(tail_product_test(&col, None, 1, 1, 0.95).unwrap().verdict, Verdict::Violation);
}
