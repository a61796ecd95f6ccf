//! Subcommand implementations, callable from tests without a process.

use std::path::{Path, PathBuf};
use std::time::Instant;

use coalesce_core::dynamics::{Coalescence, ModelParams};
use coalesce_core::estimator::{fit_a_constant, fit_b_exponent, DensitySeries, Experiment, FitResult, Window};
use coalesce_core::lattice::{Site, TorusGeometry};
use coalesce_core::negdep::{
    mixture_minimum_exact, colour_chain_run, factorial_moment_test, mz_ratio_check, na_covariance_test, sample_occupancies,
    tail_product_test, verify_coalescence, ColourChainParams, Monotone, SampleMatrix, TestConfig,
};
use coalesce_core::rate_eq::closed_form;
use coalesce_core::rng::{stream, Purpose};
use coalesce_core::stats::{TestReport, Verdict};
use coalesce_core::walk::{
    derive_constants, gamma_escape, kernel_mc, GammaMethod, KernelBudget, KernelEstimate, KernelKind, WalkConstants,
};

use crate::config::ExperimentSpec;
use crate::error::{CliError, Result};
use crate::io::{self, RateEqRow};
use crate::manifest::RunManifest;
use crate::runner::{measure_densities_parallel, par_map};

pub struct SimulateOutput {
    pub series: DensitySeries,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Run the ensemble and write `series.csv` and `manifest.txt` into the
/// output directory.
pub fn cmd_simulate(spec: &ExperimentSpec) -> Result<SimulateOutput> {
    spec.validate()?;
    let exp = spec.experiment()?;
    spec.check_finite_size(exp.t_max())?;
    ensure_dir(&spec.output)?;
    let start = Instant::now();
    let series = measure_densities_parallel(&exp, spec.replicas, spec.threads)?;
    let csv = spec.output.join("series.csv");
    io::write_csv(&csv, &io::series_rows(&series), io::SERIES_COLUMNS)?;
    let mut manifest = RunManifest::new("simulate", spec, 0..spec.replicas);
    manifest.events = Some(series.replicas.iter().map(|r| r.events).sum());
    manifest.wall_clock = start.elapsed();
    manifest.outputs.push(csv.clone());
    let manifest_path = spec.output.join("manifest.txt");
    manifest.write(&manifest_path)?;
    Ok(SimulateOutput { series, csv, manifest: manifest_path })
}

/// gamma and the derived constants, written as `name = value ± stderr`.
pub fn cmd_constants(dim: usize, params: &ModelParams, method: GammaMethod, seed: u64, out: Option<&Path>) -> Result<WalkConstants> {
    let gamma = gamma_escape(dim, method, &mut stream(seed, 0, Purpose::Analysis))?;
    let c = derive_constants(params, &gamma)?;
    if let Some(path) = out {
        io::write_kv(path, &io::constants_entries(dim, &c))?;
    }
    Ok(c)
}

/// Naive and modified rate-equation solutions on `t = 0` plus a log grid up
/// to `t_max`.
pub fn cmd_rate_eq(a0: f64, b0: f64, params: &ModelParams, constants: &WalkConstants, t_max: f64, points: usize, out: &Path) -> Result<Vec<RateEqRow>> {
    let (Coalescence::Finite(la), Coalescence::Finite(lb)) = (params.lambda_a, params.lambda_b) else {
        return Err(CliError::Usage("naive rate equations need finite coalescence rates".into()));
    };
    if !(t_max > 0.0) || points < 2 {
        return Err(CliError::Usage("need t_max > 0 and at least 2 points".into()));
    }
    let naive = closed_form(a0, b0, la, lb)?;
    let modified = closed_form(a0, b0, constants.k_a, constants.k_b)?;
    let lo = (t_max * 1e-4).min(1e-2);
    let grid = std::iter::once(0.0).chain((0..points).map(|k| lo * (t_max / lo).powf(k as f64 / (points - 1) as f64)));
    let rows: Vec<RateEqRow> = grid
        .map(|t| {
            let (a_naive, b_naive) = naive.eval(t);
            let (a_mod, b_mod) = modified.eval(t);
            RateEqRow { t, a_naive, b_naive, a_mod, b_mod }
        })
        .collect();
    io::write_csv(out, &rows, io::RATE_EQ_COLUMNS)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    A,
    B,
    Both,
}

/// Fit a stored series against stored constants.
pub fn cmd_fit(series: &Path, constants: &Path, species: Species, window: Window, out: Option<&Path>) -> Result<Vec<(String, FitResult)>> {
    let rows: Vec<io::SeriesRow> = io::read_csv(series, io::SERIES_COLUMNS)?;
    if rows.len() < 3 {
        return Err(CliError::format(series, "need at least 3 rows to fit"));
    }
    let s = io::series_from_rows(&rows);
    let c = io::read_constants(constants)?;
    let mut rng = stream(0, 0, Purpose::Analysis);
    let mut fits = Vec::new();
    if matches!(species, Species::A | Species::Both) {
        fits.push(("a".to_string(), fit_a_constant(&s, &c, window, &mut rng)?));
    }
    if matches!(species, Species::B | Species::Both) {
        fits.push(("b".to_string(), fit_b_exponent(&s, &c, window, &mut rng)?));
    }
    if let Some(path) = out {
        let rows: Vec<io::FitRow> = fits.iter().map(|(name, f)| io::fit_row(name, f)).collect();
        io::write_csv(path, &rows, io::FIT_COLUMNS)?;
    }
    Ok(fits)
}

pub fn fit_summary(species: &str, f: &FitResult) -> String {
    let (what, theory) = match species {
        "a" => ("c in xi ~ c/t", "1/(p_A lambda_A)"),
        _ => ("theta in eta ~ c0 t^-theta", "p_B lambda_B/(p_A lambda_A)"),
    };
    let fitted = if species == "a" { f.amplitude } else { f.exponent };
    let mut s = format!(
        "{what}: {:.4} ± {:.4} (theory {theory} = {:.4}, z = {:+.2}, relative deviation {:+.2}%)\n",
        fitted.value,
        fitted.stderr,
        f.theory,
        f.z,
        100.0 * f.rel_dev
    );
    if species == "a" {
        s += &format!("  log-log decay exponent {:.4} ± {:.4}\n", f.exponent.value, f.exponent.stderr);
    } else {
        s += &format!("  amplitude c0 {:.4e} ± {:.2e}\n", f.amplitude.value, f.amplitude.stderr);
    }
    s += &format!("  window [{:.3}, {:.3}], {} points, log-log rms {:.3e}\n", f.window.0, f.window.1, f.points, f.rms);
    s
}

/// Rows of `len` consecutive sites along the first axis, one row per base
/// site whose first coordinate is a multiple of `len`. The rows tile the
/// torus without overlap.
pub fn line_layout(geom: &TorusGeometry, len: usize) -> Vec<Vec<Site>> {
    (0..geom.volume())
        .map(Site)
        .filter(|&s| geom.coordinate(s, 0) % len == 0 && geom.coordinate(s, 0) + len <= geom.side())
        .map(|s| {
            let mut row = vec![s];
            for _ in 1..len {
                row.push(geom.step(*row.last().unwrap(), 0));
            }
            row
        })
        .collect()
}

/// `sample_occupancies` over replicas in parallel, rows in replica order.
pub fn sample_occupancies_parallel(exp: &Experiment, t: f64, layout: &[Vec<Site>], replicas: std::ops::Range<u64>, threads: usize) -> Result<SampleMatrix> {
    let start = replicas.start;
    let parts = par_map(replicas.clone(), threads, |r| sample_occupancies(exp, t, layout, r..r + 1))?;
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for (i, m) in parts.iter().enumerate() {
        for r in 0..m.rows() {
            rows.push(m.row(r).to_vec());
            groups.push(i);
        }
    }
    let mut m = SampleMatrix::from_rows(&rows)?.with_groups(groups)?;
    m.t = Some(t);
    m.seed = Some(exp.seed);
    m.replicas = Some(start..replicas.end);
    Ok(m)
}

/// Negative-association checks on line samples of four sites: single-site
/// counts, occupation indicators, pair sums, and min against max.
pub fn na_family<R: rand::Rng + ?Sized>(m: &SampleMatrix, cfg: TestConfig, rng: &mut R) -> Result<Vec<TestReport>> {
    let cases: [(&str, &[usize], &[usize], Monotone, Monotone); 4] = [
        ("na_count_neighbours", &[0], &[1], Monotone::Sum, Monotone::Sum),
        ("na_occupied_neighbours", &[0], &[1], Monotone::AtLeast(1.0), Monotone::AtLeast(1.0)),
        ("na_pair_sums", &[0, 1], &[2, 3], Monotone::Sum, Monotone::Sum),
        ("na_min_vs_max", &[0, 1], &[2, 3], Monotone::Min, Monotone::Max),
    ];
    cases
        .iter()
        .map(|(name, f_set, g_set, f, g)| {
            let mut r = na_covariance_test(m, f_set, g_set, *f, *g, cfg, rng)?;
            r.name = (*name).into();
            Ok(r)
        })
        .collect()
}

/// All entries of `m` as one column, each tagged with its row's group.
fn pooled_sites(m: &SampleMatrix) -> (Vec<f64>, Vec<usize>) {
    let mut col = Vec::with_capacity(m.rows() * m.cols());
    let mut groups = Vec::with_capacity(col.capacity());
    for r in 0..m.rows() {
        let g = m.groups().map_or(r, |g| g[r]);
        col.extend_from_slice(m.row(r));
        groups.extend(std::iter::repeat_n(g, m.cols()));
    }
    (col, groups)
}

/// Occupancy tests at time `t`: the NA family, the tail product with
/// `k = l = 1`, and factorial moments of order 2 and 3.
pub fn occupancy_suite(exp: &Experiment, t: f64, replicas: u64, cfg: TestConfig, threads: usize) -> Result<Vec<TestReport>> {
    let layout = line_layout(&exp.geom, 4);
    let m = sample_occupancies_parallel(exp, t, &layout, 0..replicas, threads)?;
    let mut rng = stream(exp.seed, 0, Purpose::Custom(t.to_bits()));
    let mut out = na_family(&m, cfg, &mut rng)?;
    // Single-site tests pool every sampled site; rows stay clustered by replica.
    let (col, groups) = pooled_sites(&m);
    out.push(tail_product_test(&col, Some(&groups), 1, 1, cfg.level)?);
    for n in [2, 3] {
        let mut r = factorial_moment_test(&col, Some(&groups), n, cfg, &mut rng)?;
        r.name = format!("factorial_moment_{n}");
        out.push(r);
    }
    for r in &mut out {
        r.detail = format!("t={t} {}", r.detail);
    }
    Ok(out)
}

/// Centred occupancies of the first `grid.last()` sites, one row per
/// replica, tested for growth of the square-function ratio.
pub fn mz_suite(exp: &Experiment, t: f64, replicas: u64, p: u32, grid: &[usize], cfg: TestConfig, threads: usize) -> Result<coalesce_core::negdep::MzResult> {
    let n_max = *grid.last().ok_or_else(|| CliError::Usage("empty N grid".into()))?;
    if n_max > exp.geom.volume() {
        return Err(CliError::Usage(format!("N = {n_max} exceeds the {} lattice sites", exp.geom.volume())));
    }
    let layout = vec![(0..n_max).map(Site).collect::<Vec<_>>()];
    let m = sample_occupancies_parallel(exp, t, &layout, 0..replicas, threads)?;
    Ok(mz_ratio_check(&m, p, grid, cfg, &mut stream(exp.seed, 1, Purpose::Analysis))?)
}

/// Exact mixture bound for every `N` up to `n_max`, as exact-margin reports.
pub fn mixture_sweep(n_max: u32) -> Result<Vec<TestReport>> {
    (1..=n_max)
        .map(|n| {
            let m = mixture_minimum_exact(n)?;
            let excess = 1.0 - m.to_f64();
            let mut r = TestReport::from_interval(format!("mixture_min_n{n}"), excess, 0.0, excess, excess, 1.0)
                .with_detail(format!("min_j 4(N+1)P[sum=j] = {}/{} at j={}", m.numerator, m.denominator, m.argmin));
            r.verdict = if m.at_least_one() { Verdict::Consistent } else { Verdict::Violation };
            Ok(r)
        })
        .collect()
}

/// Covariance of colour-summed counts at the two central sites of the
/// discrete chain, after checking coalescence on every trajectory.
pub fn colour_suite(params: &ColourChainParams, seed: u64, replicas: u64, cfg: TestConfig, threads: usize) -> Result<TestReport> {
    let c = params.centre();
    let samples = par_map(0..replicas, threads, |r| {
        let traj = colour_chain_run(params, seed, r)?;
        verify_coalescence(&traj)?;
        let counts = traj.states.last().expect("initial state always stored").counts(params.colours);
        Ok(vec![f64::from(counts[c]), f64::from(counts[c + 1])])
    })?;
    let m = SampleMatrix::from_rows(&samples)?;
    let mut r = na_covariance_test(&m, &[0], &[1], Monotone::Sum, Monotone::Sum, cfg, &mut stream(seed, 2, Purpose::Analysis))?;
    r.name = "colour_chain_na".into();
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegdepOptions {
    pub times: Vec<f64>,
    pub occupancy: bool,
    pub mz: Option<(u32, Vec<usize>)>,
    pub mixture_max: Option<u32>,
    pub colour: Option<ColourChainParams>,
    pub cfg: TestConfig,
}

/// Run the selected negative-dependence checks and write `negdep.csv`.
pub fn cmd_negdep(spec: &ExperimentSpec, opts: &NegdepOptions) -> Result<Vec<TestReport>> {
    spec.validate()?;
    let exp = spec.experiment()?;
    if opts.occupancy || opts.mz.is_some() {
        spec.check_finite_size(opts.times.iter().copied().fold(0.0, f64::max))?;
    }
    ensure_dir(&spec.output)?;
    let mut reports = Vec::new();
    if let Some(n) = opts.mixture_max {
        reports.extend(mixture_sweep(n)?);
    }
    for &t in &opts.times {
        if opts.occupancy {
            reports.extend(occupancy_suite(&exp, t, spec.replicas, opts.cfg, spec.threads)?);
        }
        if let Some((p, grid)) = &opts.mz {
            let mut r = mz_suite(&exp, t, spec.replicas, *p, grid, opts.cfg, spec.threads)?.report;
            r.detail = format!("t={t} {}", r.detail);
            reports.push(r);
        }
    }
    if let Some(params) = &opts.colour {
        reports.push(colour_suite(params, spec.seed, spec.replicas, opts.cfg, spec.threads)?);
    }
    let path = spec.output.join("negdep.csv");
    io::write_csv(&path, &reports.iter().map(io::report_row).collect::<Vec<_>>(), io::REPORT_COLUMNS)?;
    let mut manifest = RunManifest::new("negdep", spec, 0..spec.replicas);
    manifest.outputs.push(path);
    manifest.write(&spec.output.join("manifest.txt"))?;
    Ok(reports)
}

/// Kernel table and summary (`kernels.csv`, `kernels_summary.txt`).
pub fn cmd_kernels(dim: usize, params: &ModelParams, kind: &KernelKind, t: f64, budget: KernelBudget, seed: u64, out_dir: &Path) -> Result<KernelEstimate> {
    let gamma = gamma_escape(dim, GammaMethod::default(), &mut stream(seed, 0, Purpose::Analysis))?;
    let c = derive_constants(params, &gamma)?;
    let survival = match kind {
        KernelKind::PsiAA { .. } => c.p_a,
        KernelKind::PsiB => c.p_b,
    };
    let est = kernel_mc(kind, t, params, dim, budget, Some(survival), &mut stream(seed, 0, Purpose::Custom(0x4b)))?;
    ensure_dir(out_dir)?;
    io::write_csv(&out_dir.join("kernels.csv"), &io::kernel_rows(&est), io::KERNEL_COLUMNS)?;
    let mut entries = vec![
        ("t".to_string(), t.to_string()),
        ("paths".to_string(), est.paths.to_string()),
        ("radius".to_string(), est.radius.to_string()),
        ("mass".to_string(), format!("{} ± {}", est.mass.value, est.mass.stderr)),
        ("outside".to_string(), format!("{} ± {}", est.outside.value, est.outside.stderr)),
        ("survival_constant".to_string(), survival.to_string()),
    ];
    if let Some(d) = est.decorrelation {
        entries.push(("decorrelation".to_string(), format!("{} ± {}", d.value, d.stderr)));
    }
    io::write_kv(&out_dir.join("kernels_summary.txt"), &entries)?;
    Ok(est)
}
