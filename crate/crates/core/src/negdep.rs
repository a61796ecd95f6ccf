//! Negative-dependence checks: covariance of monotone functions, tail
//! products, factorial moments, square-function ratios, the exact mixture
//! bound, and the discrete coloured coalescing chain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::estimator::{run_replica_with, Experiment};
use crate::lattice::Site;
use crate::rng::{open_uniform, stream, Purpose};
use crate::stats::{bootstrap, bootstrap_stderr, mean, mean_estimate, quantile, weighted_line_fit, Estimate, TestReport};

/// Replica-by-observable sample. Rows sharing a group id (e.g. translates
/// taken from one replica) are resampled together.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Vec<f64>,
    cols: usize,
    groups: Option<Vec<usize>>,
    pub t: Option<f64>,
    pub seed: Option<u64>,
    pub replicas: Option<Range<u64>>,
}

impl SampleMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("rows must all have the same length"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample entries must be finite"));
        }
        Ok(Self { data, cols, groups: None, t: None, seed: None, replicas: None })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(invalid("columns must all have the same length"));
        }
        let transposed: Vec<Vec<f64>> = (0..rows).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
        Self::from_rows(&transposed)
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.rows() {
            return Err(invalid("need one group id per row"));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    /// Row indices of each group.
    fn clusters(&self) -> Vec<Vec<usize>> {
        cluster_rows(self.rows(), self.groups.as_deref())
    }
}

/// Occupancies of A at the given sites at time `t`. Each replica
/// contributes one row per entry of `layout`; rows of one replica share a
/// group.
pub fn sample_occupancies(spec: &Experiment, t: f64, layout: &[Vec<Site>], replicas: Range<u64>) -> Result<SampleMatrix> {
    let run = Experiment { times: vec![t], ..spec.clone() };
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for r in replicas.clone() {
        run_replica_with(&run, r, |_, cfg| {
            for sites in layout {
                rows.push(sites.iter().map(|s| f64::from(cfg.a[s.0])).collect());
                groups.push((r - replicas.start) as usize);
            }
        })?;
    }
    let mut m = SampleMatrix::from_rows(&rows)?.with_groups(groups)?;
    m.t = Some(t);
    m.seed = Some(spec.seed);
    m.replicas = Some(replicas);
    Ok(m)
}

/// Covariance of `xi_t(0)` and `eta_t(r e_1)` for `r = 0..=max_r`,
/// translation averaged over the torus. Reported only; no sign is asserted.
pub fn ab_covariance_scan(spec: &Experiment, t: f64, max_r: usize, replicas: Range<u64>) -> Result<Vec<Estimate>> {
    let geom = spec.geom;
    if max_r >= geom.side() {
        return Err(invalid("scan distance must be below the side length"));
    }
    let run = Experiment { times: vec![t], ..spec.clone() };
    let mut per_replica: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for r in replicas {
        run_replica_with(&run, r, |_, cfg| {
            let v = geom.volume() as f64;
            let ma = cfg.total_a() as f64 / v;
            let mb = cfg.total_b() as f64 / v;
            let cross: Vec<f64> = (0..=max_r)
                .map(|d| {
                    (0..geom.volume())
                        .map(|x| {
                            let y = geom.translate(Site(x), Site(d));
                            f64::from(cfg.a[x]) * f64::from(cfg.b[y.0])
                        })
                        .sum::<f64>()
                        / v
                })
                .collect();
            per_replica.push((ma, mb, cross));
        })?;
    }
    let ma = mean(&per_replica.iter().map(|p| p.0).collect::<Vec<_>>());
    let mb = mean(&per_replica.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok((0..=max_r)
        .map(|d| {
            let c: Vec<f64> = per_replica.iter().map(|p| p.2[d]).collect();
            let e = mean_estimate(&c);
            Estimate::new(e.value - ma * mb, e.stderr)
        })
        .collect())
}

/// Coordinatewise non-decreasing functions of a set of columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Monotone {
    Sum,
    Min,
    Max,
    /// Indicator that the sum is at least the threshold.
    AtLeast(f64),
}

impl Monotone {
    pub fn eval(&self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Monotone::Sum => values.sum(),
            Monotone::Min => values.fold(f64::INFINITY, f64::min),
            Monotone::Max => values.fold(f64::NEG_INFINITY, f64::max),
            Monotone::AtLeast(c) => {
                if values.sum::<f64>() >= *c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bootstrap settings shared by the resampling tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    /// One-sided confidence level.
    pub level: f64,
    pub resamples: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { level: 0.95, resamples: 1000 }
    }
}

fn covariance(f: &[f64], g: &[f64]) -> f64 {
    let (mf, mg) = (mean(f), mean(g));
    f.iter().zip(g).map(|(a, b)| (a - mf) * (b - mg)).sum::<f64>() / f.len() as f64
}

/// Percentile interval of a cluster bootstrap of `stat` over row indices.
fn cluster_bootstrap<R, F>(m: &SampleMatrix, cfg: TestConfig, rng: &mut R, mut stat: F) -> (f64, f64, f64)
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> f64,
{
    let clusters = m.clusters();
    let mut rows = Vec::with_capacity(m.rows());
    let reps = bootstrap(clusters.len(), cfg.resamples, rng, |pick| {
        rows.clear();
        for &c in pick {
            rows.extend_from_slice(&clusters[c]);
        }
        stat(&rows)
    });
    (bootstrap_stderr(&reps), quantile(&reps, 1.0 - cfg.level), quantile(&reps, cfg.level))
}

/// One-sided test of `Cov(f(X_F), g(X_G)) <= 0`.
pub fn na_covariance_test<R: Rng + ?Sized>(
    samples: &SampleMatrix,
    f_set: &[usize],
    g_set: &[usize],
    f: Monotone,
    g: Monotone,
    cfg: TestConfig,
    rng: &mut R,
) -> Result<TestReport> {
    if let Some(&c) = f_set.iter().find(|c| g_set.contains(c)) {
        return Err(Error::OverlappingColumns(c));
    }
    if f_set.is_empty() || g_set.is_empty() {
        return Err(invalid("column sets must be non-empty"));
    }
    if let Some(&c) = f_set.iter().chain(g_set).find(|&&c| c >= samples.cols()) {
        return Err(invalid(format!("column {c} out of range")));
    }
    let name = "na_covariance";
    if samples.rows() < 2 {
        return Ok(TestReport::inconclusive(name, "need at least two rows", cfg.level));
    }
    let fv: Vec<f64> = (0..samples.rows()).map(|r| f.eval(f_set.iter().map(|&c| samples.get(r, c)))).collect();
    let gv: Vec<f64> = (0..samples.rows()).map(|r| g.eval(g_set.iter().map(|&c| samples.get(r, c)))).collect();
    let stat = covariance(&fv, &gv);
    let (mut fb, mut gb) = (Vec::new(), Vec::new());
    let (se, lo, hi) = cluster_bootstrap(samples, cfg, rng, |rows| {
        fb.clear();
        gb.clear();
        fb.extend(rows.iter().map(|&r| fv[r]));
        gb.extend(rows.iter().map(|&r| gv[r]));
        covariance(&fb, &gb)
    });
    Ok(TestReport::from_interval(name, stat, se, lo, hi, cfg.level).with_detail(format!("rows={} clusters={}", samples.rows(), samples.clusters().len())))
}

/// One-sided test of `P[X >= k+l] <= P[X >= k] P[X >= l]` with a delta-method
/// standard error. Rows sharing a group id are treated as one cluster.
pub fn tail_product_test(column: &[f64], groups: Option<&[usize]>, k: u32, l: u32, level: f64) -> Result<TestReport> {
    if k == 0 || l == 0 {
        return Err(invalid("k and l must be at least 1"));
    }
    check_groups(column, groups)?;
    let name = "tail_product";
    if column.len() < 2 {
        return Ok(TestReport::inconclusive(name, "need at least two samples", level));
    }
    let ind = |c: u32| -> Vec<f64> { column.iter().map(|&x| if x >= f64::from(c) { 1.0 } else { 0.0 }).collect() };
    let (i_kl, i_k, i_l) = (ind(k + l), ind(k), ind(l));
    let (p_kl, p_k, p_l) = (mean(&i_kl), mean(&i_k), mean(&i_l));
    if p_kl == 0.0 && p_k * p_l == 0.0 {
        return Ok(TestReport::inconclusive(name, format!("no samples reach max(k, l) = {}", k.max(l)), level));
    }
    let influence: Vec<f64> = (0..column.len()).map(|i| i_kl[i] - p_l * i_k[i] - p_k * i_l[i]).collect();
    let se = clustered_stderr(&influence, groups);
    Ok(TestReport::upper_claim(name, Estimate::new(p_kl - p_k * p_l, se), level)
        .with_detail(format!("P[X>={}]={p_kl:.6e} P[X>={k}]={p_k:.6e} P[X>={l}]={p_l:.6e}", k + l)))
}

fn check_groups(column: &[f64], groups: Option<&[usize]>) -> Result<()> {
    match groups {
        Some(g) if g.len() != column.len() => Err(invalid("need one group id per sample")),
        _ => Ok(()),
    }
}

/// Row indices per cluster (singletons without groups).
fn cluster_rows(n: usize, groups: Option<&[usize]>) -> Vec<Vec<usize>> {
    match groups {
        None => (0..n).map(|r| vec![r]).collect(),
        Some(g) => {
            let mut ids: Vec<usize> = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            let mut out = vec![Vec::new(); ids.len()];
            for (r, id) in g.iter().enumerate() {
                out[ids.binary_search(id).unwrap()].push(r);
            }
            out
        }
    }
}

/// Standard error of the mean of `values` with cluster-level resampling
/// variance (sum over clusters of squared centred cluster totals).
fn clustered_stderr(values: &[f64], groups: Option<&[usize]>) -> f64 {
    let n = values.len() as f64;
    let m = mean(values);
    let clusters = cluster_rows(values.len(), groups);
    let g = clusters.len() as f64;
    if g < 2.0 {
        return f64::NAN;
    }
    let ss: f64 = clusters.iter().map(|c| { let d: f64 = c.iter().map(|&r| values[r] - m).sum(); d * d }).sum();
    libm::sqrt(ss * g / (g - 1.0)) / n
}

fn falling(x: f64, n: u32) -> f64 {
    (0..n).map(|j| x - f64::from(j)).product()
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Sample `n`-th factorial moment `E[X(X-1)...(X-n+1)]`.
pub fn factorial_moment(column: &[f64], n: u32) -> Estimate {
    mean_estimate(&column.iter().map(|&x| falling(x, n)).collect::<Vec<_>>())
}

/// One-sided test of `E[X(X-1)...(X-n+1)] <= n! (E X)^n`, bootstrapping
/// clusters when group ids are given.
pub fn factorial_moment_test<R: Rng + ?Sized>(
    column: &[f64],
    groups: Option<&[usize]>,
    n: u32,
    cfg: TestConfig,
    rng: &mut R,
) -> Result<TestReport> {
    if n < 2 {
        return Err(invalid("order must be at least 2"));
    }
    check_groups(column, groups)?;
    let name = "factorial_moment";
    if column.len() < 2 {
        return Ok(TestReport::inconclusive(name, "need at least two samples", cfg.level));
    }
    if column.iter().all(|&x| x < f64::from(n)) {
        return Ok(TestReport::inconclusive(name, format!("no sample reaches order {n}"), cfg.level));
    }
    let fac = factorial(n);
    let fm: Vec<f64> = column.iter().map(|&x| falling(x, n)).collect();
    let clusters = cluster_rows(column.len(), groups);
    let excess = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut s_fm, mut s_x, mut cnt) = (0.0, 0.0, 0.0);
        for c in idx {
            for &i in &clusters[c] {
                s_fm += fm[i];
                s_x += column[i];
                cnt += 1.0;
            }
        }
        s_fm / cnt - fac * libm::pow(s_x / cnt, f64::from(n))
    };
    let stat = excess(&mut (0..clusters.len()));
    let reps = bootstrap(clusters.len(), cfg.resamples, rng, |pick| excess(&mut pick.iter().copied()));
    Ok(TestReport::from_interval(
        name,
        stat,
        bootstrap_stderr(&reps),
        quantile(&reps, 1.0 - cfg.level),
        quantile(&reps, cfg.level),
        cfg.level,
    )
    .with_detail(format!("moment={:.6e} bound={:.6e}", mean(&fm), fac * libm::pow(mean(column), f64::from(n)))))
}

/// `R(N)` on the grid together with the trend test.
#[derive(Debug, Clone, PartialEq)]
pub struct MzResult {
    pub grid: Vec<usize>,
    pub ratios: Vec<Estimate>,
    /// Slope of `R` against `ln N`.
    pub slope: Estimate,
    pub report: TestReport,
}

/// Square-function ratio `R(N) = E|S_N|^{2p} / E(Q_N)^p` with
/// `S_N = sum X_i`, `Q_N = sum X_i^2` over the first `N` columns.
///
/// Columns are centred by the column means of the first half of the rows
/// (or groups); the ratio is estimated on the second half. The claim tested
/// is that `R` shows no increasing trend in `ln N`: the verdict is a
/// violation when the bootstrap lower bound of the slope is positive.
pub fn mz_ratio_check<R: Rng + ?Sized>(
    samples: &SampleMatrix,
    p: u32,
    grid: &[usize],
    cfg: TestConfig,
    rng: &mut R,
) -> Result<MzResult> {
    if p == 0 {
        return Err(invalid("p must be positive"));
    }
    if grid.len() < 2 || grid.iter().any(|&n| n == 0 || n > samples.cols()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid must be increasing, with at least two sizes within the column count"));
    }
    let clusters = samples.clusters();
    if clusters.len() < 4 {
        return Err(invalid("need at least four independent rows or groups"));
    }
    let (held, used) = clusters.split_at(clusters.len() / 2);
    let held_rows: Vec<usize> = held.iter().flatten().copied().collect();
    let centre: Vec<f64> =
        (0..samples.cols()).map(|c| held_rows.iter().map(|&r| samples.get(r, c)).sum::<f64>() / held_rows.len() as f64).collect();

    // Per used row: (S^{2p}, Q^p) for each grid size.
    let n_max = *grid.last().unwrap();
    let per_row = |r: usize| -> Vec<(f64, f64)> {
        let (mut s, mut q) = (0.0, 0.0);
        let mut out = Vec::with_capacity(grid.len());
        let mut g = 0;
        for c in 0..n_max {
            let x = samples.get(r, c) - centre[c];
            s += x;
            q += x * x;
            if c + 1 == grid[g] {
                out.push((libm::pow(s, f64::from(2 * p)), libm::pow(q, f64::from(p))));
                g += 1;
            }
        }
        out
    };
    let terms: Vec<Vec<Vec<(f64, f64)>>> = used.iter().map(|cl| cl.iter().map(|&r| per_row(r)).collect()).collect();
    let ln_n: Vec<f64> = grid.iter().map(|&n| libm::log(n as f64)).collect();
    let ratios_for = |pick: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let mut num = vec![0.0; grid.len()];
        let mut den = vec![0.0; grid.len()];
        for c in pick {
            for row in &terms[c] {
                for (g, (a, b)) in row.iter().enumerate() {
                    num[g] += a;
                    den[g] += b;
                }
            }
        }
        num.iter().zip(&den).map(|(a, b)| a / b).collect()
    };
    let slope_of = |r: &[f64]| weighted_line_fit(&ln_n, r, &vec![1.0; r.len()]).map_or(f64::NAN, |f| f.slope);

    let ratios = ratios_for(&mut (0..used.len()));
    let slope = slope_of(&ratios);
    let mut boot_ratios: Vec<Vec<f64>> = Vec::with_capacity(cfg.resamples);
    let slopes = bootstrap(used.len(), cfg.resamples, rng, |pick| {
        let r = ratios_for(&mut pick.iter().copied());
        let s = slope_of(&r);
        boot_ratios.push(r);
        s
    });
    let ratio_se: Vec<f64> =
        (0..grid.len()).map(|g| bootstrap_stderr(&boot_ratios.iter().map(|r| r[g]).collect::<Vec<_>>())).collect();
    let slope_se = bootstrap_stderr(&slopes);
    let name = "mz_ratio";
    let report = if !slope.is_finite() || !slope_se.is_finite() || ratios.iter().any(|r| !r.is_finite()) {
        TestReport::inconclusive(name, "moments not finite on the sample", cfg.level)
    } else if ratio_se.iter().zip(&ratios).any(|(se, r)| *se > *r) {
        TestReport::inconclusive(name, format!("stderr of R exceeds R itself for p = {p}"), cfg.level)
    } else {
        TestReport::from_interval(
            name,
            slope,
            slope_se,
            quantile(&slopes, 1.0 - cfg.level),
            quantile(&slopes, cfg.level),
            cfg.level,
        )
        .with_detail(format!("R({})={:.4} R({})={:.4}", grid[0], ratios[0], n_max, ratios[grid.len() - 1]))
    };
    Ok(MzResult {
        grid: grid.to_vec(),
        ratios: ratios.iter().zip(&ratio_se).map(|(&r, &s)| Estimate::new(r, s)).collect(),
        slope: Estimate::new(slope, slope_se),
        report,
    })
}

/// Exact value of `min_j 4(N+1) P[sum W_i = j]` where `K` is uniform on
/// `0..=N` and, given `K`, the `W_i` are i.i.d. Bernoulli(K/N).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixtureMinimum {
    pub n: u32,
    /// The minimising `j` (smallest if tied).
    pub argmin: u32,
    pub numerator: BigUint,
    pub denominator: BigUint,
}

impl MixtureMinimum {
    /// Whether the minimum is at least 1 (exact comparison).
    pub fn at_least_one(&self) -> bool {
        self.numerator >= self.denominator
    }

    pub fn to_f64(&self) -> f64 {
        // Both fit comfortably in f64 exponent range for N <= 64.
        let shift = self.denominator.bits().saturating_sub(60);
        let num = &self.numerator >> shift;
        let den = &self.denominator >> shift;
        biguint_to_f64(&num) / biguint_to_f64(&den)
    }
}

fn biguint_to_f64(x: &BigUint) -> f64 {
    x.iter_u64_digits().rev().fold(0.0, |acc, d| acc * 18446744073709551616.0 + d as f64)
}

pub const MIXTURE_MAX_N: u32 = 64;

/// `4(N+1) P[sum = j] = 4 C(N,j) sum_K K^j (N-K)^{N-j} / N^N`, computed in
/// exact integer arithmetic (with `0^0 = 1`).
pub fn mixture_minimum_exact(n: u32) -> Result<MixtureMinimum> {
    if n == 0 {
        return Err(invalid("N must be positive"));
    }
    if n > MIXTURE_MAX_N {
        return Err(Error::Budget(format!("exact mixture limited to N <= {MIXTURE_MAX_N}")));
    }
    let big = |v: u32| BigUint::from(v);
    let denominator = big(n).pow(n);
    let mut best: Option<(u32, BigUint)> = None;
    let mut choose = BigUint::from(1u32);
    for j in 0..=n {
        if j > 0 {
            choose = choose * big(n - j + 1) / big(j);
        }
        let sum: BigUint = (0..=n).map(|k| big(k).pow(j) * big(n - k).pow(n - j)).sum();
        let value = &choose * sum * 4u32;
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((j, value));
        }
    }
    let (argmin, numerator) = best.expect("j = 0 always evaluated");
    Ok(MixtureMinimum { n, argmin, numerator, denominator })
}

/// Parameters of the discrete coloured chain on `[-M, M]^d x [1, K]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColourChainParams {
    pub dim: usize,
    pub m: usize,
    pub colours: usize,
    /// Time horizon of the continuous chain being approximated.
    pub horizon: f64,
    /// Steps per unit time; the step length is `1/steps_per_unit`.
    pub steps_per_unit: u32,
    /// Total jump rate of a particle (`D_A`); each direction gets `D_A/2d`.
    pub d_a: f64,
    /// Colour update rate; `K lambda_A` targets A coalescence at rate `lambda_A`.
    pub lambda: f64,
    /// Initial Bernoulli probability per (site, colour).
    pub init_p: f64,
}

impl ColourChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.colours == 0 || self.steps_per_unit == 0 {
            return Err(invalid("dimension, colour count and step scale must be positive"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) || !(self.d_a >= 0.0 && self.lambda >= 0.0) {
            return Err(invalid("horizon and rates must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.init_p) {
            return Err(invalid("initial probability must lie in [0, 1]"));
        }
        if (self.d_a + self.lambda) / f64::from(self.steps_per_unit) > 1.0 {
            return Err(invalid("step too coarse: per-step move probability exceeds 1"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        2 * self.m + 1
    }

    pub fn sites(&self) -> usize {
        self.width().pow(self.dim as u32)
    }

    pub fn steps(&self) -> usize {
        libm::ceil(self.horizon * f64::from(self.steps_per_unit)) as usize
    }

    /// Index of the box centre.
    pub fn centre(&self) -> usize {
        (0..self.dim).map(|a| self.m * self.width().pow(a as u32)).sum()
    }
}

/// Occupancy of every (site, colour) cell after `step` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColourChainState {
    pub step: usize,
    /// Indexed by `site * K + colour`.
    pub occupied: Vec<bool>,
}

impl ColourChainState {
    /// Colour-summed counts per site.
    pub fn counts(&self, colours: usize) -> Vec<u32> {
        self.occupied.chunks(colours).map(|c| c.iter().filter(|&&o| o).count() as u32).collect()
    }
}

/// States at every step plus, for each step, where the cell at each
/// (site, colour) is sent.
#[derive(Debug, Clone, PartialEq)]
pub struct ColourTrajectory {
    pub params: ColourChainParams,
    pub states: Vec<ColourChainState>,
    pub moves: Vec<Vec<u32>>,
}

/// Simulate the chain. Each step every cell independently keeps its place
/// and colour, recolours uniformly (probability `lambda h`) or steps to a
/// uniform neighbour with a uniform new colour (probability `D_A h`), with
/// `h` the step length. Steps leaving the box are suppressed. Occupied
/// cells sent to the same cell merge.
pub fn colour_chain_run(params: &ColourChainParams, seed: u64, replica: u64) -> Result<ColourTrajectory> {
    params.validate()?;
    let mut rng = stream(seed, replica, Purpose::Custom(0xC010));
    let k = params.colours;
    let cells = params.sites() * k;
    let mut state = ColourChainState { step: 0, occupied: (0..cells).map(|_| rng.random::<f64>() < params.init_p).collect() };
    let steps = params.steps();
    let h = if steps == 0 { 0.0 } else { params.horizon / steps as f64 };
    let mut states = Vec::with_capacity(steps + 1);
    let mut moves = Vec::with_capacity(steps);
    states.push(state.clone());
    for step in 1..=steps {
        let map: Vec<u32> = (0..cells).map(|cell| colour_move(params, cell, h, &mut rng) as u32).collect();
        let mut next = vec![false; cells];
        for (cell, &dest) in map.iter().enumerate() {
            if state.occupied[cell] {
                next[dest as usize] = true;
            }
        }
        state = ColourChainState { step, occupied: next };
        states.push(state.clone());
        moves.push(map);
    }
    Ok(ColourTrajectory { params: *params, states, moves })
}

fn colour_move(p: &ColourChainParams, cell: usize, h: f64, rng: &mut ChaCha8Rng) -> usize {
    let k = p.colours;
    let site = cell / k;
    let u = open_uniform(rng);
    let recolour = p.lambda * h;
    let jump = p.d_a * h;
    if u > recolour + jump {
        return cell;
    }
    let new_colour = rng.random_range(0..k);
    if u <= recolour {
        return site * k + new_colour;
    }
    let dir = rng.random_range(0..2 * p.dim);
    let (axis, up) = (dir / 2, dir % 2 == 0);
    let stride = p.width().pow(axis as u32);
    let c = (site / stride) % p.width();
    let target = if up && c + 1 < p.width() {
        site + stride
    } else if !up && c > 0 {
        site - stride
    } else {
        return cell;
    };
    target * k + new_colour
}

/// Check the trajectory path by path: every state is the image of the
/// previous one under the stored moves, so open paths that meet stay
/// together and the particle count never increases.
pub fn verify_coalescence(traj: &ColourTrajectory) -> Result<()> {
    for (w, map) in traj.states.windows(2).zip(&traj.moves) {
        let mut image = vec![false; w[0].occupied.len()];
        for (cell, &dest) in map.iter().enumerate() {
            if w[0].occupied[cell] {
                image[dest as usize] = true;
            }
        }
        if image != w[1].occupied {
            return Err(Error::Numerical(format!("state at step {} is not the image of step {}", w[1].step, w[0].step)));
        }
    }
    Ok(())
}

/// Where the path started at `cell` is after every step.
pub fn follow_path(traj: &ColourTrajectory, cell: usize) -> Vec<usize> {
    let mut path = vec![cell];
    let mut cur = cell;
    for map in &traj.moves {
        cur = map[cur] as usize;
        path.push(cur);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Poisson};

    fn rng() -> ChaCha8Rng {
        stream(3, 0, Purpose::Analysis)
    }

    #[test]
    fn small_mixture_values() {
        let one = mixture_minimum_exact(1).unwrap();
        assert_eq!((one.numerator.clone(), one.denominator.clone()), (BigUint::from(4u32), BigUint::from(1u32)));
        let two = mixture_minimum_exact(2).unwrap();
        assert_eq!(two.argmin, 1);
        assert_eq!(two.to_f64(), 2.0);
        assert!(matches!(mixture_minimum_exact(65), Err(Error::Budget(_))));
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling(5.0, 3), 60.0);
        assert_eq!(falling(1.0, 2), 0.0);
        assert_eq!(factorial(4), 24.0);
    }

    #[test]
    fn overlapping_sets_rejected() {
        let m = SampleMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            na_covariance_test(&m, &[0], &[0, 1], Monotone::Sum, Monotone::Sum, TestConfig::default(), &mut rng()),
            Err(Error::OverlappingColumns(0))
        ));
    }

    #[test]
    fn tail_product_poisson_and_constant() {
        let mut r = rng();
        let pois = Poisson::new(1.5).unwrap();
        let x: Vec<f64> = (0..20000).map(|_| pois.sample(&mut r)).collect();
        let rep = tail_product_test(&x, None, 1, 1, 0.95).unwrap();
        assert_eq!(rep.verdict, crate::stats::Verdict::Consistent);
        let ones = vec![1.0; 50];
        let rep = tail_product_test(&ones, None, 1, 1, 0.95).unwrap();
        assert_eq!(rep.statistic, -1.0);
        assert_eq!(rep.verdict, crate::stats::Verdict::Consistent);
        let zeros = vec![0.0; 50];
        assert_eq!(tail_product_test(&zeros, None, 1, 1, 0.95).unwrap().verdict, crate::stats::Verdict::Inconclusive);
    }

    #[test]
    fn forced_merge_persists() {
        let params = ColourChainParams {
            dim: 1,
            m: 2,
            colours: 2,
            horizon: 5.0,
            steps_per_unit: 20,
            d_a: 1.0,
            lambda: 1.0,
            init_p: 1.0,
        };
        let traj = colour_chain_run(&params, 9, 0).unwrap();
        verify_coalescence(&traj).unwrap();
        let first = traj.states[0].occupied.iter().filter(|&&o| o).count();
        let last = traj.states.last().unwrap().occupied.iter().filter(|&&o| o).count();
        assert!(last < first);
        // Any two paths that meet stay together.
        let paths: Vec<Vec<usize>> = (0..params.sites() * params.colours).map(|c| follow_path(&traj, c)).collect();
        for a in &paths {
            for b in &paths {
                if let Some(t) = (0..a.len()).find(|&t| a[t] == b[t]) {
                    assert_eq!(a[t..], b[t..]);
                }
            }
        }
    }
}
