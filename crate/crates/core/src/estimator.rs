//! Ensemble measurements, decay fits, and empirical checks of the
//! one- and two-point moment inequalities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{resolve_instant, Coalescence, ModelParams, Simulation};
use crate::error::{invalid, Error, Result};
use crate::lattice::{init_configuration, Configuration, InitSpec, TorusGeometry, MAX_DIM};
use crate::rng::{stream, Purpose};
use crate::stats::{
    bootstrap, bootstrap_stderr, mean, mean_estimate, weighted_line_fit, Estimate, LineFit,
    TestReport,
};
use crate::walk::{forward_pair, survival_weight, Pair, TransitionKernel, WalkConstants};

/// Everything needed to run an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub geom: TorusGeometry,
    pub params: ModelParams,
    pub init: InitSpec,
    /// Measurement times, sorted.
    pub times: Vec<f64>,
    pub seed: u64,
}

/// `t0 * ratio^k` for `k = 0..n`.
pub fn geometric_times(t0: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t0 * libm::pow(ratio, k as f64)).collect()
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.init.validate()?;
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("measurement times must be finite, non-negative and sorted"));
        }
        Ok(())
    }

    /// Largest time with diffusive length `sqrt(2 d max(D) t) <= L/4`.
    pub fn finite_size_limit(&self) -> f64 {
        finite_size_limit(&self.geom, &self.params)
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

pub fn finite_size_limit(geom: &TorusGeometry, params: &ModelParams) -> f64 {
    let quarter = geom.side() as f64 / 4.0;
    let rate = params.max_jump_rate();
    if rate == 0.0 {
        f64::INFINITY
    } else {
        quarter * quarter / (2.0 * geom.dim() as f64 * rate)
    }
}

/// Initial configuration and simulator of one replica. Instantaneous
/// reactions are applied to the initial configuration before time starts.
pub fn start_replica(spec: &Experiment, replica: u64) -> Result<Simulation<ChaCha8Rng>> {
    let mut cfg = init_configuration(&spec.geom, &spec.init, &mut stream(spec.seed, replica, Purpose::Init))?;
    resolve_instant(&mut cfg, &spec.params);
    Simulation::seeded(spec.geom, spec.params, cfg, spec.seed, replica)
}

/// Run one replica, calling `hook(k, cfg)` at each measurement time
/// `spec.times[k]`.
pub fn run_replica_with<F>(spec: &Experiment, replica: u64, mut hook: F) -> Result<u64>
where
    F: FnMut(usize, &Configuration),
{
    let mut sim = start_replica(spec, replica)?;
    let mut k = 0;
    sim.run_until(spec.t_max(), &spec.times, |_, cfg| {
        hook(k, cfg);
        k += 1;
    })?;
    Ok(sim.events())
}

/// Site-averaged observables of one replica at every measurement time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicaDensities {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub occ_a: Vec<f64>,
    pub occ_b: Vec<f64>,
    pub events: u64,
}

pub fn run_replica(spec: &Experiment, replica: u64) -> Result<ReplicaDensities> {
    let v = spec.geom.volume() as f64;
    let mut out = ReplicaDensities::default();
    out.events = run_replica_with(spec, replica, |_, cfg| {
        out.xi.push(cfg.total_a() as f64 / v);
        out.eta.push(cfg.total_b() as f64 / v);
        out.occ_a.push(cfg.occupied_a() as f64 / v);
        out.occ_b.push(cfg.occupied_b() as f64 / v);
    })?;
    Ok(out)
}

/// Ensemble means at each measurement time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySeries {
    pub times: Vec<f64>,
    pub xi: Vec<Estimate>,
    pub eta: Vec<Estimate>,
    pub p_occ_a: Vec<f64>,
    pub p_occ_b: Vec<f64>,
    pub n_replicas: usize,
    /// Per-replica data when available (empty for series read from disk).
    pub replicas: Vec<ReplicaDensities>,
}

/// Combine replica results (in replica order) into a series. Standard
/// errors are the replica standard deviation over `sqrt(n)`.
pub fn aggregate(times: &[f64], replicas: Vec<ReplicaDensities>) -> Result<DensitySeries> {
    let n = replicas.len();
    if n == 0 {
        return Err(invalid("need at least one replica"));
    }
    if replicas.iter().any(|r| r.xi.len() != times.len()) {
        return Err(invalid("replica series length does not match the time grid"));
    }
    let column = |k: usize, f: &dyn Fn(&ReplicaDensities) -> &Vec<f64>| -> Vec<f64> {
        replicas.iter().map(|r| f(r)[k]).collect()
    };
    let mut series = DensitySeries {
        times: times.to_vec(),
        xi: Vec::new(),
        eta: Vec::new(),
        p_occ_a: Vec::new(),
        p_occ_b: Vec::new(),
        n_replicas: n,
        replicas: Vec::new(),
    };
    for k in 0..times.len() {
        series.xi.push(mean_estimate(&column(k, &|r| &r.xi)));
        series.eta.push(mean_estimate(&column(k, &|r| &r.eta)));
        series.p_occ_a.push(mean(&column(k, &|r| &r.occ_a)));
        series.p_occ_b.push(mean(&column(k, &|r| &r.occ_b)));
    }
    series.replicas = replicas;
    Ok(series)
}

/// Run `n` replicas sequentially and aggregate.
pub fn measure_densities(spec: &Experiment, n: u64) -> Result<DensitySeries> {
    spec.validate()?;
    let reps = (0..n).map(|r| run_replica(spec, r)).collect::<Result<Vec<_>>>()?;
    aggregate(&spec.times, reps)
}

/// Fit window choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// From the first time at which `|d log(t xi)/d log t| < 0.05` up to
    /// `limit` (usually the finite-size bound).
    Auto { limit: f64 },
    Range(f64, f64),
}

/// Result of a power-law fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    /// Decay exponent (positive for decay).
    pub exponent: Estimate,
    /// Amplitude: `c` in `c / t` for A, `c_0` in `c_0 t^-theta` for B.
    pub amplitude: Estimate,
    pub window: (f64, f64),
    pub points: usize,
    /// RMS residual of the log-log fit.
    pub rms: f64,
    /// Theory value for the fitted quantity (`1/(p_A lambda_A)` or theta).
    pub theory: f64,
    /// `(fit - theory) / stderr`.
    pub z: f64,
    /// Relative deviation `fit / theory - 1`.
    pub rel_dev: f64,
}

fn window_indices(series: &DensitySeries, window: Window) -> Result<Vec<usize>> {
    let (lo, hi) = match window {
        Window::Range(lo, hi) => (lo, hi),
        Window::Auto { limit } => {
            let t = &series.times;
            let mut start = None;
            for k in 1..t.len() {
                let (a, b) = (series.xi[k - 1].value, series.xi[k].value);
                if a <= 0.0 || b <= 0.0 || t[k - 1] <= 0.0 || t[k] > limit {
                    continue;
                }
                let slope = libm::log((t[k] * b) / (t[k - 1] * a)) / libm::log(t[k] / t[k - 1]);
                if slope.abs() < 0.05 {
                    start = Some(t[k - 1]);
                    break;
                }
            }
            let Some(lo) = start else {
                return Err(Error::Inconclusive(format!(
                    "no plateau of t*xi_hat before t = {limit:.3}; local slopes never fell below 0.05"
                )));
            };
            (lo, limit)
        }
    };
    let idx: Vec<usize> = (0..series.times.len()).filter(|&k| series.times[k] >= lo && series.times[k] <= hi).collect();
    if idx.len() < 3 {
        return Err(Error::Inconclusive(format!("fewer than 3 measurement times in window [{lo}, {hi}]")));
    }
    Ok(idx)
}

fn resampled_means(series: &DensitySeries, pick: &[usize], field: fn(&ReplicaDensities) -> &Vec<f64>, k: usize) -> f64 {
    pick.iter().map(|&r| field(&series.replicas[r])[k]).sum::<f64>() / pick.len() as f64
}

const BOOTSTRAP_REPS: usize = 400;

/// Fit `1/xi_hat = alpha + t/c` on the window and compare `c` with
/// `1/(p_A lambda_A)`. The log-log slope of xi_hat is reported as the
/// exponent. Standard errors come from a replica bootstrap when per-replica
/// data are present, otherwise from the weighted fit.
pub fn fit_a_constant<R: Rng + ?Sized>(
    series: &DensitySeries,
    constants: &WalkConstants,
    window: Window,
    rng: &mut R,
) -> Result<FitResult> {
    let idx = window_indices(series, window)?;
    if idx.iter().any(|&k| !(series.xi[k].value > 0.0)) {
        return Err(Error::Inconclusive("xi_hat vanishes inside the fit window".into()));
    }
    let t: Vec<f64> = idx.iter().map(|&k| series.times[k]).collect();
    let ln_t: Vec<f64> = t.iter().map(|&v| libm::log(v)).collect();
    let fit_with = |xi: &[f64], se: &[f64]| -> Option<(LineFit, LineFit)> {
        let inv: Vec<f64> = xi.iter().map(|v| 1.0 / v).collect();
        let w_inv: Vec<f64> = xi.iter().zip(se).map(|(v, s)| weight(v * v / s.max(1e-300))).collect();
        let recip = weighted_line_fit(&t, &inv, &w_inv)?;
        let ln_xi: Vec<f64> = xi.iter().map(|v| libm::log(*v)).collect();
        let w_ln: Vec<f64> = xi.iter().zip(se).map(|(v, s)| weight(v / s.max(1e-300))).collect();
        let loglog = weighted_line_fit(&ln_t, &ln_xi, &w_ln)?;
        Some((recip, loglog))
    };
    let xi: Vec<f64> = idx.iter().map(|&k| series.xi[k].value).collect();
    let se: Vec<f64> = idx.iter().map(|&k| series.xi[k].stderr).collect();
    let (recip, loglog) = fit_with(&xi, &se).ok_or_else(|| Error::Numerical("degenerate fit".into()))?;
    let c = 1.0 / recip.slope;
    let (c_err, exp_err) = if series.replicas.len() >= 2 {
        let n = series.replicas.len();
        let mut cs = Vec::with_capacity(BOOTSTRAP_REPS);
        let mut es = Vec::with_capacity(BOOTSTRAP_REPS);
        let _ = bootstrap(n, BOOTSTRAP_REPS, rng, |pick| {
            let xi_b: Vec<f64> = idx.iter().map(|&k| resampled_means(series, pick, |r| &r.xi, k)).collect();
            if let Some((r, l)) = fit_with(&xi_b, &se) {
                cs.push(1.0 / r.slope);
                es.push(-l.slope);
            }
            0.0
        });
        (bootstrap_stderr(&cs), bootstrap_stderr(&es))
    } else {
        (recip.se_slope / (recip.slope * recip.slope), loglog.se_slope)
    };
    let theory = 1.0 / constants.k_a;
    Ok(FitResult {
        exponent: Estimate::new(-loglog.slope, exp_err),
        amplitude: Estimate::new(c, c_err),
        window: (t[0], *t.last().unwrap()),
        points: t.len(),
        rms: loglog.rms,
        theory,
        z: (c - theory) / c_err,
        rel_dev: c / theory - 1.0,
    })
}

fn weight(snr: f64) -> f64 {
    snr * snr
}

/// Weighted log-log regression of eta_hat on the window; the exponent is
/// minus the slope and is compared with theta.
pub fn fit_b_exponent<R: Rng + ?Sized>(
    series: &DensitySeries,
    constants: &WalkConstants,
    window: Window,
    rng: &mut R,
) -> Result<FitResult> {
    let idx = window_indices(series, window)?;
    for &k in &idx {
        let e = series.eta[k];
        if !(e.value > 0.0) || (e.stderr > 0.0 && e.value < 2.0 * e.stderr) {
            return Err(Error::Inconclusive(format!("eta_hat is consistent with 0 at t = {}", series.times[k])));
        }
    }
    let t: Vec<f64> = idx.iter().map(|&k| series.times[k]).collect();
    let ln_t: Vec<f64> = t.iter().map(|&v| libm::log(v)).collect();
    let se: Vec<f64> = idx.iter().map(|&k| series.eta[k].stderr).collect();
    let fit_with = |eta: &[f64]| -> Option<LineFit> {
        if eta.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let ln_eta: Vec<f64> = eta.iter().map(|v| libm::log(*v)).collect();
        let w: Vec<f64> = eta.iter().zip(&se).map(|(v, s)| if *s > 0.0 { weight(v / s) } else { 1.0 }).collect();
        weighted_line_fit(&ln_t, &ln_eta, &w)
    };
    let eta: Vec<f64> = idx.iter().map(|&k| series.eta[k].value).collect();
    let fit = fit_with(&eta).ok_or_else(|| Error::Numerical("degenerate fit".into()))?;
    let (exp_err, amp_err) = if series.replicas.len() >= 2 {
        let n = series.replicas.len();
        let mut es = Vec::with_capacity(BOOTSTRAP_REPS);
        let mut amps = Vec::with_capacity(BOOTSTRAP_REPS);
        let _ = bootstrap(n, BOOTSTRAP_REPS, rng, |pick| {
            let eta_b: Vec<f64> = idx.iter().map(|&k| resampled_means(series, pick, |r| &r.eta, k)).collect();
            if let Some(f) = fit_with(&eta_b) {
                es.push(-f.slope);
                amps.push(libm::exp(f.intercept));
            }
            0.0
        });
        (bootstrap_stderr(&es), bootstrap_stderr(&amps))
    } else {
        (fit.se_slope, libm::exp(fit.intercept) * fit.se_intercept)
    };
    let theta_hat = -fit.slope;
    Ok(FitResult {
        exponent: Estimate::new(theta_hat, exp_err),
        amplitude: Estimate::new(libm::exp(fit.intercept), amp_err),
        window: (t[0], *t.last().unwrap()),
        points: t.len(),
        rms: fit.rms,
        theory: constants.theta,
        z: (theta_hat - constants.theta) / exp_err,
        rel_dev: theta_hat / constants.theta - 1.0,
    })
}

/// `(min, max)` of `t xi_hat` over the window: empirical constants of the
/// crude sandwich `c1/t <= xi_hat <= c2/t`.
pub fn crude_bounds(series: &DensitySeries, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let vals: Vec<f64> = (0..series.times.len())
        .filter(|&k| series.times[k] >= lo && series.times[k] <= hi)
        .map(|k| series.times[k] * series.xi[k].value)
        .collect();
    if vals.is_empty() {
        return None;
    }
    Some((vals.iter().copied().fold(f64::INFINITY, f64::min), vals.iter().copied().fold(0.0, f64::max)))
}

/// Whether each series is non-increasing up to `z` standard errors.
pub fn monotone_within(values: &[Estimate], z: f64) -> bool {
    values.windows(2).all(|w| w[1].value <= w[0].value + z * libm::hypot(w[0].stderr, w[1].stderr))
}

/// `P_s f`: the heat semigroup of a rate-`rate` walk applied to `f` on the
/// torus, by separable convolution with the exact transition kernel.
pub fn heat_semigroup(geom: &TorusGeometry, rate: f64, s: f64, f: &[f64]) -> Vec<f64> {
    let kernel = TransitionKernel::torus(geom, rate, s);
    let q = kernel.axis_table();
    let side = geom.side();
    let mut cur = f.to_vec();
    let mut next = vec![0.0; f.len()];
    for axis in 0..geom.dim() {
        let stride = side.pow(axis as u32);
        for (i, slot) in next.iter_mut().enumerate() {
            let c = (i / stride) % side;
            let base = i - c * stride;
            let mut acc = 0.0;
            for (k, qk) in q.iter().enumerate() {
                acc += qk * cur[base + ((c + k) % side) * stride];
            }
            *slot = acc;
        }
        core::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Indicator of the centred box of side `L/2`.
pub fn centred_box(geom: &TorusGeometry) -> Vec<f64> {
    let side = geom.side();
    let (lo, hi) = (side / 4, side / 4 + side / 2);
    (0..geom.volume())
        .map(|i| {
            let inside = (0..geom.dim()).all(|a| {
                let c = geom.coordinate(crate::lattice::Site(i), a);
                c >= lo && c < hi
            });
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Point mass at the centre of the torus.
pub fn centre_point(geom: &TorusGeometry) -> Vec<f64> {
    let mut f = vec![0.0; geom.volume()];
    let c: Vec<i64> = vec![(geom.side() / 2) as i64; geom.dim()];
    f[geom.site_of(&c).expect("valid site").0] = 1.0;
    f
}

fn dot(cfg_a: &[u32], f: &[f64]) -> f64 {
    cfg_a.iter().zip(f).map(|(&n, w)| f64::from(n) * w).sum()
}

/// Per-replica `(<xi_t, f>, <xi_{t-s}, P_s f>)`.
pub fn heat_flow_samples(spec: &Experiment, t: f64, s: f64, f: &[f64], replicas: core::ops::Range<u64>) -> Result<Vec<(f64, f64)>> {
    if !(s >= 0.0 && s <= t) || f.len() != spec.geom.volume() {
        return Err(invalid("need 0 <= s <= t and a test function on every site"));
    }
    let pf = heat_semigroup(&spec.geom, spec.params.d_a, s, f);
    let run = Experiment { times: vec![t - s, t], ..spec.clone() };
    replicas
        .map(|r| {
            let mut pair = (0.0, 0.0);
            run_replica_with(&run, r, |k, cfg| {
                if k == 0 {
                    pair.1 = dot(&cfg.a, &pf);
                } else {
                    pair.0 = dot(&cfg.a, f);
                }
            })?;
            Ok(pair)
        })
        .collect()
}

/// One-sided check of `E<xi_t, f> <= E<xi_{t-s}, P_s f>` from paired
/// per-replica samples `(lhs, rhs)`.
pub fn heat_flow_bound_check(samples: &[(f64, f64)], level: f64) -> TestReport {
    let name = "heat_flow";
    if samples.len() < 2 {
        return TestReport::inconclusive(name, "need at least two replicas", level);
    }
    let diffs: Vec<f64> = samples.iter().map(|(l, r)| l - r).collect();
    let lhs = mean(&samples.iter().map(|p| p.0).collect::<Vec<_>>());
    let rhs = mean(&samples.iter().map(|p| p.1).collect::<Vec<_>>());
    TestReport::upper_claim(name, mean_estimate(&diffs), level).with_detail(format!("lhs={lhs:.6e} rhs={rhs:.6e}"))
}

/// Monte-Carlo estimate of `Psi_s(r)`: the probability that the difference
/// of two walkers started together sits at `r` (mod L) at time `s` without
/// having been killed, with the second moment of the per-path weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceKernel {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    pub paths: u64,
}

pub fn difference_kernel_mc<R: Rng + ?Sized>(
    geom: &TorusGeometry,
    params: &ModelParams,
    pair: Pair,
    s: f64,
    paths: u64,
    rng: &mut R,
) -> Result<DifferenceKernel> {
    params.validate()?;
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let (rates, hazard) = match pair {
        Pair::AA => (
            (params.d_a, params.d_a),
            match params.lambda_a {
                Coalescence::Finite(l) => Coalescence::Finite(2.0 * l),
                Coalescence::Instant => Coalescence::Instant,
            },
        ),
        Pair::AB => ((params.d_a, params.d_b), params.lambda_b),
    };
    let dim = geom.dim();
    let mut mean = vec![0.0; geom.volume()];
    let mut second = vec![0.0; geom.volume()];
    let mut x = [0i64; MAX_DIM];
    let mut y = [0i64; MAX_DIM];
    for _ in 0..paths {
        x[..dim].fill(0);
        y[..dim].fill(0);
        let local = forward_pair(&mut x[..dim], &mut y[..dim], rates, s, rng);
        let w = survival_weight(hazard, local);
        if w > 0.0 {
            let diff: Vec<i64> = (0..dim).map(|a| y[a] - x[a]).collect();
            let r = geom.site_of(&diff)?.0;
            mean[r] += w;
            second[r] += w * w;
        }
    }
    let n = paths as f64;
    for v in mean.iter_mut().chain(second.iter_mut()) {
        *v /= n;
    }
    Ok(DifferenceKernel { mean, second, paths })
}

/// `C(r) = (1/V) sum_x f(x) g(x + r)` over the torus.
pub fn pair_correlation(geom: &TorusGeometry, f: &[u32], g: &[u32]) -> Vec<f64> {
    let dim = geom.dim();
    let side = geom.side();
    let occupied = |h: &[u32]| -> Vec<(Vec<usize>, f64)> {
        h.iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (geom.coords(crate::lattice::Site(i)), f64::from(n)))
            .collect()
    };
    let (fo, go) = (occupied(f), occupied(g));
    let strides: Vec<usize> = (0..dim).map(|a| side.pow(a as u32)).collect();
    let mut c = vec![0.0; geom.volume()];
    for (xf, nf) in &fo {
        for (xg, ng) in &go {
            let mut r = 0;
            for a in 0..dim {
                r += ((xg[a] + side - xf[a]) % side) * strides[a];
            }
            c[r] += nf * ng;
        }
    }
    let v = geom.volume() as f64;
    for e in c.iter_mut() {
        *e /= v;
    }
    c
}

/// Per-replica ingredients of the two-point checks, site-averaged over the
/// torus (the expectations are translation invariant).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointSample {
    /// `(1/V) sum_x xi_t(x)(xi_t(x)-1)`
    pub lhs_aa: f64,
    /// `(1/V) sum_x xi_t(x) eta_t(x)`
    pub lhs_ab: f64,
    /// `C_AA(r)` at time `t - s`
    pub corr_aa: Vec<f64>,
    /// `C_AB(r)` at time `t - s`
    pub corr_ab: Vec<f64>,
}

pub fn two_point_samples(spec: &Experiment, t: f64, s: f64, replicas: core::ops::Range<u64>) -> Result<Vec<TwoPointSample>> {
    if !(s >= 0.0 && s <= t) {
        return Err(invalid("need 0 <= s <= t"));
    }
    let geom = spec.geom;
    let v = geom.volume() as f64;
    let run = Experiment { times: vec![t - s, t], ..spec.clone() };
    replicas
        .map(|r| {
            let mut sample = TwoPointSample { lhs_aa: 0.0, lhs_ab: 0.0, corr_aa: Vec::new(), corr_ab: Vec::new() };
            run_replica_with(&run, r, |k, cfg| {
                if k == 0 {
                    sample.corr_aa = pair_correlation(&geom, &cfg.a, &cfg.a);
                    sample.corr_ab = pair_correlation(&geom, &cfg.a, &cfg.b);
                } else {
                    sample.lhs_aa = cfg.a.iter().map(|&n| f64::from(n) * (f64::from(n) - 1.0)).sum::<f64>() / v;
                    sample.lhs_ab = cfg.a.iter().zip(&cfg.b).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / v;
                }
            })?;
            Ok(sample)
        })
        .collect()
}

/// Both two-point checks from per-replica samples:
/// `E[xi_t(0)(xi_t(0)-1)] <= E<xi_{t-s} * xi_{t-s}, psi_s>` using the
/// Monte-Carlo difference kernel `psi`, and
/// `E[xi_t(0) eta_t(0)] <= E[<xi_{t-s}, p^A_s><eta_{t-s}, p^B_s>]` with the
/// exact kernel of the difference walk at rate `D_A + D_B`.
/// The kernel's own Monte-Carlo error is added to the replica error.
pub fn two_point_bound_check(
    geom: &TorusGeometry,
    params: &ModelParams,
    s: f64,
    samples: &[TwoPointSample],
    psi: &DifferenceKernel,
    level: f64,
) -> (TestReport, TestReport) {
    if samples.len() < 2 {
        return (
            TestReport::inconclusive("two_point_aa", "need at least two replicas", level),
            TestReport::inconclusive("two_point_ab", "need at least two replicas", level),
        );
    }
    let n = samples.len() as f64;
    let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut mean_corr = vec![0.0; geom.volume()];
    for smp in samples {
        for (m, c) in mean_corr.iter_mut().zip(&smp.corr_aa) {
            *m += c / n;
        }
    }
    let diffs_aa: Vec<f64> = samples.iter().map(|smp| smp.lhs_aa - inner(&smp.corr_aa, &psi.mean)).collect();
    let rhs_aa = inner(&mean_corr, &psi.mean);
    let kernel_var = (mean_corr.iter().zip(&psi.second).map(|(c, s2)| c * c * s2).sum::<f64>() - rhs_aa * rhs_aa)
        .max(0.0)
        / psi.paths as f64;
    let d_aa = mean_estimate(&diffs_aa);
    let aa = TestReport::upper_claim(
        "two_point_aa",
        Estimate::new(d_aa.value, libm::sqrt(d_aa.stderr * d_aa.stderr + kernel_var)),
        level,
    )
    .with_detail(format!("lhs={:.6e} rhs={rhs_aa:.6e}", mean(&samples.iter().map(|s| s.lhs_aa).collect::<Vec<_>>())));

    let q = TransitionKernel::torus(geom, params.d_a + params.d_b, s);
    let q_table: Vec<f64> = (0..geom.volume())
        .map(|i| (0..geom.dim()).map(|a| q.axis_table()[geom.coordinate(crate::lattice::Site(i), a)]).product())
        .collect();
    let diffs_ab: Vec<f64> = samples.iter().map(|smp| smp.lhs_ab - inner(&smp.corr_ab, &q_table)).collect();
    let rhs_ab = mean(&samples.iter().map(|smp| inner(&smp.corr_ab, &q_table)).collect::<Vec<_>>());
    let lhs_ab = mean(&samples.iter().map(|s| s.lhs_ab).collect::<Vec<_>>());
    let ab = if diffs_ab.iter().all(|&d| d == 0.0) && rhs_ab == 0.0 {
        TestReport::from_interval("two_point_ab", 0.0, 0.0, 0.0, 0.0, level).with_detail("no B particles: 0 <= 0")
    } else {
        TestReport::upper_claim("two_point_ab", mean_estimate(&diffs_ab), level)
            .with_detail(format!("lhs={lhs_ab:.6e} rhs={rhs_ab:.6e}"))
    };
    (aa, ab)
}
