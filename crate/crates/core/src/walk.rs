//! Random-walk constants: the escape probability, the non-coalescence
//! probabilities of a colliding pair, the decay exponent, and Monte-Carlo
//! estimates of the two-walker survival kernels.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::dynamics::{Coalescence, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::lattice::{TorusGeometry, MAX_DIM};
use crate::rng::exponential;
use crate::stats::{ln_choose, mean_estimate, Estimate};

/// How a constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GreenSeries,
    MonteCarlo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GreenSeries => "green-series",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

/// Escape probability of simple random walk from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    /// Upper bound on the systematic error from truncating the walk or the
    /// series (already folded into `stderr` for the series).
    pub bias_bound: f64,
}

impl GammaEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.stderr)
    }
}

/// Options for [`gamma_escape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMethod {
    /// Sum `terms` return probabilities and extrapolate the tail.
    GreenSeries { terms: usize },
    /// `walks` walks of `steps` discrete steps.
    MonteCarlo { walks: u64, steps: u64 },
}

impl Default for GammaMethod {
    fn default() -> Self {
        GammaMethod::GreenSeries { terms: 4096 }
    }
}

/// `P[S_{2n} = 0]` for `n = 0..terms` for the discrete-time simple random
/// walk on Z^d, by conditioning on the number of steps along the first axis.
pub fn return_probabilities(dim: usize, terms: usize) -> Vec<f64> {
    assert!(dim >= 1);
    // ln k! for k up to 2 * terms
    let mut ln_fact = vec![0.0f64; 2 * terms + 1];
    for k in 1..ln_fact.len() {
        ln_fact[k] = libm::lgamma(k as f64 + 1.0);
    }
    let ln_c = |n: usize, k: usize| ln_fact[n] - ln_fact[k] - ln_fact[n - k];
    let one_dim: Vec<f64> =
        (0..terms).map(|j| libm::exp(ln_c(2 * j, j) - 2.0 * j as f64 * core::f64::consts::LN_2)).collect();
    let mut q = one_dim.clone();
    for k in 2..=dim {
        let ln_p = libm::log(1.0 / k as f64);
        let ln_r = libm::log((k - 1) as f64 / k as f64);
        let mut next = vec![0.0; terms];
        for (n, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..=n {
                let w = ln_c(2 * n, 2 * j) + 2.0 * j as f64 * ln_p + 2.0 * (n - j) as f64 * ln_r;
                acc += libm::exp(w) * one_dim[j] * q[n - j];
            }
            *slot = acc;
        }
        q = next;
    }
    q
}

struct SeriesFit {
    green: f64,
    a: f64,
    b: f64,
    err: f64,
}

fn green_fit(dim: usize, terms: usize) -> Result<SeriesFit> {
    if dim <= 2 {
        return Err(Error::Divergent { dim });
    }
    if terms < 64 {
        return Err(invalid("green series needs at least 64 terms"));
    }
    let q = return_probabilities(dim, terms);
    let mut partial = Vec::with_capacity(terms);
    let mut acc = 0.0;
    for v in &q {
        acc += v;
        partial.push(acc);
    }
    // S_M = G + a M^{1-d/2} + b M^{-d/2} + O(M^{-1-d/2}), M = index of last term.
    let e1 = 1.0 - dim as f64 / 2.0;
    let e2 = -(dim as f64) / 2.0;
    let solve3 = |ms: [usize; 3]| -> (f64, f64, f64) {
        let rows: Vec<[f64; 4]> = ms
            .iter()
            .map(|&m| [1.0, libm::pow(m as f64, e1), libm::pow(m as f64, e2), partial[m]])
            .collect();
        solve_3x3(&rows)
    };
    let m = terms - 1;
    let (g, a, b) = solve3([m / 4, m / 2, m]);
    let (g_coarse, _, _) = solve3([m / 8, m / 4, m / 2]);
    Ok(SeriesFit { green: g, a, b, err: (g - g_coarse).abs() })
}

fn solve_3x3(rows: &[[f64; 4]]) -> (f64, f64, f64) {
    let mut m: Vec<[f64; 4]> = rows.to_vec();
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2])
}

/// Expected number of returns to the origin after `steps` discrete steps
/// (from the fitted series tail). Infinite for recurrent dimensions.
pub fn expected_late_returns(dim: usize, steps: u64) -> f64 {
    let Ok(fit) = green_fit(dim, 1024) else {
        return f64::INFINITY;
    };
    let m = (steps / 2).max(1) as f64;
    let tail = -(fit.a * libm::pow(m, 1.0 - dim as f64 / 2.0) + fit.b * libm::pow(m, -(dim as f64) / 2.0));
    tail.max(0.0)
}

/// Escape probability `gamma` of simple random walk on Z^d.
pub fn gamma_escape<R: Rng + ?Sized>(dim: usize, method: GammaMethod, rng: &mut R) -> Result<GammaEstimate> {
    match method {
        GammaMethod::GreenSeries { terms } => gamma_green(dim, terms),
        GammaMethod::MonteCarlo { walks, steps } => gamma_mc(dim, walks, steps, rng),
    }
}

/// `gamma = 1 / G` with `G` the Green function at the origin.
pub fn gamma_green(dim: usize, terms: usize) -> Result<GammaEstimate> {
    let fit = green_fit(dim, terms)?;
    let value = 1.0 / fit.green;
    let stderr = fit.err / (fit.green * fit.green);
    Ok(GammaEstimate { value, stderr, method: Method::GreenSeries, bias_bound: stderr })
}

/// Move `pos` by `k` steps of the discrete simple random walk.
fn advance_walk<R: Rng + ?Sized>(pos: &mut [i64], k: u64, rng: &mut R) {
    let dim = pos.len();
    if k == 1 {
        let dir = rng.random_range(0..2 * dim);
        pos[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
        return;
    }
    let mut remaining = k;
    for (axis, x) in pos.iter_mut().enumerate() {
        let m = match dim - axis {
            1 => remaining,
            2 => fair_binomial(remaining, rng),
            left => Binomial::new(remaining, 1.0 / left as f64).expect("valid binomial").sample(rng),
        };
        remaining -= m;
        *x += 2 * fair_binomial(m, rng) as i64 - m as i64;
    }
}

/// Binomial(m, 1/2) as the number of set bits among `m` random bits.
#[inline]
fn fair_binomial<R: Rng + ?Sized>(m: u64, rng: &mut R) -> u64 {
    let mut left = m;
    let mut count = 0u64;
    while left >= 64 {
        count += u64::from(rng.next_u64().count_ones());
        left -= 64;
    }
    if left > 0 {
        count += u64::from((rng.next_u64() & ((1u64 << left) - 1)).count_ones());
    }
    count
}

fn l1(pos: &[i64]) -> u64 {
    pos.iter().map(|x| x.unsigned_abs()).sum()
}

/// Whether a walk of `steps` discrete steps from the origin never returns.
/// While at L1 distance `r > 1` the walk cannot hit the origin in fewer than
/// `r` steps, so `r - 1` steps are taken in one multinomial draw.
fn escapes<R: Rng + ?Sized>(dim: usize, steps: u64, rng: &mut R) -> bool {
    let mut pos = [0i64; MAX_DIM];
    let pos = &mut pos[..dim];
    let mut done = 0u64;
    loop {
        let r = l1(pos);
        if r == 0 && done > 0 {
            return false;
        }
        if done >= steps {
            return true;
        }
        let k = if r <= 1 { 1 } else { (r - 1).min(steps - done) };
        advance_walk(pos, k, rng);
        done += k;
    }
}

/// Fraction of `walks` walks of `steps` steps that never revisit the origin.
/// Truncation can only raise the estimate; `bias_bound` is the expected
/// number of returns after `steps`, which bounds the overshoot.
pub fn gamma_mc<R: Rng + ?Sized>(dim: usize, walks: u64, steps: u64, rng: &mut R) -> Result<GammaEstimate> {
    if dim == 0 || dim > MAX_DIM {
        return Err(invalid("dimension out of range"));
    }
    if walks == 0 || steps == 0 {
        return Err(invalid("need at least one walk of at least one step"));
    }
    let escaped = (0..walks).filter(|_| escapes(dim, steps, rng)).count() as f64;
    let p = escaped / walks as f64;
    Ok(GammaEstimate {
        value: p,
        stderr: libm::sqrt(p * (1.0 - p) / walks as f64),
        method: Method::MonteCarlo,
        bias_bound: expected_late_returns(dim, steps).min(1.0),
    })
}

/// gamma, the pair non-coalescence probabilities and the B exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConstants {
    pub gamma: f64,
    /// Limit value 0 when AA coalescence is instantaneous.
    pub p_a: f64,
    /// Limit value 0 when AB coalescence is instantaneous.
    pub p_b: f64,
    /// Effective A coefficient `p_A lambda_A` (`gamma D_A` when instant).
    pub k_a: f64,
    /// Effective B coefficient `p_B lambda_B` (`gamma (D_A + D_B)` when instant).
    pub k_b: f64,
    pub theta: f64,
    pub method: Method,
    pub stderr: ConstantErrors,
}

/// Standard errors propagated from the error on gamma.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstantErrors {
    pub gamma: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub theta: f64,
}

fn constants_at(p: &ModelParams, gamma: f64) -> (f64, f64, f64, f64) {
    let pair = |rate: f64, lam: Coalescence| match lam {
        Coalescence::Instant => (0.0, gamma * rate),
        Coalescence::Finite(l) => {
            let prob = if l == 0.0 { 1.0 } else { gamma * rate / (gamma * rate + l) };
            (prob, prob * l)
        }
    };
    let (p_a, k_a) = pair(p.d_a, p.lambda_a);
    let (p_b, k_b) = pair(p.d_a + p.d_b, p.lambda_b);
    (p_a, p_b, k_a, k_b)
}

/// Plug gamma into the pair survival formulas.
pub fn derive_constants(p: &ModelParams, gamma: &GammaEstimate) -> Result<WalkConstants> {
    p.validate()?;
    if !(gamma.value > 0.0 && gamma.value < 1.0) {
        return Err(invalid("gamma must lie in (0, 1)"));
    }
    let (p_a, p_b, k_a, k_b) = constants_at(p, gamma.value);
    if !(k_a > 0.0) {
        return Err(invalid("the A coefficient p_A lambda_A must be positive (need D_A > 0 and lambda_A > 0)"));
    }
    let theta = k_b / k_a;
    let mut stderr = ConstantErrors { gamma: gamma.stderr, ..Default::default() };
    if gamma.stderr > 0.0 {
        let h = gamma.stderr.min(gamma.value * 1e-3).min((1.0 - gamma.value) * 1e-3);
        let lo = constants_at(p, gamma.value - h);
        let hi = constants_at(p, gamma.value + h);
        let scale = gamma.stderr / (2.0 * h);
        stderr.p_a = (hi.0 - lo.0).abs() * scale;
        stderr.p_b = (hi.1 - lo.1).abs() * scale;
        stderr.k_a = (hi.2 - lo.2).abs() * scale;
        stderr.k_b = (hi.3 - lo.3).abs() * scale;
        stderr.theta = (hi.3 / hi.2 - lo.3 / lo.2).abs() * scale;
    }
    Ok(WalkConstants { gamma: gamma.value, p_a, p_b, k_a, k_b, theta, method: gamma.method, stderr })
}

/// Which colliding pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pair {
    AA,
    AB,
}

impl Pair {
    /// Jump rate of the difference walk and the hazard while at 0.
    fn reduced(self, p: &ModelParams) -> (f64, Coalescence) {
        match self {
            Pair::AA => (
                2.0 * p.d_a,
                match p.lambda_a {
                    Coalescence::Finite(l) => Coalescence::Finite(2.0 * l),
                    Coalescence::Instant => Coalescence::Instant,
                },
            ),
            Pair::AB => (p.d_a + p.d_b, p.lambda_b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSurvival {
    /// Fraction of pairs not coalesced by `t_max`.
    pub survival: Estimate,
    /// Estimated further coalescence mass after `t_max`; the survival to
    /// infinity is lower by at most about this much.
    pub tail_bound: f64,
}

/// Time integral of the return density of a rate-`rate` walk from `t` to
/// infinity, using the Gaussian asymptote with a first-order correction.
fn late_occupation(dim: usize, rate: f64, t: f64) -> f64 {
    if dim <= 2 {
        return f64::INFINITY;
    }
    let x = rate * t / dim as f64;
    let half = dim as f64 / 2.0;
    let lead = libm::pow(dim as f64 / (2.0 * core::f64::consts::PI * rate), half)
        * libm::pow(t, 1.0 - half)
        / (half - 1.0);
    lead * libm::pow(1.0 + 1.0 / (4.0 * x), half)
}

/// Survival up to `t_max` of a pair started on the same site, through the
/// difference walk: it jumps at `2 D_A` (AA) or `D_A + D_B` (AB) and is
/// killed at rate `2 lambda_A` (AA) or `lambda_B` (AB) while at the origin.
pub fn pair_survival_mc<R: Rng + ?Sized>(
    p: &ModelParams,
    dim: usize,
    pair: Pair,
    t_max: f64,
    n: u64,
    rng: &mut R,
) -> Result<PairSurvival> {
    p.validate()?;
    if dim == 0 || dim > MAX_DIM {
        return Err(invalid("dimension out of range"));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) || n == 0 {
        return Err(invalid("need finite t_max >= 0 and at least one pair"));
    }
    let (rate, hazard) = pair.reduced(p);
    let kill = match hazard {
        Coalescence::Finite(k) if k == 0.0 => {
            return Ok(PairSurvival { survival: Estimate::exact(1.0), tail_bound: 0.0 });
        }
        Coalescence::Instant => {
            // Killed at the first instant the two share a site, i.e. at once.
            return Ok(PairSurvival { survival: Estimate::exact(0.0), tail_bound: 0.0 });
        }
        Coalescence::Finite(k) => k,
    };
    if rate == 0.0 {
        return Ok(PairSurvival { survival: Estimate::exact(libm::exp(-kill * t_max)), tail_bound: 0.0 });
    }
    let mut survived = 0u64;
    let mut pos = [0i64; MAX_DIM];
    for _ in 0..n {
        let pos = &mut pos[..dim];
        pos.fill(0);
        let mut time = 0.0;
        let alive = loop {
            let r = l1(pos);
            if r == 0 {
                time += exponential(rng, rate + kill);
                if time > t_max {
                    break true;
                }
                if rng.random::<f64>() * (rate + kill) < kill {
                    break false;
                }
                advance_walk(pos, 1, rng);
            } else {
                let k = if r == 1 { 1 } else { r - 1 };
                time += if k == 1 {
                    exponential(rng, rate)
                } else {
                    Gamma::new(k as f64, 1.0 / rate).expect("valid gamma").sample(rng)
                };
                if time > t_max {
                    break true;
                }
                advance_walk(pos, k, rng);
            }
        };
        survived += u64::from(alive);
    }
    let s = survived as f64 / n as f64;
    let tail = late_occupation(dim, rate, t_max.max(1.0)) * rate * kill / (rate + kill);
    Ok(PairSurvival { survival: Estimate::new(s, libm::sqrt(s * (1.0 - s) / n as f64)), tail_bound: tail.min(1.0) })
}

/// Direct simulation of two walkers started on the same site, for checking
/// the difference-walk reduction. Returns the survival fraction.
pub fn pair_survival_direct<R: Rng + ?Sized>(
    p: &ModelParams,
    dim: usize,
    pair: Pair,
    t_max: f64,
    n: u64,
    rng: &mut R,
) -> Result<Estimate> {
    p.validate()?;
    let (r1, r2, hazard) = match pair {
        Pair::AA => (p.d_a, p.d_a, p.lambda_a.finite().map(|l| 2.0 * l)),
        Pair::AB => (p.d_a, p.d_b, p.lambda_b.finite()),
    };
    let kill = hazard.ok_or_else(|| invalid("direct simulation needs finite coalescence"))?;
    let mut survived = 0u64;
    for _ in 0..n {
        let mut x = [0i64; MAX_DIM];
        let mut y = [0i64; MAX_DIM];
        let mut time = 0.0;
        let alive = loop {
            let together = x[..dim] == y[..dim];
            let total = r1 + r2 + if together { kill } else { 0.0 };
            if total == 0.0 {
                break true;
            }
            time += exponential(rng, total);
            if time > t_max {
                break true;
            }
            let u = rng.random::<f64>() * total;
            if u < r1 {
                advance_walk(&mut x[..dim], 1, rng);
            } else if u < r1 + r2 {
                advance_walk(&mut y[..dim], 1, rng);
            } else {
                break false;
            }
        };
        survived += u64::from(alive);
    }
    let s = survived as f64 / n as f64;
    Ok(Estimate::new(s, libm::sqrt(s * (1.0 - s) / n as f64)))
}

/// Per-axis transition probabilities of a continuous-time simple random walk
/// of total jump rate `rate` in `dim` dimensions, on a cycle of `side` sites:
/// `q(k) = (1/L) sum_j exp(-(rate/dim) t (1 - cos(2 pi j / L))) cos(2 pi j k / L)`.
pub fn axis_kernel(side: usize, dim: usize, rate: f64, t: f64) -> Vec<f64> {
    let rho = rate / dim as f64;
    let l = side as f64;
    let decay: Vec<f64> = (0..side)
        .map(|j| libm::exp(-rho * t * (1.0 - libm::cos(2.0 * core::f64::consts::PI * j as f64 / l))))
        .collect();
    (0..side)
        .map(|k| {
            let s: f64 = decay
                .iter()
                .enumerate()
                .map(|(j, e)| e * libm::cos(2.0 * core::f64::consts::PI * ((j * k) % side) as f64 / l))
                .sum();
            (s / l).max(0.0)
        })
        .collect()
}

/// Transition density of a continuous-time simple random walk, either on a
/// torus or (with a wide enough cycle) on Z^d.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    dim: usize,
    side: usize,
    axis: Vec<f64>,
    periodic: bool,
}

impl TransitionKernel {
    /// Exact kernel on the torus `geom`.
    pub fn torus(geom: &TorusGeometry, rate: f64, t: f64) -> Self {
        Self { dim: geom.dim(), side: geom.side(), axis: axis_kernel(geom.side(), geom.dim(), rate, t), periodic: true }
    }

    /// Kernel on Z^d, computed on a cycle wide enough that wrap-around mass
    /// is far below double precision.
    pub fn lattice(dim: usize, rate: f64, t: f64) -> Self {
        let m = rate / dim as f64 * t;
        let half = (m + 40.0 * libm::sqrt(m + 1.0) + 60.0) as usize;
        Self { dim, side: 2 * half, axis: axis_kernel(2 * half, dim, rate, t), periodic: false }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Probability of one axis displacement.
    pub fn axis_prob(&self, k: i64) -> f64 {
        let side = self.side as i64;
        if !self.periodic && k.abs() >= side / 2 {
            return 0.0;
        }
        self.axis[k.rem_euclid(side) as usize]
    }

    /// Probability of displacement `x`.
    pub fn prob(&self, x: &[i64]) -> f64 {
        x.iter().map(|&k| self.axis_prob(k)).product()
    }

    /// Total mass (1 up to rounding).
    pub fn total(&self) -> f64 {
        let s: f64 = self.axis.iter().sum();
        libm::pow(s, self.dim as f64)
    }

    /// Per-axis probabilities indexed by displacement mod side.
    pub fn axis_table(&self) -> &[f64] {
        &self.axis
    }
}

/// Which two-walker kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// Two A walkers that must end at `a` and `b`; killed at rate
    /// `2 lambda_A` per unit of collision time.
    PsiAA { a: Vec<i64>, b: Vec<i64> },
    /// An A walker and a B walker that must both end at the origin; killed
    /// at rate `lambda_B` per unit of collision time.
    PsiB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCell {
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub t: f64,
    pub kind: KernelKind,
    pub paths: u64,
    /// Tabulation box half-width (sup norm, per walker).
    pub radius: i64,
    /// Cells with positive estimated value, sorted by (x, y).
    pub cells: Vec<KernelCell>,
    /// Estimated kernel mass with a walker outside the box.
    pub outside: Estimate,
    /// Total kernel mass, i.e. the survival probability to time t.
    pub mass: Estimate,
    /// Estimate of `sum |psi_t(x,y) - p p_t(x) p_t(y)|`, only for kernels
    /// with both endpoints at the origin.
    pub decorrelation: Option<Estimate>,
}

/// Sample sizes for [`kernel_mc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBudget {
    /// Forward paths for the table.
    pub paths: u64,
    /// Endpoint pairs for the decorrelation sum (0 skips it).
    pub outer: u64,
    /// Bridges per endpoint pair (even, at least 2).
    pub inner: u64,
}

struct KernelSetup {
    rates: (f64, f64),
    hazard: Coalescence,
    starts: (Vec<i64>, Vec<i64>),
}

fn kernel_setup(kind: &KernelKind, dim: usize, p: &ModelParams) -> Result<KernelSetup> {
    p.validate()?;
    if dim == 0 || dim > MAX_DIM {
        return Err(invalid("dimension out of range"));
    }
    Ok(match kind {
        KernelKind::PsiAA { a, b } => {
            if a.len() != dim || b.len() != dim {
                return Err(invalid("kernel endpoints must have one coordinate per axis"));
            }
            let hazard = match p.lambda_a {
                Coalescence::Finite(l) => Coalescence::Finite(2.0 * l),
                Coalescence::Instant => Coalescence::Instant,
            };
            KernelSetup { rates: (p.d_a, p.d_a), hazard, starts: (a.clone(), b.clone()) }
        }
        KernelKind::PsiB => KernelSetup {
            rates: (p.d_a, p.d_b),
            hazard: p.lambda_b,
            starts: (vec![0; dim], vec![0; dim]),
        },
    })
}

pub(crate) fn survival_weight(hazard: Coalescence, local_time: f64) -> f64 {
    match hazard {
        Coalescence::Finite(k) => libm::exp(-k * local_time),
        Coalescence::Instant => {
            if local_time > 0.0 {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Run both walkers forward for time `t`; returns the collision local time
/// and leaves the endpoints in `x`, `y`.
pub(crate) fn forward_pair<R: Rng + ?Sized>(x: &mut [i64], y: &mut [i64], rates: (f64, f64), t: f64, rng: &mut R) -> f64 {
    let total = rates.0 + rates.1;
    let mut now = 0.0;
    let mut local = 0.0;
    if total == 0.0 {
        return if x == y { t } else { 0.0 };
    }
    loop {
        let next = (now + exponential(rng, total)).min(t);
        if x == y {
            local += next - now;
        }
        now = next;
        if now >= t {
            return local;
        }
        if rng.random::<f64>() * total < rates.0 {
            advance_walk(x, 1, rng);
        } else {
            advance_walk(y, 1, rng);
        }
    }
}

/// Estimate the kernel table by running the walkers forward from the
/// endpoints (the walk is reversible) and weighting each path by its
/// survival probability `exp(-kappa * collision time)` given the path.
pub fn kernel_mc<R: Rng + ?Sized>(
    kind: &KernelKind,
    t: f64,
    p: &ModelParams,
    dim: usize,
    budget: KernelBudget,
    survival_const: Option<f64>,
    rng: &mut R,
) -> Result<KernelEstimate> {
    let setup = kernel_setup(kind, dim, p)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("kernel time must be finite and non-negative"));
    }
    if budget.paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let radius = libm::ceil(6.0 * libm::sqrt(p.max_jump_rate() * t)).max(1.0) as i64;
    let mut table: BTreeMap<Vec<i64>, (f64, f64)> = BTreeMap::new();
    let (mut out_sum, mut out_sq, mut all_sum, mut all_sq) = (0.0, 0.0, 0.0, 0.0);
    let mut x = vec![0i64; dim];
    let mut y = vec![0i64; dim];
    for _ in 0..budget.paths {
        x.copy_from_slice(&setup.starts.0);
        y.copy_from_slice(&setup.starts.1);
        let local = forward_pair(&mut x, &mut y, setup.rates, t, rng);
        let w = survival_weight(setup.hazard, local);
        all_sum += w;
        all_sq += w * w;
        let inside = x.iter().chain(&y).all(|c| c.abs() <= radius);
        if inside {
            if w > 0.0 {
                let mut key = x.clone();
                key.extend_from_slice(&y);
                let e = table.entry(key).or_insert((0.0, 0.0));
                e.0 += w;
                e.1 += w * w;
            }
        } else {
            out_sum += w;
            out_sq += w * w;
        }
    }
    let n = budget.paths as f64;
    let est = |s: f64, sq: f64| {
        let m = s / n;
        Estimate::new(m, libm::sqrt(((sq / n - m * m) / n).max(0.0)))
    };
    let cells = table
        .into_iter()
        .map(|(key, (s, sq))| {
            let e = est(s, sq);
            KernelCell { x: key[..dim].to_vec(), y: key[dim..].to_vec(), value: e.value, stderr: e.stderr }
        })
        .collect();
    let origin_pair = setup.starts.0.iter().chain(&setup.starts.1).all(|&c| c == 0);
    let decorrelation = match survival_const {
        Some(pc) if origin_pair && budget.outer > 0 => Some(decorrelation_sum(kind, t, p, dim, pc, budget.outer, budget.inner, rng)?),
        _ => None,
    };
    Ok(KernelEstimate {
        t,
        kind: kind.clone(),
        paths: budget.paths,
        radius,
        cells,
        outside: est(out_sum, out_sq),
        mass: est(all_sum, all_sq),
        decorrelation,
    })
}

/// Sampler for the jump count of a one-dimensional continuous-time bridge
/// from 0 to `x` in time `t` at jump rate `rho`:
/// `P(n) ~ Pois(n; rho t) C(n, (n + x)/2) 2^-n` for `n >= |x|`, same parity.
struct BridgeCount {
    base: u64,
    cdf: Vec<f64>,
}

impl BridgeCount {
    fn new(x: i64, rho_t: f64) -> Self {
        let base = x.unsigned_abs();
        if rho_t == 0.0 {
            return Self { base, cdf: vec![1.0] };
        }
        let top = base + (rho_t + 12.0 * libm::sqrt(rho_t + 1.0) + 30.0) as u64;
        let ln_rt = libm::log(rho_t);
        let lw: Vec<f64> = (base..=top)
            .step_by(2)
            .map(|n| {
                let plus = (n as i64 + x) as u64 / 2;
                n as f64 * (ln_rt - core::f64::consts::LN_2) - libm::lgamma(n as f64 + 1.0) + ln_choose(n, plus)
            })
            .collect();
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = lw
            .iter()
            .map(|l| {
                acc += libm::exp(l - max);
                acc
            })
            .collect();
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Self { base, cdf }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = rng.random::<f64>();
        let i = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        self.base + 2 * i as u64
    }
}

/// Jump events of one walker bridge: (time, axis, sign), time-sorted.
fn bridge_events<R: Rng + ?Sized>(
    end: &[i64],
    counts: &[BridgeCount],
    t: f64,
    rng: &mut R,
    out: &mut Vec<(f64, u8, i8)>,
) {
    out.clear();
    for (axis, (&x, c)) in end.iter().zip(counts).enumerate() {
        let n = c.sample(rng);
        let plus = ((n as i64 + x) / 2) as usize;
        let start = out.len();
        for i in 0..n as usize {
            let sign = if i < plus { 1 } else { -1 };
            out.push((0.0, axis as u8, sign));
        }
        out[start..].shuffle(rng);
        for ev in out[start..].iter_mut() {
            ev.0 = rng.random::<f64>() * t;
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
}

/// Collision local time of two bridged paths started at the same site.
fn bridge_local_time(ex: &[(f64, u8, i8)], ey: &[(f64, u8, i8)], dim: usize, t: f64) -> f64 {
    let mut diff = [0i64; MAX_DIM];
    let diff = &mut diff[..dim];
    let (mut i, mut j) = (0, 0);
    let mut now = 0.0;
    let mut local = 0.0;
    loop {
        let tx = ex.get(i).map_or(f64::INFINITY, |e| e.0);
        let ty = ey.get(j).map_or(f64::INFINITY, |e| e.0);
        let next = tx.min(ty).min(t);
        if diff.iter().all(|&c| c == 0) {
            local += next - now;
        }
        now = next;
        if now >= t {
            return local;
        }
        if tx <= ty {
            diff[ex[i].1 as usize] += i64::from(ex[i].2);
            i += 1;
        } else {
            diff[ey[j].1 as usize] -= i64::from(ey[j].2);
            j += 1;
        }
    }
}

fn free_endpoint<R: Rng + ?Sized>(dim: usize, rate: f64, t: f64, out: &mut [i64], rng: &mut R) {
    let m = rate / dim as f64 * t;
    for x in out.iter_mut() {
        let n = if m > 0.0 { Poisson::new(m).expect("valid poisson").sample(rng) as u64 } else { 0 };
        *x = if n > 0 { 2 * Binomial::new(n, 0.5).expect("valid binomial").sample(rng) as i64 - n as i64 } else { 0 };
    }
}

/// Estimate of `sum_{x,y} |psi_t(x,y) - p p_t(x) p_t(y)|` for a kernel with
/// both endpoints at the origin.
///
/// The sum equals `E|h(X,Y) - p|` over independent free endpoints `(X,Y)`,
/// where `h(x,y)` is the survival probability of the pair conditioned on
/// its endpoints. For each of `outer` endpoint pairs, `h` is estimated twice
/// from independent halves of `inner` random-walk bridges, and the
/// statistic `sign(h1 - p)(h2 - p)` (symmetrised) is averaged. Its bias is
/// downward and vanishes as `inner` grows; the plain `|h1 - p|` would be
/// biased upward by the bridge noise.
#[allow(clippy::too_many_arguments)]
pub fn decorrelation_sum<R: Rng + ?Sized>(
    kind: &KernelKind,
    t: f64,
    p: &ModelParams,
    dim: usize,
    survival_const: f64,
    outer: u64,
    inner: u64,
    rng: &mut R,
) -> Result<Estimate> {
    let setup = kernel_setup(kind, dim, p)?;
    if setup.starts.0.iter().chain(&setup.starts.1).any(|&c| c != 0) {
        return Err(invalid("the decorrelation sum is defined for kernels ending at the origin"));
    }
    if outer < 2 || inner < 2 || inner % 2 != 0 {
        return Err(invalid("need outer >= 2 and an even inner >= 2"));
    }
    let (ra, rb) = setup.rates;
    let mut stats = Vec::with_capacity(outer as usize);
    let mut x = vec![0i64; dim];
    let mut y = vec![0i64; dim];
    let (mut ex, mut ey) = (Vec::new(), Vec::new());
    for _ in 0..outer {
        free_endpoint(dim, ra, t, &mut x, rng);
        free_endpoint(dim, rb, t, &mut y, rng);
        let cx: Vec<BridgeCount> = x.iter().map(|&v| BridgeCount::new(v, ra / dim as f64 * t)).collect();
        let cy: Vec<BridgeCount> = y.iter().map(|&v| BridgeCount::new(v, rb / dim as f64 * t)).collect();
        let mut halves = [0.0f64; 2];
        for k in 0..inner {
            bridge_events(&x, &cx, t, rng, &mut ex);
            bridge_events(&y, &cy, t, rng, &mut ey);
            let w = survival_weight(setup.hazard, bridge_local_time(&ex, &ey, dim, t));
            halves[(k % 2) as usize] += w;
        }
        let h1 = halves[0] / (inner / 2) as f64 - survival_const;
        let h2 = halves[1] / (inner / 2) as f64 - survival_const;
        let sgn = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        stats.push(0.5 * (sgn(h1) * h2 + sgn(h2) * h1));
    }
    Ok(mean_estimate(&stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn one_dimensional_return_probabilities() {
        let q = return_probabilities(1, 5);
        let exact = [1.0, 0.5, 0.375, 0.3125, 0.2734375];
        for (a, b) in q.iter().zip(exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_return_probabilities_are_squares() {
        // In d = 2 the walk factorises along the diagonals: q_2(n) = q_1(n)^2.
        let q1 = return_probabilities(1, 50);
        let q2 = return_probabilities(2, 50);
        for (a, b) in q1.iter().zip(&q2) {
            assert!((a * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn green_series_matches_known_lattice_green_functions() {
        // Watson's integral and its d = 4, 5 analogues.
        for (d, g) in [(3, 1.516_386_059_151_978), (4, 1.239_467_121_786_965), (5, 1.156_308_125_269_219)] {
            let est = gamma_green(d, 4096).unwrap();
            assert!((1.0 / est.value - g).abs() < 1e-6, "d={d}: {}", 1.0 / est.value);
            assert!(est.stderr < 1e-6);
        }
    }

    #[test]
    fn green_series_diverges_below_three_dimensions() {
        assert_eq!(gamma_green(2, 1024).unwrap_err(), Error::Divergent { dim: 2 });
        assert_eq!(gamma_green(1, 1024).unwrap_err(), Error::Divergent { dim: 1 });
    }

    #[test]
    fn chunked_walk_displacement_has_walk_moments() {
        // After k steps each coordinate has mean 0 and variance k/d.
        let mut rng = stream(3, 0, Purpose::Analysis);
        let (k, d, n) = (50u64, 3usize, 40_000);
        let mut s2 = 0.0;
        let mut parity_ok = true;
        for _ in 0..n {
            let mut pos = [0i64; 3];
            advance_walk(&mut pos, k, &mut rng);
            s2 += (pos[0] * pos[0]) as f64;
            parity_ok &= (pos.iter().sum::<i64>() - k as i64) % 2 == 0;
        }
        let var = s2 / n as f64;
        let expect = k as f64 / d as f64;
        // Var of X^2 for a near-Gaussian coordinate is 2 var^2.
        assert!((var - expect).abs() < 5.0 * libm::sqrt(2.0 / n as f64) * expect);
        assert!(parity_ok);
    }

    #[test]
    fn one_dimensional_walks_almost_never_escape() {
        let mut rng = stream(4, 0, Purpose::Analysis);
        let short = gamma_mc(1, 20_000, 10, &mut rng).unwrap().value;
        let long = gamma_mc(1, 20_000, 10_000, &mut rng).unwrap().value;
        assert!(long < short);
        assert!(long < 0.02, "{long}");
    }

    #[test]
    fn monte_carlo_gamma_in_three_dimensions() {
        let mut rng = stream(5, 0, Purpose::Analysis);
        let mc = gamma_mc(3, 100_000, 100_000, &mut rng).unwrap();
        let green = gamma_green(3, 4096).unwrap();
        let gap = mc.value - green.value;
        assert!(gap > -4.0 * mc.stderr && gap < 4.0 * mc.stderr + mc.bias_bound, "mc {mc:?} green {green:?}");
        assert!(mc.bias_bound < 0.01);
    }

    #[test]
    fn constants_for_unit_rates() {
        let g = gamma_green(3, 4096).unwrap();
        let c = derive_constants(&ModelParams::finite(1.0, 0.0, 1.0, 1.0), &g).unwrap();
        assert!((c.p_a - g.value / (g.value + 1.0)).abs() < 1e-15);
        assert!((1.0 / c.k_a - 2.5164).abs() < 1e-3);
        // D_B = 0 and lambda_B = lambda_A make the two pairs identical.
        assert!((c.theta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn instant_limits() {
        let g = gamma_green(3, 4096).unwrap();
        let p = ModelParams { lambda_a: Coalescence::Instant, lambda_b: Coalescence::Instant, ..ModelParams::finite(1.0, 1.0, 0.0, 0.0) };
        let c = derive_constants(&p, &g).unwrap();
        assert!((c.theta - 2.0).abs() < 1e-15);
        assert!((c.k_a - g.value).abs() < 1e-15);
        assert_eq!(c.p_a, 0.0);
        // large finite rates approach the limit
        let big = derive_constants(&ModelParams::finite(1.0, 1.0, 1e9, 1e9), &g).unwrap();
        assert!((big.theta - 2.0).abs() < 1e-6);
    }

    #[test]
    fn theta_monotone_in_coalescence_rates() {
        let g = gamma_green(3, 4096).unwrap();
        let grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
        for &la in &grid {
            let mut prev = 0.0;
            for &lb in &grid {
                let c = derive_constants(&ModelParams::finite(1.0, 0.5, la, lb), &g).unwrap();
                assert!(c.p_a > 0.0 && c.p_a < 1.0 && c.p_b > 0.0 && c.p_b < 1.0 && c.theta > 0.0);
                assert!(c.theta > prev);
                prev = c.theta;
            }
        }
        for &lb in &grid {
            let mut prev = f64::INFINITY;
            for &la in &grid {
                let c = derive_constants(&ModelParams::finite(1.0, 0.5, la, lb), &g).unwrap();
                assert!(c.theta < prev);
                prev = c.theta;
            }
        }
    }

    #[test]
    fn survival_is_one_without_coalescence() {
        let mut rng = stream(6, 0, Purpose::Analysis);
        let s = pair_survival_mc(&ModelParams::finite(1.0, 1.0, 0.0, 1.0), 3, Pair::AA, 100.0, 10, &mut rng).unwrap();
        assert_eq!(s.survival, Estimate::exact(1.0));
    }

    #[test]
    fn difference_walk_matches_two_walkers() {
        let p = ModelParams::finite(1.0, 0.5, 1.0, 2.0);
        for pair in [Pair::AA, Pair::AB] {
            let reduced = pair_survival_mc(&p, 3, pair, 2.0, 100_000, &mut stream(7, 0, Purpose::Analysis)).unwrap().survival;
            let direct = pair_survival_direct(&p, 3, pair, 2.0, 100_000, &mut stream(7, 1, Purpose::Analysis)).unwrap();
            assert!(reduced.z_score(&direct).abs() < 4.0, "{pair:?}: {reduced:?} vs {direct:?}");
        }
    }

    #[test]
    fn frozen_pair_survival_is_exponential() {
        let mut rng = stream(8, 0, Purpose::Analysis);
        let s = pair_survival_mc(&ModelParams::finite(0.0, 0.0, 1.0, 1.0), 3, Pair::AB, 2.0, 10, &mut rng).unwrap();
        assert!((s.survival.value - libm::exp(-2.0)).abs() < 1e-15);
    }

    #[test]
    fn survival_monotone_in_rates() {
        let g = gamma_green(3, 4096).unwrap();
        let run = |da: f64, la: f64| {
            pair_survival_mc(&ModelParams::finite(da, 0.0, la, 1.0), 3, Pair::AA, 200.0, 50_000, &mut stream(9, 0, Purpose::Analysis))
                .unwrap()
                .survival
        };
        let base = run(1.0, 1.0);
        let more_coal = run(1.0, 2.0);
        let faster = run(2.0, 1.0);
        assert!(more_coal.value < base.value && base.z_score(&more_coal) > 3.0);
        assert!(faster.value > base.value && faster.z_score(&base) > 3.0);
        // and close to the formula at this horizon
        let c = derive_constants(&ModelParams::finite(1.0, 0.0, 1.0, 1.0), &g).unwrap();
        assert!((base.value - c.p_a).abs() < 0.02);
    }

    #[test]
    fn kernels_are_normalised() {
        let geom = TorusGeometry::new(3, 16).unwrap();
        for t in [0.0, 0.5, 8.0, 100.0] {
            let k = TransitionKernel::torus(&geom, 1.0, t);
            assert!((k.total() - 1.0).abs() < 1e-12, "t={t}");
        }
        let z = TransitionKernel::lattice(3, 2.0, 64.0);
        assert!((z.total() - 1.0).abs() < 1e-12);
        // e^{-x} I_0(x) at x = 1
        let one = TransitionKernel::lattice(1, 1.0, 1.0);
        assert!((one.axis_prob(0) - 0.465_759_607_593_640_6).abs() < 1e-13);
    }

    #[test]
    fn kernel_at_time_zero_is_an_indicator() {
        let kind = KernelKind::PsiAA { a: vec![1, 0, 0], b: vec![0, 0, -1] };
        let est = kernel_mc(
            &kind,
            0.0,
            &ModelParams::finite(1.0, 1.0, 1.0, 1.0),
            3,
            KernelBudget { paths: 100, outer: 0, inner: 2 },
            None,
            &mut stream(1, 0, Purpose::Analysis),
        )
        .unwrap();
        assert_eq!(est.cells.len(), 1);
        assert_eq!((est.cells[0].x.as_slice(), est.cells[0].y.as_slice()), (&[1, 0, 0][..], &[0, 0, -1][..]));
        assert_eq!(est.cells[0].value, 1.0);
    }

    #[test]
    fn kernel_below_product_of_transition_densities() {
        let p = ModelParams::finite(1.0, 1.0, 1.0, 1.0);
        let t = 1.0;
        let est = kernel_mc(
            &KernelKind::PsiAA { a: vec![0, 0, 0], b: vec![0, 0, 0] },
            t,
            &p,
            3,
            KernelBudget { paths: 200_000, outer: 0, inner: 2 },
            None,
            &mut stream(2, 0, Purpose::Analysis),
        )
        .unwrap();
        let q = TransitionKernel::lattice(3, p.d_a, t);
        for c in &est.cells {
            let bound = q.prob(&c.x) * q.prob(&c.y);
            assert!(c.value <= bound + 4.0 * c.stderr + 1e-12, "{c:?} bound {bound}");
        }
        assert!(est.mass.value <= 1.0);
    }

    #[test]
    fn no_killing_gives_product_kernel() {
        let p = ModelParams::finite(1.0, 1.0, 0.0, 0.0);
        let est = kernel_mc(
            &KernelKind::PsiAA { a: vec![0], b: vec![0] },
            1.0,
            &p,
            1,
            KernelBudget { paths: 200_000, outer: 0, inner: 2 },
            None,
            &mut stream(3, 0, Purpose::Analysis),
        )
        .unwrap();
        let q = TransitionKernel::lattice(1, 1.0, 1.0);
        for c in est.cells.iter().filter(|c| c.x[0].abs() <= 1 && c.y[0].abs() <= 1) {
            let exact = q.prob(&c.x) * q.prob(&c.y);
            let se = libm::sqrt(exact * (1.0 - exact) / 200_000.0);
            assert!((c.value - exact).abs() < 5.0 * se, "{c:?} vs {exact}");
        }
    }

    #[test]
    fn bridge_counts_have_right_parity_and_mean() {
        let mut rng = stream(4, 0, Purpose::Analysis);
        let c = BridgeCount::new(3, 2.0);
        let mut s = 0.0;
        for _ in 0..10_000 {
            let n = c.sample(&mut rng);
            assert!(n >= 3 && n % 2 == 1);
            s += n as f64;
        }
        assert!(s / 10_000.0 > 3.0);
    }

    #[test]
    fn bridges_reproduce_survival_mass() {
        // Averaging bridge survival over free endpoints gives the unconditioned
        // survival probability.
        let p = ModelParams::finite(1.0, 1.0, 1.0, 1.0);
        let t = 2.0;
        let mut rng = stream(5, 0, Purpose::Analysis);
        let mut ws = Vec::new();
        let (mut x, mut y) = (vec![0i64; 3], vec![0i64; 3]);
        let (mut ex, mut ey) = (Vec::new(), Vec::new());
        for _ in 0..40_000 {
            free_endpoint(3, 1.0, t, &mut x, &mut rng);
            free_endpoint(3, 1.0, t, &mut y, &mut rng);
            let cx: Vec<BridgeCount> = x.iter().map(|&v| BridgeCount::new(v, t / 3.0)).collect();
            let cy: Vec<BridgeCount> = y.iter().map(|&v| BridgeCount::new(v, t / 3.0)).collect();
            bridge_events(&x, &cx, t, &mut rng, &mut ex);
            bridge_events(&y, &cy, t, &mut rng, &mut ey);
            ws.push(survival_weight(Coalescence::Finite(2.0), bridge_local_time(&ex, &ey, 3, t)));
        }
        let bridged = mean_estimate(&ws);
        let forward = kernel_mc(
            &KernelKind::PsiAA { a: vec![0; 3], b: vec![0; 3] },
            t,
            &p,
            3,
            KernelBudget { paths: 40_000, outer: 0, inner: 2 },
            None,
            &mut stream(5, 1, Purpose::Analysis),
        )
        .unwrap()
        .mass;
        assert!(bridged.z_score(&forward).abs() < 4.0, "{bridged:?} vs {forward:?}");
    }
}
