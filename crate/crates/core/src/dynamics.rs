//! Exact continuous-time simulation of the two-species coalescing system.
//!
//! A particles jump at rate `D_A` to a uniform neighbour and each ordered
//! pair of A particles on a site coalesces at rate `lambda_A` (so each
//! unordered pair at rate `2 lambda_A`). B particles jump at rate `D_B` and
//! every (A, B) pair on a site turns into a single A at rate `lambda_B`.
//!
//! The chain is sampled site by site: per-site aggregate rates live in two
//! [`RateIndex`] trees, one for the A channels (A walk, AA coalescence) and
//! one for the B channels (B walk, AB coalescence). The A channels never
//! depend on B, so A events are drawn from their own random stream with a
//! plain exponential clock. The B clock is a unit-rate exponential budget
//! consumed at the current B total rate (next-reaction style), which keeps it
//! exact when A events change the B rates. A consequence is that the A
//! trajectory is a function of the A stream alone.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::index::RateIndex;
use crate::lattice::{Configuration, Site, TorusGeometry};
use crate::rng::{exponential, stream, Purpose};

/// A coalescence rate, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coalescence {
    Finite(f64),
    Instant,
}

impl Coalescence {
    pub fn is_instant(self) -> bool {
        matches!(self, Coalescence::Instant)
    }

    /// The finite rate, or `None` when instantaneous.
    pub fn finite(self) -> Option<f64> {
        match self {
            Coalescence::Finite(r) => Some(r),
            Coalescence::Instant => None,
        }
    }

    /// Rate used by the stochastic channels: instantaneous reactions never
    /// appear as a channel, they are resolved when particles meet.
    #[inline]
    fn channel_rate(self) -> f64 {
        self.finite().unwrap_or(0.0)
    }
}

/// Jump and coalescence rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub d_a: f64,
    pub d_b: f64,
    pub lambda_a: Coalescence,
    pub lambda_b: Coalescence,
}

impl ModelParams {
    pub fn finite(d_a: f64, d_b: f64, lambda_a: f64, lambda_b: f64) -> Self {
        Self {
            d_a,
            d_b,
            lambda_a: Coalescence::Finite(lambda_a),
            lambda_b: Coalescence::Finite(lambda_b),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.d_a) || !ok(self.d_b) {
            return Err(invalid("jump rates must be finite and non-negative"));
        }
        for lam in [self.lambda_a, self.lambda_b] {
            if let Coalescence::Finite(r) = lam {
                if !ok(r) {
                    return Err(invalid("coalescence rates must be non-negative (or instant)"));
                }
            }
        }
        Ok(())
    }

    pub fn any_instant(&self) -> bool {
        self.lambda_a.is_instant() || self.lambda_b.is_instant()
    }

    pub fn max_jump_rate(&self) -> f64 {
        self.d_a.max(self.d_b)
    }

    #[inline]
    fn a_rate(&self, n_a: u32) -> f64 {
        let n = f64::from(n_a);
        self.d_a * n + self.lambda_a.channel_rate() * n * (n - 1.0).max(0.0)
    }

    #[inline]
    fn b_rate(&self, n_a: u32, n_b: u32) -> f64 {
        let nb = f64::from(n_b);
        self.d_b * nb + self.lambda_b.channel_rate() * f64::from(n_a) * nb
    }
}

/// Channel rates at one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteRates {
    pub walk_a: f64,
    pub walk_b: f64,
    pub coal_aa: f64,
    pub coal_ab: f64,
    pub total: f64,
}

/// Rates of every channel at a site holding `n_a` A and `n_b` B particles.
/// Instantaneous coalescence contributes no channel.
pub fn site_rates(n_a: u32, n_b: u32, p: &ModelParams) -> SiteRates {
    let (na, nb) = (f64::from(n_a), f64::from(n_b));
    let walk_a = p.d_a * na;
    let walk_b = p.d_b * nb;
    let coal_aa = p.lambda_a.channel_rate() * na * (na - 1.0).max(0.0);
    let coal_ab = p.lambda_b.channel_rate() * na * nb;
    SiteRates { walk_a, walk_b, coal_aa, coal_ab, total: walk_a + walk_b + coal_aa + coal_ab }
}

/// Apply the instantaneous reactions to a configuration: co-located A merge
/// into one, and every B sharing a site with an A is absorbed.
pub fn resolve_instant(cfg: &mut Configuration, params: &ModelParams) {
    for (a, b) in cfg.a.iter_mut().zip(cfg.b.iter_mut()) {
        if params.lambda_a.is_instant() && *a > 1 {
            *a = 1;
        }
        if params.lambda_b.is_instant() && *a > 0 {
            *b = 0;
        }
    }
}

fn check_site(cfg: &Configuration, params: &ModelParams, site: usize) -> Result<()> {
    let (a, b) = (cfg.a[site], cfg.b[site]);
    if (params.lambda_a.is_instant() && a > 1) || (params.lambda_b.is_instant() && a > 0 && b > 0) {
        return Err(Error::InstantInvariant { site });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    WalkA,
    WalkB,
    CoalesceAA,
    CoalesceAB,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub site: Site,
    pub kind: EventKind,
    /// Destination of a walk.
    pub target: Option<Site>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Fired(Event),
    /// No channel has positive rate; the configuration is frozen forever.
    Absorbed,
}

/// One running replica: configuration, rate indices and random streams.
#[derive(Debug, Clone)]
pub struct Simulation<R> {
    geom: TorusGeometry,
    params: ModelParams,
    cfg: Configuration,
    a_index: RateIndex,
    b_index: RateIndex,
    rng_a: R,
    rng_b: R,
    next_a: f64,
    b_budget: f64,
    events: u64,
    log: Option<Vec<Event>>,
}

impl Simulation<ChaCha8Rng> {
    /// Simulation driven by the A and B streams of `(seed, replica)`.
    pub fn seeded(
        geom: TorusGeometry,
        params: ModelParams,
        cfg: Configuration,
        seed: u64,
        replica: u64,
    ) -> Result<Self> {
        Self::new(
            geom,
            params,
            cfg,
            stream(seed, replica, Purpose::SpeciesA),
            stream(seed, replica, Purpose::SpeciesB),
        )
    }
}

impl<R: Rng> Simulation<R> {
    pub fn new(
        geom: TorusGeometry,
        params: ModelParams,
        cfg: Configuration,
        mut rng_a: R,
        mut rng_b: R,
    ) -> Result<Self> {
        params.validate()?;
        if cfg.a.len() != geom.volume() || cfg.b.len() != geom.volume() {
            return Err(invalid("configuration size does not match the lattice"));
        }
        if !(cfg.time >= 0.0 && cfg.time.is_finite()) {
            return Err(invalid("configuration time must be finite and non-negative"));
        }
        if params.any_instant() {
            for site in 0..geom.volume() {
                check_site(&cfg, &params, site)?;
            }
        }
        let a_index = RateIndex::new(cfg.a.iter().map(|&n| params.a_rate(n)).collect());
        let b_index = RateIndex::new(
            cfg.a.iter().zip(&cfg.b).map(|(&na, &nb)| params.b_rate(na, nb)).collect(),
        );
        let next_a = if a_index.total() > 0.0 {
            cfg.time + exponential(&mut rng_a, a_index.total())
        } else {
            f64::INFINITY
        };
        let b_budget = exponential(&mut rng_b, 1.0);
        Ok(Self { geom, params, cfg, a_index, b_index, rng_a, rng_b, next_a, b_budget, events: 0, log: None })
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn configuration(&self) -> &Configuration {
        &self.cfg
    }

    pub fn into_configuration(self) -> Configuration {
        self.cfg
    }

    pub fn time(&self) -> f64 {
        self.cfg.time
    }

    /// Number of events fired so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Start recording every fired event.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[Event] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn total_rate(&self) -> f64 {
        self.a_index.total() + self.b_index.total()
    }

    /// Largest relative gap between an index's running total and the exact
    /// sum of its leaves.
    pub fn index_drift(&self) -> f64 {
        let rel = |idx: &RateIndex| {
            let exact = idx.recomputed_total();
            if exact == 0.0 {
                idx.total().abs()
            } else {
                ((idx.total() - exact) / exact).abs()
            }
        };
        rel(&self.a_index).max(rel(&self.b_index))
    }

    fn next_b_time(&self) -> f64 {
        let rb = self.b_index.total();
        if rb > 0.0 {
            self.cfg.time + self.b_budget / rb
        } else {
            f64::INFINITY
        }
    }

    /// Time of the next event, or infinity once absorbed.
    pub fn next_event_time(&self) -> f64 {
        self.next_a.min(self.next_b_time())
    }

    fn advance_clock(&mut self, t: f64) {
        let rb = self.b_index.total();
        if rb > 0.0 {
            self.b_budget = (self.b_budget - rb * (t - self.cfg.time)).max(0.0);
        }
        self.cfg.time = t;
    }

    #[inline]
    fn refresh(&mut self, site: usize) {
        let (na, nb) = (self.cfg.a[site], self.cfg.b[site]);
        self.a_index.set(site, self.params.a_rate(na));
        self.b_index.set(site, self.params.b_rate(na, nb));
    }

    fn pick<G: Rng>(index: &RateIndex, rng: &mut G) -> usize {
        loop {
            let site = index.search(rng.random::<f64>() * index.total());
            if index.get(site) > 0.0 {
                return site;
            }
        }
    }

    fn fire_a(&mut self) -> Event {
        let site = Self::pick(&self.a_index, &mut self.rng_a);
        let walk = self.params.d_a * f64::from(self.cfg.a[site]);
        let rate = self.a_index.get(site);
        let time = self.cfg.time;
        if self.rng_a.random::<f64>() * rate < walk {
            let dir = self.rng_a.random_range(0..self.geom.degree());
            let dest = self.geom.step(Site(site), dir).0;
            self.cfg.a[site] -= 1;
            if !(self.params.lambda_a.is_instant() && self.cfg.a[dest] > 0) {
                self.cfg.a[dest] += 1;
            }
            if self.params.lambda_b.is_instant() {
                self.cfg.b[dest] = 0;
            }
            self.refresh(site);
            self.refresh(dest);
            Event { time, site: Site(site), kind: EventKind::WalkA, target: Some(Site(dest)) }
        } else {
            self.cfg.a[site] -= 1;
            self.refresh(site);
            Event { time, site: Site(site), kind: EventKind::CoalesceAA, target: None }
        }
    }

    fn fire_b(&mut self) -> Event {
        let site = Self::pick(&self.b_index, &mut self.rng_b);
        let walk = self.params.d_b * f64::from(self.cfg.b[site]);
        let rate = self.b_index.get(site);
        let time = self.cfg.time;
        if self.rng_b.random::<f64>() * rate < walk {
            let dir = self.rng_b.random_range(0..self.geom.degree());
            let dest = self.geom.step(Site(site), dir).0;
            self.cfg.b[site] -= 1;
            if !(self.params.lambda_b.is_instant() && self.cfg.a[dest] > 0) {
                self.cfg.b[dest] += 1;
            }
            self.refresh(site);
            self.refresh(dest);
            Event { time, site: Site(site), kind: EventKind::WalkB, target: Some(Site(dest)) }
        } else {
            self.cfg.b[site] -= 1;
            self.refresh(site);
            Event { time, site: Site(site), kind: EventKind::CoalesceAB, target: None }
        }
    }

    /// Fire the next event and advance the clock to it.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let t_a = self.next_a;
        let t_b = self.next_b_time();
        if t_a == f64::INFINITY && t_b == f64::INFINITY {
            return Ok(StepOutcome::Absorbed);
        }
        let event = if t_a <= t_b {
            self.advance_clock(t_a);
            let ev = self.fire_a();
            let ra = self.a_index.total();
            self.next_a = if ra > 0.0 {
                self.cfg.time + exponential(&mut self.rng_a, ra)
            } else {
                f64::INFINITY
            };
            ev
        } else {
            self.advance_clock(t_b);
            self.b_budget = exponential(&mut self.rng_b, 1.0);
            self.fire_b()
        };
        self.events += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(event);
        }
        Ok(StepOutcome::Fired(event))
    }

    /// [`step`](Self::step) for chains with at least one instantaneous
    /// reaction, re-checking the instant invariants on every touched site.
    pub fn step_instant(&mut self) -> Result<StepOutcome> {
        if !self.params.any_instant() {
            return Err(invalid("step_instant needs an instantaneous coalescence rate"));
        }
        let outcome = self.step()?;
        if let StepOutcome::Fired(ev) = outcome {
            check_site(&self.cfg, &self.params, ev.site.0)?;
            if let Some(t) = ev.target {
                check_site(&self.cfg, &self.params, t.0)?;
            }
        }
        Ok(outcome)
    }

    /// Check the instant invariants on every site.
    pub fn check_instant_invariants(&self) -> Result<()> {
        if self.params.any_instant() {
            for site in 0..self.geom.volume() {
                check_site(&self.cfg, &self.params, site)?;
            }
        }
        Ok(())
    }

    /// Run until the clock reaches `t_end` or the chain is absorbed.
    ///
    /// `hook(m, cfg)` is called once per measurement time `m <= t_end` (in
    /// order) with the state just before the first event after `m`.
    /// Measurement times must be sorted and not earlier than the current time.
    pub fn run_until<F>(&mut self, t_end: f64, measure: &[f64], mut hook: F) -> Result<()>
    where
        F: FnMut(f64, &Configuration),
    {
        if !(t_end >= self.cfg.time) {
            return Err(invalid("t_end is earlier than the current time"));
        }
        if measure.windows(2).any(|w| w[1] < w[0]) || measure.first().is_some_and(|&m| m < self.cfg.time) {
            return Err(invalid("measurement times must be sorted and not in the past"));
        }
        let mut pending = measure.iter().copied().filter(|&m| m <= t_end).peekable();
        loop {
            let t_next = self.next_event_time();
            while let Some(&m) = pending.peek() {
                if m < t_next {
                    hook(m, &self.cfg);
                    pending.next();
                } else {
                    break;
                }
            }
            if t_next > t_end {
                break;
            }
            self.step()?;
        }
        for m in pending {
            hook(m, &self.cfg);
        }
        self.advance_clock(t_end);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{init_configuration, InitSpec};
    use crate::rng::{stream, Purpose};
    use alloc::vec;

    fn unit() -> ModelParams {
        ModelParams::finite(1.0, 1.0, 1.0, 1.0)
    }

    #[test]
    fn site_rate_examples() {
        let r = site_rates(2, 1, &unit());
        assert_eq!((r.walk_a, r.walk_b, r.coal_aa, r.coal_ab, r.total), (2.0, 1.0, 2.0, 2.0, 7.0));

        let r = site_rates(1, 0, &ModelParams::finite(0.3, 2.0, 5.0, 7.0));
        assert_eq!((r.coal_aa, r.coal_ab), (0.0, 0.0));

        let r = site_rates(3, 2, &ModelParams::finite(0.0, 0.0, 0.5, 2.0));
        assert_eq!((r.coal_aa, r.coal_ab, r.total), (3.0, 12.0, 15.0));
    }

    #[test]
    fn zero_total_only_for_empty_or_frozen_sites() {
        let p = ModelParams::finite(0.0, 1.0, 1.0, 1.0);
        assert_eq!(site_rates(0, 0, &p).total, 0.0);
        assert_eq!(site_rates(1, 0, &p).total, 0.0);
        assert!(site_rates(2, 0, &p).total > 0.0);
        assert!(site_rates(1, 1, &p).total > 0.0);
    }

    fn one_site_cfg(geom: &TorusGeometry, site: usize, a: u32, b: u32) -> Configuration {
        let mut cfg = Configuration::empty(geom);
        cfg.a[site] = a;
        cfg.b[site] = b;
        cfg
    }

    #[test]
    fn single_a_only_walks() {
        let geom = TorusGeometry::new(2, 5).unwrap();
        let cfg = one_site_cfg(&geom, 7, 1, 0);
        let mut sim = Simulation::seeded(geom, ModelParams::finite(1.0, 1.0, 9.0, 9.0), cfg, 11, 0).unwrap();
        sim.enable_log();
        for _ in 0..500 {
            sim.step().unwrap();
            assert_eq!(sim.configuration().total_a(), 1);
        }
        assert!(sim.log().iter().all(|e| e.kind == EventKind::WalkA));
        assert!(sim.log().windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn frozen_pair_coalesces_once() {
        let geom = TorusGeometry::new(1, 4).unwrap();
        let cfg = one_site_cfg(&geom, 0, 2, 0);
        let p = ModelParams::finite(0.0, 0.0, 1.0, 1.0);
        let mut sim = Simulation::seeded(geom, p, cfg, 1, 0).unwrap();
        match sim.step().unwrap() {
            StepOutcome::Fired(ev) => assert_eq!(ev.kind, EventKind::CoalesceAA),
            StepOutcome::Absorbed => panic!("expected an event"),
        }
        assert_eq!(sim.configuration().a[0], 1);
        assert_eq!(sim.step().unwrap(), StepOutcome::Absorbed);
    }

    #[test]
    fn first_coalescence_time_has_mean_one_half() {
        // Only channel: lambda_A n(n-1) = 2, so the waiting time is Exp(2).
        let geom = TorusGeometry::new(1, 2).unwrap();
        let p = ModelParams::finite(0.0, 0.0, 1.0, 1.0);
        let n = 10_000;
        let mut sum = 0.0;
        for r in 0..n {
            let mut sim = Simulation::seeded(geom, p, one_site_cfg(&geom, 0, 2, 0), 99, r).unwrap();
            sim.step().unwrap();
            sum += sim.time();
        }
        let mean = sum / n as f64;
        // sd of Exp(2) is 0.5; 3 standard errors.
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn empty_lattice_is_absorbed() {
        let geom = TorusGeometry::new(3, 3).unwrap();
        let p = ModelParams { lambda_a: Coalescence::Instant, lambda_b: Coalescence::Instant, ..unit() };
        let mut sim = Simulation::seeded(geom, p, Configuration::empty(&geom), 0, 0).unwrap();
        assert_eq!(sim.step_instant().unwrap(), StepOutcome::Absorbed);
    }

    #[test]
    fn instant_aa_merge_on_arrival() {
        let geom = TorusGeometry::new(1, 2).unwrap();
        let mut cfg = Configuration::empty(&geom);
        cfg.a = vec![1, 1];
        let p = ModelParams { lambda_a: Coalescence::Instant, ..ModelParams::finite(1.0, 0.0, 0.0, 0.0) };
        let mut sim = Simulation::seeded(geom, p, cfg, 5, 0).unwrap();
        sim.step_instant().unwrap();
        assert_eq!(sim.configuration().total_a(), 1);
    }

    #[test]
    fn instant_ab_absorbs_every_b_on_arrival() {
        let geom = TorusGeometry::new(1, 2).unwrap();
        let mut cfg = Configuration::empty(&geom);
        cfg.a = vec![1, 0];
        cfg.b = vec![0, 3];
        let p = ModelParams { lambda_b: Coalescence::Instant, ..ModelParams::finite(1.0, 0.0, 1.0, 0.0) };
        let mut sim = Simulation::seeded(geom, p, cfg, 5, 0).unwrap();
        sim.step_instant().unwrap();
        assert_eq!(sim.configuration().a, vec![0, 1]);
        assert_eq!(sim.configuration().b, vec![0, 0]);
    }

    #[test]
    fn large_finite_lambda_b_absorbs_all_b_quickly() {
        // Coupling check of the instant limit: lambda_B = 1e3, no motion.
        let geom = TorusGeometry::new(1, 2).unwrap();
        let p = ModelParams::finite(0.0, 0.0, 1.0, 1e3);
        for r in 0..200 {
            let cfg = one_site_cfg(&geom, 1, 1, 3);
            let mut sim = Simulation::seeded(geom, p, cfg, 8, r).unwrap();
            sim.run_until(0.05, &[], |_, _| {}).unwrap();
            assert_eq!(sim.configuration().b[1], 0);
            assert_eq!(sim.configuration().a[1], 1);
        }
    }

    #[test]
    fn instant_invariant_violation_is_rejected() {
        let geom = TorusGeometry::new(1, 3).unwrap();
        let p = ModelParams { lambda_a: Coalescence::Instant, ..unit() };
        let cfg = one_site_cfg(&geom, 1, 2, 0);
        assert_eq!(
            Simulation::seeded(geom, p, cfg.clone(), 0, 0).unwrap_err(),
            Error::InstantInvariant { site: 1 }
        );
        let mut fixed = cfg;
        resolve_instant(&mut fixed, &p);
        assert_eq!(fixed.a[1], 1);
    }

    #[test]
    fn step_instant_requires_instant_flag() {
        let geom = TorusGeometry::new(1, 3).unwrap();
        let mut sim = Simulation::seeded(geom, unit(), Configuration::empty(&geom), 0, 0).unwrap();
        assert!(sim.step_instant().is_err());
    }

    #[test]
    fn run_until_now_is_identity() {
        let geom = TorusGeometry::new(3, 4).unwrap();
        let cfg = init_configuration(&geom, &InitSpec::Poisson { mean_a: 1.0, mean_b: 1.0 }, &mut stream(1, 0, Purpose::Init)).unwrap();
        let mut sim = Simulation::seeded(geom, unit(), cfg.clone(), 1, 0).unwrap();
        sim.run_until(0.0, &[0.0], |t, c| {
            assert_eq!(t, 0.0);
            assert_eq!(c, &cfg);
        })
        .unwrap();
        assert_eq!(sim.events(), 0);
        assert_eq!(sim.configuration(), &cfg);
    }

    #[test]
    fn counts_are_monotone_event_by_event() {
        let geom = TorusGeometry::new(3, 6).unwrap();
        let cfg = init_configuration(&geom, &InitSpec::Poisson { mean_a: 1.0, mean_b: 1.0 }, &mut stream(2, 0, Purpose::Init)).unwrap();
        let mut sim = Simulation::seeded(geom, unit(), cfg, 2, 0).unwrap();
        let (mut na, mut nb) = (sim.configuration().total_a(), sim.configuration().total_b());
        for _ in 0..20_000 {
            let StepOutcome::Fired(ev) = sim.step().unwrap() else { break };
            let (a, b) = (sim.configuration().total_a(), sim.configuration().total_b());
            match ev.kind {
                EventKind::CoalesceAA => assert_eq!((a, b), (na - 1, nb)),
                EventKind::CoalesceAB => assert_eq!((a, b), (na, nb - 1)),
                EventKind::WalkA | EventKind::WalkB => assert_eq!((a, b), (na, nb)),
            }
            (na, nb) = (a, b);
        }
    }

    #[test]
    fn hooks_see_state_before_next_event() {
        let geom = TorusGeometry::new(2, 4).unwrap();
        let cfg = init_configuration(&geom, &InitSpec::Poisson { mean_a: 1.0, mean_b: 0.5 }, &mut stream(3, 0, Purpose::Init)).unwrap();
        let mut sim = Simulation::seeded(geom, unit(), cfg, 3, 0).unwrap();
        sim.enable_log();
        let mut seen = Vec::new();
        sim.run_until(2.0, &[0.5, 1.0, 1.5, 2.0], |t, c| seen.push((t, c.time))).unwrap();
        assert_eq!(seen.len(), 4);
        for (m, last_event) in seen {
            assert!(last_event <= m);
            // no logged event lies in (last_event, m]
            assert!(!sim.log().iter().any(|e| e.time > last_event && e.time <= m));
        }
        assert_eq!(sim.time(), 2.0);
    }
}
