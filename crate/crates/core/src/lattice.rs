//! Periodic hypercubic lattice, site indexing and particle configurations.
//!
//! Sites are encoded mixed-radix with axis 0 varying fastest, so site
//! `(x_0, x_1, ..., x_{d-1})` has index `x_0 + L x_1 + L^2 x_2 + ...`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 8;

/// A d-dimensional torus with `side` sites per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGeometry {
    dim: usize,
    side: usize,
    volume: usize,
    strides: [usize; MAX_DIM],
}

/// Index of a lattice site in `[0, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site(pub usize);

impl TorusGeometry {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid(alloc::format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if side < 2 {
            return Err(invalid(alloc::format!("side length {side} must be at least 2")));
        }
        let mut strides = [0usize; MAX_DIM];
        let mut volume = 1usize;
        for stride in strides.iter_mut().take(dim) {
            *stride = volume;
            volume = volume
                .checked_mul(side)
                .ok_or_else(|| invalid("lattice volume overflows usize"))?;
        }
        Ok(Self { dim, side, volume, strides })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Number of nearest neighbours, `2d`.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    #[inline]
    pub fn coordinate(&self, site: Site, axis: usize) -> usize {
        (site.0 / self.strides[axis]) % self.side
    }

    pub fn coords(&self, site: Site) -> Vec<usize> {
        (0..self.dim).map(|axis| self.coordinate(site, axis)).collect()
    }

    /// Encode coordinates (reduced modulo the side length).
    pub fn site_of(&self, coords: &[i64]) -> Result<Site> {
        if coords.len() != self.dim {
            return Err(invalid(alloc::format!(
                "expected {} coordinates, got {}",
                self.dim,
                coords.len()
            )));
        }
        let side = self.side as i64;
        let index = coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &stride)| (c.rem_euclid(side) as usize) * stride)
            .sum();
        Ok(Site(index))
    }

    /// Wrapped nearest neighbour of `site` along `axis` in direction `sign`.
    pub fn neighbor(&self, site: Site, axis: usize, sign: i8) -> Result<Site> {
        if axis >= self.dim {
            return Err(Error::AxisOutOfRange { axis, dim: self.dim });
        }
        if sign != 1 && sign != -1 {
            return Err(invalid("neighbor sign must be +1 or -1"));
        }
        let dir = 2 * axis + usize::from(sign < 0);
        Ok(self.step(site, dir))
    }

    /// Neighbour in direction `dir` in `[0, 2d)`: `2*axis` is `+e_axis`,
    /// `2*axis + 1` is `-e_axis`. No range check on `dir`.
    #[inline]
    pub fn step(&self, site: Site, dir: usize) -> Site {
        let axis = dir >> 1;
        let stride = self.strides[axis];
        let c = (site.0 / stride) % self.side;
        if dir & 1 == 0 {
            if c + 1 == self.side {
                Site(site.0 + stride - self.side * stride)
            } else {
                Site(site.0 + stride)
            }
        } else if c == 0 {
            Site(site.0 + (self.side - 1) * stride)
        } else {
            Site(site.0 - stride)
        }
    }

    /// Site at displacement `offset` from `origin`, i.e. `origin + offset` on the torus.
    pub fn translate(&self, origin: Site, offset: Site) -> Site {
        let mut index = 0;
        for axis in 0..self.dim {
            let c = (self.coordinate(origin, axis) + self.coordinate(offset, axis)) % self.side;
            index += c * self.strides[axis];
        }
        Site(index)
    }

    /// Displacement `to - from` reduced onto the torus, as a site index.
    pub fn displacement(&self, from: Site, to: Site) -> Site {
        let mut index = 0;
        for axis in 0..self.dim {
            let c = (self.coordinate(to, axis) + self.side - self.coordinate(from, axis)) % self.side;
            index += c * self.strides[axis];
        }
        Site(index)
    }

    /// Signed minimal-image coordinates of a displacement site.
    pub fn signed_coords(&self, site: Site) -> Vec<i64> {
        let side = self.side as i64;
        (0..self.dim)
            .map(|axis| {
                let c = self.coordinate(site, axis) as i64;
                if 2 * c > side {
                    c - side
                } else {
                    c
                }
            })
            .collect()
    }
}

/// Particle counts of both species on every site, and the current time.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub time: f64,
}

impl Configuration {
    pub fn empty(geom: &TorusGeometry) -> Self {
        Self { a: vec![0; geom.volume()], b: vec![0; geom.volume()], time: 0.0 }
    }

    pub fn volume(&self) -> usize {
        self.a.len()
    }

    pub fn total_a(&self) -> u64 {
        self.a.iter().map(|&n| u64::from(n)).sum()
    }

    pub fn total_b(&self) -> u64 {
        self.b.iter().map(|&n| u64::from(n)).sum()
    }

    pub fn occupied_a(&self) -> usize {
        self.a.iter().filter(|&&n| n > 0).count()
    }

    pub fn occupied_b(&self) -> usize {
        self.b.iter().filter(|&&n| n > 0).count()
    }
}

/// Law of the i.i.d. initial occupation numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Poisson { mean_a: f64, mean_b: f64 },
    Deterministic { n_a: u32, n_b: u32 },
    Bernoulli { p_a: f64, p_b: f64 },
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitSpec::Poisson { mean_a, mean_b } => {
                if !(mean_a >= 0.0 && mean_a.is_finite() && mean_b >= 0.0 && mean_b.is_finite()) {
                    return Err(invalid("Poisson means must be finite and non-negative"));
                }
            }
            InitSpec::Deterministic { .. } => {}
            InitSpec::Bernoulli { p_a, p_b } => {
                if !((0.0..=1.0).contains(&p_a) && (0.0..=1.0).contains(&p_b)) {
                    return Err(invalid("Bernoulli probabilities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Expected initial counts per site, `(A, B)`.
    pub fn means(&self) -> (f64, f64) {
        match *self {
            InitSpec::Poisson { mean_a, mean_b } => (mean_a, mean_b),
            InitSpec::Deterministic { n_a, n_b } => (f64::from(n_a), f64::from(n_b)),
            InitSpec::Bernoulli { p_a, p_b } => (p_a, p_b),
        }
    }
}

fn fill_counts<R: Rng + ?Sized>(out: &mut [u32], law: SiteLaw, rng: &mut R) -> Result<()> {
    match law {
        SiteLaw::Poisson(mean) => {
            if mean == 0.0 {
                out.fill(0);
                return Ok(());
            }
            let dist = Poisson::new(mean).map_err(|_| invalid("bad Poisson mean"))?;
            for n in out.iter_mut() {
                *n = dist.sample(rng) as u32;
            }
        }
        SiteLaw::Fixed(k) => out.fill(k),
        SiteLaw::Bernoulli(p) => {
            for n in out.iter_mut() {
                *n = u32::from(rng.random::<f64>() < p);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum SiteLaw {
    Poisson(f64),
    Fixed(u32),
    Bernoulli(f64),
}

/// Draw an initial configuration with i.i.d. site counts.
///
/// All A counts are drawn before any B count, so the A field depends only on
/// the stream and the A law.
pub fn init_configuration<R: Rng + ?Sized>(
    geom: &TorusGeometry,
    spec: &InitSpec,
    rng: &mut R,
) -> Result<Configuration> {
    spec.validate()?;
    let (law_a, law_b) = match *spec {
        InitSpec::Poisson { mean_a, mean_b } => (SiteLaw::Poisson(mean_a), SiteLaw::Poisson(mean_b)),
        InitSpec::Deterministic { n_a, n_b } => (SiteLaw::Fixed(n_a), SiteLaw::Fixed(n_b)),
        InitSpec::Bernoulli { p_a, p_b } => (SiteLaw::Bernoulli(p_a), SiteLaw::Bernoulli(p_b)),
    };
    let mut cfg = Configuration::empty(geom);
    fill_counts(&mut cfg.a, law_a, rng)?;
    fill_counts(&mut cfg.b, law_b, rng)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    fn at(g: &TorusGeometry, c: &[i64]) -> Site {
        g.site_of(c).unwrap()
    }

    #[test]
    fn neighbor_examples() {
        let g1 = TorusGeometry::new(1, 4).unwrap();
        assert_eq!(g1.neighbor(Site(3), 0, 1).unwrap(), Site(0));

        let g2 = TorusGeometry::new(2, 3).unwrap();
        assert_eq!(g2.neighbor(at(&g2, &[1, 1]), 1, -1).unwrap(), at(&g2, &[1, 0]));

        let g3 = TorusGeometry::new(3, 2).unwrap();
        assert_eq!(g3.neighbor(at(&g3, &[0, 0, 0]), 2, -1).unwrap(), at(&g3, &[0, 0, 1]));
    }

    #[test]
    fn neighbor_rejects_bad_axis() {
        let g = TorusGeometry::new(2, 5).unwrap();
        assert_eq!(g.neighbor(Site(0), 2, 1), Err(Error::AxisOutOfRange { axis: 2, dim: 2 }));
    }

    #[test]
    fn geometry_validation() {
        assert!(TorusGeometry::new(0, 4).is_err());
        assert!(TorusGeometry::new(3, 1).is_err());
        assert_eq!(TorusGeometry::new(3, 4).unwrap().volume(), 64);
    }

    #[test]
    fn every_site_has_2d_distinct_neighbors_when_side_exceeds_two() {
        let g = TorusGeometry::new(3, 5).unwrap();
        for s in 0..g.volume() {
            let mut ns: Vec<usize> = (0..g.degree()).map(|dir| g.step(Site(s), dir).0).collect();
            ns.sort_unstable();
            ns.dedup();
            assert_eq!(ns.len(), 6);
            assert!(!ns.contains(&s));
        }
    }

    #[test]
    fn deterministic_and_empty_inits() {
        let g = TorusGeometry::new(3, 2).unwrap();
        let mut rng = stream(1, 0, Purpose::Init);
        let cfg = init_configuration(&g, &InitSpec::Deterministic { n_a: 1, n_b: 1 }, &mut rng).unwrap();
        assert!(cfg.a.iter().all(|&n| n == 1) && cfg.b.iter().all(|&n| n == 1));
        assert_eq!(cfg.time, 0.0);

        let cfg = init_configuration(&g, &InitSpec::Bernoulli { p_a: 0.0, p_b: 0.0 }, &mut rng).unwrap();
        assert_eq!(cfg.total_a() + cfg.total_b(), 0);
    }

    #[test]
    fn poisson_init_mean_and_factorial_moment() {
        // V = 10^6 sites, Poisson(1): sample mean within 5 sigma, sigma = 1/sqrt(V).
        let g = TorusGeometry::new(2, 1000).unwrap();
        let mut rng = stream(2024, 0, Purpose::Init);
        let spec = InitSpec::Poisson { mean_a: 1.0, mean_b: 0.0 };
        let cfg = init_configuration(&g, &spec, &mut rng).unwrap();
        let v = g.volume() as f64;
        let mean = cfg.total_a() as f64 / v;
        assert!((mean - 1.0).abs() < 5.0 / v.sqrt(), "mean {mean}");
        // E[n(n-1)] = mu^2 = 1, Var[n(n-1)] = 4mu^3 + 2mu^2 = 6.
        let fm: f64 = cfg.a.iter().map(|&n| f64::from(n) * (f64::from(n) - 1.0)).sum::<f64>() / v;
        assert!((fm - 1.0).abs() < 5.0 * (6.0 / v).sqrt(), "factorial moment {fm}");
        assert_eq!(cfg.total_b(), 0);
    }

    #[test]
    fn init_is_reproducible_and_a_field_ignores_b_law() {
        let g = TorusGeometry::new(3, 6).unwrap();
        let s1 = InitSpec::Poisson { mean_a: 0.7, mean_b: 0.0 };
        let s2 = InitSpec::Poisson { mean_a: 0.7, mean_b: 2.0 };
        let c1 = init_configuration(&g, &s1, &mut stream(5, 1, Purpose::Init)).unwrap();
        let c1b = init_configuration(&g, &s1, &mut stream(5, 1, Purpose::Init)).unwrap();
        let c2 = init_configuration(&g, &s2, &mut stream(5, 1, Purpose::Init)).unwrap();
        assert_eq!(c1, c1b);
        assert_eq!(c1.a, c2.a);
    }

    #[test]
    fn invalid_init_rejected() {
        assert!(InitSpec::Bernoulli { p_a: 1.5, p_b: 0.0 }.validate().is_err());
        assert!(InitSpec::Poisson { mean_a: -1.0, mean_b: 0.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn neighbor_is_an_involution(dim in 1usize..5, side in 2usize..7, seed in 0usize..10_000, axis_seed in 0usize..8) {
            let g = TorusGeometry::new(dim, side).unwrap();
            let s = Site(seed % g.volume());
            let axis = axis_seed % dim;
            let fwd = g.neighbor(s, axis, 1).unwrap();
            prop_assert_eq!(g.neighbor(fwd, axis, -1).unwrap(), s);
            let back = g.neighbor(s, axis, -1).unwrap();
            prop_assert_eq!(g.neighbor(back, axis, 1).unwrap(), s);
        }

        #[test]
        fn site_encoding_round_trips(dim in 1usize..5, side in 2usize..9, seed in 0usize..100_000) {
            let g = TorusGeometry::new(dim, side).unwrap();
            let s = Site(seed % g.volume());
            let c: Vec<i64> = g.coords(s).into_iter().map(|x| x as i64).collect();
            prop_assert_eq!(g.site_of(&c).unwrap(), s);
            let back = g.translate(s, g.displacement(s, Site(0)));
            prop_assert_eq!(back, Site(0));
        }
    }
}
