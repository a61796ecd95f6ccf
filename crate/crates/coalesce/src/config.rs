//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Command-line overrides use the
//! same `key=value` syntax and are applied after the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coalesce_core::dynamics::{Coalescence, ModelParams};
use coalesce_core::estimator::{finite_size_limit, geometric_times, Experiment};
use coalesce_core::lattice::{InitSpec, TorusGeometry};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dim: usize,
    pub side: usize,
    pub params: ModelParams,
    pub init: InitSpec,
    pub t0: f64,
    pub ratio: f64,
    pub n_points: usize,
    pub replicas: u64,
    pub seed: u64,
    pub output: PathBuf,
    /// Skip the finite-size guard.
    pub allow_finite_size: bool,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dim: 3,
            side: 32,
            params: ModelParams::finite(1.0, 0.0, 1.0, 1.0),
            init: InitSpec::Poisson { mean_a: 1.0, mean_b: 1.0 },
            t0: 1.0,
            ratio: 1.25,
            n_points: 16,
            replicas: 16,
            seed: 1,
            output: PathBuf::from("out"),
            allow_finite_size: false,
            threads: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dim",
    "side",
    "d_a",
    "d_b",
    "lambda_a",
    "lambda_b",
    "init",
    "init_a",
    "init_b",
    "t0",
    "ratio",
    "n_points",
    "replicas",
    "seed",
    "output",
    "allow_finite_size",
    "threads",
];

/// Parse `key = value` lines into an ordered map, rejecting unknown keys and
/// duplicates.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Usage(format!("{origin}:{}: unknown key `{k}`", n + 1)));
        }
        if out.insert(k.clone(), v).is_some() {
            return Err(CliError::Usage(format!("{origin}:{}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{v}`")))
}

fn rate(key: &str, v: &str) -> Result<Coalescence> {
    match v {
        "instant" | "inf" => Ok(Coalescence::Instant),
        _ => Ok(Coalescence::Finite(num(key, v)?)),
    }
}

fn rate_text(c: Coalescence) -> String {
    match c {
        Coalescence::Instant => "instant".into(),
        Coalescence::Finite(v) => v.to_string(),
    }
}

impl ExperimentSpec {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Self::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);
        if let Some(v) = get("dim") {
            s.dim = num("dim", v)?;
        }
        if let Some(v) = get("side") {
            s.side = num("side", v)?;
        }
        if let Some(v) = get("d_a") {
            s.params.d_a = num("d_a", v)?;
        }
        if let Some(v) = get("d_b") {
            s.params.d_b = num("d_b", v)?;
        }
        if let Some(v) = get("lambda_a") {
            s.params.lambda_a = rate("lambda_a", v)?;
        }
        if let Some(v) = get("lambda_b") {
            s.params.lambda_b = rate("lambda_b", v)?;
        }
        let (mut a, mut b) = s.init.means();
        if let Some(v) = get("init_a") {
            a = num("init_a", v)?;
        }
        if let Some(v) = get("init_b") {
            b = num("init_b", v)?;
        }
        s.init = match get("init").unwrap_or("poisson") {
            "poisson" => InitSpec::Poisson { mean_a: a, mean_b: b },
            "bernoulli" => InitSpec::Bernoulli { p_a: a, p_b: b },
            "deterministic" => {
                let whole = |k: &str, x: f64| {
                    if x >= 0.0 && x.fract() == 0.0 && x <= f64::from(u32::MAX) {
                        Ok(x as u32)
                    } else {
                        Err(CliError::Usage(format!("`{k}` must be a non-negative integer for deterministic init")))
                    }
                };
                InitSpec::Deterministic { n_a: whole("init_a", a)?, n_b: whole("init_b", b)? }
            }
            other => return Err(CliError::Usage(format!("`init`: unknown kind `{other}`"))),
        };
        if let Some(v) = get("t0") {
            s.t0 = num("t0", v)?;
        }
        if let Some(v) = get("ratio") {
            s.ratio = num("ratio", v)?;
        }
        if let Some(v) = get("n_points") {
            s.n_points = num("n_points", v)?;
        }
        if let Some(v) = get("replicas") {
            s.replicas = num("replicas", v)?;
        }
        if let Some(v) = get("seed") {
            s.seed = num("seed", v)?;
        }
        if let Some(v) = get("output") {
            s.output = PathBuf::from(v);
        }
        if let Some(v) = get("allow_finite_size") {
            s.allow_finite_size = num("allow_finite_size", v)?;
        }
        if let Some(v) = get("threads") {
            s.threads = num("threads", v)?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Read a config file and apply `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in parse_pairs(&overrides.join("\n"), "override")? {
            pairs.insert(k, v);
        }
        Self::from_pairs(&pairs)
    }

    pub fn validate(&self) -> Result<()> {
        TorusGeometry::new(self.dim, self.side)?;
        self.params.validate()?;
        self.init.validate()?;
        if !(self.t0 > 0.0 && self.t0.is_finite() && self.ratio > 1.0 && self.ratio.is_finite()) {
            return Err(CliError::Usage("time grid needs t0 > 0 and ratio > 1".into()));
        }
        if self.n_points == 0 || self.replicas == 0 {
            return Err(CliError::Usage("n_points and replicas must be at least 1".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        geometric_times(self.t0, self.ratio, self.n_points)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment {
            geom: TorusGeometry::new(self.dim, self.side)?,
            params: self.params,
            init: self.init,
            times: self.times(),
            seed: self.seed,
        })
    }

    /// `sqrt(2 d max(D) t_max) <= L/4` unless overridden.
    pub fn check_finite_size(&self, t_max: f64) -> Result<()> {
        if self.allow_finite_size {
            return Ok(());
        }
        let geom = TorusGeometry::new(self.dim, self.side)?;
        let limit = finite_size_limit(&geom, &self.params);
        if t_max > limit {
            return Err(CliError::Guard(format!(
                "t_max = {t_max} exceeds {limit:.3}, where the diffusion length reaches L/4 = {}; \
                 enlarge the lattice or set allow_finite_size = true",
                self.side as f64 / 4.0
            )));
        }
        Ok(())
    }

    /// Canonical `key = value` text, parseable by [`ExperimentSpec::load`].
    pub fn to_text(&self) -> String {
        let (kind, a, b) = match self.init {
            InitSpec::Poisson { mean_a, mean_b } => ("poisson", mean_a, mean_b),
            InitSpec::Bernoulli { p_a, p_b } => ("bernoulli", p_a, p_b),
            InitSpec::Deterministic { n_a, n_b } => ("deterministic", f64::from(n_a), f64::from(n_b)),
        };
        let mut s = String::new();
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "side = {}", self.side);
        let _ = writeln!(s, "d_a = {}", self.params.d_a);
        let _ = writeln!(s, "d_b = {}", self.params.d_b);
        let _ = writeln!(s, "lambda_a = {}", rate_text(self.params.lambda_a));
        let _ = writeln!(s, "lambda_b = {}", rate_text(self.params.lambda_b));
        let _ = writeln!(s, "init = {kind}");
        let _ = writeln!(s, "init_a = {a}");
        let _ = writeln!(s, "init_b = {b}");
        let _ = writeln!(s, "t0 = {}", self.t0);
        let _ = writeln!(s, "ratio = {}", self.ratio);
        let _ = writeln!(s, "n_points = {}", self.n_points);
        let _ = writeln!(s, "replicas = {}", self.replicas);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "allow_finite_size = {}", self.allow_finite_size);
        let _ = writeln!(s, "threads = {}", self.threads);
        s
    }
}
