use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coalesce::commands::{self, NegdepOptions, Species};
use coalesce::config::ExperimentSpec;
use coalesce::io::report_line;
use coalesce::{CliError, Result};
use coalesce_core::dynamics::{Coalescence, ModelParams};
use coalesce_core::estimator::Window;
use coalesce_core::negdep::{ColourChainParams, TestConfig};
use coalesce_core::walk::{GammaMethod, KernelBudget, KernelKind};

/// Simulator and analysis tools for the two-species coalescing system
/// A+A->A, B+A->A on a periodic lattice.
#[derive(Parser)]
#[command(name = "coalesce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write series.csv and manifest.txt.
    Simulate(SpecArgs),
    /// Escape probability and the derived constants as a key-value file.
    Constants(ConstantsArgs),
    /// Naive and modified rate-equation solutions as CSV.
    RateEq(RateEqArgs),
    /// Fit a stored density series.
    Fit(FitArgs),
    /// Negative-dependence checks.
    Negdep(NegdepArgs),
    /// Monte-Carlo two-walker kernels.
    Kernels(KernelArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set replicas=8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        ExperimentSpec::load(self.config.as_deref(), &self.overrides)
    }
}

/// Rates; `instant` (or `inf`) selects instantaneous coalescence.
#[derive(Args, Clone)]
struct RateArgs {
    #[arg(long, default_value_t = 1.0)]
    d_a: f64,
    #[arg(long, default_value_t = 0.0)]
    d_b: f64,
    #[arg(long, default_value = "1")]
    lambda_a: String,
    #[arg(long, default_value = "1")]
    lambda_b: String,
}

impl RateArgs {
    fn params(&self) -> Result<ModelParams> {
        let rate = |name: &str, v: &str| match v {
            "instant" | "inf" => Ok(Coalescence::Instant),
            _ => v.parse().map(Coalescence::Finite).map_err(|_| CliError::Usage(format!("--{name}: cannot parse `{v}`"))),
        };
        let p = ModelParams {
            d_a: self.d_a,
            d_b: self.d_b,
            lambda_a: rate("lambda-a", &self.lambda_a)?,
            lambda_b: rate("lambda-b", &self.lambda_b)?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaChoice {
    GreenSeries,
    MonteCarlo,
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long, value_enum, default_value = "green-series")]
    method: GammaChoice,
    /// Series terms (green-series).
    #[arg(long, default_value_t = 4096)]
    terms: usize,
    /// Walks and steps per walk (monte-carlo).
    #[arg(long, default_value_t = 100_000)]
    walks: u64,
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "constants.txt")]
    out: PathBuf,
}

impl ConstantsArgs {
    fn method(&self) -> GammaMethod {
        match self.method {
            GammaChoice::GreenSeries => GammaMethod::GreenSeries { terms: self.terms },
            GammaChoice::MonteCarlo => GammaMethod::MonteCarlo { walks: self.walks, steps: self.steps },
        }
    }
}

#[derive(Args)]
struct RateEqArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long, default_value_t = 1.0)]
    a0: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    #[arg(long, default_value_t = 1e4)]
    t_max: f64,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value = "rate_eq.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeciesChoice {
    A,
    B,
    Both,
}

#[derive(Args)]
struct FitArgs {
    /// series.csv written by `simulate`.
    #[arg(long)]
    series: PathBuf,
    /// Constants file written by `constants`.
    #[arg(long)]
    constants: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    species: SpeciesChoice,
    /// `auto` or `LO:HI`.
    #[arg(long, default_value = "auto")]
    window: String,
    /// Upper end of the automatic window (default: last time in the series).
    #[arg(long)]
    limit: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NegdepArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Measurement times for the occupancy and square-function tests.
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 32.0, 128.0])]
    times: Vec<f64>,
    /// NA family, tail product and factorial moments.
    #[arg(long)]
    occupancy: bool,
    /// Square-function ratio of order p.
    #[arg(long)]
    mz: Option<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128, 256, 512, 1024])]
    mz_grid: Vec<usize>,
    /// Exact mixture bound for N = 1..=MAX.
    #[arg(long, value_name = "MAX")]
    mixture: Option<u32>,
    /// Discrete coloured chain with K colours on [-M, M] (d = 1).
    #[arg(long, value_name = "K")]
    colour: Option<usize>,
    #[arg(long, default_value_t = 4)]
    colour_m: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelChoice {
    Aa,
    B,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long, value_enum, default_value = "aa")]
    kind: KernelChoice,
    /// Endpoints for the AA kernel, colon separated (default: origin).
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 1_000_000)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    outer: u64,
    #[arg(long, default_value_t = 64)]
    inner: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "kernels")]
    out: PathBuf,
}

fn point(dim: usize, s: &Option<String>) -> Result<Vec<i64>> {
    let Some(s) = s else { return Ok(vec![0; dim]) };
    let v: Vec<i64> = s
        .split(':')
        .map(|c| c.trim().parse().map_err(|_| CliError::Usage(format!("bad coordinate list `{s}`"))))
        .collect::<Result<_>>()?;
    if v.len() != dim {
        return Err(CliError::Usage(format!("`{s}` needs {dim} coordinates")));
    }
    Ok(v)
}

fn parse_window(s: &str, limit: f64) -> Result<Window> {
    if s == "auto" {
        return Ok(Window::Auto { limit });
    }
    let bad = || CliError::Usage(format!("--window: expected `auto` or `LO:HI`, got `{s}`"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    if !(lo < hi) {
        return Err(bad());
    }
    Ok(Window::Range(lo, hi))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let spec = args.load()?;
            let out = commands::cmd_simulate(&spec)?;
            println!("wrote {} ({} rows) and {}", out.csv.display(), out.series.times.len(), out.manifest.display());
        }
        Command::Constants(args) => {
            let c = commands::cmd_constants(args.dim, &args.rates.params()?, args.method(), args.seed, Some(&args.out))?;
            println!("gamma = {:.6} ± {:.1e} ({})", c.gamma, c.stderr.gamma, c.method.name());
            println!("p_A = {:.6}  p_B = {:.6}  theta = {:.6}  1/k_A = {:.6}", c.p_a, c.p_b, c.theta, 1.0 / c.k_a);
            println!("wrote {}", args.out.display());
        }
        Command::RateEq(args) => {
            let params = args.rates.params()?;
            let c = commands::cmd_constants(args.dim, &params, GammaMethod::default(), 1, None)?;
            let rows = commands::cmd_rate_eq(args.a0, args.b0, &params, &c, args.t_max, args.points, &args.out)?;
            println!("wrote {} ({} rows)", args.out.display(), rows.len());
        }
        Command::Fit(args) => {
            let species = match args.species {
                SpeciesChoice::A => Species::A,
                SpeciesChoice::B => Species::B,
                SpeciesChoice::Both => Species::Both,
            };
            let limit = match args.limit {
                Some(l) => l,
                None => {
                    let rows: Vec<coalesce::io::SeriesRow> = coalesce::io::read_csv(&args.series, coalesce::io::SERIES_COLUMNS)?;
                    rows.last().map_or(0.0, |r| r.t)
                }
            };
            let window = parse_window(&args.window, limit)?;
            for (name, f) in commands::cmd_fit(&args.series, &args.constants, species, window, args.out.as_deref())? {
                print!("{}", commands::fit_summary(&name, &f));
            }
        }
        Command::Negdep(args) => {
            let spec = args.spec.load()?;
            let colour = args.colour.map(|k| ColourChainParams {
                dim: 1,
                m: args.colour_m,
                colours: k,
                horizon: 2.0,
                steps_per_unit: 200,
                d_a: spec.params.d_a,
                lambda: k as f64 * spec.params.lambda_a.finite().unwrap_or(1.0),
                init_p: (spec.init.means().0 / k as f64).min(1.0),
            });
            let opts = NegdepOptions {
                times: args.times,
                occupancy: args.occupancy,
                mz: args.mz.map(|p| (p, args.mz_grid.clone())),
                mixture_max: args.mixture,
                colour,
                cfg: TestConfig { level: args.level, resamples: args.resamples },
            };
            if !opts.occupancy && opts.mz.is_none() && opts.mixture_max.is_none() && opts.colour.is_none() {
                return Err(CliError::Usage("select at least one of --occupancy, --mz, --mixture, --colour".into()));
            }
            for r in commands::cmd_negdep(&spec, &opts)? {
                println!("{}", report_line(&r));
            }
        }
        Command::Kernels(args) => {
            let params = args.rates.params()?;
            let kind = match args.kind {
                KernelChoice::Aa => KernelKind::PsiAA { a: point(args.dim, &args.a)?, b: point(args.dim, &args.b)? },
                KernelChoice::B => KernelKind::PsiB,
            };
            let budget = KernelBudget { paths: args.paths, outer: args.outer, inner: args.inner };
            let est = commands::cmd_kernels(args.dim, &params, &kind, args.t, budget, args.seed, &args.out)?;
            println!("mass {:.6} ± {:.1e}, {} cells", est.mass.value, est.mass.stderr, est.cells.len());
            if let Some(d) = est.decorrelation {
                println!("decorrelation sum {:.5} ± {:.1e}", d.value, d.stderr);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
