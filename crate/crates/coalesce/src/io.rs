//! CSV and key-value file formats. Every writer re-reads what it wrote and
//! checks that it parses back to the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use coalesce_core::estimator::{DensitySeries, FitResult};
use coalesce_core::stats::{Estimate, TestReport};
use coalesce_core::walk::{ConstantErrors, KernelEstimate, Method, WalkConstants};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub xi_hat: f64,
    pub xi_err: f64,
    pub eta_hat: f64,
    pub eta_err: f64,
    pub p_occ_a: f64,
    pub p_occ_b: f64,
    pub n_replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub species: String,
    pub exponent: f64,
    pub exponent_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    pub rms: f64,
    pub theory: f64,
    pub z: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub statistic: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub verdict: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEqRow {
    pub t: f64,
    pub a_naive: f64,
    pub b_naive: f64,
    pub a_mod: f64,
    pub b_mod: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    /// Coordinates joined by `:`.
    pub x: String,
    pub y: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn series_rows(s: &DensitySeries) -> Vec<SeriesRow> {
    (0..s.times.len())
        .map(|k| SeriesRow {
            t: s.times[k],
            xi_hat: s.xi[k].value,
            xi_err: s.xi[k].stderr,
            eta_hat: s.eta[k].value,
            eta_err: s.eta[k].stderr,
            p_occ_a: s.p_occ_a[k],
            p_occ_b: s.p_occ_b[k],
            n_replicas: s.n_replicas,
        })
        .collect()
}

/// Series from CSV rows; per-replica data are not stored on disk.
pub fn series_from_rows(rows: &[SeriesRow]) -> DensitySeries {
    DensitySeries {
        times: rows.iter().map(|r| r.t).collect(),
        xi: rows.iter().map(|r| Estimate::new(r.xi_hat, r.xi_err)).collect(),
        eta: rows.iter().map(|r| Estimate::new(r.eta_hat, r.eta_err)).collect(),
        p_occ_a: rows.iter().map(|r| r.p_occ_a).collect(),
        p_occ_b: rows.iter().map(|r| r.p_occ_b).collect(),
        n_replicas: rows.first().map_or(0, |r| r.n_replicas),
        replicas: Vec::new(),
    }
}

pub fn fit_row(species: &str, f: &FitResult) -> FitRow {
    FitRow {
        species: species.into(),
        exponent: f.exponent.value,
        exponent_err: f.exponent.stderr,
        amplitude: f.amplitude.value,
        amplitude_err: f.amplitude.stderr,
        t_lo: f.window.0,
        t_hi: f.window.1,
        points: f.points,
        rms: f.rms,
        theory: f.theory,
        z: f.z,
        rel_dev: f.rel_dev,
    }
}

pub fn report_row(r: &TestReport) -> ReportRow {
    ReportRow {
        name: r.name.clone(),
        statistic: r.statistic,
        stderr: r.stderr,
        ci_lo: r.ci_lo,
        ci_hi: r.ci_hi,
        level: r.level,
        verdict: r.verdict.name().into(),
        detail: r.detail.clone(),
    }
}

/// One human-readable line per report.
pub fn report_line(r: &TestReport) -> String {
    format!(
        "{:<18} {:<12} stat={:+.4e} se={:.2e} ci=[{:+.4e}, {:+.4e}] level={} {}",
        r.name,
        r.verdict.name(),
        r.statistic,
        r.stderr,
        r.ci_lo,
        r.ci_hi,
        r.level,
        r.detail
    )
}

pub fn kernel_rows(k: &KernelEstimate) -> Vec<KernelRow> {
    let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(":");
    k.cells.iter().map(|c| KernelRow { x: join(&c.x), y: join(&c.y), value: c.value, stderr: c.stderr }).collect()
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Write rows, then re-read the file, deserialize every record and check the
/// re-serialized bytes match.
pub fn write_csv<T: Serialize + DeserializeOwned>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let bytes = to_csv(rows, header).map_err(|e| CliError::format(path, e.to_string()))?;
    std::fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    let back: Vec<T> = read_csv(path, header)?;
    let again = to_csv(&back, header).map_err(|e| CliError::format(path, e.to_string()))?;
    if again != bytes {
        return Err(CliError::format(path, "file does not re-read to the same records"));
    }
    Ok(())
}

/// Read a CSV file, requiring every column in `required`.
pub fn read_csv<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| CliError::format(path, e.to_string()))?.clone();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(CliError::format(path, format!("missing columns: {}", missing.join(", "))));
    }
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| CliError::format(path, e.to_string()))
}

pub const SERIES_COLUMNS: &[&str] = &["t", "xi_hat", "xi_err", "eta_hat", "eta_err", "p_occ_a", "p_occ_b", "n_replicas"];
pub const FIT_COLUMNS: &[&str] = &[
    "species",
    "exponent",
    "exponent_err",
    "amplitude",
    "amplitude_err",
    "t_lo",
    "t_hi",
    "points",
    "rms",
    "theory",
    "z",
    "rel_dev",
];
pub const REPORT_COLUMNS: &[&str] = &["name", "statistic", "stderr", "ci_lo", "ci_hi", "level", "verdict", "detail"];
pub const RATE_EQ_COLUMNS: &[&str] = &["t", "a_naive", "b_naive", "a_mod", "b_mod"];
pub const KERNEL_COLUMNS: &[&str] = &["x", "y", "value", "stderr"];

/// `name = value` or `name = value ± stderr` lines.
pub fn write_kv(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        let _ = writeln!(text, "{k} = {v}");
    }
    std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    let back = read_kv(path)?;
    if back.len() != entries.len() || back.iter().zip(entries).any(|(a, b)| a.0 != b.0 || a.1 != b.1.trim()) {
        return Err(CliError::format(path, "key-value file does not re-read to the same entries"));
    }
    Ok(())
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::format(path, format!("line {}: expected `name = value`", n + 1)))
        })
        .collect()
}

fn with_err(value: f64, stderr: f64) -> String {
    format!("{value} ± {stderr}")
}

fn parse_with_err(path: &Path, key: &str, v: &str) -> Result<(f64, f64)> {
    let bad = || CliError::format(path, format!("`{key}`: expected `value ± stderr`, got `{v}`"));
    let (a, b) = v.split_once('±').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn constants_entries(dim: usize, c: &WalkConstants) -> Vec<(String, String)> {
    vec![
        ("dim".into(), dim.to_string()),
        ("method".into(), c.method.name().into()),
        ("gamma".into(), with_err(c.gamma, c.stderr.gamma)),
        ("p_a".into(), with_err(c.p_a, c.stderr.p_a)),
        ("p_b".into(), with_err(c.p_b, c.stderr.p_b)),
        ("k_a".into(), with_err(c.k_a, c.stderr.k_a)),
        ("k_b".into(), with_err(c.k_b, c.stderr.k_b)),
        ("theta".into(), with_err(c.theta, c.stderr.theta)),
        ("inv_k_a".into(), with_err(1.0 / c.k_a, c.stderr.k_a / (c.k_a * c.k_a))),
    ]
}

pub fn read_constants(path: &Path) -> Result<WalkConstants> {
    let entries = read_kv(path)?;
    let find = |k: &str| {
        entries
            .iter()
            .find(|(name, _)| name == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::format(path, format!("missing `{k}`")))
    };
    let field = |k: &str| find(k).and_then(|v| parse_with_err(path, k, v));
    let method = match find("method")? {
        "green-series" => Method::GreenSeries,
        "monte-carlo" => Method::MonteCarlo,
        other => return Err(CliError::format(path, format!("unknown method `{other}`"))),
    };
    let (gamma, p_a, p_b, k_a, k_b, theta) = (field("gamma")?, field("p_a")?, field("p_b")?, field("k_a")?, field("k_b")?, field("theta")?);
    Ok(WalkConstants {
        gamma: gamma.0,
        p_a: p_a.0,
        p_b: p_b.0,
        k_a: k_a.0,
        k_b: k_b.0,
        theta: theta.0,
        method,
        stderr: ConstantErrors { gamma: gamma.1, p_a: p_a.1, p_b: p_b.1, k_a: k_a.1, k_b: k_b.1, theta: theta.1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Header names of a row type, from serializing a sample row.
    fn header_of<T: Serialize>(sample: Option<&T>, fallback: &[&'static str]) -> Vec<String> {
        let Some(sample) = sample else { return fallback.iter().map(|s| s.to_string()).collect() };
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.serialize(sample);
        let bytes = w.into_inner().unwrap_or_default();
        let text = String::from_utf8_lossy(&bytes);
        text.lines().next().unwrap_or("").split(',').map(String::from).collect()
    }

    #[test]
    fn header_matches_column_lists() {
        let s = SeriesRow { t: 1.0, xi_hat: 0.0, xi_err: 0.0, eta_hat: 0.0, eta_err: 0.0, p_occ_a: 0.0, p_occ_b: 0.0, n_replicas: 1 };
        assert_eq!(header_of(Some(&s), &[]), SERIES_COLUMNS);
        let r = RateEqRow { t: 0.0, a_naive: 0.0, b_naive: 0.0, a_mod: 0.0, b_mod: 0.0 };
        assert_eq!(header_of(Some(&r), &[]), RATE_EQ_COLUMNS);
        let k = KernelRow { x: "0".into(), y: "0".into(), value: 0.0, stderr: 0.0 };
        assert_eq!(header_of(Some(&k), &[]), KERNEL_COLUMNS);
        let f = fit_row("a", &FitResult {
            exponent: Estimate::exact(1.0),
            amplitude: Estimate::exact(1.0),
            window: (1.0, 2.0),
            points: 3,
            rms: 0.0,
            theory: 1.0,
            z: 0.0,
            rel_dev: 0.0,
        });
        assert_eq!(header_of(Some(&f), &[]), FIT_COLUMNS);
        let rep = report_row(&TestReport::inconclusive("x", "y", 0.95));
        assert_eq!(header_of(Some(&rep), &[]), REPORT_COLUMNS);
    }

    #[test]
    fn csv_round_trip_and_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![RateEqRow { t: 0.1, a_naive: 1.0 / 3.0, b_naive: 2.0, a_mod: f64::MIN_POSITIVE, b_mod: 1e300 }];
        write_csv(&p, &rows, RATE_EQ_COLUMNS).unwrap();
        assert_eq!(read_csv::<RateEqRow>(&p, RATE_EQ_COLUMNS).unwrap(), rows);
        assert!(matches!(read_csv::<SeriesRow>(&p, SERIES_COLUMNS), Err(CliError::Format { .. })));
        let empty: Vec<RateEqRow> = Vec::new();
        write_csv(&p, &empty, RATE_EQ_COLUMNS).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), RATE_EQ_COLUMNS.join(","));
    }

    #[test]
    fn reports_with_nan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rep.csv");
        let rows = vec![report_row(&TestReport::inconclusive("tail_product", "no samples, reach 2", 0.95))];
        write_csv(&p, &rows, REPORT_COLUMNS).unwrap();
    }
}
