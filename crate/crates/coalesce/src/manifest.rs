//! Run manifests: everything needed to reproduce an output file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::config::ExperimentSpec;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub spec: ExperimentSpec,
    pub version: &'static str,
    pub replicas: std::ops::Range<u64>,
    pub wall_clock: Duration,
    pub outputs: Vec<PathBuf>,
    pub events: Option<u64>,
}

pub const STREAM_SCHEME: &str =
    "chacha8; key = splitmix64 expansion of (seed xor purpose tag); stream id = replica index";

impl RunManifest {
    pub fn new(command: &str, spec: &ExperimentSpec, replicas: std::ops::Range<u64>) -> Self {
        Self {
            command: command.into(),
            spec: spec.clone(),
            version: env!("CARGO_PKG_VERSION"),
            replicas,
            wall_clock: Duration::ZERO,
            outputs: Vec::new(),
            events: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} {}", env!("CARGO_PKG_NAME"), self.version);
        let _ = writeln!(s, "# command = {}", self.command);
        let _ = writeln!(s, "# streams = {STREAM_SCHEME}");
        let _ = writeln!(s, "# replicas = {}..{} (stream ids; base seed {})", self.replicas.start, self.replicas.end, self.spec.seed);
        let _ = writeln!(s, "# wall_clock_s = {:.3}", self.wall_clock.as_secs_f64());
        if let Some(e) = self.events {
            let _ = writeln!(s, "# events = {e}");
        }
        for o in &self.outputs {
            let _ = writeln!(s, "# output = {}", o.display());
        }
        s.push_str(&self.spec.to_text());
        s
    }

    /// Write the manifest; its non-comment lines re-load as the spec.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))?;
        let back = ExperimentSpec::load(Some(path), &[])?;
        if back != self.spec {
            return Err(CliError::format(path, "manifest does not re-load to the same spec"));
        }
        Ok(())
    }
}
