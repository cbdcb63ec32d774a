use std::path::{Path, PathBuf};

use clap::ValueEnum;
use convexify_core::forward::ForwardConfig;
use convexify_core::pipeline::ExperimentConfig;
use convexify_core::verify::{CarlemanConfig, ConvexityConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::read_json;

/// Simulation box presets. `full` is the full-size geometry; `reduced`
/// shrinks the box and moves the source closer so runs take seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Full,
    Reduced,
}

impl Geometry {
    /// Overwrites the box, the source and `T0` of `fwd`, keeping everything else.
    pub fn apply(self, fwd: &mut ForwardConfig) {
        let preset = match self {
            Geometry::Full => ForwardConfig::full(fwd.h),
            Geometry::Reduced => ForwardConfig::reduced(fwd.h),
        };
        fwd.box_lo = preset.box_lo;
        fwd.box_hi = preset.box_hi;
        fwd.source = preset.source;
        fwd.t0 = preset.t0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Formats {
    /// Raw JSON + binary field files (always needed by downstream commands).
    pub raw: bool,
    pub vtk: bool,
    pub slices: bool,
    pub pgm: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self { raw: true, vtk: true, slices: true, pgm: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the box, source and `T0` of `experiment.forward`.
    pub geometry: Option<Geometry>,
    /// When set, replaces the seed of every module.
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub formats: Formats,
    /// Upper bound on worker threads. The numerics are sequential, so this
    /// is only validated.
    pub threads: Option<usize>,
    pub experiment: ExperimentConfig,
    pub carleman: CarlemanConfig,
    pub convexity: ConvexityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            seed: None,
            output: None,
            formats: Formats::default(),
            threads: None,
            experiment: ExperimentConfig::default(),
            carleman: CarlemanConfig::default(),
            convexity: ConvexityConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the resolved config embedded in a manifest.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(p) = path else {
            return Ok(Self::default());
        };
        let bad = |reason: String| CliError::Config(format!("{}: {reason}", p.display()));
        let mut value: serde_json::Value = read_json(p).map_err(|e| match e {
            CliError::Format { reason, .. } => bad(reason),
            other => other,
        })?;
        if value.get("command").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value).map_err(|e| bad(e.to_string()))
    }

    /// Applies the presets and the shared seed. Idempotent, so a resolved
    /// config read back from a manifest resolves to itself.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(g) = self.geometry {
            g.apply(&mut self.experiment.forward);
        }
        if let Some(s) = self.seed {
            self.experiment.seed = s;
            self.carleman.seed = s;
            self.convexity.seed = s;
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `1/16`, `0.0625` or `16` (read as `1/16` when above 1).
pub fn parse_spacing(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            a / b
        }
        None => {
            let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
            if v > 1.0 { 1.0 / v } else { v }
        }
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("spacing `{s}` must be positive"))
    }
}
