//! Run configuration: JSON in, validated and defaults filled, echoed back out.

use serde::{Deserialize, Serialize};
use spectral_vi_core::problems::{
    aggregate_records, nbody_from_ephemeris, read_ephemeris, EphemerisRecord, GAUSSIAN_G,
};
use spectral_vi_core::{NBodyConfig, Problem, SolverConfig};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const DEFAULT_SAMPLES_PER_STEP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    EndpointError,
    CurveError,
    Energy,
    Noether,
    DiscreteNoether,
}

pub const ALL_OUTPUTS: [OutputKind; 5] = [
    OutputKind::EndpointError,
    OutputKind::CurveError,
    OutputKind::Energy,
    OutputKind::Noether,
    OutputKind::DiscreteNoether,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Harmonic {
        #[serde(default = "one")]
        q0: f64,
        #[serde(default)]
        p0: f64,
    },
    FreeParticle {
        #[serde(default = "unit_vec")]
        masses: Vec<f64>,
        #[serde(default = "zero_vec")]
        q0: Vec<f64>,
        #[serde(default = "unit_vec")]
        p0: Vec<f64>,
    },
    Kepler {
        #[serde(default = "one")]
        mu: f64,
        #[serde(default = "kepler_q0")]
        q0: [f64; 2],
        #[serde(default = "kepler_v0")]
        v0: [f64; 2],
    },
    Nbody {
        /// Ephemeris CSV; relative paths resolve against the config file.
        ephemeris: PathBuf,
        #[serde(default = "gaussian_g")]
        g: f64,
        /// Keep only these bodies (after aggregation), in file order.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bodies: Option<Vec<String>>,
        #[serde(default)]
        aggregate: Vec<Aggregate>,
    },
}

fn one() -> f64 {
    1.0
}
fn unit_vec() -> Vec<f64> {
    vec![1.0]
}
fn zero_vec() -> Vec<f64> {
    vec![0.0]
}
fn kepler_q0() -> [f64; 2] {
    [0.4, 0.0]
}
fn kepler_v0() -> [f64; 2] {
    [0.0, 2.0]
}
fn gaussian_g() -> f64 {
    GAUSSIAN_G
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Quadrature points; defaults to `2n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "all_outputs")]
    pub outputs: Vec<OutputKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn all_outputs() -> Vec<OutputKind> {
    ALL_OUTPUTS.to_vec()
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_STEP
}

/// One fully specified integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunPoint {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub steps: usize,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let ProblemSpec::Nbody { ephemeris, .. } = &mut cfg.problem {
            if ephemeris.is_relative() {
                if let Some(dir) = path.parent() {
                    *ephemeris = dir.join(&*ephemeris);
                }
            }
        }
        Ok(cfg)
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }

    fn common_checks(&self) -> Result<(), CliError> {
        self.solver.validate().map_err(|e| invalid(e.to_string()))?;
        if self.samples_per_step < 2 {
            return Err(invalid("samples_per_step must be >= 2"));
        }
        Ok(())
    }

    /// Check a single `(n, m, h, steps)` point, filling `m = 2n`.
    pub fn point(&self, n: usize, h: f64, steps: usize) -> Result<RunPoint, CliError> {
        if n < 2 {
            return Err(invalid(format!("n must be >= 2, got {n}")));
        }
        let m = self.m.unwrap_or(2 * n);
        if m < n + 1 {
            return Err(invalid(format!("m must be >= n + 1, got m = {m}, n = {n}")));
        }
        if 2 * m - 1 < 2 * n + 1 {
            eprintln!("warning: quadrature exactness {} below 2n+1 = {} (n = {n})", 2 * m - 1, 2 * n + 1);
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("h must be positive and finite, got {h}")));
        }
        if steps < 1 {
            return Err(invalid("steps must be >= 1"));
        }
        Ok(RunPoint { n, m, h, steps })
    }

    fn require<T: Copy>(v: Option<T>, name: &str) -> Result<T, CliError> {
        v.ok_or_else(|| invalid(format!("missing field `{name}`")))
    }

    /// The single point of an `integrate` or `stability` run; fills `m`.
    pub fn resolve_single(&mut self) -> Result<RunPoint, CliError> {
        self.common_checks()?;
        let p = self.point(
            Self::require(self.n, "n")?,
            Self::require(self.h, "h")?,
            Self::require(self.steps, "steps")?,
        )?;
        self.m = Some(p.m);
        Ok(p)
    }

    /// Points of an n-sweep, sorted by n.
    pub fn resolve_sweep_n(&mut self) -> Result<Vec<RunPoint>, CliError> {
        self.common_checks()?;
        let h = Self::require(self.h, "h")?;
        let steps = Self::require(self.steps, "steps")?;
        let mut ns = self.sweep.as_ref().and_then(|s| s.n.clone()).ok_or_else(|| invalid("missing `sweep.n`"))?;
        ns.sort_unstable();
        ns.dedup();
        if ns.len() < 3 {
            return Err(invalid("sweep-n needs at least 3 distinct values of n"));
        }
        if let Some(s) = self.sweep.as_mut() {
            s.n = Some(ns.clone());
        }
        ns.into_iter().map(|n| self.point(n, h, steps)).collect()
    }

    /// Points of an h-sweep at fixed total time, sorted by decreasing h.
    pub fn resolve_sweep_h(&mut self) -> Result<Vec<RunPoint>, CliError> {
        self.common_checks()?;
        let n = Self::require(self.n, "n")?;
        let sweep = self.sweep.clone().ok_or_else(|| invalid("missing `sweep`"))?;
        let mut hs = sweep.h.ok_or_else(|| invalid("missing `sweep.h`"))?;
        let total = sweep.total_time.ok_or_else(|| invalid("missing `sweep.total_time`"))?;
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid("sweep.total_time must be positive"));
        }
        hs.sort_by(|a, b| b.total_cmp(a));
        hs.dedup();
        if hs.len() < 3 {
            return Err(invalid("sweep-h needs at least 3 distinct values of h"));
        }
        let points = hs
            .iter()
            .map(|&h| {
                let steps = (total / h).round();
                if !(steps >= 1.0) || (steps * h - total).abs() > 1e-9 * total {
                    return Err(invalid(format!("h = {h} does not divide total_time = {total}")));
                }
                self.point(n, h, steps as usize)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.m = self.m.or(Some(2 * n));
        if let Some(s) = self.sweep.as_mut() {
            s.h = Some(hs);
        }
        Ok(points)
    }
}

/// A problem plus the N-body setup it came from, if any.
pub struct BuiltProblem {
    pub problem: Problem,
    pub nbody: Option<NBodyConfig>,
}

fn load_records(path: &Path) -> Result<Vec<EphemerisRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("ephemeris {} not found", path.display())));
    }
    read_ephemeris(path).map_err(|e| invalid(e.to_string()))
}

impl ProblemSpec {
    pub fn build(&self) -> Result<BuiltProblem, CliError> {
        let core = |e: spectral_vi_core::Error| invalid(e.to_string());
        let problem = match self {
            ProblemSpec::Harmonic { q0, p0 } => Problem::harmonic(*q0, *p0),
            ProblemSpec::FreeParticle { masses, q0, p0 } => {
                Problem::free_particle(masses.clone(), q0.clone(), p0.clone()).map_err(core)?
            }
            ProblemSpec::Kepler { mu, q0, v0 } => Problem::kepler_with(*mu, *q0, *v0).map_err(core)?,
            ProblemSpec::Nbody { ephemeris, g, bodies, aggregate } => {
                let mut records = load_records(ephemeris)?;
                for a in aggregate {
                    let names: Vec<&str> = a.members.iter().map(String::as_str).collect();
                    records = aggregate_records(&records, &names, &a.name).map_err(core)?;
                }
                if let Some(keep) = bodies {
                    if let Some(missing) = keep.iter().find(|k| !records.iter().any(|r| &r.name == *k)) {
                        return Err(invalid(format!("unknown body `{missing}`")));
                    }
                    records.retain(|r| keep.contains(&r.name));
                }
                let config = nbody_from_ephemeris(&records, *g).map_err(core)?;
                let problem = Problem::nbody(&config).map_err(core)?;
                return Ok(BuiltProblem { problem, nbody: Some(config) });
            }
        };
        Ok(BuiltProblem { problem, nbody: None })
    }
}
