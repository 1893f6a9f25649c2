//! Runs, refinement sweeps and stability studies driven by JSON configs.

pub mod config;
pub mod output;
pub mod run;

use rayon::prelude::*;
use serde::Serialize;
use spectral_vi_core::diagnostics::{fit_geometric, fit_order, RateFit};
use std::path::{Path, PathBuf};

use config::{BuiltProblem, RunConfig, RunPoint};
use output::{Bundle, Cell};
use run::{run_point, RunOutcome, RunSummary};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STEP: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// Scale of the error floor `100 ε · scale` used when fitting sweep rates.
pub const FIT_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Unreadable or invalid config (including ephemeris contents).
    Config(String),
    /// A step failed; partial output has been written.
    Step(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Step(_) => EXIT_STEP,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Step(m) => write!(f, "step failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Integrate,
    SweepN,
    SweepH,
    Stability,
}

/// Where a command writes: `--out` wins over the config's `output_path`.
pub fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: Command,
    config: &'a RunConfig,
    status: &'static str,
    run: RunSummary,
}

/// Column names for positions and momenta.
fn coord_names(built: &BuiltProblem) -> (Vec<String>, Vec<String>) {
    let p = &built.problem;
    if p.body_names.is_empty() {
        let d = p.initial.q.len();
        return ((0..d).map(|i| format!("q{i}")).collect(), (0..d).map(|i| format!("p{i}")).collect());
    }
    let axes = &["x", "y", "z"][..p.spatial_dim];
    let names = |prefix: &'static str| {
        p.body_names
            .iter()
            .flat_map(|b| axes.iter().map(move |a| format!("{b}_{prefix}{a}")))
            .collect()
    };
    (names(""), names("p"))
}

fn write_run(bundle: &Bundle, cfg: &RunConfig, built: &BuiltProblem, outcome: &RunOutcome, orbits: bool) -> Result<(), CliError> {
    let traj = &outcome.trajectory;
    let (qs, ps) = coord_names(built);
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend(qs);
    header.extend(ps);
    let mut w = bundle.csv("trajectory.csv", &header)?;
    for (k, s) in traj.states.iter().enumerate() {
        let mut row = vec![Cell::U(k), Cell::F(s.t)];
        row.extend(s.q.iter().chain(&s.p).map(|v| Cell::F(*v)));
        w.record(&row)?;
    }
    w.finish()?;

    if let Some(e) = &outcome.errors {
        let mut w = bundle.csv("errors.csv", &["step", "t", "err_endpoint", "err_curve"].map(String::from))?;
        for (k, s) in traj.states[1..].iter().enumerate() {
            w.record(&[Cell::U(k + 1), Cell::F(s.t), Cell::F(e.endpoint[k]), Cell::F(e.curve[k])])?;
        }
        w.finish()?;
    }
    for (name, series) in [("energy.csv", &outcome.energy), ("noether.csv", &outcome.noether)] {
        if let Some(r) = series {
            let mut w = bundle.csv(name, &["t", "value", "error"].map(String::from))?;
            for (t, v) in &r.values {
                w.record(&[Cell::F(*t), Cell::F(*v), Cell::F(v - r.reference)])?;
            }
            w.finish()?;
        }
    }
    if let Some(r) = &outcome.discrete_noether {
        let mut w = bundle.csv("discrete_noether.csv", &["step", "t", "value", "change"].map(String::from))?;
        for (k, (t, v)) in r.values.iter().enumerate() {
            let change = if k == 0 { 0.0 } else { v - r.values[k - 1].1 };
            w.record(&[Cell::U(k), Cell::F(*t), Cell::F(*v), Cell::F(change)])?;
        }
        w.finish()?;
    }
    if orbits {
        if let Some(nb) = &built.nbody {
            let d = nb.spatial_dim;
            let mut header = vec!["t".to_string(), "body".to_string()];
            header.extend(["x", "y", "z"][..d].iter().map(|s| s.to_string()));
            let mut w = bundle.csv("orbits.csv", &header)?;
            let samples = cfg.samples_per_step;
            for (k, c) in traj.curves.iter().enumerate() {
                for (i, t) in traj.sample_times(k, samples).into_iter().enumerate() {
                    if k > 0 && i == 0 {
                        continue;
                    }
                    let q = c.eval(t);
                    for (b, name) in nb.names.iter().enumerate() {
                        let mut row = vec![Cell::F(t), Cell::S(name)];
                        row.extend(q[b * d..(b + 1) * d].iter().map(|v| Cell::F(*v)));
                        w.record(&row)?;
                    }
                }
            }
            w.finish()?;
        }
    }
    Ok(())
}

fn single_run(command: Command, mut cfg: RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let orbits = command == Command::Stability;
    if orbits {
        for kind in [config::OutputKind::Energy, config::OutputKind::Noether] {
            if !cfg.wants(kind) {
                cfg.outputs.push(kind);
            }
        }
    }
    let point = cfg.resolve_single()?;
    let built = cfg.problem.build()?;
    let dir = output_dir(&cfg, out);
    let bundle = Bundle::create(&dir)?;
    let outcome = run_point(&cfg, &built, point, orbits)?;
    write_run(&bundle, &cfg, &built, &outcome, orbits)?;
    let report = RunReport {
        command,
        config: &cfg,
        status: if outcome.failed() { "failed" } else { "ok" },
        run: outcome.summary(),
    };
    bundle.json("summary.json", &report)?;
    match &outcome.failure {
        Some((k, msg)) => Err(CliError::Step(format!("step {k}: {msg}"))),
        None => Ok(()),
    }
}

pub fn cmd_integrate(cfg: RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    single_run(Command::Integrate, cfg, out)
}

pub fn cmd_stability(cfg: RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    single_run(Command::Stability, cfg, out)
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitReport {
    Fit {
        fitted: f64,
        r_squared: f64,
        points_used: usize,
        floor: f64,
    },
    Skipped {
        skipped: String,
    },
}

impl From<spectral_vi_core::Result<RateFit>> for FitReport {
    fn from(r: spectral_vi_core::Result<RateFit>) -> Self {
        match r {
            Ok(f) => FitReport::Fit {
                fitted: f.fitted,
                r_squared: f.r_squared,
                points_used: f.points_used,
                floor: f.floor,
            },
            Err(e) => FitReport::Skipped { skipped: e.to_string() },
        }
    }
}

#[derive(Serialize)]
struct Fits {
    /// `geometric-base` for n-sweeps, `order` for h-sweeps.
    kind: &'static str,
    endpoint: FitReport,
    curve: FitReport,
    energy: FitReport,
    noether: FitReport,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    command: Command,
    config: &'a RunConfig,
    status: &'static str,
    fits: Fits,
    points: Vec<RunSummary>,
}

fn run_sweep(
    command: Command,
    cfg: &RunConfig,
    points: Vec<RunPoint>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let built = cfg.problem.build()?;
    let dir = output_dir(cfg, out);
    let bundle = Bundle::create(&dir)?;
    let mut outcomes = points
        .into_par_iter()
        .map(|p| run_point(cfg, &built, p, false))
        .collect::<Result<Vec<_>, _>>()?;
    let by_n = command == Command::SweepN;
    if by_n {
        outcomes.sort_by_key(|o| o.point.n);
    } else {
        outcomes.sort_by(|a, b| b.point.h.total_cmp(&a.point.h));
    }
    let mut header: Vec<String> = if by_n { vec!["n".into()] } else { vec!["h".into(), "steps".into()] };
    header.extend(["err_endpoint", "err_curve", "err_energy", "err_noether"].map(String::from));
    let mut w = bundle.csv("sweep.csv", &header)?;
    for o in &outcomes {
        let mut row = if by_n {
            vec![Cell::U(o.point.n)]
        } else {
            vec![Cell::F(o.point.h), Cell::U(o.point.steps)]
        };
        row.extend([o.err_endpoint(), o.err_curve(), o.err_energy(), o.err_noether()].map(Cell::F));
        w.record(&row)?;
    }
    w.finish()?;

    let xs: Vec<f64> = outcomes
        .iter()
        .map(|o| if by_n { o.point.n as f64 } else { o.point.h })
        .collect();
    let fit = |errs: Vec<f64>| -> FitReport {
        if by_n {
            fit_geometric(&xs, &errs, FIT_SCALE).into()
        } else {
            fit_order(&xs, &errs, FIT_SCALE).into()
        }
    };
    let fits = Fits {
        kind: if by_n { "geometric-base" } else { "order" },
        endpoint: fit(outcomes.iter().map(RunOutcome::err_endpoint).collect()),
        curve: fit(outcomes.iter().map(RunOutcome::err_curve).collect()),
        energy: fit(outcomes.iter().map(RunOutcome::err_energy).collect()),
        noether: fit(outcomes.iter().map(RunOutcome::err_noether).collect()),
    };
    let failed: Vec<String> = outcomes
        .iter()
        .filter_map(|o| {
            o.failure.as_ref().map(|(k, m)| {
                if by_n {
                    format!("n = {} step {k}: {m}", o.point.n)
                } else {
                    format!("h = {} step {k}: {m}", o.point.h)
                }
            })
        })
        .collect();
    let report = SweepReport {
        command,
        config: cfg,
        status: if failed.is_empty() { "ok" } else { "partial" },
        fits,
        points: outcomes.iter().map(RunOutcome::summary).collect(),
    };
    bundle.json("summary.json", &report)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Step(failed.join("; ")))
    }
}

pub fn cmd_sweep_n(mut cfg: RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let points = cfg.resolve_sweep_n()?;
    run_sweep(Command::SweepN, &cfg, points, out)
}

pub fn cmd_sweep_h(mut cfg: RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let points = cfg.resolve_sweep_h()?;
    run_sweep(Command::SweepH, &cfg, points, out)
}
