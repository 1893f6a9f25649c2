//! One integration and the diagnostics computed from it.

use serde::Serialize;
use spectral_vi_core::diagnostics::{discrete_noether_series, energy_series, noether_series, orbit_closure, OrbitClosure};
use spectral_vi_core::{QuadratureRule, SeriesReport, SpectralIntegrator, Trajectory};

use crate::config::{BuiltProblem, OutputKind, RunConfig, RunPoint};
use crate::CliError;

/// Error of the discrete states and the Galerkin curves against the oracle.
#[derive(Debug, Clone, Default)]
pub struct ReferenceErrors {
    /// Per step `k`: error of `q_{k+1}`.
    pub endpoint: Vec<f64>,
    /// Per step: sup over the curve samples of that step.
    pub curve: Vec<f64>,
}

impl ReferenceErrors {
    pub fn max_endpoint(&self) -> f64 {
        self.endpoint.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_curve(&self) -> f64 {
        self.curve.iter().copied().fold(0.0, f64::max)
    }
}

pub struct RunOutcome {
    pub point: RunPoint,
    pub trajectory: Trajectory,
    /// Set when the run stopped early.
    pub failure: Option<(usize, String)>,
    pub errors: Option<ReferenceErrors>,
    pub energy: Option<SeriesReport>,
    pub noether: Option<SeriesReport>,
    pub discrete_noether: Option<SeriesReport>,
    pub orbits: Option<Vec<OrbitClosure>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesSummary {
    pub reference: f64,
    pub max_abs_error: f64,
    pub drift_ratio: Option<f64>,
}

impl From<&SeriesReport> for SeriesSummary {
    fn from(r: &SeriesReport) -> Self {
        Self {
            reference: r.reference,
            max_abs_error: r.max_abs_error,
            drift_ratio: r.drift_ratio,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub failed_step: Option<usize>,
    pub failure: Option<String>,
    pub err_endpoint: Option<f64>,
    pub err_curve: Option<f64>,
    pub energy: Option<SeriesSummary>,
    pub noether: Option<SeriesSummary>,
    pub discrete_noether: Option<DiscreteNoetherSummary>,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub newton_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orbits: Option<Vec<OrbitClosure>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteNoetherSummary {
    pub reference: f64,
    pub max_abs_error: f64,
    pub max_step_change: f64,
}

fn core_err(e: spectral_vi_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Integrate one point and compute the requested diagnostics. A failing step
/// is not an error here: the outcome records it with the partial trajectory.
pub fn run_point(cfg: &RunConfig, built: &BuiltProblem, point: RunPoint, orbits: bool) -> Result<RunOutcome, CliError> {
    let problem = &built.problem;
    let quad = QuadratureRule::gauss_legendre(point.m).map_err(core_err)?;
    let integ = SpectralIntegrator::with_quadrature(problem.lagrangian(), point.n, point.h, quad).map_err(core_err)?;
    let (trajectory, failure) = match integ.integrate(&problem.initial, point.steps, &cfg.solver) {
        Ok(t) => (t, None),
        Err(f) => {
            let f = *f;
            (f.partial, Some((f.failed_step, f.error.to_string())))
        }
    };
    let samples = cfg.samples_per_step;
    let has_steps = trajectory.steps() > 0;
    let errors = match &problem.reference {
        Some(r) if has_steps && (cfg.wants(OutputKind::EndpointError) || cfg.wants(OutputKind::CurveError)) => {
            let reference = |t: f64| r.position(t).map_err(core_err);
            let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let mut out = ReferenceErrors::default();
            for (k, s) in trajectory.states[1..].iter().enumerate() {
                out.endpoint.push(diff(&s.q, &reference(s.t)?));
                let c = &trajectory.curves[k];
                let mut worst = 0.0f64;
                for t in trajectory.sample_times(k, samples) {
                    worst = worst.max(diff(&c.eval(t), &reference(t)?));
                }
                out.curve.push(worst);
            }
            Some(out)
        }
        _ => None,
    };
    let sys = problem.lagrangian();
    let energy = (has_steps && cfg.wants(OutputKind::Energy))
        .then(|| energy_series(&trajectory, sys.as_ref(), samples))
        .transpose()
        .map_err(core_err)?;
    let noether = match &problem.generator {
        Some(g) if has_steps && cfg.wants(OutputKind::Noether) => {
            Some(noether_series(&trajectory, sys.as_ref(), g, samples).map_err(core_err)?)
        }
        _ => None,
    };
    let discrete_noether = match &problem.generator {
        Some(g) if has_steps && cfg.wants(OutputKind::DiscreteNoether) => Some(discrete_noether_series(&trajectory, g)),
        _ => None,
    };
    let orbits = match &built.nbody {
        Some(nb) if orbits && has_steps => Some(orbit_closure(&trajectory, nb, samples)),
        _ => None,
    };
    Ok(RunOutcome {
        point,
        trajectory,
        failure,
        errors,
        energy,
        noether,
        discrete_noether,
        orbits,
    })
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn summary(&self) -> RunSummary {
        let stats = &self.trajectory.stats;
        RunSummary {
            n: self.point.n,
            m: self.point.m,
            h: self.point.h,
            steps_requested: self.point.steps,
            steps_completed: self.trajectory.steps(),
            failed_step: self.failure.as_ref().map(|f| f.0),
            failure: self.failure.as_ref().map(|f| f.1.clone()),
            err_endpoint: self.errors.as_ref().map(ReferenceErrors::max_endpoint),
            err_curve: self.errors.as_ref().map(ReferenceErrors::max_curve),
            energy: self.energy.as_ref().map(SeriesSummary::from),
            noether: self.noether.as_ref().map(SeriesSummary::from),
            discrete_noether: self.discrete_noether.as_ref().map(|r| DiscreteNoetherSummary {
                reference: r.reference,
                max_abs_error: r.max_abs_error,
                max_step_change: r.max_successive_difference(),
            }),
            max_iterations: stats.iter().map(|s| s.iterations).max().unwrap_or(0),
            max_residual: stats.iter().map(|s| s.residual).fold(0.0, f64::max),
            newton_steps: stats.iter().filter(|s| s.used_newton).count(),
            orbits: self.orbits.clone(),
        }
    }

    /// Sweep metric: the value only when the run completed.
    fn complete(&self, v: Option<f64>) -> f64 {
        if self.failed() {
            f64::NAN
        } else {
            v.unwrap_or(f64::NAN)
        }
    }

    pub fn err_endpoint(&self) -> f64 {
        self.complete(self.errors.as_ref().map(ReferenceErrors::max_endpoint))
    }

    pub fn err_curve(&self) -> f64 {
        self.complete(self.errors.as_ref().map(ReferenceErrors::max_curve))
    }

    pub fn err_energy(&self) -> f64 {
        self.complete(self.energy.as_ref().map(|r| r.max_abs_error))
    }

    pub fn err_noether(&self) -> f64 {
        self.complete(self.noether.as_ref().map(|r| r.max_abs_error))
    }
}
