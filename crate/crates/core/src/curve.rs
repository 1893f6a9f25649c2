//! Galerkin curves (dense output) and whole trajectories, with the error norms
//! used to measure convergence.

use crate::basis::ChebyshevNodes;
use crate::quadrature::QuadratureRule;
use crate::stepper::{GalerkinCoefficients, PhaseState};
use std::f64::consts::PI;
use std::sync::Arc;

/// Default dense-sampling density for sup-norm estimates.
pub const DEFAULT_SAMPLES_PER_STEP: usize = 64;

/// The stage polynomial `q̃(t) = Σ q^i φ_i(t − t0)` of one step.
#[derive(Debug, Clone)]
pub struct GalerkinCurve {
    nodes: Arc<ChebyshevNodes>,
    coeffs: GalerkinCoefficients,
    t0: f64,
}

impl GalerkinCurve {
    pub fn new(nodes: Arc<ChebyshevNodes>, coeffs: GalerkinCoefficients, t0: f64) -> Self {
        assert_eq!(nodes.len(), coeffs.n(), "node count must match stage count");
        Self { nodes, coeffs, t0 }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn h(&self) -> f64 {
        self.nodes.h()
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.nodes.h()
    }

    pub fn coeffs(&self) -> &GalerkinCoefficients {
        &self.coeffs
    }

    pub fn nodes(&self) -> &Arc<ChebyshevNodes> {
        &self.nodes
    }

    /// True when `t` lies outside `[t0, t0 + h]`.
    pub fn is_extrapolating(&self, t: f64) -> bool {
        t < self.t0 || t > self.t1()
    }

    /// Local time `t - t0`, snapped onto the endpoints so they hit the
    /// interpolation nodes exactly.
    fn local(&self, t: f64) -> f64 {
        if t == self.t0 {
            0.0
        } else if t == self.t1() {
            self.h()
        } else {
            t - self.t0
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.nodes.interpolate(self.coeffs.rows(), self.local(t))
    }

    pub fn eval_deriv(&self, t: f64) -> Vec<f64> {
        self.nodes.interpolate_deriv(self.coeffs.rows(), self.local(t))
    }
}

/// Solver statistics recorded for each accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    pub used_newton: bool,
}

/// Step endpoints plus the Galerkin curve of every step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<PhaseState>,
    pub curves: Vec<GalerkinCurve>,
    pub h: f64,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn new(h: f64, init: PhaseState) -> Self {
        Self {
            states: vec![init],
            curves: Vec::new(),
            h,
            stats: Vec::new(),
        }
    }

    pub fn push(&mut self, curve: GalerkinCurve, next: PhaseState, stats: StepStats) {
        self.curves.push(curve);
        self.states.push(next);
        self.stats.push(stats);
    }

    pub fn steps(&self) -> usize {
        self.curves.len()
    }

    pub fn end_time(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    /// Chebyshev-distributed sample times on step `k`, endpoints included.
    pub fn sample_times(&self, k: usize, samples: usize) -> Vec<f64> {
        let c = &self.curves[k];
        chebyshev_samples(samples)
            .into_iter()
            .map(|s| if s == 1.0 { c.t1() } else { c.t0() + s * c.h() })
            .collect()
    }

    /// Evaluate the curve covering `t` (the later step at shared endpoints).
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        self.curve_index(t).map(|k| self.curves[k].eval(t))
    }

    pub fn eval_deriv(&self, t: f64) -> Option<Vec<f64>> {
        self.curve_index(t).map(|k| self.curves[k].eval_deriv(t))
    }

    fn curve_index(&self, t: f64) -> Option<usize> {
        let first = self.curves.first()?;
        let last = self.curves.last()?;
        if t < first.t0() || t > last.t1() {
            return None;
        }
        let k = ((t - first.t0()) / self.h).floor() as usize;
        Some(k.min(self.curves.len() - 1))
    }
}

/// Points `(1 − cos(πj/(s−1)))/2` on `[0, 1]`.
pub(crate) fn chebyshev_samples(samples: usize) -> Vec<f64> {
    let s = samples.max(2);
    (0..s)
        .map(|j| {
            if j == 0 {
                0.0
            } else if j == s - 1 {
                1.0
            } else {
                let x = (PI * j as f64 / (2.0 * (s - 1) as f64)).sin();
                x * x
            }
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Sup-norm errors of a trajectory against a reference solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupError {
    /// max over sampled times of `‖q̃(t) − q(t)‖∞`
    pub curve: f64,
    /// max over step endpoints of `‖q_k − q(t_k)‖∞`
    pub endpoint: f64,
}

pub fn sup_error(traj: &Trajectory, reference: impl Fn(f64) -> Vec<f64>, samples_per_step: usize) -> SupError {
    assert!(samples_per_step >= 2, "need at least two samples per step");
    let endpoint = traj
        .states
        .iter()
        .map(|s| max_abs_diff(&s.q, &reference(s.t)))
        .fold(0.0, f64::max);
    let mut curve = 0.0f64;
    for (k, c) in traj.curves.iter().enumerate() {
        for t in traj.sample_times(k, samples_per_step) {
            curve = curve.max(max_abs_diff(&c.eval(t), &reference(t)));
        }
    }
    SupError { curve, endpoint }
}

/// `W^{1,1}` distance `∫|q̃ − q| + ∫|q̃̇ − q̇|` over one step, by quadrature.
///
/// Vector magnitudes use the ∞-norm.
pub fn sobolev_error(
    curve: &GalerkinCurve,
    reference_q: impl Fn(f64) -> Vec<f64>,
    reference_qdot: impl Fn(f64) -> Vec<f64>,
    quad: &QuadratureRule,
) -> f64 {
    let t0 = curve.t0();
    quad.integrate_fn(curve.h(), |s| {
        let t = t0 + s;
        max_abs_diff(&curve.eval(t), &reference_q(t)) + max_abs_diff(&curve.eval_deriv(t), &reference_qdot(t))
    })
}
