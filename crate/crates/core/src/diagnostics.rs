//! Conserved-quantity series and convergence-rate fits.

use crate::curve::Trajectory;
use crate::error::{Error, Result};
use crate::problems::NBodyConfig;
use crate::system::{continuous_legendre, energy, Lagrangian, NoetherGenerator};
use serde::Serialize;

/// Fraction of steps in each drift window.
pub const DRIFT_WINDOW_FRACTION: f64 = 0.1;
/// Minimum number of steps in each drift window.
pub const DRIFT_WINDOW_MIN: usize = 5;

/// A scalar tracked along a trajectory, with its deviation from the initial
/// value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesReport {
    /// `(t, value)` samples in time order.
    pub values: Vec<(f64, f64)>,
    /// The value the errors are measured against.
    pub reference: f64,
    pub max_abs_error: f64,
    /// Max error in the last window of steps over the max in the first
    /// window. `None` when either window has zero error.
    pub drift_ratio: Option<f64>,
    /// Max error per step.
    pub step_errors: Vec<f64>,
}

impl SeriesReport {
    /// Build from per-step samples (`samples[k]` lies on step `k`).
    pub fn from_step_samples(samples: Vec<Vec<(f64, f64)>>, reference: f64) -> Self {
        let step_errors: Vec<f64> = samples
            .iter()
            .map(|s| s.iter().map(|(_, v)| (v - reference).abs()).fold(0.0, f64::max))
            .collect();
        let max_abs_error = step_errors.iter().copied().fold(0.0, f64::max);
        let drift_ratio = drift_ratio(&step_errors);
        Self {
            values: samples.into_iter().flatten().collect(),
            reference,
            max_abs_error,
            drift_ratio,
            step_errors,
        }
    }

    /// Largest change between consecutive samples.
    pub fn max_successive_difference(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .fold(0.0, f64::max)
    }
}

/// Drift ratio of a per-step error sequence: max over the last 10% of steps
/// divided by max over the first 10% (each window at least five steps, or
/// all steps if there are fewer).
pub fn drift_ratio(step_errors: &[f64]) -> Option<f64> {
    let len = step_errors.len();
    if len == 0 {
        return None;
    }
    let w = ((len as f64 * DRIFT_WINDOW_FRACTION).ceil() as usize)
        .max(DRIFT_WINDOW_MIN)
        .min(len);
    let early = step_errors[..w].iter().copied().fold(0.0, f64::max);
    let late = step_errors[len - w..].iter().copied().fold(0.0, f64::max);
    (early > 0.0 && late > 0.0 && early.is_finite() && late.is_finite()).then(|| late / early)
}

fn curve_samples(
    traj: &Trajectory,
    samples_per_step: usize,
    mut f: impl FnMut(&[f64], &[f64]) -> Result<f64>,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut out = Vec::with_capacity(traj.steps());
    for (k, c) in traj.curves.iter().enumerate() {
        let mut step = Vec::with_capacity(samples_per_step);
        for t in traj.sample_times(k, samples_per_step) {
            step.push((t, f(&c.eval(t), &c.eval_deriv(t))?));
        }
        out.push(step);
    }
    Ok(out)
}

fn initial_velocity(traj: &Trajectory) -> Option<Vec<f64>> {
    traj.curves.first().map(|c| c.eval_deriv(c.t0()))
}

/// Noether quantity `I = p̃ᵀ a(q̃)` along the Galerkin curves, with
/// `p̃ = ∂L/∂q̇(q̃, q̃̇)`, compared with `I(p₀, q₀)` from the initial state.
pub fn noether_series(
    traj: &Trajectory,
    sys: &dyn Lagrangian,
    gen: &NoetherGenerator,
    samples_per_step: usize,
) -> Result<SeriesReport> {
    let init = &traj.states[0];
    let reference = gen.quantity(&init.q, &init.p);
    let samples = curve_samples(traj, samples_per_step, |q, qdot| {
        Ok(gen.quantity(q, &continuous_legendre(sys, q, qdot)?))
    })?;
    Ok(SeriesReport::from_step_samples(samples, reference))
}

/// Discrete Noether quantity `p_kᵀ a(q_k)` at step endpoints. Step `k`
/// carries the value at its end point.
pub fn discrete_noether_series(traj: &Trajectory, gen: &NoetherGenerator) -> SeriesReport {
    let init = &traj.states[0];
    let reference = gen.quantity(&init.q, &init.p);
    let mut values = vec![(init.t, reference)];
    let mut step_errors = Vec::with_capacity(traj.steps());
    for s in &traj.states[1..] {
        let v = gen.quantity(&s.q, &s.p);
        values.push((s.t, v));
        step_errors.push((v - reference).abs());
    }
    SeriesReport {
        values,
        reference,
        max_abs_error: step_errors.iter().copied().fold(0.0, f64::max),
        drift_ratio: drift_ratio(&step_errors),
        step_errors,
    }
}

/// Energy `q̇ᵀ∂L/∂q̇ − L` along the Galerkin curves, relative to the initial
/// energy. For canonical systems the initial energy comes from the initial
/// phase state; otherwise from the start of the first curve.
pub fn energy_series(traj: &Trajectory, sys: &dyn Lagrangian, samples_per_step: usize) -> Result<SeriesReport> {
    let init = &traj.states[0];
    let reference = match sys.as_canonical() {
        Some(c) => energy(sys, &init.q, &c.velocity_from_momentum(&init.p))?,
        None => match initial_velocity(traj) {
            Some(v) => energy(sys, &init.q, &v)?,
            None => return Err(Error::InvalidArgument("trajectory has no steps".into())),
        },
    };
    let samples = curve_samples(traj, samples_per_step, |q, qdot| energy(sys, q, qdot))?;
    Ok(SeriesReport::from_step_samples(samples, reference))
}

/// Energy at the step endpoints, from the discrete states.
pub fn endpoint_energy_series(traj: &Trajectory, sys: &dyn Lagrangian) -> Result<SeriesReport> {
    let c = sys
        .as_canonical()
        .ok_or_else(|| Error::InvalidArgument("endpoint energy needs a canonical system".into()))?;
    let e = |q: &[f64], p: &[f64]| energy(sys, q, &c.velocity_from_momentum(p));
    let init = &traj.states[0];
    let reference = e(&init.q, &init.p)?;
    let samples = traj.states[1..]
        .iter()
        .map(|s| Ok(vec![(s.t, e(&s.q, &s.p)?)]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeriesReport::from_step_samples(samples, reference))
}

/// Least-squares fit of `log(error)` against a refinement parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub xs: Vec<f64>,
    pub errors: Vec<f64>,
    /// `K` for geometric fits, the order for algebraic fits.
    pub fitted: f64,
    pub r_squared: f64,
    /// Number of points used (the pre-floor segment, failed runs skipped).
    pub points_used: usize,
    pub floor: f64,
}

/// Errors below `100·ε·scale` are round-off.
pub fn error_floor(scale: f64) -> f64 {
    100.0 * f64::EPSILON * scale
}

/// Indices of the pre-floor segment: non-finite errors (failed runs) are
/// skipped, and the segment ends at the first error at or below the floor.
fn pre_floor_points(errors: &[f64], floor: f64) -> Vec<usize> {
    errors
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_finite())
        .take_while(|(_, e)| **e > floor)
        .map(|(i, _)| i)
        .collect()
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

fn fit(xs: &[f64], errors: &[f64], floor: f64, transform: impl Fn(f64) -> f64) -> Result<(f64, f64, usize)> {
    if xs.len() != errors.len() {
        return Err(Error::InvalidArgument("parameter and error lists differ in length".into()));
    }
    let used = pre_floor_points(errors, floor);
    if used.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, have: used.len() });
    }
    let x: Vec<f64> = used.iter().map(|i| transform(xs[*i])).collect();
    let y: Vec<f64> = used.iter().map(|i| errors[*i].ln()).collect();
    let (slope, r2) = linear_fit(&x, &y);
    Ok((slope, r2, used.len()))
}

/// Fit `error ≈ C·Kⁿ`, returning `K`. Uses the leading run of points above
/// `100·ε·scale`.
pub fn fit_geometric(ns: &[f64], errors: &[f64], scale: f64) -> Result<RateFit> {
    fit_geometric_with_floor(ns, errors, error_floor(scale))
}

pub fn fit_geometric_with_floor(ns: &[f64], errors: &[f64], floor: f64) -> Result<RateFit> {
    let (slope, r_squared, points_used) = fit(ns, errors, floor, |n| n)?;
    Ok(RateFit {
        xs: ns.to_vec(),
        errors: errors.to_vec(),
        fitted: slope.exp(),
        r_squared,
        points_used,
        floor,
    })
}

/// Fit `error ≈ C·h^p`, returning `p`. Points should be ordered from coarse
/// to fine so the floor cut keeps the coarse end.
pub fn fit_order(hs: &[f64], errors: &[f64], scale: f64) -> Result<RateFit> {
    fit_order_with_floor(hs, errors, error_floor(scale))
}

pub fn fit_order_with_floor(hs: &[f64], errors: &[f64], floor: f64) -> Result<RateFit> {
    if hs.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    let (slope, r_squared, points_used) = fit(hs, errors, floor, f64::ln)?;
    Ok(RateFit {
        xs: hs.to_vec(),
        errors: errors.to_vec(),
        fitted: slope,
        r_squared,
        points_used,
        floor,
    })
}

/// Closure of one body's orbit about the heaviest body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitClosure {
    pub name: String,
    /// Osculating period at the initial state.
    pub period: f64,
    /// Full periods covered after the first step.
    pub complete_orbits: usize,
    /// Relative radial deviation; see [`orbit_closure`].
    pub max_radial_deviation: f64,
}

/// Radial closure of every orbit about the heaviest body, from dense samples
/// of the Galerkin curves after the first step.
///
/// With two or more complete orbits the deviation is the largest change of
/// the per-orbit minimum or maximum distance relative to the first orbit,
/// divided by that orbit's mean of the two. With fewer, it is how far the
/// distance leaves the initial osculating band `[a(1−e), a(1+e)]`, divided
/// by `a`. Unbound bodies are skipped.
pub fn orbit_closure(traj: &Trajectory, config: &NBodyConfig, samples_per_step: usize) -> Vec<OrbitClosure> {
    let d = config.spatial_dim;
    let central = config
        .masses
        .iter()
        .enumerate()
        .fold(0, |best, (i, m)| if *m > config.masses[best] { i } else { best });
    let init = &traj.states[0];
    let start = traj.states.get(1).map_or(init.t, |s| s.t);
    let mut samples: Vec<(f64, Vec<f64>)> = Vec::new();
    for (k, c) in traj.curves.iter().enumerate().skip(1) {
        for (i, t) in traj.sample_times(k, samples_per_step).into_iter().enumerate() {
            if i == 0 && !samples.is_empty() {
                continue;
            }
            samples.push((t, c.eval(t)));
        }
    }
    let rel = |q: &[f64], b: usize| -> Vec<f64> { (0..d).map(|k| q[b * d + k] - q[central * d + k]).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for b in (0..config.masses.len()).filter(|b| *b != central) {
        let r0 = rel(&init.q, b);
        let v0: Vec<f64> = (0..d)
            .map(|k| init.p[b * d + k] / config.masses[b] - init.p[central * d + k] / config.masses[central])
            .collect();
        let mu = config.g * (config.masses[b] + config.masses[central]);
        let (r, v2) = (norm(&r0), v0.iter().map(|x| x * x).sum::<f64>());
        let energy = 0.5 * v2 - mu / r;
        if !(energy < 0.0) {
            continue;
        }
        let a = -mu / (2.0 * energy);
        let rv: f64 = r0.iter().zip(&v0).map(|(x, y)| x * y).sum();
        let ecc_vec: Vec<f64> = r0.iter().zip(&v0).map(|(x, y)| ((v2 - mu / r) * x - rv * y) / mu).collect();
        let e = norm(&ecc_vec);
        let period = 2.0 * std::f64::consts::PI * (a * a * a / mu).sqrt();
        let radii: Vec<(f64, f64)> = samples.iter().map(|(t, q)| (*t, norm(&rel(q, b)))).collect();
        let end = radii.last().map_or(start, |x| x.0);
        let complete = ((end - start) / period).floor().max(0.0) as usize;
        let deviation = if complete >= 2 {
            let mut bands = vec![(f64::INFINITY, f64::NEG_INFINITY); complete];
            for (t, rr) in &radii {
                let w = ((t - start) / period).floor() as usize;
                if w < complete {
                    bands[w].0 = bands[w].0.min(*rr);
                    bands[w].1 = bands[w].1.max(*rr);
                }
            }
            let (lo0, hi0) = bands[0];
            let scale = 0.5 * (lo0 + hi0);
            bands
                .iter()
                .map(|(lo, hi)| (lo - lo0).abs().max((hi - hi0).abs()) / scale)
                .fold(0.0, f64::max)
        } else {
            let (peri, apo) = (a * (1.0 - e), a * (1.0 + e));
            radii
                .iter()
                .map(|(_, rr)| (peri - rr).max(rr - apo).max(0.0) / a)
                .fold(0.0, f64::max)
        };
        out.push(OrbitClosure {
            name: config.names[b].clone(),
            period,
            complete_orbits: complete,
            max_radial_deviation: deviation,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn geometric_exact_data() {
        let f = fit_geometric(&[1.0, 2.0, 3.0], &[1e-1, 1e-2, 1e-3], 1.0).unwrap();
        assert_relative_eq!(f.fitted, 0.1, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn order_exact_data() {
        let f = fit_order(&[0.4, 0.2, 0.1], &[1e-2, 2.5e-3, 6.25e-4], 1.0).unwrap();
        assert_relative_eq!(f.fitted, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn floor_cuts_plateau() {
        let errs = [1e-2, 1e-4, 1e-6, 1e-8, 1e-16, 3e-16];
        let f = fit_geometric(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &errs, 1.0).unwrap();
        assert_eq!(f.points_used, 4);
        assert_relative_eq!(f.fitted, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points() {
        let r = fit_order(&[0.1, 0.05, 0.025], &[1e-16, 1e-16, 1e-16], 1.0);
        assert!(matches!(r, Err(Error::TooFewPoints { needed: 3, have: 0 })));
    }

    #[test]
    fn failed_points_skipped() {
        let f = fit_geometric(&[1.0, 2.0, 3.0, 4.0], &[1e-1, f64::NAN, 1e-3, 1e-4], 1.0).unwrap();
        assert_eq!(f.points_used, 3);
        assert_relative_eq!(f.fitted, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn drift_windows() {
        let mut e = vec![1.0; 100];
        e[95] = 1.5;
        assert_relative_eq!(drift_ratio(&e).unwrap(), 1.5);
        assert_eq!(drift_ratio(&[0.0; 20]), None);
        // short series: windows cover everything
        assert_relative_eq!(drift_ratio(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
    }
}
