//! Benchmark systems and their reference solutions.

use crate::error::{Error, Result};
use crate::stepper::PhaseState;
use crate::system::{CanonicalLagrangian, Lagrangian, NoetherGenerator, Potential};
use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

/// Pair distances below this are treated as collisions.
pub const COLLISION_DISTANCE: f64 = 1e-12;

/// `V ≡ 0`
#[derive(Debug, Clone)]
pub struct FreePotential {
    dim: usize,
}

impl FreePotential {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Potential for FreePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _q: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; q.len()])
    }

    fn hessian(&self, q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(q.len(), q.len())))
    }
}

/// `V = ½ |q|²`
#[derive(Debug, Clone)]
pub struct HarmonicPotential {
    dim: usize,
}

impl HarmonicPotential {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Potential for HarmonicPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(0.5 * q.iter().map(|x| x * x).sum::<f64>())
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(q.to_vec())
    }

    fn hessian(&self, q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::identity(q.len(), q.len())))
    }
}

/// Uniform force field, `V = −g·q`.
#[derive(Debug, Clone)]
pub struct UniformFieldPotential {
    g: Vec<f64>,
}

impl UniformFieldPotential {
    pub fn new(g: Vec<f64>) -> Self {
        Self { g }
    }
}

impl Potential for UniformFieldPotential {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(-self.g.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
    }

    fn gradient(&self, _q: &[f64]) -> Result<Vec<f64>> {
        Ok(self.g.iter().map(|g| -g).collect())
    }

    fn hessian(&self, q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(q.len(), q.len())))
    }
}

/// Reduced two-body potential `V = −μ/|q|` in the plane.
#[derive(Debug, Clone)]
pub struct KeplerPotential {
    mu: f64,
}

impl KeplerPotential {
    pub fn new(mu: f64) -> Self {
        Self { mu }
    }

    fn radius(q: &[f64]) -> Result<f64> {
        let r = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(r >= COLLISION_DISTANCE) {
            return Err(Error::PotentialDomain(format!("Kepler radius {r:e} at collision")));
        }
        Ok(r)
    }
}

impl Potential for KeplerPotential {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(-self.mu / Self::radius(q)?)
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let r = Self::radius(q)?;
        let s = self.mu / (r * r * r);
        Ok(q.iter().map(|x| s * x).collect())
    }

    fn hessian(&self, q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Self::radius(q).map(|r| {
            let r3 = r * r * r;
            let r5 = r3 * r * r;
            let d = q.len();
            DMatrix::from_fn(d, d, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                self.mu * (delta / r3 - 3.0 * q[i] * q[j] / r5)
            })
        }))
    }
}

/// Gravitational N-body potential `V = −G Σ_{i<j} m_i m_j / |q_i − q_j|`.
///
/// Coordinates are laid out body-major: body `b` occupies
/// `q[b·D .. (b+1)·D]`.
#[derive(Debug, Clone)]
pub struct NBodyPotential {
    masses: Vec<f64>,
    g: f64,
    spatial_dim: usize,
}

impl NBodyPotential {
    pub fn new(masses: Vec<f64>, g: f64, spatial_dim: usize) -> Self {
        Self { masses, g, spatial_dim }
    }

    fn separation(&self, q: &[f64], i: usize, j: usize) -> Result<(Vec<f64>, f64)> {
        let d = self.spatial_dim;
        let diff: Vec<f64> = (0..d).map(|k| q[i * d + k] - q[j * d + k]).collect();
        let r = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(r >= COLLISION_DISTANCE) {
            return Err(Error::PotentialDomain(format!(
                "bodies {i} and {j} at distance {r:e}"
            )));
        }
        Ok((diff, r))
    }
}

impl Potential for NBodyPotential {
    fn dim(&self) -> usize {
        self.masses.len() * self.spatial_dim
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let n = self.masses.len();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..i {
                let (_, r) = self.separation(q, i, j)?;
                v -= self.g * self.masses[i] * self.masses[j] / r;
            }
        }
        Ok(v)
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = self.masses.len();
        let d = self.spatial_dim;
        let mut g = vec![0.0; q.len()];
        for i in 0..n {
            for j in 0..i {
                let (diff, r) = self.separation(q, i, j)?;
                let s = self.g * self.masses[i] * self.masses[j] / (r * r * r);
                for k in 0..d {
                    g[i * d + k] += s * diff[k];
                    g[j * d + k] -= s * diff[k];
                }
            }
        }
        Ok(g)
    }

    fn hessian(&self, q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let n = self.masses.len();
        let d = self.spatial_dim;
        let mut h = DMatrix::zeros(q.len(), q.len());
        for i in 0..n {
            for j in 0..i {
                let (diff, r) = match self.separation(q, i, j) {
                    Ok(v) => v,
                    Err(e) => return Some(Err(e)),
                };
                let gm = self.g * self.masses[i] * self.masses[j];
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                for a in 0..d {
                    for b in 0..d {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let k = gm * (delta / r3 - 3.0 * diff[a] * diff[b] / r5);
                        h[(i * d + a, i * d + b)] += k;
                        h[(j * d + a, j * d + b)] += k;
                        h[(i * d + a, j * d + b)] -= k;
                        h[(j * d + a, i * d + b)] -= k;
                    }
                }
            }
        }
        Some(Ok(h))
    }
}

/// An exact or high-accuracy solution `t ↦ (q(t), q̇(t))`.
pub trait Reference: Send + Sync {
    fn state(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)>;

    fn position(&self, t: f64) -> Result<Vec<f64>> {
        self.state(t).map(|s| s.0)
    }
}

/// Harmonic oscillator `q(t) = q₀ cos t + p₀ sin t` (unit mass and stiffness).
#[derive(Debug, Clone, Copy)]
pub struct HarmonicReference {
    pub q0: f64,
    pub p0: f64,
}

impl Reference for HarmonicReference {
    fn state(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, c) = t.sin_cos();
        Ok((vec![self.q0 * c + self.p0 * s], vec![-self.q0 * s + self.p0 * c]))
    }
}

/// Straight-line motion `q(t) = q₀ + t v`.
#[derive(Debug, Clone)]
pub struct LinearReference {
    pub q0: Vec<f64>,
    pub v: Vec<f64>,
}

impl Reference for LinearReference {
    fn state(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.q0.iter().zip(&self.v).map(|(q, v)| q + t * v).collect(),
            self.v.clone(),
        ))
    }
}

/// A bound planar Kepler orbit about the origin, propagated by solving
/// Kepler's equation.
#[derive(Debug, Clone, Copy)]
pub struct KeplerOrbit {
    pub mu: f64,
    pub semi_major_axis: f64,
    pub eccentricity: f64,
    /// argument of periapsis
    pub periapsis_angle: f64,
    pub mean_motion: f64,
    pub mean_anomaly_at_epoch: f64,
    /// +1 prograde (counter-clockwise), −1 retrograde
    orientation: f64,
}

const KEPLER_TOL: f64 = 1e-14;
const KEPLER_MAX_ITER: usize = 100;

impl KeplerOrbit {
    pub fn from_state(mu: f64, q: [f64; 2], v: [f64; 2]) -> Result<Self> {
        let r = Vector2::from(q);
        let vel = Vector2::from(v);
        let rn = r.norm();
        let energy = 0.5 * vel.norm_squared() - mu / rn;
        if !(energy < 0.0) {
            return Err(Error::Oracle(format!("orbit is not bound (energy {energy})")));
        }
        let a = -mu / (2.0 * energy);
        let ang = r.x * vel.y - r.y * vel.x;
        let orientation = if ang >= 0.0 { 1.0 } else { -1.0 };
        let evec = (r * (vel.norm_squared() - mu / rn) - vel * r.dot(&vel)) / mu;
        let e = evec.norm();
        let omega = if e > 1e-14 { evec.y.atan2(evec.x) } else { 0.0 };
        let nu = orientation * (r.y.atan2(r.x) - omega);
        let ecc_anom = 2.0 * ((1.0 - e).sqrt() * (nu / 2.0).sin()).atan2((1.0 + e).sqrt() * (nu / 2.0).cos());
        let m0 = ecc_anom - e * ecc_anom.sin();
        Ok(Self {
            mu,
            semi_major_axis: a,
            eccentricity: e,
            periapsis_angle: omega,
            mean_motion: (mu / (a * a * a)).sqrt(),
            mean_anomaly_at_epoch: m0,
            orientation,
        })
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.mean_motion
    }

    /// Solve `M = E − e sin E` for the eccentric anomaly by Newton iteration.
    pub fn eccentric_anomaly(&self, mean_anomaly: f64) -> Result<f64> {
        solve_kepler(mean_anomaly, self.eccentricity)
    }
}

/// Newton solve of Kepler's equation, tolerance 1e-14.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&e) {
        return Err(Error::Oracle(format!("eccentricity {e} is not elliptic")));
    }
    let m = mean_anomaly.rem_euclid(2.0 * PI);
    let mut ea = if e > 0.8 { PI } else { m + e * m.sin() };
    for _ in 0..KEPLER_MAX_ITER {
        let f = ea - e * ea.sin() - m;
        let d = f / (1.0 - e * ea.cos());
        ea -= d;
        if d.abs() <= KEPLER_TOL {
            let turns = (mean_anomaly - m) / (2.0 * PI);
            return Ok(ea + turns.round() * 2.0 * PI);
        }
    }
    Err(Error::Oracle(format!("Kepler equation did not converge for M={mean_anomaly}, e={e}")))
}

impl Reference for KeplerOrbit {
    fn state(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.eccentricity;
        let a = self.semi_major_axis;
        let b = a * (1.0 - e * e).sqrt();
        let ea = self.eccentric_anomaly(self.mean_anomaly_at_epoch + self.mean_motion * t)?;
        let (s, c) = ea.sin_cos();
        let rate = self.mean_motion / (1.0 - e * c);
        let x = a * (c - e);
        let y = self.orientation * b * s;
        let vx = -a * s * rate;
        let vy = self.orientation * b * c * rate;
        let rot = Matrix2::new(
            self.periapsis_angle.cos(),
            -self.periapsis_angle.sin(),
            self.periapsis_angle.sin(),
            self.periapsis_angle.cos(),
        );
        let p = rot * Vector2::new(x, y);
        let v = rot * Vector2::new(vx, vy);
        Ok((vec![p.x, p.y], vec![v.x, v.y]))
    }
}

/// A benchmark problem: system, initial state, and optional oracle.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub system: Arc<CanonicalLagrangian>,
    pub initial: PhaseState,
    pub reference: Option<Arc<dyn Reference>>,
    pub generator: Option<NoetherGenerator>,
    pub bodies: usize,
    pub spatial_dim: usize,
    /// Body names for N-body problems.
    pub body_names: Vec<String>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("initial", &self.initial)
            .field("has_reference", &self.reference.is_some())
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn lagrangian(&self) -> Arc<dyn Lagrangian> {
        self.system.clone()
    }

    /// Harmonic oscillator `L = ½q̇² − ½q²`.
    pub fn harmonic(q0: f64, p0: f64) -> Self {
        let system = CanonicalLagrangian::new(DMatrix::identity(1, 1), Arc::new(HarmonicPotential::new(1)))
            .expect("unit mass is valid");
        Self {
            name: "harmonic".into(),
            system: Arc::new(system),
            initial: PhaseState::new(vec![q0], vec![p0], 0.0),
            reference: Some(Arc::new(HarmonicReference { q0, p0 })),
            generator: None,
            bodies: 1,
            spatial_dim: 1,
            body_names: Vec::new(),
        }
    }

    /// Free particle with diagonal mass `masses` (one per coordinate).
    pub fn free_particle(masses: Vec<f64>, q0: Vec<f64>, p0: Vec<f64>) -> Result<Self> {
        let d = masses.len();
        if q0.len() != d || p0.len() != d {
            return Err(Error::InvalidArgument("free particle state/mass dimension mismatch".into()));
        }
        let system = CanonicalLagrangian::with_diagonal_mass(&masses, Arc::new(FreePotential::new(d)))?;
        let v = system.velocity_from_momentum(&p0);
        Ok(Self {
            name: "free-particle".into(),
            system: Arc::new(system),
            initial: PhaseState::new(q0.clone(), p0, 0.0),
            reference: Some(Arc::new(LinearReference { q0, v })),
            generator: Some(NoetherGenerator::translation(1, d, 0)),
            bodies: 1,
            spatial_dim: d,
            body_names: Vec::new(),
        })
    }

    /// Reduced planar Kepler problem with `μ = 1`, `q = (0.4, 0)`, `q̇ = (0, 2)`:
    /// eccentricity 0.6, semi-major axis 1, period 2π.
    pub fn kepler() -> Self {
        Self::kepler_with(1.0, [0.4, 0.0], [0.0, 2.0]).expect("default orbit is bound")
    }

    pub fn kepler_with(mu: f64, q0: [f64; 2], v0: [f64; 2]) -> Result<Self> {
        let system = CanonicalLagrangian::new(DMatrix::identity(2, 2), Arc::new(KeplerPotential::new(mu)))?;
        let orbit = KeplerOrbit::from_state(mu, q0, v0)?;
        Ok(Self {
            name: "kepler".into(),
            system: Arc::new(system),
            initial: PhaseState::new(q0.to_vec(), v0.to_vec(), 0.0),
            reference: Some(Arc::new(orbit)),
            generator: Some(NoetherGenerator::planar_rotation()),
            bodies: 1,
            spatial_dim: 2,
            body_names: Vec::new(),
        })
    }

    pub fn nbody(config: &NBodyConfig) -> Result<Self> {
        config.validate()?;
        let d = config.spatial_dim;
        let n = config.masses.len();
        let system = config.lagrangian()?;
        let (i, j) = (0, 1.min(d - 1));
        Ok(Self {
            name: "nbody".into(),
            system: Arc::new(system),
            initial: config.initial_state(),
            reference: None,
            generator: (d >= 2).then(|| NoetherGenerator::rotation(n, d, i, j)),
            bodies: n,
            spatial_dim: d,
            body_names: config.names.clone(),
        })
    }
}

/// One body from an ephemeris file: mass, position (AU), velocity (AU/day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EphemerisRecord {
    pub name: String,
    pub mass: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl EphemerisRecord {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.vx, self.vy, self.vz]
    }
}

const EPHEMERIS_HEADER: [&str; 8] = ["name", "mass", "x", "y", "z", "vx", "vy", "vz"];

/// Gaussian gravitational constant squared: G in AU³ / (solar mass · day²).
pub const GAUSSIAN_G: f64 = 0.01720209895 * 0.01720209895;

/// Parse an ephemeris CSV with header `name,mass,x,y,z,vx,vy,vz`.
///
/// Unknown or missing columns, non-finite values and non-positive masses are
/// rejected. `#` starts a comment line.
pub fn parse_ephemeris(reader: impl Read) -> Result<Vec<EphemerisRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("cannot read header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != EPHEMERIS_HEADER {
        return Err(Error::Ingestion(format!(
            "expected columns {}, found {}",
            EPHEMERIS_HEADER.join(","),
            cols.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<EphemerisRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("record {}: {e}", line + 1)))?;
        let values = [rec.mass, rec.x, rec.y, rec.z, rec.vx, rec.vy, rec.vz];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ingestion(format!("{}: non-finite value", rec.name)));
        }
        if !(rec.mass > 0.0) {
            return Err(Error::Ingestion(format!("{}: mass must be positive", rec.name)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_ephemeris(path: impl AsRef<Path>) -> Result<Vec<EphemerisRecord>> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.as_ref().display())))?;
    parse_ephemeris(f)
}

/// Replace the named records with one body at their barycenter carrying the
/// total mass and total momentum. The aggregate takes the position of the
/// first aggregated record in the list.
pub fn aggregate_records(
    records: &[EphemerisRecord],
    names: &[&str],
    new_name: &str,
) -> Result<Vec<EphemerisRecord>> {
    let picked: Vec<&EphemerisRecord> = records.iter().filter(|r| names.contains(&r.name.as_str())).collect();
    if picked.len() != names.len() {
        let known: HashSet<&str> = records.iter().map(|r| r.name.as_str()).collect();
        let missing: Vec<&&str> = names.iter().filter(|n| !known.contains(**n)).collect();
        return Err(Error::Ingestion(format!("cannot aggregate unknown bodies {missing:?}")));
    }
    let total: f64 = picked.iter().map(|r| r.mass).sum();
    let avg = |f: fn(&EphemerisRecord) -> f64| picked.iter().map(|r| r.mass * f(r)).sum::<f64>() / total;
    let merged = EphemerisRecord {
        name: new_name.to_string(),
        mass: total,
        x: avg(|r| r.x),
        y: avg(|r| r.y),
        z: avg(|r| r.z),
        vx: avg(|r| r.vx),
        vy: avg(|r| r.vy),
        vz: avg(|r| r.vz),
    };
    let mut out = Vec::with_capacity(records.len() - picked.len() + 1);
    let mut inserted = false;
    for r in records {
        if names.contains(&r.name.as_str()) {
            if !inserted {
                out.push(merged.clone());
                inserted = true;
            }
        } else {
            out.push(r.clone());
        }
    }
    Ok(out)
}

/// Gravitational N-body setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBodyConfig {
    pub names: Vec<String>,
    pub masses: Vec<f64>,
    pub g: f64,
    pub spatial_dim: usize,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl NBodyConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n < 2 {
            return Err(Error::InvalidArgument("N-body needs at least two bodies".into()));
        }
        if !(2..=3).contains(&self.spatial_dim) {
            return Err(Error::InvalidArgument("spatial dimension must be 2 or 3".into()));
        }
        if self.names.len() != n || self.positions.len() != n || self.velocities.len() != n {
            return Err(Error::InvalidArgument("N-body arrays disagree in length".into()));
        }
        if self
            .positions
            .iter()
            .chain(&self.velocities)
            .any(|v| v.len() != self.spatial_dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidArgument("bad position/velocity vector".into()));
        }
        if self.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidArgument("masses must be positive".into()));
        }
        for i in 0..n {
            for j in 0..i {
                let r: f64 = self.positions[i]
                    .iter()
                    .zip(&self.positions[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if r < COLLISION_DISTANCE {
                    return Err(Error::InvalidArgument(format!(
                        "bodies {} and {} start coincident",
                        self.names[i], self.names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Block-diagonal mass matrix with pairwise gravitational potential.
    pub fn lagrangian(&self) -> Result<CanonicalLagrangian> {
        let d = self.spatial_dim;
        let diag: Vec<f64> = self.masses.iter().flat_map(|m| std::iter::repeat(*m).take(d)).collect();
        CanonicalLagrangian::with_diagonal_mass(
            &diag,
            Arc::new(NBodyPotential::new(self.masses.clone(), self.g, d)),
        )
    }

    /// Flattened positions and momenta `p_i = m_i v_i`.
    pub fn initial_state(&self) -> PhaseState {
        let q = self.positions.iter().flatten().copied().collect();
        let p = self
            .velocities
            .iter()
            .zip(&self.masses)
            .flat_map(|(v, m)| v.iter().map(move |x| m * x))
            .collect();
        PhaseState::new(q, p, 0.0)
    }
}

/// Three-dimensional N-body configuration from ephemeris records.
pub fn nbody_from_ephemeris(records: &[EphemerisRecord], g: f64) -> Result<NBodyConfig> {
    if records.len() < 2 {
        return Err(Error::Ingestion("need at least two bodies".into()));
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Ingestion(format!("duplicate body name {}", r.name)));
        }
        if !(r.mass > 0.0) {
            return Err(Error::Ingestion(format!("{}: mass must be positive", r.name)));
        }
    }
    let cfg = NBodyConfig {
        names: records.iter().map(|r| r.name.clone()).collect(),
        masses: records.iter().map(|r| r.mass).collect(),
        g,
        spatial_dim: 3,
        positions: records.iter().map(|r| r.position().to_vec()).collect(),
        velocities: records.iter().map(|r| r.velocity().to_vec()).collect(),
    };
    cfg.validate().map_err(|e| Error::Ingestion(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn harmonic_reference_values() {
        let r = HarmonicReference { q0: 1.0, p0: 0.0 };
        let (q, p) = r.state(PI).unwrap();
        assert_relative_eq!(q[0], -1.0, epsilon = 1e-15);
        assert!(p[0].abs() < 1e-15);
        let (q, p) = r.state(PI / 2.0).unwrap();
        assert!(q[0].abs() < 1e-15);
        assert_relative_eq!(p[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn kepler_orbit_elements() {
        let o = KeplerOrbit::from_state(1.0, [0.4, 0.0], [0.0, 2.0]).unwrap();
        // E = -0.5, angular momentum 0.8: e = sqrt(1 + 2 E L²) = 0.6, a = 1
        assert_relative_eq!(o.eccentricity, 0.6, epsilon = 1e-14);
        assert_relative_eq!(o.semi_major_axis, 1.0, epsilon = 1e-14);
        assert_relative_eq!(o.period(), 2.0 * PI, epsilon = 1e-13);
        let e_closed = (1.0f64 + 2.0 * (-0.5) * 0.8 * 0.8).sqrt();
        assert_relative_eq!(e_closed, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn kepler_reference_initial_period_apoapsis() {
        let o = KeplerOrbit::from_state(1.0, [0.4, 0.0], [0.0, 2.0]).unwrap();
        let (q, v) = o.state(0.0).unwrap();
        assert_relative_eq!(q[0], 0.4, epsilon = 1e-15);
        assert!(q[1].abs() < 1e-15);
        assert!(v[0].abs() < 1e-15);
        assert_relative_eq!(v[1], 2.0, epsilon = 1e-14);
        let (q, v) = o.state(2.0 * PI).unwrap();
        assert!((q[0] - 0.4).abs() <= 1e-12 && q[1].abs() <= 1e-12);
        assert!(v[0].abs() <= 1e-12 && (v[1] - 2.0).abs() <= 1e-12);
        let (q, _) = o.state(PI).unwrap();
        assert_relative_eq!(q[0], -1.6, epsilon = 1e-12);
        assert!(q[1].abs() < 1e-12);
    }

    #[test]
    fn kepler_equation_residual() {
        for &e in &[0.0, 0.3, 0.6, 0.95] {
            for k in 0..50 {
                let m = -7.0 + 0.37 * k as f64;
                let ea = solve_kepler(m, e).unwrap();
                assert!((ea - e * ea.sin() - m).abs() < 1e-13, "e={e} m={m}");
            }
        }
        assert!(solve_kepler(0.3, 1.2).is_err());
    }

    #[test]
    fn unbound_orbit_rejected() {
        assert!(KeplerOrbit::from_state(1.0, [1.0, 0.0], [0.0, 2.0]).is_err());
    }

    #[test]
    fn retrograde_orbit_matches_mirror() {
        let pro = KeplerOrbit::from_state(1.0, [0.4, 0.0], [0.0, 2.0]).unwrap();
        let retro = KeplerOrbit::from_state(1.0, [0.4, 0.0], [0.0, -2.0]).unwrap();
        for t in [0.3, 1.7, 4.0] {
            let (a, _) = pro.state(t).unwrap();
            let (b, _) = retro.state(t).unwrap();
            assert_relative_eq!(a[0], b[0], epsilon = 1e-13);
            assert_relative_eq!(a[1], -b[1], epsilon = 1e-13);
        }
    }

    #[test]
    fn kepler_singularity_is_domain_error() {
        let k = KeplerPotential::new(1.0);
        assert!(matches!(k.gradient(&[0.0, 0.0]), Err(Error::PotentialDomain(_))));
    }

    #[test]
    fn nbody_hessian_matches_finite_differences() {
        let pot = NBodyPotential::new(vec![1.0, 2.0, 0.5], 1.3, 3);
        let q = [0.1, 0.2, -0.3, 1.0, -0.4, 0.2, -0.7, 0.9, 0.5];
        let h = pot.hessian(&q).unwrap().unwrap();
        let step = 1e-6;
        for k in 0..q.len() {
            let mut qp = q;
            let mut qm = q;
            qp[k] += step;
            qm[k] -= step;
            let gp = pot.gradient(&qp).unwrap();
            let gm = pot.gradient(&qm).unwrap();
            for r in 0..q.len() {
                let fd = (gp[r] - gm[r]) / (2.0 * step);
                assert!((fd - h[(r, k)]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    fn rec(name: &str, mass: f64, x: f64) -> EphemerisRecord {
        EphemerisRecord {
            name: name.into(),
            mass,
            x,
            y: 0.0,
            z: 0.0,
            vx: 0.0,
            vy: 0.0,
            vz: 0.0,
        }
    }

    #[test]
    fn aggregation_barycenter() {
        let records = vec![rec("a", 2.0, 0.0), rec("b", 3.0, 5.0), rec("c", 1.0, 9.0)];
        let out = aggregate_records(&records, &["a", "b"], "ab").unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].name, "ab");
        assert_relative_eq!(out[0].mass, 5.0);
        assert_relative_eq!(out[0].x, 3.0);
        assert!(aggregate_records(&records, &["a", "zz"], "x").is_err());
    }

    #[test]
    fn ingestion_errors() {
        let dup = vec![rec("a", 1.0, 0.0), rec("a", 1.0, 1.0)];
        assert!(matches!(nbody_from_ephemeris(&dup, 1.0), Err(Error::Ingestion(_))));
        let one = vec![rec("a", 1.0, 0.0)];
        assert!(nbody_from_ephemeris(&one, 1.0).is_err());
        let neg = vec![rec("a", 1.0, 0.0), rec("b", -1.0, 1.0)];
        assert!(nbody_from_ephemeris(&neg, 1.0).is_err());
    }

    #[test]
    fn csv_parsing_is_strict() {
        let good = "name,mass,x,y,z,vx,vy,vz\n# comment\nsun,1,0,0,0,0,0,0\nearth,3e-6,1,0,0,0,0.0172,0\n";
        let recs = parse_ephemeris(good.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].name, "earth");
        let extra = "name,mass,x,y,z,vx,vy,vz,w\nsun,1,0,0,0,0,0,0,1\n";
        assert!(parse_ephemeris(extra.as_bytes()).is_err());
        let nan = "name,mass,x,y,z,vx,vy,vz\nsun,1,NaN,0,0,0,0,0\n";
        assert!(parse_ephemeris(nan.as_bytes()).is_err());
        let zero = "name,mass,x,y,z,vx,vy,vz\nsun,0,0,0,0,0,0,0\n";
        assert!(parse_ephemeris(zero.as_bytes()).is_err());
        let short = "name,mass,x,y,z,vx,vy\nsun,1,0,0,0,0,0\n";
        assert!(parse_ephemeris(short.as_bytes()).is_err());
    }
}
