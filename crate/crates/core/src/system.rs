//! Lagrangian systems, the canonical `½ q̇ᵀMq̇ − V(q)` specialization, and
//! Noether symmetry generators.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

/// A Lagrangian `L(q, q̇)` on a linear configuration space of dimension `dim`.
///
/// Evaluators must be pure; they are called concurrently from sweep workers.
pub trait Lagrangian: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64], qdot: &[f64]) -> Result<f64>;

    /// `∂L/∂q`
    fn grad_q(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>>;

    /// `∂L/∂q̇`
    fn grad_qdot(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>>;

    /// The canonical split, if this Lagrangian has one. The stage solver uses
    /// it to assemble the state-independent stage matrix.
    fn as_canonical(&self) -> Option<&CanonicalLagrangian> {
        None
    }
}

/// A potential `V(q)` with gradient and optional Hessian.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64]) -> Result<f64>;

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>>;

    /// Analytic Hessian, row-major `dim × dim`. `None` falls back to central
    /// differences of the gradient.
    fn hessian(&self, _q: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// `L(q, q̇) = ½ q̇ᵀ M q̇ − V(q)` with `M` symmetric positive definite.
#[derive(Clone)]
pub struct CanonicalLagrangian {
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    potential: Arc<dyn Potential>,
}

impl fmt::Debug for CanonicalLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CanonicalLagrangian")
            .field("mass", &self.mass)
            .finish_non_exhaustive()
    }
}

impl CanonicalLagrangian {
    pub fn new(mass: DMatrix<f64>, potential: Arc<dyn Potential>) -> Result<Self> {
        let d = potential.dim();
        if mass.nrows() != d || mass.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "mass matrix is {}x{}, potential dimension is {d}",
                mass.nrows(),
                mass.ncols()
            )));
        }
        let asym = (&mass - mass.transpose()).abs().max();
        if asym > 1e-14 * mass.abs().max().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "mass matrix not symmetric (max asymmetry {asym:e})"
            )));
        }
        let chol = Cholesky::new(mass.clone()).ok_or_else(|| {
            Error::InvalidArgument("mass matrix is not positive definite".into())
        })?;
        let mass_inv = chol.inverse();
        Ok(Self {
            mass,
            mass_inv,
            potential,
        })
    }

    /// Diagonal mass matrix from per-coordinate masses.
    pub fn with_diagonal_mass(masses: &[f64], potential: Arc<dyn Potential>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(masses)), potential)
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inverse(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn potential_arc(&self) -> Arc<dyn Potential> {
        Arc::clone(&self.potential)
    }

    /// Hessian of `V`, analytic when the potential supplies one.
    pub fn potential_hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(h) = self.potential.hessian(q) {
            return h;
        }
        let d = q.len();
        let scale = q.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let step = 1e-6 * scale;
        let mut out = DMatrix::zeros(d, d);
        let mut probe = q.to_vec();
        for k in 0..d {
            probe[k] = q[k] + step;
            let gp = self.potential.gradient(&probe)?;
            probe[k] = q[k] - step;
            let gm = self.potential.gradient(&probe)?;
            probe[k] = q[k];
            for r in 0..d {
                out[(r, k)] = (gp[r] - gm[r]) / (2.0 * step);
            }
        }
        // symmetrize the finite-difference estimate
        Ok((&out + out.transpose()) * 0.5)
    }

    fn mass_times(&self, v: &[f64]) -> Vec<f64> {
        (&self.mass * DVector::from_row_slice(v)).as_slice().to_vec()
    }

    /// `M⁻¹ p`
    pub fn velocity_from_momentum(&self, p: &[f64]) -> Vec<f64> {
        (&self.mass_inv * DVector::from_row_slice(p)).as_slice().to_vec()
    }
}

impl Lagrangian for CanonicalLagrangian {
    fn dim(&self) -> usize {
        self.mass.nrows()
    }

    fn value(&self, q: &[f64], qdot: &[f64]) -> Result<f64> {
        let mv = self.mass_times(qdot);
        let kinetic = 0.5 * mv.iter().zip(qdot).map(|(a, b)| a * b).sum::<f64>();
        Ok(kinetic - self.potential.value(q)?)
    }

    fn grad_q(&self, q: &[f64], _qdot: &[f64]) -> Result<Vec<f64>> {
        Ok(self.potential.gradient(q)?.into_iter().map(|g| -g).collect())
    }

    fn grad_qdot(&self, _q: &[f64], qdot: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mass_times(qdot))
    }

    fn as_canonical(&self) -> Option<&CanonicalLagrangian> {
        Some(self)
    }
}

/// Wrap a canonical Lagrangian as a generic system handle.
pub fn canonical_to_system(c: CanonicalLagrangian) -> Arc<dyn Lagrangian> {
    Arc::new(c)
}

type ScalarFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// A Lagrangian given by three callbacks.
pub struct CallbackLagrangian {
    dim: usize,
    value: Box<ScalarFn>,
    grad_q: Box<VectorFn>,
    grad_qdot: Box<VectorFn>,
}

impl CallbackLagrangian {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_q: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        grad_qdot: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Box::new(value),
            grad_q: Box::new(grad_q),
            grad_qdot: Box::new(grad_qdot),
        }
    }
}

impl Lagrangian for CallbackLagrangian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[f64], qdot: &[f64]) -> Result<f64> {
        Ok((self.value)(q, qdot))
    }

    fn grad_q(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad_q)(q, qdot))
    }

    fn grad_qdot(&self, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad_qdot)(q, qdot))
    }
}

/// Canonical momentum `p = ∂L/∂q̇(q, q̇)`.
pub fn continuous_legendre(sys: &dyn Lagrangian, q: &[f64], qdot: &[f64]) -> Result<Vec<f64>> {
    sys.grad_qdot(q, qdot)
}

/// Energy `∂L/∂q̇ · q̇ − L`.
pub fn energy(sys: &dyn Lagrangian, q: &[f64], qdot: &[f64]) -> Result<f64> {
    let p = sys.grad_qdot(q, qdot)?;
    let pv: f64 = p.iter().zip(qdot).map(|(a, b)| a * b).sum();
    Ok(pv - sys.value(q, qdot)?)
}

type GeneratorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Infinitesimal generator `a(q)` of a one-parameter symmetry group.
#[derive(Clone)]
pub struct NoetherGenerator {
    label: String,
    field: Arc<GeneratorFn>,
}

impl fmt::Debug for NoetherGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoetherGenerator").field("label", &self.label).finish()
    }
}

impl NoetherGenerator {
    pub fn new(label: impl Into<String>, field: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            field: Arc::new(field),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn field(&self, q: &[f64]) -> Vec<f64> {
        (self.field)(q)
    }

    /// Noether quantity `I(p, q) = pᵀ a(q)`.
    pub fn quantity(&self, q: &[f64], p: &[f64]) -> f64 {
        self.field(q).iter().zip(p).map(|(a, b)| a * b).sum()
    }

    /// Rotation in the `(i, j)` coordinate plane applied to every body of a
    /// system laid out as `bodies` consecutive blocks of `spatial_dim`
    /// coordinates. Its Noether quantity is the total angular momentum about
    /// the plane's normal.
    pub fn rotation(bodies: usize, spatial_dim: usize, i: usize, j: usize) -> Self {
        assert!(i < spatial_dim && j < spatial_dim && i != j);
        Self::new(format!("rotation[{i}{j}]"), move |q: &[f64]| {
            let mut a = vec![0.0; q.len()];
            for b in 0..bodies {
                let o = b * spatial_dim;
                a[o + i] = -q[o + j];
                a[o + j] = q[o + i];
            }
            a
        })
    }

    /// Planar rotation `a(q) = (−q_y, q_x)`, giving `I = q_x p_y − q_y p_x`.
    pub fn planar_rotation() -> Self {
        let mut g = Self::rotation(1, 2, 0, 1);
        g.label = "angular-momentum".into();
        g
    }

    /// Simultaneous translation of every body along `axis`.
    pub fn translation(bodies: usize, spatial_dim: usize, axis: usize) -> Self {
        assert!(axis < spatial_dim);
        Self::new(format!("translation[{axis}]"), move |q: &[f64]| {
            let mut a = vec![0.0; q.len()];
            for b in 0..bodies {
                a[b * spatial_dim + axis] = 1.0;
            }
            a
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FreePotential, HarmonicPotential, KeplerPotential};
    use approx::assert_relative_eq;

    fn harmonic() -> CanonicalLagrangian {
        CanonicalLagrangian::new(DMatrix::identity(1, 1), Arc::new(HarmonicPotential::new(1))).unwrap()
    }

    fn kepler() -> CanonicalLagrangian {
        CanonicalLagrangian::new(DMatrix::identity(2, 2), Arc::new(KeplerPotential::new(1.0))).unwrap()
    }

    #[test]
    fn harmonic_values() {
        let h = harmonic();
        assert_relative_eq!(h.value(&[1.0], &[0.0]).unwrap(), -0.5);
        assert_relative_eq!(h.value(&[0.0], &[2.0]).unwrap(), 2.0);
        assert_eq!(h.grad_qdot(&[0.0], &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(continuous_legendre(&h, &[1.0], &[3.0]).unwrap(), vec![3.0]);
        assert_relative_eq!(energy(&h, &[1.0], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn kepler_values() {
        let k = kepler();
        assert_relative_eq!(k.value(&[0.4, 0.0], &[0.0, 2.0]).unwrap(), 4.5, epsilon = 1e-15);
        assert_eq!(continuous_legendre(&k, &[0.4, 0.0], &[0.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert_relative_eq!(energy(&k, &[0.4, 0.0], &[0.0, 2.0]).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_mass_momentum() {
        let c = CanonicalLagrangian::with_diagonal_mass(&[2.0, 5.0], Arc::new(FreePotential::new(2))).unwrap();
        assert_eq!(continuous_legendre(&c, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![2.0, 5.0]);
        let free = CanonicalLagrangian::with_diagonal_mass(&[1.0], Arc::new(FreePotential::new(1))).unwrap();
        assert_relative_eq!(energy(&free, &[0.0], &[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn rejects_bad_mass() {
        let p: Arc<dyn Potential> = Arc::new(FreePotential::new(2));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CanonicalLagrangian::new(asym, p.clone()).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(CanonicalLagrangian::new(indefinite, p.clone()).is_err());
        assert!(CanonicalLagrangian::new(DMatrix::identity(3, 3), p).is_err());
    }

    #[test]
    fn energy_plus_lagrangian_is_twice_kinetic() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = CanonicalLagrangian::new(m.clone(), Arc::new(KeplerPotential::new(1.0))).unwrap();
        let q = [0.7, -0.2];
        let v = [0.3, 1.1];
        let vv = DVector::from_row_slice(&v);
        let two_t = vv.dot(&(&m * &vv));
        let s = energy(&c, &q, &v).unwrap() + c.value(&q, &v).unwrap();
        assert!((s - two_t).abs() <= 1e-12);
    }

    #[test]
    fn angular_momentum_generator() {
        let g = NoetherGenerator::planar_rotation();
        let q = [0.4, 0.0];
        let p = [0.0, 2.0];
        assert_relative_eq!(g.quantity(&q, &p), 0.8);
        let q = [1.5, -0.5];
        let p = [0.3, 0.9];
        assert_relative_eq!(g.quantity(&q, &p), q[0] * p[1] - q[1] * p[0]);
    }

    #[test]
    fn callback_lagrangian_matches_canonical() {
        let cb = CallbackLagrangian::new(
            1,
            |q, v| 0.5 * v[0] * v[0] - 0.5 * q[0] * q[0],
            |q, _| vec![-q[0]],
            |_, v| vec![v[0]],
        );
        let h = harmonic();
        for (q, v) in [(0.3, -1.2), (2.0, 0.5)] {
            assert_relative_eq!(cb.value(&[q], &[v]).unwrap(), h.value(&[q], &[v]).unwrap());
            assert_relative_eq!(energy(&cb, &[q], &[v]).unwrap(), energy(&h, &[q], &[v]).unwrap());
        }
        assert!(cb.as_canonical().is_none());
    }
}
