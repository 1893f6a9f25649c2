//! Gauss–Legendre rules on the unit interval.
//!
//! A rule stores nodes `c_j ∈ (0, 1)` and weights `b_j` with `Σ b_j = 1`, so an
//! integral over `[0, h]` is approximated by `h Σ b_j f(c_j h)`.

use crate::error::{Error, Result};
use std::f64::consts::PI;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Build a rule from explicit unit-interval nodes and weights.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "quadrature needs matching non-empty nodes/weights, got {} and {}",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("quadrature nodes must lie in [0, 1]".into()));
        }
        Ok(Self { nodes, weights })
    }

    /// m-point Gauss–Legendre rule mapped from `[-1, 1]` to `[0, 1]`.
    pub fn gauss_legendre(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidArgument("Gauss rule needs m >= 1".into()));
        }
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        // Roots come in ± pairs; solve for the positive half and mirror.
        let half = m.div_ceil(2);
        for i in 0..half {
            let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let (p, d) = legendre_with_derivative(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= NEWTON_TOL {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // x is the i-th largest root; store ascending on [0, 1].
            let hi = m - 1 - i;
            nodes[hi] = 0.5 * (1.0 + x);
            nodes[i] = 0.5 * (1.0 - x);
            weights[hi] = 0.5 * w;
            weights[i] = 0.5 * w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.5;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Unit-interval nodes `c_j`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights `b_j`, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Polynomial exactness degree of a Gauss rule, `2m - 1`.
    pub fn exactness_degree(&self) -> usize {
        2 * self.len() - 1
    }

    /// `h Σ b_j samples[j]`.
    pub fn integrate(&self, samples: &[f64], h: f64) -> Result<f64> {
        if samples.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {}",
                self.len(),
                samples.len()
            )));
        }
        Ok(h * self
            .weights
            .iter()
            .zip(samples)
            .map(|(b, f)| b * f)
            .sum::<f64>())
    }

    /// Integrate a closure over `[0, h]`.
    pub fn integrate_fn(&self, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        h * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(c, b)| b * f(c * h))
            .sum::<f64>()
    }
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let mf = m as f64;
    let d = mf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn midpoint_rule() {
        let r = QuadratureRule::gauss_legendre(1).unwrap();
        assert_eq!(r.nodes(), &[0.5]);
        assert_relative_eq!(r.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule() {
        let r = QuadratureRule::gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_relative_eq!(r.nodes()[0], (1.0 - s) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.nodes()[1], (1.0 + s) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.weights()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.weights()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn three_point_weights() {
        let r = QuadratureRule::gauss_legendre(3).unwrap();
        let expected = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        for (w, e) in r.weights().iter().zip(expected) {
            assert_relative_eq!(*w, e, epsilon = 1e-15);
        }
        assert_relative_eq!(r.nodes()[0], 0.5 - 0.5 * (0.6f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(
            QuadratureRule::gauss_legendre(0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn integrate_examples() {
        let r1 = QuadratureRule::gauss_legendre(1).unwrap();
        assert_eq!(r1.integrate(&[4.0], 2.0).unwrap(), 8.0);

        let r2 = QuadratureRule::gauss_legendre(2).unwrap();
        let s: Vec<f64> = r2.nodes().to_vec();
        assert_relative_eq!(r2.integrate(&s, 1.0).unwrap(), 0.5, epsilon = 1e-15);

        let r3 = QuadratureRule::gauss_legendre(3).unwrap();
        let s: Vec<f64> = r3.nodes().iter().map(|t| t.powi(5)).collect();
        assert_relative_eq!(r3.integrate(&s, 1.0).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn integrate_length_mismatch() {
        let r = QuadratureRule::gauss_legendre(3).unwrap();
        assert!(r.integrate(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn symmetry_and_positivity() {
        for m in 1..=40 {
            let r = QuadratureRule::gauss_legendre(m).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-14, "m={m} sum={total}");
            for j in 0..m {
                assert!(r.weights()[j] > 0.0);
                assert!((r.nodes()[j] + r.nodes()[m - 1 - j] - 1.0).abs() <= 1e-14);
                assert!((r.weights()[j] - r.weights()[m - 1 - j]).abs() <= 1e-14);
            }
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
