//! Chebyshev–Lagrange interpolation basis on `[0, h]`.
//!
//! An n-point set holds the extrema of the degree `n - 1` Chebyshev polynomial,
//! rescaled to `[0, h]` and sorted ascending, so the first and last basis
//! functions are the endpoint cardinal functions. Evaluation uses the second
//! (true) barycentric formula.

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevNodes {
    h: f64,
    nodes: Vec<f64>,
    bary: Vec<f64>,
    diff: Vec<Vec<f64>>,
}

impl ChebyshevNodes {
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need n >= 2 nodes, got {n}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step length must be positive, got {h}")));
        }
        let last = n - 1;
        let mut nodes = vec![0.0; n];
        // h/2 (1 - cos θ) = h sin²(θ/2); mirror so the set is exactly symmetric.
        for i in 0..n.div_ceil(2) {
            let s = (PI * i as f64 / (2.0 * last as f64)).sin();
            nodes[i] = h * s * s;
            nodes[last - i] = h - nodes[i];
        }
        if n % 2 == 1 {
            nodes[last / 2] = 0.5 * h;
        }
        nodes[0] = 0.0;
        nodes[last] = h;

        let bary: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i == 0 || i == last {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        let diff = differentiation_matrix(&nodes, &bary);
        Ok(Self { h, nodes, bary, diff })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.bary
    }

    fn node_hit(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&x| x == t)
    }

    /// Basis values `φ_1(t) … φ_n(t)`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        if let Some(k) = self.node_hit(t) {
            out[k] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for i in 0..n {
            let v = self.bary[i] / (t - self.nodes[i]);
            out[i] = v;
            denom += v;
        }
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }

    /// Basis derivatives `φ̇_1(t) … φ̇_n(t)`.
    ///
    /// `φ̇_j` has degree `n − 2`, so it equals the interpolant of its nodal
    /// values: `φ̇_j(t) = Σ_i φ_i(t) D_ij` with `D` the differentiation matrix.
    pub fn deriv(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        if let Some(k) = self.node_hit(t) {
            return self.diff[k].clone();
        }
        let phi = self.eval(t);
        let mut out = vec![0.0; n];
        for (row, p) in self.diff.iter().zip(&phi) {
            for (o, d) in out.iter_mut().zip(row) {
                *o += p * d;
            }
        }
        out
    }

    /// Differentiation matrix `D_ij = φ̇_j(x_i)`.
    pub fn differentiation_matrix(&self) -> &[Vec<f64>] {
        &self.diff
    }

    /// Evaluate `Σ_i values[i] φ_i(t)` for D-dimensional stage values.
    pub fn interpolate(&self, values: &[Vec<f64>], t: f64) -> Vec<f64> {
        combine(&self.eval(t), values)
    }

    /// Evaluate `Σ_i values[i] φ̇_i(t)`.
    pub fn interpolate_deriv(&self, values: &[Vec<f64>], t: f64) -> Vec<f64> {
        combine(&self.deriv(t), values)
    }

    /// Tabulate basis values and derivatives at the quadrature nodes of `quad`
    /// mapped onto `[0, h]`, plus both endpoints.
    pub fn tabulate(&self, quad: &QuadratureRule) -> BasisTable {
        let n = self.len();
        let m = quad.len();
        let mut phi = vec![vec![0.0; m]; n];
        let mut dphi = vec![vec![0.0; m]; n];
        for (j, c) in quad.nodes().iter().enumerate() {
            let t = c * self.h;
            let v = self.eval(t);
            let d = self.deriv(t);
            for i in 0..n {
                phi[i][j] = v[i];
                dphi[i][j] = d[i];
            }
        }
        BasisTable {
            n,
            m,
            h: self.h,
            phi,
            dphi,
            phi0: self.eval(0.0),
            phi_h: self.eval(self.h),
            dphi0: self.deriv(0.0),
            dphi_h: self.deriv(self.h),
        }
    }
}

/// Rows sum to zero exactly (diagonal by negative sum).
fn differentiation_matrix(nodes: &[f64], bary: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    (0..n)
        .map(|k| {
            let mut row = vec![0.0; n];
            let mut diag = 0.0;
            for i in 0..n {
                if i != k {
                    let d = (bary[i] / bary[k]) / (nodes[k] - nodes[i]);
                    row[i] = d;
                    diag -= d;
                }
            }
            row[k] = diag;
            row
        })
        .collect()
}

fn combine(coef: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (c, row) in coef.iter().zip(values) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += c * v;
        }
    }
    out
}

/// Basis values and derivatives tabulated at quadrature points and endpoints.
///
/// `phi[i][j] = φ_i(c_j h)` and `dphi[i][j] = φ̇_i(c_j h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub phi: Vec<Vec<f64>>,
    pub dphi: Vec<Vec<f64>>,
    pub phi0: Vec<f64>,
    pub phi_h: Vec<f64>,
    pub dphi0: Vec<f64>,
    pub dphi_h: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn endpoints_only() {
        let c = ChebyshevNodes::new(2, 1.0).unwrap();
        assert_eq!(c.nodes(), &[0.0, 1.0]);
    }

    #[test]
    fn three_nodes_hit_midpoint() {
        let c = ChebyshevNodes::new(3, 2.0).unwrap();
        assert_eq!(c.nodes(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn five_nodes_closed_form() {
        let c = ChebyshevNodes::new(5, 1.0).unwrap();
        let r = (PI / 4.0).cos();
        let expected = [0.0, (1.0 - r) / 2.0, 0.5, (1.0 + r) / 2.0, 1.0];
        // cross-check by sorting h/2 cos(iπ/4) + h/2
        let mut sorted: Vec<f64> = (0..5).map(|i| 0.5 * (PI * i as f64 / 4.0).cos() + 0.5).collect();
        sorted.sort_by(f64::total_cmp);
        for k in 0..5 {
            assert_relative_eq!(c.nodes()[k], expected[k], epsilon = 1e-15);
            assert_relative_eq!(c.nodes()[k], sorted[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(ChebyshevNodes::new(1, 1.0).is_err());
        assert!(ChebyshevNodes::new(4, 0.0).is_err());
        assert!(ChebyshevNodes::new(4, -1.0).is_err());
    }

    #[test]
    fn linear_basis_values() {
        let c = ChebyshevNodes::new(2, 1.0).unwrap();
        let v = c.eval(0.25);
        assert_relative_eq!(v[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.25, epsilon = 1e-15);
        for t in [0.0, 0.3, 1.0] {
            let d = c.deriv(t);
            assert_relative_eq!(d[0], -1.0, epsilon = 1e-14);
            assert_relative_eq!(d[1], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_basis_rescaled_derivative() {
        let h = 3.5;
        let c = ChebyshevNodes::new(2, h).unwrap();
        for t in [0.0, 1.0, h] {
            let d = c.deriv(t);
            assert_relative_eq!(d[0], -1.0 / h, epsilon = 1e-14);
            assert_relative_eq!(d[1], 1.0 / h, epsilon = 1e-14);
        }
    }

    #[test]
    fn quadratic_basis_by_hand() {
        let c = ChebyshevNodes::new(3, 2.0).unwrap();
        assert_eq!(c.eval(1.0), vec![0.0, 1.0, 0.0]);
        // (t-1)(t-2)/2, t(2-t), t(t-1)/2 at t = 0.5
        let v = c.eval(0.5);
        let expected = [0.375, 0.75, -0.125];
        for k in 0..3 {
            assert_relative_eq!(v[k], expected[k], epsilon = 1e-15);
        }
        // derivatives t - 1.5, 2 - 2t, t - 0.5 at t = 1
        let d = c.deriv(1.0);
        let expected = [-0.5, 0.0, 0.5];
        for k in 0..3 {
            assert_relative_eq!(d[k], expected[k], epsilon = 1e-15);
        }
        // and off-node
        let d = c.deriv(0.5);
        let expected = [-1.0, 1.0, 0.0];
        for k in 0..3 {
            assert_relative_eq!(d[k], expected[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn endpoint_delta_exact() {
        for n in 2..20 {
            let c = ChebyshevNodes::new(n, 0.7).unwrap();
            let v0 = c.eval(0.0);
            let vh = c.eval(0.7);
            for i in 0..n {
                assert_eq!(v0[i], if i == 0 { 1.0 } else { 0.0 });
                assert_eq!(vh[i], if i == n - 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn tabulate_linear_midpoint() {
        let c = ChebyshevNodes::new(2, 1.0).unwrap();
        let q = QuadratureRule::gauss_legendre(1).unwrap();
        let t = c.tabulate(&q);
        assert_eq!(t.phi, vec![vec![0.5], vec![0.5]]);
        assert_relative_eq!(t.dphi[0][0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(t.dphi[1][0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tabulate_node_hit() {
        let c = ChebyshevNodes::new(3, 2.0).unwrap();
        let q = QuadratureRule::gauss_legendre(1).unwrap();
        let t = c.tabulate(&q);
        assert_eq!(t.phi, vec![vec![0.0], vec![1.0], vec![0.0]]);
    }

    #[test]
    fn tabulate_linear_two_point_gauss() {
        let c = ChebyshevNodes::new(2, 1.0).unwrap();
        let q = QuadratureRule::gauss_legendre(2).unwrap();
        let t = c.tabulate(&q);
        let s = 1.0 / 3f64.sqrt();
        let expected = [[(1.0 + s) / 2.0, (1.0 - s) / 2.0], [(1.0 - s) / 2.0, (1.0 + s) / 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(t.phi[i][j], expected[i][j], epsilon = 1e-15);
            }
        }
        for j in 0..2 {
            assert_relative_eq!(t.phi[0][j] + t.phi[1][j], 1.0, epsilon = 1e-15);
        }
        assert_eq!(t.phi0, vec![1.0, 0.0]);
        assert_eq!(t.phi_h, vec![0.0, 1.0]);
    }

    #[test]
    fn table_invariants() {
        for n in [2, 5, 14, 30] {
            let h = 2.5;
            let c = ChebyshevNodes::new(n, h).unwrap();
            let q = QuadratureRule::gauss_legendre(2 * n).unwrap();
            let t = c.tabulate(&q);
            for j in 0..t.m {
                let s: f64 = (0..n).map(|i| t.phi[i][j]).sum();
                let ds: f64 = (0..n).map(|i| t.dphi[i][j]).sum();
                assert!((s - 1.0).abs() <= 1e-12, "n={n} partition {s}");
                assert!(ds.abs() <= 1e-10 / h, "n={n} deriv sum {ds}");
            }
            let ds0: f64 = t.dphi0.iter().sum();
            let dsh: f64 = t.dphi_h.iter().sum();
            assert!(ds0.abs() <= 1e-10 / h * (n * n) as f64);
            assert!(dsh.abs() <= 1e-10 / h * (n * n) as f64);
        }
    }
}
