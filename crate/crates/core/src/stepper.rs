//! One-step map of the spectral variational integrator.
//!
//! Each step solves for the stage coefficients `q^1 … q^n` of the Galerkin
//! curve `q̃(t) = Σ q^i φ_i(t)` from
//!
//! * continuity: `q^1 = q_k`,
//! * internal stage conditions for test functions `φ_2 … φ_{n-1}`:
//!   `h Σ_j b_j (∂L/∂q φ_p + ∂L/∂q̇ φ̇_p) = 0`,
//! * the momentum condition `−h Σ_j b_j (∂L/∂q φ_1 + ∂L/∂q̇ φ̇_1) = p_k`,
//!
//! and then reads off `q_{k+1} = q^n` and
//! `p_{k+1} = h Σ_j b_j (∂L/∂q φ_n + ∂L/∂q̇ φ̇_n)`.
//!
//! The sign of the momentum row is fixed so that a free particle reproduces
//! `p_k = p_{k+1} = (q_{k+1} − q_k)/h`, i.e. the left discrete Legendre
//! transform is `−D₁L_d`.
//!
//! Unknowns are flattened stage-major: entry `i·D + d` holds component `d` of
//! stage `i`. For canonical Lagrangians the equations read `A x = f(x)` with a
//! state-independent matrix `A`.

use crate::basis::{BasisTable, ChebyshevNodes};
use crate::curve::{GalerkinCurve, StepStats, Trajectory};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::system::{CanonicalLagrangian, Lagrangian, Potential};
use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A point `(q, p)` in phase space at absolute time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, t: f64) -> Self {
        Self { q, p, t }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Stage values `q^i` of one step; row `i` is the D-vector of stage `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinCoefficients {
    rows: Vec<Vec<f64>>,
}

impl GalerkinCoefficients {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() < 2 || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(
                "stage coefficients need >= 2 rows of equal non-zero length".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn from_flat(x: &[f64], dim: usize) -> Self {
        Self {
            rows: x.chunks(dim).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len() * self.dim(), self.rows.iter().flatten().copied())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn first(&self) -> &[f64] {
        &self.rows[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.rows[self.rows.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStrategy {
    FixedPoint,
    Newton,
    #[default]
    FixedPointThenNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Residual ∞-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub strategy: SolverStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            strategy: SolverStrategy::FixedPointThenNewton,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("solver max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_strategy(mut self, strategy: SolverStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// Non-contracting fixed-point iterations tolerated before switching to Newton.
    pub fn stall_budget(&self) -> usize {
        (self.max_iter / 10).max(20)
    }
}

/// Converged solution of a stage solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next: PhaseState,
    pub coeffs: GalerkinCoefficients,
    pub iterations: usize,
    pub residual: f64,
    pub used_newton: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

pub fn matrix_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Test function and sign used by equation row `r` (rows `1..n`).
///
/// Rows `1..=n-2` use `φ_{r}` (0-based) with sign +1; the last row is the
/// momentum condition, `φ_0` with sign −1.
fn test_function(r: usize, n: usize) -> (usize, f64) {
    if r == n - 1 {
        (0, -1.0)
    } else {
        (r, 1.0)
    }
}

/// Stage matrix `A` of the canonical stage equations `A x = f(x)`.
///
/// Row block 0 selects `q^1`; row block `r ≥ 1` holds
/// `s_r h Σ_j b_j φ̇_i(c_j h) φ̇_{p_r}(c_j h) M` for the row's test function.
pub fn assemble_a(table: &BasisTable, quad: &QuadratureRule, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = table.n;
    let d = mass.nrows();
    if table.m != quad.len() {
        return Err(Error::InvalidArgument("basis table and quadrature disagree on m".into()));
    }
    if quad.exactness_degree() < 2 * n + 1 {
        // Invertibility is only guaranteed for exactness >= 2n + 1; still assemble.
        eprintln!(
            "warning: quadrature exactness {} below 2n+1 = {}",
            quad.exactness_degree(),
            2 * n + 1
        );
    }
    let h = table.h;
    let b = quad.weights();
    let mut a = DMatrix::zeros(n * d, n * d);
    for k in 0..d {
        a[(k, k)] = 1.0;
    }
    for r in 1..n {
        let (p, sign) = test_function(r, n);
        for i in 0..n {
            let s: f64 = (0..table.m)
                .map(|j| b[j] * table.dphi[i][j] * table.dphi[p][j])
                .sum();
            let coef = sign * h * s;
            for u in 0..d {
                for v in 0..d {
                    a[(r * d + u, i * d + v)] = coef * mass[(u, v)];
                }
            }
        }
    }
    Ok(a)
}

/// LU factorization of `A`, failing when `A` is numerically singular.
pub fn factorize_a(a: &DMatrix<f64>) -> Result<LU<f64, Dyn, Dyn>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let diag_max = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diag_min = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !lu.is_invertible() || diag_min <= 1e-14 * diag_max {
        return Err(Error::Assembly(format!(
            "stage matrix is singular (pivot ratio {:e}); quadrature may be under-resolved",
            diag_min / diag_max
        )));
    }
    Ok(lu)
}

/// Curve values and derivatives at every quadrature node, from stage
/// displacements `y = x − q_k` relative to `base = q_k`.
fn curve_at_nodes(table: &BasisTable, y: &DVector<f64>, base: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = base.len();
    let mut q = vec![base.to_vec(); table.m];
    let mut v = vec![vec![0.0; d]; table.m];
    for j in 0..table.m {
        for i in 0..table.n {
            let (pf, df) = (table.phi[i][j], table.dphi[i][j]);
            for k in 0..d {
                let c = y[i * d + k];
                q[j][k] += pf * c;
                v[j][k] += df * c;
            }
        }
    }
    (q, v)
}

/// Right-hand side `f(x)` of the canonical stage equations.
///
/// Block 0 is `q_k`; internal blocks are `h Σ_j b_j ∇V(q̃(c_j h)) φ_p(c_j h)`;
/// the last block is `p_prev − h Σ_j b_j ∇V(q̃(c_j h)) φ_1(c_j h)`, which
/// reduces to `p_prev` when the potential is flat.
pub fn rhs_f(
    table: &BasisTable,
    quad: &QuadratureRule,
    potential: &dyn Potential,
    x: &DVector<f64>,
    q_k: &[f64],
    p_prev: &[f64],
) -> Result<DVector<f64>> {
    let mut f = shifted_rhs(table, quad, potential, &displacement(x, q_k), q_k, p_prev)?;
    f.rows_mut(0, q_k.len()).copy_from_slice(q_k);
    Ok(f)
}

/// Stage displacements `x − q_k` (every block shifted by `q_k`).
fn displacement(x: &DVector<f64>, q_k: &[f64]) -> DVector<f64> {
    let d = q_k.len();
    DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v - q_k[i % d]))
}

fn absolute(y: &DVector<f64>, q_k: &[f64]) -> DVector<f64> {
    let d = q_k.len();
    DVector::from_iterator(y.len(), y.iter().enumerate().map(|(i, v)| v + q_k[i % d]))
}

/// [`rhs_f`] for the displacement form `A y = f̃(y)`, `y = x − q_k`.
///
/// `A` annihilates constant curves, so only block 0 changes (it becomes zero).
/// Solving for `y` keeps the stage unknowns at the size of the step's motion
/// rather than of `q_k`, which is what limits rounding error in `p_{k+1}`.
fn shifted_rhs(
    table: &BasisTable,
    quad: &QuadratureRule,
    potential: &dyn Potential,
    y: &DVector<f64>,
    q_k: &[f64],
    p_prev: &[f64],
) -> Result<DVector<f64>> {
    let n = table.n;
    let d = q_k.len();
    let h = table.h;
    let b = quad.weights();
    let (q, _) = curve_at_nodes(table, y, q_k);
    let grads = q
        .iter()
        .map(|qj| potential.gradient(qj))
        .collect::<Result<Vec<_>>>()?;
    let mut f = DVector::zeros(n * d);
    for k in 0..d {
        f[(n - 1) * d + k] = p_prev[k];
    }
    for r in 1..n {
        let (p, sign) = test_function(r, n);
        for (j, g) in grads.iter().enumerate() {
            let w = sign * h * b[j] * table.phi[p][j];
            for k in 0..d {
                f[r * d + k] += w * g[k];
            }
        }
    }
    Ok(f)
}

/// Iterate `x ← A⁻¹ f(x)` until `‖A x − f(x)‖∞ ≤ tol`.
pub fn fixed_point_solve(
    a: &DMatrix<f64>,
    lu: &LU<f64, Dyn, Dyn>,
    f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    start: DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    fixed_point_iterate(a, lu, f, start, cfg, usize::MAX).map_err(|(e, _)| e)
}

/// Fixed-point iteration that gives up after `stall_budget` non-contracting
/// iterations. On failure returns the lowest-residual iterate seen.
fn fixed_point_iterate(
    a: &DMatrix<f64>,
    lu: &LU<f64, Dyn, Dyn>,
    mut f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    start: DVector<f64>,
    cfg: &SolverConfig,
    stall_budget: usize,
) -> std::result::Result<SolveOutcome, (Error, DVector<f64>)> {
    let mut x = start;
    let mut best = (f64::INFINITY, x.clone());
    let mut prev = f64::INFINITY;
    let mut stalls = 0;
    let mut first = None;
    for it in 0..=cfg.max_iter {
        let fx = match f(&x) {
            Ok(v) => v,
            Err(e) => return Err((e, best.1)),
        };
        let res = inf_norm(&(a * &x - &fx));
        if !res.is_finite() {
            return Err((Error::NoConvergence { iterations: it, residual: res }, best.1));
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= cfg.tol {
            return Ok(SolveOutcome { x, iterations: it, residual: res });
        }
        let r0 = *first.get_or_insert(res);
        if res >= prev {
            stalls += 1;
        }
        if stalls >= stall_budget || res > 1e3 * r0 || it == cfg.max_iter {
            return Err((Error::NoConvergence { iterations: it, residual: res }, best.1));
        }
        prev = res;
        x = lu.solve(&fx).ok_or_else(|| (Error::SingularJacobian, best.1.clone()))?;
    }
    unreachable!()
}

/// True when the correction `dx` is at the rounding level of `x`, so the
/// residual cannot be reduced further in floating point.
fn roundoff_limited(dx: &DVector<f64>, x: &DVector<f64>) -> bool {
    inf_norm(dx) <= ROUNDOFF_STEP * inf_norm(x).max(1.0)
}

/// Relative correction size treated as rounding noise of an ill-conditioned
/// stage system.
const ROUNDOFF_STEP: f64 = 1e-10;

/// Step-length subdivisions tried, in order, by the continuation fallback.
const CONTINUATION_SUBSTEPS: &[usize] = &[8, 64];

/// RK4 substeps per stage node used by [`SpectralIntegrator::ode_guess`].
const ODE_GUESS_SUBSTEPS: usize = 4;

/// Damped Newton iteration on `R(x) = 0`.
///
/// Converged means `‖R‖∞ ≤ tol`, or, when the tolerance is below what the
/// residual's rounding error permits, that a fresh Newton correction is at
/// the rounding level of `x` and no longer reduces the residual.
///
/// The Jacobian is refreshed only when convergence slows, so near the solution
/// each iteration costs one residual evaluation and one triangular solve.
pub fn newton_solve(
    mut residual: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut jacobian: impl FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
    start: DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    let mut x = start;
    let mut r = residual(&x)?;
    let mut res = inf_norm(&r);
    if !res.is_finite() {
        return Err(Error::NoConvergence { iterations: 0, residual: res });
    }
    let factor = |j: DMatrix<f64>| -> Result<LU<f64, Dyn, Dyn>> {
        let lu = j.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularJacobian);
        }
        Ok(lu)
    };
    let mut lu = factor(jacobian(&x)?)?;
    let mut fresh = true;
    let mut iterations = 0;
    while res > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(Error::NoConvergence { iterations, residual: res });
        }
        let dx = lu.solve(&r).ok_or(Error::SingularJacobian)?;
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &x - &dx * lambda;
            if let Ok(rt) = residual(&trial) {
                let nt = inf_norm(&rt);
                if nt.is_finite() && nt < res {
                    accepted = Some((trial, rt, nt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xt, rt, nt)) => {
                let ratio = nt / res;
                x = xt;
                r = rt;
                res = nt;
                if res > cfg.tol && (ratio > 0.25 || lambda < 1.0) {
                    lu = factor(jacobian(&x)?)?;
                    fresh = true;
                } else {
                    fresh = false;
                }
            }
            None if !fresh => {
                lu = factor(jacobian(&x)?)?;
                fresh = true;
            }
            None if roundoff_limited(&dx, &x) => {
                return Ok(SolveOutcome { x, iterations, residual: res });
            }
            None => return Err(Error::NoConvergence { iterations, residual: res }),
        }
    }
    // Polish below the tolerance. The first correction is kept unless it
    // raises the residual: a start that already meets the tolerance can still
    // carry rounding error the residual does not see. Later ones must halve it.
    for pass in 0..3 {
        let Some(dx) = lu.solve(&r) else { break };
        let trial = &x - dx;
        match residual(&trial) {
            Ok(rt) => {
                let nt = inf_norm(&rt);
                let keep = if pass == 0 { nt <= res } else { nt < 0.5 * res };
                if nt.is_finite() && keep {
                    x = trial;
                    r = rt;
                    res = nt;
                } else {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    Ok(SolveOutcome { x, iterations, residual: res })
}

/// Stage matrix and its factorization for a fixed `(n, h, M, quadrature)`.
struct StageMatrix {
    a: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

/// Spectral variational integrator for one `(system, n, h, quadrature)` choice.
///
/// Immutable once built; share it across threads freely.
pub struct SpectralIntegrator {
    system: Arc<dyn Lagrangian>,
    nodes: Arc<ChebyshevNodes>,
    quad: QuadratureRule,
    table: BasisTable,
    stage: Option<StageMatrix>,
}

impl fmt::Debug for SpectralIntegrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralIntegrator")
            .field("n", &self.n())
            .field("m", &self.quad.len())
            .field("h", &self.h())
            .field("dim", &self.dim())
            .finish()
    }
}

impl SpectralIntegrator {
    /// Integrator with `n` Chebyshev nodes and a `2n`-point Gauss rule.
    pub fn new(system: Arc<dyn Lagrangian>, n: usize, h: f64) -> Result<Self> {
        let quad = QuadratureRule::gauss_legendre(2 * n.max(1))?;
        Self::with_quadrature(system, n, h, quad)
    }

    pub fn with_quadrature(system: Arc<dyn Lagrangian>, n: usize, h: f64, quad: QuadratureRule) -> Result<Self> {
        let nodes = Arc::new(ChebyshevNodes::new(n, h)?);
        let table = nodes.tabulate(&quad);
        let stage = match system.as_canonical() {
            Some(c) => {
                let a = assemble_a(&table, &quad, c.mass())?;
                let lu = factorize_a(&a)?;
                Some(StageMatrix { a, lu })
            }
            None => None,
        };
        Ok(Self {
            system,
            nodes,
            quad,
            table,
            stage,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn h(&self) -> f64 {
        self.nodes.h()
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn system(&self) -> &Arc<dyn Lagrangian> {
        &self.system
    }

    pub fn nodes(&self) -> &Arc<ChebyshevNodes> {
        &self.nodes
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    /// The assembled stage matrix `A` (canonical systems only).
    pub fn stage_matrix(&self) -> Option<&DMatrix<f64>> {
        self.stage.as_ref().map(|s| &s.a)
    }

    fn canonical(&self) -> Option<&CanonicalLagrangian> {
        self.system.as_canonical()
    }

    /// Weighted sum `s h Σ_j b_j (∂L/∂q φ_p + ∂L/∂q̇ φ̇_p)` for test function `p`.
    fn weak_form(
        &self,
        grads: &[(Vec<f64>, Vec<f64>)],
        p: usize,
        sign: f64,
        out: &mut [f64],
    ) {
        let b = self.quad.weights();
        let h = self.table.h;
        for (j, (gq, gv)) in grads.iter().enumerate() {
            let wq = sign * h * b[j] * self.table.phi[p][j];
            let wv = sign * h * b[j] * self.table.dphi[p][j];
            for k in 0..out.len() {
                out[k] += wq * gq[k] + wv * gv[k];
            }
        }
    }

    fn lagrangian_gradients(&self, y: &DVector<f64>, q_k: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let (q, v) = curve_at_nodes(&self.table, y, q_k);
        q.iter()
            .zip(&v)
            .map(|(qj, vj)| Ok((self.system.grad_q(qj, vj)?, self.system.grad_qdot(qj, vj)?)))
            .collect()
    }

    /// Stage and momentum residual `R(x)` for the step starting at `(q_k, p_k)`.
    pub fn residual(&self, x: &DVector<f64>, q_k: &[f64], p_k: &[f64]) -> Result<DVector<f64>> {
        self.shifted_residual(&displacement(x, q_k), q_k, p_k)
    }

    /// [`residual`](Self::residual) in terms of the displacements `y = x − q_k`.
    fn shifted_residual(&self, y: &DVector<f64>, q_k: &[f64], p_k: &[f64]) -> Result<DVector<f64>> {
        let n = self.n();
        let d = self.dim();
        if let Some(s) = &self.stage {
            let c = self.canonical().expect("stage matrix implies canonical");
            let f = shifted_rhs(&self.table, &self.quad, c.potential(), y, q_k, p_k)?;
            return Ok(&s.a * y - f);
        }
        let grads = self.lagrangian_gradients(y, q_k)?;
        let mut r = DVector::zeros(n * d);
        for k in 0..d {
            r[k] = y[k];
        }
        for row in 1..n {
            let (p, sign) = test_function(row, n);
            let mut acc = vec![0.0; d];
            self.weak_form(&grads, p, sign, &mut acc);
            for k in 0..d {
                r[row * d + k] = acc[k];
            }
        }
        for k in 0..d {
            r[(n - 1) * d + k] -= p_k[k];
        }
        Ok(r)
    }

    /// Jacobian of [`residual`](Self::residual).
    pub fn jacobian(&self, x: &DVector<f64>, q_k: &[f64], p_k: &[f64]) -> Result<DMatrix<f64>> {
        self.shifted_jacobian(&displacement(x, q_k), q_k, p_k)
    }

    fn shifted_jacobian(&self, y: &DVector<f64>, q_k: &[f64], p_k: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n();
        let d = self.dim();
        if let (Some(s), Some(c)) = (&self.stage, self.canonical()) {
            let (q, _) = curve_at_nodes(&self.table, y, q_k);
            let hess = q
                .iter()
                .map(|qj| c.potential_hessian(qj))
                .collect::<Result<Vec<_>>>()?;
            let mut jac = s.a.clone();
            let b = self.quad.weights();
            let h = self.table.h;
            for row in 1..n {
                let (p, sign) = test_function(row, n);
                for i in 0..n {
                    let mut block = DMatrix::<f64>::zeros(d, d);
                    for (j, hj) in hess.iter().enumerate() {
                        let w = sign * h * b[j] * self.table.phi[p][j] * self.table.phi[i][j];
                        if w != 0.0 {
                            block += hj * w;
                        }
                    }
                    for u in 0..d {
                        for v in 0..d {
                            jac[(row * d + u, i * d + v)] -= block[(u, v)];
                        }
                    }
                }
            }
            return Ok(jac);
        }
        // Central differences of the full residual.
        let size = n * d;
        let mut jac = DMatrix::zeros(size, size);
        let mut probe = y.clone();
        for col in 0..size {
            let step = 1e-7 * (1.0 + y[col].abs());
            probe[col] = y[col] + step;
            let rp = self.shifted_residual(&probe, q_k, p_k)?;
            probe[col] = y[col] - step;
            let rm = self.shifted_residual(&probe, q_k, p_k)?;
            probe[col] = y[col];
            jac.set_column(col, &((rp - rm) / (2.0 * step)));
        }
        Ok(jac)
    }

    /// `−D₁L_d`, the left discrete Legendre transform evaluated on solved stages.
    pub fn discrete_legendre_minus(&self, coeffs: &GalerkinCoefficients) -> Result<Vec<f64>> {
        let q_k = coeffs.first();
        let grads = self.lagrangian_gradients(&displacement(&coeffs.to_flat(), q_k), q_k)?;
        let mut out = vec![0.0; self.dim()];
        self.weak_form(&grads, 0, -1.0, &mut out);
        Ok(out)
    }

    /// `D₂L_d`, the right discrete Legendre transform.
    pub fn discrete_legendre_plus(&self, coeffs: &GalerkinCoefficients) -> Result<Vec<f64>> {
        let q_k = coeffs.first();
        self.shifted_legendre_plus(&displacement(&coeffs.to_flat(), q_k), q_k)
    }

    fn shifted_legendre_plus(&self, y: &DVector<f64>, q_k: &[f64]) -> Result<Vec<f64>> {
        let grads = self.lagrangian_gradients(y, q_k)?;
        let mut out = vec![0.0; self.dim()];
        self.weak_form(&grads, self.n() - 1, 1.0, &mut out);
        Ok(out)
    }

    /// `D₂L_d` via `p_{k+1} = p_k + h Σ_j b_j ∂L/∂q(q̃_j, q̇̃_j)`.
    ///
    /// The basis sums to one, so the weak forms of all test functions add up to
    /// the force integral; on a solution of the stage equations this equals
    /// [`discrete_legendre_plus`](Self::discrete_legendre_plus). It avoids
    /// differentiating the curve at the endpoint and keeps momentum exactly
    /// constant for a free particle.
    fn momentum_balance(&self, y: &DVector<f64>, q_k: &[f64], p_k: &[f64]) -> Result<Vec<f64>> {
        let grads = self.lagrangian_gradients(y, q_k)?;
        let b = self.quad.weights();
        let h = self.h();
        let mut impulse = vec![0.0; self.dim()];
        for (j, (gq, _)) in grads.iter().enumerate() {
            for (acc, g) in impulse.iter_mut().zip(gq) {
                *acc += h * b[j] * g;
            }
        }
        Ok(p_k.iter().zip(impulse).map(|(p, i)| p + i).collect())
    }

    /// Stage values sampled from an RK4 solution of the continuous equations
    /// over the step (canonical systems only).
    pub fn ode_guess(&self, state: &PhaseState) -> Option<GalerkinCoefficients> {
        let c = self.canonical()?;
        let pot = c.potential();
        let minv = c.mass_inverse();
        let deriv = |q: &DVector<f64>, p: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
            let g = pot.gradient(q.as_slice()).ok()?;
            Some((minv * p, -DVector::from_vec(g)))
        };
        let mut q = DVector::from_column_slice(&state.q);
        let mut p = DVector::from_column_slice(&state.p);
        let nodes = self.nodes.nodes();
        let target = self.h() / (ODE_GUESS_SUBSTEPS * self.n()) as f64;
        let mut rows = Vec::with_capacity(self.n());
        rows.push(state.q.clone());
        for w in nodes.windows(2) {
            let span = w[1] - w[0];
            let k = (span / target).ceil().max(1.0) as usize;
            let dt = span / k as f64;
            for _ in 0..k {
                let (k1q, k1p) = deriv(&q, &p)?;
                let (k2q, k2p) = deriv(&(&q + &k1q * (0.5 * dt)), &(&p + &k1p * (0.5 * dt)))?;
                let (k3q, k3p) = deriv(&(&q + &k2q * (0.5 * dt)), &(&p + &k2p * (0.5 * dt)))?;
                let (k4q, k4p) = deriv(&(&q + &k3q * dt), &(&p + &k3p * dt))?;
                q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
                p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
            }
            if !q.iter().all(|v| v.is_finite()) {
                return None;
            }
            rows.push(q.as_slice().to_vec());
        }
        debug_assert_eq!(rows.len(), self.n());
        Some(GalerkinCoefficients { rows })
    }

    /// Velocity whose momentum is `p` at `q`.
    fn velocity_guess(&self, q: &[f64], p: &[f64]) -> Vec<f64> {
        if let Some(c) = self.canonical() {
            return c.velocity_from_momentum(p);
        }
        // Newton on ∂L/∂q̇(q, v) = p with a finite-difference Jacobian.
        let d = q.len();
        let mut v = p.to_vec();
        for _ in 0..10 {
            let Ok(g) = self.system.grad_qdot(q, &v) else { return p.to_vec() };
            let r = DVector::from_iterator(d, g.iter().zip(p).map(|(a, b)| a - b));
            if inf_norm(&r) <= 1e-14 * (1.0 + p.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
                break;
            }
            let mut jac = DMatrix::zeros(d, d);
            for col in 0..d {
                let step = 1e-7 * (1.0 + v[col].abs());
                let mut vp = v.clone();
                vp[col] += step;
                let Ok(gp) = self.system.grad_qdot(q, &vp) else { return p.to_vec() };
                for row in 0..d {
                    jac[(row, col)] = (gp[row] - g[row]) / step;
                }
            }
            let Some(dv) = jac.lu().solve(&r) else { return p.to_vec() };
            v.iter_mut().zip(dv.iter()).for_each(|(a, b)| *a -= b);
        }
        v
    }

    /// Stages on the line `q(t) = q_k + t v_k` with `v_k` the velocity of `p_k`.
    pub fn linear_guess(&self, state: &PhaseState) -> GalerkinCoefficients {
        let v = self.velocity_guess(&state.q, &state.p);
        let rows = self
            .nodes
            .nodes()
            .iter()
            .map(|t| state.q.iter().zip(&v).map(|(q, v)| q + t * v).collect())
            .collect();
        GalerkinCoefficients { rows }
    }

    /// The previous step's curve continued one step forward, sampled at the nodes.
    pub fn extrapolated_guess(&self, previous: &GalerkinCoefficients) -> GalerkinCoefficients {
        let h = self.h();
        let rows = self
            .nodes
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 0 {
                    previous.last().to_vec()
                } else {
                    self.nodes.interpolate(previous.rows(), h + t)
                }
            })
            .collect();
        GalerkinCoefficients { rows }
    }

    /// Advance `state` by one step.
    pub fn step(&self, state: &PhaseState, cfg: &SolverConfig) -> Result<StepResult> {
        self.step_with_guess(state, cfg, None)
    }

    /// Advance `state` by one step, starting the stage solve from `guess` when
    /// it has a smaller residual than the straight-line guess.
    pub fn step_with_guess(
        &self,
        state: &PhaseState,
        cfg: &SolverConfig,
        guess: Option<&GalerkinCoefficients>,
    ) -> Result<StepResult> {
        cfg.validate()?;
        let d = self.dim();
        if state.q.len() != d || state.p.len() != d {
            return Err(Error::InvalidArgument(format!(
                "state dimension ({}, {}) does not match system dimension {d}",
                state.q.len(),
                state.p.len()
            )));
        }
        if !state.is_finite() {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        let res_of = |x: &DVector<f64>| {
            self.residual(x, &state.q, &state.p)
                .map(|r| inf_norm(&r))
                .ok()
                .filter(|r| r.is_finite())
                .unwrap_or(f64::INFINITY)
        };
        let mut start = self.linear_guess(state).to_flat();
        let mut best = res_of(&start);
        for g in guess.cloned().into_iter().chain(self.ode_guess(state)) {
            let mut gx = g.to_flat();
            gx.rows_mut(0, d).copy_from_slice(&state.q);
            let r = res_of(&gx);
            if r < best {
                best = r;
                start = gx;
            }
        }
        let (sol, used_newton) = match self.solve_stages(start, &state.q, &state.p, cfg) {
            Ok(v) => v,
            Err(e @ (Error::NoConvergence { .. } | Error::SingularJacobian)) => {
                self.continuation_solve(state, cfg).map_err(|_| e)?
            }
            Err(e) => return Err(e),
        };
        let mut y = sol.x;
        // continuity holds exactly
        y.rows_mut(0, d).fill(0.0);
        let p_next = self.momentum_balance(&y, &state.q, &state.p)?;
        let coeffs = GalerkinCoefficients::from_flat(absolute(&y, &state.q).as_slice(), d);
        let next = PhaseState {
            q: coeffs.last().to_vec(),
            p: p_next,
            t: state.t + self.h(),
        };
        if !next.is_finite() {
            return Err(Error::NoConvergence {
                iterations: sol.iterations,
                residual: f64::NAN,
            });
        }
        Ok(StepResult {
            next,
            coeffs,
            iterations: sol.iterations,
            residual: sol.residual,
            used_newton,
        })
    }

    /// Solve the stage equations from the absolute stage values `start`.
    /// The returned solution holds displacements `x − q_k`.
    fn solve_stages(
        &self,
        start: DVector<f64>,
        q_k: &[f64],
        p_k: &[f64],
        cfg: &SolverConfig,
    ) -> Result<(SolveOutcome, bool)> {
        let start = displacement(&start, q_k);
        let newton = |y0: DVector<f64>| {
            newton_solve(
                |y| self.shifted_residual(y, q_k, p_k),
                |y| self.shifted_jacobian(y, q_k, p_k),
                y0,
                cfg,
            )
        };
        let Some(stage) = &self.stage else {
            // Generic Lagrangians: only Newton applies.
            return newton(start).map(|s| (s, true));
        };
        let c = self.canonical().expect("stage matrix implies canonical");
        let f = |y: &DVector<f64>| shifted_rhs(&self.table, &self.quad, c.potential(), y, q_k, p_k);
        match cfg.strategy {
            SolverStrategy::FixedPoint => {
                fixed_point_solve(&stage.a, &stage.lu, f, start, cfg).map(|s| (s, false))
            }
            SolverStrategy::Newton => newton(start).map(|s| (s, true)),
            SolverStrategy::FixedPointThenNewton => {
                match fixed_point_iterate(&stage.a, &stage.lu, f, start.clone(), cfg, cfg.stall_budget()) {
                    // Newton polish below the tolerance.
                    Ok(s) => Ok((
                        match newton(s.x.clone()) {
                            Ok(p) if p.residual <= s.residual => SolveOutcome {
                                iterations: s.iterations,
                                ..p
                            },
                            _ => s,
                        },
                        false,
                    )),
                    Err((e, best)) => {
                        let fp_iters = match e {
                            Error::NoConvergence { iterations, .. } => iterations,
                            _ => 0,
                        };
                        let s = newton(best).or_else(|_| newton(start))?;
                        Ok((
                            SolveOutcome {
                                iterations: s.iterations + fp_iters,
                                ..s
                            },
                            true,
                        ))
                    }
                }
            }
        }
    }

    /// Follow the stage solution from a short step up to `h`, warm-starting each
    /// Newton solve from the previous curve. Used when the direct solve fails.
    fn continuation_solve(&self, state: &PhaseState, cfg: &SolverConfig) -> Result<(SolveOutcome, bool)> {
        let newton_cfg = cfg.with_strategy(SolverStrategy::Newton);
        let mut last = Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY });
        for &substeps in CONTINUATION_SUBSTEPS {
            last = self.continuation_pass(state, &newton_cfg, substeps);
            if last.is_ok() {
                break;
            }
        }
        last.map(|s| (s, true))
    }

    fn continuation_pass(&self, state: &PhaseState, cfg: &SolverConfig, substeps: usize) -> Result<SolveOutcome> {
        let d = self.dim();
        let mut prev: Option<(Arc<ChebyshevNodes>, GalerkinCoefficients)> = None;
        let mut iterations = 0;
        for i in 1..=substeps {
            let sub;
            let integ = if i == substeps {
                self
            } else {
                let hi = self.h() * i as f64 / substeps as f64;
                sub = SpectralIntegrator::with_quadrature(Arc::clone(&self.system), self.n(), hi, self.quad.clone())?;
                &sub
            };
            let start = match &prev {
                Some((nodes, coeffs)) => {
                    let rows = integ.nodes.nodes().iter().map(|t| nodes.interpolate(coeffs.rows(), *t)).collect();
                    GalerkinCoefficients { rows }
                }
                None => integ.ode_guess(state).unwrap_or_else(|| integ.linear_guess(state)),
            };
            let mut x = start.to_flat();
            x.rows_mut(0, d).copy_from_slice(&state.q);
            let (sol, _) = integ.solve_stages(x, &state.q, &state.p, cfg)?;
            iterations += sol.iterations;
            if i == substeps {
                return Ok(SolveOutcome { iterations, ..sol });
            }
            let x = absolute(&sol.x, &state.q);
            prev = Some((Arc::clone(&integ.nodes), GalerkinCoefficients::from_flat(x.as_slice(), d)));
        }
        unreachable!("substeps >= 1")
    }

    /// Step-size bound below which the fixed-point map is a contraction, given
    /// a Lipschitz constant for `∇V` in the ∞-norm.
    ///
    /// Evaluates `(‖A₁⁻¹‖∞ L max_j ‖φ(c_j)‖₁ |φ_p(c_j)|)⁻¹` with `A₁` the stage
    /// matrix on the unit interval and `p` ranging over the rows that carry a
    /// potential term. The estimate `‖A(h)⁻¹‖∞ ≤ ‖A₁⁻¹‖∞` behind it holds for
    /// `h ≤ 1`.
    pub fn contraction_bound(&self, lipschitz: f64) -> Result<f64> {
        let c = self
            .canonical()
            .ok_or_else(|| Error::InvalidArgument("contraction bound needs a canonical Lagrangian".into()))?;
        contraction_bound(self.n(), &self.quad, c, lipschitz)
    }

    /// Integrate `steps` steps from `init`, warm-starting each stage solve from
    /// the previous Galerkin curve.
    pub fn integrate(
        &self,
        init: &PhaseState,
        steps: usize,
        cfg: &SolverConfig,
    ) -> std::result::Result<Trajectory, Box<IntegrationFailure>> {
        let mut traj = Trajectory::new(self.h(), init.clone());
        if steps == 0 {
            return Err(Box::new(IntegrationFailure {
                partial: traj,
                failed_step: 0,
                error: Error::InvalidArgument("steps must be >= 1".into()),
            }));
        }
        let mut state = init.clone();
        let mut guess: Option<GalerkinCoefficients> = None;
        for k in 0..steps {
            match self.step_with_guess(&state, cfg, guess.as_ref()) {
                Ok(res) => {
                    guess = Some(self.extrapolated_guess(&res.coeffs));
                    traj.push(
                        GalerkinCurve::new(Arc::clone(&self.nodes), res.coeffs, state.t),
                        res.next.clone(),
                        StepStats {
                            iterations: res.iterations,
                            residual: res.residual,
                            used_newton: res.used_newton,
                        },
                    );
                    state = res.next;
                }
                Err(error) => {
                    return Err(Box::new(IntegrationFailure {
                        partial: traj,
                        failed_step: k,
                        error,
                    }))
                }
            }
        }
        Ok(traj)
    }
}

/// Free-function form of [`SpectralIntegrator::contraction_bound`].
pub fn contraction_bound(
    n: usize,
    quad: &QuadratureRule,
    sys: &CanonicalLagrangian,
    lipschitz: f64,
) -> Result<f64> {
    if !(lipschitz >= 0.0) {
        return Err(Error::InvalidArgument("Lipschitz constant must be >= 0".into()));
    }
    if lipschitz == 0.0 {
        return Ok(f64::INFINITY);
    }
    let unit = ChebyshevNodes::new(n, 1.0)?;
    let table = unit.tabulate(quad);
    let a1 = assemble_a(&table, quad, sys.mass())?;
    let inv = factorize_a(&a1)?
        .try_inverse()
        .ok_or_else(|| Error::Assembly("unit stage matrix not invertible".into()))?;
    let inv_norm = matrix_inf_norm(&inv);
    let mut worst = 0.0f64;
    for j in 0..table.m {
        let l1: f64 = (0..n).map(|i| table.phi[i][j].abs()).sum();
        for r in 1..n {
            let (p, _) = test_function(r, n);
            worst = worst.max(l1 * table.phi[p][j].abs());
        }
    }
    Ok(1.0 / (inv_norm * lipschitz * worst))
}

/// A trajectory that stopped at `failed_step`.
#[derive(Debug)]
pub struct IntegrationFailure {
    pub partial: Trajectory,
    pub failed_step: usize,
    pub error: Error,
}

impl fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed: {}", self.failed_step, self.error)
    }
}

impl std::error::Error for IntegrationFailure {}
