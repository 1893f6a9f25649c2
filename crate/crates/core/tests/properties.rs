use nalgebra::DMatrix;
use proptest::prelude::*;
use spectral_vi_core::diagnostics::drift_ratio;
use spectral_vi_core::stepper::assemble_a;
use spectral_vi_core::{
    ChebyshevNodes, PhaseState, Problem, QuadratureRule, SolverConfig, SolverStrategy, SpectralIntegrator,
};

fn stage_matrix(n: usize, h: f64) -> DMatrix<f64> {
    let quad = QuadratureRule::gauss_legendre(2 * n).unwrap();
    let table = ChebyshevNodes::new(n, h).unwrap().tabulate(&quad);
    assemble_a(&table, &quad, &DMatrix::identity(1, 1)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_partition_of_unity(n in 2usize..20, h in 0.01f64..50.0, s in 0.0f64..1.0) {
        let nodes = ChebyshevNodes::new(n, h).unwrap();
        let t = s * h;
        let sum: f64 = nodes.eval(t).iter().sum();
        let dsum: f64 = nodes.deriv(t).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(dsum.abs() * h < 1e-9 * (n * n) as f64);
    }

    #[test]
    fn stage_matrix_scales_with_step(n in 2usize..12, h in 0.05f64..20.0) {
        let a1 = stage_matrix(n, 1.0);
        let ah = stage_matrix(n, h);
        let mut scale = DMatrix::identity(n, n);
        for r in 1..n {
            scale[(r, r)] = 1.0 / h;
        }
        let predicted = scale * a1;
        prop_assert!((&ah - &predicted).amax() <= 1e-12 * predicted.amax());
    }

    #[test]
    fn gauss_rules_are_exact(m in 1usize..26, k in 0usize..51) {
        prop_assume!(k <= 2 * m - 1);
        let rule = QuadratureRule::gauss_legendre(m).unwrap();
        let got = rule.integrate_fn(1.0, |t| t.powi(k as i32));
        prop_assert!((got * (k + 1) as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_step_is_area_preserving(n in 2usize..10, h in 0.05f64..2.0) {
        let integ = SpectralIntegrator::new(Problem::harmonic(1.0, 0.0).lagrangian(), n, h).unwrap();
        let cfg = SolverConfig::default();
        let mut m = DMatrix::zeros(2, 2);
        for (col, (q, p)) in [(1.0, 0.0), (0.0, 1.0)].into_iter().enumerate() {
            let r = integ.step(&PhaseState::new(vec![q], vec![p], 0.0), &cfg).unwrap();
            m[(0, col)] = r.next.q[0];
            m[(1, col)] = r.next.p[0];
        }
        prop_assert!((m.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_and_newton_agree(n in 3usize..10, frac in 0.05f64..0.95, q0 in -2.0f64..2.0, p0 in -2.0f64..2.0) {
        let sys = Problem::harmonic(1.0, 0.0).lagrangian();
        let bound = SpectralIntegrator::new(sys.clone(), n, 0.1).unwrap().contraction_bound(1.0).unwrap();
        let integ = SpectralIntegrator::new(sys, n, frac * bound.min(1.0)).unwrap();
        let state = PhaseState::new(vec![q0], vec![p0], 0.0);
        let fp = integ.step(&state, &SolverConfig::default().with_strategy(SolverStrategy::FixedPoint)).unwrap();
        let nt = integ.step(&state, &SolverConfig::default().with_strategy(SolverStrategy::Newton)).unwrap();
        prop_assert!((fp.coeffs.to_flat() - nt.coeffs.to_flat()).amax() <= 1e-11);
    }

    #[test]
    fn kepler_angular_momentum_per_step(e in 0.0f64..0.7, n in 6usize..14) {
        let v = (1.0 + e).sqrt();
        let p = Problem::kepler_with(1.0, [1.0, 0.0], [0.0, v]).unwrap();
        let integ = SpectralIntegrator::new(p.lagrangian(), n, 0.4).unwrap();
        let traj = integ.integrate(&p.initial, 10, &SolverConfig::default()).unwrap();
        let l = |s: &PhaseState| s.q[0] * s.p[1] - s.q[1] * s.p[0];
        for w in traj.states.windows(2) {
            prop_assert!((l(&w[1]) - l(&w[0])).abs() <= 1e-11);
        }
    }

    #[test]
    fn drift_ratio_of_constant_offset_is_one(len in 10usize..200, c in 1e-6f64..1.0) {
        let series = vec![c; len];
        prop_assert!((drift_ratio(&series).unwrap() - 1.0).abs() < 1e-12);
    }
}
