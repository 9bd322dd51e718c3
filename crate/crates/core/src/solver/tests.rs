use nalgebra::{DMatrix, Matrix4, Vector4};

use super::*;
use crate::model::{QuadratureRule, SlowPlacement};
use crate::systems::{build_fpu, probe_states, FpuConfig};

/// One slow and one fast coordinate with linear forces.
fn linear_toy(with_hessians: bool) -> MultirateSystem {
    let (ks, c, w2) = (3.0, 0.7, 400.0);
    let mut b = MultirateSystem::builder(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 0.5))
        .slow_potential(
            move |s, f| 0.5 * ks * s[0] * s[0] + c * s[0] * f[0],
            move |s, f| (DVector::from_element(1, ks * s[0] + c * f[0]), DVector::from_element(1, c * s[0])),
        )
        .fast_potential(move |f| 0.5 * w2 * f[0] * f[0], move |f| f * w2);
    if with_hessians {
        b = b
            .slow_hessian(move |_, _| DMatrix::from_row_slice(2, 2, &[ks, c, c, 0.0]))
            .fast_hessian(move |_| DMatrix::from_element(1, 1, w2));
    }
    b.build().unwrap()
}

fn toy_state() -> State {
    State {
        q_slow: DVector::from_element(1, 0.4),
        q_fast: DVector::from_element(1, -0.05),
        p_slow: DVector::from_element(1, 0.3),
        p_fast: DVector::from_element(1, 1.2),
    }
}

fn fpu() -> (MultirateSystem, State) {
    build_fpu(&FpuConfig::default()).unwrap()
}

#[test]
fn free_particle_drifts_exactly() {
    let sys = MultirateSystem::builder(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 3.0)
        .build()
        .unwrap();
    let x0 = State {
        q_slow: DVector::from_vec(vec![1.0, -1.0]),
        q_fast: DVector::from_element(1, 0.0),
        p_slow: DVector::from_vec(vec![0.5, 2.0]),
        p_fast: DVector::from_element(1, 3.0),
    };
    let grid = TimeGrid::new(0.1, 4, 10, 0.0).unwrap();
    let cfg = SolverConfig::default();
    let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel).unwrap();
    assert!(run.steps.iter().all(|s| s.newton_iters <= 1));
    let traj = &run.trajectory;
    for j in 0..grid.n_fast_nodes() {
        let t = grid.fast_node_time(j);
        assert!((traj.fast_q.row(j)[0] - t).abs() < 1e-12, "{j}: {} vs {t}", traj.fast_q.row(j)[0]);
        assert!((traj.fast_p.row(j)[0] - 3.0).abs() < 1e-10);
    }
    for k in 0..=10 {
        let t = grid.macro_time(k);
        assert!((traj.slow_q.row(k)[0] - (1.0 + 0.5 * t)).abs() < 1e-12);
        assert!((traj.slow_p.row(k)[1] - 2.0).abs() < 1e-10);
    }
}

#[test]
fn residual_vanishes_at_solution_and_grows_linearly() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.05, 3, 1, 0.0).unwrap();
    let quad = QuadratureSpec::midpoint_midpoint();
    let step = initial_step(&x0, &sys, &quad, &grid, &SolverConfig::default()).unwrap();
    let r0 = del_residual(&x0, &step.q_slow, &step.fast_q, &sys, &quad, &grid).unwrap();
    assert!(r0.amax() <= 1e-9);
    let mut norms = Vec::new();
    for delta in [1e-3, 2e-3, 4e-3] {
        let mut f = step.fast_q.clone();
        f[1][0] += delta;
        norms.push(del_residual(&x0, &step.q_slow, &f, &sys, &quad, &grid).unwrap().amax());
    }
    assert!((norms[1] / norms[0] - 2.0).abs() < 0.01);
    assert!((norms[2] / norms[1] - 2.0).abs() < 0.01);
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let (sys, x0) = fpu();
    let quads = [
        QuadratureSpec::midpoint_midpoint(),
        QuadratureSpec::trapezoidal_midpoint(1.0),
        QuadratureSpec::trapezoidal_trapezoidal(0.5, 0.5),
        QuadratureSpec::new(0.3, 0.8, 0.6, 0.25).unwrap(),
        QuadratureSpec::explicit(0.0, 1.0),
    ];
    for (i, s) in probe_states(&x0, 0.3, 4, 17).iter().enumerate() {
        for quad in &quads {
            for p in [1, 2, 5] {
                let grid = TimeGrid::new(0.1, p, 1, 0.0).unwrap();
                let b = &s.q_slow + DVector::from_element(3, 0.05);
                let fast: Vec<_> = (1..=p).map(|m| &s.q_fast * (1.0 - 0.1 * m as f64)).collect();
                let analytic = SolverConfig {
                    jacobian_mode: JacobianMode::Analytic,
                    ..SolverConfig::default()
                };
                let fd = SolverConfig {
                    jacobian_mode: JacobianMode::FiniteDifference,
                    fd_step: 1e-6,
                    ..SolverConfig::default()
                };
                let ja = del_jacobian(s, &b, &fast, &sys, quad, &grid, &analytic).unwrap().to_dense();
                let jf = del_jacobian(s, &b, &fast, &sys, quad, &grid, &fd).unwrap().to_dense();
                let scale = ja.amax().max(1.0);
                assert!((&ja - &jf).amax() <= 1e-5 * scale, "probe {i} {quad:?} p={p}: {}", (&ja - &jf).amax());
            }
        }
    }
}

#[test]
fn jacobian_is_zero_outside_the_band() {
    let (sys, x0) = fpu();
    let p = 6;
    let grid = TimeGrid::new(0.1, p, 1, 0.0).unwrap();
    let quad = QuadratureSpec::midpoint_midpoint();
    let prob = StepProblem::new(&x0, &sys, &quad, &grid, 0);
    let x = drift_guess(&prob);
    let mut res = |y: &DVector<f64>| prob.residual(y);
    let dense = newton::fd_jacobian(&x, &mut res, 1e-6).unwrap();
    let (ns, nf) = (3, 3);
    for r in 0..p {
        for c in 0..p {
            if c <= r && r - c <= 2 {
                continue;
            }
            let blk = dense.view((ns + r * nf, ns + c * nf), (nf, nf));
            assert!(blk.amax() < 1e-6, "block ({r}, {c})");
        }
    }
}

#[test]
fn analytic_mode_needs_hessians() {
    let sys = linear_toy(false);
    let grid = TimeGrid::new(0.1, 2, 3, 0.0).unwrap();
    let cfg = SolverConfig {
        jacobian_mode: JacobianMode::Analytic,
        ..SolverConfig::default()
    };
    let err = integrate(&toy_state(), &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel).unwrap_err();
    assert!(matches!(err.error, Error::Configuration(_)));
    // Auto falls back to finite differences
    let run = integrate(&toy_state(), &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &SolverConfig::default(), Mode::ImplicitDel);
    assert!(run.is_ok());
}

/// Implicit midpoint rule for `H = ½ pᵀM⁻¹p + ½ qᵀKq` solved as one linear system.
fn implicit_midpoint_linear(m: &[f64; 2], k: &nalgebra::Matrix2<f64>, z: &Vector4<f64>, h: f64) -> Vector4<f64> {
    let minv = nalgebra::Matrix2::new(1.0 / m[0], 0.0, 0.0, 1.0 / m[1]);
    let mut a = Matrix4::zeros();
    a.view_mut((0, 2), (2, 2)).copy_from(&minv);
    a.view_mut((2, 0), (2, 2)).copy_from(&-k);
    let id = Matrix4::identity();
    let lhs = id - a * (h / 2.0);
    let rhs = (id + a * (h / 2.0)) * z;
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn single_rate_midpoint_is_implicit_midpoint() {
    let sys = linear_toy(true);
    let x0 = toy_state();
    let h = 0.05;
    let grid = TimeGrid::new(h, 1, 20, 0.0).unwrap();
    let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &SolverConfig::with_tol(1e-12), Mode::ImplicitDel).unwrap();
    let k = nalgebra::Matrix2::new(3.0, 0.7, 0.7, 400.0);
    let mut z = Vector4::new(0.4, -0.05, 0.3, 1.2);
    for n in 1..=20 {
        z = implicit_midpoint_linear(&[2.0, 0.5], &k, &z, h);
        let s = run.trajectory.state(n);
        let got = Vector4::new(s.q_slow[0], s.q_fast[0], s.p_slow[0], s.p_fast[0]);
        assert!((got - z).amax() < 1e-10, "step {n}");
    }
}

#[test]
fn explicit_step_matches_implicit_solve() {
    let (sys, x0) = fpu();
    let cfg = SolverConfig::with_tol(1e-12);
    for (av, aw) in [(0.0, 0.0), (1.0, 1.0), (0.3, 0.5), (1.0, 0.0)] {
        for p in [1, 3, 5] {
            let quad = QuadratureSpec::explicit(av, aw);
            let grid = TimeGrid::new(0.02, p, 8, 0.0).unwrap();
            let ex = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::Explicit).unwrap();
            let im = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::ImplicitDel).unwrap();
            let diff = |a: &NodeArrayRef, b: &NodeArrayRef| {
                a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            };
            let (a, b) = (&ex.trajectory, &im.trajectory);
            for (u, v) in [
                (a.slow_q.as_slice(), b.slow_q.as_slice()),
                (a.fast_q.as_slice(), b.fast_q.as_slice()),
                (a.slow_p.as_slice(), b.slow_p.as_slice()),
                (a.fast_p.as_slice(), b.fast_p.as_slice()),
            ] {
                assert!(diff(u, v) < 1e-10, "{av} {aw} p={p}: {}", diff(u, v));
            }
            assert_eq!(ex.total_newton_iters(), 0);
        }
    }
}

type NodeArrayRef = [f64];

#[test]
fn explicit_mode_rejects_midpoint_fast_rule() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.01, 2, 2, 0.0).unwrap();
    let quad = QuadratureSpec::from_rules(QuadratureRule::LeftRectangle, QuadratureRule::Midpoint)
        .with_placement(SlowPlacement::MacroNodesOnly);
    let err = integrate(&x0, &sys, &quad, &grid, &SolverConfig::default(), Mode::Explicit).unwrap_err();
    assert!(matches!(err.error, Error::Configuration(_)));
    assert!(explicit_macro_step(&x0, &sys, &quad, &grid).is_err());
    // micro-grid slow evaluations couple the slow end node into every fast row
    let quad = QuadratureSpec::trapezoidal_trapezoidal(0.0, 0.0);
    assert!(integrate(&x0, &sys, &quad, &grid, &SolverConfig::default(), Mode::Explicit).is_err());
}

#[test]
fn zero_step_grid_keeps_initial_state() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.3, 5, 0, 0.0).unwrap();
    let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &SolverConfig::default(), Mode::ImplicitDel).unwrap();
    assert_eq!(run.trajectory.n_macro_nodes(), 1);
    assert_eq!(run.trajectory.fast_q.len(), 1);
    assert_eq!(run.trajectory.state(0), x0);
    assert!(run.steps.is_empty());
}

#[test]
fn runs_are_bit_identical() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.3, 5, 10, 0.0).unwrap();
    let quad = QuadratureSpec::trapezoidal_midpoint(0.5);
    let cfg = SolverConfig::default();
    let a = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::ImplicitDel).unwrap();
    let b = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::ImplicitDel).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn dense_and_banded_solves_agree() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.3, 10, 10, 0.0).unwrap();
    let quad = QuadratureSpec::midpoint_midpoint();
    let dense = SolverConfig::with_tol(1e-11);
    let banded = SolverConfig {
        linear_solver: LinearSolverKind::Banded,
        ..dense
    };
    let a = integrate(&x0, &sys, &quad, &grid, &dense, Mode::ImplicitDel).unwrap();
    let b = integrate(&x0, &sys, &quad, &grid, &banded, Mode::ImplicitDel).unwrap();
    let d = a
        .trajectory
        .fast_q
        .as_slice()
        .iter()
        .zip(b.trajectory.fast_q.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(d < 1e-10, "{d}");
}

#[test]
fn finite_difference_mode_agrees_with_analytic() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.1, 4, 10, 0.0).unwrap();
    let quad = QuadratureSpec::trapezoidal_trapezoidal(0.5, 0.5);
    let an = SolverConfig::with_tol(1e-11);
    let fd = SolverConfig {
        jacobian_mode: JacobianMode::FiniteDifference,
        ..an
    };
    let a = integrate(&x0, &sys, &quad, &grid, &an, Mode::ImplicitDel).unwrap();
    let b = integrate(&x0, &sys, &quad, &grid, &fd, Mode::ImplicitDel).unwrap();
    let (sa, sb) = (a.trajectory.final_state(), b.trajectory.final_state());
    assert!((sa.to_phase_vector() - sb.to_phase_vector()).amax() < 1e-9);
}

#[test]
fn certificates_hold_on_converged_runs() {
    let (sys, x0) = fpu();
    for quad in [
        QuadratureSpec::midpoint_midpoint(),
        QuadratureSpec::trapezoidal_midpoint(0.0),
        QuadratureSpec::new(0.2, 0.7, 0.4, 0.1).unwrap(),
    ] {
        let grid = TimeGrid::new(0.1, 5, 20, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let run = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::ImplicitDel).unwrap();
        let cert = certify(&run.trajectory, &sys, &quad).unwrap();
        assert_eq!(cert.n_steps, 20);
        assert!(cert.max_del_residual <= cfg.newton_tol, "{quad:?} {cert:?}");
        assert!(cert.max_momentum_mismatch <= 10.0 * cfg.newton_tol, "{quad:?} {cert:?}");
    }
}

#[test]
fn divergence_is_reported_with_partial_trajectory() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.3, 1, 50, 0.0).unwrap();
    let cfg = SolverConfig {
        max_newton_iters: 2,
        ..SolverConfig::default()
    };
    let err = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel).unwrap_err();
    assert!(matches!(err.error, Error::Divergence { .. }));
    assert_eq!(err.partial.n_macro_nodes(), err.step + 1);
}

#[test]
fn symplectic_one_step_map() {
    let (sys, x0) = fpu();
    let grid = TimeGrid::new(0.05, 3, 1, 0.0).unwrap();
    let cfg = SolverConfig::with_tol(1e-13);
    let quad = QuadratureSpec::new(0.3, 0.8, 0.6, 0.25).unwrap();
    let flow = |z: &DVector<f64>| {
        let s = State::from_phase_vector(z, 3, 3);
        initial_step(&s, &sys, &quad, &grid, &cfg).unwrap().end_state().to_phase_vector()
    };
    let z0 = x0.to_phase_vector();
    let n = z0.len();
    let mut d = DMatrix::zeros(n, n);
    let h = 1e-6;
    for j in 0..n {
        let mut zp = z0.clone();
        zp[j] += h;
        let mut zm = z0.clone();
        zm[j] -= h;
        d.set_column(j, &((flow(&zp) - flow(&zm)) / (2.0 * h)));
    }
    // phase vector ordering is [q_s, q_f, p_s, p_f]
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n / 2 {
        j[(i, n / 2 + i)] = 1.0;
        j[(n / 2 + i, i)] = -1.0;
    }
    let err = (d.transpose() * &j * &d - &j).amax();
    assert!(err < 1e-6, "{err}");
}
