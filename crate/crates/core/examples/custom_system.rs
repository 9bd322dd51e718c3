//! Building a system by hand: a pendulum (slow) carrying a stiff spring
//! (fast). Gradients are checked against finite differences before use.

use multirate::prelude::*;
use multirate::systems::probe_states;
use nalgebra::{DMatrix, DVector};

fn main() -> multirate::Result<()> {
    let k = 2500.0;
    // V(θ, r) = -(1 + r) cos θ, W(r) = ½ k r²
    let sys = MultirateSystem::builder(DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.1)
        .slow_potential(
            |s, f| -(1.0 + f[0]) * s[0].cos(),
            |s, f| (DVector::from_element(1, (1.0 + f[0]) * s[0].sin()), DVector::from_element(1, -s[0].cos())),
        )
        .fast_potential(move |f| 0.5 * k * f[0] * f[0], move |f| f * k)
        .fast_hessian(move |_| DMatrix::from_element(1, 1, k))
        .build()?;
    let x0 = State {
        q_slow: DVector::from_element(1, 1.0),
        q_fast: DVector::zeros(1),
        p_slow: DVector::zeros(1),
        p_fast: DVector::zeros(1),
    };

    let check = validate_system(&sys, &probe_states(&x0, 0.5, 20, 3), 1e-6)?;
    println!("gradient check passed: {} (max deviation {:.2e})", check.passed, check.max_deviation);

    let grid = TimeGrid::spanning(0.05, 8, 0.0, 50.0)?;
    let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &SolverConfig::default(), Mode::ImplicitDel)?;
    let e = energy_series(&run.trajectory, &sys);
    let end = run.trajectory.final_state();
    println!("theta(50) = {:.6}, r(50) = {:.3e}", end.q_slow[0], end.q_fast[0]);
    println!("max relative energy deviation {:.3e}", e.max_relative_deviation());
    Ok(())
}
