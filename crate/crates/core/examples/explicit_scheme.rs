//! The explicit multirate scheme (slow force only at macro nodes, fast rule
//! at interval ends) needs no Newton solve and reproduces the implicit DEL
//! solution step for step.

use multirate::prelude::*;

fn main() -> multirate::Result<()> {
    let (sys, x0) = build_fpu(&FpuConfig::default())?;
    let grid = TimeGrid::new(0.1, 10, 200, 0.0)?;
    let quad = QuadratureSpec::explicit(0.5, 0.5);
    let cfg = SolverConfig::with_tol(1e-12);

    let fast = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::Explicit)?;
    let del = integrate(&x0, &sys, &quad, &grid, &cfg, Mode::ImplicitDel)?;
    let gap = (fast.trajectory.final_state().to_phase_vector() - del.trajectory.final_state().to_phase_vector()).amax();
    println!("explicit newton iterations {}", fast.total_newton_iters());
    println!("implicit newton iterations {}", del.total_newton_iters());
    println!("final state difference     {gap:.3e}");
    Ok(())
}
