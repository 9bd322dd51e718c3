//! Cost of one macro step as p grows with the micro step held fixed.

use std::time::Instant;

use multirate::prelude::*;

fn main() -> multirate::Result<()> {
    let (sys, x0) = build_fpu(&FpuConfig::default())?;
    let dt = 1e-3;
    let t_end = 2.0;
    let cfg = SolverConfig::with_tol(1e-10);
    println!("{:>4} {:>8} {:>10} {:>12} {:>14}", "p", "dT", "steps", "newton its", "s per step");
    for p in [1, 5, 10, 50, 100] {
        let d_t = dt * p as f64;
        let grid = TimeGrid::spanning(d_t, p, 0.0, t_end)?;
        let start = Instant::now();
        let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel)?;
        let per = start.elapsed().as_secs_f64() / grid.n_macro() as f64;
        println!("{p:>4} {d_t:>8.3} {:>10} {:>12} {per:>14.3e}", grid.n_macro(), run.total_newton_iters());
    }
    Ok(())
}
