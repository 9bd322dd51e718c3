//! Long FPU run with the midpoint-midpoint scheme: total energy stays close
//! to its initial value and the stiff-spring energy is nearly conserved.

use multirate::prelude::*;

fn main() -> multirate::Result<()> {
    let (sys, x0) = build_fpu(&FpuConfig::default())?;
    let grid = TimeGrid::new(0.3, 10, 667, 0.0)?;
    let quad = QuadratureSpec::midpoint_midpoint();
    let run = integrate(&x0, &sys, &quad, &grid, &SolverConfig::default(), Mode::ImplicitDel)?;

    let e = energy_series(&run.trajectory, &sys);
    println!("macro steps        {}", grid.n_macro());
    println!("newton iterations  {}", run.total_newton_iters());
    println!("max |H - H0| / H0  {:.3e}", e.max_relative_deviation());
    println!("drift slope        {:.3e}", e.relative_drift_slope());
    if let Some(stiff) = &e.stiff_total {
        let (lo, hi) = stiff.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("stiff energy in    [{lo:.4}, {hi:.4}]");
    }
    Ok(())
}
