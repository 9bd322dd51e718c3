//! Spring ring in a vertical field: the angular momentum about the vertical
//! axis is preserved by the discrete flow up to the Newton tolerance.

use multirate::prelude::*;
use nalgebra::Vector3;

fn main() -> multirate::Result<()> {
    let (sys, x0) = build_spring_ring(&SpringRingConfig::default())?;
    let grid = TimeGrid::spanning(0.01, 5, 0.0, 5.0)?;
    let cfg = SolverConfig::with_tol(1e-11);
    let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel)?;

    let lz = angular_momentum_series(&run.trajectory, &sys, &Vector3::z())?;
    let drift = lz.iter().map(|l| (l - lz[0]).abs()).fold(0.0, f64::max);
    println!("L_z(0) = {:.12}", lz[0]);
    println!("max |L_z - L_z(0)| = {drift:.3e} over {} macro steps", lz.len() - 1);
    Ok(())
}
