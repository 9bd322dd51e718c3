//! Macro-step convergence of the three schemes on the FPU chain, measured
//! against a fine single-rate reference.

use multirate::analysis::{fitted_order, reference_trajectory};
use multirate::prelude::*;

fn main() -> multirate::Result<()> {
    let (sys, x0) = build_fpu(&FpuConfig::default())?;
    let steps = [0.04, 0.02, 0.01, 0.005];
    let t_end = 0.4;
    let cfg = SolverConfig::with_tol(1e-11);
    let schemes = [
        ("midpoint-midpoint", QuadratureSpec::midpoint_midpoint()),
        ("trapezoidal-midpoint", QuadratureSpec::trapezoidal_midpoint(1.0)),
        ("trapezoidal-trapezoidal", QuadratureSpec::trapezoidal_trapezoidal(1.0, 1.0)),
    ];
    for (name, quad) in schemes {
        let reference = reference_trajectory(&sys, &x0, &quad, 1e-5, t_end, &SolverConfig::with_tol(1e-9))?;
        let t = convergence_study(&sys, &x0, &quad, Mode::ImplicitDel, 5, &steps, t_end, &reference, &cfg)?;
        println!("{name}");
        for i in 0..t.len() {
            println!("  dT {:<7} q err {:.3e}  p err {:.3e}", t.steps[i], t.errors_q_mac[i], t.errors_p_mac[i]);
        }
        println!("  fitted order q {:.2}  p {:.2}", fitted_order(&t.steps, &t.errors_q_mac), fitted_order(&t.steps, &t.errors_p_mac));
    }
    Ok(())
}
