//! Variational multirate integrators for mechanical systems with slow and
//! fast dynamics.
//!
//! Slow variables live on a macro grid with step `ΔT`, fast variables on a
//! nested micro grid with step `Δt = ΔT / p`. Each macro step solves the
//! discrete Euler-Lagrange equations of a discrete Lagrangian built from
//! linear interpolation and configurable affine quadrature rules, which makes
//! the resulting maps symplectic and momentum-map preserving.
//!
//! ```no_run
//! use multirate::prelude::*;
//!
//! let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
//! let grid = TimeGrid::new(0.3, 10, 100, 0.0).unwrap();
//! let quad = QuadratureSpec::midpoint_midpoint();
//! let run = integrate(&x0, &sys, &quad, &grid, &SolverConfig::default(), Mode::ImplicitDel).unwrap();
//! let energy = energy_series(&run.trajectory, &sys);
//! println!("final total energy {}", energy.total.last().unwrap());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod discretization;
pub mod error;
pub mod model;
pub mod schemes;
pub mod solver;
pub mod systems;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::analysis::{
        angular_momentum_series, convergence_study, empirical_stability_probe, energy_series,
        error_norms, micro_refinement_study, stability_report, ConvergenceTable, EnergySeries,
        StabilityReport, StabilityRule,
    };
    pub use crate::error::{Error, Result};
    pub use crate::model::{
        build_time_grid, validate_system, MultirateSystem, QuadratureRule, QuadratureSpec,
        SlowPlacement, State, TimeGrid, Trajectory,
    };
    pub use crate::schemes::PqSchemeKind;
    pub use crate::solver::{integrate, JacobianMode, LinearSolverKind, Mode, SolverConfig, StepStats};
    pub use crate::systems::{build_fpu, build_spring_ring, FpuConfig, SpringRingConfig};
}
