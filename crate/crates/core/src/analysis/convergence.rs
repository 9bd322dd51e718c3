use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultirateSystem, QuadratureSpec, State, TimeGrid, Trajectory};
use crate::solver::{integrate, Mode, SolverConfig};

use super::{error_norms, ErrorNorms};

/// Errors of a refinement sweep and the observed orders between successive
/// rows.
///
/// `steps` is the refined step size: `ΔT` for [`convergence_study`] and `Δt`
/// for [`micro_refinement_study`]. Failed rows carry `NaN` errors and a
/// message in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub steps: Vec<f64>,
    pub macro_steps: Vec<f64>,
    pub micro_per_macro: Vec<usize>,
    pub errors_q_mac: Vec<f64>,
    pub errors_p_mac: Vec<f64>,
    pub errors_q_mic: Vec<f64>,
    pub errors_p_mic: Vec<f64>,
    pub failures: Vec<Option<String>>,
    pub orders_q_mac: Vec<f64>,
    pub orders_p_mac: Vec<f64>,
    pub orders_q_mic: Vec<f64>,
    pub orders_p_mic: Vec<f64>,
}

impl ConvergenceTable {
    fn from_rows(rows: Vec<(f64, f64, usize, std::result::Result<ErrorNorms, String>)>) -> Self {
        let mut t = ConvergenceTable {
            steps: Vec::new(),
            macro_steps: Vec::new(),
            micro_per_macro: Vec::new(),
            errors_q_mac: Vec::new(),
            errors_p_mac: Vec::new(),
            errors_q_mic: Vec::new(),
            errors_p_mic: Vec::new(),
            failures: Vec::new(),
            orders_q_mac: Vec::new(),
            orders_p_mac: Vec::new(),
            orders_q_mic: Vec::new(),
            orders_p_mic: Vec::new(),
        };
        for (step, dt_macro, p, res) in rows {
            t.steps.push(step);
            t.macro_steps.push(dt_macro);
            t.micro_per_macro.push(p);
            let e = match res {
                Ok(e) => {
                    t.failures.push(None);
                    e
                }
                Err(msg) => {
                    t.failures.push(Some(msg));
                    ErrorNorms {
                        q_mac: f64::NAN,
                        p_mac: f64::NAN,
                        q_mic: f64::NAN,
                        p_mic: f64::NAN,
                    }
                }
            };
            t.errors_q_mac.push(e.q_mac);
            t.errors_p_mac.push(e.p_mac);
            t.errors_q_mic.push(e.q_mic);
            t.errors_p_mic.push(e.p_mic);
        }
        t.orders_q_mac = observed_orders(&t.steps, &t.errors_q_mac);
        t.orders_p_mac = observed_orders(&t.steps, &t.errors_p_mac);
        t.orders_q_mic = observed_orders(&t.steps, &t.errors_q_mic);
        t.orders_p_mic = observed_orders(&t.steps, &t.errors_p_mic);
        t
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Pairwise slopes `ln(e_i / e_{i+1}) / ln(h_i / h_{i+1})`; for halvings
/// this is `log2(e(h) / e(h/2))`. Non-positive or missing errors give `NaN`.
pub fn observed_orders(steps: &[f64], errors: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| {
            if e[0] > 0.0 && e[1] > 0.0 {
                (e[0] / e[1]).ln() / (h[0] / h[1]).ln()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Least-squares slope of `ln e` against `ln h` over the rows with positive
/// finite errors.
pub fn fitted_order(steps: &[f64], errors: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = steps
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(h, e)| (h.ln(), e.ln()))
        .unzip();
    if x.len() < 2 {
        return f64::NAN;
    }
    super::linear_slope(&x, &y)
}

/// Single-rate (`p = 1`) run of the same quadrature with a small step, used
/// as the reference solution of a convergence study.
pub fn reference_trajectory(
    sys: &MultirateSystem,
    x0: &State,
    quad: &QuadratureSpec,
    macro_step: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<Trajectory> {
    let grid = TimeGrid::spanning(macro_step, 1, 0.0, t_end)?;
    let mode = if quad.is_explicit_solvable(1) {
        Mode::Explicit
    } else {
        Mode::ImplicitDel
    };
    Ok(integrate(x0, sys, quad, &grid, config, mode)?.trajectory)
}

fn run_row(
    sys: &MultirateSystem,
    x0: &State,
    quad: &QuadratureSpec,
    mode: Mode,
    grid: Result<TimeGrid>,
    reference: &Trajectory,
    config: &SolverConfig,
) -> std::result::Result<ErrorNorms, String> {
    let grid = grid.map_err(|e| e.to_string())?;
    let run = integrate(x0, sys, quad, &grid, config, mode).map_err(|e| e.to_string())?;
    error_norms(&run.trajectory, reference).map_err(|e| e.to_string())
}

/// Errors against `reference` for a sequence of decreasing macro steps at a
/// fixed ratio `p`. Rows run in parallel; a failing row is recorded, not
/// fatal.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    sys: &MultirateSystem,
    x0: &State,
    quad: &QuadratureSpec,
    mode: Mode,
    micro_per_macro: usize,
    macro_steps: &[f64],
    t_end: f64,
    reference: &Trajectory,
    config: &SolverConfig,
) -> Result<ConvergenceTable> {
    if macro_steps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("macro steps must be strictly decreasing".into()));
    }
    if micro_per_macro == 0 {
        return Err(Error::InvalidArgument("micro_per_macro must be at least 1".into()));
    }
    let t0 = reference.grid.t0();
    let rows = macro_steps
        .par_iter()
        .map(|&h| {
            let grid = TimeGrid::spanning(h, micro_per_macro, t0, t_end);
            (h, h, micro_per_macro, run_row(sys, x0, quad, mode, grid, reference, config))
        })
        .collect();
    Ok(ConvergenceTable::from_rows(rows))
}

/// Keeps `ΔT` fixed and refines only the micro grid through the ratios in
/// `ratios`. Orders are measured against `Δt`.
#[allow(clippy::too_many_arguments)]
pub fn micro_refinement_study(
    sys: &MultirateSystem,
    x0: &State,
    quad: &QuadratureSpec,
    mode: Mode,
    macro_step: f64,
    ratios: &[usize],
    t_end: f64,
    reference: &Trajectory,
    config: &SolverConfig,
) -> Result<ConvergenceTable> {
    if ratios.windows(2).any(|w| !(w[1] > w[0])) || ratios.first() == Some(&0) {
        return Err(Error::InvalidArgument("ratios must be positive and strictly increasing".into()));
    }
    let t0 = reference.grid.t0();
    let rows = ratios
        .par_iter()
        .map(|&p| {
            let grid = TimeGrid::spanning(macro_step, p, t0, t_end);
            let dt = macro_step / p as f64;
            (dt, macro_step, p, run_row(sys, x0, quad, mode, grid, reference, config))
        })
        .collect();
    Ok(ConvergenceTable::from_rows(rows))
}
