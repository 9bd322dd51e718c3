use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::jacobian::solve_lu;
use super::SolverConfig;

/// Per-step solver statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub newton_iters: usize,
    /// ∞-norm of the final residual.
    pub residual_norm: f64,
    /// Time spent in linear solves.
    pub solve_time: Duration,
    /// Time spent assembling Jacobians.
    pub jacobian_time: Duration,
}

/// Plain Newton iteration on `residual(x) = 0`.
///
/// `update(x, r, stats)` returns the Newton correction `δ` solving `J δ = -r`
/// and is responsible for timing its assembly and solve phases.
pub(crate) fn newton<R, U>(
    mut x: DVector<f64>,
    mut residual: R,
    mut update: U,
    config: &SolverConfig,
) -> Result<(DVector<f64>, StepStats)>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    U: FnMut(&DVector<f64>, &DVector<f64>, &mut StepStats) -> Result<DVector<f64>>,
{
    let mut stats = StepStats::default();
    loop {
        let r = residual(&x)?;
        let norm = r.amax();
        stats.residual_norm = norm;
        if !norm.is_finite() {
            return Err(Error::AbortedStep(format!(
                "non-finite residual after {} Newton iterations",
                stats.newton_iters
            )));
        }
        if norm <= config.newton_tol {
            return Ok((x, stats));
        }
        if stats.newton_iters >= config.max_newton_iters {
            return Err(Error::Divergence {
                iterations: stats.newton_iters,
                residual_norm: norm,
            });
        }
        let delta = update(&x, &r, &mut stats)?;
        x += delta;
        stats.newton_iters += 1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::AbortedStep(format!(
                "non-finite Newton iterate at iteration {}",
                stats.newton_iters
            )));
        }
    }
}

/// Central-difference Jacobian with componentwise step `h (1 + |x_i|)`.
pub(crate) fn fd_jacobian<R>(x: &DVector<f64>, residual: &mut R, h: f64) -> Result<DMatrix<f64>>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut xp = x.clone();
    for i in 0..n {
        let hi = h * (1.0 + x[i].abs());
        xp[i] = x[i] + hi;
        let rp = residual(&xp)?;
        xp[i] = x[i] - hi;
        let rm = residual(&xp)?;
        xp[i] = x[i];
        let j = jac.get_or_insert_with(|| DMatrix::zeros(rp.len(), n));
        j.set_column(i, &((rp - rm) / (2.0 * hi)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Newton with a dense finite-difference Jacobian.
pub(crate) fn newton_fd<R>(
    x0: DVector<f64>,
    mut residual: R,
    config: &SolverConfig,
) -> Result<(DVector<f64>, StepStats)>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let fd_step = config.fd_step;
    // the residual closure is needed both for evaluation and differencing
    let cell = std::cell::RefCell::new(&mut residual);
    newton(
        x0,
        |x| (cell.borrow_mut())(x),
        |x, r, stats| {
            let t = Instant::now();
            let j = fd_jacobian(x, &mut *cell.borrow_mut(), fd_step)?;
            stats.jacobian_time += t.elapsed();
            let t = Instant::now();
            let d = solve_lu(j, &-r);
            stats.solve_time += t.elapsed();
            d
        },
        config,
    )
}

pub(crate) fn add_stats(total: &mut StepStats, s: &StepStats) {
    total.newton_iters += s.newton_iters;
    total.residual_norm = total.residual_norm.max(s.residual_norm);
    total.solve_time += s.solve_time;
    total.jacobian_time += s.jacobian_time;
}
