//! Solution of the discrete Euler-Lagrange equations, one macro step at a
//! time.
//!
//! Each macro step is a compound nonlinear solve for
//! `x = [q^s_{k+1}; q^{f,1}_k; …; q^{f,p}_k]` given the state at node `k`.
//! The state carries the momenta `p_k^{s,+}`, `p_k^{f,0,+}` generated by the
//! previous interval (or the initial momenta), so the first step and every
//! later step share the residual
//!
//! ```text
//! [ ∂L_d/∂q^s_k + p^s_k ;  ∂L_d/∂q^{f,0} + p^f_k ;  ∂L_d/∂q^{f,m}, m = 1..p-1 ]
//! ```
//!
//! which is the discrete Euler-Lagrange system written as momentum matching.

mod jacobian;
mod newton;

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretization::{partials_with, potential_hessian_blocks, BlockPart, LagrangianPartials, PointSet};
use crate::error::{Error, Result};
use crate::model::{MultirateSystem, QuadratureSpec, State, TimeGrid, Trajectory};
use crate::schemes::{pq_step, PqSchemeKind};

pub use jacobian::ArrowheadJacobian;
pub use newton::StepStats;
pub(crate) use newton::{add_stats, newton, newton_fd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Analytic when the system supplies Hessians, finite differences otherwise.
    Auto,
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolverKind {
    /// Dense LU of the assembled Jacobian.
    Dense,
    /// Block forward substitution through the fast chain plus a slow Schur solve.
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Tolerance on the ∞-norm of the residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub jacobian_mode: JacobianMode,
    /// Relative finite-difference increment, scaled by `1 + |x_i|`.
    pub fd_step: f64,
    pub linear_solver: LinearSolverKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-9,
            max_newton_iters: 50,
            jacobian_mode: JacobianMode::Auto,
            fd_step: 1e-7,
            linear_solver: LinearSolverKind::Dense,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(newton_tol: f64) -> Self {
        SolverConfig {
            newton_tol,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::Configuration("newton_tol must be positive".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::Configuration("max_newton_iters must be at least 1".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Configuration("fd_step must be positive".into()));
        }
        Ok(())
    }

    fn resolved_mode(&self, sys: &MultirateSystem) -> Result<JacobianMode> {
        match self.jacobian_mode {
            JacobianMode::Auto if sys.has_hessians() => Ok(JacobianMode::Analytic),
            JacobianMode::Auto => Ok(JacobianMode::FiniteDifference),
            JacobianMode::Analytic if !sys.has_hessians() => Err(Error::Configuration(
                "analytic Jacobian requested but the system has no Hessians".into(),
            )),
            m => Ok(m),
        }
    }
}

/// How [`integrate`] advances each macro step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Compound Newton solve of the discrete Euler-Lagrange equations.
    ImplicitDel,
    /// Sequential mass-matrix solves; needs node-based quadrature.
    Explicit,
    /// Closed-form `(p, q)` update maps of the three named schemes.
    ClosedFormPq,
}

/// Result of one macro step: the slow node `k+1` and fast nodes `1..=p`.
/// Momenta are the ones generated by the solved interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroStep {
    pub q_slow: DVector<f64>,
    pub p_slow: DVector<f64>,
    pub fast_q: Vec<DVector<f64>>,
    pub fast_p: Vec<DVector<f64>>,
    pub stats: StepStats,
}

impl MacroStep {
    /// State at the end node of the interval.
    pub fn end_state(&self) -> State {
        State {
            q_slow: self.q_slow.clone(),
            q_fast: self.fast_q.last().expect("p >= 1").clone(),
            p_slow: self.p_slow.clone(),
            p_fast: self.fast_p.last().expect("p >= 1").clone(),
        }
    }

    fn is_finite(&self) -> bool {
        let v = [&self.q_slow, &self.p_slow];
        v.iter()
            .copied()
            .chain(self.fast_q.iter())
            .chain(self.fast_p.iter())
            .all(|x| x.iter().all(|e| e.is_finite()))
    }

    pub(crate) fn from_partials(
        q_slow: DVector<f64>,
        fast_q: Vec<DVector<f64>>,
        d: LagrangianPartials,
        stats: StepStats,
    ) -> Self {
        let mut fast_p = d.fast_left;
        fast_p.remove(0);
        MacroStep {
            q_slow,
            p_slow: d.slow_end,
            fast_q,
            fast_p,
            stats,
        }
    }
}

/// Shared data for evaluating one macro step.
struct StepProblem<'a> {
    sys: &'a MultirateSystem,
    grid: &'a TimeGrid,
    pts: PointSet,
    state: &'a State,
    /// Global index of the macro interval, for error reporting.
    k: usize,
}

impl<'a> StepProblem<'a> {
    fn new(state: &'a State, sys: &'a MultirateSystem, quad: &QuadratureSpec, grid: &'a TimeGrid, k: usize) -> Self {
        StepProblem {
            sys,
            grid,
            pts: PointSet::new(quad, grid),
            state,
            k,
        }
    }

    fn n_unknowns(&self) -> usize {
        self.sys.n_slow() + self.grid.micro_per_macro() * self.sys.n_fast()
    }

    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let (ns, nf) = (self.sys.n_slow(), self.sys.n_fast());
        let b = x.rows(0, ns).into_owned();
        let mut fast = Vec::with_capacity(self.grid.micro_per_macro() + 1);
        fast.push(self.state.q_fast.clone());
        for m in 0..self.grid.micro_per_macro() {
            fast.push(x.rows(ns + m * nf, nf).into_owned());
        }
        (b, fast)
    }

    fn pack(&self, b: &DVector<f64>, fast_micro: &[DVector<f64>]) -> DVector<f64> {
        let (ns, nf) = (self.sys.n_slow(), self.sys.n_fast());
        let mut x = DVector::zeros(self.n_unknowns());
        x.rows_mut(0, ns).copy_from(b);
        for (m, f) in fast_micro.iter().enumerate() {
            x.rows_mut(ns + m * nf, nf).copy_from(f);
        }
        x
    }

    fn globalize(&self, e: Error) -> Error {
        match e {
            Error::NonlinearEvaluation { node, message } => Error::NonlinearEvaluation {
                node: self.k * self.grid.micro_per_macro() + node,
                message,
            },
            other => other,
        }
    }

    fn partials(&self, b: &DVector<f64>, fast: &[DVector<f64>]) -> Result<LagrangianPartials> {
        partials_with(&self.pts, &self.state.q_slow, b, fast, self.sys, self.grid).map_err(|e| self.globalize(e))
    }

    fn residual_from(&self, d: &LagrangianPartials) -> DVector<f64> {
        let (ns, nf, p) = (self.sys.n_slow(), self.sys.n_fast(), self.grid.micro_per_macro());
        let mut r = DVector::zeros(self.n_unknowns());
        r.rows_mut(0, ns).copy_from(&(&d.slow_start + &self.state.p_slow));
        r.rows_mut(ns, nf).copy_from(&(d.fast(0) + &self.state.p_fast));
        for m in 1..p {
            r.rows_mut(ns + m * nf, nf).copy_from(&d.fast(m));
        }
        r
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (b, fast) = self.unpack(x);
        Ok(self.residual_from(&self.partials(&b, &fast)?))
    }

    fn analytic_jacobian(&self, x: &DVector<f64>) -> Result<ArrowheadJacobian> {
        let (ns, nf, p) = (self.sys.n_slow(), self.sys.n_fast(), self.grid.micro_per_macro());
        let d_t = self.grid.macro_step();
        let dt = self.grid.micro_step();
        let mut j = ArrowheadJacobian::zeros(ns, nf, p);
        j.ss -= self.sys.mass_slow() / d_t;
        let mf = self.sys.mass_fast() / dt;
        for r in 0..p {
            // column block c holds node c + 1
            *j.fast_block_mut(r, r).expect("band") -= &mf;
            if r >= 1 {
                *j.fast_block_mut(r, r - 1).expect("band") += &mf * 2.0;
            }
            if r >= 2 {
                *j.fast_block_mut(r, r - 2).expect("band") -= &mf;
            }
        }
        let (b, fast) = self.unpack(x);
        potential_hessian_blocks(&self.pts, &self.state.q_slow, &b, &fast, self.sys, self.grid, |row, col, c, h, part| {
            let sub = match part {
                BlockPart::SlowSlow => h.view((0, 0), (ns, ns)),
                BlockPart::SlowFast => h.view((0, ns), (ns, nf)),
                BlockPart::FastSlow => h.view((ns, 0), (nf, ns)),
                BlockPart::FastFast => h.view((ns, ns), (nf, nf)),
                BlockPart::Whole => h.view((0, 0), (nf, nf)),
            };
            match (row, col) {
                (None, None) => j.ss += sub * c,
                (None, Some(node)) => {
                    let mut v = j.sf.view_mut((0, (node - 1) * nf), (ns, nf));
                    v += sub * c;
                }
                (Some(i), None) => {
                    let mut v = j.fs.view_mut((i * nf, 0), (nf, ns));
                    v += sub * c;
                }
                (Some(i), Some(node)) => {
                    let blk = j.fast_block_mut(i, node - 1).expect("fast coupling outside band");
                    *blk += sub * c;
                }
            }
        })
        .map_err(|e| self.globalize(e))?;
        Ok(j)
    }

    fn jacobian(&self, x: &DVector<f64>, config: &SolverConfig, mode: JacobianMode) -> Result<ArrowheadJacobian> {
        match mode {
            JacobianMode::FiniteDifference => {
                let mut res = |y: &DVector<f64>| self.residual(y);
                let d = newton::fd_jacobian(x, &mut res, config.fd_step)?;
                Ok(ArrowheadJacobian::from_dense(&d, self.sys.n_slow(), self.sys.n_fast(), self.grid.micro_per_macro()))
            }
            _ => self.analytic_jacobian(x),
        }
    }

    fn solve(&self, x0: DVector<f64>, config: &SolverConfig) -> Result<MacroStep> {
        let mode = config.resolved_mode(self.sys)?;
        let (x, stats) = newton(
            x0,
            |x| self.residual(x),
            |x, r, stats| {
                let t = Instant::now();
                let j = self.jacobian(x, config, mode)?;
                stats.jacobian_time += t.elapsed();
                let t = Instant::now();
                let rhs = -r;
                let d = match config.linear_solver {
                    LinearSolverKind::Dense => j.solve_dense(&rhs),
                    LinearSolverKind::Banded => j.solve_banded(&rhs),
                };
                stats.solve_time += t.elapsed();
                d
            },
            config,
        )?;
        let (b, fast) = self.unpack(&x);
        let d = self.partials(&b, &fast)?;
        let step = MacroStep::from_partials(b, fast[1..].to_vec(), d, stats);
        if !step.is_finite() {
            return Err(Error::AbortedStep(format!("non-finite state after macro step {}", self.k)));
        }
        Ok(step)
    }
}

fn check_inputs(state: &State, sys: &MultirateSystem, quad: &QuadratureSpec, config: Option<&SolverConfig>) -> Result<()> {
    sys.check_state(state)?;
    quad.validate()?;
    if let Some(c) = config {
        c.validate()?;
    }
    Ok(())
}

fn check_unknowns(sys: &MultirateSystem, grid: &TimeGrid, q_slow_next: &DVector<f64>, fast_micro: &[DVector<f64>]) -> Result<()> {
    if q_slow_next.len() != sys.n_slow()
        || fast_micro.len() != grid.micro_per_macro()
        || fast_micro.iter().any(|f| f.len() != sys.n_fast())
    {
        return Err(Error::InvalidArgument("macro step unknowns have wrong shape".into()));
    }
    Ok(())
}

/// Discrete Euler-Lagrange residual of the step starting at `state` for the
/// candidate unknowns `q^s_{k+1}` and `q^{f,1..=p}_k`.
pub fn del_residual(
    state: &State,
    q_slow_next: &DVector<f64>,
    fast_micro: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<DVector<f64>> {
    check_inputs(state, sys, quad, None)?;
    check_unknowns(sys, grid, q_slow_next, fast_micro)?;
    let prob = StepProblem::new(state, sys, quad, grid, 0);
    prob.residual(&prob.pack(q_slow_next, fast_micro))
}

/// Newton Jacobian of [`del_residual`] with respect to the stacked unknowns.
pub fn del_jacobian(
    state: &State,
    q_slow_next: &DVector<f64>,
    fast_micro: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<ArrowheadJacobian> {
    check_inputs(state, sys, quad, Some(config))?;
    check_unknowns(sys, grid, q_slow_next, fast_micro)?;
    let mode = config.resolved_mode(sys)?;
    let prob = StepProblem::new(state, sys, quad, grid, 0);
    prob.jacobian(&prob.pack(q_slow_next, fast_micro), config, mode)
}

fn drift_guess(prob: &StepProblem) -> DVector<f64> {
    let s = prob.state;
    let sys = prob.sys;
    let b = &s.q_slow + sys.mass_slow_inv() * &s.p_slow * prob.grid.macro_step();
    let vf = sys.mass_fast_inv() * &s.p_fast;
    let dt = prob.grid.micro_step();
    let fast: Vec<_> = (1..=prob.grid.micro_per_macro())
        .map(|m| &s.q_fast + &vf * (m as f64 * dt))
        .collect();
    prob.pack(&b, &fast)
}

/// First macro step from the initial configuration and momenta.
pub fn initial_step(
    x0: &State,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<MacroStep> {
    check_inputs(x0, sys, quad, Some(config))?;
    let prob = StepProblem::new(x0, sys, quad, grid, 0);
    prob.solve(drift_guess(&prob), config)
}

/// Macro step `k` from the state at node `k` (momenta generated by interval
/// `k-1`) and the previous slow node `q^s_{k-1}`, used for the initial guess.
pub fn macro_step(
    state: &State,
    q_slow_prev: &DVector<f64>,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<MacroStep> {
    check_inputs(state, sys, quad, Some(config))?;
    macro_step_at(state, Some(q_slow_prev), sys, quad, grid, config, 1)
}

fn macro_step_at(
    state: &State,
    q_slow_prev: Option<&DVector<f64>>,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
    k: usize,
) -> Result<MacroStep> {
    let prob = StepProblem::new(state, sys, quad, grid, k);
    let guess = match q_slow_prev {
        Some(prev) => {
            let b = &state.q_slow * 2.0 - prev;
            let fast = vec![state.q_fast.clone(); grid.micro_per_macro()];
            prob.pack(&b, &fast)
        }
        None => drift_guess(&prob),
    };
    prob.solve(guess, config)
}

/// Macro step by sequential linear solves, available when every potential
/// evaluation sits on a node (see [`QuadratureSpec::is_explicit_solvable`]).
pub fn explicit_macro_step(
    state: &State,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<MacroStep> {
    check_inputs(state, sys, quad, None)?;
    explicit_step_at(state, sys, quad, grid, 0)
}

fn explicit_step_at(state: &State, sys: &MultirateSystem, quad: &QuadratureSpec, grid: &TimeGrid, k: usize) -> Result<MacroStep> {
    let p = grid.micro_per_macro();
    if !quad.is_explicit_solvable(p) {
        return Err(Error::Configuration(
            "quadrature is not explicitly solvable: the fast rule must use nodes only and the slow rule macro nodes only".into(),
        ));
    }
    let d_t = grid.macro_step();
    let dt = grid.micro_step();
    let lam_v = quad.slow_left_weight();
    let lam_w = quad.fast_left_weight();
    let a = &state.q_slow;
    let f0 = &state.q_fast;
    let check = |v: &DVector<f64>, node: usize, what: &str| -> Result<()> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonlinearEvaluation {
                node: k * p + node,
                message: format!("{what} is not finite"),
            })
        }
    };

    // slow and fast forces at the left macro node
    let (mut gs0, mut gf0) = (DVector::zeros(sys.n_slow()), DVector::zeros(sys.n_fast()));
    if lam_v != 0.0 {
        let (gs, gf) = sys.slow_gradient(a, f0);
        check(&gs, 0, "slow gradient")?;
        check(&gf, 0, "slow gradient")?;
        gs0 = gs * (d_t * lam_v);
        gf0 = gf * (d_t * lam_v);
    }
    let b = a + sys.mass_slow_inv() * (&state.p_slow - &gs0) * d_t;

    let mut fast = Vec::with_capacity(p + 1);
    fast.push(f0.clone());
    let mut force0 = gf0;
    if lam_w != 0.0 {
        let gw = sys.fast_gradient(f0);
        check(&gw, 0, "fast gradient")?;
        force0.axpy(dt * lam_w, &gw, 1.0);
    }
    fast.push(f0 + sys.mass_fast_inv() * (&state.p_fast - force0) * dt);
    for m in 1..p {
        let gw = sys.fast_gradient(&fast[m]);
        check(&gw, m, "fast gradient")?;
        let next = &fast[m] * 2.0 - &fast[m - 1] - sys.mass_fast_inv() * gw * (dt * dt);
        fast.push(next);
    }
    let pts = PointSet::new(quad, grid);
    let d = partials_with(&pts, a, &b, &fast, sys, grid).map_err(|e| match e {
        Error::NonlinearEvaluation { node, message } => Error::NonlinearEvaluation { node: k * p + node, message },
        other => other,
    })?;
    fast.remove(0);
    let step = MacroStep::from_partials(b, fast, d, StepStats::default());
    if !step.is_finite() {
        return Err(Error::AbortedStep(format!("non-finite state after macro step {k}")));
    }
    Ok(step)
}

/// A completed integration.
#[derive(Debug, Clone)]
pub struct IntegrationRun {
    pub trajectory: Trajectory,
    pub steps: Vec<StepStats>,
}

impl IntegrationRun {
    pub fn total_newton_iters(&self) -> usize {
        self.steps.iter().map(|s| s.newton_iters).sum()
    }

    /// Largest final residual over all steps.
    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual_norm).fold(0.0, f64::max)
    }

    pub fn total_solve_time(&self) -> Duration {
        self.steps.iter().map(|s| s.solve_time).sum()
    }

    pub fn total_jacobian_time(&self) -> Duration {
        self.steps.iter().map(|s| s.jacobian_time).sum()
    }

    pub fn totals(&self) -> StepStats {
        let mut t = StepStats::default();
        for s in &self.steps {
            add_stats(&mut t, s);
        }
        t
    }
}

/// A failed integration with the trajectory up to the last accepted step.
#[derive(Debug, Clone)]
pub struct IntegrationFailure {
    pub error: Error,
    /// Macro interval that failed.
    pub step: usize,
    pub partial: Trajectory,
    pub steps: Vec<StepStats>,
}

impl fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "integration failed in macro step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for IntegrationFailure {}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        f.error
    }
}

/// Integrates `grid.n_macro()` macro steps from `x0`.
///
/// The trajectory stores at every node `k ≥ 1` the momenta generated by the
/// interval ending there; at node 0 the initial momenta. Runs are
/// deterministic: identical inputs give bit-identical trajectories.
#[allow(clippy::result_large_err)]
pub fn integrate(
    x0: &State,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
    mode: Mode,
) -> std::result::Result<IntegrationRun, IntegrationFailure> {
    let mut traj = Trajectory::new(*grid, x0);
    let mut steps = Vec::with_capacity(grid.n_macro());
    let fail = |error: Error, step: usize, traj: Trajectory, steps: Vec<StepStats>| IntegrationFailure {
        error,
        step,
        partial: traj,
        steps,
    };
    let pq_kind = match check_mode(x0, sys, quad, grid, config, mode) {
        Ok(k) => k,
        Err(e) => return Err(fail(e, 0, traj, steps)),
    };

    let mut state = x0.clone();
    let mut prev_slow: Option<DVector<f64>> = None;
    for k in 0..grid.n_macro() {
        let result = match mode {
            Mode::ImplicitDel => macro_step_at(&state, prev_slow.as_ref(), sys, quad, grid, config, k),
            Mode::Explicit => explicit_step_at(&state, sys, quad, grid, k),
            Mode::ClosedFormPq => pq_step(pq_kind.expect("checked"), &state, sys, grid, config, k).map(|s| s.step),
        };
        let step = match result {
            Ok(s) => s,
            Err(e) => return Err(fail(e, k, traj, steps)),
        };
        traj.push_interval(&step.q_slow, &step.p_slow, &step.fast_q, &step.fast_p);
        steps.push(step.stats);
        prev_slow = Some(std::mem::replace(&mut state, step.end_state()).q_slow);
    }
    Ok(IntegrationRun { trajectory: traj, steps })
}

fn check_mode(
    x0: &State,
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
    mode: Mode,
) -> Result<Option<PqSchemeKind>> {
    check_inputs(x0, sys, quad, Some(config))?;
    match mode {
        Mode::ImplicitDel => {
            config.resolved_mode(sys)?;
            Ok(None)
        }
        Mode::Explicit => {
            if quad.is_explicit_solvable(grid.micro_per_macro()) {
                Ok(None)
            } else {
                Err(Error::Configuration("explicit mode requires a node-based quadrature".into()))
            }
        }
        Mode::ClosedFormPq => PqSchemeKind::from_quadrature(quad).map(Some).ok_or_else(|| {
            Error::Configuration("closed-form mode requires one of the three named (p,q) schemes".into())
        }),
    }
}

/// Residual and momentum-matching certificate of a stored trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Certificate {
    /// Largest ∞-norm of the discrete Euler-Lagrange residual over all steps.
    pub max_del_residual: f64,
    /// Largest mismatch between stored momenta and the momenta generated by
    /// the intervals on either side of each node.
    pub max_momentum_mismatch: f64,
    pub n_steps: usize,
}

/// Recomputes the discrete Euler-Lagrange residual of every stored macro
/// step and checks momentum matching at every macro and micro node.
pub fn certify(traj: &Trajectory, sys: &MultirateSystem, quad: &QuadratureSpec) -> Result<Certificate> {
    quad.validate()?;
    let grid = traj.grid;
    let p = grid.micro_per_macro();
    let pts = PointSet::new(quad, &grid);
    let mut cert = Certificate::default();
    for k in 0..traj.n_macro_nodes().saturating_sub(1) {
        let state = traj.state(k);
        let b = traj.slow_q.vector(k + 1);
        let fast: Vec<_> = (0..=p).map(|m| traj.fast_q.vector(k * p + m)).collect();
        let prob = StepProblem {
            sys,
            grid: &grid,
            pts: pts.clone(),
            state: &state,
            k,
        };
        let d = prob.partials(&b, &fast)?;
        let r = prob.residual_from(&d);
        cert.max_del_residual = cert.max_del_residual.max(r.amax());
        // minus momenta of this interval against the stored node momenta
        let mut mism = (-&d.slow_start - &state.p_slow).amax();
        mism = mism.max((-&d.fast_right[0] - &state.p_fast).amax());
        for m in 1..p {
            let plus = traj.fast_p.vector(k * p + m);
            mism = mism.max((-&d.fast_right[m] - &plus).amax());
        }
        // plus momenta generated here against what was stored
        mism = mism.max((&d.slow_end - traj.slow_p.vector(k + 1)).amax());
        for m in 1..=p {
            mism = mism.max((&d.fast_left[m] - traj.fast_p.vector(k * p + m)).amax());
        }
        cert.max_momentum_mismatch = cert.max_momentum_mismatch.max(mism);
        cert.n_steps += 1;
    }
    Ok(cert)
}

#[cfg(test)]
mod tests;
