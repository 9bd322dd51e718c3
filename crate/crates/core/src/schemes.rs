//! Closed-form `(p, q)` update maps of the three named quadrature
//! combinations, in their transformed form with an auxiliary slow momentum
//! `p̃^s`.
//!
//! * midpoint-midpoint: midpoint rule for both potentials,
//! * trapezoidal-midpoint: affine node rule for `V` (left weight `α_V`),
//!   midpoint for `W`; the fast chain is kick-oscillate-kick,
//! * trapezoidal-trapezoidal: affine node rules for both; the fast chain is
//!   explicit once `q^s_{k+1}` is known.
//!
//! The first two remain implicit in all micro configurations and are solved
//! by a stacked Newton iteration; the third reduces to a Newton iteration on
//! `q^s_{k+1}` alone.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultirateSystem, QuadratureSpec, SlowPlacement, State, TimeGrid};
use crate::solver::{newton_fd, MacroStep, SolverConfig, StepStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PqSchemeKind {
    MidpointMidpoint,
    /// `alpha_v` weights the left node of each micro interval in `V`.
    TrapezoidalMidpoint { alpha_v: f64 },
    TrapezoidalTrapezoidal { alpha_v: f64, alpha_w: f64 },
}

impl PqSchemeKind {
    /// Recognises the quadratures that have a closed-form scheme. Node rules
    /// written with `γ = 0` are normalised to the equivalent `γ = 1` form.
    pub fn from_quadrature(quad: &QuadratureSpec) -> Option<Self> {
        if quad.slow_placement != SlowPlacement::MicroGrid {
            return None;
        }
        let nodes = |g: f64| g == 0.0 || g == 1.0;
        let left = |a: f64, g: f64| if g == 1.0 { a } else { 1.0 - a };
        match (quad.gamma_v, quad.gamma_w) {
            (gv, gw) if gv == 0.5 && gw == 0.5 => Some(PqSchemeKind::MidpointMidpoint),
            (gv, gw) if nodes(gv) && gw == 0.5 => Some(PqSchemeKind::TrapezoidalMidpoint {
                alpha_v: left(quad.alpha_v, gv),
            }),
            (gv, gw) if nodes(gv) && nodes(gw) => Some(PqSchemeKind::TrapezoidalTrapezoidal {
                alpha_v: left(quad.alpha_v, gv),
                alpha_w: left(quad.alpha_w, gw),
            }),
            _ => None,
        }
    }

    /// The quadrature whose discrete Euler-Lagrange equations this scheme solves.
    pub fn quadrature(&self) -> QuadratureSpec {
        match *self {
            PqSchemeKind::MidpointMidpoint => QuadratureSpec::midpoint_midpoint(),
            PqSchemeKind::TrapezoidalMidpoint { alpha_v } => QuadratureSpec::trapezoidal_midpoint(alpha_v),
            PqSchemeKind::TrapezoidalTrapezoidal { alpha_v, alpha_w } => {
                QuadratureSpec::trapezoidal_trapezoidal(alpha_v, alpha_w)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PqSchemeKind::MidpointMidpoint => "midpoint-midpoint",
            PqSchemeKind::TrapezoidalMidpoint { .. } => "trapezoidal-midpoint",
            PqSchemeKind::TrapezoidalTrapezoidal { .. } => "trapezoidal-trapezoidal",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        let valid = match *self {
            PqSchemeKind::MidpointMidpoint => true,
            PqSchemeKind::TrapezoidalMidpoint { alpha_v } => ok(alpha_v),
            PqSchemeKind::TrapezoidalTrapezoidal { alpha_v, alpha_w } => ok(alpha_v) && ok(alpha_w),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidArgument("scheme weights must lie in [0, 1]".into()))
        }
    }
}

/// One closed-form step together with the auxiliary slow momentum `p̃^s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqStep {
    pub step: MacroStep,
    pub p_tilde: DVector<f64>,
}

pub fn pq_step_midmid(state: &State, sys: &MultirateSystem, grid: &TimeGrid, config: &SolverConfig) -> Result<PqStep> {
    pq_step(PqSchemeKind::MidpointMidpoint, state, sys, grid, config, 0)
}

pub fn pq_step_trapmid(
    state: &State,
    sys: &MultirateSystem,
    grid: &TimeGrid,
    alpha_v: f64,
    config: &SolverConfig,
) -> Result<PqStep> {
    pq_step(PqSchemeKind::TrapezoidalMidpoint { alpha_v }, state, sys, grid, config, 0)
}

pub fn pq_step_traptrap(
    state: &State,
    sys: &MultirateSystem,
    grid: &TimeGrid,
    alpha_v: f64,
    alpha_w: f64,
    config: &SolverConfig,
) -> Result<PqStep> {
    pq_step(PqSchemeKind::TrapezoidalTrapezoidal { alpha_v, alpha_w }, state, sys, grid, config, 0)
}

/// Advances one macro step; `k` is only used to label evaluation errors.
pub(crate) fn pq_step(
    kind: PqSchemeKind,
    state: &State,
    sys: &MultirateSystem,
    grid: &TimeGrid,
    config: &SolverConfig,
    k: usize,
) -> Result<PqStep> {
    kind.validate()?;
    sys.check_state(state)?;
    config.validate()?;
    let eval = Evaluator { sys, grid, state, k };
    let step = match kind {
        PqSchemeKind::MidpointMidpoint => eval.stacked(config, |x| eval.midmid(x)),
        PqSchemeKind::TrapezoidalMidpoint { alpha_v } => eval.stacked(config, |x| eval.trapmid(x, alpha_v)),
        PqSchemeKind::TrapezoidalTrapezoidal { alpha_v, alpha_w } => eval.traptrap(config, alpha_v, alpha_w),
    }?;
    let finite = step.p_tilde.iter().all(|v| v.is_finite())
        && [&step.step.q_slow, &step.step.p_slow]
            .into_iter()
            .chain(&step.step.fast_q)
            .chain(&step.step.fast_p)
            .all(|v| v.iter().all(|e| e.is_finite()));
    if !finite {
        return Err(Error::AbortedStep(format!("non-finite state after macro step {k}")));
    }
    Ok(step)
}

/// Everything a scheme produces for a candidate `[q^s_{k+1}; q^{f,1..=p}]`.
struct Evaluation {
    residual: DVector<f64>,
    q_slow: DVector<f64>,
    p_tilde: DVector<f64>,
    p_slow: DVector<f64>,
    fast_q: Vec<DVector<f64>>,
    fast_p: Vec<DVector<f64>>,
}

struct Evaluator<'a> {
    sys: &'a MultirateSystem,
    grid: &'a TimeGrid,
    state: &'a State,
    k: usize,
}

impl Evaluator<'_> {
    fn p(&self) -> usize {
        self.grid.micro_per_macro()
    }

    fn slow_at(&self, b: &DVector<f64>, theta: f64) -> DVector<f64> {
        &self.state.q_slow + (b - &self.state.q_slow) * theta
    }

    fn grad_v(&self, s: &DVector<f64>, f: &DVector<f64>, m: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let (gs, gf) = self.sys.slow_gradient(s, f);
        if gs.iter().chain(gf.iter()).any(|v| !v.is_finite()) {
            return Err(self.non_finite(m, "slow gradient"));
        }
        Ok((gs, gf))
    }

    fn grad_w(&self, f: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
        let g = self.sys.fast_gradient(f);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(self.non_finite(m, "fast gradient"));
        }
        Ok(g)
    }

    fn non_finite(&self, m: usize, what: &str) -> Error {
        Error::NonlinearEvaluation {
            node: self.k * self.p() + m,
            message: format!("{what} is not finite"),
        }
    }

    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let (ns, nf) = (self.sys.n_slow(), self.sys.n_fast());
        let b = x.rows(0, ns).into_owned();
        let mut fast = Vec::with_capacity(self.p() + 1);
        fast.push(self.state.q_fast.clone());
        for m in 0..self.p() {
            fast.push(x.rows(ns + m * nf, nf).into_owned());
        }
        (b, fast)
    }

    fn drift_guess(&self) -> DVector<f64> {
        let (ns, nf) = (self.sys.n_slow(), self.sys.n_fast());
        let mut x = DVector::zeros(ns + self.p() * nf);
        let b = &self.state.q_slow + self.sys.mass_slow_inv() * &self.state.p_slow * self.grid.macro_step();
        x.rows_mut(0, ns).copy_from(&b);
        let vf = self.sys.mass_fast_inv() * &self.state.p_fast;
        for m in 1..=self.p() {
            let f = &self.state.q_fast + &vf * (m as f64 * self.grid.micro_step());
            x.rows_mut(ns + (m - 1) * nf, nf).copy_from(&f);
        }
        x
    }

    fn slow_residual(&self, b: &DVector<f64>, p_tilde: &DVector<f64>, p_next: Option<&DVector<f64>>) -> DVector<f64> {
        let v = self.sys.mass_slow() * (b - &self.state.q_slow) / self.grid.macro_step();
        match p_next {
            Some(pn) => v - (p_tilde + pn) * 0.5,
            None => v - p_tilde,
        }
    }

    fn assemble(&self, slow_res: DVector<f64>, fast_res: &[DVector<f64>]) -> DVector<f64> {
        let (ns, nf) = (self.sys.n_slow(), self.sys.n_fast());
        let mut r = DVector::zeros(ns + fast_res.len() * nf);
        r.rows_mut(0, ns).copy_from(&slow_res);
        for (m, fr) in fast_res.iter().enumerate() {
            r.rows_mut(ns + m * nf, nf).copy_from(fr);
        }
        r
    }

    fn stacked<F>(&self, config: &SolverConfig, eval: F) -> Result<PqStep>
    where
        F: Fn(&DVector<f64>) -> Result<Evaluation>,
    {
        let (x, stats) = newton_fd(self.drift_guess(), |x| eval(x).map(|e| e.residual), config)?;
        let e = eval(&x)?;
        Ok(self.finish(e, stats))
    }

    fn finish(&self, e: Evaluation, stats: StepStats) -> PqStep {
        PqStep {
            step: MacroStep {
                q_slow: e.q_slow,
                p_slow: e.p_slow,
                fast_q: e.fast_q,
                fast_p: e.fast_p,
                stats,
            },
            p_tilde: e.p_tilde,
        }
    }

    fn midmid(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let p = self.p();
        let pf = p as f64;
        let dt = self.grid.micro_step();
        let (b, fast) = self.unpack(x);
        let mut p_tilde = self.state.p_slow.clone();
        let mut p_next_incr = DVector::zeros(self.sys.n_slow());
        let mut fast_p = Vec::with_capacity(p + 1);
        fast_p.push(self.state.p_fast.clone());
        let mut fast_res = Vec::with_capacity(p);
        for m in 0..p {
            let sb = self.slow_at(&b, (m as f64 + 0.5) / pf);
            let fb = (&fast[m] + &fast[m + 1]) * 0.5;
            let (gs, gf) = self.grad_v(&sb, &fb, m)?;
            let gw = self.grad_w(&fb, m)?;
            let c = (2 * m + 1) as f64 / pf;
            p_tilde.axpy(-dt * (1.0 - c), &gs, 1.0);
            p_next_incr.axpy(-dt * c, &gs, 1.0);
            let next = &fast_p[m] - (gf + gw) * dt;
            let r = self.sys.mass_fast() * (&fast[m + 1] - &fast[m]) / dt - (&fast_p[m] + &next) * 0.5;
            fast_res.push(r);
            fast_p.push(next);
        }
        let p_slow = &p_tilde + p_next_incr;
        let residual = self.assemble(self.slow_residual(&b, &p_tilde, Some(&p_slow)), &fast_res);
        fast_p.remove(0);
        Ok(Evaluation {
            residual,
            p_tilde,
            p_slow,
            q_slow: b,
            fast_q: drop_first(fast),
            fast_p,
        })
    }

    /// Slow update shared by the two schemes with node-based `V`; `gs[m]` is
    /// `∂V/∂q^s` at node `m`.
    fn node_slow_update(&self, gs: &[DVector<f64>], alpha_v: f64) -> (DVector<f64>, DVector<f64>) {
        let p = self.p();
        let pf = p as f64;
        let dt = self.grid.micro_step();
        let mut p_tilde = self.state.p_slow.clone();
        p_tilde.axpy(-dt * alpha_v, &gs[0], 1.0);
        let mut p_next = DVector::zeros(self.sys.n_slow());
        for (m, g) in gs.iter().enumerate().take(p).skip(1) {
            p_tilde.axpy(-dt * (pf - m as f64) / pf, g, 1.0);
            p_next.axpy(-dt * m as f64 / pf, g, 1.0);
        }
        p_next.axpy(-dt * (1.0 - alpha_v), &gs[p], 1.0);
        let p_next = &p_tilde + p_next;
        (p_tilde, p_next)
    }

    fn trapmid(&self, x: &DVector<f64>, alpha_v: f64) -> Result<Evaluation> {
        let p = self.p();
        let pf = p as f64;
        let dt = self.grid.micro_step();
        let (b, fast) = self.unpack(x);
        let mut gs = Vec::with_capacity(p + 1);
        let mut gf = Vec::with_capacity(p + 1);
        for (m, f) in fast.iter().enumerate() {
            let (s, g) = self.grad_v(&self.slow_at(&b, m as f64 / pf), f, m)?;
            gs.push(s);
            gf.push(g);
        }
        let (p_tilde, p_slow) = self.node_slow_update(&gs, alpha_v);
        let mut fast_p = Vec::with_capacity(p + 1);
        fast_p.push(self.state.p_fast.clone());
        let mut fast_res = Vec::with_capacity(p);
        for m in 0..p {
            // kick, oscillate, kick
            let kicked = &fast_p[m] - &gf[m] * (alpha_v * dt);
            let fb = (&fast[m] + &fast[m + 1]) * 0.5;
            let hat = &kicked - self.grad_w(&fb, m)? * dt;
            let r = self.sys.mass_fast() * (&fast[m + 1] - &fast[m]) / dt - (&kicked + &hat) * 0.5;
            fast_res.push(r);
            fast_p.push(hat - &gf[m + 1] * ((1.0 - alpha_v) * dt));
        }
        let residual = self.assemble(self.slow_residual(&b, &p_tilde, None), &fast_res);
        fast_p.remove(0);
        Ok(Evaluation {
            residual,
            p_tilde,
            p_slow,
            q_slow: b,
            fast_q: drop_first(fast),
            fast_p,
        })
    }

    /// Explicit fast chain for a given `q^s_{k+1}`.
    fn traptrap_eval(&self, b: &DVector<f64>, alpha_v: f64, alpha_w: f64) -> Result<Evaluation> {
        let p = self.p();
        let pf = p as f64;
        let dt = self.grid.micro_step();
        let minv = self.sys.mass_fast_inv();
        let mut fast = Vec::with_capacity(p + 1);
        let mut fast_p = Vec::with_capacity(p + 1);
        let mut gs = Vec::with_capacity(p + 1);
        fast.push(self.state.q_fast.clone());
        fast_p.push(self.state.p_fast.clone());
        let (s0, f0) = self.grad_v(&self.state.q_slow, &fast[0], 0)?;
        gs.push(s0);
        let mut force = f0 * alpha_v + self.grad_w(&fast[0], 0)? * alpha_w;
        for m in 0..p {
            let q_next = &fast[m] + minv * (&fast_p[m] - &force * dt) * dt;
            let (s, fv) = self.grad_v(&self.slow_at(b, (m + 1) as f64 / pf), &q_next, m + 1)?;
            let fw = self.grad_w(&q_next, m + 1)?;
            let right = &fv * (1.0 - alpha_v) + &fw * (1.0 - alpha_w);
            fast_p.push(&fast_p[m] - (&force + right) * dt);
            fast.push(q_next);
            gs.push(s);
            force = fv * alpha_v + fw * alpha_w;
        }
        let (p_tilde, p_slow) = self.node_slow_update(&gs, alpha_v);
        let residual = self.slow_residual(b, &p_tilde, None);
        fast_p.remove(0);
        Ok(Evaluation {
            residual,
            p_tilde,
            p_slow,
            q_slow: b.clone(),
            fast_q: drop_first(fast),
            fast_p,
        })
    }

    fn traptrap(&self, config: &SolverConfig, alpha_v: f64, alpha_w: f64) -> Result<PqStep> {
        let ns = self.sys.n_slow();
        let guess = self.drift_guess().rows(0, ns).into_owned();
        let (b, stats) = newton_fd(guess, |b| self.traptrap_eval(b, alpha_v, alpha_w).map(|e| e.residual), config)?;
        let e = self.traptrap_eval(&b, alpha_v, alpha_w)?;
        Ok(self.finish(e, stats))
    }
}

fn drop_first(mut nodes: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    nodes.remove(0);
    nodes
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::solver::{integrate, Mode};
    use crate::systems::{build_fpu, build_spring_ring, FpuConfig, SpringRingConfig};

    /// Decoupled slow and fast oscillators, `W` optional.
    fn oscillators(w2: f64) -> MultirateSystem {
        MultirateSystem::builder(DMatrix::from_element(1, 1, 1.5), DMatrix::from_element(1, 1, 0.5))
            .slow_potential(
                |s, _| 2.0 * s[0] * s[0] + s[0].powi(4),
                |s, _| (DVector::from_element(1, 4.0 * s[0] + 4.0 * s[0].powi(3)), DVector::zeros(1)),
            )
            .fast_potential(move |f| 0.5 * w2 * f[0] * f[0], move |f| f * w2)
            .build()
            .unwrap()
    }

    fn start() -> State {
        State {
            q_slow: DVector::from_element(1, 0.7),
            q_fast: DVector::from_element(1, 0.2),
            p_slow: DVector::from_element(1, -0.4),
            p_fast: DVector::from_element(1, 0.9),
        }
    }

    fn grad(s: f64) -> f64 {
        4.0 * s + 4.0 * s.powi(3)
    }

    fn max_diff(a: &State, b: &State) -> f64 {
        (a.to_phase_vector() - b.to_phase_vector()).amax()
    }

    #[test]
    fn free_motion_is_exact_drift() {
        let sys = MultirateSystem::builder(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).build().unwrap();
        let x0 = State {
            q_slow: DVector::from_vec(vec![0.0, 1.0]),
            q_fast: DVector::from_element(1, 2.0),
            p_slow: DVector::from_vec(vec![1.0, -1.0]),
            p_fast: DVector::from_element(1, 0.5),
        };
        let grid = TimeGrid::new(0.2, 4, 1, 0.0).unwrap();
        let cfg = SolverConfig::default();
        for s in [
            pq_step_midmid(&x0, &sys, &grid, &cfg).unwrap(),
            pq_step_trapmid(&x0, &sys, &grid, 0.5, &cfg).unwrap(),
            pq_step_traptrap(&x0, &sys, &grid, 0.0, 1.0, &cfg).unwrap(),
        ] {
            let end = s.step.end_state();
            assert!((end.q_slow[0] - 0.2).abs() < 1e-12 && (end.q_slow[1] - 0.8).abs() < 1e-12);
            assert!((end.q_fast[0] - 2.1).abs() < 1e-12);
            assert_eq!(end.p_slow, x0.p_slow);
            assert_eq!(end.p_fast, x0.p_fast);
        }
    }

    #[test]
    fn single_rate_trapezoidal_midpoint_is_stormer_verlet() {
        let sys = oscillators(0.0);
        let h = 0.1;
        let grid = TimeGrid::new(h, 1, 1, 0.0).unwrap();
        let x0 = start();
        let cfg = SolverConfig::with_tol(1e-13);
        let m = 1.5;
        let (q, p) = (x0.q_slow[0], x0.p_slow[0]);
        let half = p - 0.5 * h * grad(q);
        let q1 = q + h * half / m;
        let p1 = half - 0.5 * h * grad(q1);
        let s = pq_step_trapmid(&x0, &sys, &grid, 0.5, &cfg).unwrap();
        assert!((s.step.q_slow[0] - q1).abs() < 1e-12);
        assert!((s.step.p_slow[0] - p1).abs() < 1e-12);
        assert!((s.p_tilde[0] - half).abs() < 1e-12);
    }

    #[test]
    fn single_rate_symplectic_euler_variants() {
        let sys = oscillators(0.0);
        let h = 0.1;
        let grid = TimeGrid::new(h, 1, 1, 0.0).unwrap();
        let x0 = start();
        let cfg = SolverConfig::with_tol(1e-13);
        let m = 1.5;
        let (q, p) = (x0.q_slow[0], x0.p_slow[0]);
        // position first, then momentum at the new position
        let qa = q + h * p / m;
        let pa = p - h * grad(qa);
        // momentum first at the old position, then position
        let pb = p - h * grad(q);
        let qb = q + h * pb / m;
        let a = pq_step_trapmid(&x0, &sys, &grid, 0.0, &cfg).unwrap().step;
        assert!((a.q_slow[0] - qa).abs() < 1e-12 && (a.p_slow[0] - pa).abs() < 1e-12);
        let a = pq_step_traptrap(&x0, &sys, &grid, 0.0, 0.0, &cfg).unwrap().step;
        assert!((a.q_slow[0] - qa).abs() < 1e-12 && (a.p_slow[0] - pa).abs() < 1e-12);
        let b = pq_step_traptrap(&x0, &sys, &grid, 1.0, 1.0, &cfg).unwrap().step;
        assert!((b.q_slow[0] - qb).abs() < 1e-12 && (b.p_slow[0] - pb).abs() < 1e-12);
    }

    #[test]
    fn single_rate_midpoint_matches_implicit_midpoint() {
        let sys = oscillators(30.0);
        let h = 0.1;
        let grid = TimeGrid::new(h, 1, 1, 0.0).unwrap();
        let x0 = start();
        let cfg = SolverConfig::with_tol(1e-13);
        let s = pq_step_midmid(&x0, &sys, &grid, &cfg).unwrap().step;
        // the slow oscillator is decoupled: check the midpoint relations directly
        let qm = 0.5 * (x0.q_slow[0] + s.q_slow[0]);
        assert!((s.q_slow[0] - x0.q_slow[0] - h * 0.5 * (x0.p_slow[0] + s.p_slow[0]) / 1.5).abs() < 1e-12);
        assert!((s.p_slow[0] - x0.p_slow[0] + h * grad(qm)).abs() < 1e-12);
        let fm = 0.5 * (x0.q_fast[0] + s.fast_q[0][0]);
        assert!((s.fast_p[0][0] - x0.p_fast[0] + h * 30.0 * fm).abs() < 1e-12);
    }

    fn paths_agree(sys: &MultirateSystem, x0: &State, kind: PqSchemeKind, grid: &TimeGrid, tol: f64) -> f64 {
        let cfg = SolverConfig::with_tol(tol);
        let quad = kind.quadrature();
        let del = integrate(x0, sys, &quad, grid, &cfg, Mode::ImplicitDel).unwrap();
        let pq = integrate(x0, sys, &quad, grid, &cfg, Mode::ClosedFormPq).unwrap();
        let (a, b) = (&del.trajectory, &pq.trajectory);
        let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        [
            d(a.slow_q.as_slice(), b.slow_q.as_slice()),
            d(a.slow_p.as_slice(), b.slow_p.as_slice()),
            d(a.fast_q.as_slice(), b.fast_q.as_slice()),
            d(a.fast_p.as_slice(), b.fast_p.as_slice()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    #[test]
    fn closed_form_matches_del_on_fpu() {
        let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
        let tol = 1e-10;
        for (kind, dt) in [
            (PqSchemeKind::MidpointMidpoint, 0.3),
            (PqSchemeKind::TrapezoidalMidpoint { alpha_v: 1.0 }, 0.3),
            (PqSchemeKind::TrapezoidalMidpoint { alpha_v: 0.3 }, 0.3),
            (PqSchemeKind::TrapezoidalTrapezoidal { alpha_v: 1.0, alpha_w: 1.0 }, 0.03),
            (PqSchemeKind::TrapezoidalTrapezoidal { alpha_v: 0.5, alpha_w: 0.2 }, 0.03),
        ] {
            let grid = TimeGrid::new(dt, 5, 10, 0.0).unwrap();
            let d = paths_agree(&sys, &x0, kind, &grid, tol);
            assert!(d <= 10.0 * tol, "{kind:?}: {d}");
        }
    }

    #[test]
    fn closed_form_matches_del_on_spring_ring() {
        let (sys, x0) = build_spring_ring(&SpringRingConfig::default()).unwrap();
        let tol = 1e-8;
        for kind in [
            PqSchemeKind::MidpointMidpoint,
            PqSchemeKind::TrapezoidalMidpoint { alpha_v: 1.0 },
            PqSchemeKind::TrapezoidalTrapezoidal { alpha_v: 1.0, alpha_w: 1.0 },
        ] {
            let grid = TimeGrid::new(0.01, 5, 5, 0.0).unwrap();
            let d = paths_agree(&sys, &x0, kind, &grid, tol);
            assert!(d <= 10.0 * tol, "{kind:?}: {d}");
        }
    }

    #[test]
    fn symplectic_euler_pair_is_adjoint() {
        let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
        let cfg = SolverConfig::with_tol(1e-12);
        for p in [1, 4] {
            let grid = TimeGrid::new(0.02, p, 1, 0.0).unwrap();
            let flip = |s: State| State {
                p_slow: -s.p_slow,
                p_fast: -s.p_fast,
                ..s
            };
            let fwd = pq_step_traptrap(&x0, &sys, &grid, 0.0, 0.0, &cfg).unwrap().step.end_state();
            let back = pq_step_traptrap(&flip(fwd), &sys, &grid, 1.0, 1.0, &cfg).unwrap().step.end_state();
            let d = max_diff(&flip(back), &x0);
            assert!(d <= 10.0 * cfg.newton_tol, "p={p}: {d}");
        }
    }

    #[test]
    fn kinds_round_trip_through_quadratures() {
        for kind in [
            PqSchemeKind::MidpointMidpoint,
            PqSchemeKind::TrapezoidalMidpoint { alpha_v: 0.25 },
            PqSchemeKind::TrapezoidalTrapezoidal { alpha_v: 0.0, alpha_w: 1.0 },
        ] {
            assert_eq!(PqSchemeKind::from_quadrature(&kind.quadrature()), Some(kind));
        }
        assert_eq!(PqSchemeKind::from_quadrature(&QuadratureSpec::new(0.5, 0.3, 0.5, 0.5).unwrap()), None);
        assert_eq!(PqSchemeKind::from_quadrature(&QuadratureSpec::explicit(1.0, 1.0)), None);
        // a right-weighted node rule written with γ = 0 is the same scheme
        let q = QuadratureSpec::new(0.8, 0.0, 0.5, 0.5).unwrap();
        assert_eq!(
            PqSchemeKind::from_quadrature(&q),
            Some(PqSchemeKind::TrapezoidalMidpoint { alpha_v: 0.19999999999999996 })
        );
    }

    #[test]
    fn rejects_weights_outside_unit_interval() {
        let sys = oscillators(1.0);
        let grid = TimeGrid::new(0.1, 2, 1, 0.0).unwrap();
        let err = pq_step_trapmid(&start(), &sys, &grid, 1.5, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
