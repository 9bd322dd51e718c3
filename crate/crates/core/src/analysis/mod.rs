//! Diagnostics: energies, momentum maps, error norms against a reference
//! trajectory, observed convergence orders and linear stability.

mod convergence;
mod stability;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultirateSystem, Trajectory};

pub use convergence::{
    convergence_study, fitted_order, micro_refinement_study, observed_orders, reference_trajectory,
    ConvergenceTable,
};
pub use stability::{
    analytic_bound, empirical_stability_probe, propagation_matrix, stability_report, StabilityReport,
    StabilityRule,
};

/// Energies at the macro nodes of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    pub times: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub slow_potential: Vec<f64>,
    pub fast_potential: Vec<f64>,
    pub total: Vec<f64>,
    /// Oscillatory energy `I_j` of every fast coordinate, one row per node.
    /// Only present when the system declares oscillator stiffnesses.
    pub stiff_energies: Option<Vec<Vec<f64>>>,
    /// `I = Σ_j I_j`.
    pub stiff_total: Option<Vec<f64>>,
}

impl EnergySeries {
    /// Largest `|E(t) - E(0)| / |E(0)|`.
    pub fn max_relative_deviation(&self) -> f64 {
        let e0 = self.total.first().copied().unwrap_or(0.0);
        let scale = if e0 == 0.0 { 1.0 } else { e0.abs() };
        self.total.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Least-squares slope of `(E(t) - E(0)) / |E(0)|` against time.
    pub fn relative_drift_slope(&self) -> f64 {
        let e0 = self.total.first().copied().unwrap_or(0.0);
        let scale = if e0 == 0.0 { 1.0 } else { e0.abs() };
        let rel: Vec<f64> = self.total.iter().map(|e| (e - e0) / scale).collect();
        linear_slope(&self.times, &rel)
    }
}

pub(crate) fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Evaluates kinetic and potential energies at every macro node, using the
/// stored node momenta for velocities.
pub fn energy_series(traj: &Trajectory, sys: &MultirateSystem) -> EnergySeries {
    let n = traj.n_macro_nodes();
    let stiffness = sys.oscillator_stiffness();
    let mut out = EnergySeries {
        times: Vec::with_capacity(n),
        kinetic: Vec::with_capacity(n),
        slow_potential: Vec::with_capacity(n),
        fast_potential: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
        stiff_energies: stiffness.map(|_| Vec::with_capacity(n)),
        stiff_total: stiffness.map(|_| Vec::with_capacity(n)),
    };
    for k in 0..n {
        let x = traj.state(k);
        let t = sys.kinetic_energy(&x.p_slow, &x.p_fast);
        let v = sys.slow_potential(&x.q_slow, &x.q_fast);
        let w = sys.fast_potential(&x.q_fast);
        out.times.push(traj.grid.macro_time(k));
        out.kinetic.push(t);
        out.slow_potential.push(v);
        out.fast_potential.push(w);
        out.total.push(t + v + w);
        if let Some(kj) = stiffness {
            let vf = sys.mass_fast_inv() * &x.p_fast;
            let mv = sys.mass_fast() * &vf;
            let ij: Vec<f64> = (0..kj.len())
                .map(|j| 0.5 * mv[j] * vf[j] + 0.5 * kj[j] * x.q_fast[j] * x.q_fast[j])
                .collect();
            out.stiff_total.as_mut().unwrap().push(ij.iter().sum());
            out.stiff_energies.as_mut().unwrap().push(ij);
        }
    }
    out
}

/// `Σ_i (q_i × p_i) · axis` at every macro node, reading the slow and the fast
/// configuration as consecutive 3-vectors, one per point mass.
pub fn angular_momentum_series(traj: &Trajectory, sys: &MultirateSystem, axis: &Vector3<f64>) -> Result<Vec<f64>> {
    if !sys.n_slow().is_multiple_of(3) || !sys.n_fast().is_multiple_of(3) {
        return Err(Error::InvalidArgument(
            "angular momentum needs configurations made of 3-vectors".into(),
        ));
    }
    let axis = axis.normalize();
    let l = |q: &DVector<f64>, p: &DVector<f64>| -> f64 {
        (0..q.len() / 3)
            .map(|i| {
                let qi = Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
                let pi = Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
                qi.cross(&pi).dot(&axis)
            })
            .sum()
    };
    Ok((0..traj.n_macro_nodes())
        .map(|k| {
            let x = traj.state(k);
            l(&x.q_slow, &x.p_slow) + l(&x.q_fast, &x.p_fast)
        })
        .collect())
}

/// Sup-norm errors against a reference trajectory.
///
/// Macro errors use the full configuration `[q_s; q_f]` (resp. momenta) at
/// every macro node. Micro errors use the fast variables at the interior
/// micro nodes `m = 1..p-1` only, so they are zero for `p = 1`, and `NaN`
/// when the reference step does not divide the micro step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub q_mac: f64,
    pub p_mac: f64,
    pub q_mic: f64,
    pub p_mic: f64,
}

/// Integer ratio `coarse / fine`, or an alignment error.
fn step_ratio(coarse: f64, fine: f64, what: &str) -> Result<usize> {
    let r = coarse / fine;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 * n {
        return Err(Error::Alignment(format!(
            "{what}: reference step {fine} does not divide {coarse}"
        )));
    }
    Ok(n as usize)
}

pub fn error_norms(traj: &Trajectory, reference: &Trajectory) -> Result<ErrorNorms> {
    let (g, r) = (&traj.grid, &reference.grid);
    if (g.t0() - r.t0()).abs() > 1e-12 * g.macro_step() {
        return Err(Error::Alignment("trajectories start at different times".into()));
    }
    if r.t_end() < traj.grid.macro_time(traj.n_macro_nodes() - 1) - 1e-9 * g.macro_step() {
        return Err(Error::Alignment("reference does not cover the trajectory".into()));
    }
    let p = g.micro_per_macro();
    let slow_ratio = step_ratio(g.macro_step(), r.macro_step(), "macro nodes")?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut e = ErrorNorms::default();
    for k in 0..traj.n_macro_nodes() {
        let kr = k * slow_ratio;
        let jr = r.fast_index(kr, 0);
        let dq = diff(traj.slow_q.row(k), reference.slow_q.row(kr))
            + diff(traj.fast_q.row(k * p), reference.fast_q.row(jr));
        let dp = diff(traj.slow_p.row(k), reference.slow_p.row(kr))
            + diff(traj.fast_p.row(k * p), reference.fast_p.row(jr));
        e.q_mac = e.q_mac.max(dq.sqrt());
        e.p_mac = e.p_mac.max(dp.sqrt());
    }
    if p > 1 && traj.n_macro_nodes() > 1 {
        let Ok(fast_ratio) = step_ratio(g.micro_step(), r.micro_step(), "micro nodes") else {
            e.q_mic = f64::NAN;
            e.p_mic = f64::NAN;
            return Ok(e);
        };
        for k in 0..traj.n_macro_nodes() - 1 {
            for m in 1..p {
                let j = k * p + m;
                let jr = j * fast_ratio;
                e.q_mic = e.q_mic.max(diff(traj.fast_q.row(j), reference.fast_q.row(jr)).sqrt());
                e.p_mic = e.p_mic.max(diff(traj.fast_p.row(j), reference.fast_p.row(jr)).sqrt());
            }
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuadratureSpec, State, TimeGrid};
    use crate::solver::{integrate, Mode, SolverConfig};
    use crate::systems::{build_fpu, FpuConfig};
    use nalgebra::DMatrix;

    fn free_system(n: usize) -> MultirateSystem {
        MultirateSystem::builder(DMatrix::identity(n, n) * 2.0, DMatrix::identity(n, n)).build().unwrap()
    }

    #[test]
    fn fpu_initial_stiff_energy_is_one() {
        let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
        let traj = Trajectory::new(TimeGrid::new(0.3, 5, 0, 0.0).unwrap(), &x0);
        let e = energy_series(&traj, &sys);
        assert!((e.stiff_total.as_ref().unwrap()[0] - 1.0).abs() < 1e-14);
        let i = &e.stiff_energies.as_ref().unwrap()[0];
        assert!((i[0] - 1.0).abs() < 1e-14 && i[1] == 0.0);
    }

    #[test]
    fn free_particle_energy_is_constant() {
        let sys = free_system(3);
        let x0 = State {
            q_slow: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            q_fast: DVector::zeros(3),
            p_slow: DVector::from_vec(vec![0.5, -1.0, 2.0]),
            p_fast: DVector::from_vec(vec![1.0, 1.0, -1.0]),
        };
        let grid = TimeGrid::new(0.1, 3, 20, 0.0).unwrap();
        let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &SolverConfig::default(), Mode::ImplicitDel).unwrap();
        let e = energy_series(&run.trajectory, &sys);
        assert!(e.max_relative_deviation() < 1e-12);
        assert!(e.stiff_total.is_none());
        for k in 0..e.total.len() {
            let sum = e.kinetic[k] + e.slow_potential[k] + e.fast_potential[k];
            assert!((sum - e.total[k]).abs() <= 1e-12 * e.total[k].abs());
        }
    }

    #[test]
    fn angular_momentum_of_resting_masses_is_zero() {
        let sys = free_system(3);
        let x0 = State {
            q_slow: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            q_fast: DVector::from_vec(vec![-1.0, 0.0, 2.0]),
            p_slow: DVector::zeros(3),
            p_fast: DVector::zeros(3),
        };
        let traj = Trajectory::new(TimeGrid::new(0.1, 2, 0, 0.0).unwrap(), &x0);
        assert_eq!(angular_momentum_series(&traj, &sys, &Vector3::z()).unwrap(), vec![0.0]);
        let bad = free_system(2);
        assert!(angular_momentum_series(&traj, &bad, &Vector3::z()).is_err());
    }

    #[test]
    fn circular_motion_angular_momentum() {
        // mass 2 on a circle of radius 1.5 with tangential speed 0.8
        let sys = free_system(3);
        let x0 = State {
            q_slow: DVector::from_vec(vec![1.5, 0.0, 0.0]),
            q_fast: DVector::zeros(3),
            p_slow: DVector::from_vec(vec![0.0, 2.0 * 0.8, 0.0]),
            p_fast: DVector::zeros(3),
        };
        let traj = Trajectory::new(TimeGrid::new(0.1, 2, 0, 0.0).unwrap(), &x0);
        let l = angular_momentum_series(&traj, &sys, &Vector3::z()).unwrap();
        assert!((l[0] - 2.0 * 1.5 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn error_norms_self_and_single_deviation() {
        let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
        let grid = TimeGrid::new(0.01, 4, 5, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let run = integrate(&x0, &sys, &QuadratureSpec::midpoint_midpoint(), &grid, &cfg, Mode::ImplicitDel).unwrap();
        let traj = run.trajectory;
        assert_eq!(error_norms(&traj, &traj).unwrap(), ErrorNorms::default());

        let mut other = traj.clone();
        let d = 3e-4;
        let dim = other.fast_q.dim();
        other.fast_q.as_mut_slice()[6 * dim + 1] += d;
        let e = error_norms(&other, &traj).unwrap();
        assert!((e.q_mic - d).abs() < 1e-15);
        assert_eq!(e.q_mac, 0.0);
        assert_eq!(e.p_mic, 0.0);
    }

    #[test]
    fn error_norms_need_aligned_reference() {
        let (sys, x0) = build_fpu(&FpuConfig::default()).unwrap();
        let cfg = SolverConfig::default();
        let quad = QuadratureSpec::midpoint_midpoint();
        let a = integrate(&x0, &sys, &quad, &TimeGrid::new(0.03, 3, 2, 0.0).unwrap(), &cfg, Mode::ImplicitDel).unwrap();
        let b = integrate(&x0, &sys, &quad, &TimeGrid::new(0.007, 1, 10, 0.0).unwrap(), &cfg, Mode::ImplicitDel).unwrap();
        assert!(matches!(error_norms(&a.trajectory, &b.trajectory), Err(Error::Alignment(_))));
        let short = integrate(&x0, &sys, &quad, &TimeGrid::new(0.01, 1, 2, 0.0).unwrap(), &cfg, Mode::ImplicitDel).unwrap();
        assert!(matches!(error_norms(&a.trajectory, &short.trajectory), Err(Error::Alignment(_))));
        // macro nodes align, micro nodes do not
        let c = integrate(&x0, &sys, &quad, &TimeGrid::new(0.03, 4, 2, 0.0).unwrap(), &cfg, Mode::ImplicitDel).unwrap();
        let r = integrate(&x0, &sys, &quad, &TimeGrid::new(0.01, 1, 6, 0.0).unwrap(), &cfg, Mode::ImplicitDel).unwrap();
        let e = error_norms(&c.trajectory, &r.trajectory).unwrap();
        assert!(e.q_mac.is_finite() && e.q_mic.is_nan() && e.p_mic.is_nan());
    }
}
