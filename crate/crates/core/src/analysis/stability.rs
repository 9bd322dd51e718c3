//! Linear stability of a harmonic oscillator `V = ½ ω² q²` whose single
//! variable is linearly interpolated between macro nodes and whose potential
//! is integrated on the micro grid.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Micro-grid rule for the potential of the test oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityRule {
    Trapezoidal,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub omega_dt: f64,
    pub micro_per_macro: usize,
    pub trace: f64,
    pub determinant: f64,
    /// `|tr P| < 2`.
    pub stable: bool,
    /// Upper bound on `ω² ΔT²`; infinite when unconditionally stable.
    pub analytic_bound: f64,
}

/// Stability bound on `ω² ΔT²`: `12p²/(p²+2)` for the trapezoidal rule and
/// `12p²/(p²-1)` for the midpoint rule (infinite at `p = 1`).
pub fn analytic_bound(rule: StabilityRule, p: usize) -> f64 {
    let p2 = (p * p) as f64;
    match rule {
        StabilityRule::Trapezoidal => 12.0 * p2 / (p2 + 2.0),
        StabilityRule::Midpoint if p == 1 => f64::INFINITY,
        StabilityRule::Midpoint => 12.0 * p2 / (p2 - 1.0),
    }
}

/// One-step map `(q_k, p_k) → (q_{k+1}, p_{k+1})`. The trapezoidal matrix
/// uses the symmetric weight `α = 1/2`.
pub fn propagation_matrix(omega: f64, macro_step: f64, p: usize, rule: StabilityRule) -> Matrix2<f64> {
    let pf = p as f64;
    let dt = macro_step / pf;
    let w2 = omega * omega;
    let x = w2 * dt * dt;
    match rule {
        StabilityRule::Trapezoidal => {
            let alpha = 0.5;
            let c = pf * pf / 3.0 + (alpha - 0.5) * pf + 1.0 / 6.0;
            let den = x * (pf * pf - 1.0) / 6.0 + 1.0;
            let side = pf / 2.0 - alpha + 0.5;
            Matrix2::new(
                -(x * c - 1.0) / den,
                dt * pf / den,
                dt * w2 * (x * c - 1.0) * side / den - dt * w2 * (alpha + pf / 2.0 - 0.5),
                1.0 - x * pf * side / den,
            )
        }
        StabilityRule::Midpoint => {
            let den = 12.0 + 2.0 * x * pf * pf + x;
            let diag = (12.0 - 4.0 * x * pf * pf + x) / den;
            Matrix2::new(
                diag,
                12.0 * pf * dt / den,
                (-12.0 * dt * w2 * pf + x * dt * w2 * pf * (pf * pf - 1.0)) / den,
                diag,
            )
        }
    }
}

fn closed_form_trace(x: f64, p: f64, rule: StabilityRule) -> f64 {
    match rule {
        StabilityRule::Trapezoidal => -2.0 * (2.0 * x * p * p + x - 6.0) / (x * p * p - x + 6.0),
        StabilityRule::Midpoint => 2.0 * (12.0 - 4.0 * x * p * p + x) / (12.0 + 2.0 * x * p * p + x),
    }
}

/// Trace, determinant and stability verdict at `(ω ΔT, p)`.
pub fn stability_report(omega: f64, macro_step: f64, p: usize, rule: StabilityRule) -> StabilityReport {
    let dt = macro_step / p as f64;
    let trace = closed_form_trace(omega * omega * dt * dt, p as f64, rule);
    StabilityReport {
        omega_dt: omega * macro_step,
        micro_per_macro: p,
        trace,
        determinant: propagation_matrix(omega, macro_step, p, rule).determinant(),
        stable: trace.abs() < 2.0,
        analytic_bound: analytic_bound(rule, p),
    }
}

/// Iterates the propagation matrix from `(q, p) = (1, 1)` and reports whether
/// the amplitude `sqrt(ω² q² + p²)` stays within ten times its initial value.
pub fn empirical_stability_probe(omega: f64, macro_step: f64, p: usize, rule: StabilityRule, n_steps: usize) -> bool {
    let m = propagation_matrix(omega, macro_step, p, rule);
    let amp = |z: &Vector2<f64>| (omega * omega * z[0] * z[0] + z[1] * z[1]).sqrt();
    let mut z = Vector2::new(1.0, 1.0);
    let limit = 10.0 * amp(&z);
    for _ in 0..n_steps {
        z = m * z;
        let a = amp(&z);
        if !(a <= limit) {
            return false;
        }
    }
    true
}
