#![allow(dead_code)]

use multirate::prelude::*;
use nalgebra::{DMatrix, DVector};

/// One slow and one fast degree of freedom with a nonlinear coupling:
/// `V = 3/2 s² + s⁴/4 + s² f²/2`, `W = 200 f²`, masses 2 and 1/2.
pub fn toy_system() -> MultirateSystem {
    MultirateSystem::builder(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 0.5))
        .slow_potential(
            |s, f| 1.5 * s[0] * s[0] + 0.25 * s[0].powi(4) + 0.5 * s[0] * s[0] * f[0] * f[0],
            |s, f| {
                (
                    DVector::from_element(1, 3.0 * s[0] + s[0].powi(3) + s[0] * f[0] * f[0]),
                    DVector::from_element(1, s[0] * s[0] * f[0]),
                )
            },
        )
        .fast_potential(|f| 200.0 * f[0] * f[0], |f| f * 400.0)
        .build()
        .unwrap()
}

pub fn toy_state() -> State {
    State {
        q_slow: DVector::from_element(1, 0.8),
        q_fast: DVector::from_element(1, 0.05),
        p_slow: DVector::from_element(1, -0.3),
        p_fast: DVector::from_element(1, 1.2),
    }
}

/// Full-space implicit midpoint rule for `H = ½ pᵀ M⁻¹ p + V + W`, solved by
/// fixed-point iteration. Returns the states at every step.
pub fn implicit_midpoint(sys: &MultirateSystem, x0: &State, h: f64, steps: usize) -> Vec<State> {
    let (ns, nf) = (sys.n_slow(), sys.n_fast());
    let split = |v: &DVector<f64>| (v.rows(0, ns).into_owned(), v.rows(ns, nf).into_owned());
    let join = |a: &DVector<f64>, b: &DVector<f64>| {
        let mut v = DVector::zeros(ns + nf);
        v.rows_mut(0, ns).copy_from(a);
        v.rows_mut(ns, nf).copy_from(b);
        v
    };
    let mut minv = DMatrix::zeros(ns + nf, ns + nf);
    minv.view_mut((0, 0), (ns, ns)).copy_from(sys.mass_slow_inv());
    minv.view_mut((ns, ns), (nf, nf)).copy_from(sys.mass_fast_inv());
    let force = |q: &DVector<f64>| {
        let (s, f) = split(q);
        let (gs, gf) = sys.slow_gradient(&s, &f);
        -join(&gs, &(gf + sys.fast_gradient(&f)))
    };

    let mut out = vec![x0.clone()];
    let mut q = join(&x0.q_slow, &x0.q_fast);
    let mut p = join(&x0.p_slow, &x0.p_fast);
    for _ in 0..steps {
        let mut q1 = &q + &minv * &p * h;
        let mut p1 = p.clone();
        for it in 0.. {
            let mid = (&q + &q1) * 0.5;
            let p_new = &p + force(&mid) * h;
            let q_new = &q + &minv * (&p + &p_new) * (0.5 * h);
            let change = (&q_new - &q1).amax().max((&p_new - &p1).amax());
            q1 = q_new;
            p1 = p_new;
            if change < 1e-15 * (1.0 + q1.amax() + p1.amax()) || it > 500 {
                break;
            }
        }
        q = q1;
        p = p1;
        let (qs, qf) = split(&q);
        let (ps, pf) = split(&p);
        out.push(State {
            q_slow: qs,
            q_fast: qf,
            p_slow: ps,
            p_fast: pf,
        });
    }
    out
}

/// Largest absolute difference over every stored node.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let d = |u: &[f64], v: &[f64]| {
        if u.len() != v.len() {
            return f64::INFINITY;
        }
        u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    d(a.slow_q.as_slice(), b.slow_q.as_slice())
        .max(d(a.slow_p.as_slice(), b.slow_p.as_slice()))
        .max(d(a.fast_q.as_slice(), b.fast_q.as_slice()))
        .max(d(a.fast_p.as_slice(), b.fast_p.as_slice()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Central-difference Jacobian of a phase-space map.
pub fn fd_jacobian<F>(map: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        d.set_column(j, &((map(&xp) - map(&xm)) / (2.0 * h)));
    }
    d
}

/// `‖Dᵀ J D − J‖∞` for the canonical `J` on `[q; p]` coordinates.
pub fn symplecticity_defect(d: &DMatrix<f64>) -> f64 {
    let n = d.nrows() / 2;
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    (d.transpose() * &j * d - j).amax()
}
