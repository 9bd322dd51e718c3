//! Discrete Lagrangian of one macro interval and its derivatives.
//!
//! The slow configuration is interpolated linearly over the macro interval
//! `[t_k, t_{k+1}]` and each fast configuration linearly over its micro
//! interval. Potentials are approximated by the two-point affine rule
//!
//! ```text
//! Z_d = Δt Σ_m [ α Z(γ x_m + (1-γ) x_{m+1}) + (1-α) Z((1-γ) x_m + γ x_{m+1}) ]
//! ```
//!
//! which is expanded once per grid into a list of weighted evaluation points.
//! Every point is an affine combination of the interval's unknowns, so values,
//! gradients and Hessians of `L_d` all follow from one chain rule.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{MultirateSystem, QuadratureSpec, SlowPlacement, TimeGrid};

/// A weighted potential evaluation at an affine combination of the interval
/// unknowns: slow part `ca·q_k + cb·q_{k+1}`, fast part `Σ c_j q^{f,j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EvalPoint {
    pub weight: f64,
    pub ca: f64,
    pub cb: f64,
    pub nodes: [(usize, f64); 2],
    pub n_nodes: usize,
    /// Micro interval the evaluation belongs to.
    pub interval: usize,
}

impl EvalPoint {
    pub fn fast_terms(&self) -> &[(usize, f64)] {
        &self.nodes[..self.n_nodes]
    }

    fn slow_state(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        if self.cb == 0.0 {
            a * self.ca
        } else if self.ca == 0.0 {
            b * self.cb
        } else {
            a * self.ca + b * self.cb
        }
    }

    fn fast_state(&self, fast: &[DVector<f64>]) -> DVector<f64> {
        let terms = self.fast_terms();
        let mut x = &fast[terms[0].0] * terms[0].1;
        for &(j, c) in &terms[1..] {
            x.axpy(c, &fast[j], 1.0);
        }
        x
    }
}

/// Evaluation points of `V_d` and `W_d` for one quadrature and grid.
#[derive(Debug, Clone)]
pub(crate) struct PointSet {
    pub slow: Vec<EvalPoint>,
    pub fast: Vec<EvalPoint>,
}

impl PointSet {
    pub fn new(quad: &QuadratureSpec, grid: &TimeGrid) -> Self {
        let p = grid.micro_per_macro();
        let dt = grid.micro_step();
        let slow = match quad.slow_placement {
            SlowPlacement::MicroGrid => affine_points(quad.alpha_v, quad.gamma_v, p, dt, true),
            SlowPlacement::MacroNodesOnly => {
                let d_t = grid.macro_step();
                let mut pts = Vec::with_capacity(2);
                let left = EvalPoint {
                    weight: d_t * quad.alpha_v,
                    ca: 1.0,
                    cb: 0.0,
                    nodes: [(0, 1.0), (0, 0.0)],
                    n_nodes: 1,
                    interval: 0,
                };
                let right = EvalPoint {
                    weight: d_t * (1.0 - quad.alpha_v),
                    ca: 0.0,
                    cb: 1.0,
                    nodes: [(p, 1.0), (0, 0.0)],
                    n_nodes: 1,
                    interval: p - 1,
                };
                for pt in [left, right] {
                    if pt.weight != 0.0 {
                        pts.push(pt);
                    }
                }
                pts
            }
        };
        let fast = affine_points(quad.alpha_w, quad.gamma_w, p, dt, false);
        PointSet { slow, fast }
    }
}

fn affine_points(alpha: f64, gamma: f64, p: usize, dt: f64, with_slow: bool) -> Vec<EvalPoint> {
    let pf = p as f64;
    let mut pts = Vec::with_capacity(2 * p);
    for m in 0..p {
        // (weight, coefficient on node m)
        let pair = if gamma == 0.5 {
            vec![(1.0, 0.5)]
        } else {
            vec![(alpha, gamma), (1.0 - alpha, 1.0 - gamma)]
        };
        for (w, c_left) in pair {
            if w == 0.0 {
                continue;
            }
            let c_right = 1.0 - c_left;
            let (nodes, n_nodes) = if c_right == 0.0 {
                ([(m, 1.0), (0, 0.0)], 1)
            } else if c_left == 0.0 {
                ([(m + 1, 1.0), (0, 0.0)], 1)
            } else {
                ([(m, c_left), (m + 1, c_right)], 2)
            };
            // slow interpolation weight of node m is m/p
            let (ca, cb) = if with_slow {
                let theta = (c_left * m as f64 + c_right * (m + 1) as f64) / pf;
                (1.0 - theta, theta)
            } else {
                (0.0, 0.0)
            };
            pts.push(EvalPoint {
                weight: w * dt,
                ca,
                cb,
                nodes,
                n_nodes,
                interval: m,
            });
        }
    }
    pts
}

fn check_shapes(
    a: &DVector<f64>,
    b: &DVector<f64>,
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    grid: &TimeGrid,
) -> Result<()> {
    if a.len() != sys.n_slow() || b.len() != sys.n_slow() {
        return Err(Error::InvalidArgument("slow configuration has wrong dimension".into()));
    }
    check_fast_shapes(fast, sys, grid)
}

fn check_fast_shapes(fast: &[DVector<f64>], sys: &MultirateSystem, grid: &TimeGrid) -> Result<()> {
    if fast.len() != grid.micro_per_macro() + 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} fast nodes, got {}",
            grid.micro_per_macro() + 1,
            fast.len()
        )));
    }
    if fast.iter().any(|f| f.len() != sys.n_fast()) {
        return Err(Error::InvalidArgument("fast configuration has wrong dimension".into()));
    }
    Ok(())
}

fn non_finite(node: usize, what: &str) -> Error {
    Error::NonlinearEvaluation {
        node,
        message: format!("{what} is not finite"),
    }
}

/// Slow configuration at micro node `m`: `q_k + (m/p)(q_{k+1} - q_k)`.
pub fn interp_slow(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    grid: &TimeGrid,
    m: usize,
) -> Result<DVector<f64>> {
    let p = grid.micro_per_macro();
    if m > p {
        return Err(Error::InvalidArgument(format!("micro index {m} exceeds p = {p}")));
    }
    if q_slow_k.len() != q_slow_next.len() {
        return Err(Error::InvalidArgument("slow endpoints differ in dimension".into()));
    }
    if m == p {
        return Ok(q_slow_next.clone());
    }
    let theta = m as f64 / p as f64;
    Ok(q_slow_k + (q_slow_next - q_slow_k) * theta)
}

/// `T_d` over one macro interval. `fast_nodes` holds `q^{f,0..=p}`.
pub fn discrete_kinetic(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    grid: &TimeGrid,
) -> Result<f64> {
    check_shapes(q_slow_k, q_slow_next, fast_nodes, sys, grid)?;
    Ok(micro_kinetic(q_slow_k, q_slow_next, fast_nodes, sys, grid).iter().sum())
}

/// Kinetic energy per micro interval; the slow part is split evenly.
fn micro_kinetic(
    a: &DVector<f64>,
    b: &DVector<f64>,
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    grid: &TimeGrid,
) -> Vec<f64> {
    let d_t = grid.macro_step();
    let dt = grid.micro_step();
    let p = grid.micro_per_macro();
    let ds = b - a;
    let slow = ds.dot(&(sys.mass_slow() * &ds)) / (2.0 * d_t);
    (0..p)
        .map(|m| {
            let df = &fast[m + 1] - &fast[m];
            slow / p as f64 + df.dot(&(sys.mass_fast() * &df)) / (2.0 * dt)
        })
        .collect()
}

/// `V_d` over one macro interval.
pub fn discrete_slow_potential(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<f64> {
    check_shapes(q_slow_k, q_slow_next, fast_nodes, sys, grid)?;
    quad.validate()?;
    let pts = PointSet::new(quad, grid);
    let mut per = vec![0.0; grid.micro_per_macro()];
    slow_potential_terms(&pts.slow, q_slow_k, q_slow_next, fast_nodes, sys, &mut per)?;
    Ok(per.iter().sum())
}

/// `W_d` over one macro interval.
pub fn discrete_fast_potential(
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<f64> {
    check_fast_shapes(fast_nodes, sys, grid)?;
    quad.validate()?;
    let pts = PointSet::new(quad, grid);
    let mut per = vec![0.0; grid.micro_per_macro()];
    fast_potential_terms(&pts.fast, fast_nodes, sys, &mut per)?;
    Ok(per.iter().sum())
}

fn slow_potential_terms(
    pts: &[EvalPoint],
    a: &DVector<f64>,
    b: &DVector<f64>,
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    per: &mut [f64],
) -> Result<()> {
    for pt in pts {
        let v = sys.slow_potential(&pt.slow_state(a, b), &pt.fast_state(fast));
        if !v.is_finite() {
            return Err(non_finite(pt.interval, "slow potential"));
        }
        per[pt.interval] += pt.weight * v;
    }
    Ok(())
}

fn fast_potential_terms(
    pts: &[EvalPoint],
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    per: &mut [f64],
) -> Result<()> {
    for pt in pts {
        let w = sys.fast_potential(&pt.fast_state(fast));
        if !w.is_finite() {
            return Err(non_finite(pt.interval, "fast potential"));
        }
        per[pt.interval] += pt.weight * w;
    }
    Ok(())
}

/// `L_d = T_d - V_d - W_d` over one macro interval.
pub fn discrete_lagrangian(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<f64> {
    Ok(micro_lagrangians(q_slow_k, q_slow_next, fast_nodes, sys, quad, grid)?
        .iter()
        .sum())
}

/// Contributions `L_d^m` of the individual micro intervals. With macro-node
/// slow placement the two slow evaluations are booked on the first and last
/// micro interval.
pub fn micro_lagrangians(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    check_shapes(q_slow_k, q_slow_next, fast_nodes, sys, grid)?;
    quad.validate()?;
    let pts = PointSet::new(quad, grid);
    let p = grid.micro_per_macro();
    let mut v = vec![0.0; p];
    let mut w = vec![0.0; p];
    slow_potential_terms(&pts.slow, q_slow_k, q_slow_next, fast_nodes, sys, &mut v)?;
    fast_potential_terms(&pts.fast, fast_nodes, sys, &mut w)?;
    let t = micro_kinetic(q_slow_k, q_slow_next, fast_nodes, sys, grid);
    Ok((0..p).map(|m| t[m] - v[m] - w[m]).collect())
}

/// First derivatives of `L_d` over one macro interval.
///
/// The fast derivative at node `j` is split by micro interval:
/// `fast_left[j]` comes from interval `j-1` and `fast_right[j]` from interval
/// `j`, so `∂L_d/∂q^{f,j} = fast_left[j] + fast_right[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianPartials {
    pub slow_start: DVector<f64>,
    pub slow_end: DVector<f64>,
    pub fast_left: Vec<DVector<f64>>,
    pub fast_right: Vec<DVector<f64>>,
}

impl LagrangianPartials {
    pub fn fast(&self, j: usize) -> DVector<f64> {
        &self.fast_left[j] + &self.fast_right[j]
    }
}

pub(crate) fn partials_with(
    pts: &PointSet,
    a: &DVector<f64>,
    b: &DVector<f64>,
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    grid: &TimeGrid,
) -> Result<LagrangianPartials> {
    let p = grid.micro_per_macro();
    let d_t = grid.macro_step();
    let dt = grid.micro_step();
    let n_f = sys.n_fast();

    let vs = sys.mass_slow() * (b - a) / d_t;
    let mut out = LagrangianPartials {
        slow_start: -&vs,
        slow_end: vs,
        fast_left: vec![DVector::zeros(n_f); p + 1],
        fast_right: vec![DVector::zeros(n_f); p + 1],
    };
    for m in 0..p {
        let vf = sys.mass_fast() * (&fast[m + 1] - &fast[m]) / dt;
        out.fast_right[m] -= &vf;
        out.fast_left[m + 1] += &vf;
    }

    for pt in &pts.slow {
        let (gs, gf) = sys.slow_gradient(&pt.slow_state(a, b), &pt.fast_state(fast));
        if gs.iter().chain(gf.iter()).any(|x| !x.is_finite()) {
            return Err(non_finite(pt.interval, "slow gradient"));
        }
        if pt.ca != 0.0 {
            out.slow_start.axpy(-pt.weight * pt.ca, &gs, 1.0);
        }
        if pt.cb != 0.0 {
            out.slow_end.axpy(-pt.weight * pt.cb, &gs, 1.0);
        }
        add_fast_terms(&mut out, pt, &gf);
    }
    for pt in &pts.fast {
        let g = sys.fast_gradient(&pt.fast_state(fast));
        if g.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(pt.interval, "fast gradient"));
        }
        add_fast_terms(&mut out, pt, &g);
    }
    Ok(out)
}

fn add_fast_terms(out: &mut LagrangianPartials, pt: &EvalPoint, g: &DVector<f64>) {
    for &(j, c) in pt.fast_terms() {
        let target = if j == pt.interval {
            &mut out.fast_right[j]
        } else {
            &mut out.fast_left[j]
        };
        target.axpy(-pt.weight * c, g, 1.0);
    }
}

/// Derivatives of `L_d` with respect to `q_k`, `q_{k+1}` and every fast node.
pub fn lagrangian_partials(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<LagrangianPartials> {
    check_shapes(q_slow_k, q_slow_next, fast_nodes, sys, grid)?;
    quad.validate()?;
    partials_with(&PointSet::new(quad, grid), q_slow_k, q_slow_next, fast_nodes, sys, grid)
}

/// Discrete momenta generated by one macro interval.
///
/// `slow_minus = -∂L_d/∂q_k` sits at node `k`, `slow_plus = ∂L_d/∂q_{k+1}` at
/// node `k+1`. `fast_minus[m] = -∂L_d^m/∂q^{f,m}` for `m = 0..p-1` and
/// `fast_plus[m] = ∂L_d^{m-1}/∂q^{f,m}` for `m = 1..=p` (index 0 unused, zero).
/// The discrete Euler-Lagrange equations state that minus and plus momenta
/// agree at every shared node.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMomenta {
    pub slow_minus: DVector<f64>,
    pub slow_plus: DVector<f64>,
    pub fast_minus: Vec<DVector<f64>>,
    pub fast_plus: Vec<DVector<f64>>,
}

impl From<LagrangianPartials> for IntervalMomenta {
    fn from(d: LagrangianPartials) -> Self {
        let p = d.fast_left.len() - 1;
        let mut fast_minus: Vec<DVector<f64>> = d.fast_right.into_iter().map(|v| -v).collect();
        fast_minus.truncate(p);
        let mut fast_plus = d.fast_left;
        fast_plus[0].fill(0.0);
        IntervalMomenta {
            slow_minus: -d.slow_start,
            slow_plus: d.slow_end,
            fast_minus,
            fast_plus,
        }
    }
}

pub fn discrete_momenta(
    q_slow_k: &DVector<f64>,
    q_slow_next: &DVector<f64>,
    fast_nodes: &[DVector<f64>],
    sys: &MultirateSystem,
    quad: &QuadratureSpec,
    grid: &TimeGrid,
) -> Result<IntervalMomenta> {
    lagrangian_partials(q_slow_k, q_slow_next, fast_nodes, sys, quad, grid).map(Into::into)
}

/// Second-derivative blocks of `L_d` needed for the Newton Jacobian of the
/// discrete Euler-Lagrange residual. Rows are `q_k` and fast nodes `0..p-1`;
/// columns are `q_{k+1}` and fast nodes `1..=p`. Kinetic terms are omitted;
/// the callback receives `(row, col, block)` with `row`/`col` being `None` for
/// the slow variable and `Some(j)` for fast node `j`.
pub(crate) fn potential_hessian_blocks<F>(
    pts: &PointSet,
    a: &DVector<f64>,
    b: &DVector<f64>,
    fast: &[DVector<f64>],
    sys: &MultirateSystem,
    grid: &TimeGrid,
    mut add: F,
) -> Result<()>
where
    F: FnMut(Option<usize>, Option<usize>, f64, &DMatrix<f64>, BlockPart),
{
    let p = grid.micro_per_macro();
    let n_s = sys.n_slow();
    let n_f = sys.n_fast();
    let missing = || Error::Configuration("analytic Jacobian requested but Hessians are missing".into());
    for pt in &pts.slow {
        let h = sys
            .slow_hessian(&pt.slow_state(a, b), &pt.fast_state(fast))
            .ok_or_else(missing)?;
        if h.nrows() != n_s + n_f || h.ncols() != n_s + n_f {
            return Err(Error::InvalidArgument("slow Hessian has wrong shape".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(pt.interval, "slow Hessian"));
        }
        let w = -pt.weight;
        if pt.ca != 0.0 && pt.cb != 0.0 {
            add(None, None, w * pt.ca * pt.cb, &h, BlockPart::SlowSlow);
        }
        for &(j, c) in pt.fast_terms() {
            if pt.ca != 0.0 && j >= 1 {
                add(None, Some(j), w * pt.ca * c, &h, BlockPart::SlowFast);
            }
            if pt.cb != 0.0 && j < p {
                add(Some(j), None, w * c * pt.cb, &h, BlockPart::FastSlow);
            }
            for &(i, ci) in pt.fast_terms() {
                if i < p && j >= 1 {
                    add(Some(i), Some(j), w * ci * c, &h, BlockPart::FastFast);
                }
            }
        }
    }
    for pt in &pts.fast {
        let h = sys.fast_hessian(&pt.fast_state(fast)).ok_or_else(missing)?;
        if h.nrows() != n_f || h.ncols() != n_f {
            return Err(Error::InvalidArgument("fast Hessian has wrong shape".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(pt.interval, "fast Hessian"));
        }
        for &(j, c) in pt.fast_terms() {
            for &(i, ci) in pt.fast_terms() {
                if i < p && j >= 1 {
                    add(Some(i), Some(j), -pt.weight * ci * c, &h, BlockPart::Whole);
                }
            }
        }
    }
    Ok(())
}

/// Which sub-block of the supplied Hessian a contribution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockPart {
    SlowSlow,
    SlowFast,
    FastSlow,
    FastFast,
    /// The whole (fast-only) Hessian.
    Whole,
}
