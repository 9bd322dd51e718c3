//! Domain types: the multirate mechanical system, the quadrature configuration,
//! the nested macro/micro time grid and trajectory storage.
//!
//! A system is described by its block-diagonal mass matrix `diag(M_s, M_f)`, a
//! slow potential `V(q_s, q_f)` coupling both sets of variables and a fast
//! potential `W(q_f)`. Potentials are plain closures with user-supplied
//! gradients; Hessians are optional and only used for analytic Newton
//! Jacobians. Closures must be re-entrant: systems are shared read-only across
//! threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SlowPotentialFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type SlowGradientFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;
/// Hessian of `V` with respect to the stacked configuration `[q_s; q_f]`.
pub type SlowHessianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type FastPotentialFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type FastGradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FastHessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

const MASS_SYMMETRY_TOL: f64 = 1e-14;

/// A mechanical system with a-priori split slow and fast variables.
#[derive(Clone)]
pub struct MultirateSystem {
    mass_slow: DMatrix<f64>,
    mass_fast: DMatrix<f64>,
    mass_slow_inv: DMatrix<f64>,
    mass_fast_inv: DMatrix<f64>,
    slow_potential: SlowPotentialFn,
    slow_gradient: SlowGradientFn,
    slow_hessian: Option<SlowHessianFn>,
    fast_potential: FastPotentialFn,
    fast_gradient: FastGradientFn,
    fast_hessian: Option<FastHessianFn>,
    oscillator_stiffness: Option<DVector<f64>>,
}

impl fmt::Debug for MultirateSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultirateSystem")
            .field("n_slow", &self.n_slow())
            .field("n_fast", &self.n_fast())
            .field("analytic_hessians", &self.has_hessians())
            .finish()
    }
}

impl MultirateSystem {
    pub fn builder(mass_slow: DMatrix<f64>, mass_fast: DMatrix<f64>) -> SystemBuilder {
        SystemBuilder {
            mass_slow,
            mass_fast,
            slow: None,
            fast: None,
            slow_hessian: None,
            fast_hessian: None,
            oscillator_stiffness: None,
        }
    }

    pub fn n_slow(&self) -> usize {
        self.mass_slow.nrows()
    }

    pub fn n_fast(&self) -> usize {
        self.mass_fast.nrows()
    }

    pub fn mass_slow(&self) -> &DMatrix<f64> {
        &self.mass_slow
    }

    pub fn mass_fast(&self) -> &DMatrix<f64> {
        &self.mass_fast
    }

    pub fn mass_slow_inv(&self) -> &DMatrix<f64> {
        &self.mass_slow_inv
    }

    pub fn mass_fast_inv(&self) -> &DMatrix<f64> {
        &self.mass_fast_inv
    }

    pub fn slow_potential(&self, q_slow: &DVector<f64>, q_fast: &DVector<f64>) -> f64 {
        (self.slow_potential)(q_slow, q_fast)
    }

    /// `(∂V/∂q_s, ∂V/∂q_f)`.
    pub fn slow_gradient(
        &self,
        q_slow: &DVector<f64>,
        q_fast: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        (self.slow_gradient)(q_slow, q_fast)
    }

    pub fn slow_hessian(&self, q_slow: &DVector<f64>, q_fast: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.slow_hessian.as_ref().map(|h| h(q_slow, q_fast))
    }

    pub fn fast_potential(&self, q_fast: &DVector<f64>) -> f64 {
        (self.fast_potential)(q_fast)
    }

    pub fn fast_gradient(&self, q_fast: &DVector<f64>) -> DVector<f64> {
        (self.fast_gradient)(q_fast)
    }

    pub fn fast_hessian(&self, q_fast: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.fast_hessian.as_ref().map(|h| h(q_fast))
    }

    /// True when both potentials carry analytic Hessians.
    pub fn has_hessians(&self) -> bool {
        self.slow_hessian.is_some() && self.fast_hessian.is_some()
    }

    /// Per-fast-coordinate stiffness `k_j` when the fast potential is a sum of
    /// independent oscillators `½ k_j (q_f,j)²`. Enables the stiff energy
    /// diagnostics `I_j`.
    pub fn oscillator_stiffness(&self) -> Option<&DVector<f64>> {
        self.oscillator_stiffness.as_ref()
    }

    /// Legendre map of the separable kinetic energy: `p = M v` blockwise.
    pub fn momenta_from_velocities(
        &self,
        v_slow: &DVector<f64>,
        v_fast: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        (&self.mass_slow * v_slow, &self.mass_fast * v_fast)
    }

    pub fn velocities_from_momenta(
        &self,
        p_slow: &DVector<f64>,
        p_fast: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        (&self.mass_slow_inv * p_slow, &self.mass_fast_inv * p_fast)
    }

    pub fn kinetic_energy(&self, p_slow: &DVector<f64>, p_fast: &DVector<f64>) -> f64 {
        0.5 * p_slow.dot(&(&self.mass_slow_inv * p_slow))
            + 0.5 * p_fast.dot(&(&self.mass_fast_inv * p_fast))
    }

    /// Builds a [`State`] from configuration and velocities through `p = M v`.
    pub fn state_from_velocities(
        &self,
        q_slow: DVector<f64>,
        q_fast: DVector<f64>,
        v_slow: &DVector<f64>,
        v_fast: &DVector<f64>,
    ) -> State {
        let (p_slow, p_fast) = self.momenta_from_velocities(v_slow, v_fast);
        State {
            q_slow,
            q_fast,
            p_slow,
            p_fast,
        }
    }

    pub(crate) fn check_state(&self, state: &State) -> Result<()> {
        if state.q_slow.len() != self.n_slow()
            || state.p_slow.len() != self.n_slow()
            || state.q_fast.len() != self.n_fast()
            || state.p_fast.len() != self.n_fast()
        {
            return Err(Error::InvalidArgument(format!(
                "state dimensions do not match system (n_slow = {}, n_fast = {})",
                self.n_slow(),
                self.n_fast()
            )));
        }
        if !state.is_finite() {
            return Err(Error::InvalidArgument("state contains non-finite entries".into()));
        }
        Ok(())
    }
}

pub struct SystemBuilder {
    mass_slow: DMatrix<f64>,
    mass_fast: DMatrix<f64>,
    slow: Option<(SlowPotentialFn, SlowGradientFn)>,
    fast: Option<(FastPotentialFn, FastGradientFn)>,
    slow_hessian: Option<SlowHessianFn>,
    fast_hessian: Option<FastHessianFn>,
    oscillator_stiffness: Option<DVector<f64>>,
}

impl SystemBuilder {
    pub fn slow_potential<V, G>(mut self, value: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    {
        self.slow = Some((Arc::new(value), Arc::new(gradient)));
        self
    }

    pub fn fast_potential<V, G>(mut self, value: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.fast = Some((Arc::new(value), Arc::new(gradient)));
        self
    }

    pub fn slow_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.slow_hessian = Some(Arc::new(hessian));
        self
    }

    pub fn fast_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.fast_hessian = Some(Arc::new(hessian));
        self
    }

    pub fn oscillator_stiffness(mut self, stiffness: DVector<f64>) -> Self {
        self.oscillator_stiffness = Some(stiffness);
        self
    }

    pub fn build(self) -> Result<MultirateSystem> {
        let mass_slow_inv = check_mass("slow", &self.mass_slow)?;
        let mass_fast_inv = check_mass("fast", &self.mass_fast)?;
        let (n_s, n_f) = (self.mass_slow.nrows(), self.mass_fast.nrows());
        // an absent potential is identically zero, and so is its Hessian
        let zero_slow_hessian = self.slow.is_none().then(|| -> SlowHessianFn {
            Arc::new(move |_, _| DMatrix::zeros(n_s + n_f, n_s + n_f))
        });
        let zero_fast_hessian = self.fast.is_none().then(|| -> FastHessianFn {
            Arc::new(move |_| DMatrix::zeros(n_f, n_f))
        });
        let (slow_potential, slow_gradient) = match self.slow {
            Some(s) => s,
            None => {
                let value: SlowPotentialFn = Arc::new(|_, _| 0.0);
                let grad: SlowGradientFn =
                    Arc::new(move |_, _| (DVector::zeros(n_s), DVector::zeros(n_f)));
                if self.slow_hessian.is_some() {
                    return Err(Error::Configuration(
                        "slow Hessian given without slow potential".into(),
                    ));
                }
                (value, grad)
            }
        };
        let (fast_potential, fast_gradient) = match self.fast {
            Some(f) => f,
            None => {
                let value: FastPotentialFn = Arc::new(|_| 0.0);
                let grad: FastGradientFn = Arc::new(move |_| DVector::zeros(n_f));
                (value, grad)
            }
        };
        if let Some(k) = &self.oscillator_stiffness {
            if k.len() != self.mass_fast.nrows() {
                return Err(Error::InvalidArgument(
                    "oscillator stiffness length must equal n_fast".into(),
                ));
            }
        }
        Ok(MultirateSystem {
            mass_slow: self.mass_slow,
            mass_fast: self.mass_fast,
            mass_slow_inv,
            mass_fast_inv,
            slow_potential,
            slow_gradient,
            slow_hessian: self.slow_hessian.or(zero_slow_hessian),
            fast_potential,
            fast_gradient,
            fast_hessian: self.fast_hessian.or(zero_fast_hessian),
            oscillator_stiffness: self.oscillator_stiffness,
        })
    }
}

/// Checks symmetry and positive definiteness, returning the inverse.
fn check_mass(which: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 || !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "{which} mass matrix must be square and non-empty"
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > MASS_SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!("{which} mass matrix is not symmetric")));
    }
    let chol = m.clone().cholesky().ok_or_else(|| {
        Error::InvalidArgument(format!("{which} mass matrix is not positive definite"))
    })?;
    Ok(chol.inverse())
}

/// Placement of the slow potential's quadrature nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlowPlacement {
    /// Evaluate `V` on the micro grid with the slow variable linearly interpolated.
    MicroGrid,
    /// Affine combination of `V` at the two macro nodes only.
    MacroNodesOnly,
}

/// Named rows of the quadrature coefficient table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuadratureRule {
    /// `γ = 1/2`, any `α`.
    Midpoint,
    /// Two-point Lobatto (trapezoidal): `α = 1/2`, `γ ∈ {0, 1}`.
    Trapezoidal,
    LeftRectangle,
    RightRectangle,
    /// Affine node combination with weight `alpha` on the left node (`γ = 1`).
    Affine { alpha: f64 },
}

impl QuadratureRule {
    /// Canonical `(α, γ)` for this rule.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            QuadratureRule::Midpoint => (0.5, 0.5),
            QuadratureRule::Trapezoidal => (0.5, 1.0),
            QuadratureRule::LeftRectangle => (1.0, 1.0),
            QuadratureRule::RightRectangle => (1.0, 0.0),
            QuadratureRule::Affine { alpha } => (alpha, 1.0),
        }
    }

    /// Recovers the named rule from `(α, γ)`; `None` for interior `γ ≠ 1/2`.
    pub fn classify(alpha: f64, gamma: f64) -> Option<QuadratureRule> {
        if gamma == 0.5 {
            return Some(QuadratureRule::Midpoint);
        }
        if gamma != 0.0 && gamma != 1.0 {
            return None;
        }
        // weight carried by the left node of each micro interval
        let left = if gamma == 1.0 { alpha } else { 1.0 - alpha };
        Some(if alpha == 0.5 {
            QuadratureRule::Trapezoidal
        } else if left == 1.0 {
            QuadratureRule::LeftRectangle
        } else if left == 0.0 {
            QuadratureRule::RightRectangle
        } else {
            QuadratureRule::Affine { alpha: left }
        })
    }
}

/// Quadrature coefficients for the slow and fast potentials.
///
/// Each potential `Z` is approximated on every micro interval by
/// `Δt [α Z(γ x_m + (1-γ) x_{m+1}) + (1-α) Z((1-γ) x_m + γ x_{m+1})]`.
/// With [`SlowPlacement::MacroNodesOnly`] the slow potential instead uses
/// `ΔT [α_V V(q_k) + (1-α_V) V(q_{k+1})]` and `γ_V` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub alpha_v: f64,
    pub gamma_v: f64,
    pub alpha_w: f64,
    pub gamma_w: f64,
    pub slow_placement: SlowPlacement,
}

impl QuadratureSpec {
    pub fn new(alpha_v: f64, gamma_v: f64, alpha_w: f64, gamma_w: f64) -> Result<Self> {
        let q = QuadratureSpec {
            alpha_v,
            gamma_v,
            alpha_w,
            gamma_w,
            slow_placement: SlowPlacement::MicroGrid,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_placement(mut self, placement: SlowPlacement) -> Self {
        self.slow_placement = placement;
        self
    }

    /// Builds a spec from two named rules (slow, fast) on the micro grid.
    pub fn from_rules(slow: QuadratureRule, fast: QuadratureRule) -> Self {
        let (alpha_v, gamma_v) = slow.coefficients();
        let (alpha_w, gamma_w) = fast.coefficients();
        QuadratureSpec {
            alpha_v,
            gamma_v,
            alpha_w,
            gamma_w,
            slow_placement: SlowPlacement::MicroGrid,
        }
    }

    /// Midpoint rule for both potentials.
    pub fn midpoint_midpoint() -> Self {
        Self::from_rules(QuadratureRule::Midpoint, QuadratureRule::Midpoint)
    }

    /// Affine node rule with left weight `alpha_v` for `V`, midpoint for `W`.
    pub fn trapezoidal_midpoint(alpha_v: f64) -> Self {
        QuadratureSpec {
            alpha_v,
            gamma_v: 1.0,
            alpha_w: 0.5,
            gamma_w: 0.5,
            slow_placement: SlowPlacement::MicroGrid,
        }
    }

    /// Affine node rules for both potentials, left weights `alpha_v`, `alpha_w`.
    pub fn trapezoidal_trapezoidal(alpha_v: f64, alpha_w: f64) -> Self {
        QuadratureSpec {
            alpha_v,
            gamma_v: 1.0,
            alpha_w,
            gamma_w: 1.0,
            slow_placement: SlowPlacement::MicroGrid,
        }
    }

    /// Slow potential on macro nodes only, fast potential on micro nodes:
    /// the fully explicit combination.
    pub fn explicit(alpha_v: f64, alpha_w: f64) -> Self {
        QuadratureSpec {
            alpha_v,
            gamma_v: 1.0,
            alpha_w,
            gamma_w: 1.0,
            slow_placement: SlowPlacement::MacroNodesOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_V", self.alpha_v),
            ("gamma_V", self.gamma_v),
            ("alpha_W", self.alpha_w),
            ("gamma_W", self.gamma_w),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn slow_rule(&self) -> Option<QuadratureRule> {
        QuadratureRule::classify(self.alpha_v, self.gamma_v)
    }

    pub fn fast_rule(&self) -> Option<QuadratureRule> {
        QuadratureRule::classify(self.alpha_w, self.gamma_w)
    }

    /// True when the discrete Euler-Lagrange equations can be solved by a
    /// sequence of mass-matrix solves for the given micro ratio.
    pub fn is_explicit_solvable(&self, micro_per_macro: usize) -> bool {
        let fast_nodes = self.gamma_w == 0.0 || self.gamma_w == 1.0;
        let slow_nodes = match self.slow_placement {
            SlowPlacement::MacroNodesOnly => true,
            SlowPlacement::MicroGrid => {
                micro_per_macro == 1 && (self.gamma_v == 0.0 || self.gamma_v == 1.0)
            }
        };
        fast_nodes && slow_nodes
    }

    /// Weight of the left macro node in the slow node rule.
    pub(crate) fn slow_left_weight(&self) -> f64 {
        match self.slow_placement {
            SlowPlacement::MacroNodesOnly => self.alpha_v,
            SlowPlacement::MicroGrid => node_left_weight(self.alpha_v, self.gamma_v),
        }
    }

    pub(crate) fn fast_left_weight(&self) -> f64 {
        node_left_weight(self.alpha_w, self.gamma_w)
    }
}

fn node_left_weight(alpha: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        alpha
    } else {
        1.0 - alpha
    }
}

/// Two nested uniform grids: macro step `ΔT` and micro step `Δt = ΔT / p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    d_t_macro: f64,
    micro_per_macro: usize,
    n_macro: usize,
    t0: f64,
}

impl TimeGrid {
    /// `n_macro = 0` is allowed and describes an initial-state-only run.
    pub fn new(d_t_macro: f64, micro_per_macro: usize, n_macro: usize, t0: f64) -> Result<Self> {
        if !(d_t_macro > 0.0) || !d_t_macro.is_finite() {
            return Err(Error::InvalidArgument(format!("macro step must be positive, got {d_t_macro}")));
        }
        if micro_per_macro == 0 {
            return Err(Error::InvalidArgument("micro_per_macro must be at least 1".into()));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidArgument("t0 must be finite".into()));
        }
        Ok(TimeGrid {
            d_t_macro,
            micro_per_macro,
            n_macro,
            t0,
        })
    }

    /// Grid covering `[t0, t_end]`; `t_end - t0` must be an integer number of
    /// macro steps (to relative `1e-9`).
    pub fn spanning(d_t_macro: f64, micro_per_macro: usize, t0: f64, t_end: f64) -> Result<Self> {
        let span = t_end - t0;
        if span < 0.0 {
            return Err(Error::InvalidArgument("t_end before t0".into()));
        }
        let steps = span / d_t_macro;
        let n = steps.round();
        if (steps - n).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time span {span} is not a multiple of the macro step {d_t_macro}"
            )));
        }
        TimeGrid::new(d_t_macro, micro_per_macro, n as usize, t0)
    }

    pub fn macro_step(&self) -> f64 {
        self.d_t_macro
    }

    pub fn micro_step(&self) -> f64 {
        self.d_t_macro / self.micro_per_macro as f64
    }

    pub fn micro_per_macro(&self) -> usize {
        self.micro_per_macro
    }

    pub fn n_macro(&self) -> usize {
        self.n_macro
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.macro_time(self.n_macro)
    }

    pub fn with_n_macro(mut self, n_macro: usize) -> Self {
        self.n_macro = n_macro;
        self
    }

    /// Number of fast nodes, `N p + 1`.
    pub fn n_fast_nodes(&self) -> usize {
        self.n_macro * self.micro_per_macro + 1
    }

    pub fn macro_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.d_t_macro
    }

    /// `t_k^m`; the pair `(k, p)` is folded onto `(k + 1, 0)` so both index
    /// forms of a shared node give the identical float.
    pub fn micro_time(&self, k: usize, m: usize) -> f64 {
        let (k, m) = self.canonical(k, m);
        self.macro_time(k) + m as f64 * self.micro_step()
    }

    /// Time of the flattened fast node `j = k p + m`.
    pub fn fast_node_time(&self, j: usize) -> f64 {
        let p = self.micro_per_macro;
        self.micro_time(j / p, j % p)
    }

    /// Flattened fast index of `(k, m)`.
    pub fn fast_index(&self, k: usize, m: usize) -> usize {
        k * self.micro_per_macro + m
    }

    fn canonical(&self, k: usize, m: usize) -> (usize, usize) {
        let p = self.micro_per_macro;
        (k + m / p, m % p)
    }
}

/// Convenience constructor mirroring the library's grid contract.
pub fn build_time_grid(d_t: f64, micro_per_macro: usize, n_macro: usize, t0: f64) -> Result<TimeGrid> {
    if n_macro == 0 {
        return Err(Error::InvalidArgument("n_macro must be at least 1".into()));
    }
    TimeGrid::new(d_t, micro_per_macro, n_macro, t0)
}

/// Configuration and conjugate momenta at one (macro) node.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q_slow: DVector<f64>,
    pub q_fast: DVector<f64>,
    pub p_slow: DVector<f64>,
    pub p_fast: DVector<f64>,
}

impl State {
    pub fn is_finite(&self) -> bool {
        [&self.q_slow, &self.q_fast, &self.p_slow, &self.p_fast]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `[q_s; q_f; p_s; p_f]`.
    pub fn to_phase_vector(&self) -> DVector<f64> {
        let (ns, nf) = (self.q_slow.len(), self.q_fast.len());
        let mut x = DVector::zeros(2 * (ns + nf));
        x.rows_mut(0, ns).copy_from(&self.q_slow);
        x.rows_mut(ns, nf).copy_from(&self.q_fast);
        x.rows_mut(ns + nf, ns).copy_from(&self.p_slow);
        x.rows_mut(2 * ns + nf, nf).copy_from(&self.p_fast);
        x
    }

    pub fn from_phase_vector(x: &DVector<f64>, n_slow: usize, n_fast: usize) -> State {
        State {
            q_slow: x.rows(0, n_slow).into_owned(),
            q_fast: x.rows(n_slow, n_fast).into_owned(),
            p_slow: x.rows(n_slow + n_fast, n_slow).into_owned(),
            p_fast: x.rows(2 * n_slow + n_fast, n_fast).into_owned(),
        }
    }
}

/// Row-major storage of equally sized node vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeArray {
    dim: usize,
    data: Vec<f64>,
}

impl NodeArray {
    pub fn new(dim: usize) -> Self {
        NodeArray { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        NodeArray {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(i))
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "node dimension mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Discrete solution: slow data on macro nodes, fast data on micro nodes.
///
/// Fast arrays are flattened with index `k p + m`; the shared node
/// `(k-1, p) = (k, 0)` is stored once. A trajectory returned from a failed
/// integration may hold fewer than `N + 1` macro nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub slow_q: NodeArray,
    pub slow_p: NodeArray,
    pub fast_q: NodeArray,
    pub fast_p: NodeArray,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, initial: &State) -> Self {
        let (ns, nf) = (initial.q_slow.len(), initial.q_fast.len());
        let mut traj = Trajectory {
            grid,
            slow_q: NodeArray::with_capacity(ns, grid.n_macro() + 1),
            slow_p: NodeArray::with_capacity(ns, grid.n_macro() + 1),
            fast_q: NodeArray::with_capacity(nf, grid.n_fast_nodes()),
            fast_p: NodeArray::with_capacity(nf, grid.n_fast_nodes()),
        };
        traj.slow_q.push(initial.q_slow.as_slice());
        traj.slow_p.push(initial.p_slow.as_slice());
        traj.fast_q.push(initial.q_fast.as_slice());
        traj.fast_p.push(initial.p_fast.as_slice());
        traj
    }

    /// Number of macro nodes stored.
    pub fn n_macro_nodes(&self) -> usize {
        self.slow_q.len()
    }

    /// True when all `N + 1` macro nodes are present.
    pub fn is_complete(&self) -> bool {
        self.n_macro_nodes() == self.grid.n_macro() + 1
    }

    /// State at macro node `k`.
    pub fn state(&self, k: usize) -> State {
        let j = self.grid.fast_index(k, 0);
        State {
            q_slow: self.slow_q.vector(k),
            q_fast: self.fast_q.vector(j),
            p_slow: self.slow_p.vector(k),
            p_fast: self.fast_p.vector(j),
        }
    }

    pub fn final_state(&self) -> State {
        self.state(self.n_macro_nodes() - 1)
    }

    /// Appends one macro interval: the slow node `k + 1` and fast nodes
    /// `m = 1..=p` of interval `k`.
    pub(crate) fn push_interval(
        &mut self,
        q_slow_end: &DVector<f64>,
        p_slow_end: &DVector<f64>,
        fast_q: &[DVector<f64>],
        fast_p: &[DVector<f64>],
    ) {
        self.slow_q.push(q_slow_end.as_slice());
        self.slow_p.push(p_slow_end.as_slice());
        for (q, p) in fast_q.iter().zip(fast_p) {
            self.fast_q.push(q.as_slice());
            self.fast_p.push(p.as_slice());
        }
    }
}

/// Gradient deviations at one probe state.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub index: usize,
    /// Relative deviation of `∂V/∂q_s`, `∂V/∂q_f` and `∇W` from central differences.
    pub slow_dq_slow: f64,
    pub slow_dq_fast: f64,
    pub fast_dq_fast: f64,
    pub diagnostic: Option<String>,
}

impl ProbeResult {
    pub fn max_deviation(&self) -> f64 {
        self.slow_dq_slow.max(self.slow_dq_fast).max(self.fast_dq_fast)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub probes: Vec<ProbeResult>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Compares supplied gradients against central finite differences of the
/// potentials at each probe state.
///
/// Deviations are `‖g − g_fd‖∞ / max(‖g_fd‖∞, 1)`. A probe where a potential
/// evaluates to a non-finite value is reported as a diagnostic and fails the
/// report without aborting.
pub fn validate_system(sys: &MultirateSystem, probes: &[State], h: f64) -> Result<ValidationReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut results = Vec::with_capacity(probes.len());
    for (index, probe) in probes.iter().enumerate() {
        sys.check_state(probe)?;
        results.push(probe_gradients(sys, index, &probe.q_slow, &probe.q_fast, h));
    }
    let max_deviation = results.iter().map(|r| r.max_deviation()).fold(0.0, f64::max);
    let passed = results
        .iter()
        .all(|r| r.diagnostic.is_none() && r.max_deviation() <= GRADIENT_TOLERANCE);
    Ok(ValidationReport {
        probes: results,
        max_deviation,
        tolerance: GRADIENT_TOLERANCE,
        passed,
    })
}

fn probe_gradients(
    sys: &MultirateSystem,
    index: usize,
    qs: &DVector<f64>,
    qf: &DVector<f64>,
    h: f64,
) -> ProbeResult {
    let v0 = sys.slow_potential(qs, qf);
    let w0 = sys.fast_potential(qf);
    if !v0.is_finite() || !w0.is_finite() {
        return ProbeResult {
            index,
            slow_dq_slow: f64::INFINITY,
            slow_dq_fast: f64::INFINITY,
            fast_dq_fast: f64::INFINITY,
            diagnostic: Some(format!("non-finite potential (V = {v0}, W = {w0})")),
        };
    }
    let (gs, gf) = sys.slow_gradient(qs, qf);
    let gw = sys.fast_gradient(qf);

    let fd = |f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    };
    let fd_vs = fd(&|x| sys.slow_potential(x, qf), qs);
    let fd_vf = fd(&|x| sys.slow_potential(qs, x), qf);
    let fd_w = fd(&|x| sys.fast_potential(x), qf);

    let mut diagnostic = None;
    let mut dev = |g: &DVector<f64>, reference: &DVector<f64>| -> f64 {
        if g.len() != reference.len() {
            diagnostic = Some("gradient has wrong dimension".to_string());
            return f64::INFINITY;
        }
        let d = (g - reference).amax() / reference.amax().max(1.0);
        if !d.is_finite() {
            diagnostic = Some("non-finite gradient or finite difference".to_string());
        }
        d
    };
    let slow_dq_slow = dev(&gs, &fd_vs);
    let slow_dq_fast = dev(&gf, &fd_vf);
    let fast_dq_fast = dev(&gw, &fd_w);
    ProbeResult {
        index,
        slow_dq_slow,
        slow_dq_fast,
        fast_dq_fast,
        diagnostic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(omega_sq: f64) -> MultirateSystem {
        MultirateSystem::builder(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .fast_potential(move |q| 0.5 * omega_sq * q.norm_squared(), move |q| q * omega_sq)
            .build()
            .unwrap()
    }

    fn probe(qs: f64, qf: f64) -> State {
        State {
            q_slow: DVector::from_element(1, qs),
            q_fast: DVector::from_element(1, qf),
            p_slow: DVector::zeros(1),
            p_fast: DVector::zeros(1),
        }
    }

    #[test]
    fn grid_collapses_for_unit_ratio() {
        let g = build_time_grid(0.3, 1, 2, 0.0).unwrap();
        let micro: Vec<f64> = (0..g.n_fast_nodes()).map(|j| g.fast_node_time(j)).collect();
        let macro_: Vec<f64> = (0..=2).map(|k| g.macro_time(k)).collect();
        assert_eq!(micro, macro_);
        assert_eq!(macro_, vec![0.0, 0.3, 0.6]);
    }

    #[test]
    fn grid_micro_nodes() {
        let g = build_time_grid(0.3, 5, 1, 0.0).unwrap();
        assert!((g.micro_step() - 0.06).abs() < 1e-16);
        let t: Vec<f64> = (0..=5).map(|m| g.micro_time(0, m)).collect();
        for (m, tm) in t.iter().enumerate() {
            assert!((tm - 0.06 * m as f64).abs() < 1e-15);
        }
        assert_eq!(t[5], 0.3);
    }

    #[test]
    fn grid_shared_node_is_bit_identical() {
        let g = build_time_grid(0.3, 3, 2, 0.0).unwrap();
        assert_eq!(g.micro_time(0, 3).to_bits(), g.micro_time(1, 0).to_bits());
        assert_eq!(g.micro_time(1, 0), g.macro_time(1));
        assert_eq!(g.micro_time(0, 3), 0.3);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(build_time_grid(0.0, 1, 1, 0.0).is_err());
        assert!(build_time_grid(-0.1, 1, 1, 0.0).is_err());
        assert!(build_time_grid(0.1, 0, 1, 0.0).is_err());
        assert!(build_time_grid(0.1, 1, 0, 0.0).is_err());
        assert!(TimeGrid::spanning(0.3, 2, 0.0, 1.0).is_err());
        assert_eq!(TimeGrid::spanning(0.25, 2, 0.0, 1.0).unwrap().n_macro(), 4);
    }

    #[test]
    fn table_rows_round_trip() {
        use QuadratureRule::*;
        for rule in [Midpoint, Trapezoidal, LeftRectangle, RightRectangle, Affine { alpha: 0.3 }] {
            let (a, g) = rule.coefficients();
            assert_eq!(QuadratureRule::classify(a, g), Some(rule));
        }
        assert_eq!(QuadratureRule::classify(0.0, 0.0), Some(LeftRectangle));
        assert_eq!(QuadratureRule::classify(1.0, 1.0), Some(LeftRectangle));
        assert_eq!(QuadratureRule::classify(1.0, 0.0), Some(RightRectangle));
        assert_eq!(QuadratureRule::classify(0.0, 1.0), Some(RightRectangle));
        assert_eq!(QuadratureRule::classify(0.5, 0.0), Some(Trapezoidal));
        assert_eq!(QuadratureRule::classify(0.2, 0.5), Some(Midpoint));
        assert_eq!(QuadratureRule::classify(0.2, 0.3), None);
    }

    #[test]
    fn quadrature_validation() {
        assert!(QuadratureSpec::new(1.2, 0.5, 0.5, 0.5).is_err());
        assert!(QuadratureSpec::new(0.5, -0.1, 0.5, 0.5).is_err());
        assert!(QuadratureSpec::new(0.0, 1.0, 1.0, 0.0).is_ok());
        assert!(QuadratureSpec::explicit(1.0, 1.0).is_explicit_solvable(5));
        assert!(!QuadratureSpec::midpoint_midpoint().is_explicit_solvable(1));
        assert!(QuadratureSpec::trapezoidal_trapezoidal(1.0, 1.0).is_explicit_solvable(1));
        assert!(!QuadratureSpec::trapezoidal_trapezoidal(1.0, 1.0).is_explicit_solvable(2));
    }

    #[test]
    fn mass_checks() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(MultirateSystem::builder(bad, DMatrix::identity(1, 1)).build().is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MultirateSystem::builder(indefinite, DMatrix::identity(1, 1)).build().is_err());
    }

    #[test]
    fn quadratic_gradient_passes() {
        let sys = oscillator(4.0);
        let r = validate_system(&sys, &[probe(0.3, -0.7), probe(1.0, 2.0)], 1e-6).unwrap();
        assert!(r.passed);
        assert!(r.max_deviation < 1e-8);
    }

    #[test]
    fn sign_flipped_gradient_fails() {
        let sys = MultirateSystem::builder(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .fast_potential(|q| 0.5 * 9.0 * q.norm_squared(), |q| -(q * 9.0))
            .build()
            .unwrap();
        let r = validate_system(&sys, &[probe(0.0, 2.0)], 1e-6).unwrap();
        assert!(!r.passed);
        // |∇W| = 18 here, so the relative deviation is 2|∇W| / |∇W|
        assert!((r.probes[0].fast_dq_fast - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_potential_is_a_diagnostic() {
        let sys = MultirateSystem::builder(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .fast_potential(|q| 1.0 / q[0], |q| DVector::from_element(1, -1.0 / (q[0] * q[0])))
            .build()
            .unwrap();
        let r = validate_system(&sys, &[probe(0.0, 0.0), probe(0.0, 1.0)], 1e-6).unwrap();
        assert!(!r.passed);
        assert!(r.probes[0].diagnostic.is_some());
        assert!(r.probes[1].diagnostic.is_none());
    }

    #[test]
    fn fast_potential_ignores_slow_state() {
        let sys = oscillator(2.0);
        let qf = DVector::from_element(1, 0.25);
        let a = sys.fast_potential(&qf);
        let b = sys.fast_potential(&qf);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn phase_vector_round_trip() {
        let s = State {
            q_slow: DVector::from_vec(vec![1.0, 2.0]),
            q_fast: DVector::from_vec(vec![3.0]),
            p_slow: DVector::from_vec(vec![4.0, 5.0]),
            p_fast: DVector::from_vec(vec![6.0]),
        };
        assert_eq!(State::from_phase_vector(&s.to_phase_vector(), 2, 1), s);
    }
}
