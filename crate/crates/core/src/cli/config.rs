use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize};

use crate::analysis::StabilityRule;
use crate::model::{QuadratureSpec, SlowPlacement};
use crate::solver::{LinearSolverKind, Mode};
use crate::systems::{FpuConfig, SpringRingConfig};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Fpu,
    SpringRing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    MidpointMidpoint,
    TrapezoidalMidpoint,
    TrapezoidalTrapezoidal,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementName {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Del,
    Pq,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    Trapezoidal,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Dense,
    Banded,
}

/// Options shared by all subcommands. Every field is optional so that a
/// config file and the command line can be layered; flags win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunOptions {
    #[arg(long, value_enum)]
    pub system: Option<SystemKind>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeName>,
    /// Left-node weight of the slow quadrature.
    #[arg(long)]
    pub alpha_v: Option<f64>,
    #[arg(long)]
    pub alpha_w: Option<f64>,
    #[arg(long)]
    pub gamma_v: Option<f64>,
    #[arg(long)]
    pub gamma_w: Option<f64>,
    #[arg(long, value_enum)]
    pub slow_placement: Option<PlacementName>,
    /// Macro step; a comma-separated list for `converge` and `stability`.
    #[arg(long = "dT", value_delimiter = ',')]
    #[serde(rename = "dT", default, deserialize_with = "one_or_many")]
    pub macro_steps: Option<Vec<f64>>,
    /// Micro steps per macro step; a list for `converge` (micro refinement),
    /// `stability` and `bench`.
    #[arg(long = "p", value_delimiter = ',')]
    #[serde(rename = "p", default, deserialize_with = "one_or_many")]
    pub ratios: Option<Vec<usize>>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Newton tolerance on the ∞-norm of the residual.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Threads for sweep rows; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed for probe states in `validate`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Macro step of the single-rate reference run in `converge`.
    #[arg(long = "ref-dT")]
    #[serde(rename = "ref-dT")]
    pub ref_step: Option<f64>,
    /// Fixed micro step of the `bench` sweep.
    #[arg(long)]
    pub micro_step: Option<f64>,
    /// Quadrature rule of the `stability` oscillator.
    #[arg(long, value_enum)]
    pub rule: Option<RuleName>,
    /// Oscillator frequency for `stability`.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Number of probe states in `validate`.
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long, value_enum)]
    pub linear_solver: Option<SolverName>,
    #[arg(skip)]
    pub fpu: Option<FpuConfig>,
    #[arg(skip)]
    pub spring_ring: Option<SpringRingConfig>,
}

fn one_or_many<'de, D, T>(d: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Some(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    }))
}

macro_rules! layer {
    ($top:expr, $base:expr; $($f:ident),*) => {
        RunOptions { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunOptions {
    /// Fields set in `self` take precedence over `base`.
    pub fn over(self, base: RunOptions) -> RunOptions {
        layer!(self, base; system, scheme, alpha_v, alpha_w, gamma_v, gamma_w, slow_placement,
            macro_steps, ratios, t_end, tol, mode, out, workers, seed, ref_step, micro_step,
            rule, omega, probes, linear_solver, fpu, spring_ring)
    }

    pub fn from_file(path: &Path) -> Result<RunOptions, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn system(&self) -> SystemKind {
        self.system.unwrap_or(SystemKind::Fpu)
    }

    pub fn scheme(&self) -> SchemeName {
        self.scheme.unwrap_or(SchemeName::MidpointMidpoint)
    }

    /// Quadrature from the scheme's defaults with individual coefficients
    /// overridden.
    pub fn quadrature(&self) -> Result<QuadratureSpec, CliError> {
        let base = match self.scheme() {
            SchemeName::MidpointMidpoint => QuadratureSpec::midpoint_midpoint(),
            SchemeName::TrapezoidalMidpoint => QuadratureSpec::trapezoidal_midpoint(1.0),
            SchemeName::TrapezoidalTrapezoidal => QuadratureSpec::trapezoidal_trapezoidal(1.0, 1.0),
            SchemeName::Explicit => QuadratureSpec::explicit(0.5, 0.5),
        };
        let placement = match self.slow_placement {
            Some(PlacementName::Micro) => SlowPlacement::MicroGrid,
            Some(PlacementName::Macro) => SlowPlacement::MacroNodesOnly,
            None => base.slow_placement,
        };
        let q = QuadratureSpec::new(
            self.alpha_v.unwrap_or(base.alpha_v),
            self.gamma_v.unwrap_or(base.gamma_v),
            self.alpha_w.unwrap_or(base.alpha_w),
            self.gamma_w.unwrap_or(base.gamma_w),
        )
        .map_err(CliError::from_library)?;
        Ok(q.with_placement(placement))
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            Some(ModeName::Del) => Mode::ImplicitDel,
            Some(ModeName::Pq) => Mode::ClosedFormPq,
            Some(ModeName::Explicit) => Mode::Explicit,
            None if self.scheme() == SchemeName::Explicit => Mode::Explicit,
            None => Mode::ImplicitDel,
        }
    }

    pub fn linear_solver(&self) -> LinearSolverKind {
        match self.linear_solver {
            Some(SolverName::Banded) => LinearSolverKind::Banded,
            _ => LinearSolverKind::Dense,
        }
    }

    pub fn rule(&self) -> StabilityRule {
        match self.rule {
            Some(RuleName::Midpoint) => StabilityRule::Midpoint,
            _ => StabilityRule::Trapezoidal,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The single macro step of a run; defaults follow the system.
    pub fn macro_step(&self) -> Result<f64, CliError> {
        match self.macro_steps.as_deref() {
            None => Ok(match self.system() {
                SystemKind::Fpu => 0.3,
                SystemKind::SpringRing => 0.01,
            }),
            Some([h]) => Ok(*h),
            Some(_) => Err(CliError::Config("--dT takes a single value here".into())),
        }
    }

    pub fn ratio(&self) -> Result<usize, CliError> {
        match self.ratios.as_deref() {
            None => Ok(match self.system() {
                SystemKind::Fpu => 10,
                SystemKind::SpringRing => 5,
            }),
            Some([p]) => Ok(*p),
            Some(_) => Err(CliError::Config("--p takes a single value here".into())),
        }
    }
}
