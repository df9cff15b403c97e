//! TOML experiment configs. Every field has a default; unknown keys are
//! rejected so a typo cannot silently change an experiment.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use covector::solver::{Method, SolveMode, StepPolicy};
use covector::{AdaptationRule, RefinementLevel, SolverConfig, TestProblemId};

use crate::CliError;

pub fn load<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

pub fn parse_problem(name: &str) -> Result<TestProblemId, CliError> {
    TestProblemId::from_str(name).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub method: Method,
    pub step_policy: StepPolicy,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub mode: SolveMode,
    pub hessian_regularization_mu: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            method: Method::Gradient,
            step_policy: StepPolicy::Fixed { alpha: 1.0 },
            tolerance: 1e-6,
            max_iterations: 1000,
            mode: SolveMode::Direct,
            hessian_regularization_mu: None,
        }
    }
}

impl SolverSection {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            method: self.method,
            step_policy: self.step_policy,
            tolerance_eps: self.tolerance,
            max_iterations: self.max_iterations,
            hessian_regularization_mu: self.hessian_regularization_mu,
            mode: self.mode,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    /// One of "constant", "monomials", "indicators".
    pub kind: String,
    /// Number of basis functions (ignored for "constant" and "indicators").
    pub size: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            kind: "constant".into(),
            size: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveCfg {
    pub problem: String,
    pub n_intervals: usize,
    /// Defaults to zeros of length n_intervals when absent.
    pub initial_controls: Option<Vec<f64>>,
    pub solver: SolverSection,
    pub basis: Option<BasisSection>,
}

impl Default for SolveCfg {
    fn default() -> Self {
        Self {
            problem: "linear_integrator".into(),
            n_intervals: 10,
            initial_controls: None,
            solver: SolverSection::default(),
            basis: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyCfg {
    pub problem: String,
    pub n_intervals: usize,
    pub fd_step: f64,
    /// Explicit point; a seeded random vector in [-1, 1]^N when absent.
    pub controls: Option<Vec<f64>>,
}

impl Default for VerifyCfg {
    fn default() -> Self {
        Self {
            problem: "linear_integrator".into(),
            n_intervals: 16,
            fd_step: 1e-6,
            controls: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckCfg {
    pub problem: String,
    pub probes: usize,
}

impl Default for GradcheckCfg {
    fn default() -> Self {
        Self {
            problem: "linear_integrator".into(),
            probes: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAccuracyCfg {
    pub problem: String,
    /// Step sizes; each must divide the horizon into a whole number of
    /// intervals.
    pub h_list: Vec<f64>,
    pub eps: f64,
    /// When set, use eps_i = coordinated_ratio * h_i instead of the fixed eps.
    pub coordinated: bool,
    pub coordinated_ratio: f64,
    pub solver: SolverSection,
}

impl Default for SweepAccuracyCfg {
    fn default() -> Self {
        Self {
            problem: "linear_integrator".into(),
            h_list: vec![0.1, 0.01, 0.001],
            eps: 1e-6,
            coordinated: false,
            coordinated_ratio: 1e-4,
            solver: SolverSection {
                step_policy: StepPolicy::Compensated,
                max_iterations: 100_000,
                ..SolverSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepRateCfg {
    pub problem: String,
    pub h_list: Vec<f64>,
    /// Terminal-state tolerance the gradient runs must reach.
    pub target: f64,
    pub max_iterations: usize,
}

impl Default for SweepRateCfg {
    fn default() -> Self {
        Self {
            problem: "linear_integrator".into(),
            h_list: vec![0.1, 0.05, 0.025],
            target: 1e-8,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinCfg {
    pub problem: String,
    pub n_intervals: usize,
    pub alpha: f64,
    /// Constant-control starting offsets: offset_count points on
    /// [offset_min, offset_max].
    pub offset_min: f64,
    pub offset_max: f64,
    pub offset_count: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BasinCfg {
    fn default() -> Self {
        Self {
            problem: "cubic_drag".into(),
            n_intervals: 20,
            alpha: 1.0,
            // Keep the cap generous relative to the lattice extent: a tight
            // cap turns slow-but-stable runs into spurious non-convergence
            // and distorts the basin comparison.
            offset_min: -2.0,
            offset_max: 2.0,
            offset_count: 41,
            tolerance: 1e-8,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveNoiseCfg {
    pub problem: String,
    pub n_intervals: usize,
    pub adaptation: AdaptationRule,
    pub fd_step: f64,
    /// One of "zero", "ramp", "sine"; ignored when `controls` is given.
    pub control_profile: String,
    pub controls: Option<Vec<f64>>,
}

impl Default for AdaptiveNoiseCfg {
    fn default() -> Self {
        Self {
            problem: "damped_linear".into(),
            n_intervals: 16,
            adaptation: AdaptationRule::Arclength,
            fd_step: 1e-6,
            control_profile: "sine".into(),
            controls: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianizeCfg {
    /// One of "scalar_linear", "rotation", "zero".
    pub ode: String,
    /// Coefficient for the scalar linear field f(x) = a*x.
    pub a: f64,
    pub t_end: f64,
    pub step: f64,
    pub x_init: Option<Vec<f64>>,
    pub psi_init: Option<Vec<f64>>,
    pub drift_tolerance: f64,
}

impl Default for HamiltonianizeCfg {
    fn default() -> Self {
        Self {
            ode: "scalar_linear".into(),
            a: -1.0,
            t_end: 1.0,
            step: 1e-3,
            x_init: None,
            psi_init: None,
            drift_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineCfg {
    pub problem: String,
    /// Explicit levels; when absent a doubling schedule is built from
    /// `n0`, `num_levels` and `ratio`.
    pub levels: Option<Vec<RefinementLevel>>,
    pub n0: usize,
    pub num_levels: usize,
    /// eps_i = ratio * h_i in the generated schedule.
    pub ratio: f64,
    pub max_inner_iterations: usize,
    pub target_ratio: f64,
    pub solver: SolverSection,
}

impl Default for RefineCfg {
    fn default() -> Self {
        Self {
            problem: "damped_linear".into(),
            levels: None,
            n0: 8,
            num_levels: 3,
            ratio: 1e-4,
            max_inner_iterations: 20_000,
            target_ratio: 1e-4,
            solver: SolverSection {
                step_policy: StepPolicy::Compensated,
                ..SolverSection::default()
            },
        }
    }
}
