//! Gradients of the reduced cost E(x_N(U)): the adjoint route, the
//! finite-difference oracle, control-basis parameterization, and the
//! adaptive-grid noise decomposition.
//!
//! The covector identity is the load-bearing fact here: on a uniform grid
//! the adjoint-route gradient satisfies dE/du_k = h * dH/du_k exactly, so a
//! gradient tolerance eps on the direct side maps to eps/h on the
//! Hamiltonian stationarity side.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::euler::{
    backward_adjoint, forward_simulate, hamiltonian_gradient_stack, inf_norm, CostateTrajectory,
};
use crate::grid::{Grid, NonuniformGrid, UniformGrid};
use crate::problem::ScalarOcp;

/// Adjoint-route gradient of the reduced cost together with the dual data
/// it was built from. On a uniform grid, gradient[k] = h * stationarity[k]
/// holds as an exact identity.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    pub costates: CostateTrajectory,
    pub stationarity: Vec<f64>,
    pub grad_inf_norm: f64,
    pub stationarity_inf_norm: f64,
}

/// Forward sweep, backward costate sweep, then scale the stationarity stack
/// by the step size.
pub fn adjoint_gradient(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    controls: &[f64],
) -> Result<GradientReport> {
    adjoint_gradient_on_grid(problem, &grid.clone().into(), controls)
}

/// Same sweep on an arbitrary grid; entry k is scaled by the local step h_k.
/// The uniform case is the proven identity; the nonuniform case is checked
/// against the FD oracle only.
pub fn adjoint_gradient_on_grid(
    problem: &ScalarOcp,
    grid: &Grid,
    controls: &[f64],
) -> Result<GradientReport> {
    let traj = forward_simulate(problem, grid, controls)?;
    let costates = backward_adjoint(problem, grid, &traj)?;
    let stationarity = hamiltonian_gradient_stack(problem, &traj, &costates)?;
    let gradient: Vec<f64> = stationarity
        .iter()
        .enumerate()
        .map(|(k, s)| grid.step(k) * s)
        .collect();
    Ok(GradientReport {
        grad_inf_norm: inf_norm(&gradient),
        stationarity_inf_norm: inf_norm(&stationarity),
        gradient,
        costates,
        stationarity,
    })
}

/// Reduced cost E(x_N(U)) by forward simulation.
pub fn reduced_cost(problem: &ScalarOcp, grid: &Grid, controls: &[f64]) -> Result<f64> {
    let traj = forward_simulate(problem, grid, controls)?;
    Ok(problem.cost(traj.terminal_state()))
}

/// Central-difference gradient of the composite U -> E(x_N(U)), one
/// coordinate at a time (2N simulations). This is the independent oracle for
/// every adjoint-route claim; it never touches the costate path.
pub fn fd_gradient(
    problem: &ScalarOcp,
    grid: &Grid,
    controls: &[f64],
    fd_step: f64,
) -> Result<Vec<f64>> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    let mut grad = Vec::with_capacity(controls.len());
    let mut probe = controls.to_vec();
    for k in 0..controls.len() {
        probe[k] = controls[k] + fd_step;
        let plus = reduced_cost(problem, grid, &probe)?;
        probe[k] = controls[k] - fd_step;
        let minus = reduced_cost(problem, grid, &probe)?;
        probe[k] = controls[k];
        grad.push((plus - minus) / (2.0 * fd_step));
    }
    Ok(grad)
}

/// Control parameterization u(t; C) = sum_j c_j * xi_j(t). Sampling on a
/// grid yields the N x m matrix B with B[k][j] = xi_j(t_k), so U = B * C.
#[derive(Clone)]
pub struct ControlBasis {
    size: usize,
    sample: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
}

impl ControlBasis {
    pub fn new(size: usize, sample: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>) -> Self {
        Self { size, sample }
    }

    /// Single constant function xi_1 = 1.
    pub fn constant() -> Self {
        Self::new(1, Arc::new(|_, _| 1.0))
    }

    /// N indicator functions; B sampled on an N-interval grid is the identity.
    pub fn indicators(grid: &UniformGrid) -> Self {
        let t0 = grid.t0();
        let h = grid.h();
        let n = grid.n_intervals();
        Self::new(
            n,
            Arc::new(move |j, t| {
                let k = (((t - t0) / h) + 0.5).floor() as usize;
                if k.min(n - 1) == j {
                    1.0
                } else {
                    0.0
                }
            }),
        )
    }

    /// Monomials 1, t, t^2, ..., t^(m-1).
    pub fn monomials(m: usize) -> Self {
        Self::new(m, Arc::new(|j, t| t.powi(j as i32)))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sample(&self, j: usize, t: f64) -> f64 {
        (self.sample)(j, t)
    }

    /// Sample matrix B on the grid nodes t_0..t_{N-1}.
    pub fn sample_matrix(&self, grid: &Grid) -> DMatrix<f64> {
        let n = grid.n_intervals();
        DMatrix::from_fn(n, self.size, |k, j| self.sample(j, grid.node(k)))
    }

    /// U = B * C.
    pub fn controls(&self, grid: &Grid, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.size {
            return Err(Error::DimensionMismatch {
                expected: self.size,
                actual: coeffs.len(),
            });
        }
        let b = self.sample_matrix(grid);
        let u = &b * DVector::from_column_slice(coeffs);
        Ok(u.as_slice().to_vec())
    }
}

impl std::fmt::Debug for ControlBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlBasis")
            .field("size", &self.size)
            .finish_non_exhaustive()
    }
}

/// Chain rule through the parameterization: dE/dC = B^T * dE/dU.
pub fn parameterized_gradient(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    basis: &ControlBasis,
    coeffs: &[f64],
) -> Result<(Vec<f64>, GradientReport)> {
    let g: Grid = grid.clone().into();
    let controls = basis.controls(&g, coeffs)?;
    let inner = adjoint_gradient(problem, grid, &controls)?;
    let b = basis.sample_matrix(&g);
    let coeff_grad = b.transpose() * DVector::from_column_slice(&inner.gradient);
    Ok((coeff_grad.as_slice().to_vec(), inner))
}

/// Singular values below this fraction of the largest count as zero when
/// computing numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub full_rank: bool,
}

/// Numerical rank of the sample matrix B. A rank-deficient basis admits
/// coefficient-space stationary points whose inner gradient does not vanish.
pub fn basis_rank_check(basis: &ControlBasis, grid: &Grid) -> Result<RankReport> {
    let n = grid.n_intervals();
    if basis.size() > n {
        return Err(Error::OverParameterized {
            m: basis.size(),
            n,
        });
    }
    let b = basis.sample_matrix(grid);
    let svd = b.svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        svd.singular_values
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * sigma_max)
            .count()
    };
    Ok(RankReport {
        rank,
        full_rank: rank == basis.size(),
    })
}

/// Pass threshold for the FD-vs-adjoint deviation in `verify_equivalence`.
pub const EQUIVALENCE_FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, serde::Serialize)]
pub struct EquivalenceVerdict {
    /// Max relative deviation between the FD gradient and h * stationarity:
    /// the covector identity checked through an independent route.
    pub fd_max_rel_deviation: f64,
    /// Max absolute defect of gradient[k] - h * stationarity[k] on the
    /// adjoint route; zero up to machine rounding by construction.
    pub identity_max_defect: f64,
    pub fd_tolerance: f64,
    pub pass: bool,
}

/// Builds the verdict from an FD gradient and a gradient report; split out so
/// deliberately corrupted fixtures can be judged by the same rule.
pub fn equivalence_verdict(
    fd: &[f64],
    report: &GradientReport,
    h: f64,
    fd_tolerance: f64,
) -> EquivalenceVerdict {
    let scale = f64::max(1.0, report.grad_inf_norm);
    let mut fd_dev = 0.0f64;
    let mut identity = 0.0f64;
    for k in 0..fd.len() {
        fd_dev = fd_dev.max((fd[k] - h * report.stationarity[k]).abs() / scale);
        identity = identity.max((report.gradient[k] - h * report.stationarity[k]).abs());
    }
    let identity_tol = 4.0 * f64::EPSILON * scale;
    EquivalenceVerdict {
        fd_max_rel_deviation: fd_dev,
        identity_max_defect: identity,
        fd_tolerance,
        pass: fd_dev <= fd_tolerance && identity <= identity_tol,
    }
}

/// First-order equivalence check: the FD gradient must match h times the
/// stationarity stack, and the adjoint route must satisfy the identity
/// exactly.
pub fn verify_equivalence(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    controls: &[f64],
    fd_step: f64,
) -> Result<(EquivalenceVerdict, GradientReport)> {
    let report = adjoint_gradient(problem, grid, controls)?;
    let fd = fd_gradient(problem, &grid.clone().into(), controls, fd_step)?;
    Ok((
        equivalence_verdict(&fd, &report, grid.h(), EQUIVALENCE_FD_TOL),
        report,
    ))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Theorem1Bound {
    /// Achieved gradient tolerance: the inf-norm of dE/dU.
    pub epsilon: f64,
    /// epsilon / h: the guaranteed stationarity tolerance.
    pub bound: f64,
    pub max_stationarity: f64,
    pub satisfied: bool,
}

/// Maps a gradient tolerance to the stationarity tolerance eps/h. For
/// adjoint-route reports the bound is tight: max |dH/du| equals eps/h.
pub fn theorem1_bound(report: &GradientReport, grid: &UniformGrid) -> Result<Theorem1Bound> {
    let h = grid.h();
    if !(h > 0.0) {
        return Err(Error::InvalidGrid("step must be positive".into()));
    }
    let epsilon = report.grad_inf_norm;
    let bound = epsilon / h;
    let max_stationarity = report.stationarity_inf_norm;
    // One rounding-error of slack: bound is computed by dividing back.
    let satisfied = max_stationarity <= bound * (1.0 + 4.0 * f64::EPSILON);
    Ok(Theorem1Bound {
        epsilon,
        bound,
        max_stationarity,
        satisfied,
    })
}

/// Grid-adaptation rules for the variable-step experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationRule {
    /// Grid independent of the controls; the noise term S vanishes.
    Identity,
    /// One arclength-style pass: h_k proportional to 1/(1+|f(x_k,u_k)|) along
    /// the uniform-grid trajectory, normalized to the horizon.
    Arclength,
}

/// Builds the control-dependent grid pi(U).
pub fn adapt_grid(
    problem: &ScalarOcp,
    rule: AdaptationRule,
    n_intervals: usize,
    controls: &[f64],
) -> Result<Grid> {
    let uniform = UniformGrid::new(problem.t0, problem.tf, n_intervals)?;
    match rule {
        AdaptationRule::Identity => Ok(uniform.into()),
        AdaptationRule::Arclength => {
            let traj = forward_simulate(problem, &uniform.clone().into(), controls)?;
            let weights: Vec<f64> = (0..n_intervals)
                .map(|k| 1.0 / (1.0 + problem.f(traj.state_at(k), controls[k]).abs()))
                .collect();
            let total: f64 = weights.iter().sum();
            let scale = problem.horizon() / total;
            let mut nodes = Vec::with_capacity(n_intervals + 1);
            let mut t = problem.t0;
            nodes.push(t);
            for w in &weights[..n_intervals - 1] {
                t += w * scale;
                nodes.push(t);
            }
            nodes.push(problem.tf);
            Ok(NonuniformGrid::new(nodes)?.into())
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AdaptiveDecomposition {
    /// Adjoint-route gradient with the grid frozen at the current controls:
    /// the first term of the full derivative.
    pub naive: Vec<f64>,
    /// FD gradient of the full composite in which each perturbation re-adapts
    /// the grid.
    pub true_fd: Vec<f64>,
    /// Inf-norm of (true_fd - naive): the measured magnitude of the grid
    /// sensitivity term S.
    pub noise_s_norm: f64,
}

/// Measures the gradient noise introduced by control-dependent grids. The
/// grid Jacobian is never formed; S is read off as the difference between the
/// frozen-grid adjoint gradient and the re-adapting FD gradient.
pub fn adaptive_gradient_decomposition(
    problem: &ScalarOcp,
    rule: AdaptationRule,
    n_intervals: usize,
    controls: &[f64],
    fd_step: f64,
) -> Result<AdaptiveDecomposition> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    let frozen = adapt_grid(problem, rule, n_intervals, controls)?;
    let naive = adjoint_gradient_on_grid(problem, &frozen, controls)?.gradient;

    let cost_with_readaptation = |u: &[f64]| -> Result<f64> {
        let grid = adapt_grid(problem, rule, n_intervals, u)?;
        reduced_cost(problem, &grid, u)
    };
    let mut true_fd = Vec::with_capacity(controls.len());
    let mut probe = controls.to_vec();
    for k in 0..controls.len() {
        probe[k] = controls[k] + fd_step;
        let plus = cost_with_readaptation(&probe)?;
        probe[k] = controls[k] - fd_step;
        let minus = cost_with_readaptation(&probe)?;
        probe[k] = controls[k];
        true_fd.push((plus - minus) / (2.0 * fd_step));
    }

    let diff: Vec<f64> = true_fd
        .iter()
        .zip(&naive)
        .map(|(t, n)| t - n)
        .collect();
    Ok(AdaptiveDecomposition {
        noise_s_norm: inf_norm(&diff),
        naive,
        true_fd,
    })
}
