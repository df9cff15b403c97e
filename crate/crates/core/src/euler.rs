//! Forward Euler state propagation, backward Euler costate propagation, and
//! the discretized necessary-condition residuals.
//!
//! The transcription is Radau-type: N controls u_0..u_{N-1}, N states
//! x_1..x_N, and N costates lambda_0..lambda_{N-1}. There is no u_N and no
//! lambda_N.

use crate::error::{Error, Result};
use crate::grid::{Grid, UniformGrid};
use crate::problem::ScalarOcp;

/// Propagation aborts once |x| or |lambda| exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Discretized primal pair: x0 plus (x_1..x_N) and (u_0..u_{N-1}).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Trajectory {
    pub x0: f64,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
}

impl Trajectory {
    /// State at node k: x0 for k = 0, otherwise states[k-1].
    pub fn state_at(&self, k: usize) -> f64 {
        if k == 0 {
            self.x0
        } else {
            self.states[k - 1]
        }
    }

    pub fn terminal_state(&self) -> f64 {
        *self.states.last().expect("nonempty trajectory")
    }

    pub fn n_intervals(&self) -> usize {
        self.controls.len()
    }
}

/// Discretized dual vector (lambda_0..lambda_{N-1}).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CostateTrajectory {
    pub costates: Vec<f64>,
}

impl CostateTrajectory {
    pub fn len(&self) -> usize {
        self.costates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costates.is_empty()
    }
}

/// x_{k+1} = x_k + h_k * f(x_k, u_k), starting from the problem's x0.
pub fn forward_simulate(problem: &ScalarOcp, grid: &Grid, controls: &[f64]) -> Result<Trajectory> {
    let n = grid.n_intervals();
    if controls.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: controls.len(),
        });
    }
    let mut states = Vec::with_capacity(n);
    let mut x = problem.x0;
    for (k, &u) in controls.iter().enumerate() {
        x += grid.step(k) * problem.f(x, u);
        if !x.is_finite() || x.abs() > DIVERGENCE_LIMIT {
            return Err(Error::PropagationDiverged {
                index: k + 1,
                limit: DIVERGENCE_LIMIT,
            });
        }
        states.push(x);
    }
    Ok(Trajectory {
        x0: problem.x0,
        states,
        controls: controls.to_vec(),
    })
}

/// Backward Euler costate sweep: lambda_{N-1} = dE/dx(x_N), then
/// lambda_k = lambda_{k+1} + h_{k+1} * lambda_{k+1} * df/dx(x_{k+1}, u_{k+1})
/// for k = N-2 down to 0.
pub fn backward_adjoint(
    problem: &ScalarOcp,
    grid: &Grid,
    traj: &Trajectory,
) -> Result<CostateTrajectory> {
    let n = grid.n_intervals();
    if traj.controls.len() != n || traj.states.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: traj.controls.len(),
        });
    }
    let mut costates = vec![0.0; n];
    costates[n - 1] = problem.cost_dx(traj.terminal_state());
    for k in (0..n - 1).rev() {
        let lam_next = costates[k + 1];
        let x_next = traj.state_at(k + 1);
        let u_next = traj.controls[k + 1];
        let lam = lam_next + grid.step(k + 1) * lam_next * problem.f_dx(x_next, u_next);
        if !lam.is_finite() || lam.abs() > DIVERGENCE_LIMIT {
            return Err(Error::AdjointDiverged { index: k });
        }
        costates[k] = lam;
    }
    Ok(CostateTrajectory { costates })
}

/// Stationarity stack: entry k is dH/du(lambda_k, x_k, u_k) = lambda_k * df/du(x_k, u_k).
pub fn hamiltonian_gradient_stack(
    problem: &ScalarOcp,
    traj: &Trajectory,
    costates: &CostateTrajectory,
) -> Result<Vec<f64>> {
    let n = traj.n_intervals();
    if costates.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: costates.len(),
        });
    }
    Ok((0..n)
        .map(|k| costates.costates[k] * problem.f_du(traj.state_at(k), traj.controls[k]))
        .collect())
}

/// Defects of the full discretized first-order system on a uniform grid:
/// state equation, adjoint equation plus transversality, and Hamiltonian
/// stationarity. A triple of zero norms certifies a solution.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IndirectResiduals {
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub transversality: f64,
    pub stationarity: Vec<f64>,
    pub state_norm: f64,
    pub adjoint_norm: f64,
    pub stationarity_norm: f64,
}

/// Max-norm of a residual or gradient vector.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn indirect_residuals(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    traj: &Trajectory,
    costates: &CostateTrajectory,
) -> Result<IndirectResiduals> {
    let n = grid.n_intervals();
    if traj.controls.len() != n || traj.states.len() != n || costates.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: traj.controls.len().min(costates.len()),
        });
    }
    let h = grid.h();

    // Each defect re-evaluates the recurrence with the same expression the
    // propagators use, so a trajectory produced by them has bitwise-zero
    // state and adjoint residuals.
    let state: Vec<f64> = (0..n)
        .map(|k| {
            let x = traj.state_at(k);
            traj.state_at(k + 1) - (x + h * problem.f(x, traj.controls[k]))
        })
        .collect();

    let adjoint: Vec<f64> = (0..n - 1)
        .map(|k| {
            let lam_next = costates.costates[k + 1];
            let x_next = traj.state_at(k + 1);
            costates.costates[k]
                - (lam_next + h * lam_next * problem.f_dx(x_next, traj.controls[k + 1]))
        })
        .collect();

    let transversality = costates.costates[n - 1] - problem.cost_dx(traj.terminal_state());
    let stationarity = hamiltonian_gradient_stack(problem, traj, costates)?;

    let adjoint_norm = inf_norm(&adjoint).max(transversality.abs());
    Ok(IndirectResiduals {
        state_norm: inf_norm(&state),
        adjoint_norm,
        stationarity_norm: inf_norm(&stationarity),
        state,
        adjoint,
        transversality,
        stationarity,
    })
}
