//! Outer algorithm: a schedule of (N_i, eps_i) levels with warm-started
//! inner solves, keeping eps_i coordinated with h_i so the stationarity
//! tolerance eps/h does not blow up as the grid refines.

use crate::error::{Error, Result};
use crate::euler::{
    backward_adjoint, forward_simulate, indirect_residuals, CostateTrajectory, Trajectory,
};
use crate::grid::UniformGrid;
use crate::problem::ScalarOcp;
use crate::solver::{solve_direct, IterationTrace, SolveStatus, SolverConfig};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RefinementLevel {
    pub n_intervals: usize,
    pub eps: f64,
    pub max_inner_iterations: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RefinementSchedule {
    pub levels: Vec<RefinementLevel>,
    /// Required eps/h at the final level.
    pub target_ratio: f64,
}

impl RefinementSchedule {
    /// Doubling schedule with eps_i = ratio * h_i; enables the nested-node
    /// convergence probe.
    pub fn doubling(n0: usize, n_levels: usize, horizon: f64, ratio: f64, max_inner: usize) -> Self {
        let levels = (0..n_levels)
            .map(|i| {
                let n = n0 << i;
                RefinementLevel {
                    n_intervals: n,
                    eps: ratio * horizon / n as f64,
                    max_inner_iterations: max_inner,
                }
            })
            .collect();
        Self {
            levels,
            target_ratio: ratio,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidSchedule("schedule has no levels".into()));
        }
        if !(self.target_ratio > 0.0) {
            return Err(Error::InvalidSchedule("target_ratio must be > 0".into()));
        }
        let mut prev_ratio = f64::INFINITY;
        let mut prev_n = 0usize;
        for (i, level) in self.levels.iter().enumerate() {
            if level.n_intervals <= prev_n {
                return Err(Error::InvalidSchedule(format!(
                    "N must be strictly increasing (level {i})"
                )));
            }
            if !(level.eps > 0.0) || level.max_inner_iterations == 0 {
                return Err(Error::InvalidSchedule(format!(
                    "level {i} needs eps > 0 and max_inner_iterations >= 1"
                )));
            }
            let h = horizon / level.n_intervals as f64;
            let ratio = level.eps / h;
            if ratio > prev_ratio * (1.0 + 1e-12) {
                return Err(Error::InvalidSchedule(format!(
                    "eps/h must be non-increasing across levels (level {i})"
                )));
            }
            prev_ratio = ratio;
            prev_n = level.n_intervals;
        }
        let last = self.levels.last().unwrap();
        let h_last = horizon / last.n_intervals as f64;
        if last.eps / h_last > self.target_ratio * (1.0 + 1e-12) {
            return Err(Error::InvalidSchedule(format!(
                "final eps/h = {} exceeds target_ratio {}",
                last.eps / h_last,
                self.target_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub n_intervals: usize,
    pub h: f64,
    pub eps: f64,
    pub status: SolveStatus,
    pub inner_iterations: usize,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub final_stationarity_norm: f64,
    pub state_residual_norm: f64,
    pub adjoint_residual_norm: f64,
    pub stationarity_residual_norm: f64,
}

/// Piecewise-constant prolongation: the fine control at node t takes the
/// coarse control of the interval containing t. Exact on nested grids.
pub fn prolong_controls(
    coarse_controls: &[f64],
    coarse_grid: &UniformGrid,
    fine_grid: &UniformGrid,
) -> Result<Vec<f64>> {
    if (coarse_grid.t0() - fine_grid.t0()).abs() > 1e-12
        || (coarse_grid.tf() - fine_grid.tf()).abs() > 1e-12
    {
        return Err(Error::MismatchedHorizons(
            coarse_grid.t0(),
            coarse_grid.tf(),
            fine_grid.t0(),
            fine_grid.tf(),
        ));
    }
    if coarse_controls.len() != coarse_grid.n_intervals() {
        return Err(Error::DimensionMismatch {
            expected: coarse_grid.n_intervals(),
            actual: coarse_controls.len(),
        });
    }
    let n_coarse = coarse_grid.n_intervals();
    let fine = (0..fine_grid.n_intervals())
        .map(|k| {
            let t = fine_grid.node(k);
            let j = (((t - coarse_grid.t0()) / coarse_grid.h()).floor() as usize).min(n_coarse - 1);
            coarse_controls[j]
        })
        .collect();
    Ok(fine)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RefinementOutcome {
    pub trajectory: Trajectory,
    pub costates: CostateTrajectory,
    pub reports: Vec<LevelReport>,
    pub final_controls: Vec<f64>,
}

/// Runs the level schedule, warm-starting each inner solve from the previous
/// level's controls. Inner solves may stop at their iteration budget on
/// intermediate levels; only divergence aborts.
pub fn solve_with_refinement(
    problem: &ScalarOcp,
    schedule: &RefinementSchedule,
    base_config: &SolverConfig,
    initial_controls_coarse: &[f64],
) -> Result<RefinementOutcome> {
    schedule.validate(problem.horizon())?;
    let first_n = schedule.levels[0].n_intervals;
    if initial_controls_coarse.len() != first_n {
        return Err(Error::DimensionMismatch {
            expected: first_n,
            actual: initial_controls_coarse.len(),
        });
    }

    let mut reports = Vec::with_capacity(schedule.levels.len());
    let mut controls = initial_controls_coarse.to_vec();
    let mut prev_grid: Option<UniformGrid> = None;
    let mut last: Option<(UniformGrid, Vec<f64>, IterationTrace)> = None;

    for (i, level) in schedule.levels.iter().enumerate() {
        let grid = UniformGrid::new(problem.t0, problem.tf, level.n_intervals)?;
        if let Some(pg) = &prev_grid {
            controls = prolong_controls(&controls, pg, &grid)?;
        }
        let config = SolverConfig {
            tolerance_eps: level.eps,
            max_iterations: level.max_inner_iterations,
            ..base_config.clone()
        };
        let (u, trace) = solve_direct(problem, &grid, &controls, &config)?;
        let traj = forward_simulate(problem, &grid.clone().into(), &u)?;
        let costates = backward_adjoint(problem, &grid.clone().into(), &traj)?;
        let residuals = indirect_residuals(problem, &grid, &traj, &costates)?;
        let rec = trace.final_record();
        reports.push(LevelReport {
            level: i,
            n_intervals: level.n_intervals,
            h: grid.h(),
            eps: level.eps,
            status: trace.status,
            inner_iterations: trace.iterations(),
            final_cost: rec.cost,
            final_grad_norm: rec.grad_inf_norm,
            final_stationarity_norm: rec.stationarity_inf_norm,
            state_residual_norm: residuals.state_norm,
            adjoint_residual_norm: residuals.adjoint_norm,
            stationarity_residual_norm: residuals.stationarity_norm,
        });
        if trace.status == SolveStatus::Diverged {
            return Ok(RefinementOutcome {
                trajectory: traj,
                costates,
                reports,
                final_controls: u,
            });
        }
        controls = u.clone();
        prev_grid = Some(grid.clone());
        last = Some((grid, u, trace));
    }

    let (grid, u, _) = last.expect("at least one level");
    let trajectory = forward_simulate(problem, &grid.clone().into(), &u)?;
    let costates = backward_adjoint(problem, &grid.into(), &trajectory)?;
    Ok(RefinementOutcome {
        trajectory,
        costates,
        reports,
        final_controls: u,
    })
}

/// Compares two solved levels at coincident nodes (N and 2N). An empirical
/// proxy for discretization convergence; makes no limit claim.
pub fn discretization_convergence_probe(
    coarse: &Trajectory,
    coarse_grid: &UniformGrid,
    fine: &Trajectory,
    fine_grid: &UniformGrid,
) -> Result<(f64, f64)> {
    let nc = coarse_grid.n_intervals();
    let nf = fine_grid.n_intervals();
    if !nf.is_multiple_of(nc) {
        return Err(Error::InvalidArgument(format!(
            "fine grid ({nf}) must be a multiple of the coarse grid ({nc})"
        )));
    }
    let ratio = nf / nc;
    let mut control_diff = 0.0f64;
    let mut state_diff = 0.0f64;
    for k in 0..nc {
        control_diff = control_diff.max((coarse.controls[k] - fine.controls[k * ratio]).abs());
    }
    for k in 0..=nc {
        state_diff = state_diff.max((coarse.state_at(k) - fine.state_at(k * ratio)).abs());
    }
    Ok((control_diff, state_diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, TestProblemId};
    use crate::solver::StepPolicy;

    #[test]
    fn prolongation_definition() {
        let coarse = UniformGrid::new(0.0, 1.0, 2).unwrap();
        let fine = UniformGrid::new(0.0, 1.0, 4).unwrap();
        let u = prolong_controls(&[1.0, 2.0], &coarse, &fine).unwrap();
        assert_eq!(u, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn prolongation_identity_and_constant_invariance() {
        let g = UniformGrid::new(0.0, 1.0, 3).unwrap();
        let u = prolong_controls(&[0.1, 0.2, 0.3], &g, &g).unwrap();
        assert_eq!(u, vec![0.1, 0.2, 0.3]);

        let coarse = UniformGrid::new(0.0, 1.0, 2).unwrap();
        let fine = UniformGrid::new(0.0, 1.0, 7).unwrap();
        let u = prolong_controls(&[0.4, 0.4], &coarse, &fine).unwrap();
        assert!(u.iter().all(|&x| x == 0.4));
    }

    #[test]
    fn prolongation_rejects_mismatched_horizons() {
        let a = UniformGrid::new(0.0, 1.0, 2).unwrap();
        let b = UniformGrid::new(0.0, 2.0, 4).unwrap();
        assert!(prolong_controls(&[0.0, 0.0], &a, &b).is_err());
    }

    #[test]
    fn coordinated_schedule_locks_stationarity_ratio() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let schedule = RefinementSchedule::doubling(8, 3, p.horizon(), 1e-4, 20_000);
        let config = SolverConfig {
            step_policy: StepPolicy::Compensated,
            ..SolverConfig::default()
        };
        let outcome = solve_with_refinement(&p, &schedule, &config, &[0.0; 8]).unwrap();
        assert_eq!(outcome.reports.len(), 3);
        for r in &outcome.reports {
            assert_eq!(r.status, SolveStatus::Converged);
            assert!(
                r.final_stationarity_norm <= 1e-4,
                "level {}: {}",
                r.level,
                r.final_stationarity_norm
            );
            // eps_i / h_i held constant by construction.
            assert!((r.eps / r.h - 1e-4).abs() < 1e-12);
        }
    }

    #[test]
    fn single_level_schedule_matches_solve_direct() {
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let schedule = RefinementSchedule {
            levels: vec![RefinementLevel {
                n_intervals: 10,
                eps: 1e-8,
                max_inner_iterations: 5000,
            }],
            target_ratio: 1e-7,
        };
        let config = SolverConfig::default();
        let outcome = solve_with_refinement(&p, &schedule, &config, &[0.0; 10]).unwrap();
        let grid = UniformGrid::new(0.0, 1.0, 10).unwrap();
        let (u, _) = solve_direct(
            &p,
            &grid,
            &[0.0; 10],
            &SolverConfig {
                tolerance_eps: 1e-8,
                max_iterations: 5000,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        assert_eq!(outcome.final_controls, u);
    }

    #[test]
    fn fixed_eps_grows_stationarity_bound() {
        // The failure mode: eps fixed while h shrinks makes eps/h grow.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        for (n, expected) in [(10usize, 1e-5), (100, 1e-4), (1000, 1e-3)] {
            let h = 1.0 / n as f64;
            assert!((1e-6 / h - expected).abs() < 1e-15 * expected.max(1.0));
        }
        let _ = p;
    }

    #[test]
    fn schedule_validation_rejects_growing_ratio() {
        let schedule = RefinementSchedule {
            levels: vec![
                RefinementLevel {
                    n_intervals: 10,
                    eps: 1e-6,
                    max_inner_iterations: 10,
                },
                RefinementLevel {
                    n_intervals: 100,
                    eps: 1e-6,
                    max_inner_iterations: 10,
                },
            ],
            target_ratio: 1e-4,
        };
        assert!(schedule.validate(1.0).is_err());
    }

    #[test]
    fn convergence_probe_identical_trajectories() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let g = UniformGrid::new(0.0, 1.0, 4).unwrap();
        let t = forward_simulate(&p, &g.clone().into(), &[0.1; 4]).unwrap();
        let (cu, cx) = discretization_convergence_probe(&t, &g, &t, &g).unwrap();
        assert_eq!((cu, cx), (0.0, 0.0));
    }

    #[test]
    fn convergence_probe_shrinks_with_refinement() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let config = SolverConfig {
            step_policy: StepPolicy::Compensated,
            ..SolverConfig::default()
        };
        let solve_at = |n: usize| {
            let g = UniformGrid::new(0.0, 1.0, n).unwrap();
            let eps = 1e-6 / n as f64;
            let (u, trace) = solve_direct(
                &p,
                &g,
                &vec![0.0; n],
                &SolverConfig {
                    tolerance_eps: eps,
                    max_iterations: 100_000,
                    ..config.clone()
                },
            )
            .unwrap();
            assert_eq!(trace.status, SolveStatus::Converged);
            (forward_simulate(&p, &g.clone().into(), &u).unwrap(), g)
        };
        let (t8, g8) = solve_at(8);
        let (t16, g16) = solve_at(16);
        let (t32, g32) = solve_at(32);
        let (cu1, cx1) = discretization_convergence_probe(&t8, &g8, &t16, &g16).unwrap();
        let (cu2, cx2) = discretization_convergence_probe(&t16, &g16, &t32, &g32).unwrap();
        assert!(cu2 < cu1, "control diffs {cu2} !< {cu1}");
        assert!(cx2 < cx1, "state diffs {cx2} !< {cx1}");
    }
}
