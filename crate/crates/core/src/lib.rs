//! A desk-scale trajectory-optimization laboratory for the scalar optimal
//! control problem: minimize an endpoint cost E(x(tf)) subject to
//! xdot = f(x, u) with fixed initial state and times.
//!
//! The library implements direct shooting and its first-order-equivalent
//! indirect twin on forward/backward Euler transcriptions. The central
//! identity is the covector mapping dE/du_k = h * dH/du_k: driving the
//! direct gradient below eps leaves the Hamiltonian stationarity condition
//! satisfied only to eps/h, which is what the convergence and accuracy
//! experiments in the companion CLI measure.

pub mod error;
pub mod euler;
pub mod gradient;
pub mod grid;
pub mod hamiltonize;
pub mod problem;
pub mod refine;
pub mod solver;

pub use error::{Error, Result};
pub use euler::{
    backward_adjoint, forward_simulate, hamiltonian_gradient_stack, indirect_residuals,
    CostateTrajectory, IndirectResiduals, Trajectory,
};
pub use gradient::{
    adaptive_gradient_decomposition, adjoint_gradient, basis_rank_check, fd_gradient,
    parameterized_gradient, theorem1_bound, verify_equivalence, AdaptationRule, ControlBasis,
    GradientReport,
};
pub use grid::{Grid, NonuniformGrid, UniformGrid};
pub use hamiltonize::{
    conservation_report, hamiltonianize, integrate_joint, AutonomousOde, HamiltonianSystem,
    JointScheme,
};
pub use problem::{
    builtin_problem, check_derivatives, hamiltonian, hamiltonian_du, ScalarOcp, TestProblemId,
};
pub use refine::{
    discretization_convergence_probe, prolong_controls, solve_with_refinement, LevelReport,
    RefinementLevel, RefinementSchedule,
};
pub use solver::{
    integrate_gradient_flow, newton_hessian, solve_direct, solve_parameterized, IterationTrace,
    Method, SolveMode, SolveStatus, SolverConfig, StepPolicy,
};
