//! Inner iteration family U_{i+1} = U_i - alpha_i * M^{-1} * g_i with the
//! three metric choices (identity, FD Hessian, quasi-Newton), the
//! coefficient-space variant, the indirect-variational update, and the
//! gradient-flow integrator.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::euler::{
    backward_adjoint, forward_simulate, hamiltonian_gradient_stack, inf_norm, DIVERGENCE_LIMIT,
};
use crate::gradient::ControlBasis;
use crate::grid::{Grid, UniformGrid};
use crate::problem::ScalarOcp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradient,
    Newton,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepPolicy {
    Fixed { alpha: f64 },
    /// alpha = 1/h; cancels the step-size collapse on a uniform grid.
    Compensated,
    Backtracking { alpha0: f64, shrink: f64, armijo_c: f64 },
}

impl StepPolicy {
    pub fn backtracking_defaults() -> Self {
        StepPolicy::Backtracking {
            alpha0: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Step along the gradient of the reduced cost E(x_N(U)).
    Direct,
    /// Step along the Hamiltonian stationarity stack with step gamma.
    IndirectVariational,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolverConfig {
    pub method: Method,
    pub step_policy: StepPolicy,
    pub tolerance_eps: f64,
    pub max_iterations: usize,
    /// Newton damping. `None` selects 1e-8 * (1 + |H|_inf) adaptively;
    /// `Some(0.0)` forces undamped Newton, which errors on singular Hessians.
    pub hessian_regularization_mu: Option<f64>,
    /// Step for the central-difference Hessian.
    pub hessian_fd_step: f64,
    pub mode: SolveMode,
    /// Keep every iterate in the trace (for sequence-equivalence checks).
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Gradient,
            step_policy: StepPolicy::Fixed { alpha: 1.0 },
            tolerance_eps: 1e-6,
            max_iterations: 1000,
            hessian_regularization_mu: None,
            hessian_fd_step: 1e-5,
            mode: SolveMode::Direct,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance_eps > 0.0) {
            return Err(Error::InvalidArgument("tolerance_eps must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let StepPolicy::Fixed { alpha } = self.step_policy {
            if !(alpha > 0.0) {
                return Err(Error::InvalidArgument("alpha must be > 0".into()));
            }
        }
        if let StepPolicy::Backtracking {
            alpha0,
            shrink,
            armijo_c,
        } = self.step_policy
        {
            if !(alpha0 > 0.0) || !(shrink > 0.0 && shrink < 1.0) || !(armijo_c > 0.0 && armijo_c < 1.0)
            {
                return Err(Error::InvalidArgument(
                    "backtracking requires alpha0 > 0, shrink in (0,1), armijo_c in (0,1)".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_inf_norm: f64,
    pub stationarity_inf_norm: f64,
    /// Step length taken from this iterate; 0 for the terminal record.
    pub step_length: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
    /// Populated when `record_iterates` is set.
    pub iterates: Vec<Vec<f64>>,
    /// Set when a rank-deficient control basis was detected (Remark on
    /// spurious coefficient-space solutions).
    pub rank_warning: bool,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace has at least one record")
    }
}

struct Eval {
    cost: f64,
    gradient: Vec<f64>,
    stationarity: Vec<f64>,
}

fn evaluate(problem: &ScalarOcp, grid: &Grid, controls: &[f64]) -> Result<Eval> {
    let traj = forward_simulate(problem, grid, controls)?;
    let costates = backward_adjoint(problem, grid, &traj)?;
    let stationarity = hamiltonian_gradient_stack(problem, &traj, &costates)?;
    let gradient: Vec<f64> = stationarity
        .iter()
        .enumerate()
        .map(|(k, s)| grid.step(k) * s)
        .collect();
    Ok(Eval {
        cost: problem.cost(traj.terminal_state()),
        gradient,
        stationarity,
    })
}

fn is_divergence(err: &Error) -> bool {
    matches!(
        err,
        Error::PropagationDiverged { .. } | Error::AdjointDiverged { .. }
    )
}

/// Central FD of the adjoint-route gradient map U -> g(U), symmetrized.
pub fn newton_hessian(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    controls: &[f64],
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    let g: Grid = grid.clone().into();
    let n = controls.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = controls.to_vec();
    for k in 0..n {
        probe[k] = controls[k] + fd_step;
        let plus = evaluate(problem, &g, &probe)?.gradient;
        probe[k] = controls[k] - fd_step;
        let minus = evaluate(problem, &g, &probe)?.gradient;
        probe[k] = controls[k];
        for r in 0..n {
            h[(r, k)] = (plus[r] - minus[r]) / (2.0 * fd_step);
        }
    }
    let sym = (h.transpose() + &h) * 0.5;
    Ok(sym)
}

/// Solves (H + mu I) d = g. With `mu = None` the damping starts at
/// 1e-8 * (1 + |H|_inf) and escalates tenfold until the factorization
/// succeeds; a user-forced mu that leaves the metric indefinite is an error.
fn newton_direction(hessian: &DMatrix<f64>, g: &DVector<f64>, mu: Option<f64>) -> Result<DVector<f64>> {
    let n = g.len();
    let hnorm = hessian.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let attempt = |m: f64| -> Option<DVector<f64>> {
        let damped = hessian + DMatrix::identity(n, n) * m;
        Cholesky::new(damped).map(|ch| ch.solve(g))
    };
    match mu {
        Some(m) => attempt(m).ok_or(Error::SingularMetric),
        None => {
            let mut m = 1e-8 * (1.0 + hnorm);
            for _ in 0..16 {
                if let Some(d) = attempt(m) {
                    return Ok(d);
                }
                m *= 10.0;
            }
            Err(Error::SingularMetric)
        }
    }
}

/// BFGS update of the inverse metric; resets to identity when the curvature
/// condition fails.
fn bfgs_update(hinv: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let sy = s.dot(y);
    if sy <= 1e-12 * s.norm() * y.norm() {
        hinv.fill_with_identity();
        return;
    }
    let rho = 1.0 / sy;
    let n = s.len();
    let left = DMatrix::identity(n, n) - s * y.transpose() * rho;
    let right = DMatrix::identity(n, n) - y * s.transpose() * rho;
    *hinv = &left * &*hinv * right + s * s.transpose() * rho;
}

enum GradientMap {
    Full,
    Basis(DMatrix<f64>),
}

struct Driver<'a> {
    problem: &'a ScalarOcp,
    grid: UniformGrid,
    config: &'a SolverConfig,
    map: GradientMap,
}

struct Point {
    cost: f64,
    /// Gradient of the objective with respect to the decision vector.
    objective_grad: Vec<f64>,
    /// The vector the update steps along before M^{-1}: objective gradient
    /// in direct mode, stationarity stack in indirect mode.
    update_grad: Vec<f64>,
    stationarity_norm: f64,
}

impl Driver<'_> {
    fn decision_to_controls(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.map {
            GradientMap::Full => Ok(z.to_vec()),
            GradientMap::Basis(b) => Ok((b * DVector::from_column_slice(z))
                .as_slice()
                .to_vec()),
        }
    }

    fn eval(&self, z: &[f64]) -> Result<Point> {
        let controls = self.decision_to_controls(z)?;
        let eval = evaluate(self.problem, &self.grid.clone().into(), &controls)?;
        let (objective_grad, update_grad) = match &self.map {
            GradientMap::Full => {
                let update = match self.config.mode {
                    SolveMode::Direct => eval.gradient.clone(),
                    SolveMode::IndirectVariational => eval.stationarity.clone(),
                };
                (eval.gradient, update)
            }
            GradientMap::Basis(b) => {
                let cg = b.transpose() * DVector::from_column_slice(&eval.gradient);
                let cg = cg.as_slice().to_vec();
                (cg.clone(), cg)
            }
        };
        Ok(Point {
            cost: eval.cost,
            objective_grad,
            update_grad,
            stationarity_norm: inf_norm(&eval.stationarity),
        })
    }

    fn cost(&self, z: &[f64]) -> Result<f64> {
        let controls = self.decision_to_controls(z)?;
        let traj = forward_simulate(self.problem, &self.grid.clone().into(), &controls)?;
        Ok(self.problem.cost(traj.terminal_state()))
    }

    /// Gradient of the objective w.r.t. the decision vector, for Hessian FD.
    fn objective_grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(z)?.objective_grad)
    }

    fn fd_hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let n = z.len();
        let d = self.config.hessian_fd_step;
        let mut h = DMatrix::zeros(n, n);
        let mut probe = z.to_vec();
        for k in 0..n {
            probe[k] = z[k] + d;
            let plus = self.objective_grad(&probe)?;
            probe[k] = z[k] - d;
            let minus = self.objective_grad(&probe)?;
            probe[k] = z[k];
            for r in 0..n {
                h[(r, k)] = (plus[r] - minus[r]) / (2.0 * d);
            }
        }
        Ok((h.transpose() + &h) * 0.5)
    }

    fn step_length(&self, point: &Point, direction: &[f64], z: &[f64]) -> Result<Option<f64>> {
        match self.config.step_policy {
            StepPolicy::Fixed { alpha } => Ok(Some(alpha)),
            StepPolicy::Compensated => Ok(Some(1.0 / self.grid.h())),
            StepPolicy::Backtracking {
                alpha0,
                shrink,
                armijo_c,
            } => {
                let slope: f64 = point
                    .objective_grad
                    .iter()
                    .zip(direction)
                    .map(|(g, d)| g * d)
                    .sum();
                let mut t = alpha0;
                while t > 1e-20 {
                    let trial: Vec<f64> =
                        z.iter().zip(direction).map(|(zi, d)| zi - t * d).collect();
                    match self.cost(&trial) {
                        Ok(c) if c <= point.cost - armijo_c * t * slope => return Ok(Some(t)),
                        Ok(_) => {}
                        Err(e) if is_divergence(&e) => {}
                        Err(e) => return Err(e),
                    }
                    t *= shrink;
                }
                Ok(None)
            }
        }
    }

    fn run(&self, initial: &[f64], rank_warning: bool) -> Result<(Vec<f64>, IterationTrace)> {
        self.config.validate()?;
        let n = initial.len();
        let mut z = initial.to_vec();
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut iterates: Vec<Vec<f64>> = Vec::new();
        let mut hinv = DMatrix::identity(n, n);
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (z, update_grad)
        let mut status = SolveStatus::MaxIterations;

        for i in 0..=self.config.max_iterations {
            let point = match self.eval(&z) {
                Ok(p) => p,
                Err(e) if is_divergence(&e) => {
                    status = SolveStatus::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            if self.config.record_iterates {
                iterates.push(z.clone());
            }
            let grad_norm = inf_norm(&point.objective_grad);
            records.push(IterationRecord {
                iteration: i,
                cost: point.cost,
                grad_inf_norm: grad_norm,
                stationarity_inf_norm: point.stationarity_norm,
                step_length: 0.0,
            });
            if !point.cost.is_finite()
                || point.cost.abs() > DIVERGENCE_LIMIT
                || inf_norm(&z) > DIVERGENCE_LIMIT
            {
                status = SolveStatus::Diverged;
                break;
            }
            let term_norm = match self.config.mode {
                SolveMode::Direct => grad_norm,
                SolveMode::IndirectVariational => point.stationarity_norm,
            };
            if term_norm <= self.config.tolerance_eps {
                status = SolveStatus::Converged;
                break;
            }
            if i == self.config.max_iterations {
                status = SolveStatus::MaxIterations;
                break;
            }

            let g = DVector::from_column_slice(&point.update_grad);
            let direction: Vec<f64> = match self.config.method {
                Method::Gradient => point.update_grad.clone(),
                Method::Newton => {
                    let hess = self.fd_hessian(&z)?;
                    newton_direction(&hess, &g, self.config.hessian_regularization_mu)?
                        .as_slice()
                        .to_vec()
                }
                Method::QuasiNewton => {
                    if let Some((zp, gp)) = &prev {
                        let s = DVector::from_iterator(n, z.iter().zip(zp).map(|(a, b)| a - b));
                        let y = DVector::from_iterator(
                            n,
                            point.update_grad.iter().zip(gp).map(|(a, b)| a - b),
                        );
                        bfgs_update(&mut hinv, &s, &y);
                    }
                    (&hinv * &g).as_slice().to_vec()
                }
            };

            let Some(step) = self.step_length(&point, &direction, &z)? else {
                // Line search exhausted without an acceptable decrease.
                status = SolveStatus::MaxIterations;
                break;
            };
            records.last_mut().expect("just pushed").step_length = step;
            prev = Some((z.clone(), point.update_grad.clone()));
            for (zi, d) in z.iter_mut().zip(&direction) {
                *zi -= step * d;
            }
        }

        Ok((
            z,
            IterationTrace {
                records,
                status,
                iterates,
                rank_warning,
            },
        ))
    }
}

/// Iterates on the full control vector until the termination norm (gradient
/// in direct mode, stationarity in indirect mode) drops below eps.
pub fn solve_direct(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    initial_controls: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, IterationTrace)> {
    if initial_controls.len() != grid.n_intervals() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_intervals(),
            actual: initial_controls.len(),
        });
    }
    let driver = Driver {
        problem,
        grid: grid.clone(),
        config,
        map: GradientMap::Full,
    };
    driver.run(initial_controls, false)
}

/// Iterates on basis coefficients; terminates on |dE/dC|_inf <= eps. A
/// rank-deficient sample matrix is flagged in the trace, since coefficient
/// stationarity then says nothing about the inner gradient outside the
/// column space.
pub fn solve_parameterized(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    basis: &ControlBasis,
    initial_coeffs: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, IterationTrace)> {
    if config.mode == SolveMode::IndirectVariational {
        return Err(Error::InvalidArgument(
            "indirect_variational mode is defined on the full control vector".into(),
        ));
    }
    if initial_coeffs.len() != basis.size() {
        return Err(Error::DimensionMismatch {
            expected: basis.size(),
            actual: initial_coeffs.len(),
        });
    }
    let g: Grid = grid.clone().into();
    let rank = crate::gradient::basis_rank_check(basis, &g)?;
    let b = basis.sample_matrix(&g);
    let driver = Driver {
        problem,
        grid: grid.clone(),
        config,
        map: GradientMap::Basis(b),
    };
    driver.run(initial_coeffs, !rank.full_rank)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FlowTrace {
    pub taus: Vec<f64>,
    pub grad_inf_norms: Vec<f64>,
    pub final_controls: Vec<f64>,
    pub diverged: bool,
}

/// Forward-Euler integration of dU/dtau = -M^{-1} g(U). The iteration family
/// with step alpha is exactly this integrator with substep alpha, so the
/// flow separates algorithm convergence into flow stability and step-size
/// stability. Divergence is recorded, not thrown.
pub fn integrate_gradient_flow(
    problem: &ScalarOcp,
    grid: &UniformGrid,
    initial_controls: &[f64],
    method: Method,
    tau_end: f64,
    substep: f64,
) -> Result<FlowTrace> {
    if !(substep > 0.0) {
        return Err(Error::InvalidArgument("substep must be positive".into()));
    }
    if tau_end < 0.0 {
        return Err(Error::InvalidArgument("tau_end must be nonnegative".into()));
    }
    let config = SolverConfig {
        method,
        ..SolverConfig::default()
    };
    let driver = Driver {
        problem,
        grid: grid.clone(),
        config: &config,
        map: GradientMap::Full,
    };
    let n_steps = (tau_end / substep).ceil() as usize;
    let mut u = initial_controls.to_vec();
    let mut taus = Vec::with_capacity(n_steps + 1);
    let mut norms = Vec::with_capacity(n_steps + 1);
    let mut hinv = DMatrix::identity(u.len(), u.len());
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut diverged = false;

    for i in 0..=n_steps {
        let point = match driver.eval(&u) {
            Ok(p) => p,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        taus.push(i as f64 * substep);
        norms.push(inf_norm(&point.objective_grad));
        if inf_norm(&u) > DIVERGENCE_LIMIT {
            diverged = true;
            break;
        }
        if i == n_steps {
            break;
        }
        let g = DVector::from_column_slice(&point.update_grad);
        let direction: Vec<f64> = match method {
            Method::Gradient => point.update_grad.clone(),
            Method::Newton => {
                let hess = driver.fd_hessian(&u)?;
                newton_direction(&hess, &g, None)?.as_slice().to_vec()
            }
            Method::QuasiNewton => {
                if let Some((up, gp)) = &prev {
                    let s = DVector::from_iterator(u.len(), u.iter().zip(up).map(|(a, b)| a - b));
                    let y = DVector::from_iterator(
                        u.len(),
                        point.update_grad.iter().zip(gp).map(|(a, b)| a - b),
                    );
                    bfgs_update(&mut hinv, &s, &y);
                }
                (&hinv * &g).as_slice().to_vec()
            }
        };
        prev = Some((u.clone(), point.update_grad.clone()));
        for (ui, d) in u.iter_mut().zip(&direction) {
            *ui -= substep * d;
        }
    }

    Ok(FlowTrace {
        taus,
        grad_inf_norms: norms,
        final_controls: u,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, TestProblemId};
    use approx::assert_relative_eq;

    fn grid(n: usize) -> UniformGrid {
        UniformGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn gradient_descent_contracts_terminal_state_by_one_minus_alpha_h() {
        // linear_integrator: each gradient step with alpha scales x_N by
        // (1 - alpha*h) since N*h = 1.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(10);
        let config = SolverConfig {
            step_policy: StepPolicy::Fixed { alpha: 1.0 },
            tolerance_eps: 1e-8,
            max_iterations: 10_000,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let (u, trace) = solve_direct(&p, &g, &[0.0; 10], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        let x_n = 1.0 + 0.1 * u.iter().sum::<f64>();
        assert!(x_n.abs() <= 1e-7);
        // Fit the contraction ratio over the first few iterations.
        let costs: Vec<f64> = trace.records.iter().map(|r| r.cost).collect();
        for w in costs.windows(2).take(5) {
            // cost = x_N^2/2, so the cost ratio is (1-h)^2 = 0.81.
            assert_relative_eq!(w[1] / w[0], 0.81, max_relative = 1e-10);
        }
    }

    #[test]
    fn compensated_policy_converges_in_one_step_on_linear_integrator() {
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(10);
        let config = SolverConfig {
            step_policy: StepPolicy::Compensated,
            tolerance_eps: 1e-12,
            ..SolverConfig::default()
        };
        let (_, trace) = solve_direct(&p, &g, &[0.0; 10], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        assert!(trace.iterations() <= 1, "took {}", trace.iterations());
    }

    #[test]
    fn already_converged_start_returns_trace_of_length_one() {
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(4);
        let config = SolverConfig {
            tolerance_eps: 1e-10,
            ..SolverConfig::default()
        };
        // x_N = 0 at u = -1: gradient is exactly zero.
        let (_, trace) = solve_direct(&p, &g, &[-1.0; 4], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn newton_converges_fast_on_cubic_drag() {
        let p = builtin_problem(TestProblemId::CubicDrag);
        let g = grid(8);
        let config = SolverConfig {
            method: Method::Newton,
            step_policy: StepPolicy::backtracking_defaults(),
            tolerance_eps: 1e-10,
            max_iterations: 50,
            ..SolverConfig::default()
        };
        let (_, trace) = solve_direct(&p, &g, &[0.0; 8], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged, "{trace:?}");
        assert!(trace.iterations() <= 50);
    }

    #[test]
    fn undamped_newton_errors_on_singular_hessian() {
        // linear_integrator's reduced Hessian is rank one; mu = 0 must fail.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(6);
        let config = SolverConfig {
            method: Method::Newton,
            hessian_regularization_mu: Some(0.0),
            ..SolverConfig::default()
        };
        let err = solve_direct(&p, &g, &[0.0; 6], &config).unwrap_err();
        assert!(matches!(err, Error::SingularMetric));
    }

    #[test]
    fn quasi_newton_converges_on_damped_linear() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let g = grid(16);
        let config = SolverConfig {
            method: Method::QuasiNewton,
            step_policy: StepPolicy::backtracking_defaults(),
            tolerance_eps: 1e-9,
            max_iterations: 200,
            ..SolverConfig::default()
        };
        let (_, trace) = solve_direct(&p, &g, &[0.0; 16], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
    }

    #[test]
    fn backtracking_never_increases_cost() {
        let p = builtin_problem(TestProblemId::CubicDrag);
        let g = grid(12);
        let config = SolverConfig {
            step_policy: StepPolicy::backtracking_defaults(),
            tolerance_eps: 1e-8,
            max_iterations: 500,
            ..SolverConfig::default()
        };
        let (_, trace) = solve_direct(&p, &g, &[2.0; 12], &config).unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-15);
        }
    }

    #[test]
    fn newton_hessian_closed_form_linear_integrator() {
        // E^N = (1 + h * sum u)^2 / 2 so the Hessian is h^2 * ones.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(4);
        let h = newton_hessian(&p, &g, &[0.1, -0.2, 0.3, 0.0], 1e-5).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_relative_eq!(h[(r, c)], 0.0625, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn newton_hessian_matches_fd_of_fd() {
        let p = builtin_problem(TestProblemId::CubicDrag);
        let g = grid(4);
        let u = [0.2, -0.1, 0.4, 0.3];
        let h = newton_hessian(&p, &g, &u, 1e-5).unwrap();
        // Symmetry is structural; compare against FD of the FD gradient.
        let d = 1e-4;
        let mut probe = u.to_vec();
        for k in 0..4 {
            probe[k] = u[k] + d;
            let plus = crate::gradient::fd_gradient(&p, &g.clone().into(), &probe, 1e-6).unwrap();
            probe[k] = u[k] - d;
            let minus = crate::gradient::fd_gradient(&p, &g.clone().into(), &probe, 1e-6).unwrap();
            probe[k] = u[k];
            for r in 0..4 {
                let fd2 = (plus[r] - minus[r]) / (2.0 * d);
                assert!((h[(r, k)] - fd2).abs() < 1e-4, "({r},{k}): {} vs {fd2}", h[(r, k)]);
            }
        }
    }

    #[test]
    fn direct_and_indirect_sequences_match_under_gamma_alpha_h() {
        let p = builtin_problem(TestProblemId::CubicDrag);
        let g = grid(16);
        let alpha = 1.0;
        let direct = SolverConfig {
            step_policy: StepPolicy::Fixed { alpha },
            tolerance_eps: 1e-14,
            max_iterations: 60,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let indirect = SolverConfig {
            step_policy: StepPolicy::Fixed {
                alpha: alpha * g.h(),
            },
            mode: SolveMode::IndirectVariational,
            tolerance_eps: 1e-14,
            max_iterations: 60,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let (_, td) = solve_direct(&p, &g, &[0.5; 16], &direct).unwrap();
        let (_, ti) = solve_direct(&p, &g, &[0.5; 16], &indirect).unwrap();
        let n = td.iterates.len().min(ti.iterates.len());
        assert!(n > 10);
        for i in 0..n {
            for k in 0..16 {
                let a = td.iterates[i][k];
                let b = ti.iterates[i][k];
                assert!(
                    (a - b).abs() <= 1e-12 * f64::max(1.0, a.abs()),
                    "iterate {i} coord {k}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn h_equals_one_direct_and_indirect_coincide() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let g = UniformGrid::new(0.0, 1.0, 1).unwrap();
        assert_eq!(g.h(), 1.0);
        let mk = |mode| SolverConfig {
            step_policy: StepPolicy::Fixed { alpha: 0.5 },
            mode,
            tolerance_eps: 1e-13,
            max_iterations: 100,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let (_, td) = solve_direct(&p, &g, &[0.3], &mk(SolveMode::Direct)).unwrap();
        let (_, ti) =
            solve_direct(&p, &g, &[0.3], &mk(SolveMode::IndirectVariational)).unwrap();
        for (a, b) in td.iterates.iter().zip(&ti.iterates) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn parameterized_constant_basis_finds_scalar_minimizer() {
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(10);
        let config = SolverConfig {
            tolerance_eps: 1e-10,
            step_policy: StepPolicy::Fixed { alpha: 0.5 },
            max_iterations: 10_000,
            ..SolverConfig::default()
        };
        let (c, trace) =
            solve_parameterized(&p, &g, &ControlBasis::constant(), &[0.0], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        assert!(!trace.rank_warning);
        // x_N = 1 + c1 must vanish.
        assert!((c[0] + 1.0).abs() < 1e-8, "c1 = {}", c[0]);
    }

    #[test]
    fn parameterized_indicator_basis_matches_solve_direct() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let g = grid(6);
        let basis = ControlBasis::indicators(&g);
        let config = SolverConfig {
            tolerance_eps: 1e-8,
            step_policy: StepPolicy::Fixed { alpha: 2.0 },
            max_iterations: 5000,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let (u_direct, td) = solve_direct(&p, &g, &[0.1; 6], &config).unwrap();
        let (c, tp) = solve_parameterized(&p, &g, &basis, &[0.1; 6], &config).unwrap();
        assert_eq!(td.records.len(), tp.records.len());
        for (a, b) in u_direct.iter().zip(&c) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn rank_deficient_basis_sets_warning_and_leaves_inner_gradient() {
        // Two identical sign-alternating functions on linear_integrator: the
        // coefficient gradient vanishes identically while the inner gradient
        // stays at h * x_N.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(8);
        let sign = std::sync::Arc::new(|_j: usize, t: f64| if t < 0.5 { 1.0 } else { -1.0 });
        let basis = ControlBasis::new(2, sign);
        let config = SolverConfig {
            tolerance_eps: 1e-10,
            ..SolverConfig::default()
        };
        let (_, trace) = solve_parameterized(&p, &g, &basis, &[0.0, 0.0], &config).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        assert!(trace.rank_warning);
        // Inner N-space gradient did not vanish.
        let inner = crate::gradient::adjoint_gradient(&p, &g, &[0.0; 8]).unwrap();
        assert!(inner.grad_inf_norm > 0.1);
    }

    #[test]
    fn gradient_flow_decays_below_stability_threshold() {
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(10);
        let trace =
            integrate_gradient_flow(&p, &g, &[0.0; 10], Method::Gradient, 50.0, 0.5).unwrap();
        assert!(!trace.diverged);
        // |g| decays by (1 - substep*h) per substep on this problem.
        for w in trace.grad_inf_norms.windows(2).take(20) {
            if w[0] > 1e-14 {
                assert_relative_eq!(w[1] / w[0], 0.95, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gradient_flow_diverges_beyond_stability_threshold() {
        // Stability boundary is substep < 2/h = 20 on linear_integrator.
        let p = builtin_problem(TestProblemId::LinearIntegrator);
        let g = grid(10);
        let trace =
            integrate_gradient_flow(&p, &g, &[0.0; 10], Method::Gradient, 2000.0, 25.0)
                .unwrap();
        assert!(trace.diverged);
    }

    #[test]
    fn gradient_flow_zero_time_records_initial_point_only() {
        let p = builtin_problem(TestProblemId::DampedLinear);
        let g = grid(5);
        let trace =
            integrate_gradient_flow(&p, &g, &[0.2; 5], Method::Gradient, 0.0, 0.1).unwrap();
        assert_eq!(trace.taus.len(), 1);
        assert_eq!(trace.grad_inf_norms.len(), 1);
    }
}
