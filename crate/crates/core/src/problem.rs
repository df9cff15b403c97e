//! Continuous-time problem data: scalar dynamics, endpoint cost and exact
//! derivatives, plus a small library of built-in test problems.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type DynamicsFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CostFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar optimal control problem: minimize E(x(tf)) subject to
/// xdot = f(x, u), x(t0) = x0. Derivatives are user-supplied closed forms;
/// `check_derivatives` is the guard against inconsistent data.
#[derive(Clone)]
pub struct ScalarOcp {
    pub dynamics: DynamicsFn,
    pub dynamics_dx: DynamicsFn,
    pub dynamics_du: DynamicsFn,
    pub endpoint_cost: CostFn,
    pub endpoint_cost_dx: CostFn,
    pub x0: f64,
    pub t0: f64,
    pub tf: f64,
}

impl fmt::Debug for ScalarOcp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarOcp")
            .field("x0", &self.x0)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .finish_non_exhaustive()
    }
}

impl ScalarOcp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dynamics: DynamicsFn,
        dynamics_dx: DynamicsFn,
        dynamics_du: DynamicsFn,
        endpoint_cost: CostFn,
        endpoint_cost_dx: CostFn,
        x0: f64,
        t0: f64,
        tf: f64,
    ) -> Result<Self> {
        if !(tf > t0) {
            return Err(Error::InvalidArgument(format!(
                "tf must exceed t0 (got t0={t0}, tf={tf})"
            )));
        }
        Ok(Self {
            dynamics,
            dynamics_dx,
            dynamics_du,
            endpoint_cost,
            endpoint_cost_dx,
            x0,
            t0,
            tf,
        })
    }

    pub fn f(&self, x: f64, u: f64) -> f64 {
        (self.dynamics)(x, u)
    }

    pub fn f_dx(&self, x: f64, u: f64) -> f64 {
        (self.dynamics_dx)(x, u)
    }

    pub fn f_du(&self, x: f64, u: f64) -> f64 {
        (self.dynamics_du)(x, u)
    }

    pub fn cost(&self, x: f64) -> f64 {
        (self.endpoint_cost)(x)
    }

    pub fn cost_dx(&self, x: f64) -> f64 {
        (self.endpoint_cost_dx)(x)
    }

    pub fn horizon(&self) -> f64 {
        self.tf - self.t0
    }
}

/// Pontryagin Hamiltonian H(lambda, x, u) = lambda * f(x, u).
pub fn hamiltonian(problem: &ScalarOcp, lam: f64, x: f64, u: f64) -> f64 {
    lam * problem.f(x, u)
}

/// Control derivative of the Hamiltonian: lambda * df/du.
pub fn hamiltonian_du(problem: &ScalarOcp, lam: f64, x: f64, u: f64) -> f64 {
    lam * problem.f_du(x, u)
}

/// Built-in scalar test problems, all on t in [0, 1] with x0 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestProblemId {
    /// f = u, E = x^2/2. Flat-minimum manifold; stresses gradient methods.
    LinearIntegrator,
    /// f = -x + u, E = x^2/2. Nonzero df/dx exercises the adjoint recursion.
    DampedLinear,
    /// f = x*u, E = x^2/2. State-dependent df/du.
    Bilinear,
    /// f = -x^3 + u, E = (x - 1/2)^2/2. Nonlinearity for Newton tests.
    CubicDrag,
}

impl TestProblemId {
    pub const ALL: [TestProblemId; 4] = [
        TestProblemId::LinearIntegrator,
        TestProblemId::DampedLinear,
        TestProblemId::Bilinear,
        TestProblemId::CubicDrag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestProblemId::LinearIntegrator => "linear_integrator",
            TestProblemId::DampedLinear => "damped_linear",
            TestProblemId::Bilinear => "bilinear",
            TestProblemId::CubicDrag => "cubic_drag",
        }
    }
}

impl FromStr for TestProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_integrator" => Ok(TestProblemId::LinearIntegrator),
            "damped_linear" => Ok(TestProblemId::DampedLinear),
            "bilinear" => Ok(TestProblemId::Bilinear),
            "cubic_drag" => Ok(TestProblemId::CubicDrag),
            other => Err(Error::InvalidArgument(format!(
                "unknown test problem `{other}`"
            ))),
        }
    }
}

impl fmt::Display for TestProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Returns the fully populated problem for a built-in id. Derivatives are
/// exact closed forms.
pub fn builtin_problem(id: TestProblemId) -> ScalarOcp {
    let quadratic_cost: CostFn = Arc::new(|x| 0.5 * x * x);
    let quadratic_cost_dx: CostFn = Arc::new(|x| x);
    match id {
        TestProblemId::LinearIntegrator => ScalarOcp::new(
            Arc::new(|_x, u| u),
            Arc::new(|_x, _u| 0.0),
            Arc::new(|_x, _u| 1.0),
            quadratic_cost,
            quadratic_cost_dx,
            1.0,
            0.0,
            1.0,
        )
        .expect("static definition"),
        TestProblemId::DampedLinear => ScalarOcp::new(
            Arc::new(|x, u| -x + u),
            Arc::new(|_x, _u| -1.0),
            Arc::new(|_x, _u| 1.0),
            quadratic_cost,
            quadratic_cost_dx,
            1.0,
            0.0,
            1.0,
        )
        .expect("static definition"),
        TestProblemId::Bilinear => ScalarOcp::new(
            Arc::new(|x, u| x * u),
            Arc::new(|_x, u| u),
            Arc::new(|x, _u| x),
            quadratic_cost,
            quadratic_cost_dx,
            1.0,
            0.0,
            1.0,
        )
        .expect("static definition"),
        TestProblemId::CubicDrag => ScalarOcp::new(
            Arc::new(|x, u| -x * x * x + u),
            Arc::new(|x, _u| -3.0 * x * x),
            Arc::new(|_x, _u| 1.0),
            Arc::new(|x| 0.5 * (x - 0.5) * (x - 0.5)),
            Arc::new(|x| x - 0.5),
            1.0,
            0.0,
            1.0,
        )
        .expect("static definition"),
    }
}

/// Relative tolerance above which a supplied derivative is flagged as
/// inconsistent with the central-difference probe.
pub const DERIVATIVE_CHECK_TOL: f64 = 1e-5;

#[derive(Debug, Clone, serde::Serialize)]
pub struct DerivativeReport {
    pub probes: usize,
    pub max_rel_err_dynamics_dx: f64,
    pub max_rel_err_dynamics_du: f64,
    pub max_rel_err_endpoint_cost_dx: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / f64::max(1.0, fd.abs())
}

/// Checks the supplied closed-form derivatives against central finite
/// differences at seeded random probe points, uniform on [-2, 2]^2.
pub fn check_derivatives(problem: &ScalarOcp, probes: usize, seed: u64) -> Result<DerivativeReport> {
    if probes == 0 {
        return Err(Error::InvalidArgument("probes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6;
    let mut max_dx = 0.0f64;
    let mut max_du = 0.0f64;
    let mut max_edx = 0.0f64;
    for _ in 0..probes {
        let x: f64 = rng.random_range(-2.0..2.0);
        let u: f64 = rng.random_range(-2.0..2.0);
        let fd_dx = (problem.f(x + step, u) - problem.f(x - step, u)) / (2.0 * step);
        let fd_du = (problem.f(x, u + step) - problem.f(x, u - step)) / (2.0 * step);
        let fd_edx = (problem.cost(x + step) - problem.cost(x - step)) / (2.0 * step);
        max_dx = max_dx.max(rel_err(problem.f_dx(x, u), fd_dx));
        max_du = max_du.max(rel_err(problem.f_du(x, u), fd_du));
        max_edx = max_edx.max(rel_err(problem.cost_dx(x), fd_edx));
    }
    let pass = max_dx <= DERIVATIVE_CHECK_TOL
        && max_du <= DERIVATIVE_CHECK_TOL
        && max_edx <= DERIVATIVE_CHECK_TOL;
    Ok(DerivativeReport {
        probes,
        max_rel_err_dynamics_dx: max_dx,
        max_rel_err_dynamics_du: max_du,
        max_rel_err_endpoint_cost_dx: max_edx,
        tolerance: DERIVATIVE_CHECK_TOL,
        pass,
    })
}
