//! Hamiltonianization of autonomous ODEs: pair xdot = f(x) with the shadow
//! system -psidot = (df/dx)^T psi and verify that H(psi, x) = psi . f(x) is
//! conserved along the joint flow.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::euler::DIVERGENCE_LIMIT;

pub type VectorFieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Autonomous vector ODE xdot = f(x) with its Jacobian df/dx.
#[derive(Clone)]
pub struct AutonomousOde {
    pub dimension: usize,
    pub vector_field: VectorFieldFn,
    pub jacobian: JacobianFn,
}

impl AutonomousOde {
    pub fn new(dimension: usize, vector_field: VectorFieldFn, jacobian: JacobianFn) -> Self {
        Self {
            dimension,
            vector_field,
            jacobian,
        }
    }

    /// Scalar linear field f(x) = a*x.
    pub fn scalar_linear(a: f64) -> Self {
        Self::new(
            1,
            Arc::new(move |x| DVector::from_element(1, a * x[0])),
            Arc::new(move |_| DMatrix::from_element(1, 1, a)),
        )
    }

    /// Scalar cubic decay f(x) = -x^3, a nonlinear field whose joint flow
    /// exhibits the generic (non-cancelling) integrator drift.
    pub fn scalar_cubic() -> Self {
        Self::new(
            1,
            Arc::new(|x| DVector::from_element(1, -x[0] * x[0] * x[0])),
            Arc::new(|x| DMatrix::from_element(1, 1, -3.0 * x[0] * x[0])),
        )
    }

    /// Planar rotation f(x) = (x2, -x1).
    pub fn rotation() -> Self {
        Self::new(
            2,
            Arc::new(|x| DVector::from_column_slice(&[x[1], -x[0]])),
            Arc::new(|_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
        )
    }

    /// Linear field f(x) = A*x.
    pub fn linear(a: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let dim = a.nrows();
        let a2 = a.clone();
        Self::new(
            dim,
            Arc::new(move |x| &a * x),
            Arc::new(move |_| a2.clone()),
        )
    }

    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.vector_field)(x)
    }

    pub fn jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    /// Checks the supplied Jacobian against central differences of the field
    /// at seeded random probes.
    pub fn check_jacobian(&self, probes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = 1e-6;
        let mut max_err = 0.0f64;
        for _ in 0..probes.max(1) {
            let x = DVector::from_fn(self.dimension, |_, _| rng.random_range(-2.0..2.0));
            let jac = self.jac(&x);
            for c in 0..self.dimension {
                let mut xp = x.clone();
                xp[c] += step;
                let mut xm = x.clone();
                xm[c] -= step;
                let col = (self.f(&xp) - self.f(&xm)) / (2.0 * step);
                for r in 0..self.dimension {
                    let err = (jac[(r, c)] - col[r]).abs() / f64::max(1.0, col[r].abs());
                    max_err = max_err.max(err);
                }
            }
        }
        Ok(max_err)
    }
}

impl std::fmt::Debug for AutonomousOde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AutonomousOde")
            .field("dimension", &self.dimension)
            .finish_non_exhaustive()
    }
}

/// The ODE together with its shadow: H(psi, x) = psi . f(x), psidot = -(df/dx)^T psi.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    pub base: AutonomousOde,
}

impl HamiltonianSystem {
    pub fn hamiltonian(&self, psi: &DVector<f64>, x: &DVector<f64>) -> f64 {
        psi.dot(&self.base.f(x))
    }

    /// Joint field (xdot, psidot) = (f(x), -(df/dx)^T psi).
    pub fn joint_field(&self, x: &DVector<f64>, psi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let xdot = self.base.f(x);
        let psidot = -(self.base.jac(x).transpose() * psi);
        (xdot, psidot)
    }
}

/// Pairs an ODE with its shadow adjoint system.
pub fn hamiltonianize(ode: AutonomousOde) -> HamiltonianSystem {
    HamiltonianSystem { base: ode }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointScheme {
    /// The default; integration error must stay subdominant to the identity
    /// being verified.
    Rk4,
    /// Kept for the order-comparison experiment only.
    Euler,
}

#[derive(Debug, Clone)]
pub struct JointTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub psis: Vec<DVector<f64>>,
    pub hamiltonians: Vec<f64>,
}

/// Fixed-step integration of the 2*N_x joint system, sampling H at every
/// node.
pub fn integrate_joint(
    system: &HamiltonianSystem,
    x_init: &DVector<f64>,
    psi_init: &DVector<f64>,
    t_end: f64,
    step: f64,
    scheme: JointScheme,
) -> Result<JointTrajectory> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    if t_end < 0.0 {
        return Err(Error::InvalidArgument("t_end must be nonnegative".into()));
    }
    let dim = system.base.dimension;
    if x_init.len() != dim || psi_init.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x_init.len().min(psi_init.len()),
        });
    }
    let n_steps = (t_end / step).round() as usize;

    let deriv = |z: &DVector<f64>| -> DVector<f64> {
        let x = z.rows(0, dim).into_owned();
        let psi = z.rows(dim, dim).into_owned();
        let (xdot, psidot) = system.joint_field(&x, &psi);
        let mut out = DVector::zeros(2 * dim);
        out.rows_mut(0, dim).copy_from(&xdot);
        out.rows_mut(dim, dim).copy_from(&psidot);
        out
    };

    let mut z = DVector::zeros(2 * dim);
    z.rows_mut(0, dim).copy_from(x_init);
    z.rows_mut(dim, dim).copy_from(psi_init);

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut psis = Vec::with_capacity(n_steps + 1);
    let mut hams = Vec::with_capacity(n_steps + 1);

    for i in 0..=n_steps {
        let x = z.rows(0, dim).into_owned();
        let psi = z.rows(dim, dim).into_owned();
        times.push(i as f64 * step);
        hams.push(system.hamiltonian(&psi, &x));
        states.push(x);
        psis.push(psi);
        if i == n_steps {
            break;
        }
        z = match scheme {
            JointScheme::Euler => &z + deriv(&z) * step,
            JointScheme::Rk4 => {
                let k1 = deriv(&z);
                let k2 = deriv(&(&z + &k1 * (step / 2.0)));
                let k3 = deriv(&(&z + &k2 * (step / 2.0)));
                let k4 = deriv(&(&z + &k3 * step));
                &z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0)
            }
        };
        if z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::PropagationDiverged {
                index: i + 1,
                limit: DIVERGENCE_LIMIT,
            });
        }
    }

    Ok(JointTrajectory {
        times,
        states,
        psis,
        hamiltonians: hams,
    })
}

/// Max drift of H from its initial value, absolute and relative to
/// max(1, |H(0)|).
pub fn conservation_report(traj: &JointTrajectory) -> Result<(f64, f64)> {
    if traj.hamiltonians.len() < 2 {
        return Err(Error::InvalidArgument(
            "conservation report needs at least two samples".into(),
        ));
    }
    let h0 = traj.hamiltonians[0];
    let max_drift = traj
        .hamiltonians
        .iter()
        .fold(0.0f64, |acc, h| acc.max((h - h0).abs()));
    Ok((max_drift, max_drift / f64::max(1.0, h0.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_linear_shadow_and_hamiltonian() {
        let sys = hamiltonianize(AutonomousOde::scalar_linear(-1.0));
        let x = DVector::from_element(1, 2.0);
        let psi = DVector::from_element(1, 3.0);
        // H = psi * (-x) = -6; shadow psidot = +psi.
        assert_relative_eq!(sys.hamiltonian(&psi, &x), -6.0);
        let (xdot, psidot) = sys.joint_field(&x, &psi);
        assert_relative_eq!(xdot[0], -2.0);
        assert_relative_eq!(psidot[0], 3.0);
    }

    #[test]
    fn rotation_field_shadow_by_transpose_jacobian() {
        let sys = hamiltonianize(AutonomousOde::rotation());
        let x = DVector::from_column_slice(&[0.3, -0.7]);
        let psi = DVector::from_column_slice(&[1.0, 2.0]);
        // H = psi1*x2 - psi2*x1.
        assert_relative_eq!(sys.hamiltonian(&psi, &x), 1.0 * -0.7 - 2.0 * 0.3);
        let (_, psidot) = sys.joint_field(&x, &psi);
        // -J^T psi with J = [[0,1],[-1,0]] gives (psi2, -psi1).
        assert_relative_eq!(psidot[0], 2.0);
        assert_relative_eq!(psidot[1], -1.0);
        assert!(sys.base.check_jacobian(20, 1).unwrap() < 1e-8);
    }

    #[test]
    fn zero_field_is_trivially_conserved() {
        let ode = AutonomousOde::new(
            2,
            Arc::new(|_| DVector::zeros(2)),
            Arc::new(|_| DMatrix::zeros(2, 2)),
        );
        let sys = hamiltonianize(ode);
        let traj = integrate_joint(
            &sys,
            &DVector::from_column_slice(&[1.0, -1.0]),
            &DVector::from_column_slice(&[0.5, 0.5]),
            1.0,
            0.1,
            JointScheme::Rk4,
        )
        .unwrap();
        assert!(traj.hamiltonians.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn scalar_linear_flow_conserves_h_at_minus_one() {
        // x = e^{-t}, psi = e^{t}, H = -x*psi = -1 for all t.
        let sys = hamiltonianize(AutonomousOde::scalar_linear(-1.0));
        let traj = integrate_joint(
            &sys,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            1.0,
            1e-3,
            JointScheme::Rk4,
        )
        .unwrap();
        for &h in &traj.hamiltonians {
            assert!((h + 1.0).abs() <= 1e-9, "H = {h}");
        }
        let (_, rel) = conservation_report(&traj).unwrap();
        assert!(rel <= 1e-9);
    }

    #[test]
    fn rotation_conserved_over_long_horizon() {
        let sys = hamiltonianize(AutonomousOde::rotation());
        let traj = integrate_joint(
            &sys,
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 1.0]),
            10.0,
            1e-3,
            JointScheme::Rk4,
        )
        .unwrap();
        let (drift, _) = conservation_report(&traj).unwrap();
        assert!(drift <= 1e-8, "drift = {drift}");
    }

    #[test]
    fn rk4_drift_shrinks_fourth_order_when_step_halves() {
        // Steps coarse enough that truncation error dominates rounding, and a
        // nonlinear field: on linear fields the leading drift terms cancel and
        // the halving ratio lands on the 2^5 boundary instead of near 2^4.
        let sys = hamiltonianize(AutonomousOde::scalar_cubic());
        let run = |step: f64| {
            let traj = integrate_joint(
                &sys,
                &DVector::from_element(1, 1.0),
                &DVector::from_element(1, 1.0),
                1.0,
                step,
                JointScheme::Rk4,
            )
            .unwrap();
            conservation_report(&traj).unwrap().0
        };
        let coarse = run(0.1);
        let fine = run(0.05);
        let ratio = coarse / fine;
        assert!((8.0..=32.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn euler_drifts_more_than_rk4_at_same_step() {
        let sys = hamiltonianize(AutonomousOde::scalar_linear(-1.0));
        let run = |scheme| {
            let traj = integrate_joint(
                &sys,
                &DVector::from_element(1, 1.0),
                &DVector::from_element(1, 1.0),
                1.0,
                1e-2,
                scheme,
            )
            .unwrap();
            conservation_report(&traj).unwrap().0
        };
        assert!(run(JointScheme::Euler) > run(JointScheme::Rk4));
    }

    #[test]
    fn fd_in_psi_recovers_vector_field() {
        // H is linear in psi, so dH/dpsi = f(x) up to rounding.
        let sys = hamiltonianize(AutonomousOde::rotation());
        let x = DVector::from_column_slice(&[0.8, -0.4]);
        let psi = DVector::from_column_slice(&[0.3, 0.9]);
        let f = sys.base.f(&x);
        let d = 1e-6;
        for c in 0..2 {
            let mut pp = psi.clone();
            pp[c] += d;
            let mut pm = psi.clone();
            pm[c] -= d;
            let fd = (sys.hamiltonian(&pp, &x) - sys.hamiltonian(&pm, &x)) / (2.0 * d);
            assert!((fd - f[c]).abs() <= 1e-8);
        }
    }

    #[test]
    fn conservation_report_rejects_single_sample() {
        let traj = JointTrajectory {
            times: vec![0.0],
            states: vec![DVector::zeros(1)],
            psis: vec![DVector::zeros(1)],
            hamiltonians: vec![0.0],
        };
        assert!(conservation_report(&traj).is_err());
    }
}
