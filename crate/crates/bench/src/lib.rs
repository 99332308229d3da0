//! Shared fixtures for the pipeline benchmarks.

use flexiscope_core::camera::{CameraIntrinsics, PixelFeature};
use flexiscope_core::estimator::JacobianEstimate;
use flexiscope_core::kinematics::{
    actuator_to_camera_jacobian, actuator_to_config, camera_pose, ConfigState, RobotGeometry,
};
use flexiscope_core::mpc::{MpcConfig, VisualMpc};
use flexiscope_core::qp::QpProblem;
use flexiscope_core::ActuatorState;
use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A moderately bent dual-segment configuration.
pub fn bent_config() -> ConfigState {
    ConfigState {
        z_b: 12.0,
        theta_s: 0.6,
        phi_s: 0.9,
        z_e: 18.0,
        theta_e: 0.4,
        phi_e: -1.3,
    }
}

/// A dense box-constrained QP of the size produced by one controller tick.
pub fn mpc_sized_qp() -> QpProblem {
    let n = 81; // 8 increments x 10 control steps, plus one slack variable
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = QpProblem::unconstrained(h, g);
    p.lb = DVector::from_element(n, -0.5);
    p.ub = DVector::from_element(n, 0.5);
    p
}

/// A ready-to-step controller plus the per-tick inputs it needs.
pub struct TickFixture {
    pub controller: VisualMpc,
    pub measured: PixelFeature,
    pub goal: PixelFeature,
    pub j_analytic: SMatrix<f64, 3, 8>,
    pub p_now: Vector3<f64>,
}

pub fn tick_fixture() -> TickFixture {
    let geom = RobotGeometry::default();
    let intr = CameraIntrinsics::default();
    let q0: ActuatorState = geom.straight_actuator(10.0, 5.0);
    let j_analytic = actuator_to_camera_jacobian(&q0, &geom).unwrap();
    let phi = actuator_to_config(&q0, &geom).unwrap();
    let p_now = camera_pose(&phi, &geom).translation;
    let measured = PixelFeature::new(420.0, 300.0);
    let controller = VisualMpc::new(
        MpcConfig::default(),
        intr,
        q0,
        JacobianEstimate::from_matrix(j_analytic),
        measured,
    )
    .unwrap();
    TickFixture {
        controller,
        measured,
        goal: PixelFeature::new(355.0, 355.0),
        j_analytic,
        p_now,
    }
}
