//! Hybrid Jacobian estimation: offline ± perturbation initialization against
//! a tip-position sensor, then online convex blending of the analytic model
//! with the previous estimate, weighted by the current pixel error.

use nalgebra::{SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PixelFeature};
use crate::kinematics::ActuatorState;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("perturbation entry {index} is zero")]
    ZeroPerturbation { index: usize },
    #[error("sensor probe failed: {0}")]
    ProbeFailed(String),
    #[error("non-finite analytic Jacobian")]
    NonFiniteJacobian,
}

/// Sensor-probe interface: reports the camera-point position for a commanded
/// actuator state. Backed by the simulated electromagnetic tip sensor.
pub trait ProbeSensor {
    fn camera_position_at(&mut self, q: &ActuatorState) -> Result<Vector3<f64>, String>;
}

/// The blended 3x8 actuator-to-camera-position Jacobian with its update
/// bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub j_hat: SMatrix<f64, 3, 8>,
    pub step_index: usize,
    /// Last blending weight, in (0, 1].
    pub last_omega: f64,
}

impl JacobianEstimate {
    pub fn from_matrix(j: SMatrix<f64, 3, 8>) -> Self {
        Self {
            j_hat: j,
            step_index: 0,
            last_omega: 1.0,
        }
    }
}

/// One offline probe pass: the applied perturbation and the measured camera
/// displacement per actuator coordinate.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub dq: SVector<f64, 8>,
    pub dp_columns: [Vector3<f64>; 8],
}

fn probe_pass(
    probe: &mut dyn ProbeSensor,
    q0: &ActuatorState,
    dq: &SVector<f64, 8>,
) -> Result<ProbeResult, EstimatorError> {
    let p0 = probe
        .camera_position_at(q0)
        .map_err(EstimatorError::ProbeFailed)?;
    let base = q0.to_vector();
    let mut dp_columns = [Vector3::zeros(); 8];
    for i in 0..8 {
        let mut qi = base;
        qi[i] += dq[i];
        let p = probe
            .camera_position_at(&ActuatorState::from_vector(&qi))
            .map_err(EstimatorError::ProbeFailed)?;
        dp_columns[i] = p - p0;
    }
    Ok(ProbeResult {
        dq: *dq,
        dp_columns,
    })
}

fn jacobian_from_probe(probe: &ProbeResult) -> SMatrix<f64, 3, 8> {
    let mut j = SMatrix::<f64, 3, 8>::zeros();
    for i in 0..8 {
        j.set_column(i, &(probe.dp_columns[i] / probe.dq[i]));
    }
    j
}

/// Offline initialization: probe each actuator coordinate with +dq and -dq,
/// build the forward- and backward-difference Jacobians and average them.
pub fn initialize_offline(
    probe: &mut dyn ProbeSensor,
    q0: &ActuatorState,
    dq_plus: &SVector<f64, 8>,
) -> Result<JacobianEstimate, EstimatorError> {
    for (i, &d) in dq_plus.iter().enumerate() {
        if d == 0.0 || !d.is_finite() {
            return Err(EstimatorError::ZeroPerturbation { index: i });
        }
    }
    let plus = probe_pass(probe, q0, dq_plus)?;
    let minus = probe_pass(probe, q0, &(-dq_plus))?;
    let j = 0.5 * (jacobian_from_probe(&plus) + jacobian_from_probe(&minus));
    Ok(JacobianEstimate::from_matrix(j))
}

/// Blending weight `omega = 1 / (1 + eps)` where `eps` is the pixel error
/// norm, optionally normalized by the image dimensions.
pub fn weighting_factor(
    feature: &PixelFeature,
    goal: &PixelFeature,
    intr: &CameraIntrinsics,
    normalize: bool,
) -> f64 {
    let (du, dv) = if normalize {
        (
            (feature.u - goal.u) / intr.width,
            (feature.v - goal.v) / intr.height,
        )
    } else {
        (feature.u - goal.u, feature.v - goal.v)
    };
    let eps = (du * du + dv * dv).sqrt();
    1.0 / (1.0 + eps)
}

/// Online update: convex blend of the current analytic Jacobian with the
/// previous estimate. Zero pixel error keeps the previous estimate intact.
pub fn online_update(
    j_analytic: &SMatrix<f64, 3, 8>,
    prev: &JacobianEstimate,
    feature: &PixelFeature,
    goal: &PixelFeature,
    intr: &CameraIntrinsics,
    normalize: bool,
) -> Result<JacobianEstimate, EstimatorError> {
    if !j_analytic.iter().all(|x| x.is_finite()) {
        return Err(EstimatorError::NonFiniteJacobian);
    }
    let omega = weighting_factor(feature, goal, intr, normalize);
    Ok(JacobianEstimate {
        j_hat: (1.0 - omega) * j_analytic + omega * prev.j_hat,
        step_index: prev.step_index + 1,
        last_omega: omega,
    })
}
