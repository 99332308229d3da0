//! Piecewise-constant-curvature geometry of the dual-segment robot.
//!
//! Each flexible segment bends as a circular arc parameterized by a bending
//! angle `theta` and a bending-plane angle `phi`. The actuator coordinates are
//! the insertion depth `z_b`, three outer-sheath cable lengths, the inner
//! extension `z_e` and three inner-endoscope cable lengths. All lengths are
//! millimeters, all angles radians.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this bending angle the arc blocks switch to their series limits and
/// the bending-plane angle is treated as undefined (canonicalized to 0).
pub const THETA_EPS: f64 = 1e-6;

/// Below this bending angle the cable-to-angle map is treated as
/// non-differentiable: Eq-style square-root curvature has a kink at the
/// straight configuration, so finite differences fall back to one-sided
/// positive steps and the result is flagged.
pub const THETA_DEGENERATE: f64 = 1e-4;

const FD_STEP: f64 = 1e-6;
const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("cable length must be strictly positive, got {0}")]
    NonPositiveCable(f64),
    #[error("bending angle {theta} outside [0, {max}]")]
    ThetaOutOfRange { theta: f64, max: f64 },
    #[error("damping must be positive, got {0}")]
    NonPositiveDamping(f64),
}

/// Actuator-space state: the control plant's native coordinates.
///
/// Vector order is `(z_b, l_s1, l_s2, l_s3, z_e, l_e1, l_e2, l_e3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Insertion depth of the whole endoscope (mm).
    pub z_b: f64,
    /// Outer-sheath cable lengths (mm).
    pub l_s: [f64; 3],
    /// Inner-endoscope extension (mm).
    pub z_e: f64,
    /// Inner-endoscope cable lengths (mm).
    pub l_e: [f64; 3],
}

impl ActuatorState {
    pub fn to_vector(&self) -> SVector<f64, 8> {
        SVector::<f64, 8>::from([
            self.z_b, self.l_s[0], self.l_s[1], self.l_s[2], self.z_e, self.l_e[0], self.l_e[1],
            self.l_e[2],
        ])
    }

    pub fn from_vector(v: &SVector<f64, 8>) -> Self {
        Self {
            z_b: v[0],
            l_s: [v[1], v[2], v[3]],
            z_e: v[4],
            l_e: [v[5], v[6], v[7]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Configuration-space state: the geometric coordinates.
///
/// Vector order is `(z_b, theta_s, phi_s, z_e, theta_e, phi_e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigState {
    pub z_b: f64,
    /// Outer-sheath bending angle (rad, >= 0).
    pub theta_s: f64,
    /// Outer-sheath bending-plane angle (rad, wrapped to (-pi, pi]).
    pub phi_s: f64,
    pub z_e: f64,
    pub theta_e: f64,
    pub phi_e: f64,
}

impl ConfigState {
    pub fn straight(z_b: f64, z_e: f64) -> Self {
        Self {
            z_b,
            theta_s: 0.0,
            phi_s: 0.0,
            z_e,
            theta_e: 0.0,
            phi_e: 0.0,
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from([
            self.z_b,
            self.theta_s,
            self.phi_s,
            self.z_e,
            self.theta_e,
            self.phi_e,
        ])
    }

    /// Rebuild from a raw 6-vector without canonicalization. Used by
    /// finite-difference code that needs to evaluate at perturbed points.
    pub fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self {
            z_b: v[0],
            theta_s: v[1],
            phi_s: v[2],
            z_e: v[3],
            theta_e: v[4],
            phi_e: v[5],
        }
    }

    /// Flip negative bending angles into the opposite bending plane and wrap
    /// plane angles to (-pi, pi]; a straight segment gets phi = 0.
    pub fn canonicalized(&self) -> Self {
        let (theta_s, mut phi_s) = canonical_segment(self.theta_s, self.phi_s);
        let (theta_e, mut phi_e) = canonical_segment(self.theta_e, self.phi_e);
        if theta_s < THETA_EPS {
            phi_s = 0.0;
        }
        if theta_e < THETA_EPS {
            phi_e = 0.0;
        }
        Self {
            z_b: self.z_b,
            theta_s,
            phi_s,
            z_e: self.z_e,
            theta_e,
            phi_e,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

fn canonical_segment(theta: f64, phi: f64) -> (f64, f64) {
    if theta < 0.0 {
        (-theta, wrap_angle(phi + std::f64::consts::PI))
    } else {
        (theta, wrap_angle(phi))
    }
}

/// Wrap to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a.rem_euclid(two_pi);
    if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

/// Fixed geometric parameters and joint limits of the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotGeometry {
    /// Outer-sheath cable pitch-circle radius (mm).
    pub rho_s: f64,
    /// Inner-endoscope cable pitch-circle radius (mm).
    pub rho_e: f64,
    /// Outer-sheath bending-section length (mm).
    pub z_s: f64,
    /// Camera offset from the tip along the tip frame's -y axis (mm).
    pub d: f64,
    /// Outer cable length in the straight configuration (mm).
    pub cable_base_s: f64,
    /// Inner cable length in the straight configuration (mm).
    pub cable_base_e: f64,
    /// Maximum bending angle per segment (rad).
    pub theta_max: f64,
    pub z_b_range: [f64; 2],
    pub z_e_range: [f64; 2],
    pub cable_range_s: [f64; 2],
    pub cable_range_e: [f64; 2],
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            rho_s: 1.8,
            rho_e: 1.0,
            z_s: 20.0,
            d: 1.0,
            cable_base_s: 30.0,
            cable_base_e: 30.0,
            theta_max: 1.5,
            z_b_range: [0.0, 100.0],
            z_e_range: [0.0, 40.0],
            cable_range_s: [20.0, 40.0],
            cable_range_e: [20.0, 40.0],
        }
    }
}

impl RobotGeometry {
    pub fn q_min(&self) -> SVector<f64, 8> {
        SVector::<f64, 8>::from([
            self.z_b_range[0],
            self.cable_range_s[0],
            self.cable_range_s[0],
            self.cable_range_s[0],
            self.z_e_range[0],
            self.cable_range_e[0],
            self.cable_range_e[0],
            self.cable_range_e[0],
        ])
    }

    pub fn q_max(&self) -> SVector<f64, 8> {
        SVector::<f64, 8>::from([
            self.z_b_range[1],
            self.cable_range_s[1],
            self.cable_range_s[1],
            self.cable_range_s[1],
            self.z_e_range[1],
            self.cable_range_e[1],
            self.cable_range_e[1],
            self.cable_range_e[1],
        ])
    }

    /// Straight configuration with all cables at their base lengths.
    pub fn straight_actuator(&self, z_b: f64, z_e: f64) -> ActuatorState {
        ActuatorState {
            z_b,
            l_s: [self.cable_base_s; 3],
            z_e,
            l_e: [self.cable_base_e; 3],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho_s > 0.0 && self.rho_e > 0.0 && self.z_s > 0.0 && self.d >= 0.0) {
            return Err("rho_s, rho_e, z_s must be positive and d non-negative".into());
        }
        if self.theta_max <= 0.0 {
            return Err("theta_max must be positive".into());
        }
        for (name, r) in [
            ("z_b_range", self.z_b_range),
            ("z_e_range", self.z_e_range),
            ("cable_range_s", self.cable_range_s),
            ("cable_range_e", self.cable_range_e),
        ] {
            if r[0] > r[1] {
                return Err(format!("{name}: min {} > max {}", r[0], r[1]));
            }
        }
        Ok(())
    }
}

/// Rigid transform: rotation + translation, kept factored instead of as a raw
/// 4x4 so orthonormality is preserved by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation_z(a: f64) -> Self {
        Self {
            rotation: Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation_y(a: f64) -> Self {
        Self {
            rotation: Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos()),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation_xyz(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.translation + self.rotation * rhs.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Map a world-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Max deviation of R^T R from identity plus determinant error.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        e.iter().fold(det_err, |m, x| m.max(x.abs()))
    }
}

fn segment_angles(l: &[f64; 3], rho: f64) -> (f64, f64) {
    let (l1, l2, l3) = (l[0], l[1], l[2]);
    let m = l1 * l1 + l2 * l2 + l3 * l3 - l1 * l2 - l2 * l3 - l1 * l3;
    let theta = 2.0 * m.max(0.0).sqrt() / (3.0 * rho);
    let phi = if theta < THETA_EPS {
        0.0
    } else {
        f64::atan2(l1 + l3 - 2.0 * l2, SQRT3 * (l3 - l1))
    };
    (theta, phi)
}

/// Map actuator coordinates to configuration coordinates.
///
/// A straight segment (equal cables) gets `theta = 0` and `phi` canonicalized
/// to 0.
pub fn actuator_to_config(
    q: &ActuatorState,
    geom: &RobotGeometry,
) -> Result<ConfigState, KinematicsError> {
    if !q.is_finite() {
        return Err(KinematicsError::NonFinite("actuator state"));
    }
    for &l in q.l_s.iter().chain(q.l_e.iter()) {
        if l <= 0.0 {
            return Err(KinematicsError::NonPositiveCable(l));
        }
    }
    let (theta_s, phi_s) = segment_angles(&q.l_s, geom.rho_s);
    let (theta_e, phi_e) = segment_angles(&q.l_e, geom.rho_e);
    Ok(ConfigState {
        z_b: q.z_b,
        theta_s,
        phi_s,
        z_e: q.z_e,
        theta_e,
        phi_e,
    })
}

/// Cable angular positions around the pitch circle. The pi/6 phase makes the
/// forward curvature formulas recover exactly the `phi` that was commanded;
/// see the round-trip tests.
fn cable_phase(phi: f64, m: usize) -> f64 {
    phi + std::f64::consts::FRAC_PI_6 - (m as f64) * 2.0 * std::f64::consts::PI / 3.0
}

fn segment_cables(base: f64, rho: f64, theta: f64, phi: f64) -> [f64; 3] {
    [
        base - rho * theta * cable_phase(phi, 0).cos(),
        base - rho * theta * cable_phase(phi, 1).cos(),
        base - rho * theta * cable_phase(phi, 2).cos(),
    ]
}

/// Inverse cable map: configuration coordinates to actuator coordinates.
pub fn config_to_actuator(
    phi: &ConfigState,
    geom: &RobotGeometry,
) -> Result<ActuatorState, KinematicsError> {
    if !phi.is_finite() {
        return Err(KinematicsError::NonFinite("config state"));
    }
    for theta in [phi.theta_s, phi.theta_e] {
        if !(0.0..=geom.theta_max).contains(&theta) {
            return Err(KinematicsError::ThetaOutOfRange {
                theta,
                max: geom.theta_max,
            });
        }
    }
    Ok(ActuatorState {
        z_b: phi.z_b,
        l_s: segment_cables(geom.cable_base_s, geom.rho_s, phi.theta_s, phi.phi_s),
        z_e: phi.z_e,
        l_e: segment_cables(geom.cable_base_e, geom.rho_e, phi.theta_e, phi.phi_e),
    })
}

/// Constant-curvature arc block: translate-rotate-translate along the local
/// x axis, with series limits below [`THETA_EPS`] so the straight
/// configuration is well defined and the map stays continuous.
fn arc_block(len: f64, theta: f64) -> Pose {
    let (tx, tz) = if theta.abs() < THETA_EPS {
        (len * theta / 2.0, len)
    } else {
        (len * (1.0 - theta.cos()) / theta, len * theta.sin() / theta)
    };
    Pose {
        rotation: Pose::rotation_y(theta).rotation,
        translation: Vector3::new(tx, 0.0, tz),
    }
}

/// Base-to-tip transform of the dual-segment robot.
pub fn forward_kinematics(phi: &ConfigState, geom: &RobotGeometry) -> Pose {
    Pose::translation_xyz(0.0, 0.0, phi.z_b)
        .compose(&Pose::rotation_z(phi.phi_s))
        .compose(&arc_block(geom.z_s, phi.theta_s))
        .compose(&Pose::rotation_z(phi.phi_e))
        .compose(&arc_block(phi.z_e, phi.theta_e))
}

/// Base-to-camera transform: the tip pose, de-rotated by the accumulated
/// bending-plane angles, offset by `d` along -y.
pub fn camera_pose(phi: &ConfigState, geom: &RobotGeometry) -> Pose {
    forward_kinematics(phi, geom)
        .compose(&Pose::rotation_z(-phi.phi_s - phi.phi_e))
        .compose(&Pose::translation_xyz(0.0, -geom.d, 0.0))
}

/// Jacobian of the camera position with respect to the configuration vector,
/// by central finite differences. The `phi_s` / `phi_e` columns are zeroed
/// when the corresponding bending angle is below [`THETA_EPS`] (the bending
/// plane is undefined for a straight segment).
pub fn robot_jacobian(phi: &ConfigState, geom: &RobotGeometry) -> SMatrix<f64, 3, 6> {
    let x0 = phi.to_vector();
    let mut j = SMatrix::<f64, 3, 6>::zeros();
    for col in 0..6 {
        if (col == 2 && phi.theta_s < THETA_EPS) || (col == 5 && phi.theta_e < THETA_EPS) {
            continue;
        }
        let mut xp = x0;
        let mut xm = x0;
        xp[col] += FD_STEP;
        xm[col] -= FD_STEP;
        let pp = camera_pose(&ConfigState::from_vector(&xp), geom).translation;
        let pm = camera_pose(&ConfigState::from_vector(&xm), geom).translation;
        j.set_column(col, &((pp - pm) / (2.0 * FD_STEP)));
    }
    j
}

/// Jacobian of [`actuator_to_config`] with a degeneracy flag per segment.
#[derive(Debug, Clone, Copy)]
pub struct ActuatorJacobian {
    pub matrix: SMatrix<f64, 6, 8>,
    /// Outer segment near straight: cable columns are one-sided limits.
    pub degenerate_s: bool,
    /// Inner segment near straight: cable columns are one-sided limits.
    pub degenerate_e: bool,
}

fn unwrap_near(x: f64, reference: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x;
    while y - reference > std::f64::consts::PI {
        y -= two_pi;
    }
    while reference - y > std::f64::consts::PI {
        y += two_pi;
    }
    y
}

/// Jacobian of the actuator-to-configuration map, by central finite
/// differences (one-sided positive steps and a degenerate flag near the
/// straight configuration, where the curvature square root has a kink).
pub fn actuator_jacobian(
    q: &ActuatorState,
    geom: &RobotGeometry,
) -> Result<ActuatorJacobian, KinematicsError> {
    let phi0 = actuator_to_config(q, geom)?;
    let degenerate_s = phi0.theta_s < THETA_DEGENERATE;
    let degenerate_e = phi0.theta_e < THETA_DEGENERATE;
    let q0 = q.to_vector();
    let f0 = phi0.to_vector();
    let mut j = SMatrix::<f64, 6, 8>::zeros();
    // Pass-through joints.
    j[(0, 0)] = 1.0;
    j[(3, 4)] = 1.0;
    for col in [1usize, 2, 3, 5, 6, 7] {
        let one_sided = if col < 4 { degenerate_s } else { degenerate_e };
        let mut qp = q0;
        qp[col] += FD_STEP;
        let fp = eval_config(&qp, geom, &f0)?;
        let column = if one_sided {
            (fp - f0) / FD_STEP
        } else {
            let mut qm = q0;
            qm[col] -= FD_STEP;
            let fm = eval_config(&qm, geom, &f0)?;
            (fp - fm) / (2.0 * FD_STEP)
        };
        j.set_column(col, &column);
    }
    Ok(ActuatorJacobian {
        matrix: j,
        degenerate_s,
        degenerate_e,
    })
}

fn eval_config(
    qv: &SVector<f64, 8>,
    geom: &RobotGeometry,
    reference: &SVector<f64, 6>,
) -> Result<SVector<f64, 6>, KinematicsError> {
    let c = actuator_to_config(&ActuatorState::from_vector(qv), geom)?;
    let mut v = c.to_vector();
    // Keep phi on the same branch as the reference point so differences stay
    // meaningful across the atan2 wrap.
    v[2] = unwrap_near(v[2], reference[2]);
    v[5] = unwrap_near(v[5], reference[5]);
    Ok(v)
}

/// Composite 3x8 analytic Jacobian from actuator space to camera position.
/// Cable columns of a degenerate (straight) segment are zeroed.
pub fn actuator_to_camera_jacobian(
    q: &ActuatorState,
    geom: &RobotGeometry,
) -> Result<SMatrix<f64, 3, 8>, KinematicsError> {
    let phi = actuator_to_config(q, geom)?;
    let ja = actuator_jacobian(q, geom)?;
    let jr = robot_jacobian(&phi, geom);
    let mut j = jr * ja.matrix;
    if ja.degenerate_s {
        for col in 1..4 {
            j.set_column(col, &Vector3::zeros());
        }
    }
    if ja.degenerate_e {
        for col in 5..8 {
            j.set_column(col, &Vector3::zeros());
        }
    }
    Ok(j)
}

/// One damped-least-squares step toward a camera-position goal:
/// `dphi = J^T (J J^T + sigma I)^-1 (p_goal - p)`.
pub fn dls_ik_step(
    phi: &ConfigState,
    p_goal: &Vector3<f64>,
    sigma: f64,
    geom: &RobotGeometry,
) -> Result<SVector<f64, 6>, KinematicsError> {
    if sigma <= 0.0 {
        return Err(KinematicsError::NonPositiveDamping(sigma));
    }
    if !phi.is_finite() || !p_goal.iter().all(|x| x.is_finite()) {
        return Err(KinematicsError::NonFinite("dls_ik_step input"));
    }
    let j = robot_jacobian(phi, geom);
    let p = camera_pose(phi, geom).translation;
    let a = j * j.transpose() + Matrix3::identity() * sigma;
    // sigma > 0 makes A symmetric positive definite.
    let chol = a.cholesky().expect("JJ^T + sigma I is SPD");
    let y = chol.solve(&(p_goal - p));
    Ok(j.transpose() * y)
}

/// Iterate [`dls_ik_step`] with step clamping until the camera position is
/// within `tol` of the goal or `max_iter` steps elapse. Returns the final
/// configuration and the remaining error norm.
pub fn solve_ik(
    phi0: &ConfigState,
    p_goal: &Vector3<f64>,
    sigma: f64,
    geom: &RobotGeometry,
    tol: f64,
    max_iter: usize,
) -> Result<(ConfigState, f64), KinematicsError> {
    let max_step = 0.2;
    let mut x = phi0.to_vector();
    let mut err;
    for _ in 0..max_iter {
        let phi = ConfigState::from_vector(&x);
        err = (p_goal - camera_pose(&phi, geom).translation).norm();
        if err < tol {
            break;
        }
        let mut step = dls_ik_step(&phi, p_goal, sigma, geom)?;
        let n = step.norm();
        if n > max_step {
            step *= max_step / n;
        }
        x += step;
    }
    let phi = ConfigState::from_vector(&x).canonicalized();
    err = (p_goal - camera_pose(&phi, geom).translation).norm();
    Ok((phi, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> RobotGeometry {
        RobotGeometry::default()
    }

    /// Direct evaluation of the curvature formulas, written independently of
    /// the implementation path.
    fn angles_oracle(l1: f64, l2: f64, l3: f64, rho: f64) -> (f64, f64) {
        let sum_sq = l1.powi(2) + l2.powi(2) + l3.powi(2);
        let cross = l1 * l2 + l2 * l3 + l1 * l3;
        let theta = 2.0 / (3.0 * rho) * (sum_sq - cross).sqrt();
        let phi = (l1 + l3 - 2.0 * l2).atan2(3.0f64.sqrt() * (l3 - l1));
        (theta, phi)
    }

    fn random_interior_config(rng: &mut impl Rng) -> ConfigState {
        ConfigState {
            z_b: rng.random_range(5.0..60.0),
            theta_s: rng.random_range(0.1..1.2),
            phi_s: rng.random_range(-3.0..3.0),
            z_e: rng.random_range(1.0..30.0),
            theta_e: rng.random_range(0.1..1.2),
            phi_e: rng.random_range(-3.0..3.0),
        }
    }

    #[test]
    fn equal_cables_give_zero_curvature() {
        let q = ActuatorState {
            z_b: 10.0,
            l_s: [30.0; 3],
            z_e: 5.0,
            l_e: [30.0; 3],
        };
        let c = actuator_to_config(&q, &geom()).unwrap();
        assert_eq!(c.theta_s, 0.0);
        assert_eq!(c.phi_s, 0.0);
        assert_eq!(c.z_b, 10.0);
        assert_eq!(c.z_e, 5.0);
    }

    #[test]
    fn symmetric_cables_give_quarter_turn_plane() {
        let q = ActuatorState {
            z_b: 0.0,
            l_s: [30.0, 29.0, 30.0],
            z_e: 0.0,
            l_e: [30.0; 3],
        };
        let mut g = geom();
        g.rho_s = 1.5;
        let c = actuator_to_config(&q, &g).unwrap();
        assert_relative_eq!(c.phi_s, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn generic_cables_match_direct_formula_oracle() {
        let mut g = geom();
        g.rho_s = 1.5;
        let q = ActuatorState {
            z_b: 0.0,
            l_s: [29.0, 30.0, 31.0],
            z_e: 0.0,
            l_e: [30.0; 3],
        };
        let c = actuator_to_config(&q, &g).unwrap();
        let (theta, phi) = angles_oracle(29.0, 30.0, 31.0, 1.5);
        assert_relative_eq!(c.theta_s, theta, epsilon = 1e-12);
        assert_relative_eq!(c.phi_s, phi, epsilon = 1e-12);
    }

    #[test]
    fn nonfinite_input_rejected() {
        let q = ActuatorState {
            z_b: f64::NAN,
            l_s: [30.0; 3],
            z_e: 0.0,
            l_e: [30.0; 3],
        };
        assert!(matches!(
            actuator_to_config(&q, &geom()),
            Err(KinematicsError::NonFinite(_))
        ));
    }

    #[test]
    fn straight_config_gives_base_cables() {
        let c = ConfigState::straight(10.0, 5.0);
        let q = config_to_actuator(&c, &geom()).unwrap();
        assert_eq!(q.l_s, [30.0; 3]);
        assert_eq!(q.l_e, [30.0; 3]);
    }

    #[test]
    fn cable_offsets_sum_to_zero() {
        let c = ConfigState {
            z_b: 0.0,
            theta_s: 0.5,
            phi_s: 0.0,
            z_e: 0.0,
            theta_e: 0.0,
            phi_e: 0.0,
        };
        let mut g = geom();
        g.rho_s = 1.5;
        let q = config_to_actuator(&c, &g).unwrap();
        let sum: f64 = q.l_s.iter().map(|l| l - g.cable_base_s).sum();
        assert!(sum.abs() < 1e-12, "offsets sum {sum}");
    }

    #[test]
    fn theta_out_of_bounds_rejected() {
        let c = ConfigState {
            theta_s: 2.0,
            ..ConfigState::straight(0.0, 0.0)
        };
        assert!(matches!(
            config_to_actuator(&c, &geom()),
            Err(KinematicsError::ThetaOutOfRange { .. })
        ));
    }

    #[test]
    fn actuator_config_round_trip() {
        let g = geom();
        let c = ConfigState {
            z_b: 12.0,
            theta_s: 0.5,
            phi_s: 1.0,
            z_e: 7.0,
            theta_e: 0.3,
            phi_e: -2.2,
        };
        let back = actuator_to_config(&config_to_actuator(&c, &g).unwrap(), &g).unwrap();
        let diff = (back.to_vector() - c.to_vector()).amax();
        assert!(diff < 1e-9, "round trip diff {diff}");
    }

    #[test]
    fn round_trip_random_configs() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let c = random_interior_config(&mut rng);
            let back = actuator_to_config(&config_to_actuator(&c, &g).unwrap(), &g).unwrap();
            let diff = (back.to_vector() - c.to_vector()).amax();
            assert!(diff < 1e-9, "round trip diff {diff} at {c:?}");
        }
    }

    #[test]
    fn straight_robot_stacks_lengths() {
        let c = ConfigState::straight(50.0, 10.0);
        let p = forward_kinematics(&c, &geom());
        assert!((p.translation - Vector3::new(0.0, 0.0, 80.0)).amax() < 1e-12);
        assert!((p.rotation - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn straight_tip_z_is_exact_sum() {
        let g = geom();
        for (z_b, z_e) in [(0.0, 0.0), (13.7, 4.2), (99.0, 40.0)] {
            let c = ConfigState::straight(z_b, z_e);
            let p = forward_kinematics(&c, &g);
            let expect = z_b + g.z_s + z_e;
            assert!((p.translation.z - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn quarter_circle_arc_position() {
        let mut g = geom();
        g.z_s = 20.0;
        let c = ConfigState {
            z_b: 0.0,
            theta_s: std::f64::consts::FRAC_PI_2,
            phi_s: 0.0,
            z_e: 0.0,
            theta_e: 0.0,
            phi_e: 0.0,
        };
        let p = forward_kinematics(&c, &g);
        let r = 2.0 * 20.0 / std::f64::consts::PI;
        assert_relative_eq!(p.translation.x, r, epsilon = 1e-12);
        assert_relative_eq!(p.translation.z, r, epsilon = 1e-12);
        assert_relative_eq!(p.translation.y, 0.0, epsilon = 1e-12);
    }

    /// Independent oracle: build the transform chain as raw homogeneous 4x4
    /// products.
    fn fk_matrix_oracle(c: &ConfigState, g: &RobotGeometry) -> Matrix4<f64> {
        fn tz(v: f64) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m[(2, 3)] = v;
            m
        }
        fn tx(v: f64) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m[(0, 3)] = v;
            m
        }
        fn ty(v: f64) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m[(1, 3)] = v;
            m
        }
        fn rz(a: f64) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m[(0, 0)] = a.cos();
            m[(0, 1)] = -a.sin();
            m[(1, 0)] = a.sin();
            m[(1, 1)] = a.cos();
            m
        }
        fn ry(a: f64) -> Matrix4<f64> {
            let mut m = Matrix4::identity();
            m[(0, 0)] = a.cos();
            m[(0, 2)] = a.sin();
            m[(2, 0)] = -a.sin();
            m[(2, 2)] = a.cos();
            m
        }
        let arc = |len: f64, theta: f64| {
            let r = len / theta;
            tx(r) * ry(theta) * tx(-r)
        };
        tz(c.z_b)
            * rz(c.phi_s)
            * arc(g.z_s, c.theta_s)
            * rz(c.phi_e)
            * arc(c.z_e, c.theta_e)
            * rz(-c.phi_s - c.phi_e)
            * ty(-g.d)
    }

    #[test]
    fn camera_pose_matches_matrix_product_oracle() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c = random_interior_config(&mut rng);
            let ours = camera_pose(&c, &g).to_homogeneous();
            let oracle = fk_matrix_oracle(&c, &g);
            assert!((ours - oracle).amax() < 1e-9, "config {c:?}");
        }
    }

    #[test]
    fn camera_pose_specific_config_matches_oracle() {
        let g = geom();
        let c = ConfigState {
            z_b: 10.0,
            theta_s: 0.4,
            phi_s: 0.3,
            z_e: 5.0,
            theta_e: 0.2,
            phi_e: -0.5,
        };
        let ours = camera_pose(&c, &g).to_homogeneous();
        assert!((ours - fk_matrix_oracle(&c, &g)).amax() < 1e-9);
    }

    #[test]
    fn straight_camera_offset_along_minus_y() {
        let g = geom();
        let c = ConfigState::straight(10.0, 5.0);
        let p = camera_pose(&c, &g);
        let expect = Vector3::new(0.0, -g.d, 10.0 + g.z_s + 5.0);
        assert!((p.translation - expect).amax() < 1e-12);
    }

    #[test]
    fn zero_offset_camera_equals_tip() {
        let mut g = geom();
        g.d = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = random_interior_config(&mut rng);
            let tip = forward_kinematics(&c, &g).translation;
            let cam = camera_pose(&c, &g).translation;
            assert!((tip - cam).amax() < 1e-12);
        }
    }

    #[test]
    fn continuity_at_straight_limit() {
        let mut g = geom();
        g.z_s = 10.0;
        let near = ConfigState {
            theta_s: 1e-10,
            ..ConfigState::straight(0.0, 0.0)
        };
        let exact = ConfigState::straight(0.0, 0.0);
        let diff = (forward_kinematics(&near, &g).translation
            - forward_kinematics(&exact, &g).translation)
            .norm();
        assert!(diff < 1e-9, "gap {diff}");
    }

    #[test]
    fn continuity_across_series_switch() {
        // straddle the series/exact switch with a vanishing theta gap
        let below = ConfigState {
            theta_s: THETA_EPS - 1e-12,
            ..ConfigState::straight(10.0, 5.0)
        };
        let above = ConfigState {
            theta_s: THETA_EPS + 1e-12,
            ..ConfigState::straight(10.0, 5.0)
        };
        let gap = (forward_kinematics(&below, &geom()).translation
            - forward_kinematics(&above, &geom()).translation)
            .norm();
        assert!(gap < 1e-9, "gap {gap}");
    }

    #[test]
    fn poses_stay_orthonormal() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let c = random_interior_config(&mut rng);
            assert!(forward_kinematics(&c, &g).orthonormality_error() < 1e-9);
            assert!(camera_pose(&c, &g).orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn straight_jacobian_insertion_columns() {
        let g = geom();
        let c = ConfigState::straight(10.0, 5.0);
        let j = robot_jacobian(&c, &g);
        let ez = Vector3::new(0.0, 0.0, 1.0);
        // central differences with step 1e-6 leave a few 1e-9 of rounding
        assert!((j.column(0) - ez).amax() < 1e-8);
        assert!((j.column(3) - ez).amax() < 1e-8);
        // phi columns zeroed at the singular configuration
        assert_eq!(j.column(2).amax(), 0.0);
        assert_eq!(j.column(5).amax(), 0.0);
    }

    /// Fourth-order Richardson-extrapolated central difference.
    fn richardson<F: Fn(&SVector<f64, 6>) -> Vector3<f64>>(
        f: F,
        x: &SVector<f64, 6>,
        col: usize,
        h: f64,
    ) -> Vector3<f64> {
        let eval = |delta: f64| {
            let mut xi = *x;
            xi[col] += delta;
            f(&xi)
        };
        (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h)
    }

    #[test]
    fn robot_jacobian_matches_richardson() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let c = random_interior_config(&mut rng);
            let j = robot_jacobian(&c, &g);
            for col in 0..6 {
                let oracle = richardson(
                    |x| camera_pose(&ConfigState::from_vector(x), &g).translation,
                    &c.to_vector(),
                    col,
                    1e-4,
                );
                let denom = oracle.norm().max(1.0);
                let diff = (Vector3::from(j.column(col)) - oracle).norm();
                assert!(diff / denom < 1e-5, "col {col} rel {}", diff / denom);
            }
        }
    }

    #[test]
    fn actuator_jacobian_pass_through_rows() {
        let g = geom();
        let c = ConfigState {
            z_b: 10.0,
            theta_s: 0.4,
            phi_s: 0.2,
            z_e: 5.0,
            theta_e: 0.3,
            phi_e: 0.7,
        };
        let q = config_to_actuator(&c, &g).unwrap();
        let ja = actuator_jacobian(&q, &g).unwrap();
        for col in 0..8 {
            let expect = if col == 0 { 1.0 } else { 0.0 };
            assert!((ja.matrix[(0, col)] - expect).abs() < 1e-9);
            let expect_ze = if col == 4 { 1.0 } else { 0.0 };
            assert!((ja.matrix[(3, col)] - expect_ze).abs() < 1e-9);
        }
        assert!(!ja.degenerate_s);
        assert!(!ja.degenerate_e);
    }

    #[test]
    fn straight_actuator_jacobian_is_flagged() {
        let g = geom();
        let q = g.straight_actuator(10.0, 0.0);
        let ja = actuator_jacobian(&q, &g).unwrap();
        assert!(ja.degenerate_s);
        assert!(ja.degenerate_e);
        assert!(ja.matrix.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn actuator_jacobian_matches_richardson() {
        let g = geom();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let c = random_interior_config(&mut rng);
            let q = config_to_actuator(&c, &g).unwrap();
            let ja = actuator_jacobian(&q, &g).unwrap();
            let q0 = q.to_vector();
            let f0 = actuator_to_config(&q, &g).unwrap().to_vector();
            for col in 1..8 {
                if col == 4 {
                    continue;
                }
                let h = 1e-4;
                let eval = |delta: f64| {
                    let mut qi = q0;
                    qi[col] += delta;
                    eval_config(&qi, &g, &f0).unwrap()
                };
                let oracle =
                    (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h);
                let diff = (SVector::<f64, 6>::from(ja.matrix.column(col)) - oracle).norm();
                let denom = oracle.norm().max(1.0);
                assert!(diff / denom < 1e-4, "col {col} rel {}", diff / denom);
            }
        }
    }

    #[test]
    fn dls_zero_error_gives_zero_step() {
        let g = geom();
        let c = ConfigState {
            z_b: 10.0,
            theta_s: 0.4,
            phi_s: 0.2,
            z_e: 5.0,
            theta_e: 0.3,
            phi_e: 0.7,
        };
        let p = camera_pose(&c, &g).translation;
        let step = dls_ik_step(&c, &p, 0.01, &g).unwrap();
        assert!(step.amax() < 1e-12);
    }

    #[test]
    fn dls_step_shrinks_with_damping() {
        let g = geom();
        let c = ConfigState::straight(10.0, 5.0);
        let goal = Vector3::new(5.0, 0.0, 40.0);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let n = dls_ik_step(&c, &goal, sigma, &g).unwrap().norm();
            assert!(n <= last + 1e-12, "sigma {sigma}: {n} > {last}");
            assert!(n.is_finite());
            last = n;
        }
    }

    #[test]
    fn dls_never_nonfinite_at_singularity() {
        let g = geom();
        let c = ConfigState::straight(0.0, 0.0);
        let step = dls_ik_step(&c, &Vector3::new(3.0, -2.0, 30.0), 0.01, &g).unwrap();
        assert!(step.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn ik_converges_to_reachable_goal() {
        let g = geom();
        let start = ConfigState::straight(10.0, 5.0);
        let goal = camera_pose(&start, &g).translation + Vector3::new(5.0, 0.0, 0.0);
        let (sol, err) = solve_ik(&start, &goal, 0.01, &g, 0.01, 100).unwrap();
        assert!(err < 0.01, "terminal error {err}");
        // independent verification through the forward chain
        let check = (camera_pose(&sol, &g).translation - goal).norm();
        assert!(check < 0.01);
    }
}
