//! Ground-truth environment for closed-loop runs.
//!
//! The plant holds the *true* actuator state of a robot whose geometry is
//! deliberately perturbed from the controller's nominal copy (multiplicative
//! parameter mismatch plus constant per-cable length bias), integrates
//! control increments with actuation noise and disturbance pulses, and
//! simulates the two sensors: a camera observing a world target and an
//! electromagnetic tip sensor.

use nalgebra::{SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraIntrinsics, PixelFeature};
use crate::estimator::ProbeSensor;
use crate::kinematics::{actuator_to_config, camera_pose, ActuatorState, ConfigState, RobotGeometry};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    InvalidConfig(String),
    #[error("true kinematics rejected the state: {0}")]
    Kinematics(#[from] crate::kinematics::KinematicsError),
}

/// Fractions of `cable_bias` applied to the six cables (s1 s2 s3 e1 e2 e3).
/// A uniform bias cancels out of the curvature map, so the pattern is
/// deliberately non-uniform.
const CABLE_BIAS_PATTERN: [f64; 6] = [1.0, -0.5, 0.25, -1.0, 0.5, 0.75];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantConfig {
    /// The robot the plant actually integrates; normally built with
    /// [`PlantConfig::from_nominal`] so it differs from the controller's copy.
    pub true_geometry: RobotGeometry,
    /// Per-step, per-coordinate actuation noise SD (mm).
    pub actuator_noise_sd: f64,
    /// Feature measurement noise SD (px).
    pub pixel_noise_sd: f64,
    /// Electromagnetic tip-sensor noise SD (mm).
    pub sensor_noise_sd: f64,
    /// Multiplicative geometry perturbation used by `from_nominal`.
    pub mismatch_scale: f64,
    /// Constant cable-length offset scale (mm), spread by a fixed pattern.
    pub cable_bias: f64,
    pub rng_seed: u64,
    /// Control tick (s).
    pub dt: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::from_nominal(&RobotGeometry::default(), 1.1, 0)
    }
}

impl PlantConfig {
    /// Perturb the nominal geometry: curvature radii, outer segment length
    /// and camera offset are scaled up/down alternately by the mismatch
    /// factor so the errors do not cancel.
    pub fn from_nominal(nominal: &RobotGeometry, mismatch_scale: f64, rng_seed: u64) -> Self {
        let mut g = nominal.clone();
        let s = mismatch_scale;
        g.rho_s *= s;
        g.rho_e *= 2.0 - s;
        g.z_s *= s;
        g.d *= 2.0 - s;
        Self {
            true_geometry: g,
            actuator_noise_sd: 0.0,
            pixel_noise_sd: 1.0,
            sensor_noise_sd: 0.05,
            mismatch_scale,
            cable_bias: 0.2,
            rng_seed,
            dt: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if self.actuator_noise_sd < 0.0 || self.pixel_noise_sd < 0.0 || self.sensor_noise_sd < 0.0
        {
            return Err(PlantError::InvalidConfig("noise SDs must be >= 0".into()));
        }
        if !(self.mismatch_scale > 0.5 && self.mismatch_scale < 1.5) {
            return Err(PlantError::InvalidConfig(
                "mismatch_scale outside (0.5, 1.5)".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(PlantError::InvalidConfig("dt must be positive".into()));
        }
        self.true_geometry.validate().map_err(PlantError::InvalidConfig)
    }

    fn cable_bias_vector(&self) -> SVector<f64, 8> {
        let mut b = SVector::<f64, 8>::zeros();
        for m in 0..3 {
            b[1 + m] = self.cable_bias * CABLE_BIAS_PATTERN[m];
            b[5 + m] = self.cable_bias * CABLE_BIAS_PATTERN[3 + m];
        }
        b
    }
}

/// Target motion over a run. Pixel goals for waypoint tasks live in the
/// scenario; the plant only provides the world anchor the camera watches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetProfile {
    StaticPoint { anchor: [f64; 3] },
    Reciprocating {
        anchor: [f64; 3],
        /// mm/s, constant.
        speed: f64,
        /// mm, one-way travel.
        stroke: f64,
        axis: [f64; 3],
    },
    WaypointPath { anchor: [f64; 3] },
}

impl TargetProfile {
    pub fn validate(&self) -> Result<(), PlantError> {
        if let TargetProfile::Reciprocating { speed, stroke, axis, .. } = self {
            if !(*speed > 0.0 && *stroke > 0.0) {
                return Err(PlantError::InvalidConfig(
                    "reciprocating target needs speed > 0 and stroke > 0".into(),
                ));
            }
            if Vector3::from(*axis).norm() == 0.0 {
                return Err(PlantError::InvalidConfig("zero reciprocation axis".into()));
            }
        }
        Ok(())
    }
}

/// World position of the target at time `t` (s): triangle-wave displacement
/// for reciprocating targets (constant speed out and back), the anchor
/// otherwise.
pub fn target_position(profile: &TargetProfile, t: f64) -> Vector3<f64> {
    match profile {
        TargetProfile::StaticPoint { anchor } | TargetProfile::WaypointPath { anchor } => {
            Vector3::from(*anchor)
        }
        TargetProfile::Reciprocating {
            anchor,
            speed,
            stroke,
            axis,
        } => {
            let period = 2.0 * stroke / speed;
            let phase = t.rem_euclid(period);
            let disp = if phase <= period / 2.0 {
                speed * phase
            } else {
                stroke - speed * (phase - period / 2.0)
            };
            Vector3::from(*anchor) + disp * Vector3::from(*axis).normalize()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    pub onset_step: u64,
    pub duration: u64,
    pub actuator_bias: [f64; 8],
    pub extra_pixel_noise_sd: f64,
}

impl Default for DisturbanceProfile {
    fn default() -> Self {
        Self {
            onset_step: 0,
            duration: 0,
            actuator_bias: [0.0; 8],
            extra_pixel_noise_sd: 0.0,
        }
    }
}

/// Active disturbance at step `k`: the bias pulse and extra pixel noise
/// inside the window, zeros outside.
pub fn inject_disturbance(profile: &DisturbanceProfile, k: u64) -> (SVector<f64, 8>, f64) {
    if k >= profile.onset_step && k < profile.onset_step + profile.duration {
        (SVector::from(profile.actuator_bias), profile.extra_pixel_noise_sd)
    } else {
        (SVector::zeros(), 0.0)
    }
}

/// One camera observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Feature(PixelFeature),
    /// Projects outside the image bounds.
    OutOfView,
    /// Target is at or behind the image plane.
    BehindCamera,
}

#[derive(Debug)]
pub struct Plant {
    pub config: PlantConfig,
    pub q_true: ActuatorState,
    pub t: f64,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl Plant {
    /// Start from a commanded actuator state; the true state carries the
    /// configured cable bias from the first instant.
    pub fn new(config: PlantConfig, q_commanded: &ActuatorState) -> Result<Self, PlantError> {
        config.validate()?;
        let q_true = clamp_actuator(
            &(q_commanded.to_vector() + config.cable_bias_vector()),
            &config.true_geometry,
        );
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            q_true,
            t: 0.0,
            step: 0,
            rng,
        })
    }

    /// Integrate one control increment plus actuation noise and any active
    /// disturbance bias; saturation at the true actuator limits is physical.
    pub fn apply_control(&mut self, u: &SVector<f64, 8>, disturbance_bias: &SVector<f64, 8>) {
        let mut next = self.q_true.to_vector() + u + disturbance_bias;
        if self.config.actuator_noise_sd > 0.0 {
            let n = Normal::new(0.0, self.config.actuator_noise_sd).unwrap();
            for i in 0..8 {
                next[i] += n.sample(&mut self.rng);
            }
        }
        self.q_true = clamp_actuator(&next, &self.config.true_geometry);
        self.t += self.config.dt;
        self.step += 1;
    }

    /// True configuration under the true geometry.
    pub fn config_true(&self) -> Result<ConfigState, PlantError> {
        actuator_to_config(&self.q_true, &self.config.true_geometry).map_err(PlantError::from)
    }

    /// True camera position (no noise).
    pub fn camera_position_true(&self) -> Result<Vector3<f64>, PlantError> {
        Ok(camera_pose(&self.config_true()?, &self.config.true_geometry).translation)
    }

    /// Simulated feature detection: the world target transformed into the
    /// true camera frame, projected, plus pixel noise. `extra_noise_sd` adds
    /// in quadrature-free fashion (two independent draws) for disturbances.
    pub fn observe_feature(
        &mut self,
        target_world: &Vector3<f64>,
        intr: &CameraIntrinsics,
        extra_noise_sd: f64,
    ) -> Result<Observation, PlantError> {
        let pose = camera_pose(&self.config_true()?, &self.config.true_geometry);
        let p_cam = pose.inverse_transform_point(target_world);
        let mut feature = match project(&p_cam, intr) {
            Ok(f) => f,
            Err(_) => return Ok(Observation::BehindCamera),
        };
        for sd in [self.config.pixel_noise_sd, extra_noise_sd] {
            if sd > 0.0 {
                let n = Normal::new(0.0, sd).unwrap();
                feature.u += n.sample(&mut self.rng);
                feature.v += n.sample(&mut self.rng);
            }
        }
        if !feature.in_image(intr) {
            return Ok(Observation::OutOfView);
        }
        Ok(Observation::Feature(feature))
    }

    /// Electromagnetic tip sensor: true camera position plus Gaussian noise.
    pub fn em_sensor_read(&mut self) -> Result<Vector3<f64>, PlantError> {
        let mut p = self.camera_position_true()?;
        if self.config.sensor_noise_sd > 0.0 {
            let n = Normal::new(0.0, self.config.sensor_noise_sd).unwrap();
            for i in 0..3 {
                p[i] += n.sample(&mut self.rng);
            }
        }
        Ok(p)
    }

    /// Depth of a world point in the true camera frame (for oracle checks).
    pub fn target_depth_true(&self, target_world: &Vector3<f64>) -> Result<f64, PlantError> {
        let pose = camera_pose(&self.config_true()?, &self.config.true_geometry);
        Ok(pose.inverse_transform_point(target_world)[2])
    }
}

/// The offline estimator probes the plant by commanding actuator states and
/// reading the tip sensor; the probe sees the same bias and sensor noise as
/// every other read.
impl ProbeSensor for Plant {
    fn camera_position_at(&mut self, q: &ActuatorState) -> Result<Vector3<f64>, String> {
        let q_true = clamp_actuator(
            &(q.to_vector() + self.config.cable_bias_vector()),
            &self.config.true_geometry,
        );
        let phi = actuator_to_config(&q_true, &self.config.true_geometry)
            .map_err(|e| e.to_string())?;
        let mut p = camera_pose(&phi, &self.config.true_geometry).translation;
        if self.config.sensor_noise_sd > 0.0 {
            let n = Normal::new(0.0, self.config.sensor_noise_sd).unwrap();
            for i in 0..3 {
                p[i] += n.sample(&mut self.rng);
            }
        }
        Ok(p)
    }
}

fn clamp_actuator(q: &SVector<f64, 8>, geom: &RobotGeometry) -> ActuatorState {
    let lo = geom.q_min();
    let hi = geom.q_max();
    let clamped = SVector::<f64, 8>::from_fn(|i, _| q[i].clamp(lo[i], hi[i]));
    ActuatorState::from_vector(&clamped)
}
