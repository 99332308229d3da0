//! Scenario files: one structured TOML document per experiment, with every
//! sub-config optional and defaulted so the shipped files stay readable.

use nalgebra::{Matrix2, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::kinematics::RobotGeometry;
use crate::mpc::{JacobianMode, MpcConfig};
use crate::plant::{DisturbanceProfile, PlantConfig, TargetProfile};

use super::HarnessError;

fn default_mpe() -> f64 {
    30.0
}
fn default_settle_window() -> u64 {
    10
}
fn default_rmse_bound() -> f64 {
    15.0
}

/// Pass/fail thresholds for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessCriteria {
    /// Maximum permissible pixel error.
    #[serde(default = "default_mpe")]
    pub mpe: f64,
    /// Steps the error must stay below `mpe` to count as settled.
    #[serde(default = "default_settle_window")]
    pub settle_window: u64,
    /// Waypoint-task bound on the capture RMSE.
    #[serde(default = "default_rmse_bound")]
    pub rmse_bound: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            mpe: default_mpe(),
            settle_window: default_settle_window(),
            rmse_bound: default_rmse_bound(),
        }
    }
}

/// Straight start pose ("steering mode 1").
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartPose {
    pub z_b: f64,
    pub z_e: f64,
}

impl Default for StartPose {
    fn default() -> Self {
        Self { z_b: 10.0, z_e: 5.0 }
    }
}

fn default_probe_step() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Per-coordinate offline probe amplitude (mm).
    pub probe_step: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            probe_step: default_probe_step(),
        }
    }
}

impl EstimatorConfig {
    pub fn probe_vector(&self) -> SVector<f64, 8> {
        SVector::from_element(self.probe_step)
    }
}

/// Plant parameters in scenario form; the true geometry is derived from the
/// nominal one at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub mismatch_scale: f64,
    pub cable_bias: f64,
    pub actuator_noise_sd: f64,
    pub pixel_noise_sd: f64,
    pub sensor_noise_sd: f64,
    pub dt: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            mismatch_scale: 1.1,
            cable_bias: 0.2,
            actuator_noise_sd: 0.0,
            pixel_noise_sd: 1.0,
            sensor_noise_sd: 0.05,
            dt: 0.1,
        }
    }
}

impl PlantSection {
    pub fn to_plant_config(&self, nominal: &RobotGeometry, seed: u64) -> PlantConfig {
        let mut c = PlantConfig::from_nominal(nominal, self.mismatch_scale, seed);
        c.cable_bias = self.cable_bias;
        c.actuator_noise_sd = self.actuator_noise_sd;
        c.pixel_noise_sd = self.pixel_noise_sd;
        c.sensor_noise_sd = self.sensor_noise_sd;
        c.dt = self.dt;
        c
    }
}

/// Controller parameters in plain-array scenario form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub n_p: usize,
    pub n_c: usize,
    /// Diagonal of the 2x2 stage weight.
    pub q_weight: [f64; 2],
    pub u_rate: f64,
    pub p_min: [f64; 3],
    pub p_max: [f64; 3],
    /// Actuator box override; defaults to the geometry's limits.
    pub q_min: Option<[f64; 8]>,
    pub q_max: Option<[f64; 8]>,
    pub s_min: [f64; 2],
    pub s_max: [f64; 2],
    pub slack_weight: f64,
    pub reset_threshold: f64,
    /// Assumed target depth z_c* (mm).
    pub target_depth: f64,
    pub normalize_error: bool,
    pub jacobian_mode: JacobianMode,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let d = MpcConfig::default();
        Self {
            n_p: d.n_p,
            n_c: d.n_c,
            q_weight: [1.0, 1.0],
            u_rate: d.u_rate,
            p_min: [-1.0e4; 3],
            p_max: [1.0e4; 3],
            q_min: None,
            q_max: None,
            s_min: [0.0, 0.0],
            s_max: [710.0, 710.0],
            slack_weight: d.slack_weight,
            reset_threshold: d.reset_threshold,
            target_depth: d.target_depth,
            normalize_error: d.normalize_error,
            jacobian_mode: d.jacobian_mode,
        }
    }
}

impl ControllerSection {
    pub fn to_mpc_config(&self, geometry: &RobotGeometry) -> MpcConfig {
        MpcConfig {
            n_p: self.n_p,
            n_c: self.n_c,
            q_weight: Matrix2::from_diagonal(&Vector2::new(self.q_weight[0], self.q_weight[1])),
            u_rate: self.u_rate,
            p_min: Vector3::from(self.p_min),
            p_max: Vector3::from(self.p_max),
            q_min: self.q_min.map(SVector::from).unwrap_or_else(|| geometry.q_min()),
            q_max: self.q_max.map(SVector::from).unwrap_or_else(|| geometry.q_max()),
            s_min: Vector2::from(self.s_min),
            s_max: Vector2::from(self.s_max),
            slack_weight: self.slack_weight,
            reset_threshold: self.reset_threshold,
            target_depth: self.target_depth,
            normalize_error: self.normalize_error,
            jacobian_mode: self.jacobian_mode,
        }
    }
}

fn default_capture_tolerance() -> f64 {
    15.0
}
fn default_dwell() -> u64 {
    3
}

/// Ordered pixel goals for waypoint tasks, inline or from a two-column CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSection {
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// CSV file with `u,v` rows, resolved relative to the scenario file.
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default = "default_capture_tolerance")]
    pub capture_tolerance: f64,
    /// Consecutive in-tolerance steps required to capture a waypoint.
    #[serde(default = "default_dwell")]
    pub dwell: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub success: SuccessCriteria,
    #[serde(default)]
    pub start: StartPose,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub geometry: RobotGeometry,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub controller: ControllerSection,
    pub target: TargetProfile,
    #[serde(default)]
    pub disturbance: Option<DisturbanceProfile>,
    #[serde(default)]
    pub waypoints: Option<WaypointSection>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut sc = Self::from_toml(&text)?;
        // resolve a waypoint file relative to the scenario location
        if let Some(wp) = &mut sc.waypoints {
            if let Some(file) = &wp.file {
                let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
                let wp_path = base.join(file);
                let csv = std::fs::read_to_string(&wp_path)
                    .map_err(|e| HarnessError::Io(format!("{}: {e}", wp_path.display())))?;
                wp.points = parse_waypoint_csv(&csv)
                    .map_err(|e| HarnessError::Config(format!("waypoints.file: {e}")))?;
                wp.file = None;
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Field-path-qualified validation of every sub-config.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |path: &str, msg: String| Err(HarnessError::Config(format!("{path}: {msg}")));
        if self.max_steps == 0 {
            return err("max_steps", "must be > 0".into());
        }
        if !(self.success.mpe > 0.0) {
            return err("success.mpe", "must be > 0".into());
        }
        if self.success.settle_window == 0 {
            return err("success.settle_window", "must be > 0".into());
        }
        if let Err(e) = self.geometry.validate() {
            return err("geometry", e);
        }
        if let Err(e) = self.intrinsics.validate() {
            return err("intrinsics", e.to_string());
        }
        let plant_cfg = self.plant.to_plant_config(&self.geometry, self.seed);
        if let Err(e) = plant_cfg.validate() {
            return err("plant", e.to_string());
        }
        if let Err(e) = self.controller.to_mpc_config(&self.geometry).validate() {
            return err("controller", e.to_string());
        }
        if let Err(e) = self.target.validate() {
            return err("target", e.to_string());
        }
        if !(self.estimator.probe_step > 0.0) {
            return err("estimator.probe_step", "must be > 0".into());
        }
        match (&self.target, &self.waypoints) {
            (TargetProfile::WaypointPath { .. }, None) => {
                return err("waypoints", "required for a waypoint_path target".into());
            }
            (TargetProfile::WaypointPath { .. }, Some(wp)) => {
                if wp.points.is_empty() && wp.file.is_none() {
                    return err("waypoints.points", "empty waypoint list".into());
                }
                if !(wp.capture_tolerance > 0.0) {
                    return err("waypoints.capture_tolerance", "must be > 0".into());
                }
                if wp.dwell == 0 {
                    return err("waypoints.dwell", "must be > 0".into());
                }
            }
            _ => {}
        }
        let z = self.geometry.z_b_range;
        if self.start.z_b < z[0] || self.start.z_b > z[1] {
            return err("start.z_b", format!("outside [{}, {}]", z[0], z[1]));
        }
        let z = self.geometry.z_e_range;
        if self.start.z_e < z[0] || self.start.z_e > z[1] {
            return err("start.z_e", format!("outside [{}, {}]", z[0], z[1]));
        }
        Ok(())
    }
}

/// Parse `u,v` rows; `#` starts a comment, blank lines are skipped.
pub fn parse_waypoint_csv(text: &str) -> Result<Vec<[f64; 2]>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<f64, String> {
            s.ok_or_else(|| format!("line {}: expected u,v", lineno + 1))?
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", lineno + 1))
        };
        let u = parse(cols.next())?;
        let v = parse(cols.next())?;
        if cols.next().is_some() {
            return Err(format!("line {}: expected exactly two columns", lineno + 1));
        }
        out.push([u, v]);
    }
    if out.is_empty() {
        return Err("no waypoints in file".into());
    }
    Ok(out)
}
