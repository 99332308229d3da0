//! Scenario files, the closed-loop runner, per-step trace logging, and run
//! metrics.
//!
//! A run is fully determined by its [`Scenario`]: the seed drives every
//! stochastic draw, so two runs of the same scenario produce byte-identical
//! traces.

pub mod metrics;
pub mod scenario;
pub mod suites;
pub mod trace;

pub use metrics::{compute_metrics, dominant_period, MetricsReport};
pub use scenario::Scenario;
pub use trace::{export_trace, import_trace, TraceFormat, TraceLog};

use nalgebra::{SVector, Vector2, Vector3};
use thiserror::Error;

use crate::camera::PixelFeature;
use crate::estimator::initialize_offline;
use crate::kinematics::{actuator_to_camera_jacobian, actuator_to_config, camera_pose};
use crate::mpc::VisualMpc;
use crate::plant::{inject_disturbance, target_position, Observation, Plant, TargetProfile};
use trace::StepRecord;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("run failed: {0}")]
    Run(String),
}

/// Everything produced by one closed-loop run.
#[derive(Debug)]
pub struct RunResult {
    pub trace: TraceLog,
    pub metrics: MetricsReport,
    /// Formatted QP problems for every tick whose solve failed.
    pub qp_failures: Vec<String>,
}

fn run_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Run(e.to_string())
}

/// Execute one scenario end to end: offline Jacobian identification, then
/// `max_steps` closed-loop ticks (or fewer if every waypoint is captured).
pub fn run_scenario(sc: &Scenario) -> Result<RunResult, HarnessError> {
    sc.validate()?;
    let geom = &sc.geometry;
    let intr = &sc.intrinsics;
    let q0 = geom.straight_actuator(sc.start.z_b, sc.start.z_e);
    let plant_cfg = sc.plant.to_plant_config(geom, sc.seed);
    let dt = plant_cfg.dt;
    let mut plant = Plant::new(plant_cfg, &q0).map_err(run_err)?;
    let j0 = initialize_offline(&mut plant, &q0, &sc.estimator.probe_vector()).map_err(run_err)?;
    let mpc_cfg = sc.controller.to_mpc_config(geom);

    let center_goal = PixelFeature {
        u: intr.c_x,
        v: intr.c_y,
    };
    let waypoints = sc.waypoints.as_ref();
    let is_waypoint_task = matches!(sc.target, TargetProfile::WaypointPath { .. });
    let wp_points: &[[f64; 2]] = waypoints.map(|w| w.points.as_slice()).unwrap_or(&[]);

    let mut ctl: Option<VisualMpc> = None;
    let mut trace = TraceLog::default();
    let mut qp_failures = Vec::new();
    let mut captured: usize = 0;
    let mut dwell: u64 = 0;
    let mut last_meas = Vector2::zeros();

    for k in 0..sc.max_steps {
        let t = k as f64 * dt;
        let (dist_bias, extra_sd, dist_active) = match &sc.disturbance {
            Some(d) => {
                let (bias, sd) = inject_disturbance(d, k);
                (bias, sd, k >= d.onset_step && k < d.onset_step + d.duration)
            }
            None => (SVector::zeros(), 0.0, false),
        };

        let target_world = target_position(&sc.target, t);
        let obs = plant
            .observe_feature(&target_world, intr, extra_sd)
            .map_err(run_err)?;

        let goal = if is_waypoint_task {
            let [u, v] = wp_points[captured.min(wp_points.len() - 1)];
            PixelFeature { u, v }
        } else {
            center_goal
        };

        let mut u_cmd = SVector::<f64, 8>::zeros();
        let record = match obs {
            Observation::Feature(f) => {
                if ctl.is_none() {
                    ctl = Some(
                        VisualMpc::new(mpc_cfg.clone(), intr.clone(), q0.clone(), j0.clone(), f)
                            .map_err(run_err)?,
                    );
                }
                let c = ctl.as_mut().expect("controller initialized above");

                if let Some(wp) = waypoints {
                    let err = ((f.u - goal.u).powi(2) + (f.v - goal.v).powi(2)).sqrt();
                    if err < wp.capture_tolerance {
                        dwell += 1;
                    } else {
                        dwell = 0;
                    }
                    if dwell >= wp.dwell && captured < wp_points.len() {
                        captured += 1;
                        dwell = 0;
                    }
                }

                let j_analytic = actuator_to_camera_jacobian(&c.q, geom).map_err(run_err)?;
                let phi_cmd = actuator_to_config(&c.q, geom).map_err(run_err)?;
                let p_now = camera_pose(&phi_cmd, geom).translation;
                let (u, diag) = c.step(f, goal, &j_analytic, &p_now);
                u_cmd = u;
                last_meas = f.to_vector();

                // internal-model consistency: the tracking offset of the
                // reference equals the measured error, always
                let s = &diag.signals;
                let imc_gap = ((s.reference - s.internal) - (s.goal - s.measured)).norm();
                assert!(imc_gap < 1e-9, "internal-model identity violated: {imc_gap}");

                if let Some(p) = diag.failed_problem {
                    qp_failures.push(format!("step {k} ({t:.2} s):\n{p}"));
                }

                StepRecord {
                    k,
                    t,
                    meas_u: f.u,
                    meas_v: f.v,
                    goal_u: goal.u,
                    goal_v: goal.v,
                    internal_u: s.internal.x,
                    internal_v: s.internal.y,
                    ref_u: s.reference.x,
                    ref_v: s.reference.y,
                    pred_err_u: s.predictive_error.x,
                    pred_err_v: s.predictive_error.y,
                    omega: diag.omega,
                    u: u.into(),
                    q: c.q.to_vector().into(),
                    cam_x: 0.0,
                    cam_y: 0.0,
                    cam_z: 0.0,
                    objective: diag.objective,
                    kkt_residual: diag.kkt_residual,
                    slack: diag.slack,
                    disturbance_active: dist_active,
                    visible: true,
                    fault: diag.fault,
                    waypoint_idx: if is_waypoint_task { captured as i64 } else { -1 },
                }
            }
            Observation::OutOfView | Observation::BehindCamera => {
                // hold the command; the record repeats the last measurement
                // so every column stays finite
                let c = ctl
                    .as_ref()
                    .ok_or_else(|| HarnessError::Run("target not visible at start pose".into()))?;
                dwell = 0;
                StepRecord {
                    k,
                    t,
                    meas_u: last_meas.x,
                    meas_v: last_meas.y,
                    goal_u: goal.u,
                    goal_v: goal.v,
                    internal_u: c.internal.x,
                    internal_v: c.internal.y,
                    ref_u: c.internal.x,
                    ref_v: c.internal.y,
                    pred_err_u: 0.0,
                    pred_err_v: 0.0,
                    omega: c.j_hat.last_omega,
                    u: [0.0; 8],
                    q: c.q.to_vector().into(),
                    cam_x: 0.0,
                    cam_y: 0.0,
                    cam_z: 0.0,
                    objective: 0.0,
                    kkt_residual: 0.0,
                    slack: 0.0,
                    disturbance_active: dist_active,
                    visible: false,
                    fault: true,
                    waypoint_idx: if is_waypoint_task { captured as i64 } else { -1 },
                }
            }
        };

        plant.apply_control(&u_cmd, &dist_bias);
        let cam: Vector3<f64> = plant.camera_position_true().map_err(run_err)?;
        let mut record = record;
        record.cam_x = cam.x;
        record.cam_y = cam.y;
        record.cam_z = cam.z;
        trace.records.push(record);

        if is_waypoint_task && captured == wp_points.len() {
            break;
        }
    }

    let metrics = compute_metrics(&trace, sc)?;
    Ok(RunResult {
        trace,
        metrics,
        qp_failures,
    })
}
