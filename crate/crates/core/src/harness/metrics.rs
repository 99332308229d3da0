//! Run metrics, computed purely from the trace so every report is
//! recomputable from an exported file.

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::trace::TraceLog;
use super::HarnessError;
use crate::plant::TargetProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub steps: u64,
    /// Pixel error at the last visible step.
    pub terminal_error: f64,
    /// First step where the error stays below MPE for the settle window.
    pub settle_step: Option<u64>,
    pub settle_time_s: Option<f64>,
    /// SD of the pixel error from the settle step onward.
    pub post_capture_sd: f64,
    /// Largest error observed after settling.
    pub max_error_after_settle: f64,
    /// RMSE over the errors at waypoint-capture steps.
    pub rmse_waypoints: Option<f64>,
    /// Captured waypoints (waypoint tasks only).
    pub waypoints_captured: Option<u64>,
    /// Steps from disturbance end until the error drops below MPE again.
    pub recovery_steps: Option<u64>,
    pub success: bool,
}

fn pixel_error(r: &super::trace::StepRecord) -> f64 {
    ((r.meas_u - r.goal_u).powi(2) + (r.meas_v - r.goal_v).powi(2)).sqrt()
}

/// Pure function of the trace and the scenario's thresholds.
pub fn compute_metrics(trace: &TraceLog, sc: &Scenario) -> Result<MetricsReport, HarnessError> {
    if trace.records.is_empty() {
        return Err(HarnessError::Config("empty trace".into()));
    }
    let recs = &trace.records;
    let mpe = sc.success.mpe;
    let window = sc.success.settle_window as usize;
    let n = recs.len();

    let errors: Vec<Option<f64>> = recs
        .iter()
        .map(|r| r.visible.then(|| pixel_error(r)))
        .collect();
    let terminal_error = errors
        .iter()
        .rev()
        .find_map(|e| *e)
        .unwrap_or(f64::INFINITY);

    // settle: first index where `window` consecutive visible errors < MPE
    let mut settle_idx = None;
    'scan: for start in 0..n {
        if start + window > n {
            break;
        }
        for e in &errors[start..start + window] {
            match e {
                Some(v) if *v < mpe => {}
                _ => continue 'scan,
            }
        }
        settle_idx = Some(start);
        break;
    }
    let settle_step = settle_idx.map(|i| recs[i].k);
    let settle_time_s = settle_idx.map(|i| recs[i].t);

    let (post_capture_sd, max_error_after_settle) = match settle_idx {
        Some(i) => {
            let tail: Vec<f64> = errors[i..].iter().filter_map(|e| *e).collect();
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            let var = tail.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / tail.len() as f64;
            (
                var.sqrt(),
                tail.iter().copied().fold(0.0f64, f64::max),
            )
        }
        None => (f64::INFINITY, f64::INFINITY),
    };

    // waypoint_idx logs the number of captured waypoints after each step, so
    // captures are exactly the steps where it increments; the capture error
    // is the error at that step, against the goal that was just captured
    let is_waypoint_task = recs.iter().any(|r| r.waypoint_idx >= 0);
    let (rmse_waypoints, waypoints_captured) = if is_waypoint_task {
        let mut capture_errors = Vec::new();
        for i in 0..n {
            let prev = if i == 0 { 0 } else { recs[i - 1].waypoint_idx };
            if recs[i].waypoint_idx > prev {
                if let Some(e) = errors[i] {
                    capture_errors.push(e);
                }
            }
        }
        let rmse = if capture_errors.is_empty() {
            f64::INFINITY
        } else {
            (capture_errors.iter().map(|e| e * e).sum::<f64>() / capture_errors.len() as f64)
                .sqrt()
        };
        (Some(rmse), Some(capture_errors.len() as u64))
    } else {
        (None, None)
    };

    // recovery after the disturbance window closes
    let recovery_steps = sc.disturbance.as_ref().and_then(|d| {
        if d.duration == 0 {
            return None;
        }
        let end = d.onset_step + d.duration;
        let after: Vec<&super::trace::StepRecord> =
            recs.iter().filter(|r| r.k >= end).collect();
        after
            .iter()
            .find(|r| r.visible && pixel_error(r) < mpe)
            .map(|r| r.k - end)
    });

    let success = match &sc.target {
        TargetProfile::WaypointPath { .. } => {
            let total = sc
                .waypoints
                .as_ref()
                .map(|w| w.points.len() as u64)
                .unwrap_or(0);
            waypoints_captured == Some(total)
                && rmse_waypoints.map(|r| r <= sc.success.rmse_bound).unwrap_or(false)
        }
        TargetProfile::Reciprocating { .. } => settle_step.is_some(),
        TargetProfile::StaticPoint { .. } => {
            settle_step.is_some() && terminal_error < mpe
        }
    };

    Ok(MetricsReport {
        name: sc.name.clone(),
        steps: recs.len() as u64,
        terminal_error,
        settle_step,
        settle_time_s,
        post_capture_sd,
        max_error_after_settle,
        rmse_waypoints,
        waypoints_captured,
        recovery_steps,
        success,
    })
}

/// Dominant period of a sampled signal by autocorrelation peak over a lag
/// window, in seconds.
pub fn dominant_period(series: &[f64], dt: f64, min_lag: usize, max_lag: usize) -> Option<f64> {
    if series.len() <= max_lag || min_lag == 0 || min_lag > max_lag {
        return None;
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for lag in min_lag..=max_lag {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += x[i] * x[i + lag];
        }
        let acc = acc / (n - lag) as f64;
        if acc > best.1 {
            best = (lag, acc);
        }
    }
    Some(best.0 as f64 * dt)
}
