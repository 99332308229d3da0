//! Per-step trace records and their CSV/JSON export.
//!
//! The CSV header is a fixed, documented column list; floats are printed
//! with nine significant digits (`{:.8e}`), integers and flags verbatim.
//! JSON is an array of per-step objects with the same field names and full
//! `f64` precision, so metrics recomputed from a JSON round-trip are
//! bitwise identical.

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    /// Simulation time (s).
    pub t: f64,
    pub meas_u: f64,
    pub meas_v: f64,
    pub goal_u: f64,
    pub goal_v: f64,
    pub internal_u: f64,
    pub internal_v: f64,
    pub ref_u: f64,
    pub ref_v: f64,
    pub pred_err_u: f64,
    pub pred_err_v: f64,
    pub omega: f64,
    pub u: [f64; 8],
    pub q: [f64; 8],
    pub cam_x: f64,
    pub cam_y: f64,
    pub cam_z: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub slack: f64,
    pub disturbance_active: bool,
    pub visible: bool,
    pub fault: bool,
    /// Index of the active waypoint, -1 for non-waypoint tasks.
    pub waypoint_idx: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceLog {
    pub records: Vec<StepRecord>,
}

pub const CSV_HEADER: &str = "k,t,meas_u,meas_v,goal_u,goal_v,internal_u,internal_v,ref_u,ref_v,\
pred_err_u,pred_err_v,omega,u0,u1,u2,u3,u4,u5,u6,u7,q0,q1,q2,q3,q4,q5,q6,q7,\
cam_x,cam_y,cam_z,objective,kkt_residual,slack,disturbance_active,visible,fault,waypoint_idx";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(format!("unknown trace format {other:?} (expected csv or json)")),
        }
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_b(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn to_csv(trace: &TraceLog) -> String {
    let mut out = String::with_capacity(64 + trace.records.len() * 512);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        let mut row: Vec<String> = vec![r.k.to_string(), fmt_f(r.t)];
        for v in [
            r.meas_u, r.meas_v, r.goal_u, r.goal_v, r.internal_u, r.internal_v, r.ref_u, r.ref_v,
            r.pred_err_u, r.pred_err_v, r.omega,
        ] {
            row.push(fmt_f(v));
        }
        for v in r.u {
            row.push(fmt_f(v));
        }
        for v in r.q {
            row.push(fmt_f(v));
        }
        for v in [r.cam_x, r.cam_y, r.cam_z, r.objective, r.kkt_residual, r.slack] {
            row.push(fmt_f(v));
        }
        row.push(fmt_b(r.disturbance_active).to_string());
        row.push(fmt_b(r.visible).to_string());
        row.push(fmt_b(r.fault).to_string());
        row.push(r.waypoint_idx.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<TraceLog, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty trace file".into()))?;
    if header != CSV_HEADER {
        return Err(HarnessError::Config("unrecognized trace header".into()));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let expected = CSV_HEADER.split(',').count();
        if cols.len() != expected {
            return Err(HarnessError::Config(format!(
                "trace line {}: expected {expected} columns, got {}",
                lineno + 2,
                cols.len()
            )));
        }
        let f = |i: usize| -> Result<f64, HarnessError> {
            cols[i].parse::<f64>().map_err(|e| {
                HarnessError::Config(format!("trace line {} col {}: {e}", lineno + 2, i + 1))
            })
        };
        let b = |i: usize| -> Result<bool, HarnessError> {
            match cols[i] {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(HarnessError::Config(format!(
                    "trace line {} col {}: expected 0/1, got {other:?}",
                    lineno + 2,
                    i + 1
                ))),
            }
        };
        let mut u = [0.0; 8];
        let mut q = [0.0; 8];
        for i in 0..8 {
            u[i] = f(13 + i)?;
            q[i] = f(21 + i)?;
        }
        records.push(StepRecord {
            k: cols[0]
                .parse()
                .map_err(|e| HarnessError::Config(format!("trace line {}: {e}", lineno + 2)))?,
            t: f(1)?,
            meas_u: f(2)?,
            meas_v: f(3)?,
            goal_u: f(4)?,
            goal_v: f(5)?,
            internal_u: f(6)?,
            internal_v: f(7)?,
            ref_u: f(8)?,
            ref_v: f(9)?,
            pred_err_u: f(10)?,
            pred_err_v: f(11)?,
            omega: f(12)?,
            u,
            q,
            cam_x: f(29)?,
            cam_y: f(30)?,
            cam_z: f(31)?,
            objective: f(32)?,
            kkt_residual: f(33)?,
            slack: f(34)?,
            disturbance_active: b(35)?,
            visible: b(36)?,
            fault: b(37)?,
            waypoint_idx: cols[38]
                .parse()
                .map_err(|e| HarnessError::Config(format!("trace line {}: {e}", lineno + 2)))?,
        });
    }
    Ok(TraceLog { records })
}

pub fn to_json(trace: &TraceLog) -> String {
    serde_json::to_string_pretty(&trace.records).expect("trace serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<TraceLog, HarnessError> {
    let records: Vec<StepRecord> =
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(TraceLog { records })
}

/// Write the trace to `path` in the requested format.
pub fn export_trace(
    trace: &TraceLog,
    path: &std::path::Path,
    format: TraceFormat,
) -> Result<(), HarnessError> {
    let body = match format {
        TraceFormat::Csv => to_csv(trace),
        TraceFormat::Json => to_json(trace),
    };
    std::fs::write(path, body).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn import_trace(path: &std::path::Path, format: TraceFormat) -> Result<TraceLog, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    match format {
        TraceFormat::Csv => from_csv(&text),
        TraceFormat::Json => from_json(&text),
    }
}
