//! The shipped experiment suite, embedded so library users and tests can run
//! it without touching the filesystem.

use super::scenario::{parse_waypoint_csv, Scenario};
use super::{run_scenario, HarnessError, RunResult};

pub const STATIC_TOML: &str = include_str!("../../../../scenarios/static.toml");
pub const STATIC_NOMINAL_TOML: &str = include_str!("../../../../scenarios/static_nominal.toml");
pub const DYNAMIC_TOML: &str = include_str!("../../../../scenarios/dynamic.toml");
pub const BIOPSY_TOML: &str = include_str!("../../../../scenarios/biopsy.toml");
pub const CAIR_C_TOML: &str = include_str!("../../../../scenarios/cair_c.toml");
pub const CAIR_A_TOML: &str = include_str!("../../../../scenarios/cair_a.toml");
pub const CAIR_I_TOML: &str = include_str!("../../../../scenarios/cair_i.toml");
pub const CAIR_R_TOML: &str = include_str!("../../../../scenarios/cair_r.toml");
pub const CAIR_C_CSV: &str = include_str!("../../../../scenarios/cair/c.csv");
pub const CAIR_A_CSV: &str = include_str!("../../../../scenarios/cair/a.csv");
pub const CAIR_I_CSV: &str = include_str!("../../../../scenarios/cair/i.csv");
pub const CAIR_R_CSV: &str = include_str!("../../../../scenarios/cair/r.csv");

pub fn scenario_static() -> Result<Scenario, HarnessError> {
    Scenario::from_toml(STATIC_TOML)
}

pub fn scenario_static_nominal() -> Result<Scenario, HarnessError> {
    Scenario::from_toml(STATIC_NOMINAL_TOML)
}

pub fn scenario_dynamic() -> Result<Scenario, HarnessError> {
    Scenario::from_toml(DYNAMIC_TOML)
}

pub fn scenario_biopsy() -> Result<Scenario, HarnessError> {
    Scenario::from_toml(BIOPSY_TOML)
}

/// One of the four letter-tracing scenarios, with its embedded waypoint list
/// attached.
pub fn scenario_cair(letter: char) -> Result<Scenario, HarnessError> {
    let (toml, csv) = match letter.to_ascii_lowercase() {
        'c' => (CAIR_C_TOML, CAIR_C_CSV),
        'a' => (CAIR_A_TOML, CAIR_A_CSV),
        'i' => (CAIR_I_TOML, CAIR_I_CSV),
        'r' => (CAIR_R_TOML, CAIR_R_CSV),
        other => {
            return Err(HarnessError::Config(format!(
                "unknown letter {other:?} (expected c, a, i or r)"
            )))
        }
    };
    let mut sc = Scenario::from_toml(toml)?;
    let wp = sc
        .waypoints
        .as_mut()
        .ok_or_else(|| HarnessError::Config("letter scenario lacks waypoints".into()))?;
    wp.points = parse_waypoint_csv(csv).map_err(HarnessError::Config)?;
    wp.file = None;
    sc.validate()?;
    Ok(sc)
}

/// World anchor of marker `i` in the six-marker static fixture: a circle of
/// radius 4 mm around the optical axis, one marker every 60 degrees, in the
/// fixture plane about 20 mm ahead of the (perturbed) start camera.
pub fn static_marker_anchor(i: usize) -> [f64; 3] {
    let bearing = (i as f64) * std::f64::consts::FRAC_PI_3;
    [4.0 * bearing.cos(), -1.0 + 4.0 * bearing.sin(), 116.0]
}

/// The six-marker static experiment: one run per marker, seeds
/// `base_seed..base_seed + 6`.
pub fn run_static_suite(base_seed: u64) -> Result<Vec<RunResult>, HarnessError> {
    let template = scenario_static()?;
    let mut out = Vec::with_capacity(6);
    for i in 0..6 {
        let mut sc = template.clone();
        sc.name = format!("static_m{i}");
        sc.seed = base_seed + i as u64;
        sc.target = crate::plant::TargetProfile::StaticPoint {
            anchor: static_marker_anchor(i),
        };
        out.push(run_scenario(&sc)?);
    }
    Ok(out)
}

/// The four letter-tracing runs, in C-A-I-R order.
pub fn run_cair_suite(base_seed: u64) -> Result<Vec<RunResult>, HarnessError> {
    let mut out = Vec::with_capacity(4);
    for (i, letter) in ['c', 'a', 'i', 'r'].into_iter().enumerate() {
        let mut sc = scenario_cair(letter)?;
        sc.seed = base_seed + i as u64;
        out.push(run_scenario(&sc)?);
    }
    Ok(out)
}
