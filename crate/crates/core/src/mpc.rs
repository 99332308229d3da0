//! Constrained visual model-predictive controller.
//!
//! Each tick: build the internal-model-control (IMC) reference from the
//! measured feature and the internal model, blend the analytic actuator
//! Jacobian with the online estimate, freeze the pixel sensitivity
//! `B = L_m * J_hat` over the horizon, condense the box-constrained tracking
//! problem into a dense QP over the stacked increment sequence plus one
//! shared slack variable, solve, and apply only the first increment.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{interaction_matrix, CameraIntrinsics, PixelFeature};
use crate::estimator::{online_update, JacobianEstimate};
use crate::kinematics::{ActuatorState, RobotGeometry};
use crate::qp::{self, QpProblem, QpSolver, QpStatus};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("qp assembly failed: {0}")]
    Qp(#[from] qp::QpError),
}

/// How the controller obtains the actuator-to-camera Jacobian each tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Error-weighted blend of the analytic model with the running estimate.
    Hybrid,
    /// Analytic model only; no online correction.
    AnalyticOnly,
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Prediction horizon, steps.
    pub n_p: usize,
    /// Control horizon, steps; inputs are held after it.
    pub n_c: usize,
    /// Stage weight on the pixel tracking error.
    pub q_weight: Matrix2<f64>,
    /// Per-step, per-coordinate actuator increment limit (mm), hard.
    pub u_rate: f64,
    /// Camera-position box (mm), softened.
    pub p_min: Vector3<f64>,
    pub p_max: Vector3<f64>,
    /// Actuator box (mm), hard.
    pub q_min: SVector<f64, 8>,
    pub q_max: SVector<f64, 8>,
    /// Predicted-feature box (pixels), softened.
    pub s_min: Vector2<f64>,
    pub s_max: Vector2<f64>,
    /// Linear penalty on the shared constraint slack.
    pub slack_weight: f64,
    /// Re-seed the internal model when the predictive error exceeds this (px).
    pub reset_threshold: f64,
    /// Assumed target depth z_c* (mm) for the interaction matrix.
    pub target_depth: f64,
    /// Normalize the pixel error by the image size in the blend weight.
    pub normalize_error: bool,
    pub jacobian_mode: JacobianMode,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let g = RobotGeometry::default();
        Self {
            n_p: 10,
            n_c: 10,
            q_weight: Matrix2::identity(),
            u_rate: 0.5,
            p_min: Vector3::from_element(-1.0e4),
            p_max: Vector3::from_element(1.0e4),
            q_min: g.q_min(),
            q_max: g.q_max(),
            s_min: Vector2::new(0.0, 0.0),
            s_max: Vector2::new(710.0, 710.0),
            slack_weight: 1.0e4,
            reset_threshold: 200.0,
            target_depth: 20.0,
            normalize_error: true,
            jacobian_mode: JacobianMode::Hybrid,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.n_p == 0 || self.n_c == 0 || self.n_c > self.n_p {
            return Err(MpcError::InvalidConfig(format!(
                "horizons n_c={} n_p={} must satisfy 1 <= n_c <= n_p",
                self.n_c, self.n_p
            )));
        }
        let q = self.q_weight;
        let sym = (q[(0, 1)] - q[(1, 0)]).abs() <= 1e-12 * q.amax().max(1.0);
        let psd = q[(0, 0)] >= 0.0 && q.determinant() >= -1e-12;
        if !sym || !psd {
            return Err(MpcError::InvalidConfig("Q must be symmetric PSD".into()));
        }
        if !(self.u_rate > 0.0) || !(self.slack_weight >= 0.0) || !(self.target_depth > 0.0) {
            return Err(MpcError::InvalidConfig(
                "u_rate and target_depth must be positive, slack_weight nonnegative".into(),
            ));
        }
        for i in 0..3 {
            if self.p_min[i] > self.p_max[i] {
                return Err(MpcError::InvalidConfig("p_min > p_max".into()));
            }
        }
        for i in 0..8 {
            if self.q_min[i] > self.q_max[i] {
                return Err(MpcError::InvalidConfig("q_min > q_max".into()));
            }
        }
        for i in 0..2 {
            if self.s_min[i] > self.s_max[i] {
                return Err(MpcError::InvalidConfig("s_min > s_max".into()));
            }
        }
        Ok(())
    }
}

/// IMC signal set for one tick. The defining identity is
/// `reference - internal == goal - measured`, exact by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImcSignals {
    pub measured: Vector2<f64>,
    pub goal: Vector2<f64>,
    pub internal: Vector2<f64>,
    pub predictive_error: Vector2<f64>,
    pub reference: Vector2<f64>,
}

/// Reference construction of the internal-model loop: the tracking target
/// handed to the optimizer is the internal model shifted by the measured
/// goal error, so plant/model mismatch is driven out in steady state.
pub fn build_reference(
    measured: Vector2<f64>,
    goal: Vector2<f64>,
    internal: Vector2<f64>,
) -> ImcSignals {
    let reference = internal + (goal - measured);
    let predictive_error = measured - internal;
    ImcSignals {
        measured,
        goal,
        internal,
        predictive_error,
        reference,
    }
}

/// Pixel sensitivity of the actuator increments: `B = L_m * J_hat` (2x8).
pub fn compose_b_matrix(
    j_hat: &SMatrix<f64, 3, 8>,
    l_m_hat: &Matrix2x3<f64>,
) -> SMatrix<f64, 2, 8> {
    l_m_hat * j_hat
}

/// How many times input j has been applied after i plant steps, with inputs
/// held at the last control move beyond the control horizon.
fn cumulative_count(i: usize, j: usize, n_c: usize) -> f64 {
    if j + 1 < n_c {
        if i > j {
            1.0
        } else {
            0.0
        }
    } else {
        i.saturating_sub(n_c - 1) as f64
    }
}

/// Roll the integrator model forward: x(i+1) = x(i) + B u(i), inputs held
/// after the control horizon. Returns x(k+1) ..= x(k+n_p).
pub fn predict(
    x0: Vector2<f64>,
    b: &SMatrix<f64, 2, 8>,
    u_seq: &[SVector<f64, 8>],
    n_p: usize,
) -> Vec<Vector2<f64>> {
    assert!(!u_seq.is_empty());
    let mut out = Vec::with_capacity(n_p);
    let mut x = x0;
    for i in 0..n_p {
        let u = u_seq[i.min(u_seq.len() - 1)];
        x += b * u;
        out.push(x);
    }
    out
}

/// Relative Tikhonov damping on the condensed objective. Anchored to the
/// single-step curvature so the regularized first move does not depend on
/// the horizon length.
const RIDGE_REL: f64 = 1e-6;

/// Absolute damping used for a given sensitivity matrix.
pub(crate) fn ocp_ridge(b: &SMatrix<f64, 2, 8>) -> f64 {
    (RIDGE_REL * (2.0 * b.transpose() * b).amax()).max(1e-12)
}

/// Decision-vector layout of the condensed problem: `8 * n_c` stacked
/// increments followed by one shared nonnegative slack.
pub fn decision_len(cfg: &MpcConfig) -> usize {
    8 * cfg.n_c + 1
}

/// Condense one tick into a QP over the increment sequence plus slack.
///
/// Hard constraints: per-step rate bounds (variable bounds) and the actuator
/// box via cumulative sums. Soft constraints (shared slack, linear exact
/// penalty): the predicted-feature box and the linearized camera-position
/// box through the estimated Jacobian.
pub fn assemble_ocp(
    q_now: &ActuatorState,
    p_now: &Vector3<f64>,
    j_hat: &SMatrix<f64, 3, 8>,
    b: &SMatrix<f64, 2, 8>,
    signals: &ImcSignals,
    cfg: &MpcConfig,
) -> Result<QpProblem, MpcError> {
    cfg.validate()?;
    if !signals.measured.iter().all(|x| x.is_finite())
        || !signals.reference.iter().all(|x| x.is_finite())
    {
        return Err(MpcError::NonFinite("imc signals"));
    }
    if !b.iter().all(|x| x.is_finite()) || !j_hat.iter().all(|x| x.is_finite()) {
        return Err(MpcError::NonFinite("sensitivity matrices"));
    }
    let (n_p, n_c) = (cfg.n_p, cfg.n_c);
    let nu = 8 * n_c;
    let n = nu + 1;

    // prediction map: x(k+i) = x0 + sum_j c(i,j) B u_j
    let mut phi = DMatrix::zeros(2 * n_p, nu);
    for i in 1..=n_p {
        for j in 0..n_c {
            let c = cumulative_count(i, j, n_c);
            if c == 0.0 {
                continue;
            }
            for r in 0..2 {
                for col in 0..8 {
                    phi[(2 * (i - 1) + r, 8 * j + col)] = c * b[(r, col)];
                }
            }
        }
    }
    let mut qbar = DMatrix::zeros(2 * n_p, 2 * n_p);
    for i in 0..n_p {
        for r in 0..2 {
            for c in 0..2 {
                qbar[(2 * i + r, 2 * i + c)] = cfg.q_weight[(r, c)];
            }
        }
    }
    let d = DVector::from_fn(2 * n_p, |row, _| {
        (signals.internal - signals.reference)[row % 2]
    });
    let h0 = 2.0 * phi.transpose() * &qbar * &phi;
    let g0 = 2.0 * phi.transpose() * (&qbar * &d);

    // scale the objective to O(1), then damp relative to one step's curvature
    let scale = 1.0 / h0.amax().max(1.0);
    let ridge = ocp_ridge(b) * scale;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (nu, nu)).copy_from(&(&h0 * scale));
    for i in 0..n {
        h[(i, i)] += ridge;
    }
    // unit curvature on the slack keeps the dual iteration well conditioned;
    // the linear term still makes the penalty exact (zero slack iff feasible)
    h[(nu, nu)] += 1.0;
    let mut g = DVector::zeros(n);
    g.rows_mut(0, nu).copy_from(&(&g0 * scale));
    g[nu] = cfg.slack_weight * scale;

    // variable bounds: hard rate limits, nonnegative slack
    let mut lb = DVector::from_element(n, -cfg.u_rate);
    let mut ub = DVector::from_element(n, cfg.u_rate);
    lb[nu] = 0.0;
    ub[nu] = f64::INFINITY;

    // hard actuator box rows (8 per step) plus soft feature/position rows.
    // A softened box needs two one-sided rows per coordinate so the shared
    // slack relaxes both sides: f + s >= lo and f - s <= hi.
    let m = 8 * n_p + n_p * 2 * (2 + 3);
    let mut a = DMatrix::zeros(m, n);
    let mut lb_a = DVector::from_element(m, f64::NEG_INFINITY);
    let mut ub_a = DVector::from_element(m, f64::INFINITY);
    let mut row = 0;
    let q_vec = q_now.to_vector();
    for i in 1..=n_p {
        for coord in 0..8 {
            for j in 0..n_c {
                a[(row, 8 * j + coord)] = cumulative_count(i, j, n_c);
            }
            lb_a[row] = cfg.q_min[coord] - q_vec[coord];
            ub_a[row] = cfg.q_max[coord] - q_vec[coord];
            row += 1;
        }
    }
    let soft_pair = |a: &mut DMatrix<f64>,
                         lb_a: &mut DVector<f64>,
                         ub_a: &mut DVector<f64>,
                         row: &mut usize,
                         coeffs: &[f64; 8],
                         i: usize,
                         lo: f64,
                         hi: f64| {
        for j in 0..n_c {
            let c = cumulative_count(i, j, n_c);
            for col in 0..8 {
                a[(*row, 8 * j + col)] = c * coeffs[col];
                a[(*row + 1, 8 * j + col)] = c * coeffs[col];
            }
        }
        a[(*row, nu)] = 1.0;
        if lo.is_finite() {
            lb_a[*row] = lo;
        }
        a[(*row + 1, nu)] = -1.0;
        if hi.is_finite() {
            ub_a[*row + 1] = hi;
        }
        *row += 2;
    };
    for i in 1..=n_p {
        // predicted-feature box on x(k+i) = internal + sum c B u
        for r in 0..2 {
            let coeffs = std::array::from_fn(|col| b[(r, col)]);
            soft_pair(
                &mut a,
                &mut lb_a,
                &mut ub_a,
                &mut row,
                &coeffs,
                i,
                cfg.s_min[r] - signals.internal[r],
                cfg.s_max[r] - signals.internal[r],
            );
        }
        // camera-position box, linearized through the estimated Jacobian
        for r in 0..3 {
            let coeffs = std::array::from_fn(|col| j_hat[(r, col)]);
            soft_pair(
                &mut a,
                &mut lb_a,
                &mut ub_a,
                &mut row,
                &coeffs,
                i,
                cfg.p_min[r] - p_now[r],
                cfg.p_max[r] - p_now[r],
            );
        }
    }
    debug_assert_eq!(row, m);
    Ok(QpProblem {
        h,
        g,
        a,
        lb_a,
        ub_a,
        lb,
        ub,
    })
}

#[derive(Debug, Clone)]
pub struct MpcDiagnostics {
    pub signals: ImcSignals,
    pub omega: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub slack: f64,
    pub qp_status: Option<QpStatus>,
    /// Fail-safe hold engaged this tick (infeasible or failed solve).
    pub fault: bool,
    /// Internal model was re-seeded from the measurement this tick.
    pub reset: bool,
    /// Dump of the failed problem, for post-mortem.
    pub failed_problem: Option<String>,
}

/// Persistent controller: internal model, commanded actuator state, and the
/// running Jacobian estimate.
#[derive(Debug, Clone)]
pub struct VisualMpc {
    pub cfg: MpcConfig,
    pub intrinsics: CameraIntrinsics,
    pub internal: Vector2<f64>,
    pub q: ActuatorState,
    pub j_hat: JacobianEstimate,
    pub last_u_seq: Option<DVector<f64>>,
    solver: QpSolver,
}

impl VisualMpc {
    /// Seed the internal model with the first measurement and the Jacobian
    /// with the offline estimate.
    pub fn new(
        cfg: MpcConfig,
        intrinsics: CameraIntrinsics,
        q0: ActuatorState,
        j0: JacobianEstimate,
        first_measurement: PixelFeature,
    ) -> Result<Self, MpcError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            intrinsics,
            internal: first_measurement.to_vector(),
            q: q0,
            j_hat: j0,
            last_u_seq: None,
            solver: QpSolver::new(),
        })
    }

    /// One receding-horizon tick. Returns the first optimal increment (zero
    /// on fault) and the tick diagnostics. `j_analytic` is the caller's
    /// model Jacobian at the commanded state; `p_now` the camera position
    /// used by the linearized position box.
    pub fn step(
        &mut self,
        measured: PixelFeature,
        goal: PixelFeature,
        j_analytic: &SMatrix<f64, 3, 8>,
        p_now: &Vector3<f64>,
    ) -> (SVector<f64, 8>, MpcDiagnostics) {
        let meas = measured.to_vector();
        let mut reset = false;
        if (meas - self.internal).norm() > self.cfg.reset_threshold {
            self.internal = meas;
            reset = true;
        }
        let signals = build_reference(meas, goal.to_vector(), self.internal);

        self.j_hat = match self.cfg.jacobian_mode {
            JacobianMode::AnalyticOnly => JacobianEstimate::from_matrix(*j_analytic),
            JacobianMode::Hybrid => online_update(
                j_analytic,
                &self.j_hat,
                &measured,
                &goal,
                &self.intrinsics,
                self.cfg.normalize_error,
            )
            .unwrap_or_else(|_| self.j_hat.clone()),
        };
        let omega = self.j_hat.last_omega;

        let l_m_hat = interaction_matrix(&goal, self.cfg.target_depth, &self.intrinsics)
            .map(|m| m.l_m)
            .unwrap_or_else(|_| Matrix2x3::zeros());
        let b = compose_b_matrix(&self.j_hat.j_hat, &l_m_hat);

        let mut diag = MpcDiagnostics {
            signals,
            omega,
            objective: 0.0,
            kkt_residual: 0.0,
            slack: 0.0,
            qp_status: None,
            fault: false,
            reset,
            failed_problem: None,
        };

        let problem = match assemble_ocp(&self.q, p_now, &self.j_hat.j_hat, &b, &signals, &self.cfg)
        {
            Ok(p) => p,
            Err(_) => {
                diag.fault = true;
                return (SVector::zeros(), diag);
            }
        };
        let sol = match self.solver.solve(&problem, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(_) => {
                diag.fault = true;
                diag.failed_problem = Some(problem.format_problem());
                return (SVector::zeros(), diag);
            }
        };
        diag.qp_status = Some(sol.status);
        diag.objective = sol.objective_value;
        diag.kkt_residual = sol.kkt_residual;
        if sol.status == QpStatus::Infeasible {
            diag.fault = true;
            diag.failed_problem = Some(problem.format_problem());
            return (SVector::zeros(), diag);
        }
        let nu = 8 * self.cfg.n_c;
        diag.slack = sol.u_star[nu];
        let u_first = SVector::<f64, 8>::from_fn(|i, _| sol.u_star[i]);
        self.internal += b * u_first;
        self.q = ActuatorState::from_vector(&(self.q.to_vector() + u_first));
        self.last_u_seq = Some(sol.u_star.rows(0, nu).into_owned());
        (u_first, diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::kinematics::RobotGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v2(u: f64, v: f64) -> Vector2<f64> {
        Vector2::new(u, v)
    }

    #[test]
    fn reference_with_zero_predictive_error_is_goal() {
        let s = build_reference(v2(395.0, 310.0), v2(355.0, 355.0), v2(395.0, 310.0));
        assert_eq!(s.reference, s.goal);
        assert_eq!(s.predictive_error, Vector2::zeros());
    }

    #[test]
    fn reference_freezes_at_goal() {
        let s = build_reference(v2(355.0, 355.0), v2(355.0, 355.0), v2(340.0, 360.0));
        assert_eq!(s.reference, s.internal);
    }

    #[test]
    fn reference_arithmetic_example() {
        let s = build_reference(v2(400.0, 300.0), v2(355.0, 355.0), v2(395.0, 310.0));
        assert_eq!(s.reference, v2(350.0, 365.0));
        assert!(((s.reference - s.internal) - (s.goal - s.measured)).norm() < 1e-12);
    }

    #[test]
    fn b_matrix_trivial_cases() {
        let j = SMatrix::<f64, 3, 8>::zeros();
        assert_eq!(
            compose_b_matrix(&j, &Matrix2x3::identity()),
            SMatrix::<f64, 2, 8>::zeros()
        );
        let mut j = SMatrix::<f64, 3, 8>::zeros();
        for c in 0..8 {
            j[(0, c)] = c as f64 + 1.0;
            j[(1, c)] = -(c as f64);
        }
        let mut sel = Matrix2x3::zeros();
        sel[(0, 0)] = 1.0;
        let b = compose_b_matrix(&j, &sel);
        for c in 0..8 {
            assert_eq!(b[(0, c)], j[(0, c)]);
            assert_eq!(b[(1, c)], 0.0);
        }
    }

    #[test]
    fn b_matrix_matches_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let j = SMatrix::<f64, 3, 8>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let l = Matrix2x3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let b = compose_b_matrix(&j, &l);
        for r in 0..2 {
            for c in 0..8 {
                let expect: f64 = (0..3).map(|k| l[(r, k)] * j[(k, c)]).sum();
                assert!((b[(r, c)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn predict_holds_without_input() {
        let x0 = v2(10.0, 20.0);
        let b = SMatrix::<f64, 2, 8>::from_fn(|r, c| (r + c) as f64);
        let y = predict(x0, &b, &[SVector::zeros(); 5], 5);
        assert!(y.iter().all(|x| *x == x0));
    }

    #[test]
    fn predict_held_input_integrates() {
        let x0 = v2(0.0, 0.0);
        let mut b = SMatrix::<f64, 2, 8>::zeros();
        b[(0, 0)] = 2.0;
        let u = SVector::<f64, 8>::from_fn(|i, _| if i == 0 { 0.5 } else { 0.0 });
        let y = predict(x0, &b, &[u], 2);
        assert_eq!(y[1], v2(2.0, 0.0));
    }

    #[test]
    fn predict_matches_rollout_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = SMatrix::<f64, 2, 8>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let x0 = v2(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let u_seq: Vec<SVector<f64, 8>> = (0..4)
            .map(|_| SVector::from_fn(|_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let n_p = 7;
        let y = predict(x0, &b, &u_seq, n_p);
        let mut x = x0;
        for (i, yi) in y.iter().enumerate() {
            let u = u_seq[i.min(u_seq.len() - 1)];
            x += b * u;
            assert_eq!(*yi, x);
        }
    }

    fn plausible_b(rng: &mut impl Rng) -> SMatrix<f64, 2, 8> {
        SMatrix::from_fn(|_, _| rng.random_range(-20.0..20.0))
    }

    fn roomy_cfg() -> MpcConfig {
        MpcConfig {
            q_min: SVector::from_element(-1.0e3),
            q_max: SVector::from_element(1.0e3),
            ..MpcConfig::default()
        }
    }

    fn solve_ocp(p: &QpProblem) -> qp::QpSolution {
        qp::solve(p, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER).unwrap()
    }

    #[test]
    fn at_reference_optimum_is_zero() {
        let cfg = roomy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(355.0, 355.0), v2(355.0, 355.0), v2(355.0, 355.0));
        let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
        let p = assemble_ocp(
            &q0,
            &Vector3::new(0.0, 0.0, 30.0),
            &SMatrix::zeros(),
            &b,
            &sig,
            &cfg,
        )
        .unwrap();
        let sol = solve_ocp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.u_star.amax() < 1e-9);
    }

    /// Closed-form single-tick oracle: the damped normal equations with the
    /// same ridge the assembler applies after scaling.
    #[test]
    fn single_tick_matches_damped_least_squares() {
        let cfg = MpcConfig {
            n_p: 1,
            n_c: 1,
            s_min: v2(f64::NEG_INFINITY, f64::NEG_INFINITY),
            s_max: v2(f64::INFINITY, f64::INFINITY),
            p_min: Vector3::from_element(f64::NEG_INFINITY),
            p_max: Vector3::from_element(f64::INFINITY),
            u_rate: 1.0e6,
            q_min: SVector::from_element(-1.0e9),
            q_max: SVector::from_element(1.0e9),
            ..MpcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let b = plausible_b(&mut rng);
            let sig = build_reference(
                v2(rng.random_range(0.0..710.0), rng.random_range(0.0..710.0)),
                v2(355.0, 355.0),
                v2(rng.random_range(0.0..710.0), rng.random_range(0.0..710.0)),
            );
            let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
            let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg)
                .unwrap();
            let sol = solve_ocp(&p);
            assert_eq!(sol.status, QpStatus::Optimal);

            let bt = b.transpose();
            let lam = ocp_ridge(&b) / 2.0;
            let rhs = bt * (sig.reference - sig.internal);
            let damped = (bt * b + SMatrix::<f64, 8, 8>::identity() * lam)
                .try_inverse()
                .unwrap()
                * rhs;
            for i in 0..8 {
                assert!(
                    (sol.u_star[i] - damped[i]).abs() < 1e-7,
                    "coord {i}: {} vs {}",
                    sol.u_star[i],
                    damped[i]
                );
            }
        }
    }

    #[test]
    fn saturated_actuator_never_pushed_further() {
        let mut cfg = roomy_cfg();
        let g = RobotGeometry::default();
        cfg.q_min = g.q_min();
        cfg.q_max = g.q_max();
        let mut q0 = g.straight_actuator(10.0, 5.0);
        q0.z_b = cfg.q_max[0]; // insertion axis pinned at its limit
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(100.0, 600.0), v2(355.0, 355.0), v2(100.0, 600.0));
        let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg).unwrap();
        let sol = solve_ocp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        for i in 1..=cfg.n_p {
            let cum: f64 = (0..cfg.n_c)
                .map(|j| cumulative_count(i, j, cfg.n_c) * sol.u_star[8 * j])
                .sum();
            assert!(cum <= 1e-7, "step {i} cumulative {cum}");
        }
    }

    #[test]
    fn rate_bounds_hold_exactly() {
        let cfg = roomy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(50.0, 50.0), v2(355.0, 355.0), v2(50.0, 50.0));
        let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
        let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg).unwrap();
        let sol = solve_ocp(&p);
        for j in 0..8 * cfg.n_c {
            assert!(sol.u_star[j].abs() <= cfg.u_rate + 1e-8);
        }
        // large error demands saturation somewhere
        assert!(sol.u_star.rows(0, 8).amax() > 0.4 * cfg.u_rate);
    }

    #[test]
    fn horizon_extension_leaves_first_move_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(300.0, 400.0), v2(355.0, 355.0), v2(300.0, 400.0));
        let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
        let unconstrained = |n: usize| MpcConfig {
            n_p: n,
            n_c: n,
            s_min: v2(f64::NEG_INFINITY, f64::NEG_INFINITY),
            s_max: v2(f64::INFINITY, f64::INFINITY),
            p_min: Vector3::from_element(f64::NEG_INFINITY),
            p_max: Vector3::from_element(f64::INFINITY),
            u_rate: 1.0e6,
            q_min: SVector::from_element(-1.0e9),
            q_max: SVector::from_element(1.0e9),
            ..MpcConfig::default()
        };
        let first = |n: usize| {
            let cfg = unconstrained(n);
            let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg)
                .unwrap();
            let sol = solve_ocp(&p);
            SVector::<f64, 8>::from_fn(|i, _| sol.u_star[i])
        };
        let a = first(10);
        let c = first(14);
        assert!((a - c).amax() < 1e-6, "gap {}", (a - c).amax());
    }

    fn controller_for(b_true: SMatrix<f64, 2, 8>, start: Vector2<f64>) -> VisualMpc {
        let cfg = MpcConfig {
            jacobian_mode: JacobianMode::AnalyticOnly,
            q_min: SVector::from_element(-1.0e3),
            q_max: SVector::from_element(1.0e3),
            ..MpcConfig::default()
        };
        // place the true sensitivity in the top rows of a fake 3x8 Jacobian
        // with an interaction matrix that selects them back out
        let _ = b_true;
        VisualMpc::new(
            cfg,
            CameraIntrinsics::default(),
            RobotGeometry::default().straight_actuator(10.0, 5.0),
            JacobianEstimate::from_matrix(SMatrix::zeros()),
            PixelFeature {
                u: start[0],
                v: start[1],
            },
        )
        .unwrap()
    }

    /// Exact-model closed loop on a synthetic linear plant: the pixel error
    /// must contract monotonically to the goal.
    #[test]
    fn exact_model_loop_contracts() {
        // plant: feature moves by L_m * J * u, same matrices as the model
        let goal = PixelFeature { u: 355.0, v: 355.0 };
        let intr = CameraIntrinsics::default();
        let depth = 20.0;
        let l_m = interaction_matrix(&goal, depth, &intr).unwrap().l_m;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j_true = SMatrix::<f64, 3, 8>::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let b_true = compose_b_matrix(&j_true, &l_m);
        let mut feature = v2(150.0, 520.0);
        let mut ctl = controller_for(b_true, feature);
        ctl.j_hat = JacobianEstimate::from_matrix(j_true);
        let mut prev = (feature - goal.to_vector()).norm();
        for _ in 0..40 {
            let (u, diag) = ctl.step(
                PixelFeature {
                    u: feature[0],
                    v: feature[1],
                },
                goal,
                &j_true,
                &Vector3::new(0.0, 0.0, 30.0),
            );
            assert!(!diag.fault);
            feature += b_true * u;
            let err = (feature - goal.to_vector()).norm();
            assert!(err <= prev + 1e-9, "error grew: {prev} -> {err}");
            prev = err;
        }
        assert!(prev < 1.0, "terminal error {prev}");
    }

    #[test]
    fn converged_fixed_point_emits_zero() {
        let goal = PixelFeature { u: 355.0, v: 355.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j_true = SMatrix::<f64, 3, 8>::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let mut ctl = controller_for(SMatrix::zeros(), goal.to_vector());
        let (u, diag) = ctl.step(goal, goal, &j_true, &Vector3::new(0.0, 0.0, 30.0));
        assert!(!diag.fault);
        assert!(u.amax() < 1e-9);
    }

    #[test]
    fn imc_identity_holds_after_step() {
        let goal = PixelFeature { u: 355.0, v: 355.0 };
        let meas = PixelFeature { u: 400.0, v: 290.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let j_true = SMatrix::<f64, 3, 8>::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let mut ctl = controller_for(SMatrix::zeros(), v2(390.0, 300.0));
        let (_, diag) = ctl.step(meas, goal, &j_true, &Vector3::new(0.0, 0.0, 30.0));
        let s = diag.signals;
        assert!(((s.reference - s.internal) - (s.goal - s.measured)).norm() < 1e-10);
        // and again on fresh signals built from the advanced internal model
        let s2 = build_reference(meas.to_vector(), goal.to_vector(), ctl.internal);
        assert!(((s2.reference - s2.internal) - (s2.goal - s2.measured)).norm() < 1e-10);
    }

    #[test]
    fn internal_model_resets_on_gross_error() {
        let goal = PixelFeature { u: 355.0, v: 355.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let j_true = SMatrix::<f64, 3, 8>::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let mut ctl = controller_for(SMatrix::zeros(), v2(100.0, 100.0));
        let far = PixelFeature { u: 650.0, v: 650.0 };
        let (_, diag) = ctl.step(far, goal, &j_true, &Vector3::new(0.0, 0.0, 30.0));
        assert!(diag.reset);
        assert!(diag.signals.predictive_error.norm() < 1e-12);
    }

    #[test]
    fn infeasible_actuator_box_raises_fault_and_holds() {
        let g = RobotGeometry::default();
        let cfg = MpcConfig {
            // commanded state far outside a box it cannot re-enter in N_p steps
            q_min: SVector::from_element(-1.0),
            q_max: SVector::from_element(1.0),
            ..MpcConfig::default()
        };
        let mut ctl = VisualMpc::new(
            cfg,
            CameraIntrinsics::default(),
            g.straight_actuator(100.0, 5.0),
            JacobianEstimate::from_matrix(SMatrix::zeros()),
            PixelFeature { u: 100.0, v: 100.0 },
        )
        .unwrap();
        let goal = PixelFeature { u: 355.0, v: 355.0 };
        let before = ctl.q;
        let (u, diag) = ctl.step(
            PixelFeature { u: 100.0, v: 100.0 },
            goal,
            &SMatrix::zeros(),
            &Vector3::zeros(),
        );
        assert!(diag.fault);
        assert!(u.amax() == 0.0);
        assert_eq!(ctl.q.to_vector(), before.to_vector());
        assert!(diag.failed_problem.is_some());
    }

    #[test]
    fn soft_constraints_use_slack_only_when_needed() {
        // feasible problem: slack stays zero (exact penalty)
        let cfg = roomy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(300.0, 380.0), v2(355.0, 355.0), v2(300.0, 380.0));
        let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
        let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg).unwrap();
        let sol = solve_ocp(&p);
        assert!(sol.u_star[8 * cfg.n_c] < 1e-7, "slack {}", sol.u_star[8 * cfg.n_c]);

        // internal model already outside the feature box: slack must open
        let mut tight = cfg.clone();
        tight.s_min = v2(340.0, 340.0);
        tight.s_max = v2(370.0, 370.0);
        let sig = build_reference(v2(300.0, 380.0), v2(355.0, 355.0), v2(300.0, 380.0));
        let zero_b = SMatrix::<f64, 2, 8>::zeros();
        let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &zero_b, &sig, &tight)
            .unwrap();
        let sol = solve_ocp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.u_star[8 * tight.n_c] > 10.0);
    }

    #[test]
    fn warm_and_cold_solver_agree() {
        let cfg = roomy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let b = plausible_b(&mut rng);
        let sig = build_reference(v2(200.0, 500.0), v2(355.0, 355.0), v2(200.0, 500.0));
        let q0 = RobotGeometry::default().straight_actuator(10.0, 5.0);
        let p = assemble_ocp(&q0, &Vector3::zeros(), &SMatrix::zeros(), &b, &sig, &cfg).unwrap();
        let mut warm = QpSolver::new();
        warm.solve(&p, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER).unwrap();
        let again = warm.solve(&p, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER).unwrap();
        let cold = qp::solve(&p, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER).unwrap();
        assert!((again.u_star - cold.u_star).amax() < 1e-8);
    }

    #[test]
    fn invalid_horizons_rejected() {
        let cfg = MpcConfig {
            n_p: 2,
            n_c: 5,
            ..MpcConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn projection_sanity_for_target_depth() {
        // the interaction matrix used by the controller corresponds to the
        // projection model: check the depth actually projects into frame
        let intr = CameraIntrinsics::default();
        let p = project(&Vector3::new(0.0, 0.0, 20.0), &intr).unwrap();
        assert!(p.in_image(&intr));
    }
}
