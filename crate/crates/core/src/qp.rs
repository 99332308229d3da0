//! Dense convex quadratic programming:
//!
//! ```text
//!     minimize    1/2 u' H u + g' u
//!     subject to  lb_A <= A u <= ub_A
//!                 lb   <=   u <= ub
//! ```
//!
//! solved with a dual active-set method (Goldfarb-Idnani): start at the
//! unconstrained minimizer and add violated constraints one at a time, taking
//! primal/dual steps until all constraints hold. The dual method needs no
//! phase-1 feasible point and detects infeasible constraint sets directly.
//! Problem sizes here are tiny (n on the order of 10..100), so every linear
//! solve refactorizes; no incremental updates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("H is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("inconsistent bounds at index {0}: lower > upper")]
    InconsistentBounds(usize),
    #[error("H is not positive semidefinite")]
    NotPositiveSemidefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// General linear constraint matrix, m x n (may have zero rows).
    pub a: DMatrix<f64>,
    pub lb_a: DVector<f64>,
    pub ub_a: DVector<f64>,
    /// Variable bounds; use +-infinity for absent bounds.
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints at all.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a: DMatrix::zeros(0, n),
            lb_a: DVector::zeros(0),
            ub_a: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a.ncols() != n && self.a.nrows() > 0 {
            return Err(QpError::DimensionMismatch(format!(
                "A has {} columns, expected {n}",
                self.a.ncols()
            )));
        }
        let m = self.a.nrows();
        if self.lb_a.len() != m || self.ub_a.len() != m {
            return Err(QpError::DimensionMismatch(
                "lb_a/ub_a length != A rows".into(),
            ));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::DimensionMismatch("lb/ub length != n".into()));
        }
        let scale = self.h.amax().max(1.0);
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((self.h[(i, j)] - self.h[(j, i)]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(QpError::InconsistentBounds(i));
            }
        }
        for r in 0..m {
            if self.lb_a[r] > self.ub_a[r] {
                return Err(QpError::InconsistentBounds(n + r));
            }
        }
        Ok(())
    }

    /// Plain-text listing for post-mortem dumps of failed solves.
    pub fn format_problem(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let n = self.n();
        let _ = writeln!(s, "n = {n}, m = {}", self.a.nrows());
        let _ = writeln!(s, "H =");
        for r in 0..n {
            let row: Vec<String> = (0..n).map(|c| format!("{:.12e}", self.h[(r, c)])).collect();
            let _ = writeln!(s, "  {}", row.join(" "));
        }
        let dump_vec = |s: &mut String, name: &str, v: &DVector<f64>| {
            let row: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
            let _ = writeln!(s, "{name} = {}", row.join(" "));
        };
        dump_vec(&mut s, "g", &self.g);
        let _ = writeln!(s, "A =");
        for r in 0..self.a.nrows() {
            let row: Vec<String> = (0..n).map(|c| format!("{:.12e}", self.a[(r, c)])).collect();
            let _ = writeln!(s, "  {}", row.join(" "));
        }
        dump_vec(&mut s, "lb_a", &self.lb_a);
        dump_vec(&mut s, "ub_a", &self.ub_a);
        dump_vec(&mut s, "lb", &self.lb);
        dump_vec(&mut s, "ub", &self.ub);
        s
    }
}

/// Lagrange multipliers, all nonnegative, indexed like the problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpMultipliers {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub a_lower: DVector<f64>,
    pub a_upper: DVector<f64>,
}

impl QpMultipliers {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
            a_lower: DVector::zeros(m),
            a_upper: DVector::zeros(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    pub objective_value: f64,
    /// Max of the scaled stationarity / primal / dual / complementarity
    /// residuals at the returned point.
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub multipliers: QpMultipliers,
    pub iterations: usize,
}

/// KKT residual report for a candidate point with multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Residuals of the KKT conditions at `candidate`, scaled by the problem
/// magnitude so the report is meaningful across differently scaled problems.
pub fn kkt_residuals(
    problem: &QpProblem,
    candidate: &DVector<f64>,
    multipliers: &QpMultipliers,
) -> Result<KktReport, QpError> {
    let n = problem.n();
    let m = problem.a.nrows();
    if candidate.len() != n {
        return Err(QpError::DimensionMismatch("candidate length != n".into()));
    }
    if multipliers.lower.len() != n
        || multipliers.upper.len() != n
        || multipliers.a_lower.len() != m
        || multipliers.a_upper.len() != m
    {
        return Err(QpError::DimensionMismatch("multiplier lengths".into()));
    }
    let g_scale = 1.0 + problem.g.amax();
    let mut grad = &problem.h * candidate + &problem.g;
    grad -= &multipliers.lower;
    grad += &multipliers.upper;
    if m > 0 {
        grad -= problem.a.transpose() * (&multipliers.a_lower - &multipliers.a_upper);
    }
    let stationarity = grad.amax() / g_scale;

    let mut primal = 0.0f64;
    let mut complementarity = 0.0f64;
    let mut track = |value: f64, bound: f64, is_lower: bool, mu: f64| {
        if !bound.is_finite() {
            return;
        }
        let scale = 1.0 + bound.abs();
        let slack = if is_lower { value - bound } else { bound - value };
        primal = primal.max(-slack / scale);
        complementarity = complementarity.max((mu * slack).abs() / scale);
    };
    for i in 0..n {
        track(candidate[i], problem.lb[i], true, multipliers.lower[i]);
        track(candidate[i], problem.ub[i], false, multipliers.upper[i]);
    }
    if m > 0 {
        let ax = &problem.a * candidate;
        for r in 0..m {
            track(ax[r], problem.lb_a[r], true, multipliers.a_lower[r]);
            track(ax[r], problem.ub_a[r], false, multipliers.a_upper[r]);
        }
    }
    let dual = multipliers
        .lower
        .iter()
        .chain(multipliers.upper.iter())
        .chain(multipliers.a_lower.iter())
        .chain(multipliers.a_upper.iter())
        .fold(0.0f64, |acc, &mu| acc.max(-mu));
    Ok(KktReport {
        stationarity,
        primal,
        dual,
        complementarity,
    })
}

/// Which side of which problem datum an internal one-sided constraint is.
#[derive(Debug, Clone, Copy)]
enum Source {
    LowerBound(usize),
    UpperBound(usize),
    RowLower(usize),
    RowUpper(usize),
}

struct OneSided {
    a: DVector<f64>,
    b: f64,
    source: Source,
}

fn one_sided_constraints(p: &QpProblem) -> Vec<OneSided> {
    let n = p.n();
    let mut cs = Vec::new();
    for i in 0..n {
        if p.lb[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            cs.push(OneSided {
                a,
                b: p.lb[i],
                source: Source::LowerBound(i),
            });
        }
        if p.ub[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            cs.push(OneSided {
                a,
                b: -p.ub[i],
                source: Source::UpperBound(i),
            });
        }
    }
    for r in 0..p.a.nrows() {
        if p.lb_a[r].is_finite() {
            cs.push(OneSided {
                a: p.a.row(r).transpose(),
                b: p.lb_a[r],
                source: Source::RowLower(r),
            });
        }
        if p.ub_a[r].is_finite() {
            cs.push(OneSided {
                a: -p.a.row(r).transpose(),
                b: -p.ub_a[r],
                source: Source::RowUpper(r),
            });
        }
    }
    cs
}

/// Reusable solver instance. Holds the previous solution as a warm-start
/// hint; the dual method recomputes from scratch, so the hint only serves
/// API compatibility with receding-horizon callers.
#[derive(Debug, Default, Clone)]
pub struct QpSolver {
    pub last_solution: Option<DVector<f64>>,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(
        &mut self,
        problem: &QpProblem,
        tol: f64,
        max_iter: usize,
    ) -> Result<QpSolution, QpError> {
        let sol = solve_inner(problem, tol, max_iter)?;
        if sol.status == QpStatus::Optimal {
            self.last_solution = Some(sol.u_star.clone());
        }
        Ok(sol)
    }
}

/// One-shot solve with the given tolerance and iteration cap.
pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_inner(problem, tol, max_iter)
}

fn objective(p: &QpProblem, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(&p.h * x)) + p.g.dot(x)
}

fn solve_inner(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n();
    let m = problem.a.nrows();

    // Factor H, regularizing if a Cholesky detects semidefiniteness.
    let diag_scale = (0..n).fold(1.0f64, |acc, i| acc.max(problem.h[(i, i)].abs()));
    let mut reg = 0.0;
    let chol = loop {
        let mut h = problem.h.clone();
        if reg > 0.0 {
            for i in 0..n {
                h[(i, i)] += reg;
            }
        }
        match h.cholesky() {
            Some(c) => break c,
            None => {
                if reg == 0.0 {
                    reg = 1e-10 * diag_scale;
                } else if reg < 1e-4 * diag_scale {
                    reg *= 100.0;
                } else {
                    return Err(QpError::NotPositiveSemidefinite);
                }
            }
        }
    };

    let constraints = one_sided_constraints(problem);
    let mut x = -chol.solve(&problem.g);
    let mut active: Vec<usize> = Vec::new();
    let mut u_act: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let feas_tol = (tol * 1e-2).max(1e-13);

    let mut status = QpStatus::Optimal;
    'outer: loop {
        // most violated constraint
        let mut worst = f64::INFINITY;
        let mut pick = None;
        for (j, c) in constraints.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let s = c.a.dot(&x) - c.b;
            let threshold = -feas_tol * (1.0 + c.b.abs());
            if s < threshold && s < worst {
                worst = s;
                pick = Some(j);
            }
        }
        let Some(jstar) = pick else {
            break;
        };
        let a_plus = &constraints[jstar].a;
        let b_plus = constraints[jstar].b;
        let mut u_plus = 0.0f64;

        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
            let d = chol.solve(a_plus);
            let k = active.len();
            let (z, r) = if k == 0 {
                (d.clone(), Vec::new())
            } else {
                let mut nt = DMatrix::zeros(n, k);
                for (col, &idx) in active.iter().enumerate() {
                    nt.set_column(col, &constraints[idx].a);
                }
                let hinv_nt = chol.solve(&nt);
                let mmat = nt.transpose() * &hinv_nt;
                let rhs = nt.transpose() * &d;
                let r = match mmat.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => match mmat.lu().solve(&rhs) {
                        Some(r) => r,
                        None => {
                            status = QpStatus::MaxIterations;
                            break 'outer;
                        }
                    },
                };
                let z = &d - &hinv_nt * &r;
                (z, r.iter().copied().collect::<Vec<f64>>())
            };

            // dual step length: first active multiplier driven to zero
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (i, &ri) in r.iter().enumerate() {
                if ri > 1e-12 {
                    let cand = u_act[i] / ri;
                    if cand < t1 {
                        t1 = cand;
                        drop_idx = Some(i);
                    }
                }
            }
            // primal step length: drive the new constraint to equality
            let ztd = a_plus.dot(&z);
            let z_tol = 1e-13 * a_plus.norm_squared().max(1e-300) / diag_scale.max(1e-300);
            let s_plus = a_plus.dot(&x) - b_plus;
            let t2 = if ztd > z_tol { -s_plus / ztd } else { f64::INFINITY };

            let t = t1.min(t2);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }

            if t2.is_infinite() {
                // dual-only step: the constraint normal lies in the span of
                // the active set; shrink a blocking multiplier and drop it
                for (i, &ri) in r.iter().enumerate() {
                    u_act[i] -= t * ri;
                }
                u_plus += t;
                let di = drop_idx.expect("finite t1 implies a blocking constraint");
                active.remove(di);
                u_act.remove(di);
                continue;
            }

            x += t * &z;
            for (i, &ri) in r.iter().enumerate() {
                u_act[i] -= t * ri;
            }
            u_plus += t;

            if t2 <= t1 {
                active.push(jstar);
                u_act.push(u_plus);
                break;
            }
            let di = drop_idx.expect("t1 < t2 implies a blocking constraint");
            active.remove(di);
            u_act.remove(di);
        }
    }

    // Polish: with the active set fixed, the optimum solves the equality
    // KKT system. Refactor it directly and apply iterative refinement to
    // strip the conditioning error accumulated along the active-set path.
    if status != QpStatus::Infeasible && !active.is_empty() {
        let k = active.len();
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = problem.h[(i, j)];
            }
            kkt[(i, i)] += reg;
        }
        for (col, &idx) in active.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + col)] = -constraints[idx].a[i];
                kkt[(n + col, i)] = constraints[idx].a[i];
            }
        }
        let lu = kkt.clone().lu();
        {
            let mut xk = DVector::zeros(dim);
            xk.rows_mut(0, n).copy_from(&x);
            for (col, &mu) in u_act.iter().enumerate() {
                xk[n + col] = mu;
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&problem.g));
            for (col, &idx) in active.iter().enumerate() {
                rhs[n + col] = constraints[idx].b;
            }
            let mut ok = true;
            for _ in 0..3 {
                let resid = &rhs - &kkt * &xk;
                match lu.solve(&resid) {
                    Some(delta) => xk += delta,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            // accept only if the polished multipliers stay dual feasible
            if ok && (n..dim).all(|i| xk[i] >= -1e-9) {
                x = xk.rows(0, n).into_owned();
                for (col, mu) in u_act.iter_mut().enumerate() {
                    *mu = xk[n + col].max(0.0);
                }
            }
        }
    }

    let mut multipliers = QpMultipliers::zeros(n, m);
    for (&idx, &mu) in active.iter().zip(u_act.iter()) {
        match constraints[idx].source {
            Source::LowerBound(i) => multipliers.lower[i] += mu,
            Source::UpperBound(i) => multipliers.upper[i] += mu,
            Source::RowLower(r) => multipliers.a_lower[r] += mu,
            Source::RowUpper(r) => multipliers.a_upper[r] += mu,
        }
    }
    let kkt = kkt_residuals(problem, &x, &multipliers)?;
    let kkt_residual = kkt.max_residual();
    if status == QpStatus::Optimal && kkt_residual > tol {
        status = QpStatus::MaxIterations;
    }
    Ok(QpSolution {
        objective_value: objective(problem, &x),
        u_star: x,
        kkt_residual,
        status,
        multipliers,
        iterations,
    })
}
