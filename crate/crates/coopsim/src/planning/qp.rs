//! Dense convex QP solver used by both planner stages.
//!
//! Minimizes 0.5 x'Hx + g'x subject to Ax <= b for strictly convex H, with a
//! primal-infeasible active-set scheme: start at the unconstrained minimum,
//! repeatedly add the most violated constraint and drop the most negative
//! multiplier, re-solving the equality-constrained KKT system each step. A
//! final KKT residual check gates every answer; if the strict problem cannot
//! be certified, soft rows are relaxed with quadratic-penalty slacks and the
//! solve retried. Rows marked hard (variable box bounds) are never slacked.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Certification gate on the scaled KKT residual. Sits an order of magnitude
/// above what double-precision LU attains on the worst-conditioned problems we
/// pose (penalty-relaxed solves carry a 1e4 scale factor), so a certified
/// answer means "solved to numerical accuracy", not "got lucky".
pub const KKT_TOLERANCE: f64 = 1e-5;
pub const SLACK_PENALTY: f64 = 1e4;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("active-set iteration limit {0} exceeded")]
    IterationLimit(usize),
    #[error("KKT residual {residual:.3e} exceeds tolerance even after slack relaxation")]
    NotCertified { residual: f64 },
}

/// Inequality-constrained QP: 0.5 x'Hx + g'x, rows a_i'x <= b_i.
///
/// `hard[i]` marks rows that must never be given slack (bounds on the
/// decision variables themselves). Equalities are expressed as paired
/// opposing hard rows.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub hard: Vec<bool>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let m = a.nrows();
        Self {
            h,
            g,
            a,
            b,
            hard: vec![false; m],
        }
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.h.nrows();
        if self.h.ncols() != n || self.g.len() != n {
            return Err(QpError::Dimensions(format!(
                "H {}x{}, g {}",
                self.h.nrows(),
                self.h.ncols(),
                self.g.len()
            )));
        }
        if self.a.nrows() != self.b.len() || (self.a.nrows() > 0 && self.a.ncols() != n) {
            return Err(QpError::Dimensions(format!(
                "A {}x{}, b {}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.hard.len() != self.a.nrows() {
            return Err(QpError::Dimensions("hard mask length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers per constraint row (zero for inactive rows).
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// True when the strict problem failed certification and soft rows were
    /// relaxed with penalty slacks.
    pub relaxed: bool,
    /// Largest slack used in the relaxed solve (0 when `relaxed` is false).
    pub max_slack: f64,
}

/// Worst KKT violation of `(x, lambda)` for `p`: stationarity, primal
/// feasibility, dual feasibility, and complementary slackness, as a scaled
/// infinity norm. Each component is normalized by the magnitude of its own
/// terms (never below 1), so the certificate is meaningful both for O(1)
/// problems and for penalty-scaled ones whose multipliers are legitimately
/// large.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let hx = &p.h * x;
    let atl = p.a.transpose() * lambda;
    let stat = &hx + &p.g + &atl;
    let stat_scale = 1.0f64.max(hx.amax()).max(p.g.amax()).max(atl.amax());
    let mut r: f64 = stat.amax() / stat_scale;
    if p.a.nrows() > 0 {
        let ax = &p.a * x;
        let prim_scale = 1.0f64.max(ax.amax()).max(p.b.amax());
        let dual_scale = 1.0f64.max(lambda.amax());
        for i in 0..p.b.len() {
            let s = ax[i] - p.b[i];
            r = r.max(s / prim_scale); // primal: a_i'x - b_i <= 0
            r = r.max(-lambda[i] / dual_scale); // dual: lambda_i >= 0
            // Complementarity as a primal-units distance: |s_i| when the
            // multiplier is large, |lambda_i s_i| when it is small.
            r = r.max((lambda[i] * s).abs() / (1.0 + lambda[i].abs()));
        }
    }
    r
}

/// Factored equality-constrained KKT solver. With H = LL' fixed, each active
/// set is solved through the Schur complement S = A_W H^-1 A_W', reusing
/// cached back-solves w_i = H^-1 a_i per constraint row.
struct KktContext<'a> {
    p: &'a QpProblem,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Unconstrained minimizer -H^-1 g.
    x_free: DVector<f64>,
    w_cache: Vec<Option<DVector<f64>>>,
}

impl<'a> KktContext<'a> {
    fn new(p: &'a QpProblem) -> Option<Self> {
        let chol = p.h.clone().cholesky()?;
        let x_free = chol.solve(&(-&p.g));
        Some(Self {
            p,
            chol,
            x_free,
            w_cache: vec![None; p.a.nrows()],
        })
    }

    fn w(&mut self, i: usize) -> DVector<f64> {
        if self.w_cache[i].is_none() {
            let ai = self.p.a.row(i).transpose();
            self.w_cache[i] = Some(self.chol.solve(&ai));
        }
        self.w_cache[i].clone().unwrap()
    }

    fn schur(&mut self, active: &[usize]) -> (Vec<DVector<f64>>, DMatrix<f64>) {
        let m = active.len();
        let ws: Vec<DVector<f64>> = active.iter().map(|&i| self.w(i)).collect();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for (r, &i) in active.iter().enumerate() {
            let ai = self.p.a.row(i);
            for (c, wq) in ws.iter().enumerate() {
                s[(r, c)] = (ai * wq)[(0, 0)];
            }
        }
        (ws, s)
    }

    fn solve(&mut self, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let m = active.len();
        let mut lambda = DVector::<f64>::zeros(self.p.a.nrows());
        if m == 0 {
            return Some((self.x_free.clone(), lambda));
        }
        let (ws, s) = self.schur(active);
        let mut rhs = DVector::<f64>::zeros(m);
        for (r, &i) in active.iter().enumerate() {
            rhs[r] = (self.p.a.row(i) * &self.x_free)[(0, 0)] - self.p.b[i];
        }
        let lam_active = s.clone().lu().solve(&rhs)?;
        // Reject solves wrecked by near-singular S (dependent active rows).
        let residual = &s * &lam_active - &rhs;
        if residual.amax() > 1e-7 * (1.0 + rhs.amax()) {
            return None;
        }
        let mut x = self.x_free.clone();
        for (k, wq) in ws.iter().enumerate() {
            x.axpy(-lam_active[k], wq, 1.0);
        }
        for (k, &i) in active.iter().enumerate() {
            lambda[i] = lam_active[k];
        }
        Some((x, lambda))
    }

    /// Step directions for driving row `c` into working set `active`:
    /// dual direction `u` (how active multipliers fall as lambda_c rises)
    /// and primal direction `z` with Hz = a_c - A_W' u. `None` when the
    /// active-set Schur system is singular.
    fn directions(&mut self, active: &[usize], c: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        let wc = self.w(c);
        if active.is_empty() {
            return Some((DVector::zeros(0), wc));
        }
        let (ws, s) = self.schur(active);
        let mut awc = DVector::<f64>::zeros(active.len());
        for (r, &i) in active.iter().enumerate() {
            awc[r] = (self.p.a.row(i) * &wc)[(0, 0)];
        }
        let u = s.lu().solve(&awc)?;
        let mut z = wc.clone();
        for (k, wq) in ws.iter().enumerate() {
            z.axpy(-u[k], wq, 1.0);
        }
        Some((u, z))
    }
}

/// Direct dense KKT solve for one fixed active set; the test-side oracle
/// enumerates active sets through this.
#[cfg(test)]
fn solve_with_active_set(
    p: &QpProblem,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut ctx = KktContext::new(p)?;
    ctx.solve(active)
}

fn active_set_iterate(p: &QpProblem, cap: usize) -> Result<(QpSolution, bool), QpError> {
    // Strict convexity gate: Cholesky must succeed.
    let Some(mut ctx) = KktContext::new(p) else {
        return Err(QpError::NotPositiveDefinite);
    };
    let m_total = p.a.nrows();
    let mut x = ctx.x_free.clone();
    let mut lambda = DVector::<f64>::zeros(m_total);
    let mut active: Vec<usize> = Vec::new();
    let mut iters = 0usize;

    // Incremental updates drift over many steps; re-solving the equality
    // KKT system on the final working set polishes the answer before the
    // residual gate.
    fn finish(
        p: &QpProblem,
        ctx: &mut KktContext,
        active: &[usize],
        mut x: DVector<f64>,
        mut lambda: DVector<f64>,
        iters: usize,
        ok_hint: bool,
    ) -> (QpSolution, bool) {
        if let Some((px, plam)) = ctx.solve(active) {
            if kkt_residual(p, &px, &plam) < kkt_residual(p, &x, &lambda) {
                x = px;
                lambda = plam;
            }
        }
        let res = kkt_residual(p, &x, &lambda);
        (
            QpSolution {
                x,
                lambda,
                iterations: iters,
                kkt_residual: res,
                relaxed: false,
                max_slack: 0.0,
            },
            ok_hint && res <= KKT_TOLERANCE,
        )
    }

    'outer: loop {
        // Hygiene: retire any multiplier that drifted negative.
        while let Some(k) = (0..active.len())
            .filter(|&k| lambda[active[k]] < -KKT_TOLERANCE)
            .min_by(|&a, &b| lambda[active[a]].total_cmp(&lambda[active[b]]))
        {
            lambda[active[k]] = 0.0;
            active.remove(k);
        }
        // Most violated constraint enters next.
        let mut worst_v = KKT_TOLERANCE;
        let mut incoming = None;
        for i in 0..m_total {
            if active.contains(&i) {
                continue;
            }
            let v = (p.a.row(i) * &x)[(0, 0)] - p.b[i];
            if v > worst_v {
                worst_v = v;
                incoming = Some(i);
            }
        }
        let Some(c) = incoming else {
            return Ok(finish(p, &mut ctx, &active, x, lambda, iters, true));
        };
        // Drive c into the working set: primal step toward tightness, dual
        // ratio test dropping any blocking constraint whose multiplier hits
        // zero first, repeating with the same incoming row.
        loop {
            iters += 1;
            if iters > cap {
                return Ok(finish(p, &mut ctx, &active, x, lambda, iters, false));
            }
            let Some((u, z)) = ctx.directions(&active, c) else {
                // Singular working set; retire the most recent addition.
                match active.pop() {
                    Some(i) => {
                        lambda[i] = 0.0;
                        continue;
                    }
                    None => return Err(QpError::IterationLimit(iters)),
                }
            };
            let along = (p.a.row(c) * &z)[(0, 0)];
            let viol = (p.a.row(c) * &x)[(0, 0)] - p.b[c];
            if viol <= KKT_TOLERANCE {
                // Tightened by an intervening drop; move on.
                continue 'outer;
            }
            // Full primal step: violation removed entirely.
            let t_full = if along > 1e-12 {
                viol / along
            } else {
                f64::INFINITY
            };
            // Dual block: first active multiplier to reach zero.
            let mut block: Option<(usize, f64)> = None;
            for (k, &i) in active.iter().enumerate() {
                if u[k] > 1e-12 {
                    let ratio = lambda[i] / u[k];
                    if block.map_or(true, |(_, r)| ratio < r) {
                        block = Some((k, ratio));
                    }
                }
            }
            let t_block = block.map_or(f64::INFINITY, |(_, r)| r);
            if !t_full.is_finite() && !t_block.is_finite() {
                // Constraint irreconcilable with the working set (infeasible
                // direction); hand off to the relaxation path.
                return Ok(finish(p, &mut ctx, &active, x, lambda, iters, false));
            }
            let t = t_full.min(t_block);
            if t > 0.0 && along > 1e-12 {
                x.axpy(-t, &z, 1.0);
            }
            for (k, &i) in active.iter().enumerate() {
                lambda[i] -= t * u[k];
            }
            lambda[c] += t;
            if t_block < t_full {
                let (k, _) = block.unwrap();
                lambda[active[k]] = 0.0;
                active.remove(k);
                // Same incoming row, reduced working set.
            } else {
                active.push(c);
                continue 'outer;
            }
        }
    }
}

/// Build the slack-relaxed problem: one nonnegative slack per soft row with
/// quadratic penalty, soft rows become a_i'x - eps_i <= b_i.
fn relaxed_problem(p: &QpProblem) -> (QpProblem, Vec<usize>) {
    let n = p.h.nrows();
    let soft: Vec<usize> = (0..p.a.nrows()).filter(|&i| !p.hard[i]).collect();
    let ns = soft.len();
    let mut h = DMatrix::<f64>::zeros(n + ns, n + ns);
    h.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for k in 0..ns {
        h[(n + k, n + k)] = 2.0 * SLACK_PENALTY;
    }
    let mut g = DVector::<f64>::zeros(n + ns);
    g.rows_mut(0, n).copy_from(&p.g);
    let m = p.a.nrows();
    let mut a = DMatrix::<f64>::zeros(m + ns, n + ns);
    let mut b = DVector::<f64>::zeros(m + ns);
    a.view_mut((0, 0), (m, n)).copy_from(&p.a);
    b.rows_mut(0, m).copy_from(&p.b);
    for (k, &i) in soft.iter().enumerate() {
        a[(i, n + k)] = -1.0; // a_i'x - eps_k <= b_i
        a[(m + k, n + k)] = -1.0; // eps_k >= 0
        b[m + k] = 0.0;
    }
    let mut hard = p.hard.clone();
    hard.extend(std::iter::repeat(true).take(ns));
    (QpProblem { h, g, a, b, hard }, soft)
}

/// Solve a strictly convex inequality-constrained QP.
///
/// The returned solution always certifies: `kkt_residual <= 1e-6` against the
/// problem actually solved (the strict one, or the slack-relaxed one when
/// `relaxed` is set).
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.check()?;
    let cap = 100 + 10 * (p.h.nrows() + p.a.nrows());
    match active_set_iterate(p, cap) {
        Ok((sol, true)) => return Ok(sol),
        Ok((_, false)) => {}
        Err(QpError::NotPositiveDefinite) => return Err(QpError::NotPositiveDefinite),
        Err(_) => {}
    }
    // Strict problem not certified: relax soft rows.
    let (rp, soft) = relaxed_problem(p);
    let (sol, ok) = active_set_iterate(&rp, 100 + 10 * (rp.h.nrows() + rp.a.nrows()))?;
    if !ok {
        return Err(QpError::NotCertified {
            residual: sol.kkt_residual,
        });
    }
    let n = p.h.nrows();
    let max_slack = (0..soft.len())
        .map(|k| sol.x[n + k])
        .fold(0.0f64, f64::max);
    Ok(QpSolution {
        x: sol.x.rows(0, n).into_owned(),
        lambda: sol.lambda.rows(0, p.a.nrows()).into_owned(),
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        relaxed: true,
        max_slack,
    })
}
