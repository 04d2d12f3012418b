//! Lateral smoothing QP: take the chosen candidate's sampled offsets and
//! minimize bending while staying inside a corridor around them.

use super::qp::{solve_qp, QpProblem};
use super::{PlanError, PlannerConfig};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LateralSolution {
    /// Smoothed offsets on the same grid as the reference.
    pub y: Vec<f64>,
    pub relaxed: bool,
}

/// Smooth `reference` offsets sampled at uniform arc spacing `ds`.
///
/// Objective: (y - r)' (D'D + 1e-8 I) (y - r) with D the second-difference
/// operator, so the unconstrained optimum is the reference itself and any
/// deviation pays in bending. Constraints: the first two samples are pinned
/// (current offset and slope, hard), the rest stay within
/// `corridor_halfwidth_m` of the reference (soft), and second differences are
/// bounded by ds^2 * a_lat_max / v^2 (soft).
pub fn smooth_lateral(
    reference: &[f64],
    ds: f64,
    speed: f64,
    cfg: &PlannerConfig,
) -> Result<LateralSolution, PlanError> {
    let n = reference.len();
    if n < 3 || !(ds > 0.0) {
        return Err(PlanError::BadInput(format!(
            "lateral smoothing needs >= 3 samples at positive spacing, got {n} at {ds}"
        )));
    }
    let r = DVector::from_row_slice(reference);
    let mut d2 = DMatrix::<f64>::zeros(n - 2, n);
    for i in 0..n - 2 {
        d2[(i, i)] = 1.0;
        d2[(i, i + 1)] = -2.0;
        d2[(i, i + 2)] = 1.0;
    }
    let m = d2.transpose() * &d2 + DMatrix::<f64>::identity(n, n) * 1e-8;
    let h = &m * 2.0;
    let g = -2.0 * (&m * &r);

    let kappa_max = cfg.a_lat_max_mps2 / speed.max(1.0).powi(2);
    let dd_bound = ds * ds * kappa_max;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut hard: Vec<bool> = Vec::new();
    let push = |row: DVector<f64>, b: f64, is_hard: bool, rows: &mut Vec<DVector<f64>>, rhs: &mut Vec<f64>, hard: &mut Vec<bool>| {
        rows.push(row);
        rhs.push(b);
        hard.push(is_hard);
    };
    // Pin y_0 and y_1 with paired hard rows.
    for i in 0..2 {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        push(e.clone(), r[i], true, &mut rows, &mut rhs, &mut hard);
        push(-e, -r[i], true, &mut rows, &mut rhs, &mut hard);
    }
    // Corridor around the reference.
    for i in 2..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        push(
            e.clone(),
            r[i] + cfg.corridor_halfwidth_m,
            false,
            &mut rows,
            &mut rhs,
            &mut hard,
        );
        push(
            -e,
            -(r[i] - cfg.corridor_halfwidth_m),
            false,
            &mut rows,
            &mut rhs,
            &mut hard,
        );
    }
    // Curvature proxy: |second difference| <= ds^2 kappa_max.
    for i in 0..n - 2 {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e[i + 1] = -2.0;
        e[i + 2] = 1.0;
        push(e.clone(), dd_bound, false, &mut rows, &mut rhs, &mut hard);
        push(-e, dd_bound, false, &mut rows, &mut rhs, &mut hard);
    }
    let mut a = DMatrix::<f64>::zeros(rows.len(), n);
    for (i, row) in rows.iter().enumerate() {
        a.row_mut(i).copy_from(&row.transpose());
    }
    let mut problem = QpProblem::new(h, g, a, DVector::from_vec(rhs));
    problem.hard = hard;
    let sol = solve_qp(&problem)?;
    Ok(LateralSolution {
        y: sol.x.iter().copied().collect(),
        relaxed: sol.relaxed,
    })
}
