//! Lateral transition splines: three C2-continuous cubic segments taking the
//! lateral offset from its current value/slope to a target shift over a fixed
//! transition length, then holding the shift.

use super::PlanError;
use nalgebra::{DMatrix, DVector};

/// Piecewise-cubic lateral offset profile in arc length.
#[derive(Debug, Clone)]
pub struct LateralSpline {
    /// Coefficients per segment: y(u) = c0 + c1 u + c2 u^2 + c3 u^3 with u
    /// local to the segment start.
    segments: [[f64; 4]; 3],
    knots: [f64; 4],
    pub target: f64,
}

impl LateralSpline {
    /// Fit the transition from state `(y0, dy0)` (offset and d(offset)/ds) to
    /// `target` over `length`, with boundary conditions
    /// y(0)=y0, y'(0)=dy0, y''(0)=0, y(L)=target, y'(L)=0, y''(L)=0
    /// and C2 continuity at the two interior knots L/3 and 2L/3.
    pub fn fit(y0: f64, dy0: f64, target: f64, length: f64) -> Result<Self, PlanError> {
        if !(length > 0.0) || !y0.is_finite() || !dy0.is_finite() || !target.is_finite() {
            return Err(PlanError::BadInput(format!(
                "spline fit y0={y0} dy0={dy0} target={target} length={length}"
            )));
        }
        let l = length / 3.0;
        // Unknowns: 3 segments x 4 coefficients, in segment-local u in [0, l].
        let mut a = DMatrix::<f64>::zeros(12, 12);
        let mut b = DVector::<f64>::zeros(12);
        let val = |u: f64| [1.0, u, u * u, u * u * u];
        let der = |u: f64| [0.0, 1.0, 2.0 * u, 3.0 * u * u];
        let dd = |u: f64| [0.0, 0.0, 2.0, 6.0 * u];
        let mut row = 0;
        let put = |a: &mut DMatrix<f64>, b: &mut DVector<f64>,
                       row: &mut usize,
                       seg: usize,
                       basis: [f64; 4],
                       rhs: f64| {
            for (j, v) in basis.iter().enumerate() {
                a[(*row, 4 * seg + j)] = *v;
            }
            b[*row] = rhs;
            *row += 1;
        };
        // Boundary conditions at s = 0.
        put(&mut a, &mut b, &mut row, 0, val(0.0), y0);
        put(&mut a, &mut b, &mut row, 0, der(0.0), dy0);
        put(&mut a, &mut b, &mut row, 0, dd(0.0), 0.0);
        // Boundary conditions at s = L (end of segment 2).
        put(&mut a, &mut b, &mut row, 2, val(l), target);
        put(&mut a, &mut b, &mut row, 2, der(l), 0.0);
        put(&mut a, &mut b, &mut row, 2, dd(l), 0.0);
        // C2 continuity at the interior knots.
        for seg in 0..2 {
            for basis in [val, der, dd] {
                let left = basis(l);
                let right = basis(0.0);
                for j in 0..4 {
                    a[(row, 4 * seg + j)] = left[j];
                    a[(row, 4 * (seg + 1) + j)] = -right[j];
                }
                b[row] = 0.0;
                row += 1;
            }
        }
        let coeffs = a
            .lu()
            .solve(&b)
            .ok_or_else(|| PlanError::BadInput("singular spline system".into()))?;
        let mut segments = [[0.0; 4]; 3];
        for seg in 0..3 {
            for j in 0..4 {
                segments[seg][j] = coeffs[4 * seg + j];
            }
        }
        Ok(Self {
            segments,
            knots: [0.0, l, 2.0 * l, length],
            target,
        })
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.max(0.0);
        for seg in 0..3 {
            if s <= self.knots[seg + 1] || seg == 2 {
                return (seg, s - self.knots[seg]);
            }
        }
        unreachable!()
    }

    /// Lateral offset at arc distance `s` from the fit origin; holds the
    /// target beyond the transition length.
    pub fn eval(&self, s: f64) -> f64 {
        if s >= self.knots[3] {
            return self.target;
        }
        let (seg, u) = self.locate(s);
        let c = &self.segments[seg];
        c[0] + u * (c[1] + u * (c[2] + u * c[3]))
    }

    pub fn eval_d(&self, s: f64) -> f64 {
        if s >= self.knots[3] {
            return 0.0;
        }
        let (seg, u) = self.locate(s);
        let c = &self.segments[seg];
        c[1] + u * (2.0 * c[2] + 3.0 * u * c[3])
    }

    pub fn eval_dd(&self, s: f64) -> f64 {
        if s >= self.knots[3] {
            return 0.0;
        }
        let (seg, u) = self.locate(s);
        let c = &self.segments[seg];
        2.0 * c[2] + 6.0 * u * c[3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn boundary_conditions_hold() {
        let sp = LateralSpline::fit(0.4, -0.02, 1.5, 20.0).unwrap();
        assert_abs_diff_eq!(sp.eval(0.0), 0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.eval_d(0.0), -0.02, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.eval_dd(0.0), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.eval(20.0), 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.eval_d(19.999_999), 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sp.eval(25.0), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.eval_d(25.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rest_to_rest_transition_is_antisymmetric() {
        // With zero start slope the profile is point-symmetric about the
        // midpoint, so y(L/2) is exactly half the shift.
        let sp = LateralSpline::fit(0.0, 0.0, 1.0, 20.0).unwrap();
        assert_abs_diff_eq!(sp.eval(10.0), 0.5, epsilon = 1e-9);
        for i in 0..=40 {
            let s = i as f64 * 0.5;
            assert_abs_diff_eq!(sp.eval(s) + sp.eval(20.0 - s), 1.0, epsilon = 1e-9);
        }
        // Monotone in between.
        let mut prev = -1e-12;
        for i in 0..=200 {
            let y = sp.eval(i as f64 * 0.1);
            assert!(y >= prev - 1e-9);
            prev = y;
        }
    }

    #[test]
    fn zero_shift_from_centered_state_is_identically_zero() {
        let sp = LateralSpline::fit(0.0, 0.0, 0.0, 20.0).unwrap();
        for i in 0..=60 {
            assert_abs_diff_eq!(sp.eval(i as f64 * 0.5), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn c2_continuity_by_finite_differences() {
        let sp = LateralSpline::fit(-0.8, 0.05, 2.0, 20.0).unwrap();
        let h = 1e-5;
        for knot in [20.0 / 3.0, 40.0 / 3.0] {
            let d_left = (sp.eval(knot) - sp.eval(knot - h)) / h;
            let d_right = (sp.eval(knot + h) - sp.eval(knot)) / h;
            assert_abs_diff_eq!(d_left, d_right, epsilon = 1e-3);
            let dd_left = sp.eval_dd(knot - h);
            let dd_right = sp.eval_dd(knot + h);
            assert_abs_diff_eq!(dd_left, dd_right, epsilon = 1e-3);
        }
        // Analytic derivatives match finite differences everywhere sampled.
        for i in 1..100 {
            let s = i as f64 * 0.2;
            let fd = (sp.eval(s + h) - sp.eval(s - h)) / (2.0 * h);
            assert_abs_diff_eq!(sp.eval_d(s), fd, epsilon = 1e-5);
        }
    }
}
