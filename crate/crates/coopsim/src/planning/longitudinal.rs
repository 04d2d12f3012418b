//! Longitudinal profile QP in jerk space.
//!
//! The decision variables are the K jerk samples; acceleration and velocity
//! are affine images of them, so the discrete dynamics hold exactly by
//! construction and the QP only carries envelope, sign, and actuation
//! constraints.

use super::qp::{solve_qp, QpProblem};
use super::{PlanError, PlannerConfig};
use nalgebra::{DMatrix, DVector};

const W_TRACK: f64 = 1.0;
const W_ACCEL: f64 = 0.05;
const W_JERK: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct LonProfile {
    /// K+1 speeds, m/s.
    pub v: Vec<f64>,
    /// K+1 accelerations, m/s^2.
    pub a: Vec<f64>,
    /// K jerk samples, m/s^3.
    pub j: Vec<f64>,
    /// K+1 arc positions from `s0`, m (exact integral of the profile).
    pub s: Vec<f64>,
    pub relaxed: bool,
    /// True when the QP could not be used and the analytic emergency stop
    /// was substituted.
    pub fallback: bool,
}

/// Exact rollout of the triple integrator from `(s0, v0, a0)` under jerks `j`.
fn rollout(s0: f64, v0: f64, a0: f64, j: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = j.len();
    let mut s = Vec::with_capacity(k + 1);
    let mut v = Vec::with_capacity(k + 1);
    let mut a = Vec::with_capacity(k + 1);
    s.push(s0);
    v.push(v0);
    a.push(a0);
    for &jk in j {
        let (sk, vk, ak) = (*s.last().unwrap(), *v.last().unwrap(), *a.last().unwrap());
        s.push(sk + vk * dt + 0.5 * ak * dt * dt + jk * dt * dt * dt / 6.0);
        v.push(vk + ak * dt + 0.5 * jk * dt * dt);
        a.push(ak + jk * dt);
    }
    (s, v, a)
}

/// Jerk-limited hard-braking profile used when the QP cannot run. Ramps the
/// acceleration to -a_max at the jerk limit and clamps at standstill; the
/// jerk bound may be exceeded on the single tick where the clamp lands.
pub fn emergency_stop_profile(
    s0: f64,
    v0: f64,
    a0: f64,
    steps: usize,
    cfg: &PlannerConfig,
) -> LonProfile {
    let dt = cfg.dt_s;
    let mut s = vec![s0];
    let mut v = vec![v0.max(0.0)];
    let mut a = vec![a0];
    let mut j = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (sk, vk, ak) = (*s.last().unwrap(), *v.last().unwrap(), *a.last().unwrap());
        if vk <= 1e-9 {
            j.push(0.0);
            s.push(sk);
            v.push(0.0);
            a.push(0.0);
            continue;
        }
        let mut jk = ((-cfg.a_max_mps2 - ak) / dt).clamp(-cfg.j_max_mps3, cfg.j_max_mps3);
        let mut vn = vk + ak * dt + 0.5 * jk * dt * dt;
        if vn < 0.0 {
            // Land exactly on zero this tick.
            jk = -2.0 * (vk + ak * dt) / (dt * dt);
            vn = 0.0;
        }
        j.push(jk);
        s.push(sk + vk * dt + 0.5 * ak * dt * dt + jk * dt * dt * dt / 6.0);
        v.push(vn);
        a.push(if vn == 0.0 { 0.0 } else { ak + jk * dt });
    }
    LonProfile {
        v,
        a,
        j,
        s,
        relaxed: false,
        fallback: true,
    }
}

/// Solve for the speed profile tracking `envelope` (K+1 samples) from state
/// `(v0, a0)` at position `s0`.
pub fn plan_longitudinal(
    s0: f64,
    v0: f64,
    a0: f64,
    envelope: &[f64],
    cfg: &PlannerConfig,
) -> Result<LonProfile, PlanError> {
    let k = cfg.horizon_steps;
    if envelope.len() != k + 1 {
        return Err(PlanError::BadInput(format!(
            "envelope has {} samples, horizon wants {}",
            envelope.len(),
            k + 1
        )));
    }
    let dt = cfg.dt_s;
    // Deep-stop shortcut: standing still with nothing allowed ahead.
    if v0 < 0.05 && envelope[0] < 0.05 && a0.abs() < 0.05 {
        return Ok(LonProfile {
            v: vec![0.0; k + 1],
            a: vec![0.0; k + 1],
            j: vec![0.0; k],
            s: vec![s0; k + 1],
            relaxed: false,
            fallback: false,
        });
    }
    // A hard v >= 0 row set is infeasible when the in-flight deceleration
    // cannot be unwound before the speed crosses zero; brake out analytically.
    if a0 < 0.0 && v0 < a0 * a0 / (2.0 * cfg.j_max_mps3) {
        return Ok(emergency_stop_profile(s0, v0, a0, k, cfg));
    }

    // v_k = v0 + a0 k dt + dt^2 sum_{i<k} (k - i - 1/2) j_i
    // a_k = a0 + dt sum_{i<k} j_i
    let mut mv = DMatrix::<f64>::zeros(k + 1, k);
    let mut ma = DMatrix::<f64>::zeros(k + 1, k);
    for row in 1..=k {
        for i in 0..row {
            mv[(row, i)] = dt * dt * (row as f64 - i as f64 - 0.5);
            ma[(row, i)] = dt;
        }
    }
    let vb = DVector::from_fn(k + 1, |r, _| v0 + a0 * r as f64 * dt);
    let ab = DVector::from_element(k + 1, a0);
    let env = DVector::from_row_slice(envelope);

    let h = (mv.transpose() * &mv) * (2.0 * W_TRACK)
        + (ma.transpose() * &ma) * (2.0 * W_ACCEL)
        + DMatrix::<f64>::identity(k, k) * (2.0 * W_JERK);
    let g = mv.transpose() * (&vb - &env) * (2.0 * W_TRACK) + ma.transpose() * &ab * (2.0 * W_ACCEL);

    let mut rows = DMatrix::<f64>::zeros(4 * k + 2 * k, k);
    let mut rhs = DVector::<f64>::zeros(4 * k + 2 * k);
    let mut hard = vec![false; 4 * k + 2 * k];
    let mut r = 0;
    for row in 1..=k {
        // v_row <= env_row (soft)
        rows.row_mut(r).copy_from(&mv.row(row));
        rhs[r] = env[row] - vb[row];
        r += 1;
        // -v_row <= 0 (hard)
        rows.row_mut(r).copy_from(&(-mv.row(row)));
        rhs[r] = vb[row];
        hard[r] = true;
        r += 1;
        // a_row <= a_max, -a_row <= a_max (hard)
        rows.row_mut(r).copy_from(&ma.row(row));
        rhs[r] = cfg.a_max_mps2 - ab[row];
        hard[r] = true;
        r += 1;
        rows.row_mut(r).copy_from(&(-ma.row(row)));
        rhs[r] = cfg.a_max_mps2 + ab[row];
        hard[r] = true;
        r += 1;
    }
    for i in 0..k {
        // Jerk box bounds (hard, never slacked).
        rows[(r, i)] = 1.0;
        rhs[r] = cfg.j_max_mps3;
        hard[r] = true;
        r += 1;
        rows[(r, i)] = -1.0;
        rhs[r] = cfg.j_max_mps3;
        hard[r] = true;
        r += 1;
    }
    debug_assert_eq!(r, rows.nrows());
    let mut problem = QpProblem::new(h, g, rows, rhs);
    problem.hard = hard;
    let sol = match solve_qp(&problem) {
        Ok(s) => s,
        Err(_) => return Ok(emergency_stop_profile(s0, v0, a0, k, cfg)),
    };
    let j: Vec<f64> = sol.x.iter().copied().collect();
    let (s, v, a) = rollout(s0, v0, a0, &j, dt);
    if v.iter().any(|&x| x < -1e-6) {
        return Ok(emergency_stop_profile(s0, v0, a0, k, cfg));
    }
    Ok(LonProfile {
        v,
        a,
        j,
        s,
        relaxed: sol.relaxed,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> PlannerConfig {
        PlannerConfig::default()
    }

    #[test]
    fn cruise_at_envelope_is_exact_and_jerk_free() {
        let cfg = cfg();
        let env = vec![10.0; cfg.horizon_steps + 1];
        let p = plan_longitudinal(0.0, 10.0, 0.0, &env, &cfg).unwrap();
        assert!(!p.fallback && !p.relaxed);
        for &v in &p.v {
            assert_abs_diff_eq!(v, 10.0, epsilon = 1e-6);
        }
        for &j in &p.j {
            assert_abs_diff_eq!(j, 0.0, epsilon = 1e-5);
        }
        // Distance covered: 10 m/s for 5 s.
        assert_abs_diff_eq!(*p.s.last().unwrap(), 50.0, epsilon = 1e-4);
    }

    #[test]
    fn accelerates_toward_raised_envelope_within_limits() {
        let cfg = cfg();
        let env = vec![15.0; cfg.horizon_steps + 1];
        let p = plan_longitudinal(0.0, 5.0, 0.0, &env, &cfg).unwrap();
        assert!(!p.fallback);
        assert!(*p.v.last().unwrap() >= 14.0, "final v {}", p.v.last().unwrap());
        for w in p.v.windows(2) {
            // The optimum may kiss the envelope with a sub-mm/s dip while
            // acceleration decays; only real dips should fail.
            assert!(w[1] >= w[0] - 1e-3, "speed dipped while chasing envelope");
        }
        for &a in &p.a {
            assert!(a.abs() <= cfg.a_max_mps2 + 1e-6);
        }
        for &j in &p.j {
            assert!(j.abs() <= cfg.j_max_mps3 + 1e-6);
        }
    }

    #[test]
    fn brakes_for_envelope_ramp_to_zero() {
        let cfg = cfg();
        // Envelope walks down a braking parabola to a stop 25 m out,
        // evaluated on the constant-speed prediction grid.
        let env: Vec<f64> = (0..=cfg.horizon_steps)
            .map(|k| {
                let s_hat = 10.0 * k as f64 * cfg.dt_s;
                let rem: f64 = (25.0 - s_hat).max(0.0);
                (2.0 * cfg.a_max_mps2 * rem).sqrt().min(10.0)
            })
            .collect();
        let p = plan_longitudinal(0.0, 10.0, 0.0, &env, &cfg).unwrap();
        assert!(!p.fallback);
        assert!(*p.v.last().unwrap() <= 1.0, "final v {}", p.v.last().unwrap());
        // The time-indexed envelope demands a stop by t = 2.5 s, which jerk
        // limits cannot deliver from 10 m/s (soft rows take slack); the hard
        // guarantee is spatial: at the actual arc position, speed stays
        // inside the braking parabola to the 25 m stop point.
        for (k, &v) in p.v.iter().enumerate() {
            let rem: f64 = (25.0 - p.s[k]).max(0.0);
            let spatial = (2.0 * cfg.a_max_mps2 * rem).sqrt();
            assert!(
                v <= spatial + 0.5,
                "v {} breaks spatial envelope {} at k={k} (s {})",
                v,
                spatial,
                p.s[k]
            );
            assert!(v >= -1e-6);
        }
        assert!(*p.s.last().unwrap() <= 25.0 + 0.5);
    }

    #[test]
    fn dynamics_hold_exactly() {
        let cfg = cfg();
        let env: Vec<f64> = (0..=cfg.horizon_steps)
            .map(|k| 8.0 + 4.0 * (k as f64 * 0.04).sin())
            .collect();
        let p = plan_longitudinal(3.0, 6.0, 0.5, &env, &cfg).unwrap();
        let dt = cfg.dt_s;
        for k in 0..cfg.horizon_steps {
            let a_next = p.a[k] + p.j[k] * dt;
            let v_next = p.v[k] + p.a[k] * dt + 0.5 * p.j[k] * dt * dt;
            let s_next = p.s[k] + p.v[k] * dt + 0.5 * p.a[k] * dt * dt + p.j[k] * dt.powi(3) / 6.0;
            assert_abs_diff_eq!(p.a[k + 1], a_next, epsilon = 1e-9);
            assert_abs_diff_eq!(p.v[k + 1], v_next, epsilon = 1e-9);
            assert_abs_diff_eq!(p.s[k + 1], s_next, epsilon = 1e-9);
        }
    }

    #[test]
    fn emergency_profile_stops_and_stays() {
        let cfg = cfg();
        let p = emergency_stop_profile(0.0, 8.0, 0.0, 60, &cfg);
        assert!(p.fallback);
        let stop_idx = p.v.iter().position(|&v| v == 0.0).expect("must stop");
        // 8 m/s at 3 m/s^2 takes ~2.7 s plus jerk ramp-in.
        assert!(stop_idx as f64 * cfg.dt_s <= 3.6);
        for &v in &p.v[stop_idx..] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let s_stop = p.s[stop_idx];
        // Stopping distance near v^2/(2a) = 10.7 m plus jerk allowance.
        assert!(s_stop > 9.0 && s_stop < 15.0, "stop at {s_stop}");
    }

    #[test]
    fn standstill_with_zero_envelope_holds() {
        let cfg = cfg();
        let env = vec![0.0; cfg.horizon_steps + 1];
        let p = plan_longitudinal(5.0, 0.0, 0.0, &env, &cfg).unwrap();
        assert!(p.v.iter().all(|&v| v == 0.0));
        assert!(p.s.iter().all(|&s| s == 5.0));
    }
}
