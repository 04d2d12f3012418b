//! Hierarchical planner: lateral candidate selection, velocity envelope, and
//! the two QP smoothing stages, composed by [`plan_step`].

pub mod cost;
pub mod envelope;
pub mod lateral;
pub mod longitudinal;
pub mod qp;
pub mod spline;

pub use cost::{CandidateEval, Obstacle};
pub use longitudinal::LonProfile;
pub use qp::{QpError, QpProblem, QpSolution};
pub use spline::LateralSpline;

use crate::geom::wrap_angle;
use crate::scenario::RouteMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("bad planner input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Planner constants; every scenario file can override them in a `[planner]`
/// table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub candidate_shifts_m: Vec<f64>,
    pub transition_length_m: f64,
    pub w_d: f64,
    pub w_c: f64,
    pub d_min_m: f64,
    pub behavior_horizon_m: f64,
    pub a_max_mps2: f64,
    pub a_lat_max_mps2: f64,
    pub j_max_mps3: f64,
    pub horizon_steps: usize,
    pub dt_s: f64,
    pub corridor_halfwidth_m: f64,
    /// Disc centers along the ego's heading used for clearance evaluation;
    /// the body is covered by discs of `ego_disc_radius_m` at these offsets.
    pub ego_disc_offsets_m: Vec<f64>,
    /// Radius of each body-cover disc. Clearance to an obstacle is the
    /// nearest disc-center distance minus this radius, so `d_min_m` measures
    /// body-to-obstacle gap rather than centerline-to-obstacle gap.
    pub ego_disc_radius_m: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            candidate_shifts_m: vec![-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
            transition_length_m: 20.0,
            w_d: 1.0,
            w_c: 50.0,
            d_min_m: 1.5,
            behavior_horizon_m: 60.0,
            a_max_mps2: 3.0,
            a_lat_max_mps2: 2.0,
            j_max_mps3: 5.0,
            horizon_steps: 50,
            dt_s: 0.1,
            corridor_halfwidth_m: 0.5,
            // Two discs cover a 4.5 x 1.9 m box: centers at +-L/4, radius
            // sqrt((L/4)^2 + (W/2)^2) = 1.4724, rounded up.
            ego_disc_offsets_m: vec![-1.125, 1.125],
            ego_disc_radius_m: 1.48,
        }
    }
}

/// Ego state in route coordinates as the planner consumes it.
#[derive(Debug, Clone, Copy)]
pub struct EgoPlanState {
    /// Arc position along the route, m.
    pub s: f64,
    /// Lateral offset from the centerline, m.
    pub lateral: f64,
    /// d(lateral)/ds.
    pub lateral_rate: f64,
    /// Speed along the path, m/s.
    pub v: f64,
    /// Longitudinal acceleration, m/s^2.
    pub a: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t_s: f64,
    pub s_m: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub yaw_rad: f64,
    pub lateral_m: f64,
    pub v_mps: f64,
    pub a_mps2: f64,
    pub j_mps3: f64,
}

/// Planned motion over the horizon: K+1 samples at `dt_s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
}

/// Per-tick planner diagnostics.
#[derive(Debug, Clone)]
pub struct PlanDebug {
    pub candidates: Vec<CandidateEval>,
    pub chosen_shift: f64,
    pub s_conf: Option<f64>,
    pub stop_targets: Vec<f64>,
    /// Prediction-grid arc positions the envelope was sampled on.
    pub envelope_s: Vec<f64>,
    /// Velocity envelope samples on that grid.
    pub envelope_v: Vec<f64>,
    pub lateral_relaxed: bool,
    pub lon_relaxed: bool,
    pub lon_fallback: bool,
}

/// One full planning cycle.
///
/// Behavior: fit one transition spline per configured shift, score deviation
/// and weighted clearance along the route, keep the cheapest. Envelope: map
/// speed limits, curvature, and braking distance to conflict points and stop
/// lines, sampled on the constant-speed prediction grid. Motion: lateral
/// smoothing QP on the candidate, then the jerk-space longitudinal QP against
/// the envelope.
pub fn plan_step(
    route: &RouteMap,
    ego: &EgoPlanState,
    obstacles: &[Obstacle],
    now_s: f64,
    cfg: &PlannerConfig,
) -> Result<(Trajectory, PlanDebug), PlanError> {
    let path = &route.path;
    if !ego.s.is_finite() || !ego.v.is_finite() {
        return Err(PlanError::BadInput(format!("ego state {ego:?}")));
    }
    if cfg.ego_disc_offsets_m.is_empty() || cfg.ego_disc_radius_m < 0.0 {
        return Err(PlanError::BadInput(
            "ego disc cover needs at least one offset and a non-negative radius".to_string(),
        ));
    }
    let s0 = ego.s.clamp(0.0, path.total_length);
    let (spline, chosen, candidates) = cost::choose_candidate(
        route,
        ego.lateral,
        ego.lateral_rate,
        s0,
        ego.v,
        now_s,
        obstacles,
        cfg,
    )?;

    // Stop targets: the chosen candidate's first conflict plus any stop line
    // within the behavior horizon.
    let mut stop_targets: Vec<f64> = Vec::new();
    if let Some(sc) = chosen.s_conf {
        stop_targets.push(sc);
    }
    for &sl in &route.stoplines_s {
        if sl > s0 && sl <= s0 + cfg.behavior_horizon_m {
            stop_targets.push(sl);
        }
    }

    // Prediction grid at the current speed (with a floor so a stopped car
    // still looks ahead).
    let k = cfg.horizon_steps;
    let v_hat = ego.v.max(1.0);
    let s_hat: Vec<f64> = (0..=k)
        .map(|i| (s0 + v_hat * i as f64 * cfg.dt_s).min(path.total_length))
        .collect();
    let v_map: Vec<f64> = s_hat.iter().map(|&s| route.speed_limit_at(s)).collect();
    let kappa: Vec<f64> = s_hat.iter().map(|&s| path.curvature_at(s)).collect();
    let env = envelope::velocity_envelope(
        &s_hat,
        &v_map,
        &kappa,
        &stop_targets,
        cfg.a_max_mps2,
        cfg.a_lat_max_mps2,
    );

    // Lateral smoothing on the prediction grid; a slow vehicle holds its
    // offset (no arc progress to smooth over).
    let ds_hat = v_hat * cfg.dt_s;
    let reference: Vec<f64> = s_hat.iter().map(|&s| spline.eval(s - s0)).collect();
    let (lat_y, lateral_relaxed) = if ego.v >= 0.5 {
        let sol = lateral::smooth_lateral(&reference, ds_hat, ego.v, cfg)?;
        (sol.y, sol.relaxed)
    } else {
        (vec![ego.lateral; k + 1], false)
    };

    let lon = longitudinal::plan_longitudinal(s0, ego.v.max(0.0), ego.a, &env, cfg)?;

    // Assemble: actual arc positions from the longitudinal profile, lateral
    // offsets interpolated from the prediction grid.
    let lat_at = |s: f64| -> f64 {
        if s <= s_hat[0] {
            return lat_y[0];
        }
        if s >= s_hat[k] {
            return lat_y[k];
        }
        let i = ((s - s_hat[0]) / ds_hat.max(1e-9)).floor() as usize;
        let i = i.min(k - 1);
        let t = ((s - s_hat[i]) / (s_hat[i + 1] - s_hat[i]).max(1e-9)).clamp(0.0, 1.0);
        lat_y[i] * (1.0 - t) + lat_y[i + 1] * t
    };
    let mut points = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let s = lon.s[i].min(path.total_length);
        let y = lat_at(s);
        let p = path.offset_at(s, y);
        let (_, heading) = path.interpolate(s);
        // Heading correction from the lateral slope.
        let dy_ds = if i + 1 <= k {
            let s2 = lon.s[(i + 1).min(k)].min(path.total_length);
            if s2 > s + 1e-9 {
                (lat_at(s2) - y) / (s2 - s)
            } else {
                0.0
            }
        } else {
            0.0
        };
        points.push(TrajPoint {
            t_s: now_s + i as f64 * cfg.dt_s,
            s_m: s,
            x_m: p.x,
            y_m: p.y,
            yaw_rad: wrap_angle(heading + dy_ds.atan()),
            lateral_m: y,
            v_mps: lon.v[i],
            a_mps2: lon.a[i],
            j_mps3: lon.j.get(i).copied().unwrap_or(0.0),
        });
    }
    Ok((
        Trajectory { points },
        PlanDebug {
            candidates,
            chosen_shift: chosen.shift,
            s_conf: chosen.s_conf,
            stop_targets,
            envelope_s: s_hat,
            envelope_v: env,
            lateral_relaxed,
            lon_relaxed: lon.relaxed,
            lon_fallback: lon.fallback,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::object::{ObjectClass, ObjectState};
    use crate::path::ArcLengthPath;

    fn straight_route(len: f64) -> RouteMap {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(len, 0.0)];
        RouteMap {
            path: ArcLengthPath::from_polyline(&pts, 0.5).unwrap(),
            speed_limits: vec![(0.0, len, 13.9)],
            stoplines_s: vec![],
        }
    }

    fn ego(v: f64) -> EgoPlanState {
        EgoPlanState {
            s: 0.0,
            lateral: 0.0,
            lateral_rate: 0.0,
            v,
            a: 0.0,
        }
    }

    fn parked(x: f64, y: f64) -> Obstacle {
        Obstacle {
            state: ObjectState {
                center_x: x,
                center_y: y,
                center_z: 0.8,
                length: 4.5,
                width: 1.9,
                height: 1.6,
                yaw: 0.0,
                vel_x: 0.0,
                vel_y: 0.0,
                class_id: ObjectClass::Vehicle,
                confidence: 1.0,
                timestamp_us: 0,
                source_id: 0,
            },
            weight: 1.0,
        }
    }

    #[test]
    fn open_road_plan_cruises_at_limit() {
        let route = straight_route(200.0);
        let cfg = PlannerConfig::default();
        let (traj, dbg) = plan_step(&route, &ego(13.9), &[], 0.0, &cfg).unwrap();
        assert_eq!(traj.points.len(), cfg.horizon_steps + 1);
        assert_eq!(dbg.chosen_shift, 0.0);
        assert!(dbg.s_conf.is_none());
        let last = traj.points.last().unwrap();
        assert!((last.v_mps - 13.9).abs() < 0.1, "v {}", last.v_mps);
        assert!(last.y_m.abs() < 1e-6);
        // Time stamps advance by dt.
        assert!((traj.points[1].t_s - traj.points[0].t_s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn blocked_lane_triggers_conflict_stop() {
        let route = straight_route(200.0);
        let mut cfg = PlannerConfig::default();
        // Keep every candidate in conflict: wall of three cars.
        cfg.candidate_shifts_m = vec![0.0];
        let obs = [parked(40.0, -2.0), parked(40.0, 0.0), parked(40.0, 2.0)];
        // 12 m/s needs ~28 m to stop under the jerk/accel limits, inside the
        // ~34 m the bumper discs leave before the wall.
        let (traj, dbg) = plan_step(&route, &ego(12.0), &obs, 0.0, &cfg).unwrap();
        let sc = dbg.s_conf.expect("wall must register a conflict");
        assert!(sc < 40.0 && sc > 30.0, "s_conf {sc}");
        // The plan brakes: final speed well under cruise.
        let last = traj.points.last().unwrap();
        assert!(last.v_mps < 9.0, "v {}", last.v_mps);
        assert!(last.s_m <= sc + 0.5);
    }

    #[test]
    fn swerves_around_single_parked_car() {
        let route = straight_route(200.0);
        let cfg = PlannerConfig::default();
        let obs = [parked(40.0, 0.0)];
        let (traj, dbg) = plan_step(&route, &ego(10.0), &obs, 0.0, &cfg).unwrap();
        assert!(dbg.chosen_shift.abs() >= 1.9);
        // Near the obstacle the executed lateral offset has moved off center.
        let near = traj
            .points
            .iter()
            .min_by(|a, b| {
                (a.s_m - 40.0).abs().total_cmp(&(b.s_m - 40.0).abs())
            })
            .unwrap();
        if near.s_m > 30.0 {
            assert!(near.lateral_m.abs() > 1.0, "lateral {}", near.lateral_m);
        }
    }

    #[test]
    fn stop_line_caps_the_plan() {
        let mut route = straight_route(200.0);
        route.stoplines_s = vec![30.0];
        let cfg = PlannerConfig::default();
        // 10 m/s can stop in 30 m within a_max = 3 (needs ~16.7 m plus the
        // jerk-limited transient); the plan must respect the line.
        let (traj, dbg) = plan_step(&route, &ego(10.0), &[], 0.0, &cfg).unwrap();
        assert_eq!(dbg.stop_targets, vec![30.0]);
        let last = traj.points.last().unwrap();
        assert!(last.s_m <= 30.5, "overran stop line: {}", last.s_m);
        assert!(last.v_mps < 2.0);
    }
}
