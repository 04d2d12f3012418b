//! Scenario definition: map, scripted actors, vehicles, and simulation
//! parameters, loaded from a TOML file.
//!
//! Every dimensioned key carries a unit suffix (`_m`, `_s`, `_mps`, ...).

use crate::geom::{wrap_angle, Footprint, Point2};
use crate::object::ObjectClass;
use crate::path::{ArcLengthPath, PathError, DEFAULT_DS};
use crate::planning::PlannerConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("TOML parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("validation failed at `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Path(#[from] PathError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub points_xy_m: Vec<[f64; 2]>,
    pub speed_limit_mps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopLine {
    pub lane_id: String,
    pub s_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Boundary {
    pub points_xy_m: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(default)]
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub stoplines: Vec<StopLine>,
    #[serde(default)]
    pub boundaries: Vec<Boundary>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub yaw_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Actor {
    pub id: String,
    pub class: ObjectClass,
    /// Box size (length, width, height) in meters.
    pub size_lwh_m: [f64; 3],
    pub trajectory: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EgoSpec {
    pub route: Vec<String>,
    pub start_s_m: f64,
    pub start_v_mps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SenderSpec {
    pub id: String,
    pub route: Vec<String>,
    pub start_s_m: f64,
    pub speed_mps: f64,
    /// Fusion trust assigned to this sender's messages.
    #[serde(default = "default_sender_trust")]
    pub trust: f64,
}

fn default_sender_trust() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub duration_s: f64,
    pub tick_s: f64,
    pub seed: u64,
}

/// Raycast sensor and detection-oracle parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub n_rays: usize,
    pub max_range_m: f64,
    pub min_hits: usize,
    /// Std-dev of Gaussian position noise on detected box centers.
    pub sigma_det_m: f64,
    /// Std-dev of range noise on returned hits, clamped to 3 sigma.
    pub sigma_range_m: f64,
    /// Dynamic-mask dilation margin.
    pub mask_dilation_m: f64,
    /// Distance-based NMS radius between detection centers.
    pub nms_distance_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            n_rays: 720,
            max_range_m: 80.0,
            min_hits: 3,
            sigma_det_m: 0.1,
            sigma_range_m: 0.03,
            mask_dilation_m: 0.5,
            nms_distance_m: 2.0,
        }
    }
}

/// Scan-to-map localization parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    pub map_cell_m: f64,
    pub ndt_cell_m: f64,
    pub keypoint_cap: usize,
    pub min_spacing_m: f64,
    pub max_iterations: usize,
    pub sigma_xy_m: f64,
    pub sigma_theta_deg: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            map_cell_m: 1.0,
            ndt_cell_m: 2.0,
            keypoint_cap: 512,
            min_spacing_m: 0.5,
            max_iterations: 50,
            sigma_xy_m: 1.0,
            sigma_theta_deg: 2.0,
        }
    }
}

/// V2V link and fusion parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CommsConfig {
    pub base_latency_ms: f64,
    /// Uniform jitter half-width.
    pub jitter_ms: f64,
    pub loss_rate: f64,
    /// Exponential age-decay constant of remote detection weights.
    pub tau_ms: f64,
    /// Messages older than this are excluded from fusion.
    pub staleness_ms: f64,
    /// Lower bound applied to remote confidences before weighting.
    pub confidence_floor: f64,
    /// Same-class detections closer than this merge into one.
    pub dedup_distance_m: f64,
}

impl Default for CommsConfig {
    fn default() -> Self {
        Self {
            base_latency_ms: 20.0,
            jitter_ms: 10.0,
            loss_rate: 0.05,
            tau_ms: 300.0,
            staleness_ms: 500.0,
            confidence_floor: 0.1,
            dedup_distance_m: 2.0,
        }
    }
}

/// Complete scenario as loaded from file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub map: MapSpec,
    #[serde(default)]
    pub actors: Vec<Actor>,
    pub ego: EgoSpec,
    #[serde(default)]
    pub senders: Vec<SenderSpec>,
    pub sim: SimSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub comms: CommsConfig,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.sim.tick_s <= 0.0 {
            return Err(invalid("sim.tick_s", "must be positive"));
        }
        if self.sim.duration_s <= 0.0 {
            return Err(invalid("sim.duration_s", "must be positive"));
        }
        if self.map.lanes.is_empty() {
            return Err(invalid("map.lanes", "at least one lane required"));
        }
        for (i, lane) in self.map.lanes.iter().enumerate() {
            if lane.points_xy_m.len() < 2 {
                return Err(invalid(
                    format!("map.lanes[{i}].points_xy_m"),
                    "needs at least 2 points",
                ));
            }
            if lane.speed_limit_mps <= 0.0 {
                return Err(invalid(
                    format!("map.lanes[{i}].speed_limit_mps"),
                    "must be positive",
                ));
            }
        }
        for (i, sl) in self.map.stoplines.iter().enumerate() {
            let lane = self
                .map
                .lanes
                .iter()
                .find(|l| l.id == sl.lane_id)
                .ok_or_else(|| {
                    invalid(
                        format!("map.stoplines[{i}].lane_id"),
                        format!("unknown lane `{}`", sl.lane_id),
                    )
                })?;
            let len = polyline_length(&lane.points_xy_m);
            // Arc-length anchoring keeps the stop line on the lane; out-of-range
            // s would place it beyond the endpoint, violating the 0.5 m lateral
            // tolerance contract.
            if sl.s_m < 0.0 || sl.s_m > len + 0.5 {
                return Err(invalid(
                    format!("map.stoplines[{i}].s_m"),
                    format!("{} outside lane `{}` of length {:.1}", sl.s_m, sl.lane_id, len),
                ));
            }
        }
        for (i, b) in self.map.boundaries.iter().enumerate() {
            if b.points_xy_m.len() < 2 {
                return Err(invalid(
                    format!("map.boundaries[{i}].points_xy_m"),
                    "needs at least 2 points",
                ));
            }
        }
        for (i, actor) in self.actors.iter().enumerate() {
            if actor.size_lwh_m.iter().any(|&d| d <= 0.0) {
                return Err(invalid(
                    format!("actors[{i}].size_lwh_m"),
                    "all dimensions must be positive",
                ));
            }
            if actor.trajectory.len() < 2 {
                return Err(invalid(
                    format!("actors[{i}].trajectory"),
                    "needs at least 2 samples",
                ));
            }
            for (j, w) in actor.trajectory.windows(2).enumerate() {
                let dt = w[1].t_s - w[0].t_s;
                if dt <= 0.0 {
                    return Err(invalid(
                        format!("actors[{i}].trajectory[{}].t_s", j + 1),
                        "timestamps must strictly increase",
                    ));
                }
                let gap = Point2::new(w[1].x_m - w[0].x_m, w[1].y_m - w[0].y_m).norm();
                // Continuity: spatial gap below speed * tick * 1.5, i.e. for a
                // moving actor the sample interval must stay under 1.5 ticks.
                if gap > 1e-9 {
                    let speed = gap / dt;
                    if gap >= speed * self.sim.tick_s * 1.5 {
                        return Err(invalid(
                            format!("actors[{i}].trajectory[{}]", j + 1),
                            format!(
                                "gap {:.2} m over {:.3} s breaks continuity at tick {:.3} s",
                                gap, dt, self.sim.tick_s
                            ),
                        ));
                    }
                }
            }
        }
        self.check_route("ego.route", &self.ego.route)?;
        for (i, s) in self.senders.iter().enumerate() {
            self.check_route(&format!("senders[{i}].route"), &s.route)?;
            if s.speed_mps < 0.0 {
                return Err(invalid(format!("senders[{i}].speed_mps"), "must be >= 0"));
            }
            if !(0.0..=1.0).contains(&s.trust) {
                return Err(invalid(format!("senders[{i}].trust"), "must be in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.comms.loss_rate) {
            return Err(invalid("comms.loss_rate", "must be in [0, 1]"));
        }
        if self.comms.base_latency_ms < 0.0 || self.comms.jitter_ms < 0.0 {
            return Err(invalid("comms", "latency and jitter must be >= 0"));
        }
        if self.comms.tau_ms <= 0.0 {
            return Err(invalid("comms.tau_ms", "must be positive"));
        }
        if self.comms.staleness_ms < 0.0 || self.comms.dedup_distance_m < 0.0 {
            return Err(invalid("comms", "staleness and dedup distance must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.comms.confidence_floor) {
            return Err(invalid("comms.confidence_floor", "must be in [0, 1]"));
        }
        Ok(())
    }

    fn check_route(&self, field: &str, route: &[String]) -> Result<(), ScenarioError> {
        if route.is_empty() {
            return Err(invalid(field, "route must name at least one lane"));
        }
        for id in route {
            if !self.map.lanes.iter().any(|l| &l.id == id) {
                return Err(invalid(field, format!("unknown lane `{id}`")));
            }
        }
        Ok(())
    }

    /// All static boundary segments as point pairs.
    pub fn boundary_segments(&self) -> Vec<(Point2, Point2)> {
        let mut segs = Vec::new();
        for b in &self.map.boundaries {
            for w in b.points_xy_m.windows(2) {
                segs.push((
                    Point2::new(w[0][0], w[0][1]),
                    Point2::new(w[1][0], w[1][1]),
                ));
            }
        }
        segs
    }

    /// Axis-aligned bounding box over lanes and boundaries, padded by `pad`.
    pub fn bounding_box(&self, pad: f64) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut take = |p: &[f64; 2]| {
            lo.x = lo.x.min(p[0]);
            lo.y = lo.y.min(p[1]);
            hi.x = hi.x.max(p[0]);
            hi.y = hi.y.max(p[1]);
        };
        for lane in &self.map.lanes {
            lane.points_xy_m.iter().for_each(&mut take);
        }
        for b in &self.map.boundaries {
            b.points_xy_m.iter().for_each(&mut take);
        }
        (
            Point2::new(lo.x - pad, lo.y - pad),
            Point2::new(hi.x + pad, hi.y + pad),
        )
    }

    /// Interpolated actor pose and velocity at scenario time `t`.
    ///
    /// Returns `None` before the first or after the last trajectory sample
    /// (the actor is not present in the scene).
    pub fn actor_state(&self, actor: &Actor, t: f64) -> Option<ActorState> {
        let traj = &actor.trajectory;
        if t < traj[0].t_s - 1e-9 || t > traj.last().unwrap().t_s + 1e-9 {
            return None;
        }
        let idx = traj
            .windows(2)
            .position(|w| t <= w[1].t_s + 1e-9)
            .unwrap_or(traj.len() - 2);
        let (a, b) = (&traj[idx], &traj[idx + 1]);
        let dt = b.t_s - a.t_s;
        let u = ((t - a.t_s) / dt).clamp(0.0, 1.0);
        let x = a.x_m + (b.x_m - a.x_m) * u;
        let y = a.y_m + (b.y_m - a.y_m) * u;
        let yaw = wrap_angle(a.yaw_rad + wrap_angle(b.yaw_rad - a.yaw_rad) * u);
        let vel = Point2::new((b.x_m - a.x_m) / dt, (b.y_m - a.y_m) / dt);
        Some(ActorState {
            center: Point2::new(x, y),
            yaw,
            velocity: vel,
            size_lwh: actor.size_lwh_m,
        })
    }

    /// Footprints of all actors present at time `t`, with their indices.
    pub fn actor_footprints(&self, t: f64) -> Vec<(usize, Footprint)> {
        self.actors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                self.actor_state(a, t)
                    .map(|st| (i, st.footprint(t)))
            })
            .collect()
    }

    /// Stitch a lane route into one arc-length path with speed limits and
    /// stop lines mapped to route arc length.
    pub fn build_route(&self, lane_ids: &[String]) -> Result<RouteMap, ScenarioError> {
        let mut points: Vec<Point2> = Vec::new();
        let mut limits: Vec<(f64, f64, f64)> = Vec::new(); // (s_from, s_to, v)
        let mut stop_s: Vec<f64> = Vec::new();
        let mut offset = 0.0;
        for id in lane_ids {
            let lane = self
                .map
                .lanes
                .iter()
                .find(|l| &l.id == id)
                .ok_or_else(|| invalid("route", format!("unknown lane `{id}`")))?;
            let lane_pts: Vec<Point2> = lane
                .points_xy_m
                .iter()
                .map(|p| Point2::new(p[0], p[1]))
                .collect();
            let len = polyline_length(&lane.points_xy_m);
            if let Some(last) = points.last() {
                // Drop duplicated junction point when lanes share endpoints.
                let skip = last.dist(lane_pts[0]) < 1e-6;
                points.extend(lane_pts.iter().skip(usize::from(skip)).copied());
            } else {
                points.extend(lane_pts.iter().copied());
            }
            limits.push((offset, offset + len, lane.speed_limit_mps));
            for sl in self.map.stoplines.iter().filter(|sl| &sl.lane_id == id) {
                stop_s.push(offset + sl.s_m);
            }
            offset += len;
        }
        let path = ArcLengthPath::from_polyline(&points, DEFAULT_DS)?;
        stop_s.sort_by(|a, b| a.total_cmp(b));
        Ok(RouteMap {
            path,
            speed_limits: limits,
            stoplines_s: stop_s,
        })
    }
}

/// Interpolated scripted-actor state.
#[derive(Debug, Clone, Copy)]
pub struct ActorState {
    pub center: Point2,
    pub yaw: f64,
    pub velocity: Point2,
    pub size_lwh: [f64; 3],
}

impl ActorState {
    pub fn footprint(&self, valid_time: f64) -> Footprint {
        Footprint::from_box(
            self.center,
            self.size_lwh[0],
            self.size_lwh[1],
            self.yaw,
            valid_time,
        )
    }
}

/// A stitched route: path plus speed limits and stop lines on route arc length.
#[derive(Debug, Clone)]
pub struct RouteMap {
    pub path: ArcLengthPath,
    /// Per-lane `(s_from, s_to, speed_limit)` ranges.
    pub speed_limits: Vec<(f64, f64, f64)>,
    /// Stop-line positions along the route, ascending.
    pub stoplines_s: Vec<f64>,
}

impl RouteMap {
    pub fn speed_limit_at(&self, s: f64) -> f64 {
        for &(from, to, v) in &self.speed_limits {
            if s >= from - 1e-9 && s <= to + 1e-9 {
                return v;
            }
        }
        self.speed_limits.last().map(|&(_, _, v)| v).unwrap_or(0.0)
    }
}

fn polyline_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}
