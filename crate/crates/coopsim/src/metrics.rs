//! Occlusion-aware safety metrics computed over ground-truth trajectories.
//!
//! The metrics deliberately judge the *world*, not the perception stack: a
//! planner that never saw the crossing pedestrian still gets charged for the
//! near-miss. Every function here consumes ground-truth [`AgentStep`] states
//! recorded by the runner, so the numbers are a deterministic function of the
//! log and two runs of the same log always agree.
//!
//! Four run-level metrics are produced, matching the columns of the report:
//!
//! * **TTC_min** — minimum over the run of the per-step time-to-collision,
//!   found by sweeping constant-velocity footprint extrapolation at
//!   [`MetricsConfig::ttc_step_s`] resolution out to
//!   [`MetricsConfig::ttc_horizon_s`]. `+∞` when no conflict ever closes.
//! * **DRAC** — maximum over the run of the per-step deceleration rate to
//!   avoid crash, `v_rel² / (2 d)` against the nearest closing actor. Max
//!   aggregation (not mean) because a single hard-braking instant is what the
//!   metric exists to expose. Contact (`d = 0`) reports `+∞` and a collision
//!   event.
//! * **DCZ** — minimum over the run of the distance from the ego footprint to
//!   the nearest *active conflict zone*. Zones are polygonal intersections of
//!   the ego route corridor with each actor's predicted path corridor, both
//!   of half-width [`MetricsConfig::d_min_m`]. The ego side is built from the
//!   *route* — intent, not velocity extrapolation — so an ego that stops
//!   short of a crossing keeps the zone in view and is credited with the
//!   margin it held, rather than the zone evaporating the moment the ego
//!   slows. The actor side is constant-velocity prediction; a zone is active
//!   only while the actor's predicted occupancy of it falls inside
//!   [`MetricsConfig::t_pred_s`].
//! * **VR** — percentage of planning steps in violation: ego inside a
//!   conflict zone, or clearance to any actor below `d_min`.
//!
//! In addition, [`reaction_lead_s`] compares paired runs of the same
//! scenario: coop first-deceleration time minus ego-only first-deceleration
//! time. Negative values mean the cooperative run braked earlier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{footprint_distance, point_segment_distance, Footprint, Point2};

/// Validation failures for metric computation.
#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    /// The run contained no planning steps; rates are undefined.
    #[error("violation rate undefined over zero planning steps")]
    EmptyRun,
    /// A configuration field is out of range.
    #[error("invalid metrics config: {0}")]
    InvalidConfig(&'static str),
}

/// Tunables for the safety metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// TTC sweep horizon, seconds.
    pub ttc_horizon_s: f64,
    /// TTC sweep resolution, seconds.
    pub ttc_step_s: f64,
    /// Prediction horizon for conflict-zone activity, seconds.
    pub t_pred_s: f64,
    /// Minimum safety distance; also the corridor half-width, meters.
    pub d_min_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ttc_horizon_s: 20.0,
            ttc_step_s: 0.05,
            t_pred_s: 5.0,
            d_min_m: 1.5,
        }
    }
}

impl MetricsConfig {
    /// Check that every field is usable.
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.ttc_horizon_s > 0.0) {
            return Err(MetricsError::InvalidConfig("ttc_horizon_s must be > 0"));
        }
        if !(self.ttc_step_s > 0.0) {
            return Err(MetricsError::InvalidConfig("ttc_step_s must be > 0"));
        }
        if !(self.t_pred_s > 0.0) {
            return Err(MetricsError::InvalidConfig("t_pred_s must be > 0"));
        }
        if !(self.d_min_m >= 0.0) {
            return Err(MetricsError::InvalidConfig("d_min_m must be >= 0"));
        }
        Ok(())
    }
}

/// Ground-truth state of one agent at one planning step.
#[derive(Debug, Clone, Copy)]
pub struct AgentStep {
    /// World-frame center, meters.
    pub center: Point2,
    /// World-frame heading, radians.
    pub yaw: f64,
    /// World-frame velocity, m/s.
    pub velocity: Point2,
    /// Bounding-box length along the heading, meters.
    pub length: f64,
    /// Bounding-box width, meters.
    pub width: f64,
}

impl AgentStep {
    /// Oriented bounding box at this step.
    pub fn footprint(&self) -> Footprint {
        Footprint::from_box(self.center, self.length, self.width, self.yaw, 0.0)
    }

    fn footprint_at(&self, dt_s: f64) -> Footprint {
        let c = Point2::new(
            self.center.x + self.velocity.x * dt_s,
            self.center.y + self.velocity.y * dt_s,
        );
        Footprint::from_box(c, self.length, self.width, self.yaw, dt_s)
    }
}

/// Everything the metrics need about one planning step.
#[derive(Debug, Clone)]
pub struct WorldStep {
    /// Simulation time of the step, seconds.
    pub t_s: f64,
    /// Ego ground truth.
    pub ego: AgentStep,
    /// Ego route polyline from the current position forward, world frame.
    /// Fewer than two points means "no declared intent" and disables
    /// conflict-zone construction for the step.
    pub ego_path: Vec<Point2>,
    /// All other agents' ground truth.
    pub actors: Vec<AgentStep>,
}

/// One active conflict zone: a convex polygon where the ego route corridor
/// and an actor's predicted corridor intersect.
#[derive(Debug, Clone)]
pub struct ConflictZone {
    /// Convex polygon, counter-clockwise.
    pub polygon: Vec<Point2>,
    /// Index into [`WorldStep::actors`] of the actor that induced the zone.
    pub actor_index: usize,
}

/// Discrete safety events worth calling out in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyEventKind {
    /// Ego footprint first touched an actor footprint.
    Collision,
    /// Ego footprint first entered a conflict zone.
    ZoneEntry,
}

/// A safety event with the step time it first occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEvent {
    /// Step time, seconds.
    pub t_s: f64,
    /// What happened.
    pub kind: SafetyEventKind,
}

/// Per-step metric values, kept so plots can show the full series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepSafety {
    /// Step time, seconds.
    pub t_s: f64,
    /// Time to collision, seconds (`+∞` when nothing closes within horizon).
    pub ttc_s: f64,
    /// Deceleration rate to avoid crash, m/s² (`+∞` on contact).
    pub drac_mps2: f64,
    /// Smallest footprint-to-footprint gap to any actor, meters.
    pub clearance_m: f64,
    /// Distance to the nearest active conflict zone, meters (`+∞` if none).
    pub dcz_m: f64,
    /// Ego footprint overlaps a conflict zone this step.
    pub in_zone: bool,
    /// Zone entry or clearance below `d_min` this step.
    pub violation: bool,
}

/// Run-level safety summary plus the per-step series behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Minimum time to collision over the run, seconds.
    pub ttc_min_s: f64,
    /// Maximum deceleration rate to avoid crash over the run, m/s².
    pub drac_mps2: f64,
    /// Minimum distance to an active conflict zone over the run, meters.
    pub dcz_m: f64,
    /// Percentage of planning steps in violation.
    pub vr_pct: f64,
    /// Coop minus ego-only first-deceleration time, seconds. Filled only for
    /// paired runs; `None` for a single run.
    pub reaction_lead_s: Option<f64>,
    /// Per-step series.
    pub steps: Vec<StepSafety>,
    /// First-occurrence events (collision, zone entry).
    pub events: Vec<SafetyEvent>,
}

/// Per-step time to collision: the earliest sweep time at which the ego and
/// any actor footprint overlap under constant-velocity extrapolation of both.
///
/// Returns `+∞` when nothing overlaps within the horizon. Overlap at zero
/// offset (already in contact) returns `0.0`.
pub fn compute_ttc(ego: &AgentStep, actors: &[AgentStep], cfg: &MetricsConfig) -> f64 {
    if actors.is_empty() {
        return f64::INFINITY;
    }
    let n = (cfg.ttc_horizon_s / cfg.ttc_step_s).round() as usize;
    for k in 0..=n {
        let tau = k as f64 * cfg.ttc_step_s;
        let ego_fp = ego.footprint_at(tau);
        for actor in actors {
            if convex_polys_overlap(&ego_fp.corners, &actor.footprint_at(tau).corners) {
                return tau;
            }
        }
    }
    f64::INFINITY
}

/// Per-step deceleration rate to avoid crash: `v_rel² / (2 d)` against the
/// worst closing actor, where `d` is the footprint gap and `v_rel` the
/// closing speed along the center-to-center line of sight.
///
/// Opening or tangential motion contributes zero. Contact (`d = 0`) returns
/// `+∞`; [`compute_safety_report`] additionally records a collision event.
pub fn compute_drac(ego: &AgentStep, actors: &[AgentStep]) -> f64 {
    let ego_fp = ego.footprint();
    let mut worst: f64 = 0.0;
    for actor in actors {
        let d = footprint_distance(&ego_fp, &actor.footprint());
        if d == 0.0 {
            return f64::INFINITY;
        }
        let los = actor.center - ego.center;
        let range = los.norm();
        if range < 1e-9 {
            continue;
        }
        let closing = Point2::new(
            ego.velocity.x - actor.velocity.x,
            ego.velocity.y - actor.velocity.y,
        )
        .dot(los.scale(1.0 / range));
        if closing > 0.0 {
            worst = worst.max(closing * closing / (2.0 * d));
        }
    }
    worst
}

/// Smallest footprint-to-footprint gap between the ego and any actor.
pub fn compute_clearance(ego: &AgentStep, actors: &[AgentStep]) -> f64 {
    let ego_fp = ego.footprint();
    actors
        .iter()
        .map(|a| footprint_distance(&ego_fp, &a.footprint()))
        .fold(f64::INFINITY, f64::min)
}

/// Build the active conflict zones for one step.
///
/// The ego corridor dilates each route-polyline segment to a rectangle of
/// half-width `d_min`; each actor corridor is the rectangle swept by its
/// constant-velocity prediction over `t_pred` (a stationary actor
/// contributes a `2·d_min` square around itself). Every nonempty convex
/// intersection of an actor corridor with an ego segment rectangle is a
/// candidate zone; it is *active* — and returned — only if the actor's
/// predicted center line occupies it somewhere inside `[0, t_pred]` (a
/// stationary actor: only if its footprint overlaps it). Zones the actor has
/// already cleared therefore expire on their own.
pub fn compute_conflict_zones(step: &WorldStep, cfg: &MetricsConfig) -> Vec<ConflictZone> {
    let mut zones = Vec::new();
    if step.ego_path.len() < 2 {
        return zones;
    }
    let mut ego_quads = Vec::new();
    for pair in step.ego_path.windows(2) {
        if pair[0].dist(pair[1]) > 1e-9 {
            ego_quads.push(segment_corridor(pair[0], pair[1], cfg.d_min_m));
        }
    }
    for (actor_index, actor) in step.actors.iter().enumerate() {
        let p0 = actor.center;
        let p1 = Point2::new(
            p0.x + actor.velocity.x * cfg.t_pred_s,
            p0.y + actor.velocity.y * cfg.t_pred_s,
        );
        let stationary = p0.dist(p1) < 1e-9;
        let corridor = if stationary {
            square_corridor(p0, actor.yaw, cfg.d_min_m)
        } else {
            segment_corridor(p0, p1, cfg.d_min_m).to_vec()
        };
        for quad in &ego_quads {
            let piece = convex_clip(&corridor, quad);
            if piece.len() < 3 || polygon_area(&piece) < 1e-6 {
                continue;
            }
            let active = if stationary {
                convex_polys_overlap(&actor.footprint().corners, &piece)
            } else {
                occupancy_interval(p0, actor.velocity, &piece, cfg.t_pred_s).is_some()
            };
            if active {
                zones.push(ConflictZone {
                    polygon: piece,
                    actor_index,
                });
            }
        }
    }
    zones
}

/// Per-step distance from the ego footprint to the nearest active conflict
/// zone: zero when inside, `+∞` when no zone is active.
pub fn compute_dcz(ego: &AgentStep, zones: &[ConflictZone]) -> f64 {
    let fp = ego.footprint();
    zones
        .iter()
        .map(|z| convex_poly_distance(&fp.corners, &z.polygon))
        .fold(f64::INFINITY, f64::min)
}

/// Violation rate: percentage of steps flagged as violating.
///
/// Errors on an empty run — a rate over zero steps is undefined, and a log
/// that produced no steps is a harness bug worth surfacing.
pub fn compute_vr(steps: &[StepSafety]) -> Result<f64, MetricsError> {
    if steps.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let violating = steps.iter().filter(|s| s.violation).count();
    Ok(100.0 * violating as f64 / steps.len() as f64)
}

/// Time of the first sample interval whose mean acceleration is at or below
/// `-threshold_mps2`, from a `(t_s, speed_mps)` series. Returns the start of
/// the interval; `None` when the series never brakes that hard.
pub fn first_deceleration_s(series: &[(f64, f64)], threshold_mps2: f64) -> Option<f64> {
    series.windows(2).find_map(|w| {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        let dt = t1 - t0;
        (dt > 0.0 && (v1 - v0) / dt <= -threshold_mps2).then_some(t0)
    })
}

/// Reaction lead between paired runs: coop first-deceleration time minus
/// ego-only first-deceleration time. Negative means the cooperative run
/// braked earlier. `None` when either run never brakes.
pub fn reaction_lead_s(
    coop_speed: &[(f64, f64)],
    ego_only_speed: &[(f64, f64)],
    threshold_mps2: f64,
) -> Option<f64> {
    let coop = first_deceleration_s(coop_speed, threshold_mps2)?;
    let ego = first_deceleration_s(ego_only_speed, threshold_mps2)?;
    Some(coop - ego)
}

/// Compute the full safety report for one run.
///
/// `reaction_lead_s` is left `None`; pairing happens above this level where
/// both runs of a scenario are in hand.
pub fn compute_safety_report(
    steps: &[WorldStep],
    cfg: &MetricsConfig,
) -> Result<SafetyReport, MetricsError> {
    cfg.validate()?;
    if steps.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let mut series = Vec::with_capacity(steps.len());
    let mut events = Vec::new();
    let mut was_in_zone = false;
    let mut was_in_contact = false;
    for step in steps {
        let ttc_s = compute_ttc(&step.ego, &step.actors, cfg);
        let drac_mps2 = compute_drac(&step.ego, &step.actors);
        let clearance_m = compute_clearance(&step.ego, &step.actors);
        let zones = compute_conflict_zones(step, cfg);
        let dcz_m = compute_dcz(&step.ego, &zones);
        let in_zone = dcz_m == 0.0;
        let in_contact = clearance_m == 0.0;
        if in_zone && !was_in_zone {
            events.push(SafetyEvent {
                t_s: step.t_s,
                kind: SafetyEventKind::ZoneEntry,
            });
        }
        if in_contact && !was_in_contact {
            events.push(SafetyEvent {
                t_s: step.t_s,
                kind: SafetyEventKind::Collision,
            });
        }
        was_in_zone = in_zone;
        was_in_contact = in_contact;
        series.push(StepSafety {
            t_s: step.t_s,
            ttc_s,
            drac_mps2,
            clearance_m,
            dcz_m,
            in_zone,
            violation: in_zone || clearance_m < cfg.d_min_m,
        });
    }
    let ttc_min_s = series.iter().map(|s| s.ttc_s).fold(f64::INFINITY, f64::min);
    let drac_mps2 = series.iter().map(|s| s.drac_mps2).fold(0.0, f64::max);
    let dcz_m = series.iter().map(|s| s.dcz_m).fold(f64::INFINITY, f64::min);
    let vr_pct = compute_vr(&series)?;
    Ok(SafetyReport {
        ttc_min_s,
        drac_mps2,
        dcz_m,
        vr_pct,
        reaction_lead_s: None,
        steps: series,
        events,
    })
}

// ---------------------------------------------------------------------------
// Convex-polygon helpers. Zones are convex by construction (intersections of
// rectangles), so everything below may assume convexity.
// ---------------------------------------------------------------------------

/// Rectangle of half-width `hw` around the segment `a -> b`, counter-clockwise.
fn segment_corridor(a: Point2, b: Point2, hw: f64) -> [Point2; 4] {
    let d = b - a;
    let len = d.norm();
    let n = Point2::new(-d.y / len, d.x / len);
    [
        Point2::new(a.x - n.x * hw, a.y - n.y * hw),
        Point2::new(b.x - n.x * hw, b.y - n.y * hw),
        Point2::new(b.x + n.x * hw, b.y + n.y * hw),
        Point2::new(a.x + n.x * hw, a.y + n.y * hw),
    ]
}

/// Square of half-size `hw` centered at `c`, oriented by `yaw`.
fn square_corridor(c: Point2, yaw: f64, hw: f64) -> Vec<Point2> {
    Footprint::from_box(c, 2.0 * hw, 2.0 * hw, yaw, 0.0)
        .corners
        .to_vec()
}

/// Separating-axis overlap test for two convex polygons. Touching counts as
/// overlapping.
fn convex_polys_overlap(a: &[Point2], b: &[Point2]) -> bool {
    for (poly, other) in [(a, b), (b, a)] {
        for i in 0..poly.len() {
            let edge = poly[(i + 1) % poly.len()] - poly[i];
            let axis = Point2::new(-edge.y, edge.x);
            if axis.norm() < 1e-12 {
                continue;
            }
            let project = |pts: &[Point2]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let v = p.dot(axis);
                    (lo.min(v), hi.max(v))
                })
            };
            let (amin, amax) = project(poly);
            let (bmin, bmax) = project(other);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

/// Distance between two convex polygons: zero when they overlap, otherwise
/// the minimum vertex-to-edge distance in both directions (which, for
/// disjoint convex shapes, is the true boundary distance).
fn convex_poly_distance(a: &[Point2], b: &[Point2]) -> f64 {
    if convex_polys_overlap(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (from, to) in [(a, b), (b, a)] {
        for p in from {
            for i in 0..to.len() {
                best = best.min(point_segment_distance(*p, to[i], to[(i + 1) % to.len()]));
            }
        }
    }
    best
}

/// Sutherland-Hodgman clip of a convex subject against a convex clip
/// polygon. Both inputs counter-clockwise; output counter-clockwise, empty
/// when the intersection is.
fn convex_clip(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let inside = |p: Point2| edge.cross(p - a) >= -1e-12;
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            return out;
        }
        for j in 0..input.len() {
            let cur = input[j];
            let next = input[(j + 1) % input.len()];
            let cur_in = inside(cur);
            let next_in = inside(next);
            if cur_in {
                out.push(cur);
            }
            if cur_in != next_in {
                let dc = edge.cross(cur - a);
                let dn = edge.cross(next - a);
                let t = dc / (dc - dn);
                out.push(Point2::new(
                    cur.x + t * (next.x - cur.x),
                    cur.y + t * (next.y - cur.y),
                ));
            }
        }
    }
    // Collapse the near-duplicate vertices clipping leaves at corners.
    let mut dedup: Vec<Point2> = Vec::with_capacity(out.len());
    for p in out {
        if dedup.last().map_or(true, |q| q.dist(p) > 1e-9) {
            dedup.push(p);
        }
    }
    if dedup.len() > 1 && dedup[0].dist(dedup[dedup.len() - 1]) <= 1e-9 {
        dedup.pop();
    }
    if dedup.len() < 3 {
        dedup.clear();
    }
    // Downstream code (occupancy intervals, containment) assumes
    // counter-clockwise winding; restore it if the subject was clockwise.
    if signed_area(&dedup) < 0.0 {
        dedup.reverse();
    }
    dedup
}

/// Twice-signed shoelace sum; positive for counter-clockwise polygons.
fn signed_area(poly: &[Point2]) -> f64 {
    let mut twice = 0.0;
    for i in 0..poly.len() {
        twice += poly[i].cross(poly[(i + 1) % poly.len()]);
    }
    twice
}

/// Shoelace area of a polygon, winding-independent.
fn polygon_area(poly: &[Point2]) -> f64 {
    signed_area(poly).abs() / 2.0
}

/// Clip the parametric line `p0 + v·t`, `t ∈ [0, t_max]`, against a convex
/// counter-clockwise polygon. Returns the occupancy interval, `None` when
/// the line misses the polygon inside the window.
fn occupancy_interval(
    p0: Point2,
    v: Point2,
    poly: &[Point2],
    t_max: f64,
) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0_f64, t_max);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let edge = b - a;
        // Inside means left of the edge: edge × (p - a) >= 0.
        let c0 = edge.cross(p0 - a);
        let cv = edge.cross(v);
        if cv.abs() < 1e-12 {
            if c0 < -1e-12 {
                return None;
            }
            continue;
        }
        let t = -c0 / cv;
        if cv > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        if lo > hi {
            return None;
        }
    }
    Some((lo, hi))
}
