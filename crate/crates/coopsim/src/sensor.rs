//! Raycast range sensing and the visibility-oracle object detector.
//!
//! The sensor casts `n_rays` evenly spaced rays from the vehicle pose and
//! keeps the nearest intersection per ray, so occlusion falls out of the
//! geometry. Detection is an oracle gated by that visibility: an actor hit by
//! at least `min_hits` rays yields one noisy box.

use crate::geom::{ray_segment_intersection, Footprint, Point2, Pose2D};
use crate::object::{ObjectClass, ObjectState};
use crate::scenario::SensorConfig;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// What a ray terminated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitTarget {
    Static,
    Actor(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Hit point in the world frame.
    pub point: Point2,
    /// Noisy range from the sensor origin.
    pub range: f64,
    pub ray_index: usize,
    pub target: HitTarget,
}

/// One full sweep of the sensor.
#[derive(Debug, Clone)]
pub struct PointScan {
    pub origin: Pose2D,
    pub timestamp_us: u64,
    pub hits: Vec<RayHit>,
}

impl PointScan {
    /// Hit points expressed in the sensor frame.
    pub fn points_in_sensor_frame(&self) -> Vec<Point2> {
        self.hits
            .iter()
            .map(|h| self.origin.inverse_transform_point(h.point))
            .collect()
    }
}

/// A ground-truth actor as seen by the detection oracle.
#[derive(Debug, Clone, Copy)]
pub struct TrueActor {
    pub index: usize,
    pub center: Point2,
    pub yaw: f64,
    pub velocity: Point2,
    pub size_lwh: [f64; 3],
    pub class: ObjectClass,
}

impl TrueActor {
    pub fn footprint(&self, t: f64) -> Footprint {
        Footprint::from_box(self.center, self.size_lwh[0], self.size_lwh[1], self.yaw, t)
    }
}

/// Cast `cfg.n_rays` rays from `pose` against static segments and actor
/// footprints; nearest intersection wins.
///
/// Range noise is drawn per hit from N(0, sigma_range^2), clamped to three
/// sigma, and applied along the ray, so every returned point stays within
/// 0.1 m of the boundary it struck as long as `sigma_range_m <= 0.033`.
pub fn raycast_scan(
    pose: Pose2D,
    statics: &[(Point2, Point2)],
    actors: &[TrueActor],
    timestamp_us: u64,
    cfg: &SensorConfig,
    rng: &mut impl Rng,
) -> PointScan {
    let origin = Point2::new(pose.x, pose.y);
    let actor_edges: Vec<(usize, Point2, Point2)> = actors
        .iter()
        .flat_map(|a| {
            let f = a.footprint(0.0);
            (0..4).map(move |i| (a.index, f.corners[i], f.corners[(i + 1) % 4]))
        })
        .collect();
    let noise = Normal::new(0.0, cfg.sigma_range_m.max(1e-12)).unwrap();
    let mut hits = Vec::new();
    for k in 0..cfg.n_rays {
        let ang = pose.theta + std::f64::consts::TAU * k as f64 / cfg.n_rays as f64;
        let dir = Point2::new(ang.cos(), ang.sin());
        let mut best: Option<(f64, HitTarget)> = None;
        for (a, b) in statics {
            if let Some(t) = ray_segment_intersection(origin, dir, *a, *b) {
                if t <= cfg.max_range_m && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, HitTarget::Static));
                }
            }
        }
        for (idx, a, b) in &actor_edges {
            if let Some(t) = ray_segment_intersection(origin, dir, *a, *b) {
                if t <= cfg.max_range_m && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, HitTarget::Actor(*idx)));
                }
            }
        }
        if let Some((range, target)) = best {
            let dr = if cfg.sigma_range_m > 0.0 {
                noise
                    .sample(rng)
                    .clamp(-3.0 * cfg.sigma_range_m, 3.0 * cfg.sigma_range_m)
            } else {
                0.0
            };
            let noisy = (range + dr).clamp(0.0, cfg.max_range_m);
            hits.push(RayHit {
                point: origin + dir.scale(noisy),
                range: noisy,
                ray_index: k,
                target,
            });
        }
    }
    PointScan {
        origin: pose,
        timestamp_us,
        hits,
    }
}

/// Number of rays that would strike `actor` from `pose` with nothing else in
/// the scene (the occlusion-free reference for the confidence ratio).
pub fn unoccluded_hit_count(pose: Pose2D, actor: &TrueActor, cfg: &SensorConfig) -> usize {
    let origin = Point2::new(pose.x, pose.y);
    let f = actor.footprint(0.0);
    let mut count = 0;
    for k in 0..cfg.n_rays {
        let ang = pose.theta + std::f64::consts::TAU * k as f64 / cfg.n_rays as f64;
        let dir = Point2::new(ang.cos(), ang.sin());
        let hit = (0..4).any(|i| {
            ray_segment_intersection(origin, dir, f.corners[i], f.corners[(i + 1) % 4])
                .is_some_and(|t| t <= cfg.max_range_m)
        });
        if hit {
            count += 1;
        }
    }
    count
}

/// Visibility-gated detection oracle.
///
/// Actors with at least `min_hits` rays on them become detections: the true
/// box with Gaussian center noise (`sigma_det_m` per axis), confidence equal
/// to the visible fraction `hits / unoccluded_hits`, then distance NMS.
pub fn detect_objects(
    scan: &PointScan,
    actors: &[TrueActor],
    sensing_id: u32,
    cfg: &SensorConfig,
    rng: &mut impl Rng,
) -> Vec<ObjectState> {
    let noise = Normal::new(0.0, cfg.sigma_det_m.max(1e-12)).unwrap();
    let mut dets: Vec<ObjectState> = Vec::new();
    for actor in actors {
        let hits = scan
            .hits
            .iter()
            .filter(|h| h.target == HitTarget::Actor(actor.index))
            .count();
        if hits < cfg.min_hits {
            continue;
        }
        let expected = unoccluded_hit_count(scan.origin, actor, cfg).max(hits);
        let (dx, dy) = if cfg.sigma_det_m > 0.0 {
            (noise.sample(rng), noise.sample(rng))
        } else {
            (0.0, 0.0)
        };
        dets.push(ObjectState {
            center_x: actor.center.x + dx,
            center_y: actor.center.y + dy,
            center_z: actor.size_lwh[2] * 0.5,
            length: actor.size_lwh[0],
            width: actor.size_lwh[1],
            height: actor.size_lwh[2],
            yaw: actor.yaw,
            vel_x: actor.velocity.x,
            vel_y: actor.velocity.y,
            class_id: actor.class,
            confidence: hits as f64 / expected as f64,
            timestamp_us: scan.timestamp_us,
            source_id: sensing_id,
        });
    }
    nms_by_distance(dets, cfg.nms_distance_m)
}

/// Greedy distance NMS: keep detections in descending confidence, dropping
/// any whose center lies within `radius` of an already kept one.
pub fn nms_by_distance(mut dets: Vec<ObjectState>, radius: f64) -> Vec<ObjectState> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<ObjectState> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| k.center().dist(d.center()) >= radius)
        {
            kept.push(d);
        }
    }
    kept
}

/// Dilate detection footprints for masking dynamic returns out of
/// localization scans.
pub fn build_dynamic_mask(detections: &[ObjectState], dilation_m: f64) -> Vec<Footprint> {
    detections
        .iter()
        .map(|d| d.footprint().dilate(dilation_m))
        .collect()
}

/// Drop world-frame points that fall inside any mask footprint.
pub fn apply_dynamic_mask(points: &[Point2], masks: &[Footprint]) -> Vec<Point2> {
    points
        .iter()
        .copied()
        .filter(|p| !masks.iter().any(|m| m.contains(*p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point_segment_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_cfg() -> SensorConfig {
        SensorConfig {
            sigma_range_m: 0.0,
            sigma_det_m: 0.0,
            ..SensorConfig::default()
        }
    }

    fn actor_at(index: usize, x: f64, y: f64) -> TrueActor {
        TrueActor {
            index,
            center: Point2::new(x, y),
            yaw: 0.0,
            velocity: Point2::new(0.0, 0.0),
            size_lwh: [4.5, 1.9, 1.6],
            class: ObjectClass::Vehicle,
        }
    }

    #[test]
    fn forward_ray_hits_wall_at_exact_range() {
        let wall = (Point2::new(10.0, -5.0), Point2::new(10.0, 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scan = raycast_scan(
            Pose2D::new(0.0, 0.0, 0.0),
            &[wall],
            &[],
            0,
            &quiet_cfg(),
            &mut rng,
        );
        let fwd = scan.hits.iter().find(|h| h.ray_index == 0).unwrap();
        assert!((fwd.range - 10.0).abs() < 1e-9);
        assert!((fwd.point.x - 10.0).abs() < 1e-9 && fwd.point.y.abs() < 1e-9);
        // Only rays whose direction crosses the wall's angular extent hit.
        let half_angle = (5.0f64 / 10.0).atan();
        for h in &scan.hits {
            let ang = std::f64::consts::TAU * h.ray_index as f64 / 720.0;
            let wrapped = crate::geom::wrap_angle(ang);
            assert!(wrapped.abs() <= half_angle + 1e-9, "ray {} should miss", h.ray_index);
        }
    }

    #[test]
    fn occluded_actor_gets_no_rays() {
        let wall = (Point2::new(10.0, -8.0), Point2::new(10.0, 8.0));
        let actor = actor_at(0, 20.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = quiet_cfg();
        let scan = raycast_scan(Pose2D::new(0.0, 0.0, 0.0), &[wall], &[actor], 0, &cfg, &mut rng);
        assert!(scan
            .hits
            .iter()
            .all(|h| h.target != HitTarget::Actor(0)));
        // Same scene without the wall: plenty of rays on the actor.
        let open = raycast_scan(Pose2D::new(0.0, 0.0, 0.0), &[], &[actor], 0, &cfg, &mut rng);
        let n = open
            .hits
            .iter()
            .filter(|h| h.target == HitTarget::Actor(0))
            .count();
        assert!(n >= cfg.min_hits, "{n} rays");
    }

    #[test]
    fn hits_stay_on_boundaries_with_noise() {
        let statics = vec![
            (Point2::new(15.0, -20.0), Point2::new(15.0, 20.0)),
            (Point2::new(-10.0, 12.0), Point2::new(30.0, 12.0)),
        ];
        let actor = actor_at(0, 5.0, -6.0);
        let cfg = SensorConfig::default();
        assert!(cfg.sigma_range_m * 3.0 <= 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let scan = raycast_scan(
            Pose2D::new(0.0, 0.0, 0.3),
            &statics,
            &[actor],
            0,
            &cfg,
            &mut rng,
        );
        assert!(!scan.hits.is_empty());
        let f = actor.footprint(0.0);
        let mut all_edges = statics.clone();
        for i in 0..4 {
            all_edges.push((f.corners[i], f.corners[(i + 1) % 4]));
        }
        for h in &scan.hits {
            let d = all_edges
                .iter()
                .map(|(a, b)| point_segment_distance(h.point, *a, *b))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 0.1, "hit {:?} is {d:.3} m off any boundary", h.point);
            assert!(h.range <= cfg.max_range_m + 1e-9);
        }
    }

    #[test]
    fn unoccluded_count_matches_angular_width() {
        // A square cross-section 2 m wide at 20 m subtends ~2*atan(1/20);
        // compare against the brute-force count within one ray of slack.
        let actor = TrueActor {
            size_lwh: [2.0, 2.0, 1.6],
            ..actor_at(0, 20.0, 0.0)
        };
        let cfg = quiet_cfg();
        let n = unoccluded_hit_count(Pose2D::new(0.0, 0.0, 0.0), &actor, &cfg);
        let width = 2.0 * (1.0f64 / 19.0).atan(); // nearest face at x = 19
        let per_ray = std::f64::consts::TAU / cfg.n_rays as f64;
        let expect = width / per_ray;
        assert!(
            (n as f64 - expect).abs() <= 2.0,
            "count {n}, analytic {expect:.2}"
        );
    }

    #[test]
    fn detection_confidence_is_visible_fraction() {
        let actor = actor_at(0, 20.0, 0.0);
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let scan = raycast_scan(pose, &[], &[actor], 77, &cfg, &mut rng);
        let dets = detect_objects(&scan, &[actor], 9, &cfg, &mut rng);
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert!((d.confidence - 1.0).abs() < 1e-9, "unoccluded => 1.0");
        assert!((d.center_x - 20.0).abs() < 1e-9);
        assert_eq!(d.timestamp_us, 77);
        assert_eq!(d.source_id, 9);

        // Occlude roughly half the car: confidence drops below 1, stays above 0.2.
        let wall = (Point2::new(10.0, 0.0), Point2::new(10.0, 10.0));
        let scan2 = raycast_scan(pose, &[wall], &[actor], 77, &cfg, &mut rng);
        let dets2 = detect_objects(&scan2, &[actor], 9, &cfg, &mut rng);
        assert_eq!(dets2.len(), 1);
        assert!(dets2[0].confidence < 1.0 && dets2[0].confidence > 0.2);
    }

    #[test]
    fn min_hits_gate_drops_sparse_targets() {
        // 0.2 m-wide post at 70 m subtends well under 3 rays of 720.
        let post = TrueActor {
            size_lwh: [0.2, 0.2, 1.0],
            ..actor_at(0, 70.0, 0.0)
        };
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scan = raycast_scan(Pose2D::new(0.0, 0.0, 0.0), &[], &[post], 0, &cfg, &mut rng);
        let dets = detect_objects(&scan, &[post], 0, &cfg, &mut rng);
        assert!(dets.is_empty());
    }

    #[test]
    fn nms_keeps_strongest_within_radius() {
        let mut a = actor_at(0, 20.0, 0.0);
        let b = TrueActor {
            index: 1,
            center: Point2::new(20.0, 1.0),
            ..a
        };
        a.size_lwh = [4.5, 1.9, 1.6];
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scan = raycast_scan(Pose2D::new(0.0, 0.0, 0.0), &[], &[a, b], 0, &cfg, &mut rng);
        let dets = detect_objects(&scan, &[a, b], 0, &cfg, &mut rng);
        assert_eq!(dets.len(), 1, "1 m apart => NMS collapses to one");
        // Far apart: both survive.
        let c = TrueActor {
            index: 1,
            center: Point2::new(20.0, 8.0),
            ..a
        };
        let scan2 = raycast_scan(Pose2D::new(0.0, 0.0, 0.0), &[], &[a, c], 0, &cfg, &mut rng);
        let dets2 = detect_objects(&scan2, &[a, c], 0, &cfg, &mut rng);
        assert_eq!(dets2.len(), 2);
    }

    #[test]
    fn center_noise_mean_error_matches_rayleigh() {
        // Per-axis N(0, s^2) on (x, y) makes the radial error Rayleigh with
        // mean s * sqrt(pi/2).
        let actor = actor_at(0, 15.0, 0.0);
        let cfg = SensorConfig {
            sigma_range_m: 0.0,
            ..SensorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let scan = raycast_scan(pose, &[], &[actor], 0, &cfg, &mut rng);
        let n = 4000;
        let mut sum = 0.0;
        for _ in 0..n {
            let dets = detect_objects(&scan, &[actor], 0, &cfg, &mut rng);
            sum += Point2::new(dets[0].center_x - 15.0, dets[0].center_y).norm();
        }
        let mean = sum / n as f64;
        let expect = cfg.sigma_det_m * (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expect).abs() < 0.12 * expect,
            "mean {mean:.4}, want {expect:.4}"
        );
    }

    #[test]
    fn dynamic_mask_filters_points_inside() {
        let det = ObjectState {
            center_x: 10.0,
            center_y: 0.0,
            center_z: 0.8,
            length: 4.0,
            width: 2.0,
            height: 1.6,
            yaw: 0.0,
            vel_x: 0.0,
            vel_y: 0.0,
            class_id: ObjectClass::Vehicle,
            confidence: 1.0,
            timestamp_us: 0,
            source_id: 0,
        };
        let masks = build_dynamic_mask(&[det], 0.5);
        let pts = vec![
            Point2::new(10.0, 0.0),  // inside
            Point2::new(12.4, 0.0),  // inside dilation (half-length 2.0 + 0.5)
            Point2::new(13.0, 0.0),  // outside
            Point2::new(0.0, 0.0),   // far outside
        ];
        let kept = apply_dynamic_mask(&pts, &masks);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|p| p.x >= 12.9 || p.norm() < 1e-9));
    }
}
