//! Point-to-point 2D ICP against the geometry map.
//!
//! Classic loop: transform the scan by the current pose guess, pair each
//! point with its nearest map neighbor inside the gate, fit the closed-form
//! rigid motion that aligns the pairs, apply, repeat until the incremental
//! motion drops below the termination thresholds.

use crate::geom::{Point2, Pose2D};

use super::{
    gather_local_map, GeometryMap, KeypointSet, LocalizationError, NoisyPrior, RefineParams,
};

/// Refine the prior by iterative closest point. Correspondences farther than
/// `params.pair_gate_m` are rejected; fewer than `params.min_correspondences`
/// surviving pairs fail the refinement with the prior as fallback.
pub fn refine_pose_icp(
    kp: &KeypointSet,
    map: &GeometryMap,
    prior: &NoisyPrior,
    params: &RefineParams,
) -> Result<Pose2D, LocalizationError> {
    let local = gather_local_map(kp, map, prior, params)?;
    // Rebucket the windowed submap for nearest-neighbor queries, keeping
    // correspondence search inside the prior's 3 alpha sigma window.
    let mut nn = GeometryMap::new(map.cell_size());
    for p in &local {
        nn.insert(*p);
    }

    let mut pose = prior.pose;
    for _ in 0..params.max_iterations {
        // Pair transformed scan points with gated nearest neighbors.
        let mut src: Vec<Point2> = Vec::with_capacity(kp.points.len());
        let mut dst: Vec<Point2> = Vec::with_capacity(kp.points.len());
        for p in &kp.points {
            let w = pose.transform_point(*p);
            if let Some(q) = nn.nearest_within(w, params.pair_gate_m) {
                src.push(w);
                dst.push(q);
            }
        }
        if src.len() < params.min_correspondences {
            return Err(LocalizationError::RefinementFailed {
                reason: format!(
                    "{} correspondences inside the {:.2} m gate, need {}",
                    src.len(),
                    params.pair_gate_m,
                    params.min_correspondences
                ),
                fallback: prior.pose,
            });
        }
        let delta = fit_rigid(&src, &dst);
        pose = delta.compose(&pose);
        if delta.position().norm() < params.trans_eps_m
            && delta.theta.abs() < params.rot_eps_rad
        {
            break;
        }
    }
    Ok(pose)
}

/// Closed-form 2D rigid motion minimizing sum |R p + t - q|^2 over pairs:
/// rotation from the atan2 of the centered cross/dot sums, translation from
/// the centroids.
fn fit_rigid(src: &[Point2], dst: &[Point2]) -> Pose2D {
    let n = src.len() as f64;
    let mut mu_s = Point2::default();
    let mut mu_d = Point2::default();
    for (p, q) in src.iter().zip(dst) {
        mu_s = mu_s + *p;
        mu_d = mu_d + *q;
    }
    mu_s = mu_s.scale(1.0 / n);
    mu_d = mu_d.scale(1.0 / n);
    let mut sc = 0.0;
    let mut ss = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let a = *p - mu_s;
        let b = *q - mu_d;
        sc += a.dot(b);
        ss += a.cross(b);
    }
    // Degenerate cloud (all pairs coincident): no rotation evidence.
    let theta = if sc.abs() + ss.abs() < 1e-15 {
        0.0
    } else {
        ss.atan2(sc)
    };
    let (s, c) = theta.sin_cos();
    let rot_mu = Point2::new(c * mu_s.x - s * mu_s.y, s * mu_s.x + c * mu_s.y);
    Pose2D::new(mu_d.x - rot_mu.x, mu_d.y - rot_mu.y, theta)
}

#[cfg(test)]
mod tests {
    use super::super::test_fixtures::*;
    use super::super::*;
    use super::*;
    use crate::geom::angle_diff;
    use crate::scenario::LocalizationConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rigid_fit_recovers_a_known_transform() {
        let truth = Pose2D::new(0.4, -0.8, 0.25);
        let src: Vec<Point2> = (0..12)
            .map(|k| Point2::new((k % 4) as f64, (k / 4) as f64 * 1.5))
            .collect();
        let dst: Vec<Point2> = src.iter().map(|p| truth.transform_point(*p)).collect();
        let fit = fit_rigid(&src, &dst);
        assert_abs_diff_eq!(fit.x, truth.x, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.y, truth.y, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.theta, truth.theta, epsilon = 1e-12);
    }

    fn prior_at(pose: Pose2D, alpha: u8, cfg: &LocalizationConfig) -> NoisyPrior {
        NoisyPrior {
            pose,
            alpha,
            sigma_xy_m: cfg.sigma_xy_m,
            sigma_theta_deg: cfg.sigma_theta_deg,
        }
    }

    #[test]
    fn aligned_scan_is_a_fixed_point() {
        // Map built from exactly this scan: every point has a zero-distance
        // partner, so the first rigid fit is the identity.
        let segs = feature_rich_segments();
        let cfg = LocalizationConfig::default();
        let truth = Pose2D::new(1.5, -0.5, 0.9);
        let kp = scan_keypoints(&segs, truth, &cfg, 101);
        let mut map = GeometryMap::new(cfg.map_cell_m);
        accumulate_map(&mut map, &kp, &truth).unwrap();
        let refined = refine_pose_icp(
            &kp,
            &map,
            &prior_at(truth, 1, &cfg),
            &RefineParams::for_stage(&cfg, 1, true),
        )
        .unwrap();
        assert!(refined.position().dist(truth.position()) < 1e-6);
        assert!(angle_diff(refined.theta, truth.theta) < 1e-6);
    }

    #[test]
    fn known_offset_is_recovered_in_feature_rich_scene() {
        let segs = feature_rich_segments();
        let cfg = LocalizationConfig::default();
        let map = build_map(&segs, &cfg);
        let truth = Pose2D::new(2.0, -1.0, 0.4);
        let kp = scan_keypoints(&segs, truth, &cfg, 13);
        let offset_prior = Pose2D::new(
            truth.x + 0.8,
            truth.y + 0.5,
            truth.theta + 3.0f64.to_radians(),
        );
        let refined = refine_pose_icp(
            &kp,
            &map,
            &prior_at(offset_prior, 1, &cfg),
            &RefineParams::for_stage(&cfg, 1, false),
        )
        .unwrap();
        let terr = refined.position().dist(truth.position());
        let rerr = angle_diff(refined.theta, truth.theta).to_degrees();
        assert!(terr < 0.1, "translation error {terr} m");
        assert!(rerr < 0.5, "heading error {rerr} deg");
    }

    #[test]
    fn corridor_recovers_lateral_only() {
        // Long straight corridor: the aperture problem leaves the
        // longitudinal component unobservable; lateral must still lock in.
        let segs = vec![
            (Point2::new(-60.0, -3.0), Point2::new(60.0, -3.0)),
            (Point2::new(-60.0, 3.0), Point2::new(60.0, 3.0)),
        ];
        let cfg = LocalizationConfig::default();
        let mut map = GeometryMap::new(cfg.map_cell_m);
        for k in 0..8 {
            let pose = Pose2D::new(-28.0 + 8.0 * k as f64, 0.0, 0.0);
            let kp = scan_keypoints(&segs, pose, &cfg, 200 + k as u64);
            accumulate_map(&mut map, &kp, &pose).unwrap();
        }
        let truth = Pose2D::new(0.0, 0.0, 0.0);
        let kp = scan_keypoints(&segs, truth, &cfg, 14);
        let prior = Pose2D::new(4.0, 0.0, 0.0); // 4 m longitudinal error
        let refined = refine_pose_icp(
            &kp,
            &map,
            &prior_at(prior, 4, &cfg),
            &RefineParams::for_stage(&cfg, 4, false),
        )
        .unwrap();
        assert!(
            refined.y.abs() < 0.2,
            "lateral error {} m must recover",
            refined.y
        );
        // No assertion on x: sliding along the corridor is unobservable.
    }

    #[test]
    fn starved_gate_fails_with_prior_fallback() {
        let cfg = LocalizationConfig::default();
        let mut map = GeometryMap::new(cfg.map_cell_m);
        for k in 0..30 {
            map.insert(Point2::new(k as f64, 50.0));
        }
        let kp = KeypointSet {
            points: (0..15).map(|k| Point2::new(k as f64, 0.0)).collect(),
            frame: Frame::Sensor,
            timestamp_us: 0,
        };
        let prior = prior_at(Pose2D::identity(), 1, &cfg);
        let err = refine_pose_icp(&kp, &map, &prior, &RefineParams::for_stage(&cfg, 1, true));
        match err {
            Err(LocalizationError::RefinementFailed { fallback, .. }) => {
                assert_eq!(fallback, prior.pose);
            }
            other => panic!("expected RefinementFailed, got {other:?}"),
        }
    }

    #[test]
    fn too_few_keypoints_fail_upfront() {
        let cfg = LocalizationConfig::default();
        let mut map = GeometryMap::new(cfg.map_cell_m);
        map.insert(Point2::new(0.0, 0.0));
        let kp = KeypointSet {
            points: vec![Point2::new(1.0, 0.0); 5],
            frame: Frame::Sensor,
            timestamp_us: 0,
        };
        let prior = prior_at(Pose2D::identity(), 1, &cfg);
        assert!(matches!(
            refine_pose_icp(&kp, &map, &prior, &RefineParams::for_stage(&cfg, 1, true)),
            Err(LocalizationError::RefinementFailed { .. })
        ));
    }
}
