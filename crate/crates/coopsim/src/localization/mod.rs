//! Scan-to-map localization: keypoint extraction, global geometry map,
//! GNSS-prior noise injection, and ICP/NDT pose refinement.
//!
//! The pipeline per vehicle and tick: extract static keypoints from the scan
//! (dynamic returns masked out), look up the persistent geometry map, perturb
//! the true pose into a GNSS-like prior, then refine coarse-to-fine: a first
//! pass with relaxed correspondence gating sized to the prior uncertainty,
//! then a strict pass that retains only reliable correspondences.

pub mod icp;
pub mod ndt;

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geom::{angle_diff, Footprint, Point2, Pose2D};
use crate::scenario::LocalizationConfig;
use crate::sensor::{HitTarget, PointScan};

pub use icp::refine_pose_icp;
pub use ndt::refine_pose_ndt;

/// Per-cell occupancy cap of the geometry map.
pub const MAX_POINTS_PER_CELL: usize = 8;
/// Strict correspondence gate of the fine refinement stage, meters.
pub const STRICT_GATE_M: f64 = 0.5;
/// Pose-delta termination thresholds shared by ICP and NDT.
pub const TRANS_EPS_M: f64 = 1e-4;
pub const ROT_EPS_RAD: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("invalid GNSS alpha {0}, must be in 1..=4")]
    InvalidAlpha(u8),
    #[error("keypoint frame mismatch: expected {expected:?}, got {got:?}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("pose refinement failed: {reason}")]
    RefinementFailed {
        reason: String,
        /// Pose to keep driving with (the prior); planning must still run.
        fallback: Pose2D,
    },
}

/// Which frame a keypoint set is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Sensor,
    World,
}

/// Sparse static keypoints from one scan.
#[derive(Debug, Clone)]
pub struct KeypointSet {
    pub points: Vec<Point2>,
    pub frame: Frame,
    pub timestamp_us: u64,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Boundary-labeled hits outside every mask footprint, greedily thinned so no
/// two kept points are closer than `min_spacing_m`, capped at `cap` points.
///
/// Hits are visited in bearing order (ray index), which makes the kept set
/// deterministic. Masks are world-frame footprints (dilated detections); the
/// returned points are in the sensor frame.
pub fn extract_keypoints(
    scan: &PointScan,
    masks: &[Footprint],
    min_spacing_m: f64,
    cap: usize,
) -> KeypointSet {
    let mut kept_world: Vec<Point2> = Vec::new();
    for hit in &scan.hits {
        if kept_world.len() >= cap {
            break;
        }
        if hit.target != HitTarget::Static {
            continue;
        }
        if masks.iter().any(|m| m.contains(hit.point)) {
            continue;
        }
        if kept_world
            .iter()
            .all(|p| p.dist(hit.point) >= min_spacing_m)
        {
            kept_world.push(hit.point);
        }
    }
    KeypointSet {
        points: kept_world
            .iter()
            .map(|p| scan.origin.inverse_transform_point(*p))
            .collect(),
        frame: Frame::Sensor,
        timestamp_us: scan.timestamp_us,
    }
}

/// Accumulated world-frame keypoints bucketed into a uniform grid.
///
/// Every stored point falls inside its bucket's cell bounds; a cell holds at
/// most [`MAX_POINTS_PER_CELL`] points (first-come dedup). `BTreeMap` keeps
/// iteration, dump, and nearest-neighbor tie-breaks deterministic.
#[derive(Debug, Clone)]
pub struct GeometryMap {
    cell_m: f64,
    cells: BTreeMap<(i64, i64), Vec<Point2>>,
    len: usize,
}

impl GeometryMap {
    pub fn new(cell_m: f64) -> Self {
        assert!(cell_m > 0.0, "cell size must be positive");
        Self {
            cell_m,
            cells: BTreeMap::new(),
            len: 0,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            (p.x / self.cell_m).floor() as i64,
            (p.y / self.cell_m).floor() as i64,
        )
    }

    /// Min corner of the occupied area (grid-aligned), if any point is stored.
    pub fn origin(&self) -> Option<Point2> {
        self.cells.keys().fold(None, |acc: Option<(i64, i64)>, k| {
            Some(match acc {
                None => *k,
                Some((i, j)) => (i.min(k.0), j.min(k.1)),
            })
        })
        .map(|(i, j)| Point2::new(i as f64 * self.cell_m, j as f64 * self.cell_m))
    }

    /// Size of the occupied area (grid-aligned), zero when empty.
    pub fn extent(&self) -> Point2 {
        let mut min = (i64::MAX, i64::MAX);
        let mut max = (i64::MIN, i64::MIN);
        for k in self.cells.keys() {
            min = (min.0.min(k.0), min.1.min(k.1));
            max = (max.0.max(k.0), max.1.max(k.1));
        }
        if self.cells.is_empty() {
            return Point2::new(0.0, 0.0);
        }
        Point2::new(
            (max.0 - min.0 + 1) as f64 * self.cell_m,
            (max.1 - min.1 + 1) as f64 * self.cell_m,
        )
    }

    /// Insert one world-frame point; silently dropped once its cell is full.
    pub fn insert(&mut self, p: Point2) {
        let key = self.cell_of(p);
        let bucket = self.cells.entry(key).or_default();
        if bucket.len() < MAX_POINTS_PER_CELL {
            bucket.push(p);
            self.len += 1;
        }
    }

    /// All points whose cells intersect the axis-aligned region `[min, max]`.
    ///
    /// Whole cells are returned: a point outside the region but inside an
    /// intersecting cell is included.
    pub fn query_region(&self, min: Point2, max: Point2) -> Vec<Point2> {
        let (i0, j0) = self.cell_of(min);
        let (i1, j1) = self.cell_of(max);
        let mut out = Vec::new();
        for (&(i, j), bucket) in self.cells.range((i0, i64::MIN)..=(i1, i64::MAX)) {
            if j >= j0 && j <= j1 {
                out.extend_from_slice(bucket);
            }
            let _ = i;
        }
        out
    }

    /// Nearest stored point within `max_dist` of `p`, searching outward by
    /// cell rings with an exact lower-bound cutoff.
    pub fn nearest_within(&self, p: Point2, max_dist: f64) -> Option<Point2> {
        if self.cells.is_empty() || max_dist <= 0.0 {
            return None;
        }
        let (ci, cj) = self.cell_of(p);
        let max_ring = (max_dist / self.cell_m).ceil() as i64 + 1;
        let mut best: Option<(f64, Point2)> = None;
        for ring in 0..=max_ring {
            // A point in a cell at Chebyshev ring r is at least (r-1)*cell
            // away from p; past that bound the best match cannot improve.
            if let Some((d, _)) = best {
                if d <= (ring - 1) as f64 * self.cell_m {
                    break;
                }
            }
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs().max(dj.abs()) != ring {
                        continue;
                    }
                    if let Some(bucket) = self.cells.get(&(ci + di, cj + dj)) {
                        for q in bucket {
                            let d = p.dist(*q);
                            if best.map_or(true, |(bd, _)| d < bd) {
                                best = Some((d, *q));
                            }
                        }
                    }
                }
            }
        }
        best.filter(|(d, _)| *d <= max_dist).map(|(_, q)| q)
    }

    /// Line-oriented dump, one `x y` pair per line, deterministic order.
    pub fn dump<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for bucket in self.cells.values() {
            for p in bucket {
                writeln!(w, "{} {}", p.x, p.y)?;
            }
        }
        Ok(())
    }

    /// Load a dump produced by [`GeometryMap::dump`].
    pub fn load<R: BufRead>(r: R, cell_m: f64) -> io::Result<GeometryMap> {
        let mut map = GeometryMap::new(cell_m);
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut it = trimmed.split_whitespace();
            let parse = |tok: Option<&str>| -> io::Result<f64> {
                tok.and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("map dump line {}: expected `x y`", lineno + 1),
                    )
                })
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            map.insert(Point2::new(x, y));
        }
        Ok(map)
    }

    #[cfg(test)]
    fn iter_cells(&self) -> impl Iterator<Item = (&(i64, i64), &Vec<Point2>)> {
        self.cells.iter()
    }
}

/// Transform sensor-frame keypoints by `true_pose` and insert into the map.
pub fn accumulate_map(
    map: &mut GeometryMap,
    kp: &KeypointSet,
    true_pose: &Pose2D,
) -> Result<(), LocalizationError> {
    if kp.frame != Frame::Sensor {
        return Err(LocalizationError::FrameMismatch {
            expected: Frame::Sensor,
            got: kp.frame,
        });
    }
    for p in &kp.points {
        map.insert(true_pose.transform_point(*p));
    }
    Ok(())
}

/// A GNSS-like pose prior: the true pose perturbed by level-alpha noise.
#[derive(Debug, Clone, Copy)]
pub struct NoisyPrior {
    pub pose: Pose2D,
    /// Error level in 1..=4; the sigmas below are scaled by it.
    pub alpha: u8,
    /// Base translation sigma, meters (per axis).
    pub sigma_xy_m: f64,
    /// Base heading sigma, degrees.
    pub sigma_theta_deg: f64,
}

/// Perturb a true pose into a GNSS-like prior: dx, dy ~ N(0, (alpha sigma_xy)^2)
/// independently and dtheta ~ N(0, (alpha sigma_theta)^2), deterministic per
/// seed.
pub fn inject_gnss_noise(
    true_pose: &Pose2D,
    alpha: u8,
    sigma_xy_m: f64,
    sigma_theta_deg: f64,
    seed: u64,
) -> Result<NoisyPrior, LocalizationError> {
    if !(1..=4).contains(&alpha) {
        return Err(LocalizationError::InvalidAlpha(alpha));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xy = Normal::new(0.0, (alpha as f64 * sigma_xy_m).max(1e-12)).unwrap();
    let th = Normal::new(0.0, (alpha as f64 * sigma_theta_deg).max(1e-12)).unwrap();
    let dx = xy.sample(&mut rng);
    let dy = xy.sample(&mut rng);
    let dtheta_deg: f64 = th.sample(&mut rng);
    Ok(NoisyPrior {
        pose: Pose2D::new(
            true_pose.x + dx,
            true_pose.y + dy,
            true_pose.theta + dtheta_deg.to_radians(),
        ),
        alpha,
        sigma_xy_m,
        sigma_theta_deg,
    })
}

/// Shared knobs of one refinement pass.
#[derive(Debug, Clone, Copy)]
pub struct RefineParams {
    pub max_iterations: usize,
    pub trans_eps_m: f64,
    pub rot_eps_rad: f64,
    /// Correspondence gate: ICP rejects pairs farther apart, NDT drops scan
    /// points whose nearest map point is farther at stage entry.
    pub pair_gate_m: f64,
    /// Map lookup window around the prior, 3 alpha sigma_xy.
    pub window_m: f64,
    pub min_correspondences: usize,
    /// NDT cell size for this pass (doubled in the coarse stage).
    pub ndt_cell_m: f64,
}

impl RefineParams {
    /// Parameters for one coarse-to-fine stage at a given prior error level.
    pub fn for_stage(cfg: &LocalizationConfig, alpha: u8, strict: bool) -> Self {
        let a = alpha as f64;
        Self {
            max_iterations: cfg.max_iterations,
            trans_eps_m: TRANS_EPS_M,
            rot_eps_rad: ROT_EPS_RAD,
            pair_gate_m: if strict {
                STRICT_GATE_M
            } else {
                2.0 * a * cfg.sigma_xy_m
            },
            window_m: 3.0 * a * cfg.sigma_xy_m,
            min_correspondences: 10,
            ndt_cell_m: if strict {
                cfg.ndt_cell_m
            } else {
                2.0 * cfg.ndt_cell_m
            },
        }
    }
}

/// Refinement backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMethod {
    Icp,
    Ndt,
}

/// How far the coarse-to-fine strategy got.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStatus {
    /// Both stages succeeded and stayed inside the prior's plausibility
    /// window.
    Refined,
    /// Fine stage failed or left the window; coarse-stage pose returned.
    Degraded,
    /// Coarse stage failed or left the window; prior returned untouched.
    PriorFallback,
}

#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    pub pose: Pose2D,
    pub status: RefineStatus,
}

/// Two-stage refinement: a relaxed-gate pass sized to the prior uncertainty
/// (2 alpha sigma_xy), then a strict 0.5 m pass from the stage-1 pose that
/// retains only reliable correspondences. Failures fall back rather than
/// error: planning must always have a pose to work with.
pub fn coarse_to_fine_refine(
    kp: &KeypointSet,
    map: &GeometryMap,
    prior: &NoisyPrior,
    method: RefineMethod,
    cfg: &LocalizationConfig,
) -> Refinement {
    let run = |start: &NoisyPrior, params: &RefineParams| -> Result<Pose2D, LocalizationError> {
        match method {
            RefineMethod::Icp => refine_pose_icp(kp, map, start, params),
            RefineMethod::Ndt => refine_pose_ndt(kp, map, start, params),
        }
    };
    let coarse_params = RefineParams::for_stage(cfg, prior.alpha, false);
    // A result farther from the prior than the 3-sigma search window (in
    // position or heading) contradicts the prior's own error model; such
    // matches are aliased alignments (the wrong wall), not refinements.
    let plausible = |p: &Pose2D| {
        p.position().dist(prior.pose.position()) <= coarse_params.window_m
            && angle_diff(p.theta, prior.pose.theta)
                <= (3.0 * prior.alpha as f64 * prior.sigma_theta_deg).to_radians()
    };
    let coarse = match run(prior, &coarse_params) {
        Ok(p) if plausible(&p) => p,
        _ => {
            return Refinement {
                pose: prior.pose,
                status: RefineStatus::PriorFallback,
            }
        }
    };
    let fine_start = NoisyPrior {
        pose: coarse,
        ..*prior
    };
    let fine_params = RefineParams::for_stage(cfg, prior.alpha, true);
    match run(&fine_start, &fine_params) {
        Ok(p) if plausible(&p) => Refinement {
            pose: p,
            status: RefineStatus::Refined,
        },
        _ => Refinement {
            pose: coarse,
            status: RefineStatus::Degraded,
        },
    }
}

/// Shared refinement preamble: frame and size checks plus the windowed map
/// lookup around the prior. Returns the local map points.
pub(crate) fn gather_local_map(
    kp: &KeypointSet,
    map: &GeometryMap,
    prior: &NoisyPrior,
    params: &RefineParams,
) -> Result<Vec<Point2>, LocalizationError> {
    if kp.frame != Frame::Sensor {
        return Err(LocalizationError::FrameMismatch {
            expected: Frame::Sensor,
            got: kp.frame,
        });
    }
    if kp.points.len() < 10 {
        return Err(LocalizationError::RefinementFailed {
            reason: format!("only {} keypoints, need at least 10", kp.points.len()),
            fallback: prior.pose,
        });
    }
    let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &kp.points {
        let w = prior.pose.transform_point(*p);
        min = Point2::new(min.x.min(w.x), min.y.min(w.y));
        max = Point2::new(max.x.max(w.x), max.y.max(w.y));
    }
    let pad = params.window_m + params.pair_gate_m;
    let local = map.query_region(
        Point2::new(min.x - pad, min.y - pad),
        Point2::new(max.x + pad, max.y + pad),
    );
    if local.is_empty() {
        return Err(LocalizationError::RefinementFailed {
            reason: "map region around prior is empty".into(),
            fallback: prior.pose,
        });
    }
    Ok(local)
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;
    use crate::scenario::SensorConfig;
    use crate::sensor::raycast_scan;

    /// Feature-rich walled scene: outer rectangle, three tilted interior
    /// blocks, and one diagonal wall, so translation and rotation are
    /// observable from everywhere.
    pub fn feature_rich_segments() -> Vec<(Point2, Point2)> {
        let mut segs = Vec::new();
        let mut rect = |cx: f64, cy: f64, l: f64, w: f64, yaw: f64| {
            let f = Footprint::from_box(Point2::new(cx, cy), l, w, yaw, 0.0);
            for i in 0..4 {
                segs.push((f.corners[i], f.corners[(i + 1) % 4]));
            }
        };
        // Outer 60 x 40 room centered at the origin.
        rect(0.0, 0.0, 60.0, 40.0, 0.0);
        // Interior blocks at varied orientations.
        rect(-15.0, 8.0, 6.0, 3.0, 0.4);
        rect(12.0, -6.0, 5.0, 5.0, 1.1);
        rect(18.0, 10.0, 8.0, 2.0, -0.7);
        // A free-standing diagonal wall.
        segs.push((Point2::new(-20.0, -12.0), Point2::new(-8.0, -4.0)));
        segs
    }

    pub fn scan_cfg() -> SensorConfig {
        SensorConfig {
            n_rays: 720,
            max_range_m: 80.0,
            sigma_range_m: 0.03,
            ..SensorConfig::default()
        }
    }

    /// Build a geometry map by scanning from a loop of true poses.
    pub fn build_map(segments: &[(Point2, Point2)], cfg: &LocalizationConfig) -> GeometryMap {
        use rand::SeedableRng;
        let mut map = GeometryMap::new(cfg.map_cell_m);
        let scfg = scan_cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for k in 0..8 {
            let ang = std::f64::consts::TAU * k as f64 / 8.0;
            let pose = Pose2D::new(10.0 * ang.cos(), 6.0 * ang.sin(), ang);
            let scan = raycast_scan(pose, segments, &[], 0, &scfg, &mut rng);
            let kp = extract_keypoints(&scan, &[], cfg.min_spacing_m, cfg.keypoint_cap);
            accumulate_map(&mut map, &kp, &pose).unwrap();
        }
        map
    }

    /// One noise-free scan from `pose`, as sensor-frame keypoints.
    pub fn scan_keypoints(
        segments: &[(Point2, Point2)],
        pose: Pose2D,
        cfg: &LocalizationConfig,
        seed: u64,
    ) -> KeypointSet {
        use rand::SeedableRng;
        let scfg = scan_cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scan = raycast_scan(pose, segments, &[], 0, &scfg, &mut rng);
        extract_keypoints(&scan, &[], cfg.min_spacing_m, cfg.keypoint_cap)
    }
}
