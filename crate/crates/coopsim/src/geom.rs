//! Planar geometry primitives shared by every subsystem.
//!
//! World frame is ENU: x east, y north, yaw counter-clockwise from +x,
//! wrapped to `(-pi, pi]`. All planning geometry is bird's-eye-view planar;
//! z coordinates are carried through untouched where they appear.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("degenerate footprint (area {area:.3e} m^2)")]
    DegenerateFootprint { area: f64 },
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = theta % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Absolute wrapped difference between two angles, in radians.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// A 2D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// World-frame planar pose: position in meters, heading in radians CCW from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Rotate a local-frame vector into the world frame (no translation).
    pub fn rotate_vector(&self, v: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// Map a world-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Pose composition: `self` applied after `other` (self * other).
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let p = self.transform_point(Point2::new(other.x, other.y));
        Pose2D::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.theta,
        )
    }
}

/// Oriented-box corners projected to the BEV plane.
///
/// Corners are stored in counter-clockwise order; `valid_time` is the
/// scenario time (seconds) at which this footprint applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub corners: [Point2; 4],
    pub valid_time: f64,
}

impl Footprint {
    /// Build the footprint of an oriented box with center, length (along yaw),
    /// width, and yaw.
    pub fn from_box(center: Point2, length: f64, width: f64, yaw: f64, valid_time: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let hl = 0.5 * length;
        let hw = 0.5 * width;
        let corner = |lx: f64, ly: f64| {
            Point2::new(center.x + c * lx - s * ly, center.y + s * lx + c * ly)
        };
        Footprint {
            corners: [
                corner(hl, hw),
                corner(-hl, hw),
                corner(-hl, -hw),
                corner(hl, -hw),
            ],
            valid_time,
        }
    }

    /// Signed area via the shoelace formula (positive for CCW corners).
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        0.5 * (0..4)
            .map(|i| c[i].cross(c[(i + 1) % 4]))
            .sum::<f64>()
    }

    pub fn centroid(&self) -> Point2 {
        let mut p = Point2::default();
        for c in &self.corners {
            p = p + *c;
        }
        p.scale(0.25)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.corners.iter().any(|c| !c.is_finite()) {
            return Err(GeomError::NonFinite {
                context: "footprint corner",
            });
        }
        let area = self.area();
        if area.abs() < 1e-9 {
            return Err(GeomError::DegenerateFootprint { area });
        }
        Ok(())
    }

    /// Point-in-convex-quadrilateral test. Works for either winding.
    pub fn contains(&self, p: Point2) -> bool {
        let mut sign = 0i8;
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let cross = (b - a).cross(p - a);
            if cross.abs() < 1e-12 {
                continue;
            }
            let s = if cross > 0.0 { 1 } else { -1 };
            if sign == 0 {
                sign = s;
            } else if sign != s {
                return false;
            }
        }
        true
    }

    /// Expand the box outward by `margin` on all sides, keeping center and
    /// orientation.
    pub fn dilate(&self, margin: f64) -> Footprint {
        let c = self.centroid();
        let mut out = *self;
        for corner in out.corners.iter_mut() {
            let d = *corner - c;
            // The corner offset decomposes into the two edge half-extents;
            // growing each by `margin` scales the diagonal accordingly.
            let e0 = (self.corners[1] - self.corners[0]).scale(0.5);
            let e1 = (self.corners[3] - self.corners[0]).scale(0.5);
            let l0 = e0.norm();
            let l1 = e1.norm();
            if l0 < 1e-12 || l1 < 1e-12 {
                continue;
            }
            let u0 = e0.scale(1.0 / l0);
            let u1 = e1.scale(1.0 / l1);
            let a = d.dot(u0);
            let b = d.dot(u1);
            let a2 = a.signum() * (a.abs() + margin);
            let b2 = b.signum() * (b.abs() + margin);
            *corner = c + u0.scale(a2) + u1.scale(b2);
        }
        out
    }
}

/// Distance from a point to a segment `[a, b]`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 < 1e-18 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab.scale(t))
}

/// Euclidean point-to-footprint distance: zero inside the quadrilateral,
/// otherwise the minimum distance to its boundary.
pub fn point_to_footprint_distance(p: Point2, f: &Footprint) -> Result<f64, GeomError> {
    f.validate()?;
    if !p.is_finite() {
        return Err(GeomError::NonFinite { context: "query point" });
    }
    if f.contains(p) {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let d = point_segment_distance(p, f.corners[i], f.corners[(i + 1) % 4]);
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Distance between two footprints: zero when they overlap, otherwise the
/// minimum boundary-to-boundary distance.
pub fn footprint_distance(a: &Footprint, b: &Footprint) -> f64 {
    if footprints_overlap(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            let d = segment_segment_distance(
                a.corners[i],
                a.corners[(i + 1) % 4],
                b.corners[j],
                b.corners[(j + 1) % 4],
            );
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Convex overlap test via the separating axis theorem.
pub fn footprints_overlap(a: &Footprint, b: &Footprint) -> bool {
    for (fp, other) in [(a, b), (b, a)] {
        for i in 0..4 {
            let edge = fp.corners[(i + 1) % 4] - fp.corners[i];
            let axis = Point2::new(-edge.y, edge.x);
            let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in &fp.corners {
                let v = c.dot(axis);
                amin = amin.min(v);
                amax = amax.max(v);
            }
            for c in &other.corners {
                let v = c.dot(axis);
                bmin = bmin.min(v);
                bmax = bmax.max(v);
            }
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

fn segment_segment_distance(a0: Point2, a1: Point2, b0: Point2, b1: Point2) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

pub fn segments_intersect(a0: Point2, a1: Point2, b0: Point2, b1: Point2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point2, q0: Point2, q1: Point2, d: f64| -> bool {
        d == 0.0
            && p.x >= q0.x.min(q1.x) - 1e-12
            && p.x <= q0.x.max(q1.x) + 1e-12
            && p.y >= q0.y.min(q1.y) - 1e-12
            && p.y <= q0.y.max(q1.y) + 1e-12
    };
    on(b0, a0, a1, d1) || on(b1, a0, a1, d2) || on(a0, b0, b1, d3) || on(a1, b0, b1, d4)
}

/// Ray-segment intersection: returns the range along the ray, if any.
///
/// The ray starts at `origin` with unit direction `dir`.
pub fn ray_segment_intersection(
    origin: Point2,
    dir: Point2,
    a: Point2,
    b: Point2,
) -> Option<f64> {
    let v1 = origin - a;
    let v2 = b - a;
    let v3 = Point2::new(-dir.y, dir.x);
    let denom = v2.dot(v3);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = v2.cross(v1) / denom;
    let u = v1.dot(v3) / denom;
    if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        for k in -20..20 {
            let a = wrap_angle(0.7 + k as f64 * 1.3);
            assert!(a > -std::f64::consts::PI && a <= std::f64::consts::PI);
        }
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let p = Pose2D::new(3.1, -2.4, 1.9);
        let id = p.compose(&p.inverse());
        assert!(id.x.abs() < 1e-9);
        assert!(id.y.abs() < 1e-9);
        assert!(wrap_angle(id.theta).abs() < 1e-9);
    }

    #[test]
    fn footprint_centroid_is_inside() {
        let f = Footprint::from_box(Point2::new(2.0, 3.0), 4.0, 2.0, 0.7, 0.0);
        assert_eq!(point_to_footprint_distance(f.centroid(), &f).unwrap(), 0.0);
    }

    #[test]
    fn unit_square_outside_distance() {
        // Unit axis-aligned square centered at origin, query at (2, 0).
        let f = Footprint::from_box(Point2::new(0.0, 0.0), 1.0, 1.0, 0.0, 0.0);
        let d = point_to_footprint_distance(Point2::new(2.0, 0.0), &f).unwrap();
        assert_relative_eq!(d, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_footprint_rejected() {
        let f = Footprint {
            corners: [Point2::new(0.0, 0.0); 4],
            valid_time: 0.0,
        };
        assert!(matches!(
            point_to_footprint_distance(Point2::new(1.0, 1.0), &f),
            Err(GeomError::DegenerateFootprint { .. })
        ));
    }

    #[test]
    fn dilate_grows_box_dimensions() {
        let f = Footprint::from_box(Point2::new(1.0, -2.0), 4.0, 2.0, 0.3, 0.0);
        let g = f.dilate(0.5);
        let l = g.corners[0].dist(g.corners[1]);
        let w = g.corners[1].dist(g.corners[2]);
        assert_relative_eq!(l, 5.0, epsilon = 1e-9);
        assert_relative_eq!(w, 3.0, epsilon = 1e-9);
        assert_relative_eq!(g.centroid().x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(g.centroid().y, -2.0, epsilon = 1e-9);
    }

    /// Brute-force oracle: distance by dense sampling of the boundary.
    fn boundary_sampling_distance(p: Point2, f: &Footprint, n: usize) -> f64 {
        if f.contains(p) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let a = f.corners[i];
            let b = f.corners[(i + 1) % 4];
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let q = a + (b - a).scale(t);
                best = best.min(p.dist(q));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn distance_matches_boundary_sampling(
            px in -20.0..20.0f64, py in -20.0..20.0f64,
            cx in -5.0..5.0f64, cy in -5.0..5.0f64,
            l in 0.5..8.0f64, w in 0.5..5.0f64, yaw in -3.1..3.1f64,
        ) {
            let f = Footprint::from_box(Point2::new(cx, cy), l, w, yaw, 0.0);
            let p = Point2::new(px, py);
            let fast = point_to_footprint_distance(p, &f).unwrap();
            let slow = boundary_sampling_distance(p, &f, 2500);
            prop_assert!((fast - slow).abs() < 1e-3, "fast={} slow={}", fast, slow);
        }

        #[test]
        fn distance_is_one_lipschitz(
            px in -15.0..15.0f64, py in -15.0..15.0f64,
            dx in -0.5..0.5f64, dy in -0.5..0.5f64,
            yaw in -3.1..3.1f64,
        ) {
            let f = Footprint::from_box(Point2::new(0.0, 0.0), 4.0, 2.0, yaw, 0.0);
            let p = Point2::new(px, py);
            let q = Point2::new(px + dx, py + dy);
            let dp = point_to_footprint_distance(p, &f).unwrap();
            let dq = point_to_footprint_distance(q, &f).unwrap();
            prop_assert!((dp - dq).abs() <= p.dist(q) + 1e-12);
        }

        #[test]
        fn rigid_transform_preserves_distances(
            ax in -10.0..10.0f64, ay in -10.0..10.0f64,
            bx in -10.0..10.0f64, by in -10.0..10.0f64,
            tx in -10.0..10.0f64, ty in -10.0..10.0f64, th in -3.1..3.1f64,
        ) {
            let pose = Pose2D::new(tx, ty, th);
            let a = Point2::new(ax, ay);
            let b = Point2::new(bx, by);
            let d0 = a.dist(b);
            let d1 = pose.transform_point(a).dist(pose.transform_point(b));
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn inverse_transform_round_trips(
            px in -10.0..10.0f64, py in -10.0..10.0f64,
            tx in -10.0..10.0f64, ty in -10.0..10.0f64, th in -3.1..3.1f64,
        ) {
            let pose = Pose2D::new(tx, ty, th);
            let p = Point2::new(px, py);
            let q = pose.inverse_transform_point(pose.transform_point(p));
            prop_assert!(p.dist(q) < 1e-9);
        }
    }
}
