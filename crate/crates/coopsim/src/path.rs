//! Arc-length parameterized reference paths.
//!
//! A path is resampled from a polyline at uniform spacing `ds`, with unit
//! normals (left of travel) and curvature from finite differences of the
//! tangent heading, smoothed over a 3-sample window.

use crate::geom::{wrap_angle, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sample spacing in meters.
pub const DEFAULT_DS: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has zero length")]
    ZeroLength,
    #[error("sample spacing must be positive, got {0}")]
    BadSpacing(f64),
}

/// Centerline samples at uniform arc-length spacing with per-sample frame data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArcLengthPath {
    /// Centerline points `c(s)`.
    pub centerline: Vec<Point2>,
    /// Unit left normals `n(s)`.
    pub normals: Vec<Point2>,
    /// Tangent headings in radians.
    pub headings: Vec<f64>,
    /// Signed curvature `kappa(s)` in 1/m (positive turning left).
    pub curvature: Vec<f64>,
    /// Sample spacing in meters.
    pub ds: f64,
    /// Total length in meters.
    pub total_length: f64,
}

impl ArcLengthPath {
    /// Resample a polyline at uniform arc-length spacing.
    pub fn from_polyline(points: &[Point2], ds: f64) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::TooFewPoints(points.len()));
        }
        if ds <= 0.0 {
            return Err(PathError::BadSpacing(ds));
        }
        // Cumulative arc length of the raw polyline.
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            let d = w[0].dist(w[1]);
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        if total < ds {
            return Err(PathError::ZeroLength);
        }

        let n_samples = (total / ds).floor() as usize + 1;
        let mut centerline = Vec::with_capacity(n_samples);
        let mut seg = 0usize;
        for k in 0..n_samples {
            let s = (k as f64 * ds).min(total);
            while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let t = if span > 1e-12 { (s - cum[seg]) / span } else { 0.0 };
            centerline.push(points[seg] + (points[seg + 1] - points[seg]).scale(t));
        }

        let total_length = (n_samples - 1) as f64 * ds;
        let mut headings = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let (a, b) = if k == 0 {
                (centerline[0], centerline[1])
            } else if k == n_samples - 1 {
                (centerline[n_samples - 2], centerline[n_samples - 1])
            } else {
                (centerline[k - 1], centerline[k + 1])
            };
            let d = b - a;
            headings.push(d.y.atan2(d.x));
        }
        let normals = headings
            .iter()
            .map(|h| Point2::new(-h.sin(), h.cos()))
            .collect();

        // Curvature: d(heading)/ds by central differences, then a 3-sample
        // moving average to suppress discretization spikes.
        let mut raw = vec![0.0; n_samples];
        for k in 0..n_samples {
            let (i, j, span) = if k == 0 {
                (0, 1, ds)
            } else if k == n_samples - 1 {
                (n_samples - 2, n_samples - 1, ds)
            } else {
                (k - 1, k + 1, 2.0 * ds)
            };
            raw[k] = wrap_angle(headings[j] - headings[i]) / span;
        }
        let mut curvature = vec![0.0; n_samples];
        for k in 0..n_samples {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n_samples - 1);
            let window = &raw[lo..=hi];
            curvature[k] = window.iter().sum::<f64>() / window.len() as f64;
        }

        Ok(ArcLengthPath {
            centerline,
            normals,
            headings,
            curvature,
            ds,
            total_length,
        })
    }

    pub fn len(&self) -> usize {
        self.centerline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centerline.is_empty()
    }

    /// Arc length of sample `k`.
    pub fn s_at(&self, k: usize) -> f64 {
        k as f64 * self.ds
    }

    /// Index of the sample nearest to arc length `s` (clamped).
    pub fn index_at(&self, s: f64) -> usize {
        ((s / self.ds).round() as i64).clamp(0, self.len() as i64 - 1) as usize
    }

    /// World point at lateral offset `y` from arc length sample `k`.
    pub fn offset_point(&self, k: usize, y: f64) -> Point2 {
        self.centerline[k] + self.normals[k].scale(y)
    }

    /// Interpolated centerline point and heading at arbitrary arc length.
    pub fn interpolate(&self, s: f64) -> (Point2, f64) {
        let s = s.clamp(0.0, self.total_length);
        let k = ((s / self.ds).floor() as usize).min(self.len() - 2);
        let t = (s - self.s_at(k)) / self.ds;
        let p = self.centerline[k] + (self.centerline[k + 1] - self.centerline[k]).scale(t);
        let dh = wrap_angle(self.headings[k + 1] - self.headings[k]);
        (p, wrap_angle(self.headings[k] + t * dh))
    }

    /// World point at lateral offset `y` from arbitrary arc length `s`,
    /// interpolating both the centerline and the normal.
    pub fn offset_at(&self, s: f64, y: f64) -> Point2 {
        let s = s.clamp(0.0, self.total_length);
        let k = ((s / self.ds).floor() as usize).min(self.len() - 2);
        let t = (s - self.s_at(k)) / self.ds;
        let c = self.centerline[k] + (self.centerline[k + 1] - self.centerline[k]).scale(t);
        let n = self.normals[k] + (self.normals[k + 1] - self.normals[k]).scale(t);
        let nn = n.norm().max(1e-12);
        c + n.scale(y / nn)
    }

    /// Interpolated signed curvature at arbitrary arc length.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.total_length);
        let k = ((s / self.ds).floor() as usize).min(self.len() - 2);
        let t = (s - self.s_at(k)) / self.ds;
        self.curvature[k] * (1.0 - t) + self.curvature[k + 1] * t
    }

    /// Arc length and lateral offset of the sample closest to a world point.
    pub fn project(&self, p: Point2) -> (f64, f64) {
        let mut best_k = 0;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in self.centerline.iter().enumerate() {
            let d2 = (p.x - c.x).powi(2) + (p.y - c.y).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_k = k;
            }
        }
        let lateral = (p - self.centerline[best_k]).dot(self.normals[best_k]);
        (self.s_at(best_k), lateral)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn straight_line_resampling() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)];
        let path = ArcLengthPath::from_polyline(&pts, 0.5).unwrap();
        assert_eq!(path.len(), 21);
        assert_relative_eq!(path.total_length, 10.0);
        for w in path.centerline.windows(2) {
            let gap = w[0].dist(w[1]);
            assert!((gap - 0.5).abs() < 0.005, "spacing off: {gap}");
        }
        for n in &path.normals {
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-9);
            assert_relative_eq!(n.y, 1.0, epsilon = 1e-9);
        }
        for k in &path.curvature {
            assert!(k.abs() < 1e-9);
        }
    }

    #[test]
    fn circle_curvature_matches_radius() {
        for radius in [10.0f64, 25.0, 60.0] {
            let ds = (radius / 50.0).min(0.5);
            let n = 400;
            let pts: Vec<Point2> = (0..=n)
                .map(|i| {
                    let a = i as f64 / n as f64 * std::f64::consts::PI;
                    Point2::new(radius * a.cos(), radius * a.sin())
                })
                .collect();
            let path = ArcLengthPath::from_polyline(&pts, ds).unwrap();
            // Skip endpoints where one-sided differences are less accurate.
            for k in 3..path.len() - 3 {
                let kappa = path.curvature[k].abs();
                let err = (kappa - 1.0 / radius).abs() / (1.0 / radius);
                assert!(err < 0.02, "radius {radius}: kappa {kappa} at {k}");
            }
        }
    }

    #[test]
    fn normals_perpendicular_to_tangent() {
        let pts: Vec<Point2> = (0..=100)
            .map(|i| {
                let x = i as f64 * 0.5;
                Point2::new(x, (0.1 * x).sin() * 4.0)
            })
            .collect();
        let path = ArcLengthPath::from_polyline(&pts, 0.5).unwrap();
        for k in 0..path.len() {
            let t = Point2::new(path.headings[k].cos(), path.headings[k].sin());
            assert!(t.dot(path.normals[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn spacing_within_one_percent() {
        let pts: Vec<Point2> = (0..=200)
            .map(|i| {
                let a = i as f64 * 0.02;
                Point2::new(30.0 * a.cos(), 20.0 * a.sin())
            })
            .collect();
        let path = ArcLengthPath::from_polyline(&pts, 0.5).unwrap();
        for w in path.centerline.windows(2) {
            let gap = w[0].dist(w[1]);
            assert!((gap - 0.5).abs() <= 0.005, "gap {gap}");
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            ArcLengthPath::from_polyline(&[Point2::new(0.0, 0.0)], 0.5),
            Err(PathError::TooFewPoints(1))
        ));
        let same = [Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)];
        assert!(ArcLengthPath::from_polyline(&same, 0.5).is_err());
    }
}
