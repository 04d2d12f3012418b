//! Velocity envelope: per-sample speed cap combining map limits, lateral
//! acceleration through curvature, and comfortable stopping distance to
//! conflict points and stop lines.

/// Curvature magnitudes below this are treated as straight road.
pub const CURVATURE_FLOOR: f64 = 1e-4;

/// Compute the envelope on a uniform arc grid.
///
/// For sample i at arc position `s_grid[i]`:
///   v_i = min( v_map_i, sqrt(a_lat_max / max(|kappa_i|, 1e-4)),
///              min over stop targets of sqrt(2 a_max max(s_t - s_i, 0)) )
/// followed by a backward pass v_i <= sqrt(v_{i+1}^2 + 2 a_max ds) so any
/// drop in the cap is reachable under the braking limit.
///
/// A stop target pins every sample at or beyond it to zero: within one plan
/// the vehicle stops and holds. Resuming past a cleared target is the next
/// replan's job, once the target is behind the ego and filtered out.
pub fn velocity_envelope(
    s_grid: &[f64],
    v_map: &[f64],
    curvature: &[f64],
    stop_targets: &[f64],
    a_max: f64,
    a_lat_max: f64,
) -> Vec<f64> {
    assert_eq!(s_grid.len(), v_map.len());
    assert_eq!(s_grid.len(), curvature.len());
    let n = s_grid.len();
    let mut v = vec![0.0; n];
    for i in 0..n {
        let mut cap = v_map[i];
        let k = curvature[i].abs().max(CURVATURE_FLOOR);
        cap = cap.min((a_lat_max / k).sqrt());
        for &st in stop_targets {
            cap = cap.min((2.0 * a_max * (st - s_grid[i]).max(0.0)).sqrt());
        }
        v[i] = cap;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let ds = s_grid[i + 1] - s_grid[i];
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * a_max * ds).sqrt());
    }
    v
}
