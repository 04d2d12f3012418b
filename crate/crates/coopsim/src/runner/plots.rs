//! Standalone SVG plot emission: BEV snapshots and time-series charts.
//!
//! Hand-rolled SVG keeps the artifact chain dependency-free and the output
//! deterministic byte-for-byte. Every file carries the run identity in a
//! leading comment. An empty log still produces valid headers-only files.

use std::fs;
use std::path::Path;

use crate::geom::Footprint;

use super::{RunError, RunLog, TickRecord};

/// Number of BEV snapshots spread evenly over the run.
const BEV_SNAPSHOTS: usize = 6;
const CHART_W: f64 = 720.0;
const CHART_H: f64 = 380.0;
/// Chart margins: left, right, top, bottom.
const MARGIN: (f64, f64, f64, f64) = (64.0, 16.0, 36.0, 44.0);

struct Svg {
    body: String,
    w: f64,
    h: f64,
}

impl Svg {
    fn new(w: f64, h: f64, identity: &str, title: &str) -> Self {
        let mut body = String::new();
        body.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" \
             font-family=\"sans-serif\">\n<!-- {identity} -->\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n\
             <text x=\"{x}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\" \
             fill=\"#222\">{title}</text>\n",
            x = w / 2.0,
        ));
        Svg { body, w, h }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dash: Option<&str>) {
        if pts.len() < 2 {
            return;
        }
        let d = pts
            .iter()
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect::<Vec<_>>()
            .join(" ");
        let dash = dash.map_or(String::new(), |d| format!(" stroke-dasharray=\"{d}\""));
        self.body.push_str(&format!(
            "<polyline points=\"{d}\" fill=\"none\" stroke=\"{stroke}\" \
             stroke-width=\"{width}\"{dash}/>\n"
        ));
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, stroke: &str) {
        let d = pts
            .iter()
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect::<Vec<_>>()
            .join(" ");
        self.body.push_str(&format!(
            "<polygon points=\"{d}\" fill=\"{fill}\" fill-opacity=\"0.65\" \
             stroke=\"{stroke}\" stroke-width=\"1\"/>\n"
        ));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\"/>\n"
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" \
             text-anchor=\"{anchor}\" fill=\"{fill}\">{s}</text>\n"
        ));
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        self.body.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
             stroke=\"{stroke}\" stroke-width=\"{width}\"/>\n"
        ));
    }

    fn finish(mut self) -> String {
        let _ = (self.w, self.h);
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear data-to-pixel mapping for one chart axis.
#[derive(Clone, Copy)]
struct AxisMap {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl AxisMap {
    fn map(&self, v: f64) -> f64 {
        if (self.d1 - self.d0).abs() < 1e-12 {
            return (self.p0 + self.p1) / 2.0;
        }
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

/// "Nice" rounded tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(mag * 10.0);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 {
        out.push(v);
        v += step;
    }
    out
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dash: Option<&'a str>,
    points: Vec<(f64, f64)>,
}

/// Render one line chart with axes, ticks, and a legend.
fn line_chart(
    identity: &str,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
) -> String {
    let mut svg = Svg::new(CHART_W, CHART_H, identity, title);
    let (ml, mr, mt, mb) = MARGIN;
    let (px0, px1) = (ml, CHART_W - mr);
    let (py0, py1) = (CHART_H - mb, mt + 8.0);

    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x_lo, x_hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
            (lo.min(*x), hi.max(*x))
        });
    let (y_lo, y_hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
            (lo.min(*y), hi.max(*y))
        });
    let (x_lo, x_hi) = if finite.is_empty() { (0.0, 1.0) } else { (x_lo, x_hi) };
    let (y_lo, y_hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else {
        (y_lo.min(0.0), y_hi + (y_hi - y_lo.min(0.0)).max(1e-6) * 0.08)
    };
    let xm = AxisMap { d0: x_lo, d1: x_hi, p0: px0, p1: px1 };
    let ym = AxisMap { d0: y_lo, d1: y_hi, p0: py0, p1: py1 };

    // Axes + grid.
    svg.line(px0, py0, px1, py0, "#444", 1.0);
    svg.line(px0, py0, px0, py1, "#444", 1.0);
    for tx in ticks(x_lo, x_hi, 6) {
        let x = xm.map(tx);
        svg.line(x, py0, x, py1, "#eee", 1.0);
        svg.line(x, py0, x, py0 + 4.0, "#444", 1.0);
        svg.text(x, py0 + 18.0, 11.0, "middle", "#333", &trim_num(tx));
    }
    for ty in ticks(y_lo, y_hi, 5) {
        let y = ym.map(ty);
        svg.line(px0, y, px1, y, "#eee", 1.0);
        svg.line(px0 - 4.0, y, px0, y, "#444", 1.0);
        svg.text(px0 - 8.0, y + 4.0, 11.0, "end", "#333", &trim_num(ty));
    }
    svg.text((px0 + px1) / 2.0, CHART_H - 8.0, 12.0, "middle", "#333", x_label);
    svg.body.push_str(&format!(
        "<text x=\"14\" y=\"{y:.2}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333\" \
         transform=\"rotate(-90 14 {y:.2})\">{y_label}</text>\n",
        y = (py0 + py1) / 2.0,
    ));

    // Series, split at non-finite samples.
    for s in series {
        let mut run: Vec<(f64, f64)> = Vec::new();
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                run.push((xm.map(x), ym.map(y)));
            } else if run.len() > 1 {
                svg.polyline(&run, s.color, 1.6, s.dash);
                run.clear();
            } else {
                run.clear();
            }
        }
        svg.polyline(&run, s.color, 1.6, s.dash);
    }

    // Legend.
    let mut ly = py1 + 6.0;
    for s in series {
        svg.line(px1 - 150.0, ly, px1 - 126.0, ly, s.color, 2.0);
        svg.text(px1 - 120.0, ly + 4.0, 11.0, "start", "#333", s.label);
        ly += 16.0;
    }
    svg.finish()
}

fn trim_num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn identity(log: &RunLog) -> String {
    format!(
        "scenario={} mode={} seed={} alpha={}",
        log.header.scenario, log.header.mode, log.header.seed, log.header.alpha
    )
}

/// Speed vs envelope time series: the executed speed against the envelope
/// bound that constrained it (the previous tick's sample for the executed
/// step, the initial sample at tick zero).
fn speed_envelope_chart(log: &RunLog) -> String {
    let speed: Vec<(f64, f64)> = log.ticks.iter().map(|t| (t.t_s, t.exec.v)).collect();
    let envelope: Vec<(f64, f64)> = log
        .ticks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let bound = if k == 0 {
                log.ticks[0].plan.envelope_v.first().copied()
            } else {
                log.ticks[k - 1].plan.envelope_v.get(1).copied()
            };
            (t.t_s, bound.unwrap_or(f64::NAN))
        })
        .collect();
    line_chart(
        &identity(log),
        "Executed speed vs velocity envelope",
        "time [s]",
        "speed [m/s]",
        &[
            Series {
                label: "envelope bound",
                color: "#d62728",
                dash: Some("5 3"),
                points: envelope,
            },
            Series {
                label: "executed speed",
                color: "#1f77b4",
                dash: None,
                points: speed,
            },
        ],
    )
}

/// Per-tick V2V bandwidth (sent), kbit/s.
fn bandwidth_chart(log: &RunLog) -> String {
    let tick_s = log.header.tick_s.max(1e-9);
    let sent: Vec<(f64, f64)> = log
        .ticks
        .iter()
        .map(|t| (t.t_s, t.comms.bytes_sent as f64 * 8.0 / tick_s / 1e3))
        .collect();
    let delivered: Vec<(f64, f64)> = log
        .ticks
        .iter()
        .map(|t| (t.t_s, t.comms.bytes_delivered as f64 * 8.0 / tick_s / 1e3))
        .collect();
    line_chart(
        &identity(log),
        "V2V bandwidth",
        "time [s]",
        "kbit/s",
        &[
            Series {
                label: "sent",
                color: "#1f77b4",
                dash: None,
                points: sent,
            },
            Series {
                label: "delivered",
                color: "#2ca02c",
                dash: Some("4 3"),
                points: delivered,
            },
        ],
    )
}

/// Wall-clock stage timings per tick.
fn timings_chart(log: &RunLog) -> String {
    let pick = |f: fn(&super::TickTimings) -> f64| -> Vec<(f64, f64)> {
        log.timings
            .iter()
            .map(|t| (t.tick as f64 * log.header.tick_s, f(t)))
            .collect()
    };
    line_chart(
        &identity(log),
        "Per-tick stage timings (wall clock)",
        "time [s]",
        "stage [ms]",
        &[
            Series {
                label: "perception",
                color: "#1f77b4",
                dash: None,
                points: pick(|t| t.perception_ms),
            },
            Series {
                label: "localization",
                color: "#ff7f0e",
                dash: None,
                points: pick(|t| t.localization_ms),
            },
            Series {
                label: "comms",
                color: "#2ca02c",
                dash: None,
                points: pick(|t| t.comms_ms),
            },
            Series {
                label: "planning",
                color: "#d62728",
                dash: None,
                points: pick(|t| t.planning_ms),
            },
        ],
    )
}

/// One bird's-eye-view snapshot of a tick: map, route, vehicles, actors,
/// fused objects, and the planned path.
fn bev_snapshot(log: &RunLog, tick: &TickRecord) -> String {
    let w = 720.0;
    let h = 560.0;
    let mut svg = Svg::new(
        w,
        h,
        &identity(log),
        &format!("BEV t = {:.1} s ({})", tick.t_s, log.header.mode),
    );

    // World bounds: static geometry plus everything in this tick.
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |x: f64, y: f64| {
        lo.0 = lo.0.min(x);
        lo.1 = lo.1.min(y);
        hi.0 = hi.0.max(x);
        hi.1 = hi.1.max(y);
    };
    for poly in log.header.boundaries.iter().chain(log.header.lanes.iter()) {
        for p in poly {
            grow(p[0], p[1]);
        }
    }
    for v in &tick.vehicles {
        grow(v.true_pose[0], v.true_pose[1]);
    }
    for a in &tick.actors {
        grow(a.x, a.y);
    }
    drop(grow);
    if !lo.0.is_finite() {
        lo = (-10.0, -10.0);
        hi = (10.0, 10.0);
    }
    let pad = 6.0;
    let (wx, wy) = (hi.0 - lo.0 + 2.0 * pad, hi.1 - lo.1 + 2.0 * pad);
    let scale = ((w - 20.0) / wx).min((h - 56.0) / wy);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            10.0 + (x - (lo.0 - pad)) * scale,
            (h - 10.0) - (y - (lo.1 - pad)) * scale,
        )
    };
    let fp_px = |f: &Footprint| -> Vec<(f64, f64)> {
        f.corners.iter().map(|c| to_px(c.x, c.y)).collect()
    };

    for lane in &log.header.lanes {
        let pts: Vec<(f64, f64)> = lane.iter().map(|p| to_px(p[0], p[1])).collect();
        svg.polyline(&pts, "#c9c9c9", 1.2, Some("6 4"));
    }
    let route: Vec<(f64, f64)> = log.header.route_xy.iter().map(|p| to_px(p[0], p[1])).collect();
    svg.polyline(&route, "#9ecae1", 1.6, None);
    for b in &log.header.boundaries {
        let pts: Vec<(f64, f64)> = b.iter().map(|p| to_px(p[0], p[1])).collect();
        svg.polyline(&pts, "#333333", 2.2, None);
    }

    for a in &tick.actors {
        let f = Footprint::from_box(
            crate::geom::Point2::new(a.x, a.y),
            a.length,
            a.width,
            a.yaw,
            tick.t_s,
        );
        svg.polygon(&fp_px(&f), "#d62728", "#8c1a1a");
    }
    for v in &tick.vehicles {
        let (fill, stroke) = if v.id == 0 {
            ("#1f77b4", "#10405e")
        } else {
            ("#2ca02c", "#14521a")
        };
        let f = Footprint::from_box(
            crate::geom::Point2::new(v.true_pose[0], v.true_pose[1]),
            super::VEHICLE_LWH[0],
            super::VEHICLE_LWH[1],
            v.true_pose[2],
            tick.t_s,
        );
        svg.polygon(&fp_px(&f), fill, stroke);
    }
    for o in &tick.fused {
        let (x, y) = to_px(o.x, o.y);
        let color = if o.from_ego { "#1f77b4" } else { "#ff7f0e" };
        svg.circle(x, y, 3.0, color);
    }
    let plan: Vec<(f64, f64)> = tick.plan.traj_xy.iter().map(|p| to_px(p[0], p[1])).collect();
    svg.polyline(&plan, "#1f77b4", 1.4, Some("3 3"));

    svg.text(
        12.0,
        h - 14.0,
        11.0,
        "start",
        "#555",
        &format!(
            "v = {:.1} m/s, fused = {} ({} remote), sent/delivered/dropped = {}/{}/{}",
            tick.exec.v,
            tick.fused.len(),
            tick.fused.iter().filter(|o| !o.from_ego).count(),
            tick.comms.sent,
            tick.comms.delivered,
            tick.comms.dropped,
        ),
    );
    svg.finish()
}

/// Write every plot for the run into `dir`.
pub fn write_plots(log: &RunLog, dir: &Path) -> Result<(), RunError> {
    let io = |path: &Path, e: std::io::Error| RunError::Io {
        path: path.display().to_string(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let write = |name: &str, content: String| -> Result<(), RunError> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| io(&path, e))
    };
    write("speed_envelope.svg", speed_envelope_chart(log))?;
    write("bandwidth.svg", bandwidth_chart(log))?;
    write("timings.svg", timings_chart(log))?;
    if log.ticks.is_empty() {
        return Ok(());
    }
    let n = log.ticks.len();
    let count = BEV_SNAPSHOTS.min(n);
    for i in 0..count {
        let idx = if count == 1 { 0 } else { i * (n - 1) / (count - 1) };
        write(
            &format!("bev_{i:02}.svg"),
            bev_snapshot(log, &log.ticks[idx]),
        )?;
    }
    Ok(())
}
