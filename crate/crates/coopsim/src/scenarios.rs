//! Built-in scenario library.
//!
//! All scenarios share one road frame: a straight two-lane main road running
//! east along the x axis (eastbound centerline `y = -1.8`, westbound
//! `y = +1.8`), walled by building faces at `y = +-6`. The ego vehicle drives
//! the eastbound lane. Occlusion archetypes add a crossing road or alley near
//! `x = 70` and place a building corner so that a crossing actor stays hidden
//! until the ego is close; a connected vehicle with clear line of sight acts
//! as the V2V sender. Corner positions and actor timings are tuned so that in
//! ego-only mode the late reveal forces a hard stop that ends inside the
//! actor's safety margin (a violation) but short of its body (no collision),
//! while in coop mode the shared detections trigger a gentle early brake.
//!
//! Builders return plain [`Scenario`] values; the TOML files shipped under
//! `scenarios/` are serialized from these builders and kept in sync by a test.

use std::f64::consts::FRAC_PI_2;

use crate::object::ObjectClass;
use crate::scenario::{
    Actor, Boundary, EgoSpec, Lane, MapSpec, Scenario, SenderSpec, SimSpec, TrajectorySample,
};

/// Eastbound main-road centerline offset.
const LANE_E_Y: f64 = -1.8;
/// Westbound main-road centerline offset.
const LANE_W_Y: f64 = 1.8;
/// Building faces sit this far from the road axis.
const WALL_Y: f64 = 6.0;
/// Buildings extend this far back from their road-side face.
const WALL_DEPTH: f64 = 18.0;
/// Crossing-road / junction center.
const CROSS_X: f64 = 70.0;
/// Default main-road speed limit (urban arterial).
const MAIN_LIMIT: f64 = 8.3;
/// Standard passenger-car box.
const CAR_LWH: [f64; 3] = [4.5, 1.9, 1.6];

fn lane(id: &str, points: &[[f64; 2]], limit: f64) -> Lane {
    Lane {
        id: id.to_string(),
        points_xy_m: points.to_vec(),
        speed_limit_mps: limit,
    }
}

/// Both main-road lanes; the ego route uses `main_e`.
fn main_lanes(limit: f64) -> Vec<Lane> {
    vec![
        lane("main_e", &[[0.0, LANE_E_Y], [160.0, LANE_E_Y]], limit),
        lane("main_w", &[[160.0, LANE_W_Y], [0.0, LANE_W_Y]], limit),
    ]
}

/// Closed rectangular building outline.
fn block(x0: f64, y0: f64, x1: f64, y1: f64) -> Boundary {
    Boundary {
        points_xy_m: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]],
    }
}

/// Short pilaster jutting from a wall face into the road; gives the scan
/// matcher along-road (x) constraints on otherwise featureless walls.
fn pilaster(x: f64, face_y: f64) -> Boundary {
    let tip = face_y - 0.8 * face_y.signum();
    Boundary {
        points_xy_m: vec![[x, face_y], [x, tip]],
    }
}

/// North-side building spanning `x0..x1` with road-side pilasters.
fn north_block(x0: f64, x1: f64, out: &mut Vec<Boundary>) {
    out.push(block(x0, WALL_Y, x1, WALL_Y + WALL_DEPTH));
    for x in pilaster_sites(x0, x1) {
        out.push(pilaster(x, WALL_Y));
    }
}

/// South-side building spanning `x0..x1` with road-side pilasters.
fn south_block(x0: f64, x1: f64, out: &mut Vec<Boundary>) {
    out.push(block(x0, -WALL_Y - WALL_DEPTH, x1, -WALL_Y));
    for x in pilaster_sites(x0, x1) {
        out.push(pilaster(x, -WALL_Y));
    }
}

/// Pilasters every ~16 m, kept off the block corners.
fn pilaster_sites(x0: f64, x1: f64) -> Vec<f64> {
    let mut sites = Vec::new();
    let mut x = (x0 / 16.0).floor() * 16.0 + 16.0;
    while x < x1 - 2.0 {
        if x > x0 + 2.0 {
            sites.push(x);
        }
        x += 16.0;
    }
    sites
}

fn actor(id: &str, class: ObjectClass, size: [f64; 3], traj: Vec<TrajectorySample>) -> Actor {
    Actor {
        id: id.to_string(),
        class,
        size_lwh_m: size,
        trajectory: traj,
    }
}

fn sample(t_s: f64, x_m: f64, y_m: f64, yaw_rad: f64) -> TrajectorySample {
    TrajectorySample {
        t_s,
        x_m,
        y_m,
        yaw_rad,
    }
}

/// Resample sparse waypoints onto the tick grid (the scenario contract
/// requires moving actors to be scripted at sub-1.5-tick spacing). Positions
/// interpolate linearly, yaw along the shortest arc.
fn resample(waypoints: &[TrajectorySample], tick: f64, duration: f64) -> Vec<TrajectorySample> {
    let n = (duration / tick).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = (k as f64 * tick).min(duration);
        let i = waypoints
            .windows(2)
            .position(|w| t <= w[1].t_s)
            .unwrap_or(waypoints.len() - 2);
        let (a, b) = (&waypoints[i], &waypoints[i + 1]);
        let f = ((t - a.t_s) / (b.t_s - a.t_s)).clamp(0.0, 1.0);
        let mut dyaw = b.yaw_rad - a.yaw_rad;
        dyaw -= (dyaw / std::f64::consts::TAU).round() * std::f64::consts::TAU;
        out.push(sample(
            t,
            a.x_m + f * (b.x_m - a.x_m),
            a.y_m + f * (b.y_m - a.y_m),
            a.yaw_rad + f * dyaw,
        ));
    }
    out
}

/// Constant-velocity crossing vehicle on a north-south line.
fn crossing_vehicle(id: &str, x: f64, y0: f64, vy: f64, duration: f64) -> Actor {
    let yaw = if vy < 0.0 { -FRAC_PI_2 } else { FRAC_PI_2 };
    actor(
        id,
        ObjectClass::Vehicle,
        CAR_LWH,
        resample(
            &[
                sample(0.0, x, y0, yaw),
                sample(duration, x, y0 + vy * duration, yaw),
            ],
            0.1,
            duration,
        ),
    )
}

/// Parked box-truck (stationary actor).
fn parked_truck(id: &str, x: f64, y: f64, duration: f64) -> Actor {
    actor(
        id,
        ObjectClass::Vehicle,
        [7.0, 2.4, 2.9],
        vec![sample(0.0, x, y, 0.0), sample(duration, x, y, 0.0)],
    )
}

fn ego_on_main(start_v: f64) -> EgoSpec {
    EgoSpec {
        route: vec!["main_e".to_string()],
        start_s_m: 6.0,
        start_v_mps: start_v,
    }
}

fn sim(duration_s: f64) -> SimSpec {
    SimSpec {
        duration_s,
        tick_s: 0.1,
        seed: 7,
    }
}

fn assemble(
    map: MapSpec,
    actors: Vec<Actor>,
    senders: Vec<SenderSpec>,
    ego: EgoSpec,
    duration_s: f64,
) -> Scenario {
    Scenario {
        map,
        actors,
        ego,
        senders,
        sim: sim(duration_s),
        planner: Default::default(),
        sensor: Default::default(),
        localization: Default::default(),
        comms: Default::default(),
    }
}

/// Straight walled road, no traffic. Smoke-test scenario: the ego should hold
/// the speed limit end to end with zero violations in either mode.
pub fn baseline_straight() -> Scenario {
    let mut boundaries = Vec::new();
    north_block(2.0, 126.0, &mut boundaries);
    south_block(2.0, 126.0, &mut boundaries);
    let map = MapSpec {
        lanes: main_lanes(MAIN_LIMIT),
        stoplines: Vec::new(),
        boundaries,
    };
    assemble(map, Vec::new(), Vec::new(), ego_on_main(8.0), 8.0)
}

/// Baseline plus one connected lead vehicle 34 m ahead at matched speed;
/// exercises the comms path without ever creating a conflict.
pub fn baseline_with_sender() -> Scenario {
    let mut sc = baseline_straight();
    sc.senders.push(SenderSpec {
        id: "cv_lead".to_string(),
        route: vec!["main_e".to_string()],
        start_s_m: 40.0,
        speed_mps: 8.0,
        trust: 1.0,
    });
    sc
}

/// Four-way junction; a vehicle crosses southbound from the left (north),
/// hidden by the northwest building until late. The sender drives away
/// northbound on the far cross lane with clear line of sight down the
/// corridor.
pub fn intersection_nlos_left() -> Scenario {
    let duration = 16.0;
    // Northwest corner at x=62 sets the reveal; the other three sit flush
    // with the 64..76 m crossing-road cut.
    let mut boundaries = Vec::new();
    north_block(2.0, 62.0, &mut boundaries);
    north_block(76.0, 124.0, &mut boundaries);
    south_block(2.0, 64.0, &mut boundaries);
    south_block(76.0, 124.0, &mut boundaries);

    let mut lanes = main_lanes(MAIN_LIMIT);
    lanes.push(lane(
        "cross_s",
        &[[CROSS_X - 1.8, 40.0], [CROSS_X - 1.8, -40.0]],
        MAIN_LIMIT,
    ));
    lanes.push(lane(
        "cross_n",
        &[[CROSS_X + 1.8, -40.0], [CROSS_X + 1.8, 40.0]],
        MAIN_LIMIT,
    ));
    let map = MapSpec {
        lanes,
        stoplines: Vec::new(),
        boundaries,
    };

    let actors = vec![crossing_vehicle(
        "crosser",
        CROSS_X - 1.8,
        34.0,
        -4.5,
        duration,
    )];
    let senders = vec![SenderSpec {
        id: "cv_north".to_string(),
        // cross_n starts at y=-40, so s=48 puts the sender at y=+8, driving
        // away from the junction at walking-out pace.
        route: vec!["cross_n".to_string()],
        start_s_m: 48.0,
        speed_mps: 3.0,
        trust: 1.0,
    }];
    assemble(map, actors, senders, ego_on_main(8.0), duration)
}

/// Mirror case: the crosser comes northbound from the right (south), hidden
/// by the southwest building. Near-side geometry reveals later for the same
/// corner depth, so the crossing road is cut narrower (west wall at 67 m).
pub fn intersection_nlos_right() -> Scenario {
    let duration = 16.0;
    let mut boundaries = Vec::new();
    north_block(2.0, 67.0, &mut boundaries);
    north_block(76.0, 124.0, &mut boundaries);
    south_block(2.0, 67.0, &mut boundaries);
    south_block(76.0, 124.0, &mut boundaries);

    let mut lanes = main_lanes(MAIN_LIMIT);
    lanes.push(lane(
        "cross_s",
        &[[CROSS_X - 1.3, 40.0], [CROSS_X - 1.3, -40.0]],
        MAIN_LIMIT,
    ));
    lanes.push(lane(
        "cross_n",
        &[[CROSS_X + 1.8, -40.0], [CROSS_X + 1.8, 40.0]],
        MAIN_LIMIT,
    ));
    let map = MapSpec {
        lanes,
        stoplines: Vec::new(),
        boundaries,
    };

    let actors = vec![crossing_vehicle(
        "crosser",
        CROSS_X + 1.8,
        -34.0,
        4.5,
        duration,
    )];
    let senders = vec![SenderSpec {
        id: "cv_south".to_string(),
        // cross_s starts at y=+40, so s=48 puts the sender at y=-8, driving
        // away southbound while watching the crosser approach.
        route: vec!["cross_s".to_string()],
        start_s_m: 48.0,
        speed_mps: 3.0,
        trust: 1.0,
    }];
    assemble(map, actors, senders, ego_on_main(8.0), duration)
}

/// T-junction with the side road to the north. A vehicle rolls down the side
/// road and turns left across the ego lane to head east, accelerating away.
/// The sender is parked at the far junction mouth with a clear view up the
/// side road.
pub fn t_junction_left() -> Scenario {
    let duration = 16.0;
    let mut boundaries = Vec::new();
    north_block(2.0, 64.0, &mut boundaries);
    north_block(76.0, 124.0, &mut boundaries);
    south_block(2.0, 124.0, &mut boundaries);

    let mut lanes = main_lanes(MAIN_LIMIT);
    lanes.push(lane(
        "side_s",
        &[[CROSS_X - 1.8, 40.0], [CROSS_X - 1.8, 0.0]],
        MAIN_LIMIT,
    ));
    // Shoulder strip east of the junction where the connected car waits.
    lanes.push(lane("mouth_e", &[[74.0, 4.0], [90.0, 4.0]], MAIN_LIMIT));
    let map = MapSpec {
        lanes,
        stoplines: Vec::new(),
        boundaries,
    };

    // Approach at 5 m/s, slow through the turn, then accelerate east ahead of
    // the ego. Linear interpolation between samples keeps speeds plausible.
    let turn = actor(
        "turner",
        ObjectClass::Vehicle,
        CAR_LWH,
        resample(
            &[
                sample(0.0, CROSS_X - 1.8, 34.0, -FRAC_PI_2),
                sample(5.6, CROSS_X - 1.8, 6.0, -FRAC_PI_2),
                sample(7.1, 70.4, 1.2, -0.8),
                sample(8.5, 74.0, LANE_E_Y, 0.0),
                sample(duration, 123.0, LANE_E_Y, 0.0),
            ],
            0.1,
            duration,
        ),
    );
    let senders = vec![SenderSpec {
        id: "cv_parked".to_string(),
        route: vec!["mouth_e".to_string()],
        start_s_m: 0.0,
        speed_mps: 0.0,
        trust: 1.0,
    }];
    assemble(map, vec![turn], senders, ego_on_main(8.0), duration)
}

/// T-junction with the side road to the south and a service track continuing
/// north between the buildings. A vehicle darts straight across from the
/// right; the sender is parked on the north shoulder west of the mouth,
/// looking down the side road.
pub fn t_junction_right() -> Scenario {
    let duration = 16.0;
    let mut boundaries = Vec::new();
    north_block(2.0, 68.0, &mut boundaries);
    north_block(76.0, 124.0, &mut boundaries);
    south_block(2.0, 67.0, &mut boundaries);
    south_block(76.0, 124.0, &mut boundaries);

    let mut lanes = main_lanes(MAIN_LIMIT);
    lanes.push(lane(
        "side_n",
        &[[CROSS_X + 1.8, -40.0], [CROSS_X + 1.8, 40.0]],
        MAIN_LIMIT,
    ));
    // Shoulder strip where the connected car is parked, facing the mouth.
    lanes.push(lane("mouth_w", &[[63.0, 4.2], [47.0, 4.2]], MAIN_LIMIT));
    let map = MapSpec {
        lanes,
        stoplines: Vec::new(),
        boundaries,
    };

    let actors = vec![crossing_vehicle(
        "darter",
        CROSS_X + 1.8,
        -34.0,
        4.5,
        duration,
    )];
    let senders = vec![SenderSpec {
        id: "cv_parked".to_string(),
        route: vec!["mouth_w".to_string()],
        start_s_m: 0.0,
        speed_mps: 0.0,
        trust: 1.0,
    }];
    assemble(map, actors, senders, ego_on_main(8.0), duration)
}

/// Mid-block pedestrian crossing hidden behind two nose-to-tail double-parked
/// trucks. The pedestrian steps out of an alley between buildings; a
/// connected lead vehicle a block ahead has already passed the trucks and
/// sees the alley mouth. Lower speed zone (6 m/s).
pub fn low_visibility_crossing() -> Scenario {
    let duration = 18.0;
    let mut boundaries = Vec::new();
    // Alley between the north blocks at x = 63..69; matching gap south so the
    // pedestrian leaves the scene cleanly.
    north_block(2.0, 63.0, &mut boundaries);
    north_block(69.0, 124.0, &mut boundaries);
    south_block(2.0, 63.0, &mut boundaries);
    south_block(69.0, 124.0, &mut boundaries);

    let map = MapSpec {
        lanes: main_lanes(6.3),
        stoplines: Vec::new(),
        boundaries,
    };

    let mut actors = vec![
        parked_truck("truck_w", 53.5, 2.7, duration),
        parked_truck("truck_e", 60.5, 2.7, duration),
    ];
    actors.push(actor(
        "walker",
        ObjectClass::Pedestrian,
        [0.6, 0.6, 1.7],
        resample(
            &[
                sample(0.0, 66.0, 13.5, -FRAC_PI_2),
                sample(duration, 66.0, 13.5 - 1.6 * duration, -FRAC_PI_2),
            ],
            0.1,
            duration,
        ),
    ));
    let senders = vec![SenderSpec {
        id: "cv_lead".to_string(),
        route: vec!["main_e".to_string()],
        start_s_m: 58.0,
        speed_mps: 6.0,
        trust: 1.0,
    }];
    assemble(map, actors, senders, ego_on_main(6.0), duration)
}

/// The five occlusion archetypes, keyed by their scenario-file stem.
pub fn nlos_archetypes() -> Vec<(&'static str, Scenario)> {
    vec![
        ("intersection_nlos_left", intersection_nlos_left()),
        ("intersection_nlos_right", intersection_nlos_right()),
        ("t_junction_left", t_junction_left()),
        ("t_junction_right", t_junction_right()),
        ("low_visibility_crossing", low_visibility_crossing()),
    ]
}

/// Every built-in scenario, keyed by its scenario-file stem.
pub fn all_scenarios() -> Vec<(&'static str, Scenario)> {
    let mut list = vec![
        ("baseline_straight", baseline_straight()),
        ("baseline_with_sender", baseline_with_sender()),
    ];
    list.extend(nlos_archetypes());
    list
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_scenario_validates() {
        for (name, sc) in all_scenarios() {
            sc.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn builtin_scenarios_survive_toml_round_trip() {
        for (name, sc) in all_scenarios() {
            let toml = sc.to_toml_string();
            let back = Scenario::from_toml_str(&toml).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(back.actors.len(), sc.actors.len(), "{name}");
            assert_eq!(back.senders.len(), sc.senders.len(), "{name}");
            assert_eq!(back.map.lanes.len(), sc.map.lanes.len(), "{name}");
            assert_eq!(back.sim.seed, sc.sim.seed, "{name}");
        }
    }

    #[test]
    fn archetypes_all_have_a_sender_and_a_hazard() {
        for (name, sc) in nlos_archetypes() {
            assert!(!sc.senders.is_empty(), "{name} needs a sender for coop mode");
            assert!(!sc.actors.is_empty(), "{name} needs a hazard actor");
        }
    }

    #[test]
    fn occluders_straddle_the_hazard_line_of_sight() {
        // Every archetype's hazard starts well off the main road, behind the
        // wall band, so a straight sightline from the ego start must cross a
        // building face. Cheap sanity check on the geometry numbers.
        for (name, sc) in nlos_archetypes() {
            let hazard = sc
                .actors
                .iter()
                .find(|a| a.trajectory.first().map(|s| s.y_m.abs() > WALL_Y).unwrap_or(false))
                .unwrap_or_else(|| panic!("{name}: no off-road hazard start"));
            let start = hazard.trajectory.first().unwrap();
            assert!(
                start.x_m > 40.0 && start.x_m < 100.0,
                "{name}: hazard should enter near the junction, starts at x={}",
                start.x_m
            );
        }
    }
}
