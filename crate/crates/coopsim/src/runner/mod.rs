//! Closed-loop orchestration: tick the world, run every vehicle's
//! perception-localization pipeline, exchange V2V messages, fuse, plan, and
//! advance the ego along its plan.
//!
//! One run is fully determined by `(scenario, mode, seed, alpha)`. All
//! randomness is drawn from ChaCha streams seeded per `(role, vehicle, tick)`
//! so that reordering stages or adding vehicles never perturbs an unrelated
//! draw. Wall-clock stage timings are collected separately from the log so
//! that two runs of the same configuration produce byte-identical
//! `log.jsonl` and `report.csv`.
//!
//! The loop per tick: interpolate scripted actors and sender positions, then
//! for each sensing vehicle raycast → detect (visibility oracle) → mask
//! dynamics → extract keypoints → GNSS prior → NDT coarse-to-fine refine →
//! georeference detections through the *refined* pose. In coop mode every
//! sender encodes its detections into a wire message and offers it to the
//! lossy link; the ego polls its inbox, fuses ego and remote objects, and
//! plans against the fused set. In ego-only mode the ego plans against its
//! own detections alone. Execution is direct state advance along the plan's
//! first step — the claim under test is planning behavior, not tracking.
//!
//! Senders follow their scripted routes at constant speed; only the ego
//! executes a plan and only the ego is judged by the safety metrics.

mod artifacts;
mod plots;
mod suite;

pub use artifacts::{write_log_jsonl, write_report_csv, write_run_artifacts, write_timings_csv};
pub use plots::write_plots;
pub use suite::{run_suite, SuiteConfig, SuiteError, SuiteFailure, SuiteOutcome, SuiteRow};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{
    decode_message, encode_message, fuse_detections, CodecError, FusionPolicy, Inbox, LinkModel,
    V2VMessage, DETECTION_LEN, HEADER_LEN, MAX_DETECTIONS,
};
use crate::geom::{GeomError, Point2, Pose2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::localization::{
    coarse_to_fine_refine, extract_keypoints, inject_gnss_noise, GeometryMap, LocalizationError,
    RefineMethod, RefineStatus,
};
use crate::metrics::{
    compute_safety_report, AgentStep, MetricsConfig, MetricsError, SafetyReport, WorldStep,
};
use crate::object::{transform_to_sensor, transform_to_world, ObjectState};
use crate::planning::{cost::Obstacle, plan_step, EgoPlanState, PlanError};
use crate::scenario::{RouteMap, Scenario, ScenarioError};
use crate::sensor::{build_dynamic_mask, detect_objects, raycast_scan, TrueActor};

/// Default vehicle box (length, width, height) for the ego and senders, m.
pub const VEHICLE_LWH: [f64; 3] = [4.5, 1.9, 1.6];
/// Spacing of the survey samples laid along boundary segments when building
/// the prior localization map, m.
const MAP_SURVEY_DS: f64 = 0.4;
/// Deceleration threshold defining "first braking" for reaction-lead, m/s².
pub const DECEL_THRESHOLD_MPS2: f64 = 0.5;
/// Dilation of the ego footprint used to drop remote detections of the ego
/// itself from the fused set, m.
const SELF_FILTER_MARGIN_M: f64 = 0.75;

/// Which pipeline the run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The ego plans against its own detections only.
    EgoOnly,
    /// Senders share detections over V2V; the ego fuses before planning.
    Coop,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::EgoOnly => "ego_only",
            Mode::Coop => "coop",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ego_only" => Ok(Mode::EgoOnly),
            "coop" => Ok(Mode::Coop),
            other => Err(format!("unknown mode `{other}` (ego_only|coop)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to launch one run from the command line.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub mode: Mode,
    /// Run seed; `None` uses the scenario's `sim.seed`.
    pub seed: Option<u64>,
    /// GNSS error level in 1..=4.
    pub alpha: u8,
    /// Artifact directory; `None` runs without writing anything.
    pub out_dir: Option<PathBuf>,
}

/// Failures of a closed-loop run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("planning failed at tick {tick}: {source}")]
    Plan {
        tick: u64,
        #[source]
        source: PlanError,
    },
    #[error("geometry error at tick {tick}: {source}")]
    Geom {
        tick: u64,
        #[source]
        source: GeomError,
    },
    #[error("localization error at tick {tick}: {source}")]
    Localization {
        tick: u64,
        #[source]
        source: LocalizationError,
    },
    #[error("codec error at tick {tick}: {source}")]
    Codec {
        tick: u64,
        #[source]
        source: CodecError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// First record of `log.jsonl`: run identity plus the static geometry that
/// plots need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub alpha: u8,
    pub tick_s: f64,
    pub duration_s: f64,
    pub n_ticks: u64,
    /// `(wire id, name)` of every sensing vehicle, ego first.
    pub vehicles: Vec<(u32, String)>,
    pub lanes: Vec<Vec<[f64; 2]>>,
    pub boundaries: Vec<Vec<[f64; 2]>>,
    /// Ego route centerline.
    pub route_xy: Vec<[f64; 2]>,
}

/// Per-vehicle perception and localization record for one tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleTick {
    pub id: u32,
    pub true_pose: [f64; 3],
    pub prior_pose: [f64; 3],
    pub refined_pose: [f64; 3],
    pub refine_status: String,
    /// Refined-minus-true translation error, m.
    pub loc_error_m: f64,
    /// Detections produced this tick.
    pub detections: usize,
}

/// Scripted actor ground truth for one tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorTick {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
}

/// Message accounting for one tick.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CommsTick {
    pub sent: u32,
    pub delivered: u32,
    pub dropped: u32,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    /// Messages still queued in the link after this tick's poll.
    pub in_flight: u32,
}

/// One fused object as the planner saw it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusedTick {
    pub x: f64,
    pub y: f64,
    pub class: String,
    pub weight: f64,
    pub from_ego: bool,
}

/// Planner outputs for one tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanTick {
    pub chosen_shift: f64,
    pub s_conf: Option<f64>,
    pub stop_targets: Vec<f64>,
    pub envelope_s: Vec<f64>,
    pub envelope_v: Vec<f64>,
    pub traj_s: Vec<f64>,
    pub traj_v: Vec<f64>,
    pub traj_xy: Vec<[f64; 2]>,
    pub lateral_relaxed: bool,
    pub lon_relaxed: bool,
    pub lon_fallback: bool,
}

/// Executed ego state at the tick (before advancing).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecTick {
    pub s: f64,
    pub lateral: f64,
    pub v: f64,
    pub a: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t_s: f64,
    pub exec: ExecTick,
    pub vehicles: Vec<VehicleTick>,
    pub actors: Vec<ActorTick>,
    pub comms: CommsTick,
    pub fused: Vec<FusedTick>,
    pub plan: PlanTick,
}

/// Wall-clock stage durations for one tick; kept out of `log.jsonl` so logs
/// stay byte-identical across runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TickTimings {
    pub tick: u64,
    pub perception_ms: f64,
    pub localization_ms: f64,
    pub comms_ms: f64,
    pub planning_ms: f64,
    pub total_ms: f64,
}

/// Run-level message accounting.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CommsTotals {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight_end: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
}

/// Complete record of one closed-loop run.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: RunHeader,
    pub ticks: Vec<TickRecord>,
    pub safety: SafetyReport,
    pub comms_totals: CommsTotals,
    /// `(t_s, executed speed)` series for reaction-lead pairing.
    pub speed_series: Vec<(f64, f64)>,
    pub timings: Vec<TickTimings>,
}

/// Stream roles for derived seeds.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SeedRole {
    Scan = 1,
    Detect = 2,
    Gnss = 3,
    Link = 4,
}

/// splitmix64 finalizer; the standard 64-bit avalanche.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a `(role, vehicle, tick)` stream of the run.
pub(crate) fn derive_seed(base: u64, role: SeedRole, vehicle: u32, tick: u64) -> u64 {
    mix64(base ^ mix64(((role as u64) << 32) | u64::from(vehicle)) ^ mix64(tick).rotate_left(17))
}

/// Pose on a route at arc position `s` with lateral offset `lat`.
fn pose_on_route(route: &RouteMap, s: f64, lat: f64) -> Pose2D {
    let s = s.clamp(0.0, route.path.total_length);
    let p = route.path.offset_at(s, lat);
    let (_, heading) = route.path.interpolate(s);
    Pose2D::new(p.x, p.y, heading)
}

fn pose_triplet(p: &Pose2D) -> [f64; 3] {
    [p.x, p.y, p.theta]
}

fn status_str(s: RefineStatus) -> &'static str {
    match s {
        RefineStatus::Refined => "refined",
        RefineStatus::Degraded => "degraded",
        RefineStatus::PriorFallback => "prior_fallback",
    }
}

/// Wire pose quality encoded per refinement outcome.
fn pose_quality(s: RefineStatus) -> f64 {
    match s {
        RefineStatus::Refined => 1.0,
        RefineStatus::Degraded => 0.6,
        RefineStatus::PriorFallback => 0.3,
    }
}

/// Load, run, and (when configured) write artifacts for one run.
pub fn run_closed_loop(cfg: &RunConfig) -> Result<RunLog, RunError> {
    let scenario = Scenario::load(&cfg.scenario_path)?;
    let name = cfg
        .scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    let seed = cfg.seed.unwrap_or(scenario.sim.seed);
    let log = run_scenario(&scenario, &name, cfg.mode, seed, cfg.alpha)?;
    if let Some(dir) = &cfg.out_dir {
        write_run_artifacts(&log, dir)?;
    }
    Ok(log)
}

/// State of one sensing vehicle after its perception/localization pass.
struct VehiclePerception {
    refined_pose: Pose2D,
    status: RefineStatus,
    record: VehicleTick,
    /// Detections georeferenced through the refined pose.
    detections: Vec<ObjectState>,
}

/// Run one scenario closed-loop. Fully deterministic per `(mode, seed,
/// alpha)`; wall-clock timings are measured but kept out of the log records.
pub fn run_scenario(
    scenario: &Scenario,
    name: &str,
    mode: Mode,
    seed: u64,
    alpha: u8,
) -> Result<RunLog, RunError> {
    scenario.validate()?;
    if !(1..=4).contains(&alpha) {
        return Err(RunError::Config(format!("alpha {alpha} outside 1..=4")));
    }
    let tick_s = scenario.sim.tick_s;
    if (scenario.planner.dt_s - tick_s).abs() > 1e-9 {
        return Err(RunError::Config(format!(
            "planner dt_s {} must equal sim tick_s {} (the plan's first step is executed verbatim)",
            scenario.planner.dt_s, tick_s
        )));
    }

    let route = scenario.build_route(&scenario.ego.route)?;
    let sender_routes: Vec<RouteMap> = scenario
        .senders
        .iter()
        .map(|s| scenario.build_route(&s.route))
        .collect::<Result<_, _>>()?;
    let statics = scenario.boundary_segments();

    // Prior localization map: dense survey samples along every boundary
    // segment, standing in for an offline mapping run.
    let mut geo_map = GeometryMap::new(scenario.localization.map_cell_m);
    for (a, b) in &statics {
        let len = a.dist(*b);
        let n = (len / MAP_SURVEY_DS).ceil().max(1.0) as usize;
        for i in 0..=n {
            let u = i as f64 / n as f64;
            geo_map.insert(Point2::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u));
        }
    }

    // Comms state (coop only, but initialized unconditionally so the borrow
    // structure stays simple).
    let comms_cfg = &scenario.comms;
    let mut links: Vec<LinkModel> = (0..scenario.senders.len())
        .map(|i| {
            LinkModel::from_config(
                comms_cfg,
                derive_seed(seed, SeedRole::Link, i as u32 + 1, 0),
            )
        })
        .collect();
    let mut inbox = Inbox::new();
    let mut sequences = vec![0u32; scenario.senders.len()];
    let mut policy = FusionPolicy::from_config(comms_cfg);
    for (i, s) in scenario.senders.iter().enumerate() {
        policy.trust.insert(i as u32 + 1, s.trust);
    }
    // Latest released message per sender, kept while fresh enough to fuse.
    let mut recent: BTreeMap<u32, (V2VMessage, u64)> = BTreeMap::new();
    let mut totals = CommsTotals::default();

    let mut ego = EgoPlanState {
        s: scenario.ego.start_s_m,
        lateral: 0.0,
        lateral_rate: 0.0,
        v: scenario.ego.start_v_mps,
        a: 0.0,
    };

    let n_ticks = (scenario.sim.duration_s / tick_s).round() as u64;
    let mut ticks: Vec<TickRecord> = Vec::with_capacity(n_ticks as usize);
    let mut timings: Vec<TickTimings> = Vec::with_capacity(n_ticks as usize);
    let mut world_steps: Vec<WorldStep> = Vec::with_capacity(n_ticks as usize);
    let mut speed_series: Vec<(f64, f64)> = Vec::with_capacity(n_ticks as usize);

    let metrics_cfg = MetricsConfig {
        d_min_m: scenario.planner.d_min_m,
        t_pred_s: scenario.planner.horizon_steps as f64 * scenario.planner.dt_s,
        ..MetricsConfig::default()
    };

    for tick in 0..n_ticks {
        let t = tick as f64 * tick_s;
        let now_us = (t * 1e6).round() as u64;
        let tick_start = Instant::now();

        // --- Ground truth -------------------------------------------------
        let ego_pose = pose_on_route(&route, ego.s, ego.lateral);
        let actor_states: Vec<(usize, crate::scenario::ActorState)> = scenario
            .actors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| scenario.actor_state(a, t).map(|st| (i, st)))
            .collect();
        let sender_s: Vec<f64> = scenario
            .senders
            .iter()
            .zip(&sender_routes)
            .map(|(s, r)| (s.start_s_m + s.speed_mps * t).min(r.path.total_length))
            .collect();
        let sender_poses: Vec<Pose2D> = sender_s
            .iter()
            .zip(&sender_routes)
            .map(|(&s, r)| pose_on_route(r, s, 0.0))
            .collect();

        // True actors as scan targets / metric subjects. Scripted actors
        // first (stable indices), then the vehicles.
        let scripted: Vec<TrueActor> = actor_states
            .iter()
            .map(|(i, st)| TrueActor {
                index: *i,
                center: st.center,
                yaw: st.yaw,
                velocity: st.velocity,
                size_lwh: st.size_lwh,
                class: scenario.actors[*i].class,
            })
            .collect();
        let vehicle_actor = |vid: usize| -> TrueActor {
            let (pose, v) = if vid == 0 {
                (ego_pose, ego.v)
            } else {
                (sender_poses[vid - 1], scenario.senders[vid - 1].speed_mps)
            };
            TrueActor {
                index: scenario.actors.len() + vid,
                center: pose.position(),
                yaw: pose.theta,
                velocity: Point2::new(v * pose.theta.cos(), v * pose.theta.sin()),
                size_lwh: VEHICLE_LWH,
                class: crate::object::ObjectClass::Vehicle,
            }
        };
        let n_vehicles = 1 + scenario.senders.len();

        // --- Per-vehicle perception + localization ------------------------
        // Senders only sense when their detections are consumed (coop mode).
        let sensing: Vec<usize> = if mode == Mode::Coop {
            (0..n_vehicles).collect()
        } else {
            vec![0]
        };
        let mut perception_ms = 0.0;
        let mut localization_ms = 0.0;
        let mut perceptions: Vec<VehiclePerception> = Vec::with_capacity(sensing.len());
        for &vid in &sensing {
            let true_pose = if vid == 0 { ego_pose } else { sender_poses[vid - 1] };
            let mut targets: Vec<TrueActor> = scripted.clone();
            for other in 0..n_vehicles {
                if other != vid {
                    targets.push(vehicle_actor(other));
                }
            }

            let stage = Instant::now();
            let mut scan_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedRole::Scan, vid as u32, tick));
            let scan = raycast_scan(
                true_pose,
                &statics,
                &targets,
                now_us,
                &scenario.sensor,
                &mut scan_rng,
            );
            let mut det_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedRole::Detect, vid as u32, tick));
            let dets_true = detect_objects(
                &scan,
                &targets,
                vid as u32,
                &scenario.sensor,
                &mut det_rng,
            );
            perception_ms += stage.elapsed().as_secs_f64() * 1e3;

            let stage = Instant::now();
            let masks = build_dynamic_mask(&dets_true, scenario.sensor.mask_dilation_m);
            let kp = extract_keypoints(
                &scan,
                &masks,
                scenario.localization.min_spacing_m,
                scenario.localization.keypoint_cap,
            );
            let prior = inject_gnss_noise(
                &true_pose,
                alpha,
                scenario.localization.sigma_xy_m,
                scenario.localization.sigma_theta_deg,
                derive_seed(seed, SeedRole::Gnss, vid as u32, tick),
            )
            .map_err(|source| RunError::Localization { tick, source })?;
            let refinement = coarse_to_fine_refine(
                &kp,
                &geo_map,
                &prior,
                RefineMethod::Ndt,
                &scenario.localization,
            );
            localization_ms += stage.elapsed().as_secs_f64() * 1e3;

            // Georeference: exact sensor-relative geometry, world anchor from
            // the refined (imperfect) pose — localization error propagates
            // into every shared detection, as it does on the road.
            let mut detections = Vec::with_capacity(dets_true.len());
            for det in &dets_true {
                let in_sensor = transform_to_sensor(det, &true_pose)
                    .map_err(|source| RunError::Geom { tick, source })?;
                detections.push(
                    transform_to_world(&in_sensor, &refinement.pose)
                        .map_err(|source| RunError::Geom { tick, source })?,
                );
            }

            perceptions.push(VehiclePerception {
                refined_pose: refinement.pose,
                status: refinement.status,
                record: VehicleTick {
                    id: vid as u32,
                    true_pose: pose_triplet(&true_pose),
                    prior_pose: pose_triplet(&prior.pose),
                    refined_pose: pose_triplet(&refinement.pose),
                    refine_status: status_str(refinement.status).to_string(),
                    loc_error_m: refinement.pose.position().dist(true_pose.position()),
                    detections: detections.len(),
                },
                detections,
            });
        }

        // --- Comms --------------------------------------------------------
        let stage = Instant::now();
        let mut comms = CommsTick::default();
        if mode == Mode::Coop {
            for (i, _) in scenario.senders.iter().enumerate() {
                let perception = &perceptions[i + 1];
                let mut dets = perception.detections.clone();
                if dets.len() > MAX_DETECTIONS {
                    dets.truncate(MAX_DETECTIONS);
                }
                let msg = V2VMessage {
                    sender_id: i as u32 + 1,
                    sequence: sequences[i],
                    send_timestamp_us: now_us,
                    sender_pose: perception.refined_pose,
                    pose_quality: pose_quality(perception.status),
                    detections: dets,
                };
                sequences[i] += 1;
                let bytes =
                    encode_message(&msg).map_err(|source| RunError::Codec { tick, source })?;
                comms.sent += 1;
                comms.bytes_sent += bytes.len() as u64;
                match links[i].deliver(now_us) {
                    Some(deliver_us) => {
                        let decoded = decode_message(&bytes)
                            .map_err(|source| RunError::Codec { tick, source })?;
                        inbox.accept(decoded, deliver_us);
                    }
                    None => comms.dropped += 1,
                }
            }
            for (msg, deliver_us) in inbox.poll(now_us) {
                comms.delivered += 1;
                comms.bytes_delivered +=
                    (HEADER_LEN + DETECTION_LEN * msg.detections.len()) as u64;
                recent.insert(msg.sender_id, (msg, deliver_us));
            }
            // Forget messages the fusion staleness gate would reject anyway.
            recent.retain(|_, (m, _)| {
                now_us.saturating_sub(m.send_timestamp_us) as f64 / 1e3 <= policy.staleness_ms
            });
        }
        comms.in_flight = inbox.pending_len() as u32;
        totals.sent += u64::from(comms.sent);
        totals.delivered += u64::from(comms.delivered);
        totals.dropped += u64::from(comms.dropped);
        totals.bytes_sent += comms.bytes_sent;
        totals.bytes_delivered += comms.bytes_delivered;

        let remote: Vec<(V2VMessage, u64)> = recent.values().cloned().collect();
        let fusion = fuse_detections(&perceptions[0].detections, &remote, &policy, now_us);
        // Self-filter: remote vehicles legitimately detect the ego; the ego
        // must not treat its own ghost as an obstacle.
        let ego_refined = perceptions[0].refined_pose;
        let self_fp = crate::geom::Footprint::from_box(
            ego_refined.position(),
            VEHICLE_LWH[0],
            VEHICLE_LWH[1],
            ego_refined.theta,
            t,
        )
        .dilate(SELF_FILTER_MARGIN_M);
        let fused: Vec<_> = fusion
            .objects
            .into_iter()
            .filter(|o| o.from_ego || !self_fp.contains(o.state.center()))
            .collect();
        let comms_ms = stage.elapsed().as_secs_f64() * 1e3;

        // --- Planning -----------------------------------------------------
        let stage = Instant::now();
        let obstacles: Vec<Obstacle> = fused
            .iter()
            .map(|o| Obstacle {
                state: o.state,
                weight: o.weight,
            })
            .collect();
        // The ego plans from its own estimate: route coordinates of the
        // refined pose, executed speed from odometry.
        let (s_est, lat_est) = route.path.project(ego_refined.position());
        let plan_state = EgoPlanState {
            s: s_est,
            lateral: lat_est,
            lateral_rate: ego.lateral_rate,
            v: ego.v,
            a: ego.a,
        };
        let (traj, debug) = plan_step(&route, &plan_state, &obstacles, t, &scenario.planner)
            .map_err(|source| RunError::Plan { tick, source })?;
        let planning_ms = stage.elapsed().as_secs_f64() * 1e3;

        // --- Record -------------------------------------------------------
        let exec = ExecTick {
            s: ego.s,
            lateral: ego.lateral,
            v: ego.v,
            a: ego.a,
            x: ego_pose.x,
            y: ego_pose.y,
            yaw: ego_pose.theta,
        };
        speed_series.push((t, ego.v));
        world_steps.push(WorldStep {
            t_s: t,
            ego: AgentStep {
                center: ego_pose.position(),
                yaw: ego_pose.theta,
                velocity: Point2::new(
                    ego.v * ego_pose.theta.cos(),
                    ego.v * ego_pose.theta.sin(),
                ),
                length: VEHICLE_LWH[0],
                width: VEHICLE_LWH[1],
            },
            ego_path: ego_route_ahead(&route, ego.s),
            actors: scripted
                .iter()
                .map(|a| AgentStep {
                    center: a.center,
                    yaw: a.yaw,
                    velocity: a.velocity,
                    length: a.size_lwh[0],
                    width: a.size_lwh[1],
                })
                .chain((1..n_vehicles).map(|vid| {
                    let a = vehicle_actor(vid);
                    AgentStep {
                        center: a.center,
                        yaw: a.yaw,
                        velocity: a.velocity,
                        length: a.size_lwh[0],
                        width: a.size_lwh[1],
                    }
                }))
                .collect(),
        });
        ticks.push(TickRecord {
            tick,
            t_s: t,
            exec,
            vehicles: perceptions.iter().map(|p| p.record.clone()).collect(),
            actors: actor_states
                .iter()
                .map(|(i, st)| ActorTick {
                    id: scenario.actors[*i].id.clone(),
                    x: st.center.x,
                    y: st.center.y,
                    yaw: st.yaw,
                    vx: st.velocity.x,
                    vy: st.velocity.y,
                    length: scenario.actors[*i].size_lwh_m[0],
                    width: scenario.actors[*i].size_lwh_m[1],
                })
                .collect(),
            comms,
            fused: fused
                .iter()
                .map(|o| FusedTick {
                    x: o.state.center_x,
                    y: o.state.center_y,
                    class: format!("{:?}", o.state.class_id).to_lowercase(),
                    weight: o.weight,
                    from_ego: o.from_ego,
                })
                .collect(),
            plan: PlanTick {
                chosen_shift: debug.chosen_shift,
                s_conf: debug.s_conf,
                stop_targets: debug.stop_targets.clone(),
                envelope_s: debug.envelope_s.clone(),
                envelope_v: debug.envelope_v.clone(),
                traj_s: traj.points.iter().map(|p| p.s_m).collect(),
                traj_v: traj.points.iter().map(|p| p.v_mps).collect(),
                traj_xy: traj.points.iter().map(|p| [p.x_m, p.y_m]).collect(),
                lateral_relaxed: debug.lateral_relaxed,
                lon_relaxed: debug.lon_relaxed,
                lon_fallback: debug.lon_fallback,
            },
        });
        timings.push(TickTimings {
            tick,
            perception_ms,
            localization_ms,
            comms_ms,
            planning_ms,
            total_ms: tick_start.elapsed().as_secs_f64() * 1e3,
        });

        // --- Execute one step of the plan ---------------------------------
        // The plan lives in the estimated frame; its increments are applied
        // to the true state so estimation error cannot teleport the vehicle.
        let p0 = &traj.points[0];
        let p1 = &traj.points[1];
        let ds = p1.s_m - p0.s_m;
        let dlat = p1.lateral_m - p0.lateral_m;
        ego.s = (ego.s + ds).min(route.path.total_length);
        ego.lateral += dlat;
        ego.lateral_rate = if ds > 1e-9 { dlat / ds } else { 0.0 };
        ego.v = p1.v_mps;
        ego.a = p1.a_mps2;
    }

    let safety = compute_safety_report(&world_steps, &metrics_cfg)?;
    totals.in_flight_end = inbox.pending_len() as u64;

    Ok(RunLog {
        header: RunHeader {
            schema_version: 1,
            scenario: name.to_string(),
            mode,
            seed,
            alpha,
            tick_s,
            duration_s: scenario.sim.duration_s,
            n_ticks,
            vehicles: std::iter::once((0, "ego".to_string()))
                .chain(
                    scenario
                        .senders
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (i as u32 + 1, s.id.clone())),
                )
                .collect(),
            lanes: scenario
                .map
                .lanes
                .iter()
                .map(|l| l.points_xy_m.clone())
                .collect(),
            boundaries: scenario
                .map
                .boundaries
                .iter()
                .map(|b| b.points_xy_m.clone())
                .collect(),
            route_xy: (0..route.path.len())
                .map(|k| {
                    let p = route.path.offset_point(k, 0.0);
                    [p.x, p.y]
                })
                .collect(),
        },
        ticks,
        safety,
        comms_totals: totals,
        speed_series,
        timings,
    })
}

/// Route centerline from the ego's current arc position to the route end,
/// used as the intent side of conflict-zone construction.
fn ego_route_ahead(route: &RouteMap, s: f64) -> Vec<Point2> {
    let path = &route.path;
    let mut pts = vec![path.offset_at(s.clamp(0.0, path.total_length), 0.0)];
    let k0 = path.index_at(s) + 1;
    for k in k0..path.len() {
        let p = path.offset_point(k, 0.0);
        if pts.last().map_or(true, |q| q.dist(p) > 1e-6) {
            pts.push(p);
        }
    }
    pts
}
