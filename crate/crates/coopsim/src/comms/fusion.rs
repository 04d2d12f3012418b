//! Ego/remote detection fusion into the weighted object set the planner
//! consumes.
//!
//! Ego detections carry unit weight. A remote detection is worth
//! `trust(sender) * max(confidence, floor) * exp(-age / tau)` — the three
//! down-weighting factors named by the sharing design: source trust,
//! detection confidence, and message age. All three factors live in [0, 1],
//! so no remote detection can outweigh an ego one, and fusion never removes
//! an ego detection: the fused set's coverage is a superset of ego-only
//! coverage.

use std::collections::BTreeMap;

use crate::object::ObjectState;
use crate::scenario::CommsConfig;

use super::codec::V2VMessage;

/// Weight of every ego detection; remote weights are capped by it.
pub const EGO_WEIGHT: f64 = 1.0;

/// Fusion weighting and dedup parameters.
#[derive(Debug, Clone)]
pub struct FusionPolicy {
    /// Per-sender trust in [0, 1].
    pub trust: BTreeMap<u32, f64>,
    /// Trust for senders missing from the table.
    pub default_trust: f64,
    /// Exponential age-decay constant.
    pub tau_ms: f64,
    /// Remote confidences are raised to at least this before weighting.
    pub confidence_floor: f64,
    /// Same-class detections closer than this merge into one.
    pub dedup_distance_m: f64,
    /// Messages older than this are excluded entirely.
    pub staleness_ms: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            trust: BTreeMap::new(),
            default_trust: 0.5,
            tau_ms: 300.0,
            confidence_floor: 0.1,
            dedup_distance_m: 2.0,
            staleness_ms: 500.0,
        }
    }
}

impl FusionPolicy {
    /// Policy from scenario comms parameters; the trust table starts empty
    /// and the caller registers senders.
    pub fn from_config(cfg: &CommsConfig) -> Self {
        Self {
            tau_ms: cfg.tau_ms,
            confidence_floor: cfg.confidence_floor,
            dedup_distance_m: cfg.dedup_distance_m,
            staleness_ms: cfg.staleness_ms,
            ..Self::default()
        }
    }

    pub fn trust_for(&self, sender: u32) -> f64 {
        self.trust
            .get(&sender)
            .copied()
            .unwrap_or(self.default_trust)
            .clamp(0.0, 1.0)
    }

    /// Weight of one remote detection aged `age_ms` since its message was
    /// sent.
    pub fn remote_weight(&self, sender: u32, confidence: f64, age_ms: f64) -> f64 {
        self.trust_for(sender)
            * confidence.clamp(0.0, 1.0).max(self.confidence_floor)
            * (-age_ms / self.tau_ms).exp()
    }
}

/// One member of the fused set.
#[derive(Debug, Clone, Copy)]
pub struct FusedObject {
    pub state: ObjectState,
    pub weight: f64,
    /// True when the kept copy came from the ego detector.
    pub from_ego: bool,
}

/// Fusion output plus the bookkeeping the runner logs.
#[derive(Debug, Clone, Default)]
pub struct FusionResult {
    pub objects: Vec<FusedObject>,
    /// Messages excluded for exceeding the staleness cutoff.
    pub stale_messages: usize,
    /// Remote detections merged away as duplicates.
    pub merged_duplicates: usize,
}

/// Fuse ego detections with delivered remote messages at time `now_us`.
///
/// Remote detections are dead-reckoned to `now` at their constant reported
/// velocity before dedup — the position compensates the link latency while
/// the weight still decays with it — and their `timestamp_us` is restamped
/// to `now` so downstream footprint prediction does not extrapolate the
/// same interval twice. Duplicates (same class, centers within the dedup
/// distance) keep the higher-weight member; ego copies always win ties.
pub fn fuse_detections(
    ego: &[ObjectState],
    inbox: &[(V2VMessage, u64)],
    policy: &FusionPolicy,
    now_us: u64,
) -> FusionResult {
    let mut result = FusionResult::default();
    for det in ego {
        result.objects.push(FusedObject {
            state: *det,
            weight: EGO_WEIGHT,
            from_ego: true,
        });
    }

    for (msg, deliver_us) in inbox {
        debug_assert!(
            *deliver_us <= now_us,
            "inbox message delivered in the future"
        );
        let age_ms = now_us.saturating_sub(msg.send_timestamp_us) as f64 / 1000.0;
        if age_ms > policy.staleness_ms {
            result.stale_messages += 1;
            continue;
        }
        for det in &msg.detections {
            let weight = policy.remote_weight(msg.sender_id, det.confidence, age_ms);
            debug_assert!(weight <= EGO_WEIGHT + 1e-12);
            let dt_s = now_us.saturating_sub(det.timestamp_us) as f64 * 1e-6;
            let state = ObjectState {
                center_x: det.center_x + det.vel_x * dt_s,
                center_y: det.center_y + det.vel_y * dt_s,
                timestamp_us: now_us,
                ..*det
            };
            merge(&mut result, state, weight, policy.dedup_distance_m);
        }
    }
    result
}

/// Insert a remote detection, merging it with the nearest same-class member
/// within `dedup_m` if one exists.
fn merge(result: &mut FusionResult, state: ObjectState, weight: f64, dedup_m: f64) {
    let mut nearest: Option<(usize, f64)> = None;
    for (i, kept) in result.objects.iter().enumerate() {
        if kept.state.class_id != state.class_id {
            continue;
        }
        let d = kept.state.center().dist(state.center());
        if d < dedup_m && nearest.map_or(true, |(_, best)| d < best) {
            nearest = Some((i, d));
        }
    }
    match nearest {
        Some((i, _)) => {
            result.merged_duplicates += 1;
            // Strict inequality keeps the incumbent on ties, and ego
            // members (weight 1.0) can never be displaced.
            if weight > result.objects[i].weight {
                result.objects[i] = FusedObject {
                    state,
                    weight,
                    from_ego: false,
                };
            }
        }
        None => result.objects.push(FusedObject {
            state,
            weight,
            from_ego: false,
        }),
    }
}
