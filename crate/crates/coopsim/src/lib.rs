//! Closed-loop cooperative-driving simulation library.
//!
//! The crate models a small connected-vehicle stack end to end: raycast
//! sensing with occlusion, scan-to-map localization seeded by noisy GNSS
//! priors, an object-level V2V message codec with a lossy link, weighted
//! track fusion, a hierarchical planner (lateral candidates + QP smoothing,
//! jerk-limited longitudinal profile), and occlusion-aware safety metrics,
//! all driven by a deterministic fixed-tick runner.
//!
//! Start from [`runner::run_scenario`] for the closed loop, or the modules
//! individually: [`sensor`], [`localization`], [`comms`], [`planning`],
//! [`metrics`]. The `examples/` directory exercises each capability.

pub mod comms;
pub mod geom;
pub mod localization;
pub mod metrics;
pub mod object;
pub mod path;
pub mod planning;
pub mod runner;
pub mod scenario;
pub mod scenarios;
pub mod sensor;
