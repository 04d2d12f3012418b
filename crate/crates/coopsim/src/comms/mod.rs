//! Object-level V2V sharing: wire codec, lossy link, ordered inbox, and
//! weighted fusion.
//!
//! A sender packs its refined pose and world-frame detections into a
//! fixed-layout binary [`codec::V2VMessage`]; the [`link::LinkModel`]
//! delays or drops it; the receiver's [`link::Inbox`] restores per-sender
//! order; and [`fusion::fuse_detections`] folds delivered detections into
//! the ego set with trust-, confidence-, and age-derived weights.

pub mod codec;
pub mod fusion;
pub mod link;

pub use codec::{
    bandwidth_bps, decode_message, encode_message, CodecError, V2VMessage, DETECTION_LEN,
    HEADER_LEN, MAX_DETECTIONS,
};
pub use fusion::{fuse_detections, FusedObject, FusionPolicy, FusionResult, EGO_WEIGHT};
pub use link::{Inbox, LinkModel};
