//! Fixed-layout binary codec for V2V object-sharing messages.
//!
//! The layout is little-endian and byte-auditable because the bandwidth
//! budget is part of the product contract: a header is exactly
//! [`HEADER_LEN`] bytes and each detection record exactly [`DETECTION_LEN`],
//! so a message with ten detections is 512 bytes and a 10 Hz stream of
//! those costs 40.96 kbps.
//!
//! Header (32 bytes):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `"CPDV"`                          |
//! | 4      | 1    | version (= 1)                           |
//! | 5      | 4    | sender id, u32                          |
//! | 9      | 4    | sequence, u32                           |
//! | 13     | 4    | send timestamp, u32 microseconds        |
//! | 17     | 12   | sender pose x, y, theta as f32          |
//! | 29     | 2    | pose quality, u16 fixed-point / 65535   |
//! | 31     | 1    | detection count                         |
//!
//! Detection record (48 bytes):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 12   | center x, y, z as f32                   |
//! | 12     | 12   | size l, w, h as f32                     |
//! | 24     | 4    | yaw as f32                              |
//! | 28     | 8    | velocity x, y as f32                    |
//! | 36     | 1    | class id                                |
//! | 37     | 2    | confidence, u16 fixed-point / 65535     |
//! | 39     | 4    | age at send, u32 microseconds           |
//! | 43     | 1    | track hint (in-message index)           |
//! | 44     | 4    | reserved, zero                          |
//!
//! Senders must write the reserved bytes as zero and the track hint as the
//! record's index; receivers ignore both, so re-encoding a decoded message
//! reproduces the canonical bytes.
//!
//! Quantization: floats cross the wire in IEEE-754 single precision and the
//! two quality scalars as 16-bit fixed point, so `decode(encode(m)) == m`
//! holds exactly on messages whose fields sit on those grids (and within
//! one grid step otherwise). Timestamps are u32 microseconds on the wire;
//! scenario clocks beyond ~71 minutes cannot be encoded and fail typed.

use thiserror::Error;

use crate::geom::Pose2D;
use crate::object::{ObjectClass, ObjectState};

pub const MAGIC: [u8; 4] = *b"CPDV";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;
pub const DETECTION_LEN: usize = 48;
/// The count field is one byte.
pub const MAX_DETECTIONS: usize = 255;

/// One object-sharing message as held in memory.
///
/// Detections are world frame: the sender applies its refined pose before
/// encoding. `pose_quality` in [0, 1] reports how much the sender trusts its
/// own localization. The per-detection `source_id` is not on the wire —
/// decoding stamps every detection with the message's `sender_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct V2VMessage {
    pub sender_id: u32,
    /// Strictly increasing per sender.
    pub sequence: u32,
    pub send_timestamp_us: u64,
    pub sender_pose: Pose2D,
    /// Localization quality in [0, 1].
    pub pose_quality: f64,
    pub detections: Vec<ObjectState>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("message has {0} detections, the wire limit is {MAX_DETECTIONS}")]
    CountOverflow(usize),
    #[error("timestamp not representable in u32 microseconds: {0}")]
    TimestampOverflow(String),
    #[error("bad magic, expected \"CPDV\"")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("truncated message: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("length mismatch: {extra} trailing bytes after {count} detections")]
    CountMismatch { count: u8, extra: usize },
}

fn q16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn dq16(v: u16) -> f64 {
    v as f64 / 65535.0
}

fn put_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

fn get_f32(buf: &[u8], off: usize) -> f64 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64
}

fn get_u32(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn get_u16(buf: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(buf[off..off + 2].try_into().unwrap())
}

/// Serialize a message to its canonical wire bytes.
pub fn encode_message(msg: &V2VMessage) -> Result<Vec<u8>, CodecError> {
    if msg.detections.len() > MAX_DETECTIONS {
        return Err(CodecError::CountOverflow(msg.detections.len()));
    }
    let send_ts: u32 = msg.send_timestamp_us.try_into().map_err(|_| {
        CodecError::TimestampOverflow(format!("send timestamp {} us", msg.send_timestamp_us))
    })?;
    let mut buf = Vec::with_capacity(HEADER_LEN + DETECTION_LEN * msg.detections.len());
    buf.extend_from_slice(&MAGIC);
    buf.push(WIRE_VERSION);
    buf.extend_from_slice(&msg.sender_id.to_le_bytes());
    buf.extend_from_slice(&msg.sequence.to_le_bytes());
    buf.extend_from_slice(&send_ts.to_le_bytes());
    put_f32(&mut buf, msg.sender_pose.x);
    put_f32(&mut buf, msg.sender_pose.y);
    put_f32(&mut buf, msg.sender_pose.theta);
    buf.extend_from_slice(&q16(msg.pose_quality).to_le_bytes());
    buf.push(msg.detections.len() as u8);
    debug_assert_eq!(buf.len(), HEADER_LEN);

    for (i, det) in msg.detections.iter().enumerate() {
        let age_us: u32 = msg
            .send_timestamp_us
            .checked_sub(det.timestamp_us)
            .and_then(|d| d.try_into().ok())
            .ok_or_else(|| {
                CodecError::TimestampOverflow(format!(
                    "detection {} timestamped {} us against send time {} us",
                    i, det.timestamp_us, msg.send_timestamp_us
                ))
            })?;
        put_f32(&mut buf, det.center_x);
        put_f32(&mut buf, det.center_y);
        put_f32(&mut buf, det.center_z);
        put_f32(&mut buf, det.length);
        put_f32(&mut buf, det.width);
        put_f32(&mut buf, det.height);
        put_f32(&mut buf, det.yaw);
        put_f32(&mut buf, det.vel_x);
        put_f32(&mut buf, det.vel_y);
        buf.push(det.class_id.to_u8());
        buf.extend_from_slice(&q16(det.confidence).to_le_bytes());
        buf.extend_from_slice(&age_us.to_le_bytes());
        buf.push(i as u8);
        buf.extend_from_slice(&[0u8; 4]);
    }
    debug_assert_eq!(
        buf.len(),
        HEADER_LEN + DETECTION_LEN * msg.detections.len()
    );
    Ok(buf)
}

/// Parse wire bytes back into a message.
///
/// Every rejection is a distinct typed error; arbitrary input never
/// panics. The buffer length must equal the header plus exactly `count`
/// records: shorter is [`CodecError::Truncated`], longer is
/// [`CodecError::CountMismatch`].
pub fn decode_message(bytes: &[u8]) -> Result<V2VMessage, CodecError> {
    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[4] != WIRE_VERSION {
        return Err(CodecError::BadVersion(bytes[4]));
    }
    let count = bytes[31];
    let need = HEADER_LEN + DETECTION_LEN * count as usize;
    if bytes.len() < need {
        return Err(CodecError::Truncated {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(CodecError::CountMismatch {
            count,
            extra: bytes.len() - need,
        });
    }

    let sender_id = get_u32(bytes, 5);
    let send_timestamp_us = get_u32(bytes, 13) as u64;
    let mut detections = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        let d = &bytes[HEADER_LEN + k * DETECTION_LEN..HEADER_LEN + (k + 1) * DETECTION_LEN];
        detections.push(ObjectState {
            center_x: get_f32(d, 0),
            center_y: get_f32(d, 4),
            center_z: get_f32(d, 8),
            length: get_f32(d, 12),
            width: get_f32(d, 16),
            height: get_f32(d, 20),
            yaw: get_f32(d, 24),
            vel_x: get_f32(d, 28),
            vel_y: get_f32(d, 32),
            class_id: ObjectClass::from_u8(d[36]),
            confidence: dq16(get_u16(d, 37)),
            timestamp_us: send_timestamp_us.saturating_sub(get_u32(d, 39) as u64),
            source_id: sender_id,
        });
    }
    Ok(V2VMessage {
        sender_id,
        sequence: get_u32(bytes, 9),
        send_timestamp_us,
        sender_pose: Pose2D::new(get_f32(bytes, 17), get_f32(bytes, 21), get_f32(bytes, 25)),
        pose_quality: dq16(get_u16(bytes, 29)),
        detections,
    })
}

/// Exact throughput of `total_bytes` sent over `window_s` seconds, in
/// bits per second.
pub fn bandwidth_bps(total_bytes: usize, window_s: f64) -> f64 {
    total_bytes as f64 * 8.0 / window_s
}
