//! Object-level detection state and frame transforms.

use crate::geom::{wrap_angle, Footprint, GeomError, Point2, Pose2D};
use serde::{Deserialize, Serialize};

/// Coarse object class carried through detection, sharing, and fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Unknown,
}

impl ObjectClass {
    pub fn to_u8(self) -> u8 {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Pedestrian => 1,
            ObjectClass::Cyclist => 2,
            ObjectClass::Unknown => 255,
        }
    }

    pub fn from_u8(v: u8) -> Self {
        match v {
            0 => ObjectClass::Vehicle,
            1 => ObjectClass::Pedestrian,
            2 => ObjectClass::Cyclist,
            _ => ObjectClass::Unknown,
        }
    }
}

/// One oriented-box detection with planar velocity.
///
/// `timestamp_us` is microseconds since scenario start; `source_id`
/// identifies the vehicle whose detector produced the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub center_x: f64,
    pub center_y: f64,
    pub center_z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub vel_x: f64,
    pub vel_y: f64,
    pub class_id: ObjectClass,
    pub confidence: f64,
    pub timestamp_us: u64,
    pub source_id: u32,
}

impl ObjectState {
    pub fn center(&self) -> Point2 {
        Point2::new(self.center_x, self.center_y)
    }

    pub fn velocity(&self) -> Point2 {
        Point2::new(self.vel_x, self.vel_y)
    }

    pub fn speed(&self) -> f64 {
        self.velocity().norm()
    }

    /// BEV footprint at the given scenario time, assuming constant velocity
    /// since the detection timestamp.
    pub fn predicted_footprint(&self, at_time_s: f64) -> Footprint {
        let dt = at_time_s - self.timestamp_us as f64 * 1e-6;
        let c = self.center() + self.velocity().scale(dt);
        Footprint::from_box(c, self.length, self.width, self.yaw, at_time_s)
    }

    /// BEV footprint at the detection timestamp.
    pub fn footprint(&self) -> Footprint {
        let t = self.timestamp_us as f64 * 1e-6;
        Footprint::from_box(self.center(), self.length, self.width, self.yaw, t)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let finite = [
            self.center_x,
            self.center_y,
            self.center_z,
            self.length,
            self.width,
            self.height,
            self.yaw,
            self.vel_x,
            self.vel_y,
            self.confidence,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GeomError::NonFinite {
                context: "object state",
            });
        }
        Ok(())
    }
}

/// Rigidly transform a sensor-frame detection into the world frame.
///
/// Center and yaw are transformed by the sensor pose, the velocity vector is
/// rotated; z, size, class, confidence, timestamp, and source are unchanged.
pub fn transform_to_world(obj: &ObjectState, sensor_pose: &Pose2D) -> Result<ObjectState, GeomError> {
    if !sensor_pose.is_finite() {
        return Err(GeomError::NonFinite {
            context: "sensor pose",
        });
    }
    obj.validate()?;
    let c = sensor_pose.transform_point(obj.center());
    let v = sensor_pose.rotate_vector(obj.velocity());
    Ok(ObjectState {
        center_x: c.x,
        center_y: c.y,
        yaw: wrap_angle(obj.yaw + sensor_pose.theta),
        vel_x: v.x,
        vel_y: v.y,
        ..*obj
    })
}

/// Inverse of [`transform_to_world`]: world-frame object into the sensor frame.
pub fn transform_to_sensor(obj: &ObjectState, sensor_pose: &Pose2D) -> Result<ObjectState, GeomError> {
    transform_to_world(obj, &sensor_pose.inverse())
}
