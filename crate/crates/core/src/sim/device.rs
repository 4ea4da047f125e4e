use std::collections::BTreeSet;

use crate::ids::{DeviceId, ServiceId};
use crate::sim::geometry::Point;
use crate::time::SimTime;

/// Random-waypoint parameters for one device. `speed_max == 0` means stationary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityParams {
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: f64,
}

impl MobilityParams {
    pub const STATIONARY: MobilityParams = MobilityParams { speed_min: 0.0, speed_max: 0.0, pause: 0.0 };

    pub fn is_stationary(&self) -> bool {
        self.speed_max <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: DeviceId,
    pub position: Point,
    pub waypoint: Option<Point>,
    /// Current speed in m/s.
    pub speed: f64,
    pub battery: f64,
    pub radio_range: f64,
    pub backbone_capable: bool,
    pub equipment_score: f64,
    pub expected_departure: Option<SimTime>,
    pub registrations: BTreeSet<ServiceId>,
    pub load: u32,
    /// False before arrival and after departure.
    pub present: bool,
    pub mobility: MobilityParams,
    pub pause_left: f64,
}

impl Device {
    pub fn new(id: DeviceId, position: Point) -> Self {
        Device {
            id,
            position,
            waypoint: None,
            speed: 0.0,
            battery: 1.0,
            radio_range: 10.0,
            backbone_capable: false,
            equipment_score: 1.0,
            expected_departure: None,
            registrations: BTreeSet::new(),
            load: 0,
            present: true,
            mobility: MobilityParams::STATIONARY,
            pause_left: 0.0,
        }
    }

    /// Present and powered. Dead devices neither send nor receive.
    pub fn is_alive(&self) -> bool {
        self.present && self.battery > 0.0
    }

    /// Alive and able to open a backbone link.
    pub fn can_use_backbone(&self) -> bool {
        self.is_alive() && self.backbone_capable
    }

    /// Drains `amount` of battery capacity. Returns true if this drain killed the device.
    pub fn drain(&mut self, amount: f64) -> bool {
        if self.battery <= 0.0 {
            return false;
        }
        self.battery = (self.battery - amount).max(0.0);
        self.battery == 0.0
    }
}
