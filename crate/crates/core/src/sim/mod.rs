//! Physical world model: devices, random-waypoint mobility, the proximity
//! graph, clique (connected component) maintenance, and the event queue.

pub mod clique;
pub mod device;
pub mod geometry;
pub mod mobility;
pub mod queue;
pub mod topology;

pub use clique::{compute_cliques, Clique};
pub use device::{Device, MobilityParams};
pub use geometry::{Point, Rect};
pub use mobility::step_mobility;
pub use queue::{EventQueue, PastSchedule};
pub use topology::AdHocTopology;
