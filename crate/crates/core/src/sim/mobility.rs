use rand::Rng;

use crate::sim::device::Device;
use crate::sim::geometry::{Point, Rect};

/// Advances every present device by `dt` seconds under the random-waypoint model.
///
/// A device heading to a waypoint moves along the straight line at its speed and
/// stops exactly on the waypoint if it would overshoot. On arrival it pauses for
/// its configured pause time, then draws a fresh uniform waypoint inside `bounds`
/// and a uniform speed from its range. Stationary devices never move.
pub fn step_mobility<'a, R: Rng>(
    devices: impl IntoIterator<Item = &'a mut Device>,
    dt: f64,
    bounds: &Rect,
    rng: &mut R,
) {
    debug_assert!(dt > 0.0);
    for d in devices.into_iter().filter(|d| d.present) {
        step_device(d, dt, bounds, rng);
    }
}

fn step_device<R: Rng>(d: &mut Device, dt: f64, bounds: &Rect, rng: &mut R) {
    if d.waypoint.is_none() {
        if d.mobility.is_stationary() {
            return;
        }
        if d.pause_left > 0.0 {
            d.pause_left = (d.pause_left - dt).max(0.0);
            return;
        }
        d.waypoint = Some(Point::new(
            rng.gen_range(bounds.min.x..=bounds.max.x),
            rng.gen_range(bounds.min.y..=bounds.max.y),
        ));
        d.speed = if d.mobility.speed_max > d.mobility.speed_min {
            rng.gen_range(d.mobility.speed_min..=d.mobility.speed_max)
        } else {
            d.mobility.speed_max
        };
    }
    let Some(target) = d.waypoint else { return };
    let remaining = d.position.distance(&target);
    let travel = d.speed * dt;
    if travel >= remaining {
        d.position = target;
        d.waypoint = None;
        d.pause_left = d.mobility.pause;
    } else if remaining > 0.0 {
        let f = travel / remaining;
        d.position = Point::new(
            d.position.x + (target.x - d.position.x) * f,
            d.position.y + (target.y - d.position.y) * f,
        );
    }
    d.position = bounds.clamp(d.position);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::DeviceId;
    use crate::sim::device::MobilityParams;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> Rect {
        Rect::new(Point::new(0.0, 0.0), Point::new(100.0, 100.0))
    }

    fn moving(from: Point, to: Point, speed: f64) -> Device {
        let mut d = Device::new(DeviceId(1), from);
        d.waypoint = Some(to);
        d.speed = speed;
        d.mobility = MobilityParams { speed_min: speed, speed_max: speed, pause: 0.0 };
        d
    }

    #[test]
    fn linear_motion() {
        let mut devs = vec![moving(Point::new(0.0, 0.0), Point::new(10.0, 0.0), 2.0)];
        step_mobility(&mut devs, 1.0, &bounds(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(devs[0].position, Point::new(2.0, 0.0));
    }

    #[test]
    fn stationary_device_stays_put() {
        let mut devs = vec![Device::new(DeviceId(1), Point::new(4.0, 7.0))];
        step_mobility(&mut devs, 13.0, &bounds(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(devs[0].position, Point::new(4.0, 7.0));
    }

    #[test]
    fn overshoot_clamps_on_waypoint() {
        // distance 5 < speed*dt = 10
        let mut devs = vec![moving(Point::new(0.0, 0.0), Point::new(3.0, 4.0), 10.0)];
        step_mobility(&mut devs, 1.0, &bounds(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(devs[0].position, Point::new(3.0, 4.0));
        assert!(devs[0].waypoint.is_none());
    }

    #[test]
    fn pauses_before_next_leg() {
        let mut d = moving(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 5.0);
        d.mobility.pause = 2.0;
        let mut devs = vec![d];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        step_mobility(&mut devs, 1.0, &bounds(), &mut rng);
        assert_eq!(devs[0].pause_left, 2.0);
        step_mobility(&mut devs, 1.0, &bounds(), &mut rng);
        step_mobility(&mut devs, 1.0, &bounds(), &mut rng);
        assert_eq!(devs[0].position, Point::new(1.0, 0.0));
        step_mobility(&mut devs, 1.0, &bounds(), &mut rng);
        assert_ne!(devs[0].position, Point::new(1.0, 0.0));
    }

    proptest! {
        #[test]
        fn positions_never_leave_bounds(seed in any::<u64>(), n in 1usize..20, steps in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = bounds();
            let mut devs: Vec<Device> = (0..n).map(|i| {
                let mut d = Device::new(DeviceId(i as u32), Point::new(rng.gen_range(0.0..=100.0), rng.gen_range(0.0..=100.0)));
                d.mobility = MobilityParams { speed_min: 0.5, speed_max: 15.0, pause: 1.0 };
                d
            }).collect();
            for _ in 0..steps {
                step_mobility(&mut devs, 1.0, &b, &mut rng);
                for d in &devs {
                    prop_assert!(b.contains(&d.position));
                }
            }
        }
    }
}
