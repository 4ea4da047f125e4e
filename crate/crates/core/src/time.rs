use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

const MICROS_PER_SEC: u64 = 1_000_000;

/// Simulation clock value, stored as whole microseconds so that ordering and
/// arithmetic are exact and runs are reproducible across platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    /// Rounds to the nearest microsecond. Negative and non-finite inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if !secs.is_finite() || secs <= 0.0 {
            return SimTime(0);
        }
        SimTime((secs * MICROS_PER_SEC as f64).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Seconds elapsed from `earlier` to `self`; negative if `earlier` is later.
    pub fn secs_since(self, earlier: SimTime) -> f64 {
        (self.0 as i128 - earlier.0 as i128) as f64 / MICROS_PER_SEC as f64
    }

    pub fn checked_mul(self, k: u64) -> Option<SimTime> {
        self.0.checked_mul(k).map(SimTime)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / MICROS_PER_SEC, self.0 % MICROS_PER_SEC)
    }
}

impl std::str::FromStr for SimTime {
    type Err = String;

    /// Parses the fixed-point form produced by `Display` (`<secs>.<6 digits>`),
    /// plus plain integer seconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        let whole: u64 = whole.parse().map_err(|_| format!("bad time `{s}`"))?;
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad time `{s}`"));
        }
        let mut micros = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
        }
        Ok(SimTime(whole * MICROS_PER_SEC + micros))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_are_inverse() {
        let t = SimTime::from_secs_f64(12.5);
        assert_eq!(t.to_string(), "12.500000");
        assert_eq!("12.500000".parse::<SimTime>().unwrap(), t);
        assert_eq!("3".parse::<SimTime>().unwrap(), SimTime::from_secs_f64(3.0));
        assert!("1.2345678".parse::<SimTime>().is_err());
    }

    #[test]
    fn rounding_to_micros() {
        assert_eq!(SimTime::from_secs_f64(0.05).as_micros(), 50_000);
        assert_eq!(SimTime::from_secs_f64(-1.0), SimTime::ZERO);
        assert_eq!(SimTime::from_secs_f64(25.0).secs_since(SimTime::from_secs_f64(10.0)), 15.0);
    }
}
