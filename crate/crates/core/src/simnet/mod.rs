//! Deterministic discrete-event network simulation.
//!
//! Time is kept in integer nanoseconds so event ordering never depends on
//! floating-point rounding. Committee traffic is synchronous with an
//! adversary-chosen delay in `[0, Δ]`; position-verification traffic moves at
//! the signal speed along a one-dimensional line.

mod gossip;
mod log;
mod net;
mod sched;

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

pub use gossip::{Gossip, GossipStats, Propagation};
pub use log::{EventLog, LogEvent};
pub use net::{DelayPolicy, DelayPolicyKind, Envelope, Network, NodeId, Recipient};
pub use sched::Scheduler;

/// Simulated time in nanoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);
    const NANOS: f64 = 1e9;

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond; negative inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime::ZERO;
        }
        SimTime((s * Self::NANOS).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::NANOS
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0.saturating_mul(rhs))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.as_secs_f64())
    }
}

/// Physical and timing parameters of the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Maximum committee message delay Δ.
    pub delta: SimTime,
    /// Signal speed in distance units per simulated second.
    pub c_signal: f64,
    /// Extent of the one-dimensional space `[0, line_length)`.
    pub line_length: f64,
}

impl NetworkConfig {
    pub fn new(delta: SimTime, c_signal: f64, line_length: f64) -> Result<Self, SimError> {
        if delta == SimTime::ZERO {
            return Err(SimError::InvalidConfig("delta must be positive".into()));
        }
        if !(c_signal > 0.0) || !c_signal.is_finite() {
            return Err(SimError::InvalidConfig("c_signal must be positive".into()));
        }
        if !(line_length > 0.0) {
            return Err(SimError::InvalidConfig(
                "line_length must be positive".into(),
            ));
        }
        Ok(Self {
            delta,
            c_signal,
            line_length,
        })
    }
}

/// Time for a signal to cross from `a` to `b`.
pub fn prop_delay(a: f64, b: f64, cfg: &NetworkConfig) -> SimTime {
    SimTime::from_secs_f64((a - b).abs() / cfg.c_signal)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}
