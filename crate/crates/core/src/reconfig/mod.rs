//! Committee rotation: registration, candidate sampling, position
//! verification by the committee, and the outer protocol loop.

mod ba;
mod epoch;
mod registration;
mod world;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::cvpv::{CellIndex, ParticipantId};
use crate::simnet::SimTime;

pub use ba::{phase_king, BaVoter};
pub use epoch::{
    reconfiguration_epoch, verify_candidate, CandidateOutcome, EpochEnv, EpochReport, VerifyResult,
};
pub use registration::{
    registration_message_digest, registration_round, RegistrationMode, RegistrationMsg,
    RegistrationReport, Submission,
};
pub use world::{
    main_loop, CommitteeRow, ParticipantSpec, SpamStats, World, WorldConfig, WorldReport,
};

/// Registered keys per cell, rebuilt every registration round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibleDict {
    entries: BTreeMap<CellIndex, Vec<PublicKey>>,
}

impl EligibleDict {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `pk` under `cell`, keeping the list sorted and duplicate-free.
    pub fn insert(&mut self, cell: CellIndex, pk: PublicKey) {
        let list = self.entries.entry(cell).or_default();
        if let Err(i) = list.binary_search(&pk) {
            list.insert(i, pk);
        }
    }

    /// Cells in ascending order; this is the order sampling indexes into.
    pub fn keys(&self) -> Vec<CellIndex> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, cell: CellIndex) -> Option<&[PublicKey]> {
        self.entries.get(&cell).map(Vec::as_slice)
    }

    pub fn remove(&mut self, cell: CellIndex) -> Option<Vec<PublicKey>> {
        self.entries.remove(&cell)
    }

    /// Number of registered cells.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Vec<PublicKey>)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seat {
    pub pk: PublicKey,
    /// Verified cell; genesis members have none.
    pub cell: Option<CellIndex>,
    pub owner: ParticipantId,
    pub byzantine: bool,
}

/// Committee in seniority order, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    seats: VecDeque<Seat>,
    /// Reconfiguration count; the genesis committee is 1.
    pub index: u64,
}

impl Committee {
    pub fn new(seats: Vec<Seat>) -> Self {
        assert!(!seats.is_empty(), "empty committee");
        Self {
            seats: seats.into(),
            index: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.seats.len()
    }

    /// Tolerated faults, `floor((n - 1) / 3)`.
    pub fn f(&self) -> usize {
        (self.n() - 1) / 3
    }

    /// `ceil(2n / 3)`: published approvals needed to admit a candidate.
    pub fn publish_quorum(&self) -> usize {
        (2 * self.n()).div_ceil(3)
    }

    pub fn seats(&self) -> impl Iterator<Item = &Seat> {
        self.seats.iter()
    }

    pub fn seat(&self, j: usize) -> &Seat {
        &self.seats[j]
    }

    pub fn members(&self) -> Vec<PublicKey> {
        self.seats.iter().map(|s| s.pk).collect()
    }

    pub fn byzantine_count(&self) -> usize {
        self.seats.iter().filter(|s| s.byzantine).count()
    }

    /// At least a third of the seats are Byzantine.
    pub fn is_unsafe(&self) -> bool {
        3 * self.byzantine_count() >= self.n()
    }

    /// Appends the newcomer and evicts the most senior member.
    pub fn admit(&mut self, seat: Seat) -> Seat {
        self.seats.push_back(seat);
        self.index += 1;
        self.seats.pop_front().expect("non-empty committee")
    }
}

/// Timing of one reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigClock {
    /// Ticks between reconfigurations.
    pub tau_reconfig: u64,
    /// Registration window in seconds.
    pub tau_register: f64,
    /// Per-verifier position-verification window in seconds.
    pub tau_v: f64,
    pub delta: SimTime,
}

impl ReconfigClock {
    pub fn register_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.tau_register)
    }

    /// End of message processing for a round starting at `start`.
    pub fn register_close(&self, start: SimTime) -> SimTime {
        start + self.register_window() + self.delta
    }
}
