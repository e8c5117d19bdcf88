//! Committee ordering engine: steady state and view change.

pub mod byzantine;
pub mod ledger;
pub mod msg;
pub mod replica;
pub mod sim;
pub mod viewchange;

use serde::{Deserialize, Serialize};

use crate::crypto::PublicKey;
use crate::simnet::NodeId;

pub use byzantine::PbftFault;
pub use ledger::{Batch, Ledger, Tx};
pub use msg::{Certificate, Header, Message, SigCache, Signed, VoteKind};
pub use replica::{Replica, ReplicaEvent, TimerKind};
pub use sim::{PbftConfig, PbftEngine, PbftMember, PbftStats};
pub use viewchange::{validate_repropose, ReproposeInvalid};

pub type Slot = u64;
pub type ViewNum = u64;

/// Membership of committee `c` in seniority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeInfo {
    pub c: u64,
    pub members: Vec<PublicKey>,
}

impl CommitteeInfo {
    pub fn new(c: u64, members: Vec<PublicKey>) -> Self {
        assert!(!members.is_empty(), "empty committee");
        Self { c, members }
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    /// Tolerated faults, `floor((n - 1) / 3)`.
    pub fn f(&self) -> usize {
        (self.n() - 1) / 3
    }

    /// Votes needed for a certificate. Equal to `2f + 1` when `n = 3f + 1`;
    /// for other sizes it is raised so any two quorums share `f + 1` members.
    pub fn quorum(&self) -> usize {
        (self.n() + self.f()) / 2 + 1
    }

    pub fn leader(&self, v: ViewNum) -> NodeId {
        (v % self.n() as u64) as NodeId
    }

    pub fn index_of(&self, pk: &PublicKey) -> Option<NodeId> {
        self.members
            .iter()
            .position(|m| m == pk)
            .map(|i| i as NodeId)
    }
}

/// Leader of view `v`: the `v mod n`-th member.
pub fn leader_of(committee: &[PublicKey], v: ViewNum) -> PublicKey {
    committee[(v % committee.len() as u64) as usize]
}
