use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{NodeId, SimTime};
use crate::crypto::Digest;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipStats {
    pub submitted: u64,
    /// Node-level first receptions of valid messages.
    pub delivered: u64,
    pub dropped_invalid: u64,
    /// Invalid messages an honest node passed on. Must stay zero.
    pub forwarded_invalid: u64,
    /// Receptions suppressed by per-node dedup.
    pub duplicates: u64,
    pub forwards: u64,
}

/// Result of a single submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Propagation {
    pub accepted: bool,
    /// Honest nodes that received the message for the first time.
    pub reached: Vec<NodeId>,
    pub deliver_time: SimTime,
}

/// Flood gossip over the honest overlay.
///
/// Propagation is a single logical hop charged Δ. The first honest node to
/// see a message runs the validity filter; invalid messages die there.
#[derive(Debug, Clone)]
pub struct Gossip {
    seen: Vec<HashSet<Digest>>,
    forwarded: Vec<u64>,
    stats: GossipStats,
}

impl Gossip {
    pub fn new(honest_nodes: usize) -> Self {
        Self {
            seen: vec![HashSet::new(); honest_nodes],
            forwarded: vec![0; honest_nodes],
            stats: GossipStats::default(),
        }
    }

    pub fn stats(&self) -> GossipStats {
        self.stats
    }

    /// How many times node `id` has forwarded anything.
    pub fn forwards_by(&self, id: NodeId) -> u64 {
        self.forwarded[id as usize]
    }

    pub fn has_seen(&self, id: NodeId, digest: &Digest) -> bool {
        self.seen[id as usize].contains(digest)
    }

    /// Forget everything seen so far (a new registration round).
    pub fn reset_seen(&mut self) {
        for s in &mut self.seen {
            s.clear();
        }
    }

    pub fn submit(
        &mut self,
        digest: Digest,
        now: SimTime,
        delta: SimTime,
        validity_filter: impl FnOnce() -> bool,
    ) -> Propagation {
        self.stats.submitted += 1;
        let deliver_time = now + delta;
        if self.seen.is_empty() {
            return Propagation {
                accepted: false,
                reached: vec![],
                deliver_time,
            };
        }
        // entry node 0 has already seen it: no re-validation, no forwarding
        if self.seen[0].contains(&digest) {
            self.stats.duplicates += self.seen.len() as u64;
            return Propagation {
                accepted: true,
                reached: vec![],
                deliver_time,
            };
        }
        if !validity_filter() {
            self.stats.dropped_invalid += 1;
            return Propagation {
                accepted: false,
                reached: vec![],
                deliver_time,
            };
        }
        let mut reached = Vec::new();
        for (id, seen) in self.seen.iter_mut().enumerate() {
            if seen.insert(digest) {
                self.forwarded[id] += 1;
                self.stats.forwards += 1;
                self.stats.delivered += 1;
                reached.push(id as NodeId);
            } else {
                self.stats.duplicates += 1;
            }
        }
        Propagation {
            accepted: true,
            reached,
            deliver_time,
        }
    }
}
