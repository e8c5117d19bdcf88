//! Faulty behaviours, applied as filters on an honest replica's outbox.

use serde::{Deserialize, Serialize};

use super::ledger::{Batch, Tx};
use super::msg::{Header, Message, Signed, VoteKind};
use super::replica::{Dest, Outbox};
use super::CommitteeInfo;
use crate::crypto::KeyPair;
use crate::simnet::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PbftFault {
    /// Never proposes as leader.
    SilentLeader,
    /// Proposes conflicting batches to two halves of the committee.
    EquivocatingLeader,
    /// Never sends prepare or commit votes.
    VoteWithholder,
    /// Follows the protocol, but every message takes the full Δ.
    DelayMaximizer,
}

impl PbftFault {
    pub const ALL: [PbftFault; 4] = [
        PbftFault::SilentLeader,
        PbftFault::EquivocatingLeader,
        PbftFault::VoteWithholder,
        PbftFault::DelayMaximizer,
    ];

    /// Rewrites what an honest replica would have sent.
    pub fn filter(
        self,
        me: NodeId,
        kp: &KeyPair,
        committee: &CommitteeInfo,
        out: Outbox,
    ) -> Outbox {
        match self {
            PbftFault::SilentLeader => retain(out, |m| {
                !matches!(
                    m,
                    Message::Propose { .. } | Message::NewView { .. } | Message::Repropose(_)
                )
            }),
            PbftFault::VoteWithholder => retain(out, |m| {
                !matches!(m, Message::Prepare(_) | Message::Commit(_))
            }),
            PbftFault::DelayMaximizer => out,
            PbftFault::EquivocatingLeader => equivocate(me, kp, committee, out),
        }
    }
}

fn retain(mut out: Outbox, keep: impl Fn(&Message) -> bool) -> Outbox {
    out.msgs.retain(|(_, m)| keep(m));
    out
}

/// A batch that conflicts with `batch` at the same slot: the same
/// transactions plus one marker spend.
pub fn conflicting_batch(batch: &Batch, slot: u64) -> Batch {
    let marker = (1 << 63) | slot;
    let mut txs = batch.0.clone();
    txs.push(Tx {
        id: marker,
        input: marker,
        amount: 1,
    });
    Batch(txs)
}

fn equivocate(me: NodeId, kp: &KeyPair, committee: &CommitteeInfo, out: Outbox) -> Outbox {
    let others: Vec<NodeId> = (0..committee.n() as NodeId).filter(|&i| i != me).collect();
    let half = others.len() / 2;
    let mut msgs = Vec::with_capacity(out.msgs.len());
    for (dest, m) in out.msgs {
        let Message::Propose { sig, batch } = &m else {
            msgs.push((dest, m));
            continue;
        };
        let Header::Vote { c, v, s, .. } = sig.header else {
            msgs.push((dest, m));
            continue;
        };
        let alt = conflicting_batch(batch, s);
        let h_alt = alt.digest();
        let alt_sig = Signed::new(kp, me, Header::vote(VoteKind::Propose, c, v, s, h_alt));
        for &i in &others[..half] {
            msgs.push((Dest::To(i), m.clone()));
        }
        for &i in &others[half..] {
            msgs.push((
                Dest::To(i),
                Message::Propose {
                    sig: alt_sig.clone(),
                    batch: alt.clone(),
                },
            ));
        }
        let vote = |kind| Signed::new(kp, me, Header::vote(kind, c, v, s, h_alt));
        msgs.push((Dest::All, Message::Prepare(vote(VoteKind::Prepare))));
        msgs.push((Dest::All, Message::Commit(vote(VoteKind::Commit))));
        let orig_commit = Signed::new(
            kp,
            me,
            Header::vote(VoteKind::Commit, c, v, s, batch.digest()),
        );
        msgs.push((Dest::All, Message::Commit(orig_commit)));
    }
    Outbox {
        msgs,
        timer: out.timer,
        events: out.events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Digest;

    fn committee(n: u64) -> (Vec<KeyPair>, CommitteeInfo) {
        let keys: Vec<_> = (0..n).map(|i| KeyPair::derive(3, "b", i)).collect();
        let info = CommitteeInfo::new(0, keys.iter().map(|k| k.public()).collect());
        (keys, info)
    }

    fn propose(kp: &KeyPair) -> Message {
        let b = Batch::empty();
        Message::Propose {
            sig: Signed::new(kp, 0, Header::vote(VoteKind::Propose, 0, 0, 1, b.digest())),
            batch: b,
        }
    }

    #[test]
    fn silent_leader_drops_proposals_only() {
        let (keys, info) = committee(4);
        let vote = Signed::new(
            &keys[0],
            0,
            Header::vote(VoteKind::Prepare, 0, 0, 1, Digest::ZERO),
        );
        let out = Outbox {
            msgs: vec![
                (Dest::All, propose(&keys[0])),
                (Dest::All, Message::Prepare(vote)),
            ],
            ..Default::default()
        };
        let out = PbftFault::SilentLeader.filter(0, &keys[0], &info, out);
        assert_eq!(out.msgs.len(), 1);
        assert!(matches!(out.msgs[0].1, Message::Prepare(_)));
    }

    #[test]
    fn equivocation_splits_committee() {
        let (keys, info) = committee(7);
        let out = Outbox {
            msgs: vec![(Dest::All, propose(&keys[0]))],
            ..Default::default()
        };
        let out = PbftFault::EquivocatingLeader.filter(0, &keys[0], &info, out);
        let digests: std::collections::BTreeSet<_> = out
            .msgs
            .iter()
            .filter_map(|(_, m)| match m {
                Message::Propose { sig, .. } => Some(format!("{:?}", sig.header)),
                _ => None,
            })
            .collect();
        assert_eq!(digests.len(), 2);
        let proposes = out
            .msgs
            .iter()
            .filter(|(_, m)| matches!(m, Message::Propose { .. }))
            .count();
        assert_eq!(proposes, 6);
    }
}
