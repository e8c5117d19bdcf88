//! Status selection and re-propose validation for a new view.

use serde::{Deserialize, Serialize};

use super::ledger::Batch;
use super::msg::{Certificate, Header, ReproposeMsg, SigCache, Signed, StatusMsg, VoteKind};
use super::{CommitteeInfo, Slot, ViewNum};
use crate::crypto::{Digest, KeyPair};
use crate::simnet::NodeId;

/// Why a re-propose was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum ReproposeInvalid {
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("slot is not one past the highest committed slot in the status certificate")]
    NotHighestCommitted,
    #[error("commit certificate is not for the highest committed slot")]
    CommitCertWrongSlot,
    #[error("accept certificate is not the highest-ranked accepted value")]
    NotHighestRankedAccept,
    #[error("proposed value differs from the accepted value")]
    ValueMismatch,
}

fn malformed(s: impl Into<String>) -> ReproposeInvalid {
    ReproposeInvalid::Malformed(s.into())
}

/// `(last, accepted)` of a status header.
pub fn status_fields(h: &Header) -> Option<(Slot, Digest, Option<(Digest, ViewNum)>)> {
    match *h {
        Header::Status {
            last,
            last_h,
            accepted,
            ..
        } => Some((last, last_h, accepted)),
        _ => None,
    }
}

/// Index of the status reporting the highest last-committed slot, ties broken
/// by the highest-ranked accept for the following slot, then by position.
pub fn select_status(reports: &[(Slot, Option<(Digest, ViewNum)>)]) -> Option<usize> {
    let key = |(last, acc): &(Slot, Option<(Digest, ViewNum)>)| {
        (*last, acc.map(|(_, rank)| rank + 1).unwrap_or(0))
    };
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        if best.is_none_or(|b| key(r) > key(&reports[b])) {
            best = Some(i);
        }
    }
    best
}

/// Checks a status message for view `(c, v)` and its supporting certificates.
pub fn validate_status(
    msg: &StatusMsg,
    c: u64,
    v: ViewNum,
    committee: &CommitteeInfo,
    cache: &mut SigCache,
) -> Result<(), String> {
    let Header::Status {
        c: hc,
        v: hv,
        last,
        last_h,
        accepted,
    } = msg.sig.header
    else {
        return Err("not a status header".into());
    };
    if (hc, hv) != (c, v) {
        return Err("status for another view".into());
    }
    if !msg.sig.verify(committee, cache) {
        return Err("bad status signature".into());
    }
    check_committed(last, last_h, &msg.q, &msg.last_batch, c, committee, cache)?;
    match (accepted, &msg.a, &msg.accepted_batch) {
        (None, None, None) => Ok(()),
        (Some((h, rank)), Some(a), Some(b)) => {
            if rank >= v {
                return Err("accept rank not below the new view".into());
            }
            if b.digest() != h {
                return Err("accepted batch does not match".into());
            }
            match a.check_votes(VoteKind::Prepare, c, last + 1, h, committee, cache) {
                Ok(r) if r == rank => Ok(()),
                Ok(_) => Err("accept certificate rank mismatch".into()),
                Err(e) => Err(format!("accept certificate: {e}")),
            }
        }
        _ => Err("accepted value and certificate disagree".into()),
    }
}

fn check_committed(
    last: Slot,
    last_h: Digest,
    q: &Option<Certificate>,
    batch: &Option<Batch>,
    c: u64,
    committee: &CommitteeInfo,
    cache: &mut SigCache,
) -> Result<(), String> {
    if last == 0 {
        return match (q, batch) {
            (None, None) => Ok(()),
            _ => Err("certificate for slot 0".into()),
        };
    }
    let (Some(q), Some(b)) = (q, batch) else {
        return Err("missing commit certificate".into());
    };
    if b.digest() != last_h {
        return Err("committed batch does not match".into());
    }
    q.check_votes(VoteKind::Commit, c, last, last_h, committee, cache)
        .map(|_| ())
        .map_err(|e| format!("commit certificate: {e}"))
}

/// Builds the new leader's re-propose from at least a quorum of statuses.
/// `fresh` is used only when no accepted value constrains the slot.
pub fn build_repropose(
    kp: &KeyPair,
    me: NodeId,
    c: u64,
    v: ViewNum,
    statuses: &[StatusMsg],
    fresh: Batch,
) -> ReproposeMsg {
    let reports: Vec<_> = statuses
        .iter()
        .map(|m| {
            let (last, _, acc) = status_fields(&m.sig.header).expect("validated status");
            (last, acc)
        })
        .collect();
    let best = &statuses[select_status(&reports).expect("non-empty statuses")];
    let (s_star, _, accepted) = status_fields(&best.sig.header).unwrap();
    let batch = match accepted {
        Some(_) => best.accepted_batch.clone().expect("validated status"),
        None => fresh,
    };
    let s_cert = Certificate(statuses.iter().map(|m| m.sig.clone()).collect());
    let bodies = ReproposeMsg::bodies_digest(&s_cert, &best.q, &best.last_batch, &best.a);
    let header = Header::Repropose {
        c,
        v,
        s: s_star + 1,
        h: batch.digest(),
        bodies,
    };
    ReproposeMsg {
        sig: Signed::new(kp, me, header),
        s_cert,
        q: best.q.clone(),
        last_batch: best.last_batch.clone(),
        a: best.a.clone(),
        batch,
    }
}

/// Validates a re-propose; each failure mode is reported distinctly.
pub fn validate_repropose(
    msg: &ReproposeMsg,
    committee: &CommitteeInfo,
    cache: &mut SigCache,
) -> Result<(), ReproposeInvalid> {
    let Header::Repropose { c, v, s, h, bodies } = msg.sig.header else {
        return Err(malformed("not a repropose header"));
    };
    if c != committee.c {
        return Err(malformed("wrong committee"));
    }
    if msg.sig.signer != committee.leader(v) || !msg.sig.verify(committee, cache) {
        return Err(malformed("not signed by the view leader"));
    }
    if bodies != ReproposeMsg::bodies_digest(&msg.s_cert, &msg.q, &msg.last_batch, &msg.a) {
        return Err(malformed("bodies do not match the signed header"));
    }
    if msg.batch.digest() != h {
        return Err(malformed("batch does not match h"));
    }
    msg.s_cert
        .check(
            committee,
            cache,
            |hd| matches!(hd, Header::Status { c: hc, v: hv, .. } if *hc == c && *hv == v),
        )
        .map_err(|e| malformed(format!("status certificate: {e}")))?;

    let reports: Vec<_> = msg
        .s_cert
        .0
        .iter()
        .map(|e| status_fields(&e.header).unwrap())
        .collect();
    let s_star = reports.iter().map(|r| r.0).max().unwrap();
    if s != s_star + 1 {
        return Err(ReproposeInvalid::NotHighestCommitted);
    }

    // (b) the commit certificate must be for s*
    if s_star == 0 {
        if msg.q.is_some() || msg.last_batch.is_some() {
            return Err(ReproposeInvalid::CommitCertWrongSlot);
        }
    } else {
        let q = msg
            .q
            .as_ref()
            .ok_or(ReproposeInvalid::CommitCertWrongSlot)?;
        let (_, q_slot, q_h) = q
            .vote_context(VoteKind::Commit)
            .ok_or(ReproposeInvalid::CommitCertWrongSlot)?;
        if q_slot != s_star {
            return Err(ReproposeInvalid::CommitCertWrongSlot);
        }
        q.check_votes(VoteKind::Commit, c, s_star, q_h, committee, cache)
            .map_err(|e| malformed(format!("commit certificate: {e}")))?;
        if msg.last_batch.as_ref().map(Batch::digest) != Some(q_h) {
            return Err(malformed("committed batch does not match"));
        }
    }

    // (c) the accept certificate must carry the highest-ranked accepted value
    let best = reports
        .iter()
        .filter(|r| r.0 == s_star)
        .filter_map(|r| r.2)
        .max_by_key(|&(_, rank)| rank);
    match (best, &msg.a) {
        (None, None) => Ok(()),
        (None, Some(_)) | (Some(_), None) => Err(ReproposeInvalid::NotHighestRankedAccept),
        (Some((h_best, rank)), Some(a)) => {
            match a.check_votes(VoteKind::Prepare, c, s, h_best, committee, cache) {
                Ok(r) if r == rank => {}
                _ => return Err(ReproposeInvalid::NotHighestRankedAccept),
            }
            // (d) h' must be the certified value
            if h != h_best {
                return Err(ReproposeInvalid::ValueMismatch);
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbft::ledger::Tx;

    struct Fixture {
        info: CommitteeInfo,
        keys: Vec<KeyPair>,
        cache: SigCache,
    }

    impl Fixture {
        fn new(n: usize) -> Self {
            let keys: Vec<KeyPair> = (0..n as u64).map(|i| KeyPair::derive(5, "m", i)).collect();
            let info = CommitteeInfo::new(0, keys.iter().map(|k| k.public()).collect());
            Self {
                info,
                keys,
                cache: SigCache::new(),
            }
        }

        fn votes(&self, kind: VoteKind, v: ViewNum, s: Slot, h: Digest) -> Certificate {
            Certificate(
                (0..3u32)
                    .map(|i| Signed::new(&self.keys[i as usize], i, Header::vote(kind, 0, v, s, h)))
                    .collect(),
            )
        }

        /// Status from `who` for view `v`: committed `last` with `last_b`,
        /// optionally accepted `acc` at rank `rank` for `last + 1`.
        fn status(
            &self,
            who: u32,
            v: ViewNum,
            last: Slot,
            last_b: &Batch,
            acc: Option<(&Batch, ViewNum)>,
        ) -> StatusMsg {
            let (q, lb, last_h) = if last == 0 {
                (None, None, Digest::ZERO)
            } else {
                let h = last_b.digest();
                (
                    Some(self.votes(VoteKind::Commit, 0, last, h)),
                    Some(last_b.clone()),
                    h,
                )
            };
            let (a, ab, accepted) = match acc {
                None => (None, None, None),
                Some((b, rank)) => {
                    let h = b.digest();
                    (
                        Some(self.votes(VoteKind::Prepare, rank, last + 1, h)),
                        Some(b.clone()),
                        Some((h, rank)),
                    )
                }
            };
            let header = Header::Status {
                c: 0,
                v,
                last,
                last_h,
                accepted,
            };
            StatusMsg {
                sig: Signed::new(&self.keys[who as usize], who, header),
                q,
                last_batch: lb,
                a,
                accepted_batch: ab,
            }
        }

        fn leader_kp(&self, v: ViewNum) -> &KeyPair {
            &self.keys[self.info.leader(v) as usize]
        }
    }

    fn batch(tag: u64) -> Batch {
        Batch(vec![Tx {
            id: tag,
            input: tag,
            amount: 1,
        }])
    }

    #[test]
    fn highest_slot_wins_with_free_value() {
        let mut fx = Fixture::new(4);
        let v = 1;
        let sts = vec![
            fx.status(0, v, 3, &batch(3), None),
            fx.status(1, v, 5, &batch(5), None),
            fx.status(2, v, 5, &batch(5), None),
        ];
        for st in &sts {
            validate_status(st, 0, v, &fx.info, &mut fx.cache).unwrap();
        }
        let fresh = batch(99);
        let rp = build_repropose(
            fx.leader_kp(v),
            fx.info.leader(v),
            0,
            v,
            &sts,
            fresh.clone(),
        );
        assert!(matches!(rp.sig.header, Header::Repropose { s: 6, .. }));
        assert_eq!(rp.batch, fresh);
        assert_eq!(validate_repropose(&rp, &fx.info, &mut fx.cache), Ok(()));
    }

    #[test]
    fn tie_broken_by_accept_rank() {
        let mut fx = Fixture::new(4);
        let v = 5;
        let (b2, b4) = (batch(20), batch(40));
        let sts = vec![
            fx.status(0, v, 5, &batch(5), Some((&b2, 2))),
            fx.status(1, v, 5, &batch(5), Some((&b4, 4))),
            fx.status(2, v, 5, &batch(5), None),
        ];
        let rp = build_repropose(fx.leader_kp(v), fx.info.leader(v), 0, v, &sts, batch(77));
        assert_eq!(rp.batch, b4);
        assert_eq!(validate_repropose(&rp, &fx.info, &mut fx.cache), Ok(()));
    }

    #[test]
    fn single_status_binds_accepted_value() {
        let mut fx = Fixture::new(4);
        let v = 2;
        let ha = batch(8);
        let sts = vec![
            fx.status(0, v, 7, &batch(7), Some((&ha, 1))),
            fx.status(1, v, 0, &Batch::empty(), None),
            fx.status(2, v, 0, &Batch::empty(), None),
        ];
        let rp = build_repropose(fx.leader_kp(v), fx.info.leader(v), 0, v, &sts, batch(1));
        assert!(matches!(rp.sig.header, Header::Repropose { s: 8, .. }));
        assert_eq!(rp.batch.digest(), ha.digest());
        assert_eq!(validate_repropose(&rp, &fx.info, &mut fx.cache), Ok(()));
    }

    fn resign(fx: &Fixture, rp: &mut ReproposeMsg, s: Option<Slot>, h: Option<Digest>) {
        let Header::Repropose {
            c, v, s: s0, h: h0, ..
        } = rp.sig.header
        else {
            unreachable!()
        };
        let bodies = ReproposeMsg::bodies_digest(&rp.s_cert, &rp.q, &rp.last_batch, &rp.a);
        let header = Header::Repropose {
            c,
            v,
            s: s.unwrap_or(s0),
            h: h.unwrap_or(h0),
            bodies,
        };
        rp.sig = Signed::new(fx.leader_kp(v), fx.info.leader(v), header);
    }

    #[test]
    fn each_violation_is_reported() {
        let mut fx = Fixture::new(4);
        let v = 3;
        let ha = batch(6);
        let sts = vec![
            fx.status(0, v, 5, &batch(5), Some((&ha, 2))),
            fx.status(1, v, 5, &batch(5), None),
            fx.status(2, v, 4, &batch(4), None),
        ];
        let good = build_repropose(fx.leader_kp(v), fx.info.leader(v), 0, v, &sts, batch(1));
        assert_eq!(validate_repropose(&good, &fx.info, &mut fx.cache), Ok(()));

        // (a) claims a lower s*
        let mut rp = good.clone();
        resign(&fx, &mut rp, Some(5), None);
        assert_eq!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::NotHighestCommitted)
        );

        // (b) commit certificate for s* - 1
        let mut rp = good.clone();
        rp.q = Some(fx.votes(VoteKind::Commit, 0, 4, batch(4).digest()));
        rp.last_batch = Some(batch(4));
        resign(&fx, &mut rp, None, None);
        assert_eq!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::CommitCertWrongSlot)
        );

        // (c) accept certificate dropped
        let mut rp = good.clone();
        rp.a = None;
        resign(&fx, &mut rp, None, None);
        assert_eq!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::NotHighestRankedAccept)
        );

        // (d) h' differs from the certified value
        let mut rp = good.clone();
        rp.batch = batch(1);
        resign(&fx, &mut rp, None, Some(batch(1).digest()));
        assert_eq!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::ValueMismatch)
        );

        // tampered body
        let mut rp = good.clone();
        rp.last_batch = Some(batch(9));
        assert!(matches!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::Malformed(_))
        ));

        // signed by a non-leader
        let mut rp = good;
        let header = rp.sig.header.clone();
        rp.sig = Signed::new(&fx.keys[0], 0, header);
        assert!(matches!(
            validate_repropose(&rp, &fx.info, &mut fx.cache),
            Err(ReproposeInvalid::Malformed(_))
        ));
    }

    #[test]
    fn status_with_bogus_accept_rank_rejected() {
        let mut fx = Fixture::new(4);
        let mut st = fx.status(0, 3, 2, &batch(2), Some((&batch(3), 1)));
        let Header::Status {
            c, v, last, last_h, ..
        } = st.sig.header
        else {
            unreachable!()
        };
        let header = Header::Status {
            c,
            v,
            last,
            last_h,
            accepted: Some((batch(3).digest(), 2)),
        };
        st.sig = Signed::new(&fx.keys[0], 0, header);
        assert!(validate_status(&st, 0, 3, &fx.info, &mut fx.cache).is_err());
    }
}
