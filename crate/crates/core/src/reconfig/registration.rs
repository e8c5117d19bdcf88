use serde::{Deserialize, Serialize};

use super::{EligibleDict, ReconfigClock};
use crate::crypto::{puzzle_target, verify_dlog, Digest, GroupParams, PublicKey, PuzzleSolution};
use crate::cvpv::{CellIndex, Partition};
use crate::simnet::{Gossip, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    /// Anyone may register any position for free.
    Plain,
    /// Each registration carries a discrete-log solution bound to the round.
    #[default]
    SpamResistant,
}

/// A registration as published by its author.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub pk: PublicKey,
    pub pos: CellIndex,
    pub x: Option<PuzzleSolution>,
    pub sent_at: SimTime,
    pub from_adversary: bool,
}

/// A registration as received by the honest nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationMsg {
    pub pk: PublicKey,
    pub pos: CellIndex,
    pub x: Option<PuzzleSolution>,
    pub received_at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub dict: EligibleDict,
    pub submitted: u64,
    /// Failed the validity check and were never passed on.
    pub rejected: u64,
    /// Invalid registrations an honest node passed on anyway.
    pub forwarded_invalid: u64,
    pub late: u64,
    pub duplicates: u64,
    pub outside_partition: u64,
    pub accepted: u64,
    pub adversary_accepted: u64,
    /// Distinct cells only adversary registrations populated.
    pub adversary_cells: u64,
}

pub fn registration_message_digest(
    pk: &PublicKey,
    pos: CellIndex,
    x: Option<PuzzleSolution>,
) -> Digest {
    let xb = x.map(|s| s.x.to_be_bytes().to_vec()).unwrap_or_default();
    Digest::of_fields(&[b"registration", pk.as_bytes(), &pos.to_be_bytes(), &xb])
}

fn puzzle_ok(
    gp: &GroupParams,
    r: &[u8],
    pk: &PublicKey,
    pos: CellIndex,
    x: Option<PuzzleSolution>,
) -> bool {
    match x {
        Some(sol) => verify_dlog(gp, puzzle_target(pk.as_bytes(), pos, r, gp), sol),
        None => false,
    }
}

/// One registration round starting at `start`; publishing is open until
/// `start + tau_register`.
///
/// Every submission enters honest gossip. In spam-resistant mode the first
/// honest node checks the puzzle and drops failures; the nodes check it again
/// when building the dictionary. Messages arriving after
/// `start + tau_register + Δ` are ignored.
pub fn registration_round(
    mode: RegistrationMode,
    submissions: &[Submission],
    gp: &GroupParams,
    r: &[u8],
    clock: &ReconfigClock,
    partition: &Partition,
    start: SimTime,
    gossip: &mut Gossip,
) -> RegistrationReport {
    gossip.reset_seen();
    let before = gossip.stats();
    let close = clock.register_close(start);
    let mut rep = RegistrationReport::default();
    let mut inbox = Vec::new();
    let mut adversary_of = std::collections::BTreeMap::<PublicKey, bool>::new();

    for sub in submissions {
        rep.submitted += 1;
        let digest = registration_message_digest(&sub.pk, sub.pos, sub.x);
        let valid = || match mode {
            RegistrationMode::Plain => true,
            RegistrationMode::SpamResistant => puzzle_ok(gp, r, &sub.pk, sub.pos, sub.x),
        };
        let prop = gossip.submit(digest, sub.sent_at, clock.delta, valid);
        if !prop.accepted {
            rep.rejected += 1;
            continue;
        }
        if prop.reached.is_empty() {
            rep.duplicates += 1;
            continue;
        }
        if sub.sent_at > start + clock.register_window() || prop.deliver_time > close {
            rep.late += 1;
            continue;
        }
        adversary_of.insert(sub.pk, sub.from_adversary);
        inbox.push(RegistrationMsg {
            pk: sub.pk,
            pos: sub.pos,
            x: sub.x,
            received_at: prop.deliver_time,
        });
    }

    // Processing at `close`: only what arrived in time and passes the check.
    for msg in &inbox {
        if !partition.contains(msg.pos) {
            rep.outside_partition += 1;
            continue;
        }
        if mode == RegistrationMode::SpamResistant && !puzzle_ok(gp, r, &msg.pk, msg.pos, msg.x) {
            rep.forwarded_invalid += 1;
            continue;
        }
        rep.accepted += 1;
        if adversary_of[&msg.pk] {
            rep.adversary_accepted += 1;
        }
        rep.dict.insert(msg.pos, msg.pk);
    }
    rep.adversary_cells = rep
        .dict
        .iter()
        .filter(|(_, pks)| pks.iter().all(|pk| adversary_of[pk]))
        .count() as u64;
    rep.forwarded_invalid += gossip.stats().forwarded_invalid - before.forwarded_invalid;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_group, DlogSolver, GroupPreset, KeyPair, SolverBudget};

    struct Fx {
        gp: GroupParams,
        solver: DlogSolver,
        clock: ReconfigClock,
        part: Partition,
        r: Vec<u8>,
    }

    fn fx() -> Fx {
        let gp = derive_group(GroupPreset::Bits(20)).unwrap();
        Fx {
            gp,
            solver: DlogSolver::new(gp),
            clock: ReconfigClock {
                tau_reconfig: 1,
                tau_register: 1.0,
                tau_v: 0.01,
                delta: SimTime::from_secs_f64(0.1),
            },
            part: Partition::new(1.0, 16.0).unwrap(),
            r: b"round-r".to_vec(),
        }
    }

    fn sub(f: &Fx, pk: PublicKey, pos: CellIndex, good: bool) -> Submission {
        let t = puzzle_target(pk.as_bytes(), pos, &f.r, &f.gp);
        let mut b = SolverBudget::unlimited();
        let mut x = f.solver.solve(t, &mut b).unwrap();
        if !good {
            x.x = (x.x + 1) % f.gp.q;
        }
        Submission {
            pk,
            pos,
            x: Some(x),
            sent_at: SimTime::from_secs_f64(0.5),
            from_adversary: false,
        }
    }

    fn run(f: &Fx, mode: RegistrationMode, subs: &[Submission]) -> RegistrationReport {
        let mut g = Gossip::new(3);
        registration_round(
            mode,
            subs,
            &f.gp,
            &f.r,
            &f.clock,
            &f.part,
            SimTime::ZERO,
            &mut g,
        )
    }

    #[test]
    fn one_valid_registration() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let rep = run(&f, RegistrationMode::SpamResistant, &[sub(&f, a, 3, true)]);
        assert_eq!(rep.dict.keys(), vec![3]);
        assert_eq!(rep.dict.get(3).unwrap(), &[a]);
    }

    #[test]
    fn same_cell_sorted() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let b = KeyPair::derive(1, "a", 1).public();
        let rep = run(
            &f,
            RegistrationMode::SpamResistant,
            &[sub(&f, a, 3, true), sub(&f, b, 3, true)],
        );
        let mut want = vec![a, b];
        want.sort();
        assert_eq!(rep.dict.get(3).unwrap(), want.as_slice());
    }

    #[test]
    fn wrong_solution_dropped_not_forwarded() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let rep = run(&f, RegistrationMode::SpamResistant, &[sub(&f, a, 3, false)]);
        assert!(rep.dict.is_empty());
        assert_eq!(rep.rejected, 1);
        assert_eq!(rep.forwarded_invalid, 0);
    }

    #[test]
    fn plain_mode_takes_anything() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let mut s = sub(&f, a, 3, false);
        s.x = None;
        let rep = run(&f, RegistrationMode::Plain, &[s]);
        assert_eq!(rep.dict.keys(), vec![3]);
    }

    #[test]
    fn late_and_duplicate_messages_ignored() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let good = sub(&f, a, 3, true);
        let mut late = sub(&f, KeyPair::derive(1, "a", 2).public(), 4, true);
        late.sent_at = SimTime::from_secs_f64(1.05);
        let rep = run(&f, RegistrationMode::SpamResistant, &[good, good, late]);
        assert_eq!(rep.duplicates, 1);
        assert_eq!(rep.late, 1);
        assert_eq!(rep.dict.keys(), vec![3]);
    }

    #[test]
    fn puzzle_is_bound_to_round_string() {
        let f = fx();
        let a = KeyPair::derive(1, "a", 0).public();
        let s = sub(&f, a, 3, true);
        let mut g = Gossip::new(3);
        let rep = registration_round(
            RegistrationMode::SpamResistant,
            &[s],
            &f.gp,
            b"another round",
            &f.clock,
            &f.part,
            SimTime::ZERO,
            &mut g,
        );
        assert!(rep.dict.is_empty());
    }
}
