use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ba::{phase_king, BaVoter};
use super::{Committee, EligibleDict, ReconfigClock, Seat};
use crate::adversary::ADVERSARY;
use crate::beacon::{derive, sample_index, BeaconValue};
use crate::crypto::PublicKey;
use crate::cvpv::{
    run_cvpv_instance, CellIndex, CvpvConfig, CvpvContext, CvpvReason, CvpvStats, DeviceRegistry,
    Keyring, Partition,
};
use crate::simnet::{NetworkConfig, SimTime};

/// Read-only world state an epoch runs against.
#[derive(Debug, Clone, Copy)]
pub struct EpochEnv<'a> {
    pub partition: &'a Partition,
    pub devices: &'a DeviceRegistry,
    pub keyring: &'a Keyring,
    pub net: &'a NetworkConfig,
    pub cvpv: &'a CvpvConfig,
    pub clock: &'a ReconfigClock,
    /// Byzantine members send inconsistent agreement votes.
    pub ba_saboteur: bool,
}

impl EpochEnv<'_> {
    fn is_adversary_key(&self, pk: &PublicKey) -> bool {
        self.keyring.owner_of(pk) == Some(ADVERSARY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub cell: CellIndex,
    pub pk: PublicKey,
    /// Position-verification result of each member, in seat order.
    pub inputs: Vec<bool>,
    /// Value each member published after agreement.
    pub published: Vec<bool>,
    pub approvals: usize,
    pub success: bool,
    pub reasons: Vec<Option<CvpvReason>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum VerifyResult {
    Success { pk: PublicKey },
    Failure,
}

/// Checks each key registered at `cpos` in order until one is approved.
///
/// Member `j` verifies during `[t, t + tau_v)` with `t = t0 + j * tau_v`.
/// After all members, agreement takes `3(f + 1)` rounds of Δ and publishing
/// one more Δ. Returns the result, per-key records, and the end time.
pub fn verify_candidate<R: Rng>(
    committee: &Committee,
    cpos: CellIndex,
    cpks: &[PublicKey],
    env: &EpochEnv<'_>,
    t0: SimTime,
    rng: &mut R,
    stats: &mut CvpvStats,
) -> (VerifyResult, Vec<CandidateOutcome>, SimTime) {
    let n = committee.n();
    let f = committee.f();
    let tau_v = SimTime::from_secs_f64(env.clock.tau_v);
    let delta = env.clock.delta;
    let ctx = CvpvContext {
        partition: env.partition,
        devices: env.devices,
        keyring: env.keyring,
        net: env.net,
        cfg: env.cvpv,
    };
    let mut t = t0;
    let mut records = Vec::new();
    for pk in cpks {
        let adversarial = env.is_adversary_key(pk);
        let mut inputs = Vec::with_capacity(n);
        let mut reasons = Vec::with_capacity(n);
        let mut voters = Vec::with_capacity(n);
        for (j, seat) in committee.seats().enumerate() {
            if seat.byzantine {
                inputs.push(adversarial);
                reasons.push(None);
                voters.push(BaVoter::Byzantine {
                    input: adversarial,
                    saboteur: env.ba_saboteur,
                });
            } else {
                let start = t + tau_v * j as u64;
                let out = run_cvpv_instance(cpos, pk, start, &ctx, rng);
                stats.record(&out);
                inputs.push(out.accepted);
                reasons.push(Some(out.transcript.reason));
                voters.push(BaVoter::Honest(out.accepted));
            }
        }
        let outputs = phase_king(&voters, f, rng);
        let published: Vec<bool> = outputs
            .iter()
            .map(|o| match o {
                Some(b) => *b,
                None if env.ba_saboteur => rng.gen(),
                None => adversarial,
            })
            .collect();
        let approvals = published.iter().filter(|&&b| b).count();
        let success = approvals >= committee.publish_quorum();
        t = t + tau_v * n as u64 + delta * (3 * (f as u64 + 1)) + delta;
        records.push(CandidateOutcome {
            cell: cpos,
            pk: *pk,
            inputs,
            published,
            approvals,
            success,
            reasons,
        });
        if success {
            return (VerifyResult::Success { pk: *pk }, records, t);
        }
    }
    (VerifyResult::Failure, records, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub sampled_cells: Vec<CellIndex>,
    pub candidate_pks: Vec<PublicKey>,
    pub outcomes: Vec<CandidateOutcome>,
    pub admitted: Option<Seat>,
    pub evicted: Option<Seat>,
    /// The dictionary ran out without a success.
    pub exhausted: bool,
    pub started: f64,
    pub ended: f64,
}

/// Samples registered cells with the beacon value `r` until a candidate is
/// approved or nothing is left; on success the committee rotates by one seat.
pub fn reconfiguration_epoch<R: Rng>(
    committee: &mut Committee,
    mut dict: EligibleDict,
    r: &BeaconValue,
    env: &EpochEnv<'_>,
    start: SimTime,
    rng: &mut R,
    stats: &mut CvpvStats,
) -> (EpochReport, SimTime) {
    let mut report = EpochReport {
        epoch: committee.index,
        sampled_cells: vec![],
        candidate_pks: vec![],
        outcomes: vec![],
        admitted: None,
        evicted: None,
        exhausted: false,
        started: start.as_secs_f64(),
        ended: start.as_secs_f64(),
    };
    let mut t = start;
    let mut attempt = 0u64;
    while !dict.is_empty() {
        let keys = dict.keys();
        let pos = keys[sample_index(&derive(r, "candidate", attempt), keys.len())];
        attempt += 1;
        let cpks = dict.remove(pos).expect("sampled key present");
        report.sampled_cells.push(pos);
        report.candidate_pks.extend(cpks.iter().copied());
        let (res, recs, end) = verify_candidate(committee, pos, &cpks, env, t, rng, stats);
        report.outcomes.extend(recs);
        t = end;
        if let VerifyResult::Success { pk } = res {
            let owner = env.keyring.owner_of(&pk).unwrap_or(ADVERSARY);
            let seat = Seat {
                pk,
                cell: Some(pos),
                owner,
                byzantine: owner == ADVERSARY,
            };
            report.evicted = Some(committee.admit(seat));
            report.admitted = Some(seat);
            break;
        }
    }
    report.exhausted = report.admitted.is_none() && !report.sampled_cells.is_empty();
    report.ended = t.as_secs_f64();
    (report, t)
}
