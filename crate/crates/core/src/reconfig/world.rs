//! A whole simulated deployment: devices, registrants, the committee and its
//! ordering engine, driven tick by tick.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::epoch::{reconfiguration_epoch, EpochEnv, EpochReport};
use super::registration::{registration_round, RegistrationMode, Submission};
use super::{Committee, ReconfigClock, Seat};
use crate::adversary::{
    AdversaryConfig, Capabilities, ModelViolation, Strategy, ViolationRecord, ADVERSARY,
};
use crate::beacon::{derive, rng_stream, Beacon, BeaconValue};
use crate::crypto::{
    puzzle_target, verify_dlog, DlogSolver, GroupParams, KeyPair, PuzzleSolution, SolverBudget,
};
use crate::cvpv::{
    CellIndex, CvpvConfig, CvpvStats, DeviceId, DeviceRegistry, Keyring, ParticipantId, Partition,
};
use crate::pbft::{PbftConfig, PbftEngine, PbftMember, PbftStats, Tx};
use crate::simnet::{EventLog, Gossip, NetworkConfig, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantSpec {
    pub id: ParticipantId,
    /// Cell of each device the participant owns.
    pub devices: Vec<CellIndex>,
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub seed: u64,
    /// Number of ticks to run.
    pub horizon: u64,
    pub clock: ReconfigClock,
    pub gamma: f64,
    pub line_length: f64,
    pub net: NetworkConfig,
    pub cvpv: CvpvConfig,
    pub pbft: PbftConfig,
    pub group: GroupParams,
    /// Honest puzzle solves per second, `R_H`.
    pub r_h: f64,
    pub mode: RegistrationMode,
    pub participants: Vec<ParticipantSpec>,
    pub adversary: AdversaryConfig,
    /// One flag per genesis seat.
    pub genesis_byzantine: Vec<bool>,
    pub device_poq_time: f64,
    /// Device travel speed between cells; instantaneous when absent.
    pub relocation_speed: Option<f64>,
    pub log_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeRow {
    pub epoch: u64,
    pub f_t: usize,
    pub admitted: Option<String>,
    pub evicted: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpamStats {
    pub submitted: u64,
    pub rejected: u64,
    /// Invalid registrations an honest node passed on.
    pub forwarded: u64,
    pub max_adversary_valid_per_round: u64,
    pub max_adversary_cells_per_round: u64,
    pub max_registered_cells: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldReport {
    pub ticks: u64,
    pub registration_rounds: u64,
    /// Byzantine seats: genesis first, then after every reconfiguration.
    pub f_t: Vec<usize>,
    pub committee: Vec<CommitteeRow>,
    /// Whether each epoch admitted a Byzantine seat; `None` when it admitted nobody.
    pub admitted_byzantine: Vec<Option<bool>>,
    /// Admissions per participant; the adversary is `4294967295`.
    pub admissions: BTreeMap<ParticipantId, u64>,
    pub epochs_without_admission: u64,
    pub honest_registration_misses: u64,
    pub cvpv: CvpvStats,
    pub spam: SpamStats,
    pub pbft: PbftStats,
    pub committee_unsafe_at: Option<f64>,
    pub model_violations: Vec<ViolationRecord>,
    pub end_time: f64,
}

struct DoubleRegistrant {
    device: DeviceId,
    other: CellIndex,
}

pub struct World {
    cfg: WorldConfig,
    partition: Partition,
    devices: DeviceRegistry,
    keyring: Keyring,
    solver: DlogSolver,
    beacon: Beacon,
    committee: Committee,
    engine: Option<PbftEngine>,
    log: EventLog,
    gossip: Gossip,
    caps: Capabilities,
    rng: ChaCha8Rng,
    adv_rng: ChaCha8Rng,
    now: SimTime,
    round: u64,
    adv_keys: u64,
    next_tx: u64,
    adversary_devices: Vec<DeviceId>,
    double: Option<DoubleRegistrant>,
    relocations: Vec<(DeviceId, CellIndex, SimTime)>,
    report: WorldReport,
    epochs: Vec<EpochReport>,
}

impl World {
    pub fn new(mut cfg: WorldConfig) -> Result<Self, String> {
        if let Some(p) = cfg.adversary.break_prob {
            cfg.cvpv.break_prob = Some(p);
        }
        let partition = Partition::new(cfg.gamma, cfg.line_length).map_err(|e| e.to_string())?;
        cfg.cvpv.validate().map_err(|e| e.to_string())?;
        cfg.adversary.validate()?;
        if cfg.genesis_byzantine.is_empty() {
            return Err("genesis committee is empty".into());
        }
        let mut devices = DeviceRegistry::new();
        for p in &cfg.participants {
            if p.id == ADVERSARY {
                return Err(format!("participant id {ADVERSARY} is reserved"));
            }
            for &cell in &p.devices {
                partition.check(cell).map_err(|e| e.to_string())?;
                devices.add(p.id, cell, cfg.device_poq_time);
            }
        }
        let mut adv_rng = rng_stream(cfg.seed, "adversary", 0);
        let mut adversary_devices = Vec::new();
        let honest_devices = devices.len();
        let adv_cells: Vec<CellIndex> = if cfg.adversary.devices.is_empty() {
            let k = cfg.adversary.device_count(honest_devices);
            let free: Vec<CellIndex> = (0..partition.cell_count)
                .filter(|&c| devices.in_cell(c).next().is_none())
                .collect();
            (0..k)
                .map(|_| {
                    if free.is_empty() {
                        adv_rng.gen_range(0..partition.cell_count)
                    } else {
                        free[adv_rng.gen_range(0..free.len())]
                    }
                })
                .collect()
        } else {
            cfg.adversary.devices.clone()
        };
        for cell in adv_cells {
            partition.check(cell).map_err(|e| e.to_string())?;
            adversary_devices.push(devices.add(ADVERSARY, cell, cfg.device_poq_time));
        }
        let double = if cfg.adversary.has(|s| *s == Strategy::DoubleRegistrant) {
            let &device = adversary_devices
                .first()
                .ok_or("double registration needs an adversary device")?;
            let home = devices.get(device).expect("just added").cell;
            let other = (home + 1) % partition.cell_count;
            Some(DoubleRegistrant { device, other })
        } else {
            None
        };

        let mut keyring = Keyring::new();
        let seats: Vec<Seat> = cfg
            .genesis_byzantine
            .iter()
            .enumerate()
            .map(|(i, &byz)| {
                let owner = if byz {
                    ADVERSARY
                } else {
                    u32::MAX - 1 - i as u32
                };
                let pk = keyring.insert(owner, KeyPair::derive(cfg.seed, "genesis", i as u64));
                Seat {
                    pk,
                    cell: None,
                    owner,
                    byzantine: byz,
                }
            })
            .collect();
        let committee = Committee::new(seats);

        let log = EventLog::new(cfg.log_enabled);
        let engine = (cfg.clock.tau_reconfig != 1).then(|| {
            let members = pbft_members(&committee, &keyring, &cfg.adversary);
            let mut pc = cfg.pbft;
            pc.delay_policy = cfg.adversary.delay_policy;
            PbftEngine::new(pc, cfg.net, members, cfg.seed, log.clone())
        });
        let solver = DlogSolver::new(cfg.group);
        let observers = cfg.participants.len().max(1);
        let mut report = WorldReport::default();
        report.f_t.push(committee.byzantine_count());
        if committee.is_unsafe() {
            report.committee_unsafe_at = Some(0.0);
        }
        Ok(Self {
            beacon: Beacon::from_u64(cfg.seed),
            rng: rng_stream(cfg.seed, "epoch", 0),
            partition,
            devices,
            keyring,
            solver,
            committee,
            engine,
            log,
            gossip: Gossip::new(observers),
            caps: Capabilities::new(),
            adv_rng,
            now: SimTime::ZERO,
            round: 0,
            adv_keys: 0,
            next_tx: 0,
            adversary_devices,
            double,
            relocations: Vec::new(),
            report,
            epochs: Vec::new(),
            cfg,
        })
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn devices(&self) -> &DeviceRegistry {
        &self.devices
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn epochs(&self) -> &[EpochReport] {
        &self.epochs
    }

    pub fn engine(&self) -> Option<&PbftEngine> {
        self.engine.as_ref()
    }

    fn log(&mut self) -> &mut EventLog {
        match &mut self.engine {
            Some(e) => e.log_mut(),
            None => &mut self.log,
        }
    }

    /// Runs tick `t`: a reconfiguration when `t` is a multiple of
    /// `tau_reconfig`, otherwise one steady-state period.
    pub fn tick(&mut self, t: u64) {
        self.report.ticks += 1;
        if t.is_multiple_of(self.cfg.clock.tau_reconfig) {
            self.reconfigure();
        } else {
            self.pbft_period();
        }
    }

    fn pbft_period(&mut self) {
        let Some(engine) = &mut self.engine else {
            return;
        };
        engine.advance_to(self.now);
        let txs: Vec<Tx> = (0..engine.config().txs_per_period as u64)
            .map(|i| Tx {
                id: self.next_tx + i,
                input: self.next_tx + i,
                amount: 1,
            })
            .collect();
        self.next_tx += txs.len() as u64;
        engine.run_period(&txs);
        self.now = engine.now();
    }

    fn reconfigure(&mut self) {
        self.round += 1;
        self.report.registration_rounds += 1;
        let r = self.beacon.next_value();
        let reg_r = derive(&r, "registration", 0);
        let start = self.now;
        self.settle_relocations(start);

        let (subs, honest) = self.submissions(&reg_r, start);
        let rep = registration_round(
            self.cfg.mode,
            &subs,
            &self.cfg.group,
            &reg_r,
            &self.cfg.clock,
            &self.partition,
            start,
            &mut self.gossip,
        );
        for (pk, cell) in &honest {
            if !rep.dict.get(*cell).is_some_and(|l| l.contains(pk)) {
                self.report.honest_registration_misses += 1;
            }
        }
        let spam = &mut self.report.spam;
        spam.submitted += rep.submitted;
        spam.rejected += rep.rejected;
        spam.forwarded += rep.forwarded_invalid;
        spam.max_adversary_valid_per_round = spam
            .max_adversary_valid_per_round
            .max(rep.adversary_accepted);
        spam.max_adversary_cells_per_round =
            spam.max_adversary_cells_per_round.max(rep.adversary_cells);
        spam.max_registered_cells = spam.max_registered_cells.max(rep.dict.len() as u64);
        let round = self.round;
        let detail = serde_json::json!({
            "round": round,
            "submitted": rep.submitted,
            "accepted": rep.accepted,
            "rejected": rep.rejected,
            "late": rep.late,
            "cells": rep.dict.keys(),
        });
        let close = self.cfg.clock.register_close(start);
        self.log().record(close, "registration", &detail);

        self.settle_relocations(close);
        let env = EpochEnv {
            partition: &self.partition,
            devices: &self.devices,
            keyring: &self.keyring,
            net: &self.cfg.net,
            cvpv: &self.cfg.cvpv,
            clock: &self.cfg.clock,
            ba_saboteur: self.cfg.adversary.has(|s| *s == Strategy::BaSaboteur),
        };
        let (epoch, end) = reconfiguration_epoch(
            &mut self.committee,
            rep.dict,
            &r,
            &env,
            close,
            &mut self.rng,
            &mut self.report.cvpv,
        );
        self.now = end;

        let f_t = self.committee.byzantine_count();
        self.report.f_t.push(f_t);
        self.report.committee.push(CommitteeRow {
            epoch: round,
            f_t,
            admitted: epoch.admitted.map(|s| s.pk.to_string()),
            evicted: epoch.evicted.map(|s| s.pk.to_string()),
        });
        self.report
            .admitted_byzantine
            .push(epoch.admitted.as_ref().map(|s| s.byzantine));
        match epoch.admitted {
            Some(seat) => *self.report.admissions.entry(seat.owner).or_default() += 1,
            None => self.report.epochs_without_admission += 1,
        }
        if self.committee.is_unsafe() && self.report.committee_unsafe_at.is_none() {
            self.report.committee_unsafe_at = Some(end.as_secs_f64());
        }
        let detail = serde_json::json!({
            "epoch": round,
            "sampled_cells": epoch.sampled_cells,
            "candidate_pks": epoch.candidate_pks,
            "outcomes": epoch.outcomes.iter().map(|o| serde_json::json!({
                "cell": o.cell,
                "pk": o.pk,
                "approvals": o.approvals,
                "success": o.success,
            })).collect::<Vec<_>>(),
            "evicted": epoch.evicted.map(|s| s.pk),
            "admitted": epoch.admitted.map(|s| s.pk),
        });
        self.log().record(end, "reconfig", &detail);

        let admitted = epoch.admitted.is_some();
        self.epochs.push(epoch);
        self.schedule_relocations(end);
        if admitted {
            let members = pbft_members(&self.committee, &self.keyring, &self.cfg.adversary);
            if let Some(engine) = &mut self.engine {
                engine.advance_to(end);
                engine
                    .rotate(members)
                    .expect("commit certificates of honest committees verify");
            }
        }
    }

    /// Everything published during the window; also returns the honest
    /// `(pk, cell)` pairs that should make it in.
    fn submissions(
        &mut self,
        r: &BeaconValue,
        start: SimTime,
    ) -> (Vec<Submission>, Vec<(crate::crypto::PublicKey, CellIndex)>) {
        let gp = self.cfg.group;
        let window = self.cfg.clock.tau_register;
        let spam_resistant = self.cfg.mode == RegistrationMode::SpamResistant;
        let mut subs = Vec::new();
        let mut honest = Vec::new();

        let honest_devices: Vec<_> = self
            .devices
            .all()
            .iter()
            .filter(|d| d.owner != ADVERSARY && d.online)
            .cloned()
            .collect();
        for d in honest_devices {
            let kp = KeyPair::derive(
                self.cfg.seed,
                &format!("participant-{}-device-{}", d.owner, d.id),
                self.round,
            );
            let pk = self.keyring.insert(d.owner, kp);
            let (x, sent_at) = if spam_resistant {
                let mut budget = SolverBudget::for_window(self.cfg.r_h, window);
                let target = puzzle_target(pk.as_bytes(), d.cell, r, &gp);
                match self.solver.solve(target, &mut budget) {
                    Ok(x) => (Some(x), start + SimTime::from_secs_f64(1.0 / self.cfg.r_h)),
                    Err(_) => {
                        self.report.honest_registration_misses += 1;
                        continue;
                    }
                }
            } else {
                (None, start)
            };
            honest.push((pk, d.cell));
            subs.push(Submission {
                pk,
                pos: d.cell,
                x,
                sent_at,
                from_adversary: false,
            });
        }

        let adv_start = subs.len();
        let mut budget = if spam_resistant {
            SolverBudget::for_window(self.cfg.adversary.r_a_rate, window)
        } else {
            SolverBudget::unlimited()
        };
        // the adversary registers its own devices like anyone else
        let mut wanted: Vec<CellIndex> = self
            .adversary_devices
            .iter()
            .filter_map(|&id| self.devices.get(id))
            .filter(|d| d.online)
            .map(|d| d.cell)
            .collect();
        if let Some(dr) = &self.double {
            wanted.push(dr.other);
        }
        if self.cfg.adversary.has(|s| *s == Strategy::PositionSpoofer) {
            wanted.push(self.empty_cell());
        }
        for cell in wanted {
            if budget.is_exhausted() {
                break;
            }
            self.adversary_submission(cell, r, &mut budget, false, &mut subs, start);
        }
        if let Some((cap, invalid, plain_count)) = self.cfg.adversary.spammer() {
            if spam_resistant {
                for _ in 0..invalid {
                    let cell = self.empty_cell();
                    self.adversary_submission(cell, r, &mut budget, true, &mut subs, start);
                }
                let attempts = cap.unwrap_or(budget.remaining);
                for _ in 0..attempts {
                    let cell = self.empty_cell();
                    self.adversary_submission(cell, r, &mut budget, false, &mut subs, start);
                }
            } else {
                for _ in 0..plain_count {
                    let cell = self.empty_cell();
                    self.adversary_submission(cell, r, &mut budget, false, &mut subs, start);
                }
            }
        }
        // spread adversary traffic over the window
        let k = (subs.len() - adv_start) as f64;
        for (i, s) in subs[adv_start..].iter_mut().enumerate() {
            s.sent_at = start + SimTime::from_secs_f64(window * (i as f64 + 1.0) / (k + 1.0));
        }
        (subs, honest)
    }

    fn empty_cell(&mut self) -> CellIndex {
        let n = self.partition.cell_count;
        for _ in 0..64 {
            let c = self.adv_rng.gen_range(0..n);
            if self.devices.in_cell(c).next().is_none() {
                return c;
            }
        }
        self.adv_rng.gen_range(0..n)
    }

    fn adversary_submission(
        &mut self,
        cell: CellIndex,
        r: &BeaconValue,
        budget: &mut SolverBudget,
        invalid: bool,
        subs: &mut Vec<Submission>,
        start: SimTime,
    ) {
        let gp = self.cfg.group;
        let kp = KeyPair::derive(self.cfg.seed, "adversary", self.adv_keys);
        self.adv_keys += 1;
        let pk = self.keyring.insert(ADVERSARY, kp);
        let x = if self.cfg.mode == RegistrationMode::Plain {
            None
        } else {
            let target = puzzle_target(pk.as_bytes(), cell, r, &gp);
            if invalid {
                // guessing is free; a lucky guess is still a guess
                let mut x;
                loop {
                    x = PuzzleSolution {
                        x: self.adv_rng.gen_range(0..gp.q),
                    };
                    if !verify_dlog(&gp, target, x) {
                        break;
                    }
                }
                Some(x)
            } else {
                match self.caps.try_solve(&self.solver, target, budget, start) {
                    Some(x) => Some(x),
                    None => return,
                }
            }
        };
        subs.push(Submission {
            pk,
            pos: cell,
            x,
            sent_at: start,
            from_adversary: true,
        });
    }

    fn schedule_relocations(&mut self, at: SimTime) {
        let Some(dr) = &mut self.double else {
            return;
        };
        let d = self
            .devices
            .get(dr.device)
            .cloned()
            .expect("adversary device");
        let to = dr.other;
        dr.other = d.cell;
        let arrive = match self.cfg.relocation_speed {
            Some(v) if v > 0.0 => {
                let dist = (self.partition.center(to) - self.partition.center(d.cell)).abs();
                at + SimTime::from_secs_f64(dist / v)
            }
            _ => at,
        };
        self.relocations.push((d.id, to, arrive));
        self.devices.relocate(d.id, to).expect("known device");
        self.devices
            .set_online(d.id, arrive <= at)
            .expect("known device");
    }

    fn settle_relocations(&mut self, now: SimTime) {
        let devices = &mut self.devices;
        self.relocations.retain(|&(id, _, arrive)| {
            if arrive <= now {
                devices.set_online(id, true).expect("known device");
                false
            } else {
                true
            }
        });
    }

    pub fn finish(mut self) -> (WorldReport, EventLog) {
        if let Some(engine) = &self.engine {
            self.report.pbft = engine.stats().clone();
            let over = engine.network().policy_violations();
            for _ in 0..over {
                self.caps.block(self.now, ModelViolation::DelayAboveDelta);
            }
        }
        self.report.model_violations = self.caps.violations().to_vec();
        self.report.end_time = self.now.as_secs_f64();
        let log = match self.engine {
            Some(e) => e.into_log(),
            None => self.log,
        };
        (self.report, log)
    }
}

fn pbft_members(
    committee: &Committee,
    keyring: &Keyring,
    adv: &AdversaryConfig,
) -> Vec<PbftMember> {
    let faults = adv.pbft_faults();
    let mut k = 0;
    committee
        .seats()
        .map(|seat| {
            let kp = keyring
                .keypair(&seat.pk)
                .expect("committee keys are in the keyring")
                .clone();
            if seat.byzantine && !faults.is_empty() {
                let f = faults[k % faults.len()];
                k += 1;
                PbftMember::faulty(kp, f)
            } else {
                PbftMember::honest(kp)
            }
        })
        .collect()
}

/// Runs ticks `1..=horizon` and returns the report with the event log.
pub fn main_loop(mut world: World) -> (WorldReport, EventLog) {
    for t in 1..=world.cfg.horizon {
        world.tick(t);
    }
    world.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_group, GroupPreset};

    fn cfg(tau_reconfig: u64, horizon: u64) -> WorldConfig {
        WorldConfig {
            seed: 5,
            horizon,
            clock: ReconfigClock {
                tau_reconfig,
                tau_register: 1.0,
                tau_v: 0.01,
                delta: SimTime::from_secs_f64(0.05),
            },
            gamma: 1.0,
            line_length: 64.0,
            net: NetworkConfig::new(SimTime::from_secs_f64(0.05), 1000.0, 64.0).unwrap(),
            cvpv: CvpvConfig::default(),
            pbft: PbftConfig {
                t_prime: 3,
                ..Default::default()
            },
            group: derive_group(GroupPreset::Bits(24)).unwrap(),
            r_h: 1.0,
            mode: RegistrationMode::SpamResistant,
            participants: vec![
                ParticipantSpec {
                    id: 1,
                    devices: vec![3],
                },
                ParticipantSpec {
                    id: 2,
                    devices: vec![10, 20],
                },
            ],
            adversary: AdversaryConfig::default(),
            genesis_byzantine: vec![false; 4],
            device_poq_time: 1e-4,
            relocation_speed: None,
            log_enabled: true,
        }
    }

    #[test]
    fn epochs_follow_schedule() {
        let (rep, log) = main_loop(World::new(cfg(5, 20)).unwrap());
        assert_eq!(rep.registration_rounds, 4);
        assert_eq!(rep.committee.len(), 4);
        assert_eq!(rep.admissions.values().sum::<u64>(), 4);
        assert_eq!(rep.pbft.slots_committed, 16 * 3);
        assert_eq!(rep.pbft.view_changes, 0);
        assert!(log.events().iter().any(|e| e.kind == "reconfig"));
        assert!(rep.model_violations.is_empty());
    }

    #[test]
    fn no_registrations_means_fixed_committee() {
        let mut c = cfg(5, 10);
        c.participants.clear();
        let w = World::new(c).unwrap();
        let genesis = w.committee().members();
        let (rep, _) = main_loop(w);
        assert_eq!(rep.epochs_without_admission, 2);
        assert!(rep.admissions.is_empty());
        assert_eq!(rep.pbft.slots_committed, 8 * 3);
        let _ = genesis;
    }

    #[test]
    fn spammer_is_capped_by_budget() {
        let mut c = cfg(1, 5);
        c.adversary = AdversaryConfig {
            r_a_rate: 8.0,
            strategies: vec![Strategy::RegistrationSpammer {
                budget: None,
                invalid: 20,
                plain_count: 50,
            }],
            ..Default::default()
        };
        let (rep, _) = main_loop(World::new(c.clone()).unwrap());
        assert!(rep.spam.max_adversary_valid_per_round <= 8);
        assert_eq!(rep.spam.forwarded, 0);
        assert_eq!(rep.honest_registration_misses, 0);
        assert!(rep.model_violations.is_empty());

        c.mode = RegistrationMode::Plain;
        let (rep, _) = main_loop(World::new(c).unwrap());
        assert!(rep.spam.max_adversary_valid_per_round >= 50);
    }

    #[test]
    fn over_budget_spam_is_a_violation() {
        let mut c = cfg(1, 1);
        c.adversary = AdversaryConfig {
            r_a_rate: 2.0,
            strategies: vec![Strategy::RegistrationSpammer {
                budget: Some(5),
                invalid: 0,
                plain_count: 0,
            }],
            ..Default::default()
        };
        let (rep, _) = main_loop(World::new(c).unwrap());
        assert_eq!(rep.spam.max_adversary_valid_per_round, 2);
        assert_eq!(rep.model_violations.len(), 3);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let (rep, log) = main_loop(World::new(cfg(3, 9)).unwrap());
            (serde_json::to_string(&rep).unwrap(), log.to_jsonl())
        };
        assert_eq!(run(), run());
    }
}
