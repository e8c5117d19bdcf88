//! Drives a committee of replicas over the simulated network.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::byzantine::PbftFault;
use super::ledger::{Batch, Ledger, Tx};
use super::msg::{Certificate, Message, SigCache, VoteKind};
use super::replica::{Dest, Outbox, Replica, ReplicaEvent};
use super::{CommitteeInfo, Slot, ViewNum};
use crate::crypto::{Digest, KeyPair, PublicKey};
use crate::simnet::{
    DelayPolicyKind, EventLog, Network, NetworkConfig, NodeId, Scheduler, SimTime,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbftConfig {
    /// Slots per steady-state period.
    pub t_prime: u64,
    pub batch_size: usize,
    pub txs_per_period: usize,
    pub delay_policy: DelayPolicyKind,
}

impl Default for PbftConfig {
    fn default() -> Self {
        Self {
            t_prime: 10,
            batch_size: 64,
            txs_per_period: 4,
            delay_policy: DelayPolicyKind::Uniform,
        }
    }
}

#[derive(Clone)]
pub struct PbftMember {
    pub keypair: KeyPair,
    pub fault: Option<PbftFault>,
}

impl PbftMember {
    pub fn honest(keypair: KeyPair) -> Self {
        Self {
            keypair,
            fault: None,
        }
    }

    pub fn faulty(keypair: KeyPair, fault: PbftFault) -> Self {
        Self {
            keypair,
            fault: Some(fault),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PbftStats {
    pub periods: u64,
    /// Slots committed by every honest member.
    pub slots_committed: u64,
    /// Distinct views above 0 entered by some honest member.
    pub view_changes: u64,
    pub safety_violations: u64,
    pub first_violation_secs: Option<f64>,
    /// Periods that hit the time cap before every honest member finished.
    pub liveness_failures: u64,
    pub messages: u64,
    pub invalid_messages: u64,
    pub equivocations_detected: u64,
    pub max_slot_latency_secs: f64,
    pub txs_submitted: u64,
    pub txs_committed: u64,
    pub tx_latency_sum_secs: f64,
    pub max_tx_latency_secs: f64,
}

impl PbftStats {
    pub fn mean_tx_latency_secs(&self) -> Option<f64> {
        (self.txs_committed > 0).then(|| self.tx_latency_sum_secs / self.txs_committed as f64)
    }
}

/// First honest commit of a slot, used for the agreement audit and for
/// bringing joiners up to date.
#[derive(Debug, Clone)]
struct ChainEntry {
    digest: Digest,
    batch: Batch,
    q: Certificate,
}

#[derive(Debug)]
enum Ev {
    Deliver {
        c: u64,
        from: NodeId,
        to: NodeId,
        msg: Message,
        sent_at: SimTime,
    },
    Timer {
        c: u64,
        node: NodeId,
        generation: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodOutcome {
    pub completed: bool,
    pub max_slot: Slot,
}

pub struct PbftEngine {
    cfg: PbftConfig,
    net: Network,
    sched: Scheduler<Ev>,
    committee: Arc<CommitteeInfo>,
    history: BTreeMap<u64, Arc<CommitteeInfo>>,
    replicas: Vec<Replica>,
    faults: Vec<Option<PbftFault>>,
    cache: SigCache,
    log: EventLog,
    stats: PbftStats,
    max_slot: Slot,
    chain: BTreeMap<(u64, Slot), ChainEntry>,
    slot_done: BTreeMap<(u64, Slot), BTreeSet<NodeId>>,
    views_entered: BTreeSet<(u64, ViewNum)>,
    pending_txs: BTreeMap<u64, (Tx, SimTime, BTreeSet<NodeId>)>,
    seen_txs: BTreeSet<u64>,
}

impl PbftEngine {
    pub fn new(
        cfg: PbftConfig,
        net_cfg: NetworkConfig,
        members: Vec<PbftMember>,
        seed: u64,
        log: EventLog,
    ) -> Self {
        let max_delay = members
            .iter()
            .any(|m| m.fault == Some(PbftFault::DelayMaximizer));
        let policy = if max_delay {
            DelayPolicyKind::Max
        } else {
            cfg.delay_policy
        };
        let net = Network::new(net_cfg, policy.build(seed));
        let mut engine = Self {
            cfg,
            net,
            sched: Scheduler::new(),
            committee: Arc::new(CommitteeInfo::new(0, vec![members[0].keypair.public()])),
            history: BTreeMap::new(),
            replicas: Vec::new(),
            faults: Vec::new(),
            cache: SigCache::new(),
            log,
            stats: PbftStats::default(),
            max_slot: 0,
            chain: BTreeMap::new(),
            slot_done: BTreeMap::new(),
            views_entered: BTreeSet::new(),
            pending_txs: BTreeMap::new(),
            seen_txs: BTreeSet::new(),
        };
        engine.install(1, members, |_| Ledger::new());
        engine
    }

    pub fn config(&self) -> &PbftConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn delta(&self) -> SimTime {
        self.net.delta()
    }

    pub fn committee(&self) -> &CommitteeInfo {
        &self.committee
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn stats(&self) -> &PbftStats {
        &self.stats
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn sig_cache(&self) -> &SigCache {
        &self.cache
    }

    /// Digest committed at `(c, s)` by the first honest member to commit it.
    pub fn committed_digest(&self, c: u64, s: Slot) -> Option<Digest> {
        self.chain.get(&(c, s)).map(|e| e.digest)
    }

    pub fn honest_count(&self) -> usize {
        self.faults.iter().filter(|f| f.is_none()).count()
    }

    fn honest(&self, id: NodeId) -> bool {
        self.faults[id as usize].is_none()
    }

    /// Upper bound on the time one period may take before it is declared
    /// stuck: per slot, `f + 1` consecutive faulty leaders each costing 14Δ,
    /// plus slack.
    pub fn period_cap(&self) -> SimTime {
        let d = self.delta();
        let f = self.committee.f() as u64;
        let per_slot = d * (14 * (f + 1)) + d * 10;
        per_slot * (self.cfg.t_prime + 10)
    }

    fn install(
        &mut self,
        c: u64,
        members: Vec<PbftMember>,
        ledger_for: impl Fn(&PublicKey) -> Ledger,
    ) {
        let info = Arc::new(CommitteeInfo::new(
            c,
            members.iter().map(|m| m.keypair.public()).collect(),
        ));
        self.history.insert(c, info.clone());
        self.committee = info.clone();
        self.max_slot = 0;
        self.faults = members.iter().map(|m| m.fault).collect();
        self.replicas = members
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let ledger = ledger_for(&m.keypair.public());
                Replica::new(
                    i as NodeId,
                    m.keypair,
                    info.clone(),
                    self.net.delta(),
                    self.cfg.batch_size,
                    ledger,
                )
            })
            .collect();
        for tx in self
            .pending_txs
            .values()
            .map(|(tx, _, _)| *tx)
            .collect::<Vec<_>>()
        {
            for r in &mut self.replicas {
                r.submit_tx(tx);
            }
        }
        for (_, _, done) in self.pending_txs.values_mut() {
            done.clear();
        }
        let now = self.now();
        for i in 0..self.replicas.len() {
            let out = self.replicas[i].start(now);
            self.dispatch(i as NodeId, out);
        }
    }

    /// Hands the ledger over to committee `c + 1`. Continuing members keep
    /// their own state; joiners rebuild it from commit certificates checked
    /// against the committee that produced each one.
    pub fn rotate(&mut self, members: Vec<PbftMember>) -> Result<(), String> {
        let mut own: BTreeMap<PublicKey, Ledger> = BTreeMap::new();
        for r in &self.replicas {
            own.insert(r.keypair().public(), r.ledger().clone());
        }
        let joiner = self.sync_ledger()?;
        let next = self.committee.c + 1;
        // in-flight traffic of the old committee is dropped at delivery
        self.install(next, members, |pk| {
            own.get(pk).cloned().unwrap_or_else(|| joiner.clone())
        });
        Ok(())
    }

    fn sync_ledger(&mut self) -> Result<Ledger, String> {
        let mut ledger = Ledger::new();
        for ((c, s), e) in &self.chain {
            let info = &self.history[c];
            e.q.check_votes(VoteKind::Commit, *c, *s, e.digest, info, &mut self.cache)
                .map_err(|err| format!("commit certificate for ({c}, {s}): {err}"))?;
            if e.batch.digest() != e.digest {
                return Err(format!("batch for ({c}, {s}) does not match its digest"));
            }
            ledger.apply(&e.batch);
        }
        Ok(ledger)
    }

    pub fn submit(&mut self, tx: Tx) {
        if !self.seen_txs.insert(tx.id) {
            return;
        }
        self.stats.txs_submitted += 1;
        self.pending_txs
            .insert(tx.id, (tx, self.now(), BTreeSet::new()));
        for r in &mut self.replicas {
            r.submit_tx(tx);
        }
    }

    /// Runs `T′` more slots. Stops early only if the time cap is hit.
    pub fn run_period(&mut self, txs: &[Tx]) -> PeriodOutcome {
        for tx in txs {
            self.submit(*tx);
        }
        self.stats.periods += 1;
        self.max_slot += self.cfg.t_prime;
        let now = self.now();
        for i in 0..self.replicas.len() {
            let out = self.replicas[i].extend(self.max_slot, now);
            self.dispatch(i as NodeId, out);
        }
        let deadline = now + self.period_cap();
        let completed = loop {
            if self.period_done() {
                break true;
            }
            match self.sched.pop_until(deadline) {
                Some((_, ev)) => self.handle(ev),
                None => break false,
            }
        };
        if !completed {
            self.stats.liveness_failures += 1;
            self.sched.advance_to(deadline);
            self.log.record(
                self.now(),
                "liveness_failure",
                &serde_json::json!({ "c": self.committee.c, "max_slot": self.max_slot }),
            );
        }
        PeriodOutcome {
            completed,
            max_slot: self.max_slot,
        }
    }

    fn period_done(&self) -> bool {
        self.replicas
            .iter()
            .filter(|r| self.honest(r.id()))
            .all(|r| r.next_slot() > self.max_slot)
    }

    /// Processes every event up to `t` and moves the clock there.
    pub fn advance_to(&mut self, t: SimTime) {
        while let Some((_, ev)) = self.sched.pop_until(t) {
            self.handle(ev);
        }
        self.sched.advance_to(t);
    }

    fn handle(&mut self, ev: Ev) {
        let now = self.now();
        match ev {
            Ev::Deliver {
                c,
                from,
                to,
                msg,
                sent_at,
            } => {
                if c != self.committee.c {
                    return;
                }
                if self.log.enabled() {
                    self.log.message(
                        now,
                        msg.kind(),
                        format!("m{from}"),
                        format!("m{to}"),
                        msg.digest(),
                        sent_at,
                    );
                }
                let out = self.replicas[to as usize].on_message(from, msg, now, &mut self.cache);
                self.dispatch(to, out);
            }
            Ev::Timer {
                c,
                node,
                generation,
            } => {
                if c != self.committee.c {
                    return;
                }
                let out = self.replicas[node as usize].on_timer(generation, now);
                self.dispatch(node, out);
            }
        }
    }

    fn dispatch(&mut self, me: NodeId, out: Outbox) {
        let out = match self.faults[me as usize] {
            Some(fault) => {
                let r = &self.replicas[me as usize];
                fault.filter(me, r.keypair(), &self.committee, out)
            }
            None => out,
        };
        let c = self.committee.c;
        let now = self.now();
        if let Some((generation, _, after)) = out.timer {
            // a delivery at the same instant as the deadline wins the race
            self.sched.schedule(
                Ev::Timer {
                    c,
                    node: me,
                    generation,
                },
                now + after + SimTime(1),
            );
        }
        let n = self.replicas.len() as NodeId;
        for (dest, msg) in out.msgs {
            match dest {
                Dest::All => {
                    for to in (0..n).filter(|&j| j != me) {
                        self.send(c, me, to, msg.clone());
                    }
                }
                Dest::To(to) if to != me => self.send(c, me, to, msg),
                Dest::To(_) => {}
            }
        }
        if self.honest(me) {
            for e in out.events {
                self.observe(me, e);
            }
        }
    }

    fn send(&mut self, c: u64, from: NodeId, to: NodeId, msg: Message) {
        let now = self.now();
        let at = self.net.deliver_at(from, to, now);
        self.stats.messages += 1;
        self.sched.schedule(
            Ev::Deliver {
                c,
                from,
                to,
                msg,
                sent_at: now,
            },
            at,
        );
    }

    fn observe(&mut self, node: NodeId, e: ReplicaEvent) {
        let c = self.committee.c;
        let now = self.now();
        match e {
            ReplicaEvent::Committed {
                slot,
                view,
                digest,
                txs,
            } => {
                self.audit(node, slot, view, digest);
                let honest = self.honest_count();
                let done = self.slot_done.entry((c, slot)).or_default();
                done.insert(node);
                if done.len() == honest {
                    self.stats.slots_committed += 1;
                }
                for id in txs {
                    let Some((_, t0, nodes)) = self.pending_txs.get_mut(&id) else {
                        continue;
                    };
                    nodes.insert(node);
                    if nodes.len() == honest {
                        let lat = (now - *t0).as_secs_f64();
                        self.pending_txs.remove(&id);
                        self.stats.txs_committed += 1;
                        self.stats.tx_latency_sum_secs += lat;
                        self.stats.max_tx_latency_secs = self.stats.max_tx_latency_secs.max(lat);
                    }
                }
            }
            ReplicaEvent::SlotLatency { secs, .. } => {
                self.stats.max_slot_latency_secs = self.stats.max_slot_latency_secs.max(secs);
            }
            ReplicaEvent::EnteredView { view } => {
                if view > 0 && self.views_entered.insert((c, view)) {
                    self.stats.view_changes += 1;
                    self.log.record(
                        now,
                        "view_change",
                        &serde_json::json!({ "c": c, "v": view }),
                    );
                }
            }
            ReplicaEvent::Equivocation { .. } => self.stats.equivocations_detected += 1,
            ReplicaEvent::InvalidMessage { .. } | ReplicaEvent::InvalidRepropose { .. } => {
                self.stats.invalid_messages += 1
            }
            ReplicaEvent::SentViewChange { .. } => {}
        }
    }

    fn audit(&mut self, node: NodeId, s: Slot, view: ViewNum, digest: Digest) {
        let c = self.committee.c;
        let now = self.now();
        if let Some(e) = self.chain.get(&(c, s)) {
            if e.digest != digest {
                self.stats.safety_violations += 1;
                self.stats
                    .first_violation_secs
                    .get_or_insert(now.as_secs_f64());
                self.log.record(
                    now,
                    "safety_violation",
                    &serde_json::json!({ "c": c, "s": s, "node": node }),
                );
            }
            return;
        }
        let rec = &self.replicas[node as usize].committed()[&s];
        let entry = ChainEntry {
            digest,
            batch: rec.batch.clone(),
            q: rec.q.clone(),
        };
        self.log.record(
            now,
            "commit",
            &serde_json::json!({
                "c": c,
                "s": s,
                "v": view,
                "digest": digest.to_hex(),
                "txs": entry.batch.0.iter().map(|t| t.id).collect::<Vec<_>>(),
            }),
        );
        self.chain.insert((c, s), entry);
    }
}
