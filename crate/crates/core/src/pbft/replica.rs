//! Per-member protocol automaton.
//!
//! A replica never touches the network or the clock directly. Each entry
//! point takes the current time and returns an [`Outbox`] of messages to send,
//! at most one timer to arm, and observable events.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ledger::{Batch, Ledger, Tx};
use super::msg::{
    Certificate, Header, Message, ReproposeMsg, SigCache, Signed, StatusMsg, VoteKind,
};
use super::viewchange::{
    build_repropose, select_status, status_fields, validate_repropose, validate_status,
    ReproposeInvalid,
};
use super::{CommitteeInfo, Slot, ViewNum};
use crate::crypto::{Digest, KeyPair};
use crate::simnet::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKind {
    /// Slot must commit within 4Δ.
    Steady,
    /// New-view must arrive within 2Δ of forwarding view-changes.
    AwaitNewView,
    /// Some slot must commit within 8Δ of entering a view.
    PostNewView,
}

impl TimerKind {
    pub fn duration(self, delta: SimTime) -> SimTime {
        match self {
            TimerKind::Steady => delta * 4,
            TimerKind::AwaitNewView => delta * 2,
            TimerKind::PostNewView => delta * 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    /// Every other member.
    All,
    To(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReplicaEvent {
    Committed {
        slot: Slot,
        view: ViewNum,
        digest: Digest,
        txs: Vec<u64>,
    },
    /// Time from entering a slot in steady state to committing it.
    SlotLatency {
        slot: Slot,
        secs: f64,
    },
    EnteredView {
        view: ViewNum,
    },
    SentViewChange {
        view: ViewNum,
    },
    Equivocation {
        view: ViewNum,
        slot: Slot,
    },
    InvalidMessage {
        kind: String,
        reason: String,
    },
    InvalidRepropose {
        view: ViewNum,
        reason: ReproposeInvalid,
    },
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub msgs: Vec<(Dest, Message)>,
    /// Timer to arm: `(generation, kind, fire after)`.
    pub timer: Option<(u64, TimerKind, SimTime)>,
    pub events: Vec<ReplicaEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub view: ViewNum,
    pub digest: Digest,
    pub batch: Batch,
    pub q: Certificate,
}

#[derive(Debug, Default)]
struct SlotState {
    batches: BTreeMap<Digest, Batch>,
    prepares: BTreeMap<(ViewNum, Digest), BTreeMap<NodeId, Signed>>,
    commits: BTreeMap<(ViewNum, Digest), BTreeMap<NodeId, Signed>>,
    /// Highest-view accept: value, rank, certificate.
    accepted: Option<(Digest, ViewNum, Certificate)>,
    commit_sent: BTreeSet<ViewNum>,
}

/// Counters a replica keeps about itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaStats {
    pub invalid: u64,
    pub equivocations: u64,
    pub view_changes_sent: u64,
    pub views_entered: u64,
}

pub struct Replica {
    id: NodeId,
    kp: KeyPair,
    committee: Arc<CommitteeInfo>,
    delta: SimTime,
    batch_size: usize,
    now: SimTime,

    view: ViewNum,
    entered: Option<ViewNum>,
    in_view: bool,
    awaiting_repropose: bool,
    fresh_from: Slot,
    next_slot: Slot,
    max_slot: Slot,

    slots: BTreeMap<Slot, SlotState>,
    committed: BTreeMap<Slot, CommitRecord>,
    notified: BTreeSet<Slot>,
    ledger: Ledger,
    mempool: BTreeMap<u64, Tx>,

    timer: Option<(TimerKind, u64)>,
    timer_gen: u64,
    await_target: Option<ViewNum>,

    proposals: BTreeMap<(ViewNum, Slot), Digest>,
    pending: BTreeMap<(ViewNum, Slot), Batch>,
    prepared: BTreeSet<(ViewNum, Slot)>,
    proposed: BTreeSet<(ViewNum, Slot)>,
    slot_entered: BTreeMap<Slot, SimTime>,

    vcs: BTreeMap<ViewNum, BTreeMap<NodeId, Signed>>,
    vc_sent: BTreeSet<ViewNum>,
    vc_forwarded: BTreeSet<ViewNum>,
    statuses: Vec<StatusMsg>,
    reproposed: bool,
    future_reproposes: BTreeMap<ViewNum, ReproposeMsg>,

    stats: ReplicaStats,
}

impl Replica {
    pub fn new(
        id: NodeId,
        kp: KeyPair,
        committee: Arc<CommitteeInfo>,
        delta: SimTime,
        batch_size: usize,
        ledger: Ledger,
    ) -> Self {
        debug_assert_eq!(committee.members[id as usize], kp.public());
        Self {
            id,
            kp,
            committee,
            delta,
            batch_size,
            now: SimTime::ZERO,
            view: 0,
            entered: None,
            in_view: false,
            awaiting_repropose: false,
            fresh_from: 1,
            next_slot: 1,
            max_slot: 0,
            slots: BTreeMap::new(),
            committed: BTreeMap::new(),
            notified: BTreeSet::new(),
            ledger,
            mempool: BTreeMap::new(),
            timer: None,
            timer_gen: 0,
            await_target: None,
            proposals: BTreeMap::new(),
            pending: BTreeMap::new(),
            prepared: BTreeSet::new(),
            proposed: BTreeSet::new(),
            slot_entered: BTreeMap::new(),
            vcs: BTreeMap::new(),
            vc_sent: BTreeSet::new(),
            vc_forwarded: BTreeSet::new(),
            statuses: Vec::new(),
            reproposed: false,
            future_reproposes: BTreeMap::new(),
            stats: ReplicaStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.kp
    }

    pub fn committee(&self) -> &CommitteeInfo {
        &self.committee
    }

    pub fn view(&self) -> ViewNum {
        self.view
    }

    pub fn in_view(&self) -> bool {
        self.in_view
    }

    pub fn next_slot(&self) -> Slot {
        self.next_slot
    }

    pub fn max_slot(&self) -> Slot {
        self.max_slot
    }

    pub fn committed(&self) -> &BTreeMap<Slot, CommitRecord> {
        &self.committed
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn stats(&self) -> ReplicaStats {
        self.stats
    }

    pub fn armed_timer(&self) -> Option<(TimerKind, u64)> {
        self.timer
    }

    pub fn is_leader(&self) -> bool {
        self.committee.leader(self.view) == self.id
    }

    /// Genesis: enter view 0 of this committee.
    pub fn start(&mut self, now: SimTime) -> Outbox {
        self.now = now;
        let mut out = Outbox::default();
        self.entered = Some(0);
        self.in_view = true;
        self.stats.views_entered += 1;
        out.events.push(ReplicaEvent::EnteredView { view: 0 });
        self.resume_steady(&mut out);
        out
    }

    /// Opens slots up to `max_slot` for this period.
    pub fn extend(&mut self, max_slot: Slot, now: SimTime) -> Outbox {
        self.now = now;
        let mut out = Outbox::default();
        if max_slot > self.max_slot {
            self.max_slot = max_slot;
            if self.timer.is_none() {
                self.resume_steady(&mut out);
            }
        }
        out
    }

    pub fn submit_tx(&mut self, tx: Tx) {
        if !self.ledger.is_spent(tx.input) {
            self.mempool.insert(tx.id, tx);
        }
    }

    pub fn on_timer(&mut self, generation: u64, now: SimTime) -> Outbox {
        self.now = now;
        let mut out = Outbox::default();
        let Some((kind, g)) = self.timer else {
            return out;
        };
        if g != generation {
            return out;
        }
        self.timer = None;
        match kind {
            TimerKind::Steady | TimerKind::PostNewView => {
                let v = self.view;
                self.send_view_change(v, &mut out);
            }
            TimerKind::AwaitNewView => {
                if let Some(target) = self.await_target.take() {
                    self.send_view_change(target, &mut out);
                }
            }
        }
        out
    }

    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: Message,
        now: SimTime,
        cache: &mut SigCache,
    ) -> Outbox {
        self.now = now;
        let mut out = Outbox::default();
        self.dispatch(from, msg, cache, &mut out);
        out
    }

    fn dispatch(&mut self, _from: NodeId, msg: Message, cache: &mut SigCache, out: &mut Outbox) {
        match msg {
            Message::Propose { sig, batch } => self.on_propose(sig, batch, cache, out),
            Message::Prepare(sig) => self.on_vote(VoteKind::Prepare, sig, cache, out),
            Message::Commit(sig) => self.on_vote(VoteKind::Commit, sig, cache, out),
            Message::Notify { sig, q, batch } => self.on_notify(sig, q, batch, cache, out),
            Message::ViewChange(sig) => {
                if let Some(w) = self.store_view_change(sig, cache, out) {
                    self.check_view_changes(w, cache, out);
                }
            }
            Message::ViewChangeBundle(cert) => {
                let mut views = BTreeSet::new();
                for sig in cert.0 {
                    if let Some(w) = self.store_view_change(sig, cache, out) {
                        views.insert(w);
                    }
                }
                for w in views {
                    self.check_view_changes(w, cache, out);
                }
            }
            Message::NewView { sig, v_cert } => self.on_new_view(sig, v_cert, cache, out),
            Message::Status(m) => self.on_status(*m, cache, out),
            Message::Repropose(m) => self.on_repropose(*m, cache, out),
        }
    }

    fn invalid(&mut self, kind: &str, reason: impl Into<String>, out: &mut Outbox) {
        self.stats.invalid += 1;
        out.events.push(ReplicaEvent::InvalidMessage {
            kind: kind.into(),
            reason: reason.into(),
        });
    }

    fn arm(&mut self, kind: TimerKind, out: &mut Outbox) {
        self.timer_gen += 1;
        self.timer = Some((kind, self.timer_gen));
        out.timer = Some((self.timer_gen, kind, kind.duration(self.delta)));
    }

    fn cancel_timer(&mut self) {
        self.timer = None;
    }

    fn broadcast(&mut self, msg: Message, out: &mut Outbox) {
        out.msgs.push((Dest::All, msg));
    }

    fn sign(&self, header: Header) -> Signed {
        Signed::new(&self.kp, self.id, header)
    }

    fn steady(&self) -> bool {
        self.in_view && !self.awaiting_repropose
    }

    /// Enter `next_slot` in steady state, or go idle past the period.
    fn resume_steady(&mut self, out: &mut Outbox) {
        if !self.steady() {
            return;
        }
        if self.next_slot <= self.max_slot {
            self.slot_entered.entry(self.next_slot).or_insert(self.now);
            self.arm(TimerKind::Steady, out);
            self.maybe_propose(out);
        } else {
            self.cancel_timer();
        }
    }

    fn maybe_propose(&mut self, out: &mut Outbox) {
        let s = self.next_slot;
        let v = self.view;
        if !self.steady()
            || !self.is_leader()
            || s > self.max_slot
            || s < self.fresh_from
            || self.committed.contains_key(&s)
            || !self.proposed.insert((v, s))
        {
            return;
        }
        let batch = self.pick_batch();
        let h = batch.digest();
        let sig = self.sign(Header::vote(VoteKind::Propose, self.committee.c, v, s, h));
        self.broadcast(
            Message::Propose {
                sig,
                batch: batch.clone(),
            },
            out,
        );
        self.proposals.insert((v, s), h);
        self.pending.insert((v, s), batch);
        self.process_pending(out);
    }

    /// Valid mempool txs against the committed prefix, up to the batch size.
    fn pick_batch(&self) -> Batch {
        let mut inputs = BTreeSet::new();
        let txs = self
            .mempool
            .values()
            .filter(|tx| {
                tx.well_formed() && !self.ledger.is_spent(tx.input) && inputs.insert(tx.input)
            })
            .take(self.batch_size)
            .copied()
            .collect();
        Batch(txs)
    }

    fn on_propose(&mut self, sig: Signed, batch: Batch, cache: &mut SigCache, out: &mut Outbox) {
        let Header::Vote {
            kind: VoteKind::Propose,
            c,
            v,
            s,
            h,
        } = sig.header
        else {
            return self.invalid("propose", "wrong header", out);
        };
        if c != self.committee.c {
            return;
        }
        if sig.signer != self.committee.leader(v) || !sig.verify(&self.committee, cache) {
            return self.invalid("propose", "not signed by the view leader", out);
        }
        if batch.digest() != h {
            return self.invalid("propose", "batch does not match digest", out);
        }
        match self.proposals.get(&(v, s)) {
            Some(&prev) if prev != h => {
                self.stats.equivocations += 1;
                out.events
                    .push(ReplicaEvent::Equivocation { view: v, slot: s });
                return;
            }
            Some(_) => return,
            None => {}
        }
        self.proposals.insert((v, s), h);
        if v < self.view || self.committed.contains_key(&s) {
            return;
        }
        self.slots
            .entry(s)
            .or_default()
            .batches
            .insert(h, batch.clone());
        self.check_commit(v, s, h, out);
        if self.committed.contains_key(&s) {
            return;
        }
        self.pending.insert((v, s), batch);
        self.process_pending(out);
    }

    /// Prepares the buffered proposal for the current slot once the committed
    /// prefix is complete and the view is in steady state.
    fn process_pending(&mut self, out: &mut Outbox) {
        let view = self.view;
        self.pending.retain(|&(v, _), _| v >= view);
        if !self.steady() {
            return;
        }
        let key = (view, self.next_slot);
        let s = self.next_slot;
        if s < self.fresh_from || self.prepared.contains(&key) {
            return;
        }
        let Some(batch) = self.pending.remove(&key) else {
            return;
        };
        if !batch.is_valid_against(self.ledger.spent()) {
            return self.invalid("propose", "batch not valid against committed prefix", out);
        }
        let h = batch.digest();
        self.prepare(view, s, h, batch, out);
    }

    fn prepare(&mut self, v: ViewNum, s: Slot, h: Digest, batch: Batch, out: &mut Outbox) {
        if !self.prepared.insert((v, s)) {
            return;
        }
        self.slots.entry(s).or_default().batches.insert(h, batch);
        let sig = self.sign(Header::vote(VoteKind::Prepare, self.committee.c, v, s, h));
        self.broadcast(Message::Prepare(sig.clone()), out);
        self.slots
            .entry(s)
            .or_default()
            .prepares
            .entry((v, h))
            .or_default()
            .insert(self.id, sig);
        self.check_accept(v, s, h, out);
        self.check_commit(v, s, h, out);
    }

    fn on_vote(&mut self, kind: VoteKind, sig: Signed, cache: &mut SigCache, out: &mut Outbox) {
        let Header::Vote {
            kind: k,
            c,
            v,
            s,
            h,
        } = sig.header
        else {
            return self.invalid("vote", "wrong header", out);
        };
        if k != kind {
            return self.invalid("vote", "kind mismatch", out);
        }
        if c != self.committee.c || self.committed.contains_key(&s) {
            return;
        }
        if !sig.verify(&self.committee, cache) {
            return self.invalid("vote", "bad signature", out);
        }
        let st = self.slots.entry(s).or_default();
        let book = match kind {
            VoteKind::Prepare => &mut st.prepares,
            _ => &mut st.commits,
        };
        book.entry((v, h))
            .or_default()
            .entry(sig.signer)
            .or_insert(sig);
        match kind {
            VoteKind::Prepare => self.check_accept(v, s, h, out),
            _ => self.check_commit(v, s, h, out),
        }
    }

    fn check_accept(&mut self, v: ViewNum, s: Slot, h: Digest, out: &mut Outbox) {
        if v != self.view || !self.steady() || self.committed.contains_key(&s) {
            return;
        }
        let quorum = self.committee.quorum();
        let me = self.id;
        let Some(st) = self.slots.get_mut(&s) else {
            return;
        };
        if st.commit_sent.contains(&v) {
            return;
        }
        let Some(votes) = st.prepares.get(&(v, h)) else {
            return;
        };
        if !votes.contains_key(&me) || votes.len() < quorum {
            return;
        }
        let a = Certificate(votes.values().take(quorum).cloned().collect());
        st.accepted = Some((h, v, a));
        st.commit_sent.insert(v);
        let sig = self.sign(Header::vote(VoteKind::Commit, self.committee.c, v, s, h));
        self.broadcast(Message::Commit(sig.clone()), out);
        self.slots
            .get_mut(&s)
            .unwrap()
            .commits
            .entry((v, h))
            .or_default()
            .insert(me, sig);
        self.check_commit(v, s, h, out);
    }

    fn check_commit(&mut self, v: ViewNum, s: Slot, h: Digest, out: &mut Outbox) {
        if self.committed.contains_key(&s) {
            return;
        }
        let quorum = self.committee.quorum();
        let Some(st) = self.slots.get(&s) else {
            return;
        };
        let Some(votes) = st.commits.get(&(v, h)) else {
            return;
        };
        if votes.len() < quorum {
            return;
        }
        // without the batch, wait for a notify that carries it
        let Some(batch) = st.batches.get(&h).cloned() else {
            return;
        };
        let q = Certificate(votes.values().take(quorum).cloned().collect());
        self.commit(s, v, h, q, batch, out);
    }

    fn on_notify(
        &mut self,
        sig: Signed,
        q: Certificate,
        batch: Batch,
        cache: &mut SigCache,
        out: &mut Outbox,
    ) {
        let Header::Vote {
            kind: VoteKind::Notify,
            c,
            v,
            s,
            h,
        } = sig.header
        else {
            return self.invalid("notify", "wrong header", out);
        };
        if c != self.committee.c || self.committed.contains_key(&s) {
            return;
        }
        if !sig.verify(&self.committee, cache) {
            return self.invalid("notify", "bad signature", out);
        }
        if batch.digest() != h {
            return self.invalid("notify", "batch does not match digest", out);
        }
        match q.check_votes(VoteKind::Commit, c, s, h, &self.committee, cache) {
            Ok(qv) if qv == v => self.commit(s, v, h, q, batch, out),
            Ok(_) => self.invalid("notify", "certificate view mismatch", out),
            Err(e) => self.invalid("notify", e.to_string(), out),
        }
    }

    fn commit(
        &mut self,
        s: Slot,
        v: ViewNum,
        h: Digest,
        q: Certificate,
        batch: Batch,
        out: &mut Outbox,
    ) {
        if self.committed.contains_key(&s) {
            return;
        }
        out.events.push(ReplicaEvent::Committed {
            slot: s,
            view: v,
            digest: h,
            txs: batch.0.iter().map(|t| t.id).collect(),
        });
        if self.notified.insert(s) {
            let sig = self.sign(Header::vote(VoteKind::Notify, self.committee.c, v, s, h));
            self.broadcast(
                Message::Notify {
                    sig,
                    q: q.clone(),
                    batch: batch.clone(),
                },
                out,
            );
        }
        self.committed.insert(
            s,
            CommitRecord {
                view: v,
                digest: h,
                batch,
                q,
            },
        );
        self.advance(out);
    }

    fn advance(&mut self, out: &mut Outbox) {
        let start = self.next_slot;
        while let Some(rec) = self.committed.get(&self.next_slot) {
            let batch = rec.batch.clone();
            self.ledger.apply(&batch);
            for tx in &batch.0 {
                self.mempool.remove(&tx.id);
            }
            if let Some(t0) = self.slot_entered.remove(&self.next_slot) {
                out.events.push(ReplicaEvent::SlotLatency {
                    slot: self.next_slot,
                    secs: (self.now - t0).as_secs_f64(),
                });
            }
            self.next_slot += 1;
        }
        if self.next_slot == start {
            return;
        }
        let ns = self.next_slot;
        self.slots = self.slots.split_off(&ns);
        self.mempool
            .retain(|_, tx| !self.ledger.spent().contains(&tx.input));
        // a commit ends the post-new-view wait
        if self.steady() {
            self.resume_steady(out);
            self.process_pending(out);
        }
    }

    fn send_view_change(&mut self, w: ViewNum, out: &mut Outbox) {
        if w < self.view || !self.vc_sent.insert(w) {
            return;
        }
        if w == self.view {
            self.in_view = false;
            if matches!(
                self.timer,
                Some((TimerKind::Steady | TimerKind::PostNewView, _))
            ) {
                self.cancel_timer();
            }
        }
        self.stats.view_changes_sent += 1;
        out.events.push(ReplicaEvent::SentViewChange { view: w });
        let sig = self.sign(Header::ViewChange {
            c: self.committee.c,
            v: w,
        });
        self.broadcast(Message::ViewChange(sig.clone()), out);
        self.vcs.entry(w).or_default().insert(self.id, sig);
        // own vote may complete a quorum
        let mut scratch = SigCache::new();
        self.check_view_changes(w, &mut scratch, out);
    }

    fn store_view_change(
        &mut self,
        sig: Signed,
        cache: &mut SigCache,
        out: &mut Outbox,
    ) -> Option<ViewNum> {
        let Header::ViewChange { c, v } = sig.header else {
            self.invalid("view_change", "wrong header", out);
            return None;
        };
        if c != self.committee.c || v < self.view {
            return None;
        }
        if !sig.verify(&self.committee, cache) {
            self.invalid("view_change", "bad signature", out);
            return None;
        }
        self.vcs
            .entry(v)
            .or_default()
            .entry(sig.signer)
            .or_insert(sig);
        Some(v)
    }

    fn check_view_changes(&mut self, w: ViewNum, _cache: &mut SigCache, out: &mut Outbox) {
        let quorum = self.committee.quorum();
        let Some(votes) = self.vcs.get(&w) else {
            return;
        };
        if votes.len() < quorum || self.view > w {
            return;
        }
        let cert = Certificate(votes.values().take(quorum).cloned().collect());
        let next = w + 1;
        if self.committee.leader(next) == self.id {
            if self.entered.is_none_or(|e| next > e) {
                let sig = self.sign(Header::NewView {
                    c: self.committee.c,
                    v: next,
                    cert: cert.digest(),
                });
                self.broadcast(Message::NewView { sig, v_cert: cert }, out);
                self.enter_view(next, out);
            }
        } else if self.vc_forwarded.insert(w) {
            if self.view == w {
                self.in_view = false;
            }
            out.msgs.push((
                Dest::To(self.committee.leader(next)),
                Message::ViewChangeBundle(cert),
            ));
            self.await_target = Some(next);
            self.arm(TimerKind::AwaitNewView, out);
        }
    }

    fn on_new_view(
        &mut self,
        sig: Signed,
        v_cert: Certificate,
        cache: &mut SigCache,
        out: &mut Outbox,
    ) {
        let Header::NewView { c, v, cert } = sig.header else {
            return self.invalid("new_view", "wrong header", out);
        };
        if c != self.committee.c || v == 0 || self.entered.is_some_and(|e| v <= e) {
            return;
        }
        if sig.signer != self.committee.leader(v) || !sig.verify(&self.committee, cache) {
            return self.invalid("new_view", "not signed by the view leader", out);
        }
        if cert != v_cert.digest() {
            return self.invalid("new_view", "certificate digest mismatch", out);
        }
        let want = Header::ViewChange { c, v: v - 1 };
        if let Err(e) = v_cert.check(&self.committee, cache, |h| *h == want) {
            return self.invalid("new_view", e.to_string(), out);
        }
        self.enter_view(v, out);
        // a re-propose may have overtaken the new-view
        if let Some(rp) = self.future_reproposes.remove(&v) {
            self.on_repropose(rp, cache, out);
        }
    }

    fn enter_view(&mut self, v: ViewNum, out: &mut Outbox) {
        self.view = v;
        self.entered = Some(v);
        self.in_view = true;
        self.awaiting_repropose = true;
        self.await_target = None;
        self.statuses.clear();
        self.reproposed = false;
        self.slot_entered.clear();
        self.future_reproposes = self.future_reproposes.split_off(&v);
        self.stats.views_entered += 1;
        out.events.push(ReplicaEvent::EnteredView { view: v });
        self.arm(TimerKind::PostNewView, out);

        let status = self.status_message(v);
        let leader = self.committee.leader(v);
        if leader == self.id {
            let mut scratch = SigCache::new();
            self.on_status(status, &mut scratch, out);
        } else {
            out.msgs
                .push((Dest::To(leader), Message::Status(Box::new(status))));
        }
    }

    fn status_message(&self, v: ViewNum) -> StatusMsg {
        let last = self.next_slot - 1;
        let (last_h, q, last_batch) = match self.committed.get(&last) {
            Some(r) => (r.digest, Some(r.q.clone()), Some(r.batch.clone())),
            None => (Digest::ZERO, None, None),
        };
        let acc = self
            .slots
            .get(&self.next_slot)
            .and_then(|st| st.accepted.as_ref().map(|a| (a, st)));
        let (accepted, a, accepted_batch) = match acc {
            Some(((h, rank, cert), st)) if *rank < v => (
                Some((*h, *rank)),
                Some(cert.clone()),
                st.batches.get(h).cloned(),
            ),
            _ => (None, None, None),
        };
        let header = Header::Status {
            c: self.committee.c,
            v,
            last,
            last_h,
            accepted,
        };
        StatusMsg {
            sig: self.sign(header),
            q,
            last_batch,
            a,
            accepted_batch,
        }
    }

    fn on_status(&mut self, msg: StatusMsg, cache: &mut SigCache, out: &mut Outbox) {
        let v = self.view;
        if self.committee.leader(v) != self.id
            || !self.in_view
            || self.reproposed
            || msg.sig.header.view() != v
        {
            return;
        }
        if self.statuses.iter().any(|m| m.sig.signer == msg.sig.signer) {
            return;
        }
        if let Err(e) = validate_status(&msg, self.committee.c, v, &self.committee, cache) {
            return self.invalid("status", e, out);
        }
        self.statuses.push(msg);
        if self.statuses.len() < self.committee.quorum() {
            return;
        }
        self.reproposed = true;
        let reports: Vec<_> = self
            .statuses
            .iter()
            .map(|m| {
                let (last, _, acc) = status_fields(&m.sig.header).expect("validated");
                (last, acc)
            })
            .collect();
        let best = self.statuses[select_status(&reports).expect("non-empty")].clone();
        let (s_star, h_star, _) = status_fields(&best.sig.header).expect("validated");
        if s_star > 0 && !self.committed.contains_key(&s_star) {
            let q = best.q.clone().expect("validated");
            let (qv, _, _) = q.vote_context(VoteKind::Commit).expect("validated");
            let lb = best.last_batch.clone().expect("validated");
            self.commit(s_star, qv, h_star, q, lb, out);
        }
        // fresh transactions only when our prefix reaches s*
        let fresh = if self.next_slot == s_star + 1 {
            self.pick_batch()
        } else {
            Batch::empty()
        };
        let rp = build_repropose(
            &self.kp,
            self.id,
            self.committee.c,
            v,
            &self.statuses,
            fresh,
        );
        self.broadcast(Message::Repropose(Box::new(rp.clone())), out);
        self.on_repropose(rp, cache, out);
    }

    fn on_repropose(&mut self, msg: ReproposeMsg, cache: &mut SigCache, out: &mut Outbox) {
        let Header::Repropose { c, v, s, h, .. } = msg.sig.header else {
            return self.invalid("repropose", "wrong header", out);
        };
        if c != self.committee.c {
            return;
        }
        if self.entered.is_none_or(|e| v > e) {
            self.future_reproposes.entry(v).or_insert(msg);
            return;
        }
        if v != self.view || !self.in_view || !self.awaiting_repropose {
            return;
        }
        if let Err(reason) = validate_repropose(&msg, &self.committee, cache) {
            self.stats.invalid += 1;
            out.events
                .push(ReplicaEvent::InvalidRepropose { view: v, reason });
            return;
        }
        let s_star = s - 1;
        if s_star > 0 && !self.committed.contains_key(&s_star) {
            let q = msg.q.clone().expect("validated");
            let (qv, _, qh) = q.vote_context(VoteKind::Commit).expect("validated");
            let lb = msg.last_batch.clone().expect("validated");
            self.commit(s_star, qv, qh, q, lb, out);
        }
        self.awaiting_repropose = false;
        self.fresh_from = s + 1;
        self.proposals.insert((v, s), h);
        if !self.committed.contains_key(&s) {
            self.prepare(v, s, h, msg.batch, out);
        } else if self.next_slot <= self.max_slot {
            // s already settled: carry on in steady state
            self.resume_steady(out);
        }
        self.process_pending(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Net {
        reps: Vec<Replica>,
        cache: SigCache,
        now: SimTime,
    }

    fn delta() -> SimTime {
        SimTime::from_secs(1)
    }

    impl Net {
        fn new(n: usize) -> Self {
            let keys: Vec<KeyPair> = (0..n as u64).map(|i| KeyPair::derive(7, "r", i)).collect();
            let info = Arc::new(CommitteeInfo::new(
                0,
                keys.iter().map(|k| k.public()).collect(),
            ));
            let reps = keys
                .into_iter()
                .enumerate()
                .map(|(i, kp)| {
                    Replica::new(i as NodeId, kp, info.clone(), delta(), 8, Ledger::new())
                })
                .collect();
            Self {
                reps,
                cache: SigCache::new(),
                now: SimTime::ZERO,
            }
        }

        /// Delivers everything instantly in FIFO order; returns all events.
        fn run(
            &mut self,
            seed: Vec<(NodeId, Outbox)>,
            drop: impl Fn(NodeId, NodeId, &Message) -> bool,
        ) -> Vec<(NodeId, ReplicaEvent)> {
            let mut queue: std::collections::VecDeque<(NodeId, NodeId, Message)> =
                Default::default();
            let mut events = vec![];
            let n = self.reps.len() as NodeId;
            let push = |from: NodeId,
                        out: Outbox,
                        q: &mut std::collections::VecDeque<_>,
                        ev: &mut Vec<_>| {
                for e in out.events {
                    ev.push((from, e));
                }
                for (d, m) in out.msgs {
                    match d {
                        Dest::All => (0..n)
                            .filter(|&t| t != from)
                            .for_each(|t| q.push_back((from, t, m.clone()))),
                        Dest::To(t) => q.push_back((from, t, m)),
                    }
                }
            };
            for (from, out) in seed {
                push(from, out, &mut queue, &mut events);
            }
            while let Some((from, to, m)) = queue.pop_front() {
                if drop(from, to, &m) {
                    continue;
                }
                let out = self.reps[to as usize].on_message(from, m, self.now, &mut self.cache);
                push(to, out, &mut queue, &mut events);
            }
            events
        }

        fn start(&mut self, max_slot: Slot) -> Vec<(NodeId, Outbox)> {
            let now = self.now;
            let mut outs = vec![];
            for r in &mut self.reps {
                r.start(now);
                outs.push((r.id(), r.extend(max_slot, now)));
            }
            outs
        }

        fn fire(&mut self, id: NodeId) -> Outbox {
            let (_, g) = self.reps[id as usize].armed_timer().expect("armed");
            self.reps[id as usize].on_timer(g, self.now)
        }
    }

    fn commits(ev: &[(NodeId, ReplicaEvent)]) -> Vec<(NodeId, Slot, Digest)> {
        ev.iter()
            .filter_map(|(n, e)| match e {
                ReplicaEvent::Committed { slot, digest, .. } => Some((*n, *slot, *digest)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn steady_state_commits_every_slot() {
        let mut net = Net::new(4);
        let tx = Tx {
            id: 1,
            input: 1,
            amount: 5,
        };
        for r in &mut net.reps {
            r.submit_tx(tx);
        }
        let seed = net.start(3);
        let ev = net.run(seed, |_, _, _| false);
        let c = commits(&ev);
        assert_eq!(c.len(), 12);
        for r in &net.reps {
            assert_eq!(r.next_slot(), 4);
            assert!(r.ledger().is_spent(1));
            assert_eq!(r.armed_timer(), None, "idle after the period");
        }
    }

    #[test]
    fn accept_needs_quorum_of_matching_prepares() {
        let mut net = Net::new(4);
        // leader's proposal reaches only node 1; node 2 and 3 never prepare
        let seed = net.start(1);
        let ev = net.run(seed, |from, to, m| {
            matches!(m, Message::Propose { .. }) && to != 1 && from == 0
                || matches!(m, Message::Prepare(_)) && from != 0 && from != 1
        });
        assert!(commits(&ev).is_empty());
        assert!(net.reps.iter().all(|r| r.next_slot() == 1));
    }

    #[test]
    fn notify_alone_commits() {
        let mut net = Net::new(4);
        let seed = net.start(1);
        // node 3 hears nothing but notifies
        let ev = net.run(seed, |_, to, m| {
            to == 3 && !matches!(m, Message::Notify { .. })
        });
        let c = commits(&ev);
        assert!(c.iter().any(|&(n, s, _)| n == 3 && s == 1));
        assert_eq!(net.reps[3].next_slot(), 2);
    }

    #[test]
    fn silent_leader_triggers_view_change() {
        let mut net = Net::new(4);
        let seed = net.start(2);
        let drop_proposals = |from: NodeId, _: NodeId, m: &Message| {
            from == 0 && matches!(m, Message::Propose { .. })
        };
        let ev = net.run(seed, drop_proposals);
        assert!(commits(&ev).is_empty());
        // steady timers expire at 4Δ on nodes 1..3
        net.now = delta() * 4;
        let outs: Vec<_> = (1..4).map(|i| (i, net.fire(i))).collect();
        let ev = net.run(outs, drop_proposals);
        assert!(ev
            .iter()
            .any(|(n, e)| *n == 1 && *e == ReplicaEvent::EnteredView { view: 1 }));
        let c = commits(&ev);
        for node in 0..4 {
            assert!(
                c.iter().any(|&(n, s, _)| n == node && s == 1),
                "node {node}"
            );
            assert!(
                c.iter().any(|&(n, s, _)| n == node && s == 2),
                "node {node}"
            );
            assert_eq!(net.reps[node as usize].view(), 1);
        }
    }

    #[test]
    fn equivocation_is_flagged_and_ignored() {
        let mut net = Net::new(4);
        let seed = net.start(1);
        let leader = net.reps[0].keypair().clone();
        let other = Batch(vec![Tx {
            id: 9,
            input: 9,
            amount: 1,
        }]);
        let sig = Signed::new(
            &leader,
            0,
            Header::vote(VoteKind::Propose, 0, 0, 1, other.digest()),
        );
        let ev = net.run(seed, |_, _, _| false);
        let before = commits(&ev);
        let out = net.reps[2].on_message(
            0,
            Message::Propose { sig, batch: other },
            net.now,
            &mut net.cache,
        );
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, ReplicaEvent::Equivocation { .. })));
        assert!(out.msgs.is_empty());
        assert_eq!(before.len(), 4);
    }

    #[test]
    fn stale_timer_generation_ignored() {
        let mut net = Net::new(4);
        let _ = net.start(1);
        let (_, g) = net.reps[1].armed_timer().unwrap();
        let out = net.reps[1].on_timer(g + 100, net.now);
        assert!(out.msgs.is_empty());
        assert!(net.reps[1].in_view());
    }

    #[test]
    fn new_view_cancels_await_timer() {
        let mut net = Net::new(4);
        let seed = net.start(1);
        let silent = |from: NodeId, _: NodeId, m: &Message| {
            from == 0 && matches!(m, Message::Propose { .. })
        };
        net.run(seed, silent);
        net.now = delta() * 4;
        // only nodes 2 and 3 time out plus node 0; leader 1 of view 1 hears them
        let outs: Vec<_> = [0, 2, 3].iter().map(|&i| (i, net.fire(i))).collect();
        let ev = net.run(outs, silent);
        assert!(ev
            .iter()
            .any(|(n, e)| *n == 2 && *e == ReplicaEvent::EnteredView { view: 1 }));
        // the 2Δ wait on node 2 was replaced by the post-new-view timer
        assert!(matches!(
            net.reps[2].armed_timer(),
            Some((TimerKind::Steady | TimerKind::PostNewView, _)) | None
        ));
    }
}
