use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, Scheduler, SimTime};
use crate::beacon::rng_stream;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Recipient {
    Node(NodeId),
    Broadcast,
    Gossip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub sender: NodeId,
    pub recipient: NodeId,
    pub payload: M,
    pub send_time: SimTime,
    pub deliver_time: SimTime,
}

/// Chooses the delay of each committee message. Under synchrony the result
/// must lie in `[0, Δ]`; the [`Network`] clamps anything larger.
pub trait DelayPolicy {
    fn delay(&mut self, from: NodeId, to: NodeId, now: SimTime, delta: SimTime) -> SimTime;
}

impl<F> DelayPolicy for F
where
    F: FnMut(NodeId, NodeId, SimTime, SimTime) -> SimTime,
{
    fn delay(&mut self, from: NodeId, to: NodeId, now: SimTime, delta: SimTime) -> SimTime {
        self(from, to, now, delta)
    }
}

/// Built-in delay policies, selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayPolicyKind {
    Zero,
    /// Every message takes exactly Δ.
    Max,
    /// Uniform on `[0, Δ]`.
    #[default]
    Uniform,
    /// Each message independently takes 0 or Δ.
    Extremes,
    Fixed {
        secs: f64,
    },
}

struct Seeded {
    kind: DelayPolicyKind,
    rng: ChaCha8Rng,
}

impl DelayPolicy for Seeded {
    fn delay(&mut self, _from: NodeId, _to: NodeId, _now: SimTime, delta: SimTime) -> SimTime {
        match self.kind {
            DelayPolicyKind::Zero => SimTime::ZERO,
            DelayPolicyKind::Max => delta,
            DelayPolicyKind::Uniform => SimTime(self.rng.gen_range(0..=delta.0)),
            DelayPolicyKind::Extremes => {
                if self.rng.gen_bool(0.5) {
                    delta
                } else {
                    SimTime::ZERO
                }
            }
            DelayPolicyKind::Fixed { secs } => SimTime::from_secs_f64(secs),
        }
    }
}

impl DelayPolicyKind {
    pub fn build(self, seed: u64) -> Box<dyn DelayPolicy> {
        Box::new(Seeded {
            kind: self,
            rng: rng_stream(seed, "delay", 0),
        })
    }
}

/// Synchronous committee network.
pub struct Network {
    cfg: NetworkConfig,
    policy: Box<dyn DelayPolicy>,
    sent: u64,
    violations: u64,
    max_observed: SimTime,
}

impl Network {
    pub fn new(cfg: NetworkConfig, policy: Box<dyn DelayPolicy>) -> Self {
        Self {
            cfg,
            policy,
            sent: 0,
            violations: 0,
            max_observed: SimTime::ZERO,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn delta(&self) -> SimTime {
        self.cfg.delta
    }

    /// Messages sent so far.
    pub fn sent(&self) -> u64 {
        self.sent
    }

    /// Number of times the policy asked for a delay above Δ.
    pub fn policy_violations(&self) -> u64 {
        self.violations
    }

    pub fn max_delay(&self) -> SimTime {
        self.max_observed
    }

    pub fn set_policy(&mut self, policy: Box<dyn DelayPolicy>) {
        self.policy = policy;
    }

    /// Delivery time for a message sent now; the delay is clamped to Δ.
    pub fn deliver_at(&mut self, from: NodeId, to: NodeId, now: SimTime) -> SimTime {
        let delta = self.cfg.delta;
        let mut d = self.policy.delay(from, to, now, delta);
        if d > delta {
            self.violations += 1;
            d = delta;
        }
        self.sent += 1;
        self.max_observed = self.max_observed.max(d);
        now + d
    }

    /// Schedules delivery of `payload` from `sender` to `recipient`.
    pub fn send<M, E>(
        &mut self,
        sched: &mut Scheduler<E>,
        sender: NodeId,
        recipient: NodeId,
        payload: M,
        wrap: impl FnOnce(Envelope<M>) -> E,
    ) -> SimTime {
        let now = sched.now();
        let deliver_time = self.deliver_at(sender, recipient, now);
        let env = Envelope {
            sender,
            recipient,
            payload,
            send_time: now,
            deliver_time,
        };
        sched.schedule(wrap(env), deliver_time);
        deliver_time
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(policy: Box<dyn DelayPolicy>) -> Network {
        let cfg = NetworkConfig::new(SimTime::from_secs(1), 1.0, 10.0).unwrap();
        Network::new(cfg, policy)
    }

    #[test]
    fn zero_and_max_policies() {
        let mut sched: Scheduler<Envelope<u8>> = Scheduler::new();
        sched.advance_to(SimTime::from_secs(5));
        let mut n = net(DelayPolicyKind::Zero.build(0));
        assert_eq!(n.send(&mut sched, 0, 1, 7u8, |e| e), SimTime::from_secs(5));
        let mut n = net(DelayPolicyKind::Max.build(0));
        assert_eq!(n.send(&mut sched, 0, 1, 7u8, |e| e), SimTime::from_secs(6));
    }

    #[test]
    fn over_delta_is_clamped_and_counted() {
        let mut n = net(Box::new(|_: NodeId, _: NodeId, _: SimTime, d: SimTime| {
            d * 3
        }));
        let t = n.deliver_at(0, 1, SimTime::ZERO);
        assert_eq!(t, SimTime::from_secs(1));
        assert_eq!(n.policy_violations(), 1);
    }

    #[test]
    fn adversarial_delays_stay_within_delta() {
        // adversary picks an arbitrary delay per message, sometimes above Δ
        let mut rng = rng_stream(5, "adv", 0);
        let policy = move |_: NodeId, _: NodeId, _: SimTime, d: SimTime| {
            SimTime(rng.gen_range(0..=d.0 + d.0 / 4))
        };
        let mut n = net(Box::new(policy));
        let mut sched: Scheduler<Envelope<u32>> = Scheduler::new();
        for i in 0..10_000u32 {
            n.send(&mut sched, i % 7, (i + 1) % 7, i, |e| e);
        }
        let mut delivered = 0;
        while let Some((t, env)) = sched.pop() {
            assert_eq!(t, env.deliver_time);
            assert!(env.deliver_time >= env.send_time);
            assert!(env.deliver_time - env.send_time <= SimTime::from_secs(1));
            delivered += 1;
        }
        assert_eq!(delivered, 10_000);
        assert!(n.policy_violations() > 0);
    }

    #[test]
    fn uniform_is_seeded() {
        let mut a = net(DelayPolicyKind::Uniform.build(11));
        let mut b = net(DelayPolicyKind::Uniform.build(11));
        for _ in 0..100 {
            assert_eq!(
                a.deliver_at(0, 1, SimTime::ZERO),
                b.deliver_at(0, 1, SimTime::ZERO)
            );
        }
    }
}
