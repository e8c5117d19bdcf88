//! Position verification model.
//!
//! Two verifier transceivers bracket the claimed cell at distance `d_v` from
//! its centre and time their challenges to meet there. A device sitting at the
//! centre answers after its proof-of-quantumness computation, signing with the
//! registered key. A party with no device in the cell can only win by breaking
//! the proof of quantumness, which is reduced to one biased coin per instance.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, KeyPair, PublicKey, Signature};
use crate::simnet::{prop_delay, NetworkConfig, SimTime};

pub type ParticipantId = u32;
pub type CellIndex = u64;
pub type DeviceId = u32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CvpvError {
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("invalid cvpv config: {0}")]
    Config(String),
    #[error("cell {cell} outside partition of {count} cells")]
    CellOutOfRange { cell: CellIndex, count: u64 },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
}

/// Fixed partition of `[0, line_length)` into cells of width `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub gamma: f64,
    pub line_length: f64,
    pub cell_count: u64,
}

impl Partition {
    pub fn new(gamma: f64, line_length: f64) -> Result<Self, CvpvError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CvpvError::Partition("gamma must be positive".into()));
        }
        if !(line_length >= gamma) || !line_length.is_finite() {
            return Err(CvpvError::Partition(
                "line_length must hold at least one cell".into(),
            ));
        }
        Ok(Self {
            gamma,
            line_length,
            cell_count: (line_length / gamma).floor() as u64,
        })
    }

    pub fn cell_of(&self, x: f64) -> Option<CellIndex> {
        if !(x >= 0.0) {
            return None;
        }
        let i = (x / self.gamma).floor() as u64;
        (i < self.cell_count).then_some(i)
    }

    pub fn center(&self, cell: CellIndex) -> f64 {
        (cell as f64 + 0.5) * self.gamma
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell < self.cell_count
    }

    pub fn check(&self, cell: CellIndex) -> Result<(), CvpvError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(CvpvError::CellOutOfRange {
                cell,
                count: self.cell_count,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumDevice {
    pub id: DeviceId,
    pub owner: ParticipantId,
    pub cell: CellIndex,
    pub online: bool,
    /// Seconds the device needs for one proof of quantumness.
    pub poq_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DeviceRegistry {
    devices: Vec<QuantumDevice>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, owner: ParticipantId, cell: CellIndex, poq_time: f64) -> DeviceId {
        let id = self.devices.len() as DeviceId;
        self.devices.push(QuantumDevice {
            id,
            owner,
            cell,
            online: true,
            poq_time,
        });
        id
    }

    pub fn get(&self, id: DeviceId) -> Option<&QuantumDevice> {
        self.devices.get(id as usize)
    }

    pub fn all(&self) -> &[QuantumDevice] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Moves a device. Callers only do this between reconfiguration epochs.
    pub fn relocate(&mut self, id: DeviceId, cell: CellIndex) -> Result<(), CvpvError> {
        let d = self
            .devices
            .get_mut(id as usize)
            .ok_or(CvpvError::UnknownDevice(id))?;
        d.cell = cell;
        Ok(())
    }

    pub fn set_online(&mut self, id: DeviceId, online: bool) -> Result<(), CvpvError> {
        let d = self
            .devices
            .get_mut(id as usize)
            .ok_or(CvpvError::UnknownDevice(id))?;
        d.online = online;
        Ok(())
    }

    pub fn in_cell(&self, cell: CellIndex) -> impl Iterator<Item = &QuantumDevice> {
        self.devices.iter().filter(move |d| d.cell == cell)
    }

    pub fn owned_by(&self, owner: ParticipantId) -> impl Iterator<Item = &QuantumDevice> {
        self.devices.iter().filter(move |d| d.owner == owner)
    }
}

/// Who holds which signing key.
#[derive(Debug, Clone, Default)]
pub struct Keyring {
    keys: BTreeMap<PublicKey, (ParticipantId, KeyPair)>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, owner: ParticipantId, kp: KeyPair) -> PublicKey {
        let pk = kp.public();
        self.keys.insert(pk, (owner, kp));
        pk
    }

    pub fn owner_of(&self, pk: &PublicKey) -> Option<ParticipantId> {
        self.keys.get(pk).map(|(o, _)| *o)
    }

    pub fn keypair(&self, pk: &PublicKey) -> Option<&KeyPair> {
        self.keys.get(pk).map(|(_, kp)| kp)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvpvConfig {
    pub lambda: u32,
    /// Per-instance attacker success probability; `2^-lambda` when absent.
    pub break_prob: Option<f64>,
    /// Timing tolerance in seconds.
    pub epsilon_slack: f64,
    /// Distance of each transceiver from the claimed cell centre.
    pub verifier_offset: f64,
    pub honest_fail_prob: f64,
    /// Proof-of-quantumness time budgeted into the deadline, in seconds.
    pub poq_time: f64,
}

impl Default for CvpvConfig {
    fn default() -> Self {
        Self {
            lambda: 20,
            break_prob: None,
            epsilon_slack: 1e-6,
            verifier_offset: 1.0,
            honest_fail_prob: 0.0,
            poq_time: 1e-3,
        }
    }
}

impl CvpvConfig {
    pub fn break_probability(&self) -> f64 {
        self.break_prob
            .unwrap_or_else(|| 2f64.powi(-(self.lambda as i32)))
    }

    pub fn validate(&self) -> Result<(), CvpvError> {
        let p = self.break_probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(CvpvError::Config("break_prob must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.honest_fail_prob) {
            return Err(CvpvError::Config(
                "honest_fail_prob must lie in [0, 1]".into(),
            ));
        }
        for (name, v) in [
            ("epsilon_slack", self.epsilon_slack),
            ("verifier_offset", self.verifier_offset),
            ("poq_time", self.poq_time),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CvpvError::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Why an instance ended the way it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvpvReason {
    Verified,
    HonestFailure,
    LateResponse,
    SignatureMismatch,
    NoDeviceInCell,
    DeviceOffline,
    /// An attacker won the soundness coin.
    SoundnessBreak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvpvTranscript {
    pub claimed_cell: CellIndex,
    pub pk: PublicKey,
    pub challenge_times: [f64; 2],
    pub t_c: f64,
    pub deadline: f64,
    pub response_times: Vec<f64>,
    pub signature_checks: Vec<bool>,
    pub responder: Option<DeviceId>,
    pub reason: CvpvReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvpvOutcome {
    pub accepted: bool,
    pub transcript: CvpvTranscript,
}

impl CvpvOutcome {
    /// True when the claim was false but still accepted.
    pub fn is_attack_accept(&self) -> bool {
        self.accepted && self.transcript.reason == CvpvReason::SoundnessBreak
    }
}

/// Everything an instance reads but does not own.
#[derive(Debug, Clone, Copy)]
pub struct CvpvContext<'a> {
    pub partition: &'a Partition,
    pub devices: &'a DeviceRegistry,
    pub keyring: &'a Keyring,
    pub net: &'a NetworkConfig,
    pub cfg: &'a CvpvConfig,
}

/// Time at which both challenges reach the cell centre, for emission at `start`.
pub fn challenge_meet_time(start: SimTime, cfg: &CvpvConfig, net: &NetworkConfig) -> SimTime {
    start + prop_delay(0.0, cfg.verifier_offset, net)
}

/// Latest acceptable response arrival at the transceivers.
pub fn response_deadline(t_c: SimTime, cfg: &CvpvConfig, net: &NetworkConfig) -> SimTime {
    t_c + SimTime::from_secs_f64(cfg.poq_time)
        + prop_delay(0.0, cfg.verifier_offset, net)
        + SimTime::from_secs_f64(cfg.epsilon_slack)
}

fn response_message(cell: CellIndex, pk: &PublicKey, t_c: SimTime, side: u8) -> Vec<u8> {
    Digest::of_fields(&[
        b"cvpv-response",
        &cell.to_be_bytes(),
        pk.as_bytes(),
        &t_c.0.to_be_bytes(),
        &[side],
    ])
    .0
    .to_vec()
}

/// Runs one verifier's instance against the claim `(claimed_cell, pk)`.
///
/// # Panics
///
/// If `claimed_cell` is outside the partition.
pub fn run_cvpv_instance<R: Rng>(
    claimed_cell: CellIndex,
    pk: &PublicKey,
    start: SimTime,
    ctx: &CvpvContext<'_>,
    rng: &mut R,
) -> CvpvOutcome {
    assert!(
        ctx.partition.contains(claimed_cell),
        "claimed cell {claimed_cell} outside partition"
    );
    let cfg = ctx.cfg;
    let t_c = challenge_meet_time(start, cfg, ctx.net);
    let deadline = response_deadline(t_c, cfg, ctx.net);
    let back = prop_delay(0.0, cfg.verifier_offset, ctx.net);
    let mut transcript = CvpvTranscript {
        claimed_cell,
        pk: *pk,
        challenge_times: [start.as_secs_f64(); 2],
        t_c: t_c.as_secs_f64(),
        deadline: deadline.as_secs_f64(),
        response_times: vec![],
        signature_checks: vec![],
        responder: None,
        reason: CvpvReason::NoDeviceInCell,
    };

    let owner = ctx.keyring.owner_of(pk);
    let mut in_cell = ctx.devices.in_cell(claimed_cell).filter(|d| d.online);
    let own = owner.and_then(|o| {
        ctx.devices
            .in_cell(claimed_cell)
            .find(|d| d.online && d.owner == o)
    });
    let responder = own.or_else(|| in_cell.next());

    let Some(device) = responder else {
        let offline = ctx.devices.in_cell(claimed_cell).next().is_some();
        let p = cfg.break_probability();
        let broke = p > 0.0 && rng.gen_bool(p);
        transcript.reason = if broke {
            CvpvReason::SoundnessBreak
        } else if offline {
            CvpvReason::DeviceOffline
        } else {
            CvpvReason::NoDeviceInCell
        };
        return CvpvOutcome {
            accepted: broke,
            transcript,
        };
    };

    transcript.responder = Some(device.id);
    let arrival = t_c + SimTime::from_secs_f64(device.poq_time) + back;
    transcript.response_times = vec![arrival.as_secs_f64(); 2];

    // A device whose owner does not hold `pk` signs with a key of its own.
    let fallback;
    let signer = match ctx.keyring.keypair(pk) {
        Some(kp) if owner == Some(device.owner) => kp,
        _ => {
            fallback = KeyPair::derive(device.owner as u64, "device", device.id as u64);
            &fallback
        }
    };
    let checks: Vec<bool> = (0u8..2)
        .map(|side| {
            let m = response_message(claimed_cell, pk, t_c, side);
            let sig: Signature = signer.sign(&m);
            crate::crypto::verify(pk, &m, &sig)
        })
        .collect();
    transcript.signature_checks = checks.clone();

    let accepted;
    if !checks.iter().all(|&c| c) {
        transcript.reason = CvpvReason::SignatureMismatch;
        accepted = false;
    } else if arrival > deadline {
        transcript.reason = CvpvReason::LateResponse;
        accepted = false;
    } else if cfg.honest_fail_prob > 0.0 && rng.gen_bool(cfg.honest_fail_prob) {
        transcript.reason = CvpvReason::HonestFailure;
        accepted = false;
    } else {
        transcript.reason = CvpvReason::Verified;
        accepted = true;
    }
    CvpvOutcome {
        accepted,
        transcript,
    }
}

/// Aggregate instance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvpvStats {
    pub instances: u64,
    pub accepts: u64,
    pub attack_instances: u64,
    pub attack_accepts: u64,
}

impl CvpvStats {
    pub fn record(&mut self, o: &CvpvOutcome) {
        self.instances += 1;
        if o.accepted {
            self.accepts += 1;
        }
        if o.transcript.responder.is_none() {
            self.attack_instances += 1;
            if o.accepted {
                self.attack_accepts += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beacon::rng_stream;
    use proptest::prelude::*;

    struct World {
        partition: Partition,
        devices: DeviceRegistry,
        keyring: Keyring,
        net: NetworkConfig,
        cfg: CvpvConfig,
    }

    impl World {
        fn new(cells: u64) -> Self {
            Self {
                partition: Partition::new(10.0, 10.0 * cells as f64).unwrap(),
                devices: DeviceRegistry::new(),
                keyring: Keyring::new(),
                net: NetworkConfig::new(SimTime::from_secs(1), 1000.0, 10.0 * cells as f64)
                    .unwrap(),
                cfg: CvpvConfig::default(),
            }
        }

        fn ctx(&self) -> CvpvContext<'_> {
            CvpvContext {
                partition: &self.partition,
                devices: &self.devices,
                keyring: &self.keyring,
                net: &self.net,
                cfg: &self.cfg,
            }
        }

        fn run(&self, cell: CellIndex, pk: &PublicKey, seed: u64) -> CvpvOutcome {
            let mut rng = rng_stream(seed, "cvpv-test", 0);
            run_cvpv_instance(cell, pk, SimTime::from_secs(3), &self.ctx(), &mut rng)
        }
    }

    #[test]
    fn partition_geometry() {
        let p = Partition::new(2.0, 9.0).unwrap();
        assert_eq!(p.cell_count, 4);
        assert_eq!(p.cell_of(3.9), Some(1));
        assert_eq!(p.cell_of(8.5), None);
        assert_eq!(p.center(1), 3.0);
        assert!(Partition::new(0.0, 1.0).is_err());
    }

    #[test]
    fn complete_on_every_cell() {
        let mut w = World::new(16);
        for cell in 0..16 {
            let pk = w.keyring.insert(cell as u32, KeyPair::derive(1, "p", cell));
            w.devices.add(cell as u32, cell, 1e-4);
            let o = w.run(cell, &pk, cell);
            assert!(o.accepted, "cell {cell}: {:?}", o.transcript.reason);
            assert!(o
                .transcript
                .response_times
                .iter()
                .all(|&t| t <= o.transcript.deadline));
            assert!(o.transcript.signature_checks.iter().all(|&c| c));
        }
    }

    #[test]
    fn sound_without_break_probability() {
        let mut w = World::new(8);
        w.cfg.break_prob = Some(0.0);
        let pk = w.keyring.insert(0, KeyPair::derive(1, "p", 0));
        w.devices.add(0, 2, 1e-4);
        for seed in 0..2000 {
            let cell = 3 + seed % 5;
            let o = w.run(cell, &pk, seed);
            assert!(!o.accepted);
            assert_eq!(o.transcript.reason, CvpvReason::NoDeviceInCell);
        }
    }

    #[test]
    fn offline_device_is_an_attack() {
        let mut w = World::new(4);
        w.cfg.break_prob = Some(0.0);
        let pk = w.keyring.insert(0, KeyPair::derive(1, "p", 0));
        let id = w.devices.add(0, 1, 1e-4);
        w.devices.set_online(id, false).unwrap();
        let o = w.run(1, &pk, 0);
        assert!(!o.accepted);
        assert_eq!(o.transcript.reason, CvpvReason::DeviceOffline);
    }

    #[test]
    fn swapped_keys_never_pass() {
        // every (device owner, claimed key owner) mismatch in a 3-party world
        let mut w = World::new(3);
        w.cfg.break_prob = Some(1.0);
        let pks: Vec<_> = (0..3)
            .map(|i| w.keyring.insert(i, KeyPair::derive(2, "p", i as u64)))
            .collect();
        for i in 0..3u32 {
            w.devices.add(i, i as u64, 1e-4);
        }
        let stranger = KeyPair::derive(9, "unregistered", 0).public();
        for cell in 0..3u64 {
            for (j, pk) in pks.iter().enumerate() {
                let o = w.run(cell, pk, j as u64);
                assert_eq!(o.accepted, j as u64 == cell, "cell {cell} key {j}");
                if j as u64 != cell {
                    assert_eq!(o.transcript.reason, CvpvReason::SignatureMismatch);
                }
            }
            assert!(!w.run(cell, &stranger, 0).accepted);
        }
    }

    #[test]
    fn slow_device_misses_deadline() {
        let mut w = World::new(2);
        let pk = w.keyring.insert(0, KeyPair::derive(1, "p", 0));
        w.devices.add(0, 0, w.cfg.poq_time + 1.0);
        let o = w.run(0, &pk, 0);
        assert_eq!(o.transcript.reason, CvpvReason::LateResponse);
    }

    #[test]
    fn degenerate_deadline_is_meet_time() {
        let net = NetworkConfig::new(SimTime::from_secs(1), 5.0, 100.0).unwrap();
        let mut cfg = CvpvConfig {
            verifier_offset: 0.0,
            epsilon_slack: 0.0,
            poq_time: 0.0,
            ..CvpvConfig::default()
        };
        let t_c = challenge_meet_time(SimTime::from_secs(2), &cfg, &net);
        assert_eq!(t_c, SimTime::from_secs(2));
        assert_eq!(response_deadline(t_c, &cfg, &net), t_c);
        cfg.verifier_offset = 5.0;
        assert_eq!(
            response_deadline(t_c, &cfg, &net),
            t_c + SimTime::from_secs(1)
        );
    }

    #[test]
    fn default_break_probability() {
        let cfg = CvpvConfig {
            lambda: 10,
            ..CvpvConfig::default()
        };
        assert_eq!(cfg.break_probability(), 1.0 / 1024.0);
        assert!(CvpvConfig {
            break_prob: Some(1.5),
            ..cfg
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn deadline_monotone(
            poq in 0.0f64..10.0, dv in 0.0f64..1e4, eps in 0.0f64..1.0,
            bump in 1e-3f64..5.0, which in 0usize..3,
        ) {
            let net = NetworkConfig::new(SimTime::from_secs(1), 300.0, 1e5).unwrap();
            let base = CvpvConfig { poq_time: poq, verifier_offset: dv, epsilon_slack: eps, ..CvpvConfig::default() };
            let mut more = base;
            match which {
                0 => more.poq_time += bump,
                1 => more.verifier_offset += bump * 300.0,
                _ => more.epsilon_slack += bump,
            }
            let start = SimTime::from_secs(1);
            let d0 = response_deadline(challenge_meet_time(start, &base, &net), &base, &net);
            let d1 = response_deadline(challenge_meet_time(start, &more, &net), &more, &net);
            prop_assert!(d1 > d0);
        }
    }
}
