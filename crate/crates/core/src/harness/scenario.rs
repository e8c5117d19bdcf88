//! Scenario configuration and end-to-end runs.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mc::{genesis_cap, genesis_seats, trial_stream, CommitteeChain, GenesisMode};
use crate::adversary::{AdversaryConfig, ViolationRecord, ADVERSARY};
use crate::crypto::{derive_group, GroupPreset};
use crate::cvpv::{CvpvConfig, CvpvStats, Partition};
use crate::error::{Error, Result};
use crate::pbft::PbftConfig;
use crate::reconfig::{
    main_loop, CommitteeRow, ParticipantSpec, ReconfigClock, RegistrationMode, SpamStats, World,
    WorldConfig,
};
use crate::simnet::{EventLog, NetworkConfig, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Every protocol layer, message by message.
    #[default]
    Full,
    /// Only the committee composition, one Bernoulli draw per epoch.
    CommitteeMc,
}

fn d_lambda() -> u32 {
    20
}
fn d_gamma() -> f64 {
    1.0
}
fn d_delta() -> f64 {
    0.05
}
fn d_tau_reconfig() -> u64 {
    10
}
fn d_tau_v() -> f64 {
    0.01
}
fn d_t_prime() -> u64 {
    10
}
fn d_bits() -> u32 {
    24
}
fn d_one() -> f64 {
    1.0
}
fn d_line() -> f64 {
    1024.0
}
fn d_c_signal() -> f64 {
    1000.0
}
fn d_batch() -> usize {
    64
}
fn d_txs() -> usize {
    4
}
fn d_poq() -> f64 {
    1e-4
}
fn d_true() -> bool {
    true
}

/// One simulation run, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Committee size.
    pub n: usize,
    #[serde(default)]
    pub epsilon: f64,
    /// Adversarial share of quantum devices; also the genesis Byzantine rate.
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "d_lambda")]
    pub lambda: u32,
    /// Cell width.
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Maximum message delay, seconds.
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Every `tau_reconfig`-th tick is a reconfiguration.
    #[serde(default = "d_tau_reconfig")]
    pub tau_reconfig: u64,
    /// Registration window, seconds; `1 / R_H` when absent.
    #[serde(default)]
    pub tau_register: Option<f64>,
    /// Verification time per candidate, seconds.
    #[serde(default = "d_tau_v")]
    pub tau_v: f64,
    /// Ticks to run.
    #[serde(rename = "T")]
    pub horizon: u64,
    /// Slots per steady-state period.
    #[serde(rename = "T_prime", default = "d_t_prime")]
    pub t_prime: u64,
    #[serde(default = "d_bits")]
    pub dlog_bits: u32,
    #[serde(rename = "R_H", default = "d_one")]
    pub r_h: f64,
    #[serde(rename = "R_A", default)]
    pub r_a: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub participants: Vec<ParticipantSpec>,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub mode: ScenarioMode,
    #[serde(default)]
    pub registration: RegistrationMode,
    #[serde(default)]
    pub genesis: GenesisMode,
    #[serde(default = "d_line")]
    pub line_length: f64,
    /// Signal speed, distance units per second.
    #[serde(default = "d_c_signal")]
    pub c_signal: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_txs")]
    pub txs_per_period: usize,
    /// Timing knobs of position verification; `lambda` above takes precedence.
    #[serde(default)]
    pub cvpv: CvpvConfig,
    /// Proof-of-quantumness time of every device, seconds.
    #[serde(default = "d_poq")]
    pub device_poq_time: f64,
    #[serde(default)]
    pub relocation_speed: Option<f64>,
    /// Record the event log.
    #[serde(default = "d_true")]
    pub log: bool,
}

impl ScenarioConfig {
    /// A config with every optional field at its default.
    pub fn new(n: usize, horizon: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "n": n, "T": horizon }))
            .expect("defaults deserialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tau_register(&self) -> f64 {
        self.tau_register.unwrap_or(1.0 / self.r_h)
    }

    /// Device share, reconciling the top-level and adversary fields.
    pub fn effective_rho(&self) -> Result<f64> {
        merge_knob("rho", self.rho, self.adversary.rho)
    }

    pub fn effective_r_a(&self) -> Result<f64> {
        merge_knob("R_A", self.r_a, self.adversary.r_a_rate)
    }

    /// Checks every field; returns warnings for allowed but unsafe choices.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::Config(m));
        let mut warnings = Vec::new();
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(0.0..1.0 / 3.0).contains(&self.epsilon) {
            return bad(format!("epsilon = {} is outside [0, 1/3)", self.epsilon));
        }
        let rho = self.effective_rho()?;
        if !(0.0..=1.0).contains(&rho) {
            return bad(format!("rho = {rho} is outside [0, 1]"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad("delta must be positive".into());
        }
        if self.tau_reconfig == 0 {
            return bad("tau_reconfig must be at least 1".into());
        }
        if self.t_prime == 0 {
            return bad("T_prime must be at least 1".into());
        }
        if !(self.r_h > 0.0) || !self.r_h.is_finite() {
            return bad("R_H must be positive".into());
        }
        let r_a = self.effective_r_a()?;
        if !(r_a >= 0.0) || !r_a.is_finite() {
            return bad("R_A must be finite and non-negative".into());
        }
        let tau_register = self.tau_register();
        if !(tau_register * self.r_h >= 1.0 - 1e-12) {
            return bad(format!(
                "tau_register = {tau_register} is shorter than one honest solve (1/R_H = {})",
                1.0 / self.r_h
            ));
        }
        if !(self.tau_v >= 0.0) {
            return bad("tau_v must be non-negative".into());
        }
        if !(3..=48).contains(&self.dlog_bits) {
            return bad(format!("dlog_bits = {} is outside 3..=48", self.dlog_bits));
        }
        if self.lambda == 0 {
            return bad("lambda must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(v) = self.relocation_speed {
            if !(v > 0.0) {
                return bad("relocation_speed must be positive".into());
            }
        }
        let partition = Partition::new(self.gamma, self.line_length)?;
        NetworkConfig::new(
            SimTime::from_secs_f64(self.delta),
            self.c_signal,
            self.line_length,
        )?;
        self.cvpv_config().validate()?;
        self.adversary.validate().map_err(Error::Config)?;
        let mut ids = BTreeSet::new();
        for p in &self.participants {
            if p.id == ADVERSARY {
                return bad(format!("participant id {ADVERSARY} is reserved"));
            }
            if !ids.insert(p.id) {
                return bad(format!("participant id {} appears twice", p.id));
            }
            for &c in &p.devices {
                partition.check(c)?;
            }
        }
        for &c in &self.adversary.devices {
            partition.check(c)?;
        }
        let cap = genesis_cap(self.n, self.epsilon);
        if let GenesisMode::Fixed(f) = self.genesis {
            if f > cap {
                return bad(format!(
                    "genesis f_1 = {f} is not below (1/3 - epsilon) n = {:.3}",
                    (1.0 / 3.0 - self.epsilon) * self.n as f64
                ));
            }
        }

        if rho >= 1.0 / 3.0 - self.epsilon {
            warnings.push(format!(
                "rho = {rho} is not below 1/3 - epsilon; committee safety is not guaranteed"
            ));
        }
        let k = (r_a / self.r_h).max(1.0);
        if self.lambda as f64 <= k.log2() {
            warnings.push(format!(
                "lambda = {} is not above log2(R_A / R_H) = {:.3}",
                self.lambda,
                k.log2()
            ));
        }
        Ok(warnings)
    }

    fn cvpv_config(&self) -> CvpvConfig {
        CvpvConfig {
            lambda: self.lambda,
            ..self.cvpv
        }
    }

    /// Byzantine flags of the genesis committee.
    pub fn genesis_flags(&self) -> Result<Vec<bool>> {
        let rho = self.effective_rho()?;
        let mut rng = trial_stream(self.seed, 0);
        Ok(genesis_seats(
            self.n,
            rho,
            self.genesis,
            Some(genesis_cap(self.n, self.epsilon)),
            &mut rng,
        ))
    }

    pub fn world_config(&self) -> Result<WorldConfig> {
        let mut adversary = self.adversary.clone();
        adversary.rho = self.effective_rho()?;
        adversary.r_a_rate = self.effective_r_a()?;
        let delta = SimTime::from_secs_f64(self.delta);
        Ok(WorldConfig {
            seed: self.seed,
            horizon: self.horizon,
            clock: ReconfigClock {
                tau_reconfig: self.tau_reconfig,
                tau_register: self.tau_register(),
                tau_v: self.tau_v,
                delta,
            },
            gamma: self.gamma,
            line_length: self.line_length,
            net: NetworkConfig::new(delta, self.c_signal, self.line_length)?,
            cvpv: self.cvpv_config(),
            pbft: PbftConfig {
                t_prime: self.t_prime,
                batch_size: self.batch_size,
                txs_per_period: self.txs_per_period,
                delay_policy: adversary.delay_policy,
            },
            group: derive_group(GroupPreset::Bits(self.dlog_bits))?,
            r_h: self.r_h,
            mode: self.registration,
            participants: self.participants.clone(),
            adversary,
            genesis_byzantine: self.genesis_flags()?,
            device_poq_time: self.device_poq_time,
            relocation_speed: self.relocation_speed,
            log_enabled: self.log,
        })
    }
}

fn merge_knob(name: &str, top: f64, adv: f64) -> Result<f64> {
    match (top, adv) {
        (t, a) if a == 0.0 || t == a => Ok(t),
        (0.0, a) => Ok(a),
        (t, a) => Err(Error::Config(format!(
            "{name} = {t} conflicts with adversary setting {a}"
        ))),
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ScenarioMode,
    pub seed: u64,
    pub n: usize,
    pub ticks: u64,
    pub epochs: u64,
    /// Byzantine seats, genesis first.
    pub f_t: Vec<usize>,
    pub max_f_t: usize,
    /// Some committee reached `f_t >= n/3`.
    pub committee_unsafe: bool,
    /// Conflicting commits or an unsafe committee.
    pub safety_violation: bool,
    pub first_violation_time: Option<f64>,
    pub conflicting_commits: u64,
    pub commits: u64,
    pub mean_commit_latency: Option<f64>,
    pub max_slot_latency: f64,
    pub max_tx_latency: f64,
    pub view_changes: u64,
    pub liveness_failures: u64,
    pub txs_submitted: u64,
    pub txs_committed: u64,
    pub messages: u64,
    pub invalid_messages: u64,
    pub equivocations_detected: u64,
    pub spam: SpamStats,
    pub honest_registration_misses: u64,
    pub cvpv: CvpvStats,
    /// Admissions per participant id, plus `adversary`.
    pub elections: BTreeMap<String, u64>,
    pub election_frequency: BTreeMap<String, f64>,
    pub epochs_without_admission: u64,
    pub model_violations: Vec<ViolationRecord>,
    pub warnings: Vec<String>,
    pub end_time: f64,
}

impl MetricsReport {
    fn empty(cfg: &ScenarioConfig, warnings: Vec<String>) -> Self {
        Self {
            mode: cfg.mode,
            seed: cfg.seed,
            n: cfg.n,
            ticks: 0,
            epochs: 0,
            f_t: Vec::new(),
            max_f_t: 0,
            committee_unsafe: false,
            safety_violation: false,
            first_violation_time: None,
            conflicting_commits: 0,
            commits: 0,
            mean_commit_latency: None,
            max_slot_latency: 0.0,
            max_tx_latency: 0.0,
            view_changes: 0,
            liveness_failures: 0,
            txs_submitted: 0,
            txs_committed: 0,
            messages: 0,
            invalid_messages: 0,
            equivocations_detected: 0,
            spam: SpamStats::default(),
            honest_registration_misses: 0,
            cvpv: CvpvStats::default(),
            elections: BTreeMap::new(),
            election_frequency: BTreeMap::new(),
            epochs_without_admission: 0,
            model_violations: Vec::new(),
            warnings,
            end_time: 0.0,
        }
    }

    fn set_elections(&mut self, counts: BTreeMap<String, u64>) {
        let total: u64 = counts.values().sum();
        self.election_frequency = counts
            .iter()
            .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
            .collect();
        self.elections = counts;
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: MetricsReport,
    pub committee: Vec<CommitteeRow>,
    pub log: EventLog,
}

/// Label of a participant in election tables.
pub fn participant_label(id: u32) -> String {
    if id == ADVERSARY {
        "adversary".into()
    } else if id > u32::MAX - 1 - (1 << 20) {
        "genesis".into()
    } else {
        id.to_string()
    }
}

/// Validates `cfg`, then runs it to the horizon.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    let warnings = cfg.validate()?;
    match cfg.mode {
        ScenarioMode::Full => run_full(cfg, warnings),
        ScenarioMode::CommitteeMc => run_chain(cfg, warnings),
    }
}

fn run_full(cfg: &ScenarioConfig, warnings: Vec<String>) -> Result<ScenarioOutput> {
    let world = World::new(cfg.world_config()?).map_err(Error::Config)?;
    let (w, log) = main_loop(world);
    let mut r = MetricsReport::empty(cfg, warnings);
    r.ticks = w.ticks;
    r.epochs = w.registration_rounds;
    r.max_f_t = w.f_t.iter().copied().max().unwrap_or(0);
    r.f_t = w.f_t;
    r.committee_unsafe = w.committee_unsafe_at.is_some();
    r.conflicting_commits = w.pbft.safety_violations;
    r.safety_violation = r.committee_unsafe || r.conflicting_commits > 0;
    r.first_violation_time = [w.committee_unsafe_at, w.pbft.first_violation_secs]
        .into_iter()
        .flatten()
        .reduce(f64::min);
    r.commits = w.pbft.slots_committed;
    r.mean_commit_latency = w.pbft.mean_tx_latency_secs();
    r.max_slot_latency = w.pbft.max_slot_latency_secs;
    r.max_tx_latency = w.pbft.max_tx_latency_secs;
    r.view_changes = w.pbft.view_changes;
    r.liveness_failures = w.pbft.liveness_failures;
    r.txs_submitted = w.pbft.txs_submitted;
    r.txs_committed = w.pbft.txs_committed;
    r.messages = w.pbft.messages;
    r.invalid_messages = w.pbft.invalid_messages;
    r.equivocations_detected = w.pbft.equivocations_detected;
    r.spam = w.spam;
    r.honest_registration_misses = w.honest_registration_misses;
    r.cvpv = w.cvpv;
    let mut counts = BTreeMap::new();
    for (&id, &c) in &w.admissions {
        *counts.entry(participant_label(id)).or_default() += c;
    }
    r.set_elections(counts);
    r.epochs_without_admission = w.epochs_without_admission;
    r.model_violations = w.model_violations;
    r.end_time = w.end_time;
    Ok(ScenarioOutput {
        report: r,
        committee: w.committee,
        log,
    })
}

fn run_chain(cfg: &ScenarioConfig, warnings: Vec<String>) -> Result<ScenarioOutput> {
    let rho = cfg.effective_rho()?;
    let mut rng = trial_stream(cfg.seed, 0);
    let genesis = genesis_seats(
        cfg.n,
        rho,
        cfg.genesis,
        Some(genesis_cap(cfg.n, cfg.epsilon)),
        &mut rng,
    );
    let mut chain = CommitteeChain::new(&genesis);
    let mut log = EventLog::new(cfg.log);
    let mut r = MetricsReport::empty(cfg, warnings);
    let mut rows = Vec::new();
    let mut counts = BTreeMap::<String, u64>::new();
    r.f_t.push(chain.f());
    if chain.is_unsafe() {
        r.first_violation_time = Some(0.0);
    }
    let mut seniority: std::collections::VecDeque<bool> = genesis.iter().copied().collect();
    for t in 1..=cfg.horizon {
        r.ticks += 1;
        if t % cfg.tau_reconfig != 0 {
            continue;
        }
        r.epochs += 1;
        let byz = rng.gen_bool(rho);
        let evicted = seniority.pop_front().expect("committee is never empty");
        seniority.push_back(byz);
        let f = chain.step(byz);
        r.f_t.push(f);
        let label = |b: bool| if b { "byzantine" } else { "honest" };
        *counts.entry(label(byz).to_string()).or_default() += 1;
        rows.push(CommitteeRow {
            epoch: r.epochs,
            f_t: f,
            admitted: Some(label(byz).into()),
            evicted: Some(label(evicted).into()),
        });
        log.record(
            SimTime::from_secs(t),
            "reconfig",
            &serde_json::json!({ "epoch": r.epochs, "f_t": f, "admitted_byzantine": byz }),
        );
        if chain.is_unsafe() && r.first_violation_time.is_none() {
            r.first_violation_time = Some(t as f64);
        }
    }
    r.max_f_t = r.f_t.iter().copied().max().unwrap_or(0);
    r.committee_unsafe = r.first_violation_time.is_some();
    r.safety_violation = r.committee_unsafe;
    r.set_elections(counts);
    r.end_time = cfg.horizon as f64;
    Ok(ScenarioOutput {
        report: r,
        committee: rows,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Strategy;

    #[test]
    fn defaults_and_renames() {
        let c = ScenarioConfig::from_json(
            r#"{"n": 4, "T": 10, "T_prime": 3, "R_H": 2.0, "R_A": 16.0}"#,
        )
        .unwrap();
        assert_eq!(c.t_prime, 3);
        assert_eq!(c.tau_register(), 0.5);
        assert_eq!(c.effective_r_a().unwrap(), 16.0);
        assert!(ScenarioConfig::from_json(r#"{"n": 4, "T": 10, "bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"n": 4}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut c = ScenarioConfig::new(4, 10);
        c.tau_register = Some(0.5);
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::new(10, 10);
        c.genesis = GenesisMode::Fixed(4);
        assert!(c.validate().is_err());
        c.genesis = GenesisMode::Fixed(3);
        assert!(c.validate().unwrap().is_empty());
        c.rho = 0.4;
        assert_eq!(c.validate().unwrap().len(), 1);
        c.adversary.rho = 0.2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn honest_baseline_commits_every_slot() {
        let mut c = ScenarioConfig::new(4, 10);
        c.tau_reconfig = 100;
        c.t_prime = 5;
        let out = run_scenario(&c).unwrap();
        assert_eq!(out.report.commits, 50);
        assert_eq!(out.report.view_changes, 0);
        assert!(!out.report.safety_violation);
    }

    #[test]
    fn chain_mode_projects_admissions() {
        let mut c = ScenarioConfig::new(10, 200);
        c.mode = ScenarioMode::CommitteeMc;
        c.rho = 0.2;
        c.tau_reconfig = 2;
        let out = run_scenario(&c).unwrap();
        assert_eq!(out.report.epochs, 100);
        assert_eq!(out.committee.len(), 100);
        assert_eq!(out.report.f_t.len(), 101);
        let byz: u64 = out.report.elections.get("byzantine").copied().unwrap_or(0);
        assert!(byz > 5 && byz < 40, "{byz}");
    }

    #[test]
    fn spoofer_never_gets_in() {
        let mut c = ScenarioConfig::new(4, 6);
        c.tau_reconfig = 2;
        c.t_prime = 2;
        c.dlog_bits = 20;
        c.r_a = 4.0;
        c.participants = vec![ParticipantSpec {
            id: 7,
            devices: vec![5],
        }];
        c.adversary.strategies = vec![Strategy::PositionSpoofer];
        let out = run_scenario(&c).unwrap();
        assert_eq!(out.report.elections.get("7"), Some(&3));
        assert!(!out.report.elections.contains_key("adversary"));
    }
}
